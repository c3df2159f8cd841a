#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "krec/graph.hpp"

namespace krec {

// A relation sequence wired into the generated graph so that the pairs and
// interactions it emits are recoverable by mining. Names ending in the
// inverse suffix traverse the base relation backwards.
struct PlantedRuleSpec {
    std::vector<std::string> relations;
    std::vector<AssocType> assocs;  // association files this rule feeds
    double routing_weight = 1.0;    // preference mass when growing histories
    std::string pool_name;          // entity type of this rule's intermediate pool
};

std::vector<PlantedRuleSpec> default_planted_rules();

struct SynthConfig {
    int items = 300;
    int entities = 500;
    int users = 200;
    int relations = 8;  // forward vocabulary size incl. distractors and fillers
    std::vector<PlantedRuleSpec> planted;  // empty -> default_planted_rules()
    double assoc_noise = 0.05;  // fraction of label-1 pairs drawn rule-disconnected
    double p_rule = 0.8;        // chance an interaction extends the history through a rule
    int pairs_per_assoc = 300;
    double negative_ratio = 1.0;
    int history_min = 5;
    int history_max = 15;
    int distractors = 2;  // 0 none, 1 hub relation, 2 hub + spurious parallel edges
    std::uint64_t seed = 0;
};

struct SynthEdge {
    int src = -1;
    int rel = -1;  // index into relation_names
    int dst = -1;
};

struct SynthInteraction {
    int user = -1;
    int item = -1;
    long long t = 0;
    int rule = -1;    // planted rule behind this pick, -1 for random
    int source = -1;  // history item the rule stepped from, -1 for random
};

// Fully materialized world plus the provenance an oracle needs: which rule
// produced each pair and interaction, and the exact rule-connected pair sets.
struct SynthWorld {
    SynthConfig cfg;  // with planted defaults resolved
    std::vector<std::string> relation_names;
    std::vector<NodeRef> nodes;   // dense ids, items before entities
    std::vector<SynthEdge> edges; // deduplicated, sorted by (rel, src, dst)
    std::vector<AssociationPair> pairs;
    std::vector<int> pair_rule;   // aligned with pairs; -1 for noise and negatives
    std::vector<SynthInteraction> interactions;
    std::vector<std::vector<int>> pools;  // entity ids per planted rule
    // connected[rule][item] -> sorted items reachable along the rule
    std::vector<std::vector<std::vector<int>>> connected;
};

// Deterministic for a given config; label-1 noise pairs and every label-0
// pair are verified disconnected under all planted rules.
SynthWorld generate_world(const SynthConfig& cfg);

// The graph the written files would load to.
HeteroGraph world_graph(const SynthWorld& w, const IngestOptions& opt = {});

InteractionLog world_log(const SynthWorld& w);

struct SynthPaths {
    std::string nodes, edges, associations, interactions, manifest;
};
SynthPaths synth_paths(const std::string& dir);

// Writes the four TSVs plus a JSON manifest carrying config, digest, and
// per-row provenance; byte-identical across runs with equal configs.
void write_world(const SynthWorld& w, const std::string& dir);

// Interaction log whose users favor the top items of a random low-rank score
// matrix; a sanity world for embedding recommenders.
InteractionLog latent_factor_log(int users, int items, int rank, int per_user, std::uint64_t seed);

}
