#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "krec/graph.hpp"

namespace krec {

// A rule is a sequence of relation ids, applied left to right.
using Rule = std::vector<int>;

// Handling of the walk convention that a step's probability is 1 whenever its
// target equals its source. `FinalOnly` applies it to the last step of a rule
// (shorter walks count under longer rules), `Always` to every step (per-step
// normalization no longer holds), `Off` never (pure edge-following walk).
enum class SelfAbsorb { FinalOnly, Always, Off };

const char* self_absorb_name(SelfAbsorb m);
std::optional<SelfAbsorb> self_absorb_from_name(const std::string& s);

struct MinerConfig {
    double alpha = 0.01;      // support threshold as a fraction of the pair count
    int beta = 4;             // maximum rule length
    SelfAbsorb self_absorb = SelfAbsorb::FinalOnly;
    int degree_cap = 0;       // expand at most this many targets per step; 0 = unlimited
};

// Node-mass distribution after following a rule prefix from a source node.
// Nodes are sorted ascending; every stored mass is > 0.
struct PrefixDistribution {
    std::vector<int> nodes;
    std::vector<double> mass;
};

// Probability of one walk step src -> dst under a relation: uniform over the
// relation's out-edges, overridden to 1 when src == dst and the mode absorbs.
double one_step(const HeteroGraph& g, int src, int rel, int dst, SelfAbsorb mode);

PrefixDistribution prefix_distribution(const HeteroGraph& g, int src, std::span<const int> prefix,
                                       const MinerConfig& cfg);

// Exact walk probability of reaching b from a along the full rule.
double walk_probability(const HeteroGraph& g, int a, int b, const Rule& rule, const MinerConfig& cfg);

// Same value for every target at once, indexed by node id.
std::vector<double> walk_probability_row(const HeteroGraph& g, int a, const Rule& rule,
                                         const MinerConfig& cfg);

// Path-count style feature: the final step contributes an edge indicator
// instead of a normalized probability; the prefix is shared with the walk.
double feature_f(const HeteroGraph& g, int a, int b, const Rule& rule, const MinerConfig& cfg);
std::vector<double> feature_f_row(const HeteroGraph& g, int a, const Rule& rule, const MinerConfig& cfg);

// Per-rule feature vectors for a pair (a, b).
std::vector<double> feature_x_vector(const HeteroGraph& g, int a, int b,
                                     const std::vector<Rule>& rules, const MinerConfig& cfg);
std::vector<double> feature_f_vector(const HeteroGraph& g, int a, int b,
                                     const std::vector<Rule>& rules, const MinerConfig& cfg);

// Sum of pair features from a candidate item against a user's history set
// (duplicates ignored). `flip` swaps the orientation to history -> candidate.
std::vector<double> feature_f_user(const HeteroGraph& g, int item, std::span<const int> history,
                                   const std::vector<Rule>& rules, const MinerConfig& cfg,
                                   bool flip = false);

struct MinedRule {
    Rule relations;
    int support = 0;
    std::vector<AssocType> assocs;       // sorted, unique
    std::optional<double> weight;        // filled by selection / training
    std::optional<double> chi2;          // filled by selection
};

// Exhaustively enumerates relation sequences up to cfg.beta connecting the
// given item pairs, keeping those supported by at least
// ceil(cfg.alpha * |pairs|) distinct pairs. A pair supports a rule when the
// rule's walk probability without self-absorption is positive, i.e. an actual
// path exists. Result is sorted by (support desc, length asc, relation ids).
std::vector<MinedRule> enumerate_rules(const HeteroGraph& g,
                                       const std::vector<std::pair<int, int>>& positive_pairs,
                                       const MinerConfig& cfg);

// Concatenates per-association rule lists into one deduplicated global list.
// A rule mined from several associations keeps every tag and its largest
// support. Ordering matches enumerate_rules.
std::vector<MinedRule> merge_rule_lists(
    const std::vector<std::pair<AssocType, std::vector<MinedRule>>>& per_assoc);

std::vector<Rule> rule_sequences(const std::vector<MinedRule>& rules);

// JSON-lines persistence. The first line is a meta object (tool version,
// digests, seed); each following line is one rule with relation names.
void save_rules(const std::string& path, const std::vector<MinedRule>& rules, const HeteroGraph& g,
                const std::string& meta_json);
std::vector<MinedRule> load_rules(const std::string& path, const HeteroGraph& g,
                                  std::string* meta_json_out = nullptr);

}
