#pragma once

#include <array>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace krec {

enum class NodeKind { Item, Entity };

struct NodeRef {
    int id = -1;
    NodeKind kind = NodeKind::Entity;
    std::string label;
    std::string entity_type;  // empty for items
};

struct RelationType {
    int id = -1;
    std::string name;
    bool is_inverse = false;
    int inverse_id = -1;  // -1 when inverses were not synthesized
};

// Relation name reserved for precomputed item -> entity linking edges.
inline constexpr const char* kLinkedToRelation = "linked_to";
// Suffix appended to a relation name for its synthesized reverse direction.
inline constexpr const char* kInverseSuffix = "⁻¹";  // superscript -1

struct IngestOptions {
    bool add_inverse = true;
    std::optional<std::set<std::string>> type_whitelist;
};

// Immutable directed multigraph over typed nodes. Parallel edges are
// deduplicated at load; adjacency lists are sorted by target id. Entities
// filtered out by a type whitelist keep their ids but lose every edge, so ids
// in association and interaction files stay valid across filtering.
class HeteroGraph {
public:
    int node_count() const { return static_cast<int>(nodes_.size()); }
    int relation_count() const { return static_cast<int>(relations_.size()); }
    long long edge_count() const { return edge_count_; }

    const NodeRef& node(int id) const;
    const RelationType& relation(int id) const;
    std::optional<int> relation_id(const std::string& name) const;

    std::span<const int> neighbors(int src, int rel) const;
    int out_degree(int src, int rel) const { return static_cast<int>(neighbors(src, rel).size()); }
    bool has_edge(int src, int rel, int dst) const;

    bool is_item(int id) const { return node(id).kind == NodeKind::Item; }
    // false only for entities cut by the whitelist
    bool is_active(int id) const;

    const std::optional<std::set<std::string>>& type_whitelist() const { return whitelist_; }
    const std::vector<NodeRef>& nodes() const { return nodes_; }
    const std::vector<RelationType>& relations() const { return relations_; }
    int item_count() const { return item_count_; }

private:
    friend class GraphBuilder;
    std::vector<NodeRef> nodes_;
    std::vector<RelationType> relations_;
    // adjacency_[node * relation_count + rel] -> sorted, duplicate-free targets
    std::vector<std::vector<int>> adjacency_;
    std::optional<std::set<std::string>> whitelist_;
    long long edge_count_ = 0;
    int item_count_ = 0;
};

// Programmatic construction path; loaders and the synthetic generator both
// funnel through this so invariants live in one place.
class GraphBuilder {
public:
    int add_node(NodeKind kind, const std::string& label, const std::string& entity_type = "");
    // relations are registered on first use, in insertion order
    void add_edge(int src, const std::string& relation, int dst);
    int node_count() const { return static_cast<int>(nodes_.size()); }
    HeteroGraph build(const IngestOptions& opts = {}) const;

private:
    std::vector<NodeRef> nodes_;
    std::vector<std::string> relation_names_;
    std::vector<std::array<int, 3>> edges_;  // src, relation index, dst
};

HeteroGraph load_graph(const std::string& nodes_path, const std::string& edges_path,
                       const IngestOptions& opts = {});

// Re-derives the graph with a (new) whitelist; inverse synthesis is preserved.
HeteroGraph apply_type_whitelist(const HeteroGraph& g, const std::set<std::string>& allowed);

// Writes the node table and forward edges back out; loading the result with
// the same options reproduces the adjacency exactly.
void save_graph(const HeteroGraph& g, const std::string& nodes_path, const std::string& edges_path);

enum class AssocType { ALV, BAV, ALB, BT };

const char* assoc_name(AssocType t);
std::optional<AssocType> assoc_from_name(const std::string& s);

struct AssociationPair {
    int a = -1;
    int b = -1;
    AssocType assoc = AssocType::ALV;
    int label = 1;  // 1 positive, 0 negative
};

std::vector<AssociationPair> load_associations(const std::string& path);
// endpoint checks need the graph, so they are a separate pass
void validate_associations(const HeteroGraph& g, const std::vector<AssociationPair>& pairs);

struct Interaction {
    int user = -1;
    int item = -1;
    long long timestamp = 0;
    long long file_order = 0;  // tie-break for equal timestamps
};

struct InteractionLog {
    std::vector<Interaction> records;
    int user_count = 0;  // max id + 1
    int item_count = 0;
};

InteractionLog load_interactions(const std::string& path);

}
