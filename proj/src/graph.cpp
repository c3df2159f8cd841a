#include "krec/graph.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "krec/tsv.hpp"

namespace krec {

const NodeRef& HeteroGraph::node(int id) const {
    if (id < 0 || id >= node_count()) throw std::out_of_range("node id out of range: " + std::to_string(id));
    return nodes_[id];
}

const RelationType& HeteroGraph::relation(int id) const {
    if (id < 0 || id >= relation_count())
        throw std::out_of_range("relation id out of range: " + std::to_string(id));
    return relations_[id];
}

std::optional<int> HeteroGraph::relation_id(const std::string& name) const {
    for (const auto& r : relations_)
        if (r.name == name) return r.id;
    return std::nullopt;
}

std::span<const int> HeteroGraph::neighbors(int src, int rel) const {
    if (src < 0 || src >= node_count()) throw std::out_of_range("node id out of range: " + std::to_string(src));
    if (rel < 0 || rel >= relation_count())
        throw std::out_of_range("relation id out of range: " + std::to_string(rel));
    const auto& v = adjacency_[static_cast<std::size_t>(src) * relation_count() + rel];
    return {v.data(), v.size()};
}

bool HeteroGraph::has_edge(int src, int rel, int dst) const {
    auto nb = neighbors(src, rel);
    return std::binary_search(nb.begin(), nb.end(), dst);
}

bool HeteroGraph::is_active(int id) const {
    const NodeRef& n = node(id);
    if (n.kind == NodeKind::Item) return true;
    if (!whitelist_) return true;
    return whitelist_->count(n.entity_type) > 0;
}

int GraphBuilder::add_node(NodeKind kind, const std::string& label, const std::string& entity_type) {
    NodeRef n;
    n.id = static_cast<int>(nodes_.size());
    n.kind = kind;
    n.label = label;
    n.entity_type = kind == NodeKind::Item ? std::string() : entity_type;
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
}

void GraphBuilder::add_edge(int src, const std::string& relation, int dst) {
    int rel = -1;
    for (std::size_t i = 0; i < relation_names_.size(); ++i)
        if (relation_names_[i] == relation) { rel = static_cast<int>(i); break; }
    if (rel < 0) {
        rel = static_cast<int>(relation_names_.size());
        relation_names_.push_back(relation);
    }
    edges_.push_back({src, rel, dst});
}

HeteroGraph GraphBuilder::build(const IngestOptions& opts) const {
    HeteroGraph g;
    g.nodes_ = nodes_;
    g.whitelist_ = opts.type_whitelist;
    for (const auto& n : g.nodes_)
        if (n.kind == NodeKind::Item) ++g.item_count_;

    int n_forward = static_cast<int>(relation_names_.size());
    for (int r = 0; r < n_forward; ++r) {
        RelationType rt;
        rt.id = r;
        rt.name = relation_names_[r];
        rt.is_inverse = false;
        g.relations_.push_back(std::move(rt));
    }
    if (opts.add_inverse) {
        for (int r = 0; r < n_forward; ++r) {
            std::string inv_name = relation_names_[r] + kInverseSuffix;
            for (const auto& existing : relation_names_)
                if (existing == inv_name)
                    throw std::runtime_error("duplicate relation name: '" + inv_name +
                                             "' collides with a synthesized inverse");
            RelationType rt;
            rt.id = n_forward + r;
            rt.name = inv_name;
            rt.is_inverse = true;
            rt.inverse_id = r;
            g.relations_[r].inverse_id = rt.id;
            g.relations_.push_back(std::move(rt));
        }
    }

    int n_rel = g.relation_count();
    g.adjacency_.assign(static_cast<std::size_t>(g.node_count()) * n_rel, {});
    auto active = [&](int id) {
        const NodeRef& n = g.nodes_[id];
        return n.kind == NodeKind::Item || !opts.type_whitelist ||
               opts.type_whitelist->count(n.entity_type) > 0;
    };
    for (const auto& e : edges_) {
        int src = e[0], rel = e[1], dst = e[2];
        if (src < 0 || src >= g.node_count() || dst < 0 || dst >= g.node_count())
            throw std::runtime_error("edge references unknown node id " +
                                     std::to_string(src < 0 || src >= g.node_count() ? src : dst));
        if (!active(src) || !active(dst)) continue;
        g.adjacency_[static_cast<std::size_t>(src) * n_rel + rel].push_back(dst);
        if (opts.add_inverse)
            g.adjacency_[static_cast<std::size_t>(dst) * n_rel + n_forward + rel].push_back(src);
    }
    for (auto& lst : g.adjacency_) {
        std::sort(lst.begin(), lst.end());
        lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
    }
    for (std::size_t i = 0; i < g.adjacency_.size(); ++i)
        if (i % n_rel < static_cast<std::size_t>(n_forward))  // count forward edges once
            g.edge_count_ += static_cast<long long>(g.adjacency_[i].size());
    return g;
}

namespace {

NodeKind parse_kind(const std::string& path, const TsvRow& row, const std::string& s) {
    if (s == "item") return NodeKind::Item;
    if (s == "entity") return NodeKind::Entity;
    tsv_fail(path, row.line_no, "node kind must be 'item' or 'entity', got '" + s + "'");
}

}  // namespace

HeteroGraph load_graph(const std::string& nodes_path, const std::string& edges_path,
                       const IngestOptions& opts) {
    GraphBuilder b;
    for (const auto& row : read_tsv(nodes_path)) {
        if (row.fields.size() != 3 && row.fields.size() != 4)
            tsv_fail(nodes_path, row.line_no, "expected 3 or 4 fields (id, kind, label, [entity_type])");
        long long id = parse_int(nodes_path, row, row.fields[0], "node id");
        NodeKind kind = parse_kind(nodes_path, row, row.fields[1]);
        std::string type = row.fields.size() == 4 ? row.fields[3] : "";
        if (kind == NodeKind::Item && !type.empty())
            tsv_fail(nodes_path, row.line_no, "item nodes must not carry an entity_type");
        int assigned = b.add_node(kind, row.fields[2], type);
        if (id != assigned)
            tsv_fail(nodes_path, row.line_no,
                     "node ids must be dense and in file order; expected " +
                         std::to_string(assigned) + ", got " + std::to_string(id));
    }
    long long n_nodes = b.node_count();
    for (const auto& row : read_tsv(edges_path)) {
        if (row.fields.size() != 3)
            tsv_fail(edges_path, row.line_no, "expected 3 fields (src_id, relation_name, dst_id)");
        long long src = parse_int(edges_path, row, row.fields[0], "source node id");
        long long dst = parse_int(edges_path, row, row.fields[2], "target node id");
        if (row.fields[1].empty()) tsv_fail(edges_path, row.line_no, "empty relation name");
        if (src < 0 || src >= n_nodes)
            tsv_fail(edges_path, row.line_no, "source node id " + std::to_string(src) + " is not declared");
        if (dst < 0 || dst >= n_nodes)
            tsv_fail(edges_path, row.line_no, "target node id " + std::to_string(dst) + " is not declared");
        b.add_edge(static_cast<int>(src), row.fields[1], static_cast<int>(dst));
    }
    return b.build(opts);
}

HeteroGraph apply_type_whitelist(const HeteroGraph& g, const std::set<std::string>& allowed) {
    GraphBuilder b;
    for (const auto& n : g.nodes()) b.add_node(n.kind, n.label, n.entity_type);
    bool had_inverse = false;
    for (const auto& r : g.relations()) {
        if (r.is_inverse) { had_inverse = true; continue; }
        for (int src = 0; src < g.node_count(); ++src)
            for (int dst : g.neighbors(src, r.id)) b.add_edge(src, r.name, dst);
    }
    IngestOptions opts;
    opts.add_inverse = had_inverse;
    opts.type_whitelist = allowed;
    return b.build(opts);
}

void save_graph(const HeteroGraph& g, const std::string& nodes_path, const std::string& edges_path) {
    std::ofstream nodes(nodes_path, std::ios::binary);
    if (!nodes) throw std::runtime_error("cannot write file: " + nodes_path);
    nodes << "# node_id\tkind\tlabel\tentity_type\n";
    for (const auto& n : g.nodes())
        nodes << n.id << '\t' << (n.kind == NodeKind::Item ? "item" : "entity") << '\t' << n.label
              << '\t' << n.entity_type << '\n';

    std::ofstream edges(edges_path, std::ios::binary);
    if (!edges) throw std::runtime_error("cannot write file: " + edges_path);
    edges << "# src_id\trelation_name\tdst_id\n";
    for (int src = 0; src < g.node_count(); ++src)
        for (const auto& r : g.relations()) {
            if (r.is_inverse) continue;
            for (int dst : g.neighbors(src, r.id)) edges << src << '\t' << r.name << '\t' << dst << '\n';
        }
}

const char* assoc_name(AssocType t) {
    switch (t) {
        case AssocType::ALV: return "ALV";
        case AssocType::BAV: return "BAV";
        case AssocType::ALB: return "ALB";
        case AssocType::BT: return "BT";
    }
    return "?";
}

std::optional<AssocType> assoc_from_name(const std::string& s) {
    if (s == "ALV") return AssocType::ALV;
    if (s == "BAV") return AssocType::BAV;
    if (s == "ALB") return AssocType::ALB;
    if (s == "BT") return AssocType::BT;
    return std::nullopt;
}

std::vector<AssociationPair> load_associations(const std::string& path) {
    std::vector<AssociationPair> out;
    for (const auto& row : read_tsv(path)) {
        if (row.fields.size() != 4)
            tsv_fail(path, row.line_no, "expected 4 fields (item_a, item_b, assoc_type, label)");
        AssociationPair p;
        p.a = static_cast<int>(parse_int(path, row, row.fields[0], "item_a"));
        p.b = static_cast<int>(parse_int(path, row, row.fields[1], "item_b"));
        auto t = assoc_from_name(row.fields[2]);
        if (!t) tsv_fail(path, row.line_no, "assoc_type must be one of ALV/BAV/ALB/BT, got '" + row.fields[2] + "'");
        p.assoc = *t;
        long long label = parse_int(path, row, row.fields[3], "label");
        if (label != 0 && label != 1) tsv_fail(path, row.line_no, "label must be 0 or 1");
        p.label = static_cast<int>(label);
        if (p.a == p.b) tsv_fail(path, row.line_no, "association endpoints must differ");
        out.push_back(p);
    }
    return out;
}

void validate_associations(const HeteroGraph& g, const std::vector<AssociationPair>& pairs) {
    for (const auto& p : pairs) {
        if (p.a < 0 || p.a >= g.node_count() || p.b < 0 || p.b >= g.node_count())
            throw std::runtime_error("association references unknown node id");
        if (!g.is_item(p.a) || !g.is_item(p.b))
            throw std::runtime_error("association endpoints must be items (" + std::to_string(p.a) +
                                     ", " + std::to_string(p.b) + ")");
    }
}

InteractionLog load_interactions(const std::string& path) {
    InteractionLog log;
    for (const auto& row : read_tsv(path)) {
        if (row.fields.size() != 2 && row.fields.size() != 3)
            tsv_fail(path, row.line_no, "expected 2 or 3 fields (user_id, item_id, [timestamp])");
        Interaction r;
        r.user = static_cast<int>(parse_int(path, row, row.fields[0], "user id"));
        r.item = static_cast<int>(parse_int(path, row, row.fields[1], "item id"));
        if (r.user < 0 || r.item < 0) tsv_fail(path, row.line_no, "ids must be non-negative");
        r.file_order = static_cast<long long>(log.records.size());
        // missing timestamps fall back to file order, which keeps per-user
        // orderings total either way
        r.timestamp = row.fields.size() == 3 ? parse_int(path, row, row.fields[2], "timestamp")
                                             : r.file_order;
        log.user_count = std::max(log.user_count, r.user + 1);
        log.item_count = std::max(log.item_count, r.item + 1);
        log.records.push_back(r);
    }
    return log;
}

}
