#include "krec/walk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace krec {

namespace {

void check_rule(const HeteroGraph& g, const Rule& rule) {
    if (rule.empty()) throw std::invalid_argument("rule must contain at least one relation");
    for (int rel : rule) g.relation(rel);  // throws on unknown ids
}

// targets actually expanded for one step, honoring the degree cap; the
// probability denominator stays the full out-degree
std::span<const int> expanded(const HeteroGraph& g, int src, int rel, const MinerConfig& cfg) {
    auto nb = g.neighbors(src, rel);
    if (cfg.degree_cap > 0 && static_cast<int>(nb.size()) > cfg.degree_cap)
        return nb.subspan(0, cfg.degree_cap);
    return nb;
}

PrefixDistribution to_distribution(const std::vector<double>& dense) {
    PrefixDistribution d;
    for (int i = 0; i < static_cast<int>(dense.size()); ++i)
        if (dense[i] > 0.0) {
            d.nodes.push_back(i);
            d.mass.push_back(dense[i]);
        }
    return d;
}

std::vector<double> prefix_dense(const HeteroGraph& g, int src, std::span<const int> prefix,
                                 const MinerConfig& cfg) {
    std::vector<double> mass(g.node_count(), 0.0);
    mass[src] = 1.0;
    bool absorb_mid = cfg.self_absorb == SelfAbsorb::Always;
    for (int rel : prefix) {
        g.relation(rel);
        std::vector<double> next(g.node_count(), 0.0);
        for (int e = 0; e < g.node_count(); ++e) {
            if (mass[e] == 0.0) continue;
            if (absorb_mid) next[e] += mass[e];  // stay put with probability 1
            int deg = g.out_degree(e, rel);
            if (deg == 0) continue;
            double p = mass[e] / deg;
            for (int v : expanded(g, e, rel, cfg)) {
                if (absorb_mid && v == e) continue;  // absorbed case replaces the self-loop edge
                next[v] += p;
            }
        }
        mass.swap(next);
    }
    return mass;
}

}  // namespace

const char* self_absorb_name(SelfAbsorb m) {
    switch (m) {
        case SelfAbsorb::FinalOnly: return "final";
        case SelfAbsorb::Always: return "always";
        case SelfAbsorb::Off: return "off";
    }
    return "?";
}

std::optional<SelfAbsorb> self_absorb_from_name(const std::string& s) {
    if (s == "final") return SelfAbsorb::FinalOnly;
    if (s == "always") return SelfAbsorb::Always;
    if (s == "off") return SelfAbsorb::Off;
    return std::nullopt;
}

double one_step(const HeteroGraph& g, int src, int rel, int dst, SelfAbsorb mode) {
    g.node(dst);
    if (mode != SelfAbsorb::Off && src == dst) return 1.0;
    int deg = g.out_degree(src, rel);
    if (deg == 0) return 0.0;
    return g.has_edge(src, rel, dst) ? 1.0 / deg : 0.0;
}

PrefixDistribution prefix_distribution(const HeteroGraph& g, int src, std::span<const int> prefix,
                                       const MinerConfig& cfg) {
    g.node(src);
    return to_distribution(prefix_dense(g, src, prefix, cfg));
}

namespace {

// Shared final-step accumulation for the probability and indicator features.
std::vector<double> final_step_row(const HeteroGraph& g, int a, const Rule& rule,
                                   const MinerConfig& cfg, bool indicator) {
    check_rule(g, rule);
    g.node(a);
    std::vector<double> prefix =
        prefix_dense(g, a, std::span<const int>(rule.data(), rule.size() - 1), cfg);
    int last = rule.back();
    bool absorb = cfg.self_absorb != SelfAbsorb::Off;
    std::vector<double> row(g.node_count(), 0.0);
    for (int e = 0; e < g.node_count(); ++e) {
        if (prefix[e] == 0.0) continue;
        if (absorb) row[e] += prefix[e];
        int deg = g.out_degree(e, last);
        if (deg == 0) continue;
        double p = indicator ? prefix[e] : prefix[e] / deg;
        for (int v : expanded(g, e, last, cfg)) {
            if (absorb && v == e) continue;
            row[v] += p;
        }
    }
    return row;
}

}  // namespace

double walk_probability(const HeteroGraph& g, int a, int b, const Rule& rule, const MinerConfig& cfg) {
    g.node(b);
    return final_step_row(g, a, rule, cfg, /*indicator=*/false)[b];
}

std::vector<double> walk_probability_row(const HeteroGraph& g, int a, const Rule& rule,
                                         const MinerConfig& cfg) {
    return final_step_row(g, a, rule, cfg, /*indicator=*/false);
}

double feature_f(const HeteroGraph& g, int a, int b, const Rule& rule, const MinerConfig& cfg) {
    g.node(b);
    return final_step_row(g, a, rule, cfg, /*indicator=*/true)[b];
}

std::vector<double> feature_f_row(const HeteroGraph& g, int a, const Rule& rule,
                                  const MinerConfig& cfg) {
    return final_step_row(g, a, rule, cfg, /*indicator=*/true);
}

std::vector<double> feature_x_vector(const HeteroGraph& g, int a, int b,
                                     const std::vector<Rule>& rules, const MinerConfig& cfg) {
    std::vector<double> out;
    out.reserve(rules.size());
    for (const Rule& r : rules) out.push_back(walk_probability(g, a, b, r, cfg));
    return out;
}

std::vector<double> feature_f_vector(const HeteroGraph& g, int a, int b,
                                     const std::vector<Rule>& rules, const MinerConfig& cfg) {
    std::vector<double> out;
    out.reserve(rules.size());
    for (const Rule& r : rules) out.push_back(feature_f(g, a, b, r, cfg));
    return out;
}

std::vector<double> feature_f_user(const HeteroGraph& g, int item, std::span<const int> history,
                                   const std::vector<Rule>& rules, const MinerConfig& cfg,
                                   bool flip) {
    std::vector<int> hist(history.begin(), history.end());
    std::sort(hist.begin(), hist.end());
    hist.erase(std::unique(hist.begin(), hist.end()), hist.end());
    std::vector<double> out(rules.size(), 0.0);
    for (std::size_t r = 0; r < rules.size(); ++r) {
        if (!flip) {
            std::vector<double> row = feature_f_row(g, item, rules[r], cfg);
            for (int k : hist) out[r] += row[k];
        } else {
            for (int k : hist) out[r] += feature_f(g, k, item, rules[r], cfg);
        }
    }
    return out;
}

namespace {

// fixed-width bitset over node ids
struct NodeSet {
    std::vector<std::uint64_t> words;
    explicit NodeSet(int n) : words((static_cast<std::size_t>(n) + 63) / 64, 0) {}
    void set(int i) { words[i >> 6] |= 1ULL << (i & 63); }
    bool test(int i) const { return (words[i >> 6] >> (i & 63)) & 1; }
    bool empty() const {
        for (auto w : words)
            if (w) return false;
        return true;
    }
};

bool rule_order(const MinedRule& x, const MinedRule& y) {
    if (x.support != y.support) return x.support > y.support;
    if (x.relations.size() != y.relations.size()) return x.relations.size() < y.relations.size();
    return x.relations < y.relations;
}

}  // namespace

std::vector<MinedRule> enumerate_rules(const HeteroGraph& g,
                                       const std::vector<std::pair<int, int>>& positive_pairs,
                                       const MinerConfig& cfg) {
    if (cfg.beta < 1) throw std::invalid_argument("beta must be at least 1");
    if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
    if (positive_pairs.empty()) throw std::invalid_argument("no positive pairs to mine from");

    std::vector<std::pair<int, int>> pairs = positive_pairs;
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    for (auto [a, b] : pairs) {
        g.node(a);
        g.node(b);
    }

    // group targets by source so each source's reachability trie is built once
    std::map<int, std::vector<int>> by_source;
    for (auto [a, b] : pairs) by_source[a].push_back(b);

    std::map<Rule, int> support;
    int n_rel = g.relation_count();
    for (auto& [a, targets] : by_source) {
        // frontier of (rule prefix, reachable set), expanded breadth-first
        std::vector<std::pair<Rule, NodeSet>> frontier;
        {
            NodeSet start(g.node_count());
            start.set(a);
            frontier.emplace_back(Rule{}, std::move(start));
        }
        for (int depth = 1; depth <= cfg.beta; ++depth) {
            std::vector<std::pair<Rule, NodeSet>> next;
            for (const auto& [prefix, reach] : frontier) {
                for (int rel = 0; rel < n_rel; ++rel) {
                    NodeSet out(g.node_count());
                    bool any = false;
                    for (int e = 0; e < g.node_count(); ++e) {
                        if (!reach.test(e)) continue;
                        for (int v : expanded(g, e, rel, cfg)) {
                            out.set(v);
                            any = true;
                        }
                    }
                    if (!any) continue;
                    Rule r = prefix;
                    r.push_back(rel);
                    for (int b : targets)
                        if (out.test(b)) ++support[r];
                    next.emplace_back(std::move(r), std::move(out));
                }
            }
            frontier.swap(next);
        }
    }

    int threshold = static_cast<int>(std::ceil(cfg.alpha * static_cast<double>(pairs.size())));
    if (threshold < 1) threshold = 1;
    std::vector<MinedRule> out;
    for (const auto& [rule, count] : support) {
        if (count < threshold) continue;
        MinedRule m;
        m.relations = rule;
        m.support = count;
        out.push_back(std::move(m));
    }
    std::sort(out.begin(), out.end(), rule_order);
    return out;
}

std::vector<MinedRule> merge_rule_lists(
    const std::vector<std::pair<AssocType, std::vector<MinedRule>>>& per_assoc) {
    std::map<Rule, MinedRule> merged;
    for (const auto& [assoc, rules] : per_assoc) {
        for (const auto& r : rules) {
            auto it = merged.find(r.relations);
            if (it == merged.end()) {
                MinedRule m = r;
                m.assocs = {assoc};
                merged.emplace(r.relations, std::move(m));
            } else {
                it->second.support = std::max(it->second.support, r.support);
                auto& tags = it->second.assocs;
                if (std::find(tags.begin(), tags.end(), assoc) == tags.end()) tags.push_back(assoc);
            }
        }
    }
    std::vector<MinedRule> out;
    for (auto& [rule, m] : merged) {
        std::sort(m.assocs.begin(), m.assocs.end());
        out.push_back(std::move(m));
    }
    std::sort(out.begin(), out.end(), rule_order);
    return out;
}

std::vector<Rule> rule_sequences(const std::vector<MinedRule>& rules) {
    std::vector<Rule> out;
    out.reserve(rules.size());
    for (const auto& r : rules) out.push_back(r.relations);
    return out;
}

void save_rules(const std::string& path, const std::vector<MinedRule>& rules, const HeteroGraph& g,
                const std::string& meta_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    if (!meta_json.empty()) out << "{\"meta\":" << meta_json << "}\n";
    for (const auto& r : rules) {
        nlohmann::json j;
        std::vector<std::string> names;
        for (int rel : r.relations) names.push_back(g.relation(rel).name);
        j["relations"] = names;
        j["support"] = r.support;
        std::vector<std::string> assocs;
        for (auto a : r.assocs) assocs.push_back(assoc_name(a));
        j["assocs"] = assocs;
        j["weight"] = r.weight ? nlohmann::json(*r.weight) : nlohmann::json(nullptr);
        if (r.chi2) j["chi2"] = *r.chi2;
        out << j.dump() << '\n';
    }
}

std::vector<MinedRule> load_rules(const std::string& path, const HeteroGraph& g,
                                  std::string* meta_json_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<MinedRule> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        if (j.contains("meta")) {
            if (meta_json_out) *meta_json_out = j["meta"].dump();
            continue;
        }
        MinedRule r;
        for (const auto& name : j.at("relations")) {
            auto rel = g.relation_id(name.get<std::string>());
            if (!rel)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": unknown relation '" + name.get<std::string>() + "'");
            r.relations.push_back(*rel);
        }
        r.support = j.at("support").get<int>();
        for (const auto& a : j.at("assocs")) {
            auto t = assoc_from_name(a.get<std::string>());
            if (!t)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": unknown association type '" + a.get<std::string>() + "'");
            r.assocs.push_back(*t);
        }
        if (j.contains("weight") && !j["weight"].is_null()) r.weight = j["weight"].get<double>();
        if (j.contains("chi2") && !j["chi2"].is_null()) r.chi2 = j["chi2"].get<double>();
        out.push_back(std::move(r));
    }
    return out;
}

}
