#include "krec/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "krec/digest.hpp"
#include "krec/rng.hpp"
#include "krec/version.hpp"

namespace krec {

namespace {

using nlohmann::json;

constexpr double kHubAttachProb = 0.95;
constexpr double kSpuriousFraction = 0.15;  // of rule-connected pairs gaining a parallel edge
constexpr int kHubCount = 3;
constexpr int kMaxSampleTries = 100000;

struct Step {
    int rel = -1;  // vocabulary index
    bool reverse = false;
};

bool split_inverse(const std::string& name, std::string& base) {
    std::string suffix = kInverseSuffix;
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        base = name.substr(0, name.size() - suffix.size());
        return true;
    }
    base = name;
    return false;
}

std::string padded(const std::string& prefix, int n, std::size_t width) {
    std::string num = std::to_string(n);
    while (num.size() < width) num.insert(num.begin(), '0');
    return prefix + num;
}

[[noreturn]] void infeasible(const std::string& why) {
    throw std::runtime_error("infeasible generator config: " + why);
}

}  // namespace

std::vector<PlantedRuleSpec> default_planted_rules() {
    std::string inv = kInverseSuffix;
    std::vector<PlantedRuleSpec> out(3);
    out[0].relations = {"brand", "brand" + inv};
    out[0].assocs = {AssocType::ALB, AssocType::BAV};
    out[0].pool_name = "brand";
    out[1].relations = {"compatible_with", "runs_on"};
    out[1].assocs = {AssocType::BT};
    out[1].pool_name = "platform";
    out[2].relations = {kLinkedToRelation, "series", std::string(kLinkedToRelation) + inv};
    out[2].assocs = {AssocType::ALV};
    out[2].pool_name = "series";
    return out;
}

SynthWorld generate_world(const SynthConfig& cfg_in) {
    SynthWorld w;
    w.cfg = cfg_in;
    SynthConfig& cfg = w.cfg;
    if (cfg.planted.empty()) cfg.planted = default_planted_rules();

    if (cfg.items < 2) infeasible("need at least 2 items");
    if (cfg.users < 1) infeasible("need at least 1 user");
    if (cfg.entities < 0) infeasible("negative entity count");
    if (cfg.history_min < 1 || cfg.history_max < cfg.history_min)
        infeasible("history bounds must satisfy 1 <= min <= max");
    if (cfg.history_max > cfg.items) infeasible("histories cannot exceed the item count");
    if (cfg.pairs_per_assoc < 1) infeasible("need at least one pair per association");
    if (cfg.negative_ratio < 0.0) infeasible("negative ratio must be non-negative");
    if (cfg.assoc_noise < 0.0 || cfg.assoc_noise > 1.0) infeasible("noise must lie in [0, 1]");
    if (cfg.p_rule < 0.0 || cfg.p_rule > 1.0) infeasible("p_rule must lie in [0, 1]");
    if (cfg.distractors < 0 || cfg.distractors > 2) infeasible("distractors must be 0, 1, or 2");

    const int n_rules = static_cast<int>(cfg.planted.size());
    std::vector<std::vector<Step>> steps(n_rules);
    auto intern = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < w.relation_names.size(); ++i)
            if (w.relation_names[i] == name) return static_cast<int>(i);
        w.relation_names.push_back(name);
        return static_cast<int>(w.relation_names.size()) - 1;
    };
    for (int j = 0; j < n_rules; ++j) {
        const PlantedRuleSpec& spec = cfg.planted[j];
        if (spec.relations.empty()) infeasible("planted rule " + std::to_string(j) + " is empty");
        if (spec.assocs.empty())
            infeasible("planted rule " + std::to_string(j) + " feeds no association");
        if (spec.routing_weight < 0.0) infeasible("negative routing weight");
        for (const std::string& name : spec.relations) {
            std::string base;
            bool rev = split_inverse(name, base);
            std::string dummy;
            if (base.empty() || split_inverse(base, dummy))
                infeasible("bad relation name '" + name + "'");
            steps[j].push_back({intern(base), rev});
        }
        if (cfg.planted[j].pool_name.empty()) cfg.planted[j].pool_name = "pool_" + std::to_string(j);
    }
    int rel_category = cfg.distractors >= 1 ? intern("category") : -1;
    int rel_related = cfg.distractors >= 2 ? intern("related_to") : -1;
    if (static_cast<int>(w.relation_names.size()) > cfg.relations)
        infeasible("the planted rules and distractors need " +
                   std::to_string(w.relation_names.size()) + " relations, got " +
                   std::to_string(cfg.relations));
    std::vector<int> fillers;
    int extra = 0;
    while (static_cast<int>(w.relation_names.size()) < cfg.relations) {
        std::string name = fillers.empty() ? "variant_of" : "extra_" + std::to_string(extra++);
        bool taken = false;
        for (const auto& existing : w.relation_names) taken = taken || existing == name;
        if (taken && !fillers.empty()) continue;
        if (taken) {
            fillers.push_back(-1);  // variant_of already claimed by a planted rule
            continue;
        }
        fillers.push_back(intern(name));
    }
    fillers.erase(std::remove(fillers.begin(), fillers.end(), -1), fillers.end());

    // entity budget: one pool per multi-step rule, three hub nodes, the rest spare
    int pool_rules = 0;
    for (int j = 0; j < n_rules; ++j)
        if (steps[j].size() >= 2) ++pool_rules;
    int hub_count = cfg.distractors >= 1 ? kHubCount : 0;
    int remaining = cfg.entities - hub_count;
    if (remaining < pool_rules)
        infeasible("need at least " + std::to_string(pool_rules + hub_count) + " entities");
    int spare = pool_rules > 0 ? remaining / 10 : remaining;
    int per_pool = pool_rules > 0 ? (remaining - spare) / pool_rules : 0;
    if (pool_rules > 0 && per_pool < 1) infeasible("entity pools would be empty");

    // nodes: items first, then pool entities, hubs, spare
    w.nodes.reserve(cfg.items + cfg.entities);
    for (int i = 0; i < cfg.items; ++i)
        w.nodes.push_back({i, NodeKind::Item, padded("item_", i, 4), ""});
    int next_id = cfg.items;
    w.pools.assign(n_rules, {});
    for (int j = 0; j < n_rules; ++j) {
        if (steps[j].size() < 2) continue;
        const std::string& pool = cfg.planted[j].pool_name;
        for (int k = 0; k < per_pool; ++k) {
            w.nodes.push_back({next_id, NodeKind::Entity, padded(pool + "_", k, 3), pool});
            w.pools[j].push_back(next_id++);
        }
    }
    std::vector<int> hubs;
    for (int k = 0; k < hub_count; ++k) {
        w.nodes.push_back({next_id, NodeKind::Entity, padded("hub_", k, 1), "hub"});
        hubs.push_back(next_id++);
    }
    std::vector<int> spares;
    while (next_id < cfg.items + cfg.entities) {
        w.nodes.push_back({next_id, NodeKind::Entity,
                           padded("ent_", next_id - cfg.items, 4), "misc"});
        spares.push_back(next_id++);
    }

    std::set<std::array<int, 3>> edge_set;  // (rel, src, dst)
    auto add_edge = [&](int rel, int src, int dst) {
        return edge_set.insert({rel, src, dst}).second;
    };

    Rng rng(derive_seed(cfg.seed, "world"));
    const int chains = std::max(cfg.pairs_per_assoc * 2, cfg.items);
    for (int j = 0; j < n_rules; ++j) {
        const auto& st = steps[j];
        int len = static_cast<int>(st.size());
        std::vector<int> nodes(len + 1);
        for (int c = 0; c < chains; ++c) {
            nodes[0] = static_cast<int>(rng.next_below(cfg.items));
            do {
                nodes[len] = static_cast<int>(rng.next_below(cfg.items));
            } while (nodes[len] == nodes[0]);
            for (int s = 1; s < len; ++s) {
                const auto& pool = w.pools[j];
                do {
                    nodes[s] = pool[rng.next_below(pool.size())];
                } while (pool.size() > 1 && nodes[s] == nodes[s - 1]);
            }
            for (int s = 0; s < len; ++s) {
                if (st[s].reverse)
                    add_edge(st[s].rel, nodes[s + 1], nodes[s]);
                else
                    add_edge(st[s].rel, nodes[s], nodes[s + 1]);
            }
        }
    }

    if (rel_category >= 0) {
        for (int i = 0; i < cfg.items; ++i)
            if (rng.next_double() < kHubAttachProb)
                add_edge(rel_category, i, hubs[rng.next_below(hubs.size())]);
    }

    // reachability of every item through a rule, over the current edge set
    auto compute_connected = [&]() {
        std::vector<std::vector<std::vector<int>>> fwd(
            w.relation_names.size(), std::vector<std::vector<int>>(w.nodes.size()));
        std::vector<std::vector<std::vector<int>>> rev = fwd;
        for (const auto& e : edge_set) {
            fwd[e[0]][e[1]].push_back(e[2]);
            rev[e[0]][e[2]].push_back(e[1]);
        }
        w.connected.assign(n_rules, {});
        std::vector<char> mark(w.nodes.size(), 0);
        for (int j = 0; j < n_rules; ++j) {
            w.connected[j].assign(cfg.items, {});
            for (int a = 0; a < cfg.items; ++a) {
                std::vector<int> frontier{a};
                for (const Step& s : steps[j]) {
                    std::vector<int> next;
                    for (int v : frontier)
                        for (int t : (s.reverse ? rev : fwd)[s.rel][v])
                            if (!mark[t]) {
                                mark[t] = 1;
                                next.push_back(t);
                            }
                    for (int t : next) mark[t] = 0;
                    std::sort(next.begin(), next.end());
                    frontier.swap(next);
                }
                auto& out = w.connected[j][a];
                for (int v : frontier)
                    if (v < cfg.items && v != a) out.push_back(v);
            }
        }
    };

    if (rel_related >= 0) {
        compute_connected();
        long long added = 0;
        for (int j = 0; j < n_rules; ++j)
            for (int a = 0; a < cfg.items; ++a)
                for (int b : w.connected[j][a])
                    if (rng.next_double() < kSpuriousFraction && add_edge(rel_related, a, b))
                        ++added;
        for (long long k = 0; k < added;) {
            int tries = 0;
            for (;; ++tries) {
                if (tries > kMaxSampleTries) infeasible("cannot place spurious edges");
                int a = static_cast<int>(rng.next_below(cfg.items));
                int b = static_cast<int>(rng.next_below(cfg.items));
                if (a != b && add_edge(rel_related, a, b)) break;
            }
            ++k;
        }
    }

    for (std::size_t f = 0; f < fillers.size(); ++f) {
        int rel = fillers[f];
        int count = f == 0 ? std::max(1, cfg.items * 3 / 10) : std::max(1, cfg.items / 10);
        for (int k = 0; k < count;) {
            int tries = 0;
            for (;; ++tries) {
                if (tries > kMaxSampleTries) infeasible("cannot place filler edges");
                int a = static_cast<int>(rng.next_below(cfg.items));
                int b;
                if (f > 0 && !spares.empty())
                    b = spares[rng.next_below(spares.size())];
                else
                    b = static_cast<int>(rng.next_below(cfg.items));
                if (a != b && add_edge(rel, a, b)) break;
            }
            ++k;
        }
    }

    // every relation keeps at least one edge so loaded ids match the vocabulary
    {
        std::vector<char> seen(w.relation_names.size(), 0);
        for (const auto& e : edge_set) seen[e[0]] = 1;
        for (std::size_t r = 0; r < seen.size(); ++r)
            if (!seen[r]) add_edge(static_cast<int>(r), 0, 1);
    }

    compute_connected();
    w.edges.reserve(edge_set.size());
    for (const auto& e : edge_set) w.edges.push_back({e[1], e[0], e[2]});

    auto connected_any = [&](int a, int b) {
        for (int j = 0; j < n_rules; ++j)
            if (std::binary_search(w.connected[j][a].begin(), w.connected[j][a].end(), b))
                return true;
        return false;
    };

    // flattened connected pair lists, one per rule, for uniform sampling
    std::vector<std::vector<std::pair<int, int>>> conn_pairs(n_rules);
    for (int j = 0; j < n_rules; ++j)
        for (int a = 0; a < cfg.items; ++a)
            for (int b : w.connected[j][a]) conn_pairs[j].emplace_back(a, b);

    Rng prng(derive_seed(cfg.seed, "pairs"));
    for (int t = 0; t < 4; ++t) {
        AssocType assoc = static_cast<AssocType>(t);
        std::vector<int> feeders;
        for (int j = 0; j < n_rules; ++j) {
            const auto& as = cfg.planted[j].assocs;
            if (std::find(as.begin(), as.end(), assoc) != as.end() && !conn_pairs[j].empty())
                feeders.push_back(j);
        }
        if (feeders.empty()) {
            bool wanted = false;
            for (int j = 0; j < n_rules; ++j) {
                const auto& as = cfg.planted[j].assocs;
                wanted = wanted || std::find(as.begin(), as.end(), assoc) != as.end();
            }
            if (!wanted) continue;  // association intentionally unused
            if (cfg.assoc_noise < 1.0)
                infeasible(std::string("association ") + assoc_name(assoc) +
                           " has no rule-connected pairs to sample");
        }
        double total_weight = 0.0;
        for (int j : feeders) total_weight += cfg.planted[j].routing_weight;

        std::set<std::pair<int, int>> used;
        for (int i = 0; i < cfg.pairs_per_assoc; ++i) {
            int tries = 0;
            for (;; ++tries) {
                if (tries > kMaxSampleTries)
                    infeasible(std::string("cannot sample distinct pairs for ") +
                               assoc_name(assoc));
                int a, b, rule_tag;
                if (prng.next_double() < cfg.assoc_noise || feeders.empty()) {
                    int inner = 0;
                    do {
                        if (++inner > kMaxSampleTries)
                            infeasible("cannot sample rule-disconnected pairs");
                        a = static_cast<int>(prng.next_below(cfg.items));
                        b = static_cast<int>(prng.next_below(cfg.items));
                    } while (a == b || connected_any(a, b));
                    rule_tag = -1;
                } else {
                    int j = feeders.back();
                    if (total_weight > 0.0) {
                        double draw = prng.next_double() * total_weight;
                        double acc = 0.0;
                        for (int cand : feeders) {
                            acc += cfg.planted[cand].routing_weight;
                            if (draw < acc) {
                                j = cand;
                                break;
                            }
                        }
                    } else {
                        j = feeders[prng.next_below(feeders.size())];
                    }
                    auto pick = conn_pairs[j][prng.next_below(conn_pairs[j].size())];
                    a = pick.first;
                    b = pick.second;
                    rule_tag = j;
                }
                if (!used.insert({a, b}).second) continue;
                w.pairs.push_back({a, b, assoc, 1});
                w.pair_rule.push_back(rule_tag);
                break;
            }
        }
        long long n_neg = std::llround(cfg.negative_ratio * cfg.pairs_per_assoc);
        for (long long i = 0; i < n_neg; ++i) {
            int tries = 0;
            for (;; ++tries) {
                if (tries > kMaxSampleTries)
                    infeasible(std::string("cannot sample negatives for ") + assoc_name(assoc));
                int a = static_cast<int>(prng.next_below(cfg.items));
                int b = static_cast<int>(prng.next_below(cfg.items));
                if (a == b || connected_any(a, b) || !used.insert({a, b}).second) continue;
                w.pairs.push_back({a, b, assoc, 0});
                w.pair_rule.push_back(-1);
                break;
            }
        }
    }

    Rng irng(derive_seed(cfg.seed, "interactions"));
    for (int u = 0; u < cfg.users; ++u) {
        int len = cfg.history_min +
                  static_cast<int>(irng.next_below(cfg.history_max - cfg.history_min + 1));
        std::vector<char> owned(cfg.items, 0);
        std::vector<int> seq;
        auto push = [&](int item, int rule, int source) {
            w.interactions.push_back({u, item, static_cast<long long>(seq.size()), rule, source});
            owned[item] = 1;
            seq.push_back(item);
        };
        push(static_cast<int>(irng.next_below(cfg.items)), -1, -1);
        while (static_cast<int>(seq.size()) < len) {
            bool placed = false;
            if (irng.next_double() < cfg.p_rule) {
                std::vector<std::vector<std::pair<int, int>>> opts(n_rules);
                std::vector<int> havej;
                double total = 0.0;
                for (int j = 0; j < n_rules; ++j) {
                    if (cfg.planted[j].routing_weight <= 0.0) continue;
                    for (int h : seq)
                        for (int tgt : w.connected[j][h])
                            if (!owned[tgt]) opts[j].emplace_back(h, tgt);
                    if (!opts[j].empty()) {
                        havej.push_back(j);
                        total += cfg.planted[j].routing_weight;
                    }
                }
                if (!havej.empty()) {
                    int j = havej.back();
                    double draw = irng.next_double() * total;
                    double acc = 0.0;
                    for (int cand : havej) {
                        acc += cfg.planted[cand].routing_weight;
                        if (draw < acc) {
                            j = cand;
                            break;
                        }
                    }
                    auto pick = opts[j][irng.next_below(opts[j].size())];
                    push(pick.second, j, pick.first);
                    placed = true;
                }
            }
            if (!placed) {
                int item;
                do {
                    item = static_cast<int>(irng.next_below(cfg.items));
                } while (owned[item]);
                push(item, -1, -1);
            }
        }
    }
    return w;
}

HeteroGraph world_graph(const SynthWorld& w, const IngestOptions& opt) {
    GraphBuilder b;
    for (const auto& n : w.nodes) b.add_node(n.kind, n.label, n.entity_type);
    for (const auto& e : w.edges) b.add_edge(e.src, w.relation_names[e.rel], e.dst);
    return b.build(opt);
}

InteractionLog world_log(const SynthWorld& w) {
    InteractionLog log;
    log.user_count = w.cfg.users;
    log.item_count = w.cfg.items;
    log.records.reserve(w.interactions.size());
    for (const auto& rec : w.interactions)
        log.records.push_back(
            {rec.user, rec.item, rec.t, static_cast<long long>(log.records.size())});
    return log;
}

SynthPaths synth_paths(const std::string& dir) {
    SynthPaths p;
    p.nodes = dir + "/nodes.tsv";
    p.edges = dir + "/edges.tsv";
    p.associations = dir + "/associations.tsv";
    p.interactions = dir + "/interactions.tsv";
    p.manifest = dir + "/manifest.json";
    return p;
}

namespace {

json config_json(const SynthConfig& cfg) {
    json planted = json::array();
    for (const auto& spec : cfg.planted) {
        json assocs = json::array();
        for (AssocType t : spec.assocs) assocs.push_back(assoc_name(t));
        planted.push_back({{"relations", spec.relations},
                           {"assocs", assocs},
                           {"routing_weight", spec.routing_weight},
                           {"pool_name", spec.pool_name}});
    }
    return {{"items", cfg.items},
            {"entities", cfg.entities},
            {"users", cfg.users},
            {"relations", cfg.relations},
            {"planted", planted},
            {"assoc_noise", cfg.assoc_noise},
            {"p_rule", cfg.p_rule},
            {"pairs_per_assoc", cfg.pairs_per_assoc},
            {"negative_ratio", cfg.negative_ratio},
            {"history_min", cfg.history_min},
            {"history_max", cfg.history_max},
            {"distractors", cfg.distractors},
            {"seed", cfg.seed}};
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    return out;
}

}  // namespace

void write_world(const SynthWorld& w, const std::string& dir) {
    SynthPaths p = synth_paths(dir);

    auto nodes = open_out(p.nodes);
    nodes << "# node_id\tkind\tlabel\tentity_type\n";
    for (const auto& n : w.nodes)
        nodes << n.id << '\t' << (n.kind == NodeKind::Item ? "item" : "entity") << '\t' << n.label
              << '\t' << n.entity_type << '\n';

    auto edges = open_out(p.edges);
    edges << "# src_id\trelation_name\tdst_id\n";
    for (const auto& e : w.edges)
        edges << e.src << '\t' << w.relation_names[e.rel] << '\t' << e.dst << '\n';

    auto assocs = open_out(p.associations);
    assocs << "# item_a\titem_b\tassoc_type\tlabel\n";
    for (const auto& pr : w.pairs)
        assocs << pr.a << '\t' << pr.b << '\t' << assoc_name(pr.assoc) << '\t' << pr.label << '\n';

    auto inter = open_out(p.interactions);
    inter << "# user_id\titem_id\ttimestamp\n";
    for (const auto& rec : w.interactions)
        inter << rec.user << '\t' << rec.item << '\t' << rec.t << '\n';

    json cfg_json = config_json(w.cfg);
    json j;
    j["kind"] = "krec-synth-manifest";
    j["tool_version"] = kToolVersion;
    j["seed"] = w.cfg.seed;
    j["config"] = cfg_json;
    j["config_digest"] = digest_hex(cfg_json.dump());
    j["relations"] = w.relation_names;
    j["counts"] = {{"nodes", w.nodes.size()},
                   {"edges", w.edges.size()},
                   {"pairs", w.pairs.size()},
                   {"interactions", w.interactions.size()}};
    j["pools"] = w.pools;
    json conn_counts = json::array();
    for (const auto& per_item : w.connected) {
        std::size_t total = 0;
        for (const auto& lst : per_item) total += lst.size();
        conn_counts.push_back(total);
    }
    j["connected_pairs"] = conn_counts;
    json pairs = json::array();
    for (std::size_t i = 0; i < w.pairs.size(); ++i) {
        const auto& pr = w.pairs[i];
        pairs.push_back({{"a", pr.a},
                         {"b", pr.b},
                         {"assoc", assoc_name(pr.assoc)},
                         {"label", pr.label},
                         {"rule", w.pair_rule[i] < 0 ? json(nullptr) : json(w.pair_rule[i])}});
    }
    j["pairs"] = pairs;
    json inters = json::array();
    for (const auto& rec : w.interactions)
        inters.push_back({{"user", rec.user},
                          {"item", rec.item},
                          {"t", rec.t},
                          {"rule", rec.rule < 0 ? json(nullptr) : json(rec.rule)},
                          {"source", rec.source < 0 ? json(nullptr) : json(rec.source)}});
    j["interactions"] = inters;

    auto manifest = open_out(p.manifest);
    manifest << j.dump(2) << "\n";
}

InteractionLog latent_factor_log(int users, int items, int rank, int per_user,
                                 std::uint64_t seed) {
    if (users < 1 || items < 2 || rank < 1) throw std::invalid_argument("bad latent log shape");
    if (per_user < 1 || per_user > items)
        throw std::invalid_argument("per-user count must lie in [1, items]");
    Rng rng(derive_seed(seed, "latent"));
    auto gauss = [&]() {
        double u1 = 1.0 - rng.next_double();
        double u2 = rng.next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
    };
    double scale = 1.0 / std::sqrt(static_cast<double>(rank));
    std::vector<double> user_f(static_cast<std::size_t>(users) * rank);
    std::vector<double> item_f(static_cast<std::size_t>(items) * rank);
    for (double& v : user_f) v = gauss() * scale;
    for (double& v : item_f) v = gauss() * scale;

    InteractionLog log;
    log.user_count = users;
    log.item_count = items;
    std::vector<std::pair<double, int>> scored(items);
    for (int u = 0; u < users; ++u) {
        for (int i = 0; i < items; ++i) {
            double s = 0.0;
            for (int k = 0; k < rank; ++k)
                s += user_f[static_cast<std::size_t>(u) * rank + k] *
                     item_f[static_cast<std::size_t>(i) * rank + k];
            scored[i] = {s, i};
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int k = 0; k < per_user; ++k)
            log.records.push_back(
                {u, scored[k].second, k, static_cast<long long>(log.records.size())});
    }
    return log;
}

}
