#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "krec/combine.hpp"
#include "krec/digest.hpp"
#include "krec/eval.hpp"
#include "krec/graph.hpp"
#include "krec/models.hpp"
#include "krec/rng.hpp"
#include "krec/select.hpp"
#include "krec/synth.hpp"
#include "krec/version.hpp"
#include "krec/walk.hpp"

using nlohmann::json;
using namespace krec;

namespace {

// artifacts reference each other by basename + digest so a report produced in
// one directory is byte-identical to the same run anywhere else
std::string base_name(const std::string& path) {
    return std::filesystem::path(path).filename().string();
}

json read_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config must be a JSON object: " + path);
    return j;
}

// config file fills any option the command line left untouched
template <typename T>
void cfg_default(CLI::App* cmd, const json& cfg, const std::string& flag, const std::string& key,
                 T& value) {
    if (cfg.contains(key) && cmd->count(flag) == 0) value = cfg.at(key).get<T>();
}

void integrity(bool strict, const std::string& msg) {
    if (strict) throw std::runtime_error(msg);
    std::cerr << "warning: " << msg << "\n";
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    for (const auto& tok : split_csv(s)) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw std::runtime_error(std::string("bad ") + what + " list entry '" + tok + "'");
        }
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& tok : split_csv(s)) {
        try {
            out.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw std::runtime_error("bad seed list entry '" + tok + "'");
        }
    }
    if (out.empty()) throw std::runtime_error("empty seed list");
    return out;
}

struct GraphOpts {
    std::string nodes, edges, whitelist;
    bool no_inverse = false;
};

void add_graph_opts(CLI::App* cmd, GraphOpts& g, bool required = true) {
    auto* n = cmd->add_option("--nodes", g.nodes, "node table (TSV)");
    auto* e = cmd->add_option("--edges", g.edges, "edge table (TSV)");
    if (required) {
        n->required();
        e->required();
    }
    cmd->add_option("--whitelist", g.whitelist, "comma-separated entity types to keep");
    cmd->add_flag("--no-inverse", g.no_inverse, "do not synthesize reverse relations");
}

HeteroGraph load_graph_opts(const GraphOpts& go) {
    IngestOptions opt;
    opt.add_inverse = !go.no_inverse;
    if (!go.whitelist.empty()) {
        std::set<std::string> wl;
        for (const auto& t : split_csv(go.whitelist)) wl.insert(t);
        opt.type_whitelist = wl;
    }
    return load_graph(go.nodes, go.edges, opt);
}

MinerConfig walk_from_names(double alpha, int beta, const std::string& absorb, int degree_cap) {
    MinerConfig cfg;
    cfg.alpha = alpha;
    cfg.beta = beta;
    auto mode = self_absorb_from_name(absorb);
    if (!mode) throw std::runtime_error("unknown absorption mode '" + absorb + "'");
    cfg.self_absorb = *mode;
    cfg.degree_cap = degree_cap;
    return cfg;
}

json walk_to_json(const MinerConfig& cfg) {
    return {{"alpha", cfg.alpha},
            {"beta", cfg.beta},
            {"self_absorb", self_absorb_name(cfg.self_absorb)},
            {"degree_cap", cfg.degree_cap}};
}

MinerConfig walk_from_meta(const std::string& meta_json) {
    MinerConfig cfg;
    if (meta_json.empty()) return cfg;
    json j = json::parse(meta_json, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("config")) return cfg;
    const json& c = j.at("config");
    cfg.alpha = c.value("alpha", cfg.alpha);
    cfg.beta = c.value("beta", cfg.beta);
    if (c.contains("self_absorb"))
        if (auto m = self_absorb_from_name(c.at("self_absorb").get<std::string>())) cfg.self_absorb = *m;
    cfg.degree_cap = c.value("degree_cap", cfg.degree_cap);
    return cfg;
}

std::string rule_names(const HeteroGraph& g, const Rule& rule) {
    std::string out = "[";
    for (std::size_t i = 0; i < rule.size(); ++i) {
        if (i) out += ", ";
        out += g.relation(rule[i]).name;
    }
    return out + "]";
}

// ----------------------------------------------------------------- synth ---

struct SynthOpts {
    std::string config, out;
    SynthConfig cfg;
};

void run_synth(CLI::App* cmd, SynthOpts& o) {
    json cfg = read_config(o.config);
    cfg_default(cmd, cfg, "--items", "items", o.cfg.items);
    cfg_default(cmd, cfg, "--entities", "entities", o.cfg.entities);
    cfg_default(cmd, cfg, "--users", "users", o.cfg.users);
    cfg_default(cmd, cfg, "--relations", "relations", o.cfg.relations);
    cfg_default(cmd, cfg, "--noise", "assoc_noise", o.cfg.assoc_noise);
    cfg_default(cmd, cfg, "--p-rule", "p_rule", o.cfg.p_rule);
    cfg_default(cmd, cfg, "--pairs", "pairs_per_assoc", o.cfg.pairs_per_assoc);
    cfg_default(cmd, cfg, "--neg-ratio", "negative_ratio", o.cfg.negative_ratio);
    cfg_default(cmd, cfg, "--history-min", "history_min", o.cfg.history_min);
    cfg_default(cmd, cfg, "--history-max", "history_max", o.cfg.history_max);
    cfg_default(cmd, cfg, "--distractors", "distractors", o.cfg.distractors);
    cfg_default(cmd, cfg, "--seed", "seed", o.cfg.seed);
    if (cfg.contains("planted")) {
        for (const auto& e : cfg.at("planted")) {
            PlantedRuleSpec s;
            s.relations = e.at("relations").get<std::vector<std::string>>();
            for (const auto& a : e.at("assocs")) {
                auto t = assoc_from_name(a.get<std::string>());
                if (!t)
                    throw std::runtime_error("unknown association '" + a.get<std::string>() +
                                             "' in config");
                s.assocs.push_back(*t);
            }
            s.routing_weight = e.value("routing_weight", 1.0);
            s.pool_name = e.value("pool_name", "");
            o.cfg.planted.push_back(s);
        }
    }

    SynthWorld w = generate_world(o.cfg);
    std::filesystem::create_directories(o.out);
    write_world(w, o.out);
    SynthPaths p = synth_paths(o.out);
    std::cout << "wrote " << p.nodes << " (" << w.nodes.size() << " nodes)\n";
    std::cout << "wrote " << p.edges << " (" << w.edges.size() << " edges)\n";
    std::cout << "wrote " << p.associations << " (" << w.pairs.size() << " pairs)\n";
    std::cout << "wrote " << p.interactions << " (" << w.interactions.size() << " interactions)\n";
    std::cout << "wrote " << p.manifest << "\n";
    for (std::size_t j = 0; j < w.connected.size(); ++j) {
        std::size_t total = 0;
        for (const auto& lst : w.connected[j]) total += lst.size();
        std::cout << "rule " << j << " connects " << total << " ordered item pairs\n";
    }
}

// ----------------------------------------------------------- build-graph ---

struct BuildGraphOpts {
    GraphOpts graph;
    std::string out_nodes, out_edges;
};

void run_build_graph(const BuildGraphOpts& o) {
    HeteroGraph g = load_graph_opts(o.graph);
    long long active = 0;
    for (int i = 0; i < g.node_count(); ++i)
        if (g.is_active(i)) ++active;
    std::cout << "nodes: " << g.node_count() << " (" << g.item_count() << " items, " << active
              << " active)\n";
    int forward = 0;
    for (const auto& r : g.relations())
        if (!r.is_inverse) ++forward;
    std::cout << "relations: " << forward << " forward, " << g.relation_count() << " total\n";
    std::cout << "edges: " << g.edge_count() << " forward\n";
    if (!o.out_nodes.empty() != !o.out_edges.empty())
        throw std::runtime_error("--out-nodes and --out-edges go together");
    if (!o.out_nodes.empty()) {
        save_graph(g, o.out_nodes, o.out_edges);
        std::cout << "wrote " << o.out_nodes << " and " << o.out_edges << "\n";
    }
}

// ------------------------------------------------------------ mine-rules ---

struct MineOpts {
    std::string config;
    GraphOpts graph;
    std::string associations, out, features_out;
    double alpha = 0.01;
    int beta = 4;
    std::string absorb = "final";
    int degree_cap = 0;
    std::uint64_t seed = 0;
    bool strict = false;
};

void run_mine(CLI::App* cmd, MineOpts& o) {
    json cfg = read_config(o.config);
    cfg_default(cmd, cfg, "--alpha", "alpha", o.alpha);
    cfg_default(cmd, cfg, "--beta", "beta", o.beta);
    cfg_default(cmd, cfg, "--absorb", "self_absorb", o.absorb);
    cfg_default(cmd, cfg, "--degree-cap", "degree_cap", o.degree_cap);
    cfg_default(cmd, cfg, "--seed", "seed", o.seed);

    HeteroGraph g = load_graph_opts(o.graph);
    std::vector<AssociationPair> pairs = load_associations(o.associations);
    validate_associations(g, pairs);
    MinerConfig mc = walk_from_names(o.alpha, o.beta, o.absorb, o.degree_cap);

    std::vector<std::pair<AssocType, std::vector<MinedRule>>> per_assoc;
    for (int t = 0; t < 4; ++t) {
        AssocType assoc = static_cast<AssocType>(t);
        std::vector<std::pair<int, int>> positives;
        for (const auto& p : pairs)
            if (p.assoc == assoc && p.label == 1) positives.emplace_back(p.a, p.b);
        if (positives.empty()) continue;
        auto mined = enumerate_rules(g, positives, mc);
        std::cout << assoc_name(assoc) << ": " << positives.size() << " positive pairs, "
                  << mined.size() << " rules\n";
        per_assoc.emplace_back(assoc, std::move(mined));
    }
    if (per_assoc.empty()) throw std::runtime_error("no positive pairs in " + o.associations);
    std::vector<MinedRule> merged = merge_rule_lists(per_assoc);

    json meta;
    meta["kind"] = "krec-rules";
    meta["tool_version"] = kToolVersion;
    meta["seed"] = o.seed;
    meta["config"] = walk_to_json(mc);
    meta["config_digest"] = digest_hex(meta["config"].dump());
    meta["inputs"] = {{"nodes", digest_file(o.graph.nodes)},
                      {"edges", digest_file(o.graph.edges)},
                      {"associations", digest_file(o.associations)}};
    save_rules(o.out, merged, g, meta.dump());
    std::cout << "merged: " << merged.size() << " rules -> " << o.out << "\n";
    for (std::size_t i = 0; i < merged.size() && i < 10; ++i)
        std::cout << "  " << rule_names(g, merged[i].relations) << " support "
                  << merged[i].support << "\n";

    if (!o.features_out.empty()) {
        std::vector<std::pair<int, int>> all;
        all.reserve(pairs.size());
        for (const auto& p : pairs) all.emplace_back(p.a, p.b);
        auto x = compute_x_features(g, all, rule_sequences(merged), mc);
        std::ofstream out(o.features_out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write file: " + o.features_out);
        out << "# pair_index\trule_index\tx\n";
        out << "# pairs=" << all.size() << " rules=" << merged.size() << "\n";
        out << "# rules_digest=" << digest_file(o.out) << "\n";
        out << "# associations_digest=" << digest_file(o.associations) << "\n";
        out.precision(17);
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t r = 0; r < x[i].size(); ++r)
                if (x[i][r] != 0.0) out << i << '\t' << r << '\t' << x[i][r] << '\n';
        std::cout << "wrote " << o.features_out << "\n";
    }
}

// ---------------------------------------------------------- select-rules ---

struct SelectOpts {
    std::string config;
    GraphOpts graph;
    std::string associations, rules_in, out, features_in, interactions;
    std::string objective = "sigmoid";
    int top_n = 50;
    double lr = 0.05;
    int epochs = 200;
    double neg_ratio = 1.0;
    std::uint64_t seed = 0;
    bool strict = false;
};

// sparse (pair, rule, x) rows written by mine-rules
std::vector<std::vector<double>> read_features(const std::string& path, std::size_t n_pairs,
                                               std::size_t n_rules, const std::string& rules_digest,
                                               const std::string& assoc_digest, bool strict) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::vector<double>> x(n_pairs, std::vector<double>(n_rules, 0.0));
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto check = [&](const char* tag, const std::string& want) {
                auto pos = line.find(tag);
                if (pos != std::string::npos && line.substr(pos + std::string(tag).size()) != want)
                    integrity(strict, path + " was built against different " +
                                          std::string(tag, std::string(tag).size() - 1) + " inputs");
            };
            check("rules_digest=", rules_digest);
            check("associations_digest=", assoc_digest);
            continue;
        }
        std::stringstream ss(line);
        long long pi, ri;
        double v;
        if (!(ss >> pi >> ri >> v))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad feature row");
        if (pi < 0 || pi >= static_cast<long long>(n_pairs) || ri < 0 ||
            ri >= static_cast<long long>(n_rules))
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": feature row out of range");
        x[pi][ri] = v;
    }
    return x;
}

void run_select(CLI::App* cmd, SelectOpts& o) {
    json cfg = read_config(o.config);
    cfg_default(cmd, cfg, "--objective", "objective", o.objective);
    cfg_default(cmd, cfg, "--top-n", "top_n", o.top_n);
    cfg_default(cmd, cfg, "--lr", "lr", o.lr);
    cfg_default(cmd, cfg, "--epochs", "epochs", o.epochs);
    cfg_default(cmd, cfg, "--neg-ratio", "neg_ratio", o.neg_ratio);
    cfg_default(cmd, cfg, "--seed", "seed", o.seed);

    auto obj = objective_from_name(o.objective);
    if (!obj) throw std::runtime_error("unknown objective '" + o.objective + "'");
    if (o.top_n < 1) throw std::runtime_error("--top-n must be positive");

    HeteroGraph g = load_graph_opts(o.graph);
    std::string rules_meta;
    std::vector<MinedRule> rules = load_rules(o.rules_in, g, &rules_meta);
    if (rules.empty()) throw std::runtime_error("no rules in " + o.rules_in);
    MinerConfig mc = walk_from_meta(rules_meta);
    std::vector<Rule> seqs = rule_sequences(rules);

    std::vector<AssociationPair> pairs = load_associations(o.associations);
    validate_associations(g, pairs);

    std::vector<std::vector<double>> file_x;
    if (!o.features_in.empty()) {
        file_x = read_features(o.features_in, pairs.size(), rules.size(),
                               digest_file(o.rules_in), digest_file(o.associations), o.strict);
    } else {
        std::vector<std::pair<int, int>> all;
        all.reserve(pairs.size());
        for (const auto& p : pairs) all.emplace_back(p.a, p.b);
        file_x = compute_x_features(g, all, seqs, mc);
    }

    std::set<int> keep;
    std::map<int, double> chi_of, weight_of;
    for (int t = 0; t < 4; ++t) {
        AssocType assoc = static_cast<AssocType>(t);
        LabeledPairSet data;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            if (pairs[i].assoc != assoc) continue;
            data.pairs.push_back({pairs[i].a, pairs[i].b, assoc, pairs[i].label});
            data.x.push_back(file_x[i]);
        }
        bool has_pos = false, has_neg = false;
        for (const auto& p : data.pairs) (p.label ? has_pos : has_neg) = true;
        if (!has_pos) continue;
        if (!has_neg) {
            std::vector<std::pair<int, int>> positives;
            for (const auto& p : data.pairs) positives.emplace_back(p.a, p.b);
            auto sampled = sample_negative_pairs(g, positives, o.neg_ratio,
                                                 derive_seed(o.seed, assoc_name(assoc)));
            auto sx = compute_x_features(g, sampled, seqs, mc);
            for (std::size_t i = 0; i < sampled.size(); ++i) {
                data.pairs.push_back({sampled[i].first, sampled[i].second, assoc, 0});
                data.x.push_back(sx[i]);
            }
        }

        std::vector<int> candidates;
        for (std::size_t r = 0; r < rules.size(); ++r)
            if (std::find(rules[r].assocs.begin(), rules[r].assocs.end(), assoc) !=
                rules[r].assocs.end())
                candidates.push_back(static_cast<int>(r));
        if (candidates.empty()) continue;

        std::vector<std::string> warnings;
        std::vector<double> chi = chi_square_scores(data, &warnings);
        for (const auto& wmsg : warnings) std::cerr << "warning: " << wmsg << "\n";

        std::vector<std::pair<double, int>> ranked;
        for (int r : candidates) ranked.emplace_back(chi[r], r);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        if (static_cast<int>(ranked.size()) > o.top_n) ranked.resize(o.top_n);

        // weights come from minimizing the selection objective over the
        // chi-square-filtered feature columns
        LabeledPairSet sub;
        sub.pairs = data.pairs;
        sub.x.assign(data.pairs.size(), {});
        for (std::size_t i = 0; i < data.pairs.size(); ++i)
            for (const auto& [score, r] : ranked) sub.x[i].push_back(data.x[i][r]);
        SelectionHyper hyper;
        hyper.lr = o.lr;
        hyper.epochs = o.epochs;
        hyper.seed = derive_seed(o.seed, std::string("select-") + assoc_name(assoc));
        auto trained = train_selection_weights(sub, *obj, hyper);

        std::cout << assoc_name(assoc) << ": " << data.pairs.size() << " labeled pairs, keeping "
                  << ranked.size() << " of " << candidates.size() << " rules\n";
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            auto [score, r] = ranked[k];
            keep.insert(r);
            double w = trained.weights.w[k];
            auto it = chi_of.find(r);
            if (it == chi_of.end() || score > it->second) {
                chi_of[r] = score;
                weight_of[r] = w;
            }
            if (k < 5)
                std::cout << "  " << rule_names(g, rules[r].relations) << " chi2 " << score
                          << " weight " << w << "\n";
        }
    }
    if (keep.empty()) throw std::runtime_error("selection kept no rules");

    std::vector<MinedRule> selected;
    for (std::size_t r = 0; r < rules.size(); ++r) {
        if (!keep.count(static_cast<int>(r))) continue;
        MinedRule rule = rules[r];
        rule.chi2 = chi_of[static_cast<int>(r)];
        rule.weight = weight_of[static_cast<int>(r)];
        selected.push_back(std::move(rule));
    }

    json meta;
    meta["kind"] = "krec-rules";
    meta["tool_version"] = kToolVersion;
    meta["seed"] = o.seed;
    meta["config"] = walk_to_json(mc);
    meta["config_digest"] = digest_hex(meta["config"].dump());
    meta["selection"] = {{"objective", objective_name(*obj)},
                         {"top_n", o.top_n},
                         {"lr", o.lr},
                         {"epochs", o.epochs},
                         {"neg_ratio", o.neg_ratio}};
    meta["inputs"] = {{"nodes", digest_file(o.graph.nodes)},
                      {"edges", digest_file(o.graph.edges)},
                      {"associations", digest_file(o.associations)},
                      {"rules", digest_file(o.rules_in)}};
    save_rules(o.out, selected, g, meta.dump());
    std::cout << "selected " << selected.size() << " rules -> " << o.out << "\n";

    if (!o.interactions.empty()) {
        InteractionLog log = load_interactions(o.interactions);
        EvalSplit split = leave_one_out_split(log, 0, o.seed, 0);
        std::vector<CoverageUser> users;
        for (const auto& ue : split.users) users.push_back({ue.positive, ue.train_items});
        double cov = coverage_recall(g, users, rule_sequences(selected), mc);
        std::cout << "history coverage of held-out items: " << cov << "\n";
    }
}

// ------------------------------------------------------------------ train --

struct TrainOpts {
    std::string config;
    GraphOpts graph;
    std::string interactions, rules_path, associations, out;
    std::string mode = "base", model = "bprmf", variant = "learn", objective = "sigmoid";
    std::string hidden_act = "relu", out_act = "logistic", layers = "32,16,8";
    int dim = 16;
    double mix_alpha = 0.5, init_scale = 0.01;
    double scale = 0.2, lambda = 0.5;
    bool flip = false;
    double lr = 0.05, l2 = 0.01;
    int epochs = 50, neg_per_pos = 1;
    double neg_ratio = 1.0;
    std::uint64_t seed = 0, split_seed = 0;
    bool strict = false;
};

struct TrainData {
    std::vector<TrainPositive> positives;
    std::vector<std::vector<int>> user_items;
    std::vector<std::vector<int>> histories;
};

// train on everything except each evaluated user's held-out interaction
TrainData carve_train_set(const InteractionLog& log, const EvalSplit& split) {
    TrainData d;
    d.user_items = user_item_sets(log);
    d.histories.assign(log.user_count, {});
    std::vector<char> in_split(log.user_count, 0);
    for (const auto& ue : split.users) {
        d.histories[ue.user] = ue.train_items;
        in_split[ue.user] = 1;
    }
    for (const auto& rec : log.records)
        if (!in_split[rec.user]) d.histories[rec.user].push_back(rec.item);
    for (int u = 0; u < log.user_count; ++u)
        for (int item : d.histories[u]) d.positives.push_back({u, item});
    return d;
}

void run_train(CLI::App* cmd, TrainOpts& o) {
    json cfg = read_config(o.config);
    cfg_default(cmd, cfg, "--mode", "mode", o.mode);
    cfg_default(cmd, cfg, "--model", "model", o.model);
    cfg_default(cmd, cfg, "--variant", "variant", o.variant);
    cfg_default(cmd, cfg, "--objective", "objective", o.objective);
    cfg_default(cmd, cfg, "--dim", "dim", o.dim);
    cfg_default(cmd, cfg, "--layers", "layers", o.layers);
    cfg_default(cmd, cfg, "--hidden-act", "hidden_act", o.hidden_act);
    cfg_default(cmd, cfg, "--out-act", "out_act", o.out_act);
    cfg_default(cmd, cfg, "--mix-alpha", "mix_alpha", o.mix_alpha);
    cfg_default(cmd, cfg, "--init-scale", "init_scale", o.init_scale);
    cfg_default(cmd, cfg, "--scale", "scale", o.scale);
    cfg_default(cmd, cfg, "--lambda", "lambda", o.lambda);
    cfg_default(cmd, cfg, "--flip", "flip", o.flip);
    cfg_default(cmd, cfg, "--lr", "lr", o.lr);
    cfg_default(cmd, cfg, "--l2", "l2", o.l2);
    cfg_default(cmd, cfg, "--epochs", "epochs", o.epochs);
    cfg_default(cmd, cfg, "--neg-per-pos", "neg_per_pos", o.neg_per_pos);
    cfg_default(cmd, cfg, "--neg-ratio", "neg_ratio", o.neg_ratio);
    cfg_default(cmd, cfg, "--seed", "seed", o.seed);
    cfg_default(cmd, cfg, "--split-seed", "split_seed", o.split_seed);

    auto mode = train_mode_from_name(o.mode);
    if (!mode) throw std::runtime_error("unknown training mode '" + o.mode + "'");
    auto kind = model_kind_from_name(o.model);
    if (!kind) throw std::runtime_error("unknown model kind '" + o.model + "'");
    auto obj = objective_from_name(o.objective);
    if (!obj) throw std::runtime_error("unknown objective '" + o.objective + "'");

    HeteroGraph g = load_graph_opts(o.graph);
    InteractionLog log = load_interactions(o.interactions);
    EvalSplit split = leave_one_out_split(log, 0, o.split_seed);
    for (const auto& wmsg : split.warnings) std::cerr << "warning: " << wmsg << "\n";
    TrainData data = carve_train_set(log, split);

    ModelConfig mcfg;
    mcfg.kind = *kind;
    mcfg.dim = o.dim;
    mcfg.layers = parse_int_list(o.layers, "layer");
    auto ha = activation_from_name(o.hidden_act);
    auto oa = activation_from_name(o.out_act);
    if (!ha || !oa) throw std::runtime_error("unknown activation");
    mcfg.hidden_act = *ha;
    mcfg.out_act = *oa;
    mcfg.mix_alpha = o.mix_alpha;
    mcfg.init_scale = o.init_scale;
    auto base = make_model(mcfg, log.user_count, log.item_count, derive_seed(o.seed, "init"));

    RuleRecModel model;
    CheckpointMeta meta;
    LabeledPairSet selection_data;
    const LabeledPairSet* selection_ptr = nullptr;
    std::string rules_meta;
    if (*mode == TrainMode::Base) {
        model = make_base_only(std::move(base));
    } else {
        if (o.rules_path.empty()) throw std::runtime_error("rule-augmented training needs --rules");
        auto variant = variant_from_name(o.variant);
        if (!variant) throw std::runtime_error("unknown combiner variant '" + o.variant + "'");
        if (*mode == TrainMode::MultiTask) *variant = CombinerVariant::MultiTask;
        std::vector<MinedRule> rules = load_rules(o.rules_path, g, &rules_meta);
        CombinerConfig cc;
        cc.variant = *variant;
        cc.fixed_scale = o.scale;
        cc.lambda = o.lambda;
        cc.objective = *obj;
        cc.flip_features = o.flip;
        cc.walk = walk_from_meta(rules_meta);
        model = make_rulerec(std::move(base), g, std::move(rules), cc);
        meta.rules_digest = digest_file(o.rules_path);

        if (*mode == TrainMode::MultiTask && o.lambda != 0.0) {
            if (o.associations.empty())
                throw std::runtime_error("multi-task training needs --associations");
            std::vector<AssociationPair> pairs = load_associations(o.associations);
            validate_associations(g, pairs);
            std::vector<LabeledPair> lp;
            for (const auto& p : pairs) lp.push_back({p.a, p.b, p.assoc, p.label});
            bool has_neg = false;
            for (const auto& p : lp) has_neg = has_neg || p.label == 0;
            if (!has_neg) {
                std::vector<std::pair<int, int>> positives;
                for (const auto& p : lp) positives.emplace_back(p.a, p.b);
                auto sampled = sample_negative_pairs(g, positives, o.neg_ratio,
                                                     derive_seed(o.seed, "train-negatives"));
                for (const auto& [a, b] : sampled) lp.push_back({a, b, AssocType::ALV, 0});
            }
            selection_data = build_labeled_set(g, lp, rule_sequences(model.rules), cc.walk);
            selection_ptr = &selection_data;
        }
    }

    TrainConfig tc;
    tc.lr = o.lr;
    tc.l2 = o.l2;
    tc.epochs = o.epochs;
    tc.neg_per_pos = o.neg_per_pos;
    tc.seed = o.seed;

    int print_every = std::max(1, o.epochs / 10);
    auto observer = [&](int epoch, const std::vector<double>&, const std::vector<double>&, double,
                        double mean_loss) {
        if (epoch % print_every == 0 || epoch + 1 == o.epochs)
            std::cout << "epoch " << epoch << " loss " << mean_loss << "\n";
    };
    train_rulerec(model, *mode, data.positives, data.user_items, data.histories, tc, selection_ptr,
                  observer);

    if (model.rule_using && !model.w.empty()) {
        std::vector<std::pair<double, int>> byw;
        for (std::size_t r = 0; r < model.w.size(); ++r)
            byw.emplace_back(std::abs(model.w[r]), static_cast<int>(r));
        std::sort(byw.begin(), byw.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::cout << "largest rule weights:\n";
        for (std::size_t k = 0; k < byw.size() && k < 5; ++k)
            std::cout << "  " << rule_names(g, model.rules[byw[k].second].relations) << " "
                      << model.w[byw[k].second] << "\n";
    }

    json resolved = {{"mode", o.mode},          {"model", o.model},
                     {"variant", o.variant},    {"objective", o.objective},
                     {"dim", o.dim},            {"layers", o.layers},
                     {"hidden_act", o.hidden_act}, {"out_act", o.out_act},
                     {"mix_alpha", o.mix_alpha}, {"init_scale", o.init_scale},
                     {"scale", o.scale},        {"lambda", o.lambda},
                     {"flip", o.flip},          {"lr", o.lr},
                     {"l2", o.l2},              {"epochs", o.epochs},
                     {"neg_per_pos", o.neg_per_pos}, {"seed", o.seed},
                     {"split_seed", o.split_seed}};
    meta.config_digest = digest_hex(resolved.dump());
    json inputs = {{"nodes", digest_file(o.graph.nodes)},
                   {"edges", digest_file(o.graph.edges)},
                   {"interactions", digest_file(o.interactions)}};
    if (!o.associations.empty()) inputs["associations"] = digest_file(o.associations);
    meta.inputs_json = inputs.dump();
    meta.train_seed = o.seed;
    meta.split_seed = o.split_seed;
    save_checkpoint(o.out, model, *mode, meta);
    std::cout << "wrote " << o.out << "\n";
}

// --------------------------------------------------------------- evaluate --

struct EvalOpts {
    std::string config;
    GraphOpts graph;
    std::string interactions, checkpoint, out;
    std::string seeds = "0";
    int jobs = 1;
    bool strict = false;
};

void check_input_digests(const CheckpointMeta& meta, const json& current, bool strict) {
    json stored = json::parse(meta.inputs_json, nullptr, false);
    if (stored.is_discarded() || !stored.is_object()) return;
    for (const auto& [key, digest] : current.items())
        if (stored.contains(key) && stored.at(key) != digest)
            integrity(strict, std::string(key) +
                                  " file differs from the one the checkpoint was trained on");
}

void run_evaluate(CLI::App* cmd, EvalOpts& o) {
    json cfg = read_config(o.config);
    cfg_default(cmd, cfg, "--seeds", "seeds", o.seeds);
    cfg_default(cmd, cfg, "--jobs", "jobs", o.jobs);
    std::vector<std::uint64_t> seeds = parse_seed_list(o.seeds);

    bool needs_graph = true;
    {
        std::ifstream probe(o.checkpoint, std::ios::binary);
        if (!probe) throw std::runtime_error("cannot open checkpoint: " + o.checkpoint);
        json j;
        probe >> j;
        needs_graph = j.contains("combiner") && !j.at("combiner").is_null();
    }
    HeteroGraph g;
    if (needs_graph || !o.graph.nodes.empty()) {
        if (o.graph.nodes.empty())
            throw std::runtime_error("rule-using checkpoint needs --nodes/--edges");
        g = load_graph_opts(o.graph);
    }
    LoadedCheckpoint ck = load_checkpoint(o.checkpoint, needs_graph ? &g : nullptr);
    InteractionLog log = load_interactions(o.interactions);
    if (log.user_count > ck.model.base->n_users() || log.item_count > ck.model.base->n_items())
        throw std::runtime_error("interaction log exceeds the checkpoint's user/item space");

    json current = {{"interactions", digest_file(o.interactions)}};
    if (!o.graph.nodes.empty()) {
        current["nodes"] = digest_file(o.graph.nodes);
        current["edges"] = digest_file(o.graph.edges);
    }
    check_input_digests(ck.meta, current, o.strict);

    const RuleRecModel& model = ck.model;
    ScoreFn scorer = [&](int u, int i, std::span<const int> hist) {
        return model.score(u, i, hist);
    };

    json per_seed = json::array();
    MetricSet overall;
    for (std::uint64_t seed : seeds) {
        EvalSplit split = leave_one_out_split(log, model.base->n_items(), seed);
        if (!split.warnings.empty())
            std::cerr << "seed " << seed << ": " << split.warnings.size() << " split warnings ("
                      << split.warnings.front() << " ...)\n";
        if (model.rule_using && o.jobs > 1) {
            for (const auto& ue : split.users) {
                std::vector<int> cands = ue.negatives;
                cands.push_back(ue.positive);
                model.features->warm(ue.user, ue.train_items, cands);
            }
        }
        EvalResult res = evaluate(scorer, split, o.jobs);
        overall += res.mean;
        std::cout << "seed " << seed << ": users " << split.users.size() << " recall@5 "
                  << res.mean.recall5 << " recall@10 " << res.mean.recall10 << " ndcg@10 "
                  << res.mean.ndcg10 << " mrr@10 " << res.mean.mrr10 << "\n";
        json users = json::array();
        for (const auto& m : res.per_user)
            users.push_back({m.recall5, m.recall10, m.ndcg10, m.mrr10});
        per_seed.push_back({{"seed", seed},
                            {"users", split.users.size()},
                            {"mean",
                             {{"recall5", res.mean.recall5},
                              {"recall10", res.mean.recall10},
                              {"ndcg10", res.mean.ndcg10},
                              {"mrr10", res.mean.mrr10}}},
                            {"per_user", users}});
    }
    overall = overall / static_cast<double>(seeds.size());
    std::cout << "mean over seeds: recall@5 " << overall.recall5 << " recall@10 "
              << overall.recall10 << " ndcg@10 " << overall.ndcg10 << " mrr@10 " << overall.mrr10
              << "\n";

    if (!o.out.empty()) {
        json j;
        j["kind"] = "krec-eval-report";
        j["tool_version"] = kToolVersion;
        j["checkpoint"] = base_name(o.checkpoint);
        j["checkpoint_digest"] = digest_file(o.checkpoint);
        j["model"] = model_kind_name(model.base->config().kind);
        j["mode"] = train_mode_name(ck.mode);
        j["variant"] = model.rule_using ? variant_name(model.combiner.variant) : "none";
        j["inputs"] = current;
        j["jobs"] = o.jobs;
        j["seeds"] = seeds;
        j["per_seed"] = per_seed;
        j["mean"] = {{"recall5", overall.recall5},
                     {"recall10", overall.recall10},
                     {"ndcg10", overall.ndcg10},
                     {"mrr10", overall.mrr10}};
        std::ofstream out(o.out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write file: " + o.out);
        out << j.dump(2) << "\n";
        std::cout << "wrote " << o.out << "\n";
    }
}

// ---------------------------------------------------------------- explain --

struct ExplainOpts {
    GraphOpts graph;
    std::string interactions, checkpoint, out;
    int user = -1;
    int top_k = 10;
    int top_rules = 3;
    bool strict = false;
};

void run_explain(const ExplainOpts& o) {
    HeteroGraph g = load_graph_opts(o.graph);
    LoadedCheckpoint ck = load_checkpoint(o.checkpoint, &g);
    if (!ck.model.rule_using)
        throw std::runtime_error("checkpoint has no rules; explanations need a rule-using model");
    InteractionLog log = load_interactions(o.interactions);
    if (o.user < 0 || o.user >= ck.model.base->n_users())
        throw std::runtime_error("user id out of range");

    std::vector<int> history;
    for (const auto& rec : log.records)
        if (rec.user == o.user) history.push_back(rec.item);
    if (history.empty()) throw std::runtime_error("user has no interactions");

    std::vector<char> owned(ck.model.base->n_items(), 0);
    for (int item : history) owned[item] = 1;
    std::vector<int> candidates;
    for (int i = 0; i < ck.model.base->n_items(); ++i)
        if (!owned[i] && i < g.node_count() && g.is_item(i)) candidates.push_back(i);

    auto ranked = recommend_topk(ck.model, o.user, candidates, history, o.top_k);

    std::ofstream jsonl;
    if (!o.out.empty()) {
        jsonl.open(o.out, std::ios::binary);
        if (!jsonl) throw std::runtime_error("cannot write file: " + o.out);
    }
    for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
        auto [item, score] = ranked[rank];
        double base = ck.model.base_score(o.user, item);
        auto expl = explain(ck.model, o.user, item, history, o.top_rules);
        std::cout << "#" << rank + 1 << " " << g.node(item).label << " score " << score
                  << " (base " << base << ")\n";
        json rules_json = json::array();
        for (const auto& e : expl) {
            const MinedRule& rule = ck.model.rules[e.rule_index];
            std::cout << "    " << rule_names(g, rule.relations) << " feature " << e.feature
                      << " contribution " << e.contribution;
            if (e.witness_item >= 0) {
                std::cout << " via " << g.node(e.witness_item).label;
                if (!e.witness_path.empty()) {
                    std::cout << ":";
                    for (const auto& lbl : e.witness_path) std::cout << " -> " << lbl;
                }
            }
            std::cout << "\n";
            std::vector<std::string> names;
            for (int rel : rule.relations) names.push_back(g.relation(rel).name);
            rules_json.push_back(
                {{"relations", names},
                 {"feature", e.feature},
                 {"contribution", e.contribution},
                 {"witness_item",
                  e.witness_item < 0 ? json(nullptr) : json(g.node(e.witness_item).label)},
                 {"path", e.witness_path}});
        }
        if (jsonl.is_open()) {
            json row = {{"user", o.user},           {"rank", rank + 1},
                        {"item", item},             {"label", g.node(item).label},
                        {"score", score},           {"base", base},
                        {"rules", rules_json}};
            jsonl << row.dump() << "\n";
        }
    }
    if (jsonl.is_open()) std::cout << "wrote " << o.out << "\n";
}

// ----------------------------------------------------------------- report --

struct ReportOpts {
    std::vector<std::string> inputs;
    std::string out;
};

void run_report(const ReportOpts& o) {
    if (o.inputs.size() < 2) throw std::runtime_error("report needs at least two eval reports");
    struct Loaded {
        std::string path;
        json j;
        std::vector<std::uint64_t> seeds;
        std::map<std::string, std::vector<double>> per_seed;  // metric -> per-seed means
    };
    const std::vector<std::string> metrics = {"recall5", "recall10", "ndcg10", "mrr10"};
    std::vector<Loaded> reports;
    for (const auto& path : o.inputs) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open report: " + path);
        Loaded r;
        r.path = path;
        in >> r.j;
        if (r.j.value("kind", "") != "krec-eval-report")
            throw std::runtime_error(path + " is not an eval report");
        for (const auto& s : r.j.at("seeds")) r.seeds.push_back(s.get<std::uint64_t>());
        for (const auto& ps : r.j.at("per_seed"))
            for (const auto& m : metrics)
                r.per_seed[m].push_back(ps.at("mean").at(m).get<double>());
        reports.push_back(std::move(r));
    }
    for (const auto& r : reports)
        if (r.seeds != reports.front().seeds)
            throw std::runtime_error(r.path + " was evaluated on different seeds than " +
                                     reports.front().path);

    const Loaded& baseline = reports.front();
    json out_models = json::array();
    std::cout << "baseline: " << baseline.path << "\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const Loaded& r = reports[i];
        json vs = json::object();
        std::cout << r.path << "\n";
        for (const auto& m : metrics) {
            double mean = 0.0;
            for (double v : r.per_seed.at(m)) mean += v;
            mean /= static_cast<double>(r.per_seed.at(m).size());
            std::cout << "  " << m << " " << mean;
            if (i > 0 && r.seeds.size() >= 2) {
                auto t = paired_t_test(r.per_seed.at(m), baseline.per_seed.at(m));
                double bmean = 0.0;
                for (double v : baseline.per_seed.at(m)) bmean += v;
                bmean /= static_cast<double>(baseline.per_seed.at(m).size());
                double rel = bmean != 0.0 ? (mean - bmean) / bmean : 0.0;
                std::cout << " (" << (rel >= 0 ? "+" : "") << rel * 100.0 << "% vs baseline, p "
                          << t.p << (t.degenerate ? ", zero-variance" : "") << ")";
                vs[m] = {{"relative_diff", rel},
                         {"t", t.t},
                         {"p", t.p},
                         {"dof", t.dof},
                         {"degenerate", t.degenerate}};
            }
            std::cout << "\n";
        }
        json entry = {{"report", base_name(r.path)},
                      {"checkpoint", r.j.value("checkpoint", "")},
                      {"variant", r.j.value("variant", "")},
                      {"mean", r.j.value("mean", json::object())}};
        if (i > 0) entry["vs_baseline"] = vs;
        out_models.push_back(entry);
    }

    if (!o.out.empty()) {
        json j;
        j["kind"] = "krec-compare-report";
        j["tool_version"] = kToolVersion;
        j["baseline"] = base_name(baseline.path);
        j["seeds"] = baseline.seeds;
        j["models"] = out_models;
        std::ofstream out(o.out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write file: " + o.out);
        out << j.dump(2) << "\n";
        std::cout << "wrote " << o.out << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rule-mining recommender toolkit"};
    app.require_subcommand(1);

    auto synth_opts = std::make_shared<SynthOpts>();
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic catalog world");
    synth->add_option("--config", synth_opts->config, "JSON config file");
    synth->add_option("--out", synth_opts->out, "output directory")->required();
    synth->add_option("--items", synth_opts->cfg.items, "item count");
    synth->add_option("--entities", synth_opts->cfg.entities, "entity count");
    synth->add_option("--users", synth_opts->cfg.users, "user count");
    synth->add_option("--relations", synth_opts->cfg.relations, "relation vocabulary size");
    synth->add_option("--noise", synth_opts->cfg.assoc_noise, "rule-disconnected share of label-1 pairs");
    synth->add_option("--p-rule", synth_opts->cfg.p_rule, "rule-driven share of interactions");
    synth->add_option("--pairs", synth_opts->cfg.pairs_per_assoc, "label-1 pairs per association");
    synth->add_option("--neg-ratio", synth_opts->cfg.negative_ratio, "label-0 pairs per label-1 pair");
    synth->add_option("--history-min", synth_opts->cfg.history_min, "shortest history");
    synth->add_option("--history-max", synth_opts->cfg.history_max, "longest history");
    synth->add_option("--distractors", synth_opts->cfg.distractors, "distractor mechanisms (0-2)");
    synth->add_option("--seed", synth_opts->cfg.seed, "generator seed");
    synth->callback([synth, synth_opts] { run_synth(synth, *synth_opts); });

    auto bg_opts = std::make_shared<BuildGraphOpts>();
    CLI::App* bg = app.add_subcommand("build-graph", "load, validate, and optionally rewrite a graph");
    add_graph_opts(bg, bg_opts->graph);
    bg->add_option("--out-nodes", bg_opts->out_nodes, "write the filtered node table here");
    bg->add_option("--out-edges", bg_opts->out_edges, "write the filtered edge table here");
    bg->callback([bg_opts] { run_build_graph(*bg_opts); });

    auto mine_opts = std::make_shared<MineOpts>();
    CLI::App* mine = app.add_subcommand("mine-rules", "enumerate supported relation rules");
    mine->add_option("--config", mine_opts->config, "JSON config file");
    add_graph_opts(mine, mine_opts->graph);
    mine->add_option("--associations", mine_opts->associations, "labeled item pairs (TSV)")->required();
    mine->add_option("--out", mine_opts->out, "rules output (JSON lines)")->required();
    mine->add_option("--features-out", mine_opts->features_out, "pair feature cache output (TSV)");
    mine->add_option("--alpha", mine_opts->alpha, "support threshold fraction");
    mine->add_option("--beta", mine_opts->beta, "maximum rule length");
    mine->add_option("--absorb", mine_opts->absorb, "self-absorption: final, always, off");
    mine->add_option("--degree-cap", mine_opts->degree_cap, "expansion cap per step (0 = none)");
    mine->add_option("--seed", mine_opts->seed, "seed recorded in the artifact");
    mine->add_flag("--strict", mine_opts->strict, "fail on integrity warnings");
    mine->callback([mine, mine_opts] { run_mine(mine, *mine_opts); });

    auto select_opts = std::make_shared<SelectOpts>();
    CLI::App* select = app.add_subcommand("select-rules", "score, filter, and weight mined rules");
    select->add_option("--config", select_opts->config, "JSON config file");
    add_graph_opts(select, select_opts->graph);
    select->add_option("--associations", select_opts->associations, "labeled item pairs (TSV)")->required();
    select->add_option("--rules", select_opts->rules_in, "mined rules input")->required();
    select->add_option("--out", select_opts->out, "selected rules output")->required();
    select->add_option("--features", select_opts->features_in, "pair feature cache from mine-rules");
    select->add_option("--interactions", select_opts->interactions, "interaction log for coverage stats");
    select->add_option("--objective", select_opts->objective, "weight objective: chi2, linreg, sigmoid");
    select->add_option("--top-n", select_opts->top_n, "rules kept per association");
    select->add_option("--lr", select_opts->lr, "weight-training learning rate");
    select->add_option("--epochs", select_opts->epochs, "weight-training epochs");
    select->add_option("--neg-ratio", select_opts->neg_ratio, "sampled negatives per positive");
    select->add_option("--seed", select_opts->seed, "sampling and init seed");
    select->add_flag("--strict", select_opts->strict, "fail on integrity warnings");
    select->callback([select, select_opts] { run_select(select, *select_opts); });

    auto train_opts = std::make_shared<TrainOpts>();
    CLI::App* train = app.add_subcommand("train", "train a recommender, optionally rule-augmented");
    train->add_option("--config", train_opts->config, "JSON config file");
    add_graph_opts(train, train_opts->graph);
    train->add_option("--interactions", train_opts->interactions, "interaction log (TSV)")->required();
    train->add_option("--rules", train_opts->rules_path, "selected rules input");
    train->add_option("--associations", train_opts->associations, "labeled pairs for the shared objective");
    train->add_option("--out", train_opts->out, "checkpoint output (JSON)")->required();
    train->add_option("--mode", train_opts->mode, "base, two_step, or multi_task");
    train->add_option("--model", train_opts->model, "bprmf, gmf, mlp, or ncf");
    train->add_option("--variant", train_opts->variant, "hard, equal, selection, learn, or multi");
    train->add_option("--objective", train_opts->objective, "shared objective: chi2, linreg, sigmoid");
    train->add_option("--dim", train_opts->dim, "embedding width");
    train->add_option("--layers", train_opts->layers, "tower layer sizes (csv)");
    train->add_option("--hidden-act", train_opts->hidden_act, "tower activation");
    train->add_option("--out-act", train_opts->out_act, "output activation");
    train->add_option("--mix-alpha", train_opts->mix_alpha, "fused-model blend");
    train->add_option("--init-scale", train_opts->init_scale, "init range for parameters");
    train->add_option("--scale", train_opts->scale, "rule-term scale for fixed-weight variants");
    train->add_option("--lambda", train_opts->lambda, "shared-objective weight");
    train->add_flag("--flip", train_opts->flip, "score history -> candidate instead");
    train->add_option("--lr", train_opts->lr, "learning rate");
    train->add_option("--l2", train_opts->l2, "L2 strength on touched parameters");
    train->add_option("--epochs", train_opts->epochs, "training epochs");
    train->add_option("--neg-per-pos", train_opts->neg_per_pos, "sampled negatives per positive");
    train->add_option("--neg-ratio", train_opts->neg_ratio, "sampled label-0 pairs when none are given");
    train->add_option("--seed", train_opts->seed, "training seed");
    train->add_option("--split-seed", train_opts->split_seed, "hold-out split seed");
    train->add_flag("--strict", train_opts->strict, "fail on integrity warnings");
    train->callback([train, train_opts] { run_train(train, *train_opts); });

    auto eval_opts = std::make_shared<EvalOpts>();
    CLI::App* evalc = app.add_subcommand("evaluate", "rank held-out items under a checkpoint");
    evalc->add_option("--config", eval_opts->config, "JSON config file");
    add_graph_opts(evalc, eval_opts->graph, false);
    evalc->add_option("--interactions", eval_opts->interactions, "interaction log (TSV)")->required();
    evalc->add_option("--checkpoint", eval_opts->checkpoint, "trained checkpoint")->required();
    evalc->add_option("--out", eval_opts->out, "metric report output (JSON)");
    evalc->add_option("--seeds", eval_opts->seeds, "candidate-sampling seeds (csv)");
    evalc->add_option("--jobs", eval_opts->jobs, "worker threads for scoring");
    evalc->add_flag("--strict", eval_opts->strict, "fail on integrity warnings");
    evalc->callback([evalc, eval_opts] { run_evaluate(evalc, *eval_opts); });

    auto explain_opts = std::make_shared<ExplainOpts>();
    CLI::App* expl = app.add_subcommand("explain", "show rule contributions behind recommendations");
    add_graph_opts(expl, explain_opts->graph);
    expl->add_option("--interactions", explain_opts->interactions, "interaction log (TSV)")->required();
    expl->add_option("--checkpoint", explain_opts->checkpoint, "trained checkpoint")->required();
    expl->add_option("--user", explain_opts->user, "user id")->required();
    expl->add_option("--top-k", explain_opts->top_k, "recommendations to show");
    expl->add_option("--top-rules", explain_opts->top_rules, "rules per recommendation");
    expl->add_option("--out", explain_opts->out, "explanations output (JSON lines)");
    expl->callback([explain_opts] { run_explain(*explain_opts); });

    auto report_opts = std::make_shared<ReportOpts>();
    CLI::App* report = app.add_subcommand("report", "compare eval reports with paired t-tests");
    report->add_option("--inputs", report_opts->inputs, "eval reports; first is the baseline")
        ->required()
        ->expected(-2);
    report->add_option("--out", report_opts->out, "comparison output (JSON)");
    report->callback([report_opts] { run_report(*report_opts); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
