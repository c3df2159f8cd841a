#include "krec/combine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "krec/digest.hpp"
#include "krec/rng.hpp"
#include "krec/version.hpp"

namespace krec {

namespace {

using nlohmann::json;

std::uint64_t pack_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

double vec_sum(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double vec_dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<int> dedup_history(std::span<const int> history) {
    std::vector<int> h(history.begin(), history.end());
    std::sort(h.begin(), h.end());
    h.erase(std::unique(h.begin(), h.end()), h.end());
    return h;
}

}  // namespace

const char* variant_name(CombinerVariant v) {
    switch (v) {
        case CombinerVariant::HardFilter: return "hard";
        case CombinerVariant::EqualWeight: return "equal";
        case CombinerVariant::SelectionWeight: return "selection";
        case CombinerVariant::LearnTogether: return "learn";
        case CombinerVariant::MultiTask: return "multi";
    }
    return "?";
}

std::optional<CombinerVariant> variant_from_name(const std::string& s) {
    if (s == "hard") return CombinerVariant::HardFilter;
    if (s == "equal") return CombinerVariant::EqualWeight;
    if (s == "selection") return CombinerVariant::SelectionWeight;
    if (s == "learn") return CombinerVariant::LearnTogether;
    if (s == "multi") return CombinerVariant::MultiTask;
    return std::nullopt;
}

const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::Base: return "base";
        case TrainMode::TwoStep: return "two_step";
        case TrainMode::MultiTask: return "multi_task";
    }
    return "?";
}

std::optional<TrainMode> train_mode_from_name(const std::string& s) {
    if (s == "base") return TrainMode::Base;
    if (s == "two_step") return TrainMode::TwoStep;
    if (s == "multi_task") return TrainMode::MultiTask;
    return std::nullopt;
}

RuleFeatureProvider::RuleFeatureProvider(const HeteroGraph& g, std::vector<Rule> rules,
                                         MinerConfig cfg, bool flip)
    : g_(g), rules_(std::move(rules)), cfg_(cfg), flip_(flip) {
    if (rules_.empty()) throw std::invalid_argument("feature provider needs at least one rule");
    slot_of_.assign(g.node_count(), -1);
    for (int id = 0; id < g.node_count(); ++id) {
        if (g.is_item(id)) {
            slot_of_[id] = static_cast<int>(item_ids_.size());
            item_ids_.push_back(id);
        }
    }
}

const std::vector<double>& RuleFeatureProvider::row(int source, std::size_t rule_idx) const {
    std::uint64_t key = pack_key(source, static_cast<int>(rule_idx));
    auto it = rows_.find(key);
    if (it != rows_.end()) return it->second;
    std::vector<double> full = feature_f_row(g_, source, rules_[rule_idx], cfg_);
    std::vector<double> compact(item_ids_.size(), 0.0);
    for (std::size_t s = 0; s < item_ids_.size(); ++s) compact[s] = full[item_ids_[s]];
    return rows_.emplace(key, std::move(compact)).first->second;
}

std::vector<double> RuleFeatureProvider::pair_vector(int item, int k) const {
    if (item < 0 || item >= g_.node_count() || slot_of_[item] < 0 || k < 0 ||
        k >= g_.node_count() || slot_of_[k] < 0)
        throw std::invalid_argument("rule features are defined between item nodes");
    std::vector<double> out(rules_.size(), 0.0);
    for (std::size_t r = 0; r < rules_.size(); ++r)
        out[r] = flip_ ? row(k, r)[slot_of_[item]] : row(item, r)[slot_of_[k]];
    return out;
}

const std::vector<double>& RuleFeatureProvider::user_vector(int user, int item,
                                                            std::span<const int> history) const {
    std::uint64_t key = pack_key(user, item);
    auto it = users_.find(key);
    if (it != users_.end()) return it->second;
    std::vector<int> hist = dedup_history(history);
    std::vector<double> acc(rules_.size(), 0.0);
    for (std::size_t r = 0; r < rules_.size(); ++r) {
        if (!flip_) {
            const auto& rw = row(item, r);
            for (int k : hist) acc[r] += rw[slot_of_[k]];
        } else {
            for (int k : hist) acc[r] += row(k, r)[slot_of_[item]];
        }
    }
    return users_.emplace(key, std::move(acc)).first->second;
}

void RuleFeatureProvider::warm(int user, std::span<const int> history,
                               std::span<const int> candidates) const {
    for (int c : candidates) user_vector(user, c, history);
}

double RuleRecModel::score(int u, int i, std::span<const int> history) const {
    double s = base->score(u, i);
    if (!rule_using) return s;
    const auto& f = features->user_vector(u, i, history);
    if (combiner.variant == CombinerVariant::HardFilter)
        return vec_sum(f) >= 1.0 ? s : 0.0;
    return s + effective_scale() * vec_dot(w, f);
}

std::vector<double> RuleRecModel::contributions(int u, int i, std::span<const int> history) const {
    if (!rule_using) return {};
    const auto& f = features->user_vector(u, i, history);
    std::vector<double> out(f.size(), 0.0);
    double scale = effective_scale();
    for (std::size_t r = 0; r < f.size(); ++r)
        out[r] = combiner.variant == CombinerVariant::HardFilter ? f[r] : scale * w[r] * f[r];
    return out;
}

RuleRecModel make_base_only(std::unique_ptr<BaseRecommender> base) {
    RuleRecModel m;
    m.base = std::move(base);
    m.rule_using = false;
    return m;
}

RuleRecModel make_rulerec(std::unique_ptr<BaseRecommender> base, const HeteroGraph& g,
                          std::vector<MinedRule> rules, const CombinerConfig& cfg,
                          const std::vector<double>* frozen_w) {
    if (rules.empty()) throw std::invalid_argument("rule-using combiner needs a non-empty rule list");
    if (cfg.lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    if (!std::isfinite(cfg.fixed_scale)) throw std::invalid_argument("combiner scale must be finite");
    if (frozen_w && frozen_w->size() != rules.size())
        throw std::invalid_argument("frozen weight count does not match the rule count");

    RuleRecModel m;
    m.base = std::move(base);
    m.rule_using = true;
    m.combiner = cfg;
    m.rules = std::move(rules);
    m.features = std::make_shared<RuleFeatureProvider>(g, rule_sequences(m.rules), cfg.walk,
                                                       cfg.flip_features);
    switch (cfg.variant) {
        case CombinerVariant::HardFilter:
            break;  // no weights
        case CombinerVariant::EqualWeight:
            m.w.assign(m.rules.size(), 1.0 / static_cast<double>(m.rules.size()));
            break;
        case CombinerVariant::SelectionWeight: {
            if (frozen_w) {
                m.w = *frozen_w;
            } else {
                m.w.reserve(m.rules.size());
                for (const auto& r : m.rules) {
                    if (!r.weight)
                        throw std::invalid_argument(
                            "selection-weight combiner needs trained rule weights");
                    m.w.push_back(*r.weight);
                }
            }
            break;
        }
        case CombinerVariant::LearnTogether:
        case CombinerVariant::MultiTask:
            if (frozen_w)
                m.w = *frozen_w;
            else
                m.w.assign(m.rules.size(), 0.0);
            break;
    }
    return m;
}

TrainResult train_rulerec(RuleRecModel& m, TrainMode mode,
                          const std::vector<TrainPositive>& positives,
                          const std::vector<std::vector<int>>& user_items,
                          const std::vector<std::vector<int>>& histories, const TrainConfig& cfg,
                          const LabeledPairSet* selection_data, const RuleEpochObserver& observer) {
    if (mode == TrainMode::Base) {
        if (m.rule_using)
            throw std::invalid_argument("base training mode applies to a base-only model");
        EpochObserver wrap;
        if (observer) {
            wrap = [&](int epoch, double mean_loss) {
                observer(epoch, m.base->get_params(), m.w, m.sel_bias, mean_loss);
            };
        }
        return train_base(*m.base, positives, user_items, cfg, wrap);
    }

    if (!m.rule_using)
        throw std::invalid_argument("rule-augmented training modes need a rule-using model");
    if (mode == TrainMode::MultiTask && m.combiner.variant != CombinerVariant::MultiTask)
        throw std::invalid_argument("multi-task training needs the multi-task combiner");
    if (mode == TrainMode::TwoStep && m.combiner.variant == CombinerVariant::MultiTask)
        throw std::invalid_argument("the multi-task combiner trains with the multi-task mode");
    const double lambda = m.combiner.lambda;
    if (mode == TrainMode::MultiTask && lambda != 0.0) {
        if (!selection_data)
            throw std::invalid_argument("multi-task training needs labeled selection pairs");
        for (const auto& xr : selection_data->x)
            if (xr.size() != m.rules.size())
                throw std::invalid_argument("selection features do not match the rule count");
    }
    if (positives.empty()) throw std::invalid_argument("no training interactions");
    if (histories.size() != user_items.size())
        throw std::invalid_argument("history count does not match the user count");
    for (const auto& pos : positives) {
        if (pos.user < 0 || pos.user >= static_cast<int>(user_items.size()))
            throw std::invalid_argument("training user outside the interaction log");
        if (static_cast<int>(user_items[pos.user].size()) >= m.base->n_items())
            throw std::runtime_error("user " + std::to_string(pos.user) +
                                     " interacted with every item; no negatives to sample");
    }

    const bool trains_w = variant_trains_weights(m.combiner.variant);
    const bool hard = m.combiner.variant == CombinerVariant::HardFilter;
    const double scale = m.effective_scale();

    Rng rng(derive_seed(cfg.seed, "train"));
    std::vector<std::size_t> order(positives.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    GradAccum grad;
    grad.resize(m.base->n_params());
    std::vector<double> wgrad(m.w.size(), 0.0);
    TrainResult res;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle) rng.shuffle(order);
        double loss_sum = 0.0;
        long long count = 0;
        for (std::size_t idx : order) {
            int u = positives[idx].user;
            int p = positives[idx].item;
            const auto& owned = user_items[u];
            const auto& hist = histories[u];
            for (int t = 0; t < cfg.neg_per_pos; ++t) {
                int n;
                do {
                    n = static_cast<int>(rng.next_below(m.base->n_items()));
                } while (std::binary_search(owned.begin(), owned.end(), n));

                double sp = m.base->score(u, p);
                double sn = m.base->score(u, n);
                const auto& fp = m.features->user_vector(u, p, hist);
                const auto& fn = m.features->user_vector(u, n, hist);
                double delta, cp, cn;
                if (hard) {
                    double gate_p = vec_sum(fp) >= 1.0 ? 1.0 : 0.0;
                    double gate_n = vec_sum(fn) >= 1.0 ? 1.0 : 0.0;
                    delta = sp * gate_p - sn * gate_n;
                    double g = bpr_pair_loss_grad(delta);
                    cp = g * gate_p;
                    cn = -g * gate_n;
                } else {
                    delta = (sp + scale * vec_dot(m.w, fp)) - (sn + scale * vec_dot(m.w, fn));
                    double g = bpr_pair_loss_grad(delta);
                    cp = g;
                    cn = -g;
                    if (trains_w)
                        for (std::size_t r = 0; r < m.w.size(); ++r)
                            wgrad[r] = g * scale * (fp[r] - fn[r]);
                }
                loss_sum += bpr_pair_loss(delta) + cfg.l2 * m.base->touched_l2(u, p, n);
                ++count;
                m.base->accumulate_pair_grad(u, p, n, cp, cn, cfg.l2, grad);
                m.base->apply_step(grad, cfg.lr);
                if (!hard && trains_w)
                    for (std::size_t r = 0; r < m.w.size(); ++r) m.w[r] -= cfg.lr * wgrad[r];
            }
        }
        double mean = loss_sum / static_cast<double>(count);
        // one full-batch step on the shared weights per epoch; skipped entirely
        // at lambda 0 so that run matches plain joint training bit for bit
        if (mode == TrainMode::MultiTask && lambda != 0.0) {
            double ol = selection_loss(*selection_data, m.combiner.objective, m.w, m.sel_bias);
            std::vector<double> dw(m.w.size(), 0.0);
            double db = 0.0;
            selection_grad(*selection_data, m.combiner.objective, m.w, m.sel_bias, dw, db);
            for (std::size_t r = 0; r < m.w.size(); ++r) m.w[r] -= cfg.lr * lambda * dw[r];
            m.sel_bias -= cfg.lr * lambda * db;
            mean += lambda * ol;
        }
        res.epoch_loss.push_back(mean);
        if (observer) observer(epoch, m.base->get_params(), m.w, m.sel_bias, mean);
    }
    return res;
}

std::vector<std::pair<int, double>> recommend_topk(const RuleRecModel& m, int user,
                                                   std::span<const int> candidates,
                                                   std::span<const int> history, int k) {
    std::vector<std::pair<int, double>> scored;
    scored.reserve(candidates.size());
    for (int c : candidates) scored.emplace_back(c, m.score(user, c, history));
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (k >= 0 && static_cast<std::size_t>(k) < scored.size()) scored.resize(k);
    return scored;
}

std::optional<std::vector<int>> find_witness_path(const HeteroGraph& g, int src, int dst,
                                                  const Rule& rule, const MinerConfig& cfg) {
    if (rule.empty()) return std::nullopt;
    const bool absorb_final = cfg.self_absorb != SelfAbsorb::Off;
    const bool absorb_mid = cfg.self_absorb == SelfAbsorb::Always;
    std::vector<int> path{src};
    std::function<bool(int, std::size_t)> go = [&](int v, std::size_t s) -> bool {
        if (s == rule.size()) return v == dst;
        bool last = s + 1 == rule.size();
        // an absorbed step replaces any self-edge, so stopping here is the
        // only realization when the walk already sits on the target
        if (last && absorb_final && v == dst) return true;
        bool absorb_here = last ? absorb_final : absorb_mid;
        for (int u2 : g.neighbors(v, rule[s])) {
            if (absorb_here && u2 == v) continue;
            path.push_back(u2);
            if (go(u2, s + 1)) return true;
            path.pop_back();
        }
        if (!last && absorb_mid && go(v, s + 1)) return true;
        return false;
    };
    if (go(src, 0)) return path;
    return std::nullopt;
}

std::vector<Explanation> explain(const RuleRecModel& m, int /*user*/, int item,
                                 std::span<const int> history, int top_r) {
    if (!m.rule_using) return {};
    std::vector<int> hist = dedup_history(history);
    const auto& seqs = m.features->rules();
    const HeteroGraph& g = m.features->graph();

    std::vector<std::vector<double>> pf;
    pf.reserve(hist.size());
    for (int k : hist) pf.push_back(m.features->pair_vector(item, k));

    const double scale = m.effective_scale();
    const bool hard = m.combiner.variant == CombinerVariant::HardFilter;
    std::vector<Explanation> out;
    for (std::size_t r = 0; r < seqs.size(); ++r) {
        double f = 0.0;
        for (const auto& rowk : pf) f += rowk[r];
        if (f == 0.0) continue;
        Explanation e;
        e.rule_index = static_cast<int>(r);
        e.feature = f;
        e.contribution = hard ? f : scale * m.w[r] * f;
        double best = 0.0;
        for (std::size_t ki = 0; ki < hist.size(); ++ki) {
            if (pf[ki][r] > best) {
                best = pf[ki][r];
                e.witness_item = hist[ki];
            }
        }
        if (e.witness_item >= 0) {
            int src = m.combiner.flip_features ? e.witness_item : item;
            int dst = m.combiner.flip_features ? item : e.witness_item;
            if (auto path = find_witness_path(g, src, dst, seqs[r], m.combiner.walk)) {
                e.witness_path.reserve(path->size());
                for (int id : *path) e.witness_path.push_back(g.node(id).label);
            }
        }
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const Explanation& a, const Explanation& b) {
        if (a.contribution != b.contribution) return a.contribution > b.contribution;
        return a.rule_index < b.rule_index;
    });
    if (top_r >= 0 && static_cast<std::size_t>(top_r) < out.size()) out.resize(top_r);
    return out;
}

namespace {

json rule_to_json(const MinedRule& r, const HeteroGraph& g) {
    json j;
    std::vector<std::string> names;
    names.reserve(r.relations.size());
    for (int rel : r.relations) names.push_back(g.relation(rel).name);
    j["relations"] = names;
    j["support"] = r.support;
    std::vector<std::string> assocs;
    for (AssocType t : r.assocs) assocs.emplace_back(assoc_name(t));
    j["assocs"] = assocs;
    j["weight"] = r.weight ? json(*r.weight) : json(nullptr);
    if (r.chi2) j["chi2"] = *r.chi2;
    return j;
}

MinedRule rule_from_json(const json& j, const HeteroGraph& g) {
    MinedRule r;
    for (const auto& name : j.at("relations")) {
        auto id = g.relation_id(name.get<std::string>());
        if (!id)
            throw std::runtime_error("checkpoint references unknown relation '" +
                                     name.get<std::string>() + "'");
        r.relations.push_back(*id);
    }
    r.support = j.at("support").get<int>();
    for (const auto& a : j.at("assocs")) {
        auto t = assoc_from_name(a.get<std::string>());
        if (!t)
            throw std::runtime_error("checkpoint references unknown association '" +
                                     a.get<std::string>() + "'");
        r.assocs.push_back(*t);
    }
    if (j.contains("weight") && !j.at("weight").is_null()) r.weight = j.at("weight").get<double>();
    if (j.contains("chi2")) r.chi2 = j.at("chi2").get<double>();
    return r;
}

template <typename T>
T named_enum(const std::optional<T>& v, const std::string& what, const std::string& raw) {
    if (!v) throw std::runtime_error("checkpoint has unknown " + what + " '" + raw + "'");
    return *v;
}

}  // namespace

void save_checkpoint(const std::string& path, const RuleRecModel& m, TrainMode mode,
                     const CheckpointMeta& meta) {
    json j;
    j["kind"] = "krec-checkpoint";
    j["tool_version"] = kToolVersion;
    j["mode"] = train_mode_name(mode);

    const ModelConfig& mc = m.base->config();
    j["model"] = {{"kind", model_kind_name(mc.kind)},
                  {"dim", mc.dim},
                  {"layers", mc.layers},
                  {"hidden_act", activation_name(mc.hidden_act)},
                  {"out_act", activation_name(mc.out_act)},
                  {"mix_alpha", mc.mix_alpha},
                  {"init_scale", mc.init_scale},
                  {"n_users", m.base->n_users()},
                  {"n_items", m.base->n_items()},
                  {"params", m.base->get_params()}};

    if (m.rule_using) {
        const CombinerConfig& cc = m.combiner;
        json c;
        c["variant"] = variant_name(cc.variant);
        c["fixed_scale"] = cc.fixed_scale;
        c["lambda"] = cc.lambda;
        c["objective"] = objective_name(cc.objective);
        c["flip"] = cc.flip_features;
        c["walk"] = {{"alpha", cc.walk.alpha},
                     {"beta", cc.walk.beta},
                     {"self_absorb", self_absorb_name(cc.walk.self_absorb)},
                     {"degree_cap", cc.walk.degree_cap}};
        c["w"] = m.w;
        c["sel_bias"] = m.sel_bias;
        json rl = json::array();
        for (const auto& r : m.rules) rl.push_back(rule_to_json(r, m.features->graph()));
        c["rules"] = rl;
        j["combiner"] = c;
    } else {
        j["combiner"] = nullptr;
    }

    j["meta"] = {{"rules_digest", meta.rules_digest},
                 {"config_digest", meta.config_digest},
                 {"inputs", meta.inputs_json.empty() ? json::object() : json::parse(meta.inputs_json)},
                 {"train_seed", meta.train_seed},
                 {"split_seed", meta.split_seed}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path, const HeteroGraph* g) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed checkpoint " + path + ": " + e.what());
    }
    if (j.value("kind", "") != "krec-checkpoint")
        throw std::runtime_error(path + " is not a checkpoint file");

    LoadedCheckpoint out;
    out.mode = named_enum(train_mode_from_name(j.at("mode").get<std::string>()), "training mode",
                          j.at("mode").get<std::string>());

    const json& jm = j.at("model");
    ModelConfig mc;
    mc.kind = named_enum(model_kind_from_name(jm.at("kind").get<std::string>()), "model kind",
                         jm.at("kind").get<std::string>());
    mc.dim = jm.at("dim").get<int>();
    mc.layers = jm.at("layers").get<std::vector<int>>();
    mc.hidden_act = named_enum(activation_from_name(jm.at("hidden_act").get<std::string>()),
                               "activation", jm.at("hidden_act").get<std::string>());
    mc.out_act = named_enum(activation_from_name(jm.at("out_act").get<std::string>()), "activation",
                            jm.at("out_act").get<std::string>());
    mc.mix_alpha = jm.at("mix_alpha").get<double>();
    mc.init_scale = jm.at("init_scale").get<double>();
    auto base = make_model(mc, jm.at("n_users").get<int>(), jm.at("n_items").get<int>(), 0);
    base->set_params(jm.at("params").get<std::vector<double>>());

    if (!j.at("combiner").is_null()) {
        if (!g) throw std::runtime_error("rule-using checkpoint needs the graph it was built from");
        const json& c = j.at("combiner");
        CombinerConfig cc;
        cc.variant = named_enum(variant_from_name(c.at("variant").get<std::string>()),
                                "combiner variant", c.at("variant").get<std::string>());
        cc.fixed_scale = c.at("fixed_scale").get<double>();
        cc.lambda = c.at("lambda").get<double>();
        cc.objective = named_enum(objective_from_name(c.at("objective").get<std::string>()),
                                  "objective", c.at("objective").get<std::string>());
        cc.flip_features = c.at("flip").get<bool>();
        const json& wj = c.at("walk");
        cc.walk.alpha = wj.at("alpha").get<double>();
        cc.walk.beta = wj.at("beta").get<int>();
        cc.walk.self_absorb =
            named_enum(self_absorb_from_name(wj.at("self_absorb").get<std::string>()),
                       "absorption mode", wj.at("self_absorb").get<std::string>());
        cc.walk.degree_cap = wj.at("degree_cap").get<int>();

        std::vector<MinedRule> rules;
        for (const auto& rj : c.at("rules")) rules.push_back(rule_from_json(rj, *g));
        std::vector<double> w = c.at("w").get<std::vector<double>>();
        const std::vector<double>* frozen =
            cc.variant == CombinerVariant::HardFilter ? nullptr : &w;
        out.model = make_rulerec(std::move(base), *g, std::move(rules), cc, frozen);
        out.model.sel_bias = c.at("sel_bias").get<double>();
    } else {
        out.model = make_base_only(std::move(base));
    }

    const json& meta = j.at("meta");
    out.meta.rules_digest = meta.value("rules_digest", "");
    out.meta.config_digest = meta.value("config_digest", "");
    out.meta.inputs_json = meta.contains("inputs") ? meta.at("inputs").dump() : "{}";
    out.meta.train_seed = meta.value("train_seed", static_cast<std::uint64_t>(0));
    out.meta.split_seed = meta.value("split_seed", static_cast<std::uint64_t>(0));
    return out;
}

}
