// Acceptance checks for the krec library. Each check prints exactly one
// PASS/FAIL line with its measured numbers; the process exits nonzero if any
// check fails. Expected values come from closed forms or from independent
// re-implementations kept inside this file, never from the library itself.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "krec/combine.hpp"
#include "krec/digest.hpp"
#include "krec/eval.hpp"
#include "krec/graph.hpp"
#include "krec/models.hpp"
#include "krec/rng.hpp"
#include "krec/select.hpp"
#include "krec/synth.hpp"
#include "krec/walk.hpp"

#include <filesystem>
#include <fstream>

using namespace krec;

namespace {

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s - %s (%s)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof(buf), pattern, args);
    va_end(args);
    return buf;
}

// ---------------------------------------------------------------------------
// independent walk oracle: explicit stay-or-move recursion over node paths,
// accumulating the endpoint of every individual path (no state merging)

void oracle_paths(const HeteroGraph& g, int v, const Rule& rule, std::size_t step, SelfAbsorb mode,
                  double p, std::vector<double>& out) {
    if (step == rule.size()) {
        out[v] += p;
        return;
    }
    bool last = step + 1 == rule.size();
    bool absorb = mode == SelfAbsorb::Always || (mode == SelfAbsorb::FinalOnly && last);
    if (absorb) oracle_paths(g, v, rule, step + 1, mode, p, out);
    auto nbrs = g.neighbors(v, rule[step]);
    if (!nbrs.empty()) {
        double share = p / static_cast<double>(nbrs.size());
        for (int u : nbrs) {
            if (absorb && u == v) continue;  // the stay replaces the self edge
            oracle_paths(g, u, rule, step + 1, mode, share, out);
        }
    }
}

std::vector<double> oracle_row(const HeteroGraph& g, int a, const Rule& rule, SelfAbsorb mode) {
    std::vector<double> out(g.node_count(), 0.0);
    oracle_paths(g, a, rule, 0, mode, 1.0, out);
    return out;
}

HeteroGraph random_item_graph(Rng& rng, int max_nodes, int max_rels, bool self_loops) {
    int n = rng.next_int(4, max_nodes);
    int r = rng.next_int(2, max_rels);
    GraphBuilder gb;
    for (int i = 0; i < n; ++i) gb.add_node(NodeKind::Item, "n" + std::to_string(i));
    int edges = rng.next_int(n, 3 * n);
    for (int e = 0; e < edges; ++e) {
        int a = rng.next_int(0, n - 1);
        int b = rng.next_int(0, n - 1);
        if (!self_loops && a == b) continue;
        gb.add_edge(a, "r" + std::to_string(rng.next_int(0, r - 1)), b);
    }
    gb.add_edge(0, "r0", n - 1);  // at least one edge so r0 exists
    return gb.build({.add_inverse = false});
}

// the worked fan fixture: fork to two entities, one of which also leads astray
HeteroGraph fan_fixture() {
    GraphBuilder gb;
    gb.add_node(NodeKind::Item, "a");    // 0
    gb.add_node(NodeKind::Entity, "e1"); // 1
    gb.add_node(NodeKind::Entity, "e2"); // 2
    gb.add_node(NodeKind::Item, "b");    // 3
    gb.add_node(NodeKind::Item, "x");    // 4
    gb.add_edge(0, "r1", 1);
    gb.add_edge(0, "r1", 2);
    gb.add_edge(1, "r2", 3);
    gb.add_edge(2, "r2", 3);
    gb.add_edge(2, "r2", 4);
    return gb.build({.add_inverse = false});
}

void check_walk_oracle() {
    auto t0 = std::chrono::steady_clock::now();
    MinerConfig off;
    off.self_absorb = SelfAbsorb::Off;

    HeteroGraph fan = fan_fixture();
    Rule fan_rule = {*fan.relation_id("r1"), *fan.relation_id("r2")};
    double fixture = walk_probability(fan, 0, 3, fan_rule, off);
    bool fixture_ok = std::abs(fixture - 0.75) <= 1e-12;

    Rng rng(424242);
    double max_err = 0.0;
    long long rules_checked = 0;
    int graphs = 200;
    for (int gi = 0; gi < graphs; ++gi) {
        HeteroGraph g = random_item_graph(rng, 30, 5, false);
        int nrel = g.relation_count();
        // every relation sequence of length 1..4 over the full vocabulary
        std::vector<Rule> stack = {{}};
        for (int len = 1; len <= 4; ++len) {
            std::vector<Rule> next;
            for (const Rule& prefix : stack)
                for (int rel = 0; rel < nrel; ++rel) {
                    Rule r = prefix;
                    r.push_back(rel);
                    next.push_back(r);
                }
            int a = rng.next_int(0, g.node_count() - 1);
            for (const Rule& rule : next) {
                auto row = walk_probability_row(g, a, rule, off);
                auto want = oracle_row(g, a, rule, SelfAbsorb::Off);
                for (int b = 0; b < g.node_count(); ++b)
                    max_err = std::max(max_err, std::abs(row[b] - want[b]));
                ++rules_checked;
            }
            stack = std::move(next);
        }
    }
    double secs = seconds_since(t0);
    bool ok = fixture_ok && max_err <= 1e-12 && secs < 30.0;
    report(ok, "walk probabilities match exhaustive path enumeration",
           fmt("fixture=%.6f want 0.75, %d graphs, %lld rules, max err %.2e, %.1fs", fixture,
               graphs, rules_checked, max_err, secs));
}

void check_absorption_modes() {
    Rng rng(777);
    double max_err = 0.0;
    long long checked = 0;
    for (int gi = 0; gi < 60; ++gi) {
        HeteroGraph g = random_item_graph(rng, 10, 3, true);  // self loops allowed
        for (SelfAbsorb mode : {SelfAbsorb::FinalOnly, SelfAbsorb::Always}) {
            MinerConfig cfg;
            cfg.self_absorb = mode;
            for (int ri = 0; ri < 6; ++ri) {
                int len = rng.next_int(1, 3);
                Rule rule(len);
                for (int s = 0; s < len; ++s) rule[s] = rng.next_int(0, g.relation_count() - 1);
                int a = rng.next_int(0, g.node_count() - 1);
                auto row = walk_probability_row(g, a, rule, cfg);
                auto want = oracle_row(g, a, rule, mode);
                for (int b = 0; b < g.node_count(); ++b) {
                    max_err = std::max(max_err, std::abs(row[b] - want[b]));
                    ++checked;
                }
            }
        }
    }
    // a node whose rule cannot move still reaches itself when the final step absorbs
    GraphBuilder gb;
    gb.add_node(NodeKind::Item, "a");
    gb.add_node(NodeKind::Item, "b");
    gb.add_edge(0, "r", 0);
    gb.add_edge(0, "r", 1);
    HeteroGraph g2 = gb.build({.add_inverse = false});
    MinerConfig fin;
    Rule r1 = {*g2.relation_id("r")};
    double self_p = walk_probability(g2, 0, 0, r1, fin);
    bool self_ok = self_p == 1.0;

    bool ok = max_err <= 1e-12 && self_ok;
    report(ok, "self-absorption modes match the stay-or-move oracle",
           fmt("%lld probabilities, max err %.2e, absorbed self-step=%g want 1", checked, max_err,
               self_p));
}

void check_chi_square() {
    LabeledPairSet data;
    auto push = [&](double x, int y) {
        data.pairs.push_back({0, 1, AssocType::ALV, y});
        data.x.push_back({x});
    };
    for (int i = 0; i < 4; ++i) push(0.5, 1);
    push(0.0, 1);
    for (int i = 0; i < 5; ++i) push(0.0, 0);
    double got = chi_square_scores(data)[0];
    double want = 20.0 / 3.0;
    bool fixture_ok = std::abs(got - want) <= 1e-9;

    // feature presence split evenly within both label groups: independent
    LabeledPairSet ind;
    for (int y : {0, 1})
        for (int k = 0; k < 4; ++k) {
            ind.pairs.push_back({0, 1, AssocType::ALV, y});
            ind.x.push_back({k < 2 ? 1.0 : 0.0});
        }
    double ind_score = chi_square_scores(ind)[0];
    bool ok = fixture_ok && ind_score == 0.0;
    report(ok, "chi-square scores match the hand-computed tables",
           fmt("fixture=%.12f want %.12f, independence=%g want 0", got, want, ind_score));
}

struct RecoveryStats {
    int top1 = 0;
    int below_p90 = 0;
    int seeds = 0;
};

void check_planted_rule_recovery() {
    auto t0 = std::chrono::steady_clock::now();
    MinerConfig mc;
    mc.beta = 2;
    mc.alpha = 0.05;

    auto run = [&](double noise, std::uint64_t base_seed, RecoveryStats& st) {
        for (int s = 0; s < 20; ++s) {
            SynthConfig cfg;  // generator defaults: two decoy relation families
            cfg.assoc_noise = noise >= 0.0 ? noise : cfg.assoc_noise;
            cfg.seed = base_seed + static_cast<std::uint64_t>(s);
            SynthWorld w = generate_world(cfg);
            HeteroGraph g = world_graph(w);

            Rule planted;
            for (const auto& name : w.cfg.planted[0].relations)
                planted.push_back(*g.relation_id(name));

            std::vector<std::pair<int, int>> pos;
            std::vector<LabeledPair> labeled;
            for (const auto& pr : w.pairs) {
                if (pr.assoc != AssocType::ALB) continue;
                labeled.push_back({pr.a, pr.b, pr.assoc, pr.label});
                if (pr.label == 1) pos.emplace_back(pr.a, pr.b);
            }
            std::vector<MinedRule> mined = enumerate_rules(g, pos, mc);
            int planted_idx = -1;
            for (std::size_t i = 0; i < mined.size(); ++i)
                if (mined[i].relations == planted) planted_idx = static_cast<int>(i);
            if (planted_idx < 0) {  // absent from the mined set: score it anyway
                MinedRule extra;
                extra.relations = planted;
                extra.assocs = {AssocType::ALB};
                mined.push_back(extra);
                planted_idx = static_cast<int>(mined.size()) - 1;
            }

            LabeledPairSet set = build_labeled_set(g, labeled, rule_sequences(mined), mc);
            std::vector<double> scores = chi_square_scores(set);
            std::vector<int> top = select_top_n(scores, 1);
            if (!top.empty() && top[0] == planted_idx) st.top1 += 1;

            std::vector<double> others;
            for (std::size_t i = 0; i < scores.size(); ++i)
                if (static_cast<int>(i) != planted_idx) others.push_back(scores[i]);
            if (!others.empty()) {
                std::sort(others.begin(), others.end());
                double p90 = others[static_cast<std::size_t>(0.9 * (others.size() - 1))];
                if (scores[planted_idx] < p90) st.below_p90 += 1;
            }
            st.seeds += 1;
        }
    };

    RecoveryStats clean, noisy;
    run(-1.0, 1000, clean);   // generator default noise
    run(1.0, 2000, noisy);    // labels fully decoupled from the planted structure
    double secs = seconds_since(t0);
    bool ok = clean.top1 >= 19 && noisy.below_p90 >= 15;
    report(ok, "chi-square selection recovers the planted rule",
           fmt("top-1 on %d/%d clean seeds (need 19), below the decoy p90 on %d/%d fully-noisy "
               "seeds (need 15), %.1fs",
               clean.top1, clean.seeds, noisy.below_p90, noisy.seeds, secs));
}

// ---------------------------------------------------------------------------
// gradient checks: central differences against the analytic gradients

struct GradStats {
    double max_rel = 0.0;
    int points = 0;
    // the denominator floor keeps finite-difference roundoff (~1e-11 absolute
    // at this step size) from dominating gradients that are legitimately tiny
    void note(double analytic, double fd) {
        double denom = std::max({1e-5, std::abs(analytic), std::abs(fd)});
        max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
    }
};

std::map<std::size_t, double> collect_grad(BaseRecommender& m, int u, int p, int n, double cp,
                                           double cn, double l2) {
    GradAccum acc;
    acc.resize(m.n_params());
    m.accumulate_pair_grad(u, p, n, cp, cn, l2, acc);
    std::map<std::size_t, double> out;
    acc.consume([&](std::size_t i, double v) { out[i] = v; });
    return out;
}

void fd_check_model(BaseRecommender& m, Rng& rng, int n_users, int n_items, GradStats& st) {
    const double h = 1e-5;
    for (int pt = 0; pt < 20; ++pt) {
        int u = rng.next_int(0, n_users - 1);
        int p = rng.next_int(0, n_items - 1);
        int n;
        do {
            n = rng.next_int(0, n_items - 1);
        } while (n == p);
        double cp = rng.next_double(-1.0, 1.0);
        double cn = rng.next_double(-1.0, 1.0);
        double l2 = rng.next_double(0.0, 0.1);
        auto grads = collect_grad(m, u, p, n, cp, cn, l2);
        std::vector<double> params = m.get_params();
        auto objective = [&]() {
            return cp * m.score(u, p) + cn * m.score(u, n) + l2 * m.touched_l2(u, p, n);
        };
        for (const auto& [idx, g] : grads) {
            double keep = params[idx];
            params[idx] = keep + h;
            m.set_params(params);
            double up = objective();
            params[idx] = keep - h;
            m.set_params(params);
            double down = objective();
            params[idx] = keep;
            st.note(g, (up - down) / (2.0 * h));
        }
        m.set_params(params);
        st.points += 1;
    }
}

void check_gradients() {
    auto t0 = std::chrono::steady_clock::now();
    const double h = 1e-5;
    Rng rng(90210);
    GradStats pair_loss, mf, ncf, rank_obj, sel_obj, joint;

    for (int i = 0; i < 20; ++i) {
        double d = rng.next_double(-5.0, 5.0);
        double fd = (bpr_pair_loss(d + h) - bpr_pair_loss(d - h)) / (2.0 * h);
        pair_loss.note(bpr_pair_loss_grad(d), fd);
        pair_loss.points += 1;
    }

    {
        ModelConfig cfg;
        cfg.kind = ModelKind::BprMf;
        cfg.dim = 6;
        cfg.init_scale = 0.3;
        auto m = make_model(cfg, 5, 8, 11);
        fd_check_model(*m, rng, 5, 8, mf);
    }
    {
        ModelConfig cfg;
        cfg.kind = ModelKind::Ncf;
        cfg.dim = 4;
        cfg.layers = {6, 3};
        cfg.hidden_act = Activation::Tanh;  // smooth everywhere, unlike relu
        cfg.init_scale = 0.3;
        auto m = make_model(cfg, 5, 8, 12);
        fd_check_model(*m, rng, 5, 8, ncf);
    }

    // pairwise ranking objective of the rule-augmented score, wrt base
    // parameters and the shared rule weights
    {
        GraphBuilder gb;
        for (int i = 0; i < 6; ++i) gb.add_node(NodeKind::Item, "i" + std::to_string(i));
        gb.add_node(NodeKind::Entity, "hub", "pool");
        for (int i = 0; i < 4; ++i) gb.add_edge(i, "tie", 6);
        HeteroGraph g = gb.build();
        std::vector<MinedRule> rules(1);
        rules[0].relations = {*g.relation_id("tie"), g.relation(*g.relation_id("tie")).inverse_id};
        rules[0].assocs = {AssocType::ALV};

        ModelConfig mcfg;
        mcfg.kind = ModelKind::BprMf;
        mcfg.dim = 4;
        mcfg.init_scale = 0.3;
        CombinerConfig cc;
        cc.variant = CombinerVariant::LearnTogether;
        auto m = make_rulerec(make_model(mcfg, 3, 6, 13), g, rules, cc);
        m.w[0] = 0.4;
        const double scale = m.effective_scale();

        std::vector<int> hist = {1, 2};
        for (int pt = 0; pt < 20; ++pt) {
            int u = rng.next_int(0, 2);
            int p = rng.next_int(0, 5);
            int n;
            do {
                n = rng.next_int(0, 5);
            } while (n == p);
            double l2 = rng.next_double(0.0, 0.05);
            auto fp = m.features->user_vector(u, p, hist);
            auto fn = m.features->user_vector(u, n, hist);
            auto loss = [&]() {
                double delta = m.score(u, p, hist) - m.score(u, n, hist);
                return bpr_pair_loss(delta) + l2 * m.base->touched_l2(u, p, n);
            };
            double delta = m.score(u, p, hist) - m.score(u, n, hist);
            double gg = bpr_pair_loss_grad(delta);
            auto grads = collect_grad(*m.base, u, p, n, gg, -gg, l2);
            std::vector<double> params = m.base->get_params();
            for (const auto& [idx, g2] : grads) {
                double keep = params[idx];
                params[idx] = keep + h;
                m.base->set_params(params);
                double up = loss();
                params[idx] = keep - h;
                m.base->set_params(params);
                double down = loss();
                params[idx] = keep;
                rank_obj.note(g2, (up - down) / (2.0 * h));
            }
            m.base->set_params(params);
            double w_analytic = gg * scale * (fp[0] - fn[0]);
            double keep = m.w[0];
            m.w[0] = keep + h;
            double up = loss();
            m.w[0] = keep - h;
            double down = loss();
            m.w[0] = keep;
            rank_obj.note(w_analytic, (up - down) / (2.0 * h));
            rank_obj.points += 1;
        }

        // joint objective: ranking loss plus lambda times the selection term
        LabeledPairSet sel;
        Rng srng(31);
        for (int i = 0; i < 12; ++i) {
            sel.pairs.push_back({0, 1, AssocType::ALV, i % 2});
            sel.x.push_back({srng.next_double(0.0, 2.0)});
        }
        const double lambda = 0.7;
        for (int pt = 0; pt < 20; ++pt) {
            int u = rng.next_int(0, 2);
            int p = rng.next_int(0, 5);
            int n;
            do {
                n = rng.next_int(0, 5);
            } while (n == p);
            double bias = rng.next_double(-0.5, 0.5);
            m.w[0] = rng.next_double(-1.0, 1.0);
            auto fp = m.features->user_vector(u, p, hist);
            auto fn = m.features->user_vector(u, n, hist);
            auto loss = [&](double b) {
                double delta = m.score(u, p, hist) - m.score(u, n, hist);
                return bpr_pair_loss(delta) +
                       lambda * selection_loss(sel, SelectionObjective::Sigmoid, m.w, b);
            };
            double delta = m.score(u, p, hist) - m.score(u, n, hist);
            double gg = bpr_pair_loss_grad(delta);
            std::vector<double> dw(1, 0.0);
            double db = 0.0;
            selection_grad(sel, SelectionObjective::Sigmoid, m.w, bias, dw, db);
            double w_analytic = gg * scale * (fp[0] - fn[0]) + lambda * dw[0];
            double keep = m.w[0];
            m.w[0] = keep + h;
            double up = loss(bias);
            m.w[0] = keep - h;
            double down = loss(bias);
            m.w[0] = keep;
            joint.note(w_analytic, (up - down) / (2.0 * h));
            joint.note(lambda * db,
                       (loss(bias + h) - loss(bias - h)) / (2.0 * h));
            joint.points += 1;
        }
    }

    // each selection objective against finite differences of its loss
    {
        Rng drng(55);
        for (SelectionObjective obj : {SelectionObjective::ChiSquareObj,
                                       SelectionObjective::LinearRegression,
                                       SelectionObjective::Sigmoid}) {
            for (int pt = 0; pt < 20; ++pt) {
                LabeledPairSet data;
                int rules = 3;
                for (int i = 0; i < 10; ++i) {
                    data.pairs.push_back({0, 1, AssocType::ALV, drng.next_bool(0.5) ? 1 : 0});
                    std::vector<double> row;
                    for (int r = 0; r < rules; ++r) row.push_back(drng.next_double(0.0, 2.0));
                    data.x.push_back(row);
                }
                std::vector<double> w(rules), dw(rules, 0.0);
                for (double& v : w) v = drng.next_double(-1.0, 1.0);
                double bias = drng.next_double(-0.5, 0.5);
                double db = 0.0;
                selection_grad(data, obj, w, bias, dw, db);
                for (int r = 0; r < rules; ++r) {
                    double keep = w[r];
                    w[r] = keep + h;
                    double up = selection_loss(data, obj, w, bias);
                    w[r] = keep - h;
                    double down = selection_loss(data, obj, w, bias);
                    w[r] = keep;
                    sel_obj.note(dw[r], (up - down) / (2.0 * h));
                }
                sel_obj.note(db, (selection_loss(data, obj, w, bias + h) -
                                  selection_loss(data, obj, w, bias - h)) /
                                     (2.0 * h));
                sel_obj.points += 1;
            }
        }
    }

    double secs = seconds_since(t0);
    double worst = std::max({pair_loss.max_rel, mf.max_rel, ncf.max_rel, rank_obj.max_rel,
                             sel_obj.max_rel, joint.max_rel});
    bool ok = worst < 1e-4 && secs < 60.0;
    report(ok, "analytic gradients match central finite differences",
           fmt("max rel err: pair %.1e, mf %.1e, ncf %.1e, ranking %.1e, selection %.1e, "
               "joint %.1e (bound 1e-4), %.1fs",
               pair_loss.max_rel, mf.max_rel, ncf.max_rel, rank_obj.max_rel, sel_obj.max_rel,
               joint.max_rel, secs));
}

// shared trainer plumbing for the sanity and lift checks

struct Carved {
    std::vector<TrainPositive> positives;
    std::vector<std::vector<int>> user_items;
    std::vector<std::vector<int>> histories;
};

Carved carve(const InteractionLog& log, const EvalSplit& split) {
    Carved c;
    c.user_items = user_item_sets(log);
    c.histories.assign(log.user_count, {});
    std::vector<char> in_split(log.user_count, 0);
    for (const auto& ue : split.users) {
        in_split[ue.user] = 1;
        c.histories[ue.user] = ue.train_items;
        for (int i : ue.train_items) c.positives.push_back({ue.user, i});
    }
    std::vector<std::vector<int>> extra(log.user_count);
    for (const auto& rec : log.records)
        if (!in_split[rec.user]) extra[rec.user].push_back(rec.item);
    for (int u = 0; u < log.user_count; ++u)
        for (int i : extra[u]) {
            c.positives.push_back({u, i});
            c.histories[u].push_back(i);
        }
    return c;
}

void check_base_model_sanity() {
    auto t0 = std::chrono::steady_clock::now();
    double total = 0.0;
    int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        InteractionLog log = latent_factor_log(200, 100, 4, 20, 100 + s);
        EvalSplit split = leave_one_out_split(log, 0, 100 + s);
        Carved c = carve(log, split);

        ModelConfig mcfg;
        mcfg.kind = ModelKind::BprMf;
        mcfg.dim = 16;
        auto m = make_model(mcfg, log.user_count, log.item_count,
                            derive_seed(100 + s, "init"));
        TrainConfig tc;
        tc.epochs = 60;
        tc.lr = 0.05;
        tc.l2 = 0.01;
        tc.seed = 100 + s;
        train_base(*m, c.positives, c.user_items, tc);

        EvalResult res = evaluate(
            [&](int u, int i, std::span<const int>) { return m->score(u, i); }, split);
        total += res.mean.recall10;
    }
    double mean = total / seeds;
    double secs = seconds_since(t0);
    bool ok = mean >= 0.3;
    report(ok, "matrix factorization learns the planted latent structure",
           fmt("mean recall@10 %.3f over %d seeds (need 0.30), %.1fs", mean, seeds, secs));
}

struct LiftSystem {
    std::vector<double> recall5;  // concatenated per-user values across seeds
    double mean = 0.0;
};

void check_rule_lift() {
    auto t0 = std::chrono::steady_clock::now();
    LiftSystem base_sys, equal_sys, multi_sys;
    int seeds = 5;
    MinerConfig mc;
    mc.beta = 3;
    mc.alpha = 0.05;

    for (int s = 0; s < seeds; ++s) {
        // defaults route 80% of picks through rules; larger entity pools keep
        // rule reachability selective so the features separate candidates
        SynthConfig cfg;
        cfg.items = 600;
        cfg.entities = 1800;
        cfg.users = 300;
        cfg.pairs_per_assoc = 150;
        cfg.seed = 3000 + static_cast<std::uint64_t>(s);
        SynthWorld w = generate_world(cfg);
        HeteroGraph g = world_graph(w);
        InteractionLog log = world_log(w);

        // mine per association, keep the two strongest rules by chi-square
        std::vector<std::pair<AssocType, std::vector<MinedRule>>> per_assoc;
        for (int t = 0; t < 4; ++t) {
            AssocType assoc = static_cast<AssocType>(t);
            std::vector<std::pair<int, int>> pos;
            std::vector<LabeledPair> labeled;
            for (const auto& pr : w.pairs)
                if (pr.assoc == assoc) {
                    labeled.push_back({pr.a, pr.b, pr.assoc, pr.label});
                    if (pr.label == 1) pos.emplace_back(pr.a, pr.b);
                }
            if (pos.empty()) continue;
            std::vector<MinedRule> mined = enumerate_rules(g, pos, mc);
            if (mined.empty()) continue;
            LabeledPairSet set = build_labeled_set(g, labeled, rule_sequences(mined), mc);
            std::vector<double> scores = chi_square_scores(set);
            std::vector<MinedRule> kept;
            for (int idx : select_top_n(scores, 2)) kept.push_back(mined[idx]);
            per_assoc.emplace_back(assoc, std::move(kept));
        }
        std::vector<MinedRule> rules = merge_rule_lists(per_assoc);

        LabeledPairSet sel;
        {
            std::vector<LabeledPair> labeled;
            for (const auto& pr : w.pairs) labeled.push_back({pr.a, pr.b, pr.assoc, pr.label});
            sel = build_labeled_set(g, labeled, rule_sequences(rules), mc);
        }

        EvalSplit split = leave_one_out_split(log, 0, 3000 + s);
        Carved c = carve(log, split);
        ModelConfig mcfg;
        mcfg.kind = ModelKind::BprMf;
        mcfg.dim = 16;
        std::uint64_t init_seed = derive_seed(3000 + s, "init");
        TrainConfig tc;
        tc.epochs = 40;
        tc.lr = 0.05;
        tc.l2 = 0.01;
        tc.seed = 3000 + static_cast<std::uint64_t>(s);

        auto run = [&](CombinerVariant variant, TrainMode mode, LiftSystem& sys) {
            auto base = make_model(mcfg, log.user_count, log.item_count, init_seed);
            RuleRecModel m = mode == TrainMode::Base
                                 ? make_base_only(std::move(base))
                                 : [&] {
                                       CombinerConfig cc;
                                       cc.variant = variant;
                                       cc.walk = mc;
                                       // histories grow source -> next item, so
                                       // score walks from history to candidate
                                       cc.flip_features = true;
                                       return make_rulerec(std::move(base), g, rules, cc);
                                   }();
            train_rulerec(m, mode, c.positives, c.user_items, c.histories, tc,
                          mode == TrainMode::MultiTask ? &sel : nullptr);
            EvalResult res = evaluate(
                [&](int u, int i, std::span<const int> hist) { return m.score(u, i, hist); },
                split);
            for (const auto& pu : res.per_user) sys.recall5.push_back(pu.recall5);
        };
        run(CombinerVariant::LearnTogether, TrainMode::Base, base_sys);
        run(CombinerVariant::EqualWeight, TrainMode::TwoStep, equal_sys);
        run(CombinerVariant::MultiTask, TrainMode::MultiTask, multi_sys);
    }

    auto mean_of = [](LiftSystem& s) {
        double total = 0.0;
        for (double v : s.recall5) total += v;
        s.mean = s.recall5.empty() ? 0.0 : total / static_cast<double>(s.recall5.size());
    };
    mean_of(base_sys);
    mean_of(equal_sys);
    mean_of(multi_sys);

    PairedTResult tt = paired_t_test(multi_sys.recall5, base_sys.recall5);
    double lift = base_sys.mean > 0.0 ? (multi_sys.mean - base_sys.mean) / base_sys.mean : 0.0;
    double secs = seconds_since(t0);
    bool ok = lift >= 0.05 && tt.p < 0.05 && multi_sys.mean >= equal_sys.mean;
    report(ok, "joint rule training lifts recall over the plain model",
           fmt("recall@5 base %.4f, equal %.4f, multi %.4f; lift %+.1f%% (need +5%%), "
               "p=%.2e (need <0.05), multi>=equal %s, %.1fs",
               base_sys.mean, equal_sys.mean, multi_sys.mean, 100.0 * lift, tt.p,
               multi_sys.mean >= equal_sys.mean ? "yes" : "no", secs));
}

void check_reductions() {
    SynthConfig cfg;
    cfg.items = 60;
    cfg.entities = 40;
    cfg.users = 20;
    cfg.pairs_per_assoc = 40;
    cfg.history_min = 4;
    cfg.history_max = 8;
    cfg.seed = 17;
    SynthWorld w = generate_world(cfg);
    HeteroGraph g = world_graph(w);
    InteractionLog log = world_log(w);
    EvalSplit split = leave_one_out_split(log, 0, 17);
    Carved c = carve(log, split);

    std::vector<MinedRule> rules(2);
    for (int j = 0; j < 2; ++j) {
        for (const auto& name : w.cfg.planted[j].relations)
            rules[j].relations.push_back(*g.relation_id(name));
        rules[j].assocs = w.cfg.planted[j].assocs;
        rules[j].support = 1;
    }

    ModelConfig mcfg;
    mcfg.kind = ModelKind::BprMf;
    mcfg.dim = 8;
    auto fresh = [&]() { return make_model(mcfg, log.user_count, log.item_count, 99); };

    // frozen zero weights must reproduce the base ranking item for item
    CombinerConfig lt;
    lt.variant = CombinerVariant::LearnTogether;
    std::vector<double> zeros(rules.size(), 0.0);
    auto zero_model = make_rulerec(fresh(), g, rules, lt, &zeros);
    auto base_model = fresh();
    int mismatched = 0;
    std::vector<int> candidates(log.item_count);
    for (int i = 0; i < log.item_count; ++i) candidates[i] = i;
    for (const auto& ue : split.users) {
        auto with_rules = recommend_topk(zero_model, ue.user, candidates, ue.train_items,
                                         log.item_count);
        std::vector<std::pair<int, double>> plain;
        for (int i : candidates) plain.emplace_back(i, base_model->score(ue.user, i));
        sort_ranked(plain);
        if (with_rules != plain) ++mismatched;
    }

    // with no selection pressure the multi-task run must equal joint training
    TrainConfig tc;
    tc.epochs = 8;
    tc.seed = 4;
    std::vector<std::vector<double>> traj_a, traj_b;
    CombinerConfig learn;
    learn.variant = CombinerVariant::LearnTogether;
    auto ma = make_rulerec(fresh(), g, rules, learn);
    train_rulerec(ma, TrainMode::TwoStep, c.positives, c.user_items, c.histories, tc, nullptr,
                  [&](int, const std::vector<double>& p, const std::vector<double>&, double,
                      double) { traj_a.push_back(p); });
    CombinerConfig multi;
    multi.variant = CombinerVariant::MultiTask;
    multi.lambda = 0.0;
    auto mb = make_rulerec(fresh(), g, rules, multi);
    train_rulerec(mb, TrainMode::MultiTask, c.positives, c.user_items, c.histories, tc, nullptr,
                  [&](int, const std::vector<double>& p, const std::vector<double>&, double,
                      double) { traj_b.push_back(p); });
    bool trajectory_equal = traj_a == traj_b && ma.w == mb.w;

    bool ok = mismatched == 0 && trajectory_equal;
    report(ok, "degenerate configurations reduce to the base model",
           fmt("zero-weight ranking mismatches %d/%zu users (need 0), zero-lambda trajectory "
               "bitwise equal: %s",
               mismatched, split.users.size(), trajectory_equal ? "yes" : "no"));
}

void check_metric_properties() {
    MetricSet three = rank_metrics(3);
    bool fixture_ok = std::abs(three.ndcg10 - 0.5) <= 1e-12 &&
                      std::abs(three.mrr10 - 1.0 / 3.0) <= 1e-12 && three.recall5 == 1.0 &&
                      three.recall10 == 1.0;

    Rng rng(2024);
    int bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int n = rng.next_int(3, 120);
        int positive = rng.next_int(0, n - 1);
        std::vector<std::pair<int, double>> scored;
        for (int i = 0; i < n; ++i) scored.emplace_back(i, rng.next_double(-1.0, 1.0));
        if (rng.next_bool(0.3)) scored[rng.next_int(0, n - 1)].second = scored[positive].second;

        // oracle rank: strictly higher scores, plus equal-scored smaller ids
        int oracle = 1;
        for (const auto& [id, sc] : scored) {
            if (id == positive) continue;
            if (sc > scored[positive].second ||
                (sc == scored[positive].second && id < positive))
                ++oracle;
        }
        auto sorted = scored;
        sort_ranked(sorted);
        int rank = find_rank(sorted, positive);
        if (rank != oracle) ++bad;

        MetricSet m = rank_metrics(rank);
        double want_ndcg = rank <= 10 ? 1.0 / std::log2(rank + 1.0) : 0.0;
        double want_mrr = rank <= 10 ? 1.0 / rank : 0.0;
        if (m.recall5 != (rank <= 5 ? 1.0 : 0.0)) ++bad;
        if (m.recall10 != (rank <= 10 ? 1.0 : 0.0)) ++bad;
        if (std::abs(m.ndcg10 - want_ndcg) > 1e-12) ++bad;
        if (std::abs(m.mrr10 - want_mrr) > 1e-12) ++bad;
        if (m.recall5 > m.recall10) ++bad;

        MetricSet deeper = rank_metrics(rank + 1);
        if (deeper.recall5 > m.recall5 || deeper.recall10 > m.recall10 ||
            deeper.ndcg10 > m.ndcg10 + 1e-15 || deeper.mrr10 > m.mrr10 + 1e-15)
            ++bad;
    }
    bool ok = fixture_ok && bad == 0;
    report(ok, "ranking metrics obey their closed forms and monotonicity",
           fmt("rank-3 fixture ndcg=%.3f mrr=%.4f, violations %d/1000 permutations", three.ndcg10,
               three.mrr10, bad));
}

std::string run_pipeline(const std::string& dir) {
    namespace fs = std::filesystem;
    fs::remove_all(dir);
    fs::create_directories(dir);

    SynthConfig cfg;
    cfg.items = 80;
    cfg.entities = 60;
    cfg.users = 30;
    cfg.pairs_per_assoc = 60;
    cfg.history_min = 4;
    cfg.history_max = 8;
    cfg.seed = 123;
    SynthWorld w = generate_world(cfg);
    write_world(w, dir);
    SynthPaths paths = synth_paths(dir);

    HeteroGraph g = load_graph(paths.nodes, paths.edges);
    auto pairs = load_associations(paths.associations);
    InteractionLog log = load_interactions(paths.interactions);

    MinerConfig mc;
    mc.beta = 2;
    mc.alpha = 0.05;
    std::vector<std::pair<AssocType, std::vector<MinedRule>>> per_assoc;
    for (int t = 0; t < 4; ++t) {
        AssocType assoc = static_cast<AssocType>(t);
        std::vector<std::pair<int, int>> pos;
        for (const auto& pr : pairs)
            if (pr.assoc == assoc && pr.label == 1) pos.emplace_back(pr.a, pr.b);
        if (pos.empty()) continue;
        per_assoc.emplace_back(assoc, enumerate_rules(g, pos, mc));
    }
    std::vector<MinedRule> rules = merge_rule_lists(per_assoc);
    save_rules(dir + "/rules.jsonl", rules, g, "{\"seed\":123}");

    std::vector<LabeledPair> labeled;
    for (const auto& pr : pairs) labeled.push_back({pr.a, pr.b, pr.assoc, pr.label});
    LabeledPairSet sel = build_labeled_set(g, labeled, rule_sequences(rules), mc);
    std::vector<double> chi = chi_square_scores(sel);
    for (std::size_t i = 0; i < rules.size(); ++i) rules[i].chi2 = chi[i];
    SelectionHyper hyper;
    hyper.epochs = 40;
    hyper.seed = 123;
    SelectionTrainResult sres = train_selection_weights(sel, SelectionObjective::Sigmoid, hyper);
    for (std::size_t i = 0; i < rules.size(); ++i) rules[i].weight = sres.weights.w[i];
    save_rules(dir + "/selected.jsonl", rules, g, "{\"seed\":123}");

    EvalSplit split = leave_one_out_split(log, 0, 123);
    Carved c = carve(log, split);
    ModelConfig mcfg;
    mcfg.kind = ModelKind::BprMf;
    mcfg.dim = 8;
    CombinerConfig cc;
    cc.variant = CombinerVariant::MultiTask;
    cc.walk = mc;
    auto m = make_rulerec(make_model(mcfg, log.user_count, log.item_count, 7), g, rules, cc);
    TrainConfig tc;
    tc.epochs = 10;
    tc.seed = 123;
    train_rulerec(m, TrainMode::MultiTask, c.positives, c.user_items, c.histories, tc, &sel);
    CheckpointMeta meta;
    meta.train_seed = 123;
    meta.split_seed = 123;
    save_checkpoint(dir + "/model.json", m, TrainMode::MultiTask, meta);

    EvalResult res = evaluate(
        [&](int u, int i, std::span<const int> hist) { return m.score(u, i, hist); }, split);
    nlohmann::json report_json = {{"recall5", res.mean.recall5},
                                  {"recall10", res.mean.recall10},
                                  {"ndcg10", res.mean.ndcg10},
                                  {"mrr10", res.mean.mrr10}};
    std::ofstream(dir + "/eval.json") << report_json.dump(2) << "\n";

    const UserEval& ue = split.users.front();
    auto expl = explain(m, ue.user, ue.positive, ue.train_items, 3);
    nlohmann::json expl_json = nlohmann::json::array();
    for (const auto& e : expl)
        expl_json.push_back({{"rule", e.rule_index},
                             {"feature", e.feature},
                             {"contribution", e.contribution},
                             {"witness", e.witness_item},
                             {"path", e.witness_path}});
    std::ofstream(dir + "/explain.json") << expl_json.dump(2) << "\n";

    std::string combined;
    for (const char* name : {"/nodes.tsv", "/edges.tsv", "/associations.tsv",
                             "/interactions.tsv", "/manifest.json", "/rules.jsonl",
                             "/selected.jsonl", "/model.json", "/eval.json", "/explain.json"})
        combined += digest_file(dir + name) + "\n";
    return combined;
}

void check_pipeline_determinism() {
    auto t0 = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    std::string root = (fs::temp_directory_path() / "krec_acceptance").string();
    std::string d1 = run_pipeline(root + "/run1");
    std::string d2 = run_pipeline(root + "/run2");
    double secs = seconds_since(t0);
    bool ok = d1 == d2 && secs < 600.0;
    report(ok, "the full pipeline reproduces every artifact digest",
           fmt("10 artifacts, digests %s, %.1fs (bound 600s)", d1 == d2 ? "equal" : "DIFFER",
               secs));
}

}  // namespace

int main() {
    check_walk_oracle();
    check_absorption_modes();
    check_chi_square();
    check_planted_rule_recovery();
    check_gradients();
    check_base_model_sanity();
    check_rule_lift();
    check_reductions();
    check_metric_properties();
    check_pipeline_determinism();
    std::printf("%s (%d of 10 checks failed)\n", g_failures == 0 ? "ALL PASS" : "FAILURES",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
