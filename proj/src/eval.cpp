#include "krec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "krec/rng.hpp"

namespace krec {

EvalSplit leave_one_out_split(const InteractionLog& log, int n_items, std::uint64_t seed,
                              int n_negatives) {
    if (n_negatives < 0) throw std::invalid_argument("candidate count must be non-negative");
    if (log.records.empty()) throw std::invalid_argument("empty interaction log");
    int universe = std::max(n_items, log.item_count);

    EvalSplit split;
    split.n_items = universe;
    split.seed = seed;

    std::vector<std::vector<const Interaction*>> per_user(log.user_count);
    for (const auto& rec : log.records) per_user[rec.user].push_back(&rec);

    Rng rng(derive_seed(seed, "negatives"));
    for (int u = 0; u < log.user_count; ++u) {
        const auto& recs = per_user[u];
        if (recs.empty()) continue;
        if (recs.size() < 2) {
            split.warnings.push_back("user " + std::to_string(u) +
                                     " has fewer than 2 interactions; skipped");
            continue;
        }
        const Interaction* held = recs.front();
        for (const Interaction* r : recs) {
            if (r->timestamp > held->timestamp ||
                (r->timestamp == held->timestamp && r->file_order > held->file_order))
                held = r;
        }

        UserEval ue;
        ue.user = u;
        ue.positive = held->item;
        std::vector<int> owned;
        owned.reserve(recs.size());
        for (const Interaction* r : recs) {
            owned.push_back(r->item);
            if (r != held) ue.train_items.push_back(r->item);
        }
        std::sort(owned.begin(), owned.end());
        owned.erase(std::unique(owned.begin(), owned.end()), owned.end());

        std::vector<int> eligible;
        eligible.reserve(universe);
        for (int i = 0; i < universe; ++i)
            if (!std::binary_search(owned.begin(), owned.end(), i)) eligible.push_back(i);
        int want = n_negatives;
        if (static_cast<int>(eligible.size()) < want) {
            split.warnings.push_back("user " + std::to_string(u) + " has only " +
                                     std::to_string(eligible.size()) +
                                     " candidate negatives (wanted " + std::to_string(want) + ")");
            want = static_cast<int>(eligible.size());
        }
        for (int j = 0; j < want; ++j) {
            std::size_t k = j + rng.next_below(eligible.size() - j);
            std::swap(eligible[j], eligible[k]);
            ue.negatives.push_back(eligible[j]);
        }
        split.users.push_back(std::move(ue));
    }
    return split;
}

MetricSet& operator+=(MetricSet& a, const MetricSet& b) {
    a.recall5 += b.recall5;
    a.recall10 += b.recall10;
    a.ndcg10 += b.ndcg10;
    a.mrr10 += b.mrr10;
    return a;
}

MetricSet operator/(MetricSet a, double d) {
    a.recall5 /= d;
    a.recall10 /= d;
    a.ndcg10 /= d;
    a.mrr10 /= d;
    return a;
}

MetricSet rank_metrics(int rank) {
    MetricSet m;
    if (rank >= 1) {
        if (rank <= 5) m.recall5 = 1.0;
        if (rank <= 10) {
            m.recall10 = 1.0;
            m.ndcg10 = 1.0 / std::log2(rank + 1.0);
            m.mrr10 = 1.0 / rank;
        }
    }
    return m;
}

void sort_ranked(std::vector<std::pair<int, double>>& scored) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
}

int find_rank(const std::vector<std::pair<int, double>>& ranked, int item) {
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i].first == item) return static_cast<int>(i) + 1;
    return 0;
}

EvalResult evaluate(const ScoreFn& scorer, const EvalSplit& split, int jobs) {
    if (!scorer) throw std::invalid_argument("evaluate needs a scoring function");
    EvalResult res;
    res.per_user.resize(split.users.size());

    auto eval_user = [&](std::size_t i) {
        const UserEval& ue = split.users[i];
        std::span<const int> hist(ue.train_items);
        std::vector<std::pair<int, double>> scored;
        scored.reserve(ue.negatives.size() + 1);
        scored.emplace_back(ue.positive, scorer(ue.user, ue.positive, hist));
        for (int c : ue.negatives) scored.emplace_back(c, scorer(ue.user, c, hist));
        sort_ranked(scored);
        res.per_user[i] = rank_metrics(find_rank(scored, ue.positive));
    };

    if (jobs <= 1 || split.users.size() <= 1) {
        for (std::size_t i = 0; i < split.users.size(); ++i) eval_user(i);
    } else {
        int workers = static_cast<int>(std::min<std::size_t>(jobs, split.users.size()));
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int t = 0; t < workers; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < split.users.size(); i += workers) eval_user(i);
            });
        }
        for (auto& th : pool) th.join();
    }

    for (const auto& m : res.per_user) res.mean += m;
    if (!res.per_user.empty()) res.mean = res.mean / static_cast<double>(res.per_user.size());
    return res;
}

PairedTResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired samples must have equal length");
    if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least two samples");
    std::size_t n = a.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    double var = ss / static_cast<double>(n - 1);

    PairedTResult res;
    res.dof = static_cast<int>(n) - 1;
    if (var == 0.0) {
        res.degenerate = true;
        if (mean == 0.0) {
            res.t = 0.0;
            res.p = 1.0;
        } else {
            res.t = mean > 0 ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
            res.p = 0.0;
        }
        return res;
    }
    res.t = mean / std::sqrt(var / static_cast<double>(n));
    boost::math::students_t dist(static_cast<double>(res.dof));
    res.p = 2.0 * boost::math::cdf(dist, -std::abs(res.t));
    return res;
}

}
