#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "krec/graph.hpp"

namespace krec {

struct UserEval {
    int user = -1;
    std::vector<int> train_items;  // interaction order, held-out item removed
    int positive = -1;             // the held-out item
    std::vector<int> negatives;    // sampled candidates the user never touched
};

struct EvalSplit {
    std::vector<UserEval> users;  // ascending user id
    int n_items = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

// Holds out each user's latest interaction (ties broken by file order) and
// samples shared-size candidate sets; users with fewer than two interactions
// are dropped with a warning. `n_items` widens the item universe beyond the
// log when positive.
EvalSplit leave_one_out_split(const InteractionLog& log, int n_items, std::uint64_t seed,
                              int n_negatives = 99);

struct MetricSet {
    double recall5 = 0.0;
    double recall10 = 0.0;
    double ndcg10 = 0.0;
    double mrr10 = 0.0;
};

MetricSet& operator+=(MetricSet& a, const MetricSet& b);
MetricSet operator/(MetricSet a, double d);

// Metrics for a positive at the given 1-based rank; rank < 1 or beyond the
// cutoff contributes zero.
MetricSet rank_metrics(int rank);

// Sorts (item, score) pairs by score descending, ties by ascending item id.
void sort_ranked(std::vector<std::pair<int, double>>& scored);

// 1-based rank of `item` in an already sorted candidate list, 0 if absent.
int find_rank(const std::vector<std::pair<int, double>>& ranked, int item);

using ScoreFn = std::function<double(int user, int item, std::span<const int> history)>;

struct EvalResult {
    std::vector<MetricSet> per_user;  // aligned with split.users
    MetricSet mean;
};

// Ranks positive-plus-negatives per user under the scorer. `jobs` > 1 scores
// users in parallel; results are identical to the sequential run.
EvalResult evaluate(const ScoreFn& scorer, const EvalSplit& split, int jobs = 1);

struct PairedTResult {
    double t = 0.0;
    double p = 1.0;
    int dof = 0;
    bool degenerate = false;  // zero variance of the differences
};

// Two-sided paired t-test over equal-length samples (>= 2 entries).
PairedTResult paired_t_test(std::span<const double> a, std::span<const double> b);

}
