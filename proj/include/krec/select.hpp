#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "krec/graph.hpp"
#include "krec/walk.hpp"

namespace krec {

struct LabeledPair {
    int a = -1;
    int b = -1;
    AssocType assoc = AssocType::ALV;
    int label = 0;
};

// Pairs plus their per-rule walk-probability features, row-aligned.
struct LabeledPairSet {
    std::vector<LabeledPair> pairs;
    std::vector<std::vector<double>> x;
};

// Uniformly samples ordered item pairs outside the given positive set,
// without replacement; ceil(ratio * |positives|) of them.
std::vector<std::pair<int, int>> sample_negative_pairs(const HeteroGraph& g,
                                                       const std::vector<std::pair<int, int>>& positives,
                                                       double ratio, std::uint64_t seed);

// Walk-probability features for many pairs; rows grouped by source node so
// each (source, rule) distribution is computed once.
std::vector<std::vector<double>> compute_x_features(const HeteroGraph& g,
                                                    const std::vector<std::pair<int, int>>& pairs,
                                                    const std::vector<Rule>& rules,
                                                    const MinerConfig& cfg);

LabeledPairSet build_labeled_set(const HeteroGraph& g, const std::vector<LabeledPair>& pairs,
                                 const std::vector<Rule>& rules, const MinerConfig& cfg);

// Independence score per rule from the 2x2 table of binarized feature
// presence (x > 0) against the label. Cells with zero expectation contribute
// nothing; all-equal labels produce all-zero scores plus a warning.
std::vector<double> chi_square_scores(const LabeledPairSet& data,
                                      std::vector<std::string>* warnings = nullptr);

enum class SelectionObjective { ChiSquareObj, LinearRegression, Sigmoid };

const char* objective_name(SelectionObjective o);
std::optional<SelectionObjective> objective_from_name(const std::string& s);

struct SelectionHyper {
    double lr = 0.05;
    int epochs = 200;
    std::uint64_t seed = 0;
    bool constrained = true;  // weights kept on the simplex via softmax parameters
};

struct RuleWeights {
    std::vector<double> w;
    double bias = 0.0;
};

// Mean-per-pair objective value and its gradient in raw weight space; the
// per-pair form follows the printed objectives exactly.
double selection_loss(const LabeledPairSet& data, SelectionObjective obj, std::span<const double> w,
                      double bias);
void selection_grad(const LabeledPairSet& data, SelectionObjective obj, std::span<const double> w,
                    double bias, std::span<double> dw, double& db);

struct SelectionTrainResult {
    RuleWeights weights;
    std::vector<double> epoch_loss;  // loss before each epoch's step
};

using SelectionObserver = std::function<void(int epoch, const RuleWeights&, double loss)>;

SelectionTrainResult train_selection_weights(const LabeledPairSet& data, SelectionObjective obj,
                                             const SelectionHyper& hyper,
                                             const SelectionObserver& observer = nullptr);

// Indices of the n largest scores; ties resolved toward the lower index.
std::vector<int> select_top_n(const std::vector<double>& scores, int n);

struct CoverageUser {
    int last_item = -1;
    std::vector<int> history;
};

// Fraction of users whose held-out item connects to any history item under
// any rule with positive walk probability.
double coverage_recall(const HeteroGraph& g, const std::vector<CoverageUser>& users,
                       const std::vector<Rule>& rules, const MinerConfig& cfg);

}
