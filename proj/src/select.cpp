#include "krec/select.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "krec/rng.hpp"

namespace krec {

std::vector<std::pair<int, int>> sample_negative_pairs(const HeteroGraph& g,
                                                       const std::vector<std::pair<int, int>>& positives,
                                                       double ratio, std::uint64_t seed) {
    if (ratio <= 0.0) throw std::invalid_argument("negative sampling ratio must be positive");
    std::vector<int> items;
    for (int i = 0; i < g.node_count(); ++i)
        if (g.is_item(i)) items.push_back(i);
    long long n = static_cast<long long>(items.size());
    std::set<std::pair<int, int>> excluded(positives.begin(), positives.end());
    long long wanted = static_cast<long long>(std::ceil(ratio * static_cast<double>(positives.size())));
    long long item_pair_exclusions = 0;
    for (const auto& p : excluded)
        if (p.first != p.second && p.first >= 0 && p.second >= 0 && p.first < g.node_count() &&
            p.second < g.node_count() && g.is_item(p.first) && g.is_item(p.second))
            ++item_pair_exclusions;
    long long available = n * (n - 1) - item_pair_exclusions;
    if (wanted > available)
        throw std::runtime_error("not enough distinct non-positive item pairs: need " +
                                 std::to_string(wanted) + ", have " + std::to_string(available));

    Rng rng(derive_seed(seed, "negative-pairs"));
    std::set<std::pair<int, int>> seen;
    std::vector<std::pair<int, int>> out;
    while (static_cast<long long>(out.size()) < wanted) {
        int a = items[rng.next_below(items.size())];
        int b = items[rng.next_below(items.size())];
        if (a == b) continue;
        std::pair<int, int> p{a, b};
        if (excluded.count(p) || seen.count(p)) continue;
        seen.insert(p);
        out.push_back(p);
    }
    return out;
}

std::vector<std::vector<double>> compute_x_features(const HeteroGraph& g,
                                                    const std::vector<std::pair<int, int>>& pairs,
                                                    const std::vector<Rule>& rules,
                                                    const MinerConfig& cfg) {
    std::vector<std::vector<double>> x(pairs.size(), std::vector<double>(rules.size(), 0.0));
    for (std::size_t r = 0; r < rules.size(); ++r) {
        std::map<int, std::vector<double>> row_cache;
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            auto [a, b] = pairs[p];
            auto it = row_cache.find(a);
            if (it == row_cache.end())
                it = row_cache.emplace(a, walk_probability_row(g, a, rules[r], cfg)).first;
            x[p][r] = it->second[b];
        }
    }
    return x;
}

LabeledPairSet build_labeled_set(const HeteroGraph& g, const std::vector<LabeledPair>& pairs,
                                 const std::vector<Rule>& rules, const MinerConfig& cfg) {
    LabeledPairSet set;
    set.pairs = pairs;
    std::vector<std::pair<int, int>> raw;
    raw.reserve(pairs.size());
    for (const auto& p : pairs) raw.emplace_back(p.a, p.b);
    set.x = compute_x_features(g, raw, rules, cfg);
    return set;
}

std::vector<double> chi_square_scores(const LabeledPairSet& data, std::vector<std::string>* warnings) {
    if (data.pairs.empty()) throw std::invalid_argument("labeled pair set is empty");
    std::size_t n_rules = data.x.empty() ? 0 : data.x[0].size();
    long long pos = 0;
    for (const auto& p : data.pairs) pos += p.label ? 1 : 0;
    if ((pos == 0 || pos == static_cast<long long>(data.pairs.size())) && warnings)
        warnings->push_back("all labels are equal; chi-square scores are identically zero");

    std::vector<double> scores(n_rules, 0.0);
    double total = static_cast<double>(data.pairs.size());
    for (std::size_t r = 0; r < n_rules; ++r) {
        // counts[feature presence][label]
        double counts[2][2] = {{0, 0}, {0, 0}};
        for (std::size_t p = 0; p < data.pairs.size(); ++p) {
            int f = data.x[p][r] > 0.0 ? 1 : 0;
            int y = data.pairs[p].label ? 1 : 0;
            counts[f][y] += 1.0;
        }
        double row[2] = {counts[0][0] + counts[0][1], counts[1][0] + counts[1][1]};
        double col[2] = {counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]};
        double chi = 0.0;
        for (int f = 0; f < 2; ++f)
            for (int y = 0; y < 2; ++y) {
                double expected = row[f] * col[y] / total;
                if (expected <= 0.0) continue;
                double d = counts[f][y] - expected;
                chi += d * d / expected;
            }
        scores[r] = chi;
    }
    return scores;
}

const char* objective_name(SelectionObjective o) {
    switch (o) {
        case SelectionObjective::ChiSquareObj: return "chi2";
        case SelectionObjective::LinearRegression: return "linreg";
        case SelectionObjective::Sigmoid: return "sigmoid";
    }
    return "?";
}

std::optional<SelectionObjective> objective_from_name(const std::string& s) {
    if (s == "chi2") return SelectionObjective::ChiSquareObj;
    if (s == "linreg") return SelectionObjective::LinearRegression;
    if (s == "sigmoid") return SelectionObjective::Sigmoid;
    return std::nullopt;
}

namespace {

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double sign(double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); }

}  // namespace

double selection_loss(const LabeledPairSet& data, SelectionObjective obj, std::span<const double> w,
                      double bias) {
    double loss = 0.0;
    for (std::size_t p = 0; p < data.pairs.size(); ++p) {
        double y = data.pairs[p].label;
        const auto& x = data.x[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            switch (obj) {
                case SelectionObjective::ChiSquareObj: {
                    double t = x[i] + bias - y;
                    loss += w[i] * t * t;
                    break;
                }
                case SelectionObjective::LinearRegression: {
                    double u = w[i] * x[i] + bias - y;
                    loss += u * u;
                    break;
                }
                case SelectionObjective::Sigmoid: {
                    double t = x[i] + bias - y;
                    loss += w[i] * logistic(std::fabs(t));
                    break;
                }
            }
        }
    }
    return loss / static_cast<double>(data.pairs.size());
}

void selection_grad(const LabeledPairSet& data, SelectionObjective obj, std::span<const double> w,
                    double bias, std::span<double> dw, double& db) {
    std::fill(dw.begin(), dw.end(), 0.0);
    db = 0.0;
    for (std::size_t p = 0; p < data.pairs.size(); ++p) {
        double y = data.pairs[p].label;
        const auto& x = data.x[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            switch (obj) {
                case SelectionObjective::ChiSquareObj: {
                    double t = x[i] + bias - y;
                    dw[i] += t * t;
                    db += w[i] * 2.0 * t;
                    break;
                }
                case SelectionObjective::LinearRegression: {
                    double u = w[i] * x[i] + bias - y;
                    dw[i] += 2.0 * u * x[i];
                    db += 2.0 * u;
                    break;
                }
                case SelectionObjective::Sigmoid: {
                    double t = x[i] + bias - y;
                    double s = logistic(std::fabs(t));
                    dw[i] += s;
                    db += w[i] * s * (1.0 - s) * sign(t);
                    break;
                }
            }
        }
    }
    double inv = 1.0 / static_cast<double>(data.pairs.size());
    for (auto& v : dw) v *= inv;
    db *= inv;
}

SelectionTrainResult train_selection_weights(const LabeledPairSet& data, SelectionObjective obj,
                                             const SelectionHyper& hyper,
                                             const SelectionObserver& observer) {
    if (data.pairs.empty()) throw std::invalid_argument("labeled pair set is empty");
    if (data.x.empty() || data.x[0].empty()) throw std::invalid_argument("no rule features to train on");
    std::size_t n = data.x[0].size();

    Rng rng(derive_seed(hyper.seed, "selection-init"));
    std::vector<double> theta(n);  // raw weights, or softmax logits when constrained
    for (auto& t : theta) t = rng.next_double(-1e-3, 1e-3);
    double bias = 0.0;

    auto weights_of = [&](const std::vector<double>& th) {
        std::vector<double> w(n);
        if (!hyper.constrained) {
            w = th;
        } else {
            double mx = *std::max_element(th.begin(), th.end());
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                w[i] = std::exp(th[i] - mx);
                sum += w[i];
            }
            for (auto& v : w) v /= sum;
        }
        return w;
    };

    SelectionTrainResult res;
    std::vector<double> dw(n);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::vector<double> w = weights_of(theta);
        double loss = selection_loss(data, obj, w, bias);
        if (!std::isfinite(loss))
            throw std::runtime_error("selection training diverged at epoch " + std::to_string(epoch));
        res.epoch_loss.push_back(loss);

        double db = 0.0;
        selection_grad(data, obj, w, bias, dw, db);
        if (!hyper.constrained) {
            for (std::size_t i = 0; i < n; ++i) theta[i] -= hyper.lr * dw[i];
        } else {
            // chain through softmax: dL/dtheta_j = w_j * (dw_j - sum_i dw_i * w_i)
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += dw[i] * w[i];
            for (std::size_t j = 0; j < n; ++j) theta[j] -= hyper.lr * w[j] * (dw[j] - mean);
        }
        bias -= hyper.lr * db;

        if (observer) {
            RuleWeights snap{weights_of(theta), bias};
            observer(epoch, snap, loss);
        }
    }
    res.weights.w = weights_of(theta);
    res.weights.bias = bias;
    return res;
}

std::vector<int> select_top_n(const std::vector<double>& scores, int n) {
    std::vector<int> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    if (n < static_cast<int>(idx.size())) idx.resize(n);
    return idx;
}

double coverage_recall(const HeteroGraph& g, const std::vector<CoverageUser>& users,
                       const std::vector<Rule>& rules, const MinerConfig& cfg) {
    if (users.empty() || rules.empty()) return 0.0;
    long long covered = 0;
    for (const auto& u : users) {
        bool hit = false;
        for (const Rule& r : rules) {
            std::vector<double> row = walk_probability_row(g, u.last_item, r, cfg);
            for (int k : u.history)
                if (row[k] > 0.0) {
                    hit = true;
                    break;
                }
            if (hit) break;
        }
        covered += hit ? 1 : 0;
    }
    return static_cast<double>(covered) / static_cast<double>(users.size());
}

}
