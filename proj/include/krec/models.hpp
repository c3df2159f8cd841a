#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "krec/graph.hpp"

namespace krec {

enum class ModelKind { BprMf, Gmf, Mlp, Ncf };
enum class Activation { Identity, Relu, Tanh, Logistic };

const char* model_kind_name(ModelKind k);
std::optional<ModelKind> model_kind_from_name(const std::string& s);
const char* activation_name(Activation a);
std::optional<Activation> activation_from_name(const std::string& s);

struct ModelConfig {
    ModelKind kind = ModelKind::BprMf;
    int dim = 16;                            // embedding width per table
    std::vector<int> layers = {32, 16, 8};   // tower output sizes; input is 2*dim
    Activation hidden_act = Activation::Relu;
    Activation out_act = Activation::Logistic;
    double mix_alpha = 0.5;                  // blend between the two halves of the fused model
    double init_scale = 0.01;                // weights ~ U[-scale, scale], biases 0
};

// Sparse gradient accumulator over a model's flat parameter vector. Indices
// are deduplicated and applied in ascending order so updates are reproducible.
class GradAccum {
public:
    void resize(std::size_t n) {
        dense_.assign(n, 0.0);
        touched_.clear();
    }
    void add(std::size_t i, double v) {
        dense_[i] += v;
        touched_.push_back(i);
    }
    // calls fn(index, value) in ascending index order, then clears
    template <typename Fn>
    void consume(Fn&& fn) {
        std::sort(touched_.begin(), touched_.end());
        touched_.erase(std::unique(touched_.begin(), touched_.end()), touched_.end());
        for (std::size_t i : touched_) {
            fn(i, dense_[i]);
            dense_[i] = 0.0;
        }
        touched_.clear();
    }
    std::size_t size() const { return dense_.size(); }

private:
    std::vector<double> dense_;
    std::vector<std::size_t> touched_;
};

// Pairwise ranking loss -ln(sigmoid(delta)), evaluated in a form that stays
// finite for any delta.
double bpr_pair_loss(double delta);
// d(bpr_pair_loss)/d(delta) = sigmoid(delta) - 1
double bpr_pair_loss_grad(double delta);

class BaseRecommender {
public:
    virtual ~BaseRecommender() = default;
    virtual ModelKind kind() const = 0;
    virtual const ModelConfig& config() const = 0;
    virtual int n_users() const = 0;
    virtual int n_items() const = 0;
    virtual double score(int u, int i) const = 0;

    virtual std::size_t n_params() const = 0;
    virtual std::vector<double> get_params() const = 0;
    virtual void set_params(std::span<const double> p) = 0;

    // Accumulates the gradient of cp*S(u,p) + cn*S(u,n) + l2*(squared norms of
    // every touched parameter group) with respect to the flat parameters.
    virtual void accumulate_pair_grad(int u, int p, int n, double cp, double cn, double l2,
                                      GradAccum& grad) const = 0;
    // The L2 term above, for assembling pair losses consistent with training.
    virtual double touched_l2(int u, int p, int n) const = 0;

    virtual void apply_step(GradAccum& grad, double lr) = 0;
    virtual std::unique_ptr<BaseRecommender> clone() const = 0;
};

std::unique_ptr<BaseRecommender> make_model(const ModelConfig& cfg, int n_users, int n_items,
                                            std::uint64_t seed);

struct TrainConfig {
    double lr = 0.05;
    double l2 = 0.01;
    int epochs = 50;
    int neg_per_pos = 1;
    std::uint64_t seed = 0;
    bool shuffle = true;
};

// item sets per user over the full log (train and held-out alike); negative
// sampling must avoid all of them
std::vector<std::vector<int>> user_item_sets(const InteractionLog& log);

struct TrainPositive {
    int user;
    int item;
};

struct TrainResult {
    std::vector<double> epoch_loss;  // mean per-pair loss including the L2 term
};

using EpochObserver = std::function<void(int epoch, double mean_loss)>;

// Pairwise training over shuffled positives; one SGD step per sampled
// negative on bpr_pair_loss(S(u,p) - S(u,n)) plus L2 on the touched groups.
TrainResult train_base(BaseRecommender& m, const std::vector<TrainPositive>& positives,
                       const std::vector<std::vector<int>>& user_items, const TrainConfig& cfg,
                       const EpochObserver& observer = nullptr);

}
