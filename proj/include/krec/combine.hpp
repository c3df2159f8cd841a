#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "krec/models.hpp"
#include "krec/select.hpp"
#include "krec/walk.hpp"

namespace krec {

enum class CombinerVariant { HardFilter, EqualWeight, SelectionWeight, LearnTogether, MultiTask };

const char* variant_name(CombinerVariant v);
std::optional<CombinerVariant> variant_from_name(const std::string& s);

inline bool variant_trains_weights(CombinerVariant v) {
    return v == CombinerVariant::LearnTogether || v == CombinerVariant::MultiTask;
}

struct CombinerConfig {
    CombinerVariant variant = CombinerVariant::LearnTogether;
    // additive scale for the rule term; fixed-weight variants keep it as-is,
    // trainable ones absorb it into the weights (effective scale 1)
    double fixed_scale = 0.2;
    double lambda = 0.5;  // weight of the selection term when training jointly
    SelectionObjective objective = SelectionObjective::Sigmoid;
    bool flip_features = false;  // score history -> candidate instead
    MinerConfig walk;
};

// Caches rule features so the per-epoch training loop never re-runs walks:
// one sparse row per (source item, rule), one summed vector per (user, item).
// Not safe for concurrent mutation; precompute before scoring in parallel.
class RuleFeatureProvider {
public:
    RuleFeatureProvider(const HeteroGraph& g, std::vector<Rule> rules, MinerConfig cfg, bool flip);

    std::size_t rule_count() const { return rules_.size(); }
    const std::vector<Rule>& rules() const { return rules_; }
    const HeteroGraph& graph() const { return g_; }

    // per-rule features for one (candidate, history item) pair
    std::vector<double> pair_vector(int item, int k) const;
    // summed features of a candidate against a user's history; cached by
    // (user, item), so a user's history must not change within a provider
    const std::vector<double>& user_vector(int user, int item, std::span<const int> history) const;
    void warm(int user, std::span<const int> history, std::span<const int> candidates) const;

private:
    const std::vector<double>& row(int source, std::size_t rule_idx) const;

    const HeteroGraph& g_;
    std::vector<Rule> rules_;
    MinerConfig cfg_;
    bool flip_;
    std::vector<int> item_ids_;  // item node ids, ascending
    std::vector<int> slot_of_;   // node id -> index into item_ids_, -1 for entities
    mutable std::unordered_map<std::uint64_t, std::vector<double>> rows_;   // (source, rule) -> per-item-slot
    mutable std::unordered_map<std::uint64_t, std::vector<double>> users_;  // (user, item) -> per-rule sums
};

// A base recommender optionally wrapped with a rule combiner. The additive
// variants score S + scale * w.F; the hard filter multiplies S by the
// indicator that any rule fires.
struct RuleRecModel {
    std::unique_ptr<BaseRecommender> base;
    bool rule_using = false;
    CombinerConfig combiner;
    std::vector<MinedRule> rules;
    std::vector<double> w;  // per rule; unused by the hard filter
    double sel_bias = 0.0;
    std::shared_ptr<RuleFeatureProvider> features;

    double effective_scale() const {
        return variant_trains_weights(combiner.variant) ? 1.0 : combiner.fixed_scale;
    }
    double score(int u, int i, std::span<const int> history) const;
    // base score and per-rule contributions; contributions sum to score - base
    // for the additive variants
    double base_score(int u, int i) const { return base->score(u, i); }
    std::vector<double> contributions(int u, int i, std::span<const int> history) const;
};

RuleRecModel make_base_only(std::unique_ptr<BaseRecommender> base);
// Frozen weights are required by the selection-weight variant and must match
// the rule count; trainable variants start from zero weights.
RuleRecModel make_rulerec(std::unique_ptr<BaseRecommender> base, const HeteroGraph& g,
                          std::vector<MinedRule> rules, const CombinerConfig& cfg,
                          const std::vector<double>* frozen_w = nullptr);

enum class TrainMode { Base, TwoStep, MultiTask };

const char* train_mode_name(TrainMode m);
std::optional<TrainMode> train_mode_from_name(const std::string& s);

using RuleEpochObserver =
    std::function<void(int epoch, const std::vector<double>& base_params,
                       const std::vector<double>& w, double sel_bias, double mean_loss)>;

// Pairwise training of the combined score; the joint mode adds one full-batch
// step of lambda * selection objective on the shared weights per epoch.
TrainResult train_rulerec(RuleRecModel& m, TrainMode mode,
                          const std::vector<TrainPositive>& positives,
                          const std::vector<std::vector<int>>& user_items,
                          const std::vector<std::vector<int>>& histories, const TrainConfig& cfg,
                          const LabeledPairSet* selection_data = nullptr,
                          const RuleEpochObserver& observer = nullptr);

// Candidates ranked by combined score, ties by ascending item id.
std::vector<std::pair<int, double>> recommend_topk(const RuleRecModel& m, int user,
                                                   std::span<const int> candidates,
                                                   std::span<const int> history, int k);

struct Explanation {
    int rule_index = -1;
    double contribution = 0.0;
    double feature = 0.0;
    int witness_item = -1;                  // history item with the largest pair feature
    std::vector<std::string> witness_path;  // node labels along one realizing walk
};

// Per-rule explanations for recommending `item` to `user`, ranked by
// contribution; rules whose summed feature is zero are omitted.
std::vector<Explanation> explain(const RuleRecModel& m, int user, int item,
                                 std::span<const int> history, int top_r);

// One concrete walk from src to dst realizing the rule under the provider's
// walk semantics, as node ids; absorbed (stay-put) steps do not add nodes.
std::optional<std::vector<int>> find_witness_path(const HeteroGraph& g, int src, int dst,
                                                  const Rule& rule, const MinerConfig& cfg);

struct CheckpointMeta {
    std::string rules_digest;     // digest of the rules file the model was trained from
    std::string config_digest;
    std::string inputs_json;      // {"path": "digest", ...}
    std::uint64_t train_seed = 0;
    std::uint64_t split_seed = 0;
};

void save_checkpoint(const std::string& path, const RuleRecModel& m, TrainMode mode,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    RuleRecModel model;
    TrainMode mode = TrainMode::Base;
    CheckpointMeta meta;
};

// `g` may be null only for base-only checkpoints; rule-using ones need the
// graph to rebind relation ids and features.
LoadedCheckpoint load_checkpoint(const std::string& path, const HeteroGraph* g);

}
