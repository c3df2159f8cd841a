#include "krec/models.hpp"

#include <cmath>
#include <stdexcept>

#include "krec/rng.hpp"

namespace krec {

const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::BprMf: return "bprmf";
        case ModelKind::Gmf: return "gmf";
        case ModelKind::Mlp: return "mlp";
        case ModelKind::Ncf: return "ncf";
    }
    return "?";
}

std::optional<ModelKind> model_kind_from_name(const std::string& s) {
    if (s == "bprmf") return ModelKind::BprMf;
    if (s == "gmf") return ModelKind::Gmf;
    if (s == "mlp") return ModelKind::Mlp;
    if (s == "ncf") return ModelKind::Ncf;
    return std::nullopt;
}

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Logistic: return "logistic";
    }
    return "?";
}

std::optional<Activation> activation_from_name(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "logistic") return Activation::Logistic;
    return std::nullopt;
}

double bpr_pair_loss(double delta) {
    // softplus(-delta), split so exp never overflows
    if (delta >= 0.0) return std::log1p(std::exp(-delta));
    return -delta + std::log1p(std::exp(delta));
}

double bpr_pair_loss_grad(double delta) {
    // sigmoid(delta) - 1, computed from the stable branch
    if (delta >= 0.0) {
        double e = std::exp(-delta);
        return -e / (1.0 + e);
    }
    return -1.0 / (1.0 + std::exp(delta));
}

namespace {

double activate(Activation a, double t) {
    switch (a) {
        case Activation::Identity: return t;
        case Activation::Relu: return t > 0.0 ? t : 0.0;
        case Activation::Tanh: return std::tanh(t);
        case Activation::Logistic: return 1.0 / (1.0 + std::exp(-t));
    }
    return t;
}

// derivative as a function of the pre-activation value
double activate_grad(Activation a, double t) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::Relu: return t > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: {
            double z = std::tanh(t);
            return 1.0 - z * z;
        }
        case Activation::Logistic: {
            double s = 1.0 / (1.0 + std::exp(-t));
            return s * (1.0 - s);
        }
    }
    return 1.0;
}

double sq_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

class BprMfModel final : public BaseRecommender {
public:
    BprMfModel(const ModelConfig& cfg, int n_users, int n_items, std::uint64_t seed)
        : cfg_(cfg), n_users_(n_users), n_items_(n_items) {
        if (cfg.dim < 1) throw std::invalid_argument("embedding dim must be at least 1");
        params_.resize(static_cast<std::size_t>(n_users + n_items) * cfg.dim);
        Rng rng(derive_seed(seed, "model-init"));
        for (auto& p : params_) p = rng.next_double(-cfg.init_scale, cfg.init_scale);
    }

    ModelKind kind() const override { return ModelKind::BprMf; }
    const ModelConfig& config() const override { return cfg_; }
    int n_users() const override { return n_users_; }
    int n_items() const override { return n_items_; }

    double score(int u, int i) const override {
        check(u, i);
        const double* U = user_row(u);
        const double* I = item_row(i);
        double s = 0.0;
        for (int k = 0; k < cfg_.dim; ++k) s += U[k] * I[k];
        return s;
    }

    std::size_t n_params() const override { return params_.size(); }
    std::vector<double> get_params() const override { return params_; }
    void set_params(std::span<const double> p) override {
        if (p.size() != params_.size()) throw std::invalid_argument("parameter size mismatch");
        params_.assign(p.begin(), p.end());
    }

    void accumulate_pair_grad(int u, int p, int n, double cp, double cn, double l2,
                              GradAccum& grad) const override {
        check(u, p);
        check(u, n);
        if (p == n) throw std::invalid_argument("positive and negative item must differ");
        if (grad.size() != params_.size()) grad.resize(params_.size());
        std::size_t uo = user_off(u), po = item_off(p), no = item_off(n);
        for (int k = 0; k < cfg_.dim; ++k) {
            double Uk = params_[uo + k], Pk = params_[po + k], Nk = params_[no + k];
            grad.add(uo + k, cp * Pk + cn * Nk + 2.0 * l2 * Uk);
            grad.add(po + k, cp * Uk + 2.0 * l2 * Pk);
            grad.add(no + k, cn * Uk + 2.0 * l2 * Nk);
        }
    }

    double touched_l2(int u, int p, int n) const override {
        return sq_norm({user_row(u), static_cast<std::size_t>(cfg_.dim)}) +
               sq_norm({item_row(p), static_cast<std::size_t>(cfg_.dim)}) +
               sq_norm({item_row(n), static_cast<std::size_t>(cfg_.dim)});
    }

    void apply_step(GradAccum& grad, double lr) override {
        grad.consume([&](std::size_t i, double g) { params_[i] -= lr * g; });
    }

    std::unique_ptr<BaseRecommender> clone() const override {
        return std::make_unique<BprMfModel>(*this);
    }

private:
    void check(int u, int i) const {
        if (u < 0 || u >= n_users_) throw std::out_of_range("user id out of range: " + std::to_string(u));
        if (i < 0 || i >= n_items_) throw std::out_of_range("item id out of range: " + std::to_string(i));
    }
    std::size_t user_off(int u) const { return static_cast<std::size_t>(u) * cfg_.dim; }
    std::size_t item_off(int i) const {
        return (static_cast<std::size_t>(n_users_) + i) * cfg_.dim;
    }
    const double* user_row(int u) const { return params_.data() + user_off(u); }
    const double* item_row(int i) const { return params_.data() + item_off(i); }

    ModelConfig cfg_;
    int n_users_, n_items_;
    std::vector<double> params_;
};

// GMF, MLP and their fusion share one parameter layout; unused tables are
// simply absent for the two single-branch kinds.
class NeuralCfModel final : public BaseRecommender {
public:
    NeuralCfModel(const ModelConfig& cfg, int n_users, int n_items, std::uint64_t seed)
        : cfg_(cfg), n_users_(n_users), n_items_(n_items) {
        if (cfg.dim < 1) throw std::invalid_argument("embedding dim must be at least 1");
        if (has_mlp() && cfg.layers.empty())
            throw std::invalid_argument("tower needs at least one layer");
        if (cfg.mix_alpha < 0.0 || cfg.mix_alpha > 1.0)
            throw std::invalid_argument("mix_alpha must lie in [0, 1]");
        layout();
        params_.resize(total_);
        Rng rng(derive_seed(seed, "model-init"));
        for (auto& p : params_) p = rng.next_double(-cfg.init_scale, cfg.init_scale);
        if (has_mlp())
            for (std::size_t l = 0; l < cfg_.layers.size(); ++l)
                for (int r = 0; r < cfg_.layers[l]; ++r) params_[bias_off_[l] + r] = 0.0;
    }

    ModelKind kind() const override { return cfg_.kind; }
    const ModelConfig& config() const override { return cfg_; }
    int n_users() const override { return n_users_; }
    int n_items() const override { return n_items_; }

    double score(int u, int i) const override {
        Forward f;
        return forward(u, i, f);
    }

    std::size_t n_params() const override { return params_.size(); }
    std::vector<double> get_params() const override { return params_; }
    void set_params(std::span<const double> p) override {
        if (p.size() != params_.size()) throw std::invalid_argument("parameter size mismatch");
        params_.assign(p.begin(), p.end());
    }

    void accumulate_pair_grad(int u, int p, int n, double cp, double cn, double l2,
                              GradAccum& grad) const override {
        check(u, p);
        check(u, n);
        if (p == n) throw std::invalid_argument("positive and negative item must differ");
        if (grad.size() != params_.size()) grad.resize(params_.size());
        backward(u, p, cp, grad);
        backward(u, n, cn, grad);
        // one L2 contribution per touched group, shared params included once
        add_l2_rows(grad, l2, u, p, n);
    }

    double touched_l2(int u, int p, int n) const override {
        double s = 0.0;
        if (has_gmf()) {
            s += sq_norm(row(gmf_user_, u)) + sq_norm(row(gmf_item_, p)) + sq_norm(row(gmf_item_, n));
        }
        if (has_mlp()) {
            s += sq_norm(row(mlp_user_, u)) + sq_norm(row(mlp_item_, p)) + sq_norm(row(mlp_item_, n));
            for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
                s += sq_norm({params_.data() + weight_off_[l], weight_size(l)});
                s += sq_norm({params_.data() + bias_off_[l], static_cast<std::size_t>(cfg_.layers[l])});
            }
        }
        s += sq_norm({params_.data() + out_off_, out_dim_});
        return s;
    }

    void apply_step(GradAccum& grad, double lr) override {
        grad.consume([&](std::size_t i, double g) { params_[i] -= lr * g; });
    }

    std::unique_ptr<BaseRecommender> clone() const override {
        return std::make_unique<NeuralCfModel>(*this);
    }

private:
    bool has_gmf() const { return cfg_.kind != ModelKind::Mlp; }
    bool has_mlp() const { return cfg_.kind != ModelKind::Gmf; }

    void layout() {
        std::size_t off = 0;
        auto take = [&](std::size_t n) {
            std::size_t o = off;
            off += n;
            return o;
        };
        std::size_t d = cfg_.dim;
        if (has_gmf()) {
            gmf_user_ = take(n_users_ * d);
            gmf_item_ = take(n_items_ * d);
        }
        if (has_mlp()) {
            mlp_user_ = take(n_users_ * d);
            mlp_item_ = take(n_items_ * d);
            int in = static_cast<int>(2 * d);
            for (int outw : cfg_.layers) {
                weight_off_.push_back(take(static_cast<std::size_t>(outw) * in));
                bias_off_.push_back(take(outw));
                in = outw;
            }
        }
        out_dim_ = 0;
        if (has_gmf()) out_dim_ += d;
        if (has_mlp()) out_dim_ += cfg_.layers.back();
        out_off_ = take(out_dim_);
        total_ = off;
    }

    std::size_t weight_size(std::size_t l) const {
        std::size_t in = l == 0 ? 2 * cfg_.dim : cfg_.layers[l - 1];
        return static_cast<std::size_t>(cfg_.layers[l]) * in;
    }

    std::span<const double> row(std::size_t table_off, int idx) const {
        return {params_.data() + table_off + static_cast<std::size_t>(idx) * cfg_.dim,
                static_cast<std::size_t>(cfg_.dim)};
    }

    void check(int u, int i) const {
        if (u < 0 || u >= n_users_) throw std::out_of_range("user id out of range: " + std::to_string(u));
        if (i < 0 || i >= n_items_) throw std::out_of_range("item id out of range: " + std::to_string(i));
    }

    struct Forward {
        std::vector<double> gmf;                     // elementwise product
        std::vector<std::vector<double>> pre;        // tower pre-activations per layer
        std::vector<std::vector<double>> z;          // z[0] = concat input, z[l+1] = activations
        std::vector<double> feat;                    // what the output vector sees
        double t = 0.0;                              // output pre-activation
    };

    double forward(int u, int i, Forward& f) const {
        check(u, i);
        int d = cfg_.dim;
        if (has_gmf()) {
            f.gmf.resize(d);
            auto U = row(gmf_user_, u), I = row(gmf_item_, i);
            for (int k = 0; k < d; ++k) f.gmf[k] = U[k] * I[k];
        }
        if (has_mlp()) {
            auto A = row(mlp_user_, u), B = row(mlp_item_, i);
            f.z.assign(1, std::vector<double>(2 * d));
            for (int k = 0; k < d; ++k) {
                f.z[0][k] = A[k];
                f.z[0][d + k] = B[k];
            }
            f.pre.clear();
            for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
                const std::vector<double>& in = f.z.back();
                int rows = cfg_.layers[l];
                std::vector<double> pre(rows, 0.0);
                const double* W = params_.data() + weight_off_[l];
                const double* b = params_.data() + bias_off_[l];
                for (int r = 0; r < rows; ++r) {
                    double acc = b[r];
                    const double* wr = W + static_cast<std::size_t>(r) * in.size();
                    for (std::size_t c = 0; c < in.size(); ++c) acc += wr[c] * in[c];
                    pre[r] = acc;
                }
                std::vector<double> z(rows);
                for (int r = 0; r < rows; ++r) z[r] = activate(cfg_.hidden_act, pre[r]);
                f.pre.push_back(std::move(pre));
                f.z.push_back(std::move(z));
            }
        }
        f.feat.clear();
        if (cfg_.kind == ModelKind::Gmf) {
            f.feat = f.gmf;
        } else if (cfg_.kind == ModelKind::Mlp) {
            f.feat = f.z.back();
        } else {
            f.feat.reserve(out_dim_);
            for (double v : f.gmf) f.feat.push_back(cfg_.mix_alpha * v);
            for (double v : f.z.back()) f.feat.push_back((1.0 - cfg_.mix_alpha) * v);
        }
        const double* out = params_.data() + out_off_;
        f.t = 0.0;
        for (std::size_t k = 0; k < out_dim_; ++k) f.t += out[k] * f.feat[k];
        return activate(cfg_.out_act, f.t);
    }

    void backward(int u, int i, double coef, GradAccum& grad) const {
        Forward f;
        forward(u, i, f);
        int d = cfg_.dim;
        double dt = coef * activate_grad(cfg_.out_act, f.t);
        const double* out = params_.data() + out_off_;
        std::vector<double> dfeat(out_dim_);
        for (std::size_t k = 0; k < out_dim_; ++k) {
            grad.add(out_off_ + k, dt * f.feat[k]);
            dfeat[k] = dt * out[k];
        }
        std::size_t mlp_feat_off = 0;
        if (has_gmf()) {
            double scale = cfg_.kind == ModelKind::Ncf ? cfg_.mix_alpha : 1.0;
            auto U = row(gmf_user_, u), I = row(gmf_item_, i);
            for (int k = 0; k < d; ++k) {
                double dg = dfeat[k] * scale;
                grad.add(gmf_user_ + static_cast<std::size_t>(u) * d + k, dg * I[k]);
                grad.add(gmf_item_ + static_cast<std::size_t>(i) * d + k, dg * U[k]);
            }
            mlp_feat_off = d;
        }
        if (has_mlp()) {
            double scale = cfg_.kind == ModelKind::Ncf ? 1.0 - cfg_.mix_alpha : 1.0;
            std::vector<double> dz(cfg_.layers.back());
            for (std::size_t k = 0; k < dz.size(); ++k) dz[k] = dfeat[mlp_feat_off + k] * scale;
            for (int l = static_cast<int>(cfg_.layers.size()) - 1; l >= 0; --l) {
                const std::vector<double>& in = f.z[l];
                int rows = cfg_.layers[l];
                std::vector<double> dpre(rows);
                for (int r = 0; r < rows; ++r)
                    dpre[r] = dz[r] * activate_grad(cfg_.hidden_act, f.pre[l][r]);
                const double* W = params_.data() + weight_off_[l];
                std::vector<double> din(in.size(), 0.0);
                for (int r = 0; r < rows; ++r) {
                    const double* wr = W + static_cast<std::size_t>(r) * in.size();
                    std::size_t wro = weight_off_[l] + static_cast<std::size_t>(r) * in.size();
                    for (std::size_t c = 0; c < in.size(); ++c) {
                        grad.add(wro + c, dpre[r] * in[c]);
                        din[c] += wr[c] * dpre[r];
                    }
                    grad.add(bias_off_[l] + r, dpre[r]);
                }
                dz = std::move(din);
            }
            for (int k = 0; k < d; ++k) {
                grad.add(mlp_user_ + static_cast<std::size_t>(u) * d + k, dz[k]);
                grad.add(mlp_item_ + static_cast<std::size_t>(i) * d + k, dz[d + k]);
            }
        }
    }

    void add_l2_row(GradAccum& grad, double l2, std::size_t off, std::size_t count) const {
        for (std::size_t k = 0; k < count; ++k) grad.add(off + k, 2.0 * l2 * params_[off + k]);
    }

    void add_l2_rows(GradAccum& grad, double l2, int u, int p, int n) const {
        std::size_t d = cfg_.dim;
        if (has_gmf()) {
            add_l2_row(grad, l2, gmf_user_ + u * d, d);
            add_l2_row(grad, l2, gmf_item_ + p * d, d);
            add_l2_row(grad, l2, gmf_item_ + n * d, d);
        }
        if (has_mlp()) {
            add_l2_row(grad, l2, mlp_user_ + u * d, d);
            add_l2_row(grad, l2, mlp_item_ + p * d, d);
            add_l2_row(grad, l2, mlp_item_ + n * d, d);
            for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
                add_l2_row(grad, l2, weight_off_[l], weight_size(l));
                add_l2_row(grad, l2, bias_off_[l], cfg_.layers[l]);
            }
        }
        add_l2_row(grad, l2, out_off_, out_dim_);
    }

    ModelConfig cfg_;
    int n_users_, n_items_;
    std::size_t gmf_user_ = 0, gmf_item_ = 0, mlp_user_ = 0, mlp_item_ = 0;
    std::vector<std::size_t> weight_off_, bias_off_;
    std::size_t out_off_ = 0, out_dim_ = 0, total_ = 0;
    std::vector<double> params_;
};

}  // namespace

std::unique_ptr<BaseRecommender> make_model(const ModelConfig& cfg, int n_users, int n_items,
                                            std::uint64_t seed) {
    if (n_users < 1 || n_items < 2)
        throw std::invalid_argument("model needs at least one user and two items");
    if (cfg.kind == ModelKind::BprMf) return std::make_unique<BprMfModel>(cfg, n_users, n_items, seed);
    return std::make_unique<NeuralCfModel>(cfg, n_users, n_items, seed);
}

std::vector<std::vector<int>> user_item_sets(const InteractionLog& log) {
    std::vector<std::vector<int>> sets(log.user_count);
    for (const auto& r : log.records) sets[r.user].push_back(r.item);
    for (auto& s : sets) {
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
    }
    return sets;
}

TrainResult train_base(BaseRecommender& m, const std::vector<TrainPositive>& positives,
                       const std::vector<std::vector<int>>& user_items, const TrainConfig& cfg,
                       const EpochObserver& observer) {
    if (positives.empty()) throw std::invalid_argument("no training interactions");
    for (const auto& pos : positives) {
        if (pos.user < 0 || pos.user >= static_cast<int>(user_items.size()))
            throw std::invalid_argument("training user outside the interaction log");
        if (static_cast<int>(user_items[pos.user].size()) >= m.n_items())
            throw std::runtime_error("user " + std::to_string(pos.user) +
                                     " interacted with every item; no negatives to sample");
    }

    Rng rng(derive_seed(cfg.seed, "train"));
    std::vector<std::size_t> order(positives.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    GradAccum grad;
    grad.resize(m.n_params());
    TrainResult res;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle) rng.shuffle(order);
        double loss_sum = 0.0;
        long long count = 0;
        for (std::size_t idx : order) {
            int u = positives[idx].user;
            int p = positives[idx].item;
            const auto& owned = user_items[u];
            for (int t = 0; t < cfg.neg_per_pos; ++t) {
                int n;
                do {
                    n = static_cast<int>(rng.next_below(m.n_items()));
                } while (std::binary_search(owned.begin(), owned.end(), n));
                double delta = m.score(u, p) - m.score(u, n);
                double g = bpr_pair_loss_grad(delta);
                loss_sum += bpr_pair_loss(delta) + cfg.l2 * m.touched_l2(u, p, n);
                ++count;
                m.accumulate_pair_grad(u, p, n, g, -g, cfg.l2, grad);
                m.apply_step(grad, cfg.lr);
            }
        }
        res.epoch_loss.push_back(loss_sum / static_cast<double>(count));
        if (observer) observer(epoch, res.epoch_loss.back());
    }
    return res;
}

}
