#pragma once

// Reverse-mode gradients of the unrolled autoencoders, mini-batch SGD with
// early stopping, and export of the learned measurement matrix.
//
// Gradients of the per-vector loss ||x - x_hat||^2. sign() is treated as
// piecewise constant and ReLU'(0) = 0. Phi is tied across the encoder, the
// decoder start and every layer, so its gradient sums all occurrences.
// For a layer p = c - a d + Phi^T Phi w (w = a d, or w = prev - c + a d for
// the residual form) with output adjoint g:
//
//   d/dPhi   += (Phi w) g^T + (Phi g) w^T
//   d/dalpha += (1/t) (-g.d + (Phi g).(Phi d))
//   d/dc     += g                  (simple)
//   d/dc     += g - Phi^T Phi g    (residual), d/dprev += Phi^T Phi g

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "unfold.hpp"

namespace bpae {

struct TrainConfig {
    double learning_rate = 0.001;
    int batch_size = 128;
    int max_epochs = 1000;
    int patience = 25;
    double alpha_init = 1.0;
    /// Standard deviation of the initial entries; 0 selects 1/sqrt(N).
    double phi_init_std = 0.0;
    int depth = 15;
    BatchNorm batch_norm = BatchNorm::off;
    /// Max-norm clip on the Phi gradient; 0 disables.
    double grad_clip = 0.0;
    std::uint64_t seed = 1;
    unsigned threads = 1;

    void validate() const
    {
        if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (patience < 1 || patience > max_epochs) throw ConfigError("patience must be in [1, max_epochs]");
        if (!(alpha_init > 0.0)) throw ConfigError("alpha_init must be positive");
        if (!(phi_init_std >= 0.0)) throw ConfigError("phi_init_std must be nonnegative");
        if (depth < 1) throw ConfigError("depth must be >= 1");
        if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be nonnegative");
    }
};

struct Gradients {
    Mat d_phi;
    double d_alpha = 0.0;

    static Gradients zeros_like(const UnfoldModel& m) { return {Mat::Zero(m.phi.rows(), m.phi.cols()), 0.0}; }

    Gradients& operator+=(const Gradients& o)
    {
        d_phi += o.d_phi;
        d_alpha += o.d_alpha;
        return *this;
    }
    Gradients& operator*=(double s)
    {
        d_phi *= s;
        d_alpha *= s;
        return *this;
    }
    [[nodiscard]] bool finite() const { return d_phi.allFinite() && std::isfinite(d_alpha); }
};

struct TrainReport {
    /// Index 0 holds the losses of the initial model, index e those after epoch e.
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int stopped_epoch = 0;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool diverged = false;
};

class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const std::string& what, TrainReport r) : NumericError(what), report(std::move(r)) {}
    TrainReport report;
};

inline constexpr double kAlphaFloor = 1e-6;

inline double mse_loss(const std::vector<Vec>& xs, const std::vector<Vec>& x_hats)
{
    if (xs.empty()) throw DimensionError("mse of an empty batch");
    require_dims(xs.size() == x_hats.size(), "batch sizes");
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        require_dims(xs[i].size() == x_hats[i].size(), "vector lengths");
        sum += (xs[i] - x_hats[i]).squaredNorm();
    }
    return sum / static_cast<double>(xs.size());
}

namespace detail {

/// Adjoint of the last decoder state from the adjoint of the signal-space output.
inline Vec output_adjoint(const UnfoldModel& model, const Vec& last_state, const Vec& d_out)
{
    if (!is_cat(model.variant)) return d_out;
    const Eigen::Index n = model.n();
    Vec g(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        g[i] = last_state[i] > 0.0 ? d_out[i] : 0.0;
        g[n + i] = last_state[n + i] > 0.0 ? -d_out[i] : 0.0;
    }
    return g;
}

/// Backward through layer t given g = adjoint of its (pre-normalization)
/// output. Accumulates into the adjoints of earlier states and into grads.
inline void layer_backward(const UnfoldModel& model, const std::vector<Vec>& states, int t, const Vec& g,
                           std::vector<Vec>& adjoints, Gradients& grads)
{
    const Mat& phi = model.phi;
    const auto cur_i = static_cast<std::size_t>(t - 1);
    const Vec& cur = states[cur_i];
    const double step = model.alpha / t;
    const Vec d = signum(cur);
    const Vec phi_g = phi * g;
    Vec w = step * d;
    if (is_residual(model.variant)) {
        const auto prev_i = static_cast<std::size_t>(t >= 2 ? t - 2 : 0);
        w += states[prev_i] - cur;
        const Vec gram_g = phi.transpose() * phi_g;
        adjoints[cur_i] += g - gram_g;
        adjoints[prev_i] += gram_g;
    } else {
        adjoints[cur_i] += g;
    }
    const Vec phi_d = phi * d;
    grads.d_alpha += (-g.dot(d) + phi_g.dot(phi_d)) / t;
    grads.d_phi.noalias() += (phi * w) * g.transpose();
    grads.d_phi.noalias() += phi_g * w.transpose();
}

/// Backward through x0 = Phi^T y and y = Phi z.
inline void input_backward(const UnfoldModel& model, const ForwardTrace& tr, const Vec& g0, Gradients& grads)
{
    grads.d_phi.noalias() += tr.y * g0.transpose();
    const Vec d_y = model.phi * g0;
    grads.d_phi.noalias() += d_y * tr.input.transpose();
}

inline void check_trace(const UnfoldModel& model, const Vec& x, const ForwardTrace& tr)
{
    require_dims(tr.states.size() == static_cast<std::size_t>(model.depth) + 1, "trace depth vs model depth");
    require_dims(tr.input.size() == model.state_dim() && tr.y.size() == model.m(), "trace shapes vs model");
    require_dims(x.size() == model.n(), "input length vs model");
}

} // namespace detail

/// Gradient of ||x - x_hat||^2 for one vector. Frozen layer normalization
/// (inference mode) is differentiated as the fixed affine map it is.
inline Gradients backward(const UnfoldModel& model, const Vec& x, const ForwardTrace& tr)
{
    detail::check_trace(model, x, tr);
    const bool norm = model.normalizes_layers();
    Gradients grads = Gradients::zeros_like(model);
    std::vector<Vec> adj(tr.states.size(), Vec::Zero(model.state_dim()));
    adj.back() = detail::output_adjoint(model, tr.states.back(), 2.0 * (tr.output - x));
    for (int t = model.depth; t >= 1; --t) {
        Vec g = adj[static_cast<std::size_t>(t)];
        if (norm && t < model.depth) {
            const auto k = static_cast<std::size_t>(t - 1);
            g = (g.array() / (model.bn_var[k].array() + kBatchNormEps).sqrt()).matrix();
        }
        detail::layer_backward(model, tr.states, t, g, adj, grads);
    }
    detail::input_backward(model, tr, adj.front(), grads);
    return grads;
}

/// Loss and gradient of the batch mean of ||x - x_hat||^2.
struct BatchResult {
    double loss = 0.0;
    Gradients grads;
};

/// Inference-mode batch gradient (no normalization, or frozen statistics).
/// Per-vector gradients are summed in index order irrespective of `threads`.
inline BatchResult batch_gradients(const UnfoldModel& model, const std::vector<const Vec*>& batch, unsigned threads = 1)
{
    if (batch.empty()) throw DimensionError("empty batch");
    BatchResult out{0.0, Gradients::zeros_like(model)};
    if (threads <= 1) {
        for (const Vec* x : batch) {
            auto [x_hat, tr] = forward(model, *x);
            out.loss += (*x - x_hat).squaredNorm();
            out.grads += backward(model, *x, tr);
        }
    } else {
        std::vector<Gradients> per(batch.size());
        std::vector<double> losses(batch.size());
        parallel_for(batch.size(), threads, [&](std::size_t i) {
            auto [x_hat, tr] = forward(model, *batch[i]);
            losses[i] = (*batch[i] - x_hat).squaredNorm();
            per[i] = backward(model, *batch[i], tr);
        });
        for (std::size_t i = 0; i < batch.size(); ++i) {
            out.loss += losses[i];
            out.grads += per[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.grads *= inv;
    return out;
}

/// Training-mode batch gradient with per-layer normalization using the
/// batch's own statistics (zero mean, unit variance per coordinate, no affine
/// part) on every hidden layer. Also returns the batch statistics so the
/// caller can update running estimates.
struct NormalizedBatchResult {
    BatchResult result;
    std::vector<Vec> batch_mean, batch_var;
};

inline NormalizedBatchResult batch_gradients_normalized(const UnfoldModel& model, const std::vector<const Vec*>& batch)
{
    if (batch.empty()) throw DimensionError("empty batch");
    const std::size_t b = batch.size();
    const auto depth = static_cast<std::size_t>(model.depth);
    const Eigen::Index k = model.state_dim();
    std::vector<ForwardTrace> tr(b);
    for (std::size_t i = 0; i < b; ++i) {
        tr[i].input = lift_input(model, *batch[i]);
        tr[i].y = model.phi * tr[i].input;
        tr[i].states.push_back(decoder_init(model, tr[i].y));
    }
    NormalizedBatchResult out;
    std::vector<Vec> inv_sd;
    for (int t = 1; t <= model.depth; ++t) {
        std::vector<Vec> next(b);
        for (std::size_t i = 0; i < b; ++i) next[i] = apply_layer(model, tr[i].states, t);
        if (t < model.depth) {
            Vec mean = Vec::Zero(k), var = Vec::Zero(k);
            for (const auto& p : next) mean += p;
            mean /= static_cast<double>(b);
            for (const auto& p : next) var += (p - mean).cwiseAbs2();
            var /= static_cast<double>(b);
            const Vec isd = (var.array() + kBatchNormEps).rsqrt().matrix();
            for (std::size_t i = 0; i < b; ++i) {
                tr[i].pre_norm.push_back(next[i]);
                next[i] = (next[i] - mean).cwiseProduct(isd);
            }
            out.batch_mean.push_back(std::move(mean));
            out.batch_var.push_back(std::move(var));
            inv_sd.push_back(isd);
        }
        for (std::size_t i = 0; i < b; ++i) tr[i].states.push_back(std::move(next[i]));
    }

    Gradients grads = Gradients::zeros_like(model);
    std::vector<std::vector<Vec>> adj(b, std::vector<Vec>(depth + 1, Vec::Zero(k)));
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        tr[i].output = decode_output(model, tr[i].states.back());
        loss += (*batch[i] - tr[i].output).squaredNorm();
        adj[i][depth] = detail::output_adjoint(model, tr[i].states.back(), 2.0 * (tr[i].output - *batch[i]));
    }
    for (int t = model.depth; t >= 1; --t) {
        const auto ts = static_cast<std::size_t>(t);
        std::vector<Vec> g(b);
        if (t < model.depth) {
            // Normalization backward, coupling all vectors of the batch.
            Vec mean_g = Vec::Zero(k), mean_gx = Vec::Zero(k);
            for (std::size_t i = 0; i < b; ++i) {
                mean_g += adj[i][ts];
                mean_gx += adj[i][ts].cwiseProduct(tr[i].states[ts]);
            }
            mean_g /= static_cast<double>(b);
            mean_gx /= static_cast<double>(b);
            const Vec& isd = inv_sd[ts - 1];
            for (std::size_t i = 0; i < b; ++i)
                g[i] = (adj[i][ts] - mean_g - tr[i].states[ts].cwiseProduct(mean_gx)).cwiseProduct(isd);
        } else {
            for (std::size_t i = 0; i < b; ++i) g[i] = adj[i][ts];
        }
        for (std::size_t i = 0; i < b; ++i) detail::layer_backward(model, tr[i].states, t, g[i], adj[i], grads);
    }
    for (std::size_t i = 0; i < b; ++i) detail::input_backward(model, tr[i], adj[i][0], grads);
    const double inv = 1.0 / static_cast<double>(b);
    grads *= inv;
    out.result = {loss * inv, std::move(grads)};
    return out;
}

inline void sgd_step(UnfoldModel& model, const Gradients& grads, double lr)
{
    if (!grads.finite()) throw NumericError("non-finite gradient");
    require_dims(grads.d_phi.rows() == model.phi.rows() && grads.d_phi.cols() == model.phi.cols(), "gradient shape");
    model.phi -= lr * grads.d_phi;
    model.alpha = std::max(model.alpha - lr * grads.d_alpha, kAlphaFloor);
}

/// Scale of the underlying normal whose truncation to [-2 sd, 2 sd] has
/// standard deviation exactly `sd`.
inline double truncated_normal_scale(double sd)
{
    // Variance factor of N(0,1) truncated to [-a, a].
    const auto var_factor = [](double a) {
        const double pdf = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
        const double mass = std::erf(a / std::sqrt(2.0));
        return 1.0 - 2.0 * a * pdf / mass;
    };
    // Solve (2 / a)^2 var_factor(a) = 1 for the truncation point a in sd units.
    double lo = 0.5, hi = 2.0;
    for (int i = 0; i < 200; ++i) {
        const double a = 0.5 * (lo + hi);
        if ((4.0 / (a * a)) * var_factor(a) > 1.0) lo = a;
        else hi = a;
    }
    return 2.0 * sd / (0.5 * (lo + hi));
}

inline UnfoldModel init_model(Variant variant, int n, int m, const TrainConfig& cfg)
{
    cfg.validate();
    if (n < 1 || m < 1) throw ConfigError("model dimensions must be positive");
    UnfoldModel model;
    model.variant = variant;
    model.alpha = cfg.alpha_init;
    model.depth = cfg.depth;
    model.batch_norm = cfg.batch_norm;
    const int cols = is_cat(variant) ? 2 * n : n;
    const double sd = cfg.phi_init_std > 0.0 ? cfg.phi_init_std : 1.0 / std::sqrt(static_cast<double>(n));
    const double bound = 2.0 * sd;
    std::mt19937_64 rng = substream(cfg.seed, 0x706869u);
    std::normal_distribution<double> gauss(0.0, truncated_normal_scale(sd));
    model.phi.resize(m, cols);
    for (Eigen::Index j = 0; j < model.phi.cols(); ++j)
        for (Eigen::Index i = 0; i < model.phi.rows(); ++i) {
            double v = gauss(rng);
            while (std::abs(v) > bound) v = gauss(rng);
            model.phi(i, j) = v;
        }
    if (cfg.batch_norm == BatchNorm::per_layer) {
        model.bn_mean.assign(static_cast<std::size_t>(cfg.depth - 1), Vec::Zero(cols));
        model.bn_var.assign(static_cast<std::size_t>(cfg.depth - 1), Vec::Ones(cols));
    }
    return model;
}

/// Mean per-vector squared error of the model in inference mode.
inline double evaluate_loss(const UnfoldModel& model, const std::vector<Vec>& xs, unsigned threads = 1)
{
    if (xs.empty()) throw DimensionError("mse of an empty set");
    std::vector<double> errs(xs.size());
    parallel_for(xs.size(), threads, [&](std::size_t i) { errs[i] = (xs[i] - reconstruct(model, xs[i])).squaredNorm(); });
    return std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(xs.size());
}

/// NMSE of the autoencoder itself over `xs` (mean of per-vector ||x - x_hat||^2 / ||x||^2).
inline double autoencoder_nmse(const UnfoldModel& model, const std::vector<Vec>& xs, unsigned threads = 1)
{
    if (xs.empty()) throw DimensionError("nmse of an empty set");
    std::vector<double> errs(xs.size());
    parallel_for(xs.size(), threads, [&](std::size_t i) {
        const double nx = xs[i].squaredNorm();
        if (!(nx > 0.0)) throw NumericError("zero-norm reference vector");
        errs[i] = (xs[i] - reconstruct(model, xs[i])).squaredNorm() / nx;
    });
    return std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(xs.size());
}

inline constexpr double kRunningMomentum = 0.1;

/// Early-stopping rule after `epoch`. The untrained model (epoch 0) can be
/// the best candidate, but the patience window opens at epoch 1.
inline bool patience_exhausted(int epoch, int best_epoch, int patience)
{
    return epoch - std::max(best_epoch, 1) >= patience;
}

/// Optional per-epoch callback (epoch, train_loss, val_loss).
using EpochCallback = std::function<void(int, double, double)>;

/// Mini-batch SGD over the training vectors with early stopping on the
/// validation loss. Returns the parameters of the best validation epoch.
inline std::pair<UnfoldModel, TrainReport> train(const UnfoldModel& init, const std::vector<Vec>& train_set,
                                                 const std::vector<Vec>& val_set, const TrainConfig& cfg,
                                                 const EpochCallback& on_epoch = {})
{
    cfg.validate();
    init.validate();
    if (train_set.empty() || val_set.empty()) throw ConfigError("training and validation sets must be nonempty");
    UnfoldModel model = init;
    TrainReport rep;
    const bool batch_stats = model.batch_norm == BatchNorm::per_layer;
    if (batch_stats && model.bn_mean.empty()) {
        model.bn_mean.assign(static_cast<std::size_t>(model.depth - 1), Vec::Zero(model.state_dim()));
        model.bn_var.assign(static_cast<std::size_t>(model.depth - 1), Vec::Ones(model.state_dim()));
    }

    const auto record = [&](int epoch, double tl, double vl) {
        rep.train_loss.push_back(tl);
        rep.val_loss.push_back(vl);
        if (on_epoch) on_epoch(epoch, tl, vl);
        if (!std::isfinite(tl) || !std::isfinite(vl)) {
            rep.diverged = true;
            rep.stopped_epoch = epoch;
            throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch), rep);
        }
    };

    record(0, evaluate_loss(model, train_set, cfg.threads), evaluate_loss(model, val_set, cfg.threads));
    UnfoldModel best = model;
    rep.best_val_loss = rep.val_loss.back();
    rep.best_epoch = 0;

    std::mt19937_64 rng = substream(cfg.seed, 0x7368756666u);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<const Vec*> batch;

    int epoch = 1;
    for (; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_set[order[i]]);
            BatchResult br;
            if (batch_stats) {
                auto nb = batch_gradients_normalized(model, batch);
                br = std::move(nb.result);
                for (std::size_t l = 0; l < nb.batch_mean.size(); ++l) {
                    model.bn_mean[l] = (1.0 - kRunningMomentum) * model.bn_mean[l] + kRunningMomentum * nb.batch_mean[l];
                    model.bn_var[l] = (1.0 - kRunningMomentum) * model.bn_var[l] + kRunningMomentum * nb.batch_var[l];
                }
            } else {
                br = batch_gradients(model, batch, cfg.threads);
            }
            if (!std::isfinite(br.loss) || !br.grads.finite()) {
                rep.diverged = true;
                rep.stopped_epoch = epoch;
                throw TrainingDiverged("non-finite loss or gradient in epoch " + std::to_string(epoch), rep);
            }
            if (cfg.grad_clip > 0.0) {
                const double norm = br.grads.d_phi.norm();
                if (norm > cfg.grad_clip) br.grads.d_phi *= cfg.grad_clip / norm;
            }
            sgd_step(model, br.grads, cfg.learning_rate);
            loss_sum += br.loss * static_cast<double>(stop - start);
        }
        const double val = evaluate_loss(model, val_set, cfg.threads);
        record(epoch, loss_sum / static_cast<double>(order.size()), val);
        if (val < rep.best_val_loss) {
            rep.best_val_loss = val;
            rep.best_epoch = epoch;
            best = model;
        } else if (patience_exhausted(epoch, rep.best_epoch, cfg.patience)) {
            break;
        }
    }
    rep.stopped_epoch = std::min(epoch, cfg.max_epochs);
    return {std::move(best), std::move(rep)};
}

inline MatrixKind learned_kind(Variant v)
{
    switch (v) {
    case Variant::sae: return MatrixKind::learned_sae;
    case Variant::gae: return MatrixKind::learned_gae;
    case Variant::saecat: return MatrixKind::learned_saec;
    case Variant::gaecat: return MatrixKind::learned_gaec;
    }
    return MatrixKind::learned_sae;
}

/// Learned Phi with unit-norm columns, tagged by the variant that produced it.
inline MeasurementMatrix export_matrix(const UnfoldModel& model)
{
    model.validate();
    return MeasurementMatrix{normalize_columns(model.phi), learned_kind(model.variant), true, is_cat(model.variant)};
}

} // namespace bpae
