#pragma once

// Forward pass of the unrolled basis-pursuit autoencoders.
//
// Encoder y = Phi z, decoder start x0 = Phi^T y, then `depth` layers of the
// projected-subgradient update with the pseudo-inverse replaced by Phi^T:
//
//   simple:    x_t = x_{t-1} - (alpha / t) (I - Phi^T Phi) sign(x_{t-1})
//   residual:  x_t = x_{t-1} + Phi^T Phi x_{t-2} - Phi^T Phi x_{t-1}
//                    - (alpha / t) (I - Phi^T Phi) sign(x_{t-1})
//
// with x_{-1} := x0 on the first residual layer. The "cat" variants run the
// same decoder on the split vector z = [x_+; (-x)_+] of length 2N and map
// the last state back through ReLU and slice-subtract.
//
// Phi^T Phi is never formed; every product goes through Phi^T (Phi v).

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "types.hpp"

namespace bpae {

enum class Variant : std::uint8_t { sae = 0, gae = 1, saecat = 2, gaecat = 3 };
enum class BatchNorm : std::uint8_t { off = 0, per_layer = 1 };

inline constexpr bool is_cat(Variant v) { return v == Variant::saecat || v == Variant::gaecat; }
inline constexpr bool is_residual(Variant v) { return v == Variant::gae || v == Variant::gaecat; }

inline const char* to_string(Variant v)
{
    switch (v) {
    case Variant::sae: return "sae";
    case Variant::gae: return "gae";
    case Variant::saecat: return "saecat";
    case Variant::gaecat: return "gaecat";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s)
{
    if (s == "sae") return Variant::sae;
    if (s == "gae") return Variant::gae;
    if (s == "saecat") return Variant::saecat;
    if (s == "gaecat") return Variant::gaecat;
    throw ConfigError("unknown variant: " + std::string(s));
}

inline constexpr double kBatchNormEps = 1e-5;

struct UnfoldModel {
    Variant variant = Variant::gae;
    Mat phi;               ///< M x N, or M x 2N for the cat variants
    double alpha = 1.0;    ///< step-size base shared by all layers
    int depth = 15;
    BatchNorm batch_norm = BatchNorm::off;
    /// Running statistics of the per-layer normalization, one entry per
    /// hidden layer (1..depth-1). Empty when batch_norm is off.
    std::vector<Vec> bn_mean, bn_var;

    /// Signal dimension N.
    [[nodiscard]] Eigen::Index n() const { return is_cat(variant) ? phi.cols() / 2 : phi.cols(); }
    /// Dimension of the decoder state (N, or 2N for cat).
    [[nodiscard]] Eigen::Index state_dim() const { return phi.cols(); }
    [[nodiscard]] Eigen::Index m() const { return phi.rows(); }
    [[nodiscard]] bool normalizes_layers() const
    {
        return batch_norm == BatchNorm::per_layer && static_cast<int>(bn_mean.size()) == depth - 1;
    }

    void validate() const
    {
        if (phi.size() == 0) throw ConfigError("empty measurement matrix");
        if (!phi.allFinite()) throw NumericError("measurement matrix has non-finite entries");
        if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
        if (depth < 1) throw ConfigError("depth must be >= 1");
        if (is_cat(variant) && phi.cols() % 2 != 0) throw DimensionError("cat variants need an even column count");
        if (!bn_mean.empty() && (bn_mean.size() != bn_var.size() || static_cast<int>(bn_mean.size()) != depth - 1))
            throw DimensionError("batch-norm statistics do not match depth");
    }
};

/// Alias kept for readability at call sites that only need Phi^T (Phi v).
inline Vec gram_apply(const Mat& phi, const Vec& v)
{
    return phi.transpose() * (phi * v);
}

/// Elementwise sign with sign(0) = 0.
inline Vec signum(const Vec& v)
{
    return v.unaryExpr([](double a) { return static_cast<double>((a > 0.0) - (a < 0.0)); });
}

/// [x_+; (-x)_+].
inline Vec split_nonneg(const Vec& x)
{
    Vec z(2 * x.size());
    z.head(x.size()) = x.cwiseMax(0.0);
    z.tail(x.size()) = (-x).cwiseMax(0.0);
    return z;
}

/// ReLU, then first half minus second half.
inline Vec cat_output(const Vec& z)
{
    if (z.size() % 2 != 0) throw DimensionError("cat output needs an even-length state");
    const Eigen::Index n = z.size() / 2;
    return z.head(n).cwiseMax(0.0) - z.tail(n).cwiseMax(0.0);
}

/// Input as seen by the encoder: x itself, or its nonnegative split.
inline Vec lift_input(const UnfoldModel& model, const Vec& x)
{
    require_dims(x.size() == model.n(), "input length vs model N");
    return is_cat(model.variant) ? split_nonneg(x) : x;
}

/// y = Phi x, or Phi~ [x_+; (-x)_+] for the cat variants.
inline Vec encode(const UnfoldModel& model, const Vec& x)
{
    return model.phi * lift_input(model, x);
}

inline Vec decoder_init(const UnfoldModel& model, const Vec& y)
{
    require_dims(y.size() == model.m(), "measurement length vs model M");
    return model.phi.transpose() * y;
}

inline Vec sae_layer(const UnfoldModel& model, const Vec& x_t, int t)
{
    require_dims(x_t.size() == model.state_dim(), "layer state length");
    if (t < 1) throw ConfigError("layer index must be >= 1");
    const double step = model.alpha / t;
    const Vec d = step * signum(x_t);
    return x_t - d + gram_apply(model.phi, d);
}

/// Residual layer: current state x_t, previous state x_prev.
inline Vec gae_layer(const UnfoldModel& model, const Vec& x_t, const Vec& x_prev, int t)
{
    require_dims(x_t.size() == model.state_dim() && x_prev.size() == model.state_dim(), "layer state length");
    if (t < 1) throw ConfigError("layer index must be >= 1");
    const double step = model.alpha / t;
    const Vec d = step * signum(x_t);
    return x_t - d + gram_apply(model.phi, x_prev - x_t + d);
}

/// Inference-mode normalization with frozen running statistics.
inline Vec normalize_frozen(const Vec& p, const Vec& mean, const Vec& var)
{
    return ((p - mean).array() / (var.array() + kBatchNormEps).sqrt()).matrix();
}

/// Intermediates of one forward pass.
struct ForwardTrace {
    Vec input;   ///< lifted input z (x, or its split)
    Vec y;       ///< code
    /// Decoder states x^(0)..x^(depth), after normalization where applied.
    std::vector<Vec> states;
    /// Layer outputs before normalization (hidden layers only; empty when off).
    std::vector<Vec> pre_norm;
    Vec output;  ///< reconstruction in signal space
};

/// Runs layer t (1-based) producing x^(t) from the states so far.
inline Vec apply_layer(const UnfoldModel& model, const std::vector<Vec>& states, int t)
{
    const Vec& cur = states[static_cast<std::size_t>(t - 1)];
    if (!is_residual(model.variant)) return sae_layer(model, cur, t);
    const Vec& prev = states[static_cast<std::size_t>(t >= 2 ? t - 2 : 0)];
    return gae_layer(model, cur, prev, t);
}

inline Vec decode_output(const UnfoldModel& model, const Vec& last)
{
    return is_cat(model.variant) ? cat_output(last) : last;
}

inline std::pair<Vec, ForwardTrace> forward(const UnfoldModel& model, const Vec& x)
{
    ForwardTrace tr;
    tr.input = lift_input(model, x);
    tr.y = model.phi * tr.input;
    tr.states.reserve(static_cast<std::size_t>(model.depth) + 1);
    tr.states.push_back(decoder_init(model, tr.y));
    const bool norm = model.normalizes_layers();
    for (int t = 1; t <= model.depth; ++t) {
        Vec next = apply_layer(model, tr.states, t);
        if (norm && t < model.depth) {
            const auto k = static_cast<std::size_t>(t - 1);
            tr.pre_norm.push_back(next);
            next = normalize_frozen(next, model.bn_mean[k], model.bn_var[k]);
        }
        tr.states.push_back(std::move(next));
    }
    tr.output = decode_output(model, tr.states.back());
    return {tr.output, std::move(tr)};
}

inline Vec reconstruct(const UnfoldModel& model, const Vec& x)
{
    return forward(model, x).first;
}

} // namespace bpae
