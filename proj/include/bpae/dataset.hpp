#pragma once

// Sparse beamspace channel generation for an N-antenna uniform linear array.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "parallel.hpp"
#include "types.hpp"

namespace bpae {

/// How path spatial directions are drawn.
enum class AodDistribution : std::uint8_t {
    uniform_angle,  ///< theta ~ U[-pi/2, pi/2], phi = sin(theta) / 2
    uniform_spatial ///< phi ~ U[-1/2, 1/2]
};

struct SplitRatios {
    double train = 0.96;
    double val = 0.02;
    double test = 0.02;
};

struct ChannelGenConfig {
    int n_antennas = 256;
    int n_paths = 3;
    double rice_k_db = 13.2;
    int n_channels = 50000;
    int sparsity = 16;
    SplitRatios split{};
    std::uint64_t seed = 1;
    AodDistribution aod = AodDistribution::uniform_angle;

    void validate() const
    {
        if (n_antennas < 1) throw ConfigError("n_antennas must be >= 1");
        if (n_paths < 1 || n_paths > n_antennas) throw ConfigError("n_paths must be in [1, n_antennas]");
        if (sparsity < 1 || sparsity > n_antennas) throw ConfigError("sparsity must be in [1, n_antennas]");
        if (n_channels < 0) throw ConfigError("n_channels must be >= 0");
        if (!std::isfinite(rice_k_db)) throw ConfigError("rice_k_db must be finite");
        for (double r : {split.train, split.val, split.test})
            if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must lie in [0, 1]");
        if (std::abs(split.train + split.val + split.test - 1.0) > 1e-12)
            throw ConfigError("split ratios must sum to 1");
    }
};

/// One propagation path: complex gain and spatial direction phi in [-1/2, 1/2].
struct PathComponent {
    cplx gain;
    double phi;
};

/// Column-wise stacked real form of one complex beamspace channel:
/// h(:, 0) = Re(h_b), h(:, 1) = Im(h_b).
struct ChannelSample {
    Mat h;

    [[nodiscard]] Eigen::Index n() const { return h.rows(); }
    bool operator==(const ChannelSample&) const = default;
};

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t size() const { return end - begin; }
    bool operator==(const IndexRange&) const = default;
};

struct DatasetSplit {
    IndexRange train, val, test;
    bool operator==(const DatasetSplit&) const = default;
};

struct Dataset {
    std::vector<ChannelSample> samples;
    DatasetSplit split;
    ChannelGenConfig meta;

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] int n() const { return samples.empty() ? meta.n_antennas : static_cast<int>(samples.front().n()); }

    /// Real/imaginary columns of the samples in `range`, in order, as
    /// independent length-N vectors (two per sample).
    [[nodiscard]] std::vector<Vec> vectors(IndexRange range) const
    {
        std::vector<Vec> out;
        out.reserve(2 * range.size());
        for (std::size_t i = range.begin; i < range.end; ++i) {
            out.emplace_back(samples[i].h.col(0));
            out.emplace_back(samples[i].h.col(1));
        }
        return out;
    }
};

/// Unit-norm ULA steering vector: (1/sqrt(n)) [1, e^{-j2 pi phi}, ..., e^{-j2 pi phi (n-1)}].
inline CVec steering_vector(int n, double phi)
{
    CVec a(n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int k = 0; k < n; ++k)
        a[k] = std::polar(scale, -2.0 * std::numbers::pi * phi * k);
    return a;
}

/// sqrt(n / n_paths) * sum_l gain_l * steering(phi_l).
inline CVec spatial_channel(int n, const std::vector<PathComponent>& paths)
{
    if (paths.empty()) throw ConfigError("at least one path required");
    CVec h = CVec::Zero(n);
    for (const auto& p : paths) h += p.gain * steering_vector(n, p.phi);
    h *= std::sqrt(static_cast<double>(n) / static_cast<double>(paths.size()));
    return h;
}

/// Draws path gains and directions. Path 0 is line-of-sight; its gain
/// variance is K (linear) times that of each non-line-of-sight path.
template <class Rng>
std::vector<PathComponent> draw_paths(const ChannelGenConfig& cfg, Rng& rng)
{
    const double k_linear = std::pow(10.0, cfg.rice_k_db / 10.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(-0.5, 0.5);
    std::vector<PathComponent> paths;
    paths.reserve(static_cast<std::size_t>(cfg.n_paths));
    for (int l = 0; l < cfg.n_paths; ++l) {
        const double var = (l == 0) ? k_linear : 1.0;
        const double sd = std::sqrt(var / 2.0);
        const double re = sd * gauss(rng);
        const double im = sd * gauss(rng);
        const double u = unif(rng);
        const double phi = (cfg.aod == AodDistribution::uniform_angle) ? 0.5 * std::sin(std::numbers::pi * u) : u;
        paths.push_back({cplx(re, im), phi});
    }
    return paths;
}

template <class Rng>
CVec gen_spatial_channel(const ChannelGenConfig& cfg, Rng& rng)
{
    return spatial_channel(cfg.n_antennas, draw_paths(cfg, rng));
}

/// DFT beamspace basis: row m is the conjugated steering vector at the
/// grid direction phi_m = (m + 1 - (n + 1) / 2) / n, m = 0..n-1.
inline CMat dft_basis(int n)
{
    if (n < 1) throw ConfigError("basis size must be >= 1");
    CMat u(n, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int m = 0; m < n; ++m) {
        const double phi_m = (static_cast<double>(m + 1) - (n + 1) / 2.0) / n;
        for (int k = 0; k < n; ++k)
            u(m, k) = std::polar(scale, 2.0 * std::numbers::pi * phi_m * k);
    }
    return u;
}

/// Grid direction of beamspace bin m (0-based).
inline double grid_direction(int n, int m)
{
    return (static_cast<double>(m + 1) - (n + 1) / 2.0) / n;
}

inline CVec to_beamspace(const CVec& h_s, const CMat& basis)
{
    require_dims(basis.cols() == h_s.size() && basis.rows() == basis.cols(), "basis vs spatial channel");
    return basis * h_s;
}

/// Keeps the s largest-magnitude entries; equal magnitudes keep the lower index.
inline CVec sparsify_top_s(const CVec& h_b, int s)
{
    if (s < 1 || s > h_b.size()) throw ConfigError("sparsity out of range");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(h_b.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(h_b[a]) > std::abs(h_b[b]); });
    CVec out = CVec::Zero(h_b.size());
    for (int i = 0; i < s; ++i) out[order[static_cast<std::size_t>(i)]] = h_b[order[static_cast<std::size_t>(i)]];
    return out;
}

inline ChannelSample real_stack_normalize(const CVec& h_b)
{
    Mat h(h_b.size(), 2);
    h.col(0) = h_b.real();
    h.col(1) = h_b.imag();
    const double norm = h.norm();
    if (!(norm > 0.0)) throw NumericError("cannot normalize an all-zero channel");
    h /= norm;
    return ChannelSample{std::move(h)};
}

/// Rounded train/val counts; the test split takes the remainder.
inline DatasetSplit split_ranges(std::size_t n, const SplitRatios& r)
{
    const auto count = [n](double frac) {
        return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 0.5));
    };
    const std::size_t n_train = std::min(n, count(r.train));
    const std::size_t n_val = std::min(n - n_train, count(r.val));
    return {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, n}};
}

/// Generates cfg.n_channels normalized sparse channels. Sample i uses the
/// substream (cfg.seed, i), so the output is independent of `threads`.
inline Dataset build_dataset(const ChannelGenConfig& cfg, unsigned threads = 1)
{
    cfg.validate();
    const auto n_channels = static_cast<std::size_t>(cfg.n_channels);
    const CMat basis = dft_basis(cfg.n_antennas);
    Dataset d;
    d.meta = cfg;
    d.samples.resize(n_channels);
    parallel_for(n_channels, threads, [&](std::size_t i) {
        auto rng = substream(cfg.seed, i);
        const CVec h_b = to_beamspace(gen_spatial_channel(cfg, rng), basis);
        d.samples[i] = real_stack_normalize(sparsify_top_s(h_b, cfg.sparsity));
    });
    d.split = split_ranges(n_channels, cfg.split);
    return d;
}

} // namespace bpae
