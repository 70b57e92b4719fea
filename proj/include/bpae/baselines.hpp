#pragma once

// Random measurement-matrix families used as comparison baselines. Every
// constructor returns a column-normalized matrix and is deterministic in
// its seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "matrix.hpp"
#include "types.hpp"

namespace bpae {

namespace detail {

inline void require_compressive(Eigen::Index m, Eigen::Index k)
{
    if (m < 1 || m >= k) throw ConfigError("baseline matrices need 1 <= m < k");
}

inline MeasurementMatrix finish(Mat raw, MatrixKind kind)
{
    return MeasurementMatrix{normalize_columns(raw), kind, true, false};
}

} // namespace detail

/// I.i.d. N(0, 1) entries before column normalization.
inline Mat gaussian_entries(Eigen::Index m, Eigen::Index k, std::uint64_t seed)
{
    auto rng = substream(seed, 0x6761757373u);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat a(m, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < m; ++i) a(i, j) = gauss(rng);
    return a;
}

inline MeasurementMatrix gaussian_matrix(Eigen::Index m, Eigen::Index k, std::uint64_t seed)
{
    detail::require_compressive(m, k);
    return detail::finish(gaussian_entries(m, k, seed), MatrixKind::gaussian);
}

/// +-1 with equal probability; every normalized entry is +-1/sqrt(m).
inline MeasurementMatrix bernoulli_matrix(Eigen::Index m, Eigen::Index k, std::uint64_t seed)
{
    detail::require_compressive(m, k);
    auto rng = substream(seed, 0x6265726eu);
    std::bernoulli_distribution coin(0.5);
    Mat a(m, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < m; ++i) a(i, j) = coin(rng) ? 1.0 : -1.0;
    return detail::finish(std::move(a), MatrixKind::bernoulli);
}

/// 0/1 with equal probability; all-zero columns are redrawn.
inline MeasurementMatrix selection_matrix(Eigen::Index m, Eigen::Index k, std::uint64_t seed)
{
    detail::require_compressive(m, k);
    auto rng = substream(seed, 0x73656cu);
    std::bernoulli_distribution coin(0.5);
    Mat a(m, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        do {
            for (Eigen::Index i = 0; i < m; ++i) a(i, j) = coin(rng) ? 1.0 : 0.0;
        } while (a.col(j).sum() == 0.0);
    }
    return detail::finish(std::move(a), MatrixKind::selection);
}

/// Orthonormal real trigonometric basis of R^k: row 0 is constant, rows
/// 2f-1 and 2f are the cosine and sine of frequency f, and for even k the
/// last row is the alternating (Nyquist) row.
inline Mat real_fourier_basis(Eigen::Index k)
{
    if (k < 1) throw ConfigError("basis size must be >= 1");
    Mat b(k, k);
    const double kd = static_cast<double>(k);
    b.row(0).setConstant(1.0 / std::sqrt(kd));
    const double amp = std::sqrt(2.0 / kd);
    Eigen::Index row = 1;
    for (Eigen::Index f = 1; 2 * f < k; ++f) {
        for (Eigen::Index n = 0; n < k; ++n) {
            const double arg = 2.0 * std::numbers::pi * static_cast<double>(f * n) / kd;
            b(row, n) = amp * std::cos(arg);
            b(row + 1, n) = amp * std::sin(arg);
        }
        row += 2;
    }
    if (k % 2 == 0)
        for (Eigen::Index n = 0; n < k; ++n) b(row, n) = (n % 2 == 0 ? 1.0 : -1.0) / std::sqrt(kd);
    return b;
}

/// Row indices of the basis picked by partial_fourier_matrix, in output order.
inline std::vector<Eigen::Index> partial_fourier_rows(Eigen::Index m, Eigen::Index k, std::uint64_t seed)
{
    auto rng = substream(seed, 0x666f75726965u);
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(k));
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(m));
    std::sort(rows.begin(), rows.end());
    return rows;
}

/// m distinct random rows of the real trigonometric basis, then column-normalized.
inline MeasurementMatrix partial_fourier_matrix(Eigen::Index m, Eigen::Index k, std::uint64_t seed)
{
    detail::require_compressive(m, k);
    const Mat basis = real_fourier_basis(k);
    const auto rows = partial_fourier_rows(m, k, seed);
    Mat a(m, k);
    for (Eigen::Index i = 0; i < m; ++i) a.row(i) = basis.row(rows[static_cast<std::size_t>(i)]);
    return detail::finish(std::move(a), MatrixKind::partial_fourier);
}

/// Baseline by kind. With split = true the matrix has 2n columns and acts on
/// the nonnegative split of the signal.
inline MeasurementMatrix baseline_matrix(MatrixKind kind, Eigen::Index m, Eigen::Index n, bool split, std::uint64_t seed)
{
    const Eigen::Index k = split ? 2 * n : n;
    MeasurementMatrix out;
    switch (kind) {
    case MatrixKind::gaussian: out = gaussian_matrix(m, k, seed); break;
    case MatrixKind::bernoulli: out = bernoulli_matrix(m, k, seed); break;
    case MatrixKind::selection: out = selection_matrix(m, k, seed); break;
    case MatrixKind::partial_fourier: out = partial_fourier_matrix(m, k, seed); break;
    default: throw ConfigError(std::string("not a baseline kind: ") + to_string(kind));
    }
    out.split = split;
    return out;
}

} // namespace bpae
