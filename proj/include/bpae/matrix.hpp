#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "types.hpp"

namespace bpae {

enum class MatrixKind : std::uint8_t {
    learned_sae = 0,
    learned_gae = 1,
    learned_saec = 2,
    learned_gaec = 3,
    gaussian = 4,
    bernoulli = 5,
    partial_fourier = 6,
    selection = 7,
};

inline const char* to_string(MatrixKind k)
{
    switch (k) {
    case MatrixKind::learned_sae: return "learned_sae";
    case MatrixKind::learned_gae: return "learned_gae";
    case MatrixKind::learned_saec: return "learned_saec";
    case MatrixKind::learned_gaec: return "learned_gaec";
    case MatrixKind::gaussian: return "gaussian";
    case MatrixKind::bernoulli: return "bernoulli";
    case MatrixKind::partial_fourier: return "partial_fourier";
    case MatrixKind::selection: return "selection";
    }
    return "?";
}

inline MatrixKind parse_matrix_kind(std::string_view s)
{
    for (auto k : {MatrixKind::learned_sae, MatrixKind::learned_gae, MatrixKind::learned_saec, MatrixKind::learned_gaec,
                   MatrixKind::gaussian, MatrixKind::bernoulli, MatrixKind::partial_fourier, MatrixKind::selection})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown matrix kind: " + std::string(s));
}

inline constexpr bool is_learned(MatrixKind k) { return static_cast<std::uint8_t>(k) <= 3; }

/// Real M x K sensing matrix. K is the signal dimension N, or 2N when the
/// matrix acts on the nonnegative split [x_+; (-x)_+].
struct MeasurementMatrix {
    Mat data;
    MatrixKind kind = MatrixKind::gaussian;
    bool normalized = false;
    /// True when data acts on the split vector (M x 2N).
    bool split = false;

    [[nodiscard]] Eigen::Index m() const { return data.rows(); }
    [[nodiscard]] Eigen::Index k() const { return data.cols(); }
    /// Signal dimension N.
    [[nodiscard]] Eigen::Index n() const { return split ? data.cols() / 2 : data.cols(); }

    [[nodiscard]] bool compressive() const { return data.rows() < data.cols(); }

    /// Shape, finiteness and normalization flag. Square matrices are
    /// accepted here so that identity-like settings can be evaluated.
    void validate() const
    {
        if (data.size() == 0) throw DimensionError("empty measurement matrix");
        if (!data.allFinite()) throw NumericError("measurement matrix has non-finite entries");
        if (split && data.cols() % 2 != 0) throw DimensionError("split matrix needs an even column count");
        if (normalized && ((data.colwise().norm().array() - 1.0).abs() > 1e-12).any())
            throw NumericError("matrix flagged normalized but a column norm differs from 1");
    }
};

/// Scales each column to unit l2 norm; a zero column is an error.
inline Mat normalize_columns(const Mat& a)
{
    Mat out = a;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double norm = out.col(j).norm();
        if (!(norm > 0.0)) throw NumericError("cannot normalize zero column " + std::to_string(j));
        out.col(j) /= norm;
    }
    return out;
}

} // namespace bpae
