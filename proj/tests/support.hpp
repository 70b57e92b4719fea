#pragma once

// Independent oracles and fixtures shared by the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <bpae/types.hpp>

namespace bpae::test {

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0)
{
    std::normal_distribution<double> g(0.0, sd);
    Mat a(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = g(rng);
    return a;
}

inline Vec gaussian_vec(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0)
{
    return gaussian(n, 1, rng, sd).col(0);
}

/// Random s-sparse vector with standard normal nonzeros on a uniform support.
inline Vec sparse_vec(Eigen::Index n, int s, std::mt19937_64& rng)
{
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::normal_distribution<double> g(0.0, 1.0);
    Vec x = Vec::Zero(n);
    for (int k = 0; k < s; ++k) {
        double v = 0.0;
        while (std::abs(v) < 0.1) v = g(rng);
        x[idx[static_cast<std::size_t>(k)]] = v;
    }
    return x;
}

/// Minimum of sum(w) over all basic feasible solutions of A w = y, w >= 0,
/// found by enumerating every column subset of size rank(A). An optimal LP
/// solution exists at such a vertex, so this is exact for tiny problems.
inline std::optional<Vec> brute_force_nonneg_lp(const Mat& a, const Vec& y)
{
    const Eigen::Index m = a.rows(), k = a.cols();
    std::optional<Vec> best;
    double best_obj = std::numeric_limits<double>::infinity();
    if (y.norm() == 0.0) return Vec::Zero(k);
    std::vector<bool> pick(static_cast<std::size_t>(k), false);
    std::fill(pick.begin(), pick.begin() + m, true);
    do {
        Mat a_s(m, m);
        std::vector<Eigen::Index> cols;
        for (Eigen::Index j = 0; j < k; ++j)
            if (pick[static_cast<std::size_t>(j)]) cols.push_back(j);
        for (Eigen::Index j = 0; j < m; ++j) a_s.col(j) = a.col(cols[static_cast<std::size_t>(j)]);
        Eigen::FullPivLU<Mat> lu(a_s);
        if (lu.rank() < m) continue;
        const Vec w_s = lu.solve(y);
        if ((w_s.array() < -1e-12).any()) continue;
        if (w_s.sum() < best_obj) {
            best_obj = w_s.sum();
            Vec w = Vec::Zero(k);
            for (Eigen::Index j = 0; j < m; ++j) w[cols[static_cast<std::size_t>(j)]] = std::max(0.0, w_s[j]);
            best = w;
        }
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return best;
}

/// min ||x||_1 s.t. Phi x = y via the vertex enumeration above on [Phi, -Phi].
inline std::optional<Vec> brute_force_bp(const Mat& phi, const Vec& y)
{
    Mat a(phi.rows(), 2 * phi.cols());
    a << phi, -phi;
    const auto w = brute_force_nonneg_lp(a, y);
    if (!w) return std::nullopt;
    return Vec(w->head(phi.cols()) - w->tail(phi.cols()));
}

/// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("bpae-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

} // namespace bpae::test
