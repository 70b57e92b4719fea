#pragma once

// Sparse reconstruction solvers used to score measurement matrices.
//
//   bp_subgradient   projected subgradient on min ||x||_1 s.t. Phi x = y
//   bp_exact         same problem, solved on its split nonnegative LP form
//   bp_exact_nonneg  min 1^T z s.t. Phi~ z = y, z >= 0, x = z_head - z_tail
//   gpsr             min 0.5 ||y - Phi x||^2 + tau ||x||_1 by gradient
//                    projection on the split nonnegative quadratic program

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "matrix.hpp"
#include "types.hpp"

namespace bpae {

/// ||A A^T|| condition number above which A is treated as rank deficient.
inline constexpr double kMaxGramCondition = 1e12;

struct SolverOptions {
    double tol = 1e-10;
    int max_iters = 50000;
    /// l1 weight of gpsr; negative selects 0.01 * ||Phi^T y||_inf.
    double tau = -1.0;
    /// Base step of the projected subgradient method (step_t = alpha0 / t).
    double alpha0 = 1.0;
    /// Penalty parameter of the operator-splitting LP solver.
    double rho = 1.0;
    /// Keep the gpsr objective of every accepted iterate (final tau only).
    bool record_objective = false;
    /// gpsr warm-starts through a geometric ladder of larger tau values
    /// before solving at the requested tau.
    bool continuation = true;

    void validate() const
    {
        if (!(tol > 0.0)) throw ConfigError("solver tol must be positive");
        if (max_iters < 1) throw ConfigError("solver max_iters must be >= 1");
        if (!(alpha0 > 0.0)) throw ConfigError("solver alpha0 must be positive");
        if (!(rho > 0.0)) throw ConfigError("solver rho must be positive");
    }
};

struct ReconResult {
    Vec x_hat;
    int iterations = 0;
    bool converged = false;
    double objective = 0.0;
    /// ||Phi x_hat - y|| (split matrices: ||Phi~ z - y||).
    double residual = 0.0;
    /// LP solvers: certified relative duality gap when available, else NaN.
    double gap = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> objective_trace;
};

/// Factorization of A A^T for repeated pseudo-inverse products.
class AffineProjector {
public:
    explicit AffineProjector(const Mat& a) : a_(a)
    {
        if (a.rows() == 0 || a.cols() < a.rows()) throw RankError("matrix cannot have full row rank");
        const Mat gram = a * a.transpose();
        Eigen::SelfAdjointEigenSolver<Mat> eig(gram, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        if (!(lo > 0.0) || hi / lo > kMaxGramCondition) throw RankError("measurement matrix is not of full row rank");
        llt_.compute(gram);
        if (llt_.info() != Eigen::Success) throw RankError("Gram factorization failed");
    }

    [[nodiscard]] const Mat& matrix() const { return a_; }

    /// (A A^T)^{-1} v.
    [[nodiscard]] Vec solve_gram(const Vec& v) const { return llt_.solve(v); }

    /// A^T (A A^T)^{-1} v.
    [[nodiscard]] Vec pinv_apply(const Vec& v) const
    {
        require_dims(v.size() == a_.rows(), "vector length vs matrix rows");
        return a_.transpose() * llt_.solve(v);
    }

    /// Euclidean projection of z onto {x : A x = y}.
    [[nodiscard]] Vec project(const Vec& z, const Vec& y) const
    {
        require_dims(z.size() == a_.cols() && y.size() == a_.rows(), "projection operands");
        return z + pinv_apply(y - a_ * z);
    }

private:
    Mat a_;
    Eigen::LLT<Mat> llt_;
};

inline Vec pseudo_inverse_apply(const Mat& phi, const Vec& v)
{
    return AffineProjector(phi).pinv_apply(v);
}

inline Vec project_affine(const Mat& phi, const Vec& y, const Vec& z)
{
    return AffineProjector(phi).project(z, y);
}

inline Mat split_matrix(const Mat& phi)
{
    Mat a(phi.rows(), 2 * phi.cols());
    a << phi, -phi;
    return a;
}

/// Projected subgradient descent for basis pursuit. Starts at Phi^+ y and
/// returns the feasible iterate of least l1 norm. Stops after max_iters or
/// when the best l1 value improved by less than tol (relative) over the
/// last 50 iterations.
inline ReconResult bp_subgradient(const Mat& phi, const Vec& y, const SolverOptions& opts = {})
{
    opts.validate();
    const AffineProjector proj(phi);
    constexpr int window = 50;
    Vec x = proj.pinv_apply(y);
    ReconResult res;
    res.x_hat = x;
    res.objective = x.lpNorm<1>();
    double window_start = res.objective;
    Vec window_x = x;
    int t = 1;
    for (; t <= opts.max_iters; ++t) {
        const double step = opts.alpha0 / t;
        x = proj.project(x - step * x.unaryExpr([](double a) { return static_cast<double>((a > 0.0) - (a < 0.0)); }), y);
        const double l1 = x.lpNorm<1>();
        if (l1 < res.objective) {
            res.objective = l1;
            res.x_hat = x;
        }
        if (t % window == 0) {
            // The best value also stalls while iterates oscillate around the
            // optimum, so the iterate itself must have stopped moving too.
            const bool flat = window_start - res.objective <= opts.tol * (1.0 + res.objective);
            const bool still = (x - window_x).norm() <= opts.tol * (1.0 + x.norm());
            if (flat && still) {
                res.converged = true;
                break;
            }
            window_start = res.objective;
            window_x = x;
        }
    }
    res.iterations = std::min(t, opts.max_iters);
    res.residual = (phi * res.x_hat - y).norm();
    return res;
}

namespace detail {

/// Tries to recover the exact LP vertex from an approximate solution:
/// least squares on the columns where z is clearly positive.
inline std::optional<Vec> polish_vertex(const Mat& a, const Vec& y, const Vec& z, std::vector<Eigen::Index>& support)
{
    const double scale = std::max(1.0, z.cwiseAbs().maxCoeff());
    support.clear();
    for (Eigen::Index i = 0; i < z.size(); ++i)
        if (z[i] > 1e-9 * scale) support.push_back(i);
    const auto s = static_cast<Eigen::Index>(support.size());
    if (s > a.rows()) return std::nullopt;
    Vec w = Vec::Zero(z.size());
    if (s > 0) {
        Mat a_s(a.rows(), s);
        for (Eigen::Index j = 0; j < s; ++j) a_s.col(j) = a.col(support[static_cast<std::size_t>(j)]);
        Eigen::ColPivHouseholderQR<Mat> qr(a_s);
        if (qr.rank() < s) return std::nullopt;
        const Vec w_s = qr.solve(y);
        if ((w_s.array() < 0.0).any()) return std::nullopt;
        for (Eigen::Index j = 0; j < s; ++j) w[support[static_cast<std::size_t>(j)]] = w_s[j];
    }
    if ((a * w - y).norm() > 1e-12 * (1.0 + y.norm())) return std::nullopt;
    return w;
}

/// Relative duality gap certified for the primal vertex w with support S,
/// from a dual estimate pi0: pi0 is corrected so A_S^T pi = 1 and then
/// scaled to be dual feasible (A^T pi <= 1).
inline double certify_gap(const Mat& a, const Vec& y, const Vec& w, const std::vector<Eigen::Index>& support,
                          const Vec& pi0)
{
    Vec pi = pi0;
    const auto s = static_cast<Eigen::Index>(support.size());
    if (s > 0) {
        Mat a_s(a.rows(), s);
        for (Eigen::Index j = 0; j < s; ++j) a_s.col(j) = a.col(support[static_cast<std::size_t>(j)]);
        const Vec r = Vec::Ones(s) - a_s.transpose() * pi;
        pi += a_s * (a_s.transpose() * a_s).ldlt().solve(r);
    }
    const double worst = (a.transpose() * pi).maxCoeff();
    if (worst > 1.0) pi /= worst;
    const double primal = w.sum();
    const double dual = y.dot(pi);
    return (primal - dual) / (1.0 + std::abs(primal));
}

/// min 1^T w s.t. A w = y, w >= 0 by alternating-direction splitting
/// (w on the affine set, z on the orthant, scaled dual u). Every `check`
/// iterations the current orthant point is polished to a vertex; the solve
/// ends early when that vertex carries a duality-gap certificate <= tol.
inline ReconResult lp_nonneg(const Mat& a, const Vec& y, const SolverOptions& opts)
{
    opts.validate();
    require_dims(y.size() == a.rows(), "measurement length vs matrix rows");
    const AffineProjector proj(a);
    const Eigen::Index k = a.cols();
    const double rho = opts.rho;
    const Vec c_over_rho = Vec::Constant(k, 1.0 / rho);
    constexpr int check = 25;

    Vec w = Vec::Zero(k), z = Vec::Zero(k), u = Vec::Zero(k), z_old(k);
    ReconResult res;
    std::vector<Eigen::Index> support;

    const auto try_certify = [&]() -> bool {
        auto vertex = polish_vertex(a, y, z, support);
        if (!vertex) return false;
        // Dual estimate from the splitting multipliers: A^T pi ~ 1 + rho u.
        const Vec pi0 = proj.solve_gram(a * (Vec::Ones(k) + rho * u));
        const double gap = certify_gap(a, y, *vertex, support, pi0);
        if (gap <= opts.tol) {
            res.x_hat = std::move(*vertex);
            res.gap = std::max(gap, 0.0);
            return true;
        }
        return false;
    };

    int it = 1;
    bool done = false;
    for (; it <= opts.max_iters; ++it) {
        w = proj.project(z - u - c_over_rho, y);
        z_old = z;
        z = (w + u).cwiseMax(0.0);
        u += w - z;
        const double r_primal = (w - z).norm();
        const double r_dual = rho * (z - z_old).norm();
        if (r_primal <= opts.tol * (1.0 + std::max(w.norm(), z.norm())) && r_dual <= opts.tol * (1.0 + rho * u.norm())) {
            done = true;
            break;
        }
        if (it % check == 0 && try_certify()) {
            res.converged = true;
            res.iterations = it;
            res.objective = res.x_hat.sum();
            res.residual = (a * res.x_hat - y).norm();
            return res;
        }
    }
    res.iterations = std::min(it, opts.max_iters);
    res.converged = done;
    if (try_certify()) {
        res.converged = true;
    } else {
        // Keep the affine-feasible iterate, or the polished vertex when it is
        // feasible and no worse.
        res.x_hat = w;
        if (auto vertex = polish_vertex(a, y, z, support); vertex && vertex->sum() <= w.cwiseAbs().sum() + opts.tol)
            res.x_hat = std::move(*vertex);
    }
    res.objective = res.x_hat.cwiseAbs().sum();
    res.residual = (a * res.x_hat - y).norm();
    return res;
}

inline Vec slice_subtract(const Vec& z)
{
    const Eigen::Index n = z.size() / 2;
    return z.head(n) - z.tail(n);
}

} // namespace detail

/// Nonnegative basis pursuit on an M x 2N matrix; x_hat is returned in
/// signal space (first half minus second half).
inline ReconResult bp_exact_nonneg(const Mat& phi_tilde, const Vec& y, const SolverOptions& opts = {})
{
    if (phi_tilde.cols() % 2 != 0) throw DimensionError("split matrix needs an even column count");
    ReconResult res = detail::lp_nonneg(phi_tilde, y, opts);
    res.x_hat = detail::slice_subtract(res.x_hat);
    return res;
}

/// Basis pursuit through the split LP with [Phi, -Phi].
inline ReconResult bp_exact(const Mat& phi, const Vec& y, const SolverOptions& opts = {})
{
    ReconResult res = detail::lp_nonneg(split_matrix(phi), y, opts);
    res.x_hat = detail::slice_subtract(res.x_hat);
    res.objective = res.x_hat.lpNorm<1>();
    res.residual = (phi * res.x_hat - y).norm();
    return res;
}

inline constexpr double kGpsrArmijo = 1e-4;
inline constexpr double kGpsrShrink = 0.5;
inline constexpr double kGpsrStepMin = 1e-30;
inline constexpr double kGpsrStepMax = 1e30;
inline constexpr int kGpsrQuietSteps = 10;

inline double default_tau(const Mat& phi, const Vec& y)
{
    return 0.01 * (phi.transpose() * y).cwiseAbs().maxCoeff();
}

namespace detail {

/// min 0.5 ||y - B z||^2 + tau 1^T z over z >= 0 by projected gradient with a
/// Barzilai-Borwein initial step and Armijo backtracking along the
/// projection arc. The objective never increases between accepted iterates.
inline ReconResult gpsr_nonneg_qp(const Mat& b, const Vec& y, double tau, const SolverOptions& opts,
                                  Vec z0 = Vec())
{
    opts.validate();
    require_dims(y.size() == b.rows(), "measurement length vs matrix rows");
    const Eigen::Index k = b.cols();
    Vec z = z0.size() == k ? std::move(z0) : Vec::Zero(k);
    Vec resid = y - b * z;  // y - B z
    const auto objective = [&](const Vec& r, const Vec& zz) { return 0.5 * r.squaredNorm() + tau * zz.sum(); };
    double q = objective(resid, z);
    ReconResult res;
    if (opts.record_objective) res.objective_trace.push_back(q);

    Vec grad(k), z_new(k), r_new(b.rows());
    double step = 0.0;
    int quiet = 0;
    int it = 1;
    for (; it <= opts.max_iters; ++it) {
        grad = -(b.transpose() * resid);
        grad.array() += tau;
        if (it == 1) {
            // Exact minimizer along the feasible part of the negative gradient.
            Vec g = grad;
            for (Eigen::Index i = 0; i < k; ++i)
                if (!(z[i] > 0.0 || grad[i] < 0.0)) g[i] = 0.0;
            const double denom = (b * g).squaredNorm();
            step = denom > 0.0 ? g.squaredNorm() / denom : 1.0;
        }
        step = std::clamp(step, kGpsrStepMin, kGpsrStepMax);

        double q_new = q;
        bool accepted = false;
        for (int ls = 0; ls < 100; ++ls) {
            z_new = (z - step * grad).cwiseMax(0.0);
            r_new = y - b * z_new;
            q_new = objective(r_new, z_new);
            if (q_new <= q - kGpsrArmijo * grad.dot(z - z_new)) {
                accepted = true;
                break;
            }
            step *= kGpsrShrink;
        }
        if (!accepted || q_new > q) {
            // No decrease possible along the projection arc: stationary.
            res.converged = true;
            break;
        }
        const Vec delta = z_new - z;
        const double bd = (r_new - resid).squaredNorm();  // ||B delta||^2
        step = bd > 0.0 ? delta.squaredNorm() / bd : kGpsrStepMax;
        const double change = q - q_new;
        z.swap(z_new);
        resid.swap(r_new);
        q = q_new;
        if (opts.record_objective) res.objective_trace.push_back(q);
        // A single short BB step is common; demand a run of them.
        quiet = change <= opts.tol * std::max(q, std::numeric_limits<double>::min()) ? quiet + 1 : 0;
        if (quiet >= kGpsrQuietSteps) {
            res.converged = true;
            break;
        }
    }
    res.iterations = std::min(it, opts.max_iters);
    res.x_hat = std::move(z);
    res.objective = q;
    res.residual = resid.norm();
    return res;
}

} // namespace detail

inline constexpr double kGpsrLadderStart = 0.5;   ///< first tau, relative to ||B^T y||_inf
inline constexpr double kGpsrLadderRatio = 0.2;
inline constexpr double kGpsrLadderTol = 1e-6;

namespace detail {

/// Continuation: each rung is solved loosely from the previous solution and
/// only the final solve at the requested tau is strict, traced, and
/// reported. Small tau makes the plain iteration crawl along the null space.
inline ReconResult gpsr_continued(const Mat& b, const Vec& y, double tau, const SolverOptions& opts)
{
    opts.validate();
    require_dims(y.size() == b.rows(), "measurement length vs matrix rows");
    Vec z = Vec::Zero(b.cols());
    int spent = 0;
    if (opts.continuation) {
        SolverOptions rung = opts;
        rung.tol = std::max(opts.tol, kGpsrLadderTol);
        rung.record_objective = false;
        const double top = (b.transpose() * y).cwiseAbs().maxCoeff();
        for (double t = kGpsrLadderStart * top; t > tau && spent < opts.max_iters; t *= kGpsrLadderRatio) {
            rung.max_iters = opts.max_iters - spent;
            ReconResult r = gpsr_nonneg_qp(b, y, t, rung, std::move(z));
            spent += r.iterations;
            z = std::move(r.x_hat);
        }
    }
    SolverOptions last = opts;
    last.max_iters = std::max(1, opts.max_iters - spent);
    ReconResult res = gpsr_nonneg_qp(b, y, tau, last, std::move(z));
    res.iterations += spent;
    return res;
}

} // namespace detail

/// l1-regularized least squares on an M x N matrix.
inline ReconResult gpsr(const Mat& phi, const Vec& y, const SolverOptions& opts = {})
{
    const double tau = opts.tau >= 0.0 ? opts.tau : default_tau(phi, y);
    ReconResult res = detail::gpsr_continued(split_matrix(phi), y, tau, opts);
    res.x_hat = detail::slice_subtract(res.x_hat);
    res.residual = (phi * res.x_hat - y).norm();
    return res;
}

/// l1-regularized least squares over z >= 0 on an M x 2N matrix.
inline ReconResult gpsr_nonneg(const Mat& phi_tilde, const Vec& y, const SolverOptions& opts = {})
{
    if (phi_tilde.cols() % 2 != 0) throw DimensionError("split matrix needs an even column count");
    const double tau = opts.tau >= 0.0 ? opts.tau : default_tau(phi_tilde, y);
    ReconResult res = detail::gpsr_continued(phi_tilde, y, tau, opts);
    res.x_hat = detail::slice_subtract(res.x_hat);
    return res;
}

enum class Solver : std::uint8_t { bp_exact = 0, bp_subgradient = 1, gpsr = 2 };

inline const char* to_string(Solver s)
{
    switch (s) {
    case Solver::bp_exact: return "bp_exact";
    case Solver::bp_subgradient: return "bp_subgradient";
    case Solver::gpsr: return "gpsr";
    }
    return "?";
}

inline Solver parse_solver(std::string_view s)
{
    if (s == "bp_exact" || s == "lp") return Solver::bp_exact;
    if (s == "bp_subgradient") return Solver::bp_subgradient;
    if (s == "gpsr") return Solver::gpsr;
    throw ConfigError("unknown solver: " + std::string(s));
}

/// Solves one measurement vector with the chosen solver, applying the split
/// convention for M x 2N matrices.
inline ReconResult solve(const MeasurementMatrix& a, const Vec& y, Solver solver, const SolverOptions& opts)
{
    if (!a.split) {
        switch (solver) {
        case Solver::bp_exact: return bp_exact(a.data, y, opts);
        case Solver::bp_subgradient: return bp_subgradient(a.data, y, opts);
        case Solver::gpsr: return gpsr(a.data, y, opts);
        }
    }
    switch (solver) {
    case Solver::bp_exact: return bp_exact_nonneg(a.data, y, opts);
    case Solver::bp_subgradient: throw ConfigError("bp_subgradient does not support nonnegative split matrices");
    case Solver::gpsr: return gpsr_nonneg(a.data, y, opts);
    }
    throw ConfigError("unknown solver");
}

/// Measurements of a signal vector: Phi x, or Phi~ [x_+; (-x)_+].
inline Vec measure(const MeasurementMatrix& a, const Vec& x)
{
    require_dims(x.size() == a.n(), "signal length vs matrix");
    if (!a.split) return a.data * x;
    Vec z(2 * x.size());
    z.head(x.size()) = x.cwiseMax(0.0);
    z.tail(x.size()) = (-x).cwiseMax(0.0);
    return a.data * z;
}

/// Per-column reconstruction of an N x 2 real-form channel from M x 2 measurements.
struct ChannelRecon {
    Mat h;
    std::array<ReconResult, 2> columns;
};

inline ChannelRecon reconstruct_channel(const MeasurementMatrix& a, const Mat& measurements, Solver solver,
                                        const SolverOptions& opts)
{
    require_dims(measurements.rows() == a.m() && measurements.cols() == 2, "measurements must be M x 2");
    ChannelRecon out;
    out.h.resize(a.n(), 2);
    for (int c = 0; c < 2; ++c) {
        out.columns[static_cast<std::size_t>(c)] = solve(a, measurements.col(c), solver, opts);
        out.h.col(c) = out.columns[static_cast<std::size_t>(c)].x_hat;
    }
    return out;
}

} // namespace bpae
