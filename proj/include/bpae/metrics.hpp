#pragma once

// Reconstruction metrics, measurement noise, and test-set evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "recon.hpp"

namespace bpae {

inline constexpr double kAccurateThreshold = 1e-8;
inline constexpr double kDefaultRate = 10.0;       ///< R0, rate with perfect CSI
inline constexpr int kDefaultBlockLength = 100;    ///< B, symbols per block

/// ||x - x_hat||^2 / ||x||^2.
inline double normalized_error(const Vec& x, const Vec& x_hat)
{
    require_dims(x.size() == x_hat.size(), "truth vs estimate length");
    const double nx = x.squaredNorm();
    if (!(nx > 0.0)) throw NumericError("zero-norm truth vector");
    return (x - x_hat).squaredNorm() / nx;
}

inline std::vector<double> normalized_errors(const std::vector<Vec>& truths, const std::vector<Vec>& estimates)
{
    if (truths.empty()) throw DimensionError("no samples");
    require_dims(truths.size() == estimates.size(), "sample counts");
    std::vector<double> e(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) e[i] = normalized_error(truths[i], estimates[i]);
    return e;
}

inline double nmse(const std::vector<Vec>& truths, const std::vector<Vec>& estimates)
{
    const auto e = normalized_errors(truths, estimates);
    return std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
}

inline double accurate_pct_from_errors(const std::vector<double>& errors, double threshold = kAccurateThreshold)
{
    if (errors.empty()) throw DimensionError("no samples");
    const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= threshold; });
    return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

inline double accurate_pct(const std::vector<Vec>& truths, const std::vector<Vec>& estimates,
                           double threshold = kAccurateThreshold)
{
    return accurate_pct_from_errors(normalized_errors(truths, estimates), threshold);
}

/// R_e = R0 (1 - M / B) P_r.
inline double effective_rate(double r0, int m, int b, double p_r)
{
    if (!(p_r >= 0.0 && p_r <= 1.0)) throw ConfigError("success probability must lie in [0, 1]");
    if (b <= 0 || m < 0 || m > b) throw ConfigError("need 0 <= m <= b");
    // Integer pilot overhead first keeps R0 (B - M) / B exact for integral R0.
    return r0 * static_cast<double>(b - m) / static_cast<double>(b) * p_r;
}

/// Per-entry noise variance giving signal-to-noise ratio snr_db over the
/// entries of y: ||y||_F^2 / numel * 10^(-snr_db / 10). For an M x 2
/// measurement this is ||Y||_F^2 / (2M) * 10^(-snr_db / 10).
inline double noise_variance(const Mat& y, double snr_db)
{
    return y.squaredNorm() / static_cast<double>(y.size()) * std::pow(10.0, -snr_db / 10.0);
}

template <class Rng>
Mat add_measurement_noise(const Mat& y, double snr_db, Rng& rng)
{
    if (!y.allFinite()) throw NumericError("non-finite measurements");
    const double sd = std::sqrt(noise_variance(y, snr_db));
    Mat out = y;
    if (!(sd > 0.0)) return out;
    std::normal_distribution<double> gauss(0.0, sd);
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += gauss(rng);
    return out;
}

struct ReportRow {
    std::string matrix_kind;
    std::string label;  ///< distinguishes matrices of one kind (seed, checkpoint)
    int m = 0;
    std::string solver;
    std::optional<double> snr_db;
    double nmse = 0.0;
    double accurate_pct = 0.0;
    double effective_rate = 0.0;
    int n_samples = 0;
    int n_failures = 0;
};

struct EvalOptions {
    Solver solver = Solver::bp_exact;
    SolverOptions solver_opts{};
    std::optional<double> snr_db;
    std::uint64_t noise_seed = 7;
    double r0 = kDefaultRate;
    int block_length = kDefaultBlockLength;
    double threshold = kAccurateThreshold;
    unsigned threads = 1;
};

struct EvalOutcome {
    ReportRow row;
    std::vector<double> errors;  ///< per-vector normalized squared errors
};

/// Measures and reconstructs every test channel (both real columns), then
/// scores each column as one sample. Solver failures count as inaccurate
/// with unit error.
inline EvalOutcome evaluate(const MeasurementMatrix& a, const std::vector<ChannelSample>& test, const EvalOptions& opts)
{
    a.validate();
    if (test.empty()) throw DimensionError("empty test set");
    std::vector<double> errors(2 * test.size());
    std::vector<int> failed(test.size(), 0);
    parallel_for(test.size(), opts.threads, [&](std::size_t i) {
        const Mat& h = test[i].h;
        require_dims(h.rows() == a.n(), "matrix N vs channel length");
        Mat y(a.m(), 2);
        y.col(0) = measure(a, h.col(0));
        y.col(1) = measure(a, h.col(1));
        if (opts.snr_db) {
            auto rng = substream(opts.noise_seed, i);
            y = add_measurement_noise(y, *opts.snr_db, rng);
        }
        for (int c = 0; c < 2; ++c) {
            double err = 1.0;
            try {
                const ReconResult r = solve(a, y.col(c), opts.solver, opts.solver_opts);
                if (r.x_hat.allFinite()) err = normalized_error(h.col(c), r.x_hat);
                else failed[i] += 1;
            } catch (const RankError&) {
                throw;
            } catch (const Error&) {
                failed[i] += 1;
            }
            errors[2 * i + static_cast<std::size_t>(c)] = err;
        }
    });
    EvalOutcome out;
    out.errors = errors;
    auto& row = out.row;
    row.matrix_kind = to_string(a.kind);
    row.m = static_cast<int>(a.m());
    row.solver = to_string(opts.solver);
    row.snr_db = opts.snr_db;
    row.n_samples = static_cast<int>(errors.size());
    row.n_failures = std::accumulate(failed.begin(), failed.end(), 0);
    row.nmse = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
    row.accurate_pct = accurate_pct_from_errors(errors, opts.threshold);
    row.effective_rate = row.m <= opts.block_length
                             ? effective_rate(opts.r0, row.m, opts.block_length, row.accurate_pct / 100.0)
                             : 0.0;
    return out;
}

inline constexpr int kReportSchemaVersion = 1;

/// Rows of one evaluation sweep plus the cells that could not be run.
struct ExperimentReport {
    std::vector<ReportRow> rows;
    std::vector<std::string> skipped;

    void sort_rows()
    {
        const auto key = [](const ReportRow& r) {
            // Noiseless rows first, then by increasing SNR.
            return std::make_tuple(r.matrix_kind, r.label, r.m, r.solver, r.snr_db.has_value(), r.snr_db.value_or(0.0));
        };
        std::sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) { return key(a) < key(b); });
    }

    /// Mean NMSE of the Gaussian rows at the same (m, solver, snr), if any.
    [[nodiscard]] std::optional<double> gaussian_reference(const ReportRow& r) const
    {
        double sum = 0.0;
        int count = 0;
        for (const auto& g : rows)
            if (g.matrix_kind == "gaussian" && g.m == r.m && g.solver == r.solver && g.snr_db == r.snr_db) {
                sum += g.nmse;
                ++count;
            }
        if (count == 0) return std::nullopt;
        return sum / count;
    }
};

namespace detail {

inline std::string fmt_double(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace detail

inline std::string report_csv(const ExperimentReport& rep)
{
    std::ostringstream os;
    os << "matrix_kind,label,m,solver,snr_db,nmse,accurate_pct,effective_rate,n_samples,n_failures,gaussian_nmse,"
          "nmse_vs_gaussian\n";
    for (const auto& r : rep.rows) {
        const auto ref = rep.gaussian_reference(r);
        os << r.matrix_kind << ',' << r.label << ',' << r.m << ',' << r.solver << ','
           << (r.snr_db ? detail::fmt_double(*r.snr_db) : std::string()) << ',' << detail::fmt_double(r.nmse) << ','
           << detail::fmt_double(r.accurate_pct) << ',' << detail::fmt_double(r.effective_rate) << ',' << r.n_samples
           << ',' << r.n_failures << ',' << (ref ? detail::fmt_double(*ref) : std::string()) << ','
           << (ref && *ref > 0.0 ? detail::fmt_double(r.nmse / *ref) : std::string()) << '\n';
    }
    return os.str();
}

/// {"schema_version", "reports": {kind: [row, ...]}, "skipped": [...]}
inline nlohmann::ordered_json report_json(const ExperimentReport& rep)
{
    nlohmann::ordered_json by_kind = nlohmann::ordered_json::object();
    for (const auto& r : rep.rows) {
        nlohmann::ordered_json row = {{"label", r.label},
                                      {"m", r.m},
                                      {"solver", r.solver},
                                      {"snr_db", r.snr_db ? nlohmann::ordered_json(*r.snr_db) : nlohmann::ordered_json()},
                                      {"nmse", r.nmse},
                                      {"accurate_pct", r.accurate_pct},
                                      {"effective_rate", r.effective_rate},
                                      {"n_samples", r.n_samples},
                                      {"n_failures", r.n_failures}};
        if (const auto ref = rep.gaussian_reference(r)) row["gaussian_nmse"] = *ref;
        by_kind[r.matrix_kind].push_back(std::move(row));
    }
    return {{"schema_version", kReportSchemaVersion}, {"reports", std::move(by_kind)}, {"skipped", rep.skipped}};
}

inline ExperimentReport report_from_json(const nlohmann::ordered_json& j)
{
    if (!j.is_object() || !j.contains("schema_version") || !j.contains("reports"))
        throw ConfigError("not an evaluation report");
    if (j.at("schema_version").get<int>() != kReportSchemaVersion)
        throw ConfigError("unsupported report schema version " + j.at("schema_version").dump());
    ExperimentReport rep;
    for (const auto& [kind, rows] : j.at("reports").items())
        for (const auto& row : rows) {
            ReportRow r;
            r.matrix_kind = kind;
            r.label = row.at("label").get<std::string>();
            r.m = row.at("m").get<int>();
            r.solver = row.at("solver").get<std::string>();
            if (!row.at("snr_db").is_null()) r.snr_db = row.at("snr_db").get<double>();
            r.nmse = row.at("nmse").get<double>();
            r.accurate_pct = row.at("accurate_pct").get<double>();
            r.effective_rate = row.at("effective_rate").get<double>();
            r.n_samples = row.at("n_samples").get<int>();
            r.n_failures = row.at("n_failures").get<int>();
            rep.rows.push_back(std::move(r));
        }
    if (j.contains("skipped")) rep.skipped = j.at("skipped").get<std::vector<std::string>>();
    rep.sort_rows();
    return rep;
}

} // namespace bpae
