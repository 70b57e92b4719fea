#pragma once

// Experiment workbench: declarative run configuration and the pipeline
// commands behind the command-line tool. Each command reads and writes a
// single experiment directory:
//
//   <root>/dataset/dataset.bin
//   <root>/checkpoints/<variant>_m<M>.bin
//   <root>/logs/<variant>_m<M>.csv
//   <root>/reports/{train_summary.csv, eval.csv, eval.json, report.txt}
//
// Outputs contain no timestamps, so identical configs reproduce identical bytes.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "baselines.hpp"
#include "checkpoint.hpp"
#include "dataset.hpp"
#include "dataset_io.hpp"
#include "metrics.hpp"
#include "recon.hpp"
#include "train.hpp"

namespace bpae {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "BPAE_OUTPUT_ROOT";
inline constexpr const char* kDefaultOutputRoot = "bpae-out";

struct RunConfig {
    ChannelGenConfig dataset{};
    TrainConfig train{};
    std::vector<Variant> variants{Variant::sae, Variant::gae, Variant::saecat, Variant::gaecat};
    std::vector<int> m_values{24, 32, 40, 48, 56, 64, 72};
    std::vector<MatrixKind> baselines{MatrixKind::gaussian, MatrixKind::bernoulli, MatrixKind::partial_fourier,
                                      MatrixKind::selection};
    std::vector<std::uint64_t> baseline_seeds{1};
    std::vector<Solver> solvers{Solver::bp_exact};
    /// Empty optional = noiseless.
    std::vector<std::optional<double>> snr_db{std::nullopt};
    SolverOptions solver{};
    std::uint64_t noise_seed = 7;
    /// Test vectors pairs (channels) used by eval; 0 = the whole test split.
    int eval_channels = 0;
    std::string output_dir;
    unsigned threads = 1;

    void validate() const
    {
        dataset.validate();
        train.validate();
        solver.validate();
        if (variants.empty() && baselines.empty()) throw ConfigError("no variants and no baselines selected");
        if (m_values.empty()) throw ConfigError("m_values must be nonempty");
        if (solvers.empty()) throw ConfigError("solvers must be nonempty");
        if (snr_db.empty()) throw ConfigError("snr_db must be nonempty (null = noiseless)");
        if (!baselines.empty() && baseline_seeds.empty()) throw ConfigError("baseline_seeds must be nonempty");
        for (int m : m_values)
            if (m < 1 || m >= dataset.n_antennas) throw ConfigError("every M must satisfy 1 <= M < N");
        for (auto k : baselines)
            if (is_learned(k)) throw ConfigError("baselines may not list learned kinds");
        if (eval_channels < 0) throw ConfigError("eval_channels must be >= 0");
        if (threads < 1) throw ConfigError("threads must be >= 1");
    }
};

namespace detail {

template <class T, class F>
std::vector<T> parse_list(const nlohmann::ordered_json& v, const char* key, F&& f)
{
    if (!v.is_array()) throw ConfigError(std::string(key) + " must be an array");
    std::vector<T> out;
    for (const auto& e : v) out.push_back(f(e));
    return out;
}

inline nlohmann::ordered_json solver_json(const SolverOptions& s)
{
    return {{"tol", s.tol},       {"max_iters", s.max_iters}, {"tau", s.tau},
            {"alpha0", s.alpha0}, {"rho", s.rho},             {"continuation", s.continuation}};
}

inline void apply_solver_json(const nlohmann::ordered_json& j, SolverOptions& s)
{
    if (!j.is_object()) throw ConfigError("solver options must be an object");
    for (const auto& [key, v] : j.items()) {
        if (key == "tol") s.tol = v.get<double>();
        else if (key == "max_iters") s.max_iters = v.get<int>();
        else if (key == "tau") s.tau = v.get<double>();
        else if (key == "alpha0") s.alpha0 = v.get<double>();
        else if (key == "rho") s.rho = v.get<double>();
        else if (key == "continuation") s.continuation = v.get<bool>();
        else throw ConfigError("unknown solver option: " + key);
    }
}

} // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c)
{
    nlohmann::ordered_json j;
    j["dataset"] = to_json(c.dataset);
    j["train"] = to_json(c.train);
    j["variants"] = nlohmann::ordered_json::array();
    for (auto v : c.variants) j["variants"].push_back(to_string(v));
    j["m_values"] = c.m_values;
    j["baselines"] = nlohmann::ordered_json::array();
    for (auto k : c.baselines) j["baselines"].push_back(to_string(k));
    j["baseline_seeds"] = c.baseline_seeds;
    j["solvers"] = nlohmann::ordered_json::array();
    for (auto s : c.solvers) j["solvers"].push_back(to_string(s));
    j["snr_db"] = nlohmann::ordered_json::array();
    for (const auto& s : c.snr_db) j["snr_db"].push_back(s ? nlohmann::ordered_json(*s) : nlohmann::ordered_json());
    j["solver_options"] = detail::solver_json(c.solver);
    j["noise_seed"] = c.noise_seed;
    j["eval_channels"] = c.eval_channels;
    j["output_dir"] = c.output_dir;
    j["threads"] = c.threads;
    return j;
}

/// Overlays the keys present in `j` onto `c`; unknown keys are rejected.
inline void apply_json(const nlohmann::ordered_json& j, RunConfig& c)
{
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "dataset") apply_json(v, c.dataset);
            else if (key == "train") apply_json(v, c.train);
            else if (key == "variants")
                c.variants = detail::parse_list<Variant>(v, "variants", [](const auto& e) { return parse_variant(e.template get<std::string>()); });
            else if (key == "m_values") c.m_values = detail::parse_list<int>(v, "m_values", [](const auto& e) { return e.template get<int>(); });
            else if (key == "baselines")
                c.baselines = detail::parse_list<MatrixKind>(v, "baselines", [](const auto& e) { return parse_matrix_kind(e.template get<std::string>()); });
            else if (key == "baseline_seeds")
                c.baseline_seeds = detail::parse_list<std::uint64_t>(v, "baseline_seeds", [](const auto& e) { return e.template get<std::uint64_t>(); });
            else if (key == "solvers")
                c.solvers = detail::parse_list<Solver>(v, "solvers", [](const auto& e) { return parse_solver(e.template get<std::string>()); });
            else if (key == "snr_db")
                c.snr_db = detail::parse_list<std::optional<double>>(v, "snr_db", [](const auto& e) {
                    return e.is_null() ? std::optional<double>{} : std::optional<double>{e.template get<double>()};
                });
            else if (key == "solver_options") detail::apply_solver_json(v, c.solver);
            else if (key == "noise_seed") c.noise_seed = v.get<std::uint64_t>();
            else if (key == "eval_channels") c.eval_channels = v.get<int>();
            else if (key == "output_dir") c.output_dir = v.get<std::string>();
            else if (key == "threads") c.threads = v.get<unsigned>();
            else throw ConfigError("unknown config key: " + key);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config type error: ") + e.what());
    }
}

inline RunConfig load_run_config(const fs::path& path)
{
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    RunConfig c;
    apply_json(j, c);
    return c;
}

/// Explicit directory, else the config's, else $BPAE_OUTPUT_ROOT, else ./bpae-out.
inline fs::path resolve_output_root(const RunConfig& c, const std::optional<std::string>& explicit_dir = std::nullopt)
{
    if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
    if (!c.output_dir.empty()) return c.output_dir;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    return kDefaultOutputRoot;
}

struct Layout {
    fs::path root;

    [[nodiscard]] fs::path dataset() const { return root / "dataset" / "dataset.bin"; }
    [[nodiscard]] fs::path checkpoint(Variant v, int m) const { return root / "checkpoints" / run_name(v, m, ".bin"); }
    [[nodiscard]] fs::path log(Variant v, int m) const { return root / "logs" / run_name(v, m, ".csv"); }
    [[nodiscard]] fs::path reports() const { return root / "reports"; }

    static std::string run_name(Variant v, int m, const char* ext)
    {
        return std::string(to_string(v)) + "_m" + std::to_string(m) + ext;
    }
};

struct CommandOptions {
    bool force = false;
    std::ostream* out = nullptr;  ///< progress / summary sink; null = silent
};

namespace detail {

inline std::ostream& sink(const CommandOptions& o)
{
    static std::ostringstream devnull;
    devnull.str({});
    return o.out ? *o.out : devnull;
}

inline std::string config_echo(const RunConfig& c) { return to_json(c).dump(); }

} // namespace detail

struct GenDataResult {
    fs::path path;
    bool skipped = false;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
};

inline GenDataResult cmd_gen_data(const RunConfig& cfg, const Layout& layout, const CommandOptions& opts = {})
{
    cfg.dataset.validate();
    auto& out = detail::sink(opts);
    GenDataResult r;
    r.path = layout.dataset();
    if (fs::exists(r.path) && !opts.force) {
        const Dataset d = load_dataset(r.path);
        r = {r.path, true, d.split.train.size(), d.split.val.size(), d.split.test.size()};
        out << "dataset exists, skipped (use --force to regenerate): " << r.path.string() << '\n';
        return r;
    }
    const Dataset d = build_dataset(cfg.dataset, cfg.threads);
    save_dataset(d, r.path);
    r.n_train = d.split.train.size();
    r.n_val = d.split.val.size();
    r.n_test = d.split.test.size();
    out << "dataset: N=" << cfg.dataset.n_antennas << " S=" << cfg.dataset.sparsity << " channels=" << d.size()
        << " (train " << r.n_train << ", val " << r.n_val << ", test " << r.n_test << ") -> " << r.path.string() << '\n';
    return r;
}

struct TrainRun {
    Variant variant{};
    int m = 0;
    enum class Status { trained, skipped, diverged } status = Status::trained;
    std::string message;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double test_nmse = 0.0;  ///< autoencoder NMSE on the test split
};

inline const char* to_string(TrainRun::Status s)
{
    switch (s) {
    case TrainRun::Status::trained: return "trained";
    case TrainRun::Status::skipped: return "skipped";
    case TrainRun::Status::diverged: return "diverged";
    }
    return "?";
}

/// One checkpoint per (variant, M). Existing checkpoints are kept unless
/// opts.force; a diverging run is recorded and the sweep continues.
inline std::vector<TrainRun> cmd_train(const RunConfig& cfg, const Layout& layout, const CommandOptions& opts = {})
{
    cfg.validate();
    auto& out = detail::sink(opts);
    if (!fs::exists(layout.dataset())) throw IoError("dataset not found: " + layout.dataset().string() + " (run gen-data)");
    const Dataset data = load_dataset(layout.dataset());
    const auto train_set = data.vectors(data.split.train);
    const auto val_set = data.vectors(data.split.val);
    const auto test_set = data.vectors(data.split.test);
    TrainConfig tc = cfg.train;
    tc.threads = cfg.threads;

    std::vector<TrainRun> runs;
    for (Variant v : cfg.variants) {
        for (int m : cfg.m_values) {
            TrainRun run{v, m};
            const fs::path ckpt = layout.checkpoint(v, m);
            if (fs::exists(ckpt) && !opts.force) {
                run.status = TrainRun::Status::skipped;
                const MatrixFile f = load_matrix_file(ckpt);
                if (!f.model) throw CorruptFileError("checkpoint holds no model: " + ckpt.string());
                run.test_nmse = autoencoder_nmse(*f.model, test_set, cfg.threads);
                out << to_string(v) << " M=" << m << ": checkpoint exists, skipped\n";
                runs.push_back(run);
                continue;
            }
            try {
                const UnfoldModel init = init_model(v, data.n(), m, tc);
                auto [model, rep] = train(init, train_set, val_set, tc);
                save_matrix_file(make_checkpoint(model, detail::config_echo(cfg)), ckpt);
                write_file_atomic(layout.log(v, m), training_log_csv(rep));
                run.best_epoch = rep.best_epoch;
                run.best_val_loss = rep.best_val_loss;
                run.test_nmse = autoencoder_nmse(model, test_set, cfg.threads);
                out << to_string(v) << " M=" << m << ": best epoch " << rep.best_epoch << " of " << rep.stopped_epoch
                    << ", val loss " << rep.best_val_loss << ", test NMSE " << run.test_nmse << '\n';
            } catch (const TrainingDiverged& e) {
                run.status = TrainRun::Status::diverged;
                run.message = e.what();
                write_file_atomic(layout.log(v, m), training_log_csv(e.report));
                out << to_string(v) << " M=" << m << ": DIVERGED (" << e.what() << ")\n";
            }
            runs.push_back(run);
        }
    }

    std::ostringstream csv;
    csv.precision(17);
    csv << "variant,m,status,best_epoch,best_val_loss,test_nmse\n";
    for (const auto& r : runs) {
        csv << to_string(r.variant) << ',' << r.m << ',' << to_string(r.status) << ',';
        if (r.status == TrainRun::Status::trained) csv << r.best_epoch << ',' << r.best_val_loss;
        else csv << ',';
        csv << ',';
        if (r.status != TrainRun::Status::diverged) csv << r.test_nmse;
        csv << '\n';
    }
    write_file_atomic(layout.reports() / "train_summary.csv", csv.str());
    return runs;
}

/// Test channels used by eval (a prefix of the test split when capped).
inline std::vector<ChannelSample> eval_samples(const Dataset& d, int cap)
{
    std::size_t end = d.split.test.end;
    if (cap > 0) end = std::min(end, d.split.test.begin + static_cast<std::size_t>(cap));
    return {d.samples.begin() + static_cast<std::ptrdiff_t>(d.split.test.begin),
            d.samples.begin() + static_cast<std::ptrdiff_t>(end)};
}

struct NamedMatrix {
    MeasurementMatrix matrix;
    std::string label;
};

/// Every (matrix, solver, SNR) cell on the test split. Missing checkpoints
/// and solver/matrix combinations that do not apply are listed as skipped.
inline ExperimentReport cmd_eval(const RunConfig& cfg, const Layout& layout, const CommandOptions& opts = {})
{
    cfg.validate();
    auto& out = detail::sink(opts);
    if (!fs::exists(layout.dataset())) throw IoError("dataset not found: " + layout.dataset().string() + " (run gen-data)");
    const Dataset data = load_dataset(layout.dataset());
    const auto test = eval_samples(data, cfg.eval_channels);
    if (test.empty()) throw ConfigError("the test split is empty");

    ExperimentReport rep;
    std::vector<NamedMatrix> matrices;
    for (Variant v : cfg.variants)
        for (int m : cfg.m_values) {
            const fs::path ckpt = layout.checkpoint(v, m);
            if (!fs::exists(ckpt)) {
                rep.skipped.push_back("missing checkpoint " + Layout::run_name(v, m, ".bin"));
                out << "missing checkpoint, skipped: " << ckpt.string() << '\n';
                continue;
            }
            matrices.push_back({matrix_for_eval(load_matrix_file(ckpt)), Layout::run_name(v, m, "")});
        }
    // Baselines act on x, and additionally on the split vector when a cat
    // variant is part of the sweep, mirroring the M x 2N comparison block.
    const bool any_cat = std::any_of(cfg.variants.begin(), cfg.variants.end(), [](Variant v) { return is_cat(v); });
    for (auto kind : cfg.baselines)
        for (int m : cfg.m_values)
            for (auto seed : cfg.baseline_seeds)
                for (bool split : {false, true}) {
                    if (split && !any_cat) continue;
                    matrices.push_back({baseline_matrix(kind, m, data.n(), split, seed),
                                        std::string(split ? "split_" : "") + "seed" + std::to_string(seed)});
                }

    for (const auto& nm : matrices)
        for (Solver s : cfg.solvers)
            for (const auto& snr : cfg.snr_db) {
                if (nm.matrix.split && s == Solver::bp_subgradient) {
                    rep.skipped.push_back(std::string(to_string(nm.matrix.kind)) + "/" + nm.label +
                                          ": bp_subgradient needs an M x N matrix");
                    continue;
                }
                EvalOptions eo;
                eo.solver = s;
                eo.solver_opts = cfg.solver;
                eo.snr_db = snr;
                eo.noise_seed = cfg.noise_seed;
                eo.threads = cfg.threads;
                EvalOutcome o = evaluate(nm.matrix, test, eo);
                o.row.label = nm.label;
                out << o.row.matrix_kind << ' ' << nm.label << " M=" << o.row.m << ' ' << o.row.solver
                    << (snr ? " snr=" + detail::fmt_double(*snr) : std::string()) << ": nmse " << o.row.nmse
                    << ", accurate " << o.row.accurate_pct << "%\n";
                rep.rows.push_back(std::move(o.row));
            }
    rep.sort_rows();
    const fs::path dir = layout.reports();
    write_file_atomic(dir / "eval.csv", report_csv(rep));
    write_file_atomic(dir / "eval.json", report_json(rep).dump(2) + "\n");
    return rep;
}

/// Writes the normalized matrix of a checkpoint (same binary format) and,
/// optionally, a CSV text copy.
inline MeasurementMatrix cmd_export_matrix(const fs::path& checkpoint, const fs::path& dest,
                                           const std::optional<fs::path>& csv = std::nullopt)
{
    const MatrixFile in = load_matrix_file(checkpoint);
    MatrixFile outf;
    outf.matrix = matrix_for_eval(in);
    outf.config_echo = in.config_echo;
    save_matrix_file(outf, dest);
    if (csv) {
        std::ostringstream os;
        os.precision(17);
        const Mat& a = outf.matrix.data;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            for (Eigen::Index j = 0; j < a.cols(); ++j) os << (j ? "," : "") << a(i, j);
            os << '\n';
        }
        write_file_atomic(*csv, os.str());
    }
    return outf.matrix;
}

/// Condensed tables (kinds x M) of NMSE, accurate percentage and effective
/// rate for every (solver, SNR) pair in the evaluation report.
inline std::string cmd_report(const Layout& layout, const CommandOptions& opts = {})
{
    const fs::path src = layout.reports() / "eval.json";
    if (!fs::exists(src)) throw IoError("no evaluation report at " + src.string() + " (run eval)");
    const ExperimentReport rep = report_from_json(nlohmann::ordered_json::parse(read_file(src)));

    using Cell = std::pair<std::string, std::optional<double>>;  // solver, snr
    std::map<Cell, std::map<std::string, std::map<int, std::vector<const ReportRow*>>>> grid;
    std::set<int> ms;
    for (const auto& r : rep.rows) {
        const bool split = r.label.rfind("split_", 0) == 0;
        const std::string name = split ? r.matrix_kind + " (2N)" : r.matrix_kind;
        grid[{r.solver, r.snr_db}][name][r.m].push_back(&r);
        ms.insert(r.m);
    }
    std::ostringstream os;
    const auto table = [&](const char* title, const auto& rows, auto&& value, int precision) {
        os << "  " << title << '\n' << "    " << std::left << std::setw(22) << "matrix";
        for (int m : ms) os << std::right << std::setw(12) << ("M=" + std::to_string(m));
        os << '\n';
        for (const auto& [name, by_m] : rows) {
            os << "    " << std::left << std::setw(22) << name;
            for (int m : ms) {
                const auto it = by_m.find(m);
                if (it == by_m.end()) {
                    os << std::right << std::setw(12) << "-";
                    continue;
                }
                double sum = 0.0;
                for (const auto* r : it->second) sum += value(*r);
                std::ostringstream cell;
                cell << std::setprecision(precision) << sum / static_cast<double>(it->second.size());
                os << std::right << std::setw(12) << cell.str();
            }
            os << '\n';
        }
    };
    for (const auto& [cell, rows] : grid) {
        os << "solver " << cell.first << ", " << (cell.second ? "SNR " + detail::fmt_double(*cell.second) + " dB" : "noiseless")
           << " (baseline cells average their seeds)\n";
        table("NMSE", rows, [](const ReportRow& r) { return r.nmse; }, 3);
        table("accurate reconstruction %", rows, [](const ReportRow& r) { return r.accurate_pct; }, 4);
        table("effective rate", rows, [](const ReportRow& r) { return r.effective_rate; }, 4);
        os << '\n';
    }
    if (!rep.skipped.empty()) {
        os << "skipped:\n";
        for (const auto& s : rep.skipped) os << "  " << s << '\n';
    }
    const std::string text = os.str();
    write_file_atomic(layout.reports() / "report.txt", text);
    detail::sink(opts) << text;
    return text;
}

} // namespace bpae
