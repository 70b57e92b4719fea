// bpae: data generation, training, evaluation and reporting for learned
// compressive-sensing measurement matrices.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <bpae/commands.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool force = false;
    bool quiet = false;

    std::optional<int> n, sparsity, channels;
    std::vector<std::string> variants;
    std::vector<int> ms;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::vector<std::string> solvers;
    std::vector<std::string> snrs;
    std::vector<std::uint64_t> baseline_seeds;
    std::optional<int> eval_channels;

    std::string checkpoint, export_out, export_csv;
};

bpae::RunConfig build_config(const Overrides& o)
{
    bpae::RunConfig c = o.config.empty() ? bpae::RunConfig{} : bpae::load_run_config(o.config);
    if (o.seed) c.dataset.seed = c.train.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    if (o.n) c.dataset.n_antennas = *o.n;
    if (o.sparsity) c.dataset.sparsity = *o.sparsity;
    if (o.channels) c.dataset.n_channels = *o.channels;
    if (!o.variants.empty()) {
        c.variants.clear();
        for (const auto& v : o.variants) c.variants.push_back(bpae::parse_variant(v));
    }
    if (!o.ms.empty()) c.m_values = o.ms;
    if (o.epochs) {
        c.train.max_epochs = *o.epochs;
        c.train.patience = std::min(c.train.patience, *o.epochs);
    }
    if (o.lr) c.train.learning_rate = *o.lr;
    if (!o.solvers.empty()) {
        c.solvers.clear();
        for (const auto& s : o.solvers) c.solvers.push_back(bpae::parse_solver(s));
    }
    if (!o.snrs.empty()) {
        c.snr_db.clear();
        for (const auto& s : o.snrs) {
            if (s == "none" || s == "inf") {
                c.snr_db.emplace_back();
                continue;
            }
            try {
                c.snr_db.emplace_back(std::stod(s));
            } catch (const std::exception&) {
                throw bpae::ConfigError("bad SNR value: " + s);
            }
        }
    }
    if (!o.baseline_seeds.empty()) c.baseline_seeds = o.baseline_seeds;
    if (o.eval_channels) c.eval_channels = *o.eval_channels;
    return c;  // each command validates the parts it uses
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Learned measurement matrices for sparse channel recovery"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    app.add_option("-c,--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("-o,--out", o.out, "experiment directory (default: config, then $BPAE_OUTPUT_ROOT, then ./bpae-out)");
    app.add_option("--seed", o.seed, "seed for data generation and training");
    app.add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--force", o.force, "overwrite existing dataset / checkpoints");
    app.add_flag("-q,--quiet", o.quiet, "suppress progress output");

    auto* gen = app.add_subcommand("gen-data", "generate and save the channel dataset");
    gen->add_option("--n", o.n, "antennas N");
    gen->add_option("--sparsity", o.sparsity, "kept beamspace entries S");
    gen->add_option("--channels", o.channels, "number of channel realizations");

    auto* tr = app.add_subcommand("train", "train one model per (variant, M)");
    tr->add_option("--variant", o.variants, "sae, gae, saecat, gaecat (repeatable)");
    tr->add_option("--m", o.ms, "compressed dimensions (repeatable)");
    tr->add_option("--epochs", o.epochs, "maximum epochs");
    tr->add_option("--lr", o.lr, "learning rate");

    auto* ev = app.add_subcommand("eval", "evaluate learned and baseline matrices on the test split");
    ev->add_option("--variant", o.variants, "learned variants to include (repeatable)");
    ev->add_option("--m", o.ms, "compressed dimensions (repeatable)");
    ev->add_option("--solver", o.solvers, "bp_exact, bp_subgradient, gpsr (repeatable)");
    ev->add_option("--snr", o.snrs, "SNR in dB, or 'none' for noiseless (repeatable)");
    ev->add_option("--baseline-seed", o.baseline_seeds, "seeds of the random baselines (repeatable)");
    ev->add_option("--eval-channels", o.eval_channels, "cap on test channels (0 = all)");

    auto* ex = app.add_subcommand("export-matrix", "write the column-normalized matrix of a checkpoint");
    ex->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    ex->add_option("--output", o.export_out, "destination matrix file")->required();
    ex->add_option("--csv", o.export_csv, "also write the matrix as CSV");

    auto* rp = app.add_subcommand("report", "summarize the evaluation report as tables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        bpae::CommandOptions copts;
        copts.force = o.force;
        copts.out = o.quiet ? nullptr : &std::cout;

        if (ex->parsed()) {
            const auto a = bpae::cmd_export_matrix(o.checkpoint, o.export_out,
                                                   o.export_csv.empty() ? std::nullopt
                                                                        : std::optional<std::filesystem::path>(o.export_csv));
            if (!o.quiet)
                std::cout << bpae::to_string(a.kind) << " matrix " << a.m() << "x" << a.k() << " -> " << o.export_out << '\n';
            return kExitOk;
        }

        const bpae::RunConfig cfg = build_config(o);
        const bpae::Layout layout{bpae::resolve_output_root(cfg, o.out)};
        if (gen->parsed()) {
            bpae::cmd_gen_data(cfg, layout, copts);
        } else if (tr->parsed()) {
            const auto runs = bpae::cmd_train(cfg, layout, copts);
            const auto diverged = std::count_if(runs.begin(), runs.end(), [](const bpae::TrainRun& r) {
                return r.status == bpae::TrainRun::Status::diverged;
            });
            if (diverged > 0) {
                std::cerr << diverged << " training run(s) diverged; see reports/train_summary.csv\n";
                return kExitRuntime;
            }
        } else if (ev->parsed()) {
            bpae::cmd_eval(cfg, layout, copts);
        } else if (rp->parsed()) {
            bpae::cmd_report(layout, copts);
        }
        return kExitOk;
    } catch (const bpae::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
