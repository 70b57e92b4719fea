#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <bpae/commands.hpp>

#include "support.hpp"

using namespace bpae;

namespace {

RunConfig tiny_run()
{
    RunConfig c;
    c.dataset.n_antennas = 16;
    c.dataset.sparsity = 2;
    c.dataset.n_channels = 60;
    c.dataset.split = {0.8, 0.1, 0.1};
    c.train.depth = 3;
    c.train.learning_rate = 0.05;
    c.train.phi_init_std = 0.08;
    c.train.max_epochs = 3;
    c.train.patience = 2;
    c.train.batch_size = 16;
    c.variants = {Variant::sae, Variant::gae};
    c.m_values = {6, 8};
    c.baselines = {MatrixKind::gaussian, MatrixKind::bernoulli};
    return c;
}

std::string slurp(const fs::path& p)
{
    return read_file(p);
}

std::size_t line_count(const std::string& s)
{
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

} // namespace

TEST(RunConfig, DefaultsMirrorPaperSetup)
{
    const RunConfig c;
    EXPECT_EQ(c.dataset.n_antennas, 256);
    EXPECT_EQ(c.dataset.sparsity, 16);
    EXPECT_EQ(c.dataset.n_channels, 50000);
    EXPECT_EQ(c.train.depth, 15);
    EXPECT_EQ(c.train.learning_rate, 0.001);
    EXPECT_EQ(c.train.batch_size, 128);
    EXPECT_EQ(c.train.max_epochs, 1000);
    EXPECT_EQ(c.train.patience, 25);
    EXPECT_EQ(c.m_values, (std::vector<int>{24, 32, 40, 48, 56, 64, 72}));
    EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, JsonRoundTripAndUnknownKeys)
{
    RunConfig c = tiny_run();
    c.snr_db = {std::nullopt, 10.0};
    c.solvers = {Solver::gpsr, Solver::bp_exact};
    c.solver.tau = 1e-3;
    RunConfig back;
    apply_json(to_json(c), back);
    EXPECT_EQ(to_json(back), to_json(c));

    for (const char* bad : {R"({"m_value": [1]})", R"({"dataset": {"n": 3}})", R"({"train": {"lr": 1}})",
                            R"({"solver": {"tolerance": 1}})"}) {
        RunConfig r;
        EXPECT_THROW(apply_json(nlohmann::ordered_json::parse(bad), r), ConfigError) << bad;
    }
    RunConfig r;
    EXPECT_THROW(apply_json(nlohmann::ordered_json::parse(R"({"m_values": "8"})"), r), ConfigError);
    EXPECT_THROW(apply_json(nlohmann::ordered_json::parse(R"({"variants": ["lista"]})"), r), ConfigError);
    EXPECT_THROW(apply_json(nlohmann::ordered_json::parse(R"({"dataset": {"n_antennas": "x"}})"), r), ConfigError);
}

TEST(RunConfig, ValidateRejectsEmptySweepsAndBadM)
{
    RunConfig c = tiny_run();
    c.m_values = {};
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_run();
    c.m_values = {16};
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_run();
    c.solvers = {};
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_run();
    c.snr_db = {};
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_run();
    c.baselines = {MatrixKind::learned_gae};
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, LoadFromFile)
{
    test::TempDir dir("cfg");
    std::ofstream(dir / "c.json") << R"({"dataset": {"n_antennas": 32}, "m_values": [4], "output_dir": "x"})";
    const RunConfig c = load_run_config(dir / "c.json");
    EXPECT_EQ(c.dataset.n_antennas, 32);
    EXPECT_EQ(c.m_values, std::vector<int>{4});
    std::ofstream(dir / "bad.json") << "{ nope";
    EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
}

TEST(OutputRoot, PrecedenceFlagConfigEnvDefault)
{
    RunConfig c;
    ::unsetenv(kOutputRootEnv);
    EXPECT_EQ(resolve_output_root(c), fs::path(kDefaultOutputRoot));
    ::setenv(kOutputRootEnv, "/tmp/env-root", 1);
    EXPECT_EQ(resolve_output_root(c), fs::path("/tmp/env-root"));
    c.output_dir = "cfg-root";
    EXPECT_EQ(resolve_output_root(c), fs::path("cfg-root"));
    EXPECT_EQ(resolve_output_root(c, std::string("flag-root")), fs::path("flag-root"));
    ::unsetenv(kOutputRootEnv);
}

TEST(Pipeline, GenTrainEvalReport)
{
    test::TempDir dir("pipe");
    const Layout layout{dir.path()};
    const RunConfig cfg = tiny_run();

    const GenDataResult g = cmd_gen_data(cfg, layout);
    EXPECT_FALSE(g.skipped);
    EXPECT_EQ(g.n_train + g.n_val + g.n_test, 60u);
    const Dataset d = load_dataset(layout.dataset());
    for (const auto& s : d.samples) EXPECT_NEAR(s.h.norm(), 1.0, 1e-10);
    EXPECT_TRUE(cmd_gen_data(cfg, layout).skipped);

    // 2 variants x 2 Ms -> 4 checkpoints.
    const auto runs = cmd_train(cfg, layout);
    ASSERT_EQ(runs.size(), 4u);
    for (const auto& r : runs) {
        EXPECT_EQ(r.status, TrainRun::Status::trained) << r.message;
        EXPECT_TRUE(fs::exists(layout.checkpoint(r.variant, r.m)));
        const std::string log = slurp(layout.log(r.variant, r.m));
        EXPECT_EQ(log.substr(0, log.find('\n')), "epoch,train_loss,val_loss");
    }
    const std::string summary = slurp(layout.reports() / "train_summary.csv");
    EXPECT_EQ(summary.substr(0, summary.find('\n')), "variant,m,status,best_epoch,best_val_loss,test_nmse");
    EXPECT_EQ(line_count(summary), 5u);

    // Resume-safe: nothing retrained unless forced.
    const auto bytes = slurp(layout.checkpoint(Variant::gae, 8));
    for (const auto& r : cmd_train(cfg, layout)) EXPECT_EQ(r.status, TrainRun::Status::skipped);
    EXPECT_EQ(slurp(layout.checkpoint(Variant::gae, 8)), bytes);
    CommandOptions force;
    force.force = true;
    for (const auto& r : cmd_train(cfg, layout, force)) EXPECT_EQ(r.status, TrainRun::Status::trained);
    EXPECT_EQ(slurp(layout.checkpoint(Variant::gae, 8)), bytes);  // deterministic

    // |matrices| x |solvers| x |SNRs|: (4 learned + 2 kinds x 2 Ms) x 2 x 2.
    RunConfig ev = cfg;
    ev.solvers = {Solver::bp_exact, Solver::gpsr};
    ev.snr_db = {std::nullopt, 20.0};
    ev.eval_channels = 3;
    const ExperimentReport rep = cmd_eval(ev, layout);
    EXPECT_EQ(rep.rows.size(), 8u * 2u * 2u);
    EXPECT_TRUE(rep.skipped.empty());
    for (const auto& r : rep.rows) EXPECT_EQ(r.n_samples, 6);
    const std::string csv = slurp(layout.reports() / "eval.csv");
    EXPECT_EQ(line_count(csv), rep.rows.size() + 1);
    EXPECT_NE(csv.find("nmse_vs_gaussian"), std::string::npos);
    const std::string json = slurp(layout.reports() / "eval.json");
    cmd_eval(ev, layout);
    EXPECT_EQ(slurp(layout.reports() / "eval.json"), json);

    std::ostringstream shown;
    CommandOptions show;
    show.out = &shown;
    const std::string text = cmd_report(layout, show);
    EXPECT_NE(text.find("learned_gae"), std::string::npos);
    EXPECT_NE(text.find("SNR 20 dB"), std::string::npos);
    EXPECT_EQ(slurp(layout.reports() / "report.txt"), text);
    EXPECT_NE(shown.str().find("accurate reconstruction %"), std::string::npos);
}

TEST(Pipeline, MissingCheckpointsAreListedAndSkipped)
{
    test::TempDir dir("skip");
    const Layout layout{dir.path()};
    RunConfig cfg = tiny_run();
    cfg.variants = {Variant::gaecat};
    cfg.m_values = {6};
    cfg.solvers = {Solver::bp_exact, Solver::bp_subgradient};
    cfg.eval_channels = 2;
    cmd_gen_data(cfg, layout);
    const ExperimentReport rep = cmd_eval(cfg, layout);
    // Baselines on x and on the split vector; bp_subgradient skips the split ones.
    EXPECT_EQ(rep.rows.size(), 2u * 2u + 2u * 1u);
    ASSERT_EQ(rep.skipped.size(), 1u + 2u);
    EXPECT_NE(rep.skipped[0].find("gaecat_m6"), std::string::npos);
}

TEST(Pipeline, CommandsNeedTheirInputs)
{
    test::TempDir dir("inputs");
    const Layout layout{dir.path()};
    EXPECT_THROW(cmd_train(tiny_run(), layout), IoError);
    EXPECT_THROW(cmd_eval(tiny_run(), layout), IoError);
    EXPECT_THROW(cmd_report(layout), IoError);
}

TEST(Pipeline, ExportMatrixWritesNormalizedCopy)
{
    test::TempDir dir("export");
    TrainConfig tc;
    tc.depth = 2;
    const UnfoldModel m = init_model(Variant::saecat, 6, 3, tc);
    save_matrix_file(make_checkpoint(m, "{}"), dir / "ck.bin");
    const MeasurementMatrix a = cmd_export_matrix(dir / "ck.bin", dir / "a.bin", dir / "a.csv");
    const MatrixFile back = load_matrix_file(dir / "a.bin");
    EXPECT_FALSE(back.model.has_value());
    EXPECT_EQ(back.matrix.data, a.data);
    EXPECT_TRUE(back.matrix.split);
    EXPECT_LT((back.matrix.data.colwise().norm().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_EQ(line_count(slurp(dir / "a.csv")), 3u);
}

#ifdef BPAE_CLI_PATH

namespace {

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(BPAE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Cli, ExitCodes)
{
    test::TempDir dir("cli");
    const std::string out = "--out " + dir.path().string();
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli(out + " gen-data --bogus"), 1);
    EXPECT_EQ(run_cli(out + " --threads 0 gen-data"), 1);
    EXPECT_EQ(run_cli(out + " gen-data --n 8 --sparsity 9"), 1);   // invalid config
    EXPECT_EQ(run_cli(out + " eval --m 4"), 2);                    // no dataset yet
    EXPECT_EQ(run_cli(out + " report"), 2);
    EXPECT_EQ(run_cli(out + " -q gen-data --n 16 --sparsity 2 --channels 40"), 0);
    EXPECT_EQ(run_cli(out + " -q eval --variant gae --m 4 --eval-channels 2"), 0);
    EXPECT_EQ(run_cli(out + " -q report"), 0);
    EXPECT_EQ(run_cli("export-matrix --checkpoint " + (dir / "nope").string() + " --output x"), 1);
}

TEST(Cli, SeedFlagAndEnvironmentRoot)
{
    test::TempDir dir("cli-seed");
    const std::string a = (dir / "a").string(), b = (dir / "b").string(), c = (dir / "c").string();
    const std::string gen = " -q gen-data --n 16 --sparsity 2 --channels 30";
    ASSERT_EQ(run_cli("--out " + a + " --seed 5" + gen), 0);
    ASSERT_EQ(run_cli("--out " + b + " --seed 5" + gen), 0);
    ASSERT_EQ(run_cli("--out " + c + " --seed 6" + gen), 0);
    EXPECT_EQ(slurp(fs::path(a) / "dataset/dataset.bin"), slurp(fs::path(b) / "dataset/dataset.bin"));
    EXPECT_NE(slurp(fs::path(a) / "dataset/dataset.bin"), slurp(fs::path(c) / "dataset/dataset.bin"));

    const std::string env = (dir / "env").string();
    ASSERT_EQ(std::system(("BPAE_OUTPUT_ROOT=" + env + " " + BPAE_CLI_PATH + " -q" + gen + " > /dev/null 2>&1").c_str()), 0);
    EXPECT_TRUE(fs::exists(fs::path(env) / "dataset/dataset.bin"));
}

#endif
