#include <bit>
#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include <bpae/checkpoint.hpp>
#include <bpae/dataset_io.hpp>

#include "support.hpp"

using namespace bpae;

namespace {

Dataset tiny_dataset()
{
    ChannelGenConfig c;
    c.n_antennas = 8;
    c.n_paths = 2;
    c.sparsity = 3;
    c.n_channels = 20;
    c.seed = 4;
    return build_dataset(c);
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes)
{
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void set_u32(std::string& bytes, std::size_t offset, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) bytes[offset + static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffu);
}

UnfoldModel small_model(Variant v, BatchNorm bn = BatchNorm::off)
{
    TrainConfig cfg;
    cfg.depth = 3;
    cfg.batch_norm = bn;
    cfg.seed = 8;
    UnfoldModel m = init_model(v, 6, 3, cfg);
    m.alpha = 0.37;
    if (bn == BatchNorm::per_layer) {
        m.bn_mean[0].setConstant(0.25);
        m.bn_var[1].setConstant(2.5);
    }
    return m;
}

} // namespace

TEST(DatasetFile, RoundTripIsBitExact)
{
    test::TempDir dir("ds");
    const Dataset d = tiny_dataset();
    save_dataset(d, dir / "d.bin");
    const Dataset back = load_dataset(dir / "d.bin");
    ASSERT_EQ(back.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        EXPECT_EQ(std::memcmp(back.samples[i].h.data(), d.samples[i].h.data(), sizeof(double) * 16), 0) << i;
    EXPECT_EQ(back.split, d.split);
    EXPECT_EQ(back.meta.seed, d.meta.seed);
    EXPECT_EQ(back.meta.sparsity, 3);
    EXPECT_EQ(encode_dataset(back), encode_dataset(d));
}

TEST(DatasetFile, LayoutFieldsAreLittleEndian)
{
    const std::string b = encode_dataset(tiny_dataset());
    EXPECT_EQ(b.substr(0, 8), "BPAEDSET");
    EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);  // version
    EXPECT_EQ(static_cast<unsigned char>(b[12]), 8u); // n
    EXPECT_EQ(static_cast<unsigned char>(b[16]), 3u); // sparsity
    EXPECT_EQ(static_cast<unsigned char>(b[20]), 20u);
}

TEST(DatasetFile, TruncatedFileIsCorrupt)
{
    const std::string b = encode_dataset(tiny_dataset());
    for (std::size_t len : {std::size_t{0}, std::size_t{5}, std::size_t{20}, b.size() - 1})
        EXPECT_THROW(decode_dataset(std::string_view(b).substr(0, len)), CorruptFileError) << len;
}

TEST(DatasetFile, UnsupportedVersionIsDistinct)
{
    std::string b = encode_dataset(tiny_dataset());
    set_u32(b, 8, 2);
    EXPECT_THROW(decode_dataset(b), FormatVersionError);
}

TEST(DatasetFile, BadMagicIsCorrupt)
{
    std::string b = encode_dataset(tiny_dataset());
    b[0] = 'X';
    EXPECT_THROW(decode_dataset(b), CorruptFileError);
}

TEST(DatasetFile, InconsistentSplitCountsAreCorrupt)
{
    std::string b = encode_dataset(tiny_dataset());
    b[28] = static_cast<char>(b[28] + 1);  // n_train
    EXPECT_THROW(decode_dataset(b), CorruptFileError);
}

TEST(DatasetFile, MissingFileIsIoError)
{
    test::TempDir dir("ds");
    EXPECT_THROW(load_dataset(dir / "absent.bin"), IoError);
}

TEST(DatasetFile, ErrorKindsAreDistinct)
{
    EXPECT_FALSE((std::is_base_of_v<CorruptFileError, FormatVersionError>));
    EXPECT_FALSE((std::is_base_of_v<IoError, CorruptFileError>));
    EXPECT_FALSE((std::is_base_of_v<CorruptFileError, IoError>));
}

TEST(TextImport, ReadsRealThenImaginaryParts)
{
    test::TempDir dir("txt");
    // Two channels of length 2: [3+4j, 0] and [1, 1j].
    write_bytes(dir / "c.txt", "3 0 4 0\n\n1 0, 0 1\n");
    const Dataset d = import_text_dataset(dir / "c.txt", {0.5, 0.5, 0.0});
    ASSERT_EQ(d.size(), 2u);
    EXPECT_NEAR(d.samples[0].h(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(d.samples[0].h(0, 1), 0.8, 1e-15);
    EXPECT_NEAR(d.samples[1].h(1, 1), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_EQ(d.split.train.size(), 1u);
    EXPECT_EQ(d.n(), 2);
}

TEST(TextImport, OptionalSparsification)
{
    test::TempDir dir("txt");
    write_bytes(dir / "c.txt", "3 1 2 0 0 0\n");
    const Dataset d = import_text_dataset(dir / "c.txt", {1.0, 0.0, 0.0}, 2);
    EXPECT_EQ(d.samples[0].h(1, 0), 0.0);
    EXPECT_NEAR(d.samples[0].h(0, 0), 3.0 / std::sqrt(13.0), 1e-15);
}

TEST(TextImport, RejectsMalformedLines)
{
    test::TempDir dir("txt");
    write_bytes(dir / "odd.txt", "1 2 3\n");
    EXPECT_THROW(import_text_dataset(dir / "odd.txt", {}), CorruptFileError);
    write_bytes(dir / "ragged.txt", "1 2\n1 2 3 4\n");
    EXPECT_THROW(import_text_dataset(dir / "ragged.txt", {}), CorruptFileError);
    write_bytes(dir / "junk.txt", "1 x\n");
    EXPECT_THROW(import_text_dataset(dir / "junk.txt", {}), CorruptFileError);
    write_bytes(dir / "empty.txt", "\n");
    EXPECT_THROW(import_text_dataset(dir / "empty.txt", {}), CorruptFileError);
}

TEST(DatasetConfigJson, RoundTripAndUnknownKeys)
{
    ChannelGenConfig c;
    c.n_antennas = 32;
    c.seed = 99;
    c.aod = AodDistribution::uniform_spatial;
    ChannelGenConfig back;
    apply_json(to_json(c), back);
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(apply_json(nlohmann::ordered_json{{"n_antenas", 3}}, back), ConfigError);
}

class CheckpointRoundTrip : public ::testing::TestWithParam<std::tuple<Variant, BatchNorm>> {};

TEST_P(CheckpointRoundTrip, PreservesModel)
{
    const auto [variant, bn] = GetParam();
    const UnfoldModel m = small_model(variant, bn);
    test::TempDir dir("ck");
    save_matrix_file(make_checkpoint(m, "{\"k\":1}"), dir / "m.bin");
    const MatrixFile f = load_matrix_file(dir / "m.bin");
    ASSERT_TRUE(f.model.has_value());
    EXPECT_EQ(f.model->phi, m.phi);
    EXPECT_EQ(f.model->alpha, m.alpha);
    EXPECT_EQ(f.model->depth, m.depth);
    EXPECT_EQ(f.model->variant, m.variant);
    EXPECT_EQ(f.model->batch_norm, m.batch_norm);
    EXPECT_EQ(f.model->bn_mean, m.bn_mean);
    EXPECT_EQ(f.model->bn_var, m.bn_var);
    EXPECT_EQ(f.config_echo, "{\"k\":1}");
    EXPECT_EQ(f.matrix.kind, learned_kind(variant));
    EXPECT_EQ(f.matrix.split, is_cat(variant));
    EXPECT_FALSE(f.matrix.normalized);
    EXPECT_EQ(reconstruct(*f.model, Vec::LinSpaced(6, -1, 1)), reconstruct(m, Vec::LinSpaced(6, -1, 1)));
}

INSTANTIATE_TEST_SUITE_P(All, CheckpointRoundTrip,
                         ::testing::Combine(::testing::Values(Variant::sae, Variant::gae, Variant::saecat,
                                                              Variant::gaecat),
                                            ::testing::Values(BatchNorm::off, BatchNorm::per_layer)));

TEST(MatrixFileFormat, PlainMatrixRoundTrip)
{
    MatrixFile f;
    f.matrix = MeasurementMatrix{normalize_columns((Mat(2, 3) << 1, 2, 3, 4, 5, 6).finished()), MatrixKind::bernoulli,
                                 true, false};
    const MatrixFile back = decode_matrix_file(encode_matrix_file(f));
    EXPECT_FALSE(back.model.has_value());
    EXPECT_EQ(back.matrix.data, f.matrix.data);
    EXPECT_EQ(back.matrix.kind, MatrixKind::bernoulli);
    EXPECT_TRUE(back.matrix.normalized);
    EXPECT_EQ(matrix_for_eval(back).data, f.matrix.data);
}

TEST(MatrixFileFormat, PayloadIsRowMajorAfterHeader)
{
    MatrixFile f;
    f.matrix.data = (Mat(2, 2) << 1.0, 2.0, 3.0, 4.0).finished();
    const std::string b = encode_matrix_file(f);
    // magic 8, version 4, flags 4, dims 8
    double second = 0.0;
    std::memcpy(&second, b.data() + 24 + 8, sizeof(double));
    EXPECT_EQ(second, 2.0);
}

TEST(MatrixFileFormat, CorruptionIsDetected)
{
    const std::string b = encode_matrix_file(make_checkpoint(small_model(Variant::gae), "echo"));
    EXPECT_THROW(decode_matrix_file(std::string_view(b).substr(0, 30)), CorruptFileError);
    EXPECT_THROW(decode_matrix_file(std::string_view(b).substr(0, b.size() - 1)), CorruptFileError);
    EXPECT_THROW(decode_matrix_file(b + "x"), CorruptFileError);
    std::string bad_magic = b;
    bad_magic[3] = '?';
    EXPECT_THROW(decode_matrix_file(bad_magic), CorruptFileError);
    std::string bad_version = b;
    set_u32(bad_version, 8, 9);
    EXPECT_THROW(decode_matrix_file(bad_version), FormatVersionError);
    std::string bad_kind = b;
    bad_kind[12] = 42;
    EXPECT_THROW(decode_matrix_file(bad_kind), CorruptFileError);
}

TEST(MatrixFileFormat, ExportedCheckpointIsNormalized)
{
    const UnfoldModel m = small_model(Variant::saecat);
    const MeasurementMatrix a = matrix_for_eval(make_checkpoint(m, ""));
    EXPECT_TRUE(a.normalized);
    EXPECT_TRUE(a.split);
    EXPECT_LT((a.data.colwise().norm().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(TrainConfigJson, RoundTripAndUnknownKeys)
{
    TrainConfig c;
    c.learning_rate = 0.05;
    c.batch_norm = BatchNorm::per_layer;
    c.depth = 7;
    TrainConfig back;
    apply_json(to_json(c), back);
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(apply_json(nlohmann::ordered_json{{"learning_rat", 1.0}}, back), ConfigError);
    EXPECT_THROW(apply_json(nlohmann::ordered_json{{"batch_norm", "affine"}}, back), ConfigError);
}

TEST(TrainingLog, SchemaIsStable)
{
    TrainReport r;
    r.train_loss = {1.0, 0.5};
    r.val_loss = {2.0, 0.25};
    EXPECT_EQ(training_log_csv(r), "epoch,train_loss,val_loss\n0,1,2\n1,0.5,0.25\n");
}
