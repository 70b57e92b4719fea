#pragma once

// One binary container for trained models and plain measurement matrices.
//
// Layout (little-endian):
//   "BPAEMTRX"              8-byte magic
//   u32 version             currently 1
//   u8 kind, u8 normalized, u8 split, u8 has_model
//   u32 m, u32 k
//   f64 payload             m * k values, row-major
//   if has_model:
//     u8 variant, u8 batch_norm, u32 depth, f64 alpha
//     u32 n_stats, then n_stats * (k mean values, k variance values)
//   u32 len + bytes         config echo (JSON text, may be empty)
//
// A checkpoint stores the raw trained Phi (has_model = 1); an exported
// matrix stores the column-normalized one with has_model = 0.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "matrix.hpp"
#include "train.hpp"
#include "unfold.hpp"

namespace bpae {

inline constexpr std::string_view kMatrixMagic = "BPAEMTRX";
inline constexpr std::uint32_t kMatrixVersion = 1;

struct MatrixFile {
    MeasurementMatrix matrix;
    std::optional<UnfoldModel> model;
    std::string config_echo;
};

namespace detail {

inline void put_matrix(ByteWriter& w, const Mat& a)
{
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) w.f64(a(i, j));
}

inline Mat get_matrix(ByteReader<CorruptFileError>& r, std::uint32_t rows, std::uint32_t cols)
{
    Mat a(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) a(i, j) = r.f64();
    return a;
}

} // namespace detail

inline std::string encode_matrix_file(const MatrixFile& f)
{
    const Mat& a = f.model ? f.model->phi : f.matrix.data;
    ByteWriter w;
    w.bytes(kMatrixMagic);
    w.u32(kMatrixVersion);
    w.u8(static_cast<std::uint8_t>(f.matrix.kind));
    w.u8(f.model ? 0 : static_cast<std::uint8_t>(f.matrix.normalized));
    w.u8(static_cast<std::uint8_t>(f.matrix.split));
    w.u8(f.model ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(a.rows()));
    w.u32(static_cast<std::uint32_t>(a.cols()));
    detail::put_matrix(w, a);
    if (f.model) {
        const UnfoldModel& m = *f.model;
        w.u8(static_cast<std::uint8_t>(m.variant));
        w.u8(static_cast<std::uint8_t>(m.batch_norm));
        w.u32(static_cast<std::uint32_t>(m.depth));
        w.f64(m.alpha);
        w.u32(static_cast<std::uint32_t>(m.bn_mean.size()));
        for (std::size_t l = 0; l < m.bn_mean.size(); ++l) {
            for (Eigen::Index i = 0; i < m.bn_mean[l].size(); ++i) w.f64(m.bn_mean[l][i]);
            for (Eigen::Index i = 0; i < m.bn_var[l].size(); ++i) w.f64(m.bn_var[l][i]);
        }
    }
    w.str(f.config_echo);
    return w.data();
}

inline MatrixFile decode_matrix_file(std::string_view bytes)
{
    ByteReader<CorruptFileError> r(bytes);
    if (r.bytes(kMatrixMagic.size()) != kMatrixMagic) throw CorruptFileError("not a matrix file (bad magic)");
    const auto version = r.u32();
    if (version != kMatrixVersion) throw FormatVersionError("unsupported matrix format version " + std::to_string(version));
    const auto kind = r.u8();
    const auto normalized = r.u8();
    const auto split = r.u8();
    const auto has_model = r.u8();
    if (kind > static_cast<std::uint8_t>(MatrixKind::selection) || normalized > 1 || split > 1 || has_model > 1)
        throw CorruptFileError("bad matrix header flags");
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rows == 0 || cols == 0) throw CorruptFileError("empty matrix");
    if (r.remaining() < std::uint64_t{rows} * cols * sizeof(double)) throw CorruptFileError("truncated matrix payload");

    MatrixFile f;
    f.matrix.data = detail::get_matrix(r, rows, cols);
    f.matrix.kind = static_cast<MatrixKind>(kind);
    f.matrix.normalized = normalized != 0;
    f.matrix.split = split != 0;
    if (has_model) {
        UnfoldModel m;
        const auto variant = r.u8();
        const auto bn = r.u8();
        if (variant > 3 || bn > 1) throw CorruptFileError("bad model header");
        m.variant = static_cast<Variant>(variant);
        m.batch_norm = static_cast<BatchNorm>(bn);
        m.depth = static_cast<int>(r.u32());
        m.alpha = r.f64();
        const auto n_stats = r.u32();
        if (r.remaining() < std::uint64_t{n_stats} * 2 * cols * sizeof(double))
            throw CorruptFileError("truncated normalization statistics");
        for (std::uint32_t l = 0; l < n_stats; ++l) {
            Vec mean(cols), var(cols);
            for (std::uint32_t i = 0; i < cols; ++i) mean[i] = r.f64();
            for (std::uint32_t i = 0; i < cols; ++i) var[i] = r.f64();
            m.bn_mean.push_back(std::move(mean));
            m.bn_var.push_back(std::move(var));
        }
        m.phi = f.matrix.data;
        try {
            m.validate();
        } catch (const Error& e) {
            throw CorruptFileError(std::string("invalid stored model: ") + e.what());
        }
        f.model = std::move(m);
    }
    f.config_echo = r.str();
    if (r.remaining() != 0) throw CorruptFileError("trailing bytes after matrix file");
    try {
        f.matrix.validate();
    } catch (const Error& e) {
        throw CorruptFileError(std::string("invalid stored matrix: ") + e.what());
    }
    return f;
}

inline void save_matrix_file(const MatrixFile& f, const std::filesystem::path& path)
{
    write_file_atomic(path, encode_matrix_file(f));
}

inline MatrixFile load_matrix_file(const std::filesystem::path& path)
{
    return decode_matrix_file(read_file(path));
}

/// Trained model plus the configuration that produced it.
inline MatrixFile make_checkpoint(const UnfoldModel& model, std::string config_echo)
{
    model.validate();
    MatrixFile f;
    f.matrix = MeasurementMatrix{model.phi, learned_kind(model.variant), false, is_cat(model.variant)};
    f.model = model;
    f.config_echo = std::move(config_echo);
    return f;
}

/// The normalized exported matrix of a checkpoint, or the matrix itself.
inline MeasurementMatrix matrix_for_eval(const MatrixFile& f)
{
    return f.model ? export_matrix(*f.model) : f.matrix;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c)
{
    return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},     {"max_epochs", c.max_epochs},
            {"patience", c.patience},           {"alpha_init", c.alpha_init},     {"phi_init_std", c.phi_init_std},
            {"depth", c.depth},                 {"batch_norm", c.batch_norm == BatchNorm::per_layer ? "per_layer" : "off"},
            {"grad_clip", c.grad_clip},         {"seed", c.seed}};
}

inline void apply_json(const nlohmann::ordered_json& j, TrainConfig& c)
{
    if (!j.is_object()) throw ConfigError("training config must be an object");
    for (const auto& [key, v] : j.items()) {
        if (key == "learning_rate") c.learning_rate = v.get<double>();
        else if (key == "batch_size") c.batch_size = v.get<int>();
        else if (key == "max_epochs") c.max_epochs = v.get<int>();
        else if (key == "patience") c.patience = v.get<int>();
        else if (key == "alpha_init") c.alpha_init = v.get<double>();
        else if (key == "phi_init_std") c.phi_init_std = v.get<double>();
        else if (key == "depth") c.depth = v.get<int>();
        else if (key == "batch_norm") {
            const auto s = v.get<std::string>();
            if (s == "off") c.batch_norm = BatchNorm::off;
            else if (s == "per_layer") c.batch_norm = BatchNorm::per_layer;
            else throw ConfigError("batch_norm must be \"off\" or \"per_layer\"");
        }
        else if (key == "grad_clip") c.grad_clip = v.get<double>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else throw ConfigError("unknown training config key: " + key);
    }
}

/// epoch,train_loss,val_loss with round-trip precision.
inline std::string training_log_csv(const TrainReport& rep)
{
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < rep.train_loss.size(); ++e)
        os << e << ',' << rep.train_loss[e] << ',' << rep.val_loss[e] << '\n';
    return os.str();
}

} // namespace bpae
