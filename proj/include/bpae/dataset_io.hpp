#pragma once

// Binary dataset container and plain-text import.
//
// Layout (all integers and floats little-endian):
//   "BPAEDSET"            8-byte magic
//   u32 version           currently 1
//   u32 n, u32 sparsity
//   u64 count, u64 n_train, u64 n_val, u64 n_test
//   u32 len + bytes       generation config echo (JSON text)
//   f64 payload           count * n * 2 values, each sample row-major (Re, Im per row)

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "binary_io.hpp"
#include "dataset.hpp"

namespace bpae {

inline constexpr std::string_view kDatasetMagic = "BPAEDSET";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline const char* to_string(AodDistribution a)
{
    return a == AodDistribution::uniform_angle ? "uniform_angle" : "uniform_spatial";
}

inline AodDistribution parse_aod(std::string_view s)
{
    if (s == "uniform_angle") return AodDistribution::uniform_angle;
    if (s == "uniform_spatial") return AodDistribution::uniform_spatial;
    throw ConfigError("unknown aod distribution: " + std::string(s));
}

inline nlohmann::ordered_json to_json(const ChannelGenConfig& c)
{
    return {{"n_antennas", c.n_antennas},
            {"n_paths", c.n_paths},
            {"rice_k_db", c.rice_k_db},
            {"n_channels", c.n_channels},
            {"sparsity", c.sparsity},
            {"split", {c.split.train, c.split.val, c.split.test}},
            {"seed", c.seed},
            {"aod", to_string(c.aod)}};
}

/// Applies the keys present in `j` onto `c`; unknown keys are rejected.
inline void apply_json(const nlohmann::ordered_json& j, ChannelGenConfig& c)
{
    if (!j.is_object()) throw ConfigError("dataset config must be an object");
    for (const auto& [key, value] : j.items()) {
        if (key == "n_antennas") c.n_antennas = value.get<int>();
        else if (key == "n_paths") c.n_paths = value.get<int>();
        else if (key == "rice_k_db") c.rice_k_db = value.get<double>();
        else if (key == "n_channels") c.n_channels = value.get<int>();
        else if (key == "sparsity") c.sparsity = value.get<int>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "aod") c.aod = parse_aod(value.get<std::string>());
        else if (key == "split") {
            if (!value.is_array() || value.size() != 3) throw ConfigError("split must be [train, val, test]");
            c.split = {value[0].get<double>(), value[1].get<double>(), value[2].get<double>()};
        } else
            throw ConfigError("unknown dataset key: " + key);
    }
}

inline std::string encode_dataset(const Dataset& d)
{
    ByteWriter w;
    w.bytes(kDatasetMagic);
    w.u32(kDatasetVersion);
    const auto n = static_cast<std::uint32_t>(d.n());
    w.u32(n);
    w.u32(static_cast<std::uint32_t>(d.meta.sparsity));
    w.u64(d.size());
    w.u64(d.split.train.size());
    w.u64(d.split.val.size());
    w.u64(d.split.test.size());
    w.str(to_json(d.meta).dump());
    for (const auto& s : d.samples) {
        require_dims(s.h.rows() == n && s.h.cols() == 2, "sample shape");
        for (Eigen::Index i = 0; i < s.h.rows(); ++i) {
            w.f64(s.h(i, 0));
            w.f64(s.h(i, 1));
        }
    }
    return w.data();
}

inline Dataset decode_dataset(std::string_view bytes)
{
    ByteReader<CorruptFileError> r(bytes);
    if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) throw CorruptFileError("not a dataset file (bad magic)");
    const auto version = r.u32();
    if (version != kDatasetVersion)
        throw FormatVersionError("unsupported dataset format version " + std::to_string(version));
    const auto n = r.u32();
    const auto sparsity = r.u32();
    const auto count = r.u64();
    const auto n_train = r.u64(), n_val = r.u64(), n_test = r.u64();
    const std::string echo = r.str();
    if (n == 0 || n_train + n_val + n_test != count) throw CorruptFileError("inconsistent dataset header");
    if (r.remaining() != count * n * 2 * sizeof(double)) throw CorruptFileError("payload size does not match header");

    Dataset d;
    try {
        apply_json(nlohmann::ordered_json::parse(echo), d.meta);
    } catch (const std::exception& e) {
        throw CorruptFileError(std::string("bad config echo: ") + e.what());
    }
    d.meta.n_antennas = static_cast<int>(n);
    d.meta.sparsity = static_cast<int>(sparsity);
    d.samples.resize(count);
    for (auto& s : d.samples) {
        s.h.resize(n, 2);
        for (std::uint32_t i = 0; i < n; ++i) {
            s.h(i, 0) = r.f64();
            s.h(i, 1) = r.f64();
        }
    }
    d.split = {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, count}};
    return d;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path)
{
    write_file_atomic(path, encode_dataset(d));
}

inline Dataset load_dataset(const std::filesystem::path& path)
{
    return decode_dataset(read_file(path));
}

/// Reads one channel per line: 2n decimals, the n real parts then the n
/// imaginary parts of the beamspace vector. Each channel is optionally
/// sparsified to `sparsity` entries (0 keeps all) and normalized.
inline Dataset import_text_dataset(const std::filesystem::path& path, const SplitRatios& split, int sparsity = 0)
{
    std::istringstream in(read_file(path));
    Dataset d;
    std::string line;
    std::size_t line_no = 0;
    long n = -1;
    while (std::getline(in, line)) {
        ++line_no;
        std::vector<double> values;
        const char* p = line.data();
        const char* end = p + line.size();
        while (p < end) {
            while (p < end && (*p == ' ' || *p == '\t' || *p == '\r' || *p == ',')) ++p;
            if (p == end) break;
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{}) throw CorruptFileError("bad number on line " + std::to_string(line_no));
            values.push_back(v);
            p = next;
        }
        if (values.empty()) continue;
        if (values.size() % 2 != 0) throw CorruptFileError("odd value count on line " + std::to_string(line_no));
        if (n < 0) n = static_cast<long>(values.size() / 2);
        if (static_cast<long>(values.size()) != 2 * n)
            throw CorruptFileError("inconsistent channel length on line " + std::to_string(line_no));
        CVec h_b(n);
        for (long i = 0; i < n; ++i) h_b[i] = cplx(values[static_cast<std::size_t>(i)], values[static_cast<std::size_t>(n + i)]);
        if (sparsity > 0) h_b = sparsify_top_s(h_b, std::min<int>(sparsity, static_cast<int>(n)));
        d.samples.push_back(real_stack_normalize(h_b));
    }
    if (d.samples.empty()) throw CorruptFileError("no channels in " + path.string());
    d.meta.n_antennas = static_cast<int>(n);
    d.meta.n_paths = 1;
    d.meta.sparsity = sparsity > 0 ? std::min<int>(sparsity, static_cast<int>(n)) : static_cast<int>(n);
    d.meta.n_channels = static_cast<int>(d.samples.size());
    d.meta.split = split;
    d.meta.validate();
    d.split = split_ranges(d.size(), split);
    return d;
}

} // namespace bpae
