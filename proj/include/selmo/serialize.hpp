#pragma once

// Checkpoint format: `<stem>.manifest` (JSON: network spec, array table, free-form metadata) and
// `<stem>.weights` (concatenated little-endian float64 arrays in manifest order; matrices row-major).

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "selmo/error.hpp"
#include "selmo/neural.hpp"

namespace selmo::nn {

using json = nlohmann::json;

struct NamedArray {
    std::string name;
    Vec values;

    bool operator==(const NamedArray& o) const {
        return name == o.name && values.size() == o.values.size() && values == o.values;
    }
};

struct Checkpoint {
    std::string kind;  ///< "mlp", "gaussian_policy", "world_model", ...
    MLPSpec spec;
    MLPParams params;
    std::vector<NamedArray> extra_arrays;
    json metadata = json::object();
};

inline json spec_to_json(const MLPSpec& spec) {
    json layers = json::array();
    for (const auto& l : spec.layers) layers.push_back({{"width", l.width}, {"activation", std::string(to_string(l.activation))}});
    return {{"input_dim", spec.input_dim},
            {"input_activation", spec.input_activation == InputActivation::tanh ? "tanh" : "none"},
            {"layers", layers}};
}

inline MLPSpec spec_from_json(const json& j) {
    MLPSpec spec;
    spec.input_dim = j.at("input_dim").get<int>();
    const auto ia = j.at("input_activation").get<std::string>();
    if (ia == "tanh") spec.input_activation = InputActivation::tanh;
    else if (ia == "none") spec.input_activation = InputActivation::none;
    else throw FormatError("unknown input activation '" + ia + "'");
    for (const auto& l : j.at("layers"))
        spec.layers.push_back({l.at("width").get<int>(), activation_from_string(l.at("activation").get<std::string>())});
    spec.validate();
    return spec;
}

namespace detail {

inline void append_f64(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.append(buf, 8);
}

inline double read_f64(const char* p) {
    std::uint64_t bits;
    std::memcpy(&bits, p, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    return std::bit_cast<double>(bits);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& stem) {
    return std::filesystem::path(stem.string() + ".manifest");
}

inline std::filesystem::path weights_path(const std::filesystem::path& stem) {
    return std::filesystem::path(stem.string() + ".weights");
}

/// Produces the manifest text and weights bytes for a checkpoint without touching the filesystem.
inline std::pair<std::string, std::string> encode_checkpoint(const Checkpoint& ck) {
    detail::check_shapes(ck.params, ck.spec);
    std::string weights;
    weights.reserve((ck.params.parameter_count() + 16) * 8);
    json arrays = json::array();
    std::uint64_t offset = 0;
    auto add = [&](const std::string& name, std::vector<std::int64_t> shape, auto&& emit) {
        const auto before = weights.size();
        emit();
        const auto count = (weights.size() - before) / 8;
        arrays.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", count}});
        offset += count;
    };
    for (std::size_t i = 0; i < ck.params.layers.size(); ++i) {
        const auto& l = ck.params.layers[i];
        add("layer" + std::to_string(i) + ".weight", {l.weight.rows(), l.weight.cols()}, [&] {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::append_f64(weights, l.weight(r, c));
        });
        add("layer" + std::to_string(i) + ".bias", {l.bias.size()}, [&] {
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::append_f64(weights, l.bias[r]);
        });
    }
    for (const auto& a : ck.extra_arrays) {
        add(a.name, {a.values.size()}, [&] {
            for (Eigen::Index r = 0; r < a.values.size(); ++r) detail::append_f64(weights, a.values[r]);
        });
    }
    json manifest = {{"format", "selmo-checkpoint"},
                     {"format_version", 1},
                     {"kind", ck.kind},
                     {"spec", spec_to_json(ck.spec)},
                     {"dtype", "float64-le"},
                     {"arrays", arrays},
                     {"metadata", ck.metadata}};
    return {manifest.dump(2) + "\n", std::move(weights)};
}

inline Checkpoint decode_checkpoint(const std::string& manifest_text, const std::string& weights) {
    json manifest;
    try {
        manifest = json::parse(manifest_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    try {
        if (manifest.at("format") != "selmo-checkpoint") throw FormatError("not a selmo checkpoint");
        if (manifest.at("dtype") != "float64-le") throw FormatError("unsupported dtype");
        Checkpoint ck;
        ck.kind = manifest.at("kind").get<std::string>();
        ck.spec = spec_from_json(manifest.at("spec"));
        ck.metadata = manifest.at("metadata");
        ck.params = zero_params(ck.spec);
        const std::size_t total = weights.size() / 8;
        if (weights.size() % 8 != 0) throw FormatError("weights file size is not a multiple of 8");

        std::size_t layer_arrays = 0;
        for (const auto& a : manifest.at("arrays")) {
            const auto name = a.at("name").get<std::string>();
            const auto offset = a.at("offset").get<std::size_t>();
            const auto count = a.at("count").get<std::size_t>();
            if (offset + count > total) throw FormatError("array '" + name + "' exceeds weights file");
            const char* base = weights.data() + offset * 8;
            const auto shape = a.at("shape").get<std::vector<std::int64_t>>();
            std::int64_t expected = 1;
            for (auto d : shape) expected *= d;
            if (expected != static_cast<std::int64_t>(count)) throw FormatError("array '" + name + "' count does not match shape");
            if (name.rfind("layer", 0) == 0 && layer_arrays < 2 * ck.params.layers.size()) {
                auto& layer = ck.params.layers[layer_arrays / 2];
                if (layer_arrays % 2 == 0) {
                    if (shape.size() != 2 || shape[0] != layer.weight.rows() || shape[1] != layer.weight.cols())
                        throw FormatError("shape mismatch for " + name);
                    for (Eigen::Index r = 0, k = 0; r < layer.weight.rows(); ++r)
                        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c, ++k)
                            layer.weight(r, c) = detail::read_f64(base + 8 * k);
                } else {
                    if (shape.size() != 1 || shape[0] != layer.bias.size()) throw FormatError("shape mismatch for " + name);
                    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = detail::read_f64(base + 8 * r);
                }
                ++layer_arrays;
            } else {
                NamedArray arr{name, Vec(static_cast<Eigen::Index>(count))};
                for (std::size_t r = 0; r < count; ++r) arr.values[static_cast<Eigen::Index>(r)] = detail::read_f64(base + 8 * r);
                ck.extra_arrays.push_back(std::move(arr));
            }
        }
        if (layer_arrays != 2 * ck.params.layers.size()) throw FormatError("checkpoint is missing layer arrays");
        if (!ck.params.all_finite()) throw FormatError("checkpoint contains non-finite parameters");
        return ck;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ck) {
    auto [manifest, weights] = encode_checkpoint(ck);
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    detail::write_file(weights_path(stem), weights);
    detail::write_file(manifest_path(stem), manifest);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
    return decode_checkpoint(detail::read_file(manifest_path(stem)), detail::read_file(weights_path(stem)));
}

inline const NamedArray* find_array(const Checkpoint& ck, std::string_view name) {
    for (const auto& a : ck.extra_arrays)
        if (a.name == name) return &a;
    return nullptr;
}

}  // namespace selmo::nn
