#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnguide/errors.hpp"
#include "attnguide/tensor.hpp"

// Tensor serialization: flat little-endian binary at <base>.bin plus a JSON
// sidecar <base>.json holding {shape, dtype}. Used for checkpoints, dataset
// shards and attention dumps.

namespace attnguide {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

template <typename S>
inline const char* dtype_name() {
    if constexpr (sizeof(S) == 4)
        return "f32";
    else
        return "f64";
}

template <typename S>
inline void save_tensor(const std::filesystem::path& base, const Tensor<S>& t) {
    nlohmann::json sidecar;
    sidecar["shape"] = t.shape();
    sidecar["dtype"] = dtype_name<S>();
    std::ofstream js(base.string() + ".json");
    if (!js) throw IoError("cannot write " + base.string() + ".json");
    js << sidecar.dump() << "\n";

    std::ofstream bin(base.string() + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot write " + base.string() + ".bin");
    bin.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(S)));
    if (!bin) throw IoError("short write to " + base.string() + ".bin");
}

template <typename S>
inline Tensor<S> load_tensor(const std::filesystem::path& base) {
    std::ifstream js(base.string() + ".json");
    if (!js) throw IoError("cannot read " + base.string() + ".json");
    nlohmann::json sidecar;
    js >> sidecar;
    std::vector<size_t> shape = sidecar.at("shape").get<std::vector<size_t>>();
    std::string dtype = sidecar.at("dtype").get<std::string>();
    const size_t n = shape_numel(shape);

    std::ifstream bin(base.string() + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot read " + base.string() + ".bin");
    std::vector<S> values(n);
    if (dtype == dtype_name<S>()) {
        bin.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(n * sizeof(S)));
    } else if (dtype == "f32") {
        std::vector<float> raw(n);
        bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
        for (size_t i = 0; i < n; ++i) values[i] = static_cast<S>(raw[i]);
    } else if (dtype == "f64") {
        std::vector<double> raw(n);
        bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 8));
        for (size_t i = 0; i < n; ++i) values[i] = static_cast<S>(raw[i]);
    } else {
        throw IoError("unknown dtype '" + dtype + "' in " + base.string() + ".json");
    }
    if (!bin) throw IoError("short read from " + base.string() + ".bin");
    return Tensor<S>(std::move(shape), std::move(values));
}

}  // namespace attnguide
