#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnguide/scenes.hpp"
#include "attnguide/tensor_io.hpp"
#include "attnguide/train.hpp"

// Dataset construction and on-disk export: image shards in the flat tensor
// format plus a JSON index of the symbolic scene records.

namespace attnguide {

struct Dataset {
    std::vector<scenes::Scene> scenes;
    std::vector<TrainSample> samples;
};

inline Dataset make_dataset(size_t count, uint64_t seed) {
    Dataset ds;
    ds.scenes.reserve(count);
    ds.samples.reserve(count);
    Rng rng(seed);
    for (size_t i = 0; i < count; ++i) {
        auto [scene, prompt] = scenes::generate_scene(rng);
        ds.samples.push_back({scenes::render<float>(scene), prompt});
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

// Writes shard files shard<k>.bin/.json, each holding up to shard_size images
// stacked along the first axis, and index.json describing every scene.
inline void export_dataset(const std::filesystem::path& dir, const Dataset& ds,
                           size_t shard_size = 1024) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    if (shard_size == 0) throw ParameterError("export_dataset: shard_size must be positive");
    const size_t n = ds.samples.size();
    size_t shard_count = 0;
    for (size_t start = 0; start < n; start += shard_size, ++shard_count) {
        const size_t len = std::min(shard_size, n - start);
        Tensor<float> stacked =
            Tensor<float>::zeros({len, scenes::kImage, scenes::kImage, 3});
        const size_t stride = scenes::kImage * scenes::kImage * 3;
        for (size_t i = 0; i < len; ++i)
            std::copy(ds.samples[start + i].image.data().begin(),
                      ds.samples[start + i].image.data().end(),
                      stacked.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
        save_tensor(dir / ("shard" + std::to_string(shard_count)), stacked);
    }

    nlohmann::json index;
    index["count"] = n;
    index["shard_size"] = shard_size;
    index["shards"] = shard_count;
    index["scenes"] = nlohmann::json::array();
    for (size_t i = 0; i < n; ++i) {
        nlohmann::json objs = nlohmann::json::array();
        for (const auto& o : ds.scenes[i].objects)
            objs.push_back({{"shape", o.shape},
                            {"color", o.color},
                            {"cx", o.cx},
                            {"cy", o.cy},
                            {"radius", o.radius}});
        const auto& p = ds.samples[i].prompt;
        index["scenes"].push_back(
            {{"objects", objs},
             {"token_ids", std::vector<int>(p.token_ids.begin(), p.token_ids.end())},
             {"subjects", p.subject_positions}});
    }
    std::ofstream out(dir / "index.json");
    if (!out) throw IoError("cannot write dataset index in " + dir.string());
    out << index.dump() << "\n";
}

// Detection results as JSON lines, one blob per line.
inline void write_detections_jsonl(const std::filesystem::path& path,
                                   const scenes::Detection& det) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write detections to " + path.string());
    for (const auto& b : det.blobs) {
        nlohmann::json j{{"color", b.color},
                         {"shape", scenes::shape_class_name(b.shape)},
                         {"centroid", {b.cx, b.cy}},
                         {"bbox", {b.min_x, b.min_y, b.max_x, b.max_y}},
                         {"pixels", b.pixels}};
        out << j.dump() << "\n";
    }
}

}  // namespace attnguide
