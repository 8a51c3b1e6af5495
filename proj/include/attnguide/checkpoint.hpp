#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "attnguide/model.hpp"
#include "attnguide/schedule.hpp"
#include "attnguide/tensor_io.hpp"

// Checkpoint = directory of tensor files plus manifest.json recording the
// architecture hash, vocabulary, noise schedule, training configuration and
// RNG seeds of the producing run.

namespace attnguide {

inline constexpr const char* kCheckpointManifest = "manifest.json";

template <typename S>
void save_checkpoint(const std::filesystem::path& dir, DenoiserModel<S>& model,
                     const NoiseSchedule& sched, const nlohmann::json& training_info) {
    std::filesystem::create_directories(dir);
    for (auto& [name, t] : model.named_params()) save_tensor(dir / name, *t);

    nlohmann::json manifest;
    manifest["format"] = "attnguide-checkpoint-v1";
    manifest["arch_hash"] = DenoiserModel<S>::arch_hash();
    manifest["dtype"] = dtype_name<S>();
    manifest["vocab"] = vocab::words();
    manifest["schedule"] = {{"t_train", sched.t_train},
                            {"beta_start", sched.betas.front()},
                            {"beta_end", sched.betas.back()}};
    manifest["training"] = training_info;
    std::ofstream out(dir / kCheckpointManifest);
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
}

template <typename S>
struct Checkpoint {
    DenoiserModel<S> model;
    NoiseSchedule schedule;
    nlohmann::json manifest;
};

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / kCheckpointManifest);
    if (!in) throw IoError("no checkpoint manifest at " + (dir / kCheckpointManifest).string());
    nlohmann::json manifest;
    in >> manifest;
    if (manifest.value("arch_hash", 0ull) != DenoiserModel<S>::arch_hash())
        throw IoError("checkpoint at " + dir.string() +
                      " was produced by a different architecture");
    Checkpoint<S> ck;
    ck.manifest = manifest;
    for (auto& [name, t] : ck.model.named_params()) *t = load_tensor<S>(dir / name);
    const auto& sj = manifest.at("schedule");
    ck.schedule = build_schedule(sj.at("t_train").get<size_t>(), sj.at("beta_start").get<double>(),
                                 sj.at("beta_end").get<double>());
    return ck;
}

}  // namespace attnguide
