#include "attnguide/commands.hpp"

#include <fstream>
#include <iostream>

#include "attnguide/checkpoint.hpp"
#include "attnguide/cli_config.hpp"
#include "attnguide/dataset.hpp"
#include "attnguide/eval.hpp"
#include "attnguide/image_io.hpp"
#include "attnguide/sampler.hpp"
#include "attnguide/train.hpp"

namespace attnguide::cli {

using nlohmann::json;

namespace {

std::filesystem::path required_out_dir(const json& config) {
    if (!config.contains("out_dir") || config.at("out_dir").get<std::string>().empty())
        throw UsageError("config requires an out_dir");
    return config.at("out_dir").get<std::string>();
}

NoiseSchedule schedule_from_config(const json& config) {
    const json s = config.value("schedule", json::object());
    return build_schedule(s.value("t_train", size_t(1000)), s.value("beta_start", 1e-4),
                          s.value("beta_end", 0.02));
}

json resolve_defaults(const json& in, const json& defaults) {
    json out = defaults;
    out.update(in);
    return out;
}

}  // namespace

CommandResult cmd_train(const json& config_in) {
    const json defaults{{"steps", 20000},
                        {"batch", 64},
                        {"lr", 2e-4},
                        {"decay_step", 0},
                        {"decay_lr", 0.0},
                        {"seed", 1},
                        {"init_seed", 7},
                        {"threads", 0},
                        {"loss_target", 0.05},
                        {"dataset", json{{"scenes", 4096}, {"seed", 11}}},
                        {"schedule", json{{"t_train", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}}},
                        {"export_dataset", false}};
    json config = resolve_defaults(config_in, defaults);
    config["threads"] = resolve_threads(config.at("threads").get<int>());
    const auto out_dir = required_out_dir(config);
    std::filesystem::create_directories(out_dir);

    const json& dsj = config.at("dataset");
    if (!dsj.contains("scenes") || dsj.at("scenes").get<size_t>() == 0)
        throw UsageError("train: dataset.scenes must be positive");
    Dataset dataset = make_dataset(dsj.at("scenes").get<size_t>(), dsj.value("seed", 11ull));
    if (config.at("export_dataset").get<bool>()) export_dataset(out_dir / "dataset", dataset);

    NoiseSchedule sched = schedule_from_config(config);
    auto model = DenoiserModel<float>::init(config.at("init_seed").get<uint64_t>());

    TrainConfig tc;
    tc.steps = config.at("steps").get<size_t>();
    tc.batch = config.at("batch").get<size_t>();
    tc.lr = config.at("lr").get<double>();
    tc.decay_step = config.at("decay_step").get<size_t>();
    tc.decay_lr = config.at("decay_lr").get<double>();
    tc.seed = config.at("seed").get<uint64_t>();
    tc.threads = config.at("threads").get<int>();
    tc.loss_target = config.at("loss_target").get<double>();

    TrainResult result = train(model, dataset.samples, sched, tc, [](size_t step, double loss) {
        if (step % 500 == 0)
            std::cout << "train step " << step << " loss " << loss << "\n" << std::flush;
    });

    save_checkpoint(out_dir / "checkpoint", model, sched, config);
    {
        std::ofstream curve(out_dir / "loss_curve.json");
        if (!curve) throw IoError("cannot write loss curve in " + out_dir.string());
        curve << json{{"loss", result.loss_curve},
                      {"final_loss", result.final_loss},
                      {"reached_target", result.reached_target}}
                     .dump()
              << "\n";
    }
    write_manifest(out_dir, "train", config);

    if (!result.reached_target && tc.steps > 0)
        std::cerr << "warning: final training loss " << result.final_loss
                  << " above target " << tc.loss_target << "\n";

    CommandResult res;
    res.out_dir = out_dir;
    res.summary = {{"final_loss", result.final_loss},
                   {"reached_target", result.reached_target},
                   {"checkpoint", (out_dir / "checkpoint").string()}};
    return res;
}

CommandResult cmd_sample(const json& config_in) {
    const json defaults{{"seed", 0},
                        {"guidance", guidance_to_json(GuidanceConfig{})},
                        {"heatmaps", true}};
    json config = resolve_defaults(config_in, defaults);
    const auto out_dir = required_out_dir(config);
    if (!config.contains("checkpoint")) throw UsageError("sample: config requires a checkpoint");
    if (!config.contains("prompt")) throw UsageError("sample: config requires a prompt");

    auto ck = load_checkpoint<float>(config.at("checkpoint").get<std::string>());
    GuidanceConfig gcfg = guidance_from_json(config.at("guidance"));
    PromptSpec prompt = prompt_from_json(config.at("prompt"));
    LayoutSpec layout;
    if (config.contains("layout")) layout = layout_from_json(config.at("layout"));

    const uint64_t seed = config.at("seed").get<uint64_t>();
    auto result = sample(ck.model, prompt, layout.active() ? &layout : nullptr, gcfg,
                         ck.schedule, seed);

    std::filesystem::create_directories(out_dir);
    write_image(result.image, out_dir / "image.ppm");
    {
        std::ofstream trace(out_dir / "trace.jsonl");
        if (!trace) throw IoError("cannot write trace in " + out_dir.string());
        for (const auto& rec : result.trace) trace << trace_record_to_json(rec).dump() << "\n";
    }
    if (config.at("heatmaps").get<bool>()) {
        for (const auto& stored : result.map_history) {
            AttentionMap<float> maps;
            maps.patch_token = stored.patch_token;
            for (size_t tok = 0; tok < vocab::kPromptLen; ++tok) {
                if (prompt.token_ids[tok] == vocab::kPad) continue;
                char name[64];
                std::snprintf(name, sizeof(name), "heatmap_step%02zu_tok%zu.ppm", stored.step, tok);
                write_heatmap(maps.token_grid(tok), out_dir / name);
            }
        }
    }
    write_manifest(out_dir, "sample", config);

    CommandResult res;
    res.out_dir = out_dir;
    res.summary = {{"image", (out_dir / "image.ppm").string()},
                   {"guided_steps", result.trace.size()},
                   {"rng_draws", result.rng_draws}};
    return res;
}

CommandResult cmd_eval(const json& config_in) {
    const json defaults{{"seeds", 100},       {"master_seed", 0}, {"boxes", "halves"},
                        {"permutations", 10000}, {"threads", 0}};
    json config = resolve_defaults(config_in, defaults);
    config["threads"] = resolve_threads(config.at("threads").get<int>());
    const auto out_dir = required_out_dir(config);
    if (!config.contains("checkpoint")) throw UsageError("eval: config requires a checkpoint");
    if (!config.contains("conditions")) throw UsageError("eval: config requires conditions");

    auto ck = load_checkpoint<float>(config.at("checkpoint").get<std::string>());

    EvalSetup setup;
    setup.num_seeds = config.at("seeds").get<size_t>();
    setup.master_seed = config.at("master_seed").get<uint64_t>();
    setup.permutations = config.at("permutations").get<size_t>();
    setup.threads = config.at("threads").get<int>();
    if (config.contains("prompt")) setup.fixed_prompt = prompt_from_json(config.at("prompt"));
    const json& boxes = config.at("boxes");
    if (boxes.is_string()) {
        setup.boxes = boxes.get<std::string>();
    } else {
        setup.boxes = "fixed";
        setup.fixed_layout = layout_from_json(boxes);
    }
    for (const auto& cj : config.at("conditions")) {
        EvalCondition cond;
        cond.name = cj.value("name", "condition" + std::to_string(setup.conditions.size()));
        cond.guidance = guidance_from_json(cj.value("guidance", json::object()));
        if (cj.contains("seeds")) cond.seeds = cj.at("seeds").get<std::vector<uint64_t>>();
        setup.conditions.push_back(std::move(cond));
    }

    EvalReport report = run_eval(ck.model, ck.schedule, setup);

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "report.json");
        if (!out) throw IoError("cannot write report in " + out_dir.string());
        out << report_to_json(report).dump(2) << "\n";
    }
    {
        std::ofstream out(out_dir / "report.txt");
        if (!out) throw IoError("cannot write report table in " + out_dir.string());
        out << report_to_table(report);
    }
    write_manifest(out_dir, "eval", config);

    CommandResult res;
    res.out_dir = out_dir;
    res.summary = report_to_json(report);
    res.summary.erase("conditions");
    return res;
}

}  // namespace attnguide::cli
