#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnguide/cli_config.hpp"
#include "attnguide/commands.hpp"
#include "attnguide/errors.hpp"

using attnguide::cli::CommandResult;
using nlohmann::json;

namespace {

std::vector<size_t> parse_positions(const std::string& csv) {
    std::vector<size_t> out;
    std::istringstream in(csv);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            out.push_back(std::stoul(part));
        } catch (const std::logic_error&) {
            throw attnguide::UsageError("cannot parse position list '" + csv + "'");
        }
    }
    return out;
}

struct TrainFlags {
    std::string config_path, out_dir;
    int64_t steps = -1;
    int64_t batch = -1;
    double lr = -1;
    int64_t seed = -1;
    int64_t scenes = -1;
    int64_t dataset_seed = -1;
    int threads = -1;
    bool export_dataset = false;
};

struct SampleFlags {
    std::string config_path, out_dir, checkpoint, prompt, subjects;
    std::vector<std::string> boxes;
    int64_t seed = -1;
    double alpha0 = -1;
    int64_t t_end = -1;
    double lambda_sem = -1, lambda_lay = -1, sigma = -1;
    bool no_refine = false, no_guidance = false, ancestral = false, no_heatmaps = false;
};

struct EvalFlags {
    std::string config_path, out_dir, checkpoint, boxes;
    int64_t seeds = -1;
    int64_t master_seed = -1;
    int64_t permutations = -1;
    int threads = -1;
};

json base_config(const std::string& config_path) {
    return config_path.empty() ? json::object() : attnguide::cli::load_config_file(config_path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attnguide: train-free attention guidance on a toy text-conditioned diffusion model"};
    app.require_subcommand(1);

    TrainFlags tf;
    auto* train_cmd = app.add_subcommand("train", "train the toy denoiser and write a checkpoint");
    train_cmd->add_option("--config", tf.config_path, "JSON config or manifest to replay");
    train_cmd->add_option("--out", tf.out_dir, "output directory");
    train_cmd->add_option("--steps", tf.steps, "optimizer steps");
    train_cmd->add_option("--batch", tf.batch, "batch size");
    train_cmd->add_option("--lr", tf.lr, "learning rate");
    train_cmd->add_option("--seed", tf.seed, "training stream seed");
    train_cmd->add_option("--scenes", tf.scenes, "dataset size");
    train_cmd->add_option("--dataset-seed", tf.dataset_seed, "dataset generator seed");
    train_cmd->add_option("--threads", tf.threads, "worker cap (0 = auto)");
    train_cmd->add_flag("--export-dataset", tf.export_dataset, "also write dataset shards");

    SampleFlags sf;
    auto* sample_cmd = app.add_subcommand("sample", "generate one image with optional guidance");
    sample_cmd->add_option("--config", sf.config_path, "JSON config or manifest to replay");
    sample_cmd->add_option("--out", sf.out_dir, "output directory");
    sample_cmd->add_option("--checkpoint", sf.checkpoint, "checkpoint directory");
    sample_cmd->add_option("--prompt", sf.prompt, "vocabulary words, e.g. \"red circle and blue square\"");
    sample_cmd->add_option("--subjects", sf.subjects, "comma-separated subject token positions");
    sample_cmd->add_option("--box", sf.boxes, "layout box token:x0,y0,x1,y1 (repeatable)");
    sample_cmd->add_option("--seed", sf.seed, "sampler seed");
    sample_cmd->add_option("--alpha0", sf.alpha0, "guidance step size base");
    sample_cmd->add_option("--t-end", sf.t_end, "guidance cutoff step");
    sample_cmd->add_option("--lambda-sem", sf.lambda_sem, "semantic loss weight");
    sample_cmd->add_option("--lambda-lay", sf.lambda_lay, "layout energy weight");
    sample_cmd->add_option("--sigma", sf.sigma, "attention smoothing std");
    sample_cmd->add_flag("--no-refine", sf.no_refine, "disable refinement milestones");
    sample_cmd->add_flag("--no-guidance", sf.no_guidance, "plain DDIM sampling");
    sample_cmd->add_flag("--ancestral", sf.ancestral, "stochastic sampling");
    sample_cmd->add_flag("--no-heatmaps", sf.no_heatmaps, "skip attention heatmap files");

    EvalFlags ef;
    auto* eval_cmd = app.add_subcommand("eval", "paired seed-sweep evaluation");
    eval_cmd->add_option("--config", ef.config_path, "JSON config or manifest to replay");
    eval_cmd->add_option("--out", ef.out_dir, "output directory");
    eval_cmd->add_option("--checkpoint", ef.checkpoint, "checkpoint directory");
    eval_cmd->add_option("--seeds", ef.seeds, "seeds per condition");
    eval_cmd->add_option("--master-seed", ef.master_seed, "master stream seed");
    eval_cmd->add_option("--permutations", ef.permutations, "permutation test iterations");
    eval_cmd->add_option("--boxes", ef.boxes, "halves | none");
    eval_cmd->add_option("--threads", ef.threads, "worker cap (0 = auto)");

    try {
        app.parse(argc, argv);

        CommandResult result;
        if (*train_cmd) {
            json config = base_config(tf.config_path);
            if (!tf.out_dir.empty()) config["out_dir"] = tf.out_dir;
            if (train_cmd->count("--steps")) config["steps"] = tf.steps;
            if (train_cmd->count("--batch")) config["batch"] = tf.batch;
            if (train_cmd->count("--lr")) config["lr"] = tf.lr;
            if (train_cmd->count("--seed")) config["seed"] = tf.seed;
            if (train_cmd->count("--threads")) config["threads"] = tf.threads;
            if (train_cmd->count("--scenes")) config["dataset"]["scenes"] = tf.scenes;
            if (train_cmd->count("--dataset-seed")) config["dataset"]["seed"] = tf.dataset_seed;
            if (tf.export_dataset) config["export_dataset"] = true;
            result = attnguide::cli::cmd_train(config);
        } else if (*sample_cmd) {
            json config = base_config(sf.config_path);
            if (!sf.out_dir.empty()) config["out_dir"] = sf.out_dir;
            if (!sf.checkpoint.empty()) config["checkpoint"] = sf.checkpoint;
            if (!sf.prompt.empty()) {
                auto prompt = attnguide::cli::parse_prompt_words(
                    sf.prompt, parse_positions(sf.subjects.empty() ? "" : sf.subjects));
                config["prompt"] = attnguide::cli::prompt_to_json(prompt);
            }
            if (!sf.boxes.empty()) {
                attnguide::LayoutSpec layout;
                for (const auto& b : sf.boxes)
                    layout.entries.push_back(attnguide::cli::parse_box_flag(b));
                config["layout"] = attnguide::cli::layout_to_json(layout);
            }
            if (sample_cmd->count("--seed")) config["seed"] = sf.seed;
            json& g = config["guidance"];
            if (!g.is_object()) g = attnguide::cli::guidance_to_json(attnguide::GuidanceConfig{});
            if (sample_cmd->count("--alpha0")) g["alpha0"] = sf.alpha0;
            if (sample_cmd->count("--t-end")) g["t_end"] = sf.t_end;
            if (sample_cmd->count("--lambda-sem")) g["lambda_sem"] = sf.lambda_sem;
            if (sample_cmd->count("--lambda-lay")) g["lambda_lay"] = sf.lambda_lay;
            if (sample_cmd->count("--sigma")) g["sigma"] = sf.sigma;
            if (sf.no_refine) g["milestones"] = json::array();
            if (sf.no_guidance) g["enabled"] = false;
            if (sf.ancestral) g["ancestral"] = true;
            if (sf.no_heatmaps) config["heatmaps"] = false;
            result = attnguide::cli::cmd_sample(config);
        } else {
            json config = base_config(ef.config_path);
            if (!ef.out_dir.empty()) config["out_dir"] = ef.out_dir;
            if (!ef.checkpoint.empty()) config["checkpoint"] = ef.checkpoint;
            if (eval_cmd->count("--seeds")) config["seeds"] = ef.seeds;
            if (eval_cmd->count("--master-seed")) config["master_seed"] = ef.master_seed;
            if (eval_cmd->count("--permutations")) config["permutations"] = ef.permutations;
            if (eval_cmd->count("--threads")) config["threads"] = ef.threads;
            if (!ef.boxes.empty()) config["boxes"] = ef.boxes;
            if (!config.contains("conditions")) {
                json baseline_g = attnguide::cli::guidance_to_json(attnguide::GuidanceConfig{});
                baseline_g["alpha0"] = 0.0;
                baseline_g["milestones"] = json::array();
                config["conditions"] = json::array(
                    {json{{"name", "baseline"}, {"guidance", baseline_g}},
                     json{{"name", "guided"},
                          {"guidance", attnguide::cli::guidance_to_json(attnguide::GuidanceConfig{})}}});
            }
            result = attnguide::cli::cmd_eval(config);
        }
        std::cout << result.summary.dump(2) << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const attnguide::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const attnguide::ParameterError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const attnguide::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
