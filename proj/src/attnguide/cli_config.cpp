#include "attnguide/cli_config.hpp"

#include <fstream>
#include <sstream>

#include "attnguide/errors.hpp"

namespace attnguide::cli {

using nlohmann::json;

json guidance_to_json(const GuidanceConfig& g) {
    json m = json::array();
    for (const auto& ms : g.milestones) m.push_back({{"step", ms.step}, {"threshold", ms.threshold}});
    return json{{"enabled", g.enabled},
                {"alpha0", g.alpha0},
                {"num_steps", g.num_steps},
                {"t_end", g.t_end},
                {"sigma", g.sigma},
                {"kernel_size", g.kernel_size},
                {"lambda_sem", g.lambda_sem},
                {"lambda_lay", g.lambda_lay},
                {"milestones", m},
                {"max_refine_iters", g.max_refine_iters},
                {"smooth_semantic", g.smooth_semantic},
                {"smooth_layout", g.smooth_layout},
                {"recompute_eps_after_update", g.recompute_eps_after_update},
                {"map_stride", g.map_stride},
                {"ancestral", g.ancestral},
                {"clip_denoised", g.clip_denoised}};
}

GuidanceConfig guidance_from_json(const json& j) {
    GuidanceConfig g;
    g.enabled = j.value("enabled", g.enabled);
    g.alpha0 = j.value("alpha0", g.alpha0);
    g.num_steps = j.value("num_steps", g.num_steps);
    g.t_end = j.value("t_end", g.t_end);
    g.sigma = j.value("sigma", g.sigma);
    g.kernel_size = j.value("kernel_size", g.kernel_size);
    g.lambda_sem = j.value("lambda_sem", g.lambda_sem);
    g.lambda_lay = j.value("lambda_lay", g.lambda_lay);
    if (j.contains("milestones")) {
        g.milestones.clear();
        for (const auto& ms : j.at("milestones"))
            g.milestones.push_back({ms.at("step").get<size_t>(), ms.at("threshold").get<double>()});
    }
    g.max_refine_iters = j.value("max_refine_iters", g.max_refine_iters);
    g.smooth_semantic = j.value("smooth_semantic", g.smooth_semantic);
    g.smooth_layout = j.value("smooth_layout", g.smooth_layout);
    g.recompute_eps_after_update = j.value("recompute_eps_after_update", g.recompute_eps_after_update);
    g.map_stride = j.value("map_stride", g.map_stride);
    g.ancestral = j.value("ancestral", g.ancestral);
    g.clip_denoised = j.value("clip_denoised", g.clip_denoised);
    g.validate();
    return g;
}

json prompt_to_json(const PromptSpec& p) {
    json bindings = json::object();
    for (const auto& [s, a] : p.attribute_bindings) bindings[std::to_string(s)] = a;
    return json{{"token_ids", std::vector<int>(p.token_ids.begin(), p.token_ids.end())},
                {"text", p.text()},
                {"subjects", p.subject_positions},
                {"bindings", bindings}};
}

PromptSpec prompt_from_json(const json& j) {
    PromptSpec p;
    const auto ids = j.at("token_ids").get<std::vector<int>>();
    if (ids.size() != vocab::kPromptLen)
        throw UsageError("prompt must have exactly " + std::to_string(vocab::kPromptLen) +
                         " token ids");
    std::copy(ids.begin(), ids.end(), p.token_ids.begin());
    p.subject_positions = j.at("subjects").get<std::vector<size_t>>();
    if (j.contains("bindings"))
        for (const auto& [k, v] : j.at("bindings").items())
            p.attribute_bindings[static_cast<size_t>(std::stoul(k))] = v.get<size_t>();
    p.validate(false);
    return p;
}

json layout_to_json(const LayoutSpec& l) {
    json entries = json::array();
    for (const auto& e : l.entries)
        entries.push_back({{"token", e.token_pos}, {"box", {e.x0, e.y0, e.x1, e.y1}}});
    return entries;
}

LayoutSpec layout_from_json(const json& j) {
    LayoutSpec l;
    for (const auto& e : j) {
        const auto box = e.at("box").get<std::vector<double>>();
        if (box.size() != 4) throw UsageError("layout box must have 4 coordinates");
        l.entries.push_back({e.at("token").get<size_t>(), box[0], box[1], box[2], box[3]});
    }
    return l;
}

PromptSpec parse_prompt_words(const std::string& words, const std::vector<size_t>& subjects) {
    PromptSpec p;
    p.token_ids.fill(vocab::kPad);
    std::istringstream in(words);
    std::string word;
    size_t pos = 0;
    while (in >> word) {
        if (pos >= vocab::kPromptLen)
            throw UsageError("prompt has more than " + std::to_string(vocab::kPromptLen) +
                             " words");
        p.token_ids[pos++] = vocab::id_from_word(word);
    }
    p.subject_positions = subjects;
    for (size_t s : subjects) {
        if (s >= vocab::kPromptLen)
            throw UsageError("subject position " + std::to_string(s) + " out of range");
        // Color word directly before a subject is its bound attribute.
        if (s >= 1 && vocab::is_color(p.token_ids[s - 1])) p.attribute_bindings[s] = s - 1;
    }
    p.validate(false);
    return p;
}

LayoutEntry parse_box_flag(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos)
        throw UsageError("box flag must look like token:x0,y0,x1,y1 (got '" + text + "')");
    LayoutEntry e;
    try {
        e.token_pos = std::stoul(text.substr(0, colon));
        std::istringstream in(text.substr(colon + 1));
        std::string part;
        double coords[4];
        for (int i = 0; i < 4; ++i) {
            if (!std::getline(in, part, ',')) throw UsageError("box flag needs 4 coordinates");
            coords[i] = std::stod(part);
        }
        e.x0 = coords[0];
        e.y0 = coords[1];
        e.x1 = coords[2];
        e.y1 = coords[3];
    } catch (const std::logic_error&) {
        throw UsageError("cannot parse box flag '" + text + "'");
    }
    if (!(0.0 <= e.x0 && e.x0 < e.x1 && e.x1 <= 1.0 && 0.0 <= e.y0 && e.y0 < e.y1 && e.y1 <= 1.0))
        throw UsageError("box coordinates must satisfy 0 <= lo < hi <= 1 per axis");
    return e;
}

json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.contains("command") && j.contains("config")) return j.at("config");
    return j;
}

void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const json& resolved_config) {
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + out_dir.string());
    out << json{{"version", kVersion}, {"command", command}, {"config", resolved_config}}.dump(2)
        << "\n";
}

}  // namespace attnguide::cli
