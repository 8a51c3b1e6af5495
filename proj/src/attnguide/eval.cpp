#include "attnguide/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "attnguide/errors.hpp"
#include "attnguide/scenes.hpp"
#include "attnguide/threading.hpp"

namespace attnguide::cli {

using nlohmann::json;

double paired_permutation_pvalue(const std::vector<double>& deltas, size_t permutations,
                                 uint64_t seed) {
    if (deltas.empty()) return 1.0;
    double obs = 0;
    for (double d : deltas) obs += d;
    obs /= static_cast<double>(deltas.size());
    Rng rng(seed);
    size_t at_least = 0;
    for (size_t p = 0; p < permutations; ++p) {
        double acc = 0;
        for (double d : deltas) acc += rng.bernoulli(0.5) ? d : -d;
        if (acc / static_cast<double>(deltas.size()) >= obs) ++at_least;
    }
    return static_cast<double>(at_least + 1) / static_cast<double>(permutations + 1);
}

namespace {

int shape_class_of_token(int token_id) {
    if (!vocab::is_shape(token_id)) return -1;
    return token_id - vocab::kShapeBase;  // matches scenes::kShape*
}

int palette_of_token(int token_id) {
    if (!vocab::is_color(token_id)) return -1;
    return token_id - vocab::kColorBase;
}

bool matches_shape(const scenes::Blob& b, int shape) {
    switch (shape) {
        case scenes::kShapeCircle: return b.shape == scenes::ShapeClass::Circle;
        case scenes::kShapeSquare: return b.shape == scenes::ShapeClass::Square;
        case scenes::kShapeTriangle: return b.shape == scenes::ShapeClass::Triangle;
        default: return false;
    }
}

}  // namespace

SeedMetrics evaluate_sample(const PromptSpec& prompt, const LayoutSpec* layout,
                            const SampleResult<float>& result) {
    SeedMetrics m;
    scenes::Detection det = scenes::detect(result.image);

    const auto& subjects = prompt.subject_positions;
    if (!subjects.empty()) {
        // Presence: greedily consume one blob of the prompted shape class per
        // subject so duplicates require duplicate blobs.
        std::vector<bool> used(det.blobs.size(), false);
        size_t present = 0;
        for (size_t s : subjects) {
            const int shape = shape_class_of_token(prompt.token_ids[s]);
            for (size_t b = 0; b < det.blobs.size(); ++b) {
                if (used[b] || !matches_shape(det.blobs[b], shape)) continue;
                used[b] = true;
                ++present;
                break;
            }
        }
        m.subjects_present = static_cast<double>(present) / static_cast<double>(subjects.size());
        m.all_present = present == subjects.size() ? 1.0 : 0.0;

        // Binding: shape and bound color must co-occur in one blob.
        std::fill(used.begin(), used.end(), false);
        size_t bound = 0;
        for (size_t s : subjects) {
            const int shape = shape_class_of_token(prompt.token_ids[s]);
            const auto it = prompt.attribute_bindings.find(s);
            if (it == prompt.attribute_bindings.end()) continue;
            const int color = palette_of_token(prompt.token_ids[it->second]);
            for (size_t b = 0; b < det.blobs.size(); ++b) {
                if (used[b] || !matches_shape(det.blobs[b], shape) || det.blobs[b].color != color)
                    continue;
                used[b] = true;
                ++bound;
                break;
            }
        }
        m.bound_correct = static_cast<double>(bound) / static_cast<double>(subjects.size());
    }

    if (layout != nullptr && layout->active()) {
        m.has_boxes = true;
        std::vector<bool> used(det.blobs.size(), false);
        size_t inside = 0;
        for (const auto& entry : layout->entries) {
            const int shape = shape_class_of_token(prompt.token_ids[entry.token_pos]);
            for (size_t b = 0; b < det.blobs.size(); ++b) {
                if (used[b] || !matches_shape(det.blobs[b], shape)) continue;
                const double nx = det.blobs[b].cx / scenes::kImage;
                const double ny = det.blobs[b].cy / scenes::kImage;
                if (entry.x0 <= nx && nx < entry.x1 && entry.y0 <= ny && ny < entry.y1) {
                    used[b] = true;
                    ++inside;
                    break;
                }
            }
        }
        m.centroid_in_box =
            static_cast<double>(inside) / static_cast<double>(layout->entries.size());
    }

    if (!result.trace.empty()) {
        m.has_trace = true;
        const TraceRecord& last = result.trace.back();
        m.final_loss = last.loss;
        m.final_sem = last.loss_sem;
        m.final_lay = last.loss_lay;
        if (!last.box_ratio.empty()) {
            double acc = 0;
            for (double r : last.box_ratio) acc += r;
            m.final_ratio = acc / static_cast<double>(last.box_ratio.size());
        }
    }
    return m;
}

PromptSpec derive_prompt(const EvalSetup& setup, uint64_t seed) {
    if (setup.fixed_prompt) return *setup.fixed_prompt;
    Rng rng(Rng::derive_stream(setup.master_seed, 0x70726D70ull + seed));
    PromptSpec p;
    p.token_ids.fill(vocab::kPad);
    // Distinct subjects and distinct attributes: duplicate shape words would
    // make "both subjects present" ambiguous at detection time.
    const int color1 = rng.uniform_int(0, 3);
    const int color2 = (color1 + 1 + rng.uniform_int(0, 2)) % 4;
    const int shape1 = rng.uniform_int(0, 2);
    const int shape2 = (shape1 + 1 + rng.uniform_int(0, 1)) % 3;
    p.token_ids[0] = vocab::kColorBase + color1;
    p.token_ids[1] = vocab::kShapeBase + shape1;
    p.token_ids[2] = vocab::kAnd;
    p.token_ids[3] = vocab::kColorBase + color2;
    p.token_ids[4] = vocab::kShapeBase + shape2;
    p.subject_positions = {1, 4};
    p.attribute_bindings = {{1, 0}, {4, 3}};
    return p;
}

LayoutSpec derive_layout(const EvalSetup& setup, const PromptSpec& prompt, uint64_t seed) {
    LayoutSpec spec;
    if (setup.boxes == "none") return spec;
    if (setup.boxes == "fixed") {
        if (!setup.fixed_layout) throw UsageError("eval: boxes = fixed requires a layout");
        return *setup.fixed_layout;
    }
    // "halves": full left/right halves. "inset-halves": the same split
    // restricted to the middle y band, a tighter target that still fits the
    // largest objects.
    double y0 = 0.0, y1 = 1.0;
    if (setup.boxes == "inset-halves") {
        y0 = 0.25;
        y1 = 0.75;
    } else if (setup.boxes != "halves") {
        throw UsageError("eval: unknown boxes mode '" + setup.boxes + "'");
    }
    if (prompt.subject_positions.size() < 2)
        throw UsageError("eval: halves layout needs a two-subject prompt");
    Rng rng(Rng::derive_stream(setup.master_seed, 0x626F7865ull + seed));
    const bool swap = rng.bernoulli(0.5);
    const size_t first = prompt.subject_positions[swap ? 1 : 0];
    const size_t second = prompt.subject_positions[swap ? 0 : 1];
    spec.entries.push_back({first, 0.0, y0, 0.5, y1});
    spec.entries.push_back({second, 0.5, y0, 1.0, y1});
    return spec;
}

EvalReport run_eval(const DenoiserModel<float>& model, const NoiseSchedule& sched,
                    const EvalSetup& setup) {
    if (setup.conditions.size() < 2)
        throw UsageError("eval: need at least 2 conditions (baseline first)");

    // Shared seed list; explicit per-condition lists must agree (paired design).
    std::vector<uint64_t> seeds;
    const std::optional<std::vector<uint64_t>>* first_explicit = nullptr;
    for (const auto& c : setup.conditions)
        if (c.seeds) {
            if (first_explicit && **first_explicit != *c.seeds)
                throw UsageError("eval: seed lists differ across conditions; the paired design "
                                 "requires one shared list");
            first_explicit = &c.seeds;
        } else if (first_explicit) {
            throw UsageError("eval: seed lists differ across conditions; the paired design "
                             "requires one shared list");
        }
    if (first_explicit) {
        seeds = **first_explicit;
    } else {
        seeds.resize(setup.num_seeds);
        for (size_t i = 0; i < setup.num_seeds; ++i) seeds[i] = i;
    }
    if (seeds.empty()) throw UsageError("eval: empty seed list");

    const size_t n_cond = setup.conditions.size();
    const size_t n_seeds = seeds.size();
    std::vector<std::vector<SeedMetrics>> metrics(n_cond, std::vector<SeedMetrics>(n_seeds));

    const int threads = resolve_threads(setup.threads);
    parallel_for(n_cond * n_seeds, threads, [&](size_t task) {
        const size_t ci = task / n_seeds;
        const size_t si = task % n_seeds;
        const uint64_t seed = seeds[si];
        PromptSpec prompt = derive_prompt(setup, seed);
        LayoutSpec layout = derive_layout(setup, prompt, seed);
        const LayoutSpec* lp = layout.active() ? &layout : nullptr;
        auto result = sample(model, prompt, lp, setup.conditions[ci].guidance, sched,
                             Rng::derive_stream(setup.master_seed, seed));
        metrics[ci][si] = evaluate_sample(prompt, lp, result);
    });

    EvalReport report;
    report.permutations = setup.permutations;
    for (size_t ci = 0; ci < n_cond; ++ci) {
        ConditionAggregate agg;
        agg.name = setup.conditions[ci].name;
        agg.seeds = n_seeds;
        for (const auto& m : metrics[ci]) {
            agg.presence_rate += m.subjects_present;
            agg.all_present_rate += m.all_present;
            agg.binding_rate += m.bound_correct;
            agg.centroid_in_box_rate += m.centroid_in_box;
            agg.mean_ratio += m.final_ratio;
            agg.mean_final_loss += m.final_loss;
        }
        const double inv = 1.0 / static_cast<double>(n_seeds);
        agg.presence_rate *= inv;
        agg.all_present_rate *= inv;
        agg.binding_rate *= inv;
        agg.centroid_in_box_rate *= inv;
        agg.mean_ratio *= inv;
        agg.mean_final_loss *= inv;
        agg.per_seed = metrics[ci];
        report.conditions.push_back(std::move(agg));
    }

    // Paired deltas of each condition against the first; per-seed differences
    // feed the permutation test (never difference of unpaired means).
    for (size_t ci = 1; ci < n_cond; ++ci) {
        std::vector<PairedDelta> deltas;
        auto add_metric = [&](const std::string& name, auto getter, uint64_t salt) {
            std::vector<double> d(n_seeds);
            double base = 0, val = 0;
            for (size_t si = 0; si < n_seeds; ++si) {
                const double a = getter(metrics[0][si]);
                const double b = getter(metrics[ci][si]);
                d[si] = b - a;
                base += a;
                val += b;
            }
            PairedDelta pd;
            pd.metric = name;
            pd.baseline = base / static_cast<double>(n_seeds);
            pd.value = val / static_cast<double>(n_seeds);
            pd.delta = pd.value - pd.baseline;
            pd.p_value = paired_permutation_pvalue(
                d, setup.permutations, Rng::derive_stream(setup.master_seed, salt + ci));
            deltas.push_back(pd);
        };
        add_metric("all_present", [](const SeedMetrics& m) { return m.all_present; }, 0x1001);
        add_metric("presence", [](const SeedMetrics& m) { return m.subjects_present; }, 0x2002);
        add_metric("binding", [](const SeedMetrics& m) { return m.bound_correct; }, 0x3003);
        add_metric("centroid_in_box", [](const SeedMetrics& m) { return m.centroid_in_box; },
                   0x4004);
        add_metric("in_box_ratio", [](const SeedMetrics& m) { return m.final_ratio; }, 0x5005);
        report.comparisons.push_back(std::move(deltas));
    }
    return report;
}

json report_to_json(const EvalReport& report) {
    json out;
    out["permutations"] = report.permutations;
    out["conditions"] = json::array();
    for (const auto& c : report.conditions) {
        json seeds = json::array();
        for (const auto& m : c.per_seed)
            seeds.push_back({{"subjects_present", m.subjects_present},
                             {"all_present", m.all_present},
                             {"bound_correct", m.bound_correct},
                             {"centroid_in_box", m.centroid_in_box},
                             {"final_ratio", m.final_ratio},
                             {"final_loss", m.final_loss}});
        out["conditions"].push_back({{"name", c.name},
                                     {"seeds", c.seeds},
                                     {"presence_rate", c.presence_rate},
                                     {"all_present_rate", c.all_present_rate},
                                     {"binding_rate", c.binding_rate},
                                     {"centroid_in_box_rate", c.centroid_in_box_rate},
                                     {"mean_in_box_ratio", c.mean_ratio},
                                     {"mean_final_loss", c.mean_final_loss},
                                     {"per_seed", seeds}});
    }
    out["comparisons"] = json::array();
    for (size_t i = 0; i < report.comparisons.size(); ++i) {
        json cmp;
        cmp["condition"] = report.conditions[i + 1].name;
        cmp["vs"] = report.conditions[0].name;
        cmp["metrics"] = json::array();
        for (const auto& d : report.comparisons[i])
            cmp["metrics"].push_back({{"metric", d.metric},
                                      {"baseline", d.baseline},
                                      {"value", d.value},
                                      {"delta", d.delta},
                                      {"p_value", d.p_value}});
        out["comparisons"].push_back(cmp);
    }
    return out;
}

std::string report_to_table(const EvalReport& report) {
    std::ostringstream os;
    os << "condition            seeds  presence  all-present  binding  centroid-in-box  mean-r\n";
    for (const auto& c : report.conditions) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-20s %5zu  %8.3f  %11.3f  %7.3f  %15.3f  %6.3f\n",
                      c.name.c_str(), c.seeds, c.presence_rate, c.all_present_rate, c.binding_rate,
                      c.centroid_in_box_rate, c.mean_ratio);
        os << line;
    }
    for (size_t i = 0; i < report.comparisons.size(); ++i) {
        os << "\n" << report.conditions[i + 1].name << " vs " << report.conditions[0].name << ":\n";
        for (const auto& d : report.comparisons[i]) {
            char line[160];
            std::snprintf(line, sizeof(line), "  %-16s %+0.4f ([%0.4f -> %0.4f], p = %0.4f)\n",
                          d.metric.c_str(), d.delta, d.baseline, d.value, d.p_value);
            os << line;
        }
    }
    return os.str();
}

json trace_record_to_json(const TraceRecord& rec) {
    return json{{"step", rec.step},
                {"t", rec.t},
                {"alpha_t", rec.alpha_t},
                {"loss", rec.loss},
                {"loss_sem", rec.loss_sem},
                {"loss_lay", rec.loss_lay},
                {"subject_max", rec.subject_max},
                {"box_ratio", rec.box_ratio},
                {"refined", rec.refined},
                {"refine_iters", rec.refine_iters},
                {"refine_met", rec.refine_met},
                {"refine_min_max_before", rec.refine_min_max_before},
                {"refine_min_max_after", rec.refine_min_max_after}};
}

}  // namespace attnguide::cli
