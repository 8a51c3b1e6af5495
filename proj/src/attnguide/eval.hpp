#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnguide/guidance.hpp"
#include "attnguide/model.hpp"
#include "attnguide/sampler.hpp"
#include "attnguide/schedule.hpp"

// Seed-sweep evaluation harness: runs paired conditions over a shared seed
// list, converts generated images back to symbolic scenes with the detector
// oracle, and aggregates the rates the acceptance experiments read.

namespace attnguide::cli {

// Per-seed outcome of one sampled image against its prompt.
struct SeedMetrics {
    double subjects_present = 0;  // fraction of prompted subjects detected
    double all_present = 0;       // 1 when every prompted subject is detected
    double bound_correct = 0;     // fraction of subjects with a shape+color match
    double centroid_in_box = 0;   // fraction of boxed subjects with centroid inside
    double final_ratio = 0;       // mean in-box attention ratio at the last guided step
    double final_loss = 0;
    double final_sem = 0;
    double final_lay = 0;
    bool has_boxes = false;
    bool has_trace = false;
};

struct ConditionAggregate {
    std::string name;
    size_t seeds = 0;
    double presence_rate = 0;
    double all_present_rate = 0;
    double binding_rate = 0;
    double centroid_in_box_rate = 0;
    double mean_ratio = 0;
    double mean_final_loss = 0;
    std::vector<SeedMetrics> per_seed;
};

struct PairedDelta {
    std::string metric;
    double baseline = 0;
    double value = 0;
    double delta = 0;    // value - baseline (means of per-seed paired deltas)
    double p_value = 1;  // one-sided (improvement), sign-flip permutation
};

struct EvalReport {
    std::vector<ConditionAggregate> conditions;
    // comparisons[i] pairs conditions[i+1] against conditions[0]
    std::vector<std::vector<PairedDelta>> comparisons;
    size_t permutations = 0;
};

struct EvalCondition {
    std::string name;
    GuidanceConfig guidance;
    std::optional<std::vector<uint64_t>> seeds;  // must match across conditions if given
};

struct EvalSetup {
    size_t num_seeds = 100;
    uint64_t master_seed = 0;
    std::optional<PromptSpec> fixed_prompt;  // otherwise per-seed random two-subject
    std::string boxes = "halves";            // "halves" | "none" | "fixed"
    std::optional<LayoutSpec> fixed_layout;
    std::vector<EvalCondition> conditions;
    size_t permutations = 10000;
    int threads = 0;
};

// One-sided paired sign-flip permutation test: p = P(permuted mean >= observed
// mean), add-one smoothed. All-zero deltas give p = 1.
double paired_permutation_pvalue(const std::vector<double>& deltas, size_t permutations,
                                 uint64_t seed);

// Scores one sampled image against its prompt, layout and trace.
SeedMetrics evaluate_sample(const PromptSpec& prompt, const LayoutSpec* layout,
                            const SampleResult<float>& result);

// Per-seed prompt/layout derivation shared by all conditions (paired design).
PromptSpec derive_prompt(const EvalSetup& setup, uint64_t seed);
LayoutSpec derive_layout(const EvalSetup& setup, const PromptSpec& prompt, uint64_t seed);

EvalReport run_eval(const DenoiserModel<float>& model, const NoiseSchedule& sched,
                    const EvalSetup& setup);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

nlohmann::json trace_record_to_json(const TraceRecord& rec);

}  // namespace attnguide::cli
