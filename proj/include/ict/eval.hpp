#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ict/methods.hpp"
#include "ict/task.hpp"

namespace ict {

// P(score of a random positive > score of a random negative), ties
// counted half. Input pairs are (score, binary label). Both classes must
// be present.
double auc_roc(const std::vector<std::pair<double, int>>& scored);

enum class Partition { Train, Val, Test };
std::string partition_name(Partition p);

struct EvalConfig {
    int64_t k = 5;
    int64_t m_samplings = 5;  // support/instruction resamplings per target
    uint64_t seed = 0;
    int64_t max_targets = 0;  // 0 = every pool example
};

struct EvalRecord {
    std::string task_id;
    int64_t sampling = 0;
    int64_t instruction_index = 0;
    std::string support_id;   // sorted support indices, '-'-joined
    std::string ordering_id;  // presentation order, '-'-joined
    int64_t target_index = 0;
    int64_t gold = 0;
    int64_t pred = 0;
    bool correct = false;
    // log p(Yes) - log p(No) for binary tasks; log-prob of the prediction
    // otherwise.
    double score = 0.0;
};

struct TaskMetrics {
    std::string task_id;
    double p_at_1 = 0.0;
    std::optional<double> auc;  // binary tasks only
};

struct EvalResult {
    std::vector<EvalRecord> records;
    std::vector<TaskMetrics> per_task;
    double macro_p_at_1 = 0.0;
    std::optional<double> macro_auc;
};

// Dispatches on the method tag: ICT/RAW consume identical in-context
// episode streams (no gradients); INS_T scores zero-shot prompts; FOMAML
// and INS_T_FT fine-tune a copy on a sampled support, then score
// zero-shot prompts. Target sets are identical across methods for a
// given (suite, split, partition, seed).
EvalResult evaluate_method(const MethodRun& run, const Suite& suite, const SuiteSplit& split,
                           Partition partition, const EvalConfig& cfg,
                           const AdaptConfig* adapt = nullptr);

// Convenience wrappers over evaluate_method.
double precision_at_1(const MethodRun& run, const Suite& suite, const SuiteSplit& split,
                      Partition partition, const EvalConfig& cfg,
                      const AdaptConfig* adapt = nullptr);

void write_records_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records);
nlohmann::ordered_json eval_summary_json(const EvalResult& result);

// Label reads on test-partition tasks, for the no-peeking audit in grid
// search.
int64_t test_label_access_count();
void reset_test_label_access_count();

// ---- sensitivity analysis -------------------------------------------

enum class SenseMode { Exhaustive, MonteCarlo };

struct SenseConfig {
    SenseMode mode = SenseMode::MonteCarlo;
    int64_t k = 5;
    uint64_t seed = 0;
    // Monte-Carlo sample counts (orderings capped at K!).
    int64_t n_instructions = 8;
    int64_t n_supports = 16;
    int64_t n_orderings = 24;
    // Exhaustive mode refuses above this many mu evaluations.
    int64_t budget = 20000;
    // Fixed target set size; targets are the tail of the pool and are
    // excluded from support sampling.
    int64_t n_targets = 8;
};

// Variance components of episode accuracy; all values in percentage
// points squared (units recorded in metadata).
struct SensitivityReport {
    std::string task_id;
    double total_variance = 0.0;
    double instruction_variance = 0.0;
    double choice_variance = 0.0;
    double order_variance = 0.0;
    // Fixed-instruction estimators at the default instruction (index 0).
    double order_variance_default_instruction = 0.0;
    double choice_variance_default_instruction = 0.0;
    nlohmann::ordered_json metadata;
};

SensitivityReport variance_decomposition(const MethodRun& run, const TaskSpec& task,
                                         const SenseConfig& cfg);

nlohmann::ordered_json sensitivity_to_json(const SensitivityReport& r);

// ---- estimator cores (exposed for oracle tests) ---------------------

// mu[i][s][o]: accuracy for instruction i, support s, ordering o.
using MuTable = std::vector<std::vector<std::vector<double>>>;

struct DecompResult {
    double total = 0.0;
    double instruction = 0.0;
    double choice = 0.0;
    double order = 0.0;
};

// Population law-of-total-variance over a full product grid; components
// sum to the total exactly.
DecompResult decompose_exhaustive(const MuTable& mu);

// Unbiased nested estimators from iid samples at each level (Bessel
// correction plus subtraction of inner-level sampling noise). Components
// clamped at zero.
DecompResult decompose_sampled(const MuTable& mu);

}  // namespace ict
