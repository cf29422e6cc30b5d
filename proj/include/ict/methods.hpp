#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ict/episode.hpp"
#include "ict/lm.hpp"
#include "ict/optim.hpp"
#include "ict/task.hpp"

namespace ict {

enum class Method { ICT, FOMAML, INS_T, INS_T_FT, RAW };

std::string method_name(Method m);
Method method_from_name(const std::string& s);

struct TrainConfig {
    int64_t k = 5;
    int64_t epochs = 10;
    double lr = 1e-3;
    uint64_t seed = 0;
    Optimizer::Kind optimizer = Optimizer::Kind::Adam;
    // 0 means every pool example serves as target once per epoch.
    int64_t targets_per_task = 0;
};

struct AdaptConfig {
    int64_t inner_steps = 1;
    double inner_lr = 1e-2;
};

// A trained artifact. params are never mutated after training; adaptation
// always operates on copies.
struct MethodRun {
    Method method = Method::RAW;
    LmConfig config;
    ParamStore params;
    std::vector<double> epoch_losses;  // mean training loss per epoch
    bool diverged = false;
    nlohmann::ordered_json config_snapshot;
};

// Meta-trains with the in-context objective: fresh instruction, support
// and ordering resampled per target per epoch, one optimizer step per
// target.
MethodRun train_ict(const LanguageModel& base, const Suite& suite, const SuiteSplit& split,
                    const TrainConfig& cfg);

// Identical stream with K forced to 0 (bitwise equal to train_ict at K=0
// under the same seed).
MethodRun train_instruction_tuning(const LanguageModel& base, const Suite& suite,
                                   const SuiteSplit& split, const TrainConfig& cfg);

// First-order MAML: per task, adapt a copy on a K-example support with
// plain SGD, then apply the query-loss gradient taken at the adapted
// parameters directly to the meta-parameters (no differentiation through
// the inner loop). Inner and outer learning rates are shared.
MethodRun train_fomaml(const LanguageModel& base, const Suite& suite, const SuiteSplit& split,
                       const TrainConfig& cfg, const AdaptConfig& adapt);

// Generic next-token pretraining over serialized episodes (answers
// included, all positions supervised). Produces the base LM that every
// method starts from; without it the zero-initialized head makes raw
// prompting degenerate.
LanguageModel pretrain_lm(const LanguageModel& base, const Suite& suite,
                          const SuiteSplit& split, int64_t steps, double lr, uint64_t seed);

// The untouched base model evaluated with in-context episodes.
MethodRun raw_lm_baseline(const LanguageModel& base);

// Full-batch SGD steps on the K support pairs serialized in the
// zero-shot layout (instruction then input). Returns an adapted copy;
// the run's stored parameters are untouched. Deterministic.
ParamStore finetune_on_support(const MethodRun& run, const TaskSpec& task,
                               const std::vector<size_t>& support_indices,
                               int64_t instruction_index, const AdaptConfig& adapt);

// Support/query sampler for one FOMAML meta-batch: K support examples and
// up to 2K query targets, disjoint within the batch.
struct MetaBatch {
    int64_t instruction_index = 0;
    std::vector<size_t> support;
    std::vector<size_t> query;
};
MetaBatch sample_meta_batch(const TaskSpec& task, int64_t k, Rng& rng);

// Checkpoint + JSON training log, method tag in the manifest.
void save_method_run(const std::filesystem::path& base, const MethodRun& run);
MethodRun load_method_run(const std::filesystem::path& base);

}  // namespace ict
