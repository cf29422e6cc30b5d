#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ict/rng.hpp"

namespace ict {

// Reserved separator token ids, shared by every suite.
inline constexpr int64_t kTokIns = 0;  // instruction start
inline constexpr int64_t kTokX = 1;    // example input start
inline constexpr int64_t kTokY = 2;    // answer cue
inline constexpr int64_t kTokTgt = 3;  // target input start
inline constexpr int64_t kNumSpecialTokens = 4;

enum class TaskFamily { RelationLookup, BinaryClf };

std::string family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& s);

struct TaskExample {
    std::vector<int64_t> input;
    int64_t answer = 0;
};

struct TaskSpec {
    std::string task_id;
    TaskFamily family = TaskFamily::RelationLookup;
    std::vector<std::vector<int64_t>> instructions;  // >= 1 paraphrases
    std::vector<TaskExample> examples;
    std::vector<int64_t> answer_space;
    // Generator's latent rule, kept for auditing and oracle re-checks.
    nlohmann::ordered_json latent;

    void validate(int64_t k_max) const;
};

struct FilterRecord {
    std::string task_id;
    int64_t removed = 0;
    bool dropped = false;
    std::string reason;
};

struct Suite {
    std::vector<TaskSpec> tasks;
    int64_t vocab_size = 0;
    int64_t k_max = 5;
    nlohmann::ordered_json manifest;  // seed, config, vocab layout, filter report
};

struct RelationSuiteConfig {
    uint64_t seed = 1;
    int64_t n_tasks = 16;
    int64_t n_examples = 48;
    int64_t entity_vocab_size = 96;
    int64_t k_max = 5;
    int64_t max_task_input_len = 16;
    int64_t n_instruction_words = 32;
};

struct BinarySuiteConfig {
    uint64_t seed = 1;
    int64_t n_tasks = 16;
    int64_t n_examples = 24;  // must be even; labels balanced 50/50
    // Fraction of tasks in the label-permutation sub-family, where a
    // canonical marker -> Yes/No split has its semantics flipped per task
    // by a fair coin and the instruction carries no information about the
    // flip.
    double permutation_fraction = 1.0;
    int64_t k_max = 5;
    int64_t n_markers = 4;
    int64_t n_noise_tokens = 16;
    int64_t n_instruction_words = 32;
    int64_t min_input_len = 3;
    int64_t max_input_len = 7;
};

// One task = a random injective subject -> object mapping over the entity
// vocabulary. All answers are distinct by construction.
Suite gen_relation_suite(const RelationSuiteConfig& cfg);

// Yes/No tasks over marker tokens embedded in noise. See
// BinarySuiteConfig::permutation_fraction for the sub-family mix.
Suite gen_binary_suite(const BinarySuiteConfig& cfg);

// Token ids for the binary verbalizers within a binary suite's vocab.
inline constexpr int64_t kTokYes = kNumSpecialTokens;      // 4
inline constexpr int64_t kTokNo = kNumSpecialTokens + 1;   // 5

// Greedily removes examples (most frequent answer first, oldest example
// first within an answer) until every answer's relative frequency is
// strictly below the threshold. Returns nullopt together with a dropped
// FilterRecord when the task cannot be fixed or falls below k_max+1
// examples.
std::optional<TaskSpec> majority_label_filter(const TaskSpec& task, double threshold,
                                              int64_t k_max, FilterRecord& record);

// Applies the filter to a whole suite in place, recording outcomes in the
// suite manifest.
void apply_majority_label_filter(Suite& suite, double threshold);

struct SuiteSplit {
    int64_t fold_index = 0;
    std::vector<std::string> train_tasks;
    std::vector<std::string> val_tasks;
    std::vector<std::string> test_tasks;
};

// Random near-equal partition into n_folds groups; fold i tests on group
// i, validates on group (i+1) mod n, trains on the rest. Test sets are
// disjoint and cover all tasks.
std::vector<SuiteSplit> make_folds(const std::vector<std::string>& task_ids,
                                   int64_t n_folds, uint64_t seed);

// Suite persistence: tasks.jsonl (one TaskSpec per line, stable field
// order) plus manifest.json. Suite content hash is recorded in the
// manifest for regeneration checks.
void save_suite(const std::filesystem::path& dir, const Suite& suite);
Suite load_suite(const std::filesystem::path& dir);

nlohmann::ordered_json task_to_json(const TaskSpec& t);
TaskSpec task_from_json(const nlohmann::ordered_json& j);

// Hash of the serialized task list; stable across runs.
uint64_t suite_content_hash(const Suite& suite);

const TaskSpec& find_task(const Suite& suite, const std::string& task_id);

}  // namespace ict
