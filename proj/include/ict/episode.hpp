#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "ict/rng.hpp"
#include "ict/task.hpp"

namespace ict {

// One few-shot instance. Support order IS the permutation sigma: the
// indices are stored in presentation order.
struct Episode {
    std::string task_id;
    int64_t instruction_index = 0;
    std::vector<size_t> support_indices;  // into TaskSpec::examples, ordered
    size_t target_index = 0;

    int64_t k() const { return int64_t(support_indices.size()); }
};

// Separator scheme for prompt assembly. Defaults to the suite-wide
// reserved tokens; kept as a struct so tests can rewire it.
struct PromptLayout {
    int64_t ins = kTokIns;
    int64_t x = kTokX;
    int64_t y = kTokY;
    int64_t tgt = kTokTgt;
};

// Uniform instruction, uniform target over the pool, support a uniform
// K-subset of the pool minus the target in uniformly random order.
Episode sample_episode(const TaskSpec& task, int64_t k, Rng& rng);

// Same sampling but with the target pinned (training iterates targets).
Episode sample_episode_for_target(const TaskSpec& task, int64_t k, size_t target_index,
                                  Rng& rng);

// instruction, K support (input, answer) pairs, target input, answer cue.
// With include_answer=false the sequence ends at the scoring position.
// Overflow beyond max_context is a hard error carrying the overflow
// amount; callers never get silently truncated prompts.
std::vector<int64_t> serialize_episode(const TaskSpec& task, const Episode& ep,
                                       const PromptLayout& layout, bool include_answer,
                                       int64_t max_context);

// All K! support orderings in lexicographic permutation order. K <= 5.
std::vector<Episode> enumerate_orderings(const Episode& ep);

nlohmann::ordered_json episode_to_json(const Episode& ep);

}  // namespace ict
