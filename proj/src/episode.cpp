#include "ict/episode.hpp"

#include <algorithm>

#include "ict/errors.hpp"

namespace ict {

using nlohmann::ordered_json;

Episode sample_episode_for_target(const TaskSpec& task, int64_t k, size_t target_index,
                                  Rng& rng) {
    size_t n = task.examples.size();
    if (k < 0) throw ContractError("sample_episode: negative K");
    if (size_t(k) + 1 > n)
        throw ContractError("sample_episode: pool of " + std::to_string(n) +
                            " cannot supply K=" + std::to_string(k) + " plus a target");
    if (target_index >= n) throw ContractError("sample_episode: target index out of pool");

    Episode ep;
    ep.task_id = task.task_id;
    ep.instruction_index = int64_t(rng.index(task.instructions.size()));
    ep.target_index = target_index;
    // K-subset of the pool minus the target; the sampled order is sigma.
    auto picks = rng.sample_without_replacement(n - 1, size_t(k));
    ep.support_indices.reserve(size_t(k));
    for (size_t p : picks) ep.support_indices.push_back(p < target_index ? p : p + 1);
    return ep;
}

Episode sample_episode(const TaskSpec& task, int64_t k, Rng& rng) {
    size_t n = task.examples.size();
    if (n == 0) throw ContractError("sample_episode: empty task pool");
    // Instruction draw first so the stream matches the pinned-target path.
    int64_t instruction = int64_t(rng.index(task.instructions.size()));
    size_t target = size_t(rng.index(n));
    if (k < 0 || size_t(k) + 1 > n)
        throw ContractError("sample_episode: pool of " + std::to_string(n) +
                            " cannot supply K=" + std::to_string(k) + " plus a target");
    Episode ep;
    ep.task_id = task.task_id;
    ep.instruction_index = instruction;
    ep.target_index = target;
    auto picks = rng.sample_without_replacement(n - 1, size_t(k));
    ep.support_indices.reserve(size_t(k));
    for (size_t p : picks) ep.support_indices.push_back(p < target ? p : p + 1);
    return ep;
}

std::vector<int64_t> serialize_episode(const TaskSpec& task, const Episode& ep,
                                       const PromptLayout& layout, bool include_answer,
                                       int64_t max_context) {
    if (ep.instruction_index < 0 ||
        size_t(ep.instruction_index) >= task.instructions.size())
        throw ContractError("serialize_episode: instruction index out of range");
    if (ep.target_index >= task.examples.size())
        throw ContractError("serialize_episode: target index out of range");

    std::vector<int64_t> seq;
    seq.push_back(layout.ins);
    const auto& ins = task.instructions[size_t(ep.instruction_index)];
    seq.insert(seq.end(), ins.begin(), ins.end());
    for (size_t si : ep.support_indices) {
        if (si >= task.examples.size())
            throw ContractError("serialize_episode: support index out of range");
        if (si == ep.target_index)
            throw ContractError("serialize_episode: target present in support");
        const auto& ex = task.examples[si];
        seq.push_back(layout.x);
        seq.insert(seq.end(), ex.input.begin(), ex.input.end());
        seq.push_back(layout.y);
        seq.push_back(ex.answer);
    }
    const auto& tgt = task.examples[ep.target_index];
    seq.push_back(layout.tgt);
    seq.insert(seq.end(), tgt.input.begin(), tgt.input.end());
    seq.push_back(layout.y);  // answer cue: scoring position is next
    if (include_answer) seq.push_back(tgt.answer);

    if (int64_t(seq.size()) > max_context)
        throw ContractError("serialize_episode: prompt of " + std::to_string(seq.size()) +
                            " tokens overflows max_context " + std::to_string(max_context) +
                            " by " + std::to_string(int64_t(seq.size()) - max_context));
    return seq;
}

std::vector<Episode> enumerate_orderings(const Episode& ep) {
    int64_t k = ep.k();
    if (k > 5)
        throw ContractError("enumerate_orderings: K=" + std::to_string(k) +
                            " exceeds 5 (" + std::to_string(k) +
                            "! prompts); use the Monte-Carlo path");
    std::vector<size_t> perm(static_cast<size_t>(std::max<int64_t>(k, 0)));
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::vector<Episode> out;
    do {
        Episode e = ep;
        for (size_t i = 0; i < perm.size(); ++i)
            e.support_indices[i] = ep.support_indices[perm[i]];
        out.push_back(std::move(e));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

ordered_json episode_to_json(const Episode& ep) {
    return ordered_json{{"task_id", ep.task_id},
                        {"instruction_index", ep.instruction_index},
                        {"support_indices", ep.support_indices},
                        {"target_index", ep.target_index}};
}

}  // namespace ict
