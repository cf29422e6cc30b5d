#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "ict/episode.hpp"
#include "ict/errors.hpp"

using namespace ict;

namespace {

TaskSpec demo_task(size_t n_examples, size_t n_instructions = 3) {
    TaskSpec t;
    t.task_id = "demo";
    t.family = TaskFamily::BinaryClf;
    for (size_t p = 0; p < n_instructions; ++p)
        t.instructions.push_back({int64_t(50 + p), int64_t(60 + p)});
    for (size_t i = 0; i < n_examples; ++i) {
        TaskExample ex;
        ex.input = {int64_t(10 + i), int64_t(30 + i % 3)};
        ex.answer = i % 2 == 0 ? kTokYes : kTokNo;
        t.examples.push_back(std::move(ex));
    }
    t.answer_space = {kTokYes, kTokNo};
    return t;
}

// Deserializer oracle: walk the separator grammar back into its parts.
struct Parsed {
    std::vector<int64_t> instruction;
    std::vector<std::pair<std::vector<int64_t>, int64_t>> support;
    std::vector<int64_t> target_input;
    bool has_answer = false;
    int64_t answer = -1;
};

Parsed parse_prompt(const std::vector<int64_t>& seq) {
    Parsed p;
    REQUIRE(!seq.empty());
    REQUIRE(seq[0] == kTokIns);
    size_t i = 1;
    while (i < seq.size() && seq[i] != kTokX && seq[i] != kTokTgt)
        p.instruction.push_back(seq[i++]);
    while (i < seq.size() && seq[i] == kTokX) {
        ++i;
        std::vector<int64_t> input;
        while (seq[i] != kTokY) input.push_back(seq[i++]);
        ++i;  // kTokY
        p.support.emplace_back(std::move(input), seq[i++]);
    }
    REQUIRE(seq[i] == kTokTgt);
    ++i;
    while (seq[i] != kTokY) p.target_input.push_back(seq[i++]);
    ++i;  // answer cue
    if (i < seq.size()) {
        p.has_answer = true;
        p.answer = seq[i++];
    }
    REQUIRE(i == seq.size());
    return p;
}

std::vector<std::vector<size_t>> recursive_perms(std::vector<size_t> items) {
    if (items.size() <= 1) return {items};
    std::vector<std::vector<size_t>> out;
    for (size_t i = 0; i < items.size(); ++i) {
        std::vector<size_t> rest = items;
        rest.erase(rest.begin() + int64_t(i));
        for (auto& tail : recursive_perms(rest)) {
            std::vector<size_t> p{items[i]};
            p.insert(p.end(), tail.begin(), tail.end());
            out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("serialization round-trips through the grammar oracle") {
    TaskSpec t = demo_task(8);
    Episode ep;
    ep.task_id = t.task_id;
    ep.instruction_index = 1;
    ep.support_indices = {4, 0, 6};
    ep.target_index = 2;

    for (bool with_answer : {false, true}) {
        auto seq = serialize_episode(t, ep, PromptLayout{}, with_answer, 256);
        Parsed p = parse_prompt(seq);
        CHECK(p.instruction == t.instructions[1]);
        REQUIRE(p.support.size() == 3);
        for (size_t i = 0; i < 3; ++i) {
            CHECK(p.support[i].first == t.examples[ep.support_indices[i]].input);
            CHECK(p.support[i].second == t.examples[ep.support_indices[i]].answer);
        }
        CHECK(p.target_input == t.examples[2].input);
        CHECK(p.has_answer == with_answer);
        if (with_answer) CHECK(p.answer == t.examples[2].answer);
    }
}

TEST_CASE("K=0 episodes serialize to instruction plus target only") {
    TaskSpec t = demo_task(6);
    Episode ep;
    ep.task_id = t.task_id;
    ep.target_index = 3;
    auto seq = serialize_episode(t, ep, PromptLayout{}, false, 256);
    Parsed p = parse_prompt(seq);
    CHECK(p.support.empty());
    CHECK(p.target_input == t.examples[3].input);
    CHECK(seq.size() == 1 + t.instructions[0].size() + 1 + p.target_input.size() + 1);
}

TEST_CASE("distinct episodes serialize to distinct sequences") {
    TaskSpec t = demo_task(10);
    Rng rng(42);
    std::set<std::vector<int64_t>> seen;
    std::set<std::string> episode_keys;
    for (int i = 0; i < 300; ++i) {
        Episode ep = sample_episode(t, 3, rng);
        auto key = episode_to_json(ep).dump();
        auto seq = serialize_episode(t, ep, PromptLayout{}, true, 256);
        bool new_episode = episode_keys.insert(key).second;
        bool new_seq = seen.insert(seq).second;
        CHECK(new_episode == new_seq);
    }
}

TEST_CASE("support never contains the target and has distinct members") {
    TaskSpec t = demo_task(9);
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        Episode ep = sample_episode(t, 4, rng);
        std::set<size_t> s(ep.support_indices.begin(), ep.support_indices.end());
        CHECK(s.size() == 4);
        CHECK(!s.count(ep.target_index));
        CHECK(ep.target_index < t.examples.size());
    }
}

TEST_CASE("each non-target example is equally likely in the support") {
    TaskSpec t = demo_task(9);
    Rng rng(11);
    const int trials = 4000;
    const int64_t k = 3;
    std::map<size_t, int64_t> hits;
    for (int i = 0; i < trials; ++i) {
        Episode ep = sample_episode_for_target(t, k, 0, rng);
        for (size_t s : ep.support_indices) ++hits[s];
    }
    CHECK(hits.count(0) == 0);
    // binomial oracle: p = K/(N-1) = 3/8, three standard errors
    double p = double(k) / double(t.examples.size() - 1);
    double se = std::sqrt(p * (1 - p) / double(trials));
    for (size_t i = 1; i < t.examples.size(); ++i) {
        double freq = double(hits[i]) / double(trials);
        CHECK(std::abs(freq - p) < 3.0 * se);
    }
}

TEST_CASE("instruction draws are uniform over paraphrases") {
    TaskSpec t = demo_task(6, 4);
    Rng rng(13);
    std::map<int64_t, int64_t> hits;
    const int trials = 4000;
    for (int i = 0; i < trials; ++i) ++hits[sample_episode(t, 2, rng).instruction_index];
    double se = std::sqrt(0.25 * 0.75 / double(trials));
    for (int64_t i = 0; i < 4; ++i)
        CHECK(std::abs(double(hits[i]) / trials - 0.25) < 3.0 * se);
}

TEST_CASE("enumerate_orderings yields exactly K! distinct orderings") {
    Episode ep;
    ep.support_indices = {7, 2, 9};
    auto all = enumerate_orderings(ep);
    CHECK(all.size() == 6);
    std::set<std::vector<size_t>> seen;
    for (const auto& e : all) seen.insert(e.support_indices);
    CHECK(seen.size() == 6);

    // K=5 against a recursive permutation oracle
    Episode e5;
    e5.support_indices = {0, 1, 2, 3, 4};
    auto got = enumerate_orderings(e5);
    auto want = recursive_perms({0, 1, 2, 3, 4});
    REQUIRE(got.size() == want.size());
    std::set<std::vector<size_t>> gs, ws(want.begin(), want.end());
    for (const auto& e : got) gs.insert(e.support_indices);
    CHECK(gs == ws);

    Episode e6;
    e6.support_indices = {0, 1, 2, 3, 4, 5};
    CHECK_THROWS_AS(enumerate_orderings(e6), ContractError);
}

TEST_CASE("overflow is a hard error naming the overflow amount") {
    TaskSpec t = demo_task(8);
    Episode ep;
    ep.task_id = t.task_id;
    ep.support_indices = {0, 1, 3, 4, 5};
    ep.target_index = 2;
    auto full = serialize_episode(t, ep, PromptLayout{}, true, 256);
    try {
        serialize_episode(t, ep, PromptLayout{}, true, int64_t(full.size()) - 3);
        FAIL("expected overflow");
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("by 3") != std::string::npos);
    }
}

TEST_CASE("sampling contract violations throw") {
    TaskSpec t = demo_task(4);
    Rng rng(1);
    CHECK_THROWS_AS(sample_episode(t, 4, rng), ContractError);   // K+1 > pool
    CHECK_THROWS_AS(sample_episode(t, -1, rng), ContractError);
    CHECK_THROWS_AS(sample_episode_for_target(t, 2, 9, rng), ContractError);

    Episode bad;
    bad.support_indices = {1};
    bad.target_index = 1;
    CHECK_THROWS_AS(serialize_episode(t, bad, PromptLayout{}, false, 256), ContractError);
}

TEST_CASE("episode sampling is deterministic given the rng state") {
    TaskSpec t = demo_task(10);
    Rng a(31), b(31);
    for (int i = 0; i < 50; ++i) {
        Episode ea = sample_episode(t, 3, a);
        Episode eb = sample_episode(t, 3, b);
        CHECK(episode_to_json(ea) == episode_to_json(eb));
    }
}
