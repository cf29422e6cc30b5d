#include "ict/task.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "ict/errors.hpp"

namespace ict {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string family_name(TaskFamily f) {
    return f == TaskFamily::RelationLookup ? "relation-lookup" : "binary-clf";
}

TaskFamily family_from_name(const std::string& s) {
    if (s == "relation-lookup") return TaskFamily::RelationLookup;
    if (s == "binary-clf") return TaskFamily::BinaryClf;
    throw ConfigError("unknown task family: " + s);
}

void TaskSpec::validate(int64_t k_max) const {
    if (instructions.empty())
        throw ContractError("task " + task_id + ": no instructions");
    if (int64_t(examples.size()) < k_max + 1)
        throw ContractError("task " + task_id + ": pool smaller than k_max+1");
    std::set<int64_t> space(answer_space.begin(), answer_space.end());
    for (const auto& ex : examples)
        if (!space.count(ex.answer))
            throw ContractError("task " + task_id + ": answer " +
                                std::to_string(ex.answer) + " outside answer_space");
}

namespace {

// Distinct instruction paraphrases: a task-identifying pair of words, a
// paraphrase-specific synonym, and a random filler, with slot order
// varying by paraphrase. identity must be scrambled by the caller so the
// instruction words carry no task-index structure (see
// scrambled_identities).
std::vector<std::vector<int64_t>> make_instructions(int64_t identity, int64_t count,
                                                    int64_t word_base, int64_t n_words,
                                                    Rng& rng,
                                                    const std::vector<int64_t>& extra_tokens) {
    int64_t wa = word_base + identity % n_words;
    int64_t wb = word_base + (identity / n_words) % n_words;
    std::set<std::vector<int64_t>> seen;
    std::vector<std::vector<int64_t>> out;
    for (int64_t p = 0; p < count; ++p) {
        int64_t syn = word_base + (5 + 3 * p) % n_words;
        int64_t filler = word_base + int64_t(rng.index(uint64_t(n_words)));
        std::vector<int64_t> ins;
        switch (p % 3) {
            case 0: ins = {wa, wb, syn}; break;
            case 1: ins = {syn, wa, wb}; break;
            default: ins = {wa, syn, wb}; break;
        }
        ins.insert(ins.end(), extra_tokens.begin(), extra_tokens.end());
        ins.push_back(filler);  // always last, so dedup can bump it safely
        while (seen.count(ins)) {
            // bump the filler deterministically until unique
            ins.back() = word_base + (ins.back() - word_base + 1) % n_words;
        }
        seen.insert(ins);
        out.push_back(std::move(ins));
    }
    return out;
}

// Distinct task identities drawn in a shuffled order, so no arithmetic
// structure of the task index (such as its parity) survives into the
// instruction words.
std::vector<int64_t> scrambled_identities(const Rng& root, int64_t n_tasks, int64_t n_words) {
    int64_t space = n_words * n_words;
    if (n_tasks > space)
        throw ConfigError("suite: n_instruction_words^2 must be >= n_tasks");
    std::vector<int64_t> ids(static_cast<size_t>(space));
    std::iota(ids.begin(), ids.end(), int64_t{0});
    Rng r = root.split("identity");
    r.shuffle(ids);
    ids.resize(static_cast<size_t>(n_tasks));
    return ids;
}

ordered_json vocab_layout_json(std::initializer_list<std::pair<const char*, int64_t>> regions) {
    ordered_json j;
    for (auto& [k, v] : regions) j[k] = v;
    return j;
}

}  // namespace

Suite gen_relation_suite(const RelationSuiteConfig& cfg) {
    if (cfg.entity_vocab_size < cfg.n_examples)
        throw ConfigError("gen_relation_suite: entity vocab (" +
                          std::to_string(cfg.entity_vocab_size) +
                          ") too small for an injective mapping over " +
                          std::to_string(cfg.n_examples) + " examples");
    if (cfg.n_examples < cfg.k_max + 1)
        throw ConfigError("gen_relation_suite: n_examples must exceed k_max");
    if (cfg.max_task_input_len < 1)
        throw ConfigError("gen_relation_suite: max_task_input_len must be >= 1");

    int64_t entity_base = kNumSpecialTokens;
    int64_t word_base = entity_base + cfg.entity_vocab_size;
    int64_t vocab_size = word_base + cfg.n_instruction_words;

    Rng root = Rng(cfg.seed).split("relation-suite");
    std::vector<int64_t> identities =
        scrambled_identities(root, cfg.n_tasks, cfg.n_instruction_words);
    Suite suite;
    suite.vocab_size = vocab_size;
    suite.k_max = cfg.k_max;

    std::vector<int64_t> answer_space;
    for (int64_t e = 0; e < cfg.entity_vocab_size; ++e)
        answer_space.push_back(entity_base + e);

    for (int64_t t = 0; t < cfg.n_tasks; ++t) {
        Rng trng = root.split(uint64_t(t));
        TaskSpec task;
        task.task_id = "rel-" + std::to_string(t);
        task.family = TaskFamily::RelationLookup;
        task.answer_space = answer_space;

        auto subj = trng.sample_without_replacement(size_t(cfg.entity_vocab_size),
                                                    size_t(cfg.n_examples));
        auto obj = trng.sample_without_replacement(size_t(cfg.entity_vocab_size),
                                                   size_t(cfg.n_examples));
        ordered_json mapping = ordered_json::array();
        for (int64_t i = 0; i < cfg.n_examples; ++i) {
            TaskExample ex;
            ex.input = {entity_base + int64_t(subj[size_t(i)])};
            ex.answer = entity_base + int64_t(obj[size_t(i)]);
            mapping.push_back({ex.input[0], ex.answer});
            task.examples.push_back(std::move(ex));
        }
        task.latent = ordered_json{{"type", "injective-mapping"}, {"pairs", mapping}};

        int64_t n_instr = 1 + int64_t(trng.index(10));  // 1-10 paraphrases
        task.instructions = make_instructions(identities[size_t(t)], n_instr, word_base,
                                              cfg.n_instruction_words, trng, {});
        task.validate(cfg.k_max);
        suite.tasks.push_back(std::move(task));
    }

    suite.manifest = ordered_json{
        {"family", "relation-lookup"},
        {"seed", cfg.seed},
        {"config",
         {{"n_tasks", cfg.n_tasks},
          {"n_examples", cfg.n_examples},
          {"entity_vocab_size", cfg.entity_vocab_size},
          {"k_max", cfg.k_max},
          {"max_task_input_len", cfg.max_task_input_len},
          {"n_instruction_words", cfg.n_instruction_words}}},
        {"vocab",
         vocab_layout_json({{"n_special", kNumSpecialTokens},
                            {"entity_base", entity_base},
                            {"word_base", word_base},
                            {"vocab_size", vocab_size}})},
    };
    return suite;
}

Suite gen_binary_suite(const BinarySuiteConfig& cfg) {
    if (cfg.n_examples % 2 != 0)
        throw ConfigError("gen_binary_suite: n_examples must be even for 50/50 balance");
    if (cfg.n_examples < cfg.k_max + 1)
        throw ConfigError("gen_binary_suite: n_examples must exceed k_max");
    if (cfg.n_markers < 2)
        throw ConfigError("gen_binary_suite: need at least 2 marker tokens");
    if (cfg.min_input_len < 1 || cfg.max_input_len < cfg.min_input_len)
        throw ConfigError("gen_binary_suite: bad input length range");
    if (cfg.permutation_fraction < 0.0 || cfg.permutation_fraction > 1.0)
        throw ConfigError("gen_binary_suite: permutation_fraction must be in [0,1]");

    int64_t marker_base = kTokNo + 1;  // 6
    int64_t noise_base = marker_base + cfg.n_markers;
    int64_t word_base = noise_base + cfg.n_noise_tokens;
    int64_t vocab_size = word_base + cfg.n_instruction_words;

    Rng root = Rng(cfg.seed).split("binary-suite");
    std::vector<int64_t> identities =
        scrambled_identities(root, cfg.n_tasks, cfg.n_instruction_words);
    Suite suite;
    suite.vocab_size = vocab_size;
    suite.k_max = cfg.k_max;

    int64_t n_perm = int64_t(cfg.permutation_fraction * double(cfg.n_tasks) + 0.5);
    int64_t perm_ordinal = 0;

    for (int64_t t = 0; t < cfg.n_tasks; ++t) {
        Rng trng = root.split(uint64_t(t));
        bool perm_family = t < n_perm;
        TaskSpec task;
        task.task_id = "bin-" + std::to_string(t);
        task.family = TaskFamily::BinaryClf;
        task.answer_space = {kTokYes, kTokNo};

        std::vector<int64_t> yes_markers, no_markers;
        int64_t presence_marker = -1;
        bool flipped = false;
        if (perm_family) {
            // Canonical balanced marker -> label split, with the Yes/No
            // semantics flipped on alternating tasks of the sub-family.
            // The instruction never reveals the flip, so any predictor
            // that ignores the support examples scores exactly 0.5 on an
            // even-sized contiguous block of tasks, while a single
            // support example decides the whole mapping.
            flipped = (perm_ordinal++ % 2) == 1;
            for (int64_t m = 0; m < cfg.n_markers; ++m) {
                bool canonical_yes = m < cfg.n_markers / 2;
                (canonical_yes != flipped ? yes_markers : no_markers)
                    .push_back(marker_base + m);
            }
        } else {
            presence_marker = marker_base + int64_t(trng.index(uint64_t(cfg.n_markers)));
        }

        for (int64_t i = 0; i < cfg.n_examples; ++i) {
            bool yes = i < cfg.n_examples / 2;
            int64_t len = cfg.min_input_len +
                          int64_t(trng.index(uint64_t(cfg.max_input_len - cfg.min_input_len + 1)));
            TaskExample ex;
            ex.answer = yes ? kTokYes : kTokNo;
            ex.input.resize(size_t(len));
            for (auto& tok : ex.input)
                tok = noise_base + int64_t(trng.index(uint64_t(cfg.n_noise_tokens)));
            if (perm_family) {
                const auto& pool = yes ? yes_markers : no_markers;
                int64_t marker = pool[trng.index(pool.size())];
                ex.input[trng.index(uint64_t(len))] = marker;
            } else if (yes) {
                ex.input[trng.index(uint64_t(len))] = presence_marker;
            }
            task.examples.push_back(std::move(ex));
        }
        trng.shuffle(task.examples);

        int64_t n_instr = 1 + int64_t(trng.index(4));  // 1-4 paraphrases
        std::vector<int64_t> extra;
        if (!perm_family) extra.push_back(presence_marker);
        task.instructions = make_instructions(identities[size_t(t)], n_instr, word_base,
                                              cfg.n_instruction_words, trng, extra);

        if (perm_family) {
            ordered_json map = ordered_json::array();
            for (int64_t m : yes_markers) map.push_back({m, kTokYes});
            for (int64_t m : no_markers) map.push_back({m, kTokNo});
            task.latent = ordered_json{{"type", "label-permutation"},
                                       {"flipped", flipped},
                                       {"marker_labels", map}};
        } else {
            task.latent = ordered_json{{"type", "marker-presence"},
                                       {"marker", presence_marker}};
        }
        task.validate(cfg.k_max);
        suite.tasks.push_back(std::move(task));
    }

    suite.manifest = ordered_json{
        {"family", "binary-clf"},
        {"seed", cfg.seed},
        {"config",
         {{"n_tasks", cfg.n_tasks},
          {"n_examples", cfg.n_examples},
          {"permutation_fraction", cfg.permutation_fraction},
          {"k_max", cfg.k_max},
          {"n_markers", cfg.n_markers},
          {"n_noise_tokens", cfg.n_noise_tokens},
          {"n_instruction_words", cfg.n_instruction_words},
          {"min_input_len", cfg.min_input_len},
          {"max_input_len", cfg.max_input_len}}},
        {"vocab",
         vocab_layout_json({{"n_special", kNumSpecialTokens},
                            {"yes", kTokYes},
                            {"no", kTokNo},
                            {"marker_base", marker_base},
                            {"noise_base", noise_base},
                            {"word_base", word_base},
                            {"vocab_size", vocab_size}})},
    };
    return suite;
}

std::optional<TaskSpec> majority_label_filter(const TaskSpec& task, double threshold,
                                              int64_t k_max, FilterRecord& record) {
    if (threshold <= 0.0 || threshold > 1.0)
        throw ContractError("majority_label_filter: threshold must be in (0,1]");
    record = FilterRecord{task.task_id, 0, false, ""};
    TaskSpec out = task;
    for (;;) {
        int64_t n = int64_t(out.examples.size());
        if (n == 0) {
            record.dropped = true;
            record.reason = "pool exhausted by filtering";
            return std::nullopt;
        }
        std::map<int64_t, int64_t> counts;
        for (const auto& ex : out.examples) ++counts[ex.answer];
        // Most frequent violating answer; ties resolved toward the lowest token.
        int64_t worst_answer = -1, worst_count = 0;
        for (const auto& [ans, c] : counts) {
            if (double(c) / double(n) < threshold) continue;
            if (c > worst_count) {
                worst_count = c;
                worst_answer = ans;
            }
        }
        if (worst_answer < 0) break;  // all frequencies strictly below threshold
        if (worst_count <= 1) {
            // Every answer is a singleton yet still at/above threshold:
            // removal only shrinks the pool and raises frequencies.
            record.dropped = true;
            record.reason = "threshold unreachable at this pool size";
            return std::nullopt;
        }
        auto it = std::find_if(out.examples.begin(), out.examples.end(),
                               [&](const TaskExample& ex) { return ex.answer == worst_answer; });
        out.examples.erase(it);
        ++record.removed;
    }
    if (int64_t(out.examples.size()) < k_max + 1) {
        record.dropped = true;
        record.reason = "post-filter pool below k_max+1";
        return std::nullopt;
    }
    return out;
}

void apply_majority_label_filter(Suite& suite, double threshold) {
    ordered_json records = ordered_json::array();
    std::vector<TaskSpec> kept;
    int64_t dropped = 0;
    for (const auto& task : suite.tasks) {
        FilterRecord rec;
        auto filtered = majority_label_filter(task, threshold, suite.k_max, rec);
        records.push_back(ordered_json{{"task_id", rec.task_id},
                                       {"removed", rec.removed},
                                       {"dropped", rec.dropped},
                                       {"reason", rec.reason}});
        if (filtered)
            kept.push_back(std::move(*filtered));
        else
            ++dropped;
    }
    suite.tasks = std::move(kept);
    suite.manifest["filter"] = ordered_json{{"threshold", threshold},
                                            {"kept", int64_t(suite.tasks.size())},
                                            {"dropped", dropped},
                                            {"records", std::move(records)}};
}

std::vector<SuiteSplit> make_folds(const std::vector<std::string>& task_ids,
                                   int64_t n_folds, uint64_t seed) {
    if (n_folds < 3) throw ConfigError("make_folds: need n_folds >= 3");
    if (int64_t(task_ids.size()) < n_folds)
        throw ConfigError("make_folds: fewer tasks than folds");
    std::vector<std::string> ids = task_ids;
    Rng rng = Rng(seed).split("folds");
    rng.shuffle(ids);

    // Near-equal groups; the first (n % folds) groups get one extra task.
    std::vector<std::vector<std::string>> groups(static_cast<size_t>(n_folds));
    int64_t n = int64_t(ids.size());
    int64_t base = n / n_folds, extra = n % n_folds;
    size_t pos = 0;
    for (int64_t g = 0; g < n_folds; ++g) {
        int64_t sz = base + (g < extra ? 1 : 0);
        for (int64_t i = 0; i < sz; ++i) groups[size_t(g)].push_back(ids[pos++]);
    }

    std::vector<SuiteSplit> folds;
    for (int64_t f = 0; f < n_folds; ++f) {
        SuiteSplit s;
        s.fold_index = f;
        s.test_tasks = groups[size_t(f)];
        s.val_tasks = groups[size_t((f + 1) % n_folds)];
        for (int64_t g = 0; g < n_folds; ++g) {
            if (g == f || g == (f + 1) % n_folds) continue;
            for (const auto& id : groups[size_t(g)]) s.train_tasks.push_back(id);
        }
        folds.push_back(std::move(s));
    }
    return folds;
}

ordered_json task_to_json(const TaskSpec& t) {
    ordered_json j;
    j["task_id"] = t.task_id;
    j["family"] = family_name(t.family);
    j["instructions"] = t.instructions;
    ordered_json exs = ordered_json::array();
    for (const auto& ex : t.examples)
        exs.push_back(ordered_json{{"input", ex.input}, {"answer", ex.answer}});
    j["examples"] = std::move(exs);
    j["answer_space"] = t.answer_space;
    j["latent"] = t.latent;
    return j;
}

TaskSpec task_from_json(const ordered_json& j) {
    TaskSpec t;
    t.task_id = j.at("task_id").get<std::string>();
    t.family = family_from_name(j.at("family").get<std::string>());
    t.instructions = j.at("instructions").get<std::vector<std::vector<int64_t>>>();
    for (const auto& e : j.at("examples")) {
        TaskExample ex;
        ex.input = e.at("input").get<std::vector<int64_t>>();
        ex.answer = e.at("answer").get<int64_t>();
        t.examples.push_back(std::move(ex));
    }
    t.answer_space = j.at("answer_space").get<std::vector<int64_t>>();
    t.latent = j.at("latent");
    return t;
}

uint64_t suite_content_hash(const Suite& suite) {
    std::string all;
    for (const auto& t : suite.tasks) {
        all += task_to_json(t).dump();
        all += '\n';
    }
    return fnv1a(all);
}

void save_suite(const fs::path& dir, const Suite& suite) {
    fs::create_directories(dir);
    std::ofstream tf(dir / "tasks.jsonl", std::ios::binary | std::ios::trunc);
    if (!tf) throw ContractError("cannot write " + (dir / "tasks.jsonl").string());
    for (const auto& t : suite.tasks) tf << task_to_json(t).dump() << "\n";

    ordered_json manifest = suite.manifest;
    manifest["n_tasks"] = int64_t(suite.tasks.size());
    manifest["vocab_size"] = suite.vocab_size;
    manifest["k_max"] = suite.k_max;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx",
                  (unsigned long long)suite_content_hash(suite));
    manifest["suite_hash"] = std::string(hex);
    std::ofstream mf(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!mf) throw ContractError("cannot write " + (dir / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
}

Suite load_suite(const fs::path& dir) {
    Suite suite;
    std::ifstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw ContractError("cannot read " + (dir / "manifest.json").string());
    suite.manifest = ordered_json::parse(mf);
    suite.vocab_size = suite.manifest.at("vocab_size").get<int64_t>();
    suite.k_max = suite.manifest.at("k_max").get<int64_t>();

    std::ifstream tf(dir / "tasks.jsonl", std::ios::binary);
    if (!tf) throw ContractError("cannot read " + (dir / "tasks.jsonl").string());
    std::string line;
    while (std::getline(tf, line)) {
        if (line.empty()) continue;
        suite.tasks.push_back(task_from_json(ordered_json::parse(line)));
    }
    return suite;
}

const TaskSpec& find_task(const Suite& suite, const std::string& task_id) {
    for (const auto& t : suite.tasks)
        if (t.task_id == task_id) return t;
    throw ContractError("task not found in suite: " + task_id);
}

}  // namespace ict
