#include "ict/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ict/errors.hpp"

namespace ict {

using nlohmann::ordered_json;

namespace {

std::atomic<int64_t> g_test_label_reads{0};

const PromptLayout kLayout{};

int64_t factorial(int64_t k) {
    int64_t f = 1;
    for (int64_t i = 2; i <= k; ++i) f *= i;
    return f;
}

std::string join_indices(const std::vector<size_t>& v, bool sorted) {
    std::vector<size_t> idx = v;
    if (sorted) std::sort(idx.begin(), idx.end());
    std::string s;
    for (size_t i = 0; i < idx.size(); ++i) {
        if (i) s += '-';
        s += std::to_string(idx[i]);
    }
    return s;
}

double pop_variance(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size());
}

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size() - 1);
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double m = 0.0;
    for (double x : v) m += x;
    return m / double(v.size());
}

}  // namespace

int64_t test_label_access_count() { return g_test_label_reads.load(); }
void reset_test_label_access_count() { g_test_label_reads.store(0); }

std::string partition_name(Partition p) {
    switch (p) {
        case Partition::Train: return "train";
        case Partition::Val: return "val";
        case Partition::Test: return "test";
    }
    return "?";
}

double auc_roc(const std::vector<std::pair<double, int>>& scored) {
    int64_t n_pos = 0, n_neg = 0;
    for (const auto& [s, y] : scored) {
        if (!std::isfinite(s)) throw ContractError("auc_roc: non-finite score");
        (y ? n_pos : n_neg)++;
    }
    if (n_pos == 0 || n_neg == 0)
        throw ContractError("auc_roc: undefined metric, only one class present");

    std::vector<std::pair<double, int>> sorted = scored;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Sum over positives of (#negatives below + half the tied negatives).
    // All terms are multiples of 0.5, so the sum is exact in doubles.
    double numer = 0.0;
    int64_t neg_below = 0;
    size_t i = 0;
    while (i < sorted.size()) {
        size_t j = i;
        int64_t tie_pos = 0, tie_neg = 0;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            (sorted[j].second ? tie_pos : tie_neg)++;
            ++j;
        }
        numer += double(tie_pos) * (double(neg_below) + 0.5 * double(tie_neg));
        neg_below += tie_neg;
        i = j;
    }
    return numer / (double(n_pos) * double(n_neg));
}

namespace {

bool is_binary_task(const TaskSpec& task) {
    return task.answer_space.size() == 2 && task.answer_space[0] == kTokYes &&
           task.answer_space[1] == kTokNo;
}

const std::vector<std::string>& partition_ids(const SuiteSplit& split, Partition p) {
    switch (p) {
        case Partition::Train: return split.train_tasks;
        case Partition::Val: return split.val_tasks;
        case Partition::Test: return split.test_tasks;
    }
    throw ContractError("bad partition");
}

}  // namespace

EvalResult evaluate_method(const MethodRun& run, const Suite& suite, const SuiteSplit& split,
                           Partition partition, const EvalConfig& cfg,
                           const AdaptConfig* adapt) {
    bool gradient_method = run.method == Method::FOMAML || run.method == Method::INS_T_FT;
    if (gradient_method && !adapt)
        throw ConfigError("evaluate_method: " + method_name(run.method) +
                          " requires an adapt config");
    if (!gradient_method && adapt)
        throw ConfigError("evaluate_method: adapt config given for " +
                          method_name(run.method) + ", which does not adapt by gradient");
    if (cfg.m_samplings <= 0) throw ConfigError("evaluate_method: m_samplings must be positive");

    bool in_context = run.method == Method::ICT || run.method == Method::RAW;
    EvalResult result;
    Rng root = Rng(cfg.seed).split("eval");

    for (const auto& task_id : partition_ids(split, partition)) {
        const TaskSpec& task = find_task(suite, task_id);
        Rng trng = root.split(fnv1a(task_id));
        size_t pool = task.examples.size();
        size_t n_targets = (cfg.max_targets > 0 && size_t(cfg.max_targets) < pool)
                               ? size_t(cfg.max_targets)
                               : pool;
        std::vector<std::vector<int64_t>> candidates;
        candidates.reserve(task.answer_space.size());
        for (int64_t a : task.answer_space) candidates.push_back({a});
        bool binary = is_binary_task(task);

        std::vector<double> sampling_acc, sampling_auc;
        for (int64_t m = 0; m < cfg.m_samplings; ++m) {
            Rng srng = trng.split(uint64_t(m));
            int64_t fixed_instruction = 0;
            const ParamStore* params = &run.params;
            ParamStore adapted;
            if (!in_context) {
                fixed_instruction = int64_t(srng.index(task.instructions.size()));
                if (gradient_method) {
                    auto support = srng.sample_without_replacement(pool, size_t(cfg.k));
                    adapted = finetune_on_support(run, task, support, fixed_instruction, *adapt);
                    params = &adapted;
                }
            }

            int64_t n_correct = 0;
            std::vector<std::pair<double, int>> auc_pairs;
            for (size_t tgt = 0; tgt < n_targets; ++tgt) {
                Episode ep;
                if (in_context) {
                    ep = sample_episode_for_target(task, cfg.k, tgt, srng);
                } else {
                    ep.task_id = task.task_id;
                    ep.instruction_index = fixed_instruction;
                    ep.target_index = tgt;
                }
                auto prompt = serialize_episode(task, ep, kLayout, false,
                                                run.config.max_context - 1);
                auto scores = score_candidates(run.config, *params, prompt, candidates);
                size_t best = argmax_candidate(scores);

                EvalRecord rec;
                rec.task_id = task.task_id;
                rec.sampling = m;
                rec.instruction_index = ep.instruction_index;
                rec.support_id = join_indices(ep.support_indices, true);
                rec.ordering_id = join_indices(ep.support_indices, false);
                rec.target_index = int64_t(tgt);
                if (partition == Partition::Test) g_test_label_reads.fetch_add(1);
                rec.gold = task.examples[tgt].answer;
                rec.pred = task.answer_space[best];
                rec.correct = rec.pred == rec.gold;
                rec.score = binary ? scores[0] - scores[1] : scores[best];
                if (rec.correct) ++n_correct;
                if (binary) auc_pairs.emplace_back(rec.score, rec.gold == kTokYes ? 1 : 0);
                result.records.push_back(std::move(rec));
            }
            sampling_acc.push_back(double(n_correct) / double(n_targets));
            if (binary) {
                bool has_pos = false, has_neg = false;
                for (const auto& [s, y] : auc_pairs) (y ? has_pos : has_neg) = true;
                if (has_pos && has_neg) sampling_auc.push_back(auc_roc(auc_pairs));
            }
        }

        TaskMetrics tm;
        tm.task_id = task.task_id;
        tm.p_at_1 = mean_of(sampling_acc);
        if (!sampling_auc.empty()) tm.auc = mean_of(sampling_auc);
        result.per_task.push_back(std::move(tm));
    }

    std::vector<double> accs, aucs;
    for (const auto& tm : result.per_task) {
        accs.push_back(tm.p_at_1);
        if (tm.auc) aucs.push_back(*tm.auc);
    }
    result.macro_p_at_1 = mean_of(accs);
    if (!aucs.empty()) result.macro_auc = mean_of(aucs);
    return result;
}

double precision_at_1(const MethodRun& run, const Suite& suite, const SuiteSplit& split,
                      Partition partition, const EvalConfig& cfg, const AdaptConfig* adapt) {
    return evaluate_method(run, suite, split, partition, cfg, adapt).macro_p_at_1;
}

void write_records_csv(const std::filesystem::path& path,
                       const std::vector<EvalRecord>& records) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ContractError("cannot write " + path.string());
    f << "task_id,sampling,instruction_index,support_id,ordering_id,target_index,"
         "gold,pred,correct,score\n";
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%.17g", r.score);
        f << r.task_id << ',' << r.sampling << ',' << r.instruction_index << ','
          << r.support_id << ',' << r.ordering_id << ',' << r.target_index << ','
          << r.gold << ',' << r.pred << ',' << (r.correct ? 1 : 0) << ',' << buf << '\n';
    }
}

ordered_json eval_summary_json(const EvalResult& result) {
    ordered_json per_task = ordered_json::array();
    for (const auto& tm : result.per_task) {
        ordered_json j{{"task_id", tm.task_id}, {"p_at_1", tm.p_at_1}};
        j["auc"] = tm.auc ? ordered_json(*tm.auc) : ordered_json(nullptr);
        per_task.push_back(std::move(j));
    }
    ordered_json out;
    out["schema_version"] = 1;
    out["macro_p_at_1"] = result.macro_p_at_1;
    out["macro_auc"] = result.macro_auc ? ordered_json(*result.macro_auc) : ordered_json(nullptr);
    out["per_task"] = std::move(per_task);
    return out;
}

// ---- sensitivity -----------------------------------------------------

DecompResult decompose_exhaustive(const MuTable& mu) {
    if (mu.empty()) throw ContractError("decompose: empty table");
    std::vector<double> instr_means, all;
    std::vector<double> choice_per_instr, order_vars;
    for (const auto& supports : mu) {
        std::vector<double> support_means;
        for (const auto& orders : supports) {
            if (orders.empty()) throw ContractError("decompose: empty ordering row");
            support_means.push_back(mean_of(orders));
            order_vars.push_back(pop_variance(orders));
            for (double v : orders) all.push_back(v);
        }
        choice_per_instr.push_back(pop_variance(support_means));
        instr_means.push_back(mean_of(support_means));
    }
    DecompResult r;
    r.instruction = pop_variance(instr_means);
    r.choice = mean_of(choice_per_instr);
    r.order = mean_of(order_vars);
    r.total = pop_variance(all);
    return r;
}

DecompResult decompose_sampled(const MuTable& mu) {
    if (mu.empty()) throw ContractError("decompose: empty table");
    size_t n_s = mu[0].size();
    size_t n_o = n_s ? mu[0][0].size() : 0;
    std::vector<double> instr_means, support_var_per_instr;
    std::vector<double> order_vars_all;
    for (const auto& supports : mu) {
        std::vector<double> support_means, order_vars;
        for (const auto& orders : supports) {
            support_means.push_back(mean_of(orders));
            order_vars.push_back(sample_variance(orders));
        }
        order_vars_all.insert(order_vars_all.end(), order_vars.begin(), order_vars.end());
        support_var_per_instr.push_back(sample_variance(support_means) -
                                        mean_of(order_vars) / double(std::max<size_t>(n_o, 1)));
        instr_means.push_back(mean_of(support_means));
    }
    DecompResult r;
    r.order = std::max(0.0, mean_of(order_vars_all));
    r.choice = std::max(0.0, mean_of(support_var_per_instr));
    // Subtract the sampling noise of each instruction-mean estimate.
    std::vector<double> raw_support_vars;
    for (const auto& supports : mu) {
        std::vector<double> support_means;
        for (const auto& orders : supports) support_means.push_back(mean_of(orders));
        raw_support_vars.push_back(sample_variance(support_means));
    }
    r.instruction = std::max(0.0, sample_variance(instr_means) -
                                      mean_of(raw_support_vars) / double(std::max<size_t>(n_s, 1)));
    r.total = r.instruction + r.choice + r.order;
    return r;
}

namespace {

// Accuracy of the run over the task's fixed target set for one
// (instruction, ordered support) choice.
double mu_accuracy(const MethodRun& run, const TaskSpec& task, int64_t instruction,
                   const std::vector<size_t>& ordered_support,
                   const std::vector<size_t>& targets,
                   const std::vector<std::vector<int64_t>>& candidates) {
    int64_t correct = 0;
    for (size_t tgt : targets) {
        Episode ep;
        ep.task_id = task.task_id;
        ep.instruction_index = instruction;
        ep.support_indices = ordered_support;
        ep.target_index = tgt;
        auto prompt = serialize_episode(task, ep, kLayout, false, run.config.max_context - 1);
        auto scores = score_candidates(run.config, run.params, prompt, candidates);
        if (task.answer_space[argmax_candidate(scores)] == task.examples[tgt].answer)
            ++correct;
    }
    return double(correct) / double(targets.size());
}

void next_combination_done(std::vector<size_t>& comb, size_t n, bool& done) {
    // lexicographic successor of a k-combination of {0..n-1}
    size_t k = comb.size();
    int64_t i = int64_t(k) - 1;
    while (i >= 0 && comb[size_t(i)] == n - k + size_t(i)) --i;
    if (i < 0) {
        done = true;
        return;
    }
    ++comb[size_t(i)];
    for (size_t j = size_t(i) + 1; j < k; ++j) comb[j] = comb[j - 1] + 1;
}

}  // namespace

SensitivityReport variance_decomposition(const MethodRun& run, const TaskSpec& task,
                                         const SenseConfig& cfg) {
    if (cfg.k < 1) throw ConfigError("variance_decomposition: K must be >= 1");
    size_t pool = task.examples.size();
    if (cfg.n_targets < 1 || size_t(cfg.n_targets) >= pool)
        throw ConfigError("variance_decomposition: n_targets must leave a support pool");
    size_t support_pool = pool - size_t(cfg.n_targets);
    if (support_pool < size_t(cfg.k))
        throw ConfigError("variance_decomposition: support pool smaller than K");

    // Fixed target set: the tail of the pool, disjoint from supports.
    std::vector<size_t> targets;
    for (size_t t = support_pool; t < pool; ++t) targets.push_back(t);
    std::vector<std::vector<int64_t>> candidates;
    for (int64_t a : task.answer_space) candidates.push_back({a});

    int64_t n_instr = int64_t(task.instructions.size());
    SensitivityReport rep;
    rep.task_id = task.task_id;
    constexpr double kPct2 = 1e4;  // accuracy variance -> percentage points squared

    if (cfg.mode == SenseMode::Exhaustive) {
        if (cfg.k > 5)
            throw ContractError("variance_decomposition: exhaustive mode needs K <= 5; "
                                "use monte-carlo");
        int64_t n_comb = 1;
        for (int64_t i = 0; i < cfg.k; ++i)
            n_comb = n_comb * int64_t(support_pool - size_t(i)) / (i + 1);
        int64_t n_perm = factorial(cfg.k);
        int64_t evals = n_instr * n_comb * n_perm * int64_t(targets.size());
        if (evals > cfg.budget)
            throw ContractError(
                "variance_decomposition: exhaustive enumeration needs " +
                std::to_string(evals) + " evaluations (budget " +
                std::to_string(cfg.budget) + "); use monte-carlo mode with sampled "
                "instructions/supports/orderings instead");

        MuTable mu(static_cast<size_t>(n_instr));
        for (int64_t i = 0; i < n_instr; ++i) {
            std::vector<size_t> comb(static_cast<size_t>(cfg.k));
            for (size_t c = 0; c < comb.size(); ++c) comb[c] = c;
            bool done = false;
            while (!done) {
                Episode probe;
                probe.support_indices = comb;
                std::vector<double> row;
                for (const Episode& e : enumerate_orderings(probe))
                    row.push_back(mu_accuracy(run, task, i, e.support_indices, targets,
                                              candidates));
                mu[size_t(i)].push_back(std::move(row));
                next_combination_done(comb, support_pool, done);
            }
        }
        DecompResult d = decompose_exhaustive(mu);
        rep.total_variance = d.total * kPct2;
        rep.instruction_variance = d.instruction * kPct2;
        rep.choice_variance = d.choice * kPct2;
        rep.order_variance = d.order * kPct2;

        // Fixed default instruction I* = index 0.
        std::vector<double> means, vars;
        for (const auto& orders : mu[0]) {
            means.push_back(mean_of(orders));
            vars.push_back(pop_variance(orders));
        }
        rep.order_variance_default_instruction = mean_of(vars) * kPct2;
        rep.choice_variance_default_instruction = pop_variance(means) * kPct2;
        rep.metadata = ordered_json{{"mode", "exhaustive"},
                                    {"k", cfg.k},
                                    {"n_instructions", n_instr},
                                    {"n_supports", n_comb},
                                    {"n_orderings", n_perm},
                                    {"n_targets", int64_t(targets.size())},
                                    {"mu_evaluations", evals},
                                    {"units", "percentage-points-squared"}};
        return rep;
    }

    // Monte-Carlo: iid draws at every level, nested unbiased estimators.
    Rng rng = Rng(cfg.seed).split("sense").split(fnv1a(task.task_id));
    int64_t n_o = std::min(cfg.n_orderings, cfg.k <= 5 ? factorial(cfg.k) : cfg.n_orderings);
    n_o = std::max<int64_t>(n_o, 1);

    auto sample_mu_block = [&](int64_t instruction) {
        std::vector<std::vector<double>> block;
        for (int64_t s = 0; s < cfg.n_supports; ++s) {
            auto support = rng.sample_without_replacement(support_pool, size_t(cfg.k));
            std::vector<double> row;
            for (int64_t o = 0; o < n_o; ++o) {
                auto ordered = support;
                rng.shuffle(ordered);
                row.push_back(mu_accuracy(run, task, instruction, ordered, targets, candidates));
            }
            block.push_back(std::move(row));
        }
        return block;
    };

    MuTable mu;
    for (int64_t i = 0; i < cfg.n_instructions; ++i) {
        int64_t instruction = int64_t(rng.index(uint64_t(n_instr)));
        mu.push_back(sample_mu_block(instruction));
    }
    DecompResult d = decompose_sampled(mu);
    rep.total_variance = d.total * kPct2;
    rep.instruction_variance = d.instruction * kPct2;
    rep.choice_variance = d.choice * kPct2;
    rep.order_variance = d.order * kPct2;

    // Fixed default instruction estimators, fresh draws at I* = 0.
    auto block0 = sample_mu_block(0);
    std::vector<double> means, vars;
    for (const auto& orders : block0) {
        means.push_back(mean_of(orders));
        vars.push_back(sample_variance(orders));
    }
    rep.order_variance_default_instruction = mean_of(vars) * kPct2;
    rep.choice_variance_default_instruction =
        std::max(0.0, sample_variance(means) - mean_of(vars) / double(n_o)) * kPct2;

    rep.metadata = ordered_json{{"mode", "monte-carlo"},
                                {"k", cfg.k},
                                {"seed", cfg.seed},
                                {"n_instructions", cfg.n_instructions},
                                {"n_supports", cfg.n_supports},
                                {"n_orderings", n_o},
                                {"n_targets", int64_t(targets.size())},
                                {"units", "percentage-points-squared"}};
    return rep;
}

ordered_json sensitivity_to_json(const SensitivityReport& r) {
    return ordered_json{{"schema_version", 1},
                        {"task_id", r.task_id},
                        {"total_variance", r.total_variance},
                        {"instruction_variance", r.instruction_variance},
                        {"choice_variance", r.choice_variance},
                        {"order_variance", r.order_variance},
                        {"order_variance_default_instruction",
                         r.order_variance_default_instruction},
                        {"choice_variance_default_instruction",
                         r.choice_variance_default_instruction},
                        {"metadata", r.metadata}};
}

}  // namespace ict
