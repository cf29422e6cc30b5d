#include "ict/methods.hpp"

#include <algorithm>
#include <cmath>

#include "ict/checkpoint.hpp"
#include "ict/errors.hpp"

namespace ict {

using nlohmann::ordered_json;

std::string method_name(Method m) {
    switch (m) {
        case Method::ICT: return "ict";
        case Method::FOMAML: return "fomaml";
        case Method::INS_T: return "inst";
        case Method::INS_T_FT: return "inst-ft";
        case Method::RAW: return "raw";
    }
    throw ContractError("method_name: bad enum");
}

Method method_from_name(const std::string& s) {
    if (s == "ict") return Method::ICT;
    if (s == "fomaml") return Method::FOMAML;
    if (s == "inst") return Method::INS_T;
    if (s == "inst-ft") return Method::INS_T_FT;
    if (s == "raw") return Method::RAW;
    throw ConfigError("unknown method: " + s);
}

namespace {

const PromptLayout kLayout{};

std::vector<const TaskSpec*> resolve_tasks(const Suite& suite,
                                           const std::vector<std::string>& ids) {
    std::vector<const TaskSpec*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(&find_task(suite, id));
    return out;
}

ordered_json train_snapshot(const TrainConfig& cfg, Method tag) {
    return ordered_json{{"method", method_name(tag)},
                        {"k", cfg.k},
                        {"epochs", cfg.epochs},
                        {"lr", cfg.lr},
                        {"seed", cfg.seed},
                        {"optimizer", cfg.optimizer == Optimizer::Kind::Adam ? "adam" : "sgd"},
                        {"targets_per_task", cfg.targets_per_task}};
}

// Mean zero-shot-layout loss over a set of examples under the given
// parameters. Used for FOMAML inner/outer passes and fine-tuning.
ad::Var batch_zero_shot_loss(ad::Tape& tape, const LmConfig& config, const ParamStore& params,
                             const TaskSpec& task, const std::vector<size_t>& example_indices,
                             int64_t instruction_index) {
    if (example_indices.empty())
        throw ContractError("batch_zero_shot_loss: empty example set");
    ad::Var total = nullptr;
    for (size_t i : example_indices) {
        Episode ep;
        ep.task_id = task.task_id;
        ep.instruction_index = instruction_index;
        ep.target_index = i;
        auto prompt = serialize_episode(task, ep, kLayout, false, config.max_context - 1);
        ad::Var l = nll_of_answer(tape, config, params, prompt, {task.examples[i].answer});
        total = total ? ad::add(total, l) : l;
    }
    return ad::scale(total, 1.0 / double(example_indices.size()));
}

ParamStore adapt_params(const LmConfig& config, const ParamStore& start, const TaskSpec& task,
                        const std::vector<size_t>& support, int64_t instruction_index,
                        int64_t inner_steps, double inner_lr) {
    ParamStore adapted = start;
    for (int64_t s = 0; s < inner_steps; ++s) {
        ad::Tape tape;
        ad::Var loss = batch_zero_shot_loss(tape, config, adapted, task, support,
                                            instruction_index);
        if (!std::isfinite(loss->value.item()))
            throw DivergenceError("non-finite inner-loop loss on task " + task.task_id);
        tape.backward(loss);
        sgd_step(adapted, tape.collect_grads(adapted), inner_lr);
    }
    return adapted;
}

// Shared ICT / instruction-tuning loop; instruction tuning is literally
// the K=0 stream.
MethodRun train_in_context(const LanguageModel& base, const Suite& suite,
                           const SuiteSplit& split, const TrainConfig& cfg, Method tag) {
    if (split.train_tasks.empty()) throw ConfigError("training: no train tasks in split");
    if (cfg.k < 0) throw ConfigError("training: negative K");
    if (cfg.epochs < 0) throw ConfigError("training: negative epoch count");

    MethodRun run;
    run.method = tag;
    run.config = base.config;
    run.params = base.params;
    run.config_snapshot = train_snapshot(cfg, tag);

    auto tasks = resolve_tasks(suite, split.train_tasks);
    Optimizer opt(cfg.optimizer, cfg.lr, run.params);
    Rng root = Rng(cfg.seed).split("train");
    ParamStore last_good = run.params;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.split(uint64_t(epoch));
        auto order = tasks;
        erng.shuffle(order);
        double loss_sum = 0.0;
        int64_t steps = 0;
        for (const TaskSpec* task : order) {
            size_t pool = task->examples.size();
            std::vector<size_t> targets;
            if (cfg.targets_per_task <= 0 || size_t(cfg.targets_per_task) >= pool) {
                targets.resize(pool);
                for (size_t i = 0; i < pool; ++i) targets[i] = i;
                erng.shuffle(targets);
            } else {
                targets = erng.sample_without_replacement(pool, size_t(cfg.targets_per_task));
            }
            for (size_t tgt : targets) {
                Episode ep = sample_episode_for_target(*task, cfg.k, tgt, erng);
                auto prompt = serialize_episode(*task, ep, kLayout, false,
                                                base.config.max_context - 1);
                ad::Tape tape;
                ad::Var loss = nll_of_answer(tape, base.config, run.params, prompt,
                                             {task->examples[tgt].answer},
                                             /*training=*/true, &erng);
                double lv = loss->value.item();
                if (!std::isfinite(lv)) {
                    run.params = last_good;
                    run.diverged = true;
                    return run;
                }
                tape.backward(loss);
                try {
                    opt.step(run.params, tape.collect_grads(run.params));
                } catch (const DivergenceError&) {
                    run.params = last_good;
                    run.diverged = true;
                    return run;
                }
                loss_sum += lv;
                ++steps;
            }
        }
        run.epoch_losses.push_back(steps ? loss_sum / double(steps) : 0.0);
        last_good = run.params;
    }
    return run;
}

}  // namespace

MethodRun train_ict(const LanguageModel& base, const Suite& suite, const SuiteSplit& split,
                    const TrainConfig& cfg) {
    return train_in_context(base, suite, split, cfg, Method::ICT);
}

MethodRun train_instruction_tuning(const LanguageModel& base, const Suite& suite,
                                   const SuiteSplit& split, const TrainConfig& cfg) {
    TrainConfig zero = cfg;
    zero.k = 0;
    return train_in_context(base, suite, split, zero, Method::INS_T);
}

MetaBatch sample_meta_batch(const TaskSpec& task, int64_t k, Rng& rng) {
    size_t n = task.examples.size();
    if (k < 0 || size_t(k) >= n)
        throw ContractError("sample_meta_batch: pool of " + std::to_string(n) +
                            " cannot supply K=" + std::to_string(k) + " plus queries");
    MetaBatch mb;
    mb.instruction_index = int64_t(rng.index(task.instructions.size()));
    size_t q = size_t(std::min<int64_t>(std::max<int64_t>(2 * k, 1), int64_t(n) - k));
    auto picks = rng.sample_without_replacement(n, size_t(k) + q);
    mb.support.assign(picks.begin(), picks.begin() + k);
    mb.query.assign(picks.begin() + k, picks.end());
    return mb;
}

MethodRun train_fomaml(const LanguageModel& base, const Suite& suite, const SuiteSplit& split,
                       const TrainConfig& cfg, const AdaptConfig& adapt) {
    if (split.train_tasks.empty()) throw ConfigError("training: no train tasks in split");
    if (adapt.inner_steps < 0) throw ConfigError("train_fomaml: negative inner_steps");
    if (adapt.inner_lr != cfg.lr)
        throw ConfigError("train_fomaml: inner and outer learning rates must match");

    MethodRun run;
    run.method = Method::FOMAML;
    run.config = base.config;
    run.params = base.params;
    run.config_snapshot = train_snapshot(cfg, Method::FOMAML);
    run.config_snapshot["inner_steps"] = adapt.inner_steps;
    run.config_snapshot["inner_lr"] = adapt.inner_lr;

    auto tasks = resolve_tasks(suite, split.train_tasks);
    Optimizer opt(cfg.optimizer, cfg.lr, run.params);
    Rng root = Rng(cfg.seed).split("train");
    ParamStore last_good = run.params;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.split(uint64_t(epoch));
        auto order = tasks;
        erng.shuffle(order);
        double loss_sum = 0.0;
        int64_t steps = 0;
        for (const TaskSpec* task : order) {
            MetaBatch mb = sample_meta_batch(*task, cfg.k, erng);
            try {
                ParamStore adapted =
                    (adapt.inner_steps > 0 && !mb.support.empty())
                        ? adapt_params(base.config, run.params, *task, mb.support,
                                       mb.instruction_index, adapt.inner_steps, adapt.inner_lr)
                        : run.params;
                ad::Tape tape;
                ad::Var qloss = batch_zero_shot_loss(tape, base.config, adapted, *task,
                                                     mb.query, mb.instruction_index);
                double lv = qloss->value.item();
                if (!std::isfinite(lv)) throw DivergenceError("non-finite query loss");
                tape.backward(qloss);
                // First-order step: the query gradient at the adapted
                // parameters updates the meta-parameters directly.
                opt.step(run.params, tape.collect_grads(adapted));
                loss_sum += lv;
                ++steps;
            } catch (const DivergenceError&) {
                run.params = last_good;
                run.diverged = true;
                return run;
            }
        }
        run.epoch_losses.push_back(steps ? loss_sum / double(steps) : 0.0);
        last_good = run.params;
    }
    return run;
}

LanguageModel pretrain_lm(const LanguageModel& base, const Suite& suite,
                          const SuiteSplit& split, int64_t steps, double lr, uint64_t seed) {
    if (split.train_tasks.empty()) throw ConfigError("pretrain_lm: no train tasks in split");
    if (steps < 0) throw ConfigError("pretrain_lm: negative step count");

    LanguageModel model = base;
    auto tasks = resolve_tasks(suite, split.train_tasks);
    Optimizer opt(Optimizer::Kind::Adam, lr, model.params);
    Rng rng = Rng(seed).split("pretrain");
    ParamStore last_good = model.params;

    for (int64_t step = 0; step < steps; ++step) {
        const TaskSpec& task = *tasks[rng.index(tasks.size())];
        int64_t k_cap = std::min<int64_t>(5, int64_t(task.examples.size()) - 1);
        int64_t k = int64_t(rng.index(uint64_t(k_cap) + 1));
        Episode ep = sample_episode(task, k, rng);
        auto tokens = serialize_episode(task, ep, kLayout, /*include_answer=*/true,
                                        base.config.max_context);
        ad::Tape tape;
        ad::Var logits = forward_logits(tape, base.config, model.params, tokens);
        std::vector<std::pair<int64_t, int64_t>> row_labels;
        row_labels.reserve(tokens.size() - 1);
        for (size_t i = 0; i + 1 < tokens.size(); ++i)
            row_labels.emplace_back(int64_t(i), tokens[i + 1]);
        ad::Var loss = ad::scale(ad::cross_entropy_sum(logits, row_labels),
                                 1.0 / double(row_labels.size()));
        if (!std::isfinite(loss->value.item())) {
            model.params = last_good;
            throw DivergenceError("pretrain_lm: non-finite loss at step " +
                                  std::to_string(step));
        }
        tape.backward(loss);
        opt.step(model.params, tape.collect_grads(model.params));
        if (step % 50 == 49) last_good = model.params;
    }
    return model;
}

MethodRun raw_lm_baseline(const LanguageModel& base) {
    MethodRun run;
    run.method = Method::RAW;
    run.config = base.config;
    run.params = base.params;
    run.config_snapshot = ordered_json{{"method", "raw"}};
    return run;
}

ParamStore finetune_on_support(const MethodRun& run, const TaskSpec& task,
                               const std::vector<size_t>& support_indices,
                               int64_t instruction_index, const AdaptConfig& adapt) {
    if (run.method != Method::INS_T_FT && run.method != Method::FOMAML)
        throw ContractError("finetune_on_support: method " + method_name(run.method) +
                            " does not use gradient adaptation");
    if (adapt.inner_steps == 0) return run.params;  // identity, bitwise
    if (support_indices.empty())
        throw ContractError("finetune_on_support: empty support");
    return adapt_params(run.config, run.params, task, support_indices, instruction_index,
                        adapt.inner_steps, adapt.inner_lr);
}

void save_method_run(const std::filesystem::path& base, const MethodRun& run) {
    ordered_json meta;
    meta["method"] = method_name(run.method);
    meta["lm_config"] = run.config.to_json();
    meta["epoch_losses"] = run.epoch_losses;
    meta["diverged"] = run.diverged;
    meta["config_snapshot"] = run.config_snapshot;
    save_checkpoint(base, run.params, meta);
}

MethodRun load_method_run(const std::filesystem::path& base) {
    Checkpoint ck = load_checkpoint(base);
    MethodRun run;
    run.method = method_from_name(ck.meta.at("method").get<std::string>());
    run.config = LmConfig::from_json(ck.meta.at("lm_config"));
    run.params = std::move(ck.params);
    run.epoch_losses = ck.meta.value("epoch_losses", std::vector<double>{});
    run.diverged = ck.meta.value("diverged", false);
    run.config_snapshot = ck.meta.value("config_snapshot", ordered_json::object());
    return run;
}

}  // namespace ict
