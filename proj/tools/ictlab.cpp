// ictlab: experiment driver for the in-context tuning laboratory.
//
// Subcommands: gen, train, eval, sense, grid, report. Every run is fully
// determined by the config file plus the flags echoed into config.json.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "ict/config.hpp"
#include "ict/errors.hpp"
#include "ict/eval.hpp"
#include "ict/methods.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<int64_t> fold;
    std::optional<std::string> out;
    std::optional<std::string> method;
    std::optional<int64_t> shots;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "Experiment config (TOML)")->required();
    cmd->add_option("--seed", f.seed, "Override experiment.seed");
    cmd->add_option("--fold", f.fold, "Override experiment.fold");
    cmd->add_option("--out", f.out, "Override experiment.out_dir");
    cmd->add_option("--method", f.method, "Override method.name (ict|fomaml|inst|inst-ft|raw)");
    cmd->add_option("--shots", f.shots, "Override method.shots with a single K");
}

ict::ExperimentConfig load_config(const CommonFlags& f) {
    auto cfg = ict::ExperimentConfig::from_file(f.config_path);
    if (f.seed) cfg.seed = *f.seed;
    if (f.fold) cfg.fold = *f.fold;
    if (f.out) cfg.out_dir = *f.out;
    if (f.method) cfg.method = ict::method_from_name(*f.method);
    if (f.shots) cfg.shots = {*f.shots};
    cfg.validate();
    return cfg;
}

void write_json(const fs::path& path, const ordered_json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ict::ContractError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

ict::Suite build_suite(const ict::ExperimentConfig& cfg) {
    ict::Suite suite;
    if (cfg.suite_family == "binary") {
        auto sc = cfg.binary;
        sc.seed = ict::Rng(cfg.seed).split("suite").seed();
        suite = ict::gen_binary_suite(sc);
        // A two-answer space can never satisfy a 2.5% cap; the filter
        // targets open answer spaces. Binary suites are balanced by
        // construction, so record it as not applicable.
        suite.manifest["filter"] =
            ordered_json{{"threshold", cfg.filter_threshold},
                         {"applied", false},
                         {"reason", "answer space smaller than 1/threshold; labels balanced "
                                    "by construction"},
                         {"kept", int64_t(suite.tasks.size())},
                         {"dropped", 0}};
    } else {
        auto sc = cfg.relation;
        sc.seed = ict::Rng(cfg.seed).split("suite").seed();
        suite = ict::gen_relation_suite(sc);
        ict::apply_majority_label_filter(suite, cfg.filter_threshold);
    }
    return suite;
}

fs::path suite_dir(const ict::ExperimentConfig& cfg) {
    return fs::path(cfg.out_dir) / "suite";
}

ict::Suite load_suite_or_die(const ict::ExperimentConfig& cfg) {
    fs::path dir = suite_dir(cfg);
    if (!fs::exists(dir / "manifest.json"))
        throw ict::ConfigError("no suite at " + dir.string() + "; run `ictlab gen` first");
    return ict::load_suite(dir);
}

ict::SuiteSplit fold_split(const ict::ExperimentConfig& cfg, const ict::Suite& suite) {
    std::vector<std::string> ids;
    for (const auto& t : suite.tasks) ids.push_back(t.task_id);
    auto folds = ict::make_folds(ids, cfg.n_folds, ict::Rng(cfg.seed).split("folds").seed());
    return folds[size_t(cfg.fold)];
}

ict::LmConfig model_config(const ict::ExperimentConfig& cfg, const ict::Suite& suite) {
    ict::LmConfig mc = cfg.model;
    mc.vocab_size = suite.vocab_size;
    mc.validate();
    return mc;
}

bool uses_shots_in_training(ict::Method m) {
    return m == ict::Method::ICT || m == ict::Method::FOMAML;
}

std::string run_dirname(ict::Method m, int64_t k) {
    return ict::method_name(m) + "_k" + std::to_string(k);
}

ict::MethodRun train_one(const ict::ExperimentConfig& cfg, const ict::Suite& suite,
                         const ict::SuiteSplit& split, int64_t k) {
    ict::LanguageModel base = ict::LanguageModel::init(model_config(cfg, suite), cfg.seed);
    if (cfg.pretrain_steps > 0)
        base = ict::pretrain_lm(base, suite, split, cfg.pretrain_steps, cfg.pretrain_lr,
                                cfg.seed);
    ict::TrainConfig tc = cfg.train;
    tc.k = k;
    tc.seed = cfg.seed;
    switch (cfg.method) {
        case ict::Method::ICT:
            return ict::train_ict(base, suite, split, tc);
        case ict::Method::INS_T:
            return ict::train_instruction_tuning(base, suite, split, tc);
        case ict::Method::INS_T_FT: {
            auto run = ict::train_instruction_tuning(base, suite, split, tc);
            run.method = ict::Method::INS_T_FT;
            run.config_snapshot["method"] = "inst-ft";
            run.config_snapshot["inner_steps"] = cfg.adapt.inner_steps;
            run.config_snapshot["inner_lr"] = cfg.adapt.inner_lr;
            return run;
        }
        case ict::Method::FOMAML: {
            ict::AdaptConfig ac = cfg.adapt;
            ac.inner_lr = tc.lr;  // shared inner/outer rate
            return ict::train_fomaml(base, suite, split, tc, ac);
        }
        case ict::Method::RAW:
            return ict::raw_lm_baseline(base);
    }
    throw ict::ContractError("train_one: bad method");
}

int cmd_gen(const CommonFlags& f) {
    auto cfg = load_config(f);
    ict::Suite suite = build_suite(cfg);
    ict::save_suite(suite_dir(cfg), suite);
    write_json(fs::path(cfg.out_dir) / "config.json", cfg.to_json());
    std::cout << "gen: " << suite.tasks.size() << " tasks -> " << suite_dir(cfg).string()
              << "\n";
    return 0;
}

int cmd_train(const CommonFlags& f) {
    auto cfg = load_config(f);
    ict::Suite suite = load_suite_or_die(cfg);
    auto split = fold_split(cfg, suite);
    fs::path fold_dir = fs::path(cfg.out_dir) / ("fold" + std::to_string(cfg.fold));

    std::vector<int64_t> ks =
        uses_shots_in_training(cfg.method) ? cfg.shots : std::vector<int64_t>{0};
    for (int64_t k : ks) {
        ict::MethodRun run = train_one(cfg, suite, split, k);
        fs::path dir = fold_dir / run_dirname(cfg.method, k);
        fs::create_directories(dir);
        ict::save_method_run(dir / "model", run);
        ordered_json log{{"method", ict::method_name(cfg.method)},
                         {"k", k},
                         {"epoch_losses", run.epoch_losses},
                         {"diverged", run.diverged}};
        write_json(dir / "train_log.json", log);
        std::cout << "train: " << run_dirname(cfg.method, k)
                  << (run.diverged ? " DIVERGED" : "") << "\n";
        if (run.diverged)
            throw ict::DivergenceError("training diverged for " + run_dirname(cfg.method, k));
    }
    return 0;
}

void eval_partition(const ict::ExperimentConfig& cfg, const ict::Suite& suite,
                    const ict::SuiteSplit& split, const ict::MethodRun& run, int64_t k,
                    ict::Partition part, const fs::path& dir) {
    ict::EvalConfig ec = cfg.eval;
    ec.k = k;
    ec.seed = cfg.seed;
    const ict::AdaptConfig* adapt =
        (run.method == ict::Method::FOMAML || run.method == ict::Method::INS_T_FT)
            ? &cfg.adapt
            : nullptr;
    auto result = ict::evaluate_method(run, suite, split, part, ec, adapt);
    std::string stem = "eval_" + ict::partition_name(part);
    ict::write_records_csv(dir / (stem + ".csv"), result.records);
    write_json(dir / (stem + ".json"), ict::eval_summary_json(result));
    std::cout << "eval: " << dir.filename().string() << " " << ict::partition_name(part)
              << " p@1=" << result.macro_p_at_1;
    if (result.macro_auc) std::cout << " auc=" << *result.macro_auc;
    std::cout << "\n";
}

int cmd_eval(const CommonFlags& f) {
    auto cfg = load_config(f);
    ict::Suite suite = load_suite_or_die(cfg);
    auto split = fold_split(cfg, suite);
    fs::path fold_dir = fs::path(cfg.out_dir) / ("fold" + std::to_string(cfg.fold));

    std::vector<int64_t> train_ks =
        uses_shots_in_training(cfg.method) ? cfg.shots : std::vector<int64_t>{0};
    for (size_t i = 0; i < train_ks.size(); ++i) {
        int64_t train_k = train_ks[i];
        fs::path dir = fold_dir / run_dirname(cfg.method, train_k);
        if (!fs::exists(dir / "model.json"))
            throw ict::ConfigError("no checkpoint at " + dir.string() +
                                   "; run `ictlab train` first");
        ict::MethodRun run = ict::load_method_run(dir / "model");
        // In-context methods are scored at their training K; gradient and
        // zero-shot methods take the K list from the config (support size
        // for fine-tuning, ignored by inst/raw prompts which are K=0).
        int64_t eval_k = uses_shots_in_training(cfg.method) ? train_k : cfg.shots[i % cfg.shots.size()];
        if (cfg.method == ict::Method::RAW) eval_k = cfg.shots[0];
        eval_partition(cfg, suite, split, run, eval_k, ict::Partition::Val, dir);
        eval_partition(cfg, suite, split, run, eval_k, ict::Partition::Test, dir);
    }
    return 0;
}

int cmd_sense(const CommonFlags& f) {
    auto cfg = load_config(f);
    ict::Suite suite = load_suite_or_die(cfg);
    auto split = fold_split(cfg, suite);
    fs::path fold_dir = fs::path(cfg.out_dir) / ("fold" + std::to_string(cfg.fold));

    int64_t k = cfg.sense.k;
    std::string dirname = run_dirname(cfg.method, uses_shots_in_training(cfg.method) ? k : 0);
    fs::path dir = fold_dir / dirname;
    if (!fs::exists(dir / "model.json"))
        throw ict::ConfigError("no checkpoint at " + dir.string() + "; run `ictlab train` first");
    ict::MethodRun run = ict::load_method_run(dir / "model");

    ict::SenseConfig sc = cfg.sense;
    sc.seed = cfg.seed;
    ordered_json summary = ordered_json::array();
    for (const auto& task_id : split.test_tasks) {
        auto rep = ict::variance_decomposition(run, ict::find_task(suite, task_id), sc);
        write_json(dir / "sense" / (task_id + ".json"), ict::sensitivity_to_json(rep));
        summary.push_back(ict::sensitivity_to_json(rep));
        std::cout << "sense: " << task_id << " total=" << rep.total_variance
                  << " instr=" << rep.instruction_variance << " choice=" << rep.choice_variance
                  << " order=" << rep.order_variance << " (pp^2)\n";
    }
    write_json(dir / "sense" / "summary.json", summary);
    return 0;
}

struct GridPoint {
    double lr;
    int64_t epochs;
    int64_t inner_steps;
};

int cmd_grid(const CommonFlags& f) {
    auto cfg = load_config(f);
    ict::Suite suite = load_suite_or_die(cfg);
    auto split = fold_split(cfg, suite);
    fs::path grid_dir =
        fs::path(cfg.out_dir) / ("fold" + std::to_string(cfg.fold)) / "grid";
    fs::create_directories(grid_dir);

    std::vector<double> lrs = cfg.grid_lr.empty() ? std::vector<double>{cfg.train.lr} : cfg.grid_lr;
    std::vector<int64_t> epochs =
        cfg.grid_epochs.empty() ? std::vector<int64_t>{cfg.train.epochs} : cfg.grid_epochs;
    std::vector<int64_t> inner = cfg.grid_inner_steps.empty()
                                     ? std::vector<int64_t>{cfg.adapt.inner_steps}
                                     : cfg.grid_inner_steps;
    if (lrs.empty() || epochs.empty() || inner.empty())
        throw ict::ConfigError("grid: empty axis");

    ict::reset_test_label_access_count();
    std::ofstream csv(grid_dir / "points.csv", std::ios::binary | std::ios::trunc);
    csv << "point,lr,epochs,inner_steps,k,val_p_at_1\n";

    int64_t best_point = -1;
    double best_val = -1.0;
    std::optional<GridPoint> best;
    int64_t point = 0;
    int64_t k = cfg.shots[0];
    for (double lr : lrs) {
        for (int64_t ep : epochs) {
            for (int64_t is : inner) {
                ict::ExperimentConfig pc = cfg;
                pc.train.lr = lr;
                pc.train.epochs = ep;
                pc.adapt.inner_steps = is;
                pc.adapt.inner_lr = lr;
                ict::MethodRun run = train_one(pc, suite, split, k);
                ict::EvalConfig ec = pc.eval;
                ec.k = k;
                ec.seed = pc.seed;
                const ict::AdaptConfig* adapt =
                    (run.method == ict::Method::FOMAML || run.method == ict::Method::INS_T_FT)
                        ? &pc.adapt
                        : nullptr;
                double val = ict::precision_at_1(run, suite, split, ict::Partition::Val, ec, adapt);
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.17g", val);
                csv << point << ',' << lr << ',' << ep << ',' << is << ',' << k << ',' << buf
                    << '\n';
                if (val > best_val) {
                    best_val = val;
                    best_point = point;
                    best = GridPoint{lr, ep, is};
                    ict::save_method_run(grid_dir / "winner_model", run);
                }
                ++point;
            }
        }
    }
    csv.close();

    int64_t test_reads_before_selection = ict::test_label_access_count();
    if (test_reads_before_selection != 0)
        throw ict::ContractError("grid: test labels were read during the search");

    ict::MethodRun winner = ict::load_method_run(grid_dir / "winner_model");
    ict::ExperimentConfig wc = cfg;
    wc.train.lr = best->lr;
    wc.train.epochs = best->epochs;
    wc.adapt.inner_steps = best->inner_steps;
    wc.adapt.inner_lr = best->lr;
    ict::EvalConfig ec = wc.eval;
    ec.k = k;
    ec.seed = wc.seed;
    const ict::AdaptConfig* adapt =
        (winner.method == ict::Method::FOMAML || winner.method == ict::Method::INS_T_FT)
            ? &wc.adapt
            : nullptr;
    auto test = ict::evaluate_method(winner, suite, split, ict::Partition::Test, ec, adapt);

    ordered_json out{{"schema_version", 1},
                     {"method", ict::method_name(cfg.method)},
                     {"fold", cfg.fold},
                     {"k", k},
                     {"n_points", point},
                     {"winner_point", best_point},
                     {"winner",
                      ordered_json{{"lr", best->lr},
                                   {"epochs", best->epochs},
                                   {"inner_steps", best->inner_steps}}},
                     {"val_p_at_1", best_val},
                     {"test_p_at_1", test.macro_p_at_1},
                     {"test_label_reads_before_selection", test_reads_before_selection}};
    if (test.macro_auc) out["test_auc"] = *test.macro_auc;
    write_json(grid_dir / "grid.json", out);
    std::cout << "grid: " << point << " points, winner " << best_point << " (val p@1 "
              << best_val << ", test p@1 " << test.macro_p_at_1 << ")\n";
    return 0;
}

int cmd_report(const CommonFlags& f) {
    auto cfg = load_config(f);
    fs::path root(cfg.out_dir);
    ordered_json folds = ordered_json::array();
    std::map<std::string, std::vector<double>> test_by_run, val_by_run;

    for (int64_t fold = 0; fold < cfg.n_folds; ++fold) {
        fs::path fold_dir = root / ("fold" + std::to_string(fold));
        if (!fs::exists(fold_dir)) continue;
        ordered_json fold_entry{{"fold", fold}, {"runs", ordered_json::array()}};
        for (const auto& entry : fs::directory_iterator(fold_dir)) {
            if (!entry.is_directory()) continue;
            fs::path val_path = entry.path() / "eval_val.json";
            fs::path test_path = entry.path() / "eval_test.json";
            if (!fs::exists(test_path)) continue;
            ordered_json run{{"run", entry.path().filename().string()}};
            std::ifstream tf(test_path);
            ordered_json tj = ordered_json::parse(tf);
            run["test_p_at_1"] = tj["macro_p_at_1"];
            run["test_auc"] = tj["macro_auc"];
            test_by_run[entry.path().filename().string()].push_back(
                tj["macro_p_at_1"].get<double>());
            if (fs::exists(val_path)) {
                std::ifstream vf(val_path);
                ordered_json vj = ordered_json::parse(vf);
                run["val_p_at_1"] = vj["macro_p_at_1"];
                val_by_run[entry.path().filename().string()].push_back(
                    vj["macro_p_at_1"].get<double>());
            }
            fold_entry["runs"].push_back(std::move(run));
        }
        if (!fold_entry["runs"].empty()) folds.push_back(std::move(fold_entry));
    }
    if (folds.empty()) throw ict::ConfigError("report: no eval results under " + root.string());

    ordered_json agg = ordered_json::array();
    for (const auto& [name, vals] : test_by_run) {
        double m = 0.0;
        for (double v : vals) m += v;
        m /= double(vals.size());
        agg.push_back(ordered_json{
            {"run", name}, {"n_folds", vals.size()}, {"mean_test_p_at_1", m}});
    }
    ordered_json report{{"schema_version", 1},
                        {"experiment", cfg.name},
                        {"per_fold", folds},
                        {"aggregated", agg}};
    write_json(root / "report.json", report);

    std::ofstream md(root / "report.md", std::ios::binary | std::ios::trunc);
    md << "# " << cfg.name << "\n\n## Aggregated over folds\n\n"
       << "| run | folds | mean test P@1 |\n|---|---|---|\n";
    for (const auto& row : agg)
        md << "| " << row["run"].get<std::string>() << " | " << row["n_folds"] << " | "
           << row["mean_test_p_at_1"] << " |\n";
    md << "\n## Per fold\n\n| fold | run | val P@1 | test P@1 |\n|---|---|---|---|\n";
    for (const auto& fe : folds)
        for (const auto& run : fe["runs"])
            md << "| " << fe["fold"] << " | " << run["run"].get<std::string>() << " | "
               << (run.contains("val_p_at_1") ? run["val_p_at_1"].dump() : "-") << " | "
               << run["test_p_at_1"] << " |\n";
    std::cout << "report: " << (root / "report.json").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"in-context tuning laboratory"};
    app.require_subcommand(1);

    std::map<std::string, CommonFlags> flags;
    std::map<std::string, int (*)(const CommonFlags&)> handlers{
        {"gen", cmd_gen},     {"train", cmd_train}, {"eval", cmd_eval},
        {"sense", cmd_sense}, {"grid", cmd_grid},   {"report", cmd_report}};
    std::map<std::string, const char*> help{
        {"gen", "Generate and persist a task suite"},
        {"train", "Train the configured method on the fold's train tasks"},
        {"eval", "Evaluate a trained checkpoint on val and test tasks"},
        {"sense", "Variance decomposition on the fold's test tasks"},
        {"grid", "Grid search; winner by validation P@1, test metrics for the winner only"},
        {"report", "Aggregate per-fold eval results"}};
    for (auto& [name, fn] : handlers) add_common(app.add_subcommand(name, help[name]), flags[name]);

    try {
        app.parse(argc, argv);
        for (auto& [name, fn] : handlers)
            if (app.get_subcommand(name)->parsed()) return fn(flags[name]);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ict::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ict::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
