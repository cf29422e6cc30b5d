#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ict/config.hpp"
#include "ict/errors.hpp"

using namespace ict;

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
    std::string cmd = std::string(ICTLAB_BIN) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const char* name) {
    fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

const char* kDemoToml = R"(# tiny end-to-end experiment
[experiment]
name = "demo"
seed = 41
n_folds = 4
fold = 0

[suite]
family = "binary"
n_tasks = 8
n_examples = 12
k_max = 5

[model]
d_model = 8
n_heads = 2
n_layers = 1
d_ff = 16
max_context = 96
dropout = 0.0

[method]
name = "ict"
shots = [1]
epochs = 1
lr = 1e-3
optimizer = "adam"
targets_per_task = 2

[eval]
m_samplings = 1
max_targets = 4

[sense]
mode = "monte-carlo"
k = 1
n_instructions = 2
n_supports = 3
n_orderings = 2
n_targets = 4
)";

fs::path write_demo_config(const fs::path& dir) {
    fs::path cfg = dir / "exp.toml";
    std::string text = kDemoToml;
    auto pos = text.find("name = \"demo\"");
    text.insert(pos, "out_dir = \"" + (dir / "out").string() + "\"\n");
    std::ofstream f(cfg, std::ios::binary);
    f << text;
    return cfg;
}

}  // namespace

TEST_CASE("toml parser covers the experiment schema") {
    auto t = parse_toml(
        "top = 1\n"
        "[a]\n"
        "s = \"hi \\\"there\\\"\"  # comment\n"
        "i = -42\n"
        "f = 2.5e-3\n"
        "b = true\n"
        "arr = [1, 2, 3]\n"
        "farr = [0.5, 1]\n"
        "[b.c]\n"
        "x = 7\n");
    CHECK(t.at("top").as_int() == 1);
    CHECK(t.at("a.s").as_string() == "hi \"there\"");
    CHECK(t.at("a.i").as_int() == -42);
    CHECK(t.at("a.f").as_float() == doctest::Approx(2.5e-3));
    CHECK(t.at("a.b").as_bool());
    CHECK(t.at("a.arr").as_array().size() == 3);
    CHECK(t.at("a.arr").as_array()[2].as_int() == 3);
    CHECK(t.at("a.farr").as_array()[1].as_float() == 1.0);
    CHECK(t.at("b.c.x").as_int() == 7);

    CHECK_THROWS_AS(parse_toml("key"), ConfigError);
    CHECK_THROWS_AS(parse_toml("[unclosed\nk = 1"), ConfigError);
    CHECK_THROWS_AS(parse_toml("k = 1\nk = 2"), ConfigError);
    CHECK_THROWS_AS(parse_toml("k = zzz"), ConfigError);
    CHECK_THROWS_AS(parse_toml("k = \"unterminated"), ConfigError);
}

TEST_CASE("experiment config rejects unknown keys and bad values") {
    CHECK_THROWS_AS(ExperimentConfig::from_toml(parse_toml("[method]\nnmae = \"ict\"")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_toml(parse_toml("[method]\nname = \"sgd\"")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_toml(parse_toml("[suite]\nfamily = \"x\"")),
                    ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::from_toml(parse_toml("[experiment]\nn_folds = 8\nfold = 9")),
        ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_toml(parse_toml("[method]\nshots = []")),
                    ConfigError);

    auto cfg = ExperimentConfig::from_toml(parse_toml(
        "[experiment]\nseed = 3\n[method]\nname = \"fomaml\"\nshots = [1, 2, 5]\n"
        "optimizer = \"sgd\"\n[grid]\nlr = [0.1, 0.01]\n"));
    CHECK(cfg.seed == 3);
    CHECK(cfg.method == Method::FOMAML);
    CHECK(cfg.shots == std::vector<int64_t>{1, 2, 5});
    CHECK(cfg.train.optimizer == Optimizer::Kind::Sgd);
    CHECK(cfg.grid_lr == std::vector<double>{0.1, 0.01});
    CHECK(cfg.to_json()["method"]["name"] == "fomaml");
}

TEST_CASE("cli: bad usage and bad configs exit with code 2") {
    CHECK(run_cli("definitely-not-a-command") == 2);
    CHECK(run_cli("gen --config /nonexistent/nope.toml") == 2);

    auto dir = fresh_dir("ict_cli_badcfg");
    std::ofstream f(dir / "bad.toml");
    f << "[suite]\nfamily = \"martian\"\n";
    f.close();
    CHECK(run_cli("gen --config " + (dir / "bad.toml").string()) == 2);
    // eval before train is a config error as well
    auto cfgdir = fresh_dir("ict_cli_nockpt");
    fs::path cfg = write_demo_config(cfgdir);
    CHECK(run_cli("eval --config " + cfg.string()) == 2);
}

TEST_CASE("cli: gen is deterministic and records the filter outcome") {
    auto dir = fresh_dir("ict_cli_gen");
    fs::path cfg = write_demo_config(dir);
    REQUIRE(run_cli("gen --config " + cfg.string()) == 0);
    std::string tasks1 = slurp(dir / "out" / "suite" / "tasks.jsonl");
    std::string manifest1 = slurp(dir / "out" / "suite" / "manifest.json");
    REQUIRE(run_cli("gen --config " + cfg.string()) == 0);
    CHECK(slurp(dir / "out" / "suite" / "tasks.jsonl") == tasks1);
    CHECK(slurp(dir / "out" / "suite" / "manifest.json") == manifest1);

    auto manifest = nlohmann::ordered_json::parse(manifest1);
    CHECK(manifest["filter"]["threshold"].get<double>() == 0.025);
    CHECK(manifest["filter"]["kept"].get<int64_t>() == 8);
    CHECK(manifest.contains("suite_hash"));

    // regenerated suite hash matches the manifest
    Suite loaded = load_suite(dir / "out" / "suite");
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)suite_content_hash(loaded));
    CHECK(manifest["suite_hash"].get<std::string>() == hex);
}

TEST_CASE("cli: train/eval/sense/report pipeline with byte-identical retrain") {
    auto dir = fresh_dir("ict_cli_pipe");
    fs::path cfg = write_demo_config(dir);
    REQUIRE(run_cli("gen --config " + cfg.string()) == 0);
    REQUIRE(run_cli("train --config " + cfg.string()) == 0);
    fs::path run_dir = dir / "out" / "fold0" / "ict_k1";
    std::string ck_json = slurp(run_dir / "model.json");
    std::string ck_bin = slurp(run_dir / "model.bin");

    REQUIRE(run_cli("train --config " + cfg.string()) == 0);
    CHECK(slurp(run_dir / "model.json") == ck_json);
    CHECK(slurp(run_dir / "model.bin") == ck_bin);

    REQUIRE(run_cli("eval --config " + cfg.string()) == 0);
    std::string csv = slurp(run_dir / "eval_test.csv");
    REQUIRE(run_cli("eval --config " + cfg.string()) == 0);
    CHECK(slurp(run_dir / "eval_test.csv") == csv);
    CHECK(fs::exists(run_dir / "eval_val.json"));

    REQUIRE(run_cli("train --config " + cfg.string() + " --method raw") == 0);
    REQUIRE(run_cli("eval --config " + cfg.string() + " --method raw") == 0);
    REQUIRE(run_cli("report --config " + cfg.string()) == 0);
    auto report = nlohmann::ordered_json::parse(slurp(dir / "out" / "report.json"));
    CHECK(report["per_fold"].size() == 1);
    CHECK(report["aggregated"].size() == 2);

    REQUIRE(run_cli("sense --config " + cfg.string()) == 0);
    fs::path sense_dir = run_dir / "sense";
    auto summary = nlohmann::ordered_json::parse(slurp(sense_dir / "summary.json"));
    CHECK(summary.size() == 2);  // fold 0 of 4 over 8 tasks tests on 2
}

TEST_CASE("cli: grid winner equals the brute-force max over points.csv") {
    auto dir = fresh_dir("ict_cli_grid");
    fs::path cfg = write_demo_config(dir);
    {
        std::ofstream f(cfg, std::ios::binary | std::ios::app);
        f << "\n[grid]\nlr = [1e-3, 3e-3]\nepochs = [1, 2]\n";
    }
    REQUIRE(run_cli("gen --config " + cfg.string()) == 0);
    REQUIRE(run_cli("grid --config " + cfg.string()) == 0);

    fs::path grid_dir = dir / "out" / "fold0" / "grid";
    auto gj = nlohmann::ordered_json::parse(slurp(grid_dir / "grid.json"));
    CHECK(gj["n_points"].get<int64_t>() == 4);
    CHECK(gj["test_label_reads_before_selection"].get<int64_t>() == 0);

    // recompute the winner from the emitted validation table
    std::istringstream pts(slurp(grid_dir / "points.csv"));
    std::string line;
    std::getline(pts, line);  // header
    int64_t best_point = -1;
    double best_val = -1.0;
    while (std::getline(pts, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::getline(row, field, ',');
        int64_t point = std::stoll(field);
        for (int i = 0; i < 5; ++i) std::getline(row, field, ',');
        double val = std::stod(field);
        if (val > best_val) {
            best_val = val;
            best_point = point;
        }
    }
    CHECK(gj["winner_point"].get<int64_t>() == best_point);
    CHECK(gj["val_p_at_1"].get<double>() == best_val);
}

TEST_CASE("cli: single-point grid selects that point") {
    auto dir = fresh_dir("ict_cli_grid1");
    fs::path cfg = write_demo_config(dir);
    REQUIRE(run_cli("gen --config " + cfg.string()) == 0);
    REQUIRE(run_cli("grid --config " + cfg.string()) == 0);
    auto gj = nlohmann::ordered_json::parse(
        slurp(dir / "out" / "fold0" / "grid" / "grid.json"));
    CHECK(gj["n_points"].get<int64_t>() == 1);
    CHECK(gj["winner_point"].get<int64_t>() == 0);
}
