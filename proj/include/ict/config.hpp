#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ict/eval.hpp"
#include "ict/lm.hpp"
#include "ict/methods.hpp"
#include "ict/task.hpp"

namespace ict {

// Minimal TOML reader covering the flat schema used by experiment files:
// [section] headers, key = value with strings, integers, floats, booleans
// and one-level arrays, and # comments. Keys are flattened to
// "section.key".
struct TomlValue {
    std::variant<std::string, int64_t, double, bool, std::vector<TomlValue>> v;

    const std::string& as_string() const;
    int64_t as_int() const;
    double as_float() const;  // accepts integer literals
    bool as_bool() const;
    const std::vector<TomlValue>& as_array() const;
};

using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(const std::string& text);
TomlTable parse_toml_file(const std::filesystem::path& path);

struct ExperimentConfig {
    std::string name = "experiment";
    uint64_t seed = 1;
    std::string out_dir = "runs/out";
    int64_t n_folds = 8;
    int64_t fold = 0;

    std::string suite_family = "binary";  // "binary" | "relation"
    BinarySuiteConfig binary;
    RelationSuiteConfig relation;
    double filter_threshold = 0.025;

    LmConfig model;
    Method method = Method::ICT;
    std::vector<int64_t> shots = {5};
    TrainConfig train;
    AdaptConfig adapt;
    // Generic next-token pretraining applied to the base model before any
    // method-specific training (and as the raw-prompting baseline).
    int64_t pretrain_steps = 0;
    double pretrain_lr = 1e-3;
    EvalConfig eval;
    SenseConfig sense;

    // Grid-search value lists; empty means the scalar above is the only
    // point on that axis.
    std::vector<double> grid_lr;
    std::vector<int64_t> grid_epochs;
    std::vector<int64_t> grid_inner_steps;

    // Unknown keys are a config error; typos must not silently fall back
    // to defaults.
    static ExperimentConfig from_toml(const TomlTable& t);
    static ExperimentConfig from_file(const std::filesystem::path& path);

    nlohmann::ordered_json to_json() const;
    void validate() const;
};

}  // namespace ict
