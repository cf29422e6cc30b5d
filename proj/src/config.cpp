#include "ict/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "ict/errors.hpp"

namespace ict {

using nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Cut a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_str) {
            if (c == '\\') ++i;
            else if (c == '"') in_str = false;
        } else if (c == '"') {
            in_str = true;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

TomlValue parse_scalar(const std::string& raw, int64_t line_no) {
    std::string s = trim(raw);
    if (s.empty()) throw ConfigError("toml line " + std::to_string(line_no) + ": empty value");
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"')
            throw ConfigError("toml line " + std::to_string(line_no) + ": unterminated string");
        std::string out;
        for (size_t i = 1; i + 1 < s.size(); ++i) {
            char c = s[i];
            if (c == '\\' && i + 2 < s.size()) {
                char n = s[++i];
                if (n == 'n') out += '\n';
                else if (n == 't') out += '\t';
                else if (n == '"') out += '"';
                else if (n == '\\') out += '\\';
                else throw ConfigError("toml line " + std::to_string(line_no) +
                                       ": unsupported escape \\" + std::string(1, n));
            } else {
                out += c;
            }
        }
        return TomlValue{out};
    }
    if (s == "true") return TomlValue{true};
    if (s == "false") return TomlValue{false};
    bool has_float_marker = s.find_first_of(".eE") != std::string::npos &&
                            s.find("0x") == std::string::npos;
    try {
        size_t pos = 0;
        if (has_float_marker) {
            double d = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return TomlValue{d};
        }
        int64_t i = std::stoll(s, &pos, 0);
        if (pos != s.size()) throw std::invalid_argument(s);
        return TomlValue{i};
    } catch (const std::exception&) {
        throw ConfigError("toml line " + std::to_string(line_no) + ": cannot parse value '" +
                          s + "'");
    }
}

TomlValue parse_value(const std::string& raw, int64_t line_no) {
    std::string s = trim(raw);
    if (!s.empty() && s.front() == '[') {
        if (s.back() != ']')
            throw ConfigError("toml line " + std::to_string(line_no) +
                              ": arrays must close on the same line");
        std::vector<TomlValue> items;
        std::string body = s.substr(1, s.size() - 2);
        std::string cur;
        bool in_str = false;
        for (size_t i = 0; i < body.size(); ++i) {
            char c = body[i];
            if (in_str) {
                cur += c;
                if (c == '\\' && i + 1 < body.size()) cur += body[++i];
                else if (c == '"') in_str = false;
            } else if (c == '"') {
                cur += c;
                in_str = true;
            } else if (c == ',') {
                if (!trim(cur).empty()) items.push_back(parse_scalar(cur, line_no));
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!trim(cur).empty()) items.push_back(parse_scalar(cur, line_no));
        return TomlValue{items};
    }
    return parse_scalar(s, line_no);
}

}  // namespace

const std::string& TomlValue::as_string() const {
    if (auto* p = std::get_if<std::string>(&v)) return *p;
    throw ConfigError("toml: expected string value");
}

int64_t TomlValue::as_int() const {
    if (auto* p = std::get_if<int64_t>(&v)) return *p;
    throw ConfigError("toml: expected integer value");
}

double TomlValue::as_float() const {
    if (auto* p = std::get_if<double>(&v)) return *p;
    if (auto* p = std::get_if<int64_t>(&v)) return double(*p);
    throw ConfigError("toml: expected numeric value");
}

bool TomlValue::as_bool() const {
    if (auto* p = std::get_if<bool>(&v)) return *p;
    throw ConfigError("toml: expected boolean value");
}

const std::vector<TomlValue>& TomlValue::as_array() const {
    if (auto* p = std::get_if<std::vector<TomlValue>>(&v)) return *p;
    throw ConfigError("toml: expected array value");
}

TomlTable parse_toml(const std::string& text) {
    TomlTable table;
    std::istringstream in(text);
    std::string line, section;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = trim(strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError("toml line " + std::to_string(line_no) + ": bad section header");
            section = trim(s.substr(1, s.size() - 2));
            if (section.empty())
                throw ConfigError("toml line " + std::to_string(line_no) + ": empty section name");
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("toml line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        if (key.empty())
            throw ConfigError("toml line " + std::to_string(line_no) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        if (table.count(full))
            throw ConfigError("toml line " + std::to_string(line_no) + ": duplicate key " + full);
        table.emplace(full, parse_value(s.substr(eq + 1), line_no));
    }
    return table;
}

TomlTable parse_toml_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_toml(ss.str());
}

namespace {

std::vector<int64_t> int_list(const TomlValue& v) {
    std::vector<int64_t> out;
    for (const auto& e : v.as_array()) out.push_back(e.as_int());
    return out;
}

std::vector<double> float_list(const TomlValue& v) {
    std::vector<double> out;
    for (const auto& e : v.as_array()) out.push_back(e.as_float());
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_toml(const TomlTable& t) {
    ExperimentConfig c;
    for (const auto& [key, val] : t) {
        if (key == "experiment.name") c.name = val.as_string();
        else if (key == "experiment.seed") c.seed = uint64_t(val.as_int());
        else if (key == "experiment.out_dir") c.out_dir = val.as_string();
        else if (key == "experiment.n_folds") c.n_folds = val.as_int();
        else if (key == "experiment.fold") c.fold = val.as_int();
        else if (key == "suite.family") c.suite_family = val.as_string();
        else if (key == "suite.n_tasks") {
            c.binary.n_tasks = val.as_int();
            c.relation.n_tasks = val.as_int();
        } else if (key == "suite.n_examples") {
            c.binary.n_examples = val.as_int();
            c.relation.n_examples = val.as_int();
        } else if (key == "suite.k_max") {
            c.binary.k_max = val.as_int();
            c.relation.k_max = val.as_int();
        } else if (key == "suite.n_instruction_words") {
            c.binary.n_instruction_words = val.as_int();
            c.relation.n_instruction_words = val.as_int();
        } else if (key == "suite.permutation_fraction") c.binary.permutation_fraction = val.as_float();
        else if (key == "suite.n_markers") c.binary.n_markers = val.as_int();
        else if (key == "suite.n_noise_tokens") c.binary.n_noise_tokens = val.as_int();
        else if (key == "suite.min_input_len") c.binary.min_input_len = val.as_int();
        else if (key == "suite.max_input_len") c.binary.max_input_len = val.as_int();
        else if (key == "suite.entity_vocab_size") c.relation.entity_vocab_size = val.as_int();
        else if (key == "suite.max_task_input_len") c.relation.max_task_input_len = val.as_int();
        else if (key == "suite.filter_threshold") c.filter_threshold = val.as_float();
        else if (key == "model.d_model") c.model.d_model = val.as_int();
        else if (key == "model.n_heads") c.model.n_heads = val.as_int();
        else if (key == "model.n_layers") c.model.n_layers = val.as_int();
        else if (key == "model.d_ff") c.model.d_ff = val.as_int();
        else if (key == "model.max_context") c.model.max_context = val.as_int();
        else if (key == "model.dropout") c.model.dropout = val.as_float();
        else if (key == "method.pretrain_steps") c.pretrain_steps = val.as_int();
        else if (key == "method.pretrain_lr") c.pretrain_lr = val.as_float();
        else if (key == "method.name") c.method = method_from_name(val.as_string());
        else if (key == "method.shots") c.shots = int_list(val);
        else if (key == "method.epochs") c.train.epochs = val.as_int();
        else if (key == "method.lr") c.train.lr = val.as_float();
        else if (key == "method.optimizer") {
            const std::string& o = val.as_string();
            if (o == "adam") c.train.optimizer = Optimizer::Kind::Adam;
            else if (o == "sgd") c.train.optimizer = Optimizer::Kind::Sgd;
            else throw ConfigError("unknown optimizer: " + o);
        } else if (key == "method.targets_per_task") c.train.targets_per_task = val.as_int();
        else if (key == "method.inner_steps") c.adapt.inner_steps = val.as_int();
        else if (key == "method.inner_lr") c.adapt.inner_lr = val.as_float();
        else if (key == "eval.m_samplings") c.eval.m_samplings = val.as_int();
        else if (key == "eval.max_targets") c.eval.max_targets = val.as_int();
        else if (key == "sense.mode") {
            const std::string& m = val.as_string();
            if (m == "exhaustive") c.sense.mode = SenseMode::Exhaustive;
            else if (m == "monte-carlo") c.sense.mode = SenseMode::MonteCarlo;
            else throw ConfigError("unknown sense mode: " + m);
        } else if (key == "sense.k") c.sense.k = val.as_int();
        else if (key == "sense.n_instructions") c.sense.n_instructions = val.as_int();
        else if (key == "sense.n_supports") c.sense.n_supports = val.as_int();
        else if (key == "sense.n_orderings") c.sense.n_orderings = val.as_int();
        else if (key == "sense.n_targets") c.sense.n_targets = val.as_int();
        else if (key == "sense.budget") c.sense.budget = val.as_int();
        else if (key == "grid.lr") c.grid_lr = float_list(val);
        else if (key == "grid.epochs") c.grid_epochs = int_list(val);
        else if (key == "grid.inner_steps") c.grid_inner_steps = int_list(val);
        else throw ConfigError("unknown config key: " + key);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    return from_toml(parse_toml_file(path));
}

void ExperimentConfig::validate() const {
    if (suite_family != "binary" && suite_family != "relation")
        throw ConfigError("suite.family must be \"binary\" or \"relation\"");
    if (n_folds < 3) throw ConfigError("experiment.n_folds must be >= 3");
    if (fold < 0 || fold >= n_folds)
        throw ConfigError("experiment.fold out of range for " + std::to_string(n_folds) +
                          " folds");
    if (shots.empty()) throw ConfigError("method.shots must be non-empty");
    for (int64_t k : shots)
        if (k < 0) throw ConfigError("method.shots entries must be >= 0");
    if (filter_threshold <= 0.0 || filter_threshold >= 1.0)
        throw ConfigError("suite.filter_threshold must be in (0,1)");
    if (train.epochs < 0) throw ConfigError("method.epochs must be >= 0");
    if (pretrain_steps < 0) throw ConfigError("method.pretrain_steps must be >= 0");
    if (adapt.inner_steps < 0) throw ConfigError("method.inner_steps must be >= 0");
}

ordered_json ExperimentConfig::to_json() const {
    ordered_json suite{{"family", suite_family}, {"filter_threshold", filter_threshold}};
    if (suite_family == "binary") {
        suite["n_tasks"] = binary.n_tasks;
        suite["n_examples"] = binary.n_examples;
        suite["permutation_fraction"] = binary.permutation_fraction;
        suite["k_max"] = binary.k_max;
        suite["n_markers"] = binary.n_markers;
        suite["n_noise_tokens"] = binary.n_noise_tokens;
        suite["n_instruction_words"] = binary.n_instruction_words;
        suite["min_input_len"] = binary.min_input_len;
        suite["max_input_len"] = binary.max_input_len;
    } else {
        suite["n_tasks"] = relation.n_tasks;
        suite["n_examples"] = relation.n_examples;
        suite["entity_vocab_size"] = relation.entity_vocab_size;
        suite["k_max"] = relation.k_max;
        suite["max_task_input_len"] = relation.max_task_input_len;
        suite["n_instruction_words"] = relation.n_instruction_words;
    }
    ordered_json grid = ordered_json::object();
    if (!grid_lr.empty()) grid["lr"] = grid_lr;
    if (!grid_epochs.empty()) grid["epochs"] = grid_epochs;
    if (!grid_inner_steps.empty()) grid["inner_steps"] = grid_inner_steps;
    return ordered_json{
        {"schema_version", 1},
        {"experiment",
         ordered_json{{"name", name},
                      {"seed", seed},
                      {"out_dir", out_dir},
                      {"n_folds", n_folds},
                      {"fold", fold}}},
        {"suite", suite},
        {"model", model.to_json()},
        {"method",
         ordered_json{{"name", method_name(method)},
                      {"shots", shots},
                      {"epochs", train.epochs},
                      {"lr", train.lr},
                      {"optimizer",
                       train.optimizer == Optimizer::Kind::Adam ? "adam" : "sgd"},
                      {"targets_per_task", train.targets_per_task},
                      {"inner_steps", adapt.inner_steps},
                      {"inner_lr", adapt.inner_lr},
                      {"pretrain_steps", pretrain_steps},
                      {"pretrain_lr", pretrain_lr}}},
        {"eval",
         ordered_json{{"m_samplings", eval.m_samplings}, {"max_targets", eval.max_targets}}},
        {"sense",
         ordered_json{{"mode", sense.mode == SenseMode::Exhaustive ? "exhaustive" : "monte-carlo"},
                      {"k", sense.k},
                      {"n_instructions", sense.n_instructions},
                      {"n_supports", sense.n_supports},
                      {"n_orderings", sense.n_orderings},
                      {"n_targets", sense.n_targets},
                      {"budget", sense.budget}}},
        {"grid", grid}};
}

}  // namespace ict
