#include "kgmo/harness.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace kgmo {

namespace {

struct Value {
    std::string raw;
    int line = 0;
};

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& s, int line) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw ConfigError("line " + std::to_string(line) + ": expected a number, got '" + s + "'");
    }
}

bool parse_bool(const std::string& s, int line) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("line " + std::to_string(line) + ": expected true or false, got '" + s + "'");
}

std::string parse_string(const std::string& s, int line) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    throw ConfigError("line " + std::to_string(line) + ": expected a quoted string, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s, int line) {
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
        throw ConfigError("line " + std::to_string(line) + ": expected an array, got '" + s + "'");
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        char c = s[i];
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

std::vector<double> parse_number_list(const std::string& s, int line) {
    std::vector<double> out;
    for (const auto& item : split_list(s, line)) out.push_back(parse_number(item, line));
    return out;
}

std::vector<std::vector<double>> parse_nested_list(const std::string& s, int line) {
    std::vector<std::vector<double>> out;
    for (const auto& item : split_list(s, line)) out.push_back(parse_number_list(item, line));
    return out;
}

std::vector<std::string> parse_string_list(const std::string& s, int line) {
    std::vector<std::string> out;
    for (const auto& item : split_list(s, line)) out.push_back(parse_string(item, line));
    return out;
}

} // namespace

void ExperimentConfig::validate_for_sweep() const {
    if (lambdas.size() < 3) throw ConfigError("slope fits need at least 3 lambda values");
    for (std::size_t i = 1; i < lambdas.size(); ++i)
        if (!(lambdas[i] < lambdas[i - 1]))
            throw ConfigError("lambda list must be strictly decreasing");
}

ExperimentConfig parse_config(const std::string& text) {
    std::map<std::string, Value> kv;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        if (kv.count(full)) throw ConfigError("duplicate key '" + full + "'");
        kv[full] = {val, lineno};
    }

    // a scenario key seeds the whole configuration from its preset; explicit keys override
    ExperimentConfig cfg;
    if (auto it = kv.find("scenario"); it != kv.end())
        cfg = scenario_config(parse_string(it->second.raw, it->second.line));
    std::vector<std::string> consumed;
    auto take = [&](const std::string& key) -> const Value* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    auto number = [&](const std::string& key, double& dst) {
        if (auto* v = take(key)) {
            dst = parse_number(v->raw, v->line);
            consumed.push_back(key);
        }
    };
    auto integer = [&](const std::string& key, int& dst) {
        if (auto* v = take(key)) {
            dst = static_cast<int>(parse_number(v->raw, v->line));
            consumed.push_back(key);
        }
    };
    auto boolean = [&](const std::string& key, bool& dst) {
        if (auto* v = take(key)) {
            dst = parse_bool(v->raw, v->line);
            consumed.push_back(key);
        }
    };
    auto str = [&](const std::string& key, std::string& dst) {
        if (auto* v = take(key)) {
            dst = parse_string(v->raw, v->line);
            consumed.push_back(key);
        }
    };
    auto numbers = [&](const std::string& key, std::vector<double>& dst) {
        if (auto* v = take(key)) {
            dst = parse_number_list(v->raw, v->line);
            consumed.push_back(key);
        }
    };

    str("scenario", cfg.scenario);
    integer("grid.dim", cfg.dim);
    integer("grid.n", cfg.n);
    number("grid.length", cfg.length);
    number("grid.cfl", cfg.cfl);
    if (auto* v = take("phases.plane")) {
        cfg.plane = parse_nested_list(v->raw, v->line);
        consumed.push_back("phases.plane");
    }
    if (auto* v = take("phases.files")) {
        cfg.files = parse_string_list(v->raw, v->line);
        consumed.push_back("phases.files");
    }
    numbers("background.psi_amplitude", cfg.psi_amplitude);
    numbers("background.w_amplitude", cfg.w_amplitude);
    number("background.phi_amplitude", cfg.phi_amplitude);
    number("background.phi_rotation", cfg.phi_rotation);
    number("background.bump_radius", cfg.bump_radius);
    number("background.support_radius", cfg.support_radius);
    boolean("error.error_evolution", cfg.error_evolution);
    number("error.amplitude", cfg.error_amplitude);
    if (auto* v = take("error.seed")) {
        cfg.seed = static_cast<unsigned>(parse_number(v->raw, v->line));
        consumed.push_back("error.seed");
    }
    number("run.T", cfg.T);
    numbers("run.lambdas", cfg.lambdas);
    number("run.kappa", cfg.kappa);
    number("run.tol", cfg.tol);
    integer("run.workers", cfg.workers);
    str("run.out", cfg.out);
    integer("run.checkpoint_stride", cfg.checkpoint_stride);
    integer("run.snapshot_stride", cfg.snapshot_stride);
    boolean("run.dealias", cfg.dealias);
    number("gates.slope_window", cfg.slope_window);
    number("gates.r2_min", cfg.r2_min);

    for (const auto& key : consumed) kv.erase(key);
    if (!kv.empty()) {
        std::string msg = "unknown configuration keys:";
        for (const auto& [k, v] : kv) msg += " '" + k + "' (line " + std::to_string(v.line) + ")";
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

} // namespace kgmo
