#pragma once

#include "nappal/model.hpp"
#include "nappal/problems.hpp"
#include "nappal/solver.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace nappal {

// Nested key-value configuration document:
//
//   section {
//     key = value        # comment
//     nested { ... }
//   }
//
// Keys are consumed by the typed accessors; anything left unconsumed is an
// error (misspelled keys never fall back to defaults silently).
class ConfigNode {
 public:
    std::map<std::string, std::string> values;
    std::map<std::string, ConfigNode> sections;

    bool has(const std::string& key) const { return values.count(key) > 0; }

    std::string get_string(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw ConfigError("config: missing key '" + key + "'");
        used_values_.insert(key);
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        return get_string(key);
    }

    double get_double(const std::string& key) const { return parse_double(key, get_string(key)); }

    double get_double(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        return get_double(key);
    }

    long get_long(const std::string& key) const {
        const std::string s = get_string(key);
        try {
            std::size_t pos = 0;
            const long v = std::stol(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' expects an integer, got '" + s + "'");
        }
    }

    long get_long(const std::string& key, long fallback) const {
        if (!has(key)) return fallback;
        return get_long(key);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string s = get_string(key);
        if (s == "true" || s == "on" || s == "1") return true;
        if (s == "false" || s == "off" || s == "0") return false;
        throw ConfigError("config: key '" + key + "' expects a boolean, got '" + s + "'");
    }

    std::vector<double> get_doubles(const std::string& key) const {
        const std::string s = get_string(key);
        std::istringstream is(s);
        std::vector<double> out;
        std::string tok;
        while (is >> tok) out.push_back(parse_double(key, tok));
        if (out.empty()) throw ConfigError("config: key '" + key + "' expects numbers");
        return out;
    }

    const ConfigNode* child(const std::string& name) const {
        auto it = sections.find(name);
        if (it == sections.end()) return nullptr;
        used_sections_.insert(name);
        return &it->second;
    }

    const ConfigNode& require_child(const std::string& name) const {
        const ConfigNode* c = child(name);
        if (!c) throw ConfigError("config: missing section '" + name + "'");
        return *c;
    }

    // Throws when any key or section was never consumed by an accessor.
    void check_consumed(const std::string& path = "") const {
        for (const auto& [key, value] : values) {
            if (!used_values_.count(key)) {
                throw ConfigError("config: unknown key '" + path + key + "'");
            }
        }
        for (const auto& [name, node] : sections) {
            if (!used_sections_.count(name)) {
                throw ConfigError("config: unknown section '" + path + name + "'");
            }
            node.check_consumed(path + name + ".");
        }
    }

 private:
    static double parse_double(const std::string& key, const std::string& s) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' expects a number, got '" + s + "'");
        }
    }

    mutable std::set<std::string> used_values_;
    mutable std::set<std::string> used_sections_;
};

namespace detail {

inline std::string strip(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline void parse_into(std::istream& is, ConfigNode& node, int& lineno, int depth) {
    std::string raw;
    while (std::getline(is, raw)) {
        ++lineno;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw = raw.substr(0, hash);
        const std::string line = strip(raw);
        if (line.empty()) continue;
        if (line == "}") {
            if (depth == 0) throw ConfigError("config: unmatched '}' at line " + std::to_string(lineno));
            return;
        }
        if (line.back() == '{') {
            const std::string name = strip(line.substr(0, line.size() - 1));
            if (name.empty() || name.find_first_of("={}") != std::string::npos) {
                throw ConfigError("config: bad section name at line " + std::to_string(lineno));
            }
            if (node.sections.count(name)) {
                throw ConfigError("config: duplicate section '" + name + "' at line " +
                                  std::to_string(lineno));
            }
            parse_into(is, node.sections[name], lineno, depth + 1);
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: expected 'key = value' at line " + std::to_string(lineno));
        }
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("config: empty key or value at line " + std::to_string(lineno));
        }
        if (node.values.count(key)) {
            throw ConfigError("config: duplicate key '" + key + "' at line " +
                              std::to_string(lineno));
        }
        node.values[key] = value;
    }
    if (depth != 0) throw ConfigError("config: missing closing '}'");
}

// "name" or "name(a, b, ...)" with numeric arguments
inline std::pair<std::string, std::vector<double>> parse_call(const std::string& s,
                                                              const std::string& what) {
    const std::size_t open = s.find('(');
    if (open == std::string::npos) return {strip(s), {}};
    if (s.back() != ')') throw ConfigError("config: malformed " + what + " '" + s + "'");
    const std::string name = strip(s.substr(0, open));
    std::string args = s.substr(open + 1, s.size() - open - 2);
    for (auto& ch : args) {
        if (ch == ',') ch = ' ';
    }
    std::istringstream is(args);
    std::vector<double> out;
    double v;
    while (is >> v) out.push_back(v);
    if (!is.eof()) throw ConfigError("config: malformed " + what + " arguments in '" + s + "'");
    return {name, out};
}

}  // namespace detail

inline ConfigNode parse_config(std::istream& is) {
    ConfigNode root;
    int lineno = 0;
    detail::parse_into(is, root, lineno, 0);
    return root;
}

inline ConfigNode parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    return parse_config(is);
}

inline Regularizer parse_regularizer(const std::string& text) {
    auto [name, args] = detail::parse_call(text, "regularizer");
    auto want = [&](std::size_t n) {
        if (args.size() != n) {
            throw ConfigError("config: regularizer '" + name + "' expects " + std::to_string(n) +
                              " parameter(s)");
        }
    };
    if (name == "zero") {
        want(0);
        return Regularizer::zero();
    }
    if (name == "l1") {
        want(1);
        return Regularizer::l1(args[0]);
    }
    if (name == "scad") {
        want(2);
        return Regularizer::scad(args[0], args[1]);
    }
    if (name == "mcp") {
        want(2);
        return Regularizer::mcp(args[0], args[1]);
    }
    if (name == "capped_l1") {
        want(2);
        return Regularizer::capped_l1(args[0], args[1]);
    }
    throw ConfigError("config: unknown regularizer '" + name + "'");
}

// Optional command-line overrides applied on top of the config file.
struct ExperimentOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<long> trace_stride;
};

struct Experiment {
    InstanceData data;
    ProblemSpec spec;
    SolverConfig solver;
    bool gamma_auto = false;
    double gamma_safety = 1.05;
    std::string trace_path = "trace.csv";
    std::string summary_path = "summary.txt";
    std::string instance_path;  // when set, solve serializes the built instance
};

inline Experiment load_experiment(const ConfigNode& root,
                                  const ExperimentOverrides& over = {}) {
    Experiment exp;

    const ConfigNode& prob = root.require_child("problem");
    const std::string builder = prob.get_string("builder");
    std::uint64_t seed = static_cast<std::uint64_t>(prob.get_long("seed", 1));
    if (over.seed) seed = *over.seed;

    if (builder == "file") {
        if (over.seed) {
            throw ConfigError("config: seed-override requires a generative builder");
        }
        exp.data = load_instance_file(prob.get_string("path"));
    } else if (builder == "sharing") {
        SharingParams p;
        p.seed = seed;
        p.agents = prob.get_long("agents");
        p.shared_dim = prob.get_long("shared_dim");
        if (prob.has("block_dims")) {
            for (double v : prob.get_doubles("block_dims")) {
                p.block_dims.push_back(static_cast<Index>(v));
            }
        } else {
            p.block_dims.assign(p.agents, prob.get_long("block_size"));
        }
        p.nonlinearity = prob.get_double("nonlinearity", 0.0);
        p.reg = parse_regularizer(prob.get_string("regularizer", "zero"));
        const std::string box = prob.get_string("box", "all");
        if (box != "all") {
            std::istringstream bs(box);
            if (!(bs >> p.box_lo >> p.box_hi) || !(p.box_lo <= p.box_hi)) {
                throw ConfigError("config: box expects 'all' or 'lo hi'");
            }
        }
        exp.data = build_sharing(p);
    } else if (builder == "erm") {
        ErmParams p;
        p.seed = seed;
        p.predictors = prob.get_long("predictors");
        p.samples = prob.get_long("samples");
        p.feature_scale = prob.get_double("feature_scale", 1.0);
        if (prob.has("regularizer")) p.reg = parse_regularizer(prob.get_string("regularizer"));
        exp.data = build_erm(p);
    } else {
        throw ConfigError("config: unknown builder '" + builder + "'");
    }
    // falsification aids: replace an analytic modulus to probe `validate`
    if (prob.has("override_l_g")) exp.data.l_g = prob.get_double("override_l_g");
    if (prob.has("override_l_h")) exp.data.l_h = prob.get_double("override_l_h");
    if (prob.has("override_l_omega")) exp.data.l_omega = prob.get_double("override_l_omega");
    if (prob.has("override_l_theta")) exp.data.l_theta = prob.get_double("override_l_theta");
    exp.spec = make_problem(exp.data);

    const ConfigNode& sol = root.require_child("solver");
    const std::string gamma_str = sol.get_string("gamma", "auto");
    exp.gamma_safety = sol.get_double("gamma_safety", 1.05);
    if (gamma_str == "auto") {
        exp.gamma_auto = true;
        exp.solver.gamma = default_gamma(exp.spec, exp.gamma_safety);
    } else {
        try {
            std::size_t pos = 0;
            exp.solver.gamma = std::stod(gamma_str, &pos);
            if (pos != gamma_str.size()) throw std::invalid_argument(gamma_str);
        } catch (const std::exception&) {
            throw ConfigError("config: gamma expects 'auto' or a number");
        }
    }
    exp.solver.sigma = sol.get_double("sigma", 0.5);
    const std::string rule = sol.get_string("eps_rule", "upper");
    {
        auto [name, args] = detail::parse_call(rule, "eps_rule");
        if (name == "upper" && args.empty()) {
            exp.solver.eps_rule = EpsRule::upper;
        } else if (name == "lower" && args.empty()) {
            exp.solver.eps_rule = EpsRule::lower;
        } else if (name == "fraction" && args.size() == 1) {
            exp.solver.eps_rule = EpsRule::fixed_fraction;
            exp.solver.eps_fraction = args[0];
        } else {
            throw ConfigError("config: eps_rule expects upper, lower, or fraction(rho)");
        }
    }
    exp.solver.max_iters = sol.get_long("max_iters", 10000);
    exp.solver.feas_tol = sol.get_double("feas_tol", 1e-8);
    exp.solver.cert_tol = sol.get_double("cert_tol", 1e-6);
    exp.solver.workers = static_cast<int>(sol.get_long("workers", 1));
    if (over.workers) exp.solver.workers = *over.workers;
    exp.solver.seed = seed;
    const std::string kernel = sol.get_string("kernel", "euclidean");
    {
        auto [name, args] = detail::parse_call(kernel, "kernel");
        if (name == "euclidean" && args.empty()) {
            exp.solver.kernel = BregmanKernel::euclidean();
        } else if (name == "diagonal") {
            if (args.size() != exp.spec.block_sizes.size()) {
                throw ConfigError("config: diagonal kernel expects one weight per block");
            }
            Vector w(exp.spec.n);
            Index off = 0;
            for (std::size_t b = 0; b < args.size(); ++b) {
                w.segment(off, exp.spec.block_sizes[b]).setConstant(args[b]);
                off += exp.spec.block_sizes[b];
            }
            exp.solver.kernel = BregmanKernel::diagonal(w);
        } else {
            throw ConfigError("config: kernel expects euclidean or diagonal(w per block)");
        }
    }

    if (const ConfigNode* out = root.child("output")) {
        exp.trace_path = out->get_string("trace", exp.trace_path);
        exp.summary_path = out->get_string("summary", exp.summary_path);
        exp.instance_path = out->get_string("instance", "");
        exp.solver.trace_stride = out->get_long("trace_stride", 1);
        exp.solver.record_timings = out->get_bool("timings", false);
    }
    if (over.trace_stride) exp.solver.trace_stride = *over.trace_stride;
    if (exp.solver.trace_stride < 1) throw ConfigError("config: trace_stride must be >= 1");

    root.check_consumed();
    return exp;
}

}  // namespace nappal
