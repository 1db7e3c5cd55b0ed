#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "group.hpp"
#include "measure.hpp"

namespace martinlab {

using json = nlohmann::json;

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k{"green", "restricted", "radius", "floyd", "ancona", "parabolic",
                                            "degenerate", "llt", "derivative", "spheres"};
    return k;
}

// Published schema. Every grid is a nonempty list; scalars are noted.
//   experiment  string, one of experiment_kinds()
//   group       {factors: [string]}                       required
//   measure     {kind, alpha, weights, radius, atoms, symmetrize}   required
//   grid        {r | r_frac, pairs, n_max, eta, radius, a, delta, n, factor, theta,
//                epsilon, points, mode (string), k_max, limit, window, truncation, tol (scalars)}
//   budget      {memory_mb, wall_seconds}                 positive numbers
//   output      {name}                                    file stem, default = experiment
//   seed        unsigned integer
struct ExperimentConfig {
    std::string experiment;
    GroupSpec group;
    MeasureSpec measure;
    std::vector<double> r, r_frac, a, epsilon;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::vector<std::vector<std::string>> points;
    std::vector<int> n_max, eta, radius, delta, n, factor;
    std::vector<std::vector<double>> theta;
    std::string mode;
    std::optional<int> k_max, limit, window, truncation;
    std::optional<double> tol;
    double memory_mb = 2048.0;
    double wall_seconds = 3600.0;
    std::string name;
    uint64_t seed = 1;
    json canonical;  // validated document with the effective seed

    // Element budget for ball enumeration derived from the memory budget.
    size_t element_budget() const {
        return static_cast<size_t>(std::clamp(memory_mb * 1e6 / 512.0, 1e4, 1e9));
    }
};

namespace detail {

[[noreturn]] inline void schema(const std::string& what) { throw ConfigError("config: " + what); }

inline void only_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
    if (!j.is_object()) schema(where + " must be an object");
    for (auto& [k, v] : j.items())
        if (!allowed.count(k)) schema("unknown key '" + k + "' in " + where);
}

inline double number(const json& v, const std::string& what) {
    if (!v.is_number()) schema(what + " must be a number");
    double x = v.get<double>();
    if (!std::isfinite(x)) schema(what + " must be finite");
    return x;
}

inline int integer(const json& v, const std::string& what) {
    if (!v.is_number_integer()) schema(what + " must be an integer");
    return v.get<int>();
}

inline const json& nonempty_list(const json& v, const std::string& what) {
    if (!v.is_array() || v.empty()) schema(what + " must be a nonempty list");
    return v;
}

inline std::vector<double> numbers(const json& v, const std::string& what) {
    std::vector<double> out;
    for (auto& x : nonempty_list(v, what)) out.push_back(number(x, what));
    return out;
}

inline std::vector<int> integers(const json& v, const std::string& what) {
    std::vector<int> out;
    for (auto& x : nonempty_list(v, what)) out.push_back(integer(x, what));
    return out;
}

inline std::string text(const json& v, const std::string& what) {
    if (!v.is_string()) schema(what + " must be a string");
    return v.get<std::string>();
}

inline MeasureSpec parse_measure(const json& m) {
    only_keys(m, "measure", {"kind", "alpha", "weights", "radius", "atoms", "symmetrize"});
    MeasureSpec s;
    if (!m.contains("kind")) schema("measure.kind is required");
    s.kind = text(m["kind"], "measure.kind");
    static const std::set<std::string> kinds{"srw", "lazy", "adapted", "uniform_ball", "custom"};
    if (!kinds.count(s.kind)) schema("measure.kind '" + s.kind + "' is not one of srw|lazy|adapted|uniform_ball|custom");
    if (m.contains("alpha")) s.alpha = number(m["alpha"], "measure.alpha");
    if (m.contains("weights")) s.weights = numbers(m["weights"], "measure.weights");
    if (m.contains("radius")) s.radius = integer(m["radius"], "measure.radius");
    if (m.contains("symmetrize")) {
        if (!m["symmetrize"].is_boolean()) schema("measure.symmetrize must be a boolean");
        s.symmetrize = m["symmetrize"].get<bool>();
    }
    if (m.contains("atoms")) {
        for (auto& a : nonempty_list(m["atoms"], "measure.atoms")) {
            if (!a.is_array() || a.size() != 2) schema("measure.atoms entries are [word, weight]");
            s.atoms.emplace_back(text(a[0], "atom word"), number(a[1], "atom weight"));
        }
    }
    if (s.kind == "custom" && s.atoms.empty()) schema("custom measure needs atoms");
    return s;
}

} // namespace detail

// Validates the document and fills an ExperimentConfig. `subcommand` must agree with the
// document's experiment key when both are present; `seed` overrides the document seed.
inline ExperimentConfig parse_config(const json& doc, const std::string& subcommand = "",
                                     std::optional<uint64_t> seed = std::nullopt) {
    using namespace detail;
    only_keys(doc, "config", {"experiment", "group", "measure", "grid", "budget", "output", "seed"});
    ExperimentConfig c;
    if (doc.contains("experiment")) c.experiment = text(doc["experiment"], "experiment");
    // long names accepted in configs
    if (c.experiment == "spectral-radius") c.experiment = "radius";
    if (c.experiment == "sphere-sum") c.experiment = "spheres";
    if (!subcommand.empty()) {
        if (!c.experiment.empty() && c.experiment != subcommand)
            schema("experiment '" + c.experiment + "' does not match subcommand '" + subcommand + "'");
        c.experiment = subcommand;
    }
    if (c.experiment.empty()) schema("experiment is required");
    auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), c.experiment) == kinds.end())
        schema("unknown experiment '" + c.experiment + "'");

    if (!doc.contains("group")) schema("group block is required");
    only_keys(doc["group"], "group", {"factors"});
    if (!doc["group"].contains("factors")) schema("group.factors is required");
    std::vector<std::string> factors;
    for (auto& f : nonempty_list(doc["group"]["factors"], "group.factors")) factors.push_back(text(f, "factor"));
    c.group = GroupSpec::parse(factors);

    if (!doc.contains("measure")) schema("measure block is required");
    c.measure = parse_measure(doc["measure"]);

    json grid = doc.value("grid", json::object());
    only_keys(grid, "grid",
              {"r", "r_frac", "pairs", "n_max", "eta", "radius", "a", "delta", "n", "factor", "theta",
               "epsilon", "points", "mode", "k_max", "limit", "window", "truncation", "tol"});
    if (grid.contains("r")) c.r = numbers(grid["r"], "grid.r");
    if (grid.contains("r_frac")) c.r_frac = numbers(grid["r_frac"], "grid.r_frac");
    if (!c.r.empty() && !c.r_frac.empty()) schema("grid.r and grid.r_frac are exclusive");
    for (double r : c.r)
        if (!(r > 0.0)) schema("grid.r entries must be > 0");
    for (double r : c.r_frac)
        if (!(r > 0.0)) schema("grid.r_frac entries must be > 0");
    if (grid.contains("pairs")) {
        for (auto& p : nonempty_list(grid["pairs"], "grid.pairs")) {
            if (!p.is_array() || p.size() != 2) schema("grid.pairs entries are [x, y]");
            c.pairs.emplace_back(text(p[0], "pair word"), text(p[1], "pair word"));
        }
    }
    if (grid.contains("points")) {
        for (auto& p : nonempty_list(grid["points"], "grid.points")) {
            if (!p.is_array() || p.empty()) schema("grid.points entries are word lists");
            std::vector<std::string> w;
            for (auto& s : p) w.push_back(text(s, "point word"));
            c.points.push_back(w);
        }
    }
    if (grid.contains("theta")) {
        for (auto& t : nonempty_list(grid["theta"], "grid.theta")) c.theta.push_back(numbers(t, "grid.theta entry"));
    }
    auto ints = [&](const char* key, std::vector<int>& out) {
        if (grid.contains(key)) out = integers(grid[key], std::string("grid.") + key);
    };
    ints("n_max", c.n_max);
    ints("eta", c.eta);
    ints("radius", c.radius);
    ints("delta", c.delta);
    ints("n", c.n);
    ints("factor", c.factor);
    if (grid.contains("a")) c.a = numbers(grid["a"], "grid.a");
    if (grid.contains("epsilon")) c.epsilon = numbers(grid["epsilon"], "grid.epsilon");
    if (grid.contains("mode")) c.mode = text(grid["mode"], "grid.mode");
    auto scalar_int = [&](const char* key, std::optional<int>& out) {
        if (grid.contains(key)) out = integer(grid[key], std::string("grid.") + key);
    };
    scalar_int("k_max", c.k_max);
    scalar_int("limit", c.limit);
    scalar_int("window", c.window);
    scalar_int("truncation", c.truncation);
    if (grid.contains("tol")) c.tol = number(grid["tol"], "grid.tol");
    for (auto* v : {&c.n_max, &c.radius, &c.n})
        for (int x : *v)
            if (x < 1) schema("grid entries for n_max, radius, n must be >= 1");
    for (auto* v : {&c.eta, &c.delta, &c.factor})
        for (int x : *v)
            if (x < 0) schema("grid entries for eta, delta, factor must be >= 0");

    if (doc.contains("budget")) {
        const json& b = doc["budget"];
        only_keys(b, "budget", {"memory_mb", "wall_seconds"});
        if (b.contains("memory_mb")) c.memory_mb = number(b["memory_mb"], "budget.memory_mb");
        if (b.contains("wall_seconds")) c.wall_seconds = number(b["wall_seconds"], "budget.wall_seconds");
    }
    if (!(c.memory_mb > 0.0) || !(c.wall_seconds > 0.0)) schema("budgets must be positive");

    c.name = c.experiment;
    if (doc.contains("output")) {
        only_keys(doc["output"], "output", {"name"});
        if (doc["output"].contains("name")) c.name = text(doc["output"]["name"], "output.name");
    }
    if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos || c.name[0] == '.')
        schema("output.name must be a plain file stem");

    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_unsigned()) schema("seed must be a nonnegative integer");
        c.seed = doc["seed"].get<uint64_t>();
    }
    if (seed) c.seed = *seed;

    c.canonical = doc;
    c.canonical["experiment"] = c.experiment;
    c.canonical["seed"] = c.seed;
    return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& subcommand = "",
                                    std::optional<uint64_t> seed = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(doc, subcommand, seed);
}

} // namespace martinlab
