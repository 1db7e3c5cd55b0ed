#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <thread>

#include <Eigen/Core>
#include <openssl/evp.h>

#include "ancona.hpp"
#include "config.hpp"
#include "floyd.hpp"
#include "parabolic.hpp"
#include "potential.hpp"
#include "svg.hpp"

namespace martinlab {

inline constexpr const char* kVersion = "0.1.0";

inline std::string version_string() {
    return std::string("martinlab ") + kVersion + "; eigen " + std::to_string(EIGEN_WORLD_VERSION) + "." +
           std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION) + "; json " +
           std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
           std::to_string(NLOHMANN_JSON_VERSION_PATCH);
}

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr))
        throw NumericalError("SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::string config_hash(const ExperimentConfig& c) { return sha256_hex(c.canonical.dump()); }

// Round-trip formatting; the same double always prints the same text.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

inline std::string fmt_vec(const Eigen::VectorXd& u) {
    std::string s;
    for (int i = 0; i < u.size(); ++i) s += (i ? " " : "") + fmt(u[i]);
    return s;
}

inline std::string fmt_list(const std::vector<double>& u) {
    std::string s;
    for (size_t i = 0; i < u.size(); ++i) s += (i ? " " : "") + fmt(u[i]);
    return s;
}

// One grid cell: rows in output order, failed consistency checks, named metrics, plot data.
struct CellResult {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> failures;
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<PlotSeries> series;
};

struct RunOptions {
    int threads = 0;  // 0: MARTINLAB_THREADS, else hardware concurrency
    bool timing = false;
};

struct RunReport {
    std::string experiment, name, config_hash, version;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<double> cell_seconds;
    std::vector<std::string> failures;
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<PlotSeries> series;
    std::string plot_kind;  // natural plot kind of the experiment, empty when none
    bool timing = false;

    bool passed() const { return failures.empty(); }
};

inline int worker_count(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("MARTINLAB_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1 || v > 1024)
            throw ConfigError("MARTINLAB_THREADS must be a positive integer");
        return static_cast<int>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs cells on a pool; results come back in cell order. The first failing cell in grid order
// decides the reported error, so errors are as deterministic as results.
inline std::vector<CellResult> run_cells(const std::vector<std::function<CellResult()>>& cells, int threads,
                                         double wall_seconds, std::vector<double>& seconds) {
    using clock = std::chrono::steady_clock;
    const size_t n = cells.size();
    std::vector<CellResult> out(n);
    std::vector<std::exception_ptr> err(n);
    seconds.assign(n, 0.0);
    std::atomic<size_t> next{0};
    std::atomic<bool> stop{false};
    auto t0 = clock::now();
    auto work = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= n || stop) return;
            auto s = clock::now();
            try {
                out[i] = cells[i]();
            } catch (...) {
                err[i] = std::current_exception();
                stop = true;
            }
            auto e = clock::now();
            seconds[i] = std::chrono::duration<double>(e - s).count();
            if (std::chrono::duration<double>(e - t0).count() > wall_seconds) {
                if (!err[i]) err[i] = std::make_exception_ptr(ResourceError("wall-time budget exhausted"));
                stop = true;
            }
        }
    };
    int T = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    std::vector<std::thread> pool;
    for (int t = 1; t < T; ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    for (auto& e : err)
        if (e) std::rethrow_exception(e);
    return out;
}

namespace detail {

struct Context {
    const ExperimentConfig& cfg;
    Group G;
    FiniteMeasure mu;
    GreenSolver solver;

    explicit Context(const ExperimentConfig& c)
        : cfg(c), G(c.group), mu(make_measure(G, c.measure)), solver(mu, c.element_budget()) {}

    GroupElement element(const std::string& w) const {
        try {
            return G.parse(w);
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad element '" + w + "'");
        }
    }

    std::vector<double> radii(const char* experiment) const {
        if (!cfg.r.empty()) return cfg.r;
        if (cfg.r_frac.empty()) throw ConfigError(std::string(experiment) + " needs grid.r or grid.r_frac");
        double R = solver.reference_radius().lower;
        std::vector<double> out;
        for (double f : cfg.r_frac) out.push_back(f * R);
        return out;
    }

    std::vector<std::pair<GroupElement, GroupElement>> pairs() const {
        std::vector<std::pair<GroupElement, GroupElement>> out;
        if (cfg.pairs.empty()) out.emplace_back(G.identity(), G.identity());
        for (auto& [x, y] : cfg.pairs) out.emplace_back(element(x), element(y));
        return out;
    }

    template <class T>
    static std::vector<T> or_default(const std::vector<T>& v, std::vector<T> d) {
        return v.empty() ? d : v;
    }

    std::unique_ptr<GreenField> field(double r, int n_max) const {
        if (solver.adapted()) return std::make_unique<FixedPointField>(solver.walk(), r);
        return std::make_unique<SeriesField>(solver, r, n_max);
    }
};

struct Plan {
    std::vector<std::string> header;
    std::vector<std::function<CellResult()>> cells;
    std::string plot_kind;
    std::function<void(RunReport&)> finalize;
    bool serial = false;
};

inline Plan plan_green(std::shared_ptr<Context> ctx) {
    Plan p;
    p.header = {"r", "x", "y", "n_max", "lower", "upper", "tail_method"};
    p.plot_kind = "series";
    p.serial = !ctx->solver.adapted();
    auto rs = ctx->radii("green");
    auto ns = Context::or_default(ctx->cfg.n_max, {200});
    for (double r : rs)
        for (auto& [x, y] : ctx->pairs())
            for (int n : ns)
                p.cells.push_back([ctx, r, x = x, y = y, n] {
                    CellResult c;
                    auto g = ctx->solver.green(r, x, y, n);
                    c.rows.push_back({fmt(r), ctx->G.format(x), ctx->G.format(y), std::to_string(n), fmt(g.lower),
                                      fmt(g.upper), g.tail_bound_method});
                    if (!(g.lower <= g.upper)) c.failures.push_back("green bracket inverted at r=" + fmt(r));
                    c.series.push_back({ctx->G.format(x) + " -> " + ctx->G.format(y), {r}, {g.lower}, false});
                    return c;
                });
    p.finalize = [](RunReport& rep) {
        // one series per pair label
        std::vector<PlotSeries> merged;
        for (auto& s : rep.series) {
            auto it = std::find_if(merged.begin(), merged.end(), [&](auto& m) { return m.label == s.label; });
            if (it == merged.end()) merged.push_back(s);
            else it->x.push_back(s.x[0]), it->y.push_back(s.y[0]);
        }
        rep.series = merged;
    };
    return p;
}

inline Plan plan_restricted(std::shared_ptr<Context> ctx) {
    Plan p;
    p.header = {"r", "x", "y", "radius", "set_size", "restricted", "unrestricted_lower", "unrestricted_upper"};
    p.serial = !ctx->solver.adapted();
    auto rs = ctx->radii("restricted");
    int n = Context::or_default(ctx->cfg.n_max, {200}).front();
    for (double r : rs)
        for (auto& [x, y] : ctx->pairs())
            for (int R : Context::or_default(ctx->cfg.radius, {4}))
                p.cells.push_back([ctx, r, x = x, y = y, R, n] {
                    CellResult c;
                    const Group& G = ctx->G;
                    if (G.length(x) > R || G.length(y) > R) throw DomainError("restricted endpoints must lie in ball(radius)");
                    std::vector<GroupElement> A;
                    for (auto& [g, d] : G.ball(R, ctx->cfg.element_budget())) A.push_back(g);
                    auto a = green_restricted(ctx->mu, r, x, y, A);
                    auto u = ctx->solver.green(r, x, y, n);
                    c.rows.push_back({fmt(r), G.format(x), G.format(y), std::to_string(R), std::to_string(A.size()),
                                      fmt(a.upper), fmt(u.lower), fmt(u.upper)});
                    if (std::isfinite(a.upper) && a.upper > u.upper * (1 + 1e-9))
                        c.failures.push_back("restricted Green exceeds the unrestricted bracket at r=" + fmt(r));
                    return c;
                });
    return p;
}

inline Plan plan_radius(std::shared_ptr<Context> ctx) {
    Plan p;
    p.header = {"n_max", "lower", "upper", "fit", "lower_is_bound"};
    p.serial = !ctx->solver.adapted();
    for (int n : Context::or_default(ctx->cfg.n_max, {40}))
        p.cells.push_back([ctx, n] {
            CellResult c;
            auto R = ctx->solver.spectral_radius(n);
            c.rows.push_back({std::to_string(n), fmt(R.lower), fmt(R.upper), fmt(R.fit), R.lower_is_bound ? "1" : "0"});
            if (!(R.lower <= R.upper)) c.failures.push_back("radius bracket inverted at n_max=" + std::to_string(n));
            return c;
        });
    return p;
}

inline Plan plan_floyd(std::shared_ptr<Context> ctx) {
    Plan p;
    p.header = {"a",           "radius", "size", "symmetry_violations", "identity_violations", "triangle_violations",
                "visibility_violations", "inexact_pairs"};
    for (double a : Context::or_default(ctx->cfg.a, {2.0}))
        for (int R : Context::or_default(ctx->cfg.radius, {4}))
            p.cells.push_back([ctx, a, R] {
                CellResult c;
                FloydConfig fc;
                fc.a = a;
                fc.radius = R;
                fc.validate();
                FloydSpace sp(ctx->G, a, R);
                auto au = floyd_audit(sp);
                const size_t n = sp.size();
                long sym = au.symmetry, id = au.identity, tri = au.triangle, vis = au.visibility, inexact = au.inexact;
                c.rows.push_back({fmt(a), std::to_string(R), std::to_string(n), std::to_string(sym), std::to_string(id),
                                  std::to_string(tri), std::to_string(vis), std::to_string(inexact)});
                if (sym + id + tri + vis > 0)
                    c.failures.push_back("Floyd axioms or visibility bound violated on ball(" + std::to_string(R) + ")");
                return c;
            });
    return p;
}

inline Plan plan_ancona(std::shared_ptr<Context> ctx) {
    Plan p;
    const auto& cfg = ctx->cfg;
    std::string mode = cfg.mode.empty() ? "weak" : cfg.mode;
    p.plot_kind = "decay";
    p.serial = !ctx->solver.adapted();
    if (mode == "weak") {
        p.header = {"mode", "r", "n", "configuration", "lower", "upper", "certified"};
        std::vector<double> rs;
        if (cfg.r.empty() && cfg.r_frac.empty()) {
            double R = ctx->solver.reference_radius().lower;
            for (double f : {0.5, 0.9, 0.99}) rs.push_back(f * R);
        } else {
            rs = ctx->radii("ancona");
        }
        int kmax = cfg.k_max.value_or(6), limit = cfg.limit.value_or(8);
        int n_series = Context::or_default(cfg.n_max, {160}).front();
        for (double r : rs)
            p.cells.push_back([ctx, r, kmax, limit, n_series] {
                CellResult c;
                auto f = ctx->field(r, n_series);
                AnconaScanReport rep;
                weak_ancona_scan(*f, kmax, limit, rep);
                PlotSeries worst{"r=" + fmt(r), {}, {}, true};
                for (auto& row : rep.rows) {
                    c.rows.push_back({"weak", fmt(r), std::to_string(row.n), row.id, fmt(row.value.lo),
                                      fmt(row.value.hi), row.certified ? "1" : "0"});
                    if (!weak_ancona_lower_half(*f, row.value))
                        c.failures.push_back("weak Ancona ratio below 1/G(e,e) for " + row.id);
                }
                for (int n = 1; n <= kmax; ++n) {
                    worst.x.push_back(n);
                    worst.y.push_back(rep.weak_constant(n));
                }
                c.series.push_back(worst);
                c.metrics.emplace_back("weak_constant r=" + fmt(r) + " n<=" + std::to_string(kmax / 2),
                                       rep.weak_constant(kmax / 2));
                c.metrics.emplace_back("weak_constant r=" + fmt(r) + " n<=" + std::to_string(kmax),
                                       rep.weak_constant(kmax));
                return c;
            });
    } else if (mode == "strong") {
        p.header = {"mode", "r", "n", "width", "defect", "previous", "heuristic_error", "tube_size"};
        auto rs = ctx->radii("ancona strong");
        auto ns = Context::or_default(cfg.n, {2, 3, 4, 5, 6, 7, 8});
        auto widths = Context::or_default(cfg.delta, {2});
        auto fam = prefix_family(ctx->G, *std::min_element(ns.begin(), ns.end()), *std::max_element(ns.begin(), ns.end()));
        for (double r : rs)
            for (int w : widths)
                for (int n : ns) {
                    auto it = std::find_if(fam.begin(), fam.end(), [&](auto& q) { return q.n == n; });
                    auto conf = *it;
                    p.cells.push_back([ctx, r, w, conf] {
                        CellResult c;
                        auto d = strong_ancona_defect_tube(ctx->mu, r, conf.x, conf.y, conf.xp, conf.yp, w, w + 1);
                        c.rows.push_back({"strong", fmt(r), std::to_string(conf.n), std::to_string(d.width),
                                          fmt(d.defect), fmt(d.previous), fmt(d.heuristic_error),
                                          std::to_string(d.tube_size)});
                        c.series.push_back({"r=" + fmt(r) + " w=" + std::to_string(w), {double(conf.n)}, {d.defect}, true});
                        return c;
                    });
                }
        p.finalize = [](RunReport& rep) {
            std::vector<PlotSeries> merged;
            for (auto& s : rep.series) {
                auto it = std::find_if(merged.begin(), merged.end(), [&](auto& m) { return m.label == s.label; });
                if (it == merged.end()) merged.push_back(s);
                else it->x.push_back(s.x[0]), it->y.push_back(s.y[0]);
            }
            rep.series = merged;
            for (auto& s : merged) {
                double slope = log_slope(s.x, s.y);
                rep.metrics.emplace_back("log_slope " + s.label, slope);
            }
        };
    } else if (mode == "avoidance") {
        p.header = {"mode", "r", "x", "y", "z", "window", "eta", "value", "value_enlarged"};
        if (cfg.points.empty()) throw ConfigError("avoidance needs grid.points as [x, y, z] triples");
        auto rs = ctx->radii("ancona avoidance");
        auto etas = Context::or_default(cfg.eta, {0, 1, 2, 3, 4});
        for (auto& pt : cfg.points)
            if (pt.size() != 3) throw ConfigError("avoidance points are [x, y, z] triples");
        for (double r : rs)
            for (auto& pt : cfg.points)
                for (int W : Context::or_default(cfg.radius, {6})) {
                    auto x = ctx->element(pt[0]), y = ctx->element(pt[1]), z = ctx->element(pt[2]);
                    p.cells.push_back([ctx, r, x, y, z, W, etas] {
                        CellResult c;
                        const Group& G = ctx->G;
                        auto cv = avoidance_decay(ctx->mu, r, x, y, z, etas, W);
                        PlotSeries s{G.format(x) + " " + G.format(y) + " r=" + fmt(r), {}, {}, true};
                        for (size_t i = 0; i < cv.eta.size(); ++i) {
                            c.rows.push_back({"avoidance", fmt(r), G.format(x), G.format(y), G.format(z),
                                              std::to_string(W), std::to_string(cv.eta[i]), fmt(cv.value[i]),
                                              fmt(cv.value_enlarged[i])});
                            s.x.push_back(cv.eta[i]);
                            s.y.push_back(cv.value[i]);
                        }
                        c.series.push_back(s);
                        if (!cv.nonincreasing()) c.failures.push_back("avoidance value increases with eta");
                        if (!cv.window_monotone()) c.failures.push_back("avoidance value shrinks with the window");
                        c.metrics.emplace_back("log_concave " + s.label, cv.log_concave() ? 1.0 : 0.0);
                        return c;
                    });
                }
    } else {
        throw ConfigError("grid.mode for ancona must be weak|strong|avoidance");
    }
    return p;
}

inline Plan plan_parabolic(std::shared_ptr<Context> ctx) {
    Plan p;
    const auto& cfg = ctx->cfg;
    p.header = {"factor", "eta", "r", "kind", "u", "lambda", "hessian_min_eig", "angle_error", "harmonicity_residual"};
    p.plot_kind = "lambda";
    auto rs = ctx->radii("parabolic");
    int window = cfg.window.value_or(2), trunc = cfg.truncation.value_or(8), tilts = cfg.limit.value_or(20);
    size_t cell = 0;
    for (int f : Context::or_default(cfg.factor, {0}))
        for (int eta : Context::or_default(cfg.eta, {0}))
            for (double r : rs) {
                uint64_t seed = cfg.seed + 0x9e3779b97f4a7c15ULL * ++cell;
                p.cells.push_back([ctx, f, eta, r, window, trunc, tilts, seed] {
                    CellResult c;
                    const auto& cfg = ctx->cfg;
                    if (f >= ctx->G.num_factors()) throw ConfigError("grid.factor out of range");
                    auto K = first_return_kernel(ctx->solver, f, eta, r, window, trunc);
                    auto head = std::vector<std::string>{std::to_string(f), std::to_string(eta), fmt(r)};
                    auto row = [&](std::vector<std::string> tail) {
                        auto v = head;
                        v.insert(v.end(), tail.begin(), tail.end());
                        c.rows.push_back(v);
                    };
                    auto m = lambda_min(K);
                    row({"min", fmt_vec(m.u), fmt(m.lambda), fmt(m.hessian_min_eig), "", ""});
                    if (!m.positive_definite) c.failures.push_back("Hessian of lambda not positive definite at u*");
                    double s = std::min(1.0, 0.25 * moment_range(K));
                    std::mt19937_64 rng(seed);
                    for (int t = 0; t < tilts; ++t) {
                        Eigen::VectorXd u(K.dim);
                        for (int i = 0; i < K.dim; ++i) u[i] = s * (2.0 * unit_uniform(rng) - 1.0);
                        double h = min_eigenvalue(lambda_hessian(K, u));
                        row({"tilt", fmt_vec(u), fmt(lambda_at(K, u)), fmt(h), "", ""});
                        if (!(h > 0.0)) c.failures.push_back("Hessian of lambda not positive definite at a random tilt");
                    }
                    PlotSeries sl{"r=" + fmt(r) + " eta=" + std::to_string(eta), {}, {}, true};
                    for (int i = -10; i <= 10; ++i) {
                        Eigen::VectorXd u = Eigen::VectorXd::Zero(K.dim);
                        u[0] = s * i / 10.0;
                        double l = lambda_at(K, u);
                        row({"slice", fmt_vec(u), fmt(l), "", "", ""});
                        sl.x.push_back(u[0]);
                        sl.y.push_back(l);
                    }
                    c.series.push_back(sl);
                    for (auto& th : cfg.theta) {
                        if (static_cast<int>(th.size()) != K.dim) throw ConfigError("grid.theta dimension mismatch");
                        if (m.lambda >= 1.0) break;
                        Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(th.data(), K.dim);
                        auto lp = level_set_point(K, t);
                        double res = harmonicity_residual(K, lp.eig, 2);
                        row({"level", fmt_vec(lp.u), fmt(lp.eig.lambda), "", fmt(lp.angle_error), fmt(res)});
                        double tol = 1e-6 + 10.0 * K.max_defect() * K.size();
                        if (res > tol) c.failures.push_back("Martin formula not harmonic beyond the defect tolerance");
                    }
                    return c;
                });
            }
    return p;
}

inline Plan plan_degenerate(std::shared_ptr<Context> ctx) {
    Plan p;
    const auto& cfg = ctx->cfg;
    p.header = {"factor", "d", "eta", "radius", "epsilons", "min_lambda", "extrapolated", "verdict", "rank_note"};
    ctx->solver.walk().radius_by_fixed_point();
    std::vector<int> factors = cfg.factor;
    if (factors.empty())
        for (int f = 0; f < ctx->G.num_factors(); ++f)
            if (lattice_factor(ctx->G, f)) factors.push_back(f);
    auto ladder = Context::or_default(cfg.epsilon, {1e-2, 1e-3, 1e-4, 1e-5, 1e-6});
    double tol = cfg.tol.value_or(1e-4);
    int window = cfg.window.value_or(2), trunc = cfg.truncation.value_or(8);
    for (int f : factors)
        for (int eta : Context::or_default(cfg.eta, {0}))
            p.cells.push_back([ctx, f, eta, ladder, tol, window, trunc] {
                CellResult c;
                if (f >= ctx->G.num_factors()) throw ConfigError("grid.factor out of range");
                auto v = is_spectrally_degenerate(ctx->solver, f, eta, ladder, tol, tol, window, trunc);
                c.rows.push_back({std::to_string(f), std::to_string(v.d), std::to_string(eta), fmt(v.radius),
                                  fmt_list(v.epsilons), fmt_list(v.min_lambda), fmt(v.extrapolated), v.verdict_name(),
                                  v.rank_note});
                return c;
            });
    return p;
}

inline Plan plan_llt(std::shared_ptr<Context> ctx) {
    Plan p;
    const auto& cfg = ctx->cfg;
    p.header = {"factor",   "d",        "eta",      "r",       "n_max",      "slope",     "slope_early",
                "expected", "rel_error", "residual", "leakage", "lazy_shift", "within_tol"};
    p.plot_kind = "llt";
    std::vector<double> rs = cfg.r.empty() && cfg.r_frac.empty() ? std::vector<double>{1.0} : ctx->radii("llt");
    double tol = cfg.tol.value_or(0.05);
    int window = cfg.window.value_or(1), trunc = cfg.truncation.value_or(8);
    for (int f : Context::or_default(cfg.factor, {0}))
        for (int eta : Context::or_default(cfg.eta, {0}))
            for (double r : rs)
                for (int n : Context::or_default(cfg.n_max, {200}))
                    p.cells.push_back([ctx, f, eta, r, n, tol, window, trunc] {
                        CellResult c;
                        if (f >= ctx->G.num_factors()) throw ConfigError("grid.factor out of range");
                        auto K = first_return_kernel(ctx->solver, f, eta, r, window, trunc);
                        auto fit = local_limit_exponent(K, n);
                        double expected = -0.5 * K.dim, rel = std::abs(fit.slope - expected) / std::abs(expected);
                        c.rows.push_back({std::to_string(f), std::to_string(K.dim), std::to_string(eta), fmt(r),
                                          std::to_string(n), fmt(fit.slope), fmt(fit.slope_early), fmt(expected),
                                          fmt(rel), fmt(fit.residual), fmt(fit.leakage), fit.lazy_shift ? "1" : "0",
                                          rel <= tol ? "1" : "0"});
                        PlotSeries s{"d=" + std::to_string(K.dim) + " slope " + fmt(fit.slope).substr(0, 7), {}, {}, false};
                        for (int k = 1; k <= n; ++k)
                            if (fit.returns[k] > 0) s.x.push_back(k), s.y.push_back(fit.returns[k]);
                        c.series.push_back(s);
                        // fitted line through the tail, anchored at n_max
                        PlotSeries line{"fit", {double(n / 2), double(n)}, {}, true};
                        line.y = {fit.returns[n] * std::pow(0.5, fit.slope), fit.returns[n]};
                        c.series.push_back(line);
                        c.metrics.emplace_back("slope d=" + std::to_string(K.dim) + " n_max=" + std::to_string(n),
                                               fit.slope);
                        return c;
                    });
    return p;
}

inline Plan plan_derivative(std::shared_ptr<Context> ctx) {
    Plan p;
    p.header = {"r", "x", "y", "radius", "n_max", "fd_lower", "fd_upper", "sum_lower", "sum_upper", "overlap"};
    p.serial = !ctx->solver.adapted();
    auto rs = ctx->radii("derivative");
    for (double r : rs)
        for (auto& [x, y] : ctx->pairs())
            for (int R : Context::or_default(ctx->cfg.radius, {30}))
                for (int n : Context::or_default(ctx->cfg.n_max, {160}))
                    p.cells.push_back([ctx, r, x = x, y = y, R, n] {
                        CellResult c;
                        auto d = green_derivative(ctx->solver, r, x, y, R, n);
                        c.rows.push_back({fmt(r), ctx->G.format(x), ctx->G.format(y), std::to_string(R),
                                          std::to_string(n), fmt(d.finite_difference.lo), fmt(d.finite_difference.hi),
                                          fmt(d.green_sum.lo), fmt(d.green_sum.hi), d.overlap ? "1" : "0"});
                        if (!d.overlap) c.failures.push_back("Green-derivative identity brackets do not overlap at r=" + fmt(r));
                        return c;
                    });
    return p;
}

inline Plan plan_spheres(std::shared_ptr<Context> ctx) {
    Plan p;
    p.header = {"r", "k", "lower", "upper"};
    p.plot_kind = "decay";
    p.serial = !ctx->solver.adapted();
    auto rs = ctx->radii("spheres");
    int kmax = ctx->cfg.k_max.value_or(10);
    int n = Context::or_default(ctx->cfg.n_max, {160}).front();
    for (double r : rs)
        p.cells.push_back([ctx, r, kmax, n] {
            CellResult c;
            auto f = ctx->field(r, n);
            auto u = sphere_green_sum(*f, kmax);
            PlotSeries s{"r=" + fmt(r).substr(0, 8), {}, {}, true};
            std::vector<double> k, v;
            for (int i = 0; i <= kmax; ++i) {
                c.rows.push_back({fmt(r), std::to_string(i), fmt(u[i].lo), fmt(u[i].hi)});
                s.x.push_back(i);
                s.y.push_back(u[i].mid());
                if (i >= 1) k.push_back(i), v.push_back(u[i].mid());
            }
            c.series.push_back(s);
            if (k.size() >= 2) c.metrics.emplace_back("log_slope r=" + fmt(r), log_slope(k, v));
            return c;
        });
    return p;
}

inline Plan make_plan(std::shared_ptr<Context> ctx) {
    const std::string& e = ctx->cfg.experiment;
    if (e == "green") return plan_green(ctx);
    if (e == "restricted") return plan_restricted(ctx);
    if (e == "radius") return plan_radius(ctx);
    if (e == "floyd") return plan_floyd(ctx);
    if (e == "ancona") return plan_ancona(ctx);
    if (e == "parabolic") return plan_parabolic(ctx);
    if (e == "degenerate") return plan_degenerate(ctx);
    if (e == "llt") return plan_llt(ctx);
    if (e == "derivative") return plan_derivative(ctx);
    if (e == "spheres") return plan_spheres(ctx);
    throw ConfigError("unknown experiment '" + e + "'");
}

} // namespace detail

// Natural plot kind per experiment; empty when the experiment has no plot.
inline std::string plot_kind_for(const std::string& experiment) {
    if (experiment == "green") return "series";
    if (experiment == "ancona" || experiment == "spheres") return "decay";
    if (experiment == "parabolic") return "lambda";
    if (experiment == "llt") return "llt";
    return "";
}

// Dispatches the configured experiment over its grid. Rows keep grid order.
inline RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
    RunReport rep;
    rep.experiment = cfg.experiment;
    rep.name = cfg.name;
    rep.config_hash = config_hash(cfg);
    rep.version = version_string();
    rep.timing = opt.timing;
    auto ctx = std::make_shared<detail::Context>(cfg);
    auto plan = detail::make_plan(ctx);
    rep.header = plan.header;
    rep.header.push_back("wall_time");
    rep.plot_kind = plan.plot_kind;
    int threads = plan.serial ? 1 : worker_count(opt.threads);
    auto cells = run_cells(plan.cells, threads, cfg.wall_seconds, rep.cell_seconds);
    for (size_t i = 0; i < cells.size(); ++i) {
        for (auto& row : cells[i].rows) {
            auto r = row;
            r.push_back(opt.timing ? fmt(rep.cell_seconds[i]) : "");
            rep.rows.push_back(r);
        }
        for (auto& f : cells[i].failures) rep.failures.push_back(f);
        for (auto& m : cells[i].metrics) rep.metrics.push_back(m);
        for (auto& s : cells[i].series) rep.series.push_back(s);
    }
    if (plan.finalize) plan.finalize(rep);
    return rep;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string o = "\"";
    for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c);
    return o + "\"";
}

inline std::string render_csv(const RunReport& rep) {
    std::string o = "# config_sha256=" + rep.config_hash + " experiment=" + rep.experiment + " version=" + rep.version + "\n";
    auto line = [&](const std::vector<std::string>& v) {
        for (size_t i = 0; i < v.size(); ++i) o += (i ? "," : "") + csv_field(v[i]);
        o += "\n";
    };
    line(rep.header);
    for (auto& r : rep.rows) line(r);
    return o;
}

inline std::string render_summary(const RunReport& rep) {
    json j;
    j["experiment"] = rep.experiment;
    j["name"] = rep.name;
    j["config_sha256"] = rep.config_hash;
    j["version"] = rep.version;
    j["rows"] = rep.rows.size();
    j["verdict"] = rep.passed() ? "pass" : "fail";
    j["failures"] = rep.failures;
    json m = json::array();
    for (auto& [k, v] : rep.metrics) m.push_back({{"name", k}, {"value", std::isfinite(v) ? json(v) : json(fmt(v))}});
    j["metrics"] = m;
    if (rep.timing) j["cell_seconds"] = rep.cell_seconds;
    return j.dump(2) + "\n";
}

// Plot of a report. Kinds: decay (log y), lambda (linear), llt (log-log), series (linear).
// A kind that does not match the report is a usage error.
inline Plot emit_plot(const RunReport& rep, const std::string& kind) {
    if (kind.empty() || kind != rep.plot_kind)
        throw ConfigError("plot kind '" + kind + "' does not match experiment '" + rep.experiment + "'");
    Plot p;
    p.kind = kind;
    p.title = rep.name + " (" + rep.experiment + ")";
    p.series = rep.series;
    if (kind == "decay") {
        p.log_y = true;
        p.xlabel = rep.experiment == "spheres" ? "k" : (rep.rows.empty() ? "n" : (rep.rows[0][0] == "avoidance" ? "eta" : "n"));
        p.ylabel = rep.experiment == "spheres" ? "sphere sum u_k" : "value";
    } else if (kind == "lambda") {
        p.xlabel = "u_1";
        p.ylabel = "lambda(u)";
    } else if (kind == "llt") {
        p.log_x = p.log_y = true;
        p.xlabel = "n";
        p.ylabel = "p^(n)(0,0)";
        for (auto& [k, v] : rep.metrics)
            if (k.rfind("slope", 0) == 0) p.annotation += (p.annotation.empty() ? "" : "; ") + k + " = " + fmt(v).substr(0, 8);
    } else {
        p.xlabel = "r";
        p.ylabel = "Green lower bound";
    }
    return p;
}

// Writes <name>.csv, <name>.summary.json and optionally <name>.svg. Files are staged and renamed
// together, so a failed write leaves no partial outputs.
inline std::vector<std::filesystem::path> write_report(const RunReport& rep, const std::filesystem::path& dir, bool svg) {
    namespace fs = std::filesystem;
    std::vector<std::pair<fs::path, std::string>> files;
    files.emplace_back(dir / (rep.name + ".csv"), render_csv(rep));
    files.emplace_back(dir / (rep.name + ".summary.json"), render_summary(rep));
    if (svg) files.emplace_back(dir / (rep.name + ".svg"), render_svg(emit_plot(rep, rep.plot_kind), rep.config_hash));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ResourceError("cannot create output directory " + dir.string());
    std::vector<fs::path> staged;
    auto cleanup = [&] {
        for (auto& s : staged) fs::remove(s, ec);
    };
    for (auto& [path, text] : files) {
        fs::path tmp = path;
        tmp += ".partial";
        std::ofstream out(tmp, std::ios::binary);
        staged.push_back(tmp);
        if (!(out << text) || !(out.flush())) {
            cleanup();
            throw ResourceError("cannot write " + tmp.string());
        }
    }
    std::vector<fs::path> written;
    for (size_t i = 0; i < files.size(); ++i) {
        fs::rename(staged[i], files[i].first, ec);
        if (ec) {
            cleanup();
            for (auto& w : written) fs::remove(w, ec);
            throw ResourceError("cannot move " + staged[i].string() + " into place");
        }
        written.push_back(files[i].first);
    }
    return written;
}

} // namespace martinlab
