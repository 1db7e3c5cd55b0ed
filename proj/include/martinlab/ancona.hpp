#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "floyd.hpp"
#include "interval.hpp"
#include "potential.hpp"

namespace martinlab {

// G_r(x,z) / (G_r(x,y) G_r(y,z)).
inline Interval weak_ancona_ratio(const GreenField& f, const GroupElement& x, const GroupElement& y,
                                  const GroupElement& z) {
    return f.between(x, z) / (f.between(x, y) * f.between(y, z));
}

// The half that always holds: G(x,y) G(y,z) <= G(e,e) G(x,z), i.e. ratio >= 1 / G(e,e).
inline bool weak_ancona_lower_half(const GreenField& f, const Interval& ratio) {
    return ratio.hi * f.at(f.group().identity()).hi >= 1.0 - 1e-9;
}

// |x - 1| over an interval.
inline Interval distance_to_one(const Interval& q) {
    if (q.contains(1.0)) return {0.0, std::max(1.0 - q.lo, q.hi - 1.0)};
    if (q.hi < 1.0) return {1.0 - q.hi, 1.0 - q.lo};
    return {q.lo - 1.0, q.hi - 1.0};
}

// |G(x,y) G(x',y') / (G(x,y') G(x',y)) - 1| from a Green field.
inline Interval strong_ancona_defect(const GreenField& f, const GroupElement& x, const GroupElement& y,
                                     const GroupElement& xp, const GroupElement& yp) {
    if (x == xp || y == yp) return {0.0, 0.0};
    Interval q = (f.between(x, y) * f.between(xp, yp)) / (f.between(x, yp) * f.between(xp, y));
    return distance_to_one(q);
}

// Union of the w-neighbourhoods of the given points.
inline std::vector<GroupElement> tube(const Group& G, const std::vector<GroupElement>& points, int w) {
    std::set<GroupElement> out;
    auto b = G.ball(w);
    for (auto& p : points)
        for (auto& [e, d] : b) out.insert(G.multiply_unchecked(p, e));
    return {out.begin(), out.end()};
}

// Vertices of the four geodesics joining {x, x'} to {y, y'}.
inline std::vector<GroupElement> configuration_skeleton(const Group& G, const GroupElement& x, const GroupElement& y,
                                                        const GroupElement& xp, const GroupElement& yp) {
    std::set<GroupElement> pts;
    for (auto& [a, b] : std::vector<std::pair<GroupElement, GroupElement>>{{x, y}, {xp, yp}, {x, yp}, {xp, y}})
        for (auto& p : G.geodesic(a, b)) pts.insert(p);
    return {pts.begin(), pts.end()};
}

struct TubeDefect {
    double defect = 0.0;      // at the widest tube
    double previous = 0.0;    // at the next narrower tube
    double heuristic_error = 0.0;
    int width = 0;
    size_t tube_size = 0;
};

// Strong-Ancona defect for measures without a closed Green engine: Green values restricted to a
// tube around the configuration, widened until the defect settles. The settling test is a
// heuristic; restricted values are lower bounds that increase with the tube.
inline TubeDefect strong_ancona_defect_tube(const FiniteMeasure& mu, double r, const GroupElement& x,
                                            const GroupElement& y, const GroupElement& xp, const GroupElement& yp,
                                            int w0, int w1) {
    const Group& G = mu.group();
    TubeDefect out;
    if (x == xp || y == yp) return out;
    auto skel = configuration_skeleton(G, x, y, xp, yp);
    for (int w = w0; w <= w1; ++w) {
        auto T = tube(G, skel, w);
        RestrictedSolver s(mu, r, T);
        if (s.divergent()) throw NumericalError("restricted Green function diverges on the tube");
        double q = s.green(x, y) * s.green(xp, yp) / (s.green(x, yp) * s.green(xp, y));
        out.previous = out.defect;
        out.defect = std::abs(q - 1.0);
        out.width = w;
        out.tube_size = T.size();
    }
    out.heuristic_error = w1 > w0 ? std::abs(out.defect - out.previous) : std::numeric_limits<double>::infinity();
    return out;
}

// Prefix family on F_2: x, x' fixed near e, y, y' = (common prefix of length n) * (distinct tails).
struct PrefixConfiguration {
    int n = 0;
    GroupElement x, y, xp, yp;
};

inline std::vector<PrefixConfiguration> prefix_family(const Group& G, int n_min, int n_max) {
    if (G.num_factors() != 1 || G.factor(0).kind != FactorSpec::Kind::free || G.factor(0).rank < 2)
        throw ConfigError("prefix family needs a free group of rank >= 2");
    std::vector<PrefixConfiguration> out;
    for (int n = n_min; n <= n_max; ++n) {
        std::vector<int> core;
        for (int i = 0; i < n; ++i) core.push_back(i % 2 ? 2 : 1);
        PrefixConfiguration c;
        c.n = n;
        c.x = G.factor_element(0, {-2, -2});
        c.xp = G.factor_element(0, {-1, 2});
        auto y = core, yp = core;
        y.insert(y.end(), {core.back() == 1 ? 1 : 2, core.back() == 1 ? 1 : 2});
        std::vector<int> tail = core.back() == 2 ? std::vector<int>{1, -2} : std::vector<int>{-2, 1};
        yp.insert(yp.end(), tail.begin(), tail.end());
        c.y = G.factor_element(0, y);
        c.yp = G.factor_element(0, yp);
        out.push_back(c);
    }
    return out;
}

// Least-squares slope of log(values) against k.
inline double log_slope(const std::vector<double>& k, const std::vector<double>& v) {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < k.size(); ++i) {
        if (!(v[i] > 0.0)) continue;
        double y = std::log(v[i]);
        n += 1;
        sx += k[i];
        sy += y;
        sxx += k[i] * k[i];
        sxy += k[i] * y;
    }
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct AvoidanceCurve {
    std::vector<int> eta;
    std::vector<double> value;            // G(x, y; window minus B_eta(z))
    std::vector<double> value_enlarged;   // same with the window enlarged
    int window = 0, window_enlarged = 0;

    bool nonincreasing() const {
        for (size_t i = 1; i < value.size(); ++i)
            if (value[i] > value[i - 1] * (1 + 1e-12) + 1e-300) return false;
        return true;
    }

    // Enlarging the window can only add paths.
    bool window_monotone() const {
        for (size_t i = 0; i < value.size(); ++i)
            if (value_enlarged[i] < value[i] * (1 - 1e-12)) return false;
        return true;
    }

    // Concavity of eta -> log value over the extended reals: once the value hits 0 it stays 0,
    // and every second difference among positive values is <= tol.
    bool log_concave(double tol = 1e-9) const {
        bool zero_seen = false;
        for (double v : value) {
            if (v <= 0.0) zero_seen = true;
            else if (zero_seen) return false;
        }
        for (size_t i = 2; i < value.size(); ++i) {
            if (value[i] <= 0.0) break;
            double d2 = std::log(value[i]) - 2 * std::log(value[i - 1]) + std::log(value[i - 2]);
            if (d2 > tol) return false;
        }
        return true;
    }
};

// G(x, y; B_eta(z)^c) with the complement cut to ball(z, window). Paths through the cut-off
// region are dropped, so the values are lower bounds; the enlarged window is the diagnostic.
inline AvoidanceCurve avoidance_decay(const FiniteMeasure& mu, double r, const GroupElement& x,
                                      const GroupElement& y, const GroupElement& z, const std::vector<int>& etas,
                                      int window, int enlarge = 2) {
    const Group& G = mu.group();
    if (G.distance(z, x) > window || G.distance(z, y) > window)
        throw DomainError("avoidance window must contain x and y");
    AvoidanceCurve c;
    c.window = window;
    c.window_enlarged = window + enlarge;
    auto big = G.ball(c.window_enlarged);
    for (int eta : etas) {
        for (int pass = 0; pass < 2; ++pass) {
            int W = pass == 0 ? window : c.window_enlarged;
            std::vector<GroupElement> A;
            for (auto& [b, d] : big)
                if (d > eta && d <= W) A.push_back(G.multiply_unchecked(z, b));
            RestrictedSolver s(mu, r, A);
            if (s.divergent()) throw NumericalError("restricted Green function diverges in avoidance window");
            double v = s.green(x, y);
            (pass == 0 ? c.value : c.value_enlarged).push_back(v);
        }
        c.eta.push_back(eta);
    }
    return c;
}

// ---------------------------------------------------------------------------------------------
// Scan over midpoint transition configurations.

struct AnconaRow {
    std::string id;
    std::string kind;  // weak | strong
    double r = 0.0;
    int n = 0;         // |x| = |z| for weak rows, prefix length for strong rows
    Interval value;
    bool certified = false;
};

struct AnconaScanReport {
    std::vector<AnconaRow> rows;

    // Smallest C with every weak ratio bracket inside [1/C, C], restricted to n <= n_cap.
    double weak_constant(int n_cap = std::numeric_limits<int>::max()) const {
        double C = 1.0;
        for (auto& r : rows) {
            if (r.kind != "weak" || r.n > n_cap) continue;
            C = std::max({C, r.value.hi, 1.0 / r.value.lo});
        }
        return C;
    }
};

// Pairs (x, z) with |x| = |z| = n, e on the geodesic [x, z] and e an (0, 1)-transition point.
// At most `limit` endpoints per side are taken, evenly spaced in enumeration order.
inline std::vector<std::pair<GroupElement, GroupElement>> midpoint_configurations(const Group& G, int n,
                                                                                  int limit) {
    auto sp = G.spheres(n);
    const auto& S = sp[n];
    std::vector<GroupElement> pick;
    size_t step = std::max<size_t>(1, S.size() / static_cast<size_t>(std::max(1, limit)));
    for (size_t i = 0; i < S.size() && static_cast<int>(pick.size()) < limit; i += step) pick.push_back(S[i]);
    std::vector<std::pair<GroupElement, GroupElement>> out;
    for (auto& x : pick)
        for (auto& z : pick) {
            if (G.distance(x, z) != 2L * n) continue;
            auto alpha = G.geodesic(x, z);
            if (!alpha[n].is_identity()) continue;
            if (!is_transition_point(G, alpha, n, 0, 1)) continue;
            out.emplace_back(x, z);
        }
    return out;
}

inline void weak_ancona_scan(const GreenField& f, int n_max, int limit, AnconaScanReport& rep) {
    const Group& G = f.group();
    for (int n = 1; n <= n_max; ++n) {
        int k = 0;
        for (auto& [x, z] : midpoint_configurations(G, n, limit)) {
            AnconaRow row;
            row.id = G.format(x) + "|e|" + G.format(z);
            row.kind = "weak";
            row.r = f.r();
            row.n = n;
            row.value = weak_ancona_ratio(f, x, G.identity(), z);
            row.certified = f.certified();
            rep.rows.push_back(row);
            ++k;
        }
    }
}

} // namespace martinlab
