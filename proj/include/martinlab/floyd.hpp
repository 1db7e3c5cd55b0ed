#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "group.hpp"

namespace martinlab {

// Floyd function f(n) = a^{-n}, basepoint o, work ball radius around o.
struct FloydConfig {
    double a = 2.0;
    GroupElement o;
    int radius = 6;

    void validate() const {
        if (!(a > 1.0) || !std::isfinite(a)) throw ConfigError("Floyd base a must be > 1");
        if (radius < 1) throw ConfigError("Floyd work radius must be >= 1");
    }
};

struct FloydValue {
    double value = 0.0;           // shortest path inside the work ball
    double crossing_bound = 0.0;  // lower bound on any path that leaves the work ball
    bool exact = false;           // value <= crossing_bound
};

// Floyd-rescaled Cayley graph of ball(radius) around e with basepoint e. An edge costs
// a^{-min(|u|,|v|)}. Other basepoints are handled by left translation, which makes
// delta_{go}(gx, gy) = delta_o(x, y) hold bit-exactly.
class FloydSpace {
public:
    FloydSpace(const Group& G, double a, int radius) : group_(G), a_(a), radius_(radius) {
        if (!(a > 1.0)) throw ConfigError("Floyd base a must be > 1");
        auto ball = G.ball(radius);
        nodes_.reserve(ball.size());
        for (auto& [g, d] : ball) {
            index_[g] = static_cast<int>(nodes_.size());
            nodes_.push_back(g);
            len_.push_back(d);
        }
        auto gens = G.generators();
        adj_.resize(nodes_.size());
        for (size_t i = 0; i < nodes_.size(); ++i)
            for (auto& s : gens) {
                auto it = index_.find(G.multiply_unchecked(nodes_[i], s));
                if (it == index_.end()) continue;
                int j = it->second;
                adj_[i].emplace_back(j, std::pow(a_, -std::min(len_[i], len_[j])));
            }
        rows_.resize(nodes_.size());
        profiles_.resize(nodes_.size());
        std::map<std::pair<GroupElement, int>, int> classes;
        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (len_[i] != radius || nodes_[i].syl.empty()) continue;
            int f = nodes_[i].syl.back().factor;
            const auto& fs = G.factor(f);
            if (fs.kind != FactorSpec::Kind::free_abelian || fs.rank < 2) continue;
            Coset c = G.canonical(Coset{nodes_[i], f});
            auto [it, fresh] = classes.emplace(std::make_pair(c.rep, f), static_cast<int>(classes.size()));
            sphere_.emplace_back(static_cast<int>(i), it->second);
        }
        num_classes_ = static_cast<int>(classes.size());
    }

    const Group& group() const { return group_; }
    double a() const { return a_; }
    int radius() const { return radius_; }
    size_t size() const { return nodes_.size(); }
    const GroupElement& element(size_t i) const { return nodes_[i]; }

    std::optional<int> index(const GroupElement& g) const {
        auto it = index_.find(g);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    // Dijkstra row from node i (cached, thread-safe).
    std::shared_ptr<const std::vector<double>> row(int i) const {
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (rows_[i]) return rows_[i];
        }
        auto d = std::make_shared<std::vector<double>>(nodes_.size(), std::numeric_limits<double>::infinity());
        using Item = std::pair<double, int>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        (*d)[i] = 0.0;
        pq.emplace(0.0, i);
        while (!pq.empty()) {
            auto [du, u] = pq.top();
            pq.pop();
            if (du > (*d)[u]) continue;
            for (auto& [v, w] : adj_[u]) {
                double nd = du + w;
                if (nd < (*d)[v]) {
                    (*d)[v] = nd;
                    pq.emplace(nd, v);
                }
            }
        }
        std::lock_guard<std::mutex> lock(mu_);
        if (!rows_[i]) rows_[i] = d;
        return rows_[i];
    }

    // Lower bound on any path from node i to node j that leaves the ball. In a free product an
    // excursion outside the ball must come back through the same last-syllable coset, and only
    // cosets of Z^d factors with d >= 2 have a connected outside; tree-like factors force the
    // excursion to return to its exit point, which never shortens a path.
    double crossing_bound(int i, int j) const {
        auto pi = exit_profile(i), pj = exit_profile(j);
        double best = std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < pi->size(); ++c) best = std::min(best, (*pi)[c] + (*pj)[c]);
        return best + 2.0 * std::pow(a_, -radius_);
    }

    FloydValue distance(int i, int j) const {
        FloydValue v;
        if (i == j) {
            v.exact = true;
            return v;
        }
        v.value = (*row(i))[j];
        v.crossing_bound = crossing_bound(i, j);
        v.exact = v.value <= v.crossing_bound;
        return v;
    }

    // delta^f_o(x, y), computed as delta^f_e(o^-1 x, o^-1 y).
    FloydValue distance(const GroupElement& o, const GroupElement& x, const GroupElement& y) const {
        GroupElement oi = group_.inverse(o);
        auto i = index(group_.multiply(oi, x)), j = index(group_.multiply(oi, y));
        if (!i || !j) throw DomainError("point outside the Floyd work ball");
        return distance(*i, *j);
    }

private:
    Group group_;
    double a_;
    int radius_;
    std::vector<GroupElement> nodes_;
    std::vector<long> len_;
    std::unordered_map<GroupElement, int, ElementHash> index_;
    std::vector<std::vector<std::pair<int, double>>> adj_;
    mutable std::mutex mu_;
    mutable std::vector<std::shared_ptr<const std::vector<double>>> rows_;
    std::vector<std::pair<int, int>> sphere_;  // (node, outside class) on the outer sphere
    int num_classes_ = 0;
    mutable std::vector<std::shared_ptr<const std::vector<double>>> profiles_;

    // Per outside class, the cheapest inside path from node i to a sphere point of that class.
    std::shared_ptr<const std::vector<double>> exit_profile(int i) const {
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (profiles_[i]) return profiles_[i];
        }
        auto r = row(i);
        auto p = std::make_shared<std::vector<double>>(num_classes_, std::numeric_limits<double>::infinity());
        for (auto& [node, c] : sphere_) (*p)[c] = std::min((*p)[c], (*r)[node]);
        std::lock_guard<std::mutex> lock(mu_);
        if (!profiles_[i]) profiles_[i] = p;
        return profiles_[i];
    }
};

inline FloydValue floyd_distance(const Group& G, const FloydConfig& cfg, const GroupElement& x,
                                 const GroupElement& y) {
    cfg.validate();
    FloydSpace space(G, cfg.a, cfg.radius);
    return space.distance(cfg.o, x, y);
}

struct VisibilityCheck {
    double lhs = 0.0;  // delta^f_o(x, y)
    double rhs = 0.0;  // 4 d a^{-d} + 2 a^{-d} / (1 - 1/a)
    long d = 0;        // distance from o to the geodesic [x, y]
    bool holds() const { return lhs <= rhs; }
};

inline VisibilityCheck visibility_bound_check(const FloydSpace& space, const GroupElement& o,
                                              const GroupElement& x, const GroupElement& y) {
    const Group& G = space.group();
    VisibilityCheck v;
    v.lhs = space.distance(o, x, y).value;
    long d = std::numeric_limits<long>::max();
    for (auto& p : G.geodesic(x, y)) d = std::min(d, G.distance(o, p));
    v.d = d;
    double a = space.a(), ad = std::pow(a, -static_cast<double>(d));
    v.rhs = 4.0 * static_cast<double>(d) * ad + 2.0 * ad / (1.0 - 1.0 / a);
    return v;
}

struct FloydAudit {
    long symmetry = 0, identity = 0, triangle = 0, visibility = 0;
    long inexact = 0;  // pairs whose in-ball value is not certified by the crossing bound
    long pairs = 0;
    long violations() const { return symmetry + identity + triangle + visibility; }
};

// Cayley graphs of free products of free groups and copies of Z are trees.
inline bool cayley_tree(const Group& G) {
    for (int f = 0; f < G.num_factors(); ++f)
        if (G.factor(f).kind == FactorSpec::Kind::free_abelian && G.factor(f).rank > 1) return false;
    return true;
}

// Exhaustive metric axioms over the work ball and the visibility bound at o = e for every pair.
// On trees the geodesic is unique and its distance to e is the Gromov product
// (|x| + |y| - |x^-1 y|) / 2; otherwise visibility_bound_check is used pair by pair.
inline FloydAudit floyd_audit(const FloydSpace& space) {
    const Group& G = space.group();
    const int n = static_cast<int>(space.size());
    std::vector<std::shared_ptr<const std::vector<double>>> D(n);
    for (int i = 0; i < n; ++i) D[i] = space.row(i);
    FloydAudit out;
    for (int i = 0; i < n; ++i) {
        const double* Di = D[i]->data();
        for (int j = 0; j < n; ++j) {
            const double* Dj = D[j]->data();
            if (Di[j] != Dj[i]) ++out.symmetry;
            if ((i == j) != (Di[j] == 0.0)) ++out.identity;
            if (i != j && Di[j] > space.crossing_bound(i, j)) ++out.inexact;
            const double bound = Di[j] + 1e-15;
            long t = 0;
            for (int k = 0; k < n; ++k) t += Di[k] > bound + Dj[k];
            out.triangle += t;
        }
    }
    const bool tree = cayley_tree(G);
    const double a = space.a();
    for (int i = 0; i < n; ++i) {
        const auto& x = space.element(i);
        GroupElement xi = G.inverse(x);
        long lx = G.length(x);
        for (int j = 0; j < n; ++j) {
            ++out.pairs;
            const auto& y = space.element(j);
            if (!tree) {
                out.visibility += !visibility_bound_check(space, G.identity(), x, y).holds();
                continue;
            }
            long d = (lx + G.length(y) - G.length(G.multiply_unchecked(xi, y))) / 2;
            double ad = std::pow(a, -static_cast<double>(d));
            double rhs = 4.0 * static_cast<double>(d) * ad + 2.0 * ad / (1.0 - 1.0 / a);
            out.visibility += (*D[i])[j] > rhs;
        }
    }
    return out;
}

// (epsilon, eta)-transition point test on a geodesic path. The eta-interval around alpha[index]
// is clipped to the path. The point is deep if a single factor coset has every interval point
// within distance epsilon; every such coset meets ball(alpha[index], epsilon), so the
// candidates are enumerated from that ball.
inline bool is_transition_point(const Group& G, const std::vector<GroupElement>& alpha, int index, int epsilon,
                                int eta) {
    if (index < 0 || index >= static_cast<int>(alpha.size())) throw DomainError("path index out of range");
    int lo = std::max(0, index - eta), hi = std::min(static_cast<int>(alpha.size()) - 1, index + eta);
    const GroupElement& p = alpha[index];
    std::set<std::pair<GroupElement, int>> seen;
    for (auto& [b, d] : G.ball(epsilon)) {
        GroupElement q = G.multiply_unchecked(p, b);
        for (int f = 0; f < G.num_factors(); ++f) {
            Coset c = G.canonical(Coset{q, f});
            if (!seen.insert({c.rep, f}).second) continue;
            bool deep = true;
            for (int j = lo; j <= hi && deep; ++j) deep = G.project_to_coset(alpha[j], c).distance <= epsilon;
            if (deep) return false;
        }
    }
    return true;
}

// Indices y = alpha[i] with delta^f_y(alpha[j], alpha[k]) >= delta for all j <= i <= k, j < k.
inline std::vector<int> floyd_transition_set(const FloydSpace& space, const std::vector<GroupElement>& alpha,
                                             double delta) {
    std::vector<int> out;
    const int L = static_cast<int>(alpha.size());
    for (int i = 0; i < L; ++i) {
        bool ok = true;
        for (int j = 0; j <= i && ok; ++j)
            for (int k = std::max(i, j + 1); k < L && ok; ++k)
                ok = space.distance(alpha[i], alpha[j], alpha[k]).value >= delta;
        if (ok) out.push_back(i);
    }
    return out;
}

// Number of candidates z with delta^f_z(x, y) >= delta and delta^f_z(x', y') >= delta.
inline int fellow_travel_count(const FloydSpace& space, const GroupElement& x, const GroupElement& y,
                               const GroupElement& xp, const GroupElement& yp, double delta,
                               const std::vector<GroupElement>& candidates) {
    int n = 0;
    for (auto& z : candidates)
        if (space.distance(z, x, y).value >= delta && space.distance(z, xp, yp).value >= delta) ++n;
    return n;
}

// Smallest delta^f_y(e, g) over geodesics [e, g] with |g| <= R and their (eps, eta)-transition
// points y. Translation invariance reduces all geodesics in a ball to those starting at e.
struct TransitionFloor {
    double floor = std::numeric_limits<double>::infinity();
    long geodesics = 0;
    long transition_points = 0;
    bool exact = true;
};

inline TransitionFloor transition_floyd_floor(const FloydSpace& space, int R, int epsilon, int eta) {
    const Group& G = space.group();
    TransitionFloor t;
    for (auto& [g, d] : G.ball(R)) {
        if (d == 0) continue;
        auto alpha = G.geodesic(G.identity(), g);
        ++t.geodesics;
        for (int i = 0; i < static_cast<int>(alpha.size()); ++i) {
            if (!is_transition_point(G, alpha, i, epsilon, eta)) continue;
            ++t.transition_points;
            auto v = space.distance(alpha[i], G.identity(), g);
            t.floor = std::min(t.floor, v.value);
            t.exact = t.exact && v.exact;
        }
    }
    return t;
}

} // namespace martinlab
