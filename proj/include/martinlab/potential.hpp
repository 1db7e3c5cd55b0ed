#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "free_product.hpp"
#include "interval.hpp"
#include "lattice.hpp"
#include "measure.hpp"

namespace martinlab {

struct GreenEstimate {
    double lower = 0.0;
    double upper = 0.0;
    double r = 0.0;
    int n_truncation = 0;
    std::string tail_bound_method;

    bool certified_upper() const { return std::isfinite(upper); }
    Interval interval() const { return {lower, upper}; }
};

struct SpectralRadiusEstimate {
    double lower = 1.0;
    double upper = std::numeric_limits<double>::infinity();
    double fit = 1.0;  // extrapolated point estimate
    std::vector<std::pair<int, double>> evidence;  // (n, p_{2n}(e)^{1/2n})
    bool lower_is_bound = false;  // true when lower is the trivial bound R >= 1
};

namespace detail {

// Least-squares fit of q_n = A + B/n + ... (degree deg in 1/n); returns A.
inline double ratio_limit(const std::vector<std::pair<int, double>>& q, int deg) {
    Eigen::MatrixXd M(static_cast<long>(q.size()), deg + 1);
    Eigen::VectorXd b(static_cast<long>(q.size()));
    for (size_t i = 0; i < q.size(); ++i) {
        double x = 1.0 / q[i].first, p = 1.0;
        for (int j = 0; j <= deg; ++j, p *= x) M(static_cast<long>(i), j) = p;
        b(static_cast<long>(i)) = q[i].second;
    }
    Eigen::VectorXd c = M.colPivHouseholderQr().solve(b);
    return c(0);
}

} // namespace detail

// Green-function machinery for a finitely supported symmetric measure. Adapted measures on free
// products use the exact first-passage engine; anything else falls back to convolution tables.
class GreenSolver {
public:
    explicit GreenSolver(FiniteMeasure mu, size_t budget = 4'000'000) : mu_(std::move(mu)), budget_(budget) {
        if (adapted_form(mu_)) walk_ = std::make_shared<FreeProductWalk>(mu_);
    }

    const FiniteMeasure& measure() const { return mu_; }
    const Group& group() const { return mu_.group(); }
    bool adapted() const { return walk_ != nullptr; }
    const FreeProductWalk& walk() const {
        if (!walk_) throw ConfigError("operation needs a measure adapted to the free product");
        return *walk_;
    }

    // mu^{*n}(g), n = 0..N; uses the representative min(g, g^-1) so results are symmetric bit-exactly.
    std::vector<double> coefficients(const GroupElement& g, int N) const {
        GroupElement gi = group().inverse(g);
        const GroupElement& c = gi < g ? gi : g;
        if (walk_) return walk_->coefficients(c, N);
        int J = std::max(1, mu_.max_jump());
        auto t = table(N, static_cast<int>((N * J + group().length(c) + 1) / 2));
        std::vector<double> out(N + 1);
        for (int n = 0; n <= N; ++n) out[n] = t->at(n, c);
        return out;
    }

    std::vector<double> returns(int N) const { return coefficients(group().identity(), N); }

    // Largest n_max that the convolution fallback can afford.
    int affordable_n_max(int wanted) const {
        if (walk_) return wanted;
        int J = std::max(1, mu_.max_jump());
        int n = 1;
        for (; n < wanted; ++n) {
            try {
                group().spheres((n + 2) * J, budget_ / 4);
            } catch (const ResourceError&) {
                break;
            }
        }
        return std::max(1, n - 1);
    }

    SpectralRadiusEstimate spectral_radius(int n_max) const {
        if (n_max < 2) throw ConfigError("spectral radius needs n_max >= 2");
        int N = 2 * n_max + 2;
        auto p = returns(N);
        SpectralRadiusEstimate est;
        std::vector<std::pair<int, double>> q;
        for (int n = 1; n <= n_max + 1; ++n) {
            double p2n = p[2 * n];
            if (p2n <= 0.0) continue;
            est.evidence.emplace_back(n, std::pow(p2n, 1.0 / (2.0 * n)));
            est.upper = std::min(est.upper, std::pow(p2n, -1.0 / (2.0 * n)));
            if (n <= n_max && p[2 * n + 2] > 0.0) {
                est.upper = std::min(est.upper, std::sqrt(p2n / p[2 * n + 2]));
                q.emplace_back(n, p[2 * n + 2] / p2n);
            }
        }
        // extrapolate q_n -> 1/R^2 on the tail half, with a margin from two fit degrees
        std::vector<std::pair<int, double>> tail;
        for (auto& e : q)
            if (e.first >= std::max(2, n_max / 2)) tail.push_back(e);
        double lower = 1.0;
        if (tail.size() >= 6) {
            double a3 = detail::ratio_limit(tail, 3), a4 = detail::ratio_limit(tail, 4);
            if (a3 > 0.0 && a4 > 0.0) {
                double R3 = 1.0 / std::sqrt(a3), R4 = 1.0 / std::sqrt(a4);
                est.fit = R3;
                lower = R3 - 3.0 * std::abs(R3 - R4) - 1e-12 * R3;
            }
        }
        est.lower_is_bound = !(lower > 1.0);
        est.lower = std::clamp(lower, 1.0, est.upper);
        if (est.fit < 1.0) est.fit = est.lower;
        return est;
    }

    // Radius estimate used for tail bounds (cached).
    const SpectralRadiusEstimate& reference_radius() const {
        std::lock_guard<std::mutex> lock(ref_mu_);
        if (!ref_) ref_ = spectral_radius(affordable_n_max(60));
        return *ref_;
    }

    // Bound on sum_{n>N} r^n mu^{*n}(g), uniform in g: mu^{*n}(g) <= p_{2 floor(n/2)}(e) and the
    // even return probabilities decay at most like R^{-2} per double step.
    double tail(double r, int N) const {
        const auto& R = reference_radius();
        double rho = 1.0 / R.lower;
        double q = r * rho;
        if (!(q < 1.0)) return std::numeric_limits<double>::infinity();
        int M = N / 2;
        double p2M = returns(2 * M)[2 * M];
        return p2M * std::pow(rho, -2.0 * M - 1.0) * std::pow(q, N + 1) / (1.0 - q);
    }

    // Bound on sum_{n>N} (n+1) r^n mu^{*n}(g).
    double weighted_tail(double r, int N) const {
        const auto& R = reference_radius();
        double rho = 1.0 / R.lower;
        double q = r * rho;
        if (!(q < 1.0)) return std::numeric_limits<double>::infinity();
        int M = N / 2;
        double p2M = returns(2 * M)[2 * M];
        double s = std::pow(q, N + 1) * ((N + 2) - (N + 1) * q) / ((1.0 - q) * (1.0 - q));
        return p2M * std::pow(rho, -2.0 * M - 1.0) * s;
    }

    std::string tail_method() const {
        return reference_radius().lower_is_bound ? "geometric(R>=1)" : "geometric(R-extrapolated)";
    }

    GreenEstimate green(double r, const GroupElement& x, const GroupElement& y, int n_max) const {
        if (!(r > 0.0)) throw DomainError("green needs r > 0");
        GroupElement w = group().multiply(group().inverse(x), y);
        int J = std::max(1, mu_.max_jump());
        if (n_max * J < group().length(w)) throw DomainError("n_max too small to reach y from x");
        auto c = coefficients(w, n_max);
        GreenEstimate g;
        g.r = r;
        g.n_truncation = n_max;
        double s = 0.0, p = 1.0;
        for (int n = 0; n <= n_max; ++n, p *= r) s += c[n] * p;
        double t = tail(r, n_max);
        g.lower = s * (1.0 - kRoundingPad);
        g.upper = (s + t) * (1.0 + kRoundingPad);
        g.tail_bound_method = std::isfinite(t) ? tail_method() : "uncertified upper";
        return g;
    }

    // K_r(x,y) = G_r(x,y) / G_r(e,y).
    Interval martin_kernel(double r, const GroupElement& x, const GroupElement& y, int n_max) const {
        if (x.is_identity()) return {1.0, 1.0};
        auto num = green(r, x, y, n_max), den = green(r, group().identity(), y, n_max);
        return num.interval() / den.interval();
    }

    // Convolution rows 0..N on ball(window). Entries at (n, g) are exact whenever
    // window >= (n J + |g|) / 2: a path from e to g in n steps never goes farther out.
    std::shared_ptr<const ConvolutionTable> table(int N, int window) const {
        std::lock_guard<std::mutex> lock(table_mu_);
        if (!table_ || static_cast<int>(table_->rows.size()) <= N || table_window_ < window) {
            int n = std::max(N, table_ ? static_cast<int>(table_->rows.size()) - 1 : 0);
            int w = std::max(window, table_window_);
            table_ = std::make_shared<ConvolutionTable>(convolution_powers(mu_, n, w, true, budget_));
            table_window_ = w;
        }
        return table_;
    }

private:
    FiniteMeasure mu_;
    size_t budget_;
    std::shared_ptr<FreeProductWalk> walk_;
    mutable std::mutex ref_mu_, table_mu_;
    mutable std::optional<SpectralRadiusEstimate> ref_;
    mutable std::shared_ptr<const ConvolutionTable> table_;
    mutable int table_window_ = 0;
};

// ---------------------------------------------------------------------------------------------
// Green values at a fixed r.

class GreenField {
public:
    virtual ~GreenField() = default;
    virtual double r() const = 0;
    virtual const Group& group() const = 0;
    virtual Interval at(const GroupElement& g) const = 0;  // G_r(e, g)
    virtual std::string method() const = 0;
    virtual bool certified() const = 0;

    Interval between(const GroupElement& x, const GroupElement& y) const {
        return at(group().multiply_unchecked(group().inverse(x), y));
    }

    // u_k = sum_{|x| = k} G_r(e,x) G_r(x,e), k = 0..kmax.
    virtual std::vector<Interval> sphere_sums(int kmax) const {
        auto sp = group().spheres(kmax);
        std::vector<Interval> out;
        for (auto& s : sp) {
            Interval acc(0.0);
            for (auto& x : s) acc += at(x) * at(group().inverse(x));
            out.push_back(acc);
        }
        return out;
    }
};

// Fields of adapted walks factor through G(e,e) and per-syllable first-passage values.
class FactorizedField : public GreenField {
public:
    explicit FactorizedField(const FreeProductWalk* walk) : walk_(walk) {}

    virtual Interval ee() const = 0;
    virtual Interval passage(int l, const std::vector<int>& v) const = 0;
    virtual void prefetch(int, const std::vector<std::vector<int>>&) const {}

    Interval factorized(const GroupElement& g) const {
        Interval v = ee();
        for (auto& [l, s] : walk_->split(g)) v *= passage(l, s);
        return v;
    }

    std::vector<Interval> sphere_sums(int kmax) const override {
        if (!walk_) return GreenField::sphere_sums(kmax);
        const int L = walk_->num_atomic();
        std::vector<std::vector<Interval>> w(L, std::vector<Interval>(kmax + 1, Interval(0.0)));
        for (int l = 0; l < L; ++l) {
            int d = walk_->lattice(l).dim;
            std::vector<std::vector<int>> pts;
            for (int m = 1; m <= kmax; ++m) {
                auto s = l1_sphere(d, m);
                pts.insert(pts.end(), s.begin(), s.end());
            }
            prefetch(l, pts);
            for (int m = 1; m <= kmax; ++m)
                for (auto& v : l1_sphere(d, m)) {
                    std::vector<int> nv(v);
                    for (int& c : nv) c = -c;
                    w[l][m] += passage(l, v) * passage(l, nv);
                }
        }
        std::vector<std::vector<Interval>> T(kmax + 1, std::vector<Interval>(L, Interval(0.0)));
        for (int k = 1; k <= kmax; ++k)
            for (int l = 0; l < L; ++l) {
                Interval acc(0.0);
                for (int m = 1; m <= k; ++m) {
                    Interval other(k - m == 0 ? 1.0 : 0.0);
                    for (int l2 = 0; l2 < L; ++l2)
                        if (l2 != l) other += T[k - m][l2];
                    acc += w[l][m] * other;
                }
                T[k][l] = acc;
            }
        Interval e2 = ee() * ee();
        std::vector<Interval> out;
        for (int k = 0; k <= kmax; ++k) {
            Interval tot(k == 0 ? 1.0 : 0.0);
            for (int l = 0; l < L; ++l) tot += T[k][l];
            out.push_back(e2 * tot);
        }
        return out;
    }

protected:
    const FreeProductWalk* walk_;
};

// Truncated power series plus geometric tail bound.
class SeriesField : public FactorizedField {
public:
    SeriesField(const GreenSolver& solver, double r, int n_max)
        : FactorizedField(solver.adapted() ? &solver.walk() : nullptr), solver_(solver), r_(r), N_(n_max) {
        tail_ = solver.tail(r, n_max);
        auto c = solver.returns(N_);
        double s = 0.0, p = 1.0;
        for (int n = 0; n <= N_; ++n, p *= r_) s += c[n] * p;
        ee_ = padded({s, s + tail_});
    }

    double r() const override { return r_; }
    const Group& group() const override { return solver_.group(); }
    std::string method() const override { return "series+" + solver_.tail_method(); }
    bool certified() const override { return std::isfinite(tail_); }
    double tail() const { return tail_; }

    Interval at(const GroupElement& g) const override {
        if (g.is_identity()) return ee_;
        auto c = solver_.coefficients(g, N_);
        double s = 0.0, p = 1.0;
        for (int n = 0; n <= N_; ++n, p *= r_) s += c[n] * p;
        return padded({s, s + tail_});
    }

    Interval ee() const override { return ee_; }

    Interval passage(int l, const std::vector<int>& v) const override {
        auto S = walk_->series(N_);
        auto f = walk_->passage_series(*S, l, v);
        double s = 0.0, p = 1.0;
        for (int n = 0; n <= N_; ++n, p *= r_) s += f[n] * p;
        // F = G(e,s) / G(e,e) with both sides bracketed
        Interval q = at(walk_->element_of(l, v)) / ee_;
        return {std::max(s * (1.0 - kRoundingPad), q.lo), std::max(s, q.hi)};
    }

private:
    const GreenSolver& solver_;
    double r_;
    int N_;
    double tail_;
    Interval ee_;
};

// Scalar fixed point at r; lattice first passages by Fourier quadrature.
class FixedPointField : public FactorizedField {
public:
    FixedPointField(const FreeProductWalk& walk, double r) : FactorizedField(&walk), fp_(walk.fixed_point(r)) {
        if (!fp_.exists)
            throw NumericalError("no convergent fixed point at r = " + std::to_string(r) + ": " + fp_.note);
    }

    double r() const override { return fp_.r; }
    const Group& group() const override { return walk_->group(); }
    std::string method() const override { return "fixed-point+quadrature"; }
    bool certified() const override { return fp_.certified_upper; }
    const FreeProductWalk::FixedPoint& fixed_point() const { return fp_; }

    Interval at(const GroupElement& g) const override { return factorized(g); }
    Interval ee() const override { return fp_.G; }

    void prefetch(int l, const std::vector<std::vector<int>>& pts) const override {
        std::vector<std::vector<int>> todo;
        {
            std::lock_guard<std::mutex> lock(mu_);
            for (auto& v : pts)
                if (!cache_.count({l, v})) todo.push_back(v);
        }
        if (todo.empty()) return;
        const auto& F = walk_->fourier(l);
        double zl = fp_.zeta[l].lo, zh = fp_.zeta[l].hi;
        auto lo = F.green_many(zl, todo), hi = F.green_many(zh, todo);
        double g0l = F.green0(zl), g0h = F.green0(zh);
        std::lock_guard<std::mutex> lock(mu_);
        for (size_t i = 0; i < todo.size(); ++i) {
            Interval v{lo[i] / g0l, hi[i] / g0h};
            if (v.lo > v.hi) std::swap(v.lo, v.hi);
            cache_[{l, todo[i]}] = v;
        }
    }

    Interval passage(int l, const std::vector<int>& v) const override {
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = cache_.find({l, v});
            if (it != cache_.end()) return it->second;
        }
        prefetch(l, {v});
        std::lock_guard<std::mutex> lock(mu_);
        return cache_.at({l, v});
    }

private:
    FreeProductWalk::FixedPoint fp_;
    mutable std::mutex mu_;
    mutable std::map<std::pair<int, std::vector<int>>, Interval> cache_;
};

// ---------------------------------------------------------------------------------------------
// Restricted Green functions G(x,y;A): intermediate points in the finite set A.

class RestrictedSolver {
public:
    RestrictedSolver(const FiniteMeasure& mu, double r, std::vector<GroupElement> A) : mu_(mu), r_(r) {
        std::sort(A.begin(), A.end());
        A.erase(std::unique(A.begin(), A.end()), A.end());
        A_ = std::move(A);
        for (size_t i = 0; i < A_.size(); ++i) index_[A_[i]] = static_cast<int>(i);
        const Group& g = mu_.group();
        const int n = static_cast<int>(A_.size());
        if (n == 0) return;
        std::vector<Eigen::Triplet<double>> trips;
        for (int i = 0; i < n; ++i) {
            trips.emplace_back(i, i, 1.0);
            for (auto& [s, m] : mu_.atoms()) {
                auto it = index_.find(g.multiply_unchecked(A_[i], s));
                if (it != index_.end()) trips.emplace_back(i, it->second, -r_ * m);
            }
        }
        Eigen::SparseMatrix<double> M(n, n);
        M.setFromTriplets(trips.begin(), trips.end());
        solver_.compute(M);
        if (solver_.info() != Eigen::Success) {
            divergent_ = true;
            return;
        }
        auto D = solver_.vectorD();
        for (int i = 0; i < n; ++i)
            if (!(D(i) > 0.0)) divergent_ = true;
    }

    bool divergent() const { return divergent_; }
    const std::vector<GroupElement>& set() const { return A_; }
    bool contains(const GroupElement& g) const { return index_.count(g) > 0; }

    double green(const GroupElement& x, const GroupElement& y) const {
        if (divergent_) throw NumericalError("restricted Green function diverges at r = " + std::to_string(r_));
        const Group& g = mu_.group();
        double val = (x == y ? 1.0 : 0.0) + r_ * mu_.mass(g.multiply_unchecked(g.inverse(x), y));
        if (A_.empty()) return val;
        const int n = static_cast<int>(A_.size());
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
        bool any = false;
        for (auto& [s, m] : mu_.atoms()) {
            // b with b^-1 y = s  <=>  b = y s^-1
            auto it = index_.find(g.multiply_unchecked(y, g.inverse(s)));
            if (it != index_.end()) {
                v(it->second) += r_ * m;
                any = true;
            }
        }
        if (!any) return val;
        Eigen::VectorXd w = solver_.solve(v);
        for (auto& [s, m] : mu_.atoms()) {
            auto it = index_.find(g.multiply_unchecked(x, s));
            if (it != index_.end()) val += r_ * m * w(it->second);
        }
        return val;
    }

private:
    const FiniteMeasure& mu_;
    double r_;
    std::vector<GroupElement> A_;
    std::unordered_map<GroupElement, int, ElementHash> index_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
    bool divergent_ = false;
};

inline GreenEstimate green_restricted(const FiniteMeasure& mu, double r, const GroupElement& x,
                                      const GroupElement& y, const std::vector<GroupElement>& A) {
    RestrictedSolver s(mu, r, A);
    GreenEstimate g;
    g.r = r;
    g.tail_bound_method = "linear-solve";
    if (s.divergent()) {
        g.lower = 0.0;
        g.upper = std::numeric_limits<double>::infinity();
        g.tail_bound_method = "divergent";
        return g;
    }
    g.lower = g.upper = s.green(x, y);
    return g;
}

// Path-sum oracle: exact partial sums over paths of length <= n_max, plus the unrestricted tail.
inline GreenEstimate green_restricted_series(const GreenSolver& solver, double r, const GroupElement& x,
                                             const GroupElement& y, const std::vector<GroupElement>& A,
                                             int n_max) {
    const auto& mu = solver.measure();
    const Group& g = mu.group();
    std::map<GroupElement, double> cur;
    double total = (x == y) ? 1.0 : 0.0;
    std::vector<GroupElement> Aset(A);
    std::sort(Aset.begin(), Aset.end());
    auto inA = [&](const GroupElement& e) { return std::binary_search(Aset.begin(), Aset.end(), e); };
    double rp = r;
    for (auto& [s, m] : mu.atoms()) {
        GroupElement z = g.multiply_unchecked(x, s);
        if (z == y) total += r * m;
        if (inA(z)) cur[z] += r * m;
    }
    for (int n = 2; n <= n_max; ++n) {
        std::map<GroupElement, double> nxt;
        for (auto& [a, w] : cur)
            for (auto& [s, m] : mu.atoms()) {
                GroupElement z = g.multiply_unchecked(a, s);
                if (z == y) total += w * r * m;
                if (inA(z)) nxt[z] += w * r * m;
            }
        cur = std::move(nxt);
        rp *= r;
    }
    GreenEstimate est;
    est.r = r;
    est.n_truncation = n_max;
    double t = solver.tail(r, n_max);
    est.lower = total * (1.0 - kRoundingPad);
    est.upper = (total + t) * (1.0 + kRoundingPad);
    est.tail_bound_method = std::isfinite(t) ? "path-sum+" + solver.tail_method() : "uncertified upper";
    return est;
}

// ---------------------------------------------------------------------------------------------

struct DerivativeCheck {
    Interval finite_difference;  // d/dr (r G_r(g,g'))
    Interval green_sum;          // sum_{g''} G_r(g,g'') G_r(g'',g')
    bool overlap = false;
};

// Both sides of d/dr(r G_r(g,g')) = sum_{g''} G_r(g,g'') G_r(g'',g').
inline DerivativeCheck green_derivative(const GreenSolver& solver, double r, const GroupElement& g,
                                        const GroupElement& gp, int ball_radius, int n_max) {
    const Group& G = solver.group();
    DerivativeCheck out;
    auto side = [&](double h) {
        auto hi = solver.green(r + h, g, gp, n_max), lo = solver.green(r - h, g, gp, n_max);
        double a = ((r + h) * hi.lower - (r - h) * lo.upper) / (2 * h);
        double b = ((r + h) * hi.upper - (r - h) * lo.lower) / (2 * h);
        return Interval{a, b};
    };
    double h = 1e-3 * r;
    Interval d1 = side(h), d2 = side(2 * h);
    // Richardson estimate of the O(h^2) truncation error, doubled for safety
    double trunc = 2.0 * std::abs(d1.mid() - d2.mid()) / 3.0;
    out.finite_difference = {d1.lo - trunc, d1.hi + trunc};

    // sum side: ball part + bound on the part outside the ball
    Interval ball_part(0.0);
    GroupElement w = G.multiply(G.inverse(g), gp);
    if (w.is_identity()) {
        SeriesField f(solver, r, n_max);
        auto u = f.sphere_sums(ball_radius);
        for (auto& v : u) ball_part += v;
    } else {
        SeriesField f(solver, r, n_max);
        for (auto& [x, d] : G.ball(ball_radius)) {
            GroupElement y = G.multiply_unchecked(g, x);
            ball_part += f.between(g, y) * f.between(y, gp);
        }
    }
    int J = std::max(1, solver.measure().max_jump());
    // g'' = g x with |x| > R needs >= ceil((R+1)/J) steps from g and >= ceil((R+1-|w|)/J) to g'
    int K1 = (ball_radius + 1 + J - 1) / J;
    int K2 = std::max(0, static_cast<int>((ball_radius + 1 - G.length(w) + J - 1) / J));
    auto c = solver.coefficients(w, n_max);
    double outside = 0.0, p = std::pow(r, K1 + K2);
    for (int m = K1 + K2; m <= n_max; ++m, p *= r) outside += (m - K1 - K2 + 1) * p * c[m];
    outside += solver.weighted_tail(r, n_max);
    out.green_sum = {ball_part.lo, ball_part.hi + outside};
    out.overlap = out.finite_difference.overlaps(out.green_sum);
    return out;
}

// u_k(r) = sum_{|x|=k} G_r(e,x)^2 for k = 0..kmax.
inline std::vector<Interval> sphere_green_sum(const GreenField& field, int kmax) {
    return field.sphere_sums(kmax);
}

// Elements of one factor with word length <= R, in enumeration order.
inline std::vector<GroupElement> factor_ball(const Group& G, int f, int R) {
    std::vector<GroupElement> out;
    const auto& fs = G.factor(f);
    if (fs.kind == FactorSpec::Kind::free_abelian) {
        for (auto& v : l1_ball(fs.rank, R)) out.push_back(G.factor_element(f, v));
    } else {
        Group single(GroupSpec{{fs}});
        for (auto& [e, d] : single.ball(R)) {
            GroupElement h;
            for (auto s : e.syl) {
                s.factor = f;
                h.syl.push_back(s);
            }
            out.push_back(h);
        }
    }
    return out;
}

// Fiber of the eta-neighbourhood of factor H: elements t with |t| <= eta and first syllable outside H.
inline std::vector<GroupElement> neighbourhood_fiber(const Group& G, int H, int eta) {
    std::vector<GroupElement> out;
    for (auto& [t, d] : G.ball(eta))
        if (t.is_identity() || t.syl.front().factor != H) out.push_back(t);
    return out;
}

struct ParabolicSumCurve {
    std::vector<int> k;
    std::vector<Interval> cumulative;
    std::vector<double> increment_ratio;  // Delta_k / Delta_{k-1} on midpoints
};

// Cumulative sums of G_r(e,g) G_r(g,e) over N_eta(H) intersected with ball(k).
inline ParabolicSumCurve parabolic_green_sum(const GreenField& field, int H, int eta, int kmax) {
    const Group& G = field.group();
    auto fiber = neighbourhood_fiber(G, H, eta);
    auto hs = factor_ball(G, H, kmax);
    std::vector<Interval> inc(kmax + 1, Interval(0.0));
    for (auto& t : fiber) {
        long lt = G.length(t);
        for (auto& h : hs) {
            long len = G.length(h) + lt;
            if (len > kmax) continue;
            GroupElement g = G.multiply_unchecked(h, t);
            inc[len] += field.at(g) * field.at(G.inverse(g));
        }
    }
    ParabolicSumCurve c;
    Interval acc(0.0);
    for (int k = 0; k <= kmax; ++k) {
        acc += inc[k];
        c.k.push_back(k);
        c.cumulative.push_back(acc);
        c.increment_ratio.push_back(k > 0 && inc[k - 1].mid() > 0 ? inc[k].mid() / inc[k - 1].mid() : 0.0);
    }
    return c;
}

} // namespace martinlab
