#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "interval.hpp"
#include "lattice.hpp"
#include "measure.hpp"

namespace martinlab {

// Random walk driven by an adapted measure on a free product of lattices
//   mu = m0 delta_e + sum_l alpha_l mu_l.
// Excursions from e into factor l return with generating function
//   X_l = (1 - E_l) U_l(zeta_l),  zeta_l = r alpha_l / (1 - E_l),  E_l = r m0 + sum_{k != l} X_k,
// where U_l is the first-return function of mu_l. Then G(e,e) = 1 / (1 - r m0 - sum_l X_l) and
// G(e, s_1...s_m) = G(e,e) prod_j F_{l_j}(0 -> s_j | zeta_{l_j}) with F_l the lattice first passage.
class FreeProductWalk {
public:
    explicit FreeProductWalk(const FiniteMeasure& mu) : group_(mu.group()) {
        auto f = adapted_form(mu);
        if (!f) throw ConfigError("measure is not adapted to the free product decomposition");
        form_ = *f;
        for (auto& lf : form_.factors) walks_.push_back(LatticeWalk{lf.dim, lf.steps});
    }

    const Group& group() const { return group_; }
    const AdaptedForm& form() const { return form_; }
    int num_atomic() const { return static_cast<int>(form_.factors.size()); }
    const LatticeWalk& lattice(int l) const { return walks_.at(l); }

    std::vector<std::pair<int, std::vector<int>>> split(const GroupElement& g) const {
        return atomic_syllables(group_, form_, g);
    }

    // Group element of an atomic syllable.
    GroupElement element_of(int l, const std::vector<int>& v) const {
        const auto& lf = form_.factors[l];
        if (lf.letter == 0) return group_.factor_element(lf.source_factor, v);
        std::vector<int> w(static_cast<size_t>(std::abs(v[0])), v[0] > 0 ? lf.letter : -lf.letter);
        return group_.factor_element(lf.source_factor, w);
    }

    // ---- exact power series in z ----

    struct Series {
        int N = 0;
        std::vector<double> G;                                    // G(e,e|z)
        std::vector<std::vector<double>> X, E, zeta;              // per atomic factor
        std::vector<std::vector<std::vector<double>>> zeta_pow;  // [l][j][n]
    };

    std::shared_ptr<const Series> series(int N) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = series_cache_.lower_bound(N);
        if (it != series_cache_.end() && it->first == N) return it->second;
        auto s = std::make_shared<Series>(build_series(N));
        series_cache_[N] = s;
        return s;
    }

    // mu^{*n}(g) for n = 0..N.
    std::vector<double> coefficients(const GroupElement& g, int N) const {
        auto S = series(N);
        std::vector<double> c = S->G;
        for (auto& [l, v] : split(g)) c = series::mul(c, passage_series(*S, l, v), N);
        return c;
    }

    // Coefficients of the first-passage function F(e -> s) for an atomic syllable.
    std::vector<double> passage_series(const Series& S, int l, const std::vector<int>& v) const {
        int N = S.N;
        std::vector<double> f = lattice_passage(l, v, N);
        std::vector<double> out(N + 1, 0.0);
        for (int j = 0; j <= N; ++j) {
            if (f[j] == 0.0) continue;
            const auto& P = S.zeta_pow[l][j];
            for (int n = 0; n <= N; ++n) out[n] += f[j] * P[n];
        }
        return out;
    }

    // Lattice first-passage series F_l(0 -> v | t) = G_l(0,v|t) / G_l(0,0|t), coefficients 0..N.
    std::vector<double> lattice_passage(int l, const std::vector<int>& v, int N) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto key = std::make_pair(l, v);
        auto it = passage_cache_.find(key);
        if (it != passage_cache_.end() && static_cast<int>(it->second.size()) > N)
            return {it->second.begin(), it->second.begin() + N + 1};
        auto p = lattice_series(walks_[l], N, {std::vector<int>(walks_[l].dim, 0), v});
        auto f = series::div(p[1], p[0], N);
        passage_cache_[key] = f;
        return f;
    }

    // Lattice return series p^{(l)}_n(0), n <= N.
    std::vector<double> lattice_returns(int l, int N) const {
        return lattice_series(walks_[l], N, {std::vector<int>(walks_[l].dim, 0)})[0];
    }

    // ---- fixed r ----

    struct FixedPoint {
        double r = 0.0;
        bool exists = false;
        bool certified_upper = false;
        int iterations = 0;
        std::vector<double> X_lo, X_hi;
        std::vector<Interval> zeta;  // per atomic factor
        Interval E_total;            // r m0 + sum X
        Interval G;                  // G(e,e)
        double quadrature_error = 0.0;
        std::string note;
    };

    const LatticeFourier& fourier(int l) const {
        std::lock_guard<std::mutex> lock(mu_);
        if (fourier_.empty()) fourier_.resize(walks_.size());
        if (!fourier_[l]) fourier_[l] = std::make_shared<LatticeFourier>(walks_[l]);
        return *fourier_[l];
    }

    double U(int l, double t) const { return 1.0 - 1.0 / fourier(l).green0(t); }

    FixedPoint fixed_point(double r, int max_iter = 2'000'000) const {
        const int L = num_atomic();
        FixedPoint fp;
        fp.r = r;
        std::vector<double> X(L, 0.0), Xn(L, 0.0);
        auto apply = [&](const std::vector<double>& x, std::vector<double>& out) -> bool {
            double tot = 0.0;
            for (double v : x) tot += v;
            for (int l = 0; l < L; ++l) {
                double El = r * form_.m0 + tot - x[l];
                if (!(El < 1.0)) return false;
                double z = r * form_.factors[l].alpha / (1.0 - El);
                if (!(z < 1.0)) return false;
                out[l] = (1.0 - El) * U(l, z);
            }
            return true;
        };
        int it = 0;
        double last = std::numeric_limits<double>::infinity();
        for (; it < max_iter; ++it) {
            if (!apply(X, Xn)) {
                fp.exists = false;
                fp.iterations = it;
                fp.note = "iteration left the convergence domain (r beyond the spectral radius)";
                return fp;
            }
            double diff = 0.0, scale = 0.0;
            for (int l = 0; l < L; ++l) {
                diff = std::max(diff, std::abs(Xn[l] - X[l]));
                scale = std::max(scale, std::abs(Xn[l]));
            }
            X.swap(Xn);
            if (diff <= 4e-16 * scale) break;
            // rounding can leave a last-ulp cycle; stop once the steps no longer shrink
            if (diff <= 1e-14 * scale && diff >= last) break;
            last = diff;
        }
        fp.iterations = it;
        if (it == max_iter) {
            fp.note = "fixed-point iteration did not settle";
            return fp;
        }
        fp.exists = true;
        fp.X_lo = X;
        // upper bracket: a super-solution T(Xbar) <= Xbar dominates the minimal fixed point
        fp.X_hi = X;
        for (double kappa : {1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
            std::vector<double> Xb(L), Tb(L);
            for (int l = 0; l < L; ++l) Xb[l] = X[l] * (1.0 + kappa) + kappa * 1e-3;
            if (!apply(Xb, Tb)) break;
            bool ok = true;
            for (int l = 0; l < L; ++l) ok = ok && Tb[l] <= Xb[l];
            if (ok) {
                fp.X_hi = Xb;
                fp.certified_upper = true;
                break;
            }
        }
        if (!fp.certified_upper) fp.note = "no super-solution found; upper bracket equals lower";
        double lo = r * form_.m0, hi = r * form_.m0;
        for (int l = 0; l < L; ++l) {
            lo += fp.X_lo[l];
            hi += fp.X_hi[l];
        }
        fp.E_total = {lo, hi};
        if (!(hi < 1.0)) {
            fp.exists = false;
            fp.note = "G(e,e) diverges";
            return fp;
        }
        fp.G = {1.0 / (1.0 - lo), 1.0 / (1.0 - hi)};
        fp.zeta.resize(L);
        for (int l = 0; l < L; ++l) {
            double zl = r * form_.factors[l].alpha / (1.0 - (lo - fp.X_lo[l]));
            double zh = r * form_.factors[l].alpha / (1.0 - (hi - fp.X_hi[l]));
            fp.zeta[l] = {zl, zh};
            const auto& F = fourier(l);
            fp.quadrature_error = std::max(fp.quadrature_error, F.green0_error(zh) / F.green0(zh));
        }
        return fp;
    }

    // Loop weight E_l = r m0 + sum_{k != l} X_k at the fixed point (lower/upper).
    Interval loops(const FixedPoint& fp, int l) const {
        return {fp.E_total.lo - fp.X_lo[l], fp.E_total.hi - fp.X_hi[l]};
    }

    // Largest r found with a convergent fixed point (cached); symmetric walks have R >= 1.
    // Iterations are capped near the singularity, so the result errs on the low side.
    double radius_by_fixed_point() const {
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (radius_ > 0.0) return radius_;
        }
        double hi = 2.0;
        while (fixed_point(hi, 5'000).exists) {
            hi *= 2.0;
            if (hi > 1e6) throw NumericalError("fixed point exists beyond r = 1e6");
        }
        double R = radius_by_fixed_point(1.0, hi, 1e-9, 5'000);
        std::lock_guard<std::mutex> lock(mu_);
        radius_ = R;
        return R;
    }

    // Smallest r at which the fixed point fails, by bisection on [lo, hi].
    double radius_by_fixed_point(double lo, double hi, double tol, int max_iter = 2'000'000) const {
        while (hi - lo > tol * hi) {
            double mid = 0.5 * (lo + hi);
            if (fixed_point(mid, max_iter).exists) lo = mid;
            else hi = mid;
        }
        return lo;
    }

private:
    Series build_series(int N) const {
        const int L = num_atomic();
        Series S;
        S.N = N;
        std::vector<std::vector<double>> u(L);
        for (int l = 0; l < L; ++l) {
            auto g = lattice_returns(l, N);
            std::vector<double> one(N + 1, 0.0);
            one[0] = 1.0;
            auto inv = series::div(one, g, N);
            u[l].assign(N + 1, 0.0);
            for (int n = 1; n <= N; ++n) u[l][n] = -inv[n];
        }
        S.X.assign(L, std::vector<double>(N + 1, 0.0));
        S.E.assign(L, std::vector<double>(N + 1, 0.0));
        S.zeta.assign(L, std::vector<double>(N + 1, 0.0));
        std::vector<std::vector<double>> W(L, std::vector<double>(N + 1, 0.0)), V = S.X;
        S.zeta_pow.assign(L, std::vector<std::vector<double>>(N + 1, std::vector<double>(N + 1, 0.0)));
        for (int l = 0; l < L; ++l) {
            W[l][0] = 1.0;
            S.zeta_pow[l][0][0] = 1.0;
        }
        for (int n = 1; n <= N; ++n) {
            for (int l = 0; l < L; ++l) S.zeta[l][n] = form_.factors[l].alpha * W[l][n - 1];
            for (int l = 0; l < L; ++l) {
                auto& P = S.zeta_pow[l];
                const auto& z = S.zeta[l];
                P[1][n] = z[n];
                for (int j = 2; j <= n; ++j) {
                    double s = 0.0;
                    for (int i = 1; i <= n - j + 1; ++i) s += z[i] * P[j - 1][n - i];
                    P[j][n] = s;
                }
                double v = 0.0;
                for (int j = 1; j <= n; ++j) v += u[l][j] * P[j][n];
                V[l][n] = v;
            }
            for (int l = 0; l < L; ++l) {
                double x = V[l][n];
                for (int i = 1; i < n; ++i) x -= S.E[l][i] * V[l][n - i];
                S.X[l][n] = x;
            }
            for (int l = 0; l < L; ++l) {
                double e = n == 1 ? form_.m0 : 0.0;
                for (int k = 0; k < L; ++k)
                    if (k != l) e += S.X[k][n];
                S.E[l][n] = e;
            }
            for (int l = 0; l < L; ++l) {
                double w = 0.0;
                for (int i = 1; i <= n; ++i) w += S.E[l][i] * W[l][n - i];
                W[l][n] = w;
            }
        }
        std::vector<double> D(N + 1, 0.0);
        if (N >= 1) D[1] = form_.m0;
        for (int l = 0; l < L; ++l)
            for (int n = 1; n <= N; ++n) D[n] += S.X[l][n];
        std::vector<double> one_minus(N + 1, 0.0), one(N + 1, 0.0);
        one[0] = 1.0;
        for (int n = 0; n <= N; ++n) one_minus[n] = (n == 0 ? 1.0 : 0.0) - D[n];
        S.G = series::div(one, one_minus, N);
        return S;
    }

    Group group_;
    AdaptedForm form_;
    std::vector<LatticeWalk> walks_;
    mutable std::mutex mu_;
    mutable std::map<int, std::shared_ptr<const Series>> series_cache_;
    mutable std::map<std::pair<int, std::vector<int>>, std::vector<double>> passage_cache_;
    mutable std::vector<std::shared_ptr<LatticeFourier>> fourier_;
    mutable double radius_ = 0.0;
};

} // namespace martinlab
