#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace martinlab {

// Symmetric step law on Z^d (no mass at the origin unless stated).
struct LatticeWalk {
    int dim = 1;
    std::vector<std::pair<std::vector<int>, double>> steps;

    int jump() const {
        int j = 0;
        for (auto& s : steps)
            for (int x : s.first) j = std::max(j, std::abs(x));
        return j;
    }
};

inline long l1_norm(const std::vector<int>& x) {
    long n = 0;
    for (int v : x) n += std::abs(v);
    return n;
}

inline int linf_norm(const std::vector<int>& x) {
    int n = 0;
    for (int v : x) n = std::max(n, std::abs(v));
    return n;
}

// All points of Z^d with l1 norm exactly m, lexicographically sorted.
inline std::vector<std::vector<int>> l1_sphere(int dim, int m) {
    std::vector<std::vector<int>> out;
    std::vector<int> x(dim, 0);
    auto rec = [&](auto&& self, int i, int left) -> void {
        if (i == dim - 1) {
            if (left == 0) {
                x[i] = 0;
                out.push_back(x);
            } else {
                x[i] = -left;
                out.push_back(x);
                x[i] = left;
                out.push_back(x);
            }
            return;
        }
        for (int v = -left; v <= left; ++v) {
            x[i] = v;
            self(self, i + 1, left - std::abs(v));
        }
    };
    rec(rec, 0, m);
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<std::vector<int>> l1_ball(int dim, int m) {
    std::vector<std::vector<int>> out;
    for (int k = 0; k <= m; ++k) {
        auto s = l1_sphere(dim, k);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

// Dense walk distribution on a box [-R, R]^d; mass leaving the box is discarded.
class LatticeBox {
public:
    LatticeBox(int dim, int radius) : dim_(dim), radius_(radius), side_(2 * radius + 1) {
        size_t n = 1;
        for (int i = 0; i < dim_; ++i) {
            if (n > (size_t{1} << 31) / static_cast<size_t>(side_))
                throw ResourceError("lattice box of radius " + std::to_string(radius) + " too large");
            n *= static_cast<size_t>(side_);
        }
        size_ = n;
        stride_.assign(dim_, 1);
        for (int i = dim_ - 2; i >= 0; --i) stride_[i] = stride_[i + 1] * side_;
        // order cells by l-infinity radius so that step n only touches the reachable core
        order_.resize(size_);
        std::iota(order_.begin(), order_.end(), 0);
        std::vector<int> rad(size_);
        for (size_t k = 0; k < size_; ++k) rad[k] = linf(k);
        std::stable_sort(order_.begin(), order_.end(), [&](size_t a, size_t b) { return rad[a] < rad[b]; });
        upto_.assign(radius_ + 2, 0);
        for (size_t k = 0; k < size_; ++k) upto_[rad[k] + 1]++;
        for (int r = 1; r <= radius_ + 1; ++r) upto_[r] += upto_[r - 1];
    }

    int dim() const { return dim_; }
    int radius() const { return radius_; }
    size_t size() const { return size_; }

    long index(const std::vector<int>& x) const {
        long k = 0;
        for (int i = 0; i < dim_; ++i) {
            if (std::abs(x[i]) > radius_) return -1;
            k += static_cast<long>(x[i] + radius_) * stride_[i];
        }
        return k;
    }

    std::vector<int> point(size_t k) const {
        std::vector<int> x(dim_);
        for (int i = 0; i < dim_; ++i) {
            x[i] = static_cast<int>(k / stride_[i]) - radius_;
            k %= stride_[i];
        }
        return x;
    }

    int linf(size_t k) const {
        int m = 0;
        for (int i = 0; i < dim_; ++i) {
            int c = static_cast<int>(k / stride_[i]) - radius_;
            k %= stride_[i];
            m = std::max(m, std::abs(c));
        }
        return m;
    }

    // cells with linf <= r, in radius order
    const size_t* core_begin() const { return order_.data(); }
    size_t core_count(int r) const { return upto_[std::min(std::max(r, -1), radius_) + 1]; }
    size_t cell(size_t i) const { return order_[i]; }

    // Generic kernel application: out = in * kernel, where kernel maps offsets to weights.
    void step(const std::vector<double>& in, std::vector<double>& out,
              const std::vector<std::pair<std::vector<int>, double>>& kernel, int active) const {
        std::fill(out.begin(), out.end(), 0.0);
        size_t cnt = core_count(active);
        int J = 0;
        std::vector<long> flat;
        for (auto& [off, w] : kernel) {
            long f = 0;
            for (int d = 0; d < dim_; ++d) {
                J = std::max(J, std::abs(off[d]));
                f += static_cast<long>(off[d]) * stride_[d];
            }
            flat.push_back(f);
        }
        size_t safe = std::min(cnt, core_count(radius_ - J));
        for (size_t i = 0; i < safe; ++i) {
            size_t k = order_[i];
            double v = in[k];
            if (v == 0.0) continue;
            for (size_t a = 0; a < flat.size(); ++a)
                out[static_cast<size_t>(static_cast<long>(k) + flat[a])] += v * kernel[a].second;
        }
        for (size_t i = safe; i < cnt; ++i) {
            size_t k = order_[i];
            double v = in[k];
            if (v == 0.0) continue;
            std::vector<int> x = point(k);
            for (auto& [off, w] : kernel) {
                bool inside = true;
                long t = 0;
                for (int d = 0; d < dim_; ++d) {
                    int c = x[d] + off[d];
                    if (std::abs(c) > radius_) {
                        inside = false;
                        break;
                    }
                    t += static_cast<long>(c + radius_) * stride_[d];
                }
                if (inside) out[static_cast<size_t>(t)] += v * w;
            }
        }
    }

private:
    int dim_, radius_, side_;
    size_t size_ = 0;
    std::vector<long> stride_;
    std::vector<size_t> order_;
    std::vector<size_t> upto_;
};

// p_n(0 -> x) for n = 0..N and each target x, exact up to floating rounding.
// The box is only as large as needed for paths that can still reach a target.
inline std::vector<std::vector<double>> lattice_series(const LatticeWalk& w, int N,
                                                       const std::vector<std::vector<int>>& targets) {
    int J = std::max(1, w.jump());
    int T = 0;
    for (auto& t : targets) T = std::max(T, linf_norm(t));
    int R = 0;
    for (int n = 0; n <= N; ++n) R = std::max(R, std::min(n * J, (N - n) * J + T));
    R = std::max(R, T);
    LatticeBox box(w.dim, R);
    std::vector<double> cur(box.size(), 0.0), nxt(box.size(), 0.0);
    cur[static_cast<size_t>(box.index(std::vector<int>(w.dim, 0)))] = 1.0;
    std::vector<long> tidx;
    for (auto& t : targets) tidx.push_back(box.index(t));
    std::vector<std::vector<double>> out(targets.size(), std::vector<double>(N + 1, 0.0));
    for (int n = 0; n <= N; ++n) {
        for (size_t i = 0; i < targets.size(); ++i) out[i][n] = cur[static_cast<size_t>(tidx[i])];
        if (n == N) break;
        box.step(cur, nxt, w.steps, std::min(n * J, R));
        std::swap(cur, nxt);
    }
    return out;
}

// Periodised trapezoidal quadrature of the lattice Green function on an M^d grid:
// green(t, x) = M^{-d} sum_theta cos(x.theta) / (1 - t phi(theta)), which equals the Green
// function of the walk on the torus (Z/M)^d, i.e. the sum of G(0, x + M z) over z.
class LatticeFourier {
public:
    explicit LatticeFourier(LatticeWalk w, int M = 0) : w_(std::move(w)) {
        M_ = M > 0 ? M : default_grid(w_.dim);
        if (M_ % 2) ++M_;
        cos_.resize(M_);
        for (int k = 0; k < M_; ++k) cos_[k] = std::cos(2.0 * M_PI * k / M_);
        for (int k = 1; k < M_; ++k) cos_[M_ - k] = cos_[k];
        size_t n = 1;
        for (int i = 0; i < w_.dim; ++i) n *= static_cast<size_t>(M_);
        npts_ = n;
        phi_.resize(n);
        std::vector<int> j(w_.dim, 0);
        for (size_t p = 0; p < n; ++p) {
            phi_[p] = phi_at(j);
            for (int d = w_.dim - 1; d >= 0; --d) {
                if (++j[d] < M_) break;
                j[d] = 0;
            }
        }
        compress(fine_, 1);
        compress(coarse_, 2);
    }

    static int default_grid(int dim) {
        switch (dim) {
        case 1: return 1 << 14;
        case 2: return 768;
        case 3: return 96;
        case 4: return 40;
        default: return 20;
        }
    }

    int grid() const { return M_; }
    const LatticeWalk& walk() const { return w_; }

    double green0(double t) const { return eval(fine_, t); }
    // Same quadrature on the M/2 subgrid; the difference is the reported quadrature error.
    double green0_coarse(double t) const { return eval(coarse_, t); }
    double green0_error(double t) const { return std::abs(green0(t) - green0_coarse(t)); }

    double green(double t, const std::vector<int>& x) const {
        if (linf_norm(x) == 0) return green0(t);
        double s = 0.0;
        std::vector<int> j(w_.dim, 0);
        for (size_t p = 0; p < npts_; ++p) {
            long ph = 0;
            for (int d = 0; d < w_.dim; ++d) ph += static_cast<long>(x[d]) * j[d];
            ph %= M_;
            if (ph < 0) ph += M_;
            s += cos_[static_cast<size_t>(ph)] / (1.0 - t * phi_[p]);
            for (int d = w_.dim - 1; d >= 0; --d) {
                if (++j[d] < M_) break;
                j[d] = 0;
            }
        }
        return s / static_cast<double>(npts_);
    }

    // Several targets in one sweep.
    std::vector<double> green_many(double t, const std::vector<std::vector<int>>& xs) const {
        std::vector<double> out(xs.size(), 0.0);
        std::vector<int> j(w_.dim, 0);
        for (size_t p = 0; p < npts_; ++p) {
            double inv = 1.0 / (1.0 - t * phi_[p]);
            for (size_t q = 0; q < xs.size(); ++q) {
                long ph = 0;
                for (int d = 0; d < w_.dim; ++d) ph += static_cast<long>(xs[q][d]) * j[d];
                ph %= M_;
                if (ph < 0) ph += M_;
                out[q] += cos_[static_cast<size_t>(ph)] * inv;
            }
            for (int d = w_.dim - 1; d >= 0; --d) {
                if (++j[d] < M_) break;
                j[d] = 0;
            }
        }
        for (auto& v : out) v /= static_cast<double>(npts_);
        return out;
    }

    double phi_max() const { return *std::max_element(phi_.begin(), phi_.end()); }

private:
    double phi_at(const std::vector<int>& j) const {
        double s = 0.0;
        for (auto& [x, m] : w_.steps) {
            long ph = 0;
            for (int d = 0; d < w_.dim; ++d) ph += static_cast<long>(x[d]) * j[d];
            ph %= M_;
            if (ph < 0) ph += M_;
            s += m * cos_[static_cast<size_t>(ph)];
        }
        return s;
    }

    // (phi value, weight) pairs with exact duplicates merged.
    void compress(std::vector<std::pair<double, double>>& out, int stride) {
        std::vector<double> vals;
        std::vector<int> j(w_.dim, 0);
        for (size_t p = 0; p < npts_; ++p) {
            bool take = true;
            for (int d = 0; d < w_.dim; ++d)
                if (j[d] % stride) take = false;
            if (take) vals.push_back(phi_[p]);
            for (int d = w_.dim - 1; d >= 0; --d) {
                if (++j[d] < M_) break;
                j[d] = 0;
            }
        }
        std::sort(vals.begin(), vals.end());
        double wt = 1.0 / static_cast<double>(vals.size());
        out.clear();
        for (double v : vals) {
            if (!out.empty() && out.back().first == v) out.back().second += wt;
            else out.emplace_back(v, wt);
        }
    }

    static double eval(const std::vector<std::pair<double, double>>& tab, double t) {
        double s = 0.0;
        for (auto& [v, wt] : tab) s += wt / (1.0 - t * v);
        return s;
    }

    LatticeWalk w_;
    int M_ = 0;
    size_t npts_ = 0;
    std::vector<double> cos_;
    std::vector<double> phi_;
    std::vector<std::pair<double, double>> fine_, coarse_;
};

// Power-series helpers (coefficients 0..N).
namespace series {

inline std::vector<double> mul(const std::vector<double>& a, const std::vector<double>& b, int N) {
    std::vector<double> c(N + 1, 0.0);
    for (int i = 0; i <= N && i < static_cast<int>(a.size()); ++i) {
        if (a[i] == 0.0) continue;
        for (int j = 0; i + j <= N && j < static_cast<int>(b.size()); ++j) c[i + j] += a[i] * b[j];
    }
    return c;
}

// a / b with b[0] != 0
inline std::vector<double> div(const std::vector<double>& a, const std::vector<double>& b, int N) {
    std::vector<double> c(N + 1, 0.0);
    for (int n = 0; n <= N; ++n) {
        double s = n < static_cast<int>(a.size()) ? a[n] : 0.0;
        for (int i = 1; i <= n && i < static_cast<int>(b.size()); ++i) s -= b[i] * c[n - i];
        c[n] = s / b[0];
    }
    return c;
}

inline double eval(const std::vector<double>& a, double t) {
    double s = 0.0, p = 1.0;
    for (double c : a) {
        s += c * p;
        p *= t;
    }
    return s;
}

} // namespace series

} // namespace martinlab
