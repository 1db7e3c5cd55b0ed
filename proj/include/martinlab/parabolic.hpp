#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "errors.hpp"
#include "interval.hpp"
#include "lattice.hpp"
#include "potential.hpp"

namespace martinlab {

// ---------------------------------------------------------------------------------------------
// Lattice coordinates on a factor H = Z^d (or F_1).

inline bool lattice_factor(const Group& G, int factor) {
    const auto& f = G.factor(factor);
    return f.kind == FactorSpec::Kind::free_abelian || f.rank == 1;
}

inline int factor_dim(const Group& G, int factor) {
    const auto& f = G.factor(factor);
    return f.kind == FactorSpec::Kind::free_abelian ? f.rank : 1;
}

inline GroupElement lattice_element(const Group& G, int factor, const std::vector<int>& x) {
    const auto& f = G.factor(factor);
    if (f.kind == FactorSpec::Kind::free_abelian) return G.factor_element(factor, x);
    return G.factor_element(factor, std::vector<int>(static_cast<size_t>(std::abs(x[0])), x[0] > 0 ? 1 : -1));
}

inline std::vector<std::vector<int>> linf_box(int dim, int W) {
    std::vector<std::vector<int>> out;
    std::vector<int> x(dim, -W);
    while (true) {
        out.push_back(x);
        int i = dim - 1;
        while (i >= 0 && x[i] == W) x[i--] = -W;
        if (i < 0) break;
        ++x[i];
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// First-return kernel to N_eta(H), identified with Z^d x {0..N-1}. Only rows based at
// z = 0 are stored; translation invariance in z is exact by construction.

struct ParabolicKernel {
    int factor = 0;
    int dim = 1;
    int eta = 0;
    double r = 0.0;
    int window = 0;      // targets with |x|_inf <= window
    int truncation = 0;  // excursion depth beyond N_eta(H); 0 when no truncation happens
    std::string method;
    std::vector<GroupElement> neighbourhood;  // w_k with N_eta(H) = H w; w_0 = e
    std::vector<std::vector<std::map<std::vector<int>, Interval>>> mass;  // [j][k][x]
    std::vector<std::vector<double>> defect;                              // [j][k], lands at x = 0
    bool flagged = false;
    std::string note;

    int size() const { return static_cast<int>(neighbourhood.size()); }

    Interval row_mass(int j) const {
        Interval s(0.0);
        for (int k = 0; k < size(); ++k)
            for (auto& [x, m] : mass[j][k]) s += m;
        return s;
    }

    double max_defect() const {
        double d = 0.0;
        for (auto& row : defect)
            for (double v : row) d = std::max(d, v);
        return d;
    }

    int max_jump() const {
        int J = 0;
        for (auto& row : mass)
            for (auto& cell : row)
                for (auto& [x, m] : cell) J = std::max(J, linf_norm(x));
        return J;
    }

    // p_{jk}(x) == p_{kj}(-x), which makes F(-u) = F(u)^T and lambda even.
    bool symmetric(double tol = 1e-14) const {
        for (int j = 0; j < size(); ++j)
            for (int k = 0; k < size(); ++k)
                for (auto& [x, m] : mass[j][k]) {
                    std::vector<int> nx(x);
                    for (int& c : nx) c = -c;
                    auto it = mass[k][j].find(nx);
                    double other = it == mass[k][j].end() ? 0.0 : it->second.mid();
                    if (std::abs(other - m.mid()) > tol * std::max(1.0, std::abs(m.mid()))) return false;
                }
        return true;
    }
};

// Representatives w with |w| <= eta whose normal form does not start in H.
inline std::vector<GroupElement> neighbourhood_representatives(const Group& G, int factor, int eta) {
    std::vector<std::pair<long, GroupElement>> reps;
    for (auto& [w, d] : G.ball(eta))
        if (w.syl.empty() || w.syl.front().factor != factor) reps.emplace_back(d, w);
    std::sort(reps.begin(), reps.end());
    std::vector<GroupElement> out;
    for (auto& p : reps) out.push_back(p.second);
    return out;
}

enum class KernelRoute { automatic, loops, restricted };

namespace detail {

inline void init_kernel(ParabolicKernel& K, const Group& G, int factor, int eta, double r, int window) {
    if (factor < 0 || factor >= G.num_factors()) throw ConfigError("factor index out of range");
    if (!lattice_factor(G, factor)) throw ConfigError("parabolic factor must be Z^d or F_1");
    if (eta < 0 || window < 1) throw ConfigError("need eta >= 0 and window >= 1");
    K.factor = factor;
    K.dim = factor_dim(G, factor);
    K.eta = eta;
    K.r = r;
    K.window = window;
    K.neighbourhood = G.num_factors() == 1 ? std::vector<GroupElement>{G.identity()}
                                           : neighbourhood_representatives(G, factor, eta);
    const int N = K.size();
    K.mass.assign(N, std::vector<std::map<std::vector<int>, Interval>>(N));
    K.defect.assign(N, std::vector<double>(N, 0.0));
}

// Direct steps w_j -> h_x w_k with x != 0, and the mass they would leave outside the window.
inline void direct_steps(ParabolicKernel& K, const FiniteMeasure& mu) {
    const Group& G = mu.group();
    const int N = K.size();
    double outside = 0.0;
    for (auto& [s, m] : mu.atoms()) {
        if (s.syl.size() != 1 || s.syl[0].factor != K.factor) continue;
        if (linf_norm(s.syl[0].v) > K.window && G.factor(K.factor).kind == FactorSpec::Kind::free_abelian)
            outside += K.r * m;
    }
    for (auto& x : linf_box(K.dim, K.window)) {
        if (linf_norm(x) == 0) continue;
        GroupElement h = lattice_element(G, K.factor, x);
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < N; ++k) {
                double m = mu.mass(G.multiply(G.multiply(G.inverse(K.neighbourhood[j]), h), K.neighbourhood[k]));
                if (m > 0.0) K.mass[j][k][x] = Interval(K.r * m);
            }
    }
    if (outside > 0.0) {
        K.flagged = true;
        K.note = "window smaller than the step range";
        for (int j = 0; j < N; ++j) K.defect[j][j] += outside;
    }
}

} // namespace detail

// First-return kernel p_{H,eta,r}. Routes:
//  loops       eta = 0 on a free product: p(0) = r mu(e) + sum of loop weights through the other
//              factors, p(x) = r mu(h_x); brackets from the fixed point.
//  restricted  any eta: excursions solved on the exterior cut at depth eta + truncation; the
//              defect is the change from depth - 1 (a heuristic estimate).
// Excursions of an adapted walk cannot move the H coordinate, so only p_{jk}(0) has excursions.
inline ParabolicKernel first_return_kernel(const GreenSolver& solver, int factor, int eta, double r, int window,
                                           int truncation = 8, KernelRoute route = KernelRoute::automatic) {
    const FiniteMeasure& mu = solver.measure();
    const Group& G = mu.group();
    if (!solver.adapted()) throw ConfigError("first-return kernels need a measure adapted to the free product");
    if (!(r > 0.0)) throw ConfigError("r must be positive");
    ParabolicKernel K;
    detail::init_kernel(K, G, factor, eta, r, window);
    const int N = K.size();
    std::vector<int> zero(K.dim, 0);

    if (G.num_factors() == 1) {
        // H is the whole group: no exterior to visit
        K.method = "exact";
        if (mu.mass_at_identity() > 0.0) K.mass[0][0][zero] = Interval(r * mu.mass_at_identity());
        detail::direct_steps(K, mu);
        return K;
    }
    if (route == KernelRoute::automatic) route = eta == 0 ? KernelRoute::loops : KernelRoute::restricted;
    if (route == KernelRoute::loops) {
        if (eta != 0) throw ConfigError("loop route needs eta = 0");
        const auto& walk = solver.walk();
        auto fp = walk.fixed_point(r);
        if (!fp.exists) throw DomainError("no fixed point at r = " + std::to_string(r) + ": " + fp.note);
        int a = walk.form().atomic_index(factor, G.factor(factor).kind == FactorSpec::Kind::free ? 1 : 0);
        K.method = "loops";
        K.mass[0][0][zero] = walk.loops(fp, a);
        detail::direct_steps(K, mu);
        if (!fp.certified_upper) K.note = "loop weights not certified from above";
        return K;
    }
    if (truncation < 1) throw ConfigError("truncation depth must be >= 1");
    K.method = "restricted";
    K.truncation = truncation;
    auto ball = G.ball(eta + truncation);
    auto exterior = [&](int depth) {
        std::vector<GroupElement> A;
        for (auto& [g, d] : ball)
            if (d > eta && d <= eta + depth && g.syl.front().factor != factor) A.push_back(g);
        return A;
    };
    RestrictedSolver deep(mu, r, exterior(truncation)), shallow(mu, r, exterior(truncation - 1));
    if (deep.divergent()) throw DomainError("excursion Green function diverges at r = " + std::to_string(r));
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) {
            const auto &wj = K.neighbourhood[j], &wk = K.neighbourhood[k];
            double v = deep.green(wj, wk) - (j == k ? 1.0 : 0.0);
            double v0 = shallow.divergent() ? 0.0 : shallow.green(wj, wk) - (j == k ? 1.0 : 0.0);
            if (v > 0.0) K.mass[j][k][zero] = Interval(v);
            K.defect[j][k] = std::abs(v - v0);
        }
    detail::direct_steps(K, mu);
    return K;
}

// Sum_x p_{jk}(x) e^{M |x|_1} per (j, k); the defect sits at x = 0.
inline std::vector<std::vector<Interval>> exponential_moment(const ParabolicKernel& K, double M) {
    const int N = K.size();
    std::vector<std::vector<Interval>> out(N, std::vector<Interval>(N, Interval(0.0)));
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) {
            for (auto& [x, m] : K.mass[j][k]) out[j][k] += m * std::exp(M * static_cast<double>(l1_norm(x)));
            out[j][k].hi += K.defect[j][k];
        }
    return out;
}

// Tilts up to this size keep e^{u.x} far from overflow on the finite support.
inline double moment_range(const ParabolicKernel& K) {
    return 600.0 / std::max(1, K.max_jump() * K.dim);
}

namespace detail {

inline void check_tilt(const ParabolicKernel& K, const Eigen::VectorXd& u) {
    if (u.size() != K.dim) throw DomainError("tilt dimension does not match the factor rank");
    if (!(u.cwiseAbs().maxCoeff() <= moment_range(K))) throw DomainError("tilt outside the moment range");
}

inline double tilt(const std::vector<int>& x, const Eigen::VectorXd& u) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * u[static_cast<int>(i)];
    return std::exp(s);
}

} // namespace detail

// F_{jk}(u) = sum_x p_{jk}(x) e^{x.u}; which = -1, 0, +1 picks lower, mid, upper masses.
inline Eigen::MatrixXd F_matrix(const ParabolicKernel& K, const Eigen::VectorXd& u, int which = 0) {
    detail::check_tilt(K, u);
    const int N = K.size();
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(N, N);
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) {
            for (auto& [x, m] : K.mass[j][k])
                F(j, k) += (which < 0 ? m.lo : which > 0 ? m.hi : m.mid()) * detail::tilt(x, u);
            if (which > 0) F(j, k) += K.defect[j][k];
        }
    return F;
}

// d F / d u_i.
inline Eigen::MatrixXd F_derivative(const ParabolicKernel& K, const Eigen::VectorXd& u, int i) {
    const int N = K.size();
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(N, N);
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k)
            for (auto& [x, m] : K.mass[j][k]) D(j, k) += x[i] * m.mid() * detail::tilt(x, u);
    return D;
}

struct EigenTriple {
    Eigen::VectorXd u;
    double lambda = 0.0;
    Eigen::VectorXd right;  // C, C_0 = 1
    Eigen::VectorXd left;   // nu, nu^T C = 1
    Eigen::VectorXd gradient;
    double residual = 0.0;  // max(|F C - lambda C|_inf, |nu^T F - lambda nu^T|_inf) / |F|_inf
    int iterations = 0;
};

// Perron root by power iteration on alpha I + (1 - alpha) F, un-shifted affinely.
inline EigenTriple dominant_eig(const Eigen::MatrixXd& F, double alpha = 0.5, double tol = 1e-12,
                                int max_iter = 1'000'000) {
    const int N = static_cast<int>(F.rows());
    if (N == 0 || F.cols() != N) throw DomainError("dominant_eig needs a nonempty square matrix");
    if ((F.array() < 0.0).any()) throw DomainError("dominant_eig needs a nonnegative matrix");
    EigenTriple e;
    if (N == 1) {
        e.lambda = F(0, 0);
        e.right = e.left = Eigen::VectorXd::Ones(1);
        return e;
    }
    Eigen::MatrixXd S = alpha * Eigen::MatrixXd::Identity(N, N) + (1.0 - alpha) * F;
    auto power = [&](const Eigen::MatrixXd& A, int& iters) {
        Eigen::VectorXd v = Eigen::VectorXd::Ones(N) / N;
        double prev = 0.0;
        for (iters = 0; iters < max_iter; ++iters) {
            Eigen::VectorXd w = A * v;
            double s = w.sum();
            if (!(s > 0.0)) throw NumericalError("power iteration collapsed to zero");
            w /= s;
            double change = (w - v).cwiseAbs().maxCoeff();
            v = w;
            if (change <= 1e-3 * tol && std::abs(s - prev) <= tol * s) break;
            prev = s;
        }
        if (iters == max_iter) {
            double res = (A * v - v * (A * v).sum()).cwiseAbs().maxCoeff();
            throw NumericalError("power iteration did not converge; residual " + std::to_string(res));
        }
        return v;
    };
    int it1 = 0, it2 = 0;
    Eigen::VectorXd C = power(S, it1), nu = power(S.transpose(), it2);
    if (!(C(0) > 0.0)) throw NumericalError("Perron vector vanishes at index 0");
    C /= C(0);
    nu /= nu.dot(C);
    e.right = C;
    e.left = nu;
    e.lambda = nu.dot(F * C);
    e.iterations = std::max(it1, it2);
    double scale = std::max(F.cwiseAbs().rowwise().sum().maxCoeff(), 1e-300);
    e.residual = std::max((F * C - e.lambda * C).cwiseAbs().maxCoeff() / C.cwiseAbs().maxCoeff(),
                          (F.transpose() * nu - e.lambda * nu).cwiseAbs().maxCoeff() / nu.cwiseAbs().maxCoeff()) /
                 scale;
    return e;
}

// lambda(u) with gradient nu^T F' C / nu^T C.
inline EigenTriple eigen_at(const ParabolicKernel& K, const Eigen::VectorXd& u) {
    EigenTriple e = dominant_eig(F_matrix(K, u));
    e.u = u;
    e.gradient.resize(K.dim);
    for (int i = 0; i < K.dim; ++i) e.gradient[i] = e.left.dot(F_derivative(K, u, i) * e.right) / e.left.dot(e.right);
    return e;
}

inline double lambda_at(const ParabolicKernel& K, const Eigen::VectorXd& u) { return eigen_at(K, u).lambda; }

// Central differences of the exact gradient, symmetrized.
inline Eigen::MatrixXd lambda_hessian(const ParabolicKernel& K, const Eigen::VectorXd& u, double h = 1e-4) {
    const int d = K.dim;
    Eigen::MatrixXd H(d, d);
    for (int j = 0; j < d; ++j) {
        Eigen::VectorXd up = u, um = u;
        up[j] += h;
        um[j] -= h;
        H.col(j) = (eigen_at(K, up).gradient - eigen_at(K, um).gradient) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
}

inline double min_eigenvalue(const Eigen::MatrixXd& H) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    return es.eigenvalues().minCoeff();
}

struct LambdaMin {
    Eigen::VectorXd u;
    double lambda = 0.0;
    EigenTriple eig;
    Eigen::MatrixXd hessian;
    double hessian_min_eig = 0.0;
    bool positive_definite = false;
    bool at_boundary = false;
    int iterations = 0;
};

// Newton steps with a finite-difference Hessian, falling back to the gradient, and Armijo
// backtracking; stops when |grad lambda| <= tol.
inline LambdaMin lambda_min(const ParabolicKernel& K, double tol = 1e-10, int max_iter = 500) {
    const int d = K.dim;
    const double bound = moment_range(K);
    LambdaMin out;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
    EigenTriple e = eigen_at(K, u);
    int it = 0;
    for (; it < max_iter && e.gradient.norm() > tol; ++it) {
        Eigen::MatrixXd H = lambda_hessian(K, u);
        Eigen::VectorXd step;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0).all())
            step = -ldlt.solve(e.gradient);
        else
            step = -e.gradient;
        double slope = e.gradient.dot(step);
        if (!(slope < 0.0)) step = -e.gradient, slope = -e.gradient.squaredNorm();
        double t = 1.0;
        bool moved = false;
        while (t > 1e-16) {
            Eigen::VectorXd v = u + t * step;
            if (v.cwiseAbs().maxCoeff() > bound) {
                t *= 0.5;
                continue;
            }
            EigenTriple f = eigen_at(K, v);
            if (f.lambda <= e.lambda + 1e-4 * t * slope || f.gradient.norm() < e.gradient.norm() * 0.5) {
                u = v;
                e = f;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) break;
    }
    out.u = u;
    out.lambda = e.lambda;
    out.eig = e;
    out.iterations = it;
    out.hessian = lambda_hessian(K, u);
    out.hessian_min_eig = min_eigenvalue(out.hessian);
    out.positive_definite = out.hessian_min_eig > 0.0;
    out.at_boundary = u.cwiseAbs().maxCoeff() > 0.99 * bound;
    if (e.gradient.norm() > tol && !out.at_boundary)
        throw NumericalError("lambda minimization stalled at |grad| = " + std::to_string(e.gradient.norm()));
    return out;
}

// t > 0 with lambda(u0 + t dir) = 1, by bracketing and bisection.
inline double ray_to_level(const ParabolicKernel& K, const Eigen::VectorXd& u0, const Eigen::VectorXd& dir) {
    const double bound = moment_range(K);
    double lo = 0.0, hi = 1.0;
    while (lambda_at(K, u0 + hi * dir) < 1.0) {
        lo = hi;
        hi *= 2.0;
        if ((u0 + hi * dir).cwiseAbs().maxCoeff() > bound) throw DomainError("level set leaves the moment range");
    }
    for (int i = 0; i < 200 && hi - lo > 1e-16 * hi; ++i) {
        double mid = 0.5 * (lo + hi);
        (lambda_at(K, u0 + mid * dir) < 1.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct LevelSetPoint {
    Eigen::VectorXd u;
    EigenTriple eig;
    double angle_error = 0.0;  // angle between grad lambda(u) and theta
};

// Point of {lambda = 1} with outward normal theta. Newton on grad lambda = s theta, lambda = 1,
// started from the ray from u* along theta; the result is put back on the level set by a ray
// bisection from u*.
inline LevelSetPoint level_set_point(const ParabolicKernel& K, const Eigen::VectorXd& theta_in, double angle_tol = 1e-8) {
    const int d = K.dim;
    if (theta_in.size() != d || !(theta_in.norm() > 0.0)) throw DomainError("theta must be a nonzero vector of the factor rank");
    Eigen::VectorXd theta = theta_in.normalized();
    auto lm = lambda_min(K);
    if (!(lm.lambda < 1.0)) throw DomainError("level set needs min lambda < 1");
    Eigen::VectorXd u = lm.u + ray_to_level(K, lm.u, theta) * theta;
    auto angle = [&](const EigenTriple& e) {
        double c = e.gradient.dot(theta);
        return std::atan2((e.gradient - c * theta).norm(), c);
    };
    EigenTriple e = eigen_at(K, u);
    for (int it = 0; it < 100 && d > 1 && angle(e) > 0.1 * angle_tol; ++it) {
        double s = e.gradient.norm();
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d + 1, d + 1);
        J.topLeftCorner(d, d) = lambda_hessian(K, u);
        J.block(0, d, d, 1) = -theta;
        J.block(d, 0, 1, d) = e.gradient.transpose();
        Eigen::VectorXd res(d + 1);
        res.head(d) = e.gradient - s * theta;
        res[d] = e.lambda - 1.0;
        Eigen::VectorXd delta = J.fullPivLu().solve(-res);
        Eigen::VectorXd v = u + delta.head(d);
        Eigen::VectorXd dir = v - lm.u;
        v = lm.u + ray_to_level(K, lm.u, dir.normalized()) * dir.normalized();
        EigenTriple f = eigen_at(K, v);
        if (!(angle(f) < angle(e))) break;
        u = v;
        e = f;
    }
    LevelSetPoint p;
    p.u = u;
    p.eig = e;
    p.angle_error = d == 1 ? (e.gradient[0] * theta[0] > 0 ? 0.0 : M_PI) : angle(e);
    if (p.angle_error > angle_tol) throw NumericalError("level-set normal did not reach theta");
    return p;
}

// K(h, xi) = C_k / C_0 e^{u.z} for h = (z, k), with lambda(u) = 1.
inline double parabolic_martin_kernel(const EigenTriple& e, const std::vector<int>& z, int k, double tol = 1e-9) {
    if (std::abs(e.lambda - 1.0) > tol) throw DomainError("tilt is not on the level set lambda = 1");
    if (k < 0 || k >= e.right.size()) throw DomainError("neighbourhood index out of range");
    return e.right[k] / e.right[0] * detail::tilt(z, e.u);
}

// max over h = (z, k), |z|_inf <= core, of |sum p(h, h') K(h') - K(h)| / K(h), summing the kernel
// over its stored support.
inline double harmonicity_residual(const ParabolicKernel& K, const EigenTriple& e, int core) {
    double worst = 0.0;
    const int N = K.size();
    for (auto& z : linf_box(K.dim, core))
        for (int j = 0; j < N; ++j) {
            double s = 0.0;
            for (int k = 0; k < N; ++k)
                for (auto& [x, m] : K.mass[j][k]) {
                    std::vector<int> y(z);
                    for (int i = 0; i < K.dim; ++i) y[i] += x[i];
                    s += m.mid() * parabolic_martin_kernel(e, y, k);
                }
            double kh = parabolic_martin_kernel(e, z, j);
            worst = std::max(worst, std::abs(s - kh) / kh);
        }
    return worst;
}

// Direct Martin kernel K_r(h, g_n) with h = h_z w_k and g_n = h_{n step}.
inline Interval martin_along_ray(const GreenField& f, const ParabolicKernel& K, const std::vector<int>& z, int k,
                                 const std::vector<int>& step, int n) {
    const Group& G = f.group();
    std::vector<int> target(step);
    for (int& c : target) c *= n;
    GroupElement g = lattice_element(G, K.factor, target);
    GroupElement h = G.multiply(lattice_element(G, K.factor, z), K.neighbourhood.at(k));
    return f.between(h, g) / f.between(G.identity(), g);
}

// ---------------------------------------------------------------------------------------------
// Green function of the kernel on a box: G((0,j), (x,k) | t), a lower bound that grows with the box.

inline std::vector<double> kernel_green(const ParabolicKernel& K, double t, int box,
                                        const std::vector<std::pair<std::vector<int>, int>>& targets, int start = 0) {
    const int N = K.size(), d = K.dim;
    auto pts = linf_box(d, box);
    std::map<std::vector<int>, int> idx;
    for (size_t i = 0; i < pts.size(); ++i) idx[pts[i]] = static_cast<int>(i);
    const int n = static_cast<int>(pts.size()) * N;
    std::vector<Eigen::Triplet<double>> trips;
    // transposed system: (I - tP)^T y = e_0 gives y = G((0,0), .)
    for (size_t i = 0; i < pts.size(); ++i)
        for (int j = 0; j < N; ++j) {
            int row = static_cast<int>(i) * N + j;
            trips.emplace_back(row, row, 1.0);
            for (int k = 0; k < N; ++k)
                for (auto& [x, m] : K.mass[j][k]) {
                    std::vector<int> y(pts[i]);
                    for (int c = 0; c < d; ++c) y[c] += x[c];
                    auto it = idx.find(y);
                    if (it == idx.end()) continue;
                    trips.emplace_back(it->second * N + k, row, -t * m.mid());
                }
        }
    Eigen::SparseMatrix<double> M(n, n);
    M.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(M);
    if (lu.info() != Eigen::Success) throw NumericalError("kernel Green system is singular");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs[idx.at(std::vector<int>(d, 0)) * N + start] = 1.0;
    Eigen::VectorXd y = lu.solve(rhs);
    std::vector<double> out;
    for (auto& [x, k] : targets) {
        auto it = idx.find(x);
        if (it == idx.end()) throw DomainError("Green target outside the box");
        double v = y[it->second * N + k];
        if (!(v >= 0.0)) throw DomainError("kernel Green function diverges at t = " + std::to_string(t));
        out.push_back(v);
    }
    return out;
}

// Martin kernel K_r(h, g_n), h = (z, k), g_n = (n step, 0), from the kernel's Green function on a
// box around the ray. On N_eta(H) the kernel Green function is the group Green function.
inline double martin_along_ray_box(const ParabolicKernel& K, const std::vector<int>& z, int k,
                                   const std::vector<int>& step, int n, int margin) {
    std::vector<int> g(step), gz(step);
    for (size_t i = 0; i < g.size(); ++i) {
        g[i] *= n;
        gz[i] = g[i] - z[i];
    }
    int box = std::max(linf_norm(g), linf_norm(gz)) + margin;
    if (k == 0) {
        auto v = kernel_green(K, 1.0, box, {{gz, 0}, {g, 0}}, 0);
        return v[0] / v[1];
    }
    return kernel_green(K, 1.0, box, {{gz, 0}}, k)[0] / kernel_green(K, 1.0, box, {{g, 0}}, 0)[0];
}

struct WoessFit {
    double rho = 0.0;    // fitted factor parameter
    double scale = 0.0;  // fitted multiplicative constant
    std::vector<long> points;
    std::vector<double> kernel_values, fitted;
    double max_rel_error = 0.0;
};

// Fits G_p(0, x) ~ c G^{(H)}_rho(0, x), G^{(H)} the Green function of the factor's own step law,
// by golden-section search on rho with the best c for each rho (least squares in log scale).
inline WoessFit woess_fit(const ParabolicKernel& K, const FreeProductWalk& walk, const std::vector<long>& points,
                          int box = 200) {
    if (K.dim != 1) throw ConfigError("Woess fit is implemented for rank-one factors");
    const Group& G = walk.group();
    int a = walk.form().atomic_index(K.factor, G.factor(K.factor).kind == FactorSpec::Kind::free ? 1 : 0);
    const auto& F = walk.fourier(a);
    WoessFit w;
    w.points = points;
    std::vector<std::pair<std::vector<int>, int>> tg;
    for (long x : points) tg.push_back({{static_cast<int>(x)}, 0});
    w.kernel_values = kernel_green(K, 1.0, box, tg);
    std::vector<std::vector<int>> xs;
    for (long x : points) xs.push_back({static_cast<int>(x)});
    auto misfit = [&](double rho, double& c, std::vector<double>& g) {
        g = F.green_many(rho, xs);
        double s = 0.0;
        for (size_t i = 0; i < g.size(); ++i) s += std::log(w.kernel_values[i] / g[i]);
        c = std::exp(s / static_cast<double>(g.size()));
        double m = 0.0;
        for (size_t i = 0; i < g.size(); ++i) m += std::pow(std::log(w.kernel_values[i] / (c * g[i])), 2);
        return m;
    };
    double lo = 1e-9, hi = 1.0 - 1e-12;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = 0.0;
    std::vector<double> g;
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = misfit(x1, c, g), f2 = misfit(x2, c, g);
    for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = misfit(x1, c, g);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = misfit(x2, c, g);
        }
    }
    w.rho = 0.5 * (lo + hi);
    misfit(w.rho, c, g);
    w.scale = c;
    for (size_t i = 0; i < g.size(); ++i) {
        w.fitted.push_back(c * g[i]);
        w.max_rel_error = std::max(w.max_rel_error, std::abs(w.fitted[i] / w.kernel_values[i] - 1.0));
    }
    return w;
}

// ---------------------------------------------------------------------------------------------
// Local limit exponent.

struct LocalLimitFit {
    double slope = 0.0;        // fit of log p^(n)(0,0) vs log n on [n_max/2, n_max]
    double slope_early = 0.0;  // same on [n_max/4, n_max/2]; the gap is the drift band
    double residual = 0.0;     // rms of the tail fit
    double leakage = 0.0;      // mass that left the window by n_max
    bool lazy_shift = false;
    double lambda_min = 1.0;
    std::vector<double> returns;  // p^(n)(0,0), n = 0..n_max
    int window = 0;

    double band() const { return std::abs(slope - slope_early); }
};

inline double fit_log_slope(const std::vector<double>& v, int a, int b, double* rms = nullptr) {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = a; i <= b; ++i) {
        double x = std::log(static_cast<double>(i)), y = std::log(v[i]);
        n += 1;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx), icpt = (sy - slope * sx) / n;
    if (rms) {
        double s = 0.0;
        for (int i = a; i <= b; ++i) s += std::pow(std::log(v[i]) - icpt - slope * std::log(static_cast<double>(i)), 2);
        *rms = std::sqrt(s / n);
    }
    return slope;
}

// The kernel is renormalized to spectral radius 1 by the Doob transform at the minimizer u*,
// made lazy with alpha = 1/2 when no diagonal mass is present, then iterated on a window.
inline LocalLimitFit local_limit_exponent(const ParabolicKernel& K, int n_max, int window = 0,
                                          double leak_tol = 1e-6) {
    if (n_max < 8) throw ConfigError("local limit fit needs n_max >= 8");
    const int N = K.size(), d = K.dim;
    auto lm = lambda_min(K);
    LocalLimitFit fit;
    fit.lambda_min = lm.lambda;
    const auto& C = lm.eig.right;
    std::vector<std::vector<std::vector<std::pair<std::vector<int>, double>>>> q(
        N, std::vector<std::vector<std::pair<std::vector<int>, double>>>(N));
    double var = 0.0, diag = 0.0;
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k)
            for (auto& [x, m] : K.mass[j][k]) {
                double w = m.mid() * detail::tilt(x, lm.u) * C[k] / (lm.lambda * C[j]);
                q[j][k].emplace_back(x, w);
                double r2 = 0.0;
                for (int v : x) r2 = std::max(r2, static_cast<double>(v) * v);
                var = std::max(var, w * r2);
                if (j == k && linf_norm(x) == 0) diag += w;
            }
    if (diag == 0.0) {
        fit.lazy_shift = true;
        for (int j = 0; j < N; ++j) {
            for (auto& [x, w] : q[j][j]) w *= 0.5;
            for (int k = 0; k < N; ++k)
                if (k != j)
                    for (auto& [x, w] : q[j][k]) w *= 0.5;
            q[j][j].emplace_back(std::vector<int>(d, 0), 0.5);
        }
    }
    int J = std::max(1, K.max_jump());
    if (window <= 0) window = static_cast<int>(std::ceil(7.0 * std::sqrt(std::max(var, 1e-3) * n_max))) + J;
    fit.window = window;
    const int side = 2 * window + 1;
    size_t cells = 1;
    for (int i = 0; i < d; ++i) cells *= static_cast<size_t>(side);
    if (cells * static_cast<size_t>(N) > 200'000'000) throw ResourceError("local limit window too large");
    std::vector<size_t> stride(d);
    for (int i = d - 1, s = 1; i >= 0; --i, s *= side) stride[i] = static_cast<size_t>(s);
    auto offset = [&](const std::vector<int>& x) {
        long o = 0;
        for (int i = 0; i < d; ++i) o += static_cast<long>(x[i]) * static_cast<long>(stride[i]);
        return o;
    };
    std::vector<int> coord(d);
    std::vector<double> cur(cells * N, 0.0), nxt(cells * N);
    size_t origin = 0;
    for (int i = 0; i < d; ++i) origin += static_cast<size_t>(window) * stride[i];
    cur[origin * N] = 1.0;
    fit.returns.push_back(1.0);
    for (int n = 1; n <= n_max; ++n) {
        std::fill(nxt.begin(), nxt.end(), 0.0);
        double total = 0.0;
        for (size_t c = 0; c < cells; ++c) {
            bool nonzero = false;
            for (int j = 0; j < N; ++j) nonzero = nonzero || cur[c * N + j] != 0.0;
            if (!nonzero) continue;
            size_t rem = c;
            for (int i = 0; i < d; ++i) {
                coord[i] = static_cast<int>(rem / stride[i]) - window;
                rem %= stride[i];
            }
            for (int j = 0; j < N; ++j) {
                double v = cur[c * N + j];
                if (v == 0.0) continue;
                for (int k = 0; k < N; ++k)
                    for (auto& [x, w] : q[j][k]) {
                        bool inside = true;
                        for (int i = 0; i < d && inside; ++i) inside = std::abs(coord[i] + x[i]) <= window;
                        if (!inside) continue;
                        nxt[(static_cast<long>(c) + offset(x)) * N + k] += v * w;
                    }
            }
        }
        cur.swap(nxt);
        for (double v : cur) total += v;
        fit.leakage = std::max(0.0, 1.0 - total);
        fit.returns.push_back(cur[origin * N]);
    }
    if (fit.leakage > leak_tol && fit.leakage > 1e-9 * n_max)
        throw ResourceError("local limit window leaks " + std::to_string(fit.leakage) + " of the mass by n_max");
    fit.slope = fit_log_slope(fit.returns, n_max / 2, n_max, &fit.residual);
    fit.slope_early = fit_log_slope(fit.returns, n_max / 4, n_max / 2);
    return fit;
}

struct RankGate {
    int d = 0;
    double exponent = 0.0;
    bool moment_sum_converges = false;  // sum n p^(n) < infinity  <=>  exponent < -2
    bool degenerescence_admissible = false;
    std::string note;
};

inline RankGate rank_gate(int d, double fitted_exponent) {
    RankGate g;
    g.d = d;
    g.exponent = fitted_exponent;
    g.moment_sum_converges = fitted_exponent < -2.0;
    g.degenerescence_admissible = d >= 5;
    g.note = std::string(g.degenerescence_admissible ? "degenerescence admissible" : "degenerescence excluded") +
             (g.moment_sum_converges ? "; sum n p^(n) convergent" : "; sum n p^(n) divergent");
    return g;
}

// ---------------------------------------------------------------------------------------------
// Spectral degenerescence along a factor.

struct DegenerescenceVerdict {
    enum class Kind { non_degenerate, inconclusive, degenerate_consistent };
    int factor = 0;
    int d = 0;
    double radius = 0.0;  // largest r with a convergent fixed point (the ladder's R-hat)
    std::vector<double> epsilons, r_used, min_lambda;
    double extrapolated = 0.0;
    Kind verdict = Kind::inconclusive;
    std::string rank_note;

    std::string verdict_name() const {
        switch (verdict) {
        case Kind::non_degenerate: return "non-degenerate";
        case Kind::degenerate_consistent: return "degenerate-consistent";
        default: return "inconclusive";
        }
    }
};

// min lambda at r = R-hat (1 - eps) along the ladder. The fixed point has a square-root
// singularity at R, so the three smallest rungs are fitted by a + b sqrt(eps) + c eps and a is
// the extrapolated value (two rungs: a + b sqrt(eps)). A proper factor of rank <= 4 can never be
// degenerate, so such a verdict is reported as an internal error.
inline DegenerescenceVerdict is_spectrally_degenerate(const GreenSolver& solver, int factor, int eta,
                                                      std::vector<double> ladder = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6},
                                                      double margin = 1e-4, double tol = 1e-4, int window = 2,
                                                      int truncation = 8) {
    if (ladder.size() < 2) throw ConfigError("degenerescence ladder needs at least two rungs");
    std::sort(ladder.begin(), ladder.end(), std::greater<>());
    const Group& G = solver.group();
    DegenerescenceVerdict v;
    v.factor = factor;
    v.d = factor_dim(G, factor);
    v.radius = solver.walk().radius_by_fixed_point();
    for (double eps : ladder) {
        if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("ladder rungs must lie in (0, 1)");
        double r = v.radius * (1.0 - eps);
        auto K = first_return_kernel(solver, factor, eta, r, window, truncation);
        v.epsilons.push_back(eps);
        v.r_used.push_back(r);
        v.min_lambda.push_back(lambda_min(K).lambda);
    }
    const int n = static_cast<int>(v.epsilons.size()), m = std::min(n, 3);
    Eigen::MatrixXd A(m, m);
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) {
        double e = v.epsilons[n - m + i];
        A(i, 0) = 1.0;
        A(i, 1) = std::sqrt(e);
        if (m == 3) A(i, 2) = e;
        b[i] = v.min_lambda[n - m + i];
    }
    v.extrapolated = A.fullPivLu().solve(b)[0];
    bool proper = G.num_factors() > 1;
    bool below = true;
    for (double m : v.min_lambda) below = below && m < 1.0 - margin;
    if (below && v.extrapolated < 1.0 - margin) v.verdict = DegenerescenceVerdict::Kind::non_degenerate;
    else if (std::abs(v.extrapolated - 1.0) <= tol) v.verdict = DegenerescenceVerdict::Kind::degenerate_consistent;
    else v.verdict = DegenerescenceVerdict::Kind::inconclusive;
    if (!proper) {
        v.rank_note = "H is the whole group; the rank gate applies to proper factors only";
    } else {
        v.rank_note = rank_gate(v.d, -0.5 * v.d).note;
        if (v.verdict == DegenerescenceVerdict::Kind::degenerate_consistent && v.d <= 4)
            throw InternalError("degenerate verdict for a factor of rank " + std::to_string(v.d));
    }
    return v;
}

} // namespace martinlab
