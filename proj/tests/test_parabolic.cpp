#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <martinlab/measure.hpp>
#include <martinlab/parabolic.hpp>

using namespace martinlab;

namespace {

Group make(std::vector<std::string> f) { return Group(GroupSpec::parse(f)); }

FiniteMeasure adapted(const Group& g) {
    MeasureSpec m;
    m.kind = "adapted";
    m.alpha = 0.0;
    m.weights.assign(g.num_factors(), 1.0 / g.num_factors());
    return make_measure(g, m);
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd u(static_cast<int>(v.size()));
    int i = 0;
    for (double x : v) u[i++] = x;
    return u;
}

// 1x1 kernel on Z with p(1) = a, p(-1) = b.
ParabolicKernel drift_kernel(double a, double b) {
    ParabolicKernel K;
    K.dim = 1;
    K.window = 1;
    K.neighbourhood = {GroupElement{}};
    K.mass.assign(1, std::vector<std::map<std::vector<int>, Interval>>(1));
    K.mass[0][0][{1}] = Interval(a);
    K.mass[0][0][{-1}] = Interval(b);
    K.defect.assign(1, std::vector<double>(1, 0.0));
    return K;
}

} // namespace

TEST(Kernel, SingleFactorIsRMu) {
    auto z = make({"Z"});
    GreenSolver s(make_measure(z, MeasureSpec{}));
    auto K = first_return_kernel(s, 0, 0, 0.9, 2);
    EXPECT_EQ(K.size(), 1);
    EXPECT_EQ(K.mass[0][0].size(), 2u);
    EXPECT_DOUBLE_EQ(K.mass[0][0].at({1}).mid(), 0.45);
    EXPECT_DOUBLE_EQ(K.mass[0][0].at({-1}).mid(), 0.45);
    EXPECT_EQ(K.max_defect(), 0.0);
}

TEST(Kernel, ExcursionsReturnToTheExitPoint) {
    // an excursion through <b> can only come back at the point it left
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    double r = 0.9 * s.reference_radius().lower;
    auto K = first_return_kernel(s, 0, 0, r, 2);
    EXPECT_DOUBLE_EQ(K.mass[0][0].at({1}).mid(), r * 0.25);
    EXPECT_DOUBLE_EQ(K.mass[0][0].at({-1}).mid(), r * 0.25);
    EXPECT_GT(K.mass[0][0].at({0}).lo, 0.0);
    EXPECT_EQ(K.mass[0][0].count({2}), 0u);
}

TEST(Kernel, LoopAndRestrictedRoutesAgree) {
    auto g = make({"Z", "Z"});
    GreenSolver s(adapted(g));
    double r = 0.8 * s.reference_radius().lower;
    auto a = first_return_kernel(s, 0, 0, r, 2, 8, KernelRoute::loops);
    auto b = first_return_kernel(s, 0, 0, r, 2, 10, KernelRoute::restricted);
    std::vector<int> o{0};
    double pa = a.mass[0][0].at(o).mid(), pb = b.mass[0][0].at(o).mid();
    EXPECT_LE(pb, pa * (1 + 1e-12));
    EXPECT_LT(pa - pb, 20 * b.defect[0][0] + 1e-12);
    EXPECT_LT(std::abs(pa - pb), 1e-3 * pa);
}

TEST(Kernel, SymmetricAndMonotoneInR) {
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    double R = s.reference_radius().lower;
    for (int eta : {0, 1}) {
        auto lo = first_return_kernel(s, 0, eta, 0.6 * R, 2, 6), hi = first_return_kernel(s, 0, eta, 0.9 * R, 2, 6);
        EXPECT_TRUE(lo.symmetric(1e-12));
        for (int j = 0; j < lo.size(); ++j)
            for (int k = 0; k < lo.size(); ++k)
                for (auto& [x, m] : lo.mass[j][k]) EXPECT_LE(m.mid(), hi.mass[j][k].at(x).mid());
    }
}

TEST(Kernel, NeighbourhoodGreenAtOneIsTheGroupGreen) {
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    double r = 0.9 * s.reference_radius().lower;
    FixedPointField f(s.walk(), r);
    double gee = f.ee().mid();
    std::vector<double> g102;
    for (int eta : {0, 1, 2}) {
        auto K = first_return_kernel(s, 0, eta, r, 2, 8);
        double g1 = kernel_green(K, 1.0, 120, {{{0}, 0}})[0];
        EXPECT_NEAR(g1, gee, 1e-3 * gee) << eta;
        g102.push_back(kernel_green(K, 1.02, 120, {{{0}, 0}})[0]);
    }
    // for t >= 1 more visits to the neighbourhood weigh more
    EXPECT_LT(g102[0], g102[1]);
    EXPECT_LT(g102[1], g102[2]);
}

TEST(Kernel, NonAdaptedMeasureRejected) {
    auto f2 = make({"F_2"});
    MeasureSpec m;
    m.kind = "uniform_ball";
    m.radius = 2;
    GreenSolver s(make_measure(f2, m));
    EXPECT_THROW(first_return_kernel(s, 0, 0, 0.5, 2), ConfigError);
    auto g = make({"Z", "F_2"});
    GreenSolver t(adapted(g));
    EXPECT_THROW(first_return_kernel(t, 1, 0, 0.5, 2), ConfigError);
}

TEST(Moments, ZeroMonotoneFinite) {
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    auto K = first_return_kernel(s, 0, 0, 0.9 * s.reference_radius().lower, 2);
    auto m0 = exponential_moment(K, 0.0), m1 = exponential_moment(K, 0.25), m2 = exponential_moment(K, 0.5);
    EXPECT_LE(m0[0][0].hi, 1.0);
    EXPECT_NEAR(m0[0][0].mid(), K.row_mass(0).mid(), 1e-15);
    EXPECT_LE(m0[0][0].hi, m1[0][0].lo);
    EXPECT_LE(m1[0][0].hi, m2[0][0].lo);
    EXPECT_TRUE(std::isfinite(m2[0][0].hi));
}

TEST(FMatrix, RowMassesCoshAndReflection) {
    auto z = make({"Z"});
    GreenSolver s(make_measure(z, MeasureSpec{}));
    auto K = first_return_kernel(s, 0, 0, 1.0, 2);
    EXPECT_DOUBLE_EQ(F_matrix(K, vec({0.0}))(0, 0), 1.0);
    for (double u : {0.1, 0.5, 1.3}) EXPECT_NEAR(F_matrix(K, vec({u}))(0, 0), std::cosh(u), 1e-15);

    auto zz = make({"Z", "Z"});
    GreenSolver t(adapted(zz));
    auto K1 = first_return_kernel(t, 0, 1, 0.8 * t.reference_radius().lower, 2, 6);
    Eigen::MatrixXd F0 = F_matrix(K1, vec({0.0}));
    for (int j = 0; j < K1.size(); ++j) EXPECT_NEAR(F0.row(j).sum(), K1.row_mass(j).mid(), 1e-14);
    Eigen::MatrixXd Fp = F_matrix(K1, vec({0.7})), Fm = F_matrix(K1, vec({-0.7}));
    EXPECT_LT((Fm - Fp.transpose()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_THROW(F_matrix(K1, vec({1e6})), DomainError);
}

TEST(Eigen, OneByOne) {
    Eigen::MatrixXd F(1, 1);
    F << 0.37;
    auto e = dominant_eig(F);
    EXPECT_EQ(e.lambda, 0.37);
    EXPECT_EQ(e.right[0], 1.0);
    EXPECT_EQ(e.left[0], 1.0);
}

TEST(Eigen, CoshAndSinh) {
    auto z = make({"Z"});
    GreenSolver s(make_measure(z, MeasureSpec{}));
    auto K = first_return_kernel(s, 0, 0, 1.0, 2);
    auto e = eigen_at(K, vec({0.5}));
    EXPECT_NEAR(e.lambda, 1.1276259652063807, 1e-14);
    EXPECT_NEAR(e.gradient[0], std::sinh(0.5), 1e-14);
    EXPECT_EQ(eigen_at(K, vec({0.0})).gradient[0], 0.0);
}

TEST(Eigen, MatchesDenseSolver) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::MatrixXd F(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) F(i, j) = U(rng);
        auto e = dominant_eig(F);
        Eigen::EigenSolver<Eigen::MatrixXd> es(F);
        double ref = es.eigenvalues().real().maxCoeff();
        EXPECT_NEAR(e.lambda, ref, 1e-12 * ref);
        EXPECT_LE(e.residual, 1e-10);
        EXPECT_TRUE((e.right.array() > 0).all());
        EXPECT_TRUE((e.left.array() > 0).all());
        EXPECT_NEAR(e.left.dot(e.right), 1.0, 1e-14);
    }
}

TEST(Eigen, ResidualOnNeighbourhoodKernel) {
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    auto K = first_return_kernel(s, 0, 2, 0.9 * s.reference_radius().lower, 2, 6);
    for (double u : {-0.8, 0.0, 0.3}) {
        auto e = eigen_at(K, vec({u}));
        EXPECT_LE(e.residual, 1e-10);
        // gradient against a central difference of lambda
        double h = 1e-5;
        double fd = (lambda_at(K, vec({u + h})) - lambda_at(K, vec({u - h}))) / (2 * h);
        EXPECT_NEAR(e.gradient[0], fd, 1e-8);
    }
}

TEST(LambdaMin, ClosedForms) {
    auto z = make({"Z"});
    GreenSolver s(make_measure(z, MeasureSpec{}));
    auto m1 = lambda_min(first_return_kernel(s, 0, 0, 1.0, 2));
    EXPECT_EQ(m1.u[0], 0.0);
    EXPECT_DOUBLE_EQ(m1.lambda, 1.0);
    auto m9 = lambda_min(first_return_kernel(s, 0, 0, 0.9, 2));
    EXPECT_DOUBLE_EQ(m9.lambda, 0.9);
    // lambda = a e^u + b e^-u: minimum 2 sqrt(ab) at u = log(b/a)/2
    auto md = lambda_min(drift_kernel(0.3, 0.1));
    EXPECT_NEAR(md.u[0], 0.5 * std::log(0.1 / 0.3), 1e-9);
    EXPECT_NEAR(md.lambda, 2 * std::sqrt(0.03), 1e-14);
    EXPECT_TRUE(md.positive_definite);
}

TEST(LambdaMin, SymmetricKernelsMinimizeAtZero) {
    for (auto spec : {std::vector<std::string>{"Z^2", "Z"}, std::vector<std::string>{"Z^3", "F_1"}}) {
        auto g = make(spec);
        GreenSolver s(adapted(g));
        auto m = lambda_min(first_return_kernel(s, 0, 0, 0.9 * s.reference_radius().lower, 2));
        EXPECT_LE(m.u.cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_TRUE(m.positive_definite);
        EXPECT_LT(m.lambda, 1.0);
    }
}

TEST(LambdaMin, ConvexAtRandomTilts) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (auto spec : {std::vector<std::string>{"Z", "Z"}, std::vector<std::string>{"Z^2", "Z"},
                      std::vector<std::string>{"Z^3", "Z"}}) {
        auto g = make(spec);
        GreenSolver s(adapted(g));
        auto K = first_return_kernel(s, 0, 0, 0.9 * s.reference_radius().lower, 2);
        for (int i = 0; i < 20; ++i) {
            Eigen::VectorXd u(K.dim);
            for (int c = 0; c < K.dim; ++c) u[c] = U(rng);
            EXPECT_GT(min_eigenvalue(lambda_hessian(K, u)), 0.0);
        }
    }
}

TEST(LevelSet, ClosedFormAndEvenness) {
    auto z = make({"Z"});
    GreenSolver s(make_measure(z, MeasureSpec{}));
    auto K = first_return_kernel(s, 0, 0, 0.9, 2);
    auto p = level_set_point(K, vec({1.0}));
    EXPECT_NEAR(p.u[0], std::acosh(1.0 / 0.9), 1e-12);
    EXPECT_NEAR(level_set_point(K, vec({-1.0})).u[0], -p.u[0], 1e-12);
    EXPECT_THROW(level_set_point(first_return_kernel(s, 0, 0, 1.0, 2), vec({1.0})), DomainError);
}

TEST(LevelSet, RoundTripOnPlane) {
    auto g = make({"Z^2", "Z"});
    GreenSolver s(adapted(g));
    auto K = first_return_kernel(s, 0, 0, 0.9 * s.reference_radius().lower, 2);
    for (double a : {0.0, 0.4, 1.1, 2.5, 4.0}) {
        Eigen::VectorXd th = vec({std::cos(a), std::sin(a)});
        auto p = level_set_point(K, th);
        EXPECT_NEAR(p.eig.lambda, 1.0, 1e-12);
        EXPECT_LE(p.angle_error, 1e-8);
        auto q = level_set_point(K, -th);
        EXPECT_LT((q.u + p.u).cwiseAbs().maxCoeff(), 1e-7);
    }
}

TEST(Martin, FormulaProperties) {
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    auto K = first_return_kernel(s, 0, 1, 0.9 * s.reference_radius().lower, 2, 6);
    auto p = level_set_point(K, vec({1.0}));
    EXPECT_EQ(parabolic_martin_kernel(p.eig, {0}, 0), 1.0);
    for (int a : {-3, 1, 4})
        for (int b : {-2, 5}) {
            double lhs = parabolic_martin_kernel(p.eig, {a + b}, 0);
            double rhs = parabolic_martin_kernel(p.eig, {a}, 0) * parabolic_martin_kernel(p.eig, {b}, 0);
            EXPECT_NEAR(lhs / rhs, 1.0, 1e-14);
        }
    EXPECT_LE(harmonicity_residual(K, p.eig, 3), 1e-12);
    auto off = eigen_at(K, vec({0.0}));
    EXPECT_THROW(parabolic_martin_kernel(off, {1}, 0), DomainError);
}

TEST(Martin, TreeFactorRayIsExact) {
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    auto K = first_return_kernel(s, 0, 1, 0.99 * s.reference_radius().lower, 2, 8);
    auto p = level_set_point(K, vec({1.0}));
    for (int k = 0; k < K.size(); ++k)
        EXPECT_NEAR(martin_along_ray_box(K, {1}, k, {1}, 30, 40) / parabolic_martin_kernel(p.eig, {1}, k), 1.0, 1e-10);
}

TEST(Martin, LatticeRayConverges) {
    auto g = make({"Z^2", "Z"});
    GreenSolver s(adapted(g));
    double r = 0.99 * s.reference_radius().lower;
    auto K = first_return_kernel(s, 0, 0, r, 2);
    FixedPointField f(s.walk(), r);
    auto p = level_set_point(K, vec({1.0, 1.0}));
    double prev = 1.0;
    for (int n : {5, 10, 20}) {
        double box = martin_along_ray_box(K, {1, 0}, 0, {1, 1}, n, 30);
        // the field's factorized Green function gives the same kernel
        EXPECT_NEAR(martin_along_ray(f, K, {1, 0}, 0, {1, 1}, n).mid() / box, 1.0, 1e-5);
        double gap = std::abs(box / parabolic_martin_kernel(p.eig, {1, 0}, 0) - 1.0);
        EXPECT_LT(gap, prev);
        prev = gap;
    }
    EXPECT_LT(prev, 0.01);
}

TEST(Woess, InducedGreenIsRescaledFactorGreen) {
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    for (double c : {0.5, 0.8}) {
        double r = c * s.reference_radius().lower;
        auto K = first_return_kernel(s, 0, 0, r, 2);
        auto w = woess_fit(K, s.walk(), {0, 1, 2, 3, 4});
        auto fp = s.walk().fixed_point(r);
        EXPECT_NEAR(w.rho, fp.zeta[0].mid(), 1e-6);
        EXPECT_NEAR(w.scale, 1.0 / (1.0 - s.walk().loops(fp, 0).mid()), 1e-6);
        EXPECT_LT(w.max_rel_error, 1e-6);
        FixedPointField f(s.walk(), r);
        for (size_t i = 0; i < w.points.size(); ++i) {
            double g = f.at(lattice_element(zz, 0, {static_cast<int>(w.points[i])})).mid();
            EXPECT_NEAR(w.kernel_values[i] / g, 1.0, 1e-9);
        }
    }
}

TEST(LocalLimit, LazyLatticeExponents) {
    for (int d : {1, 2}) {
        auto g = make({"Z^" + std::to_string(d)});
        MeasureSpec m;
        m.kind = "lazy";
        GreenSolver s(make_measure(g, m));
        auto fit = local_limit_exponent(first_return_kernel(s, 0, 0, 1.0, 1), d == 1 ? 400 : 200);
        EXPECT_NEAR(fit.slope, -0.5 * d, 0.05 * 0.5 * d);
        EXPECT_FALSE(fit.lazy_shift);
        EXPECT_LT(fit.leakage, 1e-6);
    }
}

TEST(LocalLimit, BinomialOracleAndLazyShift) {
    // SRW on Z is periodic; the shift gives p~ = (delta + p)/2, whose returns are C(2n, n) / 4^n
    auto z = make({"Z"});
    GreenSolver s(make_measure(z, MeasureSpec{}));
    auto fit = local_limit_exponent(first_return_kernel(s, 0, 0, 1.0, 1), 60);
    EXPECT_TRUE(fit.lazy_shift);
    double c = 1.0;
    for (int n = 1; n <= 60; ++n) {
        c *= (2.0 * n - 1.0) * (2.0 * n) / (static_cast<double>(n) * n) / 4.0;
        EXPECT_NEAR(fit.returns[n] / c, 1.0, 1e-12) << n;
    }
}

TEST(LocalLimit, SmallWindowLeaks) {
    auto z = make({"Z"});
    MeasureSpec m;
    m.kind = "lazy";
    GreenSolver s(make_measure(z, m));
    EXPECT_THROW(local_limit_exponent(first_return_kernel(s, 0, 0, 1.0, 1), 400, 5), ResourceError);
}

TEST(RankGate, Examples) {
    EXPECT_EQ(rank_gate(4, -2.0).note.rfind("degenerescence excluded", 0), 0u);
    EXPECT_FALSE(rank_gate(4, -2.0).degenerescence_admissible);
    EXPECT_TRUE(rank_gate(5, -2.5).degenerescence_admissible);
    EXPECT_TRUE(rank_gate(5, -2.5).moment_sum_converges);
    EXPECT_FALSE(rank_gate(2, -1.0).moment_sum_converges);
}

TEST(Degenerescence, LowRankFactorsAreNonDegenerate) {
    for (auto spec : {std::vector<std::string>{"Z^2", "Z"}, std::vector<std::string>{"Z^4", "Z"}}) {
        auto g = make(spec);
        GreenSolver s(adapted(g));
        for (int f = 0; f < 2; ++f) {
            auto v = is_spectrally_degenerate(s, f, 0);
            EXPECT_EQ(v.verdict, DegenerescenceVerdict::Kind::non_degenerate) << spec[f];
            EXPECT_EQ(v.min_lambda.size(), 5u);
        }
    }
}

TEST(Degenerescence, WholeGroupIsSelfDegenerate) {
    auto g = make({"Z^2"});
    GreenSolver s(make_measure(g, MeasureSpec{}));
    auto v = is_spectrally_degenerate(s, 0, 0);
    EXPECT_EQ(v.verdict, DegenerescenceVerdict::Kind::degenerate_consistent);
    EXPECT_NEAR(v.extrapolated, 1.0, 1e-9);
    EXPECT_NE(v.rank_note.find("whole group"), std::string::npos);
}
