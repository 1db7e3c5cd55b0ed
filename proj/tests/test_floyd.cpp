#include <gtest/gtest.h>

#include <cmath>

#include <martinlab/floyd.hpp>

using namespace martinlab;

namespace {

Group make(std::vector<std::string> f) { return Group(GroupSpec::parse(f)); }

} // namespace

TEST(Floyd, ConfigValidation) {
    FloydConfig c;
    c.a = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.a = 2.0;
    c.radius = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Floyd, BasicValues) {
    auto f2 = make({"F_2"});
    FloydConfig cfg;
    cfg.radius = 4;
    auto x = f2.parse("0:ab");
    EXPECT_EQ(floyd_distance(f2, cfg, x, x).value, 0.0);
    for (double a : {1.5, 2.0, 5.0}) {
        FloydConfig c2{a, x, 3};
        auto v = floyd_distance(f2, c2, x, f2.parse("0:abb"));
        EXPECT_DOUBLE_EQ(v.value, 1.0);
        EXPECT_TRUE(v.exact);
    }
    FloydConfig far{2.0, f2.identity(), 3};
    EXPECT_THROW(floyd_distance(f2, far, f2.identity(), f2.parse("0:abab")), DomainError);
}

TEST(Floyd, TreeGeodesicCost) {
    // in a tree every path crosses every geodesic edge: delta = sum of a^{-dist(e, edge)}
    auto f2 = make({"F_2"});
    FloydSpace sp(f2, 2.0, 6);
    auto v = sp.distance(f2.identity(), f2.parse("0:aaa"), f2.parse("0:aB"));
    // edges aaa-aa, aa-a, a-aB
    EXPECT_DOUBLE_EQ(v.value, 0.25 + 0.5 + 0.5);
    EXPECT_TRUE(v.exact);
}

TEST(Floyd, MetricAxiomsOnF2Ball4) {
    auto f2 = make({"F_2"});
    FloydSpace sp(f2, 2.0, 4);
    const int n = static_cast<int>(sp.size());
    std::vector<std::vector<double>> D(n);
    for (int i = 0; i < n; ++i) D[i] = *sp.row(i);
    long violations = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (D[i][j] != D[j][i]) ++violations;
            if ((i == j) != (D[i][j] == 0.0)) ++violations;
            for (int k = 0; k < n; ++k)
                if (D[i][k] > D[i][j] + D[j][k] + 1e-15) ++violations;
        }
    EXPECT_EQ(violations, 0);
}

TEST(Floyd, EquivarianceBitExact) {
    auto g = make({"Z^2", "Z"});
    FloydSpace sp(g, 2.0, 5);
    auto o = g.parse("0:(1,0)"), x = g.parse("0:(1,0)*1:(1)"), y = g.parse("0:(0,-1)*1:(-1)");
    auto h = g.parse("1:(2)*0:(0,1)");
    auto v1 = sp.distance(o, x, y);
    auto v2 = sp.distance(g.multiply(h, o), g.multiply(h, x), g.multiply(h, y));
    EXPECT_EQ(v1.value, v2.value);
}

TEST(Floyd, VisibilityExamples) {
    auto f2 = make({"F_2"});
    FloydSpace sp(f2, 2.0, 6);
    auto x = f2.parse("0:ab");
    auto v = visibility_bound_check(sp, f2.identity(), x, x);
    EXPECT_EQ(v.lhs, 0.0);
    EXPECT_TRUE(v.holds());
    auto w = visibility_bound_check(sp, f2.identity(), f2.parse("0:AA"), f2.parse("0:bb"));
    EXPECT_EQ(w.d, 0);
    EXPECT_DOUBLE_EQ(w.rhs, 2.0 / (1.0 - 0.5));
    EXPECT_TRUE(w.holds());
}

TEST(Floyd, VisibilityExhaustiveBall4) {
    auto g = make({"Z", "Z"});
    FloydSpace sp(g, 2.0, 4);
    auto ball = g.ball(4);
    for (auto& [x, dx] : ball)
        for (auto& [y, dy] : ball) ASSERT_TRUE(visibility_bound_check(sp, g.identity(), x, y).holds());
}

TEST(Floyd, TransitionPointsAlternating) {
    auto zz = make({"Z", "Z"});
    std::vector<GroupElement> alpha{zz.identity()};
    for (int i = 0; i < 8; ++i) alpha.push_back(zz.multiply(alpha.back(), zz.parse(i % 2 ? "1:(1)" : "0:(1)")));
    for (int eta : {2, 3})
        for (int i = 0; i < static_cast<int>(alpha.size()); ++i) EXPECT_TRUE(is_transition_point(zz, alpha, i, 0, eta));
}

TEST(Floyd, TransitionPointsDeepInFactor) {
    auto g = make({"Z^2", "Z"});
    auto alpha = g.geodesic(g.identity(), g.parse("0:(4,2)"));
    for (int i = 1; i + 1 < static_cast<int>(alpha.size()); ++i) EXPECT_FALSE(is_transition_point(g, alpha, i, 0, 1));
    // clipped interval at an endpoint: still inside the factor, hence deep
    EXPECT_FALSE(is_transition_point(g, alpha, 0, 0, 10));
    // a syllable switch is a transition point for eta = 1
    auto beta = g.geodesic(g.identity(), g.parse("0:(2,0)*1:(2)"));
    EXPECT_TRUE(is_transition_point(g, beta, 2, 0, 1));
    EXPECT_FALSE(is_transition_point(g, beta, 2, 1, 1));
}

TEST(Floyd, TransitionSets) {
    auto f2 = make({"F_2"});
    FloydSpace sp(f2, 2.0, 8);
    EXPECT_EQ(floyd_transition_set(sp, {f2.parse("0:ab")}, 0.5), std::vector<int>{0});
    auto alpha = f2.geodesic(f2.identity(), f2.parse("0:abababab"));
    EXPECT_FALSE(floyd_transition_set(sp, alpha, 0.1).empty());

    auto g = make({"Z^2", "Z"});
    FloydSpace sg(g, 2.0, 6);
    auto beta = g.geodesic(g.identity(), g.parse("0:(6,0)"));
    auto small = floyd_transition_set(sg, beta, 0.05), big = floyd_transition_set(sg, beta, 0.9);
    EXPECT_TRUE(std::includes(small.begin(), small.end(), big.begin(), big.end()));
    EXPECT_LT(big.size(), small.size());
    // the deepest interior index of the Z^2 syllable leaves first
    EXPECT_TRUE(std::find(small.begin(), small.end(), 3) != small.end());
    EXPECT_TRUE(std::find(big.begin(), big.end(), 3) == big.end());
}

TEST(Floyd, FellowTravel) {
    auto f2 = make({"F_2"});
    FloydSpace sp(f2, 2.0, 8);
    auto x = f2.identity(), y = f2.parse("0:abab");
    auto alpha = f2.geodesic(x, y);
    auto ts = floyd_transition_set(sp, alpha, 0.2);
    EXPECT_GE(fellow_travel_count(sp, x, y, x, y, 0.2, alpha), static_cast<int>(ts.size()));

    std::vector<GroupElement> cand;
    for (auto& [g, d] : f2.ball(2)) cand.push_back(g);
    auto xp = f2.parse("0:aaa"), yp = f2.parse("0:aab");
    auto xq = f2.parse("0:BBB"), yq = f2.parse("0:BBa");
    EXPECT_EQ(fellow_travel_count(sp, xp, yp, xq, yq, 0.6, cand), 0);
    int prev = 1 << 30;
    for (double d : {0.01, 0.1, 0.3, 0.6, 1.0, 2.0}) {
        int c = fellow_travel_count(sp, x, y, f2.parse("0:a"), f2.parse("0:abA"), d, cand);
        EXPECT_LE(c, prev);
        prev = c;
    }
}

TEST(Floyd, TransitionFloorStableAcrossScales) {
    auto zz = make({"Z", "Z"});
    FloydSpace sp(zz, 2.0, 8);
    auto t6 = transition_floyd_floor(sp, 6, 0, 1), t8 = transition_floyd_floor(sp, 8, 0, 1);
    EXPECT_GT(t6.transition_points, 0);
    EXPECT_GT(t6.floor, 0.0);
    EXPECT_EQ(t8.floor, t6.floor);
    EXPECT_TRUE(t8.exact);
}

TEST(Floyd, GromovProductIsTheGeodesicDistanceOnTrees) {
    for (auto spec : {std::vector<std::string>{"F_2"}, std::vector<std::string>{"Z", "F_1", "Z"}}) {
        auto g = make(spec);
        EXPECT_TRUE(cayley_tree(g));
        auto ball = g.ball(3);
        for (auto& [x, dx] : ball)
            for (auto& [y, dy] : ball) {
                long d = std::numeric_limits<long>::max();
                for (auto& p : g.geodesic(x, y)) d = std::min(d, g.length(p));
                EXPECT_EQ(2 * d, dx + dy - g.distance(x, y));
            }
    }
    EXPECT_FALSE(cayley_tree(make({"Z^2", "Z"})));
}

TEST(Floyd, AuditFindsNoViolations) {
    for (auto spec : {std::vector<std::string>{"F_2"}, std::vector<std::string>{"Z^2", "Z"}}) {
        FloydSpace sp(make(spec), 2.0, 4);
        auto au = floyd_audit(sp);
        EXPECT_EQ(au.violations(), 0) << spec[0];
        EXPECT_EQ(au.pairs, static_cast<long>(sp.size() * sp.size()));
    }
}
