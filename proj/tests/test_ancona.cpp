#include <gtest/gtest.h>

#include <cmath>

#include <martinlab/ancona.hpp>
#include <martinlab/measure.hpp>

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

// Range-2 measure on F_2 that prefers repeated letters; not radial.
FiniteMeasure skewed_f2(const Group& f2) {
    MeasureSpec c;
    c.kind = "custom";
    double tot = 0.0;
    for (auto& [e, d] : f2.ball(2)) {
        if (d == 0) continue;
        double w = d == 1 ? 1.0 : (e.syl[0].v[0] == e.syl[0].v[1] ? 0.15 : 0.05);
        c.atoms.emplace_back(f2.format(e), w);
        tot += w;
    }
    for (auto& a : c.atoms) a.second /= tot;
    return make_measure(f2, c);
}

} // namespace

TEST(Ancona, WeakRatioOnTreeIsInverseDiagonal) {
    // nearest-neighbour walk on a tree: G(x,z) = F(x,y) G(y,z) when y is on [x,z]
    auto zz = make({"Z", "Z"});
    GreenSolver s(adapted(zz));
    FixedPointField f(s.walk(), 0.9 * s.reference_radius().lower);
    Interval inv = Interval{1.0, 1.0} / f.ee();
    for (int n = 1; n <= 5; ++n)
        for (auto& [x, z] : midpoint_configurations(zz, n, 6)) {
            auto q = weak_ancona_ratio(f, x, zz.identity(), z);
            EXPECT_TRUE(q.overlaps(inv)) << zz.format(x) << " " << zz.format(z);
        }
}

TEST(Ancona, WeakLowerHalfAlwaysHolds) {
    auto g = make({"Z^2", "Z"});
    GreenSolver s(adapted(g));
    FixedPointField f(s.walk(), 0.95 * s.reference_radius().lower);
    auto ball = g.ball(3);
    for (size_t i = 0; i < ball.size(); i += 7)
        for (size_t j = 0; j < ball.size(); j += 11) {
            auto q = weak_ancona_ratio(f, ball[i].first, g.identity(), ball[j].first);
            EXPECT_TRUE(weak_ancona_lower_half(f, q));
        }
}

TEST(Ancona, RatioEquivariant) {
    auto g = make({"Z^2", "Z"});
    GreenSolver s(adapted(g));
    FixedPointField f(s.walk(), 0.9 * s.reference_radius().lower);
    auto x = g.parse("0:(2,1)*1:(1)"), y = g.parse("1:(-1)"), z = g.parse("1:(-2)*0:(0,3)");
    auto h = g.parse("0:(1,-1)*1:(3)");
    auto a = weak_ancona_ratio(f, x, y, z);
    auto b = weak_ancona_ratio(f, g.multiply(h, x), g.multiply(h, y), g.multiply(h, z));
    EXPECT_EQ(a.lo, b.lo);
    EXPECT_EQ(a.hi, b.hi);
}

TEST(Ancona, ScanConstantStableAcrossLengths) {
    auto g = make({"Z^2", "Z"});
    GreenSolver s(adapted(g));
    AnconaScanReport rep;
    for (double c : {0.5, 0.9, 0.99}) {
        FixedPointField f(s.walk(), c * s.reference_radius().lower);
        weak_ancona_scan(f, 6, 8, rep);
    }
    EXPECT_GE(rep.rows.size(), 100u);
    double c3 = rep.weak_constant(3), c6 = rep.weak_constant(6);
    EXPECT_GE(c3, 1.0);
    EXPECT_LE(c6, 1.5 * c3);
}

TEST(Ancona, MidpointConfigurationsShape) {
    auto g = make({"Z^2", "F_1"});
    for (int n = 1; n <= 4; ++n)
        for (auto& [x, z] : midpoint_configurations(g, n, 10)) {
            EXPECT_EQ(g.length(x), n);
            EXPECT_EQ(g.length(z), n);
            EXPECT_EQ(g.distance(x, z), 2L * n);
        }
}

TEST(Ancona, StrongDefectTrivialCases) {
    auto f2 = make({"F_2"});
    GreenSolver s(adapted(f2));
    FixedPointField f(s.walk(), 0.9 * s.reference_radius().lower);
    auto x = f2.parse("0:AA"), y = f2.parse("0:bab");
    EXPECT_EQ(strong_ancona_defect(f, x, y, x, f2.parse("0:bb")).hi, 0.0);
    // radial walk on a tree: H-shaped configurations have zero defect
    auto d = strong_ancona_defect(f, x, f2.parse("0:abab"), f2.parse("0:Ab"), f2.parse("0:abaB"));
    EXPECT_EQ(d.lo, 0.0);
    EXPECT_LT(d.hi, 1e-9);
}

TEST(Ancona, DistanceToOne) {
    EXPECT_EQ(distance_to_one({0.9, 1.2}).lo, 0.0);
    EXPECT_DOUBLE_EQ(distance_to_one({0.5, 0.75}).lo, 0.25);
    EXPECT_DOUBLE_EQ(distance_to_one({1.5, 2.0}).hi, 1.0);
}

TEST(Ancona, TubeDefectZeroForNearestNeighbourTreeWalk) {
    // restricted to a subtree the walk still factorizes along edges
    auto f2 = make({"F_2"});
    auto mu = make_measure(f2, MeasureSpec{});
    auto d = strong_ancona_defect_tube(mu, 0.9, f2.parse("0:BB"), f2.parse("0:ababaa"), f2.parse("0:Ab"),
                                       f2.parse("0:ababBa"), 1, 2);
    EXPECT_LT(d.defect, 1e-12);
}

TEST(Ancona, TubeDefectDecaysForSkewedMeasure) {
    auto f2 = make({"F_2"});
    auto mu = skewed_f2(f2);
    std::vector<double> k, v;
    for (auto& c : prefix_family(f2, 2, 6)) {
        auto d = strong_ancona_defect_tube(mu, 0.9, c.x, c.y, c.xp, c.yp, 2, 3);
        EXPECT_GT(d.defect, 0.0);
        EXPECT_LT(d.heuristic_error, 0.05 * d.defect);
        k.push_back(c.n);
        v.push_back(d.defect);
    }
    for (size_t i = 1; i < v.size(); ++i) EXPECT_LT(v[i], v[i - 1]);
    EXPECT_LT(log_slope(k, v), 0.0);
}

TEST(Ancona, TubeGreenGrowsWithTube) {
    auto f2 = make({"F_2"});
    auto mu = skewed_f2(f2);
    auto x = f2.parse("0:BB"), y = f2.parse("0:abaa");
    double prev = 0.0;
    for (int w = 1; w <= 3; ++w) {
        RestrictedSolver s(mu, 0.9, tube(f2, f2.geodesic(x, y), w));
        double g = s.green(x, y);
        EXPECT_GE(g, prev);
        prev = g;
    }
}

TEST(Ancona, PrefixFamilyNeedsFreeGroup) {
    EXPECT_THROW(prefix_family(make({"Z", "Z"}), 1, 2), ConfigError);
    auto f2 = make({"F_2"});
    for (auto& c : prefix_family(f2, 1, 5)) {
        EXPECT_EQ(f2.length(c.y), c.n + 2);
        EXPECT_EQ(f2.length(c.yp), c.n + 2);
    }
}

TEST(Ancona, AvoidanceCutVertex) {
    // nearest-neighbour walk on a tree must pass through e
    auto f2 = make({"F_2"});
    auto mu = make_measure(f2, MeasureSpec{});
    auto c = avoidance_decay(mu, 0.9, f2.parse("0:AAA"), f2.parse("0:bbb"), f2.identity(), {0, 1, 2}, 4);
    for (double v : c.value) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(c.log_concave());
}

TEST(Ancona, AvoidanceSkewedMeasure) {
    auto f2 = make({"F_2"});
    auto mu = skewed_f2(f2);
    auto c = avoidance_decay(mu, 0.9, f2.parse("0:AAAA"), f2.parse("0:bbbb"), f2.identity(), {0, 1, 2, 3}, 6);
    EXPECT_GT(c.value[0], 0.0);
    // range-2 jumps cannot cross a ball of radius >= 1 in a tree
    for (size_t i = 1; i < c.value.size(); ++i) EXPECT_EQ(c.value[i], 0.0);
    EXPECT_TRUE(c.nonincreasing());
    EXPECT_TRUE(c.window_monotone());
    EXPECT_TRUE(c.log_concave());
}

TEST(Ancona, AvoidanceInLatticeFactor) {
    auto g = make({"Z^2"});
    auto mu = make_measure(g, MeasureSpec{});
    auto c = avoidance_decay(mu, 0.9, g.parse("0:(-3,0)"), g.parse("0:(3,0)"), g.identity(), {0, 1, 2}, 5);
    for (double v : c.value) EXPECT_GT(v, 0.0);
    EXPECT_TRUE(c.nonincreasing());
    EXPECT_TRUE(c.window_monotone());
}

TEST(Ancona, LogConcaveChecker) {
    AvoidanceCurve c;
    c.value = {1.0, 0.5, 0.1, 0.0};
    EXPECT_TRUE(c.log_concave());
    c.value = {1.0, 0.1, 0.05};
    EXPECT_FALSE(c.log_concave());
    c.value = {1.0, 0.0, 0.5};
    EXPECT_FALSE(c.log_concave());
}

TEST(Ancona, AvoidanceWindowMustContainEndpoints) {
    auto f2 = make({"F_2"});
    auto mu = make_measure(f2, MeasureSpec{});
    EXPECT_THROW(avoidance_decay(mu, 0.9, f2.parse("0:aaaa"), f2.identity(), f2.identity(), {0}, 3), DomainError);
}
