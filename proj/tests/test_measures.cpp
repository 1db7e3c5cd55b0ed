#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>

#include <martinlab/measure.hpp>

using namespace martinlab;
using boost::multiprecision::cpp_rational;

namespace {

Group make(std::vector<std::string> f) { return Group(GroupSpec::parse(f)); }

FiniteMeasure srw(const Group& g) { return make_measure(g, MeasureSpec{}); }

} // namespace

TEST(Measures, SrwMasses) {
    auto z = make({"Z"});
    auto m = srw(z);
    EXPECT_DOUBLE_EQ(m.mass(z.parse("0:(1)")), 0.5);
    EXPECT_DOUBLE_EQ(m.mass(z.parse("0:(-1)")), 0.5);

    auto f2 = make({"F_2"});
    auto mf = srw(f2);
    for (auto s : {"0:a", "0:A", "0:b", "0:B"}) EXPECT_DOUBLE_EQ(mf.mass(f2.parse(s)), 0.25);
}

TEST(Measures, AdaptedMixture) {
    auto g = make({"Z^2", "Z"});
    MeasureSpec s;
    s.kind = "adapted";
    s.alpha = 0.0;
    s.weights = {0.5, 0.5};
    auto m = make_measure(g, s);
    EXPECT_DOUBLE_EQ(m.mass(g.parse("0:(1,0)")), 0.125);
    EXPECT_DOUBLE_EQ(m.mass(g.parse("0:(0,-1)")), 0.125);
    EXPECT_DOUBLE_EQ(m.mass(g.parse("1:(1)")), 0.25);
    EXPECT_EQ(m.atoms().size(), 6u);
}

TEST(Measures, ValidationErrors) {
    auto g = make({"Z^2", "Z"});
    MeasureSpec s;
    s.kind = "adapted";
    s.alpha = 0.0;
    s.weights = {0.5, 0.6};
    EXPECT_THROW(make_measure(g, s), ConfigError);

    MeasureSpec c;
    c.kind = "custom";
    c.atoms = {{"0:(1,0)", 0.5}, {"0:(-1,0)", 0.5}};
    EXPECT_THROW(make_measure(g, c), ConfigError);  // not admissible

    MeasureSpec a;
    a.kind = "custom";
    a.atoms = {{"0:(1,0)", 0.2}, {"0:(-1,0)", 0.1}, {"0:(0,1)", 0.1}, {"0:(0,-1)", 0.1}, {"1:(1)", 0.25},
               {"1:(-1)", 0.25}};
    EXPECT_THROW(make_measure(g, a), ConfigError);  // not symmetric
    a.symmetrize = true;
    EXPECT_NO_THROW(make_measure(g, a));

    MeasureSpec k;
    k.kind = "teleport";
    EXPECT_THROW(make_measure(g, k), ConfigError);
}

TEST(Measures, UniformBallAndLazy) {
    auto f2 = make({"F_2"});
    MeasureSpec u;
    u.kind = "uniform_ball";
    u.radius = 2;
    auto m = make_measure(f2, u);
    EXPECT_EQ(m.atoms().size(), 17u);
    EXPECT_TRUE(m.lazy());
    EXPECT_EQ(m.max_jump(), 2);

    MeasureSpec l;
    l.kind = "lazy";
    l.alpha = 0.5;
    auto ml = make_measure(make({"Z^2"}), l);
    EXPECT_DOUBLE_EQ(ml.mass_at_identity(), 0.5);
}

TEST(Measures, ConvolutionExamples) {
    auto z = make({"Z"});
    auto t = convolution_powers(srw(z), 4, 4);
    EXPECT_DOUBLE_EQ(t.at(4, z.identity()), 0.375);
    EXPECT_DOUBLE_EQ(t.at(0, z.identity()), 1.0);

    auto f2 = make({"F_2"});
    EXPECT_DOUBLE_EQ(convolution_powers(srw(f2), 2, 2).at(2, f2.identity()), 0.25);

    auto z2 = make({"Z^2"});
    EXPECT_DOUBLE_EQ(convolution_powers(srw(z2), 2, 2).at(2, z2.identity()), 0.25);
}

TEST(Measures, RowSumsAndSupport) {
    auto g = make({"Z^2", "Z"});
    auto m = srw(g);
    auto t = convolution_powers(m, 6, 6);
    for (int n = 0; n <= 6; ++n) {
        double s = 0.0;
        for (auto& [x, p] : t.rows[n]) {
            s += p;
            EXPECT_LE(g.length(x), n);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Measures, TruncationDefect) {
    auto z = make({"Z"});
    EXPECT_THROW(convolution_powers(srw(z), 6, 3), ConfigError);
    auto t = convolution_powers(srw(z), 6, 3, true);
    double s = 0.0;
    for (auto& [x, p] : t.rows[6]) s += p;
    EXPECT_NEAR(s + t.defect[6], 1.0, 1e-12);
    EXPECT_GT(t.defect[6], 0.0);
}

TEST(Measures, SymmetryPropagates) {
    auto g = make({"Z^2", "F_1"});
    MeasureSpec s;
    s.kind = "adapted";
    s.alpha = 0.2;
    s.weights = {0.7, 0.3};
    auto m = make_measure(g, s);
    auto t = convolution_powers(m, 6, 6);
    for (int n = 0; n <= 6; ++n)
        for (auto& [x, p] : t.rows[n]) EXPECT_DOUBLE_EQ(p, t.at(n, g.inverse(x)));
}

TEST(Measures, ChapmanKolmogorov) {
    auto g = make({"Z", "Z"});
    auto m = srw(g);
    auto t = convolution_powers(m, 5, 5);
    for (auto& [x, p] : t.rows[5]) {
        double s = 0.0;
        for (auto& [h, q] : t.rows[2]) s += q * t.at(3, g.multiply(g.inverse(h), x));
        EXPECT_NEAR(s, p, 1e-15);
    }
}

TEST(Measures, RationalCrossCheck) {
    auto g = make({"Z^2", "Z"});
    MeasureSpec s;
    s.kind = "adapted";
    s.alpha = 0.25;
    s.weights = {0.5, 0.5};
    auto m = make_measure(g, s);
    auto fl = convolution_powers<double>(m, 6, 6);
    auto ex = convolution_powers<cpp_rational>(m, 6, 6);
    for (int n = 0; n <= 6; ++n) {
        ASSERT_EQ(fl.rows[n].size(), ex.rows[n].size());
        for (size_t i = 0; i < fl.rows[n].size(); ++i) {
            double exact = static_cast<double>(ex.rows[n][i].second);
            EXPECT_NEAR(fl.rows[n][i].second, exact, 1e-15 * std::max(1.0, exact));
        }
    }
    // lazy SRW on Z^2 up to n = 10
    MeasureSpec l;
    l.kind = "lazy";
    l.alpha = 0.5;
    auto z2 = make({"Z^2"});
    auto ml = make_measure(z2, l);
    auto fz = convolution_powers<double>(ml, 10, 10);
    auto ez2 = convolution_powers<cpp_rational>(ml, 10, 10);
    for (auto& [x, p] : ez2.rows[10]) EXPECT_NEAR(fz.at(10, x), static_cast<double>(p), 1e-16);
    // SRW on Z: exact C(2n,n)/4^n
    auto z = make({"Z"});
    auto ez = convolution_powers<cpp_rational>(srw(z), 10, 10);
    EXPECT_EQ(ez.at(10, z.identity()), cpp_rational(252, 1024));
}

TEST(Measures, SamplePaths) {
    auto z = make({"Z"});
    auto m = srw(z);
    EXPECT_EQ(sample_path(m, 0, 7).size(), 1u);
    auto a = sample_path(m, 4, 42), b = sample_path(m, 4, 42);
    EXPECT_EQ(a, b);
    EXPECT_LE(z.length(a.back()), 4);
}

TEST(Measures, EmpiricalMassesWithinBands) {
    // abelian group keeps path elements one syllable long
    auto g = make({"Z^2"});
    MeasureSpec s;
    s.kind = "lazy";
    s.alpha = 0.2;
    auto m = make_measure(g, s);
    const int n = 100000;
    auto path = sample_path(m, n, 2024);
    std::map<GroupElement, int> counts;
    for (int i = 1; i <= n; ++i) counts[g.multiply(g.inverse(path[i - 1]), path[i])]++;
    for (auto& [x, p] : m.atoms()) {
        double sigma = std::sqrt(n * p * (1 - p));
        EXPECT_LE(std::abs(counts[x] - n * p), 3 * sigma) << g.format(x);
    }
}

TEST(Measures, AdaptedFormSplitsFreeFactors) {
    auto f2 = make({"F_2"});
    auto form = adapted_form(srw(f2));
    ASSERT_TRUE(form.has_value());
    EXPECT_EQ(form->factors.size(), 2u);
    EXPECT_DOUBLE_EQ(form->factors[0].alpha, 0.5);
    auto syl = atomic_syllables(f2, *form, f2.parse("0:aabA"));
    ASSERT_EQ(syl.size(), 3u);
    EXPECT_EQ(syl[0].second, std::vector<int>{2});
    EXPECT_EQ(syl[2].second, std::vector<int>{-1});

    MeasureSpec u;
    u.kind = "uniform_ball";
    u.radius = 2;
    EXPECT_FALSE(adapted_form(make_measure(f2, u)).has_value());
}
