#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "group.hpp"

namespace martinlab {

using Atom = std::pair<GroupElement, double>;

class FiniteMeasure {
public:
    FiniteMeasure() = default;
    FiniteMeasure(Group g, std::vector<Atom> atoms) : group_(std::move(g)), atoms_(std::move(atoms)) {
        std::map<GroupElement, double> merged;
        for (auto& [e, m] : atoms_) {
            group_.check(e);
            merged[e] += m;
        }
        atoms_.clear();
        for (auto& [e, m] : merged)
            if (m != 0.0) atoms_.emplace_back(e, m);
    }

    const Group& group() const { return group_; }
    const std::vector<Atom>& atoms() const { return atoms_; }

    double mass(const GroupElement& g) const {
        auto it = std::lower_bound(atoms_.begin(), atoms_.end(), g,
                                   [](const Atom& a, const GroupElement& x) { return a.first < x; });
        return (it != atoms_.end() && it->first == g) ? it->second : 0.0;
    }

    double mass_at_identity() const { return mass(group_.identity()); }
    bool lazy() const { return mass_at_identity() > 0.0; }

    int max_jump() const {
        long j = 0;
        for (auto& a : atoms_) j = std::max(j, group_.length(a.first));
        return static_cast<int>(j);
    }

    // Smallest mass on a standard generator (Harnack constant denominator).
    double min_generator_mass() const {
        double m = 1.0;
        for (auto& g : group_.generators()) m = std::min(m, mass(g));
        return m;
    }

    double total() const {
        double s = 0.0;
        for (auto& a : atoms_) s += a.second;
        return s;
    }

    bool symmetric(double tol = 1e-14) const {
        for (auto& [g, m] : atoms_)
            if (std::abs(m - mass(group_.inverse(g))) > tol * std::max(1.0, m)) return false;
        return true;
    }

    // The semigroup generated by the support reaches every standard generator.
    bool admissible() const {
        int radius = 2 * std::max(1, max_jump()) + 1;
        std::unordered_set<GroupElement, ElementHash> reached;
        std::vector<GroupElement> frontier;
        for (auto& a : atoms_) {
            if (group_.length(a.first) <= radius && reached.insert(a.first).second) frontier.push_back(a.first);
        }
        const size_t cap = 200000;
        while (!frontier.empty() && reached.size() < cap) {
            std::vector<GroupElement> next;
            for (auto& g : frontier)
                for (auto& a : atoms_) {
                    GroupElement h = group_.multiply_unchecked(g, a.first);
                    if (group_.length(h) > radius) continue;
                    if (reached.insert(h).second) next.push_back(std::move(h));
                }
            frontier = std::move(next);
        }
        for (auto& s : group_.generators())
            if (!reached.count(s)) return false;
        return true;
    }

    void validate() const {
        if (atoms_.empty()) throw ConfigError("measure has empty support");
        for (auto& a : atoms_)
            if (!(a.second >= 0.0) || !std::isfinite(a.second)) throw ConfigError("measure has a negative mass");
        if (std::abs(total() - 1.0) > 1e-12) throw ConfigError("measure masses do not sum to 1");
        if (!symmetric()) throw ConfigError("measure is not symmetric");
        if (!admissible()) throw ConfigError("measure support does not generate the group (not admissible)");
    }

private:
    Group group_;
    std::vector<Atom> atoms_;
};

struct MeasureSpec {
    std::string kind = "srw";          // srw | lazy | adapted | uniform_ball | custom
    double alpha = 0.5;                // laziness for "lazy"; optional identity mass for "adapted"
    std::vector<double> weights;       // factor weights for "adapted"
    int radius = 1;                    // for "uniform_ball"
    std::vector<std::pair<std::string, double>> atoms;  // for "custom"
    bool symmetrize = false;
};

namespace detail {

inline std::vector<Atom> srw_atoms(const Group& g, double scale) {
    auto gens = g.generators();
    std::vector<Atom> out;
    for (auto& s : gens) out.emplace_back(s, scale / static_cast<double>(gens.size()));
    return out;
}

inline std::vector<Atom> symmetrized(const Group& g, const std::vector<Atom>& atoms) {
    std::map<GroupElement, double> m;
    for (auto& [e, w] : atoms) {
        m[e] += 0.5 * w;
        m[g.inverse(e)] += 0.5 * w;
    }
    double tot = 0.0;
    for (auto& kv : m) tot += kv.second;
    std::vector<Atom> out;
    for (auto& kv : m) out.emplace_back(kv.first, kv.second / tot);
    return out;
}

} // namespace detail

inline FiniteMeasure make_measure(const Group& g, const MeasureSpec& spec) {
    std::vector<Atom> atoms;
    if (spec.kind == "srw") {
        atoms = detail::srw_atoms(g, 1.0);
    } else if (spec.kind == "lazy") {
        if (!(spec.alpha >= 0.0 && spec.alpha < 1.0)) throw ConfigError("laziness alpha must lie in [0,1)");
        atoms = detail::srw_atoms(g, 1.0 - spec.alpha);
        if (spec.alpha > 0.0) atoms.emplace_back(g.identity(), spec.alpha);
    } else if (spec.kind == "adapted") {
        if (static_cast<int>(spec.weights.size()) != g.num_factors())
            throw ConfigError("adapted measure needs one weight per factor");
        double lazy = spec.alpha;
        if (!(lazy >= 0.0 && lazy < 1.0)) throw ConfigError("adapted identity mass must lie in [0,1)");
        double tot = 0.0;
        for (double w : spec.weights) {
            if (!(w > 0.0)) throw ConfigError("adapted weights must be positive");
            tot += w;
        }
        if (std::abs(tot - 1.0) > 1e-12) throw ConfigError("adapted weights do not sum to 1");
        for (int f = 0; f < g.num_factors(); ++f) {
            std::vector<GroupElement> gens;
            for (auto& s : g.generators())
                if (s.syl[0].factor == f) gens.push_back(s);
            for (auto& s : gens)
                atoms.emplace_back(s, (1.0 - lazy) * spec.weights[f] / static_cast<double>(gens.size()));
        }
        if (lazy > 0.0) atoms.emplace_back(g.identity(), lazy);
    } else if (spec.kind == "uniform_ball") {
        if (spec.radius < 1) throw ConfigError("uniform_ball radius must be >= 1");
        auto b = g.ball(spec.radius, 200000);
        for (auto& [e, d] : b) atoms.emplace_back(e, 1.0 / static_cast<double>(b.size()));
    } else if (spec.kind == "custom") {
        for (auto& [s, w] : spec.atoms) atoms.emplace_back(g.parse(s), w);
    } else {
        throw ConfigError("unknown measure kind '" + spec.kind + "'");
    }
    if (spec.symmetrize) atoms = detail::symmetrized(g, atoms);
    FiniteMeasure m(g, atoms);
    m.validate();
    return m;
}

// Lattice step law of one atomic factor of an adapted measure.
struct LatticeFactor {
    int dim = 1;
    double alpha = 0.0;                                      // total mass of this factor
    std::vector<std::pair<std::vector<int>, double>> steps;  // normalised, no mass at 0
    int source_factor = 0;                                   // factor index in the group
    int letter = 0;                                          // F_k letter (1-based) or 0 for Z^d
};

// mu = m0*delta_e + sum_l alpha_l * mu_l, each mu_l living on one atomic lattice factor.
// F_k factors are split into k copies of Z when every atom is a power of a single letter.
struct AdaptedForm {
    double m0 = 0.0;
    std::vector<LatticeFactor> factors;
    std::vector<std::vector<int>> atomic_of;  // group factor -> atomic factor indices

    int atomic_index(int factor, int letter) const {
        const auto& a = atomic_of[factor];
        return letter == 0 ? a.at(0) : a.at(letter - 1);
    }
};

inline std::optional<AdaptedForm> adapted_form(const FiniteMeasure& mu) {
    const Group& g = mu.group();
    AdaptedForm form;
    form.atomic_of.resize(g.num_factors());
    for (int f = 0; f < g.num_factors(); ++f) {
        const auto& fs = g.factor(f);
        if (fs.kind == FactorSpec::Kind::free_abelian) {
            form.atomic_of[f].push_back(static_cast<int>(form.factors.size()));
            form.factors.push_back(LatticeFactor{fs.rank, 0.0, {}, f, 0});
        } else {
            for (int i = 1; i <= fs.rank; ++i) {
                form.atomic_of[f].push_back(static_cast<int>(form.factors.size()));
                form.factors.push_back(LatticeFactor{1, 0.0, {}, f, i});
            }
        }
    }
    for (auto& [e, m] : mu.atoms()) {
        if (e.syl.empty()) {
            form.m0 += m;
            continue;
        }
        if (e.syl.size() != 1) return std::nullopt;
        const auto& s = e.syl[0];
        if (g.factor(s.factor).kind == FactorSpec::Kind::free_abelian) {
            auto& lf = form.factors[form.atomic_of[s.factor][0]];
            lf.steps.emplace_back(s.v, m);
        } else {
            int letter = std::abs(s.v[0]);
            for (int x : s.v)
                if (x != s.v[0]) return std::nullopt;
            auto& lf = form.factors[form.atomic_of[s.factor][letter - 1]];
            int sign = s.v[0] > 0 ? 1 : -1;
            lf.steps.emplace_back(std::vector<int>{sign * static_cast<int>(s.v.size())}, m);
        }
    }
    for (auto& lf : form.factors) {
        for (auto& st : lf.steps) lf.alpha += st.second;
        if (lf.alpha <= 0.0) return std::nullopt;
        for (auto& st : lf.steps) st.second /= lf.alpha;
        std::sort(lf.steps.begin(), lf.steps.end());
    }
    return form;
}

// Atomic syllables of a group element: (atomic factor, lattice vector).
inline std::vector<std::pair<int, std::vector<int>>> atomic_syllables(const Group& g, const AdaptedForm& form,
                                                                      const GroupElement& e) {
    std::vector<std::pair<int, std::vector<int>>> out;
    for (auto& s : e.syl) {
        if (g.factor(s.factor).kind == FactorSpec::Kind::free_abelian) {
            out.emplace_back(form.atomic_of[s.factor][0], s.v);
        } else {
            size_t i = 0;
            while (i < s.v.size()) {
                size_t j = i;
                while (j < s.v.size() && s.v[j] == s.v[i]) ++j;
                int letter = std::abs(s.v[i]);
                int sign = s.v[i] > 0 ? 1 : -1;
                out.emplace_back(form.atomic_of[s.factor][letter - 1],
                                 std::vector<int>{sign * static_cast<int>(j - i)});
                i = j;
            }
        }
    }
    return out;
}

template <class Scalar>
struct ConvolutionTableT {
    std::vector<std::vector<std::pair<GroupElement, Scalar>>> rows;
    std::vector<Scalar> defect;  // mass dropped by the window in each row

    Scalar at(int n, const GroupElement& g) const {
        const auto& row = rows.at(n);
        auto it = std::lower_bound(row.begin(), row.end(), g,
                                   [](const auto& a, const GroupElement& x) { return a.first < x; });
        return (it != row.end() && it->first == g) ? it->second : Scalar(0);
    }
};
using ConvolutionTable = ConvolutionTableT<double>;

// mu^{*n} for n <= n_max on ball(window_radius). Truncation must be permitted when the window
// is smaller than n_max * max_jump; the dropped mass per row is recorded.
template <class Scalar = double>
ConvolutionTableT<Scalar> convolution_powers(const FiniteMeasure& mu, int n_max, int window_radius,
                                             bool allow_truncation = false, size_t budget = 4'000'000) {
    const Group& g = mu.group();
    if (!allow_truncation && window_radius < n_max * mu.max_jump())
        throw ConfigError("convolution window smaller than n_max * max jump and truncation not permitted");
    std::vector<std::pair<GroupElement, Scalar>> atoms;
    for (auto& [e, m] : mu.atoms()) atoms.emplace_back(e, Scalar(m));
    ConvolutionTableT<Scalar> t;
    t.rows.push_back({{g.identity(), Scalar(1)}});
    t.defect.push_back(Scalar(0));
    for (int n = 1; n <= n_max; ++n) {
        std::unordered_map<GroupElement, Scalar, ElementHash> acc;
        Scalar dropped(0);
        for (auto& [x, px] : t.rows.back())
            for (auto& [s, ms] : atoms) {
                GroupElement y = g.multiply_unchecked(x, s);
                if (g.length(y) > window_radius) {
                    dropped += px * ms;
                    continue;
                }
                acc[y] += px * ms;
            }
        if (acc.size() > budget)
            throw ResourceError("convolution row " + std::to_string(n) + " exceeds element budget");
        std::vector<std::pair<GroupElement, Scalar>> row(acc.begin(), acc.end());
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        t.rows.push_back(std::move(row));
        t.defect.push_back(t.defect.back() + dropped);
    }
    return t;
}

// Uniform double in [0,1) from 53 random bits; stable across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1p-53; }

inline std::vector<GroupElement> sample_path(const FiniteMeasure& mu, int length, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> cdf;
    double c = 0.0;
    for (auto& a : mu.atoms()) cdf.push_back(c += a.second);
    std::vector<GroupElement> path{mu.group().identity()};
    for (int i = 0; i < length; ++i) {
        double u = unit_uniform(rng) * c;
        size_t k = static_cast<size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        k = std::min(k, cdf.size() - 1);
        path.push_back(mu.group().multiply_unchecked(path.back(), mu.atoms()[k].first));
    }
    return path;
}

} // namespace martinlab
