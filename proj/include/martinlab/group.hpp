#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace martinlab {

struct FactorSpec {
    enum class Kind { free_abelian, free };
    Kind kind = Kind::free_abelian;
    int rank = 1;

    bool operator==(const FactorSpec&) const = default;

    // "Z^2", "Z", "F_2"
    static FactorSpec parse(const std::string& s) {
        auto bad = [&] { return ConfigError("unrecognised factor '" + s + "' (expected Z^d or F_k)"); };
        if (s.empty()) throw bad();
        FactorSpec f;
        std::string rest;
        if (s[0] == 'Z') {
            f.kind = Kind::free_abelian;
            rest = s.size() > 1 ? s.substr(s[1] == '^' ? 2 : 1) : "1";
        } else if (s[0] == 'F') {
            f.kind = Kind::free;
            rest = s.size() > 1 ? s.substr(s[1] == '_' ? 2 : 1) : "";
        } else {
            throw bad();
        }
        if (rest.empty() || !std::all_of(rest.begin(), rest.end(), ::isdigit)) throw bad();
        f.rank = std::stoi(rest);
        if (f.rank < 1 || f.rank > 26) throw bad();
        return f;
    }

    std::string str() const {
        return kind == Kind::free_abelian ? "Z^" + std::to_string(rank) : "F_" + std::to_string(rank);
    }
};

struct GroupSpec {
    std::vector<FactorSpec> factors;

    bool operator==(const GroupSpec&) const = default;

    static GroupSpec parse(const std::vector<std::string>& names) {
        GroupSpec g;
        for (auto& n : names) g.factors.push_back(FactorSpec::parse(n));
        if (g.factors.empty()) throw ConfigError("group needs at least one factor");
        return g;
    }

    std::string str() const {
        std::string s;
        for (size_t i = 0; i < factors.size(); ++i) s += (i ? " * " : "") + factors[i].str();
        return s;
    }
};

// Nontrivial element of one factor. Z^d: coordinate vector. F_k: reduced word, letters +-(i+1).
struct Syllable {
    int factor = 0;
    std::vector<int> v;

    auto operator<=>(const Syllable&) const = default;
    bool operator==(const Syllable&) const = default;
};

struct GroupElement {
    std::vector<Syllable> syl;

    bool is_identity() const { return syl.empty(); }
    auto operator<=>(const GroupElement&) const = default;
    bool operator==(const GroupElement&) const = default;
};

struct ElementHash {
    size_t operator()(const GroupElement& g) const {
        uint64_t h = 0x9e3779b97f4a7c15ull;
        for (auto& s : g.syl) {
            h = (h ^ static_cast<uint64_t>(s.factor + 1)) * 0x100000001b3ull;
            for (int x : s.v) h = (h ^ static_cast<uint64_t>(static_cast<int64_t>(x))) * 0x100000001b3ull;
            h ^= h >> 29;
        }
        return static_cast<size_t>(h);
    }
};

struct Coset {
    GroupElement rep;
    int factor = 0;
};

struct Projection {
    GroupElement point;
    long distance = 0;
};

class Group {
public:
    Group() = default;
    explicit Group(GroupSpec spec) : spec_(std::move(spec)) {
        if (spec_.factors.empty()) throw ConfigError("group needs at least one factor");
    }

    const GroupSpec& spec() const { return spec_; }
    int num_factors() const { return static_cast<int>(spec_.factors.size()); }
    const FactorSpec& factor(int i) const { return spec_.factors.at(i); }

    GroupElement identity() const { return {}; }

    void check(const GroupElement& g) const {
        int prev = -1;
        for (auto& s : g.syl) {
            if (s.factor < 0 || s.factor >= num_factors())
                throw ConfigError("element uses factor index outside group " + spec_.str());
            const auto& f = spec_.factors[s.factor];
            if (f.kind == FactorSpec::Kind::free_abelian && static_cast<int>(s.v.size()) != f.rank)
                throw ConfigError("syllable rank does not match factor " + f.str());
            if (f.kind == FactorSpec::Kind::free)
                for (int x : s.v)
                    if (x == 0 || std::abs(x) > f.rank) throw ConfigError("letter outside " + f.str());
            if (syllable_trivial(s) || s.factor == prev) throw ConfigError("element not in normal form");
            prev = s.factor;
        }
    }

    // Word length of one syllable.
    long syllable_length(const Syllable& s) const {
        if (spec_.factors[s.factor].kind == FactorSpec::Kind::free) return static_cast<long>(s.v.size());
        long n = 0;
        for (int x : s.v) n += std::abs(x);
        return n;
    }

    long length(const GroupElement& g) const {
        long n = 0;
        for (auto& s : g.syl) n += syllable_length(s);
        return n;
    }

    GroupElement inverse(const GroupElement& g) const {
        GroupElement r;
        r.syl.reserve(g.syl.size());
        for (auto it = g.syl.rbegin(); it != g.syl.rend(); ++it) r.syl.push_back(syllable_inverse(*it));
        return r;
    }

    GroupElement multiply(const GroupElement& a, const GroupElement& b) const {
        check(a);
        check(b);
        return multiply_unchecked(a, b);
    }

    GroupElement multiply_unchecked(const GroupElement& a, const GroupElement& b) const {
        GroupElement r = a;
        size_t i = 0;
        while (i < b.syl.size() && !r.syl.empty() && r.syl.back().factor == b.syl[i].factor) {
            Syllable m = syllable_product(r.syl.back(), b.syl[i]);
            r.syl.pop_back();
            ++i;
            if (!syllable_trivial(m)) {
                r.syl.push_back(std::move(m));
                break;
            }
        }
        r.syl.insert(r.syl.end(), b.syl.begin() + static_cast<long>(i), b.syl.end());
        return r;
    }

    long distance(const GroupElement& a, const GroupElement& b) const {
        return length(multiply_unchecked(inverse(a), b));
    }

    // Element of a single factor; v is a coordinate vector (Z^d) or a word (F_k).
    GroupElement factor_element(int factor, std::vector<int> v) const {
        Syllable s{factor, std::move(v)};
        if (spec_.factors.at(factor).kind == FactorSpec::Kind::free) s.v = free_reduce(s.v);
        GroupElement g;
        if (!syllable_trivial(s)) g.syl.push_back(std::move(s));
        check(g);
        return g;
    }

    // Standard symmetric generators in enumeration order.
    std::vector<GroupElement> generators() const {
        std::vector<GroupElement> gens;
        for (int f = 0; f < num_factors(); ++f) {
            const auto& fs = spec_.factors[f];
            for (int i = 0; i < fs.rank; ++i) {
                for (int sign : {-1, 1}) {
                    Syllable s{f, {}};
                    if (fs.kind == FactorSpec::Kind::free_abelian) {
                        s.v.assign(fs.rank, 0);
                        s.v[i] = sign;
                    } else {
                        s.v = {sign * (i + 1)};
                    }
                    gens.push_back(GroupElement{{s}});
                }
            }
        }
        std::sort(gens.begin(), gens.end());
        return gens;
    }

    // Length-then-lexicographic order on normal forms.
    bool less(const GroupElement& a, const GroupElement& b) const {
        long la = length(a), lb = length(b);
        if (la != lb) return la < lb;
        return a < b;
    }

    // Spheres S_0..S_radius, each sorted. Throws ResourceError past the element budget.
    std::vector<std::vector<GroupElement>> spheres(int radius, size_t budget = 4'000'000) const {
        std::vector<std::vector<GroupElement>> out;
        out.push_back({identity()});
        size_t total = 1;
        auto gens = generators();
        for (int k = 1; k <= radius; ++k) {
            std::unordered_set<GroupElement, ElementHash> seen;
            const auto& prev = out[k - 1];
            std::unordered_set<GroupElement, ElementHash> before;
            if (k >= 2) before.insert(out[k - 2].begin(), out[k - 2].end());
            for (auto& g : prev)
                for (auto& s : gens) {
                    GroupElement h = multiply_unchecked(g, s);
                    if (before.count(h)) continue;
                    seen.insert(std::move(h));
                }
            total += seen.size();
            if (total > budget)
                throw ResourceError("ball of radius " + std::to_string(k) + " exceeds element budget " +
                                    std::to_string(budget));
            std::vector<GroupElement> sphere(seen.begin(), seen.end());
            std::sort(sphere.begin(), sphere.end());
            out.push_back(std::move(sphere));
        }
        return out;
    }

    std::vector<std::pair<GroupElement, int>> ball(int radius, size_t budget = 4'000'000) const {
        std::vector<std::pair<GroupElement, int>> out;
        auto sp = spheres(radius, budget);
        for (int k = 0; k <= radius; ++k)
            for (auto& g : sp[k]) out.emplace_back(g, k);
        return out;
    }

    // Geodesic vertex path; at each step the length-lex smallest successor relative to x.
    std::vector<GroupElement> geodesic(const GroupElement& x, const GroupElement& y) const {
        GroupElement w = multiply(inverse(x), y);
        std::vector<GroupElement> path{x};
        GroupElement u;
        long remaining = length(w);
        auto gens = generators();
        while (remaining > 0) {
            bool found = false;
            GroupElement best;
            for (auto& s : gens) {
                GroupElement cand = multiply_unchecked(u, s);
                if (distance(cand, w) != remaining - 1) continue;
                if (!found || cand < best) {
                    best = cand;
                    found = true;
                }
            }
            u = best;
            --remaining;
            path.push_back(multiply_unchecked(x, u));
        }
        return path;
    }

    // Canonical representative: strip a trailing syllable in the coset's factor.
    Coset canonical(const Coset& c) const {
        Coset r = c;
        if (!r.rep.syl.empty() && r.rep.syl.back().factor == c.factor) r.rep.syl.pop_back();
        return r;
    }

    bool same_coset(const Coset& a, const Coset& b) const {
        return a.factor == b.factor && canonical(a).rep == canonical(b).rep;
    }

    bool in_coset(const GroupElement& g, const Coset& c) const {
        GroupElement w = multiply_unchecked(inverse(c.rep), g);
        return w.syl.empty() || (w.syl.size() == 1 && w.syl[0].factor == c.factor);
    }

    // Nearest point of the coset rep*P to g. The minimiser is unique in a free product.
    Projection project_to_coset(const GroupElement& g, const Coset& c) const {
        check(g);
        check(c.rep);
        GroupElement w = multiply_unchecked(inverse(g), c.rep);
        if (!w.syl.empty() && w.syl.back().factor == c.factor) {
            Syllable s = w.syl.back();
            w.syl.pop_back();
            GroupElement sinv{{syllable_inverse(s)}};
            return {multiply_unchecked(c.rep, sinv), length(w)};
        }
        return {c.rep, length(w)};
    }

    // "e" or syllables "f:payload" joined by '*'.
    std::string format(const GroupElement& g) const {
        if (g.syl.empty()) return "e";
        std::string out;
        for (size_t i = 0; i < g.syl.size(); ++i) {
            const auto& s = g.syl[i];
            if (i) out += '*';
            out += std::to_string(s.factor) + ':';
            if (spec_.factors[s.factor].kind == FactorSpec::Kind::free_abelian) {
                out += '(';
                for (size_t j = 0; j < s.v.size(); ++j) out += (j ? "," : "") + std::to_string(s.v[j]);
                out += ')';
            } else {
                for (int x : s.v) out += static_cast<char>(x > 0 ? 'a' + x - 1 : 'A' - x - 1);
            }
        }
        return out;
    }

    GroupElement parse(const std::string& text) const {
        GroupElement g;
        if (text == "e" || text.empty()) return g;
        std::stringstream ss(text);
        std::string part;
        while (std::getline(ss, part, '*')) {
            auto colon = part.find(':');
            if (colon == std::string::npos) throw ConfigError("bad element syntax '" + text + "'");
            int f = std::stoi(part.substr(0, colon));
            if (f < 0 || f >= num_factors()) throw ConfigError("bad factor index in '" + text + "'");
            std::string pay = part.substr(colon + 1);
            std::vector<int> v;
            if (spec_.factors[f].kind == FactorSpec::Kind::free_abelian) {
                if (pay.size() < 2 || pay.front() != '(' || pay.back() != ')')
                    throw ConfigError("bad lattice payload in '" + text + "'");
                std::stringstream ps(pay.substr(1, pay.size() - 2));
                std::string num;
                while (std::getline(ps, num, ',')) v.push_back(std::stoi(num));
            } else {
                for (char ch : pay) {
                    if (ch >= 'a' && ch <= 'z') v.push_back(ch - 'a' + 1);
                    else if (ch >= 'A' && ch <= 'Z') v.push_back(-(ch - 'A' + 1));
                    else throw ConfigError("bad letter in '" + text + "'");
                }
            }
            g = multiply(g, factor_element(f, v));
        }
        return g;
    }

    bool syllable_trivial(const Syllable& s) const {
        if (spec_.factors[s.factor].kind == FactorSpec::Kind::free) return s.v.empty();
        return std::all_of(s.v.begin(), s.v.end(), [](int x) { return x == 0; });
    }

    Syllable syllable_inverse(const Syllable& s) const {
        Syllable r{s.factor, {}};
        if (spec_.factors[s.factor].kind == FactorSpec::Kind::free) {
            r.v.assign(s.v.rbegin(), s.v.rend());
            for (int& x : r.v) x = -x;
        } else {
            r.v = s.v;
            for (int& x : r.v) x = -x;
        }
        return r;
    }

    Syllable syllable_product(const Syllable& a, const Syllable& b) const {
        Syllable r{a.factor, {}};
        if (spec_.factors[a.factor].kind == FactorSpec::Kind::free) {
            r.v = a.v;
            for (int x : b.v) {
                if (!r.v.empty() && r.v.back() == -x) r.v.pop_back();
                else r.v.push_back(x);
            }
        } else {
            r.v = a.v;
            for (size_t i = 0; i < r.v.size(); ++i) r.v[i] += b.v[i];
        }
        return r;
    }

    static std::vector<int> free_reduce(const std::vector<int>& w) {
        std::vector<int> r;
        for (int x : w) {
            if (!r.empty() && r.back() == -x) r.pop_back();
            else r.push_back(x);
        }
        return r;
    }

private:
    GroupSpec spec_;
};

} // namespace martinlab
