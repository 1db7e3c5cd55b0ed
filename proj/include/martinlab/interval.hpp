#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace martinlab {

// Closed interval of nonnegative reals; arithmetic assumes lo >= 0.
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    Interval() = default;
    Interval(double v) : lo(v), hi(v) {}
    Interval(double l, double h) : lo(l), hi(h) {}

    double mid() const { return std::isfinite(hi) ? 0.5 * (lo + hi) : lo; }
    double width() const { return hi - lo; }
    bool contains(double v) const { return lo <= v && v <= hi; }
    bool bounded() const { return std::isfinite(hi); }
    bool overlaps(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }

    static Interval unbounded_above(double lo) {
        return {lo, std::numeric_limits<double>::infinity()};
    }
};

inline Interval operator+(const Interval& a, const Interval& b) { return {a.lo + b.lo, a.hi + b.hi}; }
inline Interval operator*(const Interval& a, const Interval& b) {
    double hi = (a.hi == 0.0 || b.hi == 0.0) ? 0.0 : a.hi * b.hi;
    return {a.lo * b.lo, hi};
}
inline Interval operator/(const Interval& a, const Interval& b) {
    double lo = b.hi > 0 ? a.lo / b.hi : 0.0;
    double hi = b.lo > 0 ? a.hi / b.lo : std::numeric_limits<double>::infinity();
    if (a.hi == 0.0) hi = 0.0;
    return {lo, hi};
}
inline Interval& operator+=(Interval& a, const Interval& b) { return a = a + b; }
inline Interval& operator*=(Interval& a, const Interval& b) { return a = a * b; }

// Outward padding for accumulated floating-point error.
inline constexpr double kRoundingPad = 1e-12;

inline Interval padded(const Interval& a, double rel = kRoundingPad) {
    return {a.lo * (1.0 - rel), a.hi * (1.0 + rel)};
}

inline Interval hull(const Interval& a, const Interval& b) {
    return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

inline std::ostream& operator<<(std::ostream& os, const Interval& i) {
    return os << '[' << i.lo << ", " << i.hi << ']';
}

} // namespace martinlab
