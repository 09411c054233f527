#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <boost/rational.hpp>

#include <cmath>
#include <stdexcept>

namespace riskdp {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::rational<BigInt>;

/// Exact dyadic rational equal to the given double. Every finite double is
/// representable as mantissa / 2^k, so no precision is lost.
inline Rational exact_rational(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("exact_rational: non-finite input");
    if (x == 0.0) return Rational(0);
    int exp = 0;
    const double frac = std::frexp(x, &exp);           // x = frac * 2^exp, |frac| in [0.5, 1)
    const auto mant = static_cast<long long>(std::ldexp(frac, 53));  // exact integer
    const int shift = 53 - exp;
    if (shift >= 0) return Rational(BigInt(mant), BigInt(1) << shift);
    return Rational(BigInt(mant) << (-shift), BigInt(1));
}

inline double to_double(const Rational& r) {
    return boost::rational_cast<double>(r);
}

}  // namespace riskdp
