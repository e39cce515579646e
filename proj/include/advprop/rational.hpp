#pragma once

#include <cstdint>
#include <numeric>
#include <string>

#include "advprop/common.hpp"

namespace advprop {

/// Exact rational, used wherever a ratio must stay exact: the adversarial
/// fraction p_adv, epoch calibration, and budget formulas.
struct Rational {
    long long num = 0;
    long long den = 1;

    Rational() = default;
    Rational(long long n, long long d) : num(n), den(d) {
        if (den == 0) throw ConfigError("rational with zero denominator");
        if (den < 0) { num = -num; den = -den; }
        long long g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) { num /= g; den /= g; }
    }

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool is_zero() const { return num == 0; }
    bool is_one() const { return num == den; }

    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num == b.num && a.den == b.den;
    }
};

/// Parses "a/b", an integer, or a decimal like "0.2" (kept exact: 0.2 -> 1/5).
inline Rational parse_rational(const std::string& text) {
    if (text.empty()) throw ConfigError("empty rational");
    auto slash = text.find('/');
    try {
        if (slash != std::string::npos) {
            long long n = std::stoll(text.substr(0, slash));
            long long d = std::stoll(text.substr(slash + 1));
            return Rational(n, d);
        }
        auto dot = text.find('.');
        if (dot == std::string::npos) return Rational(std::stoll(text), 1);
        std::string whole = text.substr(0, dot);
        std::string frac = text.substr(dot + 1);
        if (frac.size() > 12) frac.resize(12);
        long long den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
        bool neg = !whole.empty() && whole[0] == '-';
        long long w = whole.empty() || whole == "-" ? 0 : std::stoll(whole);
        long long f = frac.empty() ? 0 : std::stoll(frac);
        long long n = (neg ? -1 : 1) * ((neg ? -w : w) * den + f);
        return Rational(n, den);
    } catch (const std::invalid_argument&) {
        throw ConfigError(concat("cannot parse rational: '", text, "'"));
    } catch (const std::out_of_range&) {
        throw ConfigError(concat("rational out of range: '", text, "'"));
    }
}

inline std::string to_string(const Rational& r) {
    if (r.den == 1) return std::to_string(r.num);
    return std::to_string(r.num) + "/" + std::to_string(r.den);
}

}  // namespace advprop
