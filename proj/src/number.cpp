#include "atomforest/number.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <system_error>

namespace atomforest {

namespace {

using i128 = __int128;

constexpr i128 k_int64_max = std::numeric_limits<std::int64_t>::max();

std::optional<Rational> make_checked(i128 n, i128 d) {
    if (d == 0) return std::nullopt;
    if (d < 0) {
        n = -n;
        d = -d;
    }
    i128 a = n < 0 ? -n : n;
    i128 b = d;
    while (b != 0) {
        i128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) {
        n /= a;
        d /= a;
    }
    if (n > k_int64_max || n < -k_int64_max || d > k_int64_max) return std::nullopt;
    return Rational(static_cast<std::int64_t>(n), static_cast<std::int64_t>(d));
}

}  // namespace

Rational::Rational(std::int64_t n, std::int64_t d) {
    if (d == 0) throw std::domain_error("rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    std::int64_t g = std::gcd(n < 0 ? -n : n, d);
    if (g > 1) {
        n /= g;
        d /= g;
    }
    num_ = n;
    den_ = d;
}

std::optional<Rational> Rational::add(const Rational& a, const Rational& b) {
    return make_checked(static_cast<i128>(a.num_) * b.den_ + static_cast<i128>(b.num_) * a.den_,
                        static_cast<i128>(a.den_) * b.den_);
}

std::optional<Rational> Rational::mul(const Rational& a, const Rational& b) {
    return make_checked(static_cast<i128>(a.num_) * b.num_, static_cast<i128>(a.den_) * b.den_);
}

std::optional<Rational> Rational::inverse() const {
    if (num_ == 0) return std::nullopt;
    return Rational(den_, num_);
}

std::optional<Rational> Rational::from_dyadic(double v) {
    if (!std::isfinite(v)) return std::nullopt;
    constexpr double limit = 9007199254740992.0;  // 2^53
    for (int k = 0; k <= 40; ++k) {
        double t = std::ldexp(v, k);
        if (std::fabs(t) >= limit) return std::nullopt;
        if (t == std::floor(t)) {
            return Rational(static_cast<std::int64_t>(t), std::int64_t{1} << k);
        }
    }
    return std::nullopt;
}

std::optional<Rational> Rational::approximate(double v, std::int64_t max_den, double tol) {
    if (!std::isfinite(v) || std::fabs(v) > 1e15) return std::nullopt;
    for (std::int64_t q = 1; q <= max_den; ++q) {
        double p = std::round(v * static_cast<double>(q));
        if (std::fabs(v - p / static_cast<double>(q)) <= tol) {
            return Rational(static_cast<std::int64_t>(p), q);
        }
    }
    return std::nullopt;
}

std::string Rational::to_string() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
}

std::optional<Rational> Rational::parse(std::string_view text) {
    auto parse_int = [](std::string_view s) -> std::optional<std::int64_t> {
        if (!s.empty() && s.front() == '+') s.remove_prefix(1);
        std::int64_t v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
        return v;
    };
    auto slash = text.find('/');
    if (slash == std::string_view::npos) {
        auto n = parse_int(text);
        if (!n) return std::nullopt;
        return Rational(*n);
    }
    auto n = parse_int(text.substr(0, slash));
    auto d = parse_int(text.substr(slash + 1));
    if (!n || !d || *d == 0) return std::nullopt;
    return Rational(*n, *d);
}

Number Number::from_double(double v) { return make(v, Rational(1)); }

Number Number::make(double scale, Rational exact) {
    Number n;
    n.scale_ = scale;
    n.exact_ = exact;
    n.normalize();
    return n;
}

void Number::normalize() {
    if (exact_.is_zero()) {
        scale_ = 1.0;
        return;
    }
    if (!std::isfinite(scale_)) {
        scale_ = scale_ * exact_.to_double();
        exact_ = Rational(1);
        return;
    }
    if (scale_ == 0.0) {
        scale_ = 1.0;
        exact_ = Rational(0);
        return;
    }
    if (scale_ < 0.0) {
        scale_ = -scale_;
        exact_ = exact_.negated();
    }
    if (scale_ != 1.0) {
        if (auto dy = Rational::from_dyadic(scale_)) {
            if (auto prod = Rational::mul(exact_, *dy)) {
                exact_ = *prod;
                scale_ = 1.0;
            }
        }
    }
}

double Number::value() const { return scale_ * exact_.to_double(); }

Number operator*(const Number& a, const Number& b) {
    double scale = a.scale_ * b.scale_;
    if (auto prod = Rational::mul(a.exact_, b.exact_)) return Number::make(scale, *prod);
    return Number::make(scale * a.exact_.to_double() * b.exact_.to_double(), Rational(1));
}

Number operator+(const Number& a, const Number& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    if (a.scale_ == b.scale_) {
        if (auto sum = Rational::add(a.exact_, b.exact_)) return Number::make(a.scale_, *sum);
        return Number::make(a.scale_ * (a.exact_.to_double() + b.exact_.to_double()), Rational(1));
    }
    return Number::make(a.value() + b.value(), Rational(1));
}

Number Number::operator-() const {
    Number n = *this;
    n.exact_ = exact_.negated();
    return n;
}

Number Number::inverse() const {
    auto inv = exact_.inverse();
    if (!inv) return Number::from_double(std::numeric_limits<double>::quiet_NaN());
    return Number::make(1.0 / scale_, *inv);
}

Number Number::pow(std::int64_t n) const {
    if (n < 0) return inverse().pow(-n);
    Number result(1);
    Number base = *this;
    while (n > 0) {
        if (n & 1) result = result * base;
        n >>= 1;
        if (n > 0) base = base * base;
    }
    return result;
}

std::string Number::to_string() const {
    if (scale_ == 1.0) return exact_.to_string();
    if (exact_.is_one()) return format_double(scale_);
    return format_double(scale_) + "*" + exact_.to_string();
}

std::optional<Number> Number::parse(std::string_view text) {
    auto parse_double = [](std::string_view s) -> std::optional<double> {
        if (!s.empty() && s.front() == '+') s.remove_prefix(1);
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
        return v;
    };
    auto star = text.find('*');
    if (star != std::string_view::npos) {
        auto scale = parse_double(text.substr(0, star));
        auto exact = Rational::parse(text.substr(star + 1));
        if (!scale || !exact) return std::nullopt;
        return Number::make(*scale, *exact);
    }
    if (auto r = Rational::parse(text)) return Number(*r);
    if (auto d = parse_double(text)) return Number::from_double(*d);
    return std::nullopt;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

}  // namespace atomforest
