#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace atomforest {

/// Reduced fraction p/q with q >= 1, backed by 64-bit integers.
/// Arithmetic that would overflow returns std::nullopt.
class Rational {
public:
    constexpr Rational() = default;
    constexpr Rational(std::int64_t n) : num_(n) {}  // NOLINT: implicit by intent
    Rational(std::int64_t n, std::int64_t d);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    bool is_integer() const { return den_ == 1; }
    bool is_zero() const { return num_ == 0; }
    bool is_one() const { return num_ == 1 && den_ == 1; }
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    static std::optional<Rational> add(const Rational& a, const Rational& b);
    static std::optional<Rational> mul(const Rational& a, const Rational& b);
    std::optional<Rational> inverse() const;
    Rational negated() const { return Rational(-num_, den_); }

    /// Exact representation of a double when it is a dyadic rational with a
    /// modest denominator (at most 2^40) and a numerator below 2^53.
    static std::optional<Rational> from_dyadic(double v);

    /// Nearest fraction with denominator <= max_den, if within tol of v.
    static std::optional<Rational> approximate(double v, std::int64_t max_den, double tol);

    std::string to_string() const;
    static std::optional<Rational> parse(std::string_view text);

    friend bool operator==(const Rational& a, const Rational& b) = default;

private:
    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

/// Numeric coefficient stored as scale * exact, where exact is a reduced
/// rational and scale is a double that is either 1 or not representable as
/// a small dyadic rational. Keeping the rational part exact makes constant
/// folding associative for the coefficients that come out of the library
/// build, so two derivations of the same expression print identically.
class Number {
public:
    Number() = default;
    Number(Rational r) : exact_(r) {}  // NOLINT: implicit by intent
    Number(std::int64_t n) : exact_(n) {}  // NOLINT
    static Number from_double(double v);
    static Number make(double scale, Rational exact);

    double value() const;
    double scale() const { return scale_; }
    const Rational& exact() const { return exact_; }
    bool is_exact() const { return scale_ == 1.0; }
    bool is_zero() const { return exact_.is_zero(); }
    bool is_one() const { return scale_ == 1.0 && exact_.is_one(); }

    friend Number operator*(const Number& a, const Number& b);
    friend Number operator+(const Number& a, const Number& b);
    Number operator-() const;
    Number inverse() const;
    /// Integer power; falls back to a double scale if the exact part overflows.
    Number pow(std::int64_t n) const;

    /// Lossless text: "3", "-1/2", "0.1", or "0.1*3/2".
    std::string to_string() const;
    static std::optional<Number> parse(std::string_view text);

    friend bool operator==(const Number& a, const Number& b) = default;

private:
    void normalize();

    double scale_ = 1.0;
    Rational exact_{0};
};

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace atomforest
