#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atomforest/grid.hpp"
#include "atomforest/number.hpp"

namespace atomforest {

enum class Op : std::uint8_t {
    constant,
    variable,
    add,
    mul,
    pow,
    exp,
    ln,
    sin,
    cos,
    atan,
    asin,
    recip,
};

std::string_view op_name(Op op);
bool is_unary(Op op);

/// Immutable expression tree. Copies share structure; nodes never change
/// after construction, so an Expr can be read from any number of threads.
///
/// Trees built with the free functions below are kept as written. Call
/// canonicalize() to get the normal form used for comparison: sums and
/// products flattened and sorted, numeric constants folded, products
/// distributed over sums, equal bases merged into rational powers.
class Expr {
public:
    struct Node;

    /// The constant 0.
    Expr();

    Op op() const;
    const Number& number() const;
    int variable() const;
    const Rational& exponent() const;
    std::span<const Expr> children() const;
    const Expr& child(std::size_t i) const { return children()[i]; }

    /// Prefix text of the tree as stored, e.g. "add(mul(c:2, v:0), exp(v:0))".
    const std::string& key() const;
    bool is_canonical() const;
    bool is_number() const { return op() == Op::constant; }
    /// Bit j set when variable j occurs in the tree.
    std::uint64_t variable_mask() const;
    bool depends_on(int var) const { return (variable_mask() >> var) & 1U; }
    /// True when no variable occurs (numbers and things like cos(1)).
    bool is_constant() const { return variable_mask() == 0; }
    std::size_t node_count() const;

    friend bool operator==(const Expr& a, const Expr& b);

private:
    explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
    friend struct ExprAccess;

    std::shared_ptr<const Node> node_;
};

// Construction (no simplification).
Expr constant(Number n);
Expr constant(double v);
Expr variable(int j);
Expr add(std::vector<Expr> terms);
Expr mul(std::vector<Expr> factors);
Expr pow(Expr base, Rational exponent);
Expr unary(Op op, Expr arg);
Expr exp(Expr u);
Expr ln(Expr u);
Expr sin(Expr u);
Expr cos(Expr u);
Expr atan(Expr u);
Expr asin(Expr u);
Expr recip(Expr u);

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);
Expr operator-(Expr a);

/// e^u - ln v
Expr eml(Expr u, Expr v);
/// sin u - cos v
Expr sol(Expr u, Expr v);

Expr canonicalize(const Expr& e);
std::string canonical_string(const Expr& e);

/// Exact partial derivative by linearity, product, chain and power rules.
/// The result is canonical.
Expr differentiate(const Expr& e, int var = 0);

/// Canonical e with its additive constant terms removed.
Expr strip_constant(const Expr& e);

/// Canonical e with every occurrence of variable `var` replaced.
Expr substitute(const Expr& e, int var, const Expr& replacement);

/// Longest chain of nested exp/ln/sin/cos/atan/asin/recip calls.
int nesting_depth(const Expr& e);

/// Pointwise evaluation. Domain violations produce non-finite entries.
std::vector<double> evaluate(const Expr& e, const Samples& samples);
std::vector<double> evaluate(const Expr& e, const Grid& grid);
std::vector<double> evaluate(const Expr& e, std::span<const double> x);
double evaluate_number(const Expr& constant_expr);

/// Real-valued rational power: odd denominators take the real root of
/// negative bases, even denominators make them non-finite.
double rational_pow(double base, const Rational& r);

/// Human-readable infix. Variable j prints as names[j] when available,
/// otherwise "x" (single variable) or "x<j>".
std::string to_infix(const Expr& e, std::span<const std::string> names = {});

}  // namespace atomforest
