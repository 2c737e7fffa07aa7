#include "atomforest/expr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace atomforest {

struct Expr::Node {
    Op op = Op::constant;
    Number number;
    int var = 0;
    Rational exponent{1};
    std::vector<Expr> kids;
    std::string key;
    std::uint64_t mask = 0;
    std::size_t count = 1;
    bool canonical = false;
};

struct ExprAccess {
    static Expr make(Op op, Number number, int var, Rational exponent, std::vector<Expr> kids,
                     bool canonical) {
        auto n = std::make_shared<Expr::Node>();
        n->op = op;
        n->number = number;
        n->var = var;
        n->exponent = exponent;
        n->kids = std::move(kids);
        n->canonical = canonical;
        switch (op) {
            case Op::constant:
                n->key = "c:" + number.to_string();
                break;
            case Op::variable:
                n->key = "v:" + std::to_string(var);
                n->mask = std::uint64_t{1} << var;
                break;
            case Op::pow:
                n->key = "pow(" + n->kids.at(0).key() + ", " + exponent.to_string() + ")";
                break;
            default: {
                std::string k(op_name(op));
                k += '(';
                for (std::size_t i = 0; i < n->kids.size(); ++i) {
                    if (i) k += ", ";
                    k += n->kids[i].key();
                }
                k += ')';
                n->key = std::move(k);
                break;
            }
        }
        for (const auto& c : n->kids) {
            n->mask |= c.variable_mask();
            n->count += c.node_count();
        }
        return Expr(std::move(n));
    }
};

namespace {

const Expr& zero_expr() {
    static const Expr z = ExprAccess::make(Op::constant, Number(0), 0, Rational(1), {}, true);
    return z;
}

Expr num(Number n) { return ExprAccess::make(Op::constant, n, 0, Rational(1), {}, true); }

Expr node(Op op, std::vector<Expr> kids, bool canonical) {
    return ExprAccess::make(op, Number(0), 0, Rational(1), std::move(kids), canonical);
}

Expr pow_node(Expr base, Rational r, bool canonical) {
    std::vector<Expr> kids;
    kids.push_back(std::move(base));
    return ExprAccess::make(Op::pow, Number(0), 0, r, std::move(kids), canonical);
}

}  // namespace

std::string_view op_name(Op op) {
    switch (op) {
        case Op::constant: return "c";
        case Op::variable: return "v";
        case Op::add: return "add";
        case Op::mul: return "mul";
        case Op::pow: return "pow";
        case Op::exp: return "exp";
        case Op::ln: return "ln";
        case Op::sin: return "sin";
        case Op::cos: return "cos";
        case Op::atan: return "atan";
        case Op::asin: return "asin";
        case Op::recip: return "recip";
    }
    return "?";
}

bool is_unary(Op op) {
    switch (op) {
        case Op::exp:
        case Op::ln:
        case Op::sin:
        case Op::cos:
        case Op::atan:
        case Op::asin:
        case Op::recip:
            return true;
        default:
            return false;
    }
}

Expr::Expr() : node_(zero_expr().node_) {}

Op Expr::op() const { return node_->op; }
const Number& Expr::number() const { return node_->number; }
int Expr::variable() const { return node_->var; }
const Rational& Expr::exponent() const { return node_->exponent; }
std::span<const Expr> Expr::children() const { return node_->kids; }
const std::string& Expr::key() const { return node_->key; }
bool Expr::is_canonical() const { return node_->canonical; }
std::uint64_t Expr::variable_mask() const { return node_->mask; }
std::size_t Expr::node_count() const { return node_->count; }

bool operator==(const Expr& a, const Expr& b) {
    return a.node_ == b.node_ || a.node_->key == b.node_->key;
}

// ---------------------------------------------------------------------------
// Raw construction

Expr constant(Number n) { return num(n); }
Expr constant(double v) { return num(Number::from_double(v)); }

Expr variable(int j) {
    if (j < 0 || j >= 64) throw std::out_of_range("variable index must be in [0, 64)");
    return ExprAccess::make(Op::variable, Number(0), j, Rational(1), {}, true);
}

Expr add(std::vector<Expr> terms) { return node(Op::add, std::move(terms), false); }
Expr mul(std::vector<Expr> factors) { return node(Op::mul, std::move(factors), false); }
Expr pow(Expr base, Rational exponent) { return pow_node(std::move(base), exponent, false); }

Expr unary(Op op, Expr arg) {
    if (!is_unary(op)) throw std::invalid_argument("not a unary op");
    std::vector<Expr> kids;
    kids.push_back(std::move(arg));
    return node(op, std::move(kids), false);
}

Expr exp(Expr u) { return unary(Op::exp, std::move(u)); }
Expr ln(Expr u) { return unary(Op::ln, std::move(u)); }
Expr sin(Expr u) { return unary(Op::sin, std::move(u)); }
Expr cos(Expr u) { return unary(Op::cos, std::move(u)); }
Expr atan(Expr u) { return unary(Op::atan, std::move(u)); }
Expr asin(Expr u) { return unary(Op::asin, std::move(u)); }
Expr recip(Expr u) { return unary(Op::recip, std::move(u)); }

Expr operator+(Expr a, Expr b) { return add({std::move(a), std::move(b)}); }
Expr operator-(Expr a, Expr b) { return add({std::move(a), mul({num(Number(-1)), std::move(b)})}); }
Expr operator*(Expr a, Expr b) { return mul({std::move(a), std::move(b)}); }
Expr operator/(Expr a, Expr b) { return mul({std::move(a), pow(std::move(b), Rational(-1))}); }
Expr operator-(Expr a) { return mul({num(Number(-1)), std::move(a)}); }

Expr eml(Expr u, Expr v) { return exp(std::move(u)) - ln(std::move(v)); }
Expr sol(Expr u, Expr v) { return sin(std::move(u)) - cos(std::move(v)); }

// ---------------------------------------------------------------------------
// Canonical form

namespace {

constexpr std::size_t k_max_expansion_terms = 512;

Expr c_add(std::vector<Expr> xs);
Expr c_mul(std::vector<Expr> xs);
Expr c_pow(const Expr& base, const Rational& r);
Expr c_unary(Op op, const Expr& arg);
Expr canon(const Expr& e);

// Integer q-th root of a non-negative integer, if exact.
std::optional<std::int64_t> exact_root(std::int64_t v, std::int64_t q) {
    if (v < 0) return std::nullopt;
    if (v <= 1) return v;
    auto r = static_cast<std::int64_t>(std::llround(std::pow(static_cast<double>(v), 1.0 / q)));
    for (std::int64_t c = std::max<std::int64_t>(r - 1, 0); c <= r + 1; ++c) {
        __int128 p = 1;
        for (std::int64_t i = 0; i < q && p <= v; ++i) p *= c;
        if (p == v) return c;
    }
    return std::nullopt;
}

std::optional<Number> number_rational_pow(const Number& b, const Rational& r) {
    if (r.is_integer()) {
        if (b.is_zero() && r.num() < 0) return std::nullopt;
        return b.pow(r.num());
    }
    if (!b.is_exact() || b.exact().num() < 0) return std::nullopt;
    auto rn = exact_root(b.exact().num(), r.den());
    auto rd = exact_root(b.exact().den(), r.den());
    if (!rn || !rd) return std::nullopt;
    Number root(Rational(*rn, *rd));
    if (root.is_zero() && r.num() < 0) return std::nullopt;
    return root.pow(r.num());
}

Expr c_unary(Op op, const Expr& arg) {
    if (op == Op::recip) return c_pow(arg, Rational(-1));
    if (arg.is_number()) {
        const Number& v = arg.number();
        if (v.is_zero()) {
            switch (op) {
                case Op::exp: return num(Number(1));
                case Op::sin: return num(Number(0));
                case Op::cos: return num(Number(1));
                case Op::atan: return num(Number(0));
                case Op::asin: return num(Number(0));
                default: break;
            }
        }
        if (v.is_one() && op == Op::ln) return num(Number(0));
    }
    return node(op, {arg}, true);
}

Expr c_pow(const Expr& base, const Rational& r) {
    if (r.is_zero()) return num(Number(1));
    if (r.is_one()) return base;
    if (base.is_number()) {
        if (auto v = number_rational_pow(base.number(), r)) return num(*v);
        return pow_node(base, r, true);
    }
    if (base.op() == Op::pow) {
        const Rational& inner = base.exponent();
        if (r.is_integer() || inner.den() % 2 == 0) {
            if (auto prod = Rational::mul(inner, r)) return c_pow(base.child(0), *prod);
        }
        return pow_node(base, r, true);
    }
    if (base.op() == Op::mul && r.is_integer()) {
        std::vector<Expr> parts;
        for (const auto& k : base.children()) parts.push_back(c_pow(k, r));
        return c_mul(std::move(parts));
    }
    if (base.op() == Op::add && r.is_integer() && r.num() >= 2 && r.num() <= 4) {
        auto terms = base.children();
        std::size_t width = terms.size();
        for (std::int64_t i = 1; i < r.num(); ++i) width *= terms.size();
        if (width <= k_max_expansion_terms) {
            Expr acc = base;
            for (std::int64_t i = 1; i < r.num(); ++i) {
                std::vector<Expr> products;
                for (const auto& a : acc.op() == Op::add ? acc.children() : std::span<const Expr>(&acc, 1)) {
                    for (const auto& b : terms) products.push_back(c_mul({a, b}));
                }
                acc = c_add(std::move(products));
            }
            return acc;
        }
    }
    return pow_node(base, r, true);
}

// Split a canonical term into (numeric coefficient, monomial).
std::pair<Number, Expr> split_term(const Expr& t) {
    if (t.op() == Op::mul && t.child(0).is_number()) {
        auto kids = t.children();
        if (kids.size() == 2) return {kids[0].number(), kids[1]};
        return {kids[0].number(), node(Op::mul, std::vector<Expr>(kids.begin() + 1, kids.end()), true)};
    }
    return {Number(1), t};
}

Expr scale_monomial(const Number& c, const Expr& mono) {
    if (c.is_one()) return mono;
    std::vector<Expr> kids;
    kids.push_back(num(c));
    if (mono.op() == Op::mul) {
        for (const auto& k : mono.children()) kids.push_back(k);
    } else {
        kids.push_back(mono);
    }
    return node(Op::mul, std::move(kids), true);
}

Expr c_add(std::vector<Expr> xs) {
    Number constant_term(0);
    struct Slot {
        Number coef;
        Expr mono;
    };
    std::map<std::string, Slot> terms;
    auto absorb = [&](const Expr& t) {
        if (t.is_number()) {
            constant_term = constant_term + t.number();
            return;
        }
        auto [c, mono] = split_term(t);
        auto it = terms.find(mono.key());
        if (it == terms.end()) {
            terms.emplace(mono.key(), Slot{c, mono});
        } else {
            it->second.coef = it->second.coef + c;
        }
    };
    for (const auto& x : xs) {
        if (x.op() == Op::add) {
            for (const auto& k : x.children()) absorb(k);
        } else {
            absorb(x);
        }
    }
    std::vector<Expr> out;
    if (!constant_term.is_zero()) out.push_back(num(constant_term));
    for (const auto& [key, slot] : terms) {
        if (slot.coef.is_zero()) continue;
        out.push_back(scale_monomial(slot.coef, slot.mono));
    }
    if (out.empty()) return num(Number(0));
    if (out.size() == 1) return out.front();
    return node(Op::add, std::move(out), true);
}

Expr c_mul(std::vector<Expr> xs) {
    Number coef(1);
    std::vector<Expr> factors;
    for (const auto& x : xs) {
        if (x.is_number()) {
            coef = coef * x.number();
        } else if (x.op() == Op::mul) {
            for (const auto& k : x.children()) {
                if (k.is_number()) {
                    coef = coef * k.number();
                } else {
                    factors.push_back(k);
                }
            }
        } else {
            factors.push_back(x);
        }
    }
    if (coef.is_zero()) return num(Number(0));

    struct Group {
        Expr base;
        Rational exponent;
        Expr original;
        int count = 0;
    };
    std::map<std::string, Group> groups;
    std::vector<Expr> overflow;
    for (const auto& f : factors) {
        Expr base = f.op() == Op::pow ? f.child(0) : f;
        Rational r = f.op() == Op::pow ? f.exponent() : Rational(1);
        auto it = groups.find(base.key());
        if (it == groups.end()) {
            groups.emplace(base.key(), Group{base, r, f, 1});
        } else if (auto sum = Rational::add(it->second.exponent, r)) {
            it->second.exponent = *sum;
            it->second.count += 1;
        } else {
            overflow.push_back(f);
        }
    }
    std::vector<Expr> out;
    bool changed = false;
    for (const auto& [key, g] : groups) {
        if (g.exponent.is_zero()) continue;
        if (g.count == 1) {
            out.push_back(g.original);
            continue;
        }
        Expr p = c_pow(g.base, g.exponent);
        if (p.is_number() || p.op() == Op::mul || p.op() == Op::add) changed = true;
        out.push_back(std::move(p));
    }
    for (auto& f : overflow) out.push_back(std::move(f));
    if (changed) {
        out.push_back(num(coef));
        return c_mul(std::move(out));
    }
    factors = std::move(out);

    // Distribute over the first sum when the expansion stays small.
    std::size_t expansion = 1;
    std::ptrdiff_t first_sum = -1;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (factors[i].op() == Op::add) {
            expansion *= factors[i].children().size();
            if (first_sum < 0) first_sum = static_cast<std::ptrdiff_t>(i);
        }
    }
    if (first_sum >= 0 && expansion <= k_max_expansion_terms) {
        const Expr sum = factors[static_cast<std::size_t>(first_sum)];
        std::vector<Expr> rest;
        rest.push_back(num(coef));
        for (std::size_t i = 0; i < factors.size(); ++i) {
            if (static_cast<std::ptrdiff_t>(i) != first_sum) rest.push_back(factors[i]);
        }
        std::vector<Expr> products;
        products.reserve(sum.children().size());
        for (const auto& t : sum.children()) {
            std::vector<Expr> p = rest;
            p.push_back(t);
            products.push_back(c_mul(std::move(p)));
        }
        return c_add(std::move(products));
    }

    std::sort(factors.begin(), factors.end(), [](const Expr& a, const Expr& b) { return a.key() < b.key(); });
    if (factors.empty()) return num(coef);
    if (coef.is_one() && factors.size() == 1) return factors.front();
    std::vector<Expr> kids;
    if (!coef.is_one()) kids.push_back(num(coef));
    for (auto& f : factors) kids.push_back(std::move(f));
    return node(Op::mul, std::move(kids), true);
}

Expr canon(const Expr& e) {
    if (e.is_canonical()) return e;
    switch (e.op()) {
        case Op::constant:
            return num(e.number());
        case Op::variable:
            return variable(e.variable());
        case Op::add: {
            std::vector<Expr> kids;
            for (const auto& k : e.children()) kids.push_back(canon(k));
            return c_add(std::move(kids));
        }
        case Op::mul: {
            std::vector<Expr> kids;
            for (const auto& k : e.children()) kids.push_back(canon(k));
            return c_mul(std::move(kids));
        }
        case Op::pow:
            return c_pow(canon(e.child(0)), e.exponent());
        default:
            return c_unary(e.op(), canon(e.child(0)));
    }
}

}  // namespace

Expr canonicalize(const Expr& e) { return canon(e); }

std::string canonical_string(const Expr& e) { return canon(e).key(); }

// ---------------------------------------------------------------------------
// Differentiation

namespace {

Expr d_raw(const Expr& e, int j) {
    if (!e.depends_on(j)) return Expr();
    const Expr one = num(Number(1));
    switch (e.op()) {
        case Op::constant:
            return Expr();
        case Op::variable:
            return one;
        case Op::add: {
            std::vector<Expr> terms;
            for (const auto& k : e.children()) {
                if (k.depends_on(j)) terms.push_back(d_raw(k, j));
            }
            return add(std::move(terms));
        }
        case Op::mul: {
            auto kids = e.children();
            std::vector<Expr> terms;
            for (std::size_t i = 0; i < kids.size(); ++i) {
                if (!kids[i].depends_on(j)) continue;
                std::vector<Expr> f;
                f.push_back(d_raw(kids[i], j));
                for (std::size_t k = 0; k < kids.size(); ++k) {
                    if (k != i) f.push_back(kids[k]);
                }
                terms.push_back(mul(std::move(f)));
            }
            return add(std::move(terms));
        }
        case Op::pow: {
            const Rational& r = e.exponent();
            auto rm1 = Rational::add(r, Rational(-1));
            if (!rm1) throw std::overflow_error("exponent overflow while differentiating");
            return mul({num(Number(r)), pow(e.child(0), *rm1), d_raw(e.child(0), j)});
        }
        case Op::exp:
            return mul({e, d_raw(e.child(0), j)});
        case Op::ln:
            return mul({d_raw(e.child(0), j), pow(e.child(0), Rational(-1))});
        case Op::sin:
            return mul({cos(e.child(0)), d_raw(e.child(0), j)});
        case Op::cos:
            return mul({num(Number(-1)), sin(e.child(0)), d_raw(e.child(0), j)});
        case Op::atan: {
            const Expr& u = e.child(0);
            return mul({d_raw(u, j), pow(add({one, pow(u, Rational(2))}), Rational(-1))});
        }
        case Op::asin: {
            const Expr& u = e.child(0);
            return mul({d_raw(u, j),
                        pow(add({one, mul({num(Number(-1)), pow(u, Rational(2))})}), Rational(-1, 2))});
        }
        case Op::recip:
            return mul({num(Number(-1)), d_raw(e.child(0), j), pow(e.child(0), Rational(-2))});
    }
    throw std::logic_error("unsupported node kind in differentiate");
}

}  // namespace

Expr differentiate(const Expr& e, int var) {
    if (var < 0 || var >= 64) throw std::out_of_range("variable index must be in [0, 64)");
    return canon(d_raw(canon(e), var));
}

Expr strip_constant(const Expr& e) {
    Expr c = canon(e);
    if (c.is_constant()) return Expr();
    if (c.op() != Op::add) return c;
    std::vector<Expr> kept;
    for (const auto& t : c.children()) {
        if (!t.is_constant()) kept.push_back(t);
    }
    if (kept.size() == 1) return kept.front();
    return node(Op::add, std::move(kept), true);
}

namespace {

Expr subst_raw(const Expr& e, int var, const Expr& replacement) {
    if (!e.depends_on(var)) return e;
    if (e.op() == Op::variable) return replacement;
    std::vector<Expr> kids;
    for (const auto& k : e.children()) kids.push_back(subst_raw(k, var, replacement));
    switch (e.op()) {
        case Op::add: return add(std::move(kids));
        case Op::mul: return mul(std::move(kids));
        case Op::pow: return pow(std::move(kids.front()), e.exponent());
        default: return unary(e.op(), std::move(kids.front()));
    }
}

}  // namespace

Expr substitute(const Expr& e, int var, const Expr& replacement) {
    return canon(subst_raw(canon(e), var, replacement));
}

int nesting_depth(const Expr& e) {
    int best = 0;
    for (const auto& k : e.children()) best = std::max(best, nesting_depth(k));
    return best + (is_unary(e.op()) ? 1 : 0);
}

// ---------------------------------------------------------------------------
// Evaluation

double rational_pow(double b, const Rational& r) {
    if (r.is_integer()) {
        switch (r.num()) {
            case 1: return b;
            case 2: return b * b;
            case 3: return b * b * b;
            case -1: return 1.0 / b;
            case -2: return 1.0 / (b * b);
            default: return std::pow(b, static_cast<double>(r.num()));
        }
    }
    if (r.num() == 1 && r.den() == 2) return std::sqrt(b);
    if (b >= 0.0) return std::pow(b, r.to_double());
    if (r.den() % 2 == 0) return std::numeric_limits<double>::quiet_NaN();
    double mag = std::pow(-b, r.to_double());
    return (r.num() % 2 != 0) ? -mag : mag;
}

namespace {

void eval_into(const Expr& e, const Samples& s, std::vector<double>& out) {
    const std::size_t n = s.rows();
    out.assign(n, 0.0);
    switch (e.op()) {
        case Op::constant: {
            std::fill(out.begin(), out.end(), e.number().value());
            return;
        }
        case Op::variable: {
            if (static_cast<std::size_t>(e.variable()) >= s.variables()) {
                throw std::out_of_range("expression uses variable v:" + std::to_string(e.variable()) +
                                        " but samples have " + std::to_string(s.variables()));
            }
            auto col = s.column(static_cast<std::size_t>(e.variable()));
            std::copy(col.begin(), col.end(), out.begin());
            return;
        }
        case Op::add: {
            std::vector<double> tmp;
            for (const auto& k : e.children()) {
                eval_into(k, s, tmp);
                for (std::size_t i = 0; i < n; ++i) out[i] += tmp[i];
            }
            return;
        }
        case Op::mul: {
            std::fill(out.begin(), out.end(), 1.0);
            std::vector<double> tmp;
            for (const auto& k : e.children()) {
                eval_into(k, s, tmp);
                for (std::size_t i = 0; i < n; ++i) out[i] *= tmp[i];
            }
            return;
        }
        case Op::pow: {
            eval_into(e.child(0), s, out);
            const Rational r = e.exponent();
            for (auto& v : out) v = rational_pow(v, r);
            return;
        }
        default:
            break;
    }
    eval_into(e.child(0), s, out);
    switch (e.op()) {
        case Op::exp: for (auto& v : out) v = std::exp(v); break;
        case Op::ln: for (auto& v : out) v = std::log(v); break;
        case Op::sin: for (auto& v : out) v = std::sin(v); break;
        case Op::cos: for (auto& v : out) v = std::cos(v); break;
        case Op::atan: for (auto& v : out) v = std::atan(v); break;
        case Op::asin: for (auto& v : out) v = std::asin(v); break;
        case Op::recip: for (auto& v : out) v = 1.0 / v; break;
        default: break;
    }
}

}  // namespace

std::vector<double> evaluate(const Expr& e, const Samples& samples) {
    std::vector<double> out;
    eval_into(e, samples, out);
    return out;
}

std::vector<double> evaluate(const Expr& e, const Grid& grid) { return evaluate(e, grid.samples()); }

std::vector<double> evaluate(const Expr& e, std::span<const double> x) {
    return evaluate(e, Samples::single(std::vector<double>(x.begin(), x.end())));
}

double evaluate_number(const Expr& e) {
    if (!e.is_constant()) throw std::invalid_argument("expression depends on a variable");
    return evaluate(e, Samples::single({0.0})).front();
}

// ---------------------------------------------------------------------------
// Infix printing

namespace {

enum Prec { p_sum = 1, p_product = 2, p_power = 3, p_atom = 4 };

std::string var_name(int j, std::span<const std::string> names) {
    if (static_cast<std::size_t>(j) < names.size()) return names[static_cast<std::size_t>(j)];
    return j == 0 ? "x" : "x" + std::to_string(j);
}

std::string number_text(const Number& n) {
    if (n.is_exact()) return n.exact().to_string();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", n.value());
    return buf;
}

struct Printed {
    std::string text;
    int prec;
};

Printed print(const Expr& e, std::span<const std::string> names);

std::string wrap(const Printed& p, int min_prec) {
    return p.prec < min_prec ? "(" + p.text + ")" : p.text;
}

bool is_negative_term(const Expr& t) {
    if (t.is_number()) return t.number().value() < 0;
    return t.op() == Op::mul && t.child(0).is_number() && t.child(0).number().value() < 0;
}

Printed print_product(std::span<const Expr> kids, const Number& coef, std::span<const std::string> names) {
    std::vector<std::string> num_parts, den_parts;
    for (const auto& k : kids) {
        if (k.op() == Op::pow && k.exponent().num() < 0) {
            Rational pos = k.exponent().negated();
            Expr inv = pos.is_one() ? k.child(0) : pow_node(k.child(0), pos, true);
            den_parts.push_back(wrap(print(inv, names), p_power));
        } else {
            num_parts.push_back(wrap(print(k, names), p_power));
        }
    }
    std::string text;
    bool neg = coef.value() < 0;
    Number mag = neg ? -coef : coef;
    if (!mag.is_one() || num_parts.empty()) {
        std::string c = number_text(mag);
        if (c.find('/') != std::string::npos) c = "(" + c + ")";
        num_parts.insert(num_parts.begin(), c);
    }
    for (std::size_t i = 0; i < num_parts.size(); ++i) {
        if (i) text += "*";
        text += num_parts[i];
    }
    if (!den_parts.empty()) {
        text += "/";
        if (den_parts.size() == 1) {
            text += den_parts.front();
        } else {
            text += "(";
            for (std::size_t i = 0; i < den_parts.size(); ++i) {
                if (i) text += "*";
                text += den_parts[i];
            }
            text += ")";
        }
    }
    if (neg) text = "-" + text;
    return {text, p_product};
}

Printed print(const Expr& e, std::span<const std::string> names) {
    switch (e.op()) {
        case Op::constant: {
            std::string t = number_text(e.number());
            bool composite = t.find('/') != std::string::npos || e.number().value() < 0;
            return {t, composite ? p_product : p_atom};
        }
        case Op::variable:
            return {var_name(e.variable(), names), p_atom};
        case Op::add: {
            std::string text;
            bool first = true;
            for (const auto& t : e.children()) {
                if (first) {
                    text = print(t, names).text;
                } else if (is_negative_term(t)) {
                    Expr pos = t.is_number() ? num(-t.number())
                                             : scale_monomial(-t.child(0).number(), split_term(t).second);
                    text += " - " + wrap(print(pos, names), p_product);
                } else {
                    text += " + " + print(t, names).text;
                }
                first = false;
            }
            return {text, p_sum};
        }
        case Op::mul: {
            auto kids = e.children();
            if (!kids.empty() && kids[0].is_number()) {
                return print_product(kids.subspan(1), kids[0].number(), names);
            }
            return print_product(kids, Number(1), names);
        }
        case Op::pow: {
            const Rational& r = e.exponent();
            if (r.num() < 0) return print_product(std::span<const Expr>(&e, 1), Number(1), names);
            std::string base = wrap(print(e.child(0), names), p_atom);
            std::string ex = r.is_integer() ? r.to_string() : "(" + r.to_string() + ")";
            return {base + "^" + ex, p_power};
        }
        case Op::recip:
            return {"1/" + wrap(print(e.child(0), names), p_atom), p_product};
        default:
            return {std::string(op_name(e.op())) + "(" + print(e.child(0), names).text + ")", p_atom};
    }
}

}  // namespace

std::string to_infix(const Expr& e, std::span<const std::string> names) { return print(e, names).text; }

}  // namespace atomforest
