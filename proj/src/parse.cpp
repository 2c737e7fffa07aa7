#include "atomforest/parse.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>
#include <optional>

namespace atomforest {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

std::optional<Op> op_from_tag(std::string_view tag) {
    static constexpr Op ops[] = {Op::add, Op::mul,  Op::pow,  Op::exp,  Op::ln,
                                 Op::sin, Op::cos, Op::atan, Op::asin, Op::recip};
    for (Op op : ops) {
        if (op_name(op) == tag) return op;
    }
    return std::nullopt;
}

class PrefixReader {
public:
    explicit PrefixReader(std::string_view text) : s_(text) {}

    Expr read_all() {
        Expr e = read();
        skip();
        if (pos_ != s_.size()) throw ParseError("trailing input", pos_, std::string(s_.substr(pos_)));
        return e;
    }

private:
    void skip() {
        while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
    }

    void expect(char c) {
        skip();
        if (pos_ >= s_.size() || s_[pos_] != c) {
            throw ParseError(std::string("expected '") + c + "'", pos_);
        }
        ++pos_;
    }

    std::string_view literal() {
        skip();
        std::size_t start = pos_;
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ')' && !is_space(s_[pos_])) ++pos_;
        return s_.substr(start, pos_ - start);
    }

    Expr read() {
        skip();
        std::size_t start = pos_;
        while (pos_ < s_.size() && is_ident(s_[pos_])) ++pos_;
        std::string tag(s_.substr(start, pos_ - start));
        if (tag.empty()) throw ParseError("expected an expression", start);
        if (pos_ < s_.size() && s_[pos_] == ':') {
            ++pos_;
            std::size_t at = pos_;
            std::string_view lit = literal();
            if (tag == "c") {
                auto n = Number::parse(lit);
                if (!n) throw ParseError("bad number '" + std::string(lit) + "'", at, std::string(lit));
                return constant(*n);
            }
            if (tag == "v") {
                int j = -1;
                auto [ptr, ec] = std::from_chars(lit.data(), lit.data() + lit.size(), j);
                if (ec != std::errc() || ptr != lit.data() + lit.size() || j < 0 || j >= 64) {
                    throw ParseError("bad variable index '" + std::string(lit) + "'", at, std::string(lit));
                }
                return variable(j);
            }
            throw ParseError("unknown op tag '" + tag + "'", start, tag);
        }
        auto op = op_from_tag(tag);
        if (!op) throw ParseError("unknown op tag '" + tag + "'", start, tag);
        expect('(');
        if (*op == Op::pow) {
            Expr base = read();
            expect(',');
            std::size_t at = pos_;
            std::string_view lit = literal();
            auto r = Rational::parse(lit);
            if (!r) throw ParseError("bad exponent '" + std::string(lit) + "'", at, std::string(lit));
            expect(')');
            return pow(std::move(base), *r);
        }
        std::vector<Expr> args;
        skip();
        if (pos_ < s_.size() && s_[pos_] == ')') {
            ++pos_;
        } else {
            while (true) {
                args.push_back(read());
                skip();
                if (pos_ < s_.size() && s_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                expect(')');
                break;
            }
        }
        if (is_unary(*op)) {
            if (args.size() != 1) throw ParseError("'" + tag + "' takes one argument", start, tag);
            return unary(*op, std::move(args.front()));
        }
        if (args.empty()) throw ParseError("'" + tag + "' needs arguments", start, tag);
        return *op == Op::add ? add(std::move(args)) : mul(std::move(args));
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

// Decimal literal as an exact rational when it fits, else a float.
Number decimal_number(std::string_view lit) {
    auto dot = lit.find('.');
    auto exp_at = lit.find_first_of("eE");
    if (exp_at == std::string_view::npos) {
        std::string digits(lit);
        std::int64_t den = 1;
        if (dot != std::string_view::npos) {
            digits.erase(dot, 1);
            std::size_t frac = lit.size() - dot - 1;
            if (frac > 17) digits.clear();
            for (std::size_t i = 0; i < frac && !digits.empty(); ++i) den *= 10;
        }
        std::int64_t n = 0;
        if (!digits.empty()) {
            auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
            if (ec == std::errc() && ptr == digits.data() + digits.size()) return Number(Rational(n, den));
        }
    }
    double v = 0.0;
    std::from_chars(lit.data(), lit.data() + lit.size(), v);
    return Number::from_double(v);
}

class InfixReader {
public:
    InfixReader(std::string_view text, const std::vector<std::string>& names) : s_(text), names_(names) {}

    Expr read_all() {
        Expr e = sum();
        skip();
        if (pos_ != s_.size()) {
            throw ParseError("unexpected '" + std::string(1, s_[pos_]) + "'", pos_, std::string(1, s_[pos_]));
        }
        return e;
    }

private:
    void skip() {
        while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
    }

    bool eat(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!eat(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
    }

    Expr sum() {
        Expr e = product();
        while (true) {
            if (eat('+')) {
                e = e + product();
            } else if (eat('-')) {
                e = e - product();
            } else {
                return e;
            }
        }
    }

    Expr product() {
        Expr e = signed_factor();
        while (true) {
            skip();
            if (pos_ + 1 < s_.size() && s_[pos_] == '*' && s_[pos_ + 1] == '*') return e;
            if (eat('*')) {
                e = e * signed_factor();
            } else if (eat('/')) {
                e = e / signed_factor();
            } else {
                return e;
            }
        }
    }

    Expr signed_factor() {
        if (eat('-')) return -signed_factor();
        if (eat('+')) return signed_factor();
        return power();
    }

    bool eat_pow() {
        skip();
        if (eat('^')) return true;
        if (pos_ + 1 < s_.size() && s_[pos_] == '*' && s_[pos_ + 1] == '*') {
            pos_ += 2;
            return true;
        }
        return false;
    }

    Expr power() {
        Expr base = primary();
        if (!eat_pow()) return base;
        std::size_t at = pos_;
        Expr ex = canonicalize(signed_factor());
        if (ex.is_number() && ex.number().is_exact()) return pow(std::move(base), ex.number().exact());
        if (!ex.is_constant() || base.is_constant()) {
            // a^u = exp(u ln a)
            return exp(ex * ln(std::move(base)));
        }
        throw ParseError("exponent must be a rational constant", at);
    }

    Expr primary() {
        skip();
        if (pos_ >= s_.size()) throw ParseError("unexpected end of input", pos_);
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = sum();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return name();
        throw ParseError("unexpected '" + std::string(1, c) + "'", pos_, std::string(1, c));
    }

    Expr number() {
        std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            } else {
                pos_ = save;
            }
        }
        return constant(decimal_number(s_.substr(start, pos_ - start)));
    }

    std::vector<Expr> arguments(const std::string& fn, std::size_t at, std::size_t count) {
        expect('(');
        std::vector<Expr> args;
        args.push_back(sum());
        while (eat(',')) args.push_back(sum());
        expect(')');
        if (args.size() != count) {
            throw ParseError("'" + fn + "' takes " + std::to_string(count) + " argument(s)", at, fn);
        }
        return args;
    }

    Expr name() {
        std::size_t start = pos_;
        while (pos_ < s_.size() && is_ident(s_[pos_])) ++pos_;
        std::string id(s_.substr(start, pos_ - start));
        skip();
        bool call = pos_ < s_.size() && s_[pos_] == '(';
        if (call) {
            static const std::pair<const char*, Op> unary_fns[] = {
                {"exp", Op::exp},     {"ln", Op::ln},       {"log", Op::ln},   {"sin", Op::sin},
                {"cos", Op::cos},     {"atan", Op::atan},   {"arctan", Op::atan},
                {"asin", Op::asin},   {"arcsin", Op::asin}, {"recip", Op::recip}};
            for (const auto& [fn, op] : unary_fns) {
                if (id == fn) return unary(op, std::move(arguments(id, start, 1).front()));
            }
            if (id == "sqrt") return pow(std::move(arguments(id, start, 1).front()), Rational(1, 2));
            if (id == "eml" || id == "sol") {
                auto args = arguments(id, start, 2);
                return id == "eml" ? eml(args[0], args[1]) : sol(args[0], args[1]);
            }
            throw ParseError("unknown function '" + id + "'", start, id);
        }
        for (std::size_t j = 0; j < names_.size(); ++j) {
            if (names_[j] == id) return variable(static_cast<int>(j));
        }
        if (id == "pi") return constant(std::numbers::pi);
        if (id == "e") return exp(constant(Number(1)));
        if (names_.empty()) {
            if (id == "x") return variable(0);
            if (id.size() > 1 && id[0] == 'x') {
                int j = -1;
                auto [ptr, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), j);
                if (ec == std::errc() && ptr == id.data() + id.size() && j >= 0 && j < 64) return variable(j);
            }
        }
        throw ParseError("unknown name '" + id + "'", start, id);
    }

    std::string_view s_;
    const std::vector<std::string>& names_;
    std::size_t pos_ = 0;
};

}  // namespace

Expr parse_prefix(std::string_view text) { return PrefixReader(text).read_all(); }

Expr parse_infix(std::string_view text, const std::vector<std::string>& names) {
    return InfixReader(text, names).read_all();
}

}  // namespace atomforest
