#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "atomforest/expr.hpp"

namespace atomforest {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& message, std::size_t position, std::string token = {})
        : std::runtime_error(message + " at position " + std::to_string(position)),
          position_(position),
          token_(std::move(token)) {}

    std::size_t position() const { return position_; }
    /// The offending token when there is one (an unknown op tag, a bad name).
    const std::string& token() const { return token_; }

private:
    std::size_t position_;
    std::string token_;
};

/// Reads the prefix text produced by Expr::key(): `c:<number>`, `v:<index>`,
/// `op(arg, ...)`, with the exponent of pow written as a rational literal.
Expr parse_prefix(std::string_view text);

/// Reads ordinary infix notation: + - * / ^, parentheses, the functions
/// exp ln log sin cos atan arctan asin arcsin sqrt recip eml sol, the
/// constants pi and e, decimals (read as exact rationals). Variable names
/// are looked up in `names`; when `names` is empty, x maps to variable 0
/// and x<j> to variable j.
Expr parse_infix(std::string_view text, const std::vector<std::string>& names = {});

}  // namespace atomforest
