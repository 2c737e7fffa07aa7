#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "atomforest/expr.hpp"
#include "atomforest/library.hpp"
#include "atomforest/search.hpp"

namespace atomforest {

inline constexpr int k_suite_version = 1;

enum class Status { pass, close, fail, error };
std::string_view status_name(Status s);
std::optional<Status> status_from_name(std::string_view name);

struct VariableRange {
    std::string name;
    double lo = 1.0;
    double hi = 5.0;
};

struct EquationSpec {
    std::string name;
    std::string category;
    std::vector<VariableRange> variables;
    Expr expr;  // over v:0 .. v:n-1
    std::optional<Status> expected;

    std::size_t variable_count() const { return variables.size(); }
    std::vector<std::string> names() const;
};

class SuiteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Suite {
    std::vector<EquationSpec> equations;
};

/// JSON document: {"version": 1, "equations": [{"name", "category", "expr"
/// (prefix text), "variables": [{"name", "lo", "hi"}], "expected"}]}.
/// Checks that every expression is finite over its ranges.
Suite suite_from_string(const std::string& text);
Suite load_suite(const std::filesystem::path& path);
std::string suite_to_string(const Suite& suite);

/// Mean squared error over mean squared truth. Throws when truth is all zero.
double relmse(std::span<const double> predictions, std::span<const double> truth);

/// Row sample of the variables, each uniform on its range.
Samples sample_rows(std::span<const VariableRange> vars, std::size_t rows, std::uint64_t seed);

struct MultiLibraryConfig {
    BuildConfig build;  // d_max and ranges of each single-variable library
    /// Exponents of the monomial atoms prod x_j^p_j.
    std::vector<Rational> exponents = {Rational(-2), Rational(-1), Rational(-1, 2), Rational(1, 2),
                                       Rational(1),  Rational(2),  Rational(3)};
    std::size_t grid_points = 256;
};

/// Value-channel library on the sample rows: monomials over all variables
/// first, then every atom of a single-variable library built on each
/// variable's range, with the variable substituted in and its additive
/// constant dropped.
AtomLibrary build_multivariate_library(std::span<const VariableRange> vars, const Samples& rows,
                                       const MultiLibraryConfig& cfg);

struct FeynmanConfig {
    int d_max = 2;
    int k_max = 4;
    std::size_t rows = 256;
    std::size_t holdout_rows = 256;
    std::uint64_t seed = 0;
    double close_threshold = 0.01;
    MultiLibraryConfig library;  // library.build.d_max is overwritten by d_max
    SearchConfig search;         // channel and k_max are overwritten
};

struct BenchOutcome {
    std::string name;
    std::string category;
    Status status = Status::fail;
    std::optional<Status> expected;
    int best_k = 0;
    double train_mse = 0.0;
    double rel_mse = 0.0;
    Verification verification = Verification::unverified;
    bool identity = false;  // canonical derivative of F equals the reconstructed F'
    std::string formula;
    std::string error;
    std::size_t library_size = 0;
    double seconds = 0.0;

    bool matches() const { return !expected || *expected == status; }
};

struct BenchSummary {
    std::vector<BenchOutcome> outcomes;  // sorted by name
    std::size_t pass = 0, close = 0, fail = 0, errored = 0;
    std::size_t mismatches = 0;
    double seconds = 0.0;
};

BenchOutcome run_equation(const EquationSpec& eq, const FeynmanConfig& cfg);
BenchSummary run_feynman(const Suite& suite, const FeynmanConfig& cfg);

/// Without timing the reports are identical for identical inputs.
std::string bench_report(const BenchSummary& s, bool timing = true);
std::string bench_json(const BenchSummary& s, bool timing = true);

}  // namespace atomforest
