#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "atomforest/forest.hpp"
#include "atomforest/library.hpp"
#include "atomforest/search.hpp"
#include "atomforest/tabular.hpp"

namespace atomforest::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_data = 2;
inline constexpr int exit_mismatch = 3;

/// Bad flag values or combinations.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GridSpec {
    double lo = 0.1;
    double hi = 3.0;
    std::size_t points = 256;

    Grid grid() const { return Grid::uniform(lo, hi, points); }
};

/// Everything a subcommand needs, filled from the command line.
struct RunConfig {
    std::string subcommand;  // build, solve, train, bench, expand-fit, kb inspect
    GridSpec grid;
    bool grid_given = false;  // grid flags were set explicitly
    BuildConfig build;
    SearchConfig search;
    TrainConfig train;
    std::uint64_t seed = 0;
    int workers = 1;

    std::optional<std::filesystem::path> kb;     // input KB (solve, kb inspect)
    std::optional<std::filesystem::path> out;    // KB written by build / grown by solve
    std::optional<std::filesystem::path> json;   // machine-readable report
    std::optional<std::filesystem::path> input;  // CSV, suite file
    std::optional<std::filesystem::path> holdout;
    std::optional<std::filesystem::path> curves;  // full loss curves of train

    std::string target_expr;
    std::string x_column = "x";
    std::string y_column = "y";
    std::string templ;
    bool grow_kb = false;
    std::size_t top = 3;
    bool timing = false;

    // bench
    int rows = 256;
    double close_threshold = 0.01;

    // expand-fit
    std::string target_column;
    TaskKind task = TaskKind::regression;
    bool raw = false;
    bool cross = false;
    int expand_depth = 1;
    std::optional<Penalty> penalty;  // unset: l1 for regression, l2 for classification
    double strength = 1e-3;
    std::optional<double> lambda;
    int folds = 5;

    // kb inspect
    bool list = false;
    std::optional<int> layer;
    std::string origin;

    /// Thresholds positive, inputs readable, output directories present.
    /// Throws UsageError or DataError.
    void validate() const;
};

/// Parses argv and runs the subcommand. Reports go to `out`, diagnostics to
/// `err`. Returns one of the exit codes above.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_build(const RunConfig& cfg, std::ostream& out);
int cmd_solve(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_bench(const RunConfig& cfg, std::ostream& out);
int cmd_expand_fit(const RunConfig& cfg, std::ostream& out);
int cmd_kb_inspect(const RunConfig& cfg, std::ostream& out);

}  // namespace atomforest::cli
