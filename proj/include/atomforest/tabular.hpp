#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atomforest/expr.hpp"
#include "atomforest/library.hpp"

namespace atomforest {

/// Bad or degenerate input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TaskKind { regression, classification };

struct TabularTask {
    std::vector<std::string> names;  // feature columns
    std::string target;
    Eigen::MatrixXd X;  // rows x features
    Eigen::VectorXd y;  // 0/1 for classification
    TaskKind kind = TaskKind::regression;
    int folds = 5;
    std::vector<std::string> notes;

    /// Throws DataError on non-finite entries, size mismatches, labels outside
    /// {0, 1} or a single class.
    void validate() const;
};

/// Comma separated, header row, optional double quotes. Rows with an empty,
/// non-numeric or non-finite cell are dropped and counted in notes.
TabularTask read_csv(std::istream& in, const std::string& target, TaskKind kind);
TabularTask load_csv(const std::filesystem::path& path, const std::string& target, TaskKind kind);

struct ExpandConfig {
    bool atoms = true;   // false: the raw columns only
    bool cross = false;  // add x_i * x_j for every pair of variables
    int d_max = 1;
    BuildConfig build;
    std::size_t grid_points = 256;

    static ExpandConfig raw() {
        ExpandConfig c;
        c.atoms = false;
        return c;
    }
};

struct FeatureColumn {
    int variable = 0;
    int partner = -1;  // second variable of a cross product
    Expr f;            // over v:0 (the column's variable); cross products use v:0 * v:1
    Expr fprime;
    std::string label;  // f with the variable name(s) filled in
};

/// Per-variable atom features. fit() builds a library on each column's
/// observed range and records standardisation constants; transform() applies
/// them, with inputs clamped to the fitted range.
class FeatureExpander {
public:
    explicit FeatureExpander(ExpandConfig cfg = {}) : cfg_(std::move(cfg)) {}

    void fit(const Eigen::MatrixXd& X, const std::vector<std::string>& names = {});
    Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const;
    Eigen::MatrixXd fit_transform(const Eigen::MatrixXd& X, const std::vector<std::string>& names = {});

    std::size_t width() const { return columns_.size(); }
    const std::vector<FeatureColumn>& columns() const { return columns_; }
    const std::vector<std::string>& notes() const { return notes_; }
    const Eigen::VectorXd& means() const { return mean_; }
    const Eigen::VectorXd& scales() const { return scale_; }

private:
    Eigen::MatrixXd raw_features(const Eigen::MatrixXd& X) const;

    ExpandConfig cfg_;
    std::vector<FeatureColumn> columns_;
    std::vector<std::string> notes_;
    Eigen::VectorXd lo_, hi_;        // per input variable
    Eigen::VectorXd mean_, scale_;   // per feature
    Eigen::VectorXd fmin_, fmax_;    // per feature, before standardising
    std::size_t inputs_ = 0;
};

/// Fold index per row: a seeded shuffle dealt round robin.
std::vector<int> kfold_assignment(std::size_t rows, int folds, std::uint64_t seed);
/// Same, shuffled and dealt within each class so folds keep the class ratio.
std::vector<int> stratified_assignment(const Eigen::VectorXd& labels, int folds, std::uint64_t seed);

struct LassoConfig {
    std::optional<double> lambda;  // unset: chosen by cross-validation
    int n_lambda = 40;
    double lambda_min_ratio = 1e-4;
    int cv_folds = 5;
    int max_sweeps = 5000;
    double tol = 1e-4;  // duality gap relative to mean squared centred y
    std::uint64_t seed = 0;
};

struct LassoFit {
    Eigen::VectorXd coef;
    double intercept = 0.0;
    double lambda = 0.0;
    int sweeps = 0;
    bool converged = false;
    double duality_gap = 0.0;
    std::vector<double> objective;  // after every sweep
    std::vector<double> lambdas;    // CV ladder, when one was used
    std::vector<double> cv_mse;
    std::string warning;

    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
    std::size_t nonzero() const;
};

/// Largest useful lambda: all coefficients are zero at and above it.
double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

/// Coordinate descent on (1/2n)|y - b - Xw|^2 + lambda |w|_1, optionally warm
/// started from `start`.
LassoFit fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda, const LassoConfig& cfg = {},
                   const Eigen::VectorXd* start = nullptr);
/// fit_lasso at cfg.lambda, or at the ladder value with the lowest CV error.
LassoFit fit_sparse_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LassoConfig& cfg = {});

enum class Penalty { l1, l2 };

struct LogisticConfig {
    Penalty penalty = Penalty::l2;
    double strength = 1e-3;
    int max_iter = 5000;
    double tol = 1e-7;
};

struct LogisticModel {
    Eigen::VectorXd w;
    double b = 0.0;
    int iterations = 0;
    bool converged = false;

    Eigen::VectorXd probability(const Eigen::MatrixXd& X) const;
    double accuracy(const Eigen::MatrixXd& X, const Eigen::VectorXd& labels) const;
};

/// Mean log loss plus strength * (|w|^2 / 2 or |w|_1), accelerated proximal
/// gradient. The intercept is not penalised.
LogisticModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& labels, const LogisticConfig& cfg = {});

struct Attribution {
    std::string feature;     // formula in the input names
    std::string derivative;  // its derivative in the same variable
    double weight = 0.0;     // on the standardised feature
};

struct CvReport {
    std::vector<double> fold_scores;  // R^2 or accuracy per fold that ran
    double mean_score = 0.0;
    std::size_t width = 0;  // features of the final fit
    std::vector<Attribution> selected;  // nonzero weights of the final fit, largest first
    std::vector<std::string> warnings;
};

/// Outer k-fold CV; expansion and standardisation are fitted on each
/// training fold only. The final model is refitted on all rows.
CvReport cross_validate_regression(const TabularTask& task, const ExpandConfig& expand, const LassoConfig& cfg,
                                   std::uint64_t seed);
CvReport cross_validate_classification(const TabularTask& task, const ExpandConfig& expand,
                                       const LogisticConfig& cfg, std::uint64_t seed);

double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);

/// y = 3 exp(-x0) + 2 sin x1 + x2^2 / 2 + noise, x0 in [0, 3], x1 in [-3, 3],
/// x2 in [-2, 2].
TabularTask synthetic_regression(std::size_t rows = 800, double noise = 0.05, std::uint64_t seed = 0);
/// Four features uniform on [0, 4]; label 1 when h(x0; 1.5, 4) + h(x1; 2, 3)
/// plus a little noise exceeds 1, with h(x; k, n) = x^n / (k^n + x^n).
/// x2 and x3 carry no signal.
TabularTask hill_classification(std::size_t rows = 800, std::uint64_t seed = 0);
/// Two well separated Gaussian clusters in two dimensions.
TabularTask separable_clusters(std::size_t rows = 200, std::uint64_t seed = 0);

}  // namespace atomforest
