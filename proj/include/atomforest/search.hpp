#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "atomforest/expr.hpp"
#include "atomforest/library.hpp"

namespace atomforest {

/// derivative: the target is matched by sum c_k phi_k' (the default).
/// value: the target is matched by sum c_k phi_k directly.
enum class Channel { derivative, value };

struct SearchConfig {
    double eps = 1e-12;        // skip columns with G_kk below this
    double det_min = 1e-30;    // |det| filter for K >= 2
    double coef_cap = 20.0;    // |c_k| filter
    std::size_t keep = 500;    // results kept per K
    std::size_t beam_seed = 200;
    std::size_t beam_keep = 500;
    int k_max = 2;
    double exact_mse = 1e-15;  // train and holdout threshold for exact hits
    int workers = 1;
    Channel channel = Channel::derivative;

    void validate() const;
};

enum class Verification { unverified, verified, refuted };
std::string_view verification_name(Verification v);

struct SearchResult {
    std::vector<std::size_t> indices;  // library indices, ascending
    std::vector<double> coefficients;
    double mse = 0.0;       // direct residual mean square on the training samples
    double gram_mse = 0.0;  // the same quantity from the Gram formulas
    Verification verified = Verification::unverified;
    double holdout_mse = -1.0;
    std::string note;
    Expr antiderivative;
    Expr derivative_expr;

    std::size_t k() const { return indices.size(); }
};

/// D (samples x searchable atoms), G = D^T D, d = D^T y, |y|^2.
class GramCache {
public:
    /// Above this many columns G is formed block by block on demand.
    static constexpr std::size_t k_materialize_limit = 8192;

    /// G is held in memory when the column count is at most materialize_limit.
    GramCache(const AtomLibrary& lib, std::span<const double> y, Channel channel = Channel::derivative,
              std::size_t materialize_limit = k_materialize_limit);

    std::size_t n() const { return static_cast<std::size_t>(D_.rows()); }
    std::size_t m() const { return static_cast<std::size_t>(D_.cols()); }
    /// Library index of column j.
    std::size_t atom(std::size_t col) const { return columns_[col]; }
    const std::vector<std::size_t>& columns() const { return columns_; }

    const Eigen::MatrixXd& D() const { return D_; }
    const Eigen::VectorXd& d() const { return d_; }
    const Eigen::VectorXd& diag() const { return diag_; }
    const Eigen::VectorXd& y() const { return y_; }
    double y_norm_sq() const { return yy_; }
    bool materialized() const { return G_.size() > 0; }
    /// Full G; empty when M is too large to hold in memory.
    const Eigen::MatrixXd& G() const { return G_; }
    /// Rows [first, first + count) of G.
    Eigen::MatrixXd rows(std::size_t first, std::size_t count) const;
    Eigen::MatrixXd rows(const std::vector<std::size_t>& cols) const;

    Channel channel() const { return channel_; }

private:
    Channel channel_;
    std::vector<std::size_t> columns_;
    Eigen::MatrixXd D_;
    Eigen::MatrixXd G_;
    Eigen::VectorXd d_;
    Eigen::VectorXd diag_;
    Eigen::VectorXd y_;
    double yy_ = 0.0;
};

/// Single-atom fits c = d_k / G_kk, ascending by MSE (ties by index).
std::vector<SearchResult> scan_k1(const GramCache& cache, const SearchConfig& cfg);
/// All pairs by Cramer's rule over row blocks of G.
std::vector<SearchResult> scan_k2(const GramCache& cache, const SearchConfig& cfg);
/// Width-K beam from the top beam_seed results at K-1 (computed when not given).
std::vector<SearchResult> beam(const GramCache& cache, int k, const SearchConfig& cfg,
                               const std::vector<SearchResult>* previous = nullptr);
/// Lists for K = 1 .. cfg.k_max; entry K-1 holds width-K results.
std::vector<std::vector<SearchResult>> search(const GramCache& cache, const SearchConfig& cfg);

/// Best result over all widths. The smallest K with a result below exact_mse
/// wins; otherwise the lowest MSE.
const SearchResult* best_result(const std::vector<std::vector<SearchResult>>& by_k, double exact_mse = 1e-15);

/// Least-squares coefficients on the chosen atoms and the direct residual MSE.
void refit(SearchResult& r, const GramCache& cache);

/// F = sum c_k phi_k and F' = sum c_k phi_k', canonical. Coefficients within
/// 1e-9 (relative) of a fraction with denominator <= 12 are written as that
/// fraction. Fills the result's expression fields and returns them.
std::pair<Expr, Expr> reconstruct(SearchResult& r, const AtomLibrary& lib);
std::pair<Expr, Expr> reconstruct(const SearchResult& r, const AtomLibrary& lib);

/// Analytic target (an Expr in the matched channel) or sampled target values.
using Target = std::variant<Expr, std::vector<double>>;

/// Re-checks a near-exact result on independent samples. The matched formula
/// (F' for the derivative channel, F for the value channel) is evaluated there
/// and compared with the target. Throws std::logic_error when r.mse is not
/// below cfg.exact_mse.
Verification verify(SearchResult& r, const AtomLibrary& lib, const Samples& holdout, const Target& target,
                    const SearchConfig& cfg = {}, Channel channel = Channel::derivative);

}  // namespace atomforest
