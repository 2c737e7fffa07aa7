#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "atomforest/expr.hpp"

namespace atomforest {

enum class NodeKind { leaf, eml, sol, mult };

/// Shape of one forest atom. eml/sol carry a depth, mult two children.
struct NodeSpec {
    NodeKind kind = NodeKind::leaf;
    int depth = 0;
    std::vector<NodeSpec> children;

    static NodeSpec leaf();
    static NodeSpec eml(int depth);
    static NodeSpec sol(int depth);
    static NodeSpec mult(NodeSpec a, NodeSpec b);

    /// Largest eml/sol depth inside this spec.
    int max_depth() const;
    std::string to_string() const;
};

class TemplateError : public std::invalid_argument {
public:
    TemplateError(const std::string& message, std::size_t position);
    std::size_t position() const { return position_; }

private:
    std::size_t position_;
};

/// Parses `forest = eml(d=1) + mult(leaf, sol(d=1))`. The `forest =` prefix
/// and the `d=` label are optional; `eml` alone means depth 1.
std::vector<NodeSpec> parse_template(std::string_view text);
std::string template_to_string(const std::vector<NodeSpec>& atoms);

/// Leaf value w0 * 1 + w1 * x with (w0, w1) = softmax(alpha / tau, beta / tau).
/// A snapped leaf has choice 0 (constant 1) or 1 (x) and ignores the logits.
struct LeafParams {
    double alpha = 0.0;
    double beta = 0.0;
    std::optional<int> choice;
};

enum class Loss { squared, log1p_squared };

struct ForestEval {
    std::vector<double> values;
    std::vector<double> derivatives;
};

class Forest {
public:
    Forest() = default;
    explicit Forest(std::vector<NodeSpec> atoms);

    std::size_t atom_count() const { return atoms_.size(); }
    const NodeSpec& spec(std::size_t k) const { return atoms_.at(k).spec; }
    std::vector<NodeSpec> specs() const;
    std::size_t leaf_count() const;
    int max_depth() const;

    /// Leaves of atom k in tree order (left to right).
    std::vector<LeafParams>& leaves(std::size_t k) { return atoms_.at(k).leaves; }
    const std::vector<LeafParams>& leaves(std::size_t k) const { return atoms_.at(k).leaves; }
    double& coefficient(std::size_t k) { return atoms_.at(k).coef; }
    double coefficient(std::size_t k) const { return atoms_.at(k).coef; }

    /// Flat parameter vector: per atom, (alpha, beta) for each leaf then the
    /// output coefficient.
    std::size_t parameter_count() const;
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> theta);

    bool is_snapped() const;

    ForestEval forward(std::span<const double> x, double tau) const;
    /// Values and derivatives of atom k without its coefficient.
    ForestEval forward_atom(std::size_t k, std::span<const double> x, double tau) const;

    /// Mean over samples of the loss of F'(x_i) - y_i.
    double loss(std::span<const double> x, std::span<const double> y, double tau, Loss kind) const;
    /// Loss and its exact gradient with respect to parameters() (reverse pass).
    double loss_and_gradient(std::span<const double> x, std::span<const double> y, double tau, Loss kind,
                             std::vector<double>& grad) const;

    /// F and F' as canonical expressions. Requires a snapped forest.
    std::pair<Expr, Expr> to_expr() const;

    /// Removes atom k.
    void erase(std::size_t k);

private:
    struct Node {
        NodeKind kind;
        int a = -1, b = -1;  // children, earlier in the node list
        int leaf = -1;
    };
    struct Atom {
        NodeSpec spec;
        std::vector<Node> nodes;  // children before parents; root last
        std::vector<LeafParams> leaves;
        double coef = 1.0;
    };
    static void compile(Atom& atom);
    static int emit(Atom& atom, const NodeSpec& spec);
    static int emit_tree(Atom& atom, NodeKind kind, int depth);

    std::vector<Atom> atoms_;
};

/// Nearest one-hot leaves, constant atoms dropped, output coefficients within
/// 1e-6 of a fraction with denominator <= 12 replaced by that fraction.
Forest snap(const Forest& f);

/// Least-squares output coefficients for a snapped forest (F' against y),
/// followed by the same rational rounding as snap. Returns the MSE.
double refit_coefficients(Forest& f, std::span<const double> x, std::span<const double> y);

/// Mean squared error of F' against y.
double derivative_mse(const Forest& f, std::span<const double> x, std::span<const double> y, double tau = 1.0);

struct TrainConfig {
    int steps = 2000;
    double learning_rate = 0.01;
    int restarts = 16;
    double tau_start = 1.0;
    double tau_end = 0.1;
    double anneal_fraction = 0.8;
    double clip_norm = 5.0;
    /// Unset: log1p-squared for templates with a depth >= 3 tree, squared otherwise.
    std::optional<Loss> loss;
    double stop_mse = 1e-10;
    std::uint64_t seed = 0;
    bool train_coefficients = true;
    int checkpoints = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int max_halvings = 5;
    int workers = 1;

    void validate() const;
};

/// tau(step) = start - (start - end) * min(step / (fraction * steps), 1).
double temperature(int step, const TrainConfig& cfg);
/// Scales g to norm max_norm when it is longer; returns the norm before.
double clip_gradient(std::vector<double>& g, double max_norm);

struct RestartReport {
    int restart = 0;
    std::vector<double> loss_curve;  // loss at every accepted step
    double final_loss = 0.0;
    double snapped_mse = 0.0;
    int steps_run = 0;
    int rejected_steps = 0;
    int halvings = 0;
    bool diverged = false;
    double max_step_norm = 0.0;  // largest gradient norm actually applied
    std::string formula;         // snapped F in infix
};

struct TrainResult {
    bool ok = false;         // at least one restart produced a finite snapped forest
    bool converged = false;  // best snapped MSE below stop_mse
    Forest best;
    double best_mse = 0.0;
    int best_restart = -1;
    Expr antiderivative;
    Expr derivative_expr;
    std::vector<RestartReport> restarts;
    std::string failure;
};

/// Independent restarts in index order; stops after the first restart whose
/// snapped MSE is below stop_mse. The best restart among those run is
/// returned (ties go to the lower index).
TrainResult train(const std::vector<NodeSpec>& templ, std::span<const double> x, std::span<const double> y,
                  const TrainConfig& cfg);

/// Plain-text report with a summary and one loss column per restart.
std::string train_report(const TrainResult& r);

}  // namespace atomforest
