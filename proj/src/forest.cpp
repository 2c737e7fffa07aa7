#include "atomforest/forest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

namespace atomforest {

// --- template specs --------------------------------------------------------

NodeSpec NodeSpec::leaf() { return {}; }

NodeSpec NodeSpec::eml(int depth) {
    if (depth < 1) throw std::invalid_argument("eml depth must be at least 1");
    return {NodeKind::eml, depth, {}};
}

NodeSpec NodeSpec::sol(int depth) {
    if (depth < 1) throw std::invalid_argument("sol depth must be at least 1");
    return {NodeKind::sol, depth, {}};
}

NodeSpec NodeSpec::mult(NodeSpec a, NodeSpec b) {
    NodeSpec s{NodeKind::mult, 0, {}};
    s.children.push_back(std::move(a));
    s.children.push_back(std::move(b));
    return s;
}

int NodeSpec::max_depth() const {
    int d = depth;
    for (const auto& c : children) d = std::max(d, c.max_depth());
    return d;
}

std::string NodeSpec::to_string() const {
    switch (kind) {
        case NodeKind::leaf: return "leaf";
        case NodeKind::eml: return "eml(d=" + std::to_string(depth) + ")";
        case NodeKind::sol: return "sol(d=" + std::to_string(depth) + ")";
        case NodeKind::mult: return "mult(" + children[0].to_string() + ", " + children[1].to_string() + ")";
    }
    return "?";
}

TemplateError::TemplateError(const std::string& message, std::size_t position)
    : std::invalid_argument(message + " at position " + std::to_string(position)), position_(position) {}

namespace {

class TemplateParser {
public:
    explicit TemplateParser(std::string_view s) : s_(s) {}

    std::vector<NodeSpec> parse() {
        skip();
        std::size_t save = i_;
        if (word() == "forest") {
            skip();
            if (!eat('=')) throw TemplateError("expected '=' after 'forest'", i_);
        } else {
            i_ = save;
        }
        std::vector<NodeSpec> out;
        out.push_back(node());
        while (eat('+')) out.push_back(node());
        skip();
        if (i_ != s_.size()) throw TemplateError("unexpected '" + std::string(1, s_[i_]) + "'", i_);
        return out;
    }

private:
    void skip() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }
    bool eat(char c) {
        skip();
        if (i_ < s_.size() && s_[i_] == c) {
            ++i_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!eat(c)) throw TemplateError(std::string("expected '") + c + "'", i_);
    }
    std::string word() {
        skip();
        std::size_t start = i_;
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) ++i_;
        return std::string(s_.substr(start, i_ - start));
    }
    int integer() {
        skip();
        std::size_t start = i_;
        while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) ++i_;
        if (start == i_) throw TemplateError("expected a depth", i_);
        return std::stoi(std::string(s_.substr(start, i_ - start)));
    }
    NodeSpec node() {
        std::size_t at = (skip(), i_);
        std::string w = word();
        if (w == "leaf") return NodeSpec::leaf();
        if (w == "eml" || w == "sol") {
            int d = 1;
            if (eat('(')) {
                std::size_t save = i_;
                std::string label = word();
                if (label == "d") {
                    expect('=');
                } else {
                    i_ = save;
                }
                d = integer();
                expect(')');
            }
            if (d < 1) throw TemplateError("depth must be at least 1", at);
            return w == "eml" ? NodeSpec::eml(d) : NodeSpec::sol(d);
        }
        if (w == "mult") {
            expect('(');
            NodeSpec a = node();
            expect(',');
            NodeSpec b = node();
            expect(')');
            return NodeSpec::mult(std::move(a), std::move(b));
        }
        throw TemplateError(w.empty() ? "expected a node" : "unknown node '" + w + "'", at);
    }

    std::string_view s_;
    std::size_t i_ = 0;
};

}  // namespace

std::vector<NodeSpec> parse_template(std::string_view text) { return TemplateParser(text).parse(); }

std::string template_to_string(const std::vector<NodeSpec>& atoms) {
    std::string out;
    for (const auto& a : atoms) {
        if (!out.empty()) out += " + ";
        out += a.to_string();
    }
    return out;
}

// --- forest structure ------------------------------------------------------

int Forest::emit_tree(Atom& atom, NodeKind kind, int depth) {
    if (depth == 0) {
        atom.nodes.push_back({NodeKind::leaf, -1, -1, static_cast<int>(atom.leaves.size())});
        atom.leaves.emplace_back();
        return static_cast<int>(atom.nodes.size()) - 1;
    }
    int a = emit_tree(atom, kind, depth - 1);
    int b = emit_tree(atom, kind, depth - 1);
    atom.nodes.push_back({kind, a, b, -1});
    return static_cast<int>(atom.nodes.size()) - 1;
}

int Forest::emit(Atom& atom, const NodeSpec& spec) {
    switch (spec.kind) {
        case NodeKind::leaf: return emit_tree(atom, NodeKind::leaf, 0);
        case NodeKind::eml:
        case NodeKind::sol: return emit_tree(atom, spec.kind, spec.depth);
        case NodeKind::mult: {
            if (spec.children.size() != 2) throw std::invalid_argument("mult needs two children");
            int a = emit(atom, spec.children[0]);
            int b = emit(atom, spec.children[1]);
            atom.nodes.push_back({NodeKind::mult, a, b, -1});
            return static_cast<int>(atom.nodes.size()) - 1;
        }
    }
    return -1;
}

void Forest::compile(Atom& atom) {
    atom.nodes.clear();
    atom.leaves.clear();
    emit(atom, atom.spec);
}

Forest::Forest(std::vector<NodeSpec> atoms) {
    for (auto& s : atoms) {
        Atom a;
        a.spec = std::move(s);
        compile(a);
        atoms_.push_back(std::move(a));
    }
}

std::vector<NodeSpec> Forest::specs() const {
    std::vector<NodeSpec> out;
    for (const auto& a : atoms_) out.push_back(a.spec);
    return out;
}

std::size_t Forest::leaf_count() const {
    std::size_t n = 0;
    for (const auto& a : atoms_) n += a.leaves.size();
    return n;
}

int Forest::max_depth() const {
    int d = 0;
    for (const auto& a : atoms_) d = std::max(d, a.spec.max_depth());
    return d;
}

std::size_t Forest::parameter_count() const { return 2 * leaf_count() + atoms_.size(); }

std::vector<double> Forest::parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& a : atoms_) {
        for (const auto& l : a.leaves) {
            out.push_back(l.alpha);
            out.push_back(l.beta);
        }
        out.push_back(a.coef);
    }
    return out;
}

void Forest::set_parameters(std::span<const double> theta) {
    if (theta.size() != parameter_count()) throw std::invalid_argument("parameter vector has the wrong length");
    std::size_t p = 0;
    for (auto& a : atoms_) {
        for (auto& l : a.leaves) {
            l.alpha = theta[p++];
            l.beta = theta[p++];
        }
        a.coef = theta[p++];
    }
}

bool Forest::is_snapped() const {
    for (const auto& a : atoms_) {
        for (const auto& l : a.leaves) {
            if (!l.choice) return false;
        }
    }
    return true;
}

void Forest::erase(std::size_t k) { atoms_.erase(atoms_.begin() + static_cast<std::ptrdiff_t>(k)); }

// --- evaluation ------------------------------------------------------------

namespace {

using Arr = Eigen::ArrayXd;

struct Weights {
    double w0, w1;
};

Weights leaf_weights(const LeafParams& l, double tau) {
    if (l.choice) return *l.choice == 0 ? Weights{1.0, 0.0} : Weights{0.0, 1.0};
    double a = l.alpha / tau, b = l.beta / tau;
    double m = std::max(a, b);
    double e0 = std::exp(a - m), e1 = std::exp(b - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace

namespace detail {

struct Tape {
    std::vector<Arr> val, der;
};

}  // namespace detail

namespace {

template <class Atom>
detail::Tape run_atom(const Atom& atom, const Arr& x, double tau) {
    detail::Tape t;
    const std::size_t n = atom.nodes.size();
    t.val.resize(n);
    t.der.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& nd = atom.nodes[i];
        switch (nd.kind) {
            case NodeKind::leaf: {
                Weights w = leaf_weights(atom.leaves[static_cast<std::size_t>(nd.leaf)], tau);
                t.val[i] = w.w0 + w.w1 * x;
                t.der[i] = Arr::Constant(x.size(), w.w1);
                break;
            }
            case NodeKind::eml: {
                const Arr& u = t.val[static_cast<std::size_t>(nd.a)];
                const Arr& v = t.val[static_cast<std::size_t>(nd.b)];
                Arr eu = u.exp();
                t.val[i] = eu - v.log();
                t.der[i] = eu * t.der[static_cast<std::size_t>(nd.a)] - t.der[static_cast<std::size_t>(nd.b)] / v;
                break;
            }
            case NodeKind::sol: {
                const Arr& u = t.val[static_cast<std::size_t>(nd.a)];
                const Arr& v = t.val[static_cast<std::size_t>(nd.b)];
                t.val[i] = u.sin() - v.cos();
                t.der[i] = u.cos() * t.der[static_cast<std::size_t>(nd.a)] + v.sin() * t.der[static_cast<std::size_t>(nd.b)];
                break;
            }
            case NodeKind::mult: {
                const Arr& a = t.val[static_cast<std::size_t>(nd.a)];
                const Arr& b = t.val[static_cast<std::size_t>(nd.b)];
                t.val[i] = a * b;
                t.der[i] = t.der[static_cast<std::size_t>(nd.a)] * b + a * t.der[static_cast<std::size_t>(nd.b)];
                break;
            }
        }
    }
    return t;
}

Arr to_arr(std::span<const double> v) { return Eigen::Map<const Arr>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::vector<double> to_vec(const Arr& a) { return {a.data(), a.data() + a.size()}; }

double loss_of(const Arr& r, Loss kind) {
    if (kind == Loss::squared) return r.square().mean();
    return r.square().log1p().mean();
}

}  // namespace

ForestEval Forest::forward_atom(std::size_t k, std::span<const double> x, double tau) const {
    const Atom& atom = atoms_.at(k);
    auto t = run_atom(atom, to_arr(x), tau);
    return {to_vec(t.val.back()), to_vec(t.der.back())};
}

ForestEval Forest::forward(std::span<const double> x, double tau) const {
    Arr xs = to_arr(x);
    Arr v = Arr::Zero(xs.size()), d = Arr::Zero(xs.size());
    for (const auto& atom : atoms_) {
        auto t = run_atom(atom, xs, tau);
        v += atom.coef * t.val.back();
        d += atom.coef * t.der.back();
    }
    return {to_vec(v), to_vec(d)};
}

double Forest::loss(std::span<const double> x, std::span<const double> y, double tau, Loss kind) const {
    if (x.size() != y.size()) throw std::invalid_argument("x and y differ in length");
    auto e = forward(x, tau);
    return loss_of(to_arr(e.derivatives) - to_arr(y), kind);
}

double Forest::loss_and_gradient(std::span<const double> x, std::span<const double> y, double tau, Loss kind,
                                 std::vector<double>& grad) const {
    if (x.size() != y.size()) throw std::invalid_argument("x and y differ in length");
    const Arr xs = to_arr(x);
    const auto n = xs.size();
    std::vector<detail::Tape> tapes;
    Arr fd = Arr::Zero(n);
    for (const auto& atom : atoms_) {
        tapes.push_back(run_atom(atom, xs, tau));
        fd += atom.coef * tapes.back().der.back();
    }
    const Arr r = fd - to_arr(y);
    const double L = loss_of(r, kind);
    // dL/dF'_i
    Arr gbar = kind == Loss::squared ? Arr(2.0 * r / static_cast<double>(n))
                                     : Arr(2.0 * r / (1.0 + r.square()) / static_cast<double>(n));
    grad.assign(parameter_count(), 0.0);
    std::size_t p = 0;
    for (std::size_t k = 0; k < atoms_.size(); ++k) {
        const Atom& atom = atoms_[k];
        const auto& t = tapes[k];
        const std::size_t m = atom.nodes.size();
        std::vector<Arr> vb(m, Arr::Zero(n)), db(m, Arr::Zero(n));
        db[m - 1] = atom.coef * gbar;
        for (std::size_t ii = m; ii-- > 0;) {
            const auto& nd = atom.nodes[ii];
            if (nd.kind == NodeKind::leaf) continue;
            const auto a = static_cast<std::size_t>(nd.a), b = static_cast<std::size_t>(nd.b);
            const Arr &u = t.val[a], &v = t.val[b], &du = t.der[a], &dv = t.der[b];
            switch (nd.kind) {
                case NodeKind::eml: {
                    Arr eu = u.exp();
                    vb[a] += vb[ii] * eu + db[ii] * eu * du;
                    db[a] += db[ii] * eu;
                    vb[b] += -vb[ii] / v + db[ii] * dv / v.square();
                    db[b] += -db[ii] / v;
                    break;
                }
                case NodeKind::sol: {
                    vb[a] += vb[ii] * u.cos() - db[ii] * u.sin() * du;
                    db[a] += db[ii] * u.cos();
                    vb[b] += vb[ii] * v.sin() + db[ii] * v.cos() * dv;
                    db[b] += db[ii] * v.sin();
                    break;
                }
                case NodeKind::mult: {
                    vb[a] += vb[ii] * v + db[ii] * dv;
                    db[a] += db[ii] * v;
                    vb[b] += vb[ii] * u + db[ii] * du;
                    db[b] += db[ii] * u;
                    break;
                }
                default: break;
            }
        }
        // Leaves appear in the node list in the same order as in leaves.
        for (std::size_t ii = 0; ii < m; ++ii) {
            const auto& nd = atom.nodes[ii];
            if (nd.kind != NodeKind::leaf) continue;
            const LeafParams& l = atom.leaves[static_cast<std::size_t>(nd.leaf)];
            const std::size_t slot = p + 2 * static_cast<std::size_t>(nd.leaf);
            if (l.choice) continue;
            Weights w = leaf_weights(l, tau);
            double s = w.w0 * w.w1 / tau;
            double ga = s * (vb[ii] * (1.0 - xs) - db[ii]).sum();
            grad[slot] = ga;
            grad[slot + 1] = -ga;
        }
        p += 2 * atom.leaves.size();
        grad[p++] = (gbar * t.der.back()).sum();
    }
    return L;
}

// --- symbolic form ---------------------------------------------------------

namespace {

std::optional<Rational> small_fraction(double c, double tol) {
    if (!std::isfinite(c)) return std::nullopt;
    for (std::int64_t q = 1; q <= 12; ++q) {
        double p = std::round(c * static_cast<double>(q));
        if (std::fabs(p) > 1e15) return std::nullopt;
        if (std::fabs(c - p / static_cast<double>(q)) <= tol) return Rational(static_cast<std::int64_t>(p), q);
    }
    return std::nullopt;
}

double round_coefficient(double c) {
    auto r = small_fraction(c, 1e-6);
    return r ? r->to_double() : c;
}

}  // namespace

std::pair<Expr, Expr> Forest::to_expr() const {
    if (!is_snapped()) throw std::logic_error("to_expr needs a snapped forest");
    const Expr x = variable(0);
    std::vector<Expr> fs, fps;
    for (const auto& atom : atoms_) {
        std::vector<Expr> v(atom.nodes.size()), d(atom.nodes.size());
        for (std::size_t i = 0; i < atom.nodes.size(); ++i) {
            const auto& nd = atom.nodes[i];
            if (nd.kind == NodeKind::leaf) {
                bool is_x = *atom.leaves[static_cast<std::size_t>(nd.leaf)].choice == 1;
                v[i] = is_x ? x : constant(Number(1));
                d[i] = constant(Number(is_x ? 1 : 0));
                continue;
            }
            const Expr &u = v[static_cast<std::size_t>(nd.a)], &w = v[static_cast<std::size_t>(nd.b)];
            const Expr &du = d[static_cast<std::size_t>(nd.a)], &dw = d[static_cast<std::size_t>(nd.b)];
            switch (nd.kind) {
                case NodeKind::eml:
                    v[i] = eml(u, w);
                    d[i] = exp(u) * du - dw / w;
                    break;
                case NodeKind::sol:
                    v[i] = sol(u, w);
                    d[i] = cos(u) * du + sin(w) * dw;
                    break;
                default:
                    v[i] = u * w;
                    d[i] = du * w + u * dw;
                    break;
            }
        }
        auto exact = small_fraction(atom.coef, 1e-12);
        Expr c = exact ? constant(Number(*exact)) : constant(Number::from_double(atom.coef));
        fs.push_back(c * v.back());
        fps.push_back(c * d.back());
    }
    return {canonicalize(add(std::move(fs))), canonicalize(add(std::move(fps)))};
}

Forest snap(const Forest& f) {
    Forest out = f;
    for (std::size_t k = 0; k < out.atom_count(); ++k) {
        for (auto& l : out.leaves(k)) {
            if (!l.choice) l.choice = l.beta > l.alpha ? 1 : 0;
        }
        out.coefficient(k) = round_coefficient(out.coefficient(k));
    }
    for (std::size_t k = out.atom_count(); k-- > 0;) {
        Forest one({out.spec(k)});
        one.leaves(0) = out.leaves(k);
        if (one.to_expr().first.is_constant()) out.erase(k);
    }
    return out;
}

double derivative_mse(const Forest& f, std::span<const double> x, std::span<const double> y, double tau) {
    auto e = f.forward(x, tau);
    return (to_arr(e.derivatives) - to_arr(y)).square().mean();
}

double refit_coefficients(Forest& f, std::span<const double> x, std::span<const double> y) {
    if (f.atom_count() == 0) return to_arr(y).square().mean();
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto k = static_cast<Eigen::Index>(f.atom_count());
    Eigen::MatrixXd A(n, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        auto e = f.forward_atom(static_cast<std::size_t>(j), x, 1.0);
        A.col(j) = Eigen::Map<const Eigen::VectorXd>(e.derivatives.data(), n);
    }
    if (!A.allFinite()) return std::numeric_limits<double>::infinity();
    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(yv);
    if (!c.allFinite()) return derivative_mse(f, x, y);
    Eigen::VectorXd rounded = c;
    for (Eigen::Index j = 0; j < k; ++j) rounded[j] = round_coefficient(c[j]);
    double raw = (A * c - yv).squaredNorm() / static_cast<double>(n);
    double rnd = (A * rounded - yv).squaredNorm() / static_cast<double>(n);
    const Eigen::VectorXd& use = rnd <= std::max(2.0 * raw, 1e-24) ? rounded : c;
    for (Eigen::Index j = 0; j < k; ++j) f.coefficient(static_cast<std::size_t>(j)) = use[j];
    return derivative_mse(f, x, y);
}

// --- training --------------------------------------------------------------

void TrainConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("invalid train config: ") + what);
    };
    need(steps >= 1, "steps must be at least 1");
    need(restarts >= 1, "restarts must be at least 1");
    need(learning_rate > 0, "learning rate must be positive");
    need(tau_start > 0 && tau_start <= 1 && tau_end > 0 && tau_end <= tau_start, "need 0 < tau_end <= tau_start <= 1");
    need(anneal_fraction > 0 && anneal_fraction <= 1, "anneal fraction must be in (0, 1]");
    need(clip_norm > 0, "clip norm must be positive");
    need(checkpoints >= 1, "checkpoints must be at least 1");
    need(workers >= 1, "workers must be at least 1");
}

double temperature(int step, const TrainConfig& cfg) {
    double frac = std::min(static_cast<double>(step) / (cfg.anneal_fraction * cfg.steps), 1.0);
    return cfg.tau_start - (cfg.tau_start - cfg.tau_end) * frac;
}

double clip_gradient(std::vector<double>& g, double max_norm) {
    double norm = 0.0;
    for (double v : g) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > max_norm) {
        double s = max_norm / norm;
        for (double& v : g) v *= s;
    }
    return norm;
}

namespace {

struct RestartOutcome {
    RestartReport report;
    Forest best;
    bool finite = false;
};

RestartOutcome run_restart(const std::vector<NodeSpec>& templ, std::span<const double> x, std::span<const double> y,
                           const TrainConfig& cfg, Loss kind, int restart) {
    RestartOutcome out;
    RestartReport& rep = out.report;
    rep.restart = restart;
    rep.snapped_mse = std::numeric_limits<double>::infinity();

    Forest f(templ);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(restart)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> init(-1.0, 1.0);
    for (std::size_t k = 0; k < f.atom_count(); ++k) {
        for (auto& l : f.leaves(k)) {
            l.alpha = init(rng);
            l.beta = init(rng);
        }
    }
    std::vector<double> theta = f.parameters(), prev = theta, grad;
    std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
    std::vector<bool> is_coef(theta.size(), false);
    {
        std::size_t p = 0;
        for (std::size_t k = 0; k < f.atom_count(); ++k) {
            p += 2 * f.leaves(k).size();
            is_coef[p++] = true;
        }
    }
    double lr = cfg.learning_rate;
    int t = 0;
    const int every = std::max(1, cfg.steps / cfg.checkpoints);

    auto checkpoint = [&] {
        Forest s = snap(f);
        double mse = cfg.train_coefficients ? refit_coefficients(s, x, y) : derivative_mse(s, x, y);
        if (std::isfinite(mse) && mse < rep.snapped_mse) {
            rep.snapped_mse = mse;
            out.best = s;
            out.finite = true;
        }
        return out.finite && rep.snapped_mse < cfg.stop_mse;
    };

    for (int step = 0; step < cfg.steps; ++step) {
        ++rep.steps_run;
        double tau = temperature(step, cfg);
        double L = f.loss_and_gradient(x, y, tau, kind, grad);
        bool bad = !std::isfinite(L) || std::any_of(grad.begin(), grad.end(), [](double g) { return !std::isfinite(g); });
        if (bad) {
            ++rep.rejected_steps;
            if (rep.halvings >= cfg.max_halvings || t == 0) {
                rep.diverged = true;
                break;
            }
            ++rep.halvings;
            lr *= 0.5;
            theta = prev;
            f.set_parameters(theta);
            continue;
        }
        rep.loss_curve.push_back(L);
        rep.final_loss = L;
        if (!cfg.train_coefficients) {
            for (std::size_t i = 0; i < grad.size(); ++i) {
                if (is_coef[i]) grad[i] = 0.0;
            }
        }
        double norm = clip_gradient(grad, cfg.clip_norm);
        rep.max_step_norm = std::max(rep.max_step_norm, std::min(norm, cfg.clip_norm));
        prev = theta;
        ++t;
        const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * grad[i] * grad[i];
            theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
        }
        f.set_parameters(theta);
        if ((step + 1) % every == 0 && step + 1 < cfg.steps && checkpoint()) break;
    }
    // An abandoned restart keeps only what its earlier checkpoints found.
    if (!rep.diverged && !(out.finite && rep.snapped_mse < cfg.stop_mse)) checkpoint();
    if (out.finite) rep.formula = to_infix(out.best.to_expr().first);
    return out;
}

}  // namespace

TrainResult train(const std::vector<NodeSpec>& templ, std::span<const double> x, std::span<const double> y,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (templ.empty()) throw std::invalid_argument("empty forest template");
    if (x.size() != y.size() || x.empty()) throw std::invalid_argument("x and y must be non-empty and equal in length");
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw std::invalid_argument("training data is not finite");
    }
    int depth = 0;
    for (const auto& s : templ) depth = std::max(depth, s.max_depth());
    const Loss kind = cfg.loss.value_or(depth >= 3 ? Loss::log1p_squared : Loss::squared);

    TrainResult res;
    std::vector<RestartOutcome> outcomes;
    const int w = std::max(1, cfg.workers);
    bool stop = false;
    for (int first = 0; first < cfg.restarts && !stop; first += w) {
        const int count = std::min(w, cfg.restarts - first);
        std::vector<RestartOutcome> batch(static_cast<std::size_t>(count));
        if (count == 1) {
            batch[0] = run_restart(templ, x, y, cfg, kind, first);
        } else {
            std::vector<std::thread> pool;
            for (int i = 0; i < count; ++i) {
                pool.emplace_back([&, i] { batch[static_cast<std::size_t>(i)] = run_restart(templ, x, y, cfg, kind, first + i); });
            }
            for (auto& th : pool) th.join();
        }
        for (auto& o : batch) {
            if (stop) break;  // later restarts in the batch are discarded
            stop = o.finite && o.report.snapped_mse < cfg.stop_mse;
            outcomes.push_back(std::move(o));
        }
    }
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        res.restarts.push_back(outcomes[i].report);
        if (!outcomes[i].finite) continue;
        if (!res.ok || outcomes[i].report.snapped_mse < res.best_mse) {
            res.ok = true;
            res.best_mse = outcomes[i].report.snapped_mse;
            res.best_restart = static_cast<int>(i);
            res.best = outcomes[i].best;
        }
    }
    if (!res.ok) {
        res.failure = "all " + std::to_string(outcomes.size()) + " restarts diverged";
        return res;
    }
    res.converged = res.best_mse < cfg.stop_mse;
    auto [f, fp] = res.best.to_expr();
    res.antiderivative = f;
    res.derivative_expr = fp;
    return res;
}

std::string train_report(const TrainResult& r) {
    std::ostringstream os;
    os << "status " << (r.ok ? (r.converged ? "converged" : "finished") : "failed") << "\n";
    if (!r.ok) os << "failure " << r.failure << "\n";
    if (r.ok) {
        os << "best_restart " << r.best_restart << "\n";
        os << "snapped_mse " << format_double(r.best_mse) << "\n";
        os << "F " << to_infix(r.antiderivative) << "\n";
        os << "F' " << to_infix(r.derivative_expr) << "\n";
        os << "F_prefix " << r.antiderivative.key() << "\n";
        os << "F'_prefix " << r.derivative_expr.key() << "\n";
    }
    os << "restart steps rejected halvings diverged final_loss snapped_mse formula\n";
    std::size_t longest = 0;
    for (const auto& rep : r.restarts) {
        os << rep.restart << " " << rep.steps_run << " " << rep.rejected_steps << " " << rep.halvings << " "
           << (rep.diverged ? 1 : 0) << " " << format_double(rep.final_loss) << " " << format_double(rep.snapped_mse)
           << " " << (rep.formula.empty() ? "-" : rep.formula) << "\n";
        longest = std::max(longest, rep.loss_curve.size());
    }
    os << "loss_curves\nstep";
    for (const auto& rep : r.restarts) os << " r" << rep.restart;
    os << "\n";
    for (std::size_t s = 0; s < longest; ++s) {
        os << s;
        for (const auto& rep : r.restarts) {
            os << " " << (s < rep.loss_curve.size() ? format_double(rep.loss_curve[s]) : std::string("nan"));
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace atomforest
