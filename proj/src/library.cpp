#include "atomforest/library.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>

namespace atomforest {

std::string_view origin_name(Origin o) {
    switch (o) {
        case Origin::seed: return "seed";
        case Origin::eml: return "eml";
        case Origin::sol: return "sol";
        case Origin::product: return "product";
        case Origin::nesting: return "nesting";
        case Origin::discovered: return "discovered";
    }
    return "?";
}

std::optional<Origin> origin_from_name(std::string_view name) {
    for (Origin o : {Origin::seed, Origin::eml, Origin::sol, Origin::product, Origin::nesting, Origin::discovered}) {
        if (origin_name(o) == name) return o;
    }
    return std::nullopt;
}

std::string_view verdict_name(Verdict v) {
    switch (v) {
        case Verdict::accepted: return "accepted";
        case Verdict::non_finite: return "non-finite";
        case Verdict::too_large: return "too-large";
        case Verdict::unresolved: return "unresolved";
        case Verdict::constant: return "constant";
        case Verdict::duplicate_key: return "duplicate-key";
        case Verdict::correlated: return "correlated";
        case Verdict::capped: return "capped";
        case Verdict::mismatch: return "derivative-mismatch";
    }
    return "?";
}

void BuildConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("invalid build config: ") + what);
    };
    need(p_min <= p_max, "p range is empty");
    need(q_min >= 1 && q_min <= q_max, "q range must be non-empty and start at 1 or more");
    need(slope_min <= slope_max && !(slope_min == 0 && slope_max == 0), "slope range has no non-zero value");
    need(offset_min <= offset_max, "offset range is empty");
    need(quad_min <= quad_max && !(quad_min == 0 && quad_max == 0), "quad range has no non-zero value");
    need(d_max >= 1 && d_max <= 3, "d_max must be 1, 2 or 3");
    need(max_atoms >= 1, "max_atoms must be positive");
    need(rho > 0.0 && rho <= 1.0, "rho must be in (0, 1]");
    need(max_abs_value > 0.0, "max_abs_value must be positive");
    need(max_trapezoid_gap > 0.0, "max_trapezoid_gap must be positive");
}

// ---------------------------------------------------------------------------

CorrelationIndex::CorrelationIndex(const Samples& samples, double rho)
    : n_(samples.rows()), rho_(rho), width_(std::sqrt(2.0 * (1.0 - rho))) {
    if (width_ <= 0.0) width_ = 1e-9;
    // Centred polynomial directions in each variable, orthonormalised.
    for (int power = 1; power <= 4 && directions_.size() < k_dims; ++power) {
        for (std::size_t j = 0; j < samples.variables() && directions_.size() < k_dims; ++j) {
            auto col = samples.column(j);
            std::vector<double> d(n_);
            for (std::size_t i = 0; i < n_; ++i) d[i] = std::pow(col[i], power);
            double mean = n_ ? std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n_) : 0.0;
            for (auto& v : d) v -= mean;
            double before = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
            for (const auto& e : directions_) {
                double dot = std::inner_product(d.begin(), d.end(), e.begin(), 0.0);
                for (std::size_t i = 0; i < n_; ++i) d[i] -= dot * e[i];
            }
            double norm = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
            if (!std::isfinite(norm) || norm <= 1e-8 * std::max(before, 1e-300)) continue;
            for (auto& v : d) v /= norm;
            directions_.push_back(std::move(d));
        }
    }
}

std::optional<std::vector<double>> CorrelationIndex::unit(std::span<const double> v) const {
    if (v.size() != n_ || n_ == 0) return std::nullopt;
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n_);
    std::vector<double> u(n_);
    double raw = 0.0, centred = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
        u[i] = v[i] - mean;
        raw += v[i] * v[i];
        centred += u[i] * u[i];
    }
    if (!std::isfinite(centred) || centred <= 1e-20 * raw || centred == 0.0) return std::nullopt;
    double inv = 1.0 / std::sqrt(centred);
    for (auto& x : u) x *= inv;
    return u;
}

CorrelationIndex::Cell CorrelationIndex::cell_of(std::span<const double> unit, double sign) const {
    Cell c{};
    for (std::size_t k = 0; k < directions_.size(); ++k) {
        double p = sign * std::inner_product(unit.begin(), unit.end(), directions_[k].begin(), 0.0);
        c[k] = static_cast<std::int32_t>(std::floor(p / width_));
    }
    return c;
}

std::uint64_t CorrelationIndex::hash(const Cell& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : c) {
        h ^= static_cast<std::uint32_t>(v);
        h *= 1099511628211ULL;
        h ^= h >> 29;
    }
    return h;
}

std::optional<CorrelationIndex::Match> CorrelationIndex::find(std::span<const double> unit) const {
    std::optional<Match> best;
    const int dims = static_cast<int>(directions_.size());
    int combos = 1;
    for (int k = 0; k < dims; ++k) combos *= 3;
    for (double sign : {1.0, -1.0}) {
        Cell base = cell_of(unit, sign);
        for (int m = 0; m < combos; ++m) {
            Cell c = base;
            int r = m;
            for (int k = 0; k < dims; ++k) {
                c[k] += r % 3 - 1;
                r /= 3;
            }
            auto it = cells_.find(hash(c));
            if (it == cells_.end()) continue;
            for (std::uint32_t slot : it->second) {
                if (best && ids_[slot] >= best->id) continue;
                const double* row = units_.data() + static_cast<std::size_t>(slot) * n_;
                double dot = std::inner_product(unit.begin(), unit.end(), row, 0.0);
                if (std::fabs(dot) > rho_) best = Match{ids_[slot], dot};
            }
        }
    }
    return best;
}

void CorrelationIndex::insert(std::size_t id, std::vector<double> unit) {
    auto slot = static_cast<std::uint32_t>(ids_.size());
    cells_[hash(cell_of(unit, 1.0))].push_back(slot);
    units_.insert(units_.end(), unit.begin(), unit.end());
    ids_.push_back(id);
}

double CorrelationIndex::max_abs_correlation(std::span<const double> unit) const {
    double best = 0.0;
    for (std::size_t s = 0; s < ids_.size(); ++s) {
        const double* row = units_.data() + s * n_;
        best = std::max(best, std::fabs(std::inner_product(unit.begin(), unit.end(), row, 0.0)));
    }
    return best;
}

// ---------------------------------------------------------------------------

struct AtomLibrary::Candidate {
    std::function<Expr()> build;
    std::vector<double> values;
    std::vector<double> dvalues;
    int layer = 0;
    int depth = 0;
    Origin origin = Origin::seed;
};

AtomLibrary::AtomLibrary(Grid grid, BuildConfig cfg) : AtomLibrary(grid.samples(), cfg, 0) {
    grid_ = std::move(grid);
}

AtomLibrary::AtomLibrary(Samples samples, BuildConfig cfg, int wrt)
    : samples_(std::move(samples)), cfg_(cfg), wrt_(wrt), index_(samples_, cfg.rho) {
    cfg_.validate();
    if (wrt < 0 || static_cast<std::size_t>(wrt) >= std::max<std::size_t>(samples_.variables(), 1)) {
        throw std::invalid_argument("wrt variable out of range");
    }
    AtomPair one;
    one.f = constant(Number(1));
    one.fprime = constant(Number(0));
    one.values.assign(samples_.rows(), 1.0);
    one.dvalues.assign(samples_.rows(), 0.0);
    one.searchable = false;
    keys_.emplace(one.f.key(), 0);
    atoms_.push_back(std::move(one));
}

std::vector<std::size_t> AtomLibrary::searchable_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
        if (atoms_[i].searchable) out.push_back(i);
    }
    return out;
}

std::optional<std::size_t> AtomLibrary::find(const std::string& canonical_key) const {
    auto it = keys_.find(canonical_key);
    if (it == keys_.end()) return std::nullopt;
    return it->second;
}

Admission AtomLibrary::screen(std::span<const double> values, std::span<const double> dvalues) const {
    Admission a;
    if (atoms_.size() >= cfg_.max_atoms) {
        a.verdict = Verdict::capped;
        a.reason = "library is at max_atoms";
        return a;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]) || !std::isfinite(dvalues[i])) {
            a.verdict = Verdict::non_finite;
            a.reason = "non-finite at sample " + std::to_string(i);
            return a;
        }
        if (std::fabs(values[i]) > cfg_.max_abs_value || std::fabs(dvalues[i]) > cfg_.max_abs_value) {
            a.verdict = Verdict::too_large;
            a.reason = "magnitude above " + format_double(cfg_.max_abs_value) + " at sample " + std::to_string(i);
            return a;
        }
    }
    if (grid_) {
        auto x = grid_->points();
        double scale = 0.0;
        for (double d : dvalues) scale = std::max(scale, std::fabs(d));
        for (std::size_t i = 0; scale > 0.0 && i + 1 < values.size(); ++i) {
            double dx = x[i + 1] - x[i];
            double gap = std::fabs(values[i + 1] - values[i] - 0.5 * dx * (dvalues[i] + dvalues[i + 1]));
            if (gap > cfg_.max_trapezoid_gap * dx * scale) {
                a.verdict = Verdict::unresolved;
                a.reason = "samples " + std::to_string(i) + " and " + std::to_string(i + 1) +
                           " disagree with the derivative";
                return a;
            }
        }
    }
    auto u = index_.unit(values);
    if (!u) {
        a.verdict = Verdict::constant;
        a.reason = "constant on the samples";
        return a;
    }
    if (auto m = index_.find(*u)) {
        a.verdict = Verdict::correlated;
        a.index = m->id;
        a.correlation = m->correlation;
        a.reason = "|corr| " + format_double(std::fabs(m->correlation)) + " with atom " + std::to_string(m->id);
        return a;
    }
    return a;
}

Admission AtomLibrary::admit(AtomPair c) { return admit_pair(std::move(c), true); }

Admission AtomLibrary::admit_pair(AtomPair c, bool verify) {
    Admission a;
    const std::size_t n = samples_.rows();
    if (c.values.size() != n || c.dvalues.size() != n) {
        throw std::invalid_argument("atom samples do not match the library's sample count");
    }
    c.f = canonicalize(c.f);
    c.fprime = canonicalize(c.fprime);
    if (verify && differentiate(c.f, wrt_).key() != c.fprime.key()) {
        a.verdict = Verdict::mismatch;
        a.reason = "stored derivative differs from differentiate(f)";
        return a;
    }
    if (auto it = keys_.find(c.f.key()); it != keys_.end()) {
        a.verdict = Verdict::duplicate_key;
        a.index = it->second;
        a.reason = "same canonical form as atom " + std::to_string(it->second);
        return a;
    }
    if (!c.searchable) {
        if (atoms_.size() >= cfg_.max_atoms) {
            a.verdict = Verdict::capped;
            a.reason = "library is at max_atoms";
            return a;
        }
    } else {
        a = screen(c.values, c.dvalues);
        if (!a.accepted()) return a;
    }
    a.index = atoms_.size();
    if (c.searchable) index_.insert(a.index, *index_.unit(c.values));
    keys_.emplace(c.f.key(), a.index);
    atoms_.push_back(std::move(c));
    return a;
}

Admission AtomLibrary::admit(const Expr& f, int layer, int depth, Origin origin, bool searchable) {
    AtomPair c;
    c.f = canonicalize(f);
    c.fprime = differentiate(c.f, wrt_);
    c.values = evaluate(c.f, samples_);
    c.dvalues = evaluate(c.fprime, samples_);
    c.layer = layer;
    c.depth = depth;
    c.origin = origin;
    c.searchable = searchable;
    return admit_pair(std::move(c), false);
}

Admission AtomLibrary::fold_in(const Expr& f) {
    Expr g = canonicalize(f);
    return admit(g, 4, nesting_depth(g), Origin::discovered);
}

std::optional<std::size_t> AtomLibrary::offer(LayerStats& st, Candidate&& c) {
    ++st.candidates;
    Admission a = screen(c.values, c.dvalues);
    if (a.accepted()) a = admit(c.build(), c.layer, c.depth, c.origin);
    switch (a.verdict) {
        case Verdict::accepted: ++st.admitted; return a.index;
        case Verdict::non_finite: ++st.non_finite; break;
        case Verdict::unresolved: ++st.unresolved; break;
        case Verdict::duplicate_key:
        case Verdict::correlated: ++st.duplicate; break;
        case Verdict::capped: ++st.capped; break;
        default: ++st.other; break;
    }
    return std::nullopt;
}

LayerStats AtomLibrary::finish(LayerStats st) {
    stats_.push_back(st);
    return st;
}

const AtomLibrary::Stripped& AtomLibrary::stripped(std::size_t i) {
    auto it = stripped_.find(i);
    if (it != stripped_.end()) return it->second;
    Stripped s;
    s.s = strip_constant(atoms_[i].f);
    s.v = evaluate(s.s, samples_);
    // Family of a single term: E exp, L log, T trig, P power, 0 otherwise.
    Expr t = s.s;
    if (t.op() == Op::mul && t.child(0).is_number() && t.children().size() == 2) t = t.child(1);
    switch (t.op()) {
        case Op::exp: s.family = 'E'; break;
        case Op::ln: s.family = 'L'; break;
        case Op::sin:
        case Op::cos: s.family = 'T'; break;
        case Op::pow:
        case Op::variable: s.family = 'P'; break;
        default: s.family = 0; break;
    }
    return stripped_.emplace(i, std::move(s)).first->second;
}

namespace {

std::vector<double> map1(std::span<const double> a, double (*fn)(double)) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
    return out;
}

bool single_term(const Expr& s) { return !s.is_constant() && s.op() != Op::add; }

// Integers in [lo, hi] by magnitude, positive first: 0, 1, -1, 2, -2, ...
// Dedup keeps the first of a correlated group, so small coefficients win.
std::vector<int> by_magnitude(int lo, int hi) {
    std::vector<int> v;
    for (int i = lo; i <= hi; ++i) v.push_back(i);
    std::stable_sort(v.begin(), v.end(), [](int a, int b) {
        if (std::abs(a) != std::abs(b)) return std::abs(a) < std::abs(b);
        return a > b;
    });
    return v;
}

}  // namespace

LayerStats AtomLibrary::build_layer0() {
    LayerStats st;
    st.layer = 0;
    const Expr x = variable(wrt_);
    auto xs = samples_.column(static_cast<std::size_t>(wrt_));
    std::vector<Rational> seen;
    for (int q = cfg_.q_min; q <= cfg_.q_max; ++q) {
        for (int p : by_magnitude(cfg_.p_min, cfg_.p_max)) {
            if (p == 0) continue;
            Rational r(p, q);
            if (std::find(seen.begin(), seen.end(), r) != seen.end()) continue;
            seen.push_back(r);
            Rational rm1 = *Rational::add(r, Rational(-1));
            Candidate c;
            c.values.resize(xs.size());
            c.dvalues.resize(xs.size());
            for (std::size_t i = 0; i < xs.size(); ++i) {
                c.values[i] = rational_pow(xs[i], r);
                c.dvalues[i] = r.to_double() * rational_pow(xs[i], rm1);
            }
            c.build = [x, r] { return pow(x, r); };
            c.layer = 0;
            c.depth = 0;
            c.origin = Origin::seed;
            if (auto idx = offer(st, std::move(c))) bases_.push_back(*idx);
        }
    }
    return finish(st);
}

LayerStats AtomLibrary::build_layer1() {
    LayerStats st;
    st.layer = 1;
    const Expr x = variable(wrt_);
    auto xs = samples_.column(static_cast<std::size_t>(wrt_));
    const std::size_t n = xs.size();

    // Inner linear functions a*x + b: the terminals 1 and x first.
    std::vector<std::pair<int, int>> lin{{0, 1}, {1, 0}};
    for (int a : by_magnitude(cfg_.slope_min, cfg_.slope_max)) {
        if (a == 0) continue;
        for (int b : by_magnitude(cfg_.offset_min, cfg_.offset_max)) {
            if (a == 1 && b == 0) continue;
            lin.emplace_back(a, b);
        }
    }
    for (int b : by_magnitude(cfg_.offset_min, cfg_.offset_max)) {
        if (b != 1) lin.emplace_back(0, b);
    }
    auto lin_expr = [x](int a, int b) {
        return constant(Number(a)) * x + constant(Number(b));
    };
    auto lin_vals = [&](int a, int b) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = a * xs[i] + b;
        return v;
    };

    auto record = [&](std::optional<std::size_t> idx) {
        if (idx && single_term(stripped(*idx).s)) bases_.push_back(*idx);
    };

    for (const auto& [a1, b1] : lin) {
        auto u = lin_vals(a1, b1);
        auto eu = map1(u, [](double t) { return std::exp(t); });
        for (const auto& [a2, b2] : lin) {
            auto w = lin_vals(a2, b2);
            if (*std::min_element(w.begin(), w.end()) <= 0.0) continue;
            Candidate c;
            c.values.resize(n);
            c.dvalues.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                c.values[i] = eu[i] - std::log(w[i]);
                c.dvalues[i] = a1 * eu[i] - a2 / w[i];
            }
            c.build = [=] { return eml(lin_expr(a1, b1), lin_expr(a2, b2)); };
            c.layer = 1;
            c.depth = 1;
            c.origin = Origin::eml;
            record(offer(st, std::move(c)));
        }
    }
    for (const auto& [a1, b1] : lin) {
        auto u = lin_vals(a1, b1);
        for (const auto& [a2, b2] : lin) {
            auto w = lin_vals(a2, b2);
            Candidate c;
            c.values.resize(n);
            c.dvalues.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                c.values[i] = std::sin(u[i]) - std::cos(w[i]);
                c.dvalues[i] = a1 * std::cos(u[i]) + a2 * std::sin(w[i]);
            }
            c.build = [=] { return sol(lin_expr(a1, b1), lin_expr(a2, b2)); };
            c.layer = 1;
            c.depth = 1;
            c.origin = Origin::sol;
            record(offer(st, std::move(c)));
        }
    }
    return finish(st);
}

LayerStats AtomLibrary::build_layer2() {
    LayerStats st;
    st.layer = 2;
    const Expr x = variable(wrt_);
    auto xs = samples_.column(static_cast<std::size_t>(wrt_));
    const std::size_t n = xs.size();
    const std::vector<int> coefs = by_magnitude(cfg_.quad_min, cfg_.quad_max);
    for (int q : coefs) {
        if (q == 0) continue;
        for (int a : coefs) {
            for (int c0 : coefs) {
                Expr g = constant(Number(q)) * pow(x, 2) + constant(Number(a)) * x + constant(Number(c0));
                std::vector<double> gv(n), gd(n);
                for (std::size_t i = 0; i < n; ++i) {
                    gv[i] = (q * xs[i] + a) * xs[i] + c0;
                    gd[i] = 2.0 * q * xs[i] + a;
                }
                for (Op op : {Op::exp, Op::ln, Op::sin, Op::cos, Op::recip, Op::atan, Op::asin}) {
                    Candidate c;
                    c.values.resize(n);
                    c.dvalues.resize(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        double u = gv[i], du = gd[i];
                        switch (op) {
                            case Op::exp: c.values[i] = std::exp(u); c.dvalues[i] = du * c.values[i]; break;
                            case Op::ln: c.values[i] = -std::log(u); c.dvalues[i] = -du / u; break;
                            case Op::sin: c.values[i] = std::sin(u); c.dvalues[i] = du * std::cos(u); break;
                            case Op::cos: c.values[i] = std::cos(u); c.dvalues[i] = -du * std::sin(u); break;
                            case Op::recip: c.values[i] = 1.0 / u; c.dvalues[i] = -du / (u * u); break;
                            case Op::atan: c.values[i] = std::atan(u); c.dvalues[i] = du / (1.0 + u * u); break;
                            default: c.values[i] = std::asin(u); c.dvalues[i] = du / std::sqrt(1.0 - u * u); break;
                        }
                    }
                    c.build = [g, op] { return op == Op::ln ? -ln(g) : unary(op, g); };
                    c.layer = 2;
                    c.depth = 1;
                    c.origin = op == Op::exp || op == Op::ln   ? Origin::eml
                               : op == Op::sin || op == Op::cos ? Origin::sol
                                                                : Origin::nesting;
                    offer(st, std::move(c));
                }
            }
        }
    }
    return finish(st);
}

LayerStats AtomLibrary::build_layer3() {
    LayerStats st;
    st.layer = 3;
    const Expr x = variable(wrt_);
    auto xs = samples_.column(static_cast<std::size_t>(wrt_));
    const std::size_t n = xs.size();

    auto product = [&](std::size_t i, std::size_t j) {
        const Stripped& si = stripped(i);
        const Stripped& sj = stripped(j);
        Candidate c;
        c.values.resize(n);
        c.dvalues.resize(n);
        const auto& di = atoms_[i].dvalues;
        const auto& dj = atoms_[j].dvalues;
        for (std::size_t k = 0; k < n; ++k) {
            c.values[k] = si.v[k] * sj.v[k];
            c.dvalues[k] = di[k] * sj.v[k] + si.v[k] * dj[k];
        }
        c.build = [a = si.s, b = sj.s] { return a * b; };
        c.layer = 3;
        c.depth = std::max(atoms_[i].depth, atoms_[j].depth);
        c.origin = Origin::product;
        return c;
    };
    auto times_x = [&](std::size_t i) {
        const Stripped& si = stripped(i);
        Candidate c;
        c.values.resize(n);
        c.dvalues.resize(n);
        const auto& di = atoms_[i].dvalues;
        for (std::size_t k = 0; k < n; ++k) {
            c.values[k] = xs[k] * si.v[k];
            c.dvalues[k] = si.v[k] + xs[k] * di[k];
        }
        c.build = [x, a = si.s] { return x * a; };
        c.layer = 3;
        c.depth = atoms_[i].depth;
        c.origin = Origin::product;
        return c;
    };

    const std::vector<std::size_t> bases = bases_;
    auto eml_family = [&](std::size_t i) {
        char f = stripped(i).family;
        return f == 'E' || f == 'L';
    };
    auto sol_family = [&](std::size_t i) { return stripped(i).family == 'T'; };

    // Cross-family products first.
    for (std::size_t i : bases) {
        if (!eml_family(i)) continue;
        for (std::size_t j : bases) {
            if (!sol_family(j)) continue;
            if (auto idx = offer(st, product(i, j))) cross_.push_back(*idx);
        }
    }
    // x times every earlier atom.
    const std::size_t before = atoms_.size();
    for (std::size_t i = 1; i < before; ++i) {
        if (atoms_[i].layer <= 2 && atoms_[i].searchable) offer(st, times_x(i));
    }
    for (std::size_t k = 0, m = cross_.size(); k < m; ++k) offer(st, times_x(cross_[k]));
    // Remaining base pairs, squares included.
    for (std::size_t a = 0; a < bases.size(); ++a) {
        for (std::size_t b = a; b < bases.size(); ++b) {
            std::size_t i = bases[a], j = bases[b];
            if ((eml_family(i) && sol_family(j)) || (eml_family(j) && sol_family(i))) continue;
            offer(st, product(i, j));
        }
    }
    return finish(st);
}

LayerStats AtomLibrary::build_layer4(int round) {
    if (round != 1 && round != 2) throw std::invalid_argument("nesting round must be 1 or 2");
    LayerStats st;
    st.layer = 4;
    st.round = round;
    const Expr x = variable(wrt_);
    auto xs = samples_.column(static_cast<std::size_t>(wrt_));
    const std::size_t n = xs.size();

    std::vector<std::size_t> args;
    if (round == 1) {
        args = bases_;
        args.insert(args.end(), cross_.begin(), cross_.end());
    } else {
        args = nested_;
    }
    std::vector<std::size_t> fresh;
    for (std::size_t i : args) {
        const Stripped& s = stripped(i);
        const std::vector<double> ds = atoms_[i].dvalues;  // atoms_ grows below
        for (Op op : {Op::exp, Op::sin, Op::cos, Op::ln, Op::recip, Op::atan}) {
            Candidate c;
            c.values.resize(n);
            c.dvalues.resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                double u = s.v[k], du = ds[k];
                switch (op) {
                    case Op::exp: c.values[k] = std::exp(u); c.dvalues[k] = du * c.values[k]; break;
                    case Op::sin: c.values[k] = std::sin(u); c.dvalues[k] = du * std::cos(u); break;
                    case Op::cos: c.values[k] = std::cos(u); c.dvalues[k] = -du * std::sin(u); break;
                    case Op::ln: c.values[k] = -std::log(u); c.dvalues[k] = -du / u; break;
                    case Op::recip: c.values[k] = 1.0 / u; c.dvalues[k] = -du / (u * u); break;
                    default: c.values[k] = std::atan(u); c.dvalues[k] = du / (1.0 + u * u); break;
                }
            }
            c.build = [g = s.s, op] { return op == Op::ln ? -ln(g) : unary(op, g); };
            c.layer = 4;
            c.depth = round + 1;
            c.origin = Origin::nesting;
            if (auto idx = offer(st, std::move(c))) fresh.push_back(*idx);
        }
    }
    for (std::size_t i : fresh) {
        const Stripped& s = stripped(i);
        const auto& ds = atoms_[i].dvalues;
        Candidate c;
        c.values.resize(n);
        c.dvalues.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            c.values[k] = xs[k] * s.v[k];
            c.dvalues[k] = s.v[k] + xs[k] * ds[k];
        }
        c.build = [x, a = s.s] { return x * a; };
        c.layer = 4;
        c.depth = round + 1;
        c.origin = Origin::product;
        offer(st, std::move(c));
    }
    nested_ = std::move(fresh);
    return finish(st);
}

AtomLibrary AtomLibrary::build(Grid grid, const BuildConfig& cfg) {
    cfg.validate();
    AtomLibrary lib(std::move(grid), cfg);
    lib.build_layer0();
    lib.build_layer1();
    if (cfg.d_max >= 2) {
        lib.build_layer2();
        lib.build_layer3();
        lib.build_layer4(1);
    }
    if (cfg.d_max >= 3) lib.build_layer4(2);
    return lib;
}

}  // namespace atomforest
