// Acceptance checks, one line per criterion:
//   acceptance                 all criteria
//   acceptance --criterion 4   just one (repeatable)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "atomforest/feynman.hpp"
#include "atomforest/forest.hpp"
#include "atomforest/kb.hpp"
#include "atomforest/parse.hpp"
#include "atomforest/random.hpp"
#include "atomforest/search.hpp"
#include "atomforest/tabular.hpp"

using namespace atomforest;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 3) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

const AtomLibrary& default_library() {
    static AtomLibrary lib = AtomLibrary::build(default_grid(), BuildConfig{});
    return lib;
}

// ---- 1. stored derivatives against central differences

Outcome atom_derivatives() {
    auto t0 = Clock::now();
    AtomLibrary lib = AtomLibrary::build(default_grid(), BuildConfig{});
    const double h = 1e-5;
    auto pts = lib.grid()->points();
    std::vector<double> plus, minus;
    for (std::size_t j = 1; j + 1 < pts.size(); ++j) {
        plus.push_back(pts[j] + h);
        minus.push_back(pts[j] - h);
    }
    double worst = 0.0;
    std::string worst_atom;
    for (const auto& a : lib.atoms()) {
        auto fp = evaluate(a.f, plus), fm = evaluate(a.f, minus);
        for (std::size_t j = 0; j < plus.size(); ++j) {
            double fd = (fp[j] - fm[j]) / (2 * h);
            double d = a.dvalues[j + 1];
            double rel = std::fabs(fd - d) / std::max(std::fabs(d), 1.0);
            if (!(rel <= worst)) {
                worst = std::isnan(rel) ? INFINITY : rel;
                worst_atom = to_infix(a.f);
            }
        }
    }
    double secs = since(t0);
    Outcome o;
    o.pass = worst < 1e-5 && secs < 60.0;
    o.detail = std::to_string(lib.size()) + " atoms, max rel err " + num(worst) + " (< 1e-05) at " + worst_atom + ", " +
               num(secs) + " s (< 60 s)";
    return o;
}

// ---- 2. exact recovery at K <= 2

Outcome simultaneous_recovery() {
    auto t0 = Clock::now();
    const AtomLibrary& lib = default_library();
    Samples hold = Grid::holdout_for(*lib.grid()).samples();
    const std::vector<std::string> targets{"cos(x)", "exp(x)", "2*x", "1/x", "exp(x)*sin(x) + exp(x)*cos(x)"};
    SearchConfig cfg;
    cfg.k_max = 2;
    int ok = 0;
    std::string detail;
    for (const auto& t : targets) {
        Expr target = canonicalize(parse_infix(t));
        auto y = evaluate(target, lib.samples());
        GramCache cache(lib, y);
        auto by_k = search(cache, cfg);
        const SearchResult* p = best_result(by_k, cfg.exact_mse);
        bool good = false;
        std::string found = "none";
        if (p) {
            SearchResult r = *p;
            auto [F, Fp] = reconstruct(r, lib);
            found = to_infix(F);
            bool train = r.mse < 1e-15;
            bool ver = train && verify(r, lib, hold, target, cfg) == Verification::verified && r.holdout_mse < 1e-15;
            bool ident = canonical_string(differentiate(F)) == canonical_string(Fp);
            good = train && ver && ident && r.k() <= 2;
        }
        ok += good;
        detail += (detail.empty() ? "" : "; ") + t + " -> " + found + (good ? "" : " [FAILED]");
    }
    double secs = since(t0);
    Outcome o;
    o.pass = ok == static_cast<int>(targets.size()) && secs < 120.0;
    o.detail = std::to_string(ok) + "/5 exact, verified, identity; " + num(secs) + " s (< 120 s): " + detail;
    return o;
}

// ---- 3. search against brute-force least squares

struct Fit {
    std::vector<std::size_t> idx;
    std::vector<double> coef;
    double mse = 0.0;
    bool ok = false;
};

Fit lstsq(const AtomLibrary& lib, const std::vector<double>& y, std::vector<std::size_t> idx, const SearchConfig& cfg) {
    const auto n = static_cast<Eigen::Index>(y.size());
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd A(n, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& d = lib[idx[static_cast<std::size_t>(j)]].dvalues;
        for (Eigen::Index i = 0; i < n; ++i) A(i, j) = d[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    Fit f;
    f.idx = std::move(idx);
    Eigen::MatrixXd G = A.transpose() * A;
    if (k >= 2 && std::fabs(G.determinant()) <= cfg.det_min) return f;
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(yv);
    f.coef.assign(c.data(), c.data() + k);
    f.mse = (A * c - yv).squaredNorm() / static_cast<double>(n);
    f.ok = c.allFinite() && c.cwiseAbs().maxCoeff() <= cfg.coef_cap;
    return f;
}

Fit brute_force(const AtomLibrary& lib, const std::vector<double>& y, int k, const SearchConfig& cfg) {
    auto idx = lib.searchable_indices();
    const std::size_t m = idx.size();
    Fit best;
    auto consider = [&](std::vector<std::size_t> s) {
        Fit f = lstsq(lib, y, std::move(s), cfg);
        if (f.ok && (!best.ok || f.mse < best.mse)) best = std::move(f);
    };
    for (std::size_t a = 0; a < m; ++a) {
        if (k == 1) {
            consider({idx[a]});
            continue;
        }
        for (std::size_t b = a + 1; b < m; ++b) {
            if (k == 2) {
                consider({idx[a], idx[b]});
                continue;
            }
            for (std::size_t c = b + 1; c < m; ++c) consider({idx[a], idx[b], idx[c]});
        }
    }
    return best;
}

bool rel_close(double a, double b, double tol) {
    return std::fabs(a - b) <= tol * std::max({std::fabs(a), std::fabs(b), 1e-300});
}

Outcome search_oracle() {
    const AtomLibrary& full = default_library();
    SplitMix rng(2024);
    int cases = 0, k12 = 0, k3 = 0;
    double worst = 0.0;
    std::string why;
    for (int l = 0; l < 5; ++l) {
        std::size_t m = 30 + rng.below(31);  // 30..60
        std::vector<std::size_t> pool = full.searchable_indices();
        for (std::size_t i = 0; i < m; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        pool.resize(m);
        std::sort(pool.begin(), pool.end());
        AtomLibrary lib(*full.grid());
        for (std::size_t i : pool) lib.admit(full[i]);
        const std::size_t msearch = lib.searchable_indices().size();
        for (int t = 0; t < 5; ++t) {
            ++cases;
            std::vector<double> y(lib.samples().rows(), 0.0);
            for (int q = 0; q < 3; ++q) {
                const auto& d = lib[1 + rng.below(lib.size() - 1)].dvalues;
                double c = rng.uniform(-3.0, 3.0);
                for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * d[i];
            }
            for (double& v : y) v += 1e-3 * rng.normal();
            GramCache cache(lib, y);
            SearchConfig cfg;
            cfg.k_max = 3;
            cfg.beam_seed = msearch * (msearch - 1) / 2;  // >= M
            auto by_k = search(cache, cfg);
            bool good = true;
            for (int k = 1; k <= 2; ++k) {
                Fit want = brute_force(lib, y, k, cfg);
                const auto& list = by_k[static_cast<std::size_t>(k - 1)];
                if (!want.ok || list.empty() || list.front().indices != want.idx) {
                    good = false;
                    why = "K=" + std::to_string(k) + " subset differs (library " + std::to_string(l) + ")";
                    continue;
                }
                double e = std::fabs(list.front().mse - want.mse) / std::max(want.mse, 1e-300);
                for (std::size_t q = 0; q < want.coef.size(); ++q) {
                    e = std::max(e, std::fabs(list.front().coefficients[q] - want.coef[q]) /
                                        std::max(std::fabs(want.coef[q]), 1e-300));
                }
                worst = std::max(worst, e);
                if (!rel_close(list.front().mse, want.mse, 1e-9)) good = false;
            }
            k12 += good;
            Fit want3 = brute_force(lib, y, 3, cfg);
            bool good3 = want3.ok && !by_k[2].empty() && by_k[2].front().indices == want3.idx;
            if (!good3) why = "K=3 triple differs (library " + std::to_string(l) + ")";
            k3 += good3;
        }
    }
    Outcome o;
    o.pass = k12 == cases && k3 == cases && worst < 1e-9;
    o.detail = "K=1,2 match " + std::to_string(k12) + "/" + std::to_string(cases) + ", max rel diff " + num(worst) +
               " (< 1e-09); K=3 beam = exhaustive " + std::to_string(k3) + "/" + std::to_string(cases) +
               (why.empty() ? "" : "; " + why);
    return o;
}

// ---- 4. equation suite

Outcome feynman_suite(const std::string& path) {
    Suite suite = load_suite(path);
    bool all = true;
    std::string detail;
    for (int d : {2, 3}) {
        auto t0 = Clock::now();
        FeynmanConfig cfg;
        cfg.d_max = d;
        cfg.k_max = 4;
        BenchSummary s = run_feynman(suite, cfg);
        double secs = since(t0);
        int pass_ok = 0, pass_n = 0, close_ok = 0, close_n = 0, fail_ok = 0, fail_n = 0;
        std::string bad;
        for (const auto& e : s.outcomes) {
            if (!e.expected) continue;
            bool good = false;
            switch (*e.expected) {
                case Status::pass:
                    ++pass_n;
                    good = e.status == Status::pass && e.best_k <= 2 && e.train_mse < 1e-15 &&
                           e.verification == Verification::verified && e.identity;
                    pass_ok += good;
                    break;
                case Status::close:
                    ++close_n;
                    good = e.rel_mse < 0.01;
                    close_ok += good;
                    break;
                default:
                    ++fail_n;
                    good = e.status == Status::fail;
                    fail_ok += good;
                    break;
            }
            if (!good) bad += " " + e.name;
        }
        bool ok = pass_ok == pass_n && close_ok == close_n && fail_ok == fail_n && secs < 900.0;
        all = all && ok;
        detail += (detail.empty() ? "" : "; ") + std::string("d_max ") + std::to_string(d) + ": pass " +
                  std::to_string(pass_ok) + "/" + std::to_string(pass_n) + " at K<=2, close " +
                  std::to_string(close_ok) + "/" + std::to_string(close_n) + " relMSE<0.01, fail " +
                  std::to_string(fail_ok) + "/" + std::to_string(fail_n) + ", " + num(secs) + " s (< 900 s)" +
                  (bad.empty() ? "" : ", wrong:" + bad);
    }
    Outcome o;
    o.pass = all;
    o.detail = std::to_string(suite.equations.size()) + " equations, K<=4; " + detail;
    return o;
}

// ---- 5. gradient-mode training

Outcome gradient_mode() {
    auto t0 = Clock::now();
    Grid g = default_grid();
    auto xs = g.points();
    TrainConfig cfg;  // 16 restarts x 2000 steps, seed 0
    const Expr x = variable(0);

    auto y1 = evaluate(exp(x), g);
    TrainResult a = train(parse_template("eml(d=1)"), xs, y1, cfg);
    bool ok1 = a.ok && a.best_mse < 1e-10 &&
               canonical_string(strip_constant(a.antiderivative)) == canonical_string(exp(x));

    auto y2 = evaluate(exp(x) + x * cos(x) + sin(x), g);
    TrainResult b = train(parse_template("eml(d=1) + mult(leaf, sol(d=1))"), xs, y2, cfg);
    bool ok2 = b.ok && b.best_mse < 1e-10 &&
               canonical_string(strip_constant(b.antiderivative)) == canonical_string(exp(x) + x * sin(x));
    double secs = since(t0);

    Outcome o;
    o.pass = ok1 && ok2 && secs < 300.0;
    o.detail = "eml(d=1) on e^x: F = " + (a.ok ? to_infix(a.antiderivative) : std::string("-")) + ", mse " +
               num(a.best_mse) + (ok1 ? " ok" : " FAILED") + "; {eml, mult(leaf, sol)} on e^x + x cos x + sin x: F = " +
               (b.ok ? to_infix(b.antiderivative) : std::string("-")) + ", mse " + num(b.best_mse) +
               " (< 1e-10, want e^x + x sin x)" + (ok2 ? " ok" : " FAILED") + "; " + num(secs) + " s (< 300 s)";
    return o;
}

// ---- 6. parameter gradients against central differences

NodeSpec random_spec(SplitMix& rng, int budget) {
    int kind = static_cast<int>(rng.below(budget > 0 ? 4 : 3));
    int depth = 1 + static_cast<int>(rng.below(2));
    switch (kind) {
        case 0: return NodeSpec::leaf();
        case 1: return NodeSpec::eml(depth);
        case 2: return NodeSpec::sol(depth);
        default: return NodeSpec::mult(random_spec(rng, budget - 1), random_spec(rng, budget - 1));
    }
}

Outcome gradient_oracle() {
    SplitMix rng(99);
    Grid g = Grid::uniform(0.1, 1.5, 24);
    auto xs = g.points();
    std::vector<double> y;
    for (double t : xs) y.push_back(std::exp(t) + std::cos(t));
    int forests = 0, params = 0;
    double worst = 0.0;
    while (forests < 50) {
        std::vector<NodeSpec> specs;
        for (int k = 1 + static_cast<int>(rng.below(3)); k > 0; --k) specs.push_back(random_spec(rng, 1));
        Forest f(specs);
        std::vector<double> theta = f.parameters();
        for (double& t : theta) t = rng.uniform(-1.5, 1.5);
        f.set_parameters(theta);
        double tau = rng.uniform(0.3, 1.0);
        Loss kind = forests % 2 ? Loss::squared : Loss::log1p_squared;
        std::vector<double> grad;
        double L = f.loss_and_gradient(xs, y, tau, kind, grad);
        if (!std::isfinite(L) || L > 1e6) continue;
        ++forests;
        const double h = 1e-6;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            Forest p = f;
            auto tp = theta, tm = theta;
            tp[i] += h;
            tm[i] -= h;
            p.set_parameters(tp);
            double lp = p.loss(xs, y, tau, kind);
            p.set_parameters(tm);
            double lm = p.loss(xs, y, tau, kind);
            double fd = (lp - lm) / (2 * h);
            worst = std::max(worst, std::fabs(fd - grad[i]) / std::max({std::fabs(fd), std::fabs(grad[i]), 1e-6}));
            ++params;
        }
    }
    Outcome o;
    o.pass = worst < 1e-4;
    o.detail = "50 forests, " + std::to_string(params) + " parameters, max rel err " + num(worst) + " (< 1e-04)";
    return o;
}

// ---- 7. knowledge-base growth

Outcome kb_growth() {
    BuildConfig bc;
    bc.d_max = 1;
    AtomLibrary lib = AtomLibrary::build(default_grid(), bc);
    const Expr x = variable(0);
    Expr target = canonicalize(cos(x) + exp(x));
    auto y = evaluate(target, lib.samples());
    SearchConfig cfg;

    // Before: no single atom fits.
    GramCache before(lib, y);
    double k1_before = scan_k1(before, cfg).front().mse;

    auto by_k = search(before, cfg);
    SearchResult r = *best_result(by_k, cfg.exact_mse);
    auto [F, Fp] = reconstruct(r, lib);
    bool verified = r.mse < 1e-15 &&
                    verify(r, lib, Grid::holdout_for(*lib.grid()).samples(), target, cfg) == Verification::verified;
    Admission a = lib.fold_in(strip_constant(F));

    KbLoad back = kb_from_string(kb_to_string(lib));
    GramCache after(back.library, y);
    SearchResult hit = scan_k1(after, cfg).front();
    bool same_atom = back.library[hit.indices[0]].f == lib[a.index].f;
    Outcome o;
    o.pass = verified && a.accepted() && back.warnings.empty() && same_atom && hit.mse < 1e-15 && k1_before > 1e-6;
    o.detail = "folded " + to_infix(strip_constant(F)) + (a.accepted() ? "" : " [rejected]") + ", K=1 mse before " +
               num(k1_before) + ", after reload " + num(hit.mse) + " (< 1e-15) on atom " +
               std::to_string(hit.indices[0]) + (same_atom ? "" : " [wrong atom]");
    return o;
}

// ---- 8. determinism and dedup

Outcome determinism_dedup() {
    std::string a = kb_to_string(AtomLibrary::build(default_grid(), BuildConfig{}));
    std::string b = kb_to_string(AtomLibrary::build(default_grid(), BuildConfig{}));
    AtomLibrary lib = AtomLibrary::build(default_grid(), BuildConfig{});
    auto idx = lib.searchable_indices();
    int tried = 0, rejected = 0;
    double weakest = 1.0;
    for (std::size_t s = 0; s < idx.size(); s += 37) {
        const AtomPair& p = lib[idx[s]];
        double c = 0.5 + static_cast<double>(s % 7);
        std::size_t before = lib.size();
        Admission ad = lib.admit(canonicalize(constant(c) * p.f), 4, p.depth, Origin::discovered);
        ++tried;
        // Independent correlation of the injected values with the clashing atom.
        const auto& u = lib[ad.index].values;
        auto v = evaluate(canonicalize(constant(c) * p.f), lib.samples());
        double mu = 0, mv = 0;
        for (std::size_t i = 0; i < u.size(); ++i) mu += u[i], mv += v[i];
        mu /= static_cast<double>(u.size());
        mv /= static_cast<double>(v.size());
        double suv = 0, suu = 0, svv = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            suv += (u[i] - mu) * (v[i] - mv);
            suu += (u[i] - mu) * (u[i] - mu);
            svv += (v[i] - mv) * (v[i] - mv);
        }
        double corr = std::fabs(suv / std::sqrt(suu * svv));
        bool ok = ad.verdict == Verdict::correlated && lib.size() == before && corr > 0.999;
        rejected += ok;
        weakest = std::min(weakest, corr);
    }
    Outcome o;
    o.pass = a == b && rejected == tried;
    o.detail = std::string("KB bytes ") + (a == b ? "identical" : "DIFFER") + " (" + std::to_string(a.size()) +
               " bytes); scaled copies rejected " + std::to_string(rejected) + "/" + std::to_string(tried) +
               ", min |corr| " + num(weakest, 8) + " (> 0.999)";
    return o;
}

// ---- 9. tabular tasks

double r2(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
    double mean = 0;
    for (Eigen::Index i = 0; i < truth.size(); ++i) mean += truth(i);
    mean /= static_cast<double>(truth.size());
    double res = 0, tot = 0;
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        res += (truth(i) - pred(i)) * (truth(i) - pred(i));
        tot += (truth(i) - mean) * (truth(i) - mean);
    }
    return 1.0 - res / tot;
}

std::vector<Eigen::Index> rows_in(const std::vector<int>& fold, int f, bool inside) {
    std::vector<Eigen::Index> r;
    for (std::size_t i = 0; i < fold.size(); ++i) {
        if ((fold[i] == f) == inside) r.push_back(static_cast<Eigen::Index>(i));
    }
    return r;
}

double cv_accuracy(const TabularTask& t, const ExpandConfig& ec, std::uint64_t seed) {
    auto fold = stratified_assignment(t.y, 5, seed);
    double sum = 0;
    for (int f = 0; f < 5; ++f) {
        auto tr = rows_in(fold, f, false), te = rows_in(fold, f, true);
        FeatureExpander ex(ec);
        Eigen::MatrixXd Ftr = ex.fit_transform(t.X(tr, Eigen::all), t.names);
        LogisticModel m = fit_logistic(Ftr, t.y(tr), LogisticConfig{});
        Eigen::VectorXd p = m.probability(ex.transform(t.X(te, Eigen::all)));
        int right = 0;
        for (Eigen::Index i = 0; i < p.size(); ++i) right += (p(i) >= 0.5) == (t.y(te)(i) > 0.5);
        sum += static_cast<double>(right) / static_cast<double>(p.size());
    }
    return sum / 5.0;
}

Outcome tabular() {
    const std::uint64_t seed = 0;
    TabularTask reg = synthetic_regression(800, 0.05, seed);
    auto fold = kfold_assignment(static_cast<std::size_t>(reg.X.rows()), 5, seed);
    double lowest = 1.0;
    std::string scores;
    for (int f = 0; f < 5; ++f) {
        auto tr = rows_in(fold, f, false), te = rows_in(fold, f, true);
        FeatureExpander ex;  // depth-1 atoms
        Eigen::MatrixXd Ftr = ex.fit_transform(reg.X(tr, Eigen::all), reg.names);
        LassoConfig lc;
        lc.seed = seed;
        LassoFit fit = fit_sparse_linear(Ftr, reg.y(tr), lc);
        double s = r2(fit.predict(ex.transform(reg.X(te, Eigen::all))), reg.y(te));
        lowest = std::min(lowest, s);
        scores += (scores.empty() ? "" : " ") + num(s, 4);
    }
    TabularTask hill = hill_classification(800, seed);
    double atoms = cv_accuracy(hill, ExpandConfig{}, seed);
    double raw = cv_accuracy(hill, ExpandConfig::raw(), seed);
    Outcome o;
    o.pass = lowest >= 0.99 && atoms - raw >= 0.02;
    o.detail = "regression held-out R^2 [" + scores + "] (each >= 0.99); Hill accuracy atoms " + num(atoms, 4) +
               " vs raw " + num(raw, 4) + ", +" + num(100 * (atoms - raw), 3) + " points (>= 2)";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::vector<int> only;
    std::string suite = std::string(ATOMFOREST_SOURCE_DIR) + "/data/feynman_suite.json";
    app.add_option("--criterion,-c", only, "Run only these criteria")->check(CLI::Range(1, 9));
    app.add_option("--suite", suite, "Equation suite for criterion 4")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"atom derivatives match finite differences", atom_derivatives},
        {"simultaneous recovery", simultaneous_recovery},
        {"search matches brute-force least squares", search_oracle},
        {"equation suite", [&] { return feynman_suite(suite); }},
        {"gradient-mode training", gradient_mode},
        {"parameter gradients match finite differences", gradient_oracle},
        {"knowledge-base growth", kb_growth},
        {"determinism and dedup", determinism_dedup},
        {"tabular regression and classification", tabular},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        int n = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << n << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failed ? 1 : 0;
}
