#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "atomforest/library.hpp"
#include "atomforest/parse.hpp"

using namespace atomforest;

namespace {

const Expr x = variable(0);
Expr c(std::int64_t n, std::int64_t d = 1) { return constant(Number(Rational(n, d))); }
Expr infix(const std::string& s) { return canonicalize(parse_infix(s)); }

// Plain two-pass Pearson correlation.
double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

BuildConfig tiny() {
    BuildConfig cfg;
    cfg.p_min = cfg.p_max = 1;
    cfg.q_min = cfg.q_max = 1;
    cfg.slope_min = cfg.slope_max = 1;
    cfg.offset_min = cfg.offset_max = 0;
    cfg.quad_min = cfg.quad_max = 1;
    return cfg;
}

const AtomLibrary& depth(int d) {
    static std::vector<std::unique_ptr<AtomLibrary>> cache(4);
    if (!cache[static_cast<std::size_t>(d)]) {
        BuildConfig cfg;
        cfg.d_max = d;
        cache[static_cast<std::size_t>(d)] = std::make_unique<AtomLibrary>(AtomLibrary::build(default_grid(), cfg));
    }
    return *cache[static_cast<std::size_t>(d)];
}

std::optional<std::size_t> find(const AtomLibrary& lib, const Expr& f) { return lib.find(canonical_string(f)); }

std::vector<std::string> keys(const AtomLibrary& lib) {
    std::vector<std::string> out;
    for (const auto& a : lib.atoms()) out.push_back(a.f.key());
    return out;
}

}  // namespace

TEST_CASE("layer 0 matches an independent enumeration with greedy dedup") {
    AtomLibrary lib(default_grid());
    LayerStats st = lib.build_layer0();
    const Grid grid = default_grid();
    const auto xs = grid.points();

    // Reduced fractions p/q, q outer, p by magnitude with the positive first.
    std::vector<std::pair<int, int>> fracs;
    std::set<std::pair<int, int>> seen;
    for (int q = 1; q <= 4; ++q) {
        std::vector<int> ps;
        for (int p = -4; p <= 15; ++p) ps.push_back(p);
        std::stable_sort(ps.begin(), ps.end(), [](int a, int b) {
            return std::abs(a) != std::abs(b) ? std::abs(a) < std::abs(b) : a > b;
        });
        for (int p : ps) {
            if (p == 0) continue;
            int g = std::gcd(std::abs(p), q);
            if (seen.insert({p / g, q / g}).second) fracs.push_back({p / g, q / g});
        }
    }
    CHECK(fracs.size() <= 80);
    std::vector<std::vector<double>> kept;
    std::vector<std::pair<int, int>> kept_fracs;
    for (auto [p, q] : fracs) {
        std::vector<double> v;
        for (double t : xs) v.push_back(std::pow(t, static_cast<double>(p) / q));
        bool dup = false;
        for (const auto& k : kept) dup = dup || std::fabs(pearson(v, k)) > 0.999;
        if (!dup) {
            kept.push_back(v);
            kept_fracs.push_back({p, q});
        }
    }
    CHECK(st.candidates == fracs.size());
    REQUIRE(lib.size() == kept.size() + 1);
    for (std::size_t i = 0; i < kept_fracs.size(); ++i) {
        auto [p, q] = kept_fracs[i];
        Expr want = p == q ? x : pow(x, Rational(p, q));
        CHECK(lib[i + 1].f.key() == canonical_string(want));
    }
    auto sq = find(lib, pow(x, 2));
    REQUIRE(sq);
    CHECK(lib[*sq].fprime.key() == canonical_string(c(2) * x));
}

TEST_CASE("layer 0 drops powers that are not finite on the grid") {
    AtomLibrary lib(Grid({-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0}));
    lib.build_layer0();
    CHECK_FALSE(find(lib, pow(x, Rational(1, 2))));
    CHECK_FALSE(find(lib, pow(x, -1)));  // x = 0 is a grid point
    CHECK(find(lib, pow(x, 3)));
}

TEST_CASE("layer 1 examples") {
    const auto& lib = depth(1);
    auto e = find(lib, exp(x));
    REQUIRE(e);
    CHECK(lib[*e].fprime.key() == canonical_string(exp(x)));
    CHECK(lib[*e].origin == Origin::eml);
    auto s = find(lib, sin(x) - cos(c(1)));
    REQUIRE(s);
    CHECK(lib[*s].fprime.key() == canonical_string(cos(x)));
    CHECK(lib[*s].origin == Origin::sol);
    // ln(-x) is never finite on (0.1, 3].
    AtomLibrary fresh(default_grid());
    CHECK(fresh.admit(eml(x, -x), 1, 1, Origin::eml).verdict == Verdict::non_finite);
    CHECK(lib.size() > 100);
    CHECK(lib.size() < 1000);
}

TEST_CASE("layer 2 examples") {
    const auto& lib = depth(2);
    auto a = find(lib, exp(x * x));
    REQUIRE(a);
    CHECK(lib[*a].layer == 2);
    CHECK(lib[*a].fprime.key() == canonical_string(c(2) * x * exp(x * x)));
    Expr g = c(2) * x * x + x + c(1);
    auto b = find(lib, sin(g));
    REQUIRE(b);
    CHECK(lib[*b].fprime.key() == canonical_string((c(4) * x + c(1)) * cos(g)));
    AtomLibrary around_zero(Grid({-1.0, -0.5, 0.0, 0.5, 1.0}));
    CHECK(around_zero.admit(recip(x * x), 2, 1, Origin::seed).verdict == Verdict::non_finite);
}

TEST_CASE("layer 3 examples") {
    const auto& lib = depth(2);
    auto a = find(lib, exp(x) * sin(x));
    REQUIRE(a);
    CHECK(lib[*a].origin == Origin::product);
    CHECK(lib[*a].fprime.key() == canonical_string(exp(x) * sin(x) + exp(x) * cos(x)));
    // With the default ranges x*e^x is too close to x^(7/2); the minimal
    // ranges keep it.
    AtomLibrary small = AtomLibrary::build(default_grid(), tiny());
    auto b = find(small, x * exp(x));
    REQUIRE(b);
    CHECK(small[*b].fprime.key() == canonical_string(x * exp(x) + exp(x)));
    // x * x is already the layer 0 atom x^2.
    CHECK_FALSE(depth(2).atoms().empty());
    AtomLibrary with_sq(default_grid());
    with_sq.build_layer0();
    CHECK_FALSE(with_sq.admit(x * x, 3, 0, Origin::product).accepted());
}

TEST_CASE("layer 4 examples") {
    const auto& lib = depth(2);
    auto a = find(lib, sin(x * x));
    REQUIRE(a);
    CHECK(lib[*a].fprime.key() == canonical_string(c(2) * x * cos(x * x)));
    AtomLibrary small = AtomLibrary::build(default_grid(), tiny());
    auto b = find(small, exp(sin(x)));
    REQUIRE(b);
    CHECK(small[*b].layer == 4);
    CHECK(small[*b].fprime.key() == canonical_string(cos(x) * exp(sin(x))));
    // cos x < 0 past pi/2.
    AtomLibrary fresh(default_grid());
    CHECK(fresh.admit(-ln(cos(x)), 4, 2, Origin::nesting).verdict == Verdict::non_finite);
}

TEST_CASE("admission rules") {
    AtomLibrary lib(default_grid());
    REQUIRE(lib.admit(pow(x, 2), 0, 0, Origin::seed).accepted());
    Admission twice = lib.admit(c(2) * pow(x, 2), 0, 0, Origin::seed);
    CHECK(twice.verdict == Verdict::correlated);
    CHECK(twice.correlation == doctest::Approx(1.0));
    CHECK(lib.admit(pow(x, 2), 0, 0, Origin::seed).verdict == Verdict::duplicate_key);

    REQUIRE(lib.admit(cos(x), 1, 1, Origin::sol).accepted());
    const Grid grid = default_grid();
    auto xs = grid.points();
    std::vector<double> s, co;
    for (double t : xs) {
        s.push_back(std::sin(t));
        co.push_back(std::cos(t));
    }
    CHECK(std::fabs(pearson(s, co)) < 0.999);
    CHECK(lib.admit(sin(x), 1, 1, Origin::sol).accepted());

    // Non-finite at exactly one grid point.
    AtomLibrary one(Grid({0.5, 1.0, 2.0, 3.0}));
    CHECK(one.admit(recip(x - c(1)), 2, 1, Origin::seed).verdict == Verdict::non_finite);
    CHECK(one.admit(c(3), 0, 0, Origin::seed).verdict == Verdict::constant);
}

TEST_CASE("atoms the grid cannot resolve are rejected") {
    const Grid grid = default_grid();
    auto xs = grid.points();
    // Largest trapezoid mismatch between neighbours, relative to dx * max|f'|.
    auto gap = [&](const Expr& f) {
        auto v = evaluate(f, grid);
        auto d = evaluate(differentiate(f), grid);
        double scale = 0.0, worst = 0.0;
        for (double t : d) scale = std::max(scale, std::fabs(t));
        for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
            double dx = xs[i + 1] - xs[i];
            worst = std::max(worst, std::fabs(v[i + 1] - v[i] - dx * (d[i] + d[i + 1]) / 2) / (dx * scale));
        }
        return worst;
    };
    AtomLibrary lib(grid);
    // Hundreds of thousands of periods between grid points.
    Expr fast = cos(pow(x, 13));
    CHECK(gap(fast) > 0.1);
    CHECK(lib.admit(fast, 2, 1, Origin::seed).verdict == Verdict::unresolved);
    // Pole at pi/2, stepped over by the grid.
    Expr pole = recip(cos(x));
    CHECK(gap(pole) > 0.1);
    CHECK(lib.admit(pole, 2, 1, Origin::seed).verdict == Verdict::unresolved);
    // Smooth atoms are far inside the bound.
    for (const Expr& f : {sin(x), exp(x), pow(x, 15), ln(x), sin(c(3) * x)}) {
        CHECK(gap(f) < 0.01);
        CHECK(lib.admit(f, 1, 1, Origin::seed).accepted());
    }
    // Off for sample sets without a grid.
    AtomLibrary rows(Samples::single({0.5, 1.0, 2.0, 3.0}), BuildConfig{});
    CHECK(rows.admit(fast, 2, 1, Origin::seed).accepted());
}

TEST_CASE("fold_in") {
    AtomLibrary lib = depth(1);
    Expr erf_like = infix("1 - (1 + 0.278393*x + 0.230389*x^2 + 0.000972*x^3 + 0.078108*x^4)^(-4)");
    std::size_t before = lib.size();
    Admission a = lib.fold_in(erf_like);
    REQUIRE(a.accepted());
    CHECK(lib.size() == before + 1);
    CHECK(lib[a.index].origin == Origin::discovered);
    CHECK(lib[a.index].fprime.key() == canonical_string(differentiate(erf_like)));

    AtomLibrary two = depth(2);
    CHECK_FALSE(two.fold_in(pow(x, 2)).accepted());

    AtomLibrary zero(Grid::closed(0.0, 1.0, 11));
    Admission z = zero.fold_in(ln(x));
    CHECK(z.verdict == Verdict::non_finite);
    CHECK_FALSE(z.reason.empty());
}

TEST_CASE("library invariants at depth 2") {
    const auto& lib = depth(2);
    CHECK(lib[0].f.key() == "c:1");
    CHECK_FALSE(lib[0].searchable);
    std::size_t n = lib.samples().rows();
    for (const auto& a : lib.atoms()) {
        CHECK_MESSAGE(a.fprime.key() == canonical_string(differentiate(a.f)), a.f.key());
        bool finite = std::all_of(a.values.begin(), a.values.end(), [](double v) { return std::isfinite(v); }) &&
                      std::all_of(a.dvalues.begin(), a.dvalues.end(), [](double v) { return std::isfinite(v); });
        CHECK_MESSAGE(finite, a.f.key());
        REQUIRE(a.values.size() == n);
    }
    // Stored samples agree with evaluating the stored expressions.
    for (std::size_t i = 1; i < lib.size(); i += 7) {
        auto v = evaluate(lib[i].f, lib.samples());
        for (std::size_t k = 0; k < n; k += 17) {
            CHECK(v[k] == doctest::Approx(lib[i].values[k]).epsilon(1e-9));
        }
    }

    // Brute-force pairwise correlation over centred unit columns.
    const auto m = static_cast<Eigen::Index>(lib.size() - 1);
    Eigen::MatrixXd U(static_cast<Eigen::Index>(n), m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& v = lib[static_cast<std::size_t>(j) + 1].values;
        Eigen::VectorXd col = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(n));
        col.array() -= col.mean();
        U.col(j) = col / col.norm();
    }
    double worst = 0.0;
    const Eigen::Index block = 512;
    for (Eigen::Index b = 0; b < m; b += block) {
        Eigen::Index len = std::min(block, m - b);
        Eigen::MatrixXd C = U.middleCols(b, len).transpose() * U;
        for (Eigen::Index r = 0; r < len; ++r) {
            C(r, b + r) = 0.0;
            worst = std::max(worst, C.row(r).cwiseAbs().maxCoeff());
        }
    }
    CHECK(worst <= lib.config().rho + 1e-9);
}

TEST_CASE("builds are deterministic and nested across depths") {
    BuildConfig cfg;
    cfg.d_max = 2;
    auto again = AtomLibrary::build(default_grid(), cfg);
    CHECK(keys(again) == keys(depth(2)));
    auto k1 = keys(depth(1)), k2 = keys(depth(2)), k3 = keys(depth(3));
    REQUIRE(k1.size() < k2.size());
    REQUIRE(k2.size() < k3.size());
    CHECK(std::equal(k1.begin(), k1.end(), k2.begin()));
    CHECK(std::equal(k2.begin(), k2.end(), k3.begin()));
}

TEST_CASE("correlation index agrees with brute force") {
    Samples s = default_grid().samples();
    CorrelationIndex index(s, 0.999);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::vector<double>> stored;
    const std::size_t n = s.rows();
    auto random_vec = [&] {
        std::vector<double> v(n);
        // Smooth random curves: a few random sinusoids.
        double a = noise(rng), b = noise(rng), f1 = 1 + std::fabs(noise(rng)), f2 = 3 * std::fabs(noise(rng));
        for (std::size_t i = 0; i < n; ++i) {
            double t = s.column(0)[i];
            v[i] = a * std::sin(f1 * t) + b * std::cos(f2 * t) + 0.1 * t;
        }
        return v;
    };
    for (int trial = 0; trial < 400; ++trial) {
        std::vector<double> v = random_vec();
        if (trial % 3 == 0 && !stored.empty()) {
            // Near copy of an earlier vector.
            const auto& base = stored[static_cast<std::size_t>(trial) % stored.size()];
            double scale = noise(rng);
            double jitter = std::fabs(noise(rng)) * 0.05;
            for (std::size_t i = 0; i < n; ++i) v[i] = scale * base[i] + jitter * noise(rng);
        }
        auto u = index.unit(v);
        if (!u) continue;
        std::optional<std::size_t> want;
        for (std::size_t j = 0; j < stored.size() && !want; ++j) {
            if (std::fabs(pearson(v, stored[j])) > 0.999) want = j;
        }
        auto got = index.find(*u);
        REQUIRE(got.has_value() == want.has_value());
        if (got) {
            CHECK(got->id == *want);
        } else {
            index.insert(stored.size(), *u);
            stored.push_back(v);
        }
    }
    CHECK(index.size() == stored.size());
}

TEST_CASE("build config validation") {
    BuildConfig cfg;
    cfg.d_max = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.p_min = 3;
    cfg.p_max = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.rho = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
