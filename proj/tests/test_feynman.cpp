#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "atomforest/feynman.hpp"
#include "atomforest/parse.hpp"

using namespace atomforest;

namespace {

EquationSpec equation(std::string name, const std::string& formula, std::vector<VariableRange> vars,
                      std::optional<Status> expected = std::nullopt) {
    EquationSpec eq;
    eq.name = std::move(name);
    eq.variables = std::move(vars);
    eq.expr = canonicalize(parse_infix(formula, eq.names()));
    eq.expected = expected;
    return eq;
}

FeynmanConfig quick(int k_max) {
    FeynmanConfig cfg;
    cfg.d_max = 1;
    cfg.k_max = k_max;
    return cfg;
}

int rank(Status s) {
    switch (s) {
        case Status::pass: return 2;
        case Status::close: return 1;
        default: return 0;
    }
}

std::filesystem::path shipped_suite() {
    return std::filesystem::path(ATOMFOREST_SOURCE_DIR) / "data" / "feynman_suite.json";
}

}  // namespace

TEST_CASE("relmse") {
    std::vector<double> t{1.0, -2.0, 3.0, 0.5};
    std::vector<double> scaled, zero(t.size(), 0.0);
    for (double v : t) scaled.push_back(1.1 * v);
    CHECK(relmse(t, t) == 0.0);
    CHECK(relmse(scaled, t) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(relmse(zero, t) == 1.0);
    CHECK_THROWS_AS(relmse(t, zero), std::invalid_argument);
    CHECK_THROWS_AS(relmse(std::vector<double>{1.0}, t), std::invalid_argument);
}

TEST_CASE("row samples are seeded and stay inside their ranges") {
    std::vector<VariableRange> v{{"a", 1.0, 5.0}, {"b", -2.0, -1.0}};
    Samples s = sample_rows(v, 500, 11);
    REQUIRE(s.rows() == 500);
    REQUIRE(s.variables() == 2);
    for (std::size_t j = 0; j < 2; ++j) {
        for (double x : s.column(j)) {
            CHECK(x >= v[j].lo);
            CHECK(x < v[j].hi);
        }
    }
    Samples again = sample_rows(v, 500, 11);
    CHECK(again.columns() == s.columns());
    CHECK(sample_rows(v, 500, 12).columns() != s.columns());
}

TEST_CASE("suite text round trip") {
    Suite s;
    s.equations.push_back(equation("coulomb", "q1*q2/(4*pi*r^2)", {{"q1", 1, 5}, {"q2", 1, 5}, {"r", 1, 5}}, Status::pass));
    s.equations.push_back(equation("wave", "cos(k*x)", {{"k", 1, 5}, {"x", 1, 5}}, Status::fail));
    s.equations[0].category = "product";
    std::string text = suite_to_string(s);
    Suite back = suite_from_string(text);
    REQUIRE(back.equations.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.equations[i].name == s.equations[i].name);
        CHECK(back.equations[i].expr.key() == s.equations[i].expr.key());
        CHECK(back.equations[i].expected == s.equations[i].expected);
        CHECK(back.equations[i].names() == s.equations[i].names());
    }
    CHECK(back.equations[0].category == "product");
    CHECK(suite_to_string(back) == text);

    // An infix "formula" is accepted when there is no prefix "expr".
    nlohmann::json j = nlohmann::json::parse(text);
    j["equations"][1].erase("expr");
    Suite infix = suite_from_string(j.dump());
    CHECK(infix.equations[1].expr.key() == s.equations[1].expr.key());
}

TEST_CASE("suite errors") {
    CHECK_THROWS_AS(suite_from_string("{"), SuiteError);
    CHECK_THROWS_AS(suite_from_string(R"j({"version": 2, "equations": []})j"), SuiteError);
    CHECK_THROWS_AS(suite_from_string(R"j({"version": 1, "equations": []})j"), SuiteError);
    auto one = [](const std::string& body) { return R"j({"version": 1, "equations": [)j" + body + "]}"; };
    const std::string vars = R"j("variables": [{"name": "x", "lo": 1, "hi": 2}])j";
    CHECK_NOTHROW(suite_from_string(one(R"j({"name": "ok", "formula": "x^2", )j" + vars + "}")));
    CHECK_THROWS_AS(suite_from_string(one(R"j({"name": "bad", "formula": "x^2", "expected": "maybe", )j" + vars + "}")),
                    SuiteError);
    CHECK_THROWS_AS(suite_from_string(one(R"j({"name": "bad", "expr": "v:1", )j" + vars + "}")), SuiteError);
    CHECK_THROWS_AS(suite_from_string(one(R"j({"name": "bad", "formula": "x^2", "variables": [{"name": "x", "lo": 2, "hi": 1}]})j")),
                    SuiteError);
    // ln of negative values is not finite over the declared range.
    try {
        suite_from_string(one(R"j({"name": "neg", "formula": "ln(x)", "variables": [{"name": "x", "lo": -2, "hi": -1}]})j"));
        FAIL("expected a finiteness error");
    } catch (const SuiteError& e) {
        CHECK(std::string(e.what()).find("neg") != std::string::npos);
    }
}

TEST_CASE("shipped suite") {
    Suite s = load_suite(shipped_suite());
    CHECK(s.equations.size() == 20);
    std::size_t pass = 0, close = 0, fail = 0;
    for (const auto& eq : s.equations) {
        REQUIRE(eq.expected);
        CHECK_FALSE(eq.category.empty());
        pass += *eq.expected == Status::pass;
        close += *eq.expected == Status::close;
        fail += *eq.expected == Status::fail;
    }
    CHECK(pass + close + fail == 20);
    CHECK(pass > 0);
    CHECK(fail > 0);
    CHECK_THROWS_AS(load_suite("/nonexistent/suite.json"), SuiteError);
}

TEST_CASE("multi-variable library") {
    std::vector<VariableRange> v{{"a", 1, 3}, {"b", 1, 3}, {"c", 1, 3}};
    Samples rows = sample_rows(v, 128, 3);
    MultiLibraryConfig cfg;
    cfg.build.d_max = 1;
    AtomLibrary lib = build_multivariate_library(v, rows, cfg);
    CHECK(lib.samples().rows() == 128);
    CHECK(lib.find(canonicalize(parse_infix("a*b/c^2", {"a", "b", "c"})).key()));
    CHECK(lib.find(canonicalize(parse_infix("a^(1/2)*c^3", {"a", "b", "c"})).key()));
    // Single-variable atoms carry no additive constant here.
    CHECK(lib.find(canonicalize(parse_infix("sin(b)", {"a", "b", "c"})).key()));
    // Dedup still holds on the sample rows.
    const auto& atoms = lib.atoms();
    auto idx = lib.searchable_indices();
    auto pearson = [](const std::vector<double>& u, const std::vector<double>& w) {
        double mu = 0, mw = 0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            mu += u[k];
            mw += w[k];
        }
        mu /= u.size();
        mw /= w.size();
        double suw = 0, suu = 0, sww = 0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            suw += (u[k] - mu) * (w[k] - mw);
            suu += (u[k] - mu) * (u[k] - mu);
            sww += (w[k] - mw) * (w[k] - mw);
        }
        return std::fabs(suw / std::sqrt(suu * sww));
    };
    auto corr = [&](std::size_t i, std::size_t j) { return pearson(atoms[i].values, atoms[j].values); };
    // exp(c) is either kept or covered by a kept atom above the threshold.
    std::vector<double> ec(rows.rows());
    for (std::size_t k = 0; k < ec.size(); ++k) ec[k] = std::exp(rows.column(2)[k]);
    double cover = 0.0;
    for (std::size_t i : idx) cover = std::max(cover, pearson(ec, atoms[i].values));
    CHECK(cover > 0.999);
    double worst = 0.0;
    for (std::size_t a = 0; a < idx.size(); a += 7) {
        for (std::size_t b = a + 1; b < idx.size(); b += 5) worst = std::max(worst, corr(idx[a], idx[b]));
    }
    CHECK(worst <= 0.999 + 1e-12);
}

TEST_CASE("K=1 product law passes") {
    auto eq = equation("coulomb", "q1*q2/(4*pi*r^2)", {{"q1", 1, 5}, {"q2", 1, 5}, {"r", 1, 5}});
    BenchOutcome o = run_equation(eq, quick(2));
    CHECK(o.status == Status::pass);
    CHECK(o.best_k == 1);
    CHECK(o.train_mse < 1e-15);
    CHECK(o.verification == Verification::verified);
    CHECK(o.identity);
    // The printed formula, read back, reproduces the law on fresh rows.
    Samples fresh = sample_rows(eq.variables, 200, 99);
    auto got = evaluate(canonicalize(parse_infix(o.formula, eq.names())), fresh);
    auto want = evaluate(eq.expr, fresh);
    CHECK(relmse(got, want) < 1e-20);
}

TEST_CASE("K=2 sum passes") {
    auto eq = equation("sum", "x0^2 + sin(x1)", {{"x0", 1, 3}, {"x1", 1, 3}});
    BenchOutcome o = run_equation(eq, quick(2));
    CHECK(o.status == Status::pass);
    CHECK(o.best_k == 2);
    Samples fresh = sample_rows(eq.variables, 200, 5);
    auto got = evaluate(canonicalize(parse_infix(o.formula, eq.names())), fresh);
    CHECK(relmse(got, evaluate(eq.expr, fresh)) < 1e-20);
}

TEST_CASE("composed argument fails") {
    auto eq = equation("wave", "cos(k*x)", {{"k", 1, 5}, {"x", 1, 5}});
    BenchOutcome o = run_equation(eq, quick(2));
    CHECK(o.status == Status::fail);
    CHECK(o.rel_mse >= 0.01);
    CHECK(o.verification == Verification::unverified);
}

TEST_CASE("status never degrades as K_max grows") {
    std::vector<EquationSpec> eqs{
        equation("sum", "x0^2 + sin(x1)", {{"x0", 1, 3}, {"x1", 1, 3}}),
        equation("lens", "u*v/(u+v)", {{"u", 1, 5}, {"v", 1, 5}}),
        equation("mech", "m*v^2/2 + 9.81*m*h", {{"m", 1, 5}, {"v", 1, 5}, {"h", 1, 5}}),
    };
    for (const auto& eq : eqs) {
        int prev = -1;
        double prev_rel = 2.0;
        for (int k = 1; k <= 3; ++k) {
            BenchOutcome o = run_equation(eq, quick(k));
            CHECK_MESSAGE(rank(o.status) >= prev, eq.name, " K=", k);
            if (o.status != Status::pass) CHECK(o.rel_mse <= prev_rel * (1 + 1e-9));
            prev = rank(o.status);
            prev_rel = o.rel_mse;
        }
    }
}

TEST_CASE("pass status implies the search contract") {
    Suite s = load_suite(shipped_suite());
    for (const auto& eq : s.equations) {
        if (eq.expected != Status::pass || eq.variable_count() > 2) continue;
        BenchOutcome o = run_equation(eq, quick(2));
        CHECK_MESSAGE(o.status == Status::pass, eq.name);
        CHECK(o.train_mse < 1e-15);
        CHECK(o.verification == Verification::verified);
        CHECK(o.identity);
        CHECK(o.best_k <= 2);
    }
}

TEST_CASE("suite run: sorting, mismatches and errors") {
    Suite s;
    s.equations.push_back(equation("zz_sum", "x0^2 + sin(x1)", {{"x0", 1, 3}, {"x1", 1, 3}}, Status::pass));
    s.equations.push_back(equation("aa_power", "m*v^2/2", {{"m", 1, 5}, {"v", 1, 5}}, Status::pass));
    // Valid text but not finite on the rows: the equation errors, the suite goes on.
    EquationSpec broken = equation("mm_broken", "ln(x)", {{"x", -2, -1}}, Status::fail);
    s.equations.push_back(broken);

    BenchSummary k1 = run_feynman(s, quick(1));
    REQUIRE(k1.outcomes.size() == 3);
    CHECK(k1.outcomes[0].name == "aa_power");
    CHECK(k1.outcomes[1].name == "mm_broken");
    CHECK(k1.outcomes[2].name == "zz_sum");
    CHECK(k1.outcomes[0].status == Status::pass);
    CHECK(k1.outcomes[1].status == Status::error);
    CHECK_FALSE(k1.outcomes[1].error.empty());
    CHECK(k1.outcomes[2].status != Status::pass);  // needs two atoms
    CHECK(k1.errored == 1);
    CHECK(k1.mismatches == 2);
    CHECK(k1.pass + k1.close + k1.fail + k1.errored == 3);

    BenchSummary k2 = run_feynman(s, quick(2));
    CHECK(k2.outcomes[2].status == Status::pass);
    CHECK(k2.mismatches == 1);

    auto j = nlohmann::json::parse(bench_json(k2));
    CHECK(j["summary"]["pass"] == 2);
    CHECK(j["summary"]["error"] == 1);
    CHECK(j["equations"].size() == 3);
    CHECK(bench_report(k2).find("mm_broken") != std::string::npos);
}

TEST_CASE("runs are deterministic") {
    auto eq = equation("lens", "u*v/(u+v)", {{"u", 1, 5}, {"v", 1, 5}});
    BenchOutcome a = run_equation(eq, quick(2));
    BenchOutcome b = run_equation(eq, quick(2));
    CHECK(a.formula == b.formula);
    CHECK(a.rel_mse == b.rel_mse);
}
