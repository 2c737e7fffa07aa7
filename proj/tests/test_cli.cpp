#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "atomforest/cli.hpp"
#include "atomforest/kb.hpp"
#include "atomforest/parse.hpp"

using namespace atomforest;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run cli_run(const std::vector<std::string>& args) {
    std::ostringstream o, e;
    Run r;
    r.code = cli::run(args, o, e);
    r.out = o.str();
    r.err = e.str();
    return r;
}

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "atomforest_cli_test";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_csv(const fs::path& p, const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
    std::ofstream f(p);
    for (std::size_t j = 0; j < names.size(); ++j) f << (j ? "," : "") << names[j];
    f << "\n";
    char buf[64];
    for (std::size_t i = 0; i < cols[0].size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", cols[j][i]);
            f << (j ? "," : "") << buf;
        }
        f << "\n";
    }
}

// Total atom count from the build summary line.
std::size_t total_atoms(const std::string& report) {
    auto at = report.find("total ");
    REQUIRE(at != std::string::npos);
    return std::stoul(report.substr(at + 6));
}

}  // namespace

TEST_CASE("usage errors and help") {
    CHECK(cli_run({}).code == cli::exit_usage);
    CHECK(cli_run({"frobnicate"}).code == cli::exit_usage);
    CHECK(cli_run({"solve", "--bogus"}).code == cli::exit_usage);
    CHECK(cli_run({"solve", "--target-expr", "cos(x)", "--kmax", "0"}).code == cli::exit_usage);
    CHECK(cli_run({"build", "--corr", "0"}).code == cli::exit_usage);
    CHECK(cli_run({"build", "--lo", "3", "--hi", "1"}).code == cli::exit_usage);
    // Neither or both targets.
    CHECK(cli_run({"solve"}).code == cli::exit_usage);
    CHECK(cli_run({"solve", "--grow-kb", "--target-expr", "cos(x)"}).code == cli::exit_usage);
    Run help = cli_run({"--help"});
    CHECK(help.code == cli::exit_ok);
    CHECK(help.out.find("expand-fit") != std::string::npos);
}

TEST_CASE("build reports layers, writes a deterministic KB and honours the cap") {
    fs::path a = scratch("build_a.json"), b = scratch("build_b.json");
    Run r1 = cli_run({"build", "--depth", "1", "-o", a.string()});
    REQUIRE(r1.code == cli::exit_ok);
    CHECK(r1.out.find("layer 0:") != std::string::npos);
    CHECK(r1.out.find("layer 1:") != std::string::npos);
    std::size_t n = total_atoms(r1.out);
    CHECK(n >= 100);
    CHECK(n < 1000);
    // The file holds what the report says.
    CHECK(load_kb(a).library.size() == n);

    Run r2 = cli_run({"build", "--depth", "1", "-o", b.string(), "--seed", "5", "--workers", "3"});
    CHECK(r2.code == cli::exit_ok);
    CHECK(r1.out.substr(0, r1.out.find("wrote")) == r2.out.substr(0, r2.out.find("wrote")));
    CHECK(slurp(a) == slurp(b));

    // Sum of admitted over layers equals the total.
    fs::path js = scratch("build.json.report");
    Run r3 = cli_run({"build", "--depth", "3", "--max-atoms", "3000", "-o", a.string(), "--json", js.string()});
    REQUIRE(r3.code == cli::exit_ok);
    json j = read_json(js);
    std::size_t admitted = 0;
    for (const auto& l : j["layers"]) {
        admitted += l["admitted"].get<std::size_t>();
        CHECK(l["candidates"].get<std::size_t>() == l["admitted"].get<std::size_t>() + l["rejected"].get<std::size_t>());
    }
    CHECK(j["atoms"].get<std::size_t>() <= 3000);
    CHECK(j["atoms"].get<std::size_t>() == admitted + 1);  // plus the constant atom

    CHECK(cli_run({"build", "-o", (scratch("no_such_dir") / "x" / "kb.json").string()}).code == cli::exit_data);
}

TEST_CASE("solve recovers sin from cos and verifies it") {
    fs::path js = scratch("solve.json");
    Run r = cli_run({"solve", "--target-expr", "cos(x)", "--depth", "1", "--json", js.string()});
    REQUIRE(r.code == cli::exit_ok);
    CHECK(r.out.find("verification verified") != std::string::npos);
    json j = read_json(js);
    CHECK(j["best"]["k"] == 1);
    CHECK(j["best"]["verification"] == "verified");
    CHECK(j["best"]["identity"] == true);
    // Oracle: central differences of the reported F against cos at off-grid points.
    Expr F = parse_prefix(j["best"]["F_prefix"].get<std::string>());
    double worst = 0.0;
    for (double x : {0.37, 1.111, 2.5, 2.93}) {
        double h = 1e-5;
        auto at = [&](double t) { return evaluate(F, std::vector<double>{t})[0]; };
        worst = std::max(worst, std::fabs((at(x + h) - at(x - h)) / (2 * h) - std::cos(x)));
    }
    CHECK(worst < 1e-8);
    // The rank-1 line names sin(x).
    auto k1 = r.out.find("K=1");
    CHECK(r.out.find("sin(x)", k1) != std::string::npos);

    CHECK(cli_run({"solve", "--target-expr", "ln(x - 5)", "--depth", "1"}).code == cli::exit_data);
    CHECK(cli_run({"solve", "--target-expr", "cos(", "--depth", "1"}).code == cli::exit_data);
}

TEST_CASE("solve on CSV data reports every K up to kmax") {
    std::vector<double> xs, ys;
    for (int i = 0; i < 200; ++i) {
        double x = 0.2 + 2.7 * i / 199.0;
        xs.push_back(x);
        ys.push_back(std::exp(x) + 1.0 / x + 0.3 * std::sin(3.0 * x));
    }
    fs::path csv = scratch("target.csv");
    write_csv(csv, {"x", "y"}, {xs, ys});
    fs::path js = scratch("solve_csv.json");
    Run r = cli_run({"solve", "--target", csv.string(), "--kmax", "3", "--depth", "1", "--json", js.string()});
    REQUIRE(r.code == cli::exit_ok);
    for (const char* k : {"K=1", "K=2", "K=3"}) CHECK(r.out.find(k) != std::string::npos);
    json j = read_json(js);
    REQUIRE(j["by_k"].size() == 3);
    double prev = INFINITY;
    for (const auto& jk : j["by_k"]) {
        double m = jk["best_mse"].get<double>();
        CHECK(m <= prev * (1 + 1e-12));
        prev = m;
    }
    // No holdout file, so nothing can be verified.
    CHECK(r.out.find("no holdout data") != std::string::npos);

    std::ofstream(scratch("bad.csv")) << "x,y\n1,2\n1,3\n";
    CHECK(cli_run({"solve", "--target", scratch("bad.csv").string(), "--depth", "1"}).code == cli::exit_data);
}

TEST_CASE("solve --grow-kb adds a verified novel atom") {
    fs::path kb = scratch("grow.json");
    REQUIRE(cli_run({"build", "--depth", "1", "-o", kb.string()}).code == cli::exit_ok);
    std::size_t before = load_kb(kb).library.size();
    Run r = cli_run({"solve", "--target-expr", "cos(x) + exp(x)", "--kb", kb.string(), "--grow-kb"});
    REQUIRE(r.code == cli::exit_ok);
    CHECK(r.out.find("kb added") != std::string::npos);
    KbLoad after = load_kb(kb);
    CHECK(after.library.size() == before + 1);
    CHECK(after.warnings.empty());
    const AtomPair& last = after.library[after.library.size() - 1];
    CHECK(last.origin == Origin::discovered);
    // Its derivative is the target.
    auto d = evaluate(last.fprime, std::vector<double>{0.5, 1.5});
    CHECK(d[0] == doctest::Approx(std::cos(0.5) + std::exp(0.5)).epsilon(1e-12));
    CHECK(d[1] == doctest::Approx(std::cos(1.5) + std::exp(1.5)).epsilon(1e-12));

    // Same target again: the atom is already there.
    Run again = cli_run({"solve", "--target-expr", "cos(x) + exp(x)", "--kb", kb.string(), "--grow-kb"});
    CHECK(again.code == cli::exit_ok);
    CHECK(load_kb(kb).library.size() == before + 1);
}

TEST_CASE("train snaps eml to exp and reports parse errors") {
    fs::path js = scratch("train.json");
    Run r = cli_run({"train", "--template", "eml(d=1)", "--target-expr", "exp(x)", "--restarts", "4", "--json",
                     js.string()});
    REQUIRE(r.code == cli::exit_ok);
    json j = read_json(js);
    CHECK(j["converged"] == true);
    CHECK(j["snapped_mse"].get<double>() < 1e-10);
    Expr F = canonicalize(parse_infix(j["F"].get<std::string>()));
    // Up to an additive constant.
    CHECK(canonical_string(strip_constant(F)) == canonical_string(canonicalize(parse_infix("exp(x)"))));

    Run bad = cli_run({"train", "--template", "emll(d=1)", "--target-expr", "exp(x)"});
    CHECK(bad.code == cli::exit_data);
    CHECK(bad.err.find("emll") != std::string::npos);
    CHECK(cli_run({"train", "--target-expr", "exp(x)"}).code == cli::exit_usage);
}

TEST_CASE("train is byte-identical for a fixed seed") {
    std::vector<std::string> args{"train", "--template", "eml(d=1) + sol(d=1)", "--target-expr", "exp(x) + cos(x)",
                                  "--restarts", "1", "--steps", "300", "--seed", "7"};
    Run a = cli_run(args);
    auto w = args;
    w.insert(w.end(), {"--workers", "2"});
    Run b = cli_run(w);
    CHECK(a.code == b.code);
    CHECK(a.out == b.out);
    CHECK(!a.out.empty());
}

TEST_CASE("bench exit codes follow the expected statuses") {
    fs::path suite = scratch("suite.json");
    std::ofstream(suite) << R"j({"version": 1, "equations": [
  {"name": "kinetic", "category": "product", "formula": "m*v^2/2", "expected": "pass",
   "variables": [{"name": "m", "lo": 1, "hi": 5}, {"name": "v", "lo": 1, "hi": 5}]},
  {"name": "sum", "category": "sum", "formula": "x^2 + sin(y)", "expected": "pass",
   "variables": [{"name": "x", "lo": 1, "hi": 3}, {"name": "y", "lo": 1, "hi": 3}]},
  {"name": "wave", "category": "composed_argument", "formula": "cos(k*x)", "expected": "fail",
   "variables": [{"name": "k", "lo": 1, "hi": 5}, {"name": "x", "lo": 1, "hi": 5}]}
]})j";
    Run ok = cli_run({"bench", suite.string(), "--depth", "1", "--kmax", "2"});
    CHECK(ok.code == cli::exit_ok);
    CHECK(ok.out.find("wave  fail (expected fail)") != std::string::npos);
    CHECK(ok.out.find("mismatches 0") != std::string::npos);

    // The sum needs two atoms.
    fs::path js = scratch("bench.json");
    Run down = cli_run({"bench", suite.string(), "--depth", "1", "--kmax", "1", "--json", js.string()});
    CHECK(down.code == cli::exit_mismatch);
    json j = read_json(js);
    CHECK(j["summary"]["mismatches"] == 1);
    for (const auto& e : j["equations"]) {
        if (e["name"] == "sum") CHECK(e["status"] != "pass");
    }

    // Deterministic without timing.
    Run again = cli_run({"bench", suite.string(), "--depth", "1", "--kmax", "2", "--workers", "2"});
    CHECK(again.out == ok.out);

    std::ofstream(scratch("broken.json")) << "{\"version\": 1, \"equations\": [{\"name\": 3}]}";
    CHECK(cli_run({"bench", scratch("broken.json").string()}).code == cli::exit_data);
    CHECK(cli_run({"bench", scratch("absent.json").string()}).code == cli::exit_data);
}

TEST_CASE("expand-fit cross-validates a CSV") {
    TabularTask t = synthetic_regression(300, 0.05, 11);
    std::vector<std::vector<double>> cols;
    for (Eigen::Index j = 0; j < t.X.cols(); ++j) cols.emplace_back(t.X.col(j).data(), t.X.col(j).data() + t.X.rows());
    cols.emplace_back(t.y.data(), t.y.data() + t.y.size());
    fs::path csv = scratch("reg.csv");
    write_csv(csv, {"x0", "x1", "x2", "y"}, cols);

    fs::path js = scratch("fit.json");
    Run r = cli_run({"expand-fit", csv.string(), "--target", "y", "--seed", "3", "--json", js.string()});
    REQUIRE(r.code == cli::exit_ok);
    json j = read_json(js);
    auto scores = j["fold_scores"].get<std::vector<double>>();
    REQUIRE(scores.size() == 5);
    double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / 5.0;
    CHECK(j["mean_score"].get<double>() == doctest::Approx(mean).epsilon(1e-12));
    for (double s : scores) CHECK(s > 0.98);

    Run again = cli_run({"expand-fit", csv.string(), "--target", "y", "--seed", "3"});
    CHECK(again.out == r.out);

    CHECK(cli_run({"expand-fit", csv.string(), "--target", "nope"}).code == cli::exit_data);
    CHECK(cli_run({"expand-fit", csv.string(), "--target", "y", "--penalty", "l2"}).code == cli::exit_usage);
}

TEST_CASE("kb inspect summarises and filters") {
    fs::path kb = scratch("inspect.json");
    REQUIRE(cli_run({"build", "--depth", "1", "-o", kb.string()}).code == cli::exit_ok);
    fs::path js = scratch("inspect_report.json");
    Run r = cli_run({"kb", "inspect", kb.string(), "--list", "--layer", "0", "--json", js.string()});
    REQUIRE(r.code == cli::exit_ok);
    json j = read_json(js);
    KbLoad k = load_kb(kb);
    CHECK(j["atoms"].get<std::size_t>() == k.library.size());
    std::size_t layer0 = 0;
    for (const auto& a : k.library.atoms()) layer0 += a.layer == 0;
    CHECK(j["list"].size() == layer0);
    CHECK(j["layers"]["0"].get<std::size_t>() == layer0);

    CHECK(cli_run({"kb", "inspect", kb.string(), "--origin", "martian"}).code == cli::exit_usage);
    std::ofstream(scratch("junk.json")) << "not json";
    CHECK(cli_run({"kb", "inspect", scratch("junk.json").string()}).code == cli::exit_data);
    CHECK(cli_run({"kb"}).code == cli::exit_usage);
}
