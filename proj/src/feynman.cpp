#include "atomforest/feynman.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "atomforest/parse.hpp"
#include "atomforest/random.hpp"

namespace atomforest {

namespace {

using json = nlohmann::ordered_json;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

using SingleCache = std::map<std::tuple<double, double, int>, AtomLibrary>;

const AtomLibrary& single_library(SingleCache& cache, const VariableRange& v, const MultiLibraryConfig& cfg) {
    auto key = std::make_tuple(v.lo, v.hi, cfg.build.d_max);
    auto it = cache.find(key);
    if (it == cache.end()) {
        it = cache.emplace(key, AtomLibrary::build(Grid::closed(v.lo, v.hi, cfg.grid_points), cfg.build)).first;
    }
    return it->second;
}

AtomLibrary build_multi(std::span<const VariableRange> vars, const Samples& rows, const MultiLibraryConfig& cfg,
                        SingleCache& cache) {
    if (vars.empty()) throw std::invalid_argument("no variables");
    if (rows.variables() != vars.size()) throw std::invalid_argument("sample columns differ from the variable count");
    cfg.build.validate();
    AtomLibrary lib(rows, cfg.build, 0);

    // Odometer over exponent choices; slot 0 means the variable is absent.
    const std::size_t n = vars.size(), e = cfg.exponents.size();
    std::vector<std::size_t> pick(n, 0);
    while (true) {
        std::size_t j = 0;
        while (j < n && ++pick[j] > e) pick[j++] = 0;
        if (j == n) break;
        std::vector<Expr> factors;
        for (std::size_t v = 0; v < n; ++v) {
            if (pick[v]) factors.push_back(pow(variable(static_cast<int>(v)), cfg.exponents[pick[v] - 1]));
        }
        lib.admit(canonicalize(mul(std::move(factors))), 1, 0, Origin::product);
    }

    for (std::size_t v = 0; v < n; ++v) {
        const AtomLibrary& single = single_library(cache, vars[v], cfg);
        for (std::size_t i : single.searchable_indices()) {
            const auto& a = single[i];
            // Values are matched directly, so the additive constant an atom
            // carries (sin x - cos 1) would be dead weight here.
            lib.admit(strip_constant(substitute(a.f, 0, variable(static_cast<int>(v)))), a.layer, a.depth, a.origin);
        }
    }
    return lib;
}

BenchOutcome run_one(const EquationSpec& eq, const FeynmanConfig& cfg, SingleCache& cache) {
    auto t0 = std::chrono::steady_clock::now();
    BenchOutcome o;
    o.name = eq.name;
    o.category = eq.category;
    o.expected = eq.expected;
    try {
        std::uint64_t seed = cfg.seed ^ fnv1a(eq.name);
        Samples rows = sample_rows(eq.variables, cfg.rows, seed);
        Samples hold = sample_rows(eq.variables, cfg.holdout_rows, ~seed);
        std::vector<double> y = evaluate(eq.expr, rows);
        for (double v : y) {
            if (!std::isfinite(v)) throw std::runtime_error("target is not finite on the samples");
        }

        MultiLibraryConfig lc = cfg.library;
        lc.build.d_max = cfg.d_max;
        AtomLibrary lib = build_multi(eq.variables, rows, lc, cache);
        o.library_size = lib.size();

        SearchConfig sc = cfg.search;
        sc.channel = Channel::value;
        sc.k_max = cfg.k_max;
        sc.validate();
        GramCache gram(lib, y, Channel::value);
        auto by_k = search(gram, sc);
        const SearchResult* best = best_result(by_k, sc.exact_mse);
        if (!best) {
            o.status = Status::fail;
            o.rel_mse = 1.0;
        } else {
            SearchResult r = *best;
            o.best_k = static_cast<int>(r.k());
            o.train_mse = r.mse;
            double yy = 0.0;
            for (double v : y) yy += v * v;
            o.rel_mse = r.mse / (yy / static_cast<double>(y.size()));
            auto [f, fp] = reconstruct(r, lib);
            o.formula = to_infix(f, eq.names());
            o.identity = canonical_string(differentiate(f, 0)) == canonical_string(fp);
            if (r.mse < sc.exact_mse) o.verification = verify(r, lib, hold, eq.expr, sc, Channel::value);
            if (o.verification == Verification::verified && o.identity) {
                o.status = Status::pass;
            } else {
                o.status = o.rel_mse < cfg.close_threshold ? Status::close : Status::fail;
            }
        }
    } catch (const std::exception& ex) {
        o.status = Status::error;
        o.error = ex.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

std::string sci(double v) {
    std::ostringstream s;
    s.setf(std::ios::scientific);
    s.precision(2);
    s << v;
    return s.str();
}

}  // namespace

std::string_view status_name(Status s) {
    switch (s) {
        case Status::pass: return "pass";
        case Status::close: return "close";
        case Status::fail: return "fail";
        case Status::error: return "error";
    }
    return "?";
}

std::optional<Status> status_from_name(std::string_view name) {
    for (Status s : {Status::pass, Status::close, Status::fail, Status::error}) {
        if (status_name(s) == name) return s;
    }
    return std::nullopt;
}

std::vector<std::string> EquationSpec::names() const {
    std::vector<std::string> out;
    for (const auto& v : variables) out.push_back(v.name);
    return out;
}

Suite suite_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SuiteError(std::string("suite is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("version") || !j.contains("equations")) {
        throw SuiteError("suite needs \"version\" and \"equations\"");
    }
    if (j["version"] != k_suite_version) {
        throw SuiteError("unsupported suite version " + j["version"].dump());
    }
    Suite s;
    for (const auto& e : j["equations"]) {
        EquationSpec eq;
        try {
            eq.name = e.at("name").get<std::string>();
            eq.category = e.value("category", "");
            for (const auto& v : e.at("variables")) {
                VariableRange r{v.at("name").get<std::string>(), v.at("lo").get<double>(), v.at("hi").get<double>()};
                if (!(r.lo < r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
                    throw SuiteError("bad range for " + r.name);
                }
                eq.variables.push_back(r);
            }
            if (eq.variables.empty()) throw SuiteError("no variables");
            if (e.contains("expr")) {
                eq.expr = canonicalize(parse_prefix(e["expr"].get<std::string>()));
            } else {
                eq.expr = canonicalize(parse_infix(e.at("formula").get<std::string>(), eq.names()));
            }
            if (eq.expr.variable_mask() >> eq.variables.size()) throw SuiteError("expression uses an undeclared variable");
            if (e.contains("expected")) {
                auto st = status_from_name(e["expected"].get<std::string>());
                if (!st || *st == Status::error) throw SuiteError("unknown expected status " + e["expected"].dump());
                eq.expected = st;
            }
        } catch (const std::exception& ex) {
            throw SuiteError("equation " + (eq.name.empty() ? e.dump() : eq.name) + ": " + ex.what());
        }
        Samples probe = sample_rows(eq.variables, 1024, fnv1a(eq.name));
        for (double v : evaluate(eq.expr, probe)) {
            if (!std::isfinite(v)) throw SuiteError("equation " + eq.name + " is not finite over its ranges");
        }
        s.equations.push_back(std::move(eq));
    }
    if (s.equations.empty()) throw SuiteError("suite has no equations");
    return s;
}

Suite load_suite(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SuiteError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return suite_from_string(buf.str());
}

std::string suite_to_string(const Suite& suite) {
    json j;
    j["version"] = k_suite_version;
    j["equations"] = json::array();
    for (const auto& eq : suite.equations) {
        json e;
        e["name"] = eq.name;
        e["category"] = eq.category;
        e["formula"] = to_infix(eq.expr, eq.names());
        e["expr"] = eq.expr.key();
        e["variables"] = json::array();
        for (const auto& v : eq.variables) e["variables"].push_back({{"name", v.name}, {"lo", v.lo}, {"hi", v.hi}});
        if (eq.expected) e["expected"] = std::string(status_name(*eq.expected));
        j["equations"].push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

double relmse(std::span<const double> predictions, std::span<const double> truth) {
    if (predictions.size() != truth.size()) throw std::invalid_argument("relmse: lengths differ");
    if (truth.empty()) throw std::invalid_argument("relmse: empty input");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        double e = predictions[i] - truth[i];
        num += e * e;
        den += truth[i] * truth[i];
    }
    if (den == 0.0) throw std::invalid_argument("relmse: truth is identically zero");
    return num / den;
}

Samples sample_rows(std::span<const VariableRange> vars, std::size_t rows, std::uint64_t seed) {
    SplitMix rng(seed);
    std::vector<std::vector<double>> cols(vars.size(), std::vector<double>(rows));
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < vars.size(); ++j) cols[j][i] = rng.uniform(vars[j].lo, vars[j].hi);
    }
    return Samples(std::move(cols));
}

AtomLibrary build_multivariate_library(std::span<const VariableRange> vars, const Samples& rows,
                                       const MultiLibraryConfig& cfg) {
    SingleCache cache;
    return build_multi(vars, rows, cfg, cache);
}

BenchOutcome run_equation(const EquationSpec& eq, const FeynmanConfig& cfg) {
    SingleCache cache;
    return run_one(eq, cfg, cache);
}

BenchSummary run_feynman(const Suite& suite, const FeynmanConfig& cfg) {
    if (suite.equations.empty()) throw std::invalid_argument("suite is empty");
    auto t0 = std::chrono::steady_clock::now();
    BenchSummary s;
    SingleCache cache;
    for (const auto& eq : suite.equations) s.outcomes.push_back(run_one(eq, cfg, cache));
    std::stable_sort(s.outcomes.begin(), s.outcomes.end(),
                     [](const BenchOutcome& a, const BenchOutcome& b) { return a.name < b.name; });
    for (const auto& o : s.outcomes) {
        switch (o.status) {
            case Status::pass: ++s.pass; break;
            case Status::close: ++s.close; break;
            case Status::fail: ++s.fail; break;
            case Status::error: ++s.errored; break;
        }
        if (!o.matches()) ++s.mismatches;
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

std::string bench_report(const BenchSummary& s, bool timing) {
    std::ostringstream out;
    for (const auto& o : s.outcomes) {
        out << o.name << "  " << status_name(o.status);
        if (o.expected) out << " (expected " << status_name(*o.expected) << (o.matches() ? ")" : ", MISMATCH)");
        out << "  K=" << o.best_k << "  relMSE=" << sci(o.rel_mse) << "  atoms=" << o.library_size;
        if (timing) out << "  " << fixed(o.seconds, 1) << "s";
        out << "\n";
        if (!o.formula.empty()) out << "    F = " << o.formula << "\n";
        if (!o.error.empty()) out << "    error: " << o.error << "\n";
    }
    out << "pass " << s.pass << "  close " << s.close << "  fail " << s.fail << "  error " << s.errored
        << "  mismatches " << s.mismatches;
    if (timing) out << "  time " << fixed(s.seconds, 1) << "s";
    out << "\n";
    return out.str();
}

std::string bench_json(const BenchSummary& s, bool timing) {
    json j;
    j["summary"] = {{"pass", s.pass}, {"close", s.close}, {"fail", s.fail}, {"error", s.errored},
                    {"mismatches", s.mismatches}};
    if (timing) j["summary"]["seconds"] = s.seconds;
    j["equations"] = json::array();
    for (const auto& o : s.outcomes) {
        json e;
        e["name"] = o.name;
        e["category"] = o.category;
        e["status"] = std::string(status_name(o.status));
        e["expected"] = o.expected ? json(std::string(status_name(*o.expected))) : json(nullptr);
        e["best_k"] = o.best_k;
        e["train_mse"] = o.train_mse;
        e["rel_mse"] = o.rel_mse;
        e["verification"] = std::string(verification_name(o.verification));
        e["identity"] = o.identity;
        e["formula"] = o.formula;
        e["atoms"] = o.library_size;
        if (timing) e["seconds"] = o.seconds;
        if (!o.error.empty()) e["error"] = o.error;
        j["equations"].push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

}  // namespace atomforest
