#include "atomforest/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "atomforest/feynman.hpp"
#include "atomforest/kb.hpp"
#include "atomforest/parse.hpp"

namespace atomforest::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string sci(double v) {
    std::ostringstream s;
    s << std::scientific << std::setprecision(3) << v;
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
    if (!f) throw DataError("cannot write " + path.string());
}

void write_json(const std::optional<fs::path>& path, const json& j) {
    if (path) write_text(*path, j.dump(2) + "\n");
}

void need_input(const fs::path& p, const std::string& what) {
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) throw DataError(what + " not found: " + p.string());
    std::ifstream f(p);
    if (!f) throw DataError(what + " is not readable: " + p.string());
}

void need_output(const fs::path& p, const std::string& what) {
    std::error_code ec;
    fs::path dir = p.parent_path();
    if (!dir.empty() && !fs::is_directory(dir, ec)) throw DataError(what + " directory does not exist: " + dir.string());
    if (fs::is_directory(p, ec)) throw DataError(what + " is a directory: " + p.string());
}

std::string grid_text(const Grid& g) {
    std::ostringstream s;
    s << "(" << format_double(g.lo()) << ", " << format_double(g.hi()) << "], " << g.size() << " points";
    return s.str();
}

// One-variable target F' sampled on a grid, from an expression or a CSV.
struct TargetData {
    Grid grid = default_grid();
    std::vector<double> y;
    std::optional<Expr> expr;
    std::string label;
};

std::vector<double> checked_values(const Expr& e, const Grid& g) {
    std::vector<double> y = evaluate(e, g);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!std::isfinite(y[i])) {
            throw DataError("target is not finite on the grid at x = " + format_double(g.points()[i]));
        }
    }
    return y;
}

Expr target_expression(const std::string& text) {
    Expr e = canonicalize(parse_infix(text));
    if (e.variable_mask() > 1) throw DataError("target may only use the variable x: " + text);
    return e;
}

// Sorted (x, y) pairs from a CSV with the named columns.
std::pair<std::vector<double>, std::vector<double>> read_xy(const fs::path& path, const RunConfig& cfg) {
    TabularTask t = load_csv(path, cfg.y_column, TaskKind::regression);
    auto it = std::find(t.names.begin(), t.names.end(), cfg.x_column);
    if (it == t.names.end()) throw DataError(path.string() + ": no column '" + cfg.x_column + "'");
    auto j = static_cast<Eigen::Index>(it - t.names.begin());
    std::vector<std::size_t> order(static_cast<std::size_t>(t.X.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return t.X(static_cast<Eigen::Index>(a), j) < t.X(static_cast<Eigen::Index>(b), j);
    });
    std::vector<double> xs, ys;
    for (std::size_t i : order) {
        xs.push_back(t.X(static_cast<Eigen::Index>(i), j));
        ys.push_back(t.y(static_cast<Eigen::Index>(i)));
    }
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (!(xs[i] > xs[i - 1])) throw DataError(path.string() + ": repeated x value " + format_double(xs[i]));
    }
    if (xs.size() < 2) throw DataError(path.string() + ": need at least two rows");
    return {std::move(xs), std::move(ys)};
}

TargetData load_target(const RunConfig& cfg, const std::optional<Grid>& grid) {
    TargetData t;
    if (!cfg.target_expr.empty()) {
        t.grid = grid.value_or(cfg.grid.grid());
        t.expr = target_expression(cfg.target_expr);
        t.y = checked_values(*t.expr, t.grid);
        t.label = to_infix(*t.expr);
    } else {
        auto [xs, ys] = read_xy(*cfg.input, cfg);
        t.grid = Grid(std::move(xs));
        t.y = std::move(ys);
        t.label = cfg.input->string();
    }
    return t;
}

json result_json(const SearchResult& r) {
    json j;
    j["k"] = r.k();
    j["mse"] = r.mse;
    j["coefficients"] = r.coefficients;
    j["F"] = to_infix(r.antiderivative);
    j["F_prime"] = to_infix(r.derivative_expr);
    j["F_prefix"] = r.antiderivative.key();
    j["F_prime_prefix"] = r.derivative_expr.key();
    return j;
}

}  // namespace

void RunConfig::validate() const {
    try {
        build.validate();
        search.validate();
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (!(grid.lo < grid.hi)) throw UsageError("--lo must be below --hi");
    if (grid.points < 2) throw UsageError("--points must be at least 2");
    if (workers < 1) throw UsageError("--workers must be at least 1");
    if (!(close_threshold > 0.0)) throw UsageError("--close must be positive");
    if (!(strength > 0.0)) throw UsageError("--strength must be positive");
    if (lambda && !(*lambda > 0.0)) throw UsageError("--lambda must be positive");

    if (subcommand == "solve") {
        if (target_expr.empty() == !input.has_value()) throw UsageError("give exactly one of --target-expr and --target");
        if (grow_kb && !kb) throw UsageError("--grow-kb needs --kb");
        if (holdout && !input) throw UsageError("--holdout goes with a CSV --target");
    }
    if (subcommand == "train") {
        if (target_expr.empty() == !input.has_value()) throw UsageError("give exactly one of --target-expr and --target");
        if (templ.empty()) throw UsageError("--template is required");
    }
    if (subcommand == "expand-fit") {
        if (task == TaskKind::regression && penalty == Penalty::l2) {
            throw UsageError("regression fits use the l1 penalty");
        }
    }
    if (subcommand == "kb inspect" && !origin.empty() && !origin_from_name(origin)) {
        throw UsageError("unknown origin '" + origin + "'");
    }

    if (kb) need_input(*kb, "KB file");
    if (input) need_input(*input, subcommand == "bench" ? "suite file" : "data file");
    if (holdout) need_input(*holdout, "holdout file");
    if (out) need_output(*out, "output");
    if (json) need_output(*json, "report");
    if (curves) need_output(*curves, "curves file");
}

int cmd_build(const RunConfig& cfg, std::ostream& out) {
    Grid grid = cfg.grid.grid();
    AtomLibrary lib = AtomLibrary::build(grid, cfg.build);
    std::size_t searchable = lib.searchable_indices().size();
    if (searchable == 0) throw DataError("every candidate was filtered; the library is empty");

    json j;
    j["grid"] = {{"lo", grid.lo()}, {"hi", grid.hi()}, {"points", grid.size()}};
    j["d_max"] = cfg.build.d_max;
    j["layers"] = json::array();
    out << "grid " << grid_text(grid) << ", d_max " << cfg.build.d_max << "\n";
    for (const auto& s : lib.stats()) {
        std::string name = std::to_string(s.layer);
        if (s.layer == 4) name += "." + std::to_string(s.round);
        std::size_t rejected = s.candidates - s.admitted;
        out << "layer " << name << ": candidates " << s.candidates << "  admitted " << s.admitted << "  rejected "
            << rejected << " (non-finite " << s.non_finite << ", unresolved " << s.unresolved << ", duplicate " << s.duplicate << ", capped " << s.capped
            << ", other " << s.other << ")\n";
        j["layers"].push_back({{"layer", s.layer},
                               {"round", s.round},
                               {"candidates", s.candidates},
                               {"admitted", s.admitted},
                               {"rejected", rejected},
                               {"non_finite", s.non_finite},
                               {"unresolved", s.unresolved},
                               {"duplicate", s.duplicate},
                               {"capped", s.capped},
                               {"other", s.other}});
    }
    fs::path path = cfg.out.value_or("kb.json");
    save_kb(lib, path);
    out << "total " << lib.size() << " atoms (" << searchable << " searchable), cap " << cfg.build.max_atoms << "\n";
    out << "wrote " << path.string() << "\n";
    j["atoms"] = lib.size();
    j["searchable"] = searchable;
    j["kb"] = path.string();
    write_json(cfg.json, j);
    return exit_ok;
}

int cmd_solve(const RunConfig& cfg, std::ostream& out) {
    std::optional<Grid> grid;
    if (cfg.grid_given) grid = cfg.grid.grid();

    // A CSV fixes the points; otherwise the KB's own grid unless flags override it.
    std::optional<TargetData> csv;
    if (cfg.input) {
        csv = load_target(cfg, std::nullopt);
        grid = csv->grid;
    }
    std::optional<AtomLibrary> built;
    std::string source;
    std::size_t warnings = 0;
    if (cfg.kb) {
        KbLoad k = load_kb(*cfg.kb, grid);
        warnings = k.warnings.size();
        built.emplace(std::move(k.library));
        source = "kb " + cfg.kb->string();
    } else {
        built.emplace(AtomLibrary::build(grid.value_or(cfg.grid.grid()), cfg.build));
        source = "built, d_max " + std::to_string(cfg.build.d_max);
    }
    AtomLibrary& lib = *built;
    const Grid& g = *lib.grid();
    TargetData target = csv ? std::move(*csv) : load_target(cfg, g);

    out << "library " << lib.size() << " atoms (" << lib.searchable_indices().size() << " searchable), " << source
        << ", grid " << grid_text(g) << "\n";
    if (warnings) out << "kb warnings " << warnings << "\n";
    out << "target F' = " << target.label << "\n";

    SearchConfig sc = cfg.search;
    sc.workers = cfg.workers;
    GramCache cache(lib, target.y, Channel::derivative);
    auto by_k = search(cache, sc);

    json j;
    j["library"] = {{"atoms", lib.size()}, {"source", source}};
    j["target"] = target.label;
    j["by_k"] = json::array();
    for (std::size_t k = 0; k < by_k.size(); ++k) {
        auto& list = by_k[k];
        json jk;
        jk["k"] = k + 1;
        jk["results"] = json::array();
        if (list.empty()) {
            out << "K=" << k + 1 << "  no admissible subset\n";
        } else {
            out << "K=" << k + 1 << "  best mse " << sci(list.front().mse) << "  (" << list.size() << " kept)\n";
        }
        // Subsets that differ only by a zero coefficient print the same F; show each F once.
        std::vector<std::string> shown;
        for (std::size_t i = 0; i < list.size() && shown.size() < cfg.top; ++i) {
            reconstruct(list[i], lib);
            std::string key = list[i].antiderivative.key();
            if (std::find(shown.begin(), shown.end(), key) != shown.end()) continue;
            shown.push_back(key);
            out << "  " << shown.size() << ". mse " << sci(list[i].mse) << "  F = " << to_infix(list[i].antiderivative)
                << " + C   F' = " << to_infix(list[i].derivative_expr) << "\n";
            jk["results"].push_back(result_json(list[i]));
        }
        if (!list.empty()) jk["best_mse"] = list.front().mse;
        j["by_k"].push_back(std::move(jk));
    }

    const SearchResult* pick = best_result(by_k, sc.exact_mse);
    if (!pick) {
        out << "no result\n";
        write_json(cfg.json, j);
        return exit_ok;
    }
    SearchResult best = *pick;
    auto [F, Fp] = reconstruct(best, lib);
    bool identity = canonical_string(differentiate(F)) == canonical_string(Fp);

    std::string check;
    if (!(best.mse < sc.exact_mse)) {
        check = "unverified (train mse above " + sci(sc.exact_mse) + ")";
    } else if (target.expr) {
        Samples hold = Grid::holdout_for(g).samples();
        verify(best, lib, hold, *target.expr, sc);
        check = std::string(verification_name(best.verified)) + " (holdout mse " + sci(best.holdout_mse) + ")";
    } else if (cfg.holdout) {
        auto [hx, hy] = read_xy(*cfg.holdout, cfg);
        verify(best, lib, Samples::single(hx), hy, sc);
        check = std::string(verification_name(best.verified)) + " (holdout mse " + sci(best.holdout_mse) + ")";
    } else {
        check = "unverified (no holdout data)";
    }
    out << "best K=" << best.k() << "  mse " << sci(best.mse) << "\n";
    out << "  F = " << to_infix(F) << " + C\n";
    out << "  F' = " << to_infix(Fp) << "\n";
    out << "  verification " << check << "\n";
    out << "  identity d/dx F == F': " << (identity ? "yes" : "no") << "\n";
    j["best"] = result_json(best);
    j["best"]["verification"] = std::string(verification_name(best.verified));
    j["best"]["holdout_mse"] = best.holdout_mse;
    j["best"]["identity"] = identity;

    if (cfg.grow_kb) {
        fs::path dest = cfg.out.value_or(*cfg.kb);
        if (best.verified != Verification::verified || !identity) {
            out << "kb unchanged: the best result is not verified\n";
            j["kb"] = {{"added", false}, {"reason", "not verified"}};
        } else {
            // Grow the file's own library, on its own grid.
            KbLoad base = load_kb(*cfg.kb);
            Admission a = base.library.fold_in(strip_constant(F));
            if (a.accepted()) {
                save_kb(base.library, dest);
                out << "kb added " << to_infix(base.library[a.index].f) << " as atom " << a.index << ", "
                    << base.library.size() << " atoms, wrote " << dest.string() << "\n";
                j["kb"] = {{"added", true}, {"index", a.index}, {"atoms", base.library.size()}, {"path", dest.string()}};
            } else {
                out << "kb unchanged: " << verdict_name(a.verdict) << (a.reason.empty() ? "" : " (" + a.reason + ")")
                    << "\n";
                j["kb"] = {{"added", false}, {"reason", std::string(verdict_name(a.verdict))}};
            }
        }
    }
    write_json(cfg.json, j);
    return exit_ok;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    std::vector<NodeSpec> templ = parse_template(cfg.templ);
    TargetData target = load_target(cfg, std::nullopt);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.workers = cfg.workers;
    auto xs = target.grid.points();
    TrainResult r = train(templ, xs, target.y, tc);

    std::string report = train_report(r);
    if (cfg.curves) write_text(*cfg.curves, report);
    out << "template " << template_to_string(templ) << "\n";
    out << "target F' = " << target.label << ", grid " << grid_text(target.grid) << "\n";
    out << report.substr(0, report.find("loss_curves\n"));

    json j;
    j["template"] = template_to_string(templ);
    j["target"] = target.label;
    j["ok"] = r.ok;
    j["converged"] = r.converged;
    if (r.ok) {
        j["best_restart"] = r.best_restart;
        j["snapped_mse"] = r.best_mse;
        j["F"] = to_infix(r.antiderivative);
        j["F_prime"] = to_infix(r.derivative_expr);
    }
    j["restarts"] = json::array();
    for (const auto& rep : r.restarts) {
        j["restarts"].push_back({{"restart", rep.restart},
                                 {"steps", rep.steps_run},
                                 {"diverged", rep.diverged},
                                 {"final_loss", rep.final_loss},
                                 {"snapped_mse", rep.snapped_mse},
                                 {"formula", rep.formula}});
    }
    write_json(cfg.json, j);
    if (!r.ok) throw DataError("training failed: " + r.failure);
    return exit_ok;
}

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
    Suite suite = load_suite(*cfg.input);
    FeynmanConfig fc;
    fc.d_max = cfg.build.d_max;
    fc.k_max = cfg.search.k_max;
    fc.rows = static_cast<std::size_t>(cfg.rows);
    fc.holdout_rows = static_cast<std::size_t>(cfg.rows);
    fc.seed = cfg.seed;
    fc.close_threshold = cfg.close_threshold;
    fc.library.build = cfg.build;
    fc.search = cfg.search;
    fc.search.workers = cfg.workers;
    BenchSummary s = run_feynman(suite, fc);
    out << bench_report(s, cfg.timing);
    if (cfg.json) write_text(*cfg.json, bench_json(s, cfg.timing));
    return s.mismatches ? exit_mismatch : exit_ok;
}

int cmd_expand_fit(const RunConfig& cfg, std::ostream& out) {
    TabularTask task = load_csv(*cfg.input, cfg.target_column, cfg.task);
    task.folds = cfg.folds;
    ExpandConfig ec = cfg.raw ? ExpandConfig::raw() : ExpandConfig{};
    ec.cross = cfg.cross;
    ec.d_max = cfg.expand_depth;
    ec.build.rho = cfg.build.rho;
    ec.build.max_atoms = cfg.build.max_atoms;

    CvReport rep;
    std::string score;
    std::string penalty;
    if (cfg.task == TaskKind::regression) {
        LassoConfig lc;
        lc.lambda = cfg.lambda;
        lc.seed = cfg.seed;
        rep = cross_validate_regression(task, ec, lc, cfg.seed);
        score = "r2";
        penalty = "l1";
    } else {
        LogisticConfig lg;
        lg.penalty = cfg.penalty.value_or(Penalty::l2);
        lg.strength = cfg.strength;
        rep = cross_validate_classification(task, ec, lg, cfg.seed);
        score = "accuracy";
        penalty = lg.penalty == Penalty::l1 ? "l1" : "l2";
    }

    out << "task " << (cfg.task == TaskKind::regression ? "regression" : "classification") << ", " << task.X.rows()
        << " rows, " << task.names.size() << " inputs, target " << task.target << "\n";
    for (const auto& n : task.notes) out << "note " << n << "\n";
    out << "features " << (cfg.raw ? "raw" : "atoms d_max " + std::to_string(cfg.expand_depth))
        << (cfg.cross ? " + cross products" : "") << ", penalty " << penalty << "\n";
    for (std::size_t f = 0; f < rep.fold_scores.size(); ++f) {
        out << "fold " << f + 1 << "  " << score << " " << std::fixed << std::setprecision(4) << rep.fold_scores[f]
            << "\n";
    }
    out << "mean " << score << " " << std::fixed << std::setprecision(4) << rep.mean_score << "\n";
    out.unsetf(std::ios::floatfield);
    out << "final model width " << rep.width << ", nonzero " << rep.selected.size() << "\n";
    for (std::size_t i = 0; i < std::min(cfg.top, rep.selected.size()); ++i) {
        const auto& a = rep.selected[i];
        out << "  " << sci(a.weight) << "  " << a.feature << "   d/dx: " << a.derivative << "\n";
    }
    for (const auto& w : rep.warnings) out << "warning " << w << "\n";

    json j;
    j["task"] = cfg.task == TaskKind::regression ? "regression" : "classification";
    j["rows"] = task.X.rows();
    j["score"] = score;
    j["fold_scores"] = rep.fold_scores;
    j["mean_score"] = rep.mean_score;
    j["width"] = rep.width;
    j["selected"] = json::array();
    for (const auto& a : rep.selected) {
        j["selected"].push_back({{"feature", a.feature}, {"derivative", a.derivative}, {"weight", a.weight}});
    }
    j["warnings"] = rep.warnings;
    j["notes"] = task.notes;
    write_json(cfg.json, j);
    return exit_ok;
}

int cmd_kb_inspect(const RunConfig& cfg, std::ostream& out) {
    KbLoad k = load_kb(*cfg.kb);
    const AtomLibrary& lib = k.library;
    const BuildConfig& b = lib.config();
    std::map<int, std::size_t> layers;
    std::map<std::string, std::size_t> origins;
    for (const auto& a : lib.atoms()) {
        ++layers[a.layer];
        ++origins[std::string(origin_name(a.origin))];
    }
    out << "kb " << cfg.kb->string() << "  version " << k_kb_version << "\n";
    out << "grid " << grid_text(*lib.grid()) << "\n";
    out << "build d_max " << b.d_max << "  rho " << format_double(b.rho) << "  max_atoms " << b.max_atoms << "\n";
    out << "atoms " << lib.size() << " (" << lib.searchable_indices().size() << " searchable)\n";
    for (const auto& [l, n] : layers) out << "  layer " << l << "  " << n << "\n";
    for (const auto& [o, n] : origins) out << "  origin " << o << "  " << n << "\n";
    out << "warnings " << k.warnings.size() << "\n";
    for (const auto& w : k.warnings) out << "  atom " << w.atom << ": " << w.reason << "\n";

    json j;
    j["version"] = k_kb_version;
    j["atoms"] = lib.size();
    j["layers"] = json::object();
    for (const auto& [l, n] : layers) j["layers"][std::to_string(l)] = n;
    j["origins"] = origins;
    j["warnings"] = k.warnings.size();
    if (cfg.list) {
        std::optional<Origin> want;
        if (!cfg.origin.empty()) want = origin_from_name(cfg.origin);
        j["list"] = json::array();
        for (std::size_t i = 0; i < lib.size(); ++i) {
            const auto& a = lib[i];
            if (cfg.layer && a.layer != *cfg.layer) continue;
            if (want && a.origin != *want) continue;
            out << i << "  L" << a.layer << "  d" << a.depth << "  " << origin_name(a.origin) << "  " << to_infix(a.f)
                << "   f' = " << to_infix(a.fprime) << "\n";
            j["list"].push_back({{"index", i},
                                 {"layer", a.layer},
                                 {"depth", a.depth},
                                 {"origin", std::string(origin_name(a.origin))},
                                 {"f", a.f.key()},
                                 {"fprime", a.fprime.key()}});
        }
    }
    write_json(cfg.json, j);
    return exit_ok;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    CLI::App app{"Atom library construction, sparse derivative search and forest training"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "atomforest 1.0");

    auto positive = CLI::PositiveNumber;
    app.add_option("--seed", cfg.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--workers", cfg.workers, "Worker threads; output does not depend on it")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();
    app.add_option("--json", cfg.json, "Also write a machine-readable report here");
    auto* lo = app.add_option("--lo", cfg.grid.lo, "Grid lower end (open)")->capture_default_str();
    auto* hi = app.add_option("--hi", cfg.grid.hi, "Grid upper end")->capture_default_str();
    auto* pts = app.add_option("--points", cfg.grid.points, "Grid points")->check(CLI::Range(2, 1 << 20))->capture_default_str();
    app.add_option("--depth", cfg.build.d_max, "Library depth d_max")->check(CLI::Range(1, 3))->capture_default_str();
    app.add_option("--max-atoms", cfg.build.max_atoms, "Library size cap")->check(positive)->capture_default_str();
    app.add_option("--corr", cfg.build.rho, "Dedup correlation threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app.add_option("--det", cfg.search.det_min, "Gram determinant filter")->check(positive)->capture_default_str();
    app.add_option("--cap", cfg.search.coef_cap, "Coefficient magnitude cap")->check(positive)->capture_default_str();
    app.add_option("--verify", cfg.search.exact_mse, "Exact-hit MSE threshold")->check(positive)->capture_default_str();
    app.add_option("--beam-seed", cfg.search.beam_seed, "Beam seeds from width K-1")->check(positive)->capture_default_str();
    app.add_option("--beam-keep", cfg.search.beam_keep, "Beam results kept")->check(positive)->capture_default_str();

    auto* build = app.add_subcommand("build", "Build an atom library and write it as a KB file");
    build->add_option("--out,-o", cfg.out, "KB file to write (default kb.json)");

    int solve_kmax = 2;
    auto* solve = app.add_subcommand("solve", "Find F with F' matching a target");
    solve->add_option("--target-expr", cfg.target_expr, "Target F'(x) as a formula in x");
    solve->add_option("--target", cfg.input, "Target F' as a CSV with x and y columns");
    solve->add_option("--holdout", cfg.holdout, "Independent CSV used to verify a CSV target");
    solve->add_option("--x-column", cfg.x_column)->capture_default_str();
    solve->add_option("--y-column", cfg.y_column)->capture_default_str();
    solve->add_option("--kb", cfg.kb, "Search this KB instead of building a library");
    solve->add_option("--kmax", solve_kmax, "Largest subset size")->check(CLI::Range(1, 8))->capture_default_str();
    solve->add_option("--top", cfg.top, "Results printed per K")->capture_default_str();
    solve->add_flag("--grow-kb", cfg.grow_kb, "Fold a verified result into the KB");
    solve->add_option("--out,-o", cfg.out, "Where the grown KB goes (default: the --kb file)");

    auto* trn = app.add_subcommand("train", "Fit a forest template by gradient descent");
    trn->add_option("--template", cfg.templ, "Forest template, e.g. \"eml(d=1) + mult(leaf, sol(d=1))\"");
    trn->add_option("--target-expr", cfg.target_expr, "Target F'(x) as a formula in x");
    trn->add_option("--target", cfg.input, "Target F' as a CSV with x and y columns");
    trn->add_option("--x-column", cfg.x_column)->capture_default_str();
    trn->add_option("--y-column", cfg.y_column)->capture_default_str();
    trn->add_option("--restarts", cfg.train.restarts)->check(CLI::Range(1, 100000))->capture_default_str();
    trn->add_option("--steps", cfg.train.steps)->check(CLI::Range(1, 100000000))->capture_default_str();
    trn->add_option("--lr", cfg.train.learning_rate, "Adam learning rate")->check(positive)->capture_default_str();
    trn->add_option("--snap-stop", cfg.train.stop_mse, "Stop once a snapped MSE is below this")
        ->check(positive)
        ->capture_default_str();
    trn->add_option("--curves", cfg.curves, "Write the full report with per-step losses here");

    int bench_kmax = 4;
    auto* bench = app.add_subcommand("bench", "Run an equation suite and compare with the expected statuses");
    bench->add_option("suite", cfg.input, "Suite JSON file")->required();
    bench->add_option("--kmax", bench_kmax)->check(CLI::Range(1, 8))->capture_default_str();
    bench->add_option("--rows", cfg.rows, "Sample rows per equation")->check(CLI::Range(8, 1 << 20))->capture_default_str();
    bench->add_option("--close", cfg.close_threshold, "relMSE bound for close")->check(positive)->capture_default_str();
    bench->add_flag("--timing", cfg.timing, "Include run times in the reports");

    std::string task = "regression", penalty;
    auto* fit = app.add_subcommand("expand-fit", "Cross-validated sparse fit on atom-expanded CSV features");
    fit->add_option("data", cfg.input, "CSV file with a header row")->required();
    fit->add_option("--target", cfg.target_column, "Target column")->required();
    fit->add_option("--task", task)->check(CLI::IsMember({"regression", "classification"}))->capture_default_str();
    fit->add_flag("--raw", cfg.raw, "Use the raw columns only");
    fit->add_flag("--cross", cfg.cross, "Add pairwise products");
    fit->add_option("--expand-depth", cfg.expand_depth, "Per-variable library depth")
        ->check(CLI::Range(1, 3))
        ->capture_default_str();
    fit->add_option("--penalty", penalty, "l1 or l2 (classification; default l2)")->check(CLI::IsMember({"l1", "l2"}));
    fit->add_option("--strength", cfg.strength, "Logistic penalty strength")->check(positive)->capture_default_str();
    fit->add_option("--lambda", cfg.lambda, "Lasso lambda (default: chosen by CV)")->check(positive);
    fit->add_option("--folds", cfg.folds)->check(CLI::Range(2, 100))->capture_default_str();
    fit->add_option("--top", cfg.top, "Selected features printed")->capture_default_str();

    auto* kb = app.add_subcommand("kb", "Knowledge-base tools");
    kb->require_subcommand(1);
    auto* inspect = kb->add_subcommand("inspect", "Summarise a KB file");
    inspect->add_option("file", cfg.kb, "KB file")->required();
    inspect->add_flag("--list", cfg.list, "List the atoms");
    inspect->add_option("--layer", cfg.layer, "Only this layer");
    inspect->add_option("--origin", cfg.origin, "Only this origin");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    cfg.grid_given = lo->count() + hi->count() + pts->count() > 0;
    cfg.search.workers = cfg.workers;
    cfg.train.workers = cfg.workers;
    if (!task.empty()) cfg.task = task == "classification" ? TaskKind::classification : TaskKind::regression;
    if (!penalty.empty()) cfg.penalty = penalty == "l1" ? Penalty::l1 : Penalty::l2;

    try {
        if (*build) {
            cfg.subcommand = "build";
        } else if (*solve) {
            cfg.subcommand = "solve";
            cfg.search.k_max = solve_kmax;
        } else if (*trn) {
            cfg.subcommand = "train";
        } else if (*bench) {
            cfg.subcommand = "bench";
            cfg.search.k_max = bench_kmax;
        } else if (*fit) {
            cfg.subcommand = "expand-fit";
        } else {
            cfg.subcommand = "kb inspect";
        }
        cfg.validate();

        if (cfg.subcommand == "build") return cmd_build(cfg, out);
        if (cfg.subcommand == "solve") return cmd_solve(cfg, out);
        if (cfg.subcommand == "train") return cmd_train(cfg, out);
        if (cfg.subcommand == "bench") return cmd_bench(cfg, out);
        if (cfg.subcommand == "expand-fit") return cmd_expand_fit(cfg, out);
        return cmd_kb_inspect(cfg, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const TemplateError& e) {
        err << "template error: " << e.what() << "\n";
        return exit_data;
    } catch (const ParseError& e) {
        err << "expression error: " << e.what() << "\n";
        return exit_data;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const KbError& e) {
        err << "kb error: " << e.what() << "\n";
        return exit_data;
    } catch (const SuiteError& e) {
        err << "suite error: " << e.what() << "\n";
        return exit_data;
    } catch (const std::invalid_argument& e) {
        err << "data error: " << e.what() << "\n";
        return exit_data;
    }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("atomforest");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace atomforest::cli
