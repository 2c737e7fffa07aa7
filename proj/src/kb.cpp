#include "atomforest/kb.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "atomforest/parse.hpp"

namespace atomforest {

using json = nlohmann::ordered_json;

namespace {

json config_json(const BuildConfig& c) {
    json j;
    j["p_range"] = {c.p_min, c.p_max};
    j["q_range"] = {c.q_min, c.q_max};
    j["slope_range"] = {c.slope_min, c.slope_max};
    j["offset_range"] = {c.offset_min, c.offset_max};
    j["quad_range"] = {c.quad_min, c.quad_max};
    j["d_max"] = c.d_max;
    j["max_atoms"] = c.max_atoms;
    j["rho"] = c.rho;
    j["max_abs_value"] = c.max_abs_value;
    j["max_trapezoid_gap"] = c.max_trapezoid_gap;
    return j;
}

BuildConfig config_from(const json& j) {
    BuildConfig c;
    auto pair = [&](const char* key, int& lo, int& hi) {
        if (!j.contains(key)) return;
        const auto& r = j.at(key);
        if (!r.is_array() || r.size() != 2) throw KbError(std::string("build_config.") + key + " must be [lo, hi]");
        lo = r[0].get<int>();
        hi = r[1].get<int>();
    };
    pair("p_range", c.p_min, c.p_max);
    pair("q_range", c.q_min, c.q_max);
    pair("slope_range", c.slope_min, c.slope_max);
    pair("offset_range", c.offset_min, c.offset_max);
    pair("quad_range", c.quad_min, c.quad_max);
    c.d_max = j.value("d_max", c.d_max);
    c.max_atoms = j.value("max_atoms", c.max_atoms);
    c.rho = j.value("rho", c.rho);
    c.max_abs_value = j.value("max_abs_value", c.max_abs_value);
    c.max_trapezoid_gap = j.value("max_trapezoid_gap", c.max_trapezoid_gap);
    return c;
}

json grid_json(const Grid& g) {
    json j;
    Grid u = Grid::uniform(g.lo(), g.hi(), g.size());
    auto a = u.points(), b = g.points();
    if (std::equal(a.begin(), a.end(), b.begin(), b.end())) {
        j["kind"] = "uniform";
        j["lo"] = g.lo();
        j["hi"] = g.hi();
        j["n"] = g.size();
    } else {
        j["kind"] = "points";
        j["points"] = std::vector<double>(b.begin(), b.end());
    }
    return j;
}

Grid grid_from(const json& j) {
    std::string kind = j.value("kind", "uniform");
    if (kind == "uniform") {
        return Grid::uniform(j.at("lo").get<double>(), j.at("hi").get<double>(), j.at("n").get<std::size_t>());
    }
    if (kind == "points") return Grid(j.at("points").get<std::vector<double>>());
    throw KbError("unknown grid kind '" + kind + "'");
}

}  // namespace

std::string kb_to_string(const AtomLibrary& lib) {
    if (!lib.grid()) throw KbError("only grid-based libraries can be saved");
    json doc;
    doc["version"] = k_kb_version;
    doc["build_config"] = config_json(lib.config());
    doc["grid"] = grid_json(*lib.grid());
    doc["wrt"] = lib.wrt();
    json atoms = json::array();
    for (const auto& a : lib.atoms()) {
        json e;
        e["f"] = a.f.key();
        e["fprime"] = a.fprime.key();
        e["layer"] = a.layer;
        e["depth"] = a.depth;
        e["origin"] = std::string(origin_name(a.origin));
        e["searchable"] = a.searchable;
        atoms.push_back(std::move(e));
    }
    doc["atoms"] = std::move(atoms);
    return doc.dump(1) + "\n";
}

void save_kb(const AtomLibrary& lib, const std::filesystem::path& path) {
    std::string text = kb_to_string(lib);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw KbError("cannot write " + path.string());
    out << text;
    if (!out) throw KbError("failed writing " + path.string());
}

KbLoad kb_from_string(const std::string& text, const std::optional<Grid>& grid) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw KbError(std::string("knowledge base is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("version")) throw KbError("knowledge base has no version field");
    if (!doc["version"].is_number_integer() || doc["version"].get<int>() != k_kb_version) {
        throw KbError("knowledge base version " + doc["version"].dump() + " is not supported (expected " +
                      std::to_string(k_kb_version) + ")");
    }
    if (!doc.contains("atoms") || !doc["atoms"].is_array()) throw KbError("knowledge base has no atoms array");

    BuildConfig cfg;
    Grid g = default_grid();
    try {
        if (doc.contains("build_config")) cfg = config_from(doc["build_config"]);
        cfg.validate();
        if (grid) {
            g = *grid;
        } else if (doc.contains("grid")) {
            g = grid_from(doc["grid"]);
        }
    } catch (const KbError&) {
        throw;
    } catch (const std::exception& e) {
        throw KbError(std::string("bad knowledge base header: ") + e.what());
    }
    int wrt = doc.value("wrt", 0);
    if (wrt != 0) throw KbError("grid libraries are one-variable; wrt must be 0");

    KbLoad out{AtomLibrary(g, cfg), {}};
    const auto& atoms = doc["atoms"];
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        const auto& a = atoms[i];
        try {
            Expr f = parse_prefix(a.at("f").get<std::string>());
            Expr fp = parse_prefix(a.at("fprime").get<std::string>());
            bool searchable = a.value("searchable", true);
            if (!searchable && canonical_string(f) == "c:1") continue;  // always present
            auto origin = origin_from_name(a.value("origin", std::string("discovered")));
            if (!origin) {
                out.warnings.push_back({i, "unknown origin " + a.value("origin", std::string()), {}});
                continue;
            }
            AtomPair p;
            p.f = f;
            p.fprime = fp;
            p.values = evaluate(f, out.library.samples());
            p.dvalues = evaluate(fp, out.library.samples());
            p.layer = a.value("layer", 4);
            p.depth = a.value("depth", 0);
            p.origin = *origin;
            p.searchable = searchable;
            Admission r = out.library.admit(std::move(p));
            if (!r.accepted()) {
                out.warnings.push_back({i, std::string(verdict_name(r.verdict)) + ": " + r.reason, {}});
            }
        } catch (const ParseError& e) {
            out.warnings.push_back({i, std::string("parse error: ") + e.what(), e.token()});
        } catch (const json::exception& e) {
            out.warnings.push_back({i, std::string("malformed atom entry: ") + e.what(), {}});
        }
    }
    return out;
}

KbLoad load_kb(const std::filesystem::path& path, const std::optional<Grid>& grid) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw KbError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return kb_from_string(ss.str(), grid);
}

}  // namespace atomforest
