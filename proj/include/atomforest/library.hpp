#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <functional>
#include <vector>

#include "atomforest/expr.hpp"
#include "atomforest/grid.hpp"

namespace atomforest {

enum class Origin { seed, eml, sol, product, nesting, discovered };

std::string_view origin_name(Origin o);
std::optional<Origin> origin_from_name(std::string_view name);

/// A function and its exact derivative, sampled on the library's points.
struct AtomPair {
    Expr f;
    Expr fprime;
    std::vector<double> values;
    std::vector<double> dvalues;
    int layer = 0;
    int depth = 0;
    Origin origin = Origin::seed;
    bool searchable = true;
};

struct BuildConfig {
    int p_min = -4, p_max = 15;
    int q_min = 1, q_max = 4;
    int slope_min = -3, slope_max = 3;  // zero is skipped
    int offset_min = -3, offset_max = 3;
    int quad_min = -2, quad_max = 2;  // q = 0 is skipped for the leading coefficient
    int d_max = 2;
    std::size_t max_atoms = 50000;
    double rho = 0.999;
    /// Candidates with any |value| or |derivative| above this are discarded.
    double max_abs_value = 1e12;
    /// Grid libraries only: between neighbouring points, f must move by the
    /// trapezoid integral of f' to within this fraction of dx * max|f'|.
    /// Catches atoms that oscillate faster than the grid or have a pole
    /// between two points.
    double max_trapezoid_gap = 0.1;

    /// Throws std::invalid_argument naming the bad field.
    void validate() const;
    friend bool operator==(const BuildConfig&, const BuildConfig&) = default;
};

enum class Verdict { accepted, non_finite, too_large, unresolved, constant, duplicate_key, correlated, capped, mismatch };

std::string_view verdict_name(Verdict v);

struct Admission {
    Verdict verdict = Verdict::accepted;
    /// Index of the new atom when accepted; of the clashing atom for
    /// duplicate_key and correlated.
    std::size_t index = 0;
    double correlation = 0.0;
    std::string reason;

    bool accepted() const { return verdict == Verdict::accepted; }
};

struct LayerStats {
    int layer = 0;
    int round = 0;
    std::size_t candidates = 0;
    std::size_t admitted = 0;
    std::size_t non_finite = 0;
    std::size_t unresolved = 0;
    std::size_t duplicate = 0;  // key collisions and correlated
    std::size_t capped = 0;
    std::size_t other = 0;
};

/// Finds stored vectors whose |Pearson correlation| with a query exceeds rho.
///
/// Vectors are centred and normalised, then projected onto a few fixed
/// orthonormal directions. Two unit vectors with |u.v| > rho are within
/// sqrt(2(1 - rho)) of each other (or of the negation), so a grid over the
/// projections with that cell size only needs the 3^P neighbouring cells.
class CorrelationIndex {
public:
    CorrelationIndex(const Samples& samples, double rho);

    /// Centred unit vector, or nothing when v has (numerically) no variance.
    std::optional<std::vector<double>> unit(std::span<const double> v) const;

    struct Match {
        std::size_t id;
        double correlation;
    };
    /// First stored vector (lowest id) with |corr| > rho.
    std::optional<Match> find(std::span<const double> unit) const;
    void insert(std::size_t id, std::vector<double> unit);
    /// Largest |corr| against everything stored; brute force.
    double max_abs_correlation(std::span<const double> unit) const;

    double rho() const { return rho_; }
    std::size_t size() const { return ids_.size(); }

private:
    static constexpr int k_dims = 4;
    using Cell = std::array<std::int32_t, k_dims>;

    Cell cell_of(std::span<const double> unit, double sign) const;
    static std::uint64_t hash(const Cell& c);

    std::size_t n_ = 0;
    double rho_;
    double width_;
    std::vector<std::vector<double>> directions_;
    std::vector<double> units_;  // row per stored vector
    std::vector<std::size_t> ids_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

/// Ordered, deduplicated collection of atoms over a fixed set of sample points.
/// Atom 0 is always the constant 1 (derivative 0), stored but not searchable.
class AtomLibrary {
public:
    /// Empty library (just the constant atom) on a one-variable grid.
    explicit AtomLibrary(Grid grid, BuildConfig cfg = {});
    /// Empty library on arbitrary samples; derivatives are taken with
    /// respect to variable `wrt`.
    AtomLibrary(Samples samples, BuildConfig cfg, int wrt = 0);

    /// Layers 0 and 1, then 2, 3 and the first nesting round when
    /// d_max >= 2, then the second nesting round when d_max = 3.
    static AtomLibrary build(Grid grid, const BuildConfig& cfg);

    LayerStats build_layer0();
    LayerStats build_layer1();
    LayerStats build_layer2();
    LayerStats build_layer3();
    /// round 1 nests earlier atoms, round 2 nests round-1 nestings.
    LayerStats build_layer4(int round);

    /// Computes the derivative and samples, then applies the admission rules.
    Admission admit(const Expr& f, int layer, int depth, Origin origin, bool searchable = true);
    /// Admission for a fully populated pair; fprime must match differentiate(f).
    Admission admit(AtomPair candidate);
    /// Adds a verified discovery (origin = discovered).
    Admission fold_in(const Expr& f);

    const std::vector<AtomPair>& atoms() const { return atoms_; }
    const AtomPair& operator[](std::size_t i) const { return atoms_.at(i); }
    std::size_t size() const { return atoms_.size(); }
    std::vector<std::size_t> searchable_indices() const;
    std::optional<std::size_t> find(const std::string& canonical_key) const;

    const Samples& samples() const { return samples_; }
    const std::optional<Grid>& grid() const { return grid_; }
    const BuildConfig& config() const { return cfg_; }
    int wrt() const { return wrt_; }
    const std::vector<LayerStats>& stats() const { return stats_; }
    const CorrelationIndex& index() const { return index_; }

private:
    struct Candidate;
    struct Stripped {
        Expr s;
        std::vector<double> v;
        char family = 0;
    };
    Admission admit_pair(AtomPair c, bool verify);
    Admission screen(std::span<const double> values, std::span<const double> dvalues) const;
    std::optional<std::size_t> offer(LayerStats& st, Candidate&& c);
    const Stripped& stripped(std::size_t i);
    LayerStats finish(LayerStats st);

    Samples samples_;
    std::optional<Grid> grid_;
    BuildConfig cfg_;
    int wrt_ = 0;
    std::vector<AtomPair> atoms_;
    std::unordered_map<std::string, std::size_t> keys_;
    CorrelationIndex index_;
    std::vector<LayerStats> stats_;
    // Indices of atoms used as factors and nesting arguments.
    std::vector<std::size_t> bases_;
    std::vector<std::size_t> cross_;
    std::vector<std::size_t> nested_;
    std::unordered_map<std::size_t, Stripped> stripped_;
};

}  // namespace atomforest
