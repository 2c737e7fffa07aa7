#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "atomforest/library.hpp"

namespace atomforest {

inline constexpr int k_kb_version = 1;

/// File-level failure: unreadable, not JSON, wrong version, missing fields.
class KbError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A single atom that could not be restored. Loading continues without it.
struct KbWarning {
    std::size_t atom = 0;
    std::string reason;
    std::string token;  // offending op tag on parse failures
};

struct KbLoad {
    AtomLibrary library;
    std::vector<KbWarning> warnings;
};

/// Deterministic text: the same library always serialises to the same bytes.
/// Only expressions and metadata are written; samples are recomputed on load.
std::string kb_to_string(const AtomLibrary& lib);
void save_kb(const AtomLibrary& lib, const std::filesystem::path& path);

/// Re-evaluates every atom on `grid` (or the grid stored in the file) and
/// re-applies the admission rules in file order.
KbLoad kb_from_string(const std::string& text, const std::optional<Grid>& grid = std::nullopt);
KbLoad load_kb(const std::filesystem::path& path, const std::optional<Grid>& grid = std::nullopt);

}  // namespace atomforest
