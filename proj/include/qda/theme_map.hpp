#pragma once

#include "qda/model.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace qda::theme_map {

enum class Level { theme, subtheme, code };

std::string_view level_name(Level level);
Level level_from_name(std::string_view name);

struct Node {
    std::string id;
    std::string label;
    Level level = Level::code;
    /// Stand-in parent for an ungrouped bucket.
    bool pseudo = false;
    bool operator==(const Node&) const = default;
};

struct Edge {
    std::string parent_id;
    std::string child_id;
    bool operator==(const Edge&) const = default;
};

struct ThemeGraph {
    std::vector<Node> nodes;
    std::vector<Edge> edges;

    const Node* find(std::string_view id) const;
};

inline constexpr std::string_view ungrouped_subthemes_id = "ungrouped-subthemes";
inline constexpr std::string_view ungrouped_codes_id = "ungrouped-codes";

/// Problems that make `g` something other than a leveled forest: unknown
/// endpoints, duplicate ids, edges skipping a level, nodes with two parents.
std::vector<std::string> check_forest(const ThemeGraph& g);

/// Themes → subthemes → codes, with each non-empty ungrouped bucket hung
/// under an "Ungrouped" pseudo-node one level up. An empty hierarchy gives
/// an empty graph; otherwise the themes stage must be committed and
/// current (Error(stale_stage)).
ThemeGraph build_graph(const AnalysisSession& session);

/// Deterministic DOT text: nodes and edges sorted by id, labels quoted
/// and escaped. Throws Error(invalid_argument) if `g` is not a forest.
std::string emit_dot(const ThemeGraph& g);

/// Natural order on engine ids ("c9" < "c10").
bool id_less(std::string_view a, std::string_view b);

} // namespace qda::theme_map
