#pragma once

// A small DOT reader kept separate from the emitter: it tokenizes the
// digraph grammar from scratch and knows nothing about how qda writes it.

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace qda::test {

struct DotGraph {
    std::string name;
    bool directed = false;
    std::map<std::string, std::string> graph_attrs;
    std::map<std::string, std::string> default_node_attrs;
    /// Node id -> attributes, in first-mention order.
    std::vector<std::pair<std::string, std::map<std::string, std::string>>> nodes;
    std::vector<std::pair<std::string, std::string>> edges;

    const std::map<std::string, std::string>* node(const std::string& id) const;
};

/// Throws std::runtime_error with the offending position on bad input.
DotGraph parse_dot(const std::string& text);

/// Canonical string of a rooted, labeled forest: children sorted by their
/// own encodings, ids ignored. Equal strings mean isomorphic forests.
/// Throws when the edge set is not a forest over `labels`' keys.
std::string forest_signature(const std::map<std::string, std::string>& labels,
                             const std::vector<std::pair<std::string, std::string>>& edges);

} // namespace qda::test
