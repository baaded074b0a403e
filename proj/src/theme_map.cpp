#include "qda/theme_map.hpp"

#include "qda/error.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace qda::theme_map {

std::string_view level_name(Level level) {
    switch (level) {
    case Level::theme: return "theme";
    case Level::subtheme: return "subtheme";
    case Level::code: return "code";
    }
    return "code";
}

Level level_from_name(std::string_view name) {
    if (name == "theme") return Level::theme;
    if (name == "subtheme") return Level::subtheme;
    if (name == "code") return Level::code;
    throw Error(ErrorCode::invalid_argument, "unknown graph level '" + std::string(name) + "'");
}

const Node* ThemeGraph::find(std::string_view id) const {
    for (const auto& n : nodes) {
        if (n.id == id) return &n;
    }
    return nullptr;
}

bool id_less(std::string_view a, std::string_view b) {
    auto split = [](std::string_view s) {
        std::size_t i = s.size();
        while (i > 0 && s[i - 1] >= '0' && s[i - 1] <= '9') --i;
        return std::pair{s.substr(0, i), s.substr(i)};
    };
    auto [pa, na] = split(a);
    auto [pb, nb] = split(b);
    if (pa != pb || na.empty() || nb.empty()) return a < b;
    // Compare digit runs numerically without overflow.
    auto strip = [](std::string_view d) {
        while (d.size() > 1 && d.front() == '0') d.remove_prefix(1);
        return d;
    };
    auto da = strip(na), db = strip(nb);
    if (da.size() != db.size()) return da.size() < db.size();
    if (da != db) return da < db;
    return a < b;
}

std::vector<std::string> check_forest(const ThemeGraph& g) {
    std::vector<std::string> problems;
    std::map<std::string, const Node*> by_id;
    for (const auto& n : g.nodes) {
        if (!by_id.emplace(n.id, &n).second) problems.push_back("duplicate node id " + n.id);
    }
    std::map<std::string, std::string> parent;
    for (const auto& e : g.edges) {
        auto p = by_id.find(e.parent_id);
        auto c = by_id.find(e.child_id);
        if (p == by_id.end() || c == by_id.end()) {
            problems.push_back("edge " + e.parent_id + " -> " + e.child_id + " has an unknown endpoint");
            continue;
        }
        if (static_cast<int>(c->second->level) != static_cast<int>(p->second->level) + 1) {
            problems.push_back("edge " + e.parent_id + " -> " + e.child_id + " does not join adjacent levels");
        }
        if (!parent.emplace(e.child_id, e.parent_id).second) {
            problems.push_back("node " + e.child_id + " has more than one parent");
        }
    }
    return problems;
}

ThemeGraph build_graph(const AnalysisSession& s) {
    ThemeGraph g;
    if (s.codes.empty() && s.subthemes.empty() && s.themes.empty()) return g;
    const auto& state = s.stage(Stage::themes);
    if (!state.committed || state.stale) {
        throw Error(ErrorCode::stale_stage, state.committed ? "themes stage is stale; regenerate it first"
                                                            : "themes stage has not been generated",
                    json{{"committed", state.committed}, {"stale", state.stale}});
    }

    for (const auto& t : s.themes) {
        g.nodes.push_back({t.id, t.name, Level::theme, false});
        for (const auto& sid : t.subtheme_ids) g.edges.push_back({t.id, sid});
    }
    if (!s.ungrouped_subthemes.empty()) {
        g.nodes.push_back({std::string(ungrouped_subthemes_id), "Ungrouped", Level::theme, true});
        for (const auto& sid : s.ungrouped_subthemes) g.edges.push_back({std::string(ungrouped_subthemes_id), sid});
    }
    for (const auto& st : s.subthemes) {
        g.nodes.push_back({st.id, st.name, Level::subtheme, false});
        for (const auto& cid : st.code_ids) g.edges.push_back({st.id, cid});
    }
    if (!s.ungrouped_codes.empty()) {
        g.nodes.push_back({std::string(ungrouped_codes_id), "Ungrouped", Level::subtheme, true});
        for (const auto& cid : s.ungrouped_codes) g.edges.push_back({std::string(ungrouped_codes_id), cid});
    }
    for (const auto& c : s.codes) g.nodes.push_back({c.id, c.name, Level::code, false});
    return g;
}

namespace {

std::string quote(std::string_view text) {
    std::string out = "\"";
    for (char c : text) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': break;
        default: out += c;
        }
    }
    out += '"';
    return out;
}

} // namespace

std::string emit_dot(const ThemeGraph& g) {
    if (auto problems = check_forest(g); !problems.empty()) {
        throw Error(ErrorCode::invalid_argument, "theme graph is not a forest: " + problems.front());
    }
    std::vector<const Node*> nodes;
    for (const auto& n : g.nodes) nodes.push_back(&n);
    std::sort(nodes.begin(), nodes.end(), [](const Node* a, const Node* b) { return id_less(a->id, b->id); });
    std::vector<const Edge*> edges;
    for (const auto& e : g.edges) edges.push_back(&e);
    std::sort(edges.begin(), edges.end(), [](const Edge* a, const Edge* b) {
        if (a->parent_id != b->parent_id) return id_less(a->parent_id, b->parent_id);
        return id_less(a->child_id, b->child_id);
    });

    std::string out = "digraph theme_map {\n  rankdir=LR;\n  node [shape=box];\n";
    for (const auto* n : nodes) {
        out += "  " + quote(n->id) + " [label=" + quote(n->label) + ", level=" + quote(level_name(n->level));
        if (n->pseudo) out += ", style=dashed";
        out += "];\n";
    }
    for (const auto* e : edges) out += "  " + quote(e->parent_id) + " -> " + quote(e->child_id) + ";\n";
    out += "}\n";
    return out;
}

} // namespace qda::theme_map
