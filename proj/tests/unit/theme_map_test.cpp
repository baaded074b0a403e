#include "dot_parser.hpp"
#include "fixtures.hpp"

#include "qda/error.hpp"
#include "qda/theme_map.hpp"

#include <gtest/gtest.h>

using namespace qda;
using namespace qda::theme_map;
using qda::test::forest_signature;
using qda::test::parse_dot;

namespace {

using Params = chain::StageParameters;

const char* kFour = "Prices rose. Support was slow. The app crashed. Refunds were late.";

AnalysisSession themed_session(Engine& engine, const char* body) {
    auto id = engine.create_session(qda::test::request_for({body})).id;
    for (auto st : {Stage::codes, Stage::subthemes, Stage::themes}) engine.run_stage(id, Params{st, std::nullopt, std::nullopt});
    return engine.session(id);
}

// Session-free graph with the committed themes stage the builder wants.
AnalysisSession bare_session() {
    AnalysisSession s;
    s.stage(Stage::themes).committed = true;
    return s;
}

std::string level_label(const std::map<std::string, std::string>& attrs) {
    return attrs.at("level") + ":" + attrs.at("label");
}

std::string signature_of(const ThemeGraph& g) {
    std::map<std::string, std::string> labels;
    for (const auto& n : g.nodes) labels[n.id] = std::string(level_name(n.level)) + ":" + n.label;
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& e : g.edges) edges.emplace_back(e.parent_id, e.child_id);
    return forest_signature(labels, edges);
}

std::string signature_of(const qda::test::DotGraph& d) {
    std::map<std::string, std::string> labels;
    for (const auto& [id, attrs] : d.nodes) labels[id] = level_label(attrs);
    return forest_signature(labels, d.edges);
}

} // namespace

TEST(ThemeMap, OneThemeTwoSubthemesFourCodes) {
    Engine engine(qda::test::mock_config(json{{"echo", {{"default_codes", 4}}}}));
    auto s = themed_session(engine, kFour);
    ASSERT_EQ(s.codes.size(), 4u);
    ASSERT_EQ(s.subthemes.size(), 2u);
    ASSERT_EQ(s.themes.size(), 1u);
    auto dot = parse_dot(emit_dot(build_graph(s)));
    EXPECT_TRUE(dot.directed);
    EXPECT_EQ(dot.nodes.size(), 7u);
    EXPECT_EQ(dot.edges.size(), 6u);
    for (const auto& [id, attrs] : dot.nodes) EXPECT_TRUE(s.has_unit(id)) << id;
    EXPECT_EQ(signature_of(dot), signature_of(build_graph(s)));
}

TEST(ThemeMap, EmptyHierarchyGivesEmptyGraph) {
    AnalysisSession s;
    auto g = build_graph(s);
    EXPECT_TRUE(g.nodes.empty());
    auto dot = parse_dot(emit_dot(g));
    EXPECT_TRUE(dot.nodes.empty());
    EXPECT_TRUE(dot.edges.empty());
}

TEST(ThemeMap, UngroupedCodeHangsUnderPseudoNode) {
    auto s = bare_session();
    s.codes = {{"c1", "grouped", {}, Provenance::machine_generated, "s1"},
               {"c2", "loose", {}, Provenance::machine_generated, std::nullopt}};
    s.subthemes = {{"s1", "group", {"c1"}, Provenance::machine_generated, "t1"}};
    s.themes = {{"t1", "theme", "", {"s1"}, Provenance::machine_generated, {}}};
    s.ungrouped_codes = {"c2"};
    auto g = build_graph(s);
    const auto* pseudo = g.find(ungrouped_codes_id);
    ASSERT_NE(pseudo, nullptr);
    EXPECT_TRUE(pseudo->pseudo);
    EXPECT_EQ(pseudo->level, Level::subtheme);
    EXPECT_NE(std::find(g.edges.begin(), g.edges.end(), Edge{std::string(ungrouped_codes_id), "c2"}), g.edges.end());
    auto dot = parse_dot(emit_dot(g));
    EXPECT_EQ(dot.node(std::string(ungrouped_codes_id))->at("style"), "dashed");
    EXPECT_EQ(dot.nodes.size(), 5u);
}

TEST(ThemeMap, SingleNode) {
    auto s = bare_session();
    s.themes = {{"t1", "lonely", "", {}, Provenance::machine_generated, {}}};
    auto dot = parse_dot(emit_dot(build_graph(s)));
    ASSERT_EQ(dot.nodes.size(), 1u);
    EXPECT_EQ(dot.nodes[0].second.at("label"), "lonely");
    EXPECT_TRUE(dot.edges.empty());
}

TEST(ThemeMap, LabelsWithQuotesAndBackslashesSurvive) {
    auto s = bare_session();
    std::string name = "the \"best\" part \\ of it\nreally";
    s.themes = {{"t1", name, "", {}, Provenance::machine_generated, {}}};
    auto dot = parse_dot(emit_dot(build_graph(s)));
    EXPECT_EQ(dot.node("t1")->at("label"), name);
}

TEST(ThemeMap, OutputIsDeterministicAndSortedNaturally) {
    auto s = bare_session();
    for (int i = 12; i >= 1; --i) {
        s.codes.push_back({"c" + std::to_string(i), "code " + std::to_string(i), {}, Provenance::machine_generated, "s1"});
    }
    SubTheme st{"s1", "all", {}, Provenance::machine_generated, "t1"};
    for (const auto& c : s.codes) st.code_ids.push_back(c.id);
    s.subthemes = {st};
    s.themes = {{"t1", "theme", "", {"s1"}, Provenance::machine_generated, {}}};
    auto text = emit_dot(build_graph(s));
    EXPECT_EQ(text, emit_dot(build_graph(s)));
    EXPECT_LT(text.find("\"c2\" ["), text.find("\"c10\" ["));
    EXPECT_TRUE(id_less("c9", "c10"));
    EXPECT_FALSE(id_less("c10", "c9"));
    EXPECT_TRUE(id_less("c1", "s1"));
}

TEST(ThemeMap, StaleThemesRefused) {
    Engine engine(qda::test::mock_config(json{{"echo", {{"default_codes", 4}}}}));
    auto s = themed_session(engine, kFour);
    engine.edit_unit(s.id, Stage::codes, s.codes[0].id, mutation::Rename{"new name"});
    try {
        engine.theme_map_dot(s.id);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::stale_stage);
    }
    auto fresh = engine.create_session(qda::test::request_for({kFour})).id;
    engine.run_stage(fresh, Params{Stage::codes, std::nullopt, std::nullopt});
    EXPECT_THROW(engine.theme_map_dot(fresh), Error);
}

TEST(ThemeMap, NonForestRejected) {
    ThemeGraph g;
    g.nodes = {{"t1", "a", Level::theme, false}, {"t2", "b", Level::theme, false}, {"s1", "c", Level::subtheme, false}};
    g.edges = {{"t1", "s1"}, {"t2", "s1"}};
    EXPECT_FALSE(check_forest(g).empty());
    EXPECT_THROW(emit_dot(g), Error);
    g.edges = {{"t1", "t2"}};
    EXPECT_FALSE(check_forest(g).empty());
    g.edges = {{"t1", "zz"}};
    EXPECT_FALSE(check_forest(g).empty());
}

TEST(ThemeMap, RandomHierarchiesRoundTrip) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        auto s = bare_session();
        int n_themes = static_cast<int>(rng() % 4);
        int n_sub = static_cast<int>(rng() % 6);
        int n_codes = static_cast<int>(rng() % 10);
        for (int t = 1; t <= n_themes; ++t) s.themes.push_back({"t" + std::to_string(t), "T" + std::to_string(rng() % 3), "", {}, Provenance::machine_generated, {}});
        for (int i = 1; i <= n_sub; ++i) {
            SubTheme st{"s" + std::to_string(i), "S" + std::to_string(rng() % 3), {}, Provenance::machine_generated, std::nullopt};
            if (n_themes > 0 && rng() % 4 != 0) {
                auto& t = s.themes[rng() % s.themes.size()];
                st.theme_id = t.id;
                t.subtheme_ids.push_back(st.id);
            } else {
                s.ungrouped_subthemes.push_back(st.id);
            }
            s.subthemes.push_back(st);
        }
        for (int i = 1; i <= n_codes; ++i) {
            OpenCode c{"c" + std::to_string(i), "C \"" + std::to_string(rng() % 3) + "\"", {}, Provenance::machine_generated, std::nullopt};
            if (n_sub > 0 && rng() % 4 != 0) {
                auto& st = s.subthemes[rng() % s.subthemes.size()];
                c.subtheme_id = st.id;
                st.code_ids.push_back(c.id);
            } else {
                s.ungrouped_codes.push_back(c.id);
            }
            s.codes.push_back(c);
        }
        auto g = build_graph(s);
        ASSERT_TRUE(check_forest(g).empty());
        auto dot = parse_dot(emit_dot(g));
        ASSERT_EQ(dot.nodes.size(), g.nodes.size());
        ASSERT_EQ(dot.edges.size(), g.edges.size());
        ASSERT_EQ(signature_of(dot), signature_of(g)) << emit_dot(g);
    }
}
