#include "fixtures.hpp"
#include "oracles.hpp"

#include "qda/error.hpp"
#include "qda/hierarchy.hpp"

#include <gtest/gtest.h>

using namespace qda;
using qda::test::mock_config;
using qda::test::request_for;

namespace {

const std::string kInterview =
    "The price went up twice this year. Support answered within an hour. The app crashed during login. "
    "I waited three days for a refund. The team was friendly on the phone. Billing emails arrive late.";

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::internal;
}

struct Analysed {
    Engine engine{mock_config()};
    std::string id;
    Analysed() {
        id = engine.create_session(request_for({kInterview})).id;
        qda::test::run_all_stages(engine, id);
    }
    AnalysisSession now() const { return engine.session(id); }
};

} // namespace

TEST(CreateSession, MinimalDocument) {
    Engine engine(mock_config());
    auto s = engine.create_session(request_for({"A B C"}));
    ASSERT_EQ(s.documents.size(), 1u);
    EXPECT_EQ(s.documents[0].id, "d1");
    EXPECT_EQ(s.documents[0].word_count, 3u);
    EXPECT_TRUE(s.codes.empty());
    for (Stage st : all_stages) EXPECT_FALSE(s.stage(st).committed);
    auto trail = engine.trail(s.id);
    ASSERT_EQ(trail.size(), 1u);
    EXPECT_EQ(trail[0].kind, audit::EventKind::session_created);
}

TEST(CreateSession, AcceptsLongInterviews) {
    std::mt19937_64 rng(3);
    Engine engine(mock_config());
    auto a = qda::test::random_document(rng, 2500);
    auto b = qda::test::random_document(rng, 3800);
    auto s = engine.create_session(request_for({a, b}));
    EXPECT_EQ(s.documents.size(), 2u);
    EXPECT_GE(s.documents[0].word_count, 2500u);
    EXPECT_EQ(s.documents[0].word_count, qda::test::oracle_tokens(a).size());
    EXPECT_EQ(s.documents[1].word_count, qda::test::oracle_tokens(b).size());
}

TEST(CreateSession, RejectsEmptyOrBlankBodies) {
    Engine engine(mock_config());
    EXPECT_EQ(code_of([&] { engine.create_session(request_for({""})); }), ErrorCode::empty_document);
    EXPECT_EQ(code_of([&] { engine.create_session(request_for({"ok", " \n\t"})); }), ErrorCode::empty_document);
    EXPECT_EQ(code_of([&] { engine.create_session(request_for({})); }), ErrorCode::empty_document);
    EXPECT_TRUE(engine.session_ids().empty());
}

TEST(CreateSession, RejectsDuplicateIds) {
    Engine engine(mock_config());
    CreateSessionRequest r;
    r.documents = {NewDocument{"x", "", "one"}, NewDocument{"x", "", "two"}};
    EXPECT_EQ(code_of([&] { engine.create_session(r); }), ErrorCode::duplicate_id);
    engine.create_session(request_for({"a"}, {}, "s1"));
    EXPECT_EQ(code_of([&] { engine.create_session(request_for({"a"}, {}, "s1")); }), ErrorCode::duplicate_id);
    CreateSessionRequest q = request_for({"a"});
    q.questions = {NewQuestion{"q", "first?"}, NewQuestion{"q", "second?"}};
    EXPECT_EQ(code_of([&] { engine.create_session(q); }), ErrorCode::duplicate_id);
}

TEST(CreateSession, RejectsBadSessionIdsAndInvalidUtf8) {
    Engine engine(mock_config());
    EXPECT_EQ(code_of([&] { engine.create_session(request_for({"a"}, {}, "../etc")); }), ErrorCode::invalid_argument);
    EXPECT_EQ(code_of([&] { engine.create_session(request_for({"bad \xff byte"})); }), ErrorCode::invalid_argument);
}

TEST(CreateSession, QuestionsGetDefaultIds) {
    Engine engine(mock_config());
    auto s = engine.create_session(request_for({"a"}, {"What frustrates users?", "What do they value?"}));
    ASSERT_EQ(s.research_questions.size(), 2u);
    EXPECT_EQ(s.research_questions[0].id, "q1");
    EXPECT_EQ(s.research_questions[1].id, "q2");
}

TEST(EditUnit, RenameMarksUserEdited) {
    Analysed a;
    auto code = a.now().codes.at(0);
    ASSERT_EQ(code.provenance, Provenance::machine_generated);
    auto out = a.engine.edit_unit(a.id, Stage::codes, code.id, mutation::Rename{"pricing complaints"});
    EXPECT_EQ(out.session.find_code(code.id)->name, "pricing complaints");
    EXPECT_EQ(out.session.find_code(code.id)->provenance, Provenance::user_edited);
    EXPECT_EQ(out.seq, out.session.last_seq);
}

TEST(EditUnit, EditMarksEveryLaterStageStale) {
    Analysed a;
    auto s = a.engine.edit_unit(a.id, Stage::codes, a.now().codes.at(0).id, mutation::Rename{"x"}).session;
    EXPECT_FALSE(s.stage(Stage::codes).stale);
    EXPECT_TRUE(s.stage(Stage::codes).nudge_stale);
    EXPECT_TRUE(s.stage(Stage::subthemes).stale);
    EXPECT_TRUE(s.stage(Stage::themes).stale);
    EXPECT_TRUE(s.stage(Stage::summary).stale);
}

TEST(EditUnit, ThemeEditOnlyStalesSummary) {
    Analysed a;
    auto s = a.engine.edit_unit(a.id, Stage::themes, a.now().themes.at(0).id, mutation::Rename{"x"}).session;
    EXPECT_FALSE(s.stage(Stage::codes).stale);
    EXPECT_FALSE(s.stage(Stage::subthemes).stale);
    EXPECT_FALSE(s.stage(Stage::themes).stale);
    EXPECT_TRUE(s.stage(Stage::summary).stale);
}

TEST(EditUnit, AddChunkMustBeVerbatim) {
    Analysed a;
    auto before = a.now();
    EXPECT_EQ(code_of([&] {
                  a.engine.edit_unit(a.id, Stage::codes, before.codes[0].id,
                                     mutation::AddChunk{"d1", "this sentence is not in the interview", {}});
              }),
              ErrorCode::chunk_not_verbatim);
    EXPECT_EQ(a.now(), before);
}

TEST(EditUnit, AddChunkOverlappingExistingChunkIsRejected) {
    Analysed a;
    auto before = a.now();
    EXPECT_EQ(code_of([&] {
                  a.engine.edit_unit(a.id, Stage::codes, before.codes[0].id,
                                     mutation::AddChunk{"d1", "Support answered", {}});
              }),
              ErrorCode::chunk_overlap);
}

TEST(EditUnit, RemoveThenAddChunk) {
    Analysed a;
    auto s = a.now();
    const auto& code = s.codes[0];
    auto chunk = *s.find_chunk(code.chunk_ids[0]);
    auto after = a.engine.edit_unit(a.id, Stage::codes, code.id, mutation::RemoveChunk{chunk.chunk_id}).session;
    EXPECT_EQ(after.find_chunk(chunk.chunk_id), nullptr);
    EXPECT_LT(after.coverage_report->overall_jaccard, 1.0);
    auto out = a.engine.edit_unit(a.id, Stage::codes, s.codes[1].id, mutation::AddChunk{"d1", chunk.text, {}});
    auto added = out.session.find_chunk(out.result.at("assigned_id").get<std::string>());
    ASSERT_NE(added, nullptr);
    EXPECT_EQ(added->start_offset, chunk.start_offset);
    EXPECT_EQ(added->code_id, s.codes[1].id);
    EXPECT_EQ(out.session.coverage_report->overall_jaccard, 1.0);
    EXPECT_TRUE(check_hierarchy(out.session).empty());
}

TEST(EditUnit, DeleteSubthemeNeedsCascade) {
    Analysed a;
    auto s = a.now();
    const auto& sub = s.subthemes.at(0);
    ASSERT_EQ(sub.code_ids.size(), 2u);
    EXPECT_EQ(code_of([&] { a.engine.edit_unit(a.id, Stage::subthemes, sub.id, mutation::DeleteUnit{false}); }),
              ErrorCode::has_children);
    auto out = a.engine.edit_unit(a.id, Stage::subthemes, sub.id, mutation::DeleteUnit{true});
    EXPECT_EQ(out.session.find_subtheme(sub.id), nullptr);
    for (const auto& cid : sub.code_ids) {
        EXPECT_NE(std::find(out.session.ungrouped_codes.begin(), out.session.ungrouped_codes.end(), cid),
                  out.session.ungrouped_codes.end());
    }
    EXPECT_TRUE(qda::test::partition_problems(out.session).empty());
    EXPECT_EQ(out.result.at("tombstone").at("unit").at("id"), sub.id);
}

TEST(EditUnit, DeletingMachineCodeLeavesTombstoneEvent) {
    Analysed a;
    auto code = a.now().codes.at(0);
    a.engine.edit_unit(a.id, Stage::codes, code.id, mutation::DeleteUnit{true});
    auto last = a.engine.trail(a.id).back();
    EXPECT_EQ(last.kind, audit::EventKind::edit);
    EXPECT_EQ(last.payload.at("result").at("tombstone").at("unit").at("name"), code.name);
    EXPECT_EQ(last.payload.at("result").at("tombstone").at("chunks").size(), code.chunk_ids.size());
}

TEST(EditUnit, UnknownUnit) {
    Analysed a;
    EXPECT_EQ(code_of([&] { a.engine.edit_unit(a.id, Stage::codes, "c999", mutation::Rename{"x"}); }),
              ErrorCode::unknown_unit);
}

TEST(EditUnit, AddUnitAndReassign) {
    Analysed a;
    auto s = a.now();
    auto out = a.engine.edit_unit(a.id, Stage::subthemes, "", mutation::AddUnit{"new group", std::nullopt, ""});
    auto sid = out.result.at("assigned_id").get<std::string>();
    EXPECT_NE(std::find(out.session.ungrouped_subthemes.begin(), out.session.ungrouped_subthemes.end(), sid),
              out.session.ungrouped_subthemes.end());
    auto moved = a.engine.edit_unit(a.id, Stage::codes, s.codes[0].id, mutation::ReassignParent{sid}).session;
    EXPECT_EQ(moved.find_code(s.codes[0].id)->subtheme_id, sid);
    EXPECT_TRUE(qda::test::partition_problems(moved).empty());
    EXPECT_TRUE(moved.stage(Stage::themes).stale);
}

TEST(EditUnit, EditsBeforeGenerationAreRefused) {
    Engine engine(mock_config());
    auto id = engine.create_session(request_for({kInterview})).id;
    EXPECT_EQ(code_of([&] { engine.edit_unit(id, Stage::codes, "c1", mutation::Rename{"x"}); }),
              ErrorCode::precondition_failed);
}

TEST(Memos, StoredWithStage) {
    Analysed a;
    auto m = a.engine.add_memo(a.id, Stage::codes, "merged two overlapping codes");
    EXPECT_EQ(m.stage, Stage::codes);
    EXPECT_EQ(m.text, "merged two overlapping codes");
    EXPECT_EQ(m.author, "analyst");
}

TEST(Memos, EmptyTextRejected) {
    Analysed a;
    EXPECT_EQ(code_of([&] { a.engine.add_memo(a.id, Stage::codes, ""); }), ErrorCode::empty_text);
    EXPECT_EQ(code_of([&] { a.engine.add_memo(a.id, Stage::codes, "  \n"); }), ErrorCode::empty_text);
}

TEST(Memos, KeptInInsertionOrder) {
    Analysed a;
    a.engine.add_memo(a.id, Stage::themes, "first");
    a.engine.add_memo(a.id, Stage::codes, "second");
    auto memos = a.now().memos;
    ASSERT_EQ(memos.size(), 2u);
    EXPECT_EQ(memos[0].text, "first");
    EXPECT_EQ(memos[1].text, "second");
}

TEST(Provenance, NeverFlipsBackAcrossRegeneration) {
    Analysed a;
    auto code = a.now().codes.at(1);
    a.engine.edit_unit(a.id, Stage::codes, code.id, mutation::Rename{"kept by analyst"});
    auto s = a.engine.run_stage(a.id, chain::StageParameters{Stage::codes, 3, std::nullopt});
    auto* kept = s.find_code(code.id);
    ASSERT_NE(kept, nullptr);
    EXPECT_EQ(kept->provenance, Provenance::user_edited);
    EXPECT_EQ(kept->name, "kept by analyst");
    EXPECT_TRUE(check_hierarchy(s).empty());
}

TEST(SessionDocument, JsonRoundTrip) {
    Analysed a;
    a.engine.add_memo(a.id, Stage::codes, "memo");
    auto s = a.now();
    json j = s;
    EXPECT_EQ(j.at("schema"), "qda-session");
    EXPECT_EQ(j.get<AnalysisSession>(), s);
    EXPECT_EQ(json::parse(a.engine.session_document(a.id)).get<AnalysisSession>(), s);
}

TEST(Timestamps, IsoRoundTrip) {
    Timestamp t{1735689600123};
    EXPECT_EQ(to_iso8601(t), "2025-01-01T00:00:00.123Z");
    EXPECT_EQ(parse_iso8601(to_iso8601(t)), t);
}

TEST(Enums, NamesRoundTrip) {
    for (Stage s : all_stages) EXPECT_EQ(stage_from_name(stage_name(s)), s);
    EXPECT_THROW(stage_from_name("bogus"), Error);
    EXPECT_EQ(confidence_from_name("ambiguous"), Confidence::ambiguous);
    EXPECT_EQ(provenance_name(Provenance::user_edited), "user_edited");
}

TEST(Mutations, JsonRoundTrip) {
    std::vector<Mutation> all{mutation::Rename{"n"},
                              mutation::AddChunk{"d1", "text", 4},
                              mutation::RemoveChunk{"k3"},
                              mutation::AddUnit{"u", "s2", "desc"},
                              mutation::DeleteUnit{true},
                              mutation::ReassignParent{std::nullopt}};
    for (const auto& m : all) EXPECT_EQ(mutation_to_json(mutation_from_json(mutation_to_json(m))), mutation_to_json(m));
    EXPECT_THROW(mutation_from_json(json{{"type", "split"}}), Error);
}
