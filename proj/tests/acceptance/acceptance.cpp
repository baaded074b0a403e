// One line per acceptance criterion; exits non-zero if any fails.

#include "dot_parser.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "process.hpp"

#include "qda/codebook.hpp"
#include "qda/error.hpp"
#include "qda/pipeline.hpp"
#include "qda/theme_map.hpp"
#include "qda/validation.hpp"

#include <httplib.h>

#include <signal.h>
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

using namespace qda;
using qda::test::mock_config;
using qda::test::request_for;
namespace fs = std::filesystem;

namespace {

using Steady = std::chrono::steady_clock;
using Params = chain::StageParameters;

/// Thrown by check() with the first mismatch.
struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
    if (!ok) throw Failure(what);
}

double seconds_since(Steady::time_point t0) { return std::chrono::duration<double>(Steady::now() - t0).count(); }

std::string fmt(double v, int digits = 3) {
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(digits);
    o << v;
    return o.str();
}

// ---------------------------------------------------------------- jaccard

std::string jaccard_equivalence() {
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<std::size_t> size(0, 10000);
    std::uniform_int_distribution<std::size_t> vocab(0, 14999);
    double engine_time = 0;
    for (int i = 0; i < 1000; ++i) {
        std::size_t na = i == 0 ? 0 : i == 1 ? 10000 : size(rng);
        std::size_t nb = i == 0 ? 0 : i == 1 ? 10000 : size(rng);
        std::vector<std::string> a, b;
        for (std::size_t k = 0; k < na; ++k) a.push_back("w" + std::to_string(vocab(rng)));
        for (std::size_t k = 0; k < nb; ++k) b.push_back("w" + std::to_string(vocab(rng)));
        auto t0 = Steady::now();
        double got = validation::jaccard(validation::WordSet::from_words(a), validation::WordSet::from_words(b));
        engine_time += seconds_since(t0);
        double want = qda::test::jaccard_merge(a, b);
        check(got == want, "pair " + std::to_string(i) + ": " + fmt(got, 17) + " != " + fmt(want, 17));
    }
    check(engine_time < 10.0, "took " + fmt(engine_time) + " s");
    return "1000 pairs exact, " + fmt(engine_time) + " s";
}

// ---------------------------------------------------------------- verbatim

std::string verbatim_round_trip() {
    std::mt19937_64 rng(1002);
    int mutations = 0;
    for (int i = 0; i < 1000; ++i) {
        auto body = qda::test::random_document(rng, 20 + rng() % 200);
        std::size_t start = rng() % body.size();
        std::size_t end = start + 1 + rng() % (body.size() - start);
        std::string text = body.substr(start, end - start);
        check(validation::verify_verbatim(body, start, end, text).ok, "extraction " + std::to_string(i) + " rejected");
        // every non-whitespace position of the chunk, one at a time
        for (std::size_t pos = 0; pos < text.size(); ++pos) {
            if (std::isspace(static_cast<unsigned char>(text[pos]))) continue;
            std::string mutated = text;
            mutated[pos] = static_cast<char>(mutated[pos] == 'Q' ? 'R' : 'Q');
            check(!validation::verify_verbatim(body, start, end, mutated).ok,
                  "mutation at " + std::to_string(pos) + " of extraction " + std::to_string(i) + " accepted");
            ++mutations;
        }
    }
    return "1000 extractions pass, " + std::to_string(mutations) + " single-character mutations all fail";
}

// ---------------------------------------------------------------- perfect echo

std::string perfect_echo() {
    std::mt19937_64 rng(1003);
    int sessions = 0;
    for (int i = 0; i < 30; ++i) {
        std::vector<std::string> docs;
        for (std::size_t d = 0, n = 1 + rng() % 3; d < n; ++d) docs.push_back(qda::test::random_document(rng, 10 + rng() % 300));
        Engine engine(mock_config(json{{"echo", {{"default_codes", 1 + rng() % 9}}}}));
        auto id = engine.create_session(request_for(docs)).id;
        auto s = qda::test::run_all_stages(engine, id);
        check(s.stage(Stage::summary).committed, "session " + std::to_string(i) + " did not finish");
        auto cov = engine.coverage(id);
        check(cov.overall_jaccard == 1.0, "session " + std::to_string(i) + " coverage " + fmt(cov.overall_jaccard, 6));
        for (const auto& d : cov.per_document) check(d.jaccard == 1.0, "document " + d.document_id + " below 1.0");
        ++sessions;
    }
    return std::to_string(sessions) + " random multi-document sessions, overall coverage 1.0";
}

// ---------------------------------------------------------------- scripted damage

std::string scripted_damage() {
    // hand fixture: "the cat sat" coded out of "the cat sat on the mat"
    auto script = json{{"responses", {qda::test::scripted("codes.v1", qda::test::codes_reply({{"cats", {{"d1", "the cat sat"}}}}))}}};
    Engine engine(mock_config(script));
    auto id = engine.create_session(request_for({"the cat sat on the mat"})).id;
    auto s = engine.run_stage(id, Params{Stage::codes, std::nullopt, std::nullopt});
    check(s.coverage_report && s.coverage_report->overall_jaccard == 3.0 / 5.0,
          "hand fixture gave " + fmt(s.coverage_report ? s.coverage_report->overall_jaccard : -1, 6));

    // echo drops a known word set from every document of the corpus
    auto corpus = fs::path(qda::test::test_data_dir) / "corpus";
    std::size_t checked = 0;
    for (double f : {0.5, 0.25, 0.1}) {
        auto table = run_eval(corpus, EvalOptions{}, mock_config(json{{"echo", {{"drop_word_fraction", f}}}}));
        for (const auto& d : table.documents) {
            auto tokens = qda::test::oracle_tokens(qda::test::read_file(corpus / d.genre / d.document));
            double n = static_cast<double>(std::set<std::string>(tokens.begin(), tokens.end()).size());
            double expected = (n - std::floor(n * f)) / n;
            check(d.mean && *d.mean == expected, d.genre + "/" + d.document + " at " + fmt(f, 2) + ": got " +
                                                      (d.mean ? fmt(*d.mean, 9) : std::string("none")) + ", want " +
                                                      fmt(expected, 9));
            ++checked;
        }
    }
    return "hand fixture 3/5 exact; " + std::to_string(checked) + " corpus runs equal the computed value";
}

// ---------------------------------------------------------------- replay equality

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
    return v[rng() % v.size()];
}

void random_operation(Engine& engine, const std::string& id, std::mt19937_64& rng) {
    auto s = engine.session(id);
    std::vector<UnitId> codes, subs, themes;
    for (const auto& c : s.codes) codes.push_back(c.id);
    for (const auto& st : s.subthemes) subs.push_back(st.id);
    for (const auto& t : s.themes) themes.push_back(t.id);
    auto level = [&](int which) -> std::pair<Stage, const std::vector<UnitId>*> {
        if (which == 0) return {Stage::codes, &codes};
        if (which == 1) return {Stage::subthemes, &subs};
        return {Stage::themes, &themes};
    };
    auto [stage, units] = level(static_cast<int>(rng() % 3));
    auto parent_list = stage == Stage::codes ? &subs : stage == Stage::subthemes ? &themes : nullptr;
    auto maybe_parent = [&]() -> std::optional<UnitId> {
        if (!parent_list || parent_list->empty() || rng() % 3 == 0) return std::nullopt;
        return pick(rng, *parent_list);
    };

    try {
        switch (rng() % 12) {
        case 0:
        case 1:
        case 2: {
            // favour the first stage that is not current
            std::size_t next = 0;
            while (next < 4 && s.stages[next].committed && !s.stages[next].stale) ++next;
            std::size_t chosen = std::min<std::size_t>(rng() % 4, next == 4 ? 3 : next);
            if (rng() % 3) chosen = next == 4 ? rng() % 4 : next;
            Params p{all_stages[chosen], std::nullopt, std::nullopt};
            if (chosen == 0 && rng() % 2) p.number_of_codes = 1 + static_cast<int>(rng() % 6);
            if (rng() % 4 == 0) p.user_prompt = "focus on feelings, round " + std::to_string(rng() % 100);
            engine.run_stage(id, p);
            break;
        }
        case 3:
            if (!units->empty()) engine.edit_unit(id, stage, pick(rng, *units), mutation::Rename{"renamed " + std::to_string(rng() % 50)});
            break;
        case 4:
            engine.edit_unit(id, stage, "", mutation::AddUnit{"added " + std::to_string(rng() % 50), maybe_parent(), ""});
            break;
        case 5:
            if (!units->empty()) engine.edit_unit(id, stage, pick(rng, *units), mutation::DeleteUnit{rng() % 2 == 0});
            break;
        case 6:
            if (!units->empty() && stage != Stage::themes) {
                engine.edit_unit(id, stage, pick(rng, *units), mutation::ReassignParent{maybe_parent()});
            }
            break;
        case 7:
            if (!codes.empty()) {
                if (!s.chunks.empty() && rng() % 2) {
                    const auto& k = s.chunks[rng() % s.chunks.size()];
                    engine.edit_unit(id, Stage::codes, k.code_id, mutation::RemoveChunk{k.chunk_id});
                } else {
                    const auto& d = s.documents[rng() % s.documents.size()];
                    std::size_t a = rng() % d.body.size();
                    std::size_t len = 1 + rng() % std::min<std::size_t>(40, d.body.size() - a);
                    engine.edit_unit(id, Stage::codes, pick(rng, codes),
                                     mutation::AddChunk{d.id, d.body.substr(a, len), rng() % 2 ? std::optional<std::size_t>(a) : std::nullopt});
                }
            }
            break;
        case 8:
            engine.add_memo(id, all_stages[rng() % 4], "memo " + std::to_string(rng() % 1000));
            break;
        case 9: {
            auto stage_for_prompt = all_stages[rng() % 4];
            auto record = engine.issue_prompt(id, stage_for_prompt, "try again " + std::to_string(rng() % 100),
                                              stage_for_prompt == Stage::codes && rng() % 2
                                                  ? json{{"number_of_codes", 1 + rng() % 5}}
                                                  : json::object());
            if (rng() % 3) engine.regenerate_with_prompt(id, record.id);
            break;
        }
        case 10:
            if (rng() % 2) {
                engine.save_version(id, rng() % 2 ? std::optional<std::string>("v" + std::to_string(rng() % 9)) : std::nullopt);
            } else {
                engine.compute_coverage(id);
            }
            break;
        case 11:
            engine.refresh_nudge(engine.reserve_chain(id), all_stages[rng() % 3]);
            break;
        }
    } catch (const Error&) {
        // refused operations are part of the workload
    }
}

std::string replay_equality() {
    std::mt19937_64 rng(1005);
    std::size_t total_events = 0, failures_injected = 0;
    for (int seq = 0; seq < 200; ++seq) {
        json script{{"echo", {{"default_codes", 2 + rng() % 6}}}};
        if (rng() % 2) {
            json fails = json::array();
            for (int k = 0; k < 3; ++k) fails.push_back(1 + rng() % 30);
            script["fail_ordinals"] = fails;
            ++failures_injected;
        }
        if (rng() % 4 == 0) script["echo"]["drop_word_fraction"] = 0.2;
        Engine engine(mock_config(script));
        std::vector<std::string> docs;
        for (std::size_t d = 0, n = 1 + rng() % 2; d < n; ++d) docs.push_back(qda::test::random_document(rng, 20 + rng() % 80));
        auto id = engine.create_session(request_for(docs, {"What happened?"})).id;
        int ops = 10 + static_cast<int>(rng() % 30);
        for (int k = 0; k < ops; ++k) random_operation(engine, id, rng);
        auto live = engine.session(id);
        auto replayed = engine.replay(id);
        check(replayed == live, "sequence " + std::to_string(seq) + " differs after " + std::to_string(live.last_seq) + " events");
        check(json::parse(engine.session_document(id)) == json(replayed),
              "sequence " + std::to_string(seq) + " document differs");
        auto problems = qda::test::partition_problems(live);
        check(problems.empty(), "sequence " + std::to_string(seq) + ": " + (problems.empty() ? "" : problems.front()));
        total_events += live.last_seq;
    }
    return "200 sequences, " + std::to_string(total_events) + " events, " + std::to_string(failures_injected) +
           " with injected provider failures";
}

// ---------------------------------------------------------------- atomicity

AnalysisSession without_seq(AnalysisSession s) {
    s.last_seq = 0;
    return s;
}

std::size_t in_process_failures() {
    std::size_t cases = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<std::pair<std::string, json>> scripts;
        // ordinals: each earlier stage used a stage call and a nudge call
        scripts.emplace_back("stage call", json{{"fail_ordinals", {2 * k + 1}}, {"echo", {{"default_codes", 8}}}});
        if (k < 3) scripts.emplace_back("nudge call", json{{"fail_ordinals", {2 * k + 2}}, {"echo", {{"default_codes", 8}}}});
        json garbage = json::array();
        for (int i = 0; i < 3; ++i) {
            garbage.push_back({{"schema", std::string(stage_name(all_stages[k])) + ".v1"}, {"text", "not json at all"}});
        }
        scripts.emplace_back("exhausted repairs", json{{"responses", garbage}, {"echo", {{"default_codes", 8}}}});
        for (const auto& [what, script] : scripts) {
            Engine engine(mock_config(script));
            auto id = engine.create_session(request_for({"A one. B two. C three. D four. E five. F six. G seven. H eight."})).id;
            for (std::size_t j = 0; j < k; ++j) engine.run_stage(id, Params{all_stages[j], std::nullopt, std::nullopt});
            auto before = engine.session(id);
            bool threw = false;
            try {
                engine.run_stage(id, Params{all_stages[k], std::nullopt, std::nullopt});
            } catch (const Error&) {
                threw = true;
            }
            std::string label = std::string(stage_name(all_stages[k])) + " " + what;
            check(threw, label + ": run did not fail");
            auto after = engine.session(id);
            check(without_seq(after) == without_seq(before), label + ": session changed");
            check(engine.trail(id).back().kind == audit::EventKind::stage_rejected, label + ": no rejection event");
            check(engine.replay(id) == after, label + ": replay differs");
            ++cases;
        }
    }
    return cases;
}

httplib::Client client_for(int port) {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
}

json http_json(const httplib::Result& r, int expect, const std::string& what) {
    check(static_cast<bool>(r), what + ": no reply");
    check(r->status == expect, what + ": status " + std::to_string(r->status) + " " + r->body);
    return json::parse(r->body);
}

json wait_op(httplib::Client& c, const std::string& op_id) {
    for (int i = 0; i < 1200; ++i) {
        auto op = http_json(c.Get("/ops/" + op_id), 200, "poll");
        if (op.at("status") != "pending") return op;
        std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
    throw Failure("operation " + op_id + " never finished");
}

std::string start_stage(httplib::Client& c, const std::string& id, Stage stage) {
    return http_json(c.Post("/sessions/" + id + "/stages/" + std::string(stage_name(stage)) + ":run", "{}", "application/json"),
                     202, "start " + id)
        .at("op_id");
}

/// Kills `qda serve` mid-stage on four sessions (one per stage) and checks
/// that each either shows the stage complete or exactly as before.
std::size_t crash_round(const fs::path& dir, int delay_ms, int kill_after_ms, bool expect_untouched) {
    auto storage = (dir / "data").string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string body = "A one. B two. C three. D four. E five. F six. G seven. H eight.";
    auto fast = (dir / "fast.json").string();
    auto slow = (dir / "slow.json").string();
    qda::test::write_file(fast, json{{"echo", {{"default_codes", 8}}}}.dump());
    qda::test::write_file(slow, json{{"echo", {{"default_codes", 8}, {"delay_ms", delay_ms}}}}.dump());

    std::map<std::string, json> before;
    {
        qda::test::ServeProcess srv(storage, fast);
        auto c = client_for(srv.port);
        for (std::size_t k = 0; k < 4; ++k) {
            std::string id = "k" + std::to_string(k);
            http_json(c.Post("/sessions", json{{"id", id}, {"documents", {{{"body", body}}}}}.dump(), "application/json"), 201,
                      "create");
            for (std::size_t j = 0; j < k; ++j) {
                auto op = wait_op(c, start_stage(c, id, all_stages[j]));
                check(op.at("status") == "done", "setup stage failed: " + op.dump());
            }
            before[id] = http_json(c.Get("/sessions/" + id), 200, "get");
        }
        srv.child->signal(SIGTERM);
        srv.child->wait();
    }
    {
        qda::test::ServeProcess srv(storage, slow);
        auto c = client_for(srv.port);
        for (std::size_t k = 0; k < 4; ++k) start_stage(c, "k" + std::to_string(k), all_stages[k]);
        std::this_thread::sleep_for(std::chrono::milliseconds(kill_after_ms));
        srv.child->signal(SIGKILL);
        srv.child->wait();
    }
    std::size_t untouched = 0;
    {
        qda::test::ServeProcess srv(storage, fast);
        auto c = client_for(srv.port);
        for (std::size_t k = 0; k < 4; ++k) {
            std::string id = "k" + std::to_string(k);
            auto now = http_json(c.Get("/sessions/" + id), 200, "get after restart");
            auto replayed = http_json(c.Get("/sessions/" + id + "/replay"), 200, "replay");
            check(now == replayed, id + ": replay differs after restart");
            const auto& st = now.at("stages").at(std::string(stage_name(all_stages[k])));
            if (now == before[id]) {
                ++untouched;
            } else {
                // the only other acceptable outcome is a whole commit
                check(st.at("committed").get<bool>() && (k == 3 || !st.at("nudge").is_null()),
                      id + ": partial stage visible after crash");
                check(now.at("last_seq") == before[id].at("last_seq").get<int>() + 1, id + ": unexpected extra events");
            }
            auto op = wait_op(c, start_stage(c, id, all_stages[k]));
            check(op.at("status") == "done", id + ": session unusable after restart");
        }
        srv.child->signal(SIGTERM);
        srv.child->wait();
    }
    if (expect_untouched) check(untouched == 4, "only " + std::to_string(untouched) + " of 4 sessions untouched");
    return untouched;
}

std::string atomicity() {
    auto cases = in_process_failures();
    qda::test::TempDir dir;
    crash_round(dir.path() / "a", 3000, 600, true);
    auto b = crash_round(dir.path() / "b", 1200, 1800, false);
    return std::to_string(cases) + " injected failures left no trace; kill -9 in stage calls (4/4 untouched) and in " +
           "nudge calls (" + std::to_string(b) + "/4 untouched, rest whole)";
}

// ---------------------------------------------------------------- DOT

std::string random_label(std::mt19937_64& rng) {
    static const std::vector<std::string> parts{"cost",  "\"quoted\"", "back\\slash", "line\nbreak", "caf\xc3\xa9",
                                                "a->b",  "{brace}",    "semi;colon",  "[x=1]",        "  spaced  ",
                                                "trust", "",           "=",           "#hash",        "//"};
    std::string out;
    for (std::size_t i = 0, n = rng() % 4; i < n; ++i) out += pick(rng, parts);
    return out;
}

std::string dot_round_trip() {
    std::mt19937_64 rng(1007);
    std::size_t nodes = 0;
    for (int trial = 0; trial < 500; ++trial) {
        AnalysisSession s;
        s.stage(Stage::themes).committed = true;
        std::size_t n_themes = rng() % 5, n_sub = rng() % 8, n_codes = rng() % 15;
        for (std::size_t t = 1; t <= n_themes; ++t) s.themes.push_back({"t" + std::to_string(t), random_label(rng), "", {}, Provenance::machine_generated, {}});
        for (std::size_t i = 1; i <= n_sub; ++i) {
            SubTheme st{"s" + std::to_string(i), random_label(rng), {}, Provenance::machine_generated, std::nullopt};
            if (!s.themes.empty() && rng() % 5) {
                auto& t = s.themes[rng() % s.themes.size()];
                st.theme_id = t.id;
                t.subtheme_ids.push_back(st.id);
            } else {
                s.ungrouped_subthemes.push_back(st.id);
            }
            s.subthemes.push_back(st);
        }
        for (std::size_t i = 1; i <= n_codes; ++i) {
            OpenCode c{"c" + std::to_string(i), random_label(rng), {}, Provenance::machine_generated, std::nullopt};
            if (!s.subthemes.empty() && rng() % 5) {
                auto& st = s.subthemes[rng() % s.subthemes.size()];
                c.subtheme_id = st.id;
                st.code_ids.push_back(c.id);
            } else {
                s.ungrouped_codes.push_back(c.id);
            }
            s.codes.push_back(c);
        }
        auto g = theme_map::build_graph(s);
        auto text = theme_map::emit_dot(g);
        qda::test::DotGraph parsed;
        try {
            parsed = qda::test::parse_dot(text);
        } catch (const std::exception& e) {
            throw Failure("forest " + std::to_string(trial) + " did not parse: " + e.what());
        }
        std::map<std::string, std::string> want_labels, got_labels;
        for (const auto& n : g.nodes) want_labels[n.id] = std::string(theme_map::level_name(n.level)) + "|" + n.label;
        for (const auto& [id, attrs] : parsed.nodes) got_labels[id] = attrs.at("level") + "|" + attrs.at("label");
        std::vector<std::pair<std::string, std::string>> want_edges;
        for (const auto& e : g.edges) want_edges.emplace_back(e.parent_id, e.child_id);
        check(parsed.directed, "forest " + std::to_string(trial) + " is not a digraph");
        check(got_labels == want_labels, "forest " + std::to_string(trial) + ": labels differ");
        check(qda::test::forest_signature(got_labels, parsed.edges) == qda::test::forest_signature(want_labels, want_edges),
              "forest " + std::to_string(trial) + " is not isomorphic after reparse");
        nodes += g.nodes.size();
    }
    return "500 forests (" + std::to_string(nodes) + " nodes) reparse isomorphic";
}

// ---------------------------------------------------------------- export

std::string export_completeness() {
    Engine engine(mock_config(json{{"echo", {{"default_codes", 6}}}}));
    auto corpus = fs::path(qda::test::test_data_dir) / "corpus";
    auto id = engine.create_session(request_for({qda::test::read_file(corpus / "transcripts" / "1.txt"),
                                                 qda::test::read_file(corpus / "emails" / "2.txt")},
                                                {"How do people decide to join?", "What gets in the way?"}))
                  .id;
    qda::test::run_all_stages(engine, id);
    auto s = engine.session(id);
    engine.edit_unit(id, Stage::codes, s.codes[0].id, mutation::Rename{"word of mouth"});
    engine.add_memo(id, Stage::codes, "renamed after rereading the transcript");
    auto prompt = engine.issue_prompt(id, Stage::subthemes, "group by barrier versus motivation");
    engine.regenerate_with_prompt(id, prompt.id);
    engine.run_stage(id, Params{Stage::themes, std::nullopt, std::nullopt});
    engine.run_stage(id, Params{Stage::summary, std::nullopt, std::nullopt});
    auto v = engine.save_version(id, std::string("final"));

    auto t0 = Steady::now();
    auto printable = engine.render_export(id, v.version_id, "printable");
    double elapsed = seconds_since(t0);
    check(elapsed < 1.0, "rendering took " + fmt(elapsed) + " s");

    std::size_t prev = 0;
    for (auto h : codebook::printable_headings) {
        auto pos = printable.text.find("\n" + std::string(h) + "\n");
        check(pos != std::string::npos, "missing section '" + std::string(h) + "'");
        check(pos > prev, "section '" + std::string(h) + "' out of order");
        prev = pos;
    }
    check(printable.text.find("renamed after rereading the transcript") != std::string::npos, "memo missing from trajectory");
    check(printable.text.find("group by barrier versus motivation") != std::string::npos, "prompt missing from trajectory");

    auto structured = codebook::parse_structured(engine.render_export(id, v.version_id, "structured").text);
    auto at_save = engine.replay(id, v.seq_at_save);
    std::size_t quotes = 0;
    auto trace = [&](const codebook::CodeEntry& c) {
        for (const auto& q : c.quotes) {
            const auto* d = at_save.find_document(q.document_id);
            check(d != nullptr, "quote cites unknown document " + q.document_id);
            check(q.end_offset <= d->body.size() && q.start_offset < q.end_offset, "quote span out of range");
            check(d->body.compare(q.start_offset, q.end_offset - q.start_offset, q.text) == 0,
                  "quote of " + c.id + " does not match its source span");
            ++quotes;
        }
    };
    const auto& pc = structured.primary_codebook;
    for (const auto& t : pc.themes) {
        for (const auto& st : t.subthemes) {
            for (const auto& c : st.codes) trace(c);
        }
    }
    for (const auto& st : pc.ungrouped_subthemes) {
        for (const auto& c : st.codes) trace(c);
    }
    for (const auto& c : pc.ungrouped_codes) trace(c);
    check(quotes == at_save.chunks.size(), std::to_string(quotes) + " quotes for " + std::to_string(at_save.chunks.size()) + " chunks");
    return "4 sections in order, " + std::to_string(quotes) + " quotes traced, rendered in " + fmt(elapsed * 1000, 1) + " ms";
}

// ---------------------------------------------------------------- eval shape

std::string eval_shape() {
    auto corpus = fs::path(qda::test::test_data_dir) / "corpus";
    EvalOptions opts;
    opts.runs_per_doc = 5;
    opts.parallelism = 2;
    auto table = run_eval(corpus, opts, mock_config());
    const std::set<std::string> genres{"blogs", "emails", "quora", "stackoverflow", "transcripts", "wikipedia"};
    std::set<std::string> seen;
    for (const auto& g : table.genres) {
        seen.insert(g.genre);
        check(g.documents == 2, g.genre + " has " + std::to_string(g.documents) + " documents");
        check(g.mean.has_value(), g.genre + " has no mean");
    }
    check(seen == genres, "genre set differs");
    for (const auto& d : table.documents) check(d.runs.size() == 5, d.document + " ran " + std::to_string(d.runs.size()) + " times");
    check(table.overall_mean.has_value(), "no overall mean");
    std::cout << eval_to_text(table);
    return "6 genres x 2 documents x 5 runs, per-genre means and overall average reported above";
}

} // namespace

int main() {
    std::vector<std::pair<std::string, std::function<std::string()>>> criteria{
        {"jaccard oracle equivalence", jaccard_equivalence},
        {"verbatim round-trip", verbatim_round_trip},
        {"perfect-echo bound", perfect_echo},
        {"scripted-damage sensitivity", scripted_damage},
        {"replay equality", replay_equality},
        {"atomicity under injected failure", atomicity},
        {"dot round-trip", dot_round_trip},
        {"export completeness", export_completeness},
        {"eval-protocol shape", eval_shape},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        auto t0 = Steady::now();
        std::string line;
        bool ok = false;
        try {
            line = run();
            ok = true;
        } catch (const Failure& f) {
            line = f.what();
        } catch (const Error& e) {
            line = std::string(error_code_name(e.code())) + ": " + e.what();
        } catch (const std::exception& e) {
            line = std::string("exception: ") + e.what();
        }
        failed += !ok;
        std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << line << " (" << fmt(seconds_since(t0), 2) << " s)"
                  << std::endl;
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
