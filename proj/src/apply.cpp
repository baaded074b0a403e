#include "qda/apply.hpp"

#include "qda/error.hpp"
#include "qda/hierarchy.hpp"
#include "qda/validation.hpp"

#include <algorithm>
#include <set>

namespace qda {

using audit::AuditEvent;
using audit::EventKind;

namespace {

void apply_session_created(AnalysisSession& s, const AuditEvent& e) {
    const json& p = e.payload;
    s = AnalysisSession{};
    s.id = p.at("id").get<std::string>();
    s.created_at = e.timestamp;
    s.documents = p.at("documents").get<std::vector<SourceDocument>>();
    s.research_questions = p.at("research_questions").get<std::vector<ResearchQuestion>>();
    s.settings = p.at("settings").get<SessionSettings>();
}

void install_codes(AnalysisSession& s, const json& output) {
    s.codes = output.at("codes").get<std::vector<OpenCode>>();
    s.chunks = output.at("chunks").get<std::vector<ChunkAssignment>>();
    std::set<UnitId> live;
    for (const auto& c : s.codes) live.insert(c.id);
    for (auto& st : s.subthemes) {
        std::erase_if(st.code_ids, [&](const UnitId& id) { return live.count(id) == 0; });
    }
    relink(s);
    s.coverage_report = validation::compute_coverage(s);
}

void install_subthemes(AnalysisSession& s, const json& output) {
    s.subthemes = output.at("subthemes").get<std::vector<SubTheme>>();
    std::set<UnitId> live;
    for (const auto& st : s.subthemes) live.insert(st.id);
    for (auto& t : s.themes) {
        std::erase_if(t.subtheme_ids, [&](const UnitId& id) { return live.count(id) == 0; });
    }
    relink(s);
}

void install_themes(AnalysisSession& s, const json& output) {
    s.themes = output.at("themes").get<std::vector<Theme>>();
    relink(s);
}

void apply_stage_commit(AnalysisSession& s, const AuditEvent& e) {
    const json& p = e.payload;
    Stage stage = stage_from_name(p.at("stage").get<std::string>());
    auto& state = s.stage(stage);

    if (p.value("nudge_only", false)) {
        state.nudge = p.at("nudge").get<Nudge>();
        state.nudge_stale = false;
        return;
    }

    const json& output = p.at("output");
    switch (stage) {
    case Stage::codes: install_codes(s, output); break;
    case Stage::subthemes: install_subthemes(s, output); break;
    case Stage::themes: install_themes(s, output); break;
    case Stage::summary: s.key_findings = output.at("key_findings").get<KeyFindings>(); break;
    }
    s.id_counter = std::max(s.id_counter, p.at("id_counter").get<std::uint64_t>());

    state.committed = true;
    state.stale = false;
    state.template_version = p.value("template_version", "");
    state.parameters = p.value("parameters", json::object());
    state.warnings = p.value("warnings", std::vector<std::string>{});
    state.nudge = p.contains("nudge") && !p["nudge"].is_null() ? std::optional<Nudge>(p["nudge"].get<Nudge>())
                                                               : std::nullopt;
    state.nudge_stale = false;
    state.committed_seq = e.seq;
    mark_downstream_stale(s, stage);
    prune_dangling_references(s);

    if (e.kind == EventKind::regeneration) {
        auto id = p.at("prompt_record_id").get<std::string>();
        for (auto& r : s.prompt_records) {
            if (r.id == id) r.applied = true;
        }
    }
}

} // namespace

json apply_event(AnalysisSession& s, const AuditEvent& e) {
    json result;
    const json& p = e.payload;
    switch (e.kind) {
    case EventKind::session_created:
        apply_session_created(s, e);
        break;
    case EventKind::stage_committed:
    case EventKind::regeneration:
        apply_stage_commit(s, e);
        break;
    case EventKind::stage_rejected:
    case EventKind::export_produced:
        break;
    case EventKind::edit:
        result = apply_edit(s, stage_from_name(p.at("stage").get<std::string>()),
                            p.at("unit_id").get<std::string>(), mutation_from_json(p.at("mutation")));
        break;
    case EventKind::memo_added: {
        Memo m;
        m.id = allocate_id(s, 'm');
        m.stage = stage_from_name(p.at("stage").get<std::string>());
        m.text = p.at("text").get<std::string>();
        m.created_at = e.timestamp;
        s.memos.push_back(m);
        result = json{{"assigned_id", m.id}};
        break;
    }
    case EventKind::prompt_issued: {
        PromptRecord r;
        r.id = allocate_id(s, 'p');
        r.stage = stage_from_name(p.at("stage").get<std::string>());
        r.user_prompt_text = p.at("user_prompt_text").get<std::string>();
        r.parameters = p.value("parameters", json::object());
        r.issued_at = e.timestamp;
        s.prompt_records.push_back(r);
        result = json{{"assigned_id", r.id}};
        break;
    }
    case EventKind::coverage_computed:
        s.coverage_report = p.at("report").get<CoverageReport>();
        break;
    case EventKind::version_saved: {
        SavedVersion v;
        v.version_id = allocate_id(s, 'v');
        v.seq_at_save = e.seq;
        if (p.contains("label") && !p["label"].is_null()) v.label = p["label"].get<std::string>();
        v.saved_at = e.timestamp;
        s.saved_versions.push_back(v);
        result = json{{"assigned_id", v.version_id}};
        break;
    }
    }
    s.last_seq = e.seq;
    return result;
}

AnalysisSession replay_events(const std::vector<AuditEvent>& events, std::optional<std::uint64_t> up_to_seq) {
    AnalysisSession s;
    for (const auto& e : events) {
        if (up_to_seq && e.seq > *up_to_seq) break;
        json result;
        try {
            result = apply_event(s, e);
        } catch (const Error& err) {
            throw Error(ErrorCode::corrupt_log,
                        "event " + std::to_string(e.seq) + " cannot be replayed: " + err.what(),
                        json{{"seq", e.seq}});
        }
        auto recorded = e.payload.find("result");
        if (recorded != e.payload.end() && *recorded != result) {
            throw Error(ErrorCode::corrupt_log,
                        "event " + std::to_string(e.seq) + " replays to a different result",
                        json{{"seq", e.seq}});
        }
    }
    return s;
}

} // namespace qda
