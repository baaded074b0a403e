#include "qda/codebook.hpp"

#include "qda/error.hpp"
#include "qda/theme_map.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

namespace qda::codebook {

using audit::AuditEvent;
using audit::EventKind;

std::string disclaimer_text(const std::string& model_name) {
    return "The codes, subthemes, themes and key findings in this document were partially generated by " +
           model_name +
           " and then reviewed by the analyst. Every quoted excerpt is copied verbatim from a source document "
           "and can be checked against the reference beside it. Generated groupings and summaries are "
           "suggestions; responsibility for the interpretation rests with the analyst, who may have "
           "accepted, edited or discarded any of them.";
}

namespace {

CodeEntry code_entry(const AnalysisSession& s, const OpenCode& c) {
    CodeEntry e{c.id, c.name, c.provenance, {}};
    for (const auto& kid : c.chunk_ids) {
        if (const auto* k = s.find_chunk(kid)) {
            e.quotes.push_back(Quote{k->document_id, k->start_offset, k->end_offset, k->text});
        }
    }
    return e;
}

SubthemeEntry subtheme_entry(const AnalysisSession& s, const SubTheme& st) {
    SubthemeEntry e{st.id, st.name, st.provenance, {}};
    for (const auto& cid : st.code_ids) {
        if (const auto* c = s.find_code(cid)) e.codes.push_back(code_entry(s, *c));
    }
    return e;
}

std::string unit_kind(const AnalysisSession& s, const UnitId& id) {
    if (s.find_theme(id)) return "theme";
    if (s.find_subtheme(id)) return "subtheme";
    if (s.find_code(id)) return "code";
    return "unit";
}

std::string stage_label(const json& p) { return p.value("stage", std::string("?")); }

std::string edit_summary(const json& p) {
    const json& m = p.at("mutation");
    std::string type = m.value("type", "");
    std::string unit = p.value("unit_id", "");
    std::string stage = stage_label(p);
    if (type == "rename") return "Renamed " + unit + " to \"" + m.value("name", "") + "\"";
    if (type == "add_chunk") return "Added an excerpt from " + m.value("document_id", "") + " to " + unit;
    if (type == "remove_chunk") return "Removed excerpt " + m.value("chunk_id", "") + " from " + unit;
    if (type == "add_unit") {
        std::string id = p.contains("result") ? p["result"].value("assigned_id", "") : "";
        return "Added " + stage + " unit \"" + m.value("name", "") + "\"" + (id.empty() ? "" : " (" + id + ")");
    }
    if (type == "delete_unit") return std::string("Deleted ") + unit + (m.value("cascade", false) ? " with cascade" : "");
    if (type == "reassign_parent") {
        return "Moved " + unit + " under " +
               (m.contains("parent_id") && !m["parent_id"].is_null() ? m["parent_id"].get<std::string>()
                                                                       : std::string("the ungrouped bucket"));
    }
    return "Edited " + unit;
}

std::string snapshot_summary(const json& p) {
    std::string stage = stage_label(p);
    const json& out = p.value("output", json::object());
    std::string text;
    if (stage == "codes") {
        text = "Generated " + std::to_string(out.value("codes", json::array()).size()) + " open codes";
        const json& params = p.value("parameters", json::object());
        if (params.contains("number_of_codes") && !params["number_of_codes"].is_null()) {
            text += " (requested " + params["number_of_codes"].dump() + ")";
        } else {
            text += " (count chosen by the model)";
        }
    } else if (stage == "subthemes") {
        text = "Grouped codes into " + std::to_string(out.value("subthemes", json::array()).size()) + " subthemes";
    } else if (stage == "themes") {
        text = "Lifted subthemes into " + std::to_string(out.value("themes", json::array()).size()) + " themes";
    } else {
        std::size_t n = out.contains("key_findings") ? out["key_findings"].value("findings", json::array()).size() : 0;
        text = "Summarized " + std::to_string(n) + " key findings";
    }
    const json& params = p.value("parameters", json::object());
    if (params.contains("user_prompt") && params["user_prompt"].is_string()) {
        text += "; analyst prompt: \"" + params["user_prompt"].get<std::string>() + "\"";
    }
    return text;
}

std::optional<Stage> event_stage(const json& p) {
    if (p.contains("stage") && p["stage"].is_string()) return stage_from_name(p["stage"].get<std::string>());
    return std::nullopt;
}

TrajectoryEntry trajectory_entry(const AnalysisSession& s, const AuditEvent& e) {
    TrajectoryEntry t;
    t.seq = e.seq;
    t.timestamp = e.timestamp;
    t.actor = e.actor;
    const json& p = e.payload;
    switch (e.kind) {
    case EventKind::session_created:
        t.kind = "session";
        t.summary = "Session created with " + std::to_string(p.value("documents", json::array()).size()) +
                    " document(s) and " + std::to_string(p.value("research_questions", json::array()).size()) +
                    " research question(s)";
        break;
    case EventKind::stage_committed:
    case EventKind::regeneration:
        t.stage = event_stage(p);
        if (p.value("nudge_only", false)) {
            t.kind = "nudge";
            t.summary = "Refreshed the nudge for the " + stage_label(p) + " stage";
            t.detail = json{{"nudge", p.at("nudge")}};
            break;
        }
        t.kind = e.kind == EventKind::regeneration ? "regeneration" : "stage_snapshot";
        t.summary = snapshot_summary(p);
        t.detail = json{{"output", p.value("output", json::object())},
                        {"parameters", p.value("parameters", json::object())},
                        {"warnings", p.value("warnings", json::array())},
                        {"nudge", p.value("nudge", json(nullptr))},
                        {"template_version", p.value("template_version", "")}};
        if (p.contains("prompt_record_id")) t.detail["prompt_record_id"] = p["prompt_record_id"];
        break;
    case EventKind::stage_rejected:
        t.kind = "rejected";
        t.stage = event_stage(p);
        t.summary = "Rejected a " + stage_label(p) + " stage result: " +
                    p.value("error", json::object()).value("message", std::string("unknown error"));
        t.detail = json{{"error", p.value("error", json::object())}};
        break;
    case EventKind::edit:
        t.kind = "edit";
        t.stage = event_stage(p);
        t.summary = edit_summary(p);
        t.detail = json{{"unit_id", p.value("unit_id", "")}, {"mutation", p.at("mutation")}};
        break;
    case EventKind::memo_added:
        t.kind = "memo";
        t.stage = event_stage(p);
        t.summary = p.value("text", "");
        break;
    case EventKind::prompt_issued: {
        t.kind = "prompt";
        t.stage = event_stage(p);
        t.summary = p.value("user_prompt_text", "");
        std::string id = p.contains("result") ? p["result"].value("assigned_id", "") : "";
        const PromptRecord* r = s.find_prompt(id);
        t.detail = json{{"prompt_record_id", id},
                        {"parameters", p.value("parameters", json::object())},
                        {"applied", r ? r->applied : false}};
        break;
    }
    case EventKind::coverage_computed: {
        t.kind = "coverage";
        double overall = p.at("report").value("overall_jaccard", 0.0);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f%%", overall * 100.0);
        t.summary = std::string("Coverage computed: ") + buf + " of source words appear in coded excerpts";
        break;
    }
    case EventKind::version_saved:
        t.kind = "version";
        t.summary = "Saved version" + (p.contains("label") && p["label"].is_string()
                                            ? " \"" + p["label"].get<std::string>() + "\""
                                            : std::string());
        break;
    case EventKind::export_produced:
        t.kind = "export";
        t.summary = "Exported version " + p.value("version_id", "") + " as " + p.value("format", "");
        break;
    }
    return t;
}

json quote_json(const Quote& q) {
    return {{"document_id", q.document_id}, {"start_offset", q.start_offset}, {"end_offset", q.end_offset},
            {"text", q.text}};
}

json code_json(const CodeEntry& c) {
    json quotes = json::array();
    for (const auto& q : c.quotes) quotes.push_back(quote_json(q));
    return {{"id", c.id}, {"name", c.name}, {"provenance", provenance_name(c.provenance)}, {"quotes", quotes}};
}

json subtheme_json(const SubthemeEntry& s) {
    json codes = json::array();
    for (const auto& c : s.codes) codes.push_back(code_json(c));
    return {{"id", s.id}, {"name", s.name}, {"provenance", provenance_name(s.provenance)}, {"codes", codes}};
}

Quote quote_from(const json& j) {
    return {j.at("document_id").get<std::string>(), j.at("start_offset").get<std::size_t>(),
            j.at("end_offset").get<std::size_t>(), j.at("text").get<std::string>()};
}

CodeEntry code_from(const json& j) {
    CodeEntry c{j.at("id").get<std::string>(), j.at("name").get<std::string>(),
                provenance_from_name(j.at("provenance").get<std::string>()), {}};
    for (const auto& q : j.at("quotes")) c.quotes.push_back(quote_from(q));
    return c;
}

SubthemeEntry subtheme_from(const json& j) {
    SubthemeEntry s{j.at("id").get<std::string>(), j.at("name").get<std::string>(),
                    provenance_from_name(j.at("provenance").get<std::string>()), {}};
    for (const auto& c : j.at("codes")) s.codes.push_back(code_from(c));
    return s;
}

std::string provenance_badge(Provenance p) {
    return p == Provenance::user_edited ? "user edited" : "machine generated";
}

std::string quote_line(const Quote& q) {
    return "> " + json(q.text).dump() + " [source: " + q.document_id + " " + std::to_string(q.start_offset) + "-" +
           std::to_string(q.end_offset) + "]";
}

void render_code(std::ostringstream& out, const CodeEntry& c, const std::string& indent) {
    out << indent << "- Code **" << c.name << "** (" << c.id << ", " << provenance_badge(c.provenance) << ")\n";
    if (c.quotes.empty()) out << indent << "  _No excerpts._\n";
    for (const auto& q : c.quotes) out << "\n" << indent << "  " << quote_line(q) << "\n";
    out << "\n";
}

void render_subtheme(std::ostringstream& out, const SubthemeEntry& s) {
    out << "- Subtheme **" << s.name << "** (" << s.id << ", " << provenance_badge(s.provenance) << ")\n";
    if (s.codes.empty()) out << "  _No codes._\n";
    for (const auto& c : s.codes) render_code(out, c, "  ");
}

std::string markdown_cell(const std::string& text) {
    std::string out;
    for (char c : text) {
        if (c == '|') out += "\\|";
        else if (c == '\n') out += ' ';
        else out += c;
    }
    return out;
}

} // namespace

TrustworthyCodebook assemble(const AnalysisSession& s, const std::vector<AuditEvent>& events,
                             const SavedVersion& version, Timestamp generated_at) {
    if (!s.stage(Stage::summary).committed || !s.key_findings) {
        throw Error(ErrorCode::missing_summary,
                    "version " + version.version_id + " has no key findings; run the summary stage before saving",
                    json{{"version_id", version.version_id}});
    }
    TrustworthyCodebook cb;
    cb.session_id = s.id;
    cb.version_id = version.version_id;
    cb.version_label = version.label;
    cb.seq_at_save = version.seq_at_save;
    cb.generated_at = generated_at;
    cb.model_name = s.settings.provider.value("model_name", std::string("the language model"));
    cb.template_version = s.settings.template_version;
    cb.research_questions = s.research_questions;
    cb.key_findings = *s.key_findings;
    std::set<UnitId> seen;
    for (const auto& f : cb.key_findings.findings) {
        for (const auto& id : f.supporting_unit_ids) {
            if (!seen.insert(id).second) continue;
            std::string name;
            if (const auto* t = s.find_theme(id)) name = t->name;
            else if (const auto* st = s.find_subtheme(id)) name = st->name;
            else if (const auto* c = s.find_code(id)) name = c->name;
            cb.cited_units.emplace_back(id, unit_kind(s, id) + " \"" + name + "\"");
        }
    }
    for (Stage st : all_stages) {
        if (s.stage(st).stale) {
            cb.notes.push_back("The " + std::string(stage_name(st)) +
                               " stage was edited upstream after it was generated and has not been regenerated.");
        }
    }

    try {
        cb.theme_map_dot = theme_map::emit_dot(theme_map::build_graph(s));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::stale_stage) throw;
        cb.notes.push_back(std::string("Theme map omitted: ") + e.what() + ".");
    }

    for (const auto& t : s.themes) {
        ThemeEntry te{t.id, t.name, t.description, t.provenance, t.research_question_ids, {}};
        for (const auto& sid : t.subtheme_ids) {
            if (const auto* st = s.find_subtheme(sid)) te.subthemes.push_back(subtheme_entry(s, *st));
        }
        cb.primary_codebook.themes.push_back(std::move(te));
    }
    for (const auto& sid : s.ungrouped_subthemes) {
        if (const auto* st = s.find_subtheme(sid)) cb.primary_codebook.ungrouped_subthemes.push_back(subtheme_entry(s, *st));
    }
    for (const auto& cid : s.ungrouped_codes) {
        if (const auto* c = s.find_code(cid)) cb.primary_codebook.ungrouped_codes.push_back(code_entry(s, *c));
    }

    for (const auto& e : events) {
        if (e.seq > version.seq_at_save) break;
        cb.trajectory.push_back(trajectory_entry(s, e));
    }
    cb.disclaimer = disclaimer_text(cb.model_name);
    return cb;
}

json to_json(const TrustworthyCodebook& cb) {
    json questions = cb.research_questions;
    json cited = json::array();
    for (const auto& [id, name] : cb.cited_units) cited.push_back({{"id", id}, {"name", name}});
    json themes = json::array();
    for (const auto& t : cb.primary_codebook.themes) {
        json subs = json::array();
        for (const auto& s : t.subthemes) subs.push_back(subtheme_json(s));
        themes.push_back({{"id", t.id},
                          {"name", t.name},
                          {"description", t.description},
                          {"provenance", provenance_name(t.provenance)},
                          {"research_question_ids", t.research_question_ids},
                          {"subthemes", subs}});
    }
    json ungrouped_subs = json::array();
    for (const auto& s : cb.primary_codebook.ungrouped_subthemes) ungrouped_subs.push_back(subtheme_json(s));
    json ungrouped_codes = json::array();
    for (const auto& c : cb.primary_codebook.ungrouped_codes) ungrouped_codes.push_back(code_json(c));
    json trajectory = json::array();
    for (const auto& t : cb.trajectory) {
        trajectory.push_back({{"seq", t.seq},
                              {"timestamp", t.timestamp},
                              {"actor", actor_name(t.actor)},
                              {"kind", t.kind},
                              {"stage", t.stage ? json(stage_name(*t.stage)) : json(nullptr)},
                              {"summary", t.summary},
                              {"detail", t.detail}});
    }
    return json{{"format", codebook_format_name},
                {"schema_version", codebook_schema_version},
                {"session_id", cb.session_id},
                {"version_id", cb.version_id},
                {"version_label", cb.version_label ? json(*cb.version_label) : json(nullptr)},
                {"seq_at_save", cb.seq_at_save},
                {"generated_at", cb.generated_at},
                {"model_name", cb.model_name},
                {"template_version", cb.template_version},
                {"research_questions", questions},
                {"key_findings", cb.key_findings},
                {"cited_units", cited},
                {"theme_map_dot", cb.theme_map_dot},
                {"primary_codebook",
                 {{"themes", themes}, {"ungrouped_subthemes", ungrouped_subs}, {"ungrouped_codes", ungrouped_codes}}},
                {"trajectory", trajectory},
                {"disclaimer", cb.disclaimer},
                {"notes", cb.notes}};
}

TrustworthyCodebook from_json(const json& j) {
    if (j.value("format", "") != codebook_format_name) {
        throw Error(ErrorCode::invalid_argument, "not a structured codebook document");
    }
    if (j.value("schema_version", 0) != codebook_schema_version) {
        throw Error(ErrorCode::invalid_argument,
                    "unsupported codebook schema version " + j.value("schema_version", json(nullptr)).dump());
    }
    try {
        TrustworthyCodebook cb;
        cb.session_id = j.at("session_id").get<std::string>();
        cb.version_id = j.at("version_id").get<std::string>();
        if (j.at("version_label").is_string()) cb.version_label = j["version_label"].get<std::string>();
        cb.seq_at_save = j.at("seq_at_save").get<std::uint64_t>();
        cb.generated_at = j.at("generated_at").get<Timestamp>();
        cb.model_name = j.at("model_name").get<std::string>();
        cb.template_version = j.at("template_version").get<std::string>();
        cb.research_questions = j.at("research_questions").get<std::vector<ResearchQuestion>>();
        cb.key_findings = j.at("key_findings").get<KeyFindings>();
        for (const auto& c : j.at("cited_units")) {
            cb.cited_units.emplace_back(c.at("id").get<std::string>(), c.at("name").get<std::string>());
        }
        cb.theme_map_dot = j.at("theme_map_dot").get<std::string>();
        const json& pc = j.at("primary_codebook");
        for (const auto& t : pc.at("themes")) {
            ThemeEntry te{t.at("id").get<std::string>(),
                          t.at("name").get<std::string>(),
                          t.at("description").get<std::string>(),
                          provenance_from_name(t.at("provenance").get<std::string>()),
                          t.at("research_question_ids").get<std::vector<std::string>>(),
                          {}};
            for (const auto& s : t.at("subthemes")) te.subthemes.push_back(subtheme_from(s));
            cb.primary_codebook.themes.push_back(std::move(te));
        }
        for (const auto& s : pc.at("ungrouped_subthemes")) cb.primary_codebook.ungrouped_subthemes.push_back(subtheme_from(s));
        for (const auto& c : pc.at("ungrouped_codes")) cb.primary_codebook.ungrouped_codes.push_back(code_from(c));
        for (const auto& t : j.at("trajectory")) {
            TrajectoryEntry e;
            e.seq = t.at("seq").get<std::uint64_t>();
            e.timestamp = t.at("timestamp").get<Timestamp>();
            e.actor = actor_from_name(t.at("actor").get<std::string>());
            e.kind = t.at("kind").get<std::string>();
            if (t.at("stage").is_string()) e.stage = stage_from_name(t["stage"].get<std::string>());
            e.summary = t.at("summary").get<std::string>();
            e.detail = t.at("detail");
            cb.trajectory.push_back(std::move(e));
        }
        cb.disclaimer = j.at("disclaimer").get<std::string>();
        cb.notes = j.at("notes").get<std::vector<std::string>>();
        return cb;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("malformed codebook document: ") + e.what());
    }
}

std::string render_structured(const TrustworthyCodebook& cb) { return to_json(cb).dump(2) + "\n"; }

TrustworthyCodebook parse_structured(std::string_view text) {
    try {
        return from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::invalid_argument, std::string("codebook is not valid JSON: ") + e.what());
    }
}

std::string render_printable(const TrustworthyCodebook& cb, const std::optional<std::string>& svg) {
    std::ostringstream out;
    out << "# Trustworthy Codebook\n\n";
    out << "- Session: `" << cb.session_id << "`\n";
    out << "- Version: `" << cb.version_id << "`";
    if (cb.version_label) out << " (" << *cb.version_label << ")";
    out << ", audit seq " << cb.seq_at_save << "\n";
    out << "- Generated: " << to_iso8601(cb.generated_at) << "\n";
    out << "- Model: " << cb.model_name << "; prompt templates " << cb.template_version << "\n\n";
    for (const auto& n : cb.notes) out << "> Note: " << n << "\n\n";

    std::map<UnitId, std::string> cited(cb.cited_units.begin(), cb.cited_units.end());

    out << printable_headings[0] << "\n\n";
    if (!cb.research_questions.empty()) {
        out << "Research questions:\n\n";
        for (const auto& q : cb.research_questions) out << "- **" << q.id << "**: " << q.text << "\n";
        out << "\n";
    }
    if (cb.key_findings.findings.empty()) out << "_No key findings were produced._\n\n";
    std::size_t n = 0;
    for (const auto& f : cb.key_findings.findings) {
        out << ++n << ". " << f.summary_text << "\n";
        out << "   - Supported by: ";
        for (std::size_t i = 0; i < f.supporting_unit_ids.size(); ++i) {
            if (i) out << "; ";
            const auto& id = f.supporting_unit_ids[i];
            out << (cited.count(id) ? cited[id] : id) << " (" << id << ")";
        }
        out << "\n";
        if (f.research_question_id) out << "   - Research question: " << *f.research_question_id << "\n";
    }
    if (!cb.key_findings.themes_without_findings.empty()) {
        out << "\nThemes without a dedicated finding: ";
        for (std::size_t i = 0; i < cb.key_findings.themes_without_findings.size(); ++i) {
            out << (i ? ", " : "") << cb.key_findings.themes_without_findings[i];
        }
        out << "\n";
    }
    out << "\n";

    out << printable_headings[1] << "\n\n";
    out << "### Theme map\n\n";
    if (cb.theme_map_dot.empty()) {
        out << "_Theme map unavailable for this version._\n\n";
    } else {
        out << "```dot\n" << cb.theme_map_dot << "```\n\n";
        if (svg) out << *svg << "\n\n";
    }
    out << "### Primary codebook\n\n";
    const auto& pc = cb.primary_codebook;
    if (pc.themes.empty() && pc.ungrouped_subthemes.empty() && pc.ungrouped_codes.empty()) {
        out << "_The codebook is empty._\n\n";
    }
    for (const auto& t : pc.themes) {
        out << "#### Theme: " << t.name << " (" << t.id << ", " << provenance_badge(t.provenance) << ")\n\n";
        if (!t.description.empty()) out << t.description << "\n\n";
        if (!t.research_question_ids.empty()) {
            out << "Research questions:";
            for (const auto& q : t.research_question_ids) out << " " << q;
            out << "\n\n";
        }
        for (const auto& s : t.subthemes) render_subtheme(out, s);
        out << "\n";
    }
    if (!pc.ungrouped_subthemes.empty() || !pc.ungrouped_codes.empty()) {
        out << "#### Ungrouped\n\n";
        for (const auto& s : pc.ungrouped_subthemes) render_subtheme(out, s);
        for (const auto& c : pc.ungrouped_codes) render_code(out, c, "");
        out << "\n";
    }

    out << printable_headings[2] << "\n\n";
    std::size_t memos = 0, prompts = 0;
    for (const auto& t : cb.trajectory) {
        memos += t.kind == "memo";
        prompts += t.kind == "prompt";
    }
    if (cb.trajectory.empty()) {
        out << "_No trajectory entries were recorded._\n\n";
    } else {
        out << "| Seq | Time | Actor | Entry | Stage | Summary |\n|---|---|---|---|---|---|\n";
        for (const auto& t : cb.trajectory) {
            out << "| " << t.seq << " | " << to_iso8601(t.timestamp) << " | " << actor_name(t.actor) << " | " << t.kind
                << " | " << (t.stage ? std::string(stage_name(*t.stage)) : std::string("-")) << " | "
                << markdown_cell(t.summary) << " |\n";
        }
        out << "\n";
    }
    out << "Prompts issued: " << prompts << ". Memos written: " << memos << ".\n";
    if (memos == 0) out << "\n_No memos were recorded up to this version._\n";
    if (prompts == 0) out << "\n_No analyst prompts were issued up to this version._\n";
    out << "\n";

    out << printable_headings[3] << "\n\n" << cb.disclaimer << "\n";
    return out.str();
}

std::optional<std::string> render_svg(const std::string& dot) {
    const char* path_env = std::getenv("PATH");
    if (!path_env) return std::nullopt;
    bool found = false;
    std::stringstream dirs(path_env);
    for (std::string dir; std::getline(dirs, dir, ':');) {
        if (!dir.empty() && ::access((std::filesystem::path(dir) / "dot").c_str(), X_OK) == 0) {
            found = true;
            break;
        }
    }
    if (!found) return std::nullopt;

    auto tmp = std::filesystem::temp_directory_path() / ("qda-map-" + std::to_string(::getpid()) + ".dot");
    {
        std::ofstream f(tmp);
        f << dot;
    }
    std::string cmd = "dot -Tsvg '" + tmp.string() + "' 2>/dev/null";
    std::string svg;
    if (FILE* pipe = ::popen(cmd.c_str(), "r")) {
        char buf[4096];
        std::size_t got;
        while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) svg.append(buf, got);
        if (::pclose(pipe) != 0) svg.clear();
    }
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    if (svg.empty()) return std::nullopt;
    return svg;
}

} // namespace qda::codebook
