#include "qda/model.hpp"

#include "qda/error.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>

namespace qda {

namespace {

template <typename E, std::size_t N>
std::string_view enum_name(E value, const std::array<std::string_view, N>& names) {
    return names.at(static_cast<std::size_t>(value));
}

template <typename E, std::size_t N>
E enum_from(std::string_view text, const std::array<std::string_view, N>& names,
            std::string_view what) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == text) return static_cast<E>(i);
    }
    throw Error(ErrorCode::invalid_argument,
                "unknown " + std::string(what) + " '" + std::string(text) + "'");
}

constexpr std::array<std::string_view, 4> stage_names{"codes", "subthemes", "themes", "summary"};
constexpr std::array<std::string_view, 2> provenance_names{"machine_generated", "user_edited"};
constexpr std::array<std::string_view, 3> confidence_names{"most_confident", "less_confident",
                                                           "ambiguous"};
constexpr std::array<std::string_view, 2> actor_names{"system", "analyst"};

template <typename T>
json optional_to_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from_json(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->template get<T>();
}

template <typename T>
T value_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    return it->template get<T>();
}

template <typename Range, typename Pred>
auto find_by(Range& range, Pred pred) -> decltype(&*range.begin()) {
    auto it = std::find_if(range.begin(), range.end(), pred);
    return it == range.end() ? nullptr : &*it;
}

} // namespace

std::string_view stage_name(Stage stage) { return enum_name(stage, stage_names); }
Stage stage_from_name(std::string_view name) { return enum_from<Stage>(name, stage_names, "stage"); }
std::string_view provenance_name(Provenance p) { return enum_name(p, provenance_names); }
Provenance provenance_from_name(std::string_view name) {
    return enum_from<Provenance>(name, provenance_names, "provenance");
}
std::string_view confidence_name(Confidence c) { return enum_name(c, confidence_names); }
Confidence confidence_from_name(std::string_view name) {
    return enum_from<Confidence>(name, confidence_names, "confidence");
}
std::string_view actor_name(Actor a) { return enum_name(a, actor_names); }
Actor actor_from_name(std::string_view name) { return enum_from<Actor>(name, actor_names, "actor"); }

std::string to_iso8601(Timestamp t) {
    std::int64_t secs = t.unix_ms / 1000;
    std::int64_t ms = t.unix_ms % 1000;
    if (ms < 0) {
        ms += 1000;
        --secs;
    }
    std::time_t tt = static_cast<std::time_t>(secs);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

Timestamp parse_iso8601(std::string_view text) {
    std::tm tm{};
    int ms = 0;
    std::string s(text);
    int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3dZ", &tm.tm_year, &tm.tm_mon,
                        &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &ms);
    if (n < 6) throw Error(ErrorCode::invalid_argument, "malformed timestamp '" + s + "'");
    tm.tm_year -= 1900;
    tm.tm_mon -= 1;
    return Timestamp{static_cast<std::int64_t>(timegm(&tm)) * 1000 + ms};
}

const SourceDocument* AnalysisSession::find_document(std::string_view id) const {
    return find_by(documents, [&](const auto& d) { return d.id == id; });
}
OpenCode* AnalysisSession::find_code(std::string_view id) {
    return find_by(codes, [&](const auto& c) { return c.id == id; });
}
const OpenCode* AnalysisSession::find_code(std::string_view id) const {
    return find_by(codes, [&](const auto& c) { return c.id == id; });
}
ChunkAssignment* AnalysisSession::find_chunk(std::string_view id) {
    return find_by(chunks, [&](const auto& c) { return c.chunk_id == id; });
}
const ChunkAssignment* AnalysisSession::find_chunk(std::string_view id) const {
    return find_by(chunks, [&](const auto& c) { return c.chunk_id == id; });
}
SubTheme* AnalysisSession::find_subtheme(std::string_view id) {
    return find_by(subthemes, [&](const auto& s) { return s.id == id; });
}
const SubTheme* AnalysisSession::find_subtheme(std::string_view id) const {
    return find_by(subthemes, [&](const auto& s) { return s.id == id; });
}
Theme* AnalysisSession::find_theme(std::string_view id) {
    return find_by(themes, [&](const auto& t) { return t.id == id; });
}
const Theme* AnalysisSession::find_theme(std::string_view id) const {
    return find_by(themes, [&](const auto& t) { return t.id == id; });
}
const ResearchQuestion* AnalysisSession::find_question(std::string_view id) const {
    return find_by(research_questions, [&](const auto& q) { return q.id == id; });
}
const SavedVersion* AnalysisSession::find_version(std::string_view id) const {
    return find_by(saved_versions, [&](const auto& v) { return v.version_id == id; });
}
const PromptRecord* AnalysisSession::find_prompt(std::string_view id) const {
    return find_by(prompt_records, [&](const auto& p) { return p.id == id; });
}

bool AnalysisSession::has_unit(std::string_view id) const {
    return find_code(id) || find_subtheme(id) || find_theme(id);
}

// --- JSON --------------------------------------------------------------------

void to_json(json& j, const Timestamp& v) { j = to_iso8601(v); }
void from_json(const json& j, Timestamp& v) { v = parse_iso8601(j.get<std::string>()); }

void to_json(json& j, const SourceDocument& v) {
    j = json{{"id", v.id}, {"title", v.title}, {"body", v.body}, {"word_count", v.word_count}};
}
void from_json(const json& j, SourceDocument& v) {
    v.id = j.at("id").get<std::string>();
    v.title = value_or<std::string>(j, "title", "");
    v.body = j.at("body").get<std::string>();
    v.word_count = value_or<std::size_t>(j, "word_count", 0);
}

void to_json(json& j, const ResearchQuestion& v) { j = json{{"id", v.id}, {"text", v.text}}; }
void from_json(const json& j, ResearchQuestion& v) {
    v.id = value_or<std::string>(j, "id", "");
    v.text = j.at("text").get<std::string>();
}

void to_json(json& j, const ChunkAssignment& v) {
    j = json{{"chunk_id", v.chunk_id},         {"document_id", v.document_id},
             {"start_offset", v.start_offset}, {"end_offset", v.end_offset},
             {"text", v.text},                 {"code_id", v.code_id}};
}
void from_json(const json& j, ChunkAssignment& v) {
    v.chunk_id = j.at("chunk_id").get<std::string>();
    v.document_id = j.at("document_id").get<std::string>();
    v.start_offset = j.at("start_offset").get<std::size_t>();
    v.end_offset = j.at("end_offset").get<std::size_t>();
    v.text = j.at("text").get<std::string>();
    v.code_id = j.at("code_id").get<std::string>();
}

void to_json(json& j, const OpenCode& v) {
    j = json{{"id", v.id},
             {"name", v.name},
             {"chunk_ids", v.chunk_ids},
             {"provenance", provenance_name(v.provenance)},
             {"subtheme_id", optional_to_json(v.subtheme_id)}};
}
void from_json(const json& j, OpenCode& v) {
    v.id = j.at("id").get<std::string>();
    v.name = j.at("name").get<std::string>();
    v.chunk_ids = value_or<std::vector<UnitId>>(j, "chunk_ids", {});
    v.provenance = provenance_from_name(value_or<std::string>(j, "provenance", "machine_generated"));
    v.subtheme_id = optional_from_json<UnitId>(j, "subtheme_id");
}

void to_json(json& j, const SubTheme& v) {
    j = json{{"id", v.id},
             {"name", v.name},
             {"code_ids", v.code_ids},
             {"provenance", provenance_name(v.provenance)},
             {"theme_id", optional_to_json(v.theme_id)}};
}
void from_json(const json& j, SubTheme& v) {
    v.id = j.at("id").get<std::string>();
    v.name = j.at("name").get<std::string>();
    v.code_ids = value_or<std::vector<UnitId>>(j, "code_ids", {});
    v.provenance = provenance_from_name(value_or<std::string>(j, "provenance", "machine_generated"));
    v.theme_id = optional_from_json<UnitId>(j, "theme_id");
}

void to_json(json& j, const Theme& v) {
    j = json{{"id", v.id},
             {"name", v.name},
             {"description", v.description},
             {"subtheme_ids", v.subtheme_ids},
             {"provenance", provenance_name(v.provenance)},
             {"research_question_ids", v.research_question_ids}};
}
void from_json(const json& j, Theme& v) {
    v.id = j.at("id").get<std::string>();
    v.name = j.at("name").get<std::string>();
    v.description = value_or<std::string>(j, "description", "");
    v.subtheme_ids = value_or<std::vector<UnitId>>(j, "subtheme_ids", {});
    v.provenance = provenance_from_name(value_or<std::string>(j, "provenance", "machine_generated"));
    v.research_question_ids = value_or<std::vector<std::string>>(j, "research_question_ids", {});
}

void to_json(json& j, const CritiqueEntry& v) {
    j = json{{"unit_id", v.unit_id},
             {"confidence", confidence_name(v.confidence)},
             {"rationale", v.rationale}};
}
void from_json(const json& j, CritiqueEntry& v) {
    v.unit_id = j.at("unit_id").get<std::string>();
    v.confidence = confidence_from_name(j.at("confidence").get<std::string>());
    v.rationale = value_or<std::string>(j, "rationale", "");
}

void to_json(json& j, const Nudge& v) {
    j = json{{"stage", stage_name(v.stage)},
             {"what_llm_did", v.what_llm_did},
             {"self_critique", v.self_critique}};
}
void from_json(const json& j, Nudge& v) {
    v.stage = stage_from_name(j.at("stage").get<std::string>());
    v.what_llm_did = j.at("what_llm_did").get<std::string>();
    v.self_critique = value_or<std::vector<CritiqueEntry>>(j, "self_critique", {});
}

void to_json(json& j, const Memo& v) {
    j = json{{"id", v.id},
             {"stage", stage_name(v.stage)},
             {"text", v.text},
             {"created_at", v.created_at},
             {"author", v.author}};
}
void from_json(const json& j, Memo& v) {
    v.id = j.at("id").get<std::string>();
    v.stage = stage_from_name(j.at("stage").get<std::string>());
    v.text = j.at("text").get<std::string>();
    v.created_at = j.at("created_at").get<Timestamp>();
    v.author = value_or<std::string>(j, "author", "analyst");
}

void to_json(json& j, const PromptRecord& v) {
    j = json{{"id", v.id},
             {"stage", stage_name(v.stage)},
             {"user_prompt_text", v.user_prompt_text},
             {"parameters", v.parameters},
             {"issued_at", v.issued_at},
             {"applied", v.applied}};
}
void from_json(const json& j, PromptRecord& v) {
    v.id = j.at("id").get<std::string>();
    v.stage = stage_from_name(j.at("stage").get<std::string>());
    v.user_prompt_text = j.at("user_prompt_text").get<std::string>();
    v.parameters = value_or<json>(j, "parameters", json::object());
    v.issued_at = j.at("issued_at").get<Timestamp>();
    v.applied = value_or<bool>(j, "applied", false);
}

void to_json(json& j, const Finding& v) {
    j = json{{"summary_text", v.summary_text},
             {"supporting_unit_ids", v.supporting_unit_ids},
             {"research_question_id", optional_to_json(v.research_question_id)}};
}
void from_json(const json& j, Finding& v) {
    v.summary_text = j.at("summary_text").get<std::string>();
    v.supporting_unit_ids = value_or<std::vector<UnitId>>(j, "supporting_unit_ids", {});
    v.research_question_id = optional_from_json<std::string>(j, "research_question_id");
}

void to_json(json& j, const KeyFindings& v) {
    j = json{{"findings", v.findings}, {"themes_without_findings", v.themes_without_findings}};
}
void from_json(const json& j, KeyFindings& v) {
    v.findings = value_or<std::vector<Finding>>(j, "findings", {});
    v.themes_without_findings = value_or<std::vector<UnitId>>(j, "themes_without_findings", {});
}

void to_json(json& j, const Span& v) { j = json::array({v.start, v.end}); }
void from_json(const json& j, Span& v) {
    v.start = j.at(0).get<std::size_t>();
    v.end = j.at(1).get<std::size_t>();
}

void to_json(json& j, const DocumentCoverage& v) {
    j = json{{"document_id", v.document_id},
             {"jaccard", v.jaccard},
             {"covered_spans", v.covered_spans},
             {"uncovered_spans", v.uncovered_spans}};
}
void from_json(const json& j, DocumentCoverage& v) {
    v.document_id = j.at("document_id").get<std::string>();
    v.jaccard = j.at("jaccard").get<double>();
    v.covered_spans = j.at("covered_spans").get<std::vector<Span>>();
    v.uncovered_spans = j.at("uncovered_spans").get<std::vector<Span>>();
}

void to_json(json& j, const CoverageReport& v) {
    j = json{{"per_document", v.per_document}, {"overall_jaccard", v.overall_jaccard}};
}
void from_json(const json& j, CoverageReport& v) {
    v.per_document = j.at("per_document").get<std::vector<DocumentCoverage>>();
    v.overall_jaccard = j.at("overall_jaccard").get<double>();
}

void to_json(json& j, const SavedVersion& v) {
    j = json{{"version_id", v.version_id},
             {"seq_at_save", v.seq_at_save},
             {"label", optional_to_json(v.label)},
             {"saved_at", v.saved_at}};
}
void from_json(const json& j, SavedVersion& v) {
    v.version_id = j.at("version_id").get<std::string>();
    v.seq_at_save = j.at("seq_at_save").get<std::uint64_t>();
    v.label = optional_from_json<std::string>(j, "label");
    v.saved_at = j.at("saved_at").get<Timestamp>();
}

void to_json(json& j, const StageState& v) {
    j = json{{"committed", v.committed},
             {"stale", v.stale},
             {"template_version", v.template_version},
             {"parameters", v.parameters},
             {"warnings", v.warnings},
             {"nudge", optional_to_json(v.nudge)},
             {"nudge_stale", v.nudge_stale},
             {"committed_seq", v.committed_seq}};
}
void from_json(const json& j, StageState& v) {
    v.committed = value_or<bool>(j, "committed", false);
    v.stale = value_or<bool>(j, "stale", false);
    v.template_version = value_or<std::string>(j, "template_version", "");
    v.parameters = value_or<json>(j, "parameters", json::object());
    v.warnings = value_or<std::vector<std::string>>(j, "warnings", {});
    v.nudge = optional_from_json<Nudge>(j, "nudge");
    v.nudge_stale = value_or<bool>(j, "nudge_stale", false);
    v.committed_seq = value_or<std::uint64_t>(j, "committed_seq", 0);
}

void to_json(json& j, const SessionSettings& v) {
    j = json{{"template_version", v.template_version}, {"provider", v.provider}};
}
void from_json(const json& j, SessionSettings& v) {
    v.template_version = value_or<std::string>(j, "template_version", "");
    v.provider = value_or<json>(j, "provider", json::object());
}

void to_json(json& j, const AnalysisSession& v) {
    json stages = json::object();
    for (Stage s : all_stages) stages[std::string(stage_name(s))] = v.stage(s);
    j = json{{"schema", session_schema_name},
             {"schema_version", session_schema_version},
             {"id", v.id},
             {"created_at", v.created_at},
             {"documents", v.documents},
             {"research_questions", v.research_questions},
             {"settings", v.settings},
             {"stages", stages},
             {"codes", v.codes},
             {"chunks", v.chunks},
             {"subthemes", v.subthemes},
             {"themes", v.themes},
             {"ungrouped_codes", v.ungrouped_codes},
             {"ungrouped_subthemes", v.ungrouped_subthemes},
             {"key_findings", optional_to_json(v.key_findings)},
             {"memos", v.memos},
             {"prompt_records", v.prompt_records},
             {"coverage_report", optional_to_json(v.coverage_report)},
             {"saved_versions", v.saved_versions},
             {"id_counter", v.id_counter},
             {"last_seq", v.last_seq}};
}

void from_json(const json& j, AnalysisSession& v) {
    if (value_or<std::string>(j, "schema", "") != session_schema_name) {
        throw Error(ErrorCode::invalid_argument, "not a session document");
    }
    v.id = j.at("id").get<std::string>();
    v.created_at = j.at("created_at").get<Timestamp>();
    v.documents = j.at("documents").get<std::vector<SourceDocument>>();
    v.research_questions = value_or<std::vector<ResearchQuestion>>(j, "research_questions", {});
    v.settings = value_or<SessionSettings>(j, "settings", {});
    const json& stages = j.at("stages");
    for (Stage s : all_stages) {
        auto it = stages.find(std::string(stage_name(s)));
        v.stage(s) = it == stages.end() ? StageState{} : it->get<StageState>();
    }
    v.codes = value_or<std::vector<OpenCode>>(j, "codes", {});
    v.chunks = value_or<std::vector<ChunkAssignment>>(j, "chunks", {});
    v.subthemes = value_or<std::vector<SubTheme>>(j, "subthemes", {});
    v.themes = value_or<std::vector<Theme>>(j, "themes", {});
    v.ungrouped_codes = value_or<std::vector<UnitId>>(j, "ungrouped_codes", {});
    v.ungrouped_subthemes = value_or<std::vector<UnitId>>(j, "ungrouped_subthemes", {});
    v.key_findings = optional_from_json<KeyFindings>(j, "key_findings");
    v.memos = value_or<std::vector<Memo>>(j, "memos", {});
    v.prompt_records = value_or<std::vector<PromptRecord>>(j, "prompt_records", {});
    v.coverage_report = optional_from_json<CoverageReport>(j, "coverage_report");
    v.saved_versions = value_or<std::vector<SavedVersion>>(j, "saved_versions", {});
    v.id_counter = value_or<std::uint64_t>(j, "id_counter", 0);
    v.last_seq = value_or<std::uint64_t>(j, "last_seq", 0);
}

} // namespace qda
