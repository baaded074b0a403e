#pragma once

#include <json.hpp>

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qda {

using json = nlohmann::json;
using UnitId = std::string;

enum class Stage { codes = 0, subthemes = 1, themes = 2, summary = 3 };
inline constexpr std::array<Stage, 4> all_stages{Stage::codes, Stage::subthemes, Stage::themes,
                                                 Stage::summary};

enum class Provenance { machine_generated, user_edited };
enum class Confidence { most_confident, less_confident, ambiguous };
enum class Actor { system, analyst };

std::string_view stage_name(Stage stage);
Stage stage_from_name(std::string_view name);
std::string_view provenance_name(Provenance p);
Provenance provenance_from_name(std::string_view name);
std::string_view confidence_name(Confidence c);
Confidence confidence_from_name(std::string_view name);
std::string_view actor_name(Actor a);
Actor actor_from_name(std::string_view name);

inline std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

/// Milliseconds since the Unix epoch, rendered as ISO-8601 UTC on the wire.
struct Timestamp {
    std::int64_t unix_ms = 0;
    auto operator<=>(const Timestamp&) const = default;
};

std::string to_iso8601(Timestamp t);
Timestamp parse_iso8601(std::string_view text);

struct SourceDocument {
    std::string id;
    std::string title;
    std::string body;
    std::size_t word_count = 0;
    bool operator==(const SourceDocument&) const = default;
};

struct ResearchQuestion {
    std::string id;
    std::string text;
    bool operator==(const ResearchQuestion&) const = default;
};

/// Exact substring of a document body, identified by its [start, end) byte
/// range and owned by exactly one open code.
struct ChunkAssignment {
    UnitId chunk_id;
    std::string document_id;
    std::size_t start_offset = 0;
    std::size_t end_offset = 0;
    std::string text;
    UnitId code_id;
    bool operator==(const ChunkAssignment&) const = default;
};

struct OpenCode {
    UnitId id;
    std::string name;
    std::vector<UnitId> chunk_ids;
    Provenance provenance = Provenance::machine_generated;
    std::optional<UnitId> subtheme_id;
    bool operator==(const OpenCode&) const = default;
};

struct SubTheme {
    UnitId id;
    std::string name;
    std::vector<UnitId> code_ids;
    Provenance provenance = Provenance::machine_generated;
    std::optional<UnitId> theme_id;
    bool operator==(const SubTheme&) const = default;
};

struct Theme {
    UnitId id;
    std::string name;
    std::string description;
    std::vector<UnitId> subtheme_ids;
    Provenance provenance = Provenance::machine_generated;
    std::vector<std::string> research_question_ids;
    bool operator==(const Theme&) const = default;
};

struct CritiqueEntry {
    UnitId unit_id;
    Confidence confidence = Confidence::ambiguous;
    std::string rationale;
    bool operator==(const CritiqueEntry&) const = default;
};

struct Nudge {
    Stage stage = Stage::codes;
    std::string what_llm_did;
    std::vector<CritiqueEntry> self_critique;
    bool operator==(const Nudge&) const = default;
};

struct Memo {
    UnitId id;
    Stage stage = Stage::codes;
    std::string text;
    Timestamp created_at;
    std::string author = "analyst";
    bool operator==(const Memo&) const = default;
};

struct PromptRecord {
    UnitId id;
    Stage stage = Stage::codes;
    std::string user_prompt_text;
    json parameters = json::object();
    Timestamp issued_at;
    bool applied = false;
    bool operator==(const PromptRecord&) const = default;
};

struct Finding {
    std::string summary_text;
    std::vector<UnitId> supporting_unit_ids;
    std::optional<std::string> research_question_id;
    bool operator==(const Finding&) const = default;
};

struct KeyFindings {
    std::vector<Finding> findings;
    /// Themes no finding cites; the explicit no-finding marker.
    std::vector<UnitId> themes_without_findings;
    bool operator==(const KeyFindings&) const = default;
};

struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    bool operator==(const Span&) const = default;
};

struct DocumentCoverage {
    std::string document_id;
    double jaccard = 0.0;
    std::vector<Span> covered_spans;
    std::vector<Span> uncovered_spans;
    bool operator==(const DocumentCoverage&) const = default;
};

struct CoverageReport {
    std::vector<DocumentCoverage> per_document;
    double overall_jaccard = 0.0;
    bool operator==(const CoverageReport&) const = default;
};

struct SavedVersion {
    std::string version_id;
    std::uint64_t seq_at_save = 0;
    std::optional<std::string> label;
    Timestamp saved_at;
    bool operator==(const SavedVersion&) const = default;
};

struct StageState {
    bool committed = false;
    bool stale = false;
    std::string template_version;
    json parameters = json::object();
    std::vector<std::string> warnings;
    std::optional<Nudge> nudge;
    bool nudge_stale = false;
    std::uint64_t committed_seq = 0;
    bool operator==(const StageState&) const = default;
};

struct SessionSettings {
    std::string template_version;
    /// Provider kind, model, reasoning effort and sampling parameters,
    /// fixed for the life of the session.
    json provider = json::object();
    bool operator==(const SessionSettings&) const = default;
};

struct AnalysisSession {
    std::string id;
    Timestamp created_at;
    std::vector<SourceDocument> documents;
    std::vector<ResearchQuestion> research_questions;
    SessionSettings settings;
    std::array<StageState, 4> stages{};

    std::vector<OpenCode> codes;
    std::vector<ChunkAssignment> chunks;
    std::vector<SubTheme> subthemes;
    std::vector<Theme> themes;
    std::vector<UnitId> ungrouped_codes;
    std::vector<UnitId> ungrouped_subthemes;
    std::optional<KeyFindings> key_findings;

    std::vector<Memo> memos;
    std::vector<PromptRecord> prompt_records;
    std::optional<CoverageReport> coverage_report;
    std::vector<SavedVersion> saved_versions;

    std::uint64_t id_counter = 0;
    std::uint64_t last_seq = 0;

    bool operator==(const AnalysisSession&) const = default;

    StageState& stage(Stage s) { return stages[stage_index(s)]; }
    const StageState& stage(Stage s) const { return stages[stage_index(s)]; }

    const SourceDocument* find_document(std::string_view id) const;
    OpenCode* find_code(std::string_view id);
    const OpenCode* find_code(std::string_view id) const;
    ChunkAssignment* find_chunk(std::string_view id);
    const ChunkAssignment* find_chunk(std::string_view id) const;
    SubTheme* find_subtheme(std::string_view id);
    const SubTheme* find_subtheme(std::string_view id) const;
    Theme* find_theme(std::string_view id);
    const Theme* find_theme(std::string_view id) const;
    const ResearchQuestion* find_question(std::string_view id) const;
    const SavedVersion* find_version(std::string_view id) const;
    const PromptRecord* find_prompt(std::string_view id) const;

    /// True when `id` names a code, subtheme or theme.
    bool has_unit(std::string_view id) const;
};

void to_json(json& j, const Timestamp& v);
void from_json(const json& j, Timestamp& v);
void to_json(json& j, const SourceDocument& v);
void from_json(const json& j, SourceDocument& v);
void to_json(json& j, const ResearchQuestion& v);
void from_json(const json& j, ResearchQuestion& v);
void to_json(json& j, const ChunkAssignment& v);
void from_json(const json& j, ChunkAssignment& v);
void to_json(json& j, const OpenCode& v);
void from_json(const json& j, OpenCode& v);
void to_json(json& j, const SubTheme& v);
void from_json(const json& j, SubTheme& v);
void to_json(json& j, const Theme& v);
void from_json(const json& j, Theme& v);
void to_json(json& j, const CritiqueEntry& v);
void from_json(const json& j, CritiqueEntry& v);
void to_json(json& j, const Nudge& v);
void from_json(const json& j, Nudge& v);
void to_json(json& j, const Memo& v);
void from_json(const json& j, Memo& v);
void to_json(json& j, const PromptRecord& v);
void from_json(const json& j, PromptRecord& v);
void to_json(json& j, const Finding& v);
void from_json(const json& j, Finding& v);
void to_json(json& j, const KeyFindings& v);
void from_json(const json& j, KeyFindings& v);
void to_json(json& j, const Span& v);
void from_json(const json& j, Span& v);
void to_json(json& j, const DocumentCoverage& v);
void from_json(const json& j, DocumentCoverage& v);
void to_json(json& j, const CoverageReport& v);
void from_json(const json& j, CoverageReport& v);
void to_json(json& j, const SavedVersion& v);
void from_json(const json& j, SavedVersion& v);
void to_json(json& j, const StageState& v);
void from_json(const json& j, StageState& v);
void to_json(json& j, const SessionSettings& v);
void from_json(const json& j, SessionSettings& v);
void to_json(json& j, const AnalysisSession& v);
void from_json(const json& j, AnalysisSession& v);

inline constexpr std::string_view session_schema_name = "qda-session";
inline constexpr int session_schema_version = 1;

} // namespace qda
