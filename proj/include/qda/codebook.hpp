#pragma once

#include "qda/audit.hpp"
#include "qda/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace qda::codebook {

struct Quote {
    std::string document_id;
    std::size_t start_offset = 0;
    std::size_t end_offset = 0;
    std::string text;
    bool operator==(const Quote&) const = default;
};

struct CodeEntry {
    UnitId id;
    std::string name;
    Provenance provenance = Provenance::machine_generated;
    std::vector<Quote> quotes;
    bool operator==(const CodeEntry&) const = default;
};

struct SubthemeEntry {
    UnitId id;
    std::string name;
    Provenance provenance = Provenance::machine_generated;
    std::vector<CodeEntry> codes;
    bool operator==(const SubthemeEntry&) const = default;
};

struct ThemeEntry {
    UnitId id;
    std::string name;
    std::string description;
    Provenance provenance = Provenance::machine_generated;
    std::vector<std::string> research_question_ids;
    std::vector<SubthemeEntry> subthemes;
    bool operator==(const ThemeEntry&) const = default;
};

struct PrimaryCodebook {
    std::vector<ThemeEntry> themes;
    std::vector<SubthemeEntry> ungrouped_subthemes;
    std::vector<CodeEntry> ungrouped_codes;
    bool operator==(const PrimaryCodebook&) const = default;
};

/// One step of the development history, derived from one audit event.
struct TrajectoryEntry {
    std::uint64_t seq = 0;
    Timestamp timestamp;
    Actor actor = Actor::system;
    /// session, stage_snapshot, regeneration, nudge, rejected, edit, memo,
    /// prompt, coverage, version, export
    std::string kind;
    std::optional<Stage> stage;
    std::string summary;
    json detail = json::object();
    bool operator==(const TrajectoryEntry&) const = default;
};

struct TrustworthyCodebook {
    std::string session_id;
    std::string version_id;
    std::optional<std::string> version_label;
    std::uint64_t seq_at_save = 0;
    Timestamp generated_at;
    std::string model_name;
    std::string template_version;
    std::vector<ResearchQuestion> research_questions;
    KeyFindings key_findings;
    /// Display names of every unit cited by a finding.
    std::vector<std::pair<UnitId, std::string>> cited_units;
    std::string theme_map_dot;
    PrimaryCodebook primary_codebook;
    std::vector<TrajectoryEntry> trajectory;
    std::string disclaimer;
    /// Caveats, e.g. sections generated before later edits.
    std::vector<std::string> notes;
    bool operator==(const TrustworthyCodebook&) const = default;
};

inline constexpr std::string_view codebook_format_name = "qda-codebook";
inline constexpr int codebook_schema_version = 1;

std::string disclaimer_text(const std::string& model_name);

/// Builds the codebook from `session` replayed to the version's seq and
/// the audit events up to that seq. Throws Error(missing_summary) when the
/// summary stage was not committed at that point.
TrustworthyCodebook assemble(const AnalysisSession& session, const std::vector<audit::AuditEvent>& events,
                             const SavedVersion& version, Timestamp generated_at);

json to_json(const TrustworthyCodebook& cb);
TrustworthyCodebook from_json(const json& j);

/// Structured form: the JSON document with a versioned header.
std::string render_structured(const TrustworthyCodebook& cb);
TrustworthyCodebook parse_structured(std::string_view text);

/// Printable Markdown. `svg` is embedded after the DOT source when given.
std::string render_printable(const TrustworthyCodebook& cb, const std::optional<std::string>& svg = std::nullopt);

/// Runs Graphviz `dot -Tsvg` when it is on PATH; nullopt otherwise.
std::optional<std::string> render_svg(const std::string& dot);

inline constexpr std::array<std::string_view, 4> printable_headings{
    "## 1. Key Finding Summary", "## 2. Theme Map & Primary Codebook", "## 3. Codebook Development Trajectory",
    "## 4. Disclaimer"};

} // namespace qda::codebook
