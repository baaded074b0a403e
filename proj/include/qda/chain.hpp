#pragma once

#include "qda/audit.hpp"
#include "qda/gateway.hpp"
#include "qda/model.hpp"
#include "qda/templates.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace qda::chain {

inline constexpr const char* codes_schema = "codes.v1";
inline constexpr const char* subthemes_schema = "subthemes.v1";
inline constexpr const char* themes_schema = "themes.v1";
inline constexpr const char* summary_schema = "summary.v1";
inline constexpr const char* nudge_schema = "nudge.v1";

std::string stage_schema_id(Stage stage);

/// Registers the response schemas of every stage plus the nudge schema.
void register_stage_schemas(llm::SchemaRegistry& registry);
std::shared_ptr<llm::SchemaRegistry> make_stage_schemas();

struct StageParameters {
    Stage stage = Stage::codes;
    std::optional<int> number_of_codes;
    std::optional<std::string> user_prompt;

    /// Throws Error(invalid_argument): number_of_codes must be positive and
    /// is only meaningful for the codes stage.
    void validate() const;
    json to_json() const;
    static StageParameters from_json(Stage stage, const json& j);
};

/// A unit as the LLM sees it: positional label plus engine id.
struct LabeledUnit {
    std::string label;
    UnitId id;
    std::string name;
};

/// Units of one stage in session order, labeled C1.., S1.. or T1...
std::vector<LabeledUnit> stage_units(const AnalysisSession& session, Stage stage);

/// Throws stale_upstream or precondition_failed when `stage` may not run.
void check_preconditions(const AnalysisSession& session, Stage stage);

/// Everything a successful stage run hands back for commit.
struct StageOutcome {
    /// {codes, chunks} | {subthemes} | {themes} | {key_findings}
    json output;
    std::optional<Nudge> nudge;
    std::vector<std::string> warnings;
    json parameters = json::object();
    std::uint64_t id_counter = 0;
};

/// Stateless driver for the four-stage chain. Every gateway call is
/// appended to `calls` (digests, blob references, attempts) whether it
/// succeeds or not, so failures can be audited too.
class ReasoningChain {
public:
    ReasoningChain(TemplateSet templates, std::shared_ptr<llm::SchemaRegistry> schemas, llm::ProviderConfig config,
                   std::shared_ptr<audit::BlobStore> blobs);

    StageOutcome run_stage(const AnalysisSession& session, const StageParameters& params, llm::Provider& provider,
                           json& calls) const;

    /// Confidence labeling for `units` at `stage`. Not available for summary.
    Nudge generate_nudge(Stage stage, const std::vector<LabeledUnit>& units,
                         const std::optional<std::string>& user_prompt, llm::Provider& provider, json& calls) const;

    llm::ChainRequest build_request(const AnalysisSession& session, const StageParameters& params) const;

    const TemplateSet& templates() const { return templates_; }
    const llm::ProviderConfig& config() const { return config_; }

private:
    llm::ChainResponse call(const llm::ChainRequest& request, const char* purpose, llm::Provider& provider,
                            json& calls, const llm::SemanticCheck& check = {}) const;

    StageOutcome parse_codes(const AnalysisSession& s, const StageParameters& params, const json& parsed) const;
    StageOutcome parse_subthemes(const AnalysisSession& s, const json& parsed) const;
    StageOutcome parse_themes(const AnalysisSession& s, const json& parsed) const;
    StageOutcome parse_summary(const AnalysisSession& s, const json& parsed) const;

    TemplateSet templates_;
    llm::Gateway gateway_;
    llm::ProviderConfig config_;
    std::shared_ptr<audit::BlobStore> blobs_;
};

} // namespace qda::chain
