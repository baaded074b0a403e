#pragma once

#include "qda/audit.hpp"
#include "qda/error.hpp"
#include "qda/model.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace qda::llm {

enum class ProviderKind { live, mock };
enum class ReasoningEffort { minimal, standard };

struct ProviderConfig {
    ProviderKind kind = ProviderKind::mock;
    /// Chat-completion URL; ignored by the mock provider.
    std::string endpoint;
    std::string model_name = "mock";
    ReasoningEffort reasoning_effort = ReasoningEffort::minimal;
    int max_output_tokens = 32000;
    std::chrono::milliseconds request_timeout{std::chrono::minutes(10)};
    int max_repair_attempts = 3;
    std::optional<double> temperature;
    std::string api_key_env = "OPENAI_API_KEY";

    /// Throws Error(invalid_argument) on inconsistent settings.
    void validate() const;
    /// Loggable description (no secrets) recorded in the session settings.
    json describe() const;
};

struct ChainRequest {
    Stage stage = Stage::codes;
    std::string schema_id;
    std::string system_prompt;
    json payload = json::object();

    /// Digest over schema id, prompt and canonical payload serialization.
    std::string digest() const;
};

struct ChainResponse {
    std::string raw_text;
    json parsed;
    int attempts = 0;
    std::chrono::milliseconds provider_latency{0};
    std::string request_digest;
    std::vector<std::string> raw_attempts;
};

/// Minimal JSON-Schema subset: type, required, properties,
/// additionalProperties (bool), items, enum, minItems, minLength.
class SchemaRegistry {
public:
    void register_schema(const std::string& schema_id, json definition);
    bool contains(const std::string& schema_id) const;
    /// Human-readable description of the first violation, or nullopt.
    std::optional<std::string> validate(const std::string& schema_id, const json& document) const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, json> schemas_;
};

/// Validates `document` against a schema definition directly.
std::optional<std::string> validate_against(const json& schema, const json& document);

struct Message {
    std::string role;
    std::string content;
};

struct ProviderCall {
    std::string schema_id;
    std::string request_digest;
    const json* payload = nullptr;
    std::vector<Message> messages;
    int attempt = 1;
};

struct ProviderReply {
    std::string text;
    std::chrono::milliseconds latency{0};
};

class Provider {
public:
    virtual ~Provider() = default;
    /// Throws Error(provider_unreachable) or Error(timeout).
    virtual ProviderReply send(const ProviderConfig& config, const ProviderCall& call) = 0;
};

/// Deterministic offline provider driven by a script document. See
/// README for the script format. Scripted entries are matched by request
/// digest, then call ordinal, then per-schema queue, then a global queue;
/// unmatched calls fall back to the echo synthesizer or fail.
class MockProvider final : public Provider {
public:
    explicit MockProvider(json script = json::object());
    static std::unique_ptr<MockProvider> from_file(const std::string& path);

    ProviderReply send(const ProviderConfig& config, const ProviderCall& call) override;
    int calls() const;

private:
    struct Entry {
        std::optional<std::string> digest;
        std::optional<int> ordinal;
        std::optional<std::string> schema;
        std::string text;
        int delay_ms = 0;
        std::optional<std::string> error;
        bool used = false;
    };

    ProviderReply deliver(const ProviderConfig& config, const Entry& entry);

    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
    json echo_options_;
    bool fallback_echo_ = true;
    std::vector<int> fail_ordinals_;
    int calls_ = 0;
};

/// Synthesizes a well-formed response from the request payload: verbatim
/// sentence chunks (optionally with a deterministic fraction of distinct
/// words dropped), pairwise grouping for higher stages, one finding per
/// theme and a full confidence labeling for nudges.
std::string echo_response(const std::string& schema_id, const json& payload, const json& options);

/// Distinct words an echo run with `fraction` drops from `text`: the
/// sorted distinct tokens at positions i where floor((i+1)f) > floor(i f).
std::vector<std::string> echo_dropped_words(const std::string& text, double fraction);

/// OpenAI-compatible chat-completions client.
class LiveProvider final : public Provider {
public:
    ProviderReply send(const ProviderConfig& config, const ProviderCall& call) override;
    /// Request body as sent on the wire; exposed for tests.
    static json build_body(const ProviderConfig& config, const ProviderCall& call);
};

/// Extra check run on a schema-valid response inside the repair loop.
struct Violation {
    ErrorCode code = ErrorCode::schema_violation;
    std::string message;
};
using SemanticCheck = std::function<std::optional<Violation>(const json&)>;

/// Stateless front door to a provider: schema enforcement plus a bounded
/// repair loop that re-prompts with the violation appended.
class Gateway {
public:
    explicit Gateway(std::shared_ptr<SchemaRegistry> schemas) : schemas_(std::move(schemas)) {}

    ChainResponse complete(const ProviderConfig& config, Provider& provider, const ChainRequest& request,
                           const SemanticCheck& check = {}) const;

    const SchemaRegistry& schemas() const { return *schemas_; }

private:
    std::shared_ptr<SchemaRegistry> schemas_;
};

/// Strips markdown fences and surrounding prose, then parses JSON.
std::optional<json> extract_json(const std::string& raw);

} // namespace qda::llm
