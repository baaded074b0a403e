#include "qda/gateway.hpp"

#include "qda/digest.hpp"

#include <httplib.h>

#include <cstdlib>
#include <regex>

namespace qda::llm {

namespace {

std::string type_of(const json& v) {
    switch (v.type()) {
    case json::value_t::null: return "null";
    case json::value_t::boolean: return "boolean";
    case json::value_t::number_integer:
    case json::value_t::number_unsigned: return "integer";
    case json::value_t::number_float: return "number";
    case json::value_t::string: return "string";
    case json::value_t::array: return "array";
    case json::value_t::object: return "object";
    default: return "unknown";
    }
}

bool type_matches(const std::string& wanted, const json& v) {
    std::string actual = type_of(v);
    if (wanted == actual) return true;
    return wanted == "number" && actual == "integer";
}

std::optional<std::string> validate_node(const json& schema, const json& v, const std::string& path) {
    const std::string where = path.empty() ? "/" : path;
    if (auto it = schema.find("type"); it != schema.end()) {
        bool ok = false;
        if (it->is_array()) {
            for (const auto& t : *it) ok = ok || type_matches(t.get<std::string>(), v);
        } else {
            ok = type_matches(it->get<std::string>(), v);
        }
        if (!ok) return "expected " + it->dump() + " at " + where + ", found " + type_of(v);
    }
    if (auto it = schema.find("enum"); it != schema.end()) {
        bool found = false;
        for (const auto& option : *it) found = found || option == v;
        if (!found) return "value at " + where + " must be one of " + it->dump();
    }
    if (v.is_string()) {
        if (auto it = schema.find("minLength"); it != schema.end()) {
            if (v.get<std::string>().size() < it->get<std::size_t>()) {
                return "string at " + where + " is shorter than " + std::to_string(it->get<std::size_t>());
            }
        }
    }
    if (v.is_object()) {
        if (auto it = schema.find("required"); it != schema.end()) {
            for (const auto& key : *it) {
                if (!v.contains(key.get<std::string>())) {
                    return "missing required field \"" + key.get<std::string>() + "\" at " + where;
                }
            }
        }
        const json* props = schema.contains("properties") ? &schema["properties"] : nullptr;
        for (const auto& [key, child] : v.items()) {
            if (props && props->contains(key)) {
                if (auto err = validate_node((*props)[key], child, path + "/" + key)) return err;
            } else if (schema.value("additionalProperties", true) == false) {
                return "unexpected field \"" + key + "\" at " + where;
            }
        }
    }
    if (v.is_array()) {
        if (auto it = schema.find("minItems"); it != schema.end()) {
            if (v.size() < it->get<std::size_t>()) {
                return "array at " + where + " needs at least " + std::to_string(it->get<std::size_t>()) +
                       " item(s)";
            }
        }
        if (auto it = schema.find("items"); it != schema.end()) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (auto err = validate_node(*it, v[i], path + "/" + std::to_string(i))) return err;
            }
        }
    }
    return std::nullopt;
}

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, pattern)) {
        throw Error(ErrorCode::invalid_argument, "malformed provider endpoint '" + url + "'");
    }
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

} // namespace

void ProviderConfig::validate() const {
    if (max_repair_attempts < 1) throw Error(ErrorCode::invalid_argument, "max_repair_attempts must be >= 1");
    if (max_output_tokens < 1) throw Error(ErrorCode::invalid_argument, "max_output_tokens must be positive");
    if (request_timeout.count() <= 0) throw Error(ErrorCode::invalid_argument, "request_timeout must be positive");
    if (kind == ProviderKind::live) {
        if (endpoint.empty()) throw Error(ErrorCode::invalid_argument, "live provider needs an endpoint");
        parse_url(endpoint);
        if (model_name.empty()) throw Error(ErrorCode::invalid_argument, "live provider needs a model name");
    }
}

json ProviderConfig::describe() const {
    json j{{"kind", kind == ProviderKind::live ? "live" : "mock"},
           {"model_name", model_name},
           {"reasoning_effort", reasoning_effort == ReasoningEffort::minimal ? "minimal" : "standard"},
           {"max_output_tokens", max_output_tokens},
           {"request_timeout_ms", request_timeout.count()},
           {"max_repair_attempts", max_repair_attempts},
           {"temperature", temperature ? json(*temperature) : json(nullptr)}};
    if (kind == ProviderKind::live) j["endpoint"] = endpoint;
    return j;
}

std::string ChainRequest::digest() const {
    return sha256_hex(schema_id + '\n' + system_prompt + '\n' + payload.dump());
}

// --- SchemaRegistry --------------------------------------------------------------

void SchemaRegistry::register_schema(const std::string& schema_id, json definition) {
    std::unique_lock lock(mutex_);
    if (schemas_.count(schema_id)) {
        throw Error(ErrorCode::duplicate_schema, "schema '" + schema_id + "' is already registered");
    }
    schemas_.emplace(schema_id, std::move(definition));
}

bool SchemaRegistry::contains(const std::string& schema_id) const {
    std::shared_lock lock(mutex_);
    return schemas_.count(schema_id) > 0;
}

std::optional<std::string> SchemaRegistry::validate(const std::string& schema_id, const json& document) const {
    std::shared_lock lock(mutex_);
    auto it = schemas_.find(schema_id);
    if (it == schemas_.end()) throw Error(ErrorCode::unknown_schema, "schema '" + schema_id + "' is not registered");
    return validate_node(it->second, document, "");
}

std::optional<std::string> validate_against(const json& schema, const json& document) {
    return validate_node(schema, document, "");
}

// --- Gateway -------------------------------------------------------------------------

std::optional<json> extract_json(const std::string& raw) {
    std::string text = raw;
    auto fence = text.find("```");
    if (fence != std::string::npos) {
        auto body_start = text.find('\n', fence);
        auto close = body_start == std::string::npos ? std::string::npos : text.find("```", body_start);
        if (close != std::string::npos) text = text.substr(body_start + 1, close - body_start - 1);
    }
    auto first = text.find('{');
    auto last = text.rfind('}');
    if (first == std::string::npos || last == std::string::npos || last < first) return std::nullopt;
    try {
        return json::parse(text.substr(first, last - first + 1));
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

ChainResponse Gateway::complete(const ProviderConfig& config, Provider& provider, const ChainRequest& request,
                                const SemanticCheck& check) const {
    config.validate();
    if (!schemas_->contains(request.schema_id)) {
        throw Error(ErrorCode::unknown_schema, "schema '" + request.schema_id + "' is not registered");
    }

    ChainResponse response;
    response.request_digest = request.digest();

    ProviderCall call;
    call.schema_id = request.schema_id;
    call.request_digest = response.request_digest;
    call.payload = &request.payload;
    call.messages = {{"system", request.system_prompt},
                     {"user", "Return the JSON object described above and nothing else."}};

    std::vector<std::string> violations;
    ErrorCode last_code = ErrorCode::schema_violation;
    for (int attempt = 1; attempt <= config.max_repair_attempts; ++attempt) {
        call.attempt = attempt;
        ProviderReply reply = provider.send(config, call);
        response.attempts = attempt;
        response.provider_latency += reply.latency;
        response.raw_attempts.push_back(reply.text);

        std::optional<Violation> violation;
        auto parsed = extract_json(reply.text);
        if (!parsed) {
            violation = Violation{ErrorCode::schema_violation, "response is not a JSON object"};
        } else if (auto err = schemas_->validate(request.schema_id, *parsed)) {
            violation = Violation{ErrorCode::schema_violation, *err};
        } else if (check) {
            violation = check(*parsed);
        }

        if (!violation) {
            response.raw_text = reply.text;
            response.parsed = std::move(*parsed);
            return response;
        }
        violations.push_back(violation->message);
        last_code = violation->code;
        call.messages.push_back({"assistant", reply.text});
        call.messages.push_back({"user", "The previous response was rejected: " + violation->message +
                                             ". Reply again with a corrected JSON object that satisfies "
                                             "every requirement."});
    }
    throw Error(last_code,
                "response for schema '" + request.schema_id + "' still invalid after " +
                    std::to_string(config.max_repair_attempts) + " attempt(s): " + violations.back(),
                json{{"attempts", response.raw_attempts}, {"violations", violations}});
}

// --- LiveProvider -------------------------------------------------------------------

json LiveProvider::build_body(const ProviderConfig& config, const ProviderCall& call) {
    json messages = json::array();
    for (const auto& m : call.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    json body{{"model", config.model_name},
              {"messages", messages},
              {"max_completion_tokens", config.max_output_tokens},
              {"response_format", {{"type", "json_object"}}}};
    if (config.reasoning_effort == ReasoningEffort::minimal) body["reasoning_effort"] = "minimal";
    if (config.temperature) body["temperature"] = *config.temperature;
    return body;
}

ProviderReply LiveProvider::send(const ProviderConfig& config, const ProviderCall& call) {
    auto url = parse_url(config.endpoint);
    httplib::Client client(url.scheme_host_port);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.request_timeout).count();
    client.set_connection_timeout(30);
    client.set_read_timeout(static_cast<time_t>(secs), 0);
    client.set_write_timeout(60);

    httplib::Headers headers;
    if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    auto started = std::chrono::steady_clock::now();
    auto result = client.Post(url.path, headers, build_body(config, call).dump(), "application/json");
    auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (!result) {
        auto err = result.error();
        if (err == httplib::Error::Read && latency >= config.request_timeout) {
            throw Error(ErrorCode::timeout, "provider did not answer within the request timeout");
        }
        throw Error(ErrorCode::provider_unreachable, "provider request failed: " + httplib::to_string(err));
    }
    if (result->status == 408 || result->status == 504) {
        throw Error(ErrorCode::timeout, "provider timed out (HTTP " + std::to_string(result->status) + ")");
    }
    if (result->status != 200) {
        throw Error(ErrorCode::provider_unreachable, "provider returned HTTP " + std::to_string(result->status),
                    json{{"status", result->status}, {"body", result->body}});
    }
    try {
        auto doc = json::parse(result->body);
        return {doc.at("choices").at(0).at("message").at("content").get<std::string>(), latency};
    } catch (const json::exception& e) {
        throw Error(ErrorCode::provider_unreachable, std::string("unexpected provider reply: ") + e.what(),
                    json{{"body", result->body}});
    }
}

} // namespace qda::llm
