#include "qda/chain.hpp"

#include "qda/digest.hpp"
#include "qda/error.hpp"
#include "qda/validation.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <set>

namespace qda::chain {

namespace {

json string_array(std::size_t min_items = 0) {
    return json{{"type", "array"}, {"minItems", min_items}, {"items", {{"type", "string"}, {"minLength", 1}}}};
}

json codes_schema_def() {
    json chunk{{"type", "object"},
               {"required", {"document_id", "text"}},
               {"properties", {{"document_id", {{"type", "string"}}}, {"text", {{"type", "string"}, {"minLength", 1}}}}}};
    json code{{"type", "object"},
              {"required", {"name", "chunks"}},
              {"properties",
               {{"name", {{"type", "string"}, {"minLength", 1}}},
                {"chunks", {{"type", "array"}, {"minItems", 1}, {"items", chunk}}}}}};
    return json{{"type", "object"},
                {"required", {"codes"}},
                {"properties", {{"codes", {{"type", "array"}, {"items", code}}}}}};
}

json subthemes_schema_def() {
    json sub{{"type", "object"},
             {"required", {"name", "codes"}},
             {"properties", {{"name", {{"type", "string"}, {"minLength", 1}}}, {"codes", string_array(1)}}}};
    return json{{"type", "object"},
                {"required", {"subthemes"}},
                {"properties", {{"subthemes", {{"type", "array"}, {"items", sub}}}}}};
}

json themes_schema_def() {
    json theme{{"type", "object"},
               {"required", {"name", "description", "subthemes"}},
               {"properties",
                {{"name", {{"type", "string"}, {"minLength", 1}}},
                 {"description", {{"type", "string"}}},
                 {"subthemes", string_array(1)},
                 {"research_questions", string_array()}}}};
    return json{{"type", "object"},
                {"required", {"themes"}},
                {"properties", {{"themes", {{"type", "array"}, {"items", theme}}}}}};
}

json summary_schema_def() {
    json finding{{"type", "object"},
                 {"required", {"summary", "supporting_units"}},
                 {"properties",
                  {{"summary", {{"type", "string"}, {"minLength", 1}}},
                   {"supporting_units", string_array(1)},
                   {"research_question_id", {{"type", json::array({"string", "null"})}}}}}};
    return json{{"type", "object"},
                {"required", {"findings"}},
                {"properties", {{"findings", {{"type", "array"}, {"items", finding}}}}}};
}

json nudge_schema_def() {
    json entry{{"type", "object"},
               {"required", {"unit", "confidence", "rationale"}},
               {"properties",
                {{"unit", {{"type", "string"}}},
                 {"confidence", {{"type", "string"}, {"enum", {"most_confident", "less_confident", "ambiguous"}}}},
                 {"rationale", {{"type", "string"}}}}}};
    return json{{"type", "object"},
                {"required", {"what_llm_did", "self_critique"}},
                {"properties",
                 {{"what_llm_did", {{"type", "string"}, {"minLength", 1}}},
                  {"self_critique", {{"type", "array"}, {"items", entry}}}}}};
}

std::string label(char prefix, std::size_t index) { return std::string(1, prefix) + std::to_string(index + 1); }

std::string optional_text(const std::optional<std::string>& s) { return s && !s->empty() ? *s : "(none)"; }

json questions_json(const AnalysisSession& s) {
    json out = json::array();
    for (const auto& q : s.research_questions) out.push_back({{"id", q.id}, {"text", q.text}});
    return out;
}

std::string questions_text(const AnalysisSession& s) {
    return s.research_questions.empty() ? std::string("(none)") : questions_json(s).dump(2);
}

std::string nudge_template_name(Stage stage) { return "nudge_" + std::string(stage_name(stage)); }

/// Label→id map over one stage's units.
std::map<std::string, UnitId> label_map(const std::vector<LabeledUnit>& units) {
    std::map<std::string, UnitId> out;
    for (const auto& u : units) out.emplace(u.label, u.id);
    return out;
}

std::optional<llm::Violation> check_unique_members(const json& parsed, const char* groups_key,
                                                   const char* members_key) {
    std::set<std::string> seen;
    for (const auto& g : parsed.at(groups_key)) {
        for (const auto& m : g.at(members_key)) {
            if (!seen.insert(m.get<std::string>()).second) {
                return llm::Violation{ErrorCode::schema_violation,
                                      "unit " + m.get<std::string>() + " is assigned to more than one group"};
            }
        }
    }
    return std::nullopt;
}

} // namespace

std::string stage_schema_id(Stage stage) {
    switch (stage) {
    case Stage::codes: return codes_schema;
    case Stage::subthemes: return subthemes_schema;
    case Stage::themes: return themes_schema;
    case Stage::summary: return summary_schema;
    }
    throw Error(ErrorCode::internal, "bad stage");
}

void register_stage_schemas(llm::SchemaRegistry& registry) {
    registry.register_schema(codes_schema, codes_schema_def());
    registry.register_schema(subthemes_schema, subthemes_schema_def());
    registry.register_schema(themes_schema, themes_schema_def());
    registry.register_schema(summary_schema, summary_schema_def());
    registry.register_schema(nudge_schema, nudge_schema_def());
}

std::shared_ptr<llm::SchemaRegistry> make_stage_schemas() {
    auto registry = std::make_shared<llm::SchemaRegistry>();
    register_stage_schemas(*registry);
    return registry;
}

// --- parameters -----------------------------------------------------------------

void StageParameters::validate() const {
    if (number_of_codes) {
        if (stage != Stage::codes) {
            throw Error(ErrorCode::invalid_argument, "number_of_codes only applies to the codes stage");
        }
        if (*number_of_codes < 1) throw Error(ErrorCode::invalid_argument, "number_of_codes must be positive");
    }
}

json StageParameters::to_json() const {
    json j = json::object();
    if (stage == Stage::codes) j["number_of_codes"] = number_of_codes ? json(*number_of_codes) : json(nullptr);
    j["user_prompt"] = user_prompt ? json(*user_prompt) : json(nullptr);
    return j;
}

StageParameters StageParameters::from_json(Stage stage, const json& j) {
    StageParameters p;
    p.stage = stage;
    if (!j.is_object()) {
        if (j.is_null()) return p;
        throw Error(ErrorCode::invalid_argument, "stage parameters must be an object");
    }
    try {
        if (j.contains("number_of_codes") && !j["number_of_codes"].is_null()) {
            p.number_of_codes = j["number_of_codes"].get<int>();
        }
        if (j.contains("user_prompt") && !j["user_prompt"].is_null()) {
            p.user_prompt = j["user_prompt"].get<std::string>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("malformed stage parameters: ") + e.what());
    }
    p.validate();
    return p;
}

std::vector<LabeledUnit> stage_units(const AnalysisSession& s, Stage stage) {
    std::vector<LabeledUnit> out;
    switch (stage) {
    case Stage::codes:
        for (std::size_t i = 0; i < s.codes.size(); ++i) out.push_back({label('C', i), s.codes[i].id, s.codes[i].name});
        break;
    case Stage::subthemes:
        for (std::size_t i = 0; i < s.subthemes.size(); ++i) {
            out.push_back({label('S', i), s.subthemes[i].id, s.subthemes[i].name});
        }
        break;
    case Stage::themes:
        for (std::size_t i = 0; i < s.themes.size(); ++i) out.push_back({label('T', i), s.themes[i].id, s.themes[i].name});
        break;
    case Stage::summary: break;
    }
    return out;
}

void check_preconditions(const AnalysisSession& s, Stage stage) {
    if (stage == Stage::codes) {
        if (s.documents.empty()) throw Error(ErrorCode::precondition_failed, "session has no documents");
        return;
    }
    Stage upstream = static_cast<Stage>(stage_index(stage) - 1);
    const auto& up = s.stage(upstream);
    if (!up.committed || up.stale) {
        throw Error(ErrorCode::stale_upstream,
                    "stage '" + std::string(stage_name(stage)) + "' needs a current '" +
                        std::string(stage_name(upstream)) + "' stage",
                    json{{"upstream", stage_name(upstream)}, {"committed", up.committed}, {"stale", up.stale}});
    }
    std::size_t inputs = stage == Stage::subthemes ? s.codes.size()
                         : stage == Stage::themes  ? s.subthemes.size()
                                                   : s.themes.size();
    if (inputs == 0) {
        throw Error(ErrorCode::precondition_failed,
                    "stage '" + std::string(stage_name(stage)) + "' has no " + std::string(stage_name(upstream)) +
                        " to work from");
    }
}

// --- ReasoningChain --------------------------------------------------------------

ReasoningChain::ReasoningChain(TemplateSet templates, std::shared_ptr<llm::SchemaRegistry> schemas,
                               llm::ProviderConfig config, std::shared_ptr<audit::BlobStore> blobs)
    : templates_(std::move(templates)),
      gateway_(std::move(schemas)),
      config_(std::move(config)),
      blobs_(std::move(blobs)) {}

llm::ChainRequest ReasoningChain::build_request(const AnalysisSession& s, const StageParameters& params) const {
    params.validate();
    llm::ChainRequest req;
    req.stage = params.stage;
    req.schema_id = stage_schema_id(params.stage);

    std::map<std::string, std::string> values{{"user_prompt", optional_text(params.user_prompt)},
                                              {"research_questions", questions_text(s)}};
    json& p = req.payload;
    p["user_prompt"] = params.user_prompt ? json(*params.user_prompt) : json(nullptr);

    switch (params.stage) {
    case Stage::codes: {
        json docs = json::array();
        for (const auto& d : s.documents) docs.push_back({{"id", d.id}, {"title", d.title}, {"text", d.body}});
        json preserved = json::array();
        for (const auto& c : s.codes) {
            if (c.provenance != Provenance::user_edited) continue;
            for (const auto& kid : c.chunk_ids) {
                if (const auto* k = s.find_chunk(kid)) {
                    preserved.push_back(
                        {{"document_id", k->document_id}, {"start_offset", k->start_offset}, {"end_offset", k->end_offset}});
                }
            }
        }
        p["documents"] = docs;
        p["number_of_codes"] = params.number_of_codes ? json(*params.number_of_codes) : json(nullptr);
        p["preserved_chunks"] = preserved;
        values["data"] = docs.dump(2);
        values["number_of_codes"] = params.number_of_codes
                                        ? "exactly " + std::to_string(*params.number_of_codes) + " codes"
                                        : "as many codes as the material calls for";
        break;
    }
    case Stage::subthemes: {
        json codes = json::array();
        auto units = stage_units(s, Stage::codes);
        for (std::size_t i = 0; i < s.codes.size(); ++i) {
            json excerpts = json::array();
            for (const auto& kid : s.codes[i].chunk_ids) {
                if (const auto* k = s.find_chunk(kid)) excerpts.push_back(k->text);
            }
            codes.push_back({{"label", units[i].label}, {"name", s.codes[i].name}, {"excerpts", excerpts}});
        }
        p["codes"] = codes;
        values["upstream_output"] = codes.dump(2);
        break;
    }
    case Stage::themes: {
        json subs = json::array();
        auto units = stage_units(s, Stage::subthemes);
        for (std::size_t i = 0; i < s.subthemes.size(); ++i) {
            json names = json::array();
            for (const auto& cid : s.subthemes[i].code_ids) {
                if (const auto* c = s.find_code(cid)) names.push_back(c->name);
            }
            subs.push_back({{"label", units[i].label}, {"name", s.subthemes[i].name}, {"codes", names}});
        }
        p["subthemes"] = subs;
        p["research_questions"] = questions_json(s);
        values["upstream_output"] = subs.dump(2);
        break;
    }
    case Stage::summary: {
        std::map<UnitId, std::string> code_label, sub_label;
        for (const auto& u : stage_units(s, Stage::codes)) code_label[u.id] = u.label;
        for (const auto& u : stage_units(s, Stage::subthemes)) sub_label[u.id] = u.label;
        json themes = json::array();
        auto units = stage_units(s, Stage::themes);
        for (std::size_t i = 0; i < s.themes.size(); ++i) {
            const auto& t = s.themes[i];
            json subs = json::array();
            for (const auto& sid : t.subtheme_ids) {
                const auto* st = s.find_subtheme(sid);
                if (!st) continue;
                json codes = json::array();
                for (const auto& cid : st->code_ids) {
                    const auto* c = s.find_code(cid);
                    if (!c) continue;
                    json excerpts = json::array();
                    for (const auto& kid : c->chunk_ids) {
                        if (const auto* k = s.find_chunk(kid)) excerpts.push_back(k->text);
                    }
                    codes.push_back({{"label", code_label[cid]}, {"name", c->name}, {"excerpts", excerpts}});
                }
                subs.push_back({{"label", sub_label[sid]}, {"name", st->name}, {"codes", codes}});
            }
            themes.push_back({{"label", units[i].label},
                              {"name", t.name},
                              {"description", t.description},
                              {"research_question_ids", t.research_question_ids},
                              {"subthemes", subs}});
        }
        p["themes"] = themes;
        p["research_questions"] = questions_json(s);
        values["upstream_output"] = themes.dump(2);
        break;
    }
    }
    req.system_prompt = render_template(templates_.get(std::string(stage_name(params.stage))), values);
    return req;
}

llm::ChainResponse ReasoningChain::call(const llm::ChainRequest& request, const char* purpose,
                                        llm::Provider& provider, json& calls, const llm::SemanticCheck& check) const {
    json record{{"purpose", purpose}, {"schema_id", request.schema_id}, {"request_digest", request.digest()}};
    if (blobs_) {
        record["request_blob"] = blobs_->put(
            json{{"schema_id", request.schema_id}, {"system_prompt", request.system_prompt}, {"payload", request.payload}}
                .dump());
    }
    auto store_attempts = [&](const std::vector<std::string>& attempts) {
        json refs = json::array();
        for (const auto& a : attempts) refs.push_back(blobs_ ? json(blobs_->put(a)) : json(sha256_hex(a)));
        return refs;
    };
    try {
        auto response = gateway_.complete(config_, provider, request, check);
        record["attempts"] = response.attempts;
        record["latency_ms"] = response.provider_latency.count();
        record["response_blobs"] = store_attempts(response.raw_attempts);
        record["response_digest"] = record["response_blobs"].back();
        calls.push_back(record);
        return response;
    } catch (const Error& e) {
        record["error"] = error_code_name(e.code());
        if (e.detail().is_object() && e.detail().contains("attempts")) {
            auto attempts = e.detail()["attempts"].get<std::vector<std::string>>();
            record["attempts"] = attempts.size();
            record["response_blobs"] = store_attempts(attempts);
        }
        calls.push_back(record);
        throw;
    }
}

Nudge ReasoningChain::generate_nudge(Stage stage, const std::vector<LabeledUnit>& units,
                                     const std::optional<std::string>& user_prompt, llm::Provider& provider,
                                     json& calls) const {
    if (stage == Stage::summary) throw Error(ErrorCode::invalid_argument, "the summary stage has no nudge");

    llm::ChainRequest req;
    req.stage = stage;
    req.schema_id = nudge_schema;
    json listing = json::array();
    for (const auto& u : units) listing.push_back({{"label", u.label}, {"name", u.name}});
    req.payload = json{{"stage", stage_name(stage)}, {"units", listing}};
    req.system_prompt = render_template(templates_.get(nudge_template_name(stage)),
                                        {{"user_prompt", optional_text(user_prompt)},
                                         {"upstream_output", listing.dump(2)}});

    auto ids = label_map(units);
    llm::SemanticCheck coverage = [&ids](const json& parsed) -> std::optional<llm::Violation> {
        std::map<std::string, int> seen;
        for (const auto& e : parsed.at("self_critique")) {
            auto unit = e.at("unit").get<std::string>();
            if (!ids.count(unit)) {
                return llm::Violation{ErrorCode::incomplete_coverage, "self_critique names unknown unit " + unit};
            }
            if (++seen[unit] > 1) {
                return llm::Violation{ErrorCode::incomplete_coverage, "unit " + unit + " is labeled more than once"};
            }
        }
        for (const auto& [l, id] : ids) {
            if (!seen.count(l)) return llm::Violation{ErrorCode::incomplete_coverage, "unit " + l + " has no label"};
        }
        return std::nullopt;
    };

    auto response = call(req, "nudge", provider, calls, coverage);
    Nudge n;
    n.stage = stage;
    n.what_llm_did = response.parsed.at("what_llm_did").get<std::string>();
    // Entries follow the unit order, not the order the model answered in.
    std::map<std::string, CritiqueEntry> by_label;
    for (const auto& e : response.parsed.at("self_critique")) {
        auto l = e.at("unit").get<std::string>();
        by_label[l] = CritiqueEntry{ids.at(l), confidence_from_name(e.at("confidence").get<std::string>()),
                                    e.at("rationale").get<std::string>()};
    }
    for (const auto& u : units) n.self_critique.push_back(by_label.at(u.label));
    return n;
}

StageOutcome ReasoningChain::run_stage(const AnalysisSession& s, const StageParameters& params,
                                       llm::Provider& provider, json& calls) const {
    params.validate();
    check_preconditions(s, params.stage);
    auto request = build_request(s, params);

    llm::SemanticCheck check;
    if (params.stage == Stage::subthemes) {
        check = [](const json& p) { return check_unique_members(p, "subthemes", "codes"); };
    } else if (params.stage == Stage::themes) {
        check = [](const json& p) { return check_unique_members(p, "themes", "subthemes"); };
    } else if (params.stage == Stage::codes) {
        bool has_preserved = std::any_of(s.codes.begin(), s.codes.end(),
                                         [](const OpenCode& c) { return c.provenance == Provenance::user_edited; });
        check = [has_preserved](const json& p) -> std::optional<llm::Violation> {
            if (!has_preserved && p.at("codes").empty()) {
                return llm::Violation{ErrorCode::schema_violation, "response contains no codes"};
            }
            return std::nullopt;
        };
    }

    auto response = call(request, "stage", provider, calls, check);

    StageOutcome out;
    switch (params.stage) {
    case Stage::codes: out = parse_codes(s, params, response.parsed); break;
    case Stage::subthemes: out = parse_subthemes(s, response.parsed); break;
    case Stage::themes: out = parse_themes(s, response.parsed); break;
    case Stage::summary: out = parse_summary(s, response.parsed); break;
    }
    json parameters = params.to_json();
    for (auto& [k, v] : out.parameters.items()) parameters[k] = v;
    out.parameters = parameters;

    if (params.stage != Stage::summary) {
        std::vector<LabeledUnit> units;
        char prefix = params.stage == Stage::codes ? 'C' : params.stage == Stage::subthemes ? 'S' : 'T';
        const json& list = out.output.at(std::string(stage_name(params.stage)));
        for (std::size_t i = 0; i < list.size(); ++i) {
            units.push_back({label(prefix, i), list[i].at("id").get<std::string>(), list[i].at("name").get<std::string>()});
        }
        out.nudge = generate_nudge(params.stage, units, params.user_prompt, provider, calls);
    }
    return out;
}

StageOutcome ReasoningChain::parse_codes(const AnalysisSession& s, const StageParameters& params,
                                         const json& parsed) const {
    StageOutcome out;
    std::uint64_t counter = s.id_counter;
    auto next_id = [&counter](char prefix) { return std::string(1, prefix) + std::to_string(++counter); };

    std::vector<OpenCode> codes;
    std::vector<ChunkAssignment> chunks;
    std::map<std::string, std::vector<Span>> taken;
    for (const auto& c : s.codes) {
        if (c.provenance != Provenance::user_edited) continue;
        codes.push_back(c);
        for (const auto& kid : c.chunk_ids) {
            const auto* k = s.find_chunk(kid);
            if (!k) continue;
            chunks.push_back(*k);
            taken[k->document_id].push_back(Span{k->start_offset, k->end_offset});
        }
    }
    const std::size_t preserved_codes = codes.size();
    const auto preserved_taken = taken;

    // Bind every excerpt to a span before building codes. Longer excerpts
    // go first and word-aligned matches win, so a short excerpt such as
    // "I" cannot take a spot inside a longer one or inside another word.
    struct Binding {
        std::size_t code = 0, chunk = 0;
        std::string document_id, text;
        std::optional<Span> span;
        std::string reason;
        bool dropped = false;
    };
    std::vector<Binding> bindings;
    for (std::size_t ci = 0; ci < parsed.at("codes").size(); ++ci) {
        const json& jc = parsed["codes"][ci];
        for (std::size_t ki = 0; ki < jc.at("chunks").size(); ++ki) {
            const json& jk = jc["chunks"][ki];
            bindings.push_back({ci, ki, jk.at("document_id").get<std::string>(), jk.at("text").get<std::string>(), {}, {}, false});
        }
    }
    std::vector<std::size_t> by_length(bindings.size());
    for (std::size_t i = 0; i < by_length.size(); ++i) by_length[i] = i;
    std::stable_sort(by_length.begin(), by_length.end(),
                     [&](std::size_t a, std::size_t b) { return bindings[a].text.size() > bindings[b].text.size(); });
    auto clashes = [](const std::vector<Span>& spans, const Span& c) {
        return std::any_of(spans.begin(), spans.end(), [&](const Span& t) { return validation::spans_overlap(t, c); });
    };
    auto word_byte = [](char c) {
        auto u = static_cast<unsigned char>(c);
        return std::isalnum(u) || u >= 0x80;
    };
    std::size_t stranded = 0;
    std::map<std::size_t, std::vector<Span>> options; // per binding, preserved clashes removed
    for (std::size_t i : by_length) {
        auto& b = bindings[i];
        const auto* doc = s.find_document(b.document_id);
        if (!doc) {
            b.reason = "unknown document";
            continue;
        }
        const std::string& body = doc->body;
        auto candidates = validation::locate_verbatim(body, b.text);
        if (candidates.empty()) {
            b.reason = "text does not occur verbatim in the document";
            continue;
        }
        auto aligned = [&](const Span& c) {
            bool left = c.start == 0 || !word_byte(body[c.start - 1]) || !word_byte(body[c.start]);
            bool right = c.end == body.size() || !word_byte(body[c.end]) || !word_byte(body[c.end - 1]);
            return left && right;
        };
        std::stable_partition(candidates.begin(), candidates.end(), aligned);
        auto& opts = options[i];
        auto pit = preserved_taken.find(b.document_id);
        for (const auto& c : candidates) {
            if (pit == preserved_taken.end() || !clashes(pit->second, c)) opts.push_back(c);
        }
        auto& mine = taken[b.document_id];
        auto free = std::find_if(opts.begin(), opts.end(), [&](const Span& c) { return !clashes(mine, c); });
        if (free == opts.end()) {
            if (opts.empty()) {
                b.dropped = true;
            } else {
                b.reason = "chunk overlaps another chunk";
                ++stranded;
            }
            continue;
        }
        b.span = *free;
        mine.push_back(*free);
    }
    // greedy by length can strand an excerpt in repetitive text; search for a
    // full assignment, most constrained excerpt first
    if (stranded > 0) {
        std::vector<std::size_t> open;
        for (const auto& [i, opts] : options) {
            if (!opts.empty()) open.push_back(i);
        }
        std::map<std::string, std::vector<char>> used;
        for (const auto& d : s.documents) {
            auto& u = used[d.id];
            u.assign(d.body.size(), 0);
            auto it = preserved_taken.find(d.id);
            if (it == preserved_taken.end()) continue;
            for (const auto& sp : it->second) std::fill(u.begin() + sp.start, u.begin() + sp.end, 1);
        }
        auto is_free = [&](std::size_t i, const Span& c) {
            const auto& u = used[bindings[i].document_id];
            return std::find(u.begin() + c.start, u.begin() + c.end, 1) == u.begin() + c.end;
        };
        auto mark = [&](std::size_t i, const Span& c, char v) {
            auto& u = used[bindings[i].document_id];
            std::fill(u.begin() + c.start, u.begin() + c.end, v);
        };
        std::vector<std::optional<Span>> chosen(bindings.size());
        std::size_t budget = 200000;
        std::function<bool(std::size_t)> dfs = [&](std::size_t left) -> bool {
            if (left == 0) return true;
            std::size_t best = 0, best_count = SIZE_MAX;
            for (std::size_t i : open) {
                if (chosen[i]) continue;
                std::size_t n = 0;
                for (const auto& c : options[i]) n += is_free(i, c);
                if (n < best_count) {
                    best = i;
                    best_count = n;
                }
                if (n <= 1) break;
            }
            if (best_count == 0) return false;
            for (const auto& c : options[best]) {
                if (budget == 0) return false;
                --budget;
                if (!is_free(best, c)) continue;
                chosen[best] = c;
                mark(best, c, 1);
                if (dfs(left - 1)) return true;
                mark(best, c, 0);
                chosen[best].reset();
            }
            return false;
        };
        if (dfs(open.size())) {
            for (std::size_t i : open) {
                bindings[i].span = chosen[i];
                bindings[i].reason.clear();
            }
        }
    }

    json offending = json::array();
    std::size_t next_binding = 0;
    for (std::size_t ci = 0; ci < parsed.at("codes").size(); ++ci) {
        const json& jc = parsed["codes"][ci];
        OpenCode code;
        code.name = jc.at("name").get<std::string>();
        std::vector<ChunkAssignment> mine;
        for (; next_binding < bindings.size() && bindings[next_binding].code == ci; ++next_binding) {
            const auto& b = bindings[next_binding];
            if (b.dropped) {
                out.warnings.push_back("dropped a chunk of code '" + code.name + "' that overlaps an analyst-edited code");
                continue;
            }
            if (!b.span) {
                offending.push_back(json{{"code", ci + 1},
                                         {"chunk", b.chunk + 1},
                                         {"document_id", b.document_id},
                                         {"text", b.text},
                                         {"reason", b.reason}});
                continue;
            }
            ChunkAssignment k;
            k.document_id = b.document_id;
            k.start_offset = b.span->start;
            k.end_offset = b.span->end;
            k.text = s.find_document(b.document_id)->body.substr(b.span->start, b.span->end - b.span->start);
            mine.push_back(std::move(k));
        }
        if (mine.empty()) {
            if (offending.empty()) out.warnings.push_back("code '" + code.name + "' kept no chunks and was dropped");
            continue;
        }
        code.id = next_id('c');
        for (auto& k : mine) {
            k.chunk_id = next_id('k');
            k.code_id = code.id;
            code.chunk_ids.push_back(k.chunk_id);
            chunks.push_back(std::move(k));
        }
        codes.push_back(std::move(code));
    }
    if (!offending.empty()) {
        throw Error(ErrorCode::verbatim_violation,
                    std::to_string(offending.size()) + " chunk(s) are not verbatim, non-overlapping excerpts",
                    json{{"offending", offending}});
    }

    std::size_t produced = codes.size() - preserved_codes;
    if (params.number_of_codes && static_cast<std::size_t>(*params.number_of_codes) != produced) {
        out.warnings.push_back("requested " + std::to_string(*params.number_of_codes) + " codes, model produced " +
                               std::to_string(produced));
    }
    out.parameters["number_of_codes_chosen"] = produced;
    out.output = json{{"codes", codes}, {"chunks", chunks}};
    out.id_counter = counter;
    return out;
}

StageOutcome ReasoningChain::parse_subthemes(const AnalysisSession& s, const json& parsed) const {
    StageOutcome out;
    std::uint64_t counter = s.id_counter;
    auto codes = label_map(stage_units(s, Stage::codes));
    std::vector<SubTheme> subs;
    for (const auto& js : parsed.at("subthemes")) {
        SubTheme st;
        st.name = js.at("name").get<std::string>();
        for (const auto& l : js.at("codes")) {
            auto it = codes.find(l.get<std::string>());
            if (it == codes.end()) {
                throw Error(ErrorCode::hallucinated_reference,
                            "subtheme '" + st.name + "' names code " + l.get<std::string>() + ", which was not provided",
                            json{{"label", l}, {"group", st.name}});
            }
            st.code_ids.push_back(it->second);
        }
        st.id = "s" + std::to_string(++counter);
        subs.push_back(std::move(st));
    }
    out.output = json{{"subthemes", subs}};
    out.id_counter = counter;
    return out;
}

StageOutcome ReasoningChain::parse_themes(const AnalysisSession& s, const json& parsed) const {
    StageOutcome out;
    std::uint64_t counter = s.id_counter;
    auto subs = label_map(stage_units(s, Stage::subthemes));
    std::vector<Theme> themes;
    for (const auto& jt : parsed.at("themes")) {
        Theme t;
        t.name = jt.at("name").get<std::string>();
        t.description = jt.at("description").get<std::string>();
        for (const auto& l : jt.at("subthemes")) {
            auto it = subs.find(l.get<std::string>());
            if (it == subs.end()) {
                throw Error(ErrorCode::hallucinated_reference,
                            "theme '" + t.name + "' names subtheme " + l.get<std::string>() +
                                ", which was not provided",
                            json{{"label", l}, {"group", t.name}});
            }
            t.subtheme_ids.push_back(it->second);
        }
        for (const auto& q : jt.value("research_questions", json::array())) {
            auto qid = q.get<std::string>();
            if (!s.find_question(qid)) {
                throw Error(ErrorCode::invalid_question_reference,
                            "theme '" + t.name + "' cites unknown research question '" + qid + "'",
                            json{{"question_id", qid}});
            }
            if (std::find(t.research_question_ids.begin(), t.research_question_ids.end(), qid) ==
                t.research_question_ids.end()) {
                t.research_question_ids.push_back(qid);
            }
        }
        t.id = "t" + std::to_string(++counter);
        themes.push_back(std::move(t));
    }
    out.output = json{{"themes", themes}};
    out.id_counter = counter;
    return out;
}

StageOutcome ReasoningChain::parse_summary(const AnalysisSession& s, const json& parsed) const {
    StageOutcome out;
    std::map<std::string, UnitId> labels;
    for (Stage st : {Stage::codes, Stage::subthemes, Stage::themes}) {
        for (const auto& u : stage_units(s, st)) labels.emplace(u.label, u.id);
    }
    KeyFindings kf;
    std::set<UnitId> cited;
    for (const auto& jf : parsed.at("findings")) {
        Finding f;
        f.summary_text = jf.at("summary").get<std::string>();
        for (const auto& l : jf.at("supporting_units")) {
            auto it = labels.find(l.get<std::string>());
            if (it == labels.end()) {
                throw Error(ErrorCode::unresolvable_reference,
                            "finding cites " + l.get<std::string>() + ", which is not in the current hierarchy",
                            json{{"label", l}});
            }
            f.supporting_unit_ids.push_back(it->second);
            cited.insert(it->second);
        }
        if (jf.contains("research_question_id") && !jf["research_question_id"].is_null()) {
            auto qid = jf["research_question_id"].get<std::string>();
            if (!s.find_question(qid)) {
                throw Error(ErrorCode::invalid_question_reference,
                            "finding cites unknown research question '" + qid + "'", json{{"question_id", qid}});
            }
            f.research_question_id = qid;
        }
        kf.findings.push_back(std::move(f));
    }
    for (const auto& t : s.themes) {
        if (!cited.count(t.id)) kf.themes_without_findings.push_back(t.id);
    }
    out.output = json{{"key_findings", kf}};
    out.id_counter = s.id_counter;
    return out;
}

} // namespace qda::chain
