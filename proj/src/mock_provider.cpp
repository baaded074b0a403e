#include "qda/gateway.hpp"
#include "qda/validation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

namespace qda::llm {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

/// Sentence-like chunks: runs of text ending at [.!?] followed by
/// whitespace, or at a line break. Every non-whitespace byte lands in
/// exactly one chunk.
std::vector<Span> sentence_spans(const std::string& text) {
    std::vector<Span> spans;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        if (i >= text.size()) break;
        std::size_t start = i;
        while (i < text.size()) {
            char c = text[i];
            if (c == '\n') break;
            ++i;
            if ((c == '.' || c == '!' || c == '?') && (i == text.size() || is_space(text[i]))) break;
        }
        std::size_t end = i;
        while (end > start && is_space(text[end - 1])) --end;
        if (end > start) spans.push_back(Span{start, end});
    }
    return spans;
}

/// Runs of consecutive kept tokens; dropped tokens split runs.
std::vector<Span> kept_word_spans(const std::string& text, const std::set<std::string>& dropped) {
    std::vector<Span> spans;
    std::optional<Span> run;
    for (const auto& ts : validation::token_spans(text)) {
        if (dropped.count(ts.token)) {
            if (run) spans.push_back(*run);
            run.reset();
        } else if (run) {
            run->end = ts.span.end;
        } else {
            run = ts.span;
        }
    }
    if (run) spans.push_back(*run);
    return spans;
}

std::string first_words(const std::string& text, std::size_t n) {
    auto tokens = validation::tokenize(text);
    std::string out;
    for (std::size_t i = 0; i < tokens.size() && i < n; ++i) {
        if (!out.empty()) out += ' ';
        out += tokens[i];
    }
    return out.empty() ? "untitled" : out;
}

std::string echo_codes(const json& payload, const json& options) {
    double fraction = options.value("drop_word_fraction", 0.0);
    struct Piece {
        std::string document_id;
        std::string text;
    };
    std::vector<Piece> pieces;
    for (const auto& doc : payload.at("documents")) {
        std::string id = doc.at("id").get<std::string>();
        std::string text = doc.at("text").get<std::string>();
        std::vector<Span> preserved;
        for (const auto& p : payload.value("preserved_chunks", json::array())) {
            if (p.at("document_id") == id) {
                preserved.push_back(Span{p.at("start_offset").get<std::size_t>(), p.at("end_offset").get<std::size_t>()});
            }
        }
        std::vector<Span> spans;
        if (fraction > 0.0) {
            auto dropped = echo_dropped_words(text, fraction);
            spans = kept_word_spans(text, std::set<std::string>(dropped.begin(), dropped.end()));
        } else {
            spans = sentence_spans(text);
        }
        for (const auto& s : spans) {
            bool clash = std::any_of(preserved.begin(), preserved.end(),
                                     [&](const Span& p) { return validation::spans_overlap(p, s); });
            if (!clash) pieces.push_back({id, text.substr(s.start, s.end - s.start)});
        }
    }

    std::size_t wanted = options.value("default_codes", 5);
    if (payload.contains("number_of_codes") && payload["number_of_codes"].is_number_integer()) {
        wanted = payload["number_of_codes"].get<std::size_t>();
    }
    std::size_t n = std::max<std::size_t>(1, std::min(wanted, pieces.size()));
    json codes = json::array();
    for (std::size_t c = 0; c < n && c < pieces.size(); ++c) {
        json chunks = json::array();
        for (std::size_t i = c; i < pieces.size(); i += n) {
            chunks.push_back({{"document_id", pieces[i].document_id}, {"text", pieces[i].text}});
        }
        codes.push_back({{"name", first_words(pieces[c].text, 4)}, {"chunks", chunks}});
    }
    return json{{"codes", codes}}.dump();
}

template <typename NameOf>
json pairwise_groups(const json& units, const char* members_key, NameOf name_of) {
    json groups = json::array();
    for (std::size_t i = 0; i < units.size(); i += 2) {
        json members = json::array({units[i].at("label")});
        std::string name = name_of(units[i]);
        if (i + 1 < units.size()) {
            members.push_back(units[i + 1].at("label"));
            name += " / " + name_of(units[i + 1]);
        }
        groups.push_back({{"name", name}, {members_key, members}});
    }
    return groups;
}

std::string echo_subthemes(const json& payload) {
    auto name = [](const json& u) { return u.at("name").get<std::string>(); };
    return json{{"subthemes", pairwise_groups(payload.at("codes"), "codes", name)}}.dump();
}

std::string echo_themes(const json& payload) {
    auto name = [](const json& u) { return u.at("name").get<std::string>(); };
    json themes = pairwise_groups(payload.at("subthemes"), "subthemes", name);
    const json questions = payload.value("research_questions", json::array());
    for (auto& t : themes) {
        t["description"] = "Brings together " + t["name"].get<std::string>() + ".";
        t["research_questions"] = json::array();
        if (!questions.empty()) t["research_questions"].push_back(questions[0].at("id"));
    }
    return json{{"themes", themes}}.dump();
}

std::string echo_summary(const json& payload) {
    json findings = json::array();
    for (const auto& t : payload.at("themes")) {
        json f{{"summary", "The material on " + t.at("name").get<std::string>() + " forms a coherent pattern."},
               {"supporting_units", json::array({t.at("label")})}};
        const json rqs = t.value("research_question_ids", json::array());
        f["research_question_id"] = rqs.empty() ? json(nullptr) : rqs[0];
        findings.push_back(f);
    }
    return json{{"findings", findings}}.dump();
}

std::string echo_nudge(const json& payload) {
    static const std::array<const char*, 3> tiers{"most_confident", "less_confident", "ambiguous"};
    json critique = json::array();
    std::size_t i = 0;
    for (const auto& u : payload.at("units")) {
        critique.push_back({{"unit", u.at("label")},
                            {"confidence", tiers[i % tiers.size()]},
                            {"rationale", "Grouping of " + u.at("name").get<std::string>() + " follows shared wording."}});
        ++i;
    }
    std::string stage = payload.value("stage", "codes");
    return json{{"what_llm_did", "Grouped the " + stage + " by textual similarity and named each group."},
                {"self_critique", critique}}
        .dump();
}

} // namespace

std::vector<std::string> echo_dropped_words(const std::string& text, double fraction) {
    auto ws = validation::WordSet::from_text(text);
    std::vector<std::string> distinct(ws.words.begin(), ws.words.end());
    std::sort(distinct.begin(), distinct.end());
    std::vector<std::string> dropped;
    for (std::size_t i = 0; i < distinct.size(); ++i) {
        auto before = std::floor(static_cast<double>(i) * fraction);
        auto after = std::floor(static_cast<double>(i + 1) * fraction);
        if (after > before) dropped.push_back(distinct[i]);
    }
    return dropped;
}

std::string echo_response(const std::string& schema_id, const json& payload, const json& options) {
    if (schema_id == "codes.v1") return echo_codes(payload, options);
    if (schema_id == "subthemes.v1") return echo_subthemes(payload);
    if (schema_id == "themes.v1") return echo_themes(payload);
    if (schema_id == "summary.v1") return echo_summary(payload);
    if (schema_id == "nudge.v1") return echo_nudge(payload);
    throw Error(ErrorCode::provider_unreachable, "mock echo has no synthesizer for schema '" + schema_id + "'");
}

MockProvider::MockProvider(json script) {
    if (!script.is_object()) throw Error(ErrorCode::invalid_argument, "mock script must be a JSON object");
    fallback_echo_ = script.value("fallback", "echo") == "echo";
    echo_options_ = script.value("echo", json::object());
    fail_ordinals_ = script.value("fail_ordinals", std::vector<int>{});
    for (const auto& r : script.value("responses", json::array())) {
        Entry e;
        if (r.contains("digest")) e.digest = r["digest"].get<std::string>();
        if (r.contains("ordinal")) e.ordinal = r["ordinal"].get<int>();
        if (r.contains("schema")) e.schema = r["schema"].get<std::string>();
        if (r.contains("json")) e.text = r["json"].dump();
        if (r.contains("text")) e.text = r["text"].get<std::string>();
        e.delay_ms = r.value("delay_ms", 0);
        if (r.contains("error")) e.error = r["error"].get<std::string>();
        entries_.push_back(std::move(e));
    }
}

std::unique_ptr<MockProvider> MockProvider::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::file_error, "cannot read mock script '" + path + "'");
    try {
        return std::make_unique<MockProvider>(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::file_error, "mock script '" + path + "' is not valid JSON: " + e.what());
    }
}

int MockProvider::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

ProviderReply MockProvider::deliver(const ProviderConfig& config, const Entry& entry) {
    auto delay = std::chrono::milliseconds(entry.delay_ms);
    if (delay > config.request_timeout) {
        std::this_thread::sleep_for(config.request_timeout);
        throw Error(ErrorCode::timeout, "mock provider exceeded the request timeout");
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    if (entry.error) {
        if (*entry.error == "timeout") throw Error(ErrorCode::timeout, "scripted provider timeout");
        throw Error(ErrorCode::provider_unreachable, "scripted provider failure");
    }
    return {entry.text, delay};
}

ProviderReply MockProvider::send(const ProviderConfig& config, const ProviderCall& call) {
    Entry chosen;
    bool echo = false;
    {
        std::lock_guard lock(mutex_);
        int ordinal = ++calls_;
        if (std::find(fail_ordinals_.begin(), fail_ordinals_.end(), ordinal) != fail_ordinals_.end()) {
            throw Error(ErrorCode::provider_unreachable, "scripted provider failure at call " + std::to_string(ordinal));
        }
        auto pick = [&](auto pred) -> Entry* {
            for (auto& e : entries_) {
                if (!e.used && pred(e)) return &e;
            }
            return nullptr;
        };
        Entry* match = pick([&](const Entry& e) { return e.digest && *e.digest == call.request_digest; });
        if (!match) match = pick([&](const Entry& e) { return !e.digest && e.ordinal && *e.ordinal == ordinal; });
        if (!match) {
            match = pick([&](const Entry& e) {
                return !e.digest && !e.ordinal && e.schema && *e.schema == call.schema_id;
            });
        }
        if (!match) match = pick([](const Entry& e) { return !e.digest && !e.ordinal && !e.schema; });
        if (match) {
            match->used = true;
            chosen = *match;
        } else if (fallback_echo_) {
            echo = true;
            chosen.delay_ms = echo_options_.value("delay_ms", 0);
        } else {
            throw Error(ErrorCode::provider_unreachable, "mock script exhausted at call " + std::to_string(ordinal));
        }
    }
    if (echo) {
        if (!call.payload) throw Error(ErrorCode::provider_unreachable, "echo needs a request payload");
        chosen.text = echo_response(call.schema_id, *call.payload, echo_options_);
    }
    return deliver(config, chosen);
}

} // namespace qda::llm
