#include "fixtures.hpp"

#include "qda/error.hpp"

#include <array>
#include <atomic>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace fs = std::filesystem;

namespace qda::test {

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("qda-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

EngineConfig mock_config(json script) {
    EngineConfig c;
    c.mock_script = std::move(script);
    c.clock = std::make_shared<LogicalClock>();
    return c;
}

CreateSessionRequest request_for(const std::vector<std::string>& bodies, const std::vector<std::string>& questions,
                                 std::optional<std::string> session_id) {
    CreateSessionRequest r;
    r.session_id = std::move(session_id);
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        r.documents.push_back(NewDocument{std::nullopt, "doc" + std::to_string(i + 1), bodies[i]});
    }
    for (const auto& q : questions) r.questions.push_back(NewQuestion{std::nullopt, q});
    return r;
}

AnalysisSession run_all_stages(Engine& engine, const std::string& id) {
    AnalysisSession s;
    for (Stage st : all_stages) s = engine.run_stage(id, chain::StageParameters{st, std::nullopt, std::nullopt});
    return s;
}

json codes_reply(const std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>>& codes) {
    json out = json::array();
    for (const auto& [name, chunks] : codes) {
        json cs = json::array();
        for (const auto& [doc, text] : chunks) cs.push_back({{"document_id", doc}, {"text", text}});
        out.push_back({{"name", name}, {"chunks", cs}});
    }
    return json{{"codes", out}};
}

json groups_reply(const char* key, const char* members_key,
                  const std::vector<std::pair<std::string, std::vector<std::string>>>& groups) {
    json out = json::array();
    for (const auto& [name, members] : groups) out.push_back({{"name", name}, {members_key, members}});
    return json{{key, out}};
}

json scripted(const std::string& schema, const json& reply) { return json{{"schema", schema}, {"json", reply}}; }

std::string random_document(std::mt19937_64& rng, std::size_t words) {
    static const std::array<const char*, 24> vocab{
        "price", "support", "team",  "slow",   "billing", "refund", "Great", "never", "app",     "crash",  "login",
        "user",  "waited",  "hours", "friendly", "again", "issue",  "fixed", "the",   "a",       "caf\xc3\xa9",
        "na\xc3\xafve", "it's", "e-mail"};
    std::string out;
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::uniform_int_distribution<int> roll(0, 99);
    for (std::size_t i = 0; i < words; ++i) {
        if (i > 0) {
            int r = roll(rng);
            out += r < 5 ? "\n" : r < 10 ? "  " : " ";
        }
        out += vocab[pick(rng)];
        int r = roll(rng);
        if (r < 12) out += ".";
        else if (r < 15) out += ",";
        else if (r < 17) out += "?";
    }
    out += ".";
    return out;
}

} // namespace qda::test
