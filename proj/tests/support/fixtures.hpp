#pragma once

#include "qda/engine.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace qda::test {

inline constexpr const char* test_data_dir = QDA_TEST_DATA;
inline constexpr const char* qda_binary = QDA_BINARY;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& content);

/// In-memory engine over the mock provider with a logical clock.
EngineConfig mock_config(json script = json::object());

CreateSessionRequest request_for(const std::vector<std::string>& bodies,
                                 const std::vector<std::string>& questions = {},
                                 std::optional<std::string> session_id = std::nullopt);

/// Runs every stage in order with default parameters.
AnalysisSession run_all_stages(Engine& engine, const std::string& session_id);

// Scripted responses.
json codes_reply(const std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>>& codes);
json groups_reply(const char* key, const char* members_key,
                  const std::vector<std::pair<std::string, std::vector<std::string>>>& groups);
json scripted(const std::string& schema, const json& reply);

/// Prose built from a small vocabulary: sentences, line breaks, extra
/// spaces, punctuation, occasional UTF-8 words.
std::string random_document(std::mt19937_64& rng, std::size_t words);

} // namespace qda::test
