#pragma once

#include "qda/model.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qda::audit {

enum class EventKind {
    session_created,
    stage_committed,
    stage_rejected,
    edit,
    memo_added,
    prompt_issued,
    regeneration,
    coverage_computed,
    version_saved,
    export_produced,
};

std::string_view event_kind_name(EventKind kind);
EventKind event_kind_from_name(std::string_view name);

struct AuditEvent {
    std::uint64_t seq = 0;
    Timestamp timestamp;
    Actor actor = Actor::system;
    EventKind kind = EventKind::session_created;
    json payload = json::object();
    std::string payload_digest;
    /// Digest of the predecessor event ("" for seq 1).
    std::string prev_digest;
    /// Digest chaining this event to its predecessor.
    std::string digest;

    bool operator==(const AuditEvent&) const = default;
};

json event_to_json(const AuditEvent& e);
AuditEvent event_from_json(const json& j);

inline constexpr std::string_view log_format_name = "qda-audit-log";
inline constexpr int log_schema_version = 1;

/// Line-oriented durable storage behind an audit log. append_line must
/// either persist the whole line or leave storage unchanged and throw
/// Error(storage_failure).
class LogStorage {
public:
    virtual ~LogStorage() = default;
    virtual std::vector<std::string> read_lines() = 0;
    virtual void append_line(std::string_view line) = 0;
};

class FileLogStorage final : public LogStorage {
public:
    explicit FileLogStorage(std::filesystem::path path);
    std::vector<std::string> read_lines() override;
    void append_line(std::string_view line) override;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

class MemoryLogStorage final : public LogStorage {
public:
    std::vector<std::string> read_lines() override;
    void append_line(std::string_view line) override;
    /// Direct access for tamper tests.
    std::vector<std::string>& lines() { return lines_; }

private:
    std::mutex mutex_;
    std::vector<std::string> lines_;
};

/// Content-addressed side store for full LLM transcripts.
class BlobStore {
public:
    virtual ~BlobStore() = default;
    /// Stores `content` and returns its SHA-256 digest.
    virtual std::string put(std::string_view content) = 0;
    virtual std::optional<std::string> get(const std::string& digest) const = 0;
};

class FileBlobStore final : public BlobStore {
public:
    explicit FileBlobStore(std::filesystem::path dir);
    std::string put(std::string_view content) override;
    std::optional<std::string> get(const std::string& digest) const override;

private:
    std::filesystem::path dir_;
};

class MemoryBlobStore final : public BlobStore {
public:
    std::string put(std::string_view content) override;
    std::optional<std::string> get(const std::string& digest) const override;

private:
    mutable std::mutex mutex_;
    std::vector<std::pair<std::string, std::string>> blobs_;
};

/// Append-only, hash-chained event log for one session. Appends are
/// serialized; readers get a consistent prefix.
class AuditLog {
public:
    /// Opens (or initializes) the log. Existing content is verified.
    AuditLog(std::unique_ptr<LogStorage> storage, std::string session_id);

    /// Builds, writes and returns the next event. Throws on storage
    /// failure, in which case the log is unchanged.
    AuditEvent append(EventKind kind, Actor actor, Timestamp timestamp, json payload);

    /// Events with seq >= from_seq from the in-memory index.
    std::vector<AuditEvent> events(std::uint64_t from_seq = 1) const;

    /// Re-reads storage and verifies every digest; throws
    /// Error(corrupt_log) naming the first bad seq.
    std::vector<AuditEvent> read_verified() const;

    std::uint64_t last_seq() const;
    const std::string& session_id() const { return session_id_; }

private:
    std::vector<AuditEvent> parse_and_verify(const std::vector<std::string>& lines) const;

    std::unique_ptr<LogStorage> storage_;
    std::string session_id_;
    mutable std::mutex mutex_;
    std::vector<AuditEvent> events_;
};

/// Digest of an event given its fields; exposed for verification tools.
std::string chain_digest(const AuditEvent& e);

} // namespace qda::audit
