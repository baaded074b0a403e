#include "qda/audit.hpp"

#include "qda/digest.hpp"
#include "qda/error.hpp"

#include <array>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

namespace qda::audit {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 10> kind_names{
    "session_created", "stage_committed",   "stage_rejected", "edit",
    "memo_added",      "prompt_issued",     "regeneration",   "coverage_computed",
    "version_saved",   "export_produced",
};

[[noreturn]] void storage_error(const std::string& what) {
    throw Error(ErrorCode::storage_failure, what + ": " + std::strerror(errno));
}

json header_json(const std::string& session_id) {
    return json{{"format", log_format_name},
                {"schema_version", log_schema_version},
                {"session_id", session_id}};
}

} // namespace

std::string_view event_kind_name(EventKind kind) { return kind_names.at(static_cast<std::size_t>(kind)); }

EventKind event_kind_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kind_names.size(); ++i) {
        if (kind_names[i] == name) return static_cast<EventKind>(i);
    }
    throw Error(ErrorCode::corrupt_log, "unknown event kind '" + std::string(name) + "'");
}

json event_to_json(const AuditEvent& e) {
    return json{{"seq", e.seq},
                {"timestamp", e.timestamp},
                {"actor", actor_name(e.actor)},
                {"kind", event_kind_name(e.kind)},
                {"payload", e.payload},
                {"payload_digest", e.payload_digest},
                {"prev_digest", e.prev_digest},
                {"digest", e.digest}};
}

AuditEvent event_from_json(const json& j) {
    AuditEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.timestamp = j.at("timestamp").get<Timestamp>();
    e.actor = actor_from_name(j.at("actor").get<std::string>());
    e.kind = event_kind_from_name(j.at("kind").get<std::string>());
    e.payload = j.at("payload");
    e.payload_digest = j.at("payload_digest").get<std::string>();
    e.prev_digest = j.at("prev_digest").get<std::string>();
    e.digest = j.at("digest").get<std::string>();
    return e;
}

std::string chain_digest(const AuditEvent& e) {
    std::ostringstream material;
    material << e.prev_digest << '\n'
             << e.seq << '\n'
             << to_iso8601(e.timestamp) << '\n'
             << actor_name(e.actor) << '\n'
             << event_kind_name(e.kind) << '\n'
             << e.payload_digest;
    return sha256_hex(material.str());
}

// --- FileLogStorage ----------------------------------------------------------

FileLogStorage::FileLogStorage(fs::path path) : path_(std::move(path)) {}

std::vector<std::string> FileLogStorage::read_lines() {
    std::vector<std::string> lines;
    std::ifstream in(path_, std::ios::binary);
    if (!in) return lines;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto nl = content.find('\n', pos);
        if (nl == std::string::npos) {
            // A line without its terminator is a torn write from a crash;
            // it was never acknowledged, so drop it.
            std::error_code ec;
            fs::resize_file(path_, pos, ec);
            if (ec) throw Error(ErrorCode::storage_failure, "cannot truncate torn log tail: " + ec.message());
            break;
        }
        lines.emplace_back(content.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

void FileLogStorage::append_line(std::string_view line) {
    int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) storage_error("cannot open audit log " + path_.string());
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        storage_error("cannot stat audit log");
    }
    std::string data(line);
    data.push_back('\n');
    std::size_t written = 0;
    bool ok = true;
    while (written < data.size()) {
        ssize_t n = ::write(fd, data.data() + written, data.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            ok = false;
            break;
        }
        written += static_cast<std::size_t>(n);
    }
    if (ok && ::fsync(fd) != 0) ok = false;
    if (!ok) {
        int saved = errno;
        [[maybe_unused]] int rc = ::ftruncate(fd, st.st_size);
        ::close(fd);
        errno = saved;
        storage_error("cannot append to audit log");
    }
    ::close(fd);
}

// --- MemoryLogStorage --------------------------------------------------------

std::vector<std::string> MemoryLogStorage::read_lines() {
    std::lock_guard lock(mutex_);
    return lines_;
}

void MemoryLogStorage::append_line(std::string_view line) {
    std::lock_guard lock(mutex_);
    lines_.emplace_back(line);
}

// --- Blob stores ---------------------------------------------------------------

FileBlobStore::FileBlobStore(fs::path dir) : dir_(std::move(dir)) {}

std::string FileBlobStore::put(std::string_view content) {
    std::string digest = sha256_hex(content);
    std::error_code ec;
    fs::create_directories(dir_, ec);
    fs::path target = dir_ / (digest + ".txt");
    if (fs::exists(target, ec)) return digest;
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(ErrorCode::storage_failure, "cannot write blob " + tmp.string());
    }
    fs::rename(tmp, target, ec);
    if (ec) throw Error(ErrorCode::storage_failure, "cannot publish blob: " + ec.message());
    return digest;
}

std::optional<std::string> FileBlobStore::get(const std::string& digest) const {
    std::ifstream in(dir_ / (digest + ".txt"), std::ios::binary);
    if (!in) return std::nullopt;
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string MemoryBlobStore::put(std::string_view content) {
    std::string digest = sha256_hex(content);
    std::lock_guard lock(mutex_);
    for (const auto& [d, _] : blobs_) {
        if (d == digest) return digest;
    }
    blobs_.emplace_back(digest, std::string(content));
    return digest;
}

std::optional<std::string> MemoryBlobStore::get(const std::string& digest) const {
    std::lock_guard lock(mutex_);
    for (const auto& [d, content] : blobs_) {
        if (d == digest) return content;
    }
    return std::nullopt;
}

// --- AuditLog ------------------------------------------------------------------

AuditLog::AuditLog(std::unique_ptr<LogStorage> storage, std::string session_id)
    : storage_(std::move(storage)), session_id_(std::move(session_id)) {
    auto lines = storage_->read_lines();
    if (lines.empty()) {
        storage_->append_line(header_json(session_id_).dump());
        return;
    }
    events_ = parse_and_verify(lines);
}

std::vector<AuditEvent> AuditLog::parse_and_verify(const std::vector<std::string>& lines) const {
    if (lines.empty()) throw Error(ErrorCode::corrupt_log, "audit log has no header", json{{"seq", 0}});
    json header;
    try {
        header = json::parse(lines.front());
    } catch (const json::exception&) {
        throw Error(ErrorCode::corrupt_log, "audit log header is not valid JSON", json{{"seq", 0}});
    }
    if (header.value("format", "") != log_format_name ||
        header.value("schema_version", 0) != log_schema_version) {
        throw Error(ErrorCode::corrupt_log, "unsupported audit log header", json{{"seq", 0}});
    }

    std::vector<AuditEvent> events;
    std::string prev;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::uint64_t expected_seq = i;
        auto corrupt = [&](const std::string& why) {
            return Error(ErrorCode::corrupt_log,
                         "audit log corrupt at seq " + std::to_string(expected_seq) + ": " + why,
                         json{{"seq", expected_seq}});
        };
        AuditEvent e;
        try {
            e = event_from_json(json::parse(lines[i]));
        } catch (const Error&) {
            throw corrupt("unreadable record");
        } catch (const std::exception&) {
            throw corrupt("unreadable record");
        }
        if (e.seq != expected_seq) throw corrupt("sequence gap");
        if (sha256_hex(e.payload.dump()) != e.payload_digest) throw corrupt("payload digest mismatch");
        if (e.prev_digest != prev) throw corrupt("chain broken");
        if (chain_digest(e) != e.digest) throw corrupt("event digest mismatch");
        prev = e.digest;
        events.push_back(std::move(e));
    }
    return events;
}

AuditEvent AuditLog::append(EventKind kind, Actor actor, Timestamp timestamp, json payload) {
    std::lock_guard lock(mutex_);
    AuditEvent e;
    e.seq = events_.size() + 1;
    e.timestamp = timestamp;
    e.actor = actor;
    e.kind = kind;
    e.payload = std::move(payload);
    e.payload_digest = sha256_hex(e.payload.dump());
    e.prev_digest = events_.empty() ? std::string() : events_.back().digest;
    e.digest = chain_digest(e);
    storage_->append_line(event_to_json(e).dump());
    events_.push_back(e);
    return e;
}

std::vector<AuditEvent> AuditLog::events(std::uint64_t from_seq) const {
    std::lock_guard lock(mutex_);
    if (from_seq == 0) from_seq = 1;
    if (from_seq > events_.size()) return {};
    return {events_.begin() + static_cast<std::ptrdiff_t>(from_seq - 1), events_.end()};
}

std::vector<AuditEvent> AuditLog::read_verified() const {
    std::lock_guard lock(mutex_);
    return parse_and_verify(storage_->read_lines());
}

std::uint64_t AuditLog::last_seq() const {
    std::lock_guard lock(mutex_);
    return events_.size();
}

} // namespace qda::audit
