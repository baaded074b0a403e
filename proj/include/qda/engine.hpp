#pragma once

#include "qda/audit.hpp"
#include "qda/chain.hpp"
#include "qda/clock.hpp"
#include "qda/codebook.hpp"
#include "qda/gateway.hpp"
#include "qda/hierarchy.hpp"
#include "qda/model.hpp"
#include "qda/templates.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace qda {

using ProviderFactory = std::function<std::unique_ptr<llm::Provider>(const std::string& session_id)>;
using LogStorageFactory = std::function<std::unique_ptr<audit::LogStorage>(const std::string& session_id)>;

struct EngineConfig {
    /// Directory holding one subdirectory per session; in-memory when unset.
    std::optional<std::filesystem::path> storage_root;
    llm::ProviderConfig provider;
    /// Script for the mock provider; every session gets a fresh provider
    /// built from it, so runs on different sessions do not interfere.
    json mock_script = json::object();
    std::shared_ptr<Clock> clock = std::make_shared<SystemClock>();
    chain::TemplateSet templates = chain::TemplateSet::builtin();
    /// Overrides the provider built from `provider` and `mock_script`.
    ProviderFactory provider_factory;
    /// Overrides where audit logs live (fault-injection tests).
    LogStorageFactory log_storage_factory;
};

struct NewDocument {
    std::optional<std::string> id;
    std::string title;
    std::string body;
};

struct NewQuestion {
    std::optional<std::string> id;
    std::string text;
};

struct CreateSessionRequest {
    std::optional<std::string> session_id;
    std::vector<NewDocument> documents;
    std::vector<NewQuestion> questions;
};

struct EditOutcome {
    AnalysisSession session;
    json result;
    std::uint64_t seq = 0;
};

struct ExportOutcome {
    codebook::TrustworthyCodebook codebook;
    std::string format;
    std::string text;
};

class Engine;

/// Exclusive right to run one chain operation on a session. Released on
/// destruction; a second reservation while one is alive fails with busy.
class ChainReservation {
public:
    ChainReservation() = default;
    ChainReservation(ChainReservation&&) noexcept = default;
    ChainReservation& operator=(ChainReservation&&) noexcept;
    ~ChainReservation();

    const std::string& session_id() const { return session_id_; }
    explicit operator bool() const { return static_cast<bool>(flag_); }

private:
    friend class Engine;
    ChainReservation(std::string session_id, std::shared_ptr<std::atomic<bool>> flag)
        : session_id_(std::move(session_id)), flag_(std::move(flag)) {}
    void release();

    std::string session_id_;
    std::shared_ptr<std::atomic<bool>> flag_;
};

/// Owns every session: serializes mutations per session, writes each
/// change to the audit log before it becomes visible, and persists the
/// session document next to the log.
class Engine {
public:
    explicit Engine(EngineConfig config);
    ~Engine();
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Replays every session found under the storage root. Returns
    /// (directory, message) for sessions that could not be loaded.
    std::vector<std::pair<std::string, std::string>> load_existing();

    AnalysisSession create_session(const CreateSessionRequest& request);
    AnalysisSession session(const std::string& id) const;
    std::vector<std::string> session_ids() const;
    /// Canonical session document, byte-identical to the persisted file.
    std::string session_document(const std::string& id) const;

    EditOutcome edit_unit(const std::string& id, Stage stage, const UnitId& unit_id, const Mutation& mutation);
    Memo add_memo(const std::string& id, Stage stage, const std::string& text);
    PromptRecord issue_prompt(const std::string& id, Stage stage, const std::string& text,
                              const json& parameters = json::object());

    ChainReservation reserve_chain(const std::string& id);
    bool chain_running(const std::string& id) const;

    /// Runs one stage. A user_prompt in `params` is first recorded as a
    /// PromptRecord and the run is logged as a regeneration.
    AnalysisSession run_stage(ChainReservation reservation, const chain::StageParameters& params);
    AnalysisSession run_stage(const std::string& id, const chain::StageParameters& params);
    AnalysisSession regenerate_with_prompt(ChainReservation reservation, const std::string& prompt_record_id);
    AnalysisSession regenerate_with_prompt(const std::string& id, const std::string& prompt_record_id);
    /// Re-labels a committed stage after edits (nudges go stale on edit).
    AnalysisSession refresh_nudge(ChainReservation reservation, Stage stage);

    /// Coverage of the current chunks, without touching the session.
    CoverageReport coverage(const std::string& id) const;
    /// Recomputes coverage and records it.
    CoverageReport compute_coverage(const std::string& id);

    SavedVersion save_version(const std::string& id, const std::optional<std::string>& label);

    /// Pure: assembles the codebook for a saved version.
    ExportOutcome render_export(const std::string& id, const std::string& version_id, const std::string& format) const;
    /// render_export plus an export_produced event.
    ExportOutcome export_codebook(const std::string& id, const std::string& version_id, const std::string& format);

    std::string theme_map_dot(const std::string& id) const;

    AnalysisSession replay(const std::string& id, std::optional<std::uint64_t> up_to_seq = std::nullopt) const;
    std::vector<audit::AuditEvent> trail(const std::string& id, std::uint64_t from_seq = 1) const;
    std::optional<std::string> blob(const std::string& id, const std::string& digest) const;

    const EngineConfig& config() const { return config_; }

private:
    struct Slot;

    std::shared_ptr<Slot> slot(const std::string& id) const;
    std::shared_ptr<Slot> open_slot(const std::string& id, bool create);
    audit::AuditEvent commit(Slot& slot, audit::EventKind kind, Actor actor, json payload, json* result = nullptr);
    void persist(const Slot& slot) const;
    AnalysisSession finish_stage(Slot& slot, const chain::StageParameters& params,
                                 const std::optional<std::string>& prompt_record_id);
    void record_rejection(Slot& slot, Stage stage, const Error& error, const json& calls,
                          const std::optional<std::string>& prompt_record_id, bool nudge_only);
    std::unique_ptr<llm::Provider> make_provider(const std::string& session_id) const;

    EngineConfig config_;
    std::shared_ptr<llm::SchemaRegistry> schemas_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

/// Session ids double as directory names: 1-64 of [A-Za-z0-9_-].
bool valid_session_id(std::string_view id);

/// Ingests plain-text files as documents (title = file stem). Throws
/// Error(file_error) naming the first unreadable path.
std::vector<NewDocument> read_documents(const std::vector<std::filesystem::path>& paths);

} // namespace qda
