#include "qda/engine.hpp"

#include "qda/apply.hpp"
#include "qda/digest.hpp"
#include "qda/error.hpp"
#include "qda/theme_map.hpp"
#include "qda/validation.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace qda {

namespace fs = std::filesystem;
using audit::AuditEvent;
using audit::EventKind;

struct Engine::Slot {
    std::string id;
    mutable std::shared_mutex mutex;
    AnalysisSession session;
    std::unique_ptr<audit::AuditLog> log;
    std::shared_ptr<audit::BlobStore> blobs;
    std::unique_ptr<llm::Provider> provider;
    std::shared_ptr<std::atomic<bool>> chain_busy = std::make_shared<std::atomic<bool>>(false);
    std::optional<fs::path> dir;
};

namespace {

bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        if (len == 0 || i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
        }
        i += len;
    }
    return true;
}

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; });
}

std::string random_session_id() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    static const char* hex = "0123456789abcdef";
    std::string id = "s-";
    for (int i = 0; i < 16; ++i) id += hex[rng() % 16];
    return id;
}

void write_atomically(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::storage_failure, "cannot write " + tmp.string());
    std::size_t off = 0;
    while (off < content.size()) {
        ssize_t n = ::write(fd, content.data() + off, content.size() - off);
        if (n <= 0) {
            ::close(fd);
            throw Error(ErrorCode::storage_failure, "short write to " + tmp.string());
        }
        off += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
    fs::rename(tmp, path);
}

/// Error detail safe to keep in the log: raw attempts already live in the
/// blob store, referenced from the call records.
json loggable_detail(const Error& e) {
    json d = e.detail();
    if (d.is_object()) d.erase("attempts");
    return d;
}

} // namespace

bool valid_session_id(std::string_view id) {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    });
}

std::vector<NewDocument> read_documents(const std::vector<fs::path>& paths) {
    std::vector<NewDocument> docs;
    for (const auto& p : paths) {
        std::ifstream in(p, std::ios::binary);
        std::error_code ec;
        if (!in || fs::is_directory(p, ec)) throw Error(ErrorCode::file_error, "cannot read '" + p.string() + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        docs.push_back(NewDocument{std::nullopt, p.stem().string(), buf.str()});
    }
    return docs;
}

// --- ChainReservation ---------------------------------------------------------------

ChainReservation& ChainReservation::operator=(ChainReservation&& other) noexcept {
    if (this != &other) {
        release();
        session_id_ = std::move(other.session_id_);
        flag_ = std::move(other.flag_);
    }
    return *this;
}

ChainReservation::~ChainReservation() { release(); }

void ChainReservation::release() {
    if (flag_) flag_->store(false);
    flag_.reset();
}

// --- Engine ----------------------------------------------------------------------------

Engine::Engine(EngineConfig config) : config_(std::move(config)), schemas_(chain::make_stage_schemas()) {
    config_.provider.validate();
    if (!config_.clock) config_.clock = std::make_shared<SystemClock>();
    if (config_.storage_root) {
        std::error_code ec;
        fs::create_directories(*config_.storage_root, ec);
        fs::path probe = *config_.storage_root / ".write-probe";
        std::ofstream f(probe);
        if (ec || !f || !(f << "ok") || !f.flush()) {
            throw Error(ErrorCode::storage_unwritable,
                        "storage root '" + config_.storage_root->string() + "' is not writable");
        }
        f.close();
        fs::remove(probe, ec);
    }
}

Engine::~Engine() = default;

std::unique_ptr<llm::Provider> Engine::make_provider(const std::string& session_id) const {
    if (config_.provider_factory) return config_.provider_factory(session_id);
    if (config_.provider.kind == llm::ProviderKind::live) return std::make_unique<llm::LiveProvider>();
    return std::make_unique<llm::MockProvider>(config_.mock_script);
}

std::shared_ptr<Engine::Slot> Engine::slot(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::not_found, "no session '" + id + "'", json{{"session_id", id}});
    return it->second;
}

std::shared_ptr<Engine::Slot> Engine::open_slot(const std::string& id, bool create) {
    auto s = std::make_shared<Slot>();
    s->id = id;
    std::unique_ptr<audit::LogStorage> storage;
    if (config_.storage_root) {
        s->dir = *config_.storage_root / id;
        if (create) {
            std::error_code ec;
            if (!fs::create_directories(*s->dir, ec) || ec) {
                throw Error(ErrorCode::storage_failure, "cannot create session directory " + s->dir->string());
            }
        }
        s->blobs = std::make_shared<audit::FileBlobStore>(*s->dir / "blobs");
    } else {
        s->blobs = std::make_shared<audit::MemoryBlobStore>();
    }
    if (config_.log_storage_factory) {
        storage = config_.log_storage_factory(id);
    } else if (s->dir) {
        storage = std::make_unique<audit::FileLogStorage>(*s->dir / "audit.log");
    } else {
        storage = std::make_unique<audit::MemoryLogStorage>();
    }
    s->log = std::make_unique<audit::AuditLog>(std::move(storage), id);
    s->provider = make_provider(id);
    return s;
}

void Engine::persist(const Slot& s) const {
    if (!s.dir) return;
    // The log is authoritative; the document is a convenience copy that
    // load_existing rewrites, so a failure here is not fatal.
    try {
        write_atomically(*s.dir / "session.json", json(s.session).dump(2) + "\n");
    } catch (const std::exception& e) {
        std::cerr << "warning: could not write session document for " << s.id << ": " << e.what() << "\n";
    }
}

AuditEvent Engine::commit(Slot& s, EventKind kind, Actor actor, json payload, json* result_out) {
    AuditEvent e;
    e.seq = s.log->last_seq() + 1;
    e.timestamp = config_.clock->now();
    e.actor = actor;
    e.kind = kind;
    e.payload = std::move(payload);

    AnalysisSession next = s.session;
    json result = apply_event(next, e);
    if (auto problems = check_hierarchy(next); !problems.empty()) {
        throw Error(ErrorCode::internal, "operation would break the hierarchy: " + problems.front(),
                    json{{"problems", problems}});
    }
    if (!result.is_null()) e.payload["result"] = result;

    AuditEvent written = s.log->append(kind, actor, e.timestamp, e.payload);
    if (written.seq != e.seq) throw Error(ErrorCode::internal, "audit sequence drifted");
    s.session = std::move(next);
    persist(s);
    if (result_out) *result_out = std::move(result);
    return written;
}

std::vector<std::pair<std::string, std::string>> Engine::load_existing() {
    std::vector<std::pair<std::string, std::string>> failures;
    if (!config_.storage_root) return failures;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(*config_.storage_root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "audit.log")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        std::string id = dir.filename().string();
        try {
            if (!valid_session_id(id)) throw Error(ErrorCode::invalid_argument, "not a session directory name");
            auto s = open_slot(id, false);
            auto events = s->log->read_verified();
            if (events.empty()) throw Error(ErrorCode::corrupt_log, "audit log has no events");
            s->session = replay_events(events);
            persist(*s);
            std::unique_lock lock(sessions_mutex_);
            sessions_[id] = std::move(s);
        } catch (const std::exception& e) {
            failures.emplace_back(dir.string(), e.what());
        }
    }
    return failures;
}

AnalysisSession Engine::create_session(const CreateSessionRequest& req) {
    if (req.documents.empty()) throw Error(ErrorCode::empty_document, "a session needs at least one document");

    std::string id = req.session_id.value_or(random_session_id());
    if (!valid_session_id(id)) {
        throw Error(ErrorCode::invalid_argument, "session id must be 1-64 characters of [A-Za-z0-9_-]");
    }

    json docs = json::array();
    std::set<std::string> doc_ids;
    for (std::size_t i = 0; i < req.documents.size(); ++i) {
        const auto& d = req.documents[i];
        std::string did = d.id.value_or("d" + std::to_string(i + 1));
        if (did.empty()) throw Error(ErrorCode::invalid_argument, "document ids must be non-empty");
        if (!valid_utf8(d.body) || !valid_utf8(d.title) || !valid_utf8(did)) {
            throw Error(ErrorCode::invalid_argument, "document " + std::to_string(i + 1) + " is not valid UTF-8");
        }
        if (blank(d.body)) {
            throw Error(ErrorCode::empty_document, "document '" + did + "' has an empty body", json{{"document_id", did}});
        }
        if (!doc_ids.insert(did).second) {
            throw Error(ErrorCode::duplicate_id, "document id '" + did + "' is used twice", json{{"id", did}});
        }
        SourceDocument sd{did, d.title.empty() ? did : d.title, d.body, validation::word_count(d.body)};
        docs.push_back(sd);
    }
    json questions = json::array();
    std::set<std::string> q_ids;
    for (std::size_t i = 0; i < req.questions.size(); ++i) {
        const auto& q = req.questions[i];
        std::string qid = q.id.value_or("q" + std::to_string(i + 1));
        if (qid.empty() || blank(q.text) || !valid_utf8(q.text) || !valid_utf8(qid)) {
            throw Error(ErrorCode::invalid_argument, "research question " + std::to_string(i + 1) + " needs an id and text");
        }
        if (!q_ids.insert(qid).second) {
            throw Error(ErrorCode::duplicate_id, "research question id '" + qid + "' is used twice", json{{"id", qid}});
        }
        questions.push_back(ResearchQuestion{qid, q.text});
    }

    SessionSettings settings{config_.templates.version, config_.provider.describe()};
    json payload{{"id", id}, {"documents", docs}, {"research_questions", questions}, {"settings", settings}};

    std::unique_lock lock(sessions_mutex_);
    if (sessions_.count(id) || (config_.storage_root && fs::exists(*config_.storage_root / id))) {
        throw Error(ErrorCode::duplicate_id, "session '" + id + "' already exists", json{{"id", id}});
    }
    auto s = open_slot(id, true);
    try {
        commit(*s, EventKind::session_created, Actor::analyst, payload);
    } catch (...) {
        if (s->dir) {
            std::error_code ec;
            fs::remove_all(*s->dir, ec);
        }
        throw;
    }
    sessions_[id] = s;
    return s->session;
}

AnalysisSession Engine::session(const std::string& id) const {
    auto s = slot(id);
    std::shared_lock lock(s->mutex);
    return s->session;
}

std::vector<std::string> Engine::session_ids() const {
    std::shared_lock lock(sessions_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : sessions_) ids.push_back(id);
    return ids;
}

std::string Engine::session_document(const std::string& id) const { return json(session(id)).dump(2) + "\n"; }

EditOutcome Engine::edit_unit(const std::string& id, Stage stage, const UnitId& unit_id, const Mutation& m) {
    auto s = slot(id);
    std::unique_lock lock(s->mutex);
    if (s->chain_busy->load()) {
        throw Error(ErrorCode::busy, "a chain operation is running on this session; retry when it finishes");
    }
    json result;
    auto e = commit(*s, EventKind::edit, Actor::analyst,
                    json{{"stage", stage_name(stage)}, {"unit_id", unit_id}, {"mutation", mutation_to_json(m)}},
                    &result);
    return EditOutcome{s->session, result, e.seq};
}

Memo Engine::add_memo(const std::string& id, Stage stage, const std::string& text) {
    if (blank(text)) throw Error(ErrorCode::empty_text, "memo text is empty");
    if (!valid_utf8(text)) throw Error(ErrorCode::invalid_argument, "memo text is not valid UTF-8");
    auto s = slot(id);
    std::unique_lock lock(s->mutex);
    commit(*s, EventKind::memo_added, Actor::analyst, json{{"stage", stage_name(stage)}, {"text", text}});
    return s->session.memos.back();
}

PromptRecord Engine::issue_prompt(const std::string& id, Stage stage, const std::string& text,
                                  const json& parameters) {
    if (blank(text)) throw Error(ErrorCode::empty_text, "prompt text is empty");
    if (!valid_utf8(text)) throw Error(ErrorCode::invalid_argument, "prompt text is not valid UTF-8");
    json params = parameters.is_null() ? json::object() : parameters;
    // Parsing validates number_of_codes against the stage.
    chain::StageParameters::from_json(stage, params);
    auto s = slot(id);
    std::unique_lock lock(s->mutex);
    commit(*s, EventKind::prompt_issued, Actor::analyst,
           json{{"stage", stage_name(stage)}, {"user_prompt_text", text}, {"parameters", params}});
    return s->session.prompt_records.back();
}

ChainReservation Engine::reserve_chain(const std::string& id) {
    auto s = slot(id);
    bool expected = false;
    if (!s->chain_busy->compare_exchange_strong(expected, true)) {
        throw Error(ErrorCode::busy, "another chain operation is already running on session '" + id + "'");
    }
    return ChainReservation(id, s->chain_busy);
}

bool Engine::chain_running(const std::string& id) const { return slot(id)->chain_busy->load(); }

void Engine::record_rejection(Slot& s, Stage stage, const Error& error, const json& calls,
                              const std::optional<std::string>& prompt_record_id, bool nudge_only) {
    json payload{{"stage", stage_name(stage)},
                 {"error", {{"code", error_code_name(error.code())}, {"message", error.what()}, {"detail", loggable_detail(error)}}},
                 {"llm_calls", calls}};
    if (prompt_record_id) payload["prompt_record_id"] = *prompt_record_id;
    if (nudge_only) payload["nudge_only"] = true;
    try {
        std::unique_lock lock(s.mutex);
        commit(s, EventKind::stage_rejected, Actor::system, payload);
    } catch (const std::exception& e) {
        std::cerr << "warning: could not record rejected stage for " << s.id << ": " << e.what() << "\n";
    }
}

AnalysisSession Engine::finish_stage(Slot& s, const chain::StageParameters& params,
                                     const std::optional<std::string>& prompt_record_id) {
    AnalysisSession snapshot;
    {
        std::shared_lock lock(s.mutex);
        snapshot = s.session;
    }
    chain::check_preconditions(snapshot, params.stage);

    chain::ReasoningChain chain(config_.templates, schemas_, config_.provider, s.blobs);
    json calls = json::array();
    chain::StageOutcome outcome;
    try {
        outcome = chain.run_stage(snapshot, params, *s.provider, calls);
    } catch (const Error& e) {
        record_rejection(s, params.stage, e, calls, prompt_record_id, false);
        throw;
    }

    json payload{{"stage", stage_name(params.stage)},
                 {"parameters", outcome.parameters},
                 {"template_version", config_.templates.version},
                 {"warnings", outcome.warnings},
                 {"nudge", outcome.nudge ? json(*outcome.nudge) : json(nullptr)},
                 {"output", outcome.output},
                 {"id_counter", outcome.id_counter},
                 {"llm_calls", calls}};
    if (prompt_record_id) payload["prompt_record_id"] = *prompt_record_id;

    std::unique_lock lock(s.mutex);
    commit(s, prompt_record_id ? EventKind::regeneration : EventKind::stage_committed, Actor::system, payload);
    return s.session;
}

AnalysisSession Engine::run_stage(ChainReservation reservation, const chain::StageParameters& params) {
    params.validate();
    auto s = slot(reservation.session_id());
    {
        std::shared_lock lock(s->mutex);
        chain::check_preconditions(s->session, params.stage);
    }
    std::optional<std::string> prompt_id;
    if (params.user_prompt && !blank(*params.user_prompt)) {
        json p = params.to_json();
        p.erase("user_prompt");
        prompt_id = issue_prompt(reservation.session_id(), params.stage, *params.user_prompt, p).id;
    }
    return finish_stage(*s, params, prompt_id);
}

AnalysisSession Engine::run_stage(const std::string& id, const chain::StageParameters& params) {
    return run_stage(reserve_chain(id), params);
}

AnalysisSession Engine::regenerate_with_prompt(ChainReservation reservation, const std::string& prompt_record_id) {
    auto s = slot(reservation.session_id());
    chain::StageParameters params;
    {
        std::shared_lock lock(s->mutex);
        const PromptRecord* r = s->session.find_prompt(prompt_record_id);
        if (!r) {
            throw Error(ErrorCode::not_found, "no prompt record '" + prompt_record_id + "'",
                        json{{"prompt_record_id", prompt_record_id}});
        }
        params = chain::StageParameters::from_json(r->stage, r->parameters);
        params.user_prompt = r->user_prompt_text;
    }
    return finish_stage(*s, params, prompt_record_id);
}

AnalysisSession Engine::regenerate_with_prompt(const std::string& id, const std::string& prompt_record_id) {
    return regenerate_with_prompt(reserve_chain(id), prompt_record_id);
}

AnalysisSession Engine::refresh_nudge(ChainReservation reservation, Stage stage) {
    if (stage == Stage::summary) throw Error(ErrorCode::invalid_argument, "the summary stage has no nudge");
    auto s = slot(reservation.session_id());
    std::vector<chain::LabeledUnit> units;
    {
        std::shared_lock lock(s->mutex);
        if (!s->session.stage(stage).committed) {
            throw Error(ErrorCode::precondition_failed,
                        "stage '" + std::string(stage_name(stage)) + "' has not been generated yet");
        }
        units = chain::stage_units(s->session, stage);
    }
    chain::ReasoningChain chain(config_.templates, schemas_, config_.provider, s->blobs);
    json calls = json::array();
    Nudge nudge;
    try {
        nudge = chain.generate_nudge(stage, units, std::nullopt, *s->provider, calls);
    } catch (const Error& e) {
        record_rejection(*s, stage, e, calls, std::nullopt, true);
        throw;
    }
    std::unique_lock lock(s->mutex);
    // Units may not change while the reservation is held (edits are refused).
    commit(*s, EventKind::stage_committed, Actor::system,
           json{{"stage", stage_name(stage)}, {"nudge_only", true}, {"nudge", nudge}, {"llm_calls", calls}});
    return s->session;
}

CoverageReport Engine::coverage(const std::string& id) const { return validation::compute_coverage(session(id)); }

CoverageReport Engine::compute_coverage(const std::string& id) {
    auto s = slot(id);
    std::unique_lock lock(s->mutex);
    auto report = validation::compute_coverage(s->session);
    commit(*s, EventKind::coverage_computed, Actor::system, json{{"report", report}});
    return report;
}

SavedVersion Engine::save_version(const std::string& id, const std::optional<std::string>& label) {
    auto s = slot(id);
    std::unique_lock lock(s->mutex);
    commit(*s, EventKind::version_saved, Actor::analyst, json{{"label", label ? json(*label) : json(nullptr)}});
    return s->session.saved_versions.back();
}

ExportOutcome Engine::render_export(const std::string& id, const std::string& version_id,
                                    const std::string& format) const {
    if (format != "structured" && format != "printable") {
        throw Error(ErrorCode::invalid_argument, "export format must be 'structured' or 'printable'");
    }
    auto s = slot(id);
    std::vector<AuditEvent> events;
    SavedVersion version;
    {
        std::shared_lock lock(s->mutex);
        const SavedVersion* v = s->session.find_version(version_id);
        if (!v) {
            throw Error(ErrorCode::unknown_version, "session '" + id + "' has no version '" + version_id + "'",
                        json{{"version_id", version_id}});
        }
        version = *v;
        events = s->log->events(1);
    }
    AnalysisSession at = replay_events(events, version.seq_at_save);
    ExportOutcome out;
    out.codebook = codebook::assemble(at, events, version, config_.clock->now());
    out.format = format;
    out.text = format == "structured" ? codebook::render_structured(out.codebook)
                                      : codebook::render_printable(out.codebook,
                                                                   out.codebook.theme_map_dot.empty()
                                                                       ? std::nullopt
                                                                       : codebook::render_svg(out.codebook.theme_map_dot));
    return out;
}

ExportOutcome Engine::export_codebook(const std::string& id, const std::string& version_id,
                                      const std::string& format) {
    auto out = render_export(id, version_id, format);
    auto s = slot(id);
    std::unique_lock lock(s->mutex);
    commit(*s, EventKind::export_produced, Actor::analyst,
           json{{"version_id", version_id}, {"format", format}, {"content_digest", sha256_hex(out.text)}});
    return out;
}

std::string Engine::theme_map_dot(const std::string& id) const {
    return theme_map::emit_dot(theme_map::build_graph(session(id)));
}

AnalysisSession Engine::replay(const std::string& id, std::optional<std::uint64_t> up_to_seq) const {
    auto s = slot(id);
    auto events = s->log->read_verified();
    if (up_to_seq && (*up_to_seq == 0 || *up_to_seq > events.size())) {
        throw Error(ErrorCode::invalid_argument, "seq " + std::to_string(*up_to_seq) + " is outside the log",
                    json{{"last_seq", events.size()}});
    }
    return replay_events(events, up_to_seq);
}

std::vector<AuditEvent> Engine::trail(const std::string& id, std::uint64_t from_seq) const {
    return slot(id)->log->events(from_seq);
}

std::optional<std::string> Engine::blob(const std::string& id, const std::string& digest) const {
    return slot(id)->blobs->get(digest);
}

} // namespace qda
