#pragma once

#include "qda/engine.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace qda::service {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    /// 0 picks a free port.
    int port = 8080;
};

/// HTTP status for an engine error code.
int http_status(ErrorCode code);
/// ApiError wire form: {"code", "message", "detail"}.
json api_error(const Error& e);

enum class OpStatus { pending, done, failed };

struct Operation {
    std::string op_id;
    std::string session_id;
    std::string kind;
    std::optional<Stage> stage;
    OpStatus status = OpStatus::pending;
    json result = nullptr;
    json error = nullptr;
};

json operation_json(const Operation& op);

/// REST front end over an Engine. Chain stages run as background
/// operations that clients poll.
class Service {
public:
    Service(Engine& engine, ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket. Throws Error(port_in_use).
    void bind();
    /// Serves until stop(); call after bind().
    void run();
    /// Stops accepting requests, then waits for running operations.
    void stop();
    int port() const { return bound_port_; }

    /// Starts a background chain operation; the reservation is taken
    /// synchronously so a busy session fails here.
    Operation start_operation(const std::string& session_id, const std::string& kind, std::optional<Stage> stage,
                              std::function<json(ChainReservation)> body);
    std::optional<Operation> operation(const std::string& op_id) const;
    /// Blocks until every started operation has finished.
    void drain();

private:
    void routes();

    Engine& engine_;
    ServiceConfig config_;
    std::unique_ptr<httplib::Server> server_;
    int bound_port_ = 0;

    mutable std::mutex ops_mutex_;
    std::map<std::string, Operation> ops_;
    std::vector<std::thread> workers_;
    std::atomic<std::uint64_t> next_op_{0};
    std::atomic<bool> stopping_{false};
};

} // namespace qda::service
