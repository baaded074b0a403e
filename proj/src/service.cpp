#include "qda/service.hpp"

#include "qda/error.hpp"

#include <httplib.h>

#include <iostream>

namespace qda::service {

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found:
    case ErrorCode::unknown_op:
    case ErrorCode::unknown_version:
    case ErrorCode::unknown_unit: return 404;
    case ErrorCode::busy:
    case ErrorCode::duplicate_id:
    case ErrorCode::duplicate_schema:
    case ErrorCode::stale_upstream:
    case ErrorCode::stale_stage:
    case ErrorCode::precondition_failed:
    case ErrorCode::missing_summary:
    case ErrorCode::has_children: return 409;
    case ErrorCode::invalid_argument:
    case ErrorCode::empty_document:
    case ErrorCode::empty_text:
    case ErrorCode::unknown_schema:
    case ErrorCode::out_of_bounds: return 400;
    case ErrorCode::chunk_not_verbatim:
    case ErrorCode::chunk_overlap: return 422;
    case ErrorCode::verbatim_violation:
    case ErrorCode::hallucinated_reference:
    case ErrorCode::invalid_question_reference:
    case ErrorCode::unresolvable_reference:
    case ErrorCode::incomplete_coverage:
    case ErrorCode::schema_violation:
    case ErrorCode::provider_unreachable: return 502;
    case ErrorCode::timeout: return 504;
    case ErrorCode::port_in_use:
    case ErrorCode::storage_unwritable:
    case ErrorCode::storage_failure:
    case ErrorCode::corrupt_log:
    case ErrorCode::file_error:
    case ErrorCode::internal: return 500;
    }
    return 500;
}

json api_error(const Error& e) {
    return json{{"code", error_code_name(e.code())}, {"message", e.what()}, {"detail", e.detail()}};
}

json operation_json(const Operation& op) {
    static const char* names[] = {"pending", "done", "failed"};
    json j{{"op_id", op.op_id},
           {"session_id", op.session_id},
           {"kind", op.kind},
           {"stage", op.stage ? json(stage_name(*op.stage)) : json(nullptr)},
           {"status", names[static_cast<int>(op.status)]}};
    if (op.status == OpStatus::done) j["result"] = op.result;
    if (op.status == OpStatus::failed) j["error"] = op.error;
    return j;
}

namespace {

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        json j = json::parse(req.body);
        if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::invalid_argument, std::string("request body is not valid JSON: ") + e.what());
    }
}

template <typename T>
T field(const json& body, const char* key) {
    if (!body.contains(key)) throw Error(ErrorCode::invalid_argument, std::string("missing field \"") + key + "\"");
    try {
        return body.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorCode::invalid_argument, std::string("field \"") + key + "\" has the wrong type");
    }
}

template <typename T>
std::optional<T> optional_field(const json& body, const char* key) {
    if (!body.contains(key) || body[key].is_null()) return std::nullopt;
    return field<T>(body, key);
}

Stage stage_field(const json& body) {
    try {
        return stage_from_name(field<std::string>(body, "stage"));
    } catch (const Error& e) {
        throw Error(ErrorCode::invalid_argument, e.what());
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, const Error& e) { send_json(res, http_status(e.code()), api_error(e)); }

template <typename F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        send_error(res, e);
    } catch (const json::exception& e) {
        send_error(res, Error(ErrorCode::invalid_argument, e.what()));
    } catch (const std::exception& e) {
        send_error(res, Error(ErrorCode::internal, e.what()));
    }
}

std::uint64_t uint_param(const httplib::Request& req, const char* name, std::uint64_t fallback) {
    if (!req.has_param(name)) return fallback;
    const std::string v = req.get_param_value(name);
    try {
        std::size_t used = 0;
        auto n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_argument, std::string("query parameter ") + name + " must be a non-negative integer");
    }
}

} // namespace

Service::Service(Engine& engine, ServiceConfig config)
    : engine_(engine), config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
    // httplib also sets SO_REUSEPORT, which lets a second server share a live port
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    routes();
}

Service::~Service() {
    stop();
}

void Service::bind() {
    if (config_.port == 0) {
        bound_port_ = server_->bind_to_any_port(config_.host);
        if (bound_port_ <= 0) throw Error(ErrorCode::port_in_use, "could not bind any port on " + config_.host);
        return;
    }
    if (!server_->bind_to_port(config_.host, config_.port)) {
        throw Error(ErrorCode::port_in_use,
                    "cannot listen on " + config_.host + ":" + std::to_string(config_.port) + " (port in use?)",
                    json{{"host", config_.host}, {"port", config_.port}});
    }
    bound_port_ = config_.port;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
    stopping_ = true;
    server_->stop();
    drain();
}

void Service::drain() {
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(ops_mutex_);
        workers.swap(workers_);
    }
    for (auto& t : workers) {
        if (t.joinable()) t.join();
    }
}

Operation Service::start_operation(const std::string& session_id, const std::string& kind, std::optional<Stage> stage,
                                   std::function<json(ChainReservation)> body) {
    if (stopping_) throw Error(ErrorCode::busy, "service is shutting down");
    auto reservation = engine_.reserve_chain(session_id);
    Operation op;
    op.op_id = "op-" + std::to_string(++next_op_);
    op.session_id = session_id;
    op.kind = kind;
    op.stage = stage;
    std::lock_guard lock(ops_mutex_);
    ops_[op.op_id] = op;
    workers_.emplace_back([this, id = op.op_id, body = std::move(body), r = std::move(reservation)]() mutable {
        json result;
        json error;
        try {
            result = body(std::move(r));
        } catch (const Error& e) {
            error = api_error(e);
        } catch (const std::exception& e) {
            error = api_error(Error(ErrorCode::internal, e.what()));
        }
        std::lock_guard lock(ops_mutex_);
        auto& o = ops_[id];
        if (error.is_null()) {
            o.status = OpStatus::done;
            o.result = result;
        } else {
            o.status = OpStatus::failed;
            o.error = error;
        }
    });
    return op;
}

std::optional<Operation> Service::operation(const std::string& op_id) const {
    std::lock_guard lock(ops_mutex_);
    auto it = ops_.find(op_id);
    if (it == ops_.end()) return std::nullopt;
    return it->second;
}

void Service::routes() {
    auto& srv = *server_;
    using Req = httplib::Request;
    using Res = httplib::Response;

    srv.Get("/healthz", [](const Req&, Res& res) { send_json(res, 200, json{{"status", "ok"}}); });

    srv.Post("/sessions", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            json body = parse_body(req);
            CreateSessionRequest create;
            create.session_id = optional_field<std::string>(body, "id");
            for (const auto& d : field<json>(body, "documents")) {
                create.documents.push_back(NewDocument{optional_field<std::string>(d, "id"),
                                                       optional_field<std::string>(d, "title").value_or(""),
                                                       field<std::string>(d, "body")});
            }
            for (const auto& q : body.value("research_questions", json::array())) {
                create.questions.push_back(
                    NewQuestion{optional_field<std::string>(q, "id"), field<std::string>(q, "text")});
            }
            auto s = engine_.create_session(create);
            res.status = 201;
            res.set_content(engine_.session_document(s.id), "application/json");
        });
    });

    srv.Get("/sessions", [this](const Req&, Res& res) {
        guarded(res, [&] { send_json(res, 200, json{{"sessions", engine_.session_ids()}}); });
    });

    srv.Get(R"(/sessions/([^/]+))", [this](const Req& req, Res& res) {
        guarded(res, [&] { res.set_content(engine_.session_document(req.matches[1]), "application/json"); });
    });

    srv.Post(R"(/sessions/([^/]+)/stages/([a-z]+):run)", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            std::string id = req.matches[1];
            Stage stage;
            try {
                stage = stage_from_name(std::string(req.matches[2]));
            } catch (const Error&) {
                throw Error(ErrorCode::not_found, "unknown stage '" + std::string(req.matches[2]) + "'");
            }
            json body = parse_body(req);
            engine_.session(id);
            Operation op;
            if (auto prompt_id = optional_field<std::string>(body, "prompt_record_id")) {
                op = start_operation(id, "regeneration", stage, [this, pid = *prompt_id](ChainReservation r) {
                    auto s = engine_.regenerate_with_prompt(std::move(r), pid);
                    return json{{"session_ref", "/sessions/" + s.id}, {"last_seq", s.last_seq}};
                });
            } else if (body.value("nudge_only", false)) {
                op = start_operation(id, "nudge", stage, [this, stage](ChainReservation r) {
                    auto s = engine_.refresh_nudge(std::move(r), stage);
                    return json{{"session_ref", "/sessions/" + s.id}, {"last_seq", s.last_seq}};
                });
            } else {
                auto params = chain::StageParameters::from_json(stage, body);
                op = start_operation(id, "stage", stage, [this, params](ChainReservation r) {
                    auto s = engine_.run_stage(std::move(r), params);
                    return json{{"session_ref", "/sessions/" + s.id}, {"last_seq", s.last_seq}};
                });
            }
            send_json(res, 202, operation_json(op));
        });
    });

    srv.Get(R"(/ops/([^/]+))", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            auto op = operation(req.matches[1]);
            if (!op) throw Error(ErrorCode::unknown_op, "no operation '" + std::string(req.matches[1]) + "'");
            send_json(res, 200, operation_json(*op));
        });
    });

    srv.Patch(R"(/sessions/([^/]+)/units/([^/]+))", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            json body = parse_body(req);
            auto out = engine_.edit_unit(req.matches[1], stage_field(body), req.matches[2],
                                         mutation_from_json(field<json>(body, "mutation")));
            send_json(res, 200, json{{"session", out.session}, {"result", out.result}, {"seq", out.seq}});
        });
    });

    srv.Post(R"(/sessions/([^/]+)/memos)", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            json body = parse_body(req);
            auto memo = engine_.add_memo(req.matches[1], stage_field(body), field<std::string>(body, "text"));
            send_json(res, 201, memo);
        });
    });

    srv.Post(R"(/sessions/([^/]+)/prompts)", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            std::string id = req.matches[1];
            json body = parse_body(req);
            Stage stage = stage_field(body);
            bool regenerate = body.value("regenerate", true);
            // Reserve first so a busy session records no orphan prompt.
            ChainReservation reservation;
            if (regenerate) reservation = engine_.reserve_chain(id);
            auto record = engine_.issue_prompt(id, stage, field<std::string>(body, "text"),
                                               body.value("parameters", json::object()));
            json out{{"prompt_record", record}};
            if (regenerate) {
                reservation = ChainReservation{};
                auto op = start_operation(id, "regeneration", stage, [this, pid = record.id](ChainReservation r) {
                    auto s = engine_.regenerate_with_prompt(std::move(r), pid);
                    return json{{"session_ref", "/sessions/" + s.id}, {"last_seq", s.last_seq}};
                });
                out["operation"] = operation_json(op);
            }
            send_json(res, 201, out);
        });
    });

    srv.Get(R"(/sessions/([^/]+)/coverage)", [this](const Req& req, Res& res) {
        guarded(res, [&] { send_json(res, 200, engine_.coverage(req.matches[1])); });
    });

    srv.Post(R"(/sessions/([^/]+)/coverage)", [this](const Req& req, Res& res) {
        guarded(res, [&] { send_json(res, 201, engine_.compute_coverage(req.matches[1])); });
    });

    srv.Get(R"(/sessions/([^/]+)/theme-map\.dot)", [this](const Req& req, Res& res) {
        guarded(res, [&] { res.set_content(engine_.theme_map_dot(req.matches[1]), "text/vnd.graphviz"); });
    });

    srv.Post(R"(/sessions/([^/]+)/versions)", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            json body = parse_body(req);
            send_json(res, 201, engine_.save_version(req.matches[1], optional_field<std::string>(body, "label")));
        });
    });

    auto export_content_type = [](const std::string& format) {
        return format == "printable" ? "text/markdown; charset=utf-8" : "application/json";
    };

    srv.Get(R"(/sessions/([^/]+)/export)", [this, export_content_type](const Req& req, Res& res) {
        guarded(res, [&] {
            if (!req.has_param("version")) throw Error(ErrorCode::invalid_argument, "missing query parameter version");
            std::string format = req.has_param("format") ? req.get_param_value("format") : "structured";
            auto out = engine_.render_export(req.matches[1], req.get_param_value("version"), format);
            res.set_content(out.text, export_content_type(format));
        });
    });

    srv.Post(R"(/sessions/([^/]+)/exports)", [this, export_content_type](const Req& req, Res& res) {
        guarded(res, [&] {
            json body = parse_body(req);
            std::string format = optional_field<std::string>(body, "format").value_or("structured");
            auto out = engine_.export_codebook(req.matches[1], field<std::string>(body, "version"), format);
            res.status = 201;
            res.set_content(out.text, export_content_type(format));
        });
    });

    srv.Get(R"(/sessions/([^/]+)/trail)", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            json events = json::array();
            for (const auto& e : engine_.trail(req.matches[1], uint_param(req, "from_seq", 1))) {
                events.push_back(audit::event_to_json(e));
            }
            send_json(res, 200, json{{"events", events}});
        });
    });

    srv.Get(R"(/sessions/([^/]+)/replay)", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            std::optional<std::uint64_t> up_to;
            if (req.has_param("up_to_seq")) up_to = uint_param(req, "up_to_seq", 0);
            send_json(res, 200, engine_.replay(req.matches[1], up_to));
        });
    });

    srv.Get(R"(/sessions/([^/]+)/blobs/([0-9a-f]{64}))", [this](const Req& req, Res& res) {
        guarded(res, [&] {
            auto content = engine_.blob(req.matches[1], req.matches[2]);
            if (!content) throw Error(ErrorCode::not_found, "no blob " + std::string(req.matches[2]));
            res.set_content(*content, "text/plain; charset=utf-8");
        });
    });

    srv.set_error_handler([](const Req&, Res& res) {
        if (res.body.empty()) {
            send_json(res, res.status,
                      json{{"code", res.status == 404 ? "not_found" : "invalid_argument"},
                           {"message", "no such endpoint"},
                           {"detail", nullptr}});
        }
    });
}

} // namespace qda::service
