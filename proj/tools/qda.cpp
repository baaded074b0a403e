// qda: batch runs, the coverage evaluation protocol, the HTTP service and
// export/verification utilities over one storage root.

#include "qda/apply.hpp"
#include "qda/engine.hpp"
#include "qda/error.hpp"
#include "qda/pipeline.hpp"
#include "qda/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

namespace fs = std::filesystem;
using namespace qda;

namespace {

struct ProviderFlags {
    std::string provider = "mock";
    std::string mock_script;
    std::string model;
    std::string endpoint;
    std::string reasoning_effort = "minimal";
    int max_output_tokens = 32000;
    long timeout_ms = 600000;
    int max_repair_attempts = 3;
    std::optional<double> temperature;
    std::string api_key_env = "OPENAI_API_KEY";
    std::string clock = "system";
    std::string templates_dir;

    void add(CLI::App& app) {
        app.add_option("--provider", provider, "LLM provider")
            ->check(CLI::IsMember({"live", "mock"}))
            ->envname("QDA_PROVIDER");
        app.add_option("--mock-script", mock_script, "Mock provider script (JSON)")->check(CLI::ExistingFile);
        app.add_option("--model", model, "Model name sent to the live provider")->envname("QDA_MODEL");
        app.add_option("--endpoint", endpoint, "Chat-completions URL of the live provider")->envname("QDA_ENDPOINT");
        app.add_option("--reasoning-effort", reasoning_effort)->check(CLI::IsMember({"minimal", "standard"}));
        app.add_option("--max-output-tokens", max_output_tokens)->check(CLI::PositiveNumber);
        app.add_option("--timeout-ms", timeout_ms, "Per-request provider timeout")->check(CLI::PositiveNumber);
        app.add_option("--max-repair-attempts", max_repair_attempts)->check(CLI::PositiveNumber);
        app.add_option("--temperature", temperature);
        app.add_option("--api-key-env", api_key_env, "Environment variable holding the provider API key")
            ->envname("QDA_API_KEY_ENV");
        app.add_option("--clock", clock, "Timestamp source; logical gives reproducible documents")
            ->check(CLI::IsMember({"system", "logical"}));
        app.add_option("--templates", templates_dir, "Directory of stage templates overriding the built-in set")
            ->check(CLI::ExistingDirectory);
    }

    EngineConfig engine_config(const std::optional<fs::path>& storage) const {
        EngineConfig c;
        c.storage_root = storage;
        c.provider.kind = provider == "live" ? llm::ProviderKind::live : llm::ProviderKind::mock;
        c.provider.endpoint = endpoint;
        c.provider.model_name = model.empty() ? (provider == "live" ? "" : "mock") : model;
        c.provider.reasoning_effort =
            reasoning_effort == "standard" ? llm::ReasoningEffort::standard : llm::ReasoningEffort::minimal;
        c.provider.max_output_tokens = max_output_tokens;
        c.provider.request_timeout = std::chrono::milliseconds(timeout_ms);
        c.provider.max_repair_attempts = max_repair_attempts;
        c.provider.temperature = temperature;
        c.provider.api_key_env = api_key_env;
        if (!mock_script.empty()) {
            std::ifstream in(mock_script);
            try {
                c.mock_script = json::parse(in);
            } catch (const json::exception& e) {
                throw Error(ErrorCode::file_error, "mock script '" + mock_script + "' is not valid JSON: " + e.what());
            }
        }
        c.clock = make_clock(clock);
        if (!templates_dir.empty()) {
            c.templates = chain::TemplateSet::load_directory(templates_dir, fs::path(templates_dir).filename().string());
        }
        return c;
    }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << content)) throw Error(ErrorCode::file_error, "cannot write '" + path + "'");
}

int report(const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    if (!e.detail().is_null()) std::cerr << e.detail().dump(2) << "\n";
    return 1;
}

int serve(Engine& engine, const std::string& listen) {
    service::ServiceConfig sc;
    auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "--listen expects host:port");
    sc.host = listen.substr(0, colon);
    try {
        sc.port = std::stoi(listen.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_argument, "--listen expects host:port");
    }

    // Signals are taken synchronously by one thread; every other thread
    // inherits the blocked mask.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGTERM);
    sigaddset(&signals, SIGINT);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    for (const auto& [dir, why] : engine.load_existing()) {
        std::cerr << "warning: skipped " << dir << ": " << why << "\n";
    }
    service::Service svc(engine, sc);
    svc.bind();
    std::cout << "listening on " << sc.host << ":" << svc.port() << std::endl;

    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        std::cerr << "received signal " << sig << ", draining running operations\n";
        svc.stop();
    });
    svc.run();
    waiter.join();
    std::cerr << "stopped\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLM-assisted qualitative analysis: reasoning chain, validation, audit trail and codebook export"};
    app.require_subcommand(1);

    std::string storage = "qda-data";
    auto add_storage = [&](CLI::App* cmd) {
        cmd->add_option("--storage", storage, "Storage root (one directory per session)")->envname("QDA_STORAGE");
    };

    // run
    auto* run = app.add_subcommand("run", "Run all four stages over plain-text inputs");
    ProviderFlags run_flags;
    run_flags.add(*run);
    add_storage(run);
    std::vector<std::string> inputs;
    std::string questions_file, run_out, session_id;
    std::optional<int> run_codes;
    run->add_option("--input", inputs, "Plain-text document (repeatable)")->required();
    run->add_option("--questions-file", questions_file, "Research questions, one per line (id<TAB>text allowed)");
    run->add_option("--number-of-codes", run_codes)->check(CLI::PositiveNumber);
    run->add_option("--session-id", session_id);
    run->add_option("--out", run_out, "Also write the session document here");

    // eval
    auto* eval = app.add_subcommand("eval", "Coverage evaluation over a genre-organized corpus");
    ProviderFlags eval_flags;
    eval_flags.add(*eval);
    std::string corpus, eval_out;
    int runs = 1, parallelism = 1;
    std::optional<int> eval_codes;
    eval->add_option("--corpus", corpus, "Directory of genre subdirectories")->required();
    eval->add_option("--runs", runs, "Runs per document")->check(CLI::PositiveNumber);
    eval->add_option("--parallelism", parallelism)->check(CLI::PositiveNumber);
    eval->add_option("--number-of-codes", eval_codes)->check(CLI::PositiveNumber);
    eval->add_option("--out", eval_out, "Output prefix: writes <out>.tsv and <out>.txt");

    // serve
    auto* srv = app.add_subcommand("serve", "Start the HTTP service");
    ProviderFlags serve_flags;
    serve_flags.add(*srv);
    add_storage(srv);
    std::string listen = "127.0.0.1:8080";
    srv->add_option("--listen", listen, "host:port (port 0 picks a free one)")->envname("QDA_LISTEN");

    // export
    auto* exp = app.add_subcommand("export", "Export the codebook of a saved version");
    add_storage(exp);
    std::string exp_session, exp_version, exp_format = "printable", exp_out;
    bool exp_save = false;
    exp->add_option("--session", exp_session)->required();
    exp->add_option("--version", exp_version, "Saved version id");
    exp->add_flag("--save", exp_save, "Save a new version first and export it");
    exp->add_option("--format", exp_format)->check(CLI::IsMember({"structured", "printable"}));
    exp->add_option("--out", exp_out, "Output file (stdout when omitted)");

    // verify
    auto* verify = app.add_subcommand("verify", "Check a session's audit chain and replay it");
    add_storage(verify);
    std::string verify_session;
    verify->add_option("--session", verify_session)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            Engine engine(run_flags.engine_config(fs::path(storage)));
            PipelineOptions opts;
            if (!session_id.empty()) opts.session_id = session_id;
            opts.number_of_codes = run_codes;
            if (!questions_file.empty()) opts.questions = read_questions(questions_file);
            std::vector<fs::path> paths(inputs.begin(), inputs.end());
            auto s = run_pipeline(engine, paths, opts);
            if (!run_out.empty()) write_file(run_out, engine.session_document(s.id));
            std::cout << s.id << "\n";
            return 0;
        }
        if (*eval) {
            auto table = run_eval(corpus, EvalOptions{runs, parallelism, eval_codes}, eval_flags.engine_config(std::nullopt));
            auto text = eval_to_text(table);
            if (!eval_out.empty()) {
                write_file(eval_out + ".tsv", eval_to_tsv(table));
                write_file(eval_out + ".txt", text);
            }
            std::cout << text;
            return 0;
        }
        if (*srv) {
            Engine engine(serve_flags.engine_config(fs::path(storage)));
            return serve(engine, listen);
        }
        ProviderFlags defaults;
        Engine engine(defaults.engine_config(fs::path(storage)));
        for (const auto& [dir, why] : engine.load_existing()) {
            std::cerr << "warning: skipped " << dir << ": " << why << "\n";
        }
        if (*exp) {
            if (exp_save) exp_version = engine.save_version(exp_session, std::nullopt).version_id;
            if (exp_version.empty()) throw Error(ErrorCode::invalid_argument, "give --version or --save");
            auto out = engine.export_codebook(exp_session, exp_version, exp_format);
            if (exp_out.empty()) {
                std::cout << out.text;
            } else {
                write_file(exp_out, out.text);
            }
            return 0;
        }
        if (*verify) {
            auto live = engine.session(verify_session);
            auto replayed = engine.replay(verify_session);
            if (!(live == replayed)) {
                std::cerr << "replay differs from the stored session\n";
                return 1;
            }
            std::cout << "ok: " << live.last_seq << " events verified\n";
            return 0;
        }
    } catch (const Error& e) {
        return report(e);
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
