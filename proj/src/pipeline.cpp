#include "qda/pipeline.hpp"

#include "qda/error.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace qda {

namespace fs = std::filesystem;

AnalysisSession run_pipeline(Engine& engine, const std::vector<fs::path>& inputs, const PipelineOptions& options) {
    if (inputs.empty()) throw Error(ErrorCode::invalid_argument, "no input files given");
    CreateSessionRequest req;
    req.session_id = options.session_id;
    req.documents = read_documents(inputs);
    req.questions = options.questions;
    auto session = engine.create_session(req);

    for (Stage stage : all_stages) {
        chain::StageParameters params;
        params.stage = stage;
        if (stage == Stage::codes) params.number_of_codes = options.number_of_codes;
        session = engine.run_stage(session.id, params);
    }
    return session;
}

std::vector<NewQuestion> read_questions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::file_error, "cannot read questions file '" + path.string() + "'");
    std::vector<NewQuestion> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        NewQuestion q;
        if (auto tab = line.find('\t'); tab != std::string::npos) {
            q.id = line.substr(0, tab);
            q.text = line.substr(tab + 1);
        } else {
            q.text = line;
        }
        out.push_back(std::move(q));
    }
    return out;
}

namespace {

std::string session_id_for(const std::string& genre, const std::string& doc, int run) {
    std::string raw = "eval-" + genre + "-" + doc + "-r" + std::to_string(run);
    for (char& c : raw) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
        if (!ok) c = '_';
    }
    return raw.substr(0, 64);
}

std::optional<double> mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fixed(std::optional<double> v, int digits) {
    if (!v) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
    return buf;
}

std::string percent(std::optional<double> v) { return v ? fixed(*v * 100.0, 1) + "%" : "NA"; }

} // namespace

EvalTable run_eval(const fs::path& corpus_dir, const EvalOptions& options, EngineConfig engine_config) {
    if (options.runs_per_doc < 1) throw Error(ErrorCode::invalid_argument, "runs per document must be positive");
    if (options.parallelism < 1) throw Error(ErrorCode::invalid_argument, "parallelism must be positive");
    std::error_code ec;
    if (!fs::is_directory(corpus_dir, ec)) {
        throw Error(ErrorCode::file_error, "corpus directory '" + corpus_dir.string() + "' does not exist");
    }

    EvalTable table;
    std::vector<fs::path> genres;
    for (const auto& e : fs::directory_iterator(corpus_dir)) {
        if (e.is_directory()) genres.push_back(e.path());
    }
    std::sort(genres.begin(), genres.end());
    std::vector<fs::path> doc_paths;
    for (const auto& g : genres) {
        std::vector<fs::path> docs;
        for (const auto& e : fs::directory_iterator(g)) {
            if (e.is_regular_file()) docs.push_back(e.path());
        }
        std::sort(docs.begin(), docs.end());
        for (const auto& d : docs) {
            table.documents.push_back(DocumentScore{g.filename().string(), d.filename().string(), {}, {}, {}});
            doc_paths.push_back(d);
        }
    }
    if (table.documents.empty()) {
        throw Error(ErrorCode::invalid_argument, "corpus '" + corpus_dir.string() + "' has no documents");
    }

    engine_config.storage_root.reset();
    Engine engine(std::move(engine_config));

    struct Task {
        std::size_t doc;
        int run;
    };
    std::vector<Task> tasks;
    for (std::size_t d = 0; d < table.documents.size(); ++d) {
        for (int r = 1; r <= options.runs_per_doc; ++r) tasks.push_back({d, r});
    }
    // Run results land in fixed slots so aggregation ignores completion order.
    std::vector<std::optional<double>> scores(tasks.size());
    std::vector<std::string> errors(tasks.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            const auto& t = tasks[i];
            const auto& doc = table.documents[t.doc];
            try {
                CreateSessionRequest req;
                req.session_id = session_id_for(doc.genre, doc.document, t.run);
                req.documents = read_documents({doc_paths[t.doc]});
                auto s = engine.create_session(req);
                chain::StageParameters params;
                params.number_of_codes = options.number_of_codes;
                s = engine.run_stage(s.id, params);
                scores[i] = s.coverage_report ? s.coverage_report->overall_jaccard : 0.0;
            } catch (const Error& e) {
                errors[i] = std::string(error_code_name(e.code())) + ": " + e.what();
            } catch (const std::exception& e) {
                errors[i] = std::string("internal: ") + e.what();
            }
        }
    };
    std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(options.parallelism), tasks.size());
    std::vector<std::thread> threads;
    for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
    worker();
    for (auto& th : threads) th.join();

    for (std::size_t i = 0; i < tasks.size(); ++i) {
        auto& doc = table.documents[tasks[i].doc];
        if (scores[i]) {
            doc.runs.push_back(*scores[i]);
        } else {
            doc.failures.push_back("run " + std::to_string(tasks[i].run) + ": " + errors[i]);
            ++table.failed_runs;
        }
    }
    std::vector<double> all;
    for (auto& doc : table.documents) {
        doc.mean = mean_of(doc.runs);
        if (doc.mean) all.push_back(*doc.mean);
        if (table.genres.empty() || table.genres.back().genre != doc.genre) table.genres.push_back({doc.genre, 0, 0, {}});
    }
    for (auto& g : table.genres) {
        std::vector<double> means;
        for (const auto& doc : table.documents) {
            if (doc.genre != g.genre) continue;
            ++g.documents;
            if (doc.mean) means.push_back(*doc.mean);
        }
        g.scored_documents = means.size();
        g.mean = mean_of(means);
    }
    table.overall_mean = mean_of(all);
    return table;
}

std::string eval_to_tsv(const EvalTable& t) {
    std::ostringstream out;
    out << "level\tgenre\tdocument\truns_ok\truns_failed\tmean_jaccard\n";
    for (const auto& d : t.documents) {
        out << "document\t" << d.genre << '\t' << d.document << '\t' << d.runs.size() << '\t' << d.failures.size()
            << '\t' << fixed(d.mean, 6) << '\n';
    }
    for (const auto& g : t.genres) {
        std::size_t ok = 0, failed = 0;
        for (const auto& d : t.documents) {
            if (d.genre != g.genre) continue;
            ok += d.runs.size();
            failed += d.failures.size();
        }
        out << "genre\t" << g.genre << "\t-\t" << ok << '\t' << failed << '\t' << fixed(g.mean, 6) << '\n';
    }
    std::size_t ok = 0;
    for (const auto& d : t.documents) ok += d.runs.size();
    out << "overall\t-\t-\t" << ok << '\t' << t.failed_runs << '\t' << fixed(t.overall_mean, 6) << '\n';
    return out.str();
}

std::string eval_to_text(const EvalTable& t) {
    std::size_t width = std::string("Average").size();
    for (const auto& g : t.genres) width = std::max(width, g.genre.size());
    for (const auto& d : t.documents) width = std::max(width, d.genre.size() + 1 + d.document.size());
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    auto lpad = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };

    std::ostringstream out;
    out << pad("Genre", width) << "  " << lpad("Docs", 5) << "  " << lpad("Jaccard", 8) << '\n';
    out << std::string(width + 17, '-') << '\n';
    for (const auto& g : t.genres) {
        out << pad(g.genre, width) << "  " << lpad(std::to_string(g.documents), 5) << "  " << lpad(percent(g.mean), 8)
            << '\n';
    }
    out << std::string(width + 17, '-') << '\n';
    out << pad("Average", width) << "  " << lpad(std::to_string(t.documents.size()), 5) << "  "
        << lpad(percent(t.overall_mean), 8) << "\n\n";

    out << pad("Document", width) << "  " << lpad("Runs", 5) << "  " << lpad("Jaccard", 8) << '\n';
    for (const auto& d : t.documents) {
        out << pad(d.genre + "/" + d.document, width) << "  " << lpad(std::to_string(d.runs.size()), 5) << "  "
            << lpad(percent(d.mean), 8) << '\n';
        for (const auto& f : d.failures) out << "    failed " << f << '\n';
    }
    return out.str();
}

} // namespace qda
