#pragma once

#include "qda/engine.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace qda {

struct PipelineOptions {
    std::optional<std::string> session_id;
    std::optional<int> number_of_codes;
    std::vector<NewQuestion> questions;
};

/// Headless run of all four stages over plain-text inputs. Inputs are read
/// before anything is created, so an unreadable path leaves no session.
AnalysisSession run_pipeline(Engine& engine, const std::vector<std::filesystem::path>& inputs,
                             const PipelineOptions& options);

/// Research questions from a file: one per non-blank line, optionally
/// written "id<TAB>text".
std::vector<NewQuestion> read_questions(const std::filesystem::path& path);

struct EvalOptions {
    int runs_per_doc = 1;
    int parallelism = 1;
    std::optional<int> number_of_codes;
};

struct DocumentScore {
    std::string genre;
    std::string document;
    std::vector<double> runs;
    std::vector<std::string> failures;
    /// Mean over successful runs; empty when every run failed.
    std::optional<double> mean;
};

struct GenreScore {
    std::string genre;
    std::size_t documents = 0;
    std::size_t scored_documents = 0;
    std::optional<double> mean;
};

struct EvalTable {
    std::vector<DocumentScore> documents;
    std::vector<GenreScore> genres;
    /// Mean over every scored document.
    std::optional<double> overall_mean;
    std::size_t failed_runs = 0;
};

/// Text→codes coverage protocol over `corpus_dir/<genre>/<document>`.
/// Each run codes one document in a fresh in-memory session. Failed runs
/// are recorded and skipped. Throws Error(invalid_argument) for an empty
/// corpus.
EvalTable run_eval(const std::filesystem::path& corpus_dir, const EvalOptions& options, EngineConfig engine_config);

/// Tab-separated: level, genre, document, runs_ok, runs_failed, mean_jaccard.
std::string eval_to_tsv(const EvalTable& table);
/// Aligned per-genre table followed by per-document scores.
std::string eval_to_text(const EvalTable& table);

} // namespace qda
