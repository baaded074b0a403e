#pragma once

#include "qda/model.hpp"

#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace qda::validation {

/// Splits text into lowercase word tokens. Any byte that is not an ASCII
/// letter or digit (and not part of a multi-byte UTF-8 sequence) separates
/// tokens; empty tokens are discarded.
std::vector<std::string> tokenize(std::string_view text);

struct TokenSpan {
    Span span;
    std::string token;
};

/// Tokens with their raw byte ranges in `text`.
std::vector<TokenSpan> token_spans(std::string_view text);

/// Number of tokens in `text`; used for SourceDocument::word_count.
std::size_t word_count(std::string_view text);

struct WordSet {
    std::unordered_set<std::string> words;

    static WordSet from_text(std::string_view text);
    static WordSet from_words(const std::vector<std::string>& words);

    std::size_t size() const { return words.size(); }
    void merge(const WordSet& other) { words.insert(other.words.begin(), other.words.end()); }
};

/// |a ∩ b| / |a ∪ b|, with two empty sets scoring 1.0.
double jaccard(const WordSet& a, const WordSet& b);

struct NormalizationOptions {
    bool collapse_whitespace = true;
    bool case_insensitive = false;
};

/// Applies the verbatim normalization: whitespace runs become one space,
/// optionally ASCII-lowercased. Case and punctuation are otherwise kept.
std::string normalize(std::string_view text, const NormalizationOptions& options = {});

struct VerbatimResult {
    bool ok = true;
    /// Offset into the chunk text of the first divergent byte (or the
    /// chunk length when one side is a prefix of the other).
    std::size_t position = 0;
    std::string detail;
};

/// Checks that body[start, end) matches `text` under normalization.
/// Throws Error(out_of_bounds) for offsets outside the body or start >= end.
VerbatimResult verify_verbatim(std::string_view body, std::size_t start, std::size_t end,
                               std::string_view text, const NormalizationOptions& options = {});

VerbatimResult verify_verbatim(const SourceDocument& document, const ChunkAssignment& chunk,
                               const NormalizationOptions& options = {});

/// Every raw span of `body` whose normalized form equals normalize(text),
/// in ascending order. Empty when `text` normalizes to nothing.
std::vector<Span> locate_verbatim(std::string_view body, std::string_view text,
                                  const NormalizationOptions& options = {});

bool spans_overlap(const Span& a, const Span& b);

/// Coverage of each document by the session's chunks. Chunk-free sessions
/// report every document as uncovered.
CoverageReport compute_coverage(const AnalysisSession& session);

} // namespace qda::validation
