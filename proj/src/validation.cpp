#include "qda/validation.hpp"

#include "qda/error.hpp"

#include <algorithm>
#include <map>

namespace qda::validation {

namespace {

bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

struct Normalized {
    std::string text;
    std::vector<std::size_t> raw_index; // raw offset of each normalized byte
};

Normalized normalize_mapped(std::string_view raw, const NormalizationOptions& options) {
    Normalized out;
    out.text.reserve(raw.size());
    out.raw_index.reserve(raw.size());
    std::size_t i = 0;
    while (i < raw.size()) {
        auto c = static_cast<unsigned char>(raw[i]);
        if (options.collapse_whitespace && is_space(c)) {
            out.text.push_back(' ');
            out.raw_index.push_back(i);
            while (i < raw.size() && is_space(static_cast<unsigned char>(raw[i]))) ++i;
            continue;
        }
        out.text.push_back(options.case_insensitive ? ascii_lower(raw[i]) : raw[i]);
        out.raw_index.push_back(i);
        ++i;
    }
    return out;
}

} // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        if (is_word_byte(static_cast<unsigned char>(ch))) {
            current.push_back(ascii_lower(ch));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::vector<TokenSpan> token_spans(std::string_view text) {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        std::size_t start = i;
        std::string token;
        while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
            token.push_back(ascii_lower(text[i]));
            ++i;
        }
        out.push_back(TokenSpan{Span{start, i}, std::move(token)});
    }
    return out;
}

std::size_t word_count(std::string_view text) { return tokenize(text).size(); }

WordSet WordSet::from_text(std::string_view text) {
    WordSet set;
    for (auto& token : tokenize(text)) set.words.insert(std::move(token));
    return set;
}

WordSet WordSet::from_words(const std::vector<std::string>& words) {
    WordSet set;
    set.words.insert(words.begin(), words.end());
    return set;
}

double jaccard(const WordSet& a, const WordSet& b) {
    const WordSet& small = a.size() <= b.size() ? a : b;
    const WordSet& large = a.size() <= b.size() ? b : a;
    std::size_t common = 0;
    for (const auto& w : small.words) common += large.words.count(w);
    std::size_t total = a.size() + b.size() - common;
    if (total == 0) return 1.0;
    return static_cast<double>(common) / static_cast<double>(total);
}

std::string normalize(std::string_view text, const NormalizationOptions& options) {
    return normalize_mapped(text, options).text;
}

VerbatimResult verify_verbatim(std::string_view body, std::size_t start, std::size_t end,
                               std::string_view text, const NormalizationOptions& options) {
    if (start >= end || end > body.size()) {
        throw Error(ErrorCode::out_of_bounds,
                    "chunk offsets [" + std::to_string(start) + ", " + std::to_string(end) +
                        ") outside document of length " + std::to_string(body.size()));
    }
    Normalized expected = normalize_mapped(body.substr(start, end - start), options);
    Normalized actual = normalize_mapped(text, options);
    std::size_t n = std::min(expected.text.size(), actual.text.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (expected.text[i] != actual.text[i]) {
            return {false, actual.raw_index[i],
                    "chunk diverges from source at chunk offset " +
                        std::to_string(actual.raw_index[i])};
        }
    }
    if (expected.text.size() != actual.text.size()) {
        std::size_t pos = n < actual.raw_index.size() ? actual.raw_index[n] : text.size();
        return {false, pos,
                expected.text.size() > actual.text.size() ? "chunk text is shorter than the source span"
                                                          : "chunk text is longer than the source span"};
    }
    return {};
}

VerbatimResult verify_verbatim(const SourceDocument& document, const ChunkAssignment& chunk,
                               const NormalizationOptions& options) {
    return verify_verbatim(document.body, chunk.start_offset, chunk.end_offset, chunk.text, options);
}

std::vector<Span> locate_verbatim(std::string_view body, std::string_view text,
                                  const NormalizationOptions& options) {
    std::vector<Span> spans;
    Normalized needle = normalize_mapped(text, options);
    if (needle.text.empty() || needle.text == " ") return spans;
    Normalized hay = normalize_mapped(body, options);
    std::size_t pos = hay.text.find(needle.text);
    while (pos != std::string::npos) {
        std::size_t last = pos + needle.text.size() - 1;
        spans.push_back(Span{hay.raw_index[pos], hay.raw_index[last] + 1});
        pos = hay.text.find(needle.text, pos + 1);
    }
    return spans;
}

bool spans_overlap(const Span& a, const Span& b) { return a.start < b.end && b.start < a.end; }

CoverageReport compute_coverage(const AnalysisSession& session) {
    std::map<std::string, std::vector<Span>> by_document;
    for (const auto& chunk : session.chunks) {
        by_document[chunk.document_id].push_back(Span{chunk.start_offset, chunk.end_offset});
    }

    CoverageReport report;
    WordSet all_source;
    WordSet all_coded;
    for (const auto& doc : session.documents) {
        auto spans = by_document[doc.id];
        std::sort(spans.begin(), spans.end(),
                  [](const Span& a, const Span& b) { return a.start < b.start; });

        DocumentCoverage cov;
        cov.document_id = doc.id;
        const std::string_view body(doc.body);
        auto blank = [&](std::size_t from, std::size_t to) {
            for (std::size_t i = from; i < to; ++i) {
                if (!is_space(body[i])) return false;
            }
            return true;
        };
        // Whitespace between or around chunks is not uncovered content.
        for (auto s : spans) {
            if (cov.covered_spans.empty() && blank(0, s.start)) s.start = 0;
            if (!cov.covered_spans.empty() && blank(cov.covered_spans.back().end, s.start)) {
                s.start = std::min(s.start, cov.covered_spans.back().end);
            }
            if (!cov.covered_spans.empty() && s.start <= cov.covered_spans.back().end) {
                cov.covered_spans.back().end = std::max(cov.covered_spans.back().end, s.end);
            } else {
                cov.covered_spans.push_back(s);
            }
        }
        std::size_t cursor = 0;
        WordSet coded;
        for (const auto& s : cov.covered_spans) {
            if (s.start > cursor) cov.uncovered_spans.push_back(Span{cursor, s.start});
            // Each contiguous covered region is tokenized on its own so
            // words never fuse across a gap.
            coded.merge(WordSet::from_text(std::string_view(doc.body).substr(s.start, s.end - s.start)));
            cursor = s.end;
        }
        if (!cov.covered_spans.empty() && blank(cursor, body.size())) {
            cov.covered_spans.back().end = body.size();
            cursor = body.size();
        }
        if (cursor < body.size()) cov.uncovered_spans.push_back(Span{cursor, body.size()});

        WordSet source = WordSet::from_text(doc.body);
        cov.jaccard = jaccard(source, coded);
        all_source.merge(source);
        all_coded.merge(coded);
        report.per_document.push_back(std::move(cov));
    }
    report.overall_jaccard = jaccard(all_source, all_coded);
    return report;
}

} // namespace qda::validation
