#include "qda/error.hpp"

#include <array>

namespace qda {

namespace {

constexpr std::array<std::string_view, 33> names{
    "invalid_argument",
    "not_found",
    "empty_document",
    "duplicate_id",
    "unknown_unit",
    "chunk_not_verbatim",
    "chunk_overlap",
    "has_children",
    "empty_text",
    "stale_upstream",
    "precondition_failed",
    "verbatim_violation",
    "hallucinated_reference",
    "invalid_question_reference",
    "unresolvable_reference",
    "incomplete_coverage",
    "schema_violation",
    "unknown_schema",
    "duplicate_schema",
    "provider_unreachable",
    "timeout",
    "busy",
    "unknown_op",
    "unknown_version",
    "missing_summary",
    "stale_stage",
    "corrupt_log",
    "storage_failure",
    "file_error",
    "out_of_bounds",
    "port_in_use",
    "storage_unwritable",
    "internal",
};

static_assert(static_cast<std::size_t>(ErrorCode::internal) + 1 == names.size());

} // namespace

std::string_view error_code_name(ErrorCode code) { return names.at(static_cast<std::size_t>(code)); }

ErrorCode error_code_from_name(std::string_view name) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<ErrorCode>(i);
    }
    return ErrorCode::internal;
}

} // namespace qda
