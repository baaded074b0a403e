#pragma once

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <string_view>

namespace qda {

/// Closed set of engine failure codes. Every code has a stable wire name
/// (see error_code_name) that the HTTP service reports verbatim.
enum class ErrorCode {
    invalid_argument,
    not_found,
    empty_document,
    duplicate_id,
    unknown_unit,
    chunk_not_verbatim,
    chunk_overlap,
    has_children,
    empty_text,
    stale_upstream,
    precondition_failed,
    verbatim_violation,
    hallucinated_reference,
    invalid_question_reference,
    unresolvable_reference,
    incomplete_coverage,
    schema_violation,
    unknown_schema,
    duplicate_schema,
    provider_unreachable,
    timeout,
    busy,
    unknown_op,
    unknown_version,
    missing_summary,
    stale_stage,
    corrupt_log,
    storage_failure,
    file_error,
    out_of_bounds,
    port_in_use,
    storage_unwritable,
    internal,
};

std::string_view error_code_name(ErrorCode code);
ErrorCode error_code_from_name(std::string_view name);

/// Exception carried by every engine operation. `detail` holds structured
/// diagnostics (offending chunks, raw LLM attempts, the failing seq, ...).
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, nlohmann::json detail = nullptr)
        : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    const nlohmann::json& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    nlohmann::json detail_;
};

} // namespace qda
