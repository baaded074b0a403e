#pragma once

#include "qda/audit.hpp"
#include "qda/model.hpp"

#include <optional>
#include <vector>

namespace qda {

/// State transition for one audit event. The live engine applies every
/// event through this function before committing it, and replay applies
/// the same function to the stored log, so both paths agree by
/// construction. Returns a result document for edit events (assigned ids,
/// tombstones); null otherwise.
json apply_event(AnalysisSession& session, const audit::AuditEvent& event);

/// Rebuilds a session from its first events (all of them when `up_to_seq`
/// is empty). Throws Error(corrupt_log) if an edit result recorded in the
/// log disagrees with the recomputed one.
AnalysisSession replay_events(const std::vector<audit::AuditEvent>& events,
                              std::optional<std::uint64_t> up_to_seq = std::nullopt);

} // namespace qda
