#pragma once

#include "qda/model.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace qda {

namespace mutation {

struct Rename {
    std::string name;
};

/// Attach more source text to a code. `text` must occur verbatim in the
/// document; `start_offset` pins a specific occurrence.
struct AddChunk {
    std::string document_id;
    std::string text;
    std::optional<std::size_t> start_offset;
};

struct RemoveChunk {
    UnitId chunk_id;
};

struct AddUnit {
    std::string name;
    std::optional<UnitId> parent_id;
    std::string description;
};

struct DeleteUnit {
    bool cascade = false;
};

/// Move a code under another subtheme (or a subtheme under another theme);
/// an empty parent moves the unit into the ungrouped bucket.
struct ReassignParent {
    std::optional<UnitId> parent_id;
};

} // namespace mutation

using Mutation = std::variant<mutation::Rename, mutation::AddChunk, mutation::RemoveChunk,
                              mutation::AddUnit, mutation::DeleteUnit, mutation::ReassignParent>;

json mutation_to_json(const Mutation& m);
Mutation mutation_from_json(const json& j);

/// Allocates the next engine-generated id, e.g. "c12" for prefix 'c'.
UnitId allocate_id(AnalysisSession& session, char prefix);

/// Rebuilds child→parent pointers and the ungrouped buckets from the
/// parents' ordered child lists.
void relink(AnalysisSession& session);

/// Marks every committed stage after `edited` as stale.
void mark_downstream_stale(AnalysisSession& session, Stage edited);

/// Drops references to units that no longer exist from nudges and findings.
void prune_dangling_references(AnalysisSession& session);

/// Full-traversal check of the hierarchy partition, bidirectional links,
/// chunk exclusivity and the verbatim property. Empty result means valid.
std::vector<std::string> check_hierarchy(const AnalysisSession& session);

/// Validates and applies one analyst edit. Deterministic in (session,
/// stage, unit_id, mutation), so replay reproduces it exactly. Returns a
/// result document (assigned ids, tombstones) for the audit payload.
json apply_edit(AnalysisSession& session, Stage stage, const UnitId& unit_id, const Mutation& m);

} // namespace qda
