#include "qda/hierarchy.hpp"

#include "qda/error.hpp"
#include "qda/validation.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace qda {

namespace {

template <typename... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <typename... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void erase_value(std::vector<UnitId>& ids, const UnitId& id) {
    ids.erase(std::remove(ids.begin(), ids.end(), id), ids.end());
}

[[noreturn]] void unknown_unit(Stage stage, const UnitId& id) {
    throw Error(ErrorCode::unknown_unit,
                "no " + std::string(stage_name(stage)) + " unit with id '" + id + "'",
                json{{"stage", stage_name(stage)}, {"unit_id", id}});
}

void require_name(const std::string& name) {
    if (name.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorCode::empty_text, "unit name must not be empty");
    }
}

void mark_edited(AnalysisSession& session, Stage stage) {
    auto& st = session.stage(stage);
    if (st.nudge) st.nudge_stale = true;
    mark_downstream_stale(session, stage);
}

void recompute_coverage(AnalysisSession& session) {
    session.coverage_report = validation::compute_coverage(session);
}

json apply_rename(AnalysisSession& s, Stage stage, const UnitId& id, const mutation::Rename& m) {
    require_name(m.name);
    switch (stage) {
    case Stage::codes: {
        auto* c = s.find_code(id);
        if (!c) unknown_unit(stage, id);
        c->name = m.name;
        c->provenance = Provenance::user_edited;
        break;
    }
    case Stage::subthemes: {
        auto* st = s.find_subtheme(id);
        if (!st) unknown_unit(stage, id);
        st->name = m.name;
        st->provenance = Provenance::user_edited;
        break;
    }
    case Stage::themes: {
        auto* t = s.find_theme(id);
        if (!t) unknown_unit(stage, id);
        t->name = m.name;
        t->provenance = Provenance::user_edited;
        break;
    }
    case Stage::summary:
        throw Error(ErrorCode::invalid_argument, "summary findings are not editable units");
    }
    mark_edited(s, stage);
    return json::object();
}

json apply_add_chunk(AnalysisSession& s, Stage stage, const UnitId& id, const mutation::AddChunk& m) {
    if (stage != Stage::codes) throw Error(ErrorCode::invalid_argument, "chunks belong to codes");
    auto* code = s.find_code(id);
    if (!code) unknown_unit(stage, id);
    const auto* doc = s.find_document(m.document_id);
    if (!doc) {
        throw Error(ErrorCode::chunk_not_verbatim, "unknown document '" + m.document_id + "'",
                    json{{"document_id", m.document_id}});
    }
    auto candidates = validation::locate_verbatim(doc->body, m.text);
    if (m.start_offset) {
        std::erase_if(candidates, [&](const Span& sp) { return sp.start != *m.start_offset; });
    }
    if (candidates.empty()) {
        throw Error(ErrorCode::chunk_not_verbatim,
                    "chunk text does not occur verbatim in document '" + doc->id + "'",
                    json{{"document_id", doc->id}, {"text", m.text}});
    }
    std::optional<Span> chosen;
    for (const auto& span : candidates) {
        bool clash = std::any_of(s.chunks.begin(), s.chunks.end(), [&](const ChunkAssignment& c) {
            return c.document_id == doc->id &&
                   validation::spans_overlap(span, Span{c.start_offset, c.end_offset});
        });
        if (!clash) {
            chosen = span;
            break;
        }
    }
    if (!chosen) {
        throw Error(ErrorCode::chunk_overlap, "chunk text overlaps an already coded excerpt",
                    json{{"document_id", doc->id}, {"text", m.text}});
    }
    ChunkAssignment chunk;
    chunk.chunk_id = allocate_id(s, 'k');
    chunk.document_id = doc->id;
    chunk.start_offset = chosen->start;
    chunk.end_offset = chosen->end;
    chunk.text = doc->body.substr(chosen->start, chosen->end - chosen->start);
    chunk.code_id = id;
    code = s.find_code(id);
    code->chunk_ids.push_back(chunk.chunk_id);
    code->provenance = Provenance::user_edited;
    json result{{"assigned_id", chunk.chunk_id}, {"chunk", chunk}};
    s.chunks.push_back(std::move(chunk));
    recompute_coverage(s);
    mark_edited(s, stage);
    return result;
}

json apply_remove_chunk(AnalysisSession& s, Stage stage, const UnitId& id,
                        const mutation::RemoveChunk& m) {
    if (stage != Stage::codes) throw Error(ErrorCode::invalid_argument, "chunks belong to codes");
    auto* code = s.find_code(id);
    if (!code) unknown_unit(stage, id);
    auto it = std::find(code->chunk_ids.begin(), code->chunk_ids.end(), m.chunk_id);
    if (it == code->chunk_ids.end()) {
        throw Error(ErrorCode::unknown_unit, "chunk '" + m.chunk_id + "' is not part of code '" + id + "'",
                    json{{"chunk_id", m.chunk_id}, {"code_id", id}});
    }
    code->chunk_ids.erase(it);
    code->provenance = Provenance::user_edited;
    json removed = *s.find_chunk(m.chunk_id);
    std::erase_if(s.chunks, [&](const ChunkAssignment& c) { return c.chunk_id == m.chunk_id; });
    recompute_coverage(s);
    mark_edited(s, stage);
    return json{{"removed_chunk", removed}};
}

json apply_add_unit(AnalysisSession& s, Stage stage, const mutation::AddUnit& m) {
    require_name(m.name);
    UnitId new_id;
    switch (stage) {
    case Stage::codes: {
        if (m.parent_id && !s.find_subtheme(*m.parent_id)) unknown_unit(Stage::subthemes, *m.parent_id);
        OpenCode code;
        code.id = new_id = allocate_id(s, 'c');
        code.name = m.name;
        code.provenance = Provenance::user_edited;
        s.codes.push_back(code);
        if (m.parent_id) {
            auto* parent = s.find_subtheme(*m.parent_id);
            parent->code_ids.push_back(new_id);
            parent->provenance = Provenance::user_edited;
        }
        break;
    }
    case Stage::subthemes: {
        if (m.parent_id && !s.find_theme(*m.parent_id)) unknown_unit(Stage::themes, *m.parent_id);
        SubTheme st;
        st.id = new_id = allocate_id(s, 's');
        st.name = m.name;
        st.provenance = Provenance::user_edited;
        s.subthemes.push_back(st);
        if (m.parent_id) {
            auto* parent = s.find_theme(*m.parent_id);
            parent->subtheme_ids.push_back(new_id);
            parent->provenance = Provenance::user_edited;
        }
        break;
    }
    case Stage::themes: {
        if (m.parent_id) throw Error(ErrorCode::invalid_argument, "themes have no parent");
        Theme t;
        t.id = new_id = allocate_id(s, 't');
        t.name = m.name;
        t.description = m.description;
        t.provenance = Provenance::user_edited;
        s.themes.push_back(t);
        break;
    }
    case Stage::summary:
        throw Error(ErrorCode::invalid_argument, "summary findings are not editable units");
    }
    relink(s);
    mark_edited(s, stage);
    if (m.parent_id) mark_downstream_stale(s, static_cast<Stage>(stage_index(stage) + 1));
    return json{{"assigned_id", new_id}};
}

json apply_delete_unit(AnalysisSession& s, Stage stage, const UnitId& id, const mutation::DeleteUnit& m) {
    json tombstone;
    switch (stage) {
    case Stage::codes: {
        const auto* code = s.find_code(id);
        if (!code) unknown_unit(stage, id);
        if (!code->chunk_ids.empty() && !m.cascade) {
            throw Error(ErrorCode::has_children,
                        "code '" + id + "' still holds chunks; pass cascade to delete them",
                        json{{"children", code->chunk_ids}});
        }
        json removed_chunks = json::array();
        for (const auto& cid : code->chunk_ids) removed_chunks.push_back(*s.find_chunk(cid));
        tombstone = json{{"unit", *code}, {"chunks", removed_chunks}};
        std::set<UnitId> gone(code->chunk_ids.begin(), code->chunk_ids.end());
        std::erase_if(s.chunks, [&](const ChunkAssignment& c) { return gone.count(c.chunk_id) > 0; });
        for (auto& st : s.subthemes) {
            if (std::find(st.code_ids.begin(), st.code_ids.end(), id) != st.code_ids.end()) {
                erase_value(st.code_ids, id);
                st.provenance = Provenance::user_edited;
            }
        }
        std::erase_if(s.codes, [&](const OpenCode& c) { return c.id == id; });
        recompute_coverage(s);
        break;
    }
    case Stage::subthemes: {
        const auto* st = s.find_subtheme(id);
        if (!st) unknown_unit(stage, id);
        if (!st->code_ids.empty() && !m.cascade) {
            throw Error(ErrorCode::has_children,
                        "subtheme '" + id + "' still groups codes; pass cascade to ungroup them",
                        json{{"children", st->code_ids}});
        }
        tombstone = json{{"unit", *st}};
        for (auto& t : s.themes) {
            if (std::find(t.subtheme_ids.begin(), t.subtheme_ids.end(), id) != t.subtheme_ids.end()) {
                erase_value(t.subtheme_ids, id);
                t.provenance = Provenance::user_edited;
            }
        }
        std::erase_if(s.subthemes, [&](const SubTheme& x) { return x.id == id; });
        break;
    }
    case Stage::themes: {
        const auto* t = s.find_theme(id);
        if (!t) unknown_unit(stage, id);
        if (!t->subtheme_ids.empty() && !m.cascade) {
            throw Error(ErrorCode::has_children,
                        "theme '" + id + "' still groups subthemes; pass cascade to ungroup them",
                        json{{"children", t->subtheme_ids}});
        }
        tombstone = json{{"unit", *t}};
        std::erase_if(s.themes, [&](const Theme& x) { return x.id == id; });
        break;
    }
    case Stage::summary:
        throw Error(ErrorCode::invalid_argument, "summary findings are not editable units");
    }
    relink(s);
    prune_dangling_references(s);
    mark_edited(s, stage);
    return json{{"tombstone", tombstone}};
}

json apply_reassign(AnalysisSession& s, Stage stage, const UnitId& id, const mutation::ReassignParent& m) {
    if (stage == Stage::codes) {
        auto* code = s.find_code(id);
        if (!code) unknown_unit(stage, id);
        if (m.parent_id && !s.find_subtheme(*m.parent_id)) unknown_unit(Stage::subthemes, *m.parent_id);
        code->provenance = Provenance::user_edited;
        for (auto& st : s.subthemes) {
            if (std::find(st.code_ids.begin(), st.code_ids.end(), id) != st.code_ids.end()) {
                erase_value(st.code_ids, id);
                st.provenance = Provenance::user_edited;
            }
        }
        if (m.parent_id) {
            auto* parent = s.find_subtheme(*m.parent_id);
            parent->code_ids.push_back(id);
            parent->provenance = Provenance::user_edited;
        }
    } else if (stage == Stage::subthemes) {
        auto* st = s.find_subtheme(id);
        if (!st) unknown_unit(stage, id);
        if (m.parent_id && !s.find_theme(*m.parent_id)) unknown_unit(Stage::themes, *m.parent_id);
        st->provenance = Provenance::user_edited;
        for (auto& t : s.themes) {
            if (std::find(t.subtheme_ids.begin(), t.subtheme_ids.end(), id) != t.subtheme_ids.end()) {
                erase_value(t.subtheme_ids, id);
                t.provenance = Provenance::user_edited;
            }
        }
        if (m.parent_id) {
            auto* parent = s.find_theme(*m.parent_id);
            parent->subtheme_ids.push_back(id);
            parent->provenance = Provenance::user_edited;
        }
    } else {
        throw Error(ErrorCode::invalid_argument,
                    std::string(stage_name(stage)) + " units have no parent to reassign");
    }
    relink(s);
    // Regrouping changes the parent stage's output.
    Stage parent_stage = static_cast<Stage>(stage_index(stage) + 1);
    if (s.stage(parent_stage).nudge) s.stage(parent_stage).nudge_stale = true;
    mark_downstream_stale(s, parent_stage);
    return json::object();
}

} // namespace

json mutation_to_json(const Mutation& m) {
    return std::visit(
        overloaded{
            [](const mutation::Rename& r) { return json{{"type", "rename"}, {"name", r.name}}; },
            [](const mutation::AddChunk& a) {
                json j{{"type", "add_chunk"}, {"document_id", a.document_id}, {"text", a.text}};
                if (a.start_offset) j["start_offset"] = *a.start_offset;
                return j;
            },
            [](const mutation::RemoveChunk& r) {
                return json{{"type", "remove_chunk"}, {"chunk_id", r.chunk_id}};
            },
            [](const mutation::AddUnit& a) {
                json j{{"type", "add_unit"}, {"name", a.name}};
                if (a.parent_id) j["parent_id"] = *a.parent_id;
                if (!a.description.empty()) j["description"] = a.description;
                return j;
            },
            [](const mutation::DeleteUnit& d) { return json{{"type", "delete_unit"}, {"cascade", d.cascade}}; },
            [](const mutation::ReassignParent& r) {
                return json{{"type", "reassign_parent"},
                            {"parent_id", r.parent_id ? json(*r.parent_id) : json(nullptr)}};
            },
        },
        m);
}

Mutation mutation_from_json(const json& j) {
    try {
        const auto type = j.at("type").get<std::string>();
        auto opt_string = [&](const char* key) -> std::optional<std::string> {
            auto it = j.find(key);
            if (it == j.end() || it->is_null()) return std::nullopt;
            return it->get<std::string>();
        };
        if (type == "rename") return mutation::Rename{j.at("name").get<std::string>()};
        if (type == "add_chunk") {
            mutation::AddChunk a{j.at("document_id").get<std::string>(), j.at("text").get<std::string>(), {}};
            if (j.contains("start_offset") && !j["start_offset"].is_null()) {
                a.start_offset = j["start_offset"].get<std::size_t>();
            }
            return a;
        }
        if (type == "remove_chunk") return mutation::RemoveChunk{j.at("chunk_id").get<std::string>()};
        if (type == "add_unit") {
            return mutation::AddUnit{j.at("name").get<std::string>(), opt_string("parent_id"),
                                     opt_string("description").value_or("")};
        }
        if (type == "delete_unit") return mutation::DeleteUnit{j.value("cascade", false)};
        if (type == "reassign_parent") return mutation::ReassignParent{opt_string("parent_id")};
        throw Error(ErrorCode::invalid_argument, "unknown mutation type '" + type + "'");
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("malformed mutation: ") + e.what());
    }
}

UnitId allocate_id(AnalysisSession& session, char prefix) {
    return std::string(1, prefix) + std::to_string(++session.id_counter);
}

void relink(AnalysisSession& s) {
    std::map<UnitId, UnitId> code_parent;
    std::map<UnitId, UnitId> subtheme_parent;
    for (const auto& st : s.subthemes) {
        for (const auto& cid : st.code_ids) code_parent.emplace(cid, st.id);
    }
    for (const auto& t : s.themes) {
        for (const auto& sid : t.subtheme_ids) subtheme_parent.emplace(sid, t.id);
    }
    s.ungrouped_codes.clear();
    for (auto& c : s.codes) {
        auto it = code_parent.find(c.id);
        c.subtheme_id = it == code_parent.end() ? std::nullopt : std::optional<UnitId>(it->second);
        if (!c.subtheme_id) s.ungrouped_codes.push_back(c.id);
        for (const auto& kid : c.chunk_ids) {
            if (auto* chunk = s.find_chunk(kid)) chunk->code_id = c.id;
        }
    }
    s.ungrouped_subthemes.clear();
    for (auto& st : s.subthemes) {
        auto it = subtheme_parent.find(st.id);
        st.theme_id = it == subtheme_parent.end() ? std::nullopt : std::optional<UnitId>(it->second);
        if (!st.theme_id) s.ungrouped_subthemes.push_back(st.id);
    }
}

void mark_downstream_stale(AnalysisSession& session, Stage edited) {
    for (Stage s : all_stages) {
        if (stage_index(s) > stage_index(edited) && session.stage(s).committed) {
            session.stage(s).stale = true;
        }
    }
}

void prune_dangling_references(AnalysisSession& session) {
    for (Stage st : {Stage::codes, Stage::subthemes, Stage::themes}) {
        auto& state = session.stage(st);
        if (!state.nudge) continue;
        auto before = state.nudge->self_critique.size();
        std::erase_if(state.nudge->self_critique,
                      [&](const CritiqueEntry& e) { return !session.has_unit(e.unit_id); });
        if (state.nudge->self_critique.size() != before) state.nudge_stale = true;
    }
    if (session.key_findings) {
        for (auto& f : session.key_findings->findings) {
            std::erase_if(f.supporting_unit_ids, [&](const UnitId& id) { return !session.has_unit(id); });
        }
        std::erase_if(session.key_findings->themes_without_findings,
                      [&](const UnitId& id) { return !session.find_theme(id); });
    }
}

std::vector<std::string> check_hierarchy(const AnalysisSession& s) {
    std::vector<std::string> problems;
    auto problem = [&](std::string p) { problems.push_back(std::move(p)); };

    std::map<UnitId, int> chunk_owners;
    for (const auto& c : s.codes) {
        if (c.provenance == Provenance::machine_generated && c.chunk_ids.empty()) {
            problem("machine-generated code " + c.id + " has no chunks");
        }
        for (const auto& kid : c.chunk_ids) {
            ++chunk_owners[kid];
            const auto* chunk = s.find_chunk(kid);
            if (!chunk) {
                problem("code " + c.id + " references missing chunk " + kid);
            } else if (chunk->code_id != c.id) {
                problem("chunk " + kid + " points to " + chunk->code_id + " but is listed by " + c.id);
            }
        }
    }
    std::map<std::string, std::vector<Span>> spans;
    for (const auto& chunk : s.chunks) {
        if (chunk_owners[chunk.chunk_id] != 1) {
            problem("chunk " + chunk.chunk_id + " belongs to " + std::to_string(chunk_owners[chunk.chunk_id]) +
                    " codes");
        }
        const auto* doc = s.find_document(chunk.document_id);
        if (!doc) {
            problem("chunk " + chunk.chunk_id + " references missing document " + chunk.document_id);
            continue;
        }
        if (chunk.start_offset >= chunk.end_offset || chunk.end_offset > doc->body.size()) {
            problem("chunk " + chunk.chunk_id + " has out-of-bounds offsets");
            continue;
        }
        if (!validation::verify_verbatim(*doc, chunk).ok) {
            problem("chunk " + chunk.chunk_id + " is not verbatim");
        }
        for (const auto& other : spans[chunk.document_id]) {
            if (validation::spans_overlap(other, Span{chunk.start_offset, chunk.end_offset})) {
                problem("chunk " + chunk.chunk_id + " overlaps another chunk");
            }
        }
        spans[chunk.document_id].push_back(Span{chunk.start_offset, chunk.end_offset});
    }

    std::map<UnitId, int> code_parents;
    for (const auto& st : s.subthemes) {
        for (const auto& cid : st.code_ids) {
            ++code_parents[cid];
            const auto* code = s.find_code(cid);
            if (!code) {
                problem("subtheme " + st.id + " references missing code " + cid);
            } else if (code->subtheme_id != st.id) {
                problem("code " + cid + " does not point back to subtheme " + st.id);
            }
        }
    }
    std::set<UnitId> ungrouped_codes(s.ungrouped_codes.begin(), s.ungrouped_codes.end());
    for (const auto& c : s.codes) {
        int parents = code_parents[c.id];
        bool ungrouped = ungrouped_codes.count(c.id) > 0;
        if (parents > 1) problem("code " + c.id + " is in " + std::to_string(parents) + " subthemes");
        if ((parents == 0) != ungrouped) problem("code " + c.id + " is misplaced relative to the ungrouped bucket");
        if (parents == 0 && c.subtheme_id) problem("code " + c.id + " points to a subtheme that does not list it");
    }
    if (ungrouped_codes.size() != s.ungrouped_codes.size()) problem("ungrouped code bucket has duplicates");
    for (const auto& id : s.ungrouped_codes) {
        if (!s.find_code(id)) problem("ungrouped bucket references missing code " + id);
    }

    std::map<UnitId, int> subtheme_parents;
    for (const auto& t : s.themes) {
        for (const auto& sid : t.subtheme_ids) {
            ++subtheme_parents[sid];
            const auto* st = s.find_subtheme(sid);
            if (!st) {
                problem("theme " + t.id + " references missing subtheme " + sid);
            } else if (st->theme_id != t.id) {
                problem("subtheme " + sid + " does not point back to theme " + t.id);
            }
        }
        for (const auto& q : t.research_question_ids) {
            if (!s.find_question(q)) problem("theme " + t.id + " references unknown question " + q);
        }
    }
    std::set<UnitId> ungrouped_subthemes(s.ungrouped_subthemes.begin(), s.ungrouped_subthemes.end());
    for (const auto& st : s.subthemes) {
        int parents = subtheme_parents[st.id];
        bool ungrouped = ungrouped_subthemes.count(st.id) > 0;
        if (parents > 1) problem("subtheme " + st.id + " is in " + std::to_string(parents) + " themes");
        if ((parents == 0) != ungrouped) {
            problem("subtheme " + st.id + " is misplaced relative to the ungrouped bucket");
        }
        if (parents == 0 && st.theme_id) problem("subtheme " + st.id + " points to a theme that does not list it");
    }
    if (ungrouped_subthemes.size() != s.ungrouped_subthemes.size()) {
        problem("ungrouped subtheme bucket has duplicates");
    }
    return problems;
}

json apply_edit(AnalysisSession& session, Stage stage, const UnitId& unit_id, const Mutation& m) {
    if (stage == Stage::summary) {
        throw Error(ErrorCode::invalid_argument, "summary findings are not editable units");
    }
    if (!session.stage(stage).committed) {
        throw Error(ErrorCode::precondition_failed,
                    "stage '" + std::string(stage_name(stage)) + "' has not been generated yet");
    }
    return std::visit(
        overloaded{
            [&](const mutation::Rename& r) { return apply_rename(session, stage, unit_id, r); },
            [&](const mutation::AddChunk& a) { return apply_add_chunk(session, stage, unit_id, a); },
            [&](const mutation::RemoveChunk& r) { return apply_remove_chunk(session, stage, unit_id, r); },
            [&](const mutation::AddUnit& a) { return apply_add_unit(session, stage, a); },
            [&](const mutation::DeleteUnit& d) { return apply_delete_unit(session, stage, unit_id, d); },
            [&](const mutation::ReassignParent& r) { return apply_reassign(session, stage, unit_id, r); },
        },
        m);
}

} // namespace qda
