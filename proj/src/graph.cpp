#include "kgstruct/graph.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kgstruct {

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::int32_t Vocabulary::intern(std::string_view label) {
    auto it = ids_.find(std::string(label));
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(labels_.size());
    labels_.emplace_back(label);
    ids_.emplace(labels_.back(), id);
    return id;
}

std::int32_t Vocabulary::find(std::string_view label) const {
    auto it = ids_.find(std::string(label));
    return it == ids_.end() ? -1 : it->second;
}

Vocabulary Vocabulary::numbered(std::size_t n, std::string_view prefix) {
    Vocabulary v;
    for (std::size_t i = 0; i < n; ++i) v.intern(std::string(prefix) + std::to_string(i));
    return v;
}

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations, SplitTriples splits)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
    const auto n = num_entities();
    if (n >= (1u << 21) || num_relations() >= (1u << 21))
        throw std::length_error("KnowledgeGraph: vocabulary exceeds 2^21 entries");

    for (int s = 0; s < 3; ++s) {
        std::unordered_set<std::uint64_t> seen;
        auto& out = splits_[s];
        out.reserve(splits[s].size());
        for (const auto& t : splits[s]) {
            if (!valid_entity(t.head) || !valid_entity(t.tail) || t.relation < 0 ||
                static_cast<std::size_t>(t.relation) >= num_relations())
                throw std::domain_error("KnowledgeGraph: triple references an unknown id");
            if (!seen.insert(triple_key(t)).second) {
                ++duplicates_dropped_;
                continue;
            }
            out.push_back(t);
            known_.insert(triple_key(t));
        }
    }

    // CSR incidence lists over the union of splits.
    std::vector<std::size_t> counts(n + 1, 0);
    for (const auto& split : splits_)
        for (const auto& t : split) {
            ++counts[static_cast<std::size_t>(t.head)];
            ++counts[static_cast<std::size_t>(t.tail)];
        }
    incidence_offsets_.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) incidence_offsets_[v + 1] = incidence_offsets_[v] + counts[v];
    incidence_.resize(incidence_offsets_[n]);
    std::vector<std::size_t> cursor(incidence_offsets_.begin(), incidence_offsets_.end() - 1);
    for (const auto& split : splits_)
        for (const auto& t : split) {
            incidence_[cursor[static_cast<std::size_t>(t.head)]++] = {t.tail, t.relation, true};
            incidence_[cursor[static_cast<std::size_t>(t.tail)]++] = {t.head, t.relation, false};
        }

    neighbor_offsets_.assign(n + 1, 0);
    std::vector<EntityId> scratch;
    for (std::size_t v = 0; v < n; ++v) {
        scratch.clear();
        for (std::size_t i = incidence_offsets_[v]; i < incidence_offsets_[v + 1]; ++i)
            if (incidence_[i].neighbor != static_cast<EntityId>(v)) scratch.push_back(incidence_[i].neighbor);
        std::sort(scratch.begin(), scratch.end());
        scratch.erase(std::unique(scratch.begin(), scratch.end()), scratch.end());
        neighbor_list_.insert(neighbor_list_.end(), scratch.begin(), scratch.end());
        neighbor_offsets_[v + 1] = neighbor_list_.size();
    }
}

std::size_t KnowledgeGraph::num_triples() const {
    return splits_[0].size() + splits_[1].size() + splits_[2].size();
}

std::span<const Incidence> KnowledgeGraph::incidences(EntityId v) const {
    if (!valid_entity(v)) throw std::domain_error("incidences: invalid entity id");
    const auto i = static_cast<std::size_t>(v);
    return {incidence_.data() + incidence_offsets_[i], incidence_offsets_[i + 1] - incidence_offsets_[i]};
}

std::span<const EntityId> KnowledgeGraph::neighbors(EntityId v) const {
    if (!valid_entity(v)) throw std::domain_error("neighbors: invalid entity id");
    const auto i = static_cast<std::size_t>(v);
    return {neighbor_list_.data() + neighbor_offsets_[i], neighbor_offsets_[i + 1] - neighbor_offsets_[i]};
}

std::size_t KnowledgeGraph::degree(EntityId v) const {
    if (!valid_entity(v)) throw std::domain_error("degree: invalid entity id " + std::to_string(v));
    return neighbors(v).size();
}

namespace {

void read_split_file(const std::filesystem::path& path, Vocabulary& entities, Vocabulary& relations,
                     std::vector<Triple>& out) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string_view, 3> fields;
        std::string_view rest(line);
        int nfields = 0;
        while (true) {
            const auto tab = rest.find('\t');
            if (nfields == 3) {
                nfields = 4;
                break;
            }
            fields[static_cast<std::size_t>(nfields++)] = rest.substr(0, tab);
            if (tab == std::string_view::npos) break;
            rest.remove_prefix(tab + 1);
        }
        if (nfields != 3)
            throw ParseError(path.string(), lineno, "expected 3 tab-separated fields: '" + line + "'");
        for (auto f : fields)
            if (f.empty()) throw ParseError(path.string(), lineno, "empty field: '" + line + "'");
        const EntityId h = entities.intern(fields[0]);
        const RelationId r = relations.intern(fields[1]);
        const EntityId t = entities.intern(fields[2]);
        out.push_back({h, r, t});
    }
}

}  // namespace

KnowledgeGraph load_graph(const std::filesystem::path& train, const std::filesystem::path& valid,
                          const std::filesystem::path& test, LoadReport* report) {
    Vocabulary entities, relations;
    SplitTriples splits;
    read_split_file(train, entities, relations, splits[0]);
    const std::size_t train_entities = entities.size();
    const std::size_t train_relations = relations.size();
    read_split_file(valid, entities, relations, splits[1]);
    read_split_file(test, entities, relations, splits[2]);
    KnowledgeGraph g(std::move(entities), std::move(relations), std::move(splits));
    if (report) {
        *report = make_load_report(g);
        report->unseen_in_train_entities = g.num_entities() - train_entities;
        report->unseen_in_train_relations = g.num_relations() - train_relations;
    }
    return g;
}

LoadReport make_load_report(const KnowledgeGraph& g) {
    LoadReport r;
    r.entities = g.num_entities();
    r.relations = g.num_relations();
    for (int s = 0; s < 3; ++s) r.triples[s] = g.splits()[s].size();
    std::vector<char> ent(g.num_entities(), 0), rel(g.num_relations(), 0);
    for (const auto& t : g.split(Split::train)) {
        ent[t.head] = ent[t.tail] = 1;
        rel[t.relation] = 1;
    }
    r.unseen_in_train_entities = static_cast<std::size_t>(std::count(ent.begin(), ent.end(), 0));
    r.unseen_in_train_relations = static_cast<std::size_t>(std::count(rel.begin(), rel.end(), 0));
    r.duplicates_dropped = g.duplicates_dropped();
    return r;
}

std::string load_report_json(const LoadReport& r) {
    nlohmann::ordered_json j;
    j["entities"] = r.entities;
    j["relations"] = r.relations;
    j["triples_per_split"] = {{"train", r.triples[0]}, {"valid", r.triples[1]}, {"test", r.triples[2]}};
    j["unseen_in_train"] = {{"entities", r.unseen_in_train_entities},
                            {"relations", r.unseen_in_train_relations}};
    j["duplicates_dropped"] = r.duplicates_dropped;
    return j.dump(2);
}

void write_split(const KnowledgeGraph& g, Split s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& t : g.split(s))
        out << g.entities().label(t.head) << '\t' << g.relations().label(t.relation) << '\t'
            << g.entities().label(t.tail) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_splits(const KnowledgeGraph& g, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (auto s : kAllSplits) write_split(g, s, dir / (std::string(split_name(s)) + ".txt"));
}

SubgraphSample induce_subgraph(const KnowledgeGraph& g, std::span<const EntityId> nodes) {
    if (nodes.empty()) throw std::domain_error("induce_subgraph: empty node set");
    SubgraphSample sample;
    std::vector<char> member(g.num_entities(), 0);
    for (auto v : nodes) {
        if (!g.valid_entity(v)) throw std::domain_error("induce_subgraph: invalid entity id");
        member[static_cast<std::size_t>(v)] = 1;
    }
    for (std::size_t v = 0; v < member.size(); ++v)
        if (member[v]) sample.nodes.push_back(static_cast<EntityId>(v));
    for (int s = 0; s < 3; ++s)
        for (const auto& t : g.splits()[s])
            if (member[t.head] && member[t.tail]) sample.splits[s].push_back(t);
    sample.meta.connected = is_connected(sample.nodes, sample.splits);
    sample.meta.achieved_ratio = static_cast<double>(sample.nodes.size()) / static_cast<double>(g.num_entities());
    return sample;
}

bool is_connected(std::span<const EntityId> nodes, const SplitTriples& triples) {
    if (nodes.empty()) return false;
    std::unordered_map<EntityId, std::size_t> index;
    for (std::size_t i = 0; i < nodes.size(); ++i) index.emplace(nodes[i], i);
    std::vector<std::size_t> parent(nodes.size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::size_t components = nodes.size();
    for (const auto& split : triples)
        for (const auto& t : split) {
            auto a = index.find(t.head), b = index.find(t.tail);
            if (a == index.end() || b == index.end()) continue;
            auto ra = find(a->second), rb = find(b->second);
            if (ra != rb) {
                parent[ra] = rb;
                --components;
            }
        }
    return components == 1;
}

KnowledgeGraph materialize(const KnowledgeGraph& parent, const SubgraphSample& sample) {
    Vocabulary entities, relations;
    std::unordered_map<EntityId, EntityId> remap;
    for (auto v : sample.nodes) remap.emplace(v, entities.intern(parent.entities().label(v)));
    std::unordered_map<RelationId, RelationId> rel_remap;
    SplitTriples splits;
    for (int s = 0; s < 3; ++s)
        for (const auto& t : sample.splits[s]) {
            auto [it, fresh] = rel_remap.try_emplace(t.relation, 0);
            if (fresh) it->second = relations.intern(parent.relations().label(t.relation));
            splits[s].push_back({remap.at(t.head), it->second, remap.at(t.tail)});
        }
    return KnowledgeGraph(std::move(entities), std::move(relations), std::move(splits));
}

}  // namespace kgstruct
