#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace kgstruct {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;

    friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Packs a triple into one 64-bit key (21 bits per field).
inline std::uint64_t triple_key(const Triple& t) {
    return (static_cast<std::uint64_t>(t.head) << 42) |
           (static_cast<std::uint64_t>(t.relation) << 21) |
           static_cast<std::uint64_t>(t.tail);
}

enum class Split : int { train = 0, valid = 1, test = 2 };
inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::valid, Split::test};
std::string_view split_name(Split s);

using SplitTriples = std::array<std::vector<Triple>, 3>;

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Bidirectional label <-> dense id map; ids follow insertion order.
class Vocabulary {
public:
    std::int32_t intern(std::string_view label);
    std::int32_t find(std::string_view label) const;  // -1 when absent
    const std::string& label(std::int32_t id) const { return labels_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return labels_.size(); }
    const std::vector<std::string>& labels() const { return labels_; }

    static Vocabulary numbered(std::size_t n, std::string_view prefix);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.labels_ == b.labels_; }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

struct Incidence {
    EntityId neighbor;
    RelationId relation;
    bool outgoing;
};

struct LoadReport {
    std::size_t entities = 0;
    std::size_t relations = 0;
    std::array<std::size_t, 3> triples{};
    std::size_t unseen_in_train_entities = 0;
    std::size_t unseen_in_train_relations = 0;
    std::size_t duplicates_dropped = 0;
};

/// Directed multi-relational graph with train/valid/test splits. Immutable
/// after construction.
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;
    /// Validates ids and drops duplicate triples within a split.
    KnowledgeGraph(Vocabulary entities, Vocabulary relations, SplitTriples splits);

    std::size_t num_entities() const { return entities_.size(); }
    std::size_t num_relations() const { return relations_.size(); }
    const Vocabulary& entities() const { return entities_; }
    const Vocabulary& relations() const { return relations_; }

    std::span<const Triple> split(Split s) const { return splits_[static_cast<int>(s)]; }
    const SplitTriples& splits() const { return splits_; }
    std::size_t num_triples() const;

    std::span<const Incidence> incidences(EntityId v) const;
    /// Distinct neighbours of v in either direction, ascending, without v.
    std::span<const EntityId> neighbors(EntityId v) const;
    std::size_t degree(EntityId v) const;

    bool contains(const Triple& t) const { return known_.contains(triple_key(t)); }
    bool valid_entity(EntityId v) const { return v >= 0 && static_cast<std::size_t>(v) < num_entities(); }

    std::size_t duplicates_dropped() const { return duplicates_dropped_; }

private:
    Vocabulary entities_;
    Vocabulary relations_;
    SplitTriples splits_;
    std::vector<std::size_t> incidence_offsets_;
    std::vector<Incidence> incidence_;
    std::vector<std::size_t> neighbor_offsets_;
    std::vector<EntityId> neighbor_list_;
    std::unordered_set<std::uint64_t> known_;
    std::size_t duplicates_dropped_ = 0;
};

/// Reads tab-separated head/relation/tail files. Vocabulary ids follow first
/// appearance over train, then valid, then test.
KnowledgeGraph load_graph(const std::filesystem::path& train,
                          const std::filesystem::path& valid,
                          const std::filesystem::path& test,
                          LoadReport* report = nullptr);

LoadReport make_load_report(const KnowledgeGraph& g);
std::string load_report_json(const LoadReport& r);

void write_split(const KnowledgeGraph& g, Split s, const std::filesystem::path& path);
void write_splits(const KnowledgeGraph& g, const std::filesystem::path& dir);

struct SampleMeta {
    double requested_ratio = 1.0;
    double achieved_ratio = 1.0;
    EntityId start_node = -1;
    std::uint64_t seed = 0;
    bool connected = false;
    bool exhausted = false;   // BFS ran out of frontier before the target size
    bool k_clamped = false;
    bool usable = true;
};

/// Node set (ascending, parent ids) plus the parent's triples restricted to it.
struct SubgraphSample {
    std::vector<EntityId> nodes;
    SplitTriples splits;
    SampleMeta meta;

    std::size_t num_triples() const { return splits[0].size() + splits[1].size() + splits[2].size(); }
};

SubgraphSample induce_subgraph(const KnowledgeGraph& g, std::span<const EntityId> nodes);

/// Whether the undirected projection of `triples` spans `nodes` as one component.
bool is_connected(std::span<const EntityId> nodes, const SplitTriples& triples);

/// Relabels a sample into a standalone graph carrying the parent's labels.
KnowledgeGraph materialize(const KnowledgeGraph& parent, const SubgraphSample& sample);

}  // namespace kgstruct
