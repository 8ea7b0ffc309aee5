#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kgstruct/graph.hpp"
#include "kgstruct/random.hpp"

namespace kgstruct {

struct SamplerParams {
    double r_min = 0.05;
    double r_max = 0.5;
    int k = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Top-k entities by distinct-neighbour degree, descending; ties by id.
/// k larger than |V| is clamped (reported through `clamped`).
std::vector<EntityId> candidate_set(const KnowledgeGraph& g, int k, bool* clamped = nullptr);

/// Degree-seeded BFS sample. Draws r ~ U[r_min, r_max], starts from a uniform
/// member of the candidate set and expands whole neighbour batches until the
/// node count reaches ceil(r |V|) or the start component is exhausted.
SubgraphSample sample_subgraph(const KnowledgeGraph& g, const SamplerParams& params, Rng& rng);

/// `count` samples with per-index seeds derived from `master_seed`. Samples
/// with an empty induced split are kept but marked unusable.
std::vector<SubgraphSample> generate_corpus(const KnowledgeGraph& g, int count, const SamplerParams& params,
                                            std::uint64_t master_seed, int workers = 1);

std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index);

/// manifest.json plus sample-<i>/{train,valid,test}.txt under `dir`.
void write_corpus(const KnowledgeGraph& g, const std::vector<SubgraphSample>& corpus,
                  const std::filesystem::path& dir);

}  // namespace kgstruct
