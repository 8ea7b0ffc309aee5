#include "kgstruct/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "kgstruct/parallel.hpp"

namespace kgstruct {

void SamplerParams::validate() const {
    if (!(r_min > 0.0 && r_min <= r_max && r_max <= 1.0))
        throw std::domain_error("SamplerParams: need 0 < r_min <= r_max <= 1");
    if (k <= 0) throw std::domain_error("SamplerParams: k must be positive");
}

std::vector<EntityId> candidate_set(const KnowledgeGraph& g, int k, bool* clamped) {
    if (k <= 0) throw std::domain_error("candidate_set: k must be positive");
    if (g.num_entities() == 0) throw std::domain_error("candidate_set: empty graph");
    const auto n = g.num_entities();
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), n);
    if (clamped) *clamped = take < static_cast<std::size_t>(k);

    std::vector<EntityId> order(n);
    std::iota(order.begin(), order.end(), EntityId{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](EntityId a, EntityId b) {
                          const auto da = g.degree(a), db = g.degree(b);
                          return da != db ? da > db : a < b;
                      });
    order.resize(take);
    return order;
}

SubgraphSample sample_subgraph(const KnowledgeGraph& g, const SamplerParams& params, Rng& rng) {
    params.validate();
    const auto n = g.num_entities();
    if (n == 0) throw std::domain_error("sample_subgraph: empty graph");

    const double r = uniform_real(rng, params.r_min, params.r_max);
    const auto target = static_cast<std::size_t>(std::ceil(r * static_cast<double>(n)));

    bool clamped = false;
    const auto candidates = candidate_set(g, params.k, &clamped);
    const EntityId start = candidates[uniform_index(rng, candidates.size())];

    std::vector<char> visited(n, 0);
    std::vector<EntityId> members{start};
    std::deque<EntityId> queue{start};
    visited[static_cast<std::size_t>(start)] = 1;
    while (members.size() < target && !queue.empty()) {
        const EntityId u = queue.front();
        queue.pop_front();
        for (EntityId v : g.neighbors(u)) {  // ascending ids
            if (visited[static_cast<std::size_t>(v)]) continue;
            visited[static_cast<std::size_t>(v)] = 1;
            members.push_back(v);
            queue.push_back(v);
        }
    }

    SubgraphSample sample = induce_subgraph(g, members);
    sample.meta.requested_ratio = r;
    sample.meta.start_node = start;
    sample.meta.exhausted = members.size() < target;
    sample.meta.k_clamped = clamped;
    sample.meta.usable = std::all_of(sample.splits.begin(), sample.splits.end(),
                                     [](const auto& s) { return !s.empty(); });
    return sample;
}

std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index) {
    return derive_seed(master_seed, static_cast<std::uint64_t>(index));
}

std::vector<SubgraphSample> generate_corpus(const KnowledgeGraph& g, int count, const SamplerParams& params,
                                            std::uint64_t master_seed, int workers) {
    if (count < 1) throw std::domain_error("generate_corpus: count must be >= 1");
    params.validate();
    if (std::ceil(params.r_min * static_cast<double>(g.num_entities())) < 2.0)
        throw std::domain_error("generate_corpus: graph too small for r_min (target below 2 nodes)");

    std::vector<SubgraphSample> corpus(static_cast<std::size_t>(count));
    parallel_for(corpus.size(), workers, [&](std::size_t i) {
        const auto seed = sample_seed(master_seed, i);
        Rng rng(seed);
        corpus[i] = sample_subgraph(g, params, rng);
        corpus[i].meta.seed = seed;
    });
    return corpus;
}

void write_corpus(const KnowledgeGraph& g, const std::vector<SubgraphSample>& corpus,
                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& s = corpus[i];
        const auto sub = materialize(g, s);
        write_splits(sub, dir / ("sample-" + std::to_string(i)));
        manifest.push_back({{"index", i},
                            {"seed", s.meta.seed},
                            {"start_node", g.entities().label(s.meta.start_node)},
                            {"requested_ratio", s.meta.requested_ratio},
                            {"achieved_ratio", s.meta.achieved_ratio},
                            {"nodes", s.nodes.size()},
                            {"triples_per_split",
                             {{"train", s.splits[0].size()}, {"valid", s.splits[1].size()}, {"test", s.splits[2].size()}}},
                            {"connected", s.meta.connected},
                            {"exhausted", s.meta.exhausted},
                            {"usable", s.meta.usable}});
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write corpus manifest in " + dir.string());
}

}  // namespace kgstruct
