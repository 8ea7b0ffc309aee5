#pragma once

// Random graph builders and brute-force reference implementations shared by
// the unit and acceptance tests. Everything here is deliberately naive.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "kgstruct/graph.hpp"
#include "kgstruct/kge.hpp"
#include "kgstruct/random.hpp"

namespace testing {

using namespace kgstruct;

inline KnowledgeGraph graph_from(std::size_t entities, std::size_t relations, SplitTriples splits) {
    return KnowledgeGraph(Vocabulary::numbered(entities, "e"), Vocabulary::numbered(relations, "r"),
                          std::move(splits));
}

inline KnowledgeGraph train_only(std::size_t entities, std::size_t relations, std::vector<Triple> train) {
    return graph_from(entities, relations, {std::move(train), {}, {}});
}

/// Uniform random triples, each placed in train with probability 0.8.
inline KnowledgeGraph random_graph(Rng& rng, std::size_t entities, std::size_t relations, std::size_t triples,
                                   bool allow_loops = false) {
    SplitTriples splits;
    for (std::size_t i = 0; i < triples; ++i) {
        Triple t{static_cast<EntityId>(uniform_index(rng, entities)), static_cast<RelationId>(uniform_index(rng, relations)),
                 static_cast<EntityId>(uniform_index(rng, entities))};
        if (!allow_loops && t.head == t.tail) continue;
        const double u = uniform01(rng);
        splits[u < 0.8 ? 0 : (u < 0.9 ? 1 : 2)].push_back(t);
    }
    return graph_from(entities, relations, std::move(splits));
}

/// A random spanning tree plus `extra` random edges; connected by construction.
inline KnowledgeGraph random_connected_graph(Rng& rng, std::size_t entities, std::size_t relations,
                                             std::size_t extra) {
    SplitTriples splits;
    for (std::size_t v = 1; v < entities; ++v) {
        const auto u = static_cast<EntityId>(uniform_index(rng, v));
        const auto r = static_cast<RelationId>(uniform_index(rng, relations));
        if (uniform01(rng) < 0.5) splits[0].push_back({u, r, static_cast<EntityId>(v)});
        else splits[0].push_back({static_cast<EntityId>(v), r, u});
    }
    for (std::size_t i = 0; i < extra; ++i) {
        const auto h = static_cast<EntityId>(uniform_index(rng, entities));
        const auto t = static_cast<EntityId>(uniform_index(rng, entities));
        if (h == t) continue;
        splits[uniform01(rng) < 0.7 ? 0 : 2].push_back({h, static_cast<RelationId>(uniform_index(rng, relations)), t});
    }
    return graph_from(entities, relations, std::move(splits));
}

inline std::vector<Triple> all_triples(const KnowledgeGraph& g) {
    std::vector<Triple> out;
    for (auto s : kAllSplits) out.insert(out.end(), g.split(s).begin(), g.split(s).end());
    return out;
}

inline std::vector<std::set<EntityId>> brute_neighbor_sets(const KnowledgeGraph& g) {
    std::vector<std::set<EntityId>> adj(g.num_entities());
    for (const auto& t : all_triples(g)) {
        if (t.head == t.tail) continue;
        adj[static_cast<std::size_t>(t.head)].insert(t.tail);
        adj[static_cast<std::size_t>(t.tail)].insert(t.head);
    }
    return adj;
}

/// Flood fill over the undirected projection of `triples`, restricted to `nodes`.
inline bool flood_fill_connected(const std::vector<EntityId>& nodes, const SplitTriples& triples) {
    if (nodes.empty()) return false;
    std::map<EntityId, std::vector<EntityId>> adj;
    for (auto v : nodes) adj[v];
    for (const auto& split : triples)
        for (const auto& t : split) {
            adj[t.head].push_back(t.tail);
            adj[t.tail].push_back(t.head);
        }
    std::set<EntityId> seen{nodes.front()};
    std::vector<EntityId> stack{nodes.front()};
    while (!stack.empty()) {
        const auto u = stack.back();
        stack.pop_back();
        for (auto v : adj[u])
            if (seen.insert(v).second) stack.push_back(v);
    }
    return seen.size() == nodes.size();
}

/// Mutual reachability classes from a Floyd-Warshall style transitive closure.
inline std::size_t closure_scc_count(const KnowledgeGraph& g) {
    const auto n = g.num_entities();
    std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
    for (std::size_t i = 0; i < n; ++i) reach[i][i] = 1;
    for (const auto& t : all_triples(g)) reach[static_cast<std::size_t>(t.head)][static_cast<std::size_t>(t.tail)] = 1;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            if (reach[i][k])
                for (std::size_t j = 0; j < n; ++j)
                    if (reach[k][j]) reach[i][j] = 1;
    std::vector<char> assigned(n, 0);
    std::size_t classes = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (assigned[i]) continue;
        ++classes;
        for (std::size_t j = 0; j < n; ++j)
            if (reach[i][j] && reach[j][i]) assigned[j] = 1;
    }
    return classes;
}

/// 3 * triangles / wedges on the simple undirected projection, by enumeration.
inline double census_clustering(const KnowledgeGraph& g) {
    const auto n = g.num_entities();
    std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
    for (const auto& t : all_triples(g))
        if (t.head != t.tail) {
            adj[static_cast<std::size_t>(t.head)][static_cast<std::size_t>(t.tail)] = 1;
            adj[static_cast<std::size_t>(t.tail)][static_cast<std::size_t>(t.head)] = 1;
        }
    double triangles = 0, wedges = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b)
            for (std::size_t c = b + 1; c < n; ++c)
                if (adj[a][b] && adj[b][c] && adj[a][c]) ++triangles;
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                if (adj[v][a] && adj[v][b]) ++wedges;
    return wedges == 0 ? 0.0 : 3.0 * triangles / wedges;
}

/// Double-loop mean absolute difference form of the Gini index.
inline double pairwise_gini(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double diff = 0, sum = 0;
    for (double a : x) {
        sum += a;
        for (double b : x) diff += std::abs(a - b);
    }
    return sum == 0 ? 0.0 : diff / (2.0 * n * sum);
}

/// Materialises every candidate score, sorts them, and reads the rank of the
/// target off the sorted list. Ties with the target count half.
inline std::vector<double> sorted_ranks(const EmbeddingModel& model, const KnowledgeGraph& g,
                                        std::span<const Triple> queries) {
    std::set<std::uint64_t> known;
    for (const auto& t : all_triples(g)) known.insert(triple_key(t));
    std::vector<double> ranks;
    for (const auto& q : queries) {
        for (int side = 0; side < 2; ++side) {
            const double target = score(model, q);
            std::vector<double> scores;
            for (std::size_t e = 0; e < g.num_entities(); ++e) {
                Triple c = q;
                (side == 0 ? c.tail : c.head) = static_cast<EntityId>(e);
                if (c == q || known.contains(triple_key(c))) continue;
                scores.push_back(score(model, c));
            }
            std::sort(scores.begin(), scores.end(), std::greater<>());
            const auto first_not_greater = std::find_if(scores.begin(), scores.end(), [&](double s) { return s <= target; });
            const auto first_less = std::find_if(scores.begin(), scores.end(), [&](double s) { return s < target; });
            const double greater = static_cast<double>(first_not_greater - scores.begin());
            const double ties = static_cast<double>(first_less - first_not_greater);
            ranks.push_back(1.0 + greater + ties / 2.0);
        }
    }
    return ranks;
}

inline double direct_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    return cov / std::sqrt(vx * vy);
}

/// Ranks by counting: rank_i = 1 + #{x_j < x_i} + (#{x_j == x_i} - 1) / 2.
inline std::vector<double> counting_ranks(const std::vector<double>& x) {
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double less = 0, equal = 0;
        for (double v : x) {
            less += v < x[i];
            equal += v == x[i];
        }
        r[i] = 1.0 + less + (equal - 1.0) / 2.0;
    }
    return r;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("kgstruct-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

}  // namespace testing
