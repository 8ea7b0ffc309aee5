#include "kgstruct/features.hpp"

#include <unordered_set>

namespace kgstruct {

std::string_view category_name(RelationCategory c) {
    switch (c) {
        case RelationCategory::one_one: return "1-1";
        case RelationCategory::one_n: return "1-n";
        case RelationCategory::n_one: return "n-1";
        case RelationCategory::n_n: return "n-n";
    }
    return "?";
}

RelationCategory parse_category(std::string_view name) {
    for (auto c : kAllCategories)
        if (category_name(c) == name) return c;
    throw std::domain_error("unknown relation category '" + std::string(name) + "'");
}

RelationCategory CategoryMap::at(RelationId r) const {
    auto it = category.find(r);
    if (it == category.end())
        throw std::domain_error("relation " + std::to_string(r) + " has no category (no train triples)");
    return it->second;
}

CategoryMap classify_relations(const KnowledgeGraph& g, double threshold) {
    const auto train = g.split(Split::train);
    if (train.empty()) throw std::domain_error("classify_relations: empty train split");
    std::vector<std::size_t> triples(g.num_relations(), 0);
    std::vector<std::unordered_set<EntityId>> heads(g.num_relations()), tails(g.num_relations());
    for (const auto& t : train) {
        ++triples[t.relation];
        heads[t.relation].insert(t.head);
        tails[t.relation].insert(t.tail);
    }
    CategoryMap out;
    for (std::size_t r = 0; r < g.num_relations(); ++r) {
        if (triples[r] == 0) {
            out.excluded.push_back(static_cast<RelationId>(r));
            continue;
        }
        const double tph = static_cast<double>(triples[r]) / static_cast<double>(heads[r].size());
        const double hpt = static_cast<double>(triples[r]) / static_cast<double>(tails[r].size());
        const bool many_tails = tph >= threshold;
        const bool many_heads = hpt >= threshold;
        RelationCategory c = many_tails ? (many_heads ? RelationCategory::n_n : RelationCategory::one_n)
                                        : (many_heads ? RelationCategory::n_one : RelationCategory::one_one);
        out.category.emplace(static_cast<RelationId>(r), c);
    }
    return out;
}

Eigen::Vector4d category_distribution(const KnowledgeGraph& g, const CategoryMap& categories) {
    Eigen::Vector4d counts = Eigen::Vector4d::Zero();
    for (const auto& t : g.split(Split::train)) counts[static_cast<int>(categories.at(t.relation))] += 1.0;
    return counts;
}

Eigen::Vector4d category_distribution(const KnowledgeGraph& g) {
    return category_distribution(g, classify_relations(g));
}

double graph_density(const KnowledgeGraph& g) {
    const auto n = g.num_entities();
    if (n < 2) throw std::domain_error("graph_density: need at least 2 nodes");
    std::size_t pairs = 0;
    std::vector<EntityId> out;
    for (std::size_t v = 0; v < n; ++v) {
        out.clear();
        for (const auto& inc : g.incidences(static_cast<EntityId>(v)))
            if (inc.outgoing && inc.neighbor != static_cast<EntityId>(v)) out.push_back(inc.neighbor);
        std::sort(out.begin(), out.end());
        pairs += static_cast<std::size_t>(std::unique(out.begin(), out.end()) - out.begin());
    }
    return static_cast<double>(pairs) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

std::size_t scc_count(const KnowledgeGraph& g) {
    const auto n = g.num_entities();
    if (n == 0) throw std::domain_error("scc_count: empty graph");

    // Out-adjacency in CSR form.
    std::vector<std::size_t> offsets(n + 1, 0);
    std::vector<EntityId> targets;
    for (std::size_t v = 0; v < n; ++v) {
        for (const auto& inc : g.incidences(static_cast<EntityId>(v)))
            if (inc.outgoing) targets.push_back(inc.neighbor);
        offsets[v + 1] = targets.size();
    }

    // Iterative Tarjan.
    constexpr std::size_t kUnvisited = static_cast<std::size_t>(-1);
    std::vector<std::size_t> index(n, kUnvisited), low(n, 0), edge_pos(n, 0);
    std::vector<char> on_stack(n, 0);
    std::vector<std::size_t> stack, call;
    std::size_t counter = 0, components = 0;
    for (std::size_t root = 0; root < n; ++root) {
        if (index[root] != kUnvisited) continue;
        call.push_back(root);
        index[root] = low[root] = counter++;
        edge_pos[root] = offsets[root];
        stack.push_back(root);
        on_stack[root] = 1;
        while (!call.empty()) {
            const auto v = call.back();
            if (edge_pos[v] < offsets[v + 1]) {
                const auto w = static_cast<std::size_t>(targets[edge_pos[v]++]);
                if (index[w] == kUnvisited) {
                    index[w] = low[w] = counter++;
                    edge_pos[w] = offsets[w];
                    stack.push_back(w);
                    on_stack[w] = 1;
                    call.push_back(w);
                } else if (on_stack[w]) {
                    low[v] = std::min(low[v], index[w]);
                }
                continue;
            }
            call.pop_back();
            if (!call.empty()) low[call.back()] = std::min(low[call.back()], low[v]);
            if (low[v] == index[v]) {
                ++components;
                std::size_t w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = 0;
                } while (w != v);
            }
        }
    }
    return components;
}

double global_clustering(const KnowledgeGraph& g) {
    const auto n = g.num_entities();
    if (n == 0) throw std::domain_error("global_clustering: empty graph");
    // neighbors() is the simple undirected projection already (sorted, no loops).
    double wedges = 0.0;
    std::size_t triangles = 0;
    for (std::size_t v = 0; v < n; ++v) {
        const auto nv = g.neighbors(static_cast<EntityId>(v));
        const double d = static_cast<double>(nv.size());
        wedges += d * (d - 1.0) / 2.0;
        // Count each triangle once at its smallest vertex v < u < w.
        for (auto u : nv) {
            if (u <= static_cast<EntityId>(v)) continue;
            const auto nu = g.neighbors(u);
            auto a = std::upper_bound(nv.begin(), nv.end(), u);
            auto b = std::upper_bound(nu.begin(), nu.end(), u);
            while (a != nv.end() && b != nu.end()) {
                if (*a < *b) ++a;
                else if (*b < *a) ++b;
                else {
                    ++triangles;
                    ++a;
                    ++b;
                }
            }
        }
    }
    return wedges == 0.0 ? 0.0 : 3.0 * static_cast<double>(triangles) / wedges;
}

StructuralFeatures compute_features(const KnowledgeGraph& g, double category_threshold) {
    if (g.split(Split::train).empty()) throw std::domain_error("compute_features: empty train split");
    StructuralFeatures f;
    const auto categories = classify_relations(g, category_threshold);
    f.category_gini = gini(category_distribution(g, categories));

    std::vector<double> per_relation(g.num_relations(), 0.0);
    for (const auto& t : g.split(Split::train)) per_relation[t.relation] += 1.0;
    std::erase(per_relation, 0.0);
    f.relation_type_gini = gini(per_relation);

    std::vector<double> degrees(g.num_entities());
    for (std::size_t v = 0; v < degrees.size(); ++v) degrees[v] = static_cast<double>(g.degree(static_cast<EntityId>(v)));
    f.degree_gini = gini(degrees);

    f.density = graph_density(g);
    f.scc_count = static_cast<double>(scc_count(g));
    f.global_clustering = global_clustering(g);
    return f;
}

StructuralFeatures compute_features(const KnowledgeGraph& parent, const SubgraphSample& sample,
                                    double category_threshold) {
    return compute_features(materialize(parent, sample), category_threshold);
}

}  // namespace kgstruct
