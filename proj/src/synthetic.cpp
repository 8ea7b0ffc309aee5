#include "kgstruct/synthetic.hpp"

#include <stdexcept>
#include <unordered_set>

#include "kgstruct/random.hpp"

namespace kgstruct {

KnowledgeGraph make_category_family(const CategoryFamilyParams& p) {
    if (p.core_entities < 3 || p.core_relations < 1 || p.chains < 0 || p.chain_length < 1 ||
        p.chains > p.core_entities)
        throw std::domain_error("make_category_family: invalid parameters");
    if (p.valid_fraction < 0 || p.test_fraction < 0 || p.valid_fraction + p.test_fraction >= 1)
        throw std::domain_error("make_category_family: invalid split fractions");
    Rng rng(p.seed);

    Vocabulary entities, relations;
    for (int i = 0; i < p.core_entities; ++i) entities.intern("core" + std::to_string(i));
    for (int r = 0; r < p.core_relations; ++r) relations.intern("nn" + std::to_string(r));
    const RelationId rel_pair = relations.intern("pair"), rel_inverse = relations.intern("pair_inv"),
                     rel_link = relations.intern("link"), rel_attach = relations.intern("attach");

    std::vector<Triple> facts;
    std::unordered_set<std::uint64_t> seen;
    const auto max_pairs = static_cast<std::size_t>(p.core_entities) * static_cast<std::size_t>(p.core_entities - 1);
    if (static_cast<std::size_t>(p.core_triples_per_relation) > max_pairs / 2)
        throw std::domain_error("make_category_family: core too small for requested triples");
    for (RelationId r = 0; r < p.core_relations; ++r) {
        int placed = 0;
        while (placed < p.core_triples_per_relation) {
            const auto h = static_cast<EntityId>(uniform_index(rng, static_cast<std::uint64_t>(p.core_entities)));
            const auto t = static_cast<EntityId>(uniform_index(rng, static_cast<std::uint64_t>(p.core_entities)));
            if (h == t) continue;
            const Triple f{h, r, t};
            if (!seen.insert(triple_key(f)).second) continue;
            facts.push_back(f);
            ++placed;
        }
    }

    // Only the forward fact of a pair may be held out; its inverse always
    // stays in train, so every held-out 1-1 fact is recoverable.
    std::vector<Triple> periphery_required, periphery_optional;
    for (int c = 0; c < p.chains; ++c) {
        const EntityId gateway = c;  // core entity c
        EntityId prev = -1;
        for (int k = 0; k < p.chain_length; ++k) {
            const std::string stem = "ch" + std::to_string(c) + "_" + std::to_string(k);
            const EntityId x = entities.intern(stem + "p");
            const EntityId y = entities.intern(stem + "q");
            periphery_optional.push_back({x, rel_pair, y});
            periphery_required.push_back({y, rel_inverse, x});
            periphery_required.push_back(k == 0 ? Triple{gateway, rel_attach, x} : Triple{prev, rel_link, x});
            prev = y;
        }
    }

    SplitTriples splits;
    auto assign = [&](const Triple& t, bool may_hold_out) {
        const double u = uniform01(rng);
        int s = 0;
        if (may_hold_out) {
            if (u < p.test_fraction) s = 2;
            else if (u < p.test_fraction + p.valid_fraction) s = 1;
        }
        splits[s].push_back(t);
    };
    for (const auto& t : facts) assign(t, true);
    for (const auto& t : periphery_required) assign(t, false);
    for (const auto& t : periphery_optional) assign(t, true);
    return KnowledgeGraph(std::move(entities), std::move(relations), std::move(splits));
}

KnowledgeGraph make_bijection_toy(int n, int held_out) {
    if (n < 2 || held_out < 1 || held_out >= n) throw std::domain_error("make_bijection_toy: invalid sizes");
    Vocabulary entities, relations;
    for (int i = 0; i < n; ++i) entities.intern("a" + std::to_string(i));
    for (int i = 0; i < n; ++i) entities.intern("b" + std::to_string(i));
    const RelationId r = relations.intern("r"), s = relations.intern("s");
    SplitTriples splits;
    for (int i = 0; i < n; ++i) {
        splits[0].push_back({n + i, s, i});
        splits[i < n - held_out ? 0 : 2].push_back({i, r, n + i});
    }
    return KnowledgeGraph(std::move(entities), std::move(relations), std::move(splits));
}

}  // namespace kgstruct
