#pragma once

#include <cstdint>

#include "kgstruct/graph.hpp"

namespace kgstruct {

/// Core-periphery graph whose relation-category mix varies by region.
///
/// The core is a dense block of random n-n facts over `core_relations`
/// relations. Each of `chains` periphery chains hangs off its own core
/// gateway and consists of `chain_length` pairs p -pair-> q with the inverse
/// q -pair_inv-> p, consecutive pairs linked q -link-> p, and the first pair
/// attached gateway -attach-> p. Every periphery relation is 1-1 and exactly
/// representable by translations, while core facts are random. A
/// breadth-first sample started in the core is dominated by n-n triples when
/// small and picks up 1-1 chains as it grows.
struct CategoryFamilyParams {
    int core_entities = 60;
    int core_relations = 4;
    int core_triples_per_relation = 120;
    int chains = 20;
    int chain_length = 6;
    double valid_fraction = 0.1;
    double test_fraction = 0.1;
    std::uint64_t seed = 1;
};

KnowledgeGraph make_category_family(const CategoryFamilyParams& params);

/// 2n entities a_i, b_i with r: a_i -> b_i and its inverse s: b_i -> a_i.
/// All s facts are in train; the last `held_out` r facts form the test split.
KnowledgeGraph make_bijection_toy(int n = 10, int held_out = 3);

}  // namespace kgstruct
