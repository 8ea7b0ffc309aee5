#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <stdexcept>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "kgstruct/graph.hpp"

namespace kgstruct {

/// Gini index: mean absolute pairwise difference over twice the mean.
/// Evaluated in O(n log n) from the sorted values; zero for all-zero input.
template <typename Derived>
typename Derived::Scalar gini(const Eigen::DenseBase<Derived>& values) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = values.size();
    if (n == 0) throw std::domain_error("gini: empty input");
    std::vector<Scalar> x(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = values.derived()(i);
    for (auto v : x)
        if (!(v >= Scalar(0))) throw std::domain_error("gini: negative or non-finite entry");
    std::sort(x.begin(), x.end());
    Scalar total(0), weighted(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto xi = x[static_cast<std::size_t>(i)];
        total += xi;
        weighted += Scalar(2 * i - n + 1) * xi;
    }
    if (total == Scalar(0)) return Scalar(0);
    // sum_ij |xi - xj| = 2 * weighted; mean = total / n.
    return weighted / (Scalar(n) * total);
}

inline double gini(const std::vector<double>& values) {
    return gini(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
}

enum class RelationCategory : int { one_one = 0, one_n = 1, n_one = 2, n_n = 3 };
inline constexpr std::array<RelationCategory, 4> kAllCategories{
    RelationCategory::one_one, RelationCategory::one_n, RelationCategory::n_one, RelationCategory::n_n};
std::string_view category_name(RelationCategory c);
RelationCategory parse_category(std::string_view name);

struct CategoryMap {
    std::map<RelationId, RelationCategory> category;
    std::vector<RelationId> excluded;  // relations without train triples

    RelationCategory at(RelationId r) const;
    bool covers(RelationId r) const { return category.contains(r); }
};

/// Classifies by average fan-out on the train split: tails-per-head and
/// heads-per-tail compared to `threshold`; values at the threshold count as "n".
CategoryMap classify_relations(const KnowledgeGraph& g, double threshold = 1.5);

/// Train triple counts per category in the order 1-1, 1-n, n-1, n-n.
Eigen::Vector4d category_distribution(const KnowledgeGraph& g, const CategoryMap& categories);
Eigen::Vector4d category_distribution(const KnowledgeGraph& g);

/// Distinct ordered non-loop pairs over |V|(|V|-1).
double graph_density(const KnowledgeGraph& g);

/// Strongly connected components of the relation-agnostic directed projection.
std::size_t scc_count(const KnowledgeGraph& g);

/// Transitivity of the undirected simple projection; 0 without wedges.
double global_clustering(const KnowledgeGraph& g);

struct StructuralFeatures {
    double category_gini = 0;
    double relation_type_gini = 0;
    double degree_gini = 0;
    double density = 0;
    double scc_count = 0;
    double global_clustering = 0;

    static constexpr int kCount = 6;
    static constexpr std::array<std::string_view, 6> kNames{
        "category_gini", "relation_type_gini", "degree_gini", "density", "scc_count", "global_clustering"};

    Eigen::Matrix<double, 6, 1> as_vector() const {
        Eigen::Matrix<double, 6, 1> v;
        v << category_gini, relation_type_gini, degree_gini, density, scc_count, global_clustering;
        return v;
    }
    static StructuralFeatures from_vector(const Eigen::Matrix<double, 6, 1>& v) {
        return {v[0], v[1], v[2], v[3], v[4], v[5]};
    }
};

/// All six features of a standalone (materialized) graph.
StructuralFeatures compute_features(const KnowledgeGraph& g, double category_threshold = 1.5);
StructuralFeatures compute_features(const KnowledgeGraph& parent, const SubgraphSample& sample,
                                    double category_threshold = 1.5);

}  // namespace kgstruct
