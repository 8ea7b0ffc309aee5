#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include <Eigen/Core>

#include "kgstruct/features.hpp"
#include "kgstruct/kge.hpp"
#include "kgstruct/random.hpp"

namespace kgstruct {

struct LimeConfig {
    int samples = 5000;
    /// Kernel width; <= 0 selects 0.75 * sqrt(feature count).
    double kernel_width = 0.0;
    double perturbation_scale = 0.3;
    double ridge = 1e-3;
    std::uint64_t seed = 0;

    double resolved_kernel_width(Eigen::Index features) const;
};

/// Column ranges of the head, relation and tail blocks inside x = [h, r, t].
struct BlockLayout {
    Eigen::Index head = 0;
    Eigen::Index relation = 0;
    Eigen::Index tail = 0;

    Eigen::Index size() const { return head + relation + tail; }
    static BlockLayout of(const EmbeddingModel& model);
};

using BlackBox = std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)>;

/// [h, r, t] in the model's native real parameterisation.
Eigen::VectorXd triple_features(const EmbeddingModel& model, const Triple& triple);

/// f(x') = score of the blocks of x' substituted for the triple's embeddings.
BlackBox black_box_adapter(const EmbeddingModel& model, const Triple& triple);

/// Per-dimension empirical standard deviation of each block's source table.
Eigen::VectorXd feature_stddev(const EmbeddingModel& model);

struct PerturbationSet {
    Eigen::MatrixXd samples;  // n x p
    Eigen::VectorXd weights;  // Gaussian kernel weights
    std::vector<Eigen::Index> floored_dims;
};

/// x + eps with eps_j ~ N(0, (scale * std_j)^2); weights exp(-|x - x'|^2 / sigma^2).
PerturbationSet perturb(const Eigen::VectorXd& x, const Eigen::VectorXd& stddev, const LimeConfig& config);

double kernel_weight(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& xp,
                     double kernel_width);

struct LocalModel {
    double intercept = 0;
    Eigen::VectorXd beta;
    double r2 = 0;
};

/// Weighted ridge fit of f over z = x' - x; the intercept is not penalised.
LocalModel fit_local_model(const Eigen::MatrixXd& offsets, const Eigen::VectorXd& weights,
                           const Eigen::VectorXd& values, double ridge);

struct LimeExplanation {
    Eigen::VectorXd beta;
    double intercept = 0;
    Eigen::VectorXd importance;
    double head_importance = 0;
    double relation_importance = 0;
    double tail_importance = 0;
    double fit_r2 = 0;
    double target_score = 0;
    std::vector<Eigen::Index> floored_dims;
};

LimeExplanation explain(const BlackBox& f, const Eigen::VectorXd& x, const Eigen::VectorXd& stddev,
                        const BlockLayout& layout, const LimeConfig& config);
/// Runs with seed derive_seed(config.seed, triple_key(triple)).
LimeExplanation explain_triple(const EmbeddingModel& model, const Triple& triple, const LimeConfig& config);

struct Representatives {
    std::vector<Triple> high;
    std::vector<Triple> low;
};

/// Per category: test triples ordered by score (descending, ties by triple
/// order); `high` is the leading q-quantile and `low` the trailing one.
std::map<RelationCategory, Representatives> select_representatives(const EmbeddingModel& model,
                                                                    const KnowledgeGraph& g,
                                                                    const CategoryMap& categories, double q,
                                                                    std::vector<std::string>* warnings = nullptr);

struct ImportanceProfileRow {
    RelationCategory category = RelationCategory::n_n;
    bool high = true;
    double head = 0;
    double relation = 0;
    double tail = 0;
    std::size_t group_size = 0;
};

struct TripleExplanation {
    RelationCategory category = RelationCategory::n_n;
    bool high = true;
    Triple triple;
    std::uint64_t seed = 0;
    LimeExplanation explanation;
};

/// Mean block importances of each representative group. The individual
/// explanations go to `details` when given, in group order.
std::vector<ImportanceProfileRow> category_importance_profile(const EmbeddingModel& model, const KnowledgeGraph& g,
                                                              const CategoryMap& categories, double q,
                                                              const LimeConfig& config, int workers = 1,
                                                              std::vector<TripleExplanation>* details = nullptr);
std::vector<ImportanceProfileRow> category_importance_profile(
    const EmbeddingModel& model, const std::map<RelationCategory, Representatives>& groups,
    const LimeConfig& config, int workers = 1, std::vector<TripleExplanation>* details = nullptr);

}  // namespace kgstruct
