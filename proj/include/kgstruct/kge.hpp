#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "kgstruct/features.hpp"
#include "kgstruct/graph.hpp"
#include "kgstruct/random.hpp"

namespace kgstruct {

enum class ModelKind : std::uint32_t { transe = 0, complex = 1, rotate = 2 };
std::string_view model_name(ModelKind k);
ModelKind parse_model(std::string_view name);

template <typename Scalar>
using TableT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Table = TableT<double>;
using RowView = Eigen::Ref<const Eigen::RowVectorXd>;
using RowMut = Eigen::Ref<Eigen::RowVectorXd>;

/// Entity and relation tables. ComplEx and RotatE entities store d complex
/// coordinates as [real parts | imaginary parts]; ComplEx relations likewise;
/// RotatE relations store d phases.
struct EmbeddingModel {
    ModelKind kind = ModelKind::transe;
    int dim = 0;
    Table entities;
    Table relations;

    Eigen::Index entity_width() const { return entity_width(kind, dim); }
    Eigen::Index relation_width() const { return relation_width(kind, dim); }
    static Eigen::Index entity_width(ModelKind kind, int dim) { return kind == ModelKind::transe ? dim : 2 * dim; }
    static Eigen::Index relation_width(ModelKind kind, int dim) { return kind == ModelKind::complex ? 2 * dim : dim; }

    bool all_finite() const { return entities.allFinite() && relations.allFinite(); }
};

EmbeddingModel init_model(ModelKind kind, int dim, std::size_t num_entities, std::size_t num_relations, Rng& rng);

/// Plausibility score of raw embedding rows; higher is more plausible.
///   transe:  -||h + r - t||_1
///   complex: Re(sum h * r * conj(t))
///   rotate:  -sum_i |h_i * exp(i phase_i) - t_i|
double score_rows(ModelKind kind, int dim, const RowView& h, const RowView& r, const RowView& t);

/// Adds scale * d(score)/d(h, r, t) into the gradient rows.
void accumulate_score_gradient(ModelKind kind, int dim, const RowView& h, const RowView& r, const RowView& t,
                               double scale, RowMut gh, RowMut gr, RowMut gt);

double score(const EmbeddingModel& model, const Triple& triple);

struct TrainConfig {
    int epochs = 500;
    int batch_size = 512;
    double learning_rate = 0.01;
    int negatives = 8;
    double margin = 5.0;
    double adversarial_temperature = 1.0;
    double l2_weight = 1e-5;
    std::uint64_t seed = 0;

    static TrainConfig defaults(ModelKind kind);
    void validate() const;
};

/// Dense gradient tables plus the set of rows written since the last clear.
struct GradientBuffer {
    Table entities;
    Table relations;
    std::vector<EntityId> touched_entities;
    std::vector<RelationId> touched_relations;

    explicit GradientBuffer(const EmbeddingModel& model);
    void clear();
};

/// Summed loss over `positives`; `negatives` holds config.negatives
/// corruptions per positive, laid out contiguously. When `grad` is non-null
/// the exact gradient of the returned value is accumulated into it.
///   transe:  mean_j max(0, margin - s+ + s-_j)
///   rotate:  -log sig(margin + s+) - sum_j p_j log sig(-margin - s-_j),
///            p = softmax(temperature * s-), differentiated through p
///   complex: softplus(-s+) + mean_j softplus(s-_j) + l2 (|h|^2 + |r|^2 + |t|^2)
double batch_loss(const EmbeddingModel& model, std::span<const Triple> positives,
                  std::span<const Triple> negatives, const TrainConfig& config, GradientBuffer* grad);

/// Replaces head or tail (fair coin) with a uniform entity, rejecting known
/// train triples for a bounded number of attempts.
Triple corrupt(const Triple& t, const KnowledgeGraph& g, Rng& rng);

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mini-batch training on the train split; returns the per-epoch mean loss.
std::vector<double> train(EmbeddingModel& model, const KnowledgeGraph& g, const TrainConfig& config);

struct RankMetrics {
    double mrr = 0;
    double hits1 = 0;
    double hits3 = 0;
    double hits10 = 0;
    std::size_t queries = 0;
};

struct EvalReport {
    RankMetrics overall;
    std::map<RelationCategory, RankMetrics> per_category;
    std::size_t triples = 0;
};

/// Filtered rank of the true tail and head of `t` against every entity.
/// Ties with the target count half: rank = 1 + greater + ties / 2.
std::pair<double, double> filtered_ranks(const EmbeddingModel& model, const KnowledgeGraph& g, const Triple& t);

RankMetrics metrics_from_ranks(std::span<const double> ranks);

/// Both-sides-averaged filtered MRR and Hits@{1,3,10}; the filter is the union of all splits.
EvalReport evaluate(const EmbeddingModel& model, const KnowledgeGraph& g, Split split, int workers = 1);
EvalReport evaluate(const EmbeddingModel& model, const KnowledgeGraph& g, std::span<const Triple> triples,
                    int workers = 1);
EvalReport evaluate_by_category(const EmbeddingModel& model, const KnowledgeGraph& g, std::span<const Triple> triples,
                                const CategoryMap& categories, int workers = 1);
EvalReport evaluate_by_category(const EmbeddingModel& model, const KnowledgeGraph& g, Split split,
                                const CategoryMap& categories, int workers = 1);

struct GridRow {
    int epochs = 0;
    int dim = 0;
    RelationCategory category = RelationCategory::n_n;
    double mrr = 0;
    std::size_t queries = 0;
};

/// One model per (epochs, dim) cell with a cell-specific seed; per-category
/// test MRR for each cell. Test triples with uncategorised relations are skipped.
std::vector<GridRow> hyperparam_grid(const KnowledgeGraph& g, ModelKind kind, std::span<const int> epochs,
                                     std::span<const int> dims, const TrainConfig& base, int workers = 1);

/// Binary checkpoint: "KGSEMB01", kind, dim, |V|, |R| (u64 LE) then both
/// tables as row-major little-endian float64.
void save_model(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_model(const std::filesystem::path& path);

}  // namespace kgstruct
