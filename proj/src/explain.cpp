#include "kgstruct/explain.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/QR>

#include "kgstruct/parallel.hpp"

namespace kgstruct {

double LimeConfig::resolved_kernel_width(Eigen::Index features) const {
    return kernel_width > 0 ? kernel_width : 0.75 * std::sqrt(static_cast<double>(features));
}

BlockLayout BlockLayout::of(const EmbeddingModel& model) {
    return {model.entity_width(), model.relation_width(), model.entity_width()};
}

Eigen::VectorXd triple_features(const EmbeddingModel& model, const Triple& t) {
    (void)score(model, t);  // id validation
    const auto layout = BlockLayout::of(model);
    Eigen::VectorXd x(layout.size());
    x.segment(0, layout.head) = model.entities.row(t.head).transpose();
    x.segment(layout.head, layout.relation) = model.relations.row(t.relation).transpose();
    x.segment(layout.head + layout.relation, layout.tail) = model.entities.row(t.tail).transpose();
    return x;
}

BlackBox black_box_adapter(const EmbeddingModel& model, const Triple& triple) {
    (void)score(model, triple);
    const auto layout = BlockLayout::of(model);
    const auto kind = model.kind;
    const int dim = model.dim;
    return [layout, kind, dim](const Eigen::Ref<const Eigen::VectorXd>& x) {
        if (x.size() != layout.size())
            throw std::domain_error("black box: expected " + std::to_string(layout.size()) + " features, got " +
                                    std::to_string(x.size()));
        return score_rows(kind, dim, x.segment(0, layout.head).transpose(),
                          x.segment(layout.head, layout.relation).transpose(),
                          x.segment(layout.head + layout.relation, layout.tail).transpose());
    };
}

Eigen::VectorXd feature_stddev(const EmbeddingModel& model) {
    auto column_std = [](const Table& t) {
        const Eigen::RowVectorXd mean = t.colwise().mean();
        const double denom = std::max<double>(1.0, static_cast<double>(t.rows() - 1));
        return Eigen::VectorXd(((t.rowwise() - mean).array().square().colwise().sum() / denom).sqrt().transpose());
    };
    const auto layout = BlockLayout::of(model);
    const Eigen::VectorXd ent = column_std(model.entities);
    const Eigen::VectorXd rel = column_std(model.relations);
    Eigen::VectorXd out(layout.size());
    out << ent, rel, ent;
    return out;
}

double kernel_weight(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& xp,
                     double kernel_width) {
    return std::exp(-(x - xp).squaredNorm() / (kernel_width * kernel_width));
}

PerturbationSet perturb(const Eigen::VectorXd& x, const Eigen::VectorXd& stddev, const LimeConfig& config) {
    if (stddev.size() != x.size()) throw std::domain_error("perturb: stddev length mismatch");
    if (config.samples < 1 || !(config.perturbation_scale >= 0))
        throw std::domain_error("perturb: invalid configuration");
    constexpr double kFloor = 1e-6;
    PerturbationSet set;
    Eigen::VectorXd sd = stddev;
    for (Eigen::Index j = 0; j < sd.size(); ++j)
        if (!(sd[j] > 0)) {
            sd[j] = kFloor;
            set.floored_dims.push_back(j);
        }
    sd *= config.perturbation_scale;
    const double sigma = config.resolved_kernel_width(x.size());

    Rng rng(config.seed);
    set.samples.resize(config.samples, x.size());
    set.weights.resize(config.samples);
    for (int i = 0; i < config.samples; ++i) {
        for (Eigen::Index j = 0; j < x.size(); ++j) set.samples(i, j) = x[j] + sd[j] * standard_normal(rng);
        set.weights[i] = kernel_weight(x, set.samples.row(i).transpose(), sigma);
    }
    return set;
}

LocalModel fit_local_model(const Eigen::MatrixXd& offsets, const Eigen::VectorXd& weights,
                           const Eigen::VectorXd& values, double ridge) {
    const Eigen::Index n = offsets.rows(), p = offsets.cols();
    if (weights.size() != n || values.size() != n) throw std::domain_error("fit_local_model: length mismatch");
    if (n < p + 1) throw std::domain_error("fit_local_model: need at least p + 1 samples");
    if (ridge < 0 || (weights.array() < 0).any()) throw std::domain_error("fit_local_model: negative weight or ridge");
    const double wsum = weights.sum();
    if (!(wsum > 0)) throw std::domain_error("fit_local_model: all weights are zero");

    // Weighted centring removes the unpenalised intercept from the solve.
    const Eigen::RowVectorXd zbar = (weights.transpose() * offsets) / wsum;
    const double fbar = weights.dot(values) / wsum;
    const Eigen::VectorXd sw = weights.cwiseSqrt();

    Eigen::MatrixXd a(n + (ridge > 0 ? p : 0), p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(a.rows());
    a.topRows(n) = sw.asDiagonal() * (offsets.rowwise() - zbar);
    b.head(n) = sw.cwiseProduct(values.array().matrix() - Eigen::VectorXd::Constant(n, fbar));
    if (ridge > 0) a.bottomRows(p) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(p, p);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < p) throw std::domain_error("fit_local_model: singular system; use ridge > 0");

    LocalModel m;
    m.beta = qr.solve(b);
    m.intercept = fbar - zbar.dot(m.beta);
    const Eigen::VectorXd fitted = (offsets * m.beta).array() + m.intercept;
    const double ss_res = weights.dot((values - fitted).cwiseAbs2());
    const double ss_tot = weights.dot((values.array() - fbar).square().matrix());
    m.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return m;
}

LimeExplanation explain(const BlackBox& f, const Eigen::VectorXd& x, const Eigen::VectorXd& stddev,
                        const BlockLayout& layout, const LimeConfig& config) {
    if (layout.size() != x.size()) throw std::domain_error("explain: layout does not match feature vector");
    if (config.samples < x.size() + 1)
        throw std::domain_error("explain: need at least " + std::to_string(x.size() + 1) + " perturbations");
    auto set = perturb(x, stddev, config);
    Eigen::VectorXd values(set.samples.rows());
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = f(set.samples.row(i).transpose());
    const Eigen::MatrixXd offsets = set.samples.rowwise() - x.transpose();
    const auto local = fit_local_model(offsets, set.weights, values, config.ridge);

    LimeExplanation e;
    e.beta = local.beta;
    e.intercept = local.intercept;
    e.importance = local.beta.cwiseAbs();
    e.head_importance = e.importance.segment(0, layout.head).sum();
    e.relation_importance = e.importance.segment(layout.head, layout.relation).sum();
    e.tail_importance = e.importance.segment(layout.head + layout.relation, layout.tail).sum();
    e.fit_r2 = local.r2;
    e.target_score = f(x);
    e.floored_dims = std::move(set.floored_dims);
    return e;
}

LimeExplanation explain_triple(const EmbeddingModel& model, const Triple& triple, const LimeConfig& config) {
    LimeConfig cfg = config;
    cfg.seed = derive_seed(config.seed, triple_key(triple));
    return explain(black_box_adapter(model, triple), triple_features(model, triple), feature_stddev(model),
                   BlockLayout::of(model), cfg);
}

std::map<RelationCategory, Representatives> select_representatives(const EmbeddingModel& model,
                                                                    const KnowledgeGraph& g,
                                                                    const CategoryMap& categories, double q,
                                                                    std::vector<std::string>* warnings) {
    if (!(q > 0 && q <= 0.5)) throw std::domain_error("select_representatives: q must lie in (0, 0.5]");
    std::map<RelationCategory, std::vector<std::pair<double, Triple>>> scored;
    for (const auto& t : g.split(Split::test)) {
        if (!categories.covers(t.relation)) continue;
        scored[categories.at(t.relation)].emplace_back(score(model, t), t);
    }
    std::map<RelationCategory, Representatives> out;
    for (auto c : kAllCategories) {
        auto it = scored.find(c);
        if (it == scored.end() || it->second.empty()) {
            if (warnings) warnings->push_back("category " + std::string(category_name(c)) + " has no test triples");
            continue;
        }
        auto& v = it->second;
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        const auto n = v.size();
        auto m = static_cast<std::size_t>(std::floor(q * static_cast<double>(n) + 1e-9));
        m = std::max<std::size_t>(m, 1);
        if (n >= 2) m = std::min(m, n / 2);
        Representatives r;
        for (std::size_t i = 0; i < m; ++i) r.high.push_back(v[i].second);
        for (std::size_t i = n - m; i < n; ++i) r.low.push_back(v[i].second);
        out.emplace(c, std::move(r));
    }
    return out;
}

std::vector<ImportanceProfileRow> category_importance_profile(
    const EmbeddingModel& model, const std::map<RelationCategory, Representatives>& groups,
    const LimeConfig& config, int workers, std::vector<TripleExplanation>* details) {
    struct Job {
        RelationCategory category;
        bool high;
        Triple triple;
    };
    std::vector<Job> jobs;
    for (const auto& [c, r] : groups) {
        for (const auto& t : r.high) jobs.push_back({c, true, t});
        for (const auto& t : r.low) jobs.push_back({c, false, t});
    }
    std::vector<LimeExplanation> results(jobs.size());
    parallel_for(jobs.size(), workers, [&](std::size_t i) { results[i] = explain_triple(model, jobs[i].triple, config); });
    if (details)
        for (std::size_t i = 0; i < jobs.size(); ++i)
            details->push_back({jobs[i].category, jobs[i].high, jobs[i].triple,
                                derive_seed(config.seed, triple_key(jobs[i].triple)), results[i]});

    std::vector<ImportanceProfileRow> rows;
    for (const auto& [c, r] : groups)
        for (bool high : {true, false}) {
            ImportanceProfileRow row{c, high, 0, 0, 0, 0};
            for (std::size_t i = 0; i < jobs.size(); ++i) {
                if (jobs[i].category != c || jobs[i].high != high) continue;
                row.head += results[i].head_importance;
                row.relation += results[i].relation_importance;
                row.tail += results[i].tail_importance;
                ++row.group_size;
            }
            if (row.group_size == 0) continue;
            const double n = static_cast<double>(row.group_size);
            row.head /= n;
            row.relation /= n;
            row.tail /= n;
            rows.push_back(row);
        }
    return rows;
}

std::vector<ImportanceProfileRow> category_importance_profile(const EmbeddingModel& model, const KnowledgeGraph& g,
                                                              const CategoryMap& categories, double q,
                                                              const LimeConfig& config, int workers,
                                                              std::vector<TripleExplanation>* details) {
    return category_importance_profile(model, select_representatives(model, g, categories, q), config, workers,
                                       details);
}

}  // namespace kgstruct
