#include "kgstruct/kge.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "kgstruct/parallel.hpp"

namespace kgstruct {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string_view model_name(ModelKind k) {
    switch (k) {
        case ModelKind::transe: return "transe";
        case ModelKind::complex: return "complex";
        case ModelKind::rotate: return "rotate";
    }
    return "?";
}

ModelKind parse_model(std::string_view name) {
    for (auto k : {ModelKind::transe, ModelKind::complex, ModelKind::rotate})
        if (model_name(k) == name) return k;
    throw std::domain_error("unknown model kind '" + std::string(name) + "'");
}

namespace {

double wrap_phase(double x) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    x = std::fmod(x + std::numbers::pi, two_pi);
    if (x < 0) x += two_pi;
    double out = x - std::numbers::pi;
    return out >= std::numbers::pi ? -std::numbers::pi : out;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double softplus(double x) { return -log_sigmoid(-x); }

}  // namespace

EmbeddingModel init_model(ModelKind kind, int dim, std::size_t num_entities, std::size_t num_relations, Rng& rng) {
    if (dim < 1) throw std::domain_error("init_model: dim must be >= 1");
    if (num_entities == 0 || num_relations == 0) throw std::domain_error("init_model: empty vocabulary");
    EmbeddingModel m;
    m.kind = kind;
    m.dim = dim;
    const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
    m.entities.resize(static_cast<Eigen::Index>(num_entities), m.entity_width());
    m.relations.resize(static_cast<Eigen::Index>(num_relations), m.relation_width());
    for (Eigen::Index i = 0; i < m.entities.size(); ++i) m.entities.data()[i] = uniform_real(rng, -bound, bound);
    for (Eigen::Index i = 0; i < m.relations.size(); ++i)
        m.relations.data()[i] = kind == ModelKind::rotate ? uniform_real(rng, -std::numbers::pi, std::numbers::pi)
                                                          : uniform_real(rng, -bound, bound);
    if (kind == ModelKind::transe) {
        // relations start on the unit sphere, entities inside the unit ball
        m.relations.rowwise().normalize();
        for (Eigen::Index e = 0; e < m.entities.rows(); ++e)
            if (const double n = m.entities.row(e).norm(); n > 1.0) m.entities.row(e) /= n;
    }
    return m;
}

double score_rows(ModelKind kind, int dim, const RowView& h, const RowView& r, const RowView& t) {
    switch (kind) {
        case ModelKind::transe:
            return -(h + r - t).cwiseAbs().sum();
        case ModelKind::complex: {
            const auto hr = h.head(dim), hi = h.tail(dim);
            const auto rr = r.head(dim), ri = r.tail(dim);
            const auto tr = t.head(dim), ti = t.tail(dim);
            return (hr.cwiseProduct(rr).cwiseProduct(tr) + hi.cwiseProduct(rr).cwiseProduct(ti) +
                    hr.cwiseProduct(ri).cwiseProduct(ti) - hi.cwiseProduct(ri).cwiseProduct(tr))
                .sum();
        }
        case ModelKind::rotate: {
            double s = 0.0;
            for (int i = 0; i < dim; ++i) {
                const double c = std::cos(r[i]), sn = std::sin(r[i]);
                const double a = h[i] * c - h[dim + i] * sn - t[i];
                const double b = h[i] * sn + h[dim + i] * c - t[dim + i];
                s -= std::hypot(a, b);
            }
            return s;
        }
    }
    return 0.0;
}

void accumulate_score_gradient(ModelKind kind, int dim, const RowView& h, const RowView& r, const RowView& t,
                               double scale, RowMut gh, RowMut gr, RowMut gt) {
    switch (kind) {
        case ModelKind::transe:
            for (Eigen::Index i = 0; i < h.size(); ++i) {
                const double d = h[i] + r[i] - t[i];
                const double sg = scale * static_cast<double>((d > 0) - (d < 0));
                gh[i] -= sg;
                gr[i] -= sg;
                gt[i] += sg;
            }
            return;
        case ModelKind::complex:
            for (int i = 0; i < dim; ++i) {
                const double hr = h[i], hi = h[dim + i], rr = r[i], ri = r[dim + i], tr = t[i], ti = t[dim + i];
                gh[i] += scale * (rr * tr + ri * ti);
                gh[dim + i] += scale * (rr * ti - ri * tr);
                gr[i] += scale * (hr * tr + hi * ti);
                gr[dim + i] += scale * (hr * ti - hi * tr);
                gt[i] += scale * (hr * rr - hi * ri);
                gt[dim + i] += scale * (hi * rr + hr * ri);
            }
            return;
        case ModelKind::rotate:
            for (int i = 0; i < dim; ++i) {
                const double hr = h[i], hi = h[dim + i];
                const double c = std::cos(r[i]), sn = std::sin(r[i]);
                const double a = hr * c - hi * sn - t[i];
                const double b = hr * sn + hi * c - t[dim + i];
                const double m = std::hypot(a, b);
                if (m == 0.0) continue;
                const double da = scale * a / m, db = scale * b / m;  // d|z| scaled
                gh[i] -= da * c + db * sn;
                gh[dim + i] -= -da * sn + db * c;
                gr[i] -= da * (-hr * sn - hi * c) + db * (hr * c - hi * sn);
                gt[i] += da;
                gt[dim + i] += db;
            }
            return;
    }
}

double score(const EmbeddingModel& model, const Triple& t) {
    const auto ne = model.entities.rows(), nr = model.relations.rows();
    if (t.head < 0 || t.head >= ne || t.tail < 0 || t.tail >= ne || t.relation < 0 || t.relation >= nr)
        throw std::domain_error("score: triple id out of range");
    return score_rows(model.kind, model.dim, model.entities.row(t.head), model.relations.row(t.relation),
                      model.entities.row(t.tail));
}

TrainConfig TrainConfig::defaults(ModelKind kind) {
    TrainConfig c;
    switch (kind) {
        case ModelKind::transe:
            c.margin = 5.0;
            break;
        case ModelKind::rotate:
            c.margin = 6.0;
            c.adversarial_temperature = 1.0;
            break;
        case ModelKind::complex:
            c.learning_rate = 0.05;
            break;
    }
    return c;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw std::domain_error("TrainConfig: epochs must be >= 0");
    if (batch_size <= 0 || negatives <= 0) throw std::domain_error("TrainConfig: batch_size and negatives must be > 0");
    if (!(learning_rate > 0) || !(margin > 0)) throw std::domain_error("TrainConfig: learning_rate and margin must be > 0");
    if (adversarial_temperature < 0 || l2_weight < 0)
        throw std::domain_error("TrainConfig: temperature and l2_weight must be >= 0");
}

GradientBuffer::GradientBuffer(const EmbeddingModel& model)
    : entities(Table::Zero(model.entities.rows(), model.entities.cols())),
      relations(Table::Zero(model.relations.rows(), model.relations.cols())) {}

void GradientBuffer::clear() {
    for (auto e : touched_entities) entities.row(e).setZero();
    for (auto r : touched_relations) relations.row(r).setZero();
    touched_entities.clear();
    touched_relations.clear();
}

namespace {

void add_triple_gradient(const EmbeddingModel& m, const Triple& t, double scale, GradientBuffer& g) {
    if (scale == 0.0) return;
    if (t.head == t.tail) {
        // Shared row: accumulate into temporaries to avoid aliasing.
        Eigen::RowVectorXd gh = Eigen::RowVectorXd::Zero(m.entity_width()), gt = gh;
        accumulate_score_gradient(m.kind, m.dim, m.entities.row(t.head), m.relations.row(t.relation),
                                  m.entities.row(t.tail), scale, gh, g.relations.row(t.relation), gt);
        g.entities.row(t.head) += gh + gt;
    } else {
        accumulate_score_gradient(m.kind, m.dim, m.entities.row(t.head), m.relations.row(t.relation),
                                  m.entities.row(t.tail), scale, g.entities.row(t.head),
                                  g.relations.row(t.relation), g.entities.row(t.tail));
    }
    g.touched_entities.push_back(t.head);
    g.touched_entities.push_back(t.tail);
    g.touched_relations.push_back(t.relation);
}

}  // namespace

double batch_loss(const EmbeddingModel& model, std::span<const Triple> positives, std::span<const Triple> negatives,
                  const TrainConfig& config, GradientBuffer* grad) {
    const auto k = static_cast<std::size_t>(config.negatives);
    if (negatives.size() != positives.size() * k)
        throw std::invalid_argument("batch_loss: expected config.negatives corruptions per positive");
    const double inv_k = 1.0 / static_cast<double>(k);
    double total = 0.0;
    std::vector<double> sneg(k), weight(k), dneg(k);

    for (std::size_t i = 0; i < positives.size(); ++i) {
        const Triple& pos = positives[i];
        const auto negs = negatives.subspan(i * k, k);
        const double spos = score(model, pos);
        for (std::size_t j = 0; j < k; ++j) sneg[j] = score(model, negs[j]);
        double dpos = 0.0;  // dL/ds+

        switch (model.kind) {
            case ModelKind::transe:
                for (std::size_t j = 0; j < k; ++j) {
                    const double hinge = config.margin - spos + sneg[j];
                    if (hinge > 0) {
                        total += hinge * inv_k;
                        dpos -= inv_k;
                        dneg[j] = inv_k;
                    } else {
                        dneg[j] = 0.0;
                    }
                }
                break;
            case ModelKind::rotate: {
                const double gamma = config.margin, alpha = config.adversarial_temperature;
                total -= log_sigmoid(gamma + spos);
                dpos = -sigmoid(-gamma - spos);
                const double smax = *std::max_element(sneg.begin(), sneg.end());
                double z = 0.0;
                for (std::size_t j = 0; j < k; ++j) z += weight[j] = std::exp(alpha * (sneg[j] - smax));
                double mean_ell = 0.0;
                std::vector<double> ell(k);
                for (std::size_t j = 0; j < k; ++j) {
                    weight[j] /= z;
                    ell[j] = log_sigmoid(-gamma - sneg[j]);
                    mean_ell += weight[j] * ell[j];
                }
                total -= mean_ell;
                for (std::size_t j = 0; j < k; ++j)
                    dneg[j] = weight[j] * sigmoid(gamma + sneg[j]) - alpha * weight[j] * (ell[j] - mean_ell);
                break;
            }
            case ModelKind::complex: {
                total += softplus(-spos);
                dpos = -sigmoid(-spos);
                for (std::size_t j = 0; j < k; ++j) {
                    total += softplus(sneg[j]) * inv_k;
                    dneg[j] = sigmoid(sneg[j]) * inv_k;
                }
                const double lambda = config.l2_weight;
                total += lambda * (model.entities.row(pos.head).squaredNorm() +
                                   model.relations.row(pos.relation).squaredNorm() +
                                   model.entities.row(pos.tail).squaredNorm());
                if (grad) {
                    grad->entities.row(pos.head) += 2.0 * lambda * model.entities.row(pos.head);
                    grad->relations.row(pos.relation) += 2.0 * lambda * model.relations.row(pos.relation);
                    grad->entities.row(pos.tail) += 2.0 * lambda * model.entities.row(pos.tail);
                }
                break;
            }
        }

        if (grad) {
            add_triple_gradient(model, pos, dpos, *grad);
            for (std::size_t j = 0; j < k; ++j) add_triple_gradient(model, negs[j], dneg[j], *grad);
            grad->touched_entities.push_back(pos.head);
            grad->touched_entities.push_back(pos.tail);
            grad->touched_relations.push_back(pos.relation);
        }
    }
    return total;
}

Triple corrupt(const Triple& t, const KnowledgeGraph& g, Rng& rng) {
    constexpr int kAttempts = 32;
    const auto n = g.num_entities();
    Triple c = t;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        const bool replace_head = (rng() >> 63) != 0;
        c = t;
        const auto e = static_cast<EntityId>(uniform_index(rng, n));
        (replace_head ? c.head : c.tail) = e;
        if (!g.contains(c)) return c;
    }
    return c;
}

namespace {

template <typename Ids>
void sort_unique(Ids& ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
}

}  // namespace

std::vector<double> train(EmbeddingModel& model, const KnowledgeGraph& g, const TrainConfig& config) {
    config.validate();
    const auto positives_all = g.split(Split::train);
    if (positives_all.empty()) throw std::domain_error("train: empty train split");
    if (static_cast<std::size_t>(model.entities.rows()) != g.num_entities() ||
        static_cast<std::size_t>(model.relations.rows()) != g.num_relations())
        throw std::domain_error("train: model tables do not match graph vocabulary");

    Rng rng(config.seed);
    std::vector<Triple> order(positives_all.begin(), positives_all.end());
    std::vector<Triple> negatives;
    GradientBuffer grad(model);
    const bool adaptive = model.kind == ModelKind::complex;
    Table ent_acc, rel_acc;
    if (adaptive) {
        ent_acc = Table::Zero(model.entities.rows(), model.entities.cols());
        rel_acc = Table::Zero(model.relations.rows(), model.relations.cols());
    }
    const double lr = config.learning_rate;
    auto step = [&](auto& params, auto& gtab, auto& acc, auto id) {
        if (adaptive) {
            acc.row(id) += gtab.row(id).cwiseAbs2();
            params.row(id) -= lr * gtab.row(id).cwiseQuotient((acc.row(id).cwiseSqrt().array() + 1e-10).matrix());
        } else {
            params.row(id) -= lr * gtab.row(id);
        }
    };

    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
            const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            const std::span<const Triple> batch(order.data() + begin, end - begin);
            negatives.clear();
            for (const auto& t : batch)
                for (int j = 0; j < config.negatives; ++j) negatives.push_back(corrupt(t, g, rng));

            const double loss = batch_loss(model, batch, negatives, config, &grad);
            if (!std::isfinite(loss))
                throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch) +
                                       " (learning rate too high?)");
            epoch_loss += loss;

            sort_unique(grad.touched_entities);
            sort_unique(grad.touched_relations);
            for (auto e : grad.touched_entities) step(model.entities, grad.entities, ent_acc, e);
            for (auto r : grad.touched_relations) step(model.relations, grad.relations, rel_acc, r);
            if (model.kind == ModelKind::transe) {
                for (auto e : grad.touched_entities) {
                    const double norm = model.entities.row(e).norm();
                    if (norm > 1.0) model.entities.row(e) /= norm;
                }
            } else if (model.kind == ModelKind::rotate) {
                for (auto r : grad.touched_relations)
                    for (Eigen::Index c = 0; c < model.relations.cols(); ++c)
                        model.relations(r, c) = wrap_phase(model.relations(r, c));
            }
            grad.clear();
        }
        trace.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    if (!model.all_finite()) throw TrainingDiverged("train: non-finite embedding values");
    return trace;
}

std::pair<double, double> filtered_ranks(const EmbeddingModel& model, const KnowledgeGraph& g, const Triple& t) {
    const double target = score(model, t);
    const auto n = static_cast<EntityId>(g.num_entities());
    const auto h = model.entities.row(t.head);
    const auto r = model.relations.row(t.relation);
    const auto tl = model.entities.row(t.tail);
    std::size_t tail_greater = 0, tail_ties = 0, head_greater = 0, head_ties = 0;
    for (EntityId e = 0; e < n; ++e) {
        if (e != t.tail && !g.contains({t.head, t.relation, e})) {
            const double s = score_rows(model.kind, model.dim, h, r, model.entities.row(e));
            tail_greater += s > target;
            tail_ties += s == target;
        }
        if (e != t.head && !g.contains({e, t.relation, t.tail})) {
            const double s = score_rows(model.kind, model.dim, model.entities.row(e), r, tl);
            head_greater += s > target;
            head_ties += s == target;
        }
    }
    return {1.0 + static_cast<double>(tail_greater) + 0.5 * static_cast<double>(tail_ties),
            1.0 + static_cast<double>(head_greater) + 0.5 * static_cast<double>(head_ties)};
}

RankMetrics metrics_from_ranks(std::span<const double> ranks) {
    RankMetrics m;
    m.queries = ranks.size();
    if (ranks.empty()) return m;
    for (double rank : ranks) {
        m.mrr += 1.0 / rank;
        m.hits1 += rank <= 1.0;
        m.hits3 += rank <= 3.0;
        m.hits10 += rank <= 10.0;
    }
    const double n = static_cast<double>(ranks.size());
    m.mrr /= n;
    m.hits1 /= n;
    m.hits3 /= n;
    m.hits10 /= n;
    return m;
}

namespace {

std::vector<double> all_ranks(const EmbeddingModel& model, const KnowledgeGraph& g, std::span<const Triple> triples,
                              int workers) {
    if (static_cast<std::size_t>(model.entities.rows()) != g.num_entities())
        throw std::domain_error("evaluate: model does not match graph vocabulary");
    std::vector<double> ranks(2 * triples.size());
    parallel_for(triples.size(), workers, [&](std::size_t i) {
        const auto [tail_rank, head_rank] = filtered_ranks(model, g, triples[i]);
        ranks[2 * i] = tail_rank;
        ranks[2 * i + 1] = head_rank;
    });
    return ranks;
}

}  // namespace

EvalReport evaluate(const EmbeddingModel& model, const KnowledgeGraph& g, std::span<const Triple> triples,
                    int workers) {
    if (triples.empty()) throw std::domain_error("evaluate: empty evaluation split");
    EvalReport report;
    report.triples = triples.size();
    const auto ranks = all_ranks(model, g, triples, workers);
    report.overall = metrics_from_ranks(ranks);
    return report;
}

EvalReport evaluate(const EmbeddingModel& model, const KnowledgeGraph& g, Split split, int workers) {
    return evaluate(model, g, g.split(split), workers);
}

EvalReport evaluate_by_category(const EmbeddingModel& model, const KnowledgeGraph& g, std::span<const Triple> triples,
                                const CategoryMap& categories, int workers) {
    if (triples.empty()) throw std::domain_error("evaluate_by_category: empty evaluation split");
    for (const auto& t : triples)
        if (!categories.covers(t.relation))
            throw std::domain_error("evaluate_by_category: relation '" + g.relations().label(t.relation) +
                                    "' has no category");
    EvalReport report;
    report.triples = triples.size();
    const auto ranks = all_ranks(model, g, triples, workers);
    report.overall = metrics_from_ranks(ranks);
    std::map<RelationCategory, std::vector<double>> grouped;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        auto& bucket = grouped[categories.at(triples[i].relation)];
        bucket.push_back(ranks[2 * i]);
        bucket.push_back(ranks[2 * i + 1]);
    }
    for (const auto& [c, r] : grouped) report.per_category[c] = metrics_from_ranks(r);
    return report;
}

EvalReport evaluate_by_category(const EmbeddingModel& model, const KnowledgeGraph& g, Split split,
                                const CategoryMap& categories, int workers) {
    return evaluate_by_category(model, g, g.split(split), categories, workers);
}

std::vector<GridRow> hyperparam_grid(const KnowledgeGraph& g, ModelKind kind, std::span<const int> epochs,
                                     std::span<const int> dims, const TrainConfig& base, int workers) {
    if (epochs.empty() || dims.empty()) throw std::domain_error("hyperparam_grid: empty grid axis");
    const auto categories = classify_relations(g);
    std::vector<Triple> eval;
    for (const auto& t : g.split(Split::test))
        if (categories.covers(t.relation)) eval.push_back(t);
    if (eval.empty()) throw std::domain_error("hyperparam_grid: no categorised test triples");

    const auto cells = epochs.size() * dims.size();
    std::vector<std::vector<GridRow>> per_cell(cells);
    parallel_for(cells, workers, [&](std::size_t cell) {
        const int ep = epochs[cell / dims.size()];
        const int d = dims[cell % dims.size()];
        const auto seed = derive_seed(derive_seed(base.seed, static_cast<std::uint64_t>(ep)), static_cast<std::uint64_t>(d));
        Rng init_rng(seed);
        auto model = init_model(kind, d, g.num_entities(), g.num_relations(), init_rng);
        TrainConfig cfg = base;
        cfg.epochs = ep;
        cfg.seed = derive_seed(seed, "train");
        train(model, g, cfg);
        const auto report = evaluate_by_category(model, g, eval, categories);
        for (const auto& [c, m] : report.per_category) per_cell[cell].push_back({ep, d, c, m.mrr, m.queries});
    });
    std::vector<GridRow> rows;
    for (auto& cell : per_cell) rows.insert(rows.end(), cell.begin(), cell.end());
    return rows;
}

void save_model(const EmbeddingModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write("KGSEMB01", 8);
    const std::uint64_t header[4] = {static_cast<std::uint64_t>(model.kind), static_cast<std::uint64_t>(model.dim),
                                     static_cast<std::uint64_t>(model.entities.rows()),
                                     static_cast<std::uint64_t>(model.relations.rows())};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(model.entities.data()),
              static_cast<std::streamsize>(model.entities.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(model.relations.data()),
              static_cast<std::streamsize>(model.relations.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

EmbeddingModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[8];
    std::uint64_t header[4];
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in || std::memcmp(magic, "KGSEMB01", 8) != 0) throw std::runtime_error("bad checkpoint header: " + path.string());
    if (header[0] > 2 || header[1] == 0) throw std::runtime_error("bad checkpoint fields: " + path.string());
    EmbeddingModel m;
    m.kind = static_cast<ModelKind>(header[0]);
    m.dim = static_cast<int>(header[1]);
    m.entities.resize(static_cast<Eigen::Index>(header[2]), m.entity_width());
    m.relations.resize(static_cast<Eigen::Index>(header[3]), m.relation_width());
    in.read(reinterpret_cast<char*>(m.entities.data()), static_cast<std::streamsize>(m.entities.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(m.relations.data()),
            static_cast<std::streamsize>(m.relations.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    return m;
}

}  // namespace kgstruct
