#include "kgstruct/stats.hpp"

#include <map>
#include <numeric>

#include <Eigen/QR>
#include <boost/random/sobol.hpp>

namespace kgstruct {

Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::Index n = x.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    Eigen::VectorXd ranks(n);
    for (Eigen::Index i = 0; i < n;) {
        Eigen::Index j = i;
        while (j + 1 < n && x[order[static_cast<std::size_t>(j + 1)]] == x[order[static_cast<std::size_t>(i)]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (Eigen::Index k = i; k <= j; ++k) ranks[order[static_cast<std::size_t>(k)]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

std::vector<CorrelationEntry> correlation_table(const std::vector<ExperimentRecord>& records, std::size_t min_records) {
    std::map<ModelKind, std::vector<const ExperimentRecord*>> by_model;
    for (const auto& r : records) by_model[r.model].push_back(&r);
    if (by_model.empty()) throw std::domain_error("correlation_table: no records");

    std::vector<CorrelationEntry> table;
    for (int f = 0; f < StructuralFeatures::kCount; ++f) {
        for (const auto& [kind, rows] : by_model) {
            if (rows.size() < min_records)
                throw std::domain_error("correlation_table: " + std::to_string(rows.size()) + " records for " +
                                        std::string(model_name(kind)) + ", need " + std::to_string(min_records));
            Eigen::VectorXd x(static_cast<Eigen::Index>(rows.size())), y(x.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                x[static_cast<Eigen::Index>(i)] = rows[i]->features.as_vector()[f];
                y[static_cast<Eigen::Index>(i)] = rows[i]->mrr;
            }
            CorrelationEntry e;
            e.feature = std::string(StructuralFeatures::kNames[static_cast<std::size_t>(f)]);
            e.model = kind;
            e.n = rows.size();
            try {
                e.pearson = pearson(x, y);
                e.spearman = spearman(x, y);
            } catch (const UndefinedCorrelation&) {
                e.pearson.reset();
                e.spearman.reset();
            }
            table.push_back(e);
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Response surface

Eigen::RowVectorXd QuadraticSurrogate::design_row(const Eigen::Ref<const Eigen::VectorXd>& z, Order order) {
    const Eigen::Index p = z.size();
    Eigen::Index terms = 1 + p;
    if (order != Order::linear) terms += p;
    if (order == Order::full_quadratic) terms += p * (p - 1) / 2;
    Eigen::RowVectorXd row(terms);
    Eigen::Index c = 0;
    row[c++] = 1.0;
    for (Eigen::Index i = 0; i < p; ++i) row[c++] = z[i];
    if (order != Order::linear)
        for (Eigen::Index i = 0; i < p; ++i) row[c++] = z[i] * z[i];
    if (order == Order::full_quadratic)
        for (Eigen::Index i = 0; i < p; ++i)
            for (Eigen::Index j = i + 1; j < p; ++j) row[c++] = z[i] * z[j];
    return row;
}

double QuadraticSurrogate::operator()(const Eigen::Ref<const Eigen::VectorXd>& features) const {
    if (features.size() != static_cast<Eigen::Index>(active_.size()))
        throw std::domain_error("surrogate: wrong feature count");
    Eigen::VectorXd z(static_cast<Eigen::Index>(active_index_.size()));
    for (std::size_t k = 0; k < active_index_.size(); ++k) {
        const auto i = active_index_[k];
        z[static_cast<Eigen::Index>(k)] = (features[i] - mean_[i]) / scale_[i];
    }
    return design_row(z, order_).dot(coefficients_);
}

QuadraticSurrogate fit_surrogate(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                                 double min_r2, std::optional<QuadraticSurrogate::Order> order) {
    using Order = QuadraticSurrogate::Order;
    const Eigen::Index n = x.rows(), dims = x.cols();
    if (y.size() != n) throw std::domain_error("fit_surrogate: row count mismatch");

    QuadraticSurrogate s;
    s.mean_ = x.colwise().mean().transpose();
    s.scale_.resize(dims);
    s.active_.assign(static_cast<std::size_t>(dims), false);
    for (Eigen::Index j = 0; j < dims; ++j) {
        const double sd = n > 1 ? std::sqrt((x.col(j).array() - s.mean_[j]).square().sum() / static_cast<double>(n - 1)) : 0.0;
        s.scale_[j] = sd > 0 ? sd : 1.0;
        if (sd > 1e-12 * std::max(1.0, std::abs(s.mean_[j]))) {
            s.active_[static_cast<std::size_t>(j)] = true;
            s.active_index_.push_back(j);
        }
    }
    const auto p = static_cast<Eigen::Index>(s.active_index_.size());
    const Eigen::Index full_terms = 1 + 2 * p + p * (p - 1) / 2;
    const Eigen::Index squares_terms = 1 + 2 * p;
    if (order) {
        s.order_ = *order;
    } else if (n >= std::max<Eigen::Index>(30, full_terms + 2)) {
        s.order_ = Order::full_quadratic;
    } else if (n >= squares_terms + 2) {
        s.order_ = Order::linear_squares;
    } else {
        s.order_ = Order::linear;
    }
    if (n < p + 3 || n < 10)
        throw std::domain_error("insufficient records for surrogate: " + std::to_string(n) + " rows");

    Eigen::MatrixXd design;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd z(p);
        for (Eigen::Index k = 0; k < p; ++k) {
            const auto j = s.active_index_[static_cast<std::size_t>(k)];
            z[k] = (x(i, j) - s.mean_[j]) / s.scale_[j];
        }
        const auto row = QuadraticSurrogate::design_row(z, s.order_);
        if (i == 0) design.resize(n, row.size());
        design.row(i) = row;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols())
        throw std::domain_error("fit_surrogate: rank-deficient design (rank " + std::to_string(qr.rank()) + " of " +
                                std::to_string(design.cols()) + "); add samples or remove features");
    s.coefficients_ = qr.solve(y);
    const double ss_res = (design * s.coefficients_ - y).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).square().sum();
    s.r2_ = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    if (s.r2_ < min_r2)
        throw std::domain_error("fit_surrogate: R^2 = " + std::to_string(s.r2_) + " below " + std::to_string(min_r2) +
                                "; surrogate untrustworthy for sensitivity analysis");
    return s;
}

namespace {

Eigen::MatrixXd feature_matrix(const std::vector<ExperimentRecord>& records) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), StructuralFeatures::kCount);
    for (std::size_t i = 0; i < records.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = records[i].features.as_vector();
    return x;
}

Eigen::VectorXd mrr_vector(const std::vector<ExperimentRecord>& records) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) y[static_cast<Eigen::Index>(i)] = records[i].mrr;
    return y;
}

}  // namespace

QuadraticSurrogate fit_surrogate(const std::vector<ExperimentRecord>& records, double min_r2) {
    return fit_surrogate(feature_matrix(records), mrr_vector(records), min_r2);
}

// ---------------------------------------------------------------------------
// Sobol indices

namespace {

struct SaltelliEvaluations {
    Eigen::VectorXd fa, fb;
    Eigen::MatrixXd fab, fba;  // N x D: A with column i from B, and B with column i from A
};

struct Estimates {
    Eigen::VectorXd s1, st;
    Eigen::MatrixXd s2;
    double variance = 0;
};

Estimates estimate(const SaltelliEvaluations& ev, const std::vector<Eigen::Index>& rows) {
    const Eigen::Index d = ev.fab.cols();
    const double n = static_cast<double>(rows.size());
    Estimates e;
    e.s1 = Eigen::VectorXd::Zero(d);
    e.st = Eigen::VectorXd::Zero(d);
    e.s2 = Eigen::MatrixXd::Constant(d, d, std::numeric_limits<double>::quiet_NaN());

    double sum = 0, sum_sq = 0, cross = 0;
    for (auto r : rows) {
        sum += ev.fa[r] + ev.fb[r];
        sum_sq += ev.fa[r] * ev.fa[r] + ev.fb[r] * ev.fb[r];
        cross += ev.fa[r] * ev.fb[r];
    }
    const double mean = sum / (2 * n);
    e.variance = sum_sq / (2 * n) - mean * mean;
    if (e.variance <= 1e-12) return e;

    for (Eigen::Index i = 0; i < d; ++i) {
        double first = 0, total = 0;
        for (auto r : rows) {
            first += ev.fb[r] * (ev.fab(r, i) - ev.fa[r]);
            const double diff = ev.fa[r] - ev.fab(r, i);
            total += diff * diff;
        }
        e.s1[i] = first / n / e.variance;
        e.st[i] = 0.5 * total / n / e.variance;
    }
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = i + 1; j < d; ++j) {
            double acc = 0;
            for (auto r : rows) acc += ev.fba(r, i) * ev.fab(r, j);
            const double vij = (acc - cross) / n / e.variance;
            e.s2(i, j) = e.s2(j, i) = vij - e.s1[i] - e.s1[j];
        }
    return e;
}

double percentile(std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

SobolResult sobol_indices(const ScalarFunction& f, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                          const SobolOptions& options) {
    const Eigen::Index d = lower.size();
    const int n = options.base_samples;
    if (d < 1 || upper.size() != d) throw std::domain_error("sobol_indices: bad domain");
    if (n < 64 || (n & (n - 1)) != 0) throw std::domain_error("sobol_indices: N must be a power of two >= 64");
    for (Eigen::Index i = 0; i < d; ++i)
        if (!(upper[i] > lower[i])) throw std::domain_error("sobol_indices: degenerate input range");

    // Base matrices from a 2D-dimensional Sobol sequence with a seeded digital shift.
    Rng rng(options.seed);
    std::vector<std::uint64_t> shift(static_cast<std::size_t>(2 * d));
    for (auto& s : shift) s = rng();
    boost::random::sobol qrng(static_cast<std::size_t>(2 * d));
    Eigen::MatrixXd a(n, d), b(n, d);
    for (int r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < 2 * d; ++c) {
            const std::uint64_t bits = static_cast<std::uint64_t>(qrng()) ^ shift[static_cast<std::size_t>(c)];
            const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
            const Eigen::Index col = c % d;
            const double x = lower[col] + (upper[col] - lower[col]) * u;
            (c < d ? a : b)(r, col) = x;
        }

    SaltelliEvaluations ev;
    ev.fa.resize(n);
    ev.fb.resize(n);
    ev.fab.resize(n, d);
    ev.fba.resize(n, d);
    Eigen::VectorXd point(d);
    for (int r = 0; r < n; ++r) {
        ev.fa[r] = f(a.row(r).transpose());
        ev.fb[r] = f(b.row(r).transpose());
        for (Eigen::Index i = 0; i < d; ++i) {
            point = a.row(r).transpose();
            point[i] = b(r, i);
            ev.fab(r, i) = f(point);
            point = b.row(r).transpose();
            point[i] = a(r, i);
            ev.fba(r, i) = f(point);
        }
    }

    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    const auto point_est = estimate(ev, all);

    SobolResult result;
    result.base_samples = n;
    result.variance = point_est.variance;
    result.s1 = point_est.s1;
    result.st = point_est.st;
    result.s2 = point_est.s2;
    result.s1_ci_low = result.s1_ci_high = result.s1;
    result.st_ci_low = result.st_ci_high = result.st;
    result.s2_ci_low = result.s2_ci_high = result.s2;
    if (point_est.variance <= 1e-12) {
        result.degenerate = true;
        result.s2 = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index i = 0; i < d; ++i) result.s2(i, i) = std::numeric_limits<double>::quiet_NaN();
        result.s2_ci_low = result.s2_ci_high = result.s2;
        result.caveats.push_back("output variance is zero; all indices reported as 0");
        return result;
    }

    const int reps = std::max(0, options.bootstrap);
    if (reps > 1) {
        Rng boot_rng(derive_seed(options.seed, "bootstrap"));
        std::vector<std::vector<double>> s1s(static_cast<std::size_t>(d)), sts(static_cast<std::size_t>(d));
        std::vector<std::vector<double>> s2s(static_cast<std::size_t>(d * d));
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
        for (int rep = 0; rep < reps; ++rep) {
            for (auto& r : rows) r = static_cast<Eigen::Index>(uniform_index(boot_rng, static_cast<std::uint64_t>(n)));
            const auto e = estimate(ev, rows);
            if (e.variance <= 1e-12) continue;
            for (Eigen::Index i = 0; i < d; ++i) {
                s1s[static_cast<std::size_t>(i)].push_back(e.s1[i]);
                sts[static_cast<std::size_t>(i)].push_back(e.st[i]);
                for (Eigen::Index j = 0; j < d; ++j)
                    if (i != j) s2s[static_cast<std::size_t>(i * d + j)].push_back(e.s2(i, j));
            }
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            auto& v1 = s1s[static_cast<std::size_t>(i)];
            auto& vt = sts[static_cast<std::size_t>(i)];
            if (v1.empty()) continue;
            result.s1_ci_low[i] = percentile(v1, 0.025);
            result.s1_ci_high[i] = percentile(v1, 0.975);
            result.st_ci_low[i] = percentile(vt, 0.025);
            result.st_ci_high[i] = percentile(vt, 0.975);
            for (Eigen::Index j = 0; j < d; ++j) {
                if (i == j) continue;
                auto& v2 = s2s[static_cast<std::size_t>(i * d + j)];
                result.s2_ci_low(i, j) = percentile(v2, 0.025);
                result.s2_ci_high(i, j) = percentile(v2, 0.975);
            }
        }
    }
    return result;
}

SobolResult sobol_over_records(const std::vector<ExperimentRecord>& records, const SobolOptions& options,
                               double min_r2) {
    if (records.empty()) throw std::domain_error("insufficient records for surrogate: 0 rows");
    for (const auto& r : records)
        if (r.model != records.front().model) throw std::domain_error("sobol_over_records: mixed model kinds");
    const auto x = feature_matrix(records);
    const auto surrogate = fit_surrogate(x, mrr_vector(records), min_r2);

    const Eigen::VectorXd lo = x.colwise().minCoeff().transpose();
    const Eigen::VectorXd hi = x.colwise().maxCoeff().transpose();
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (surrogate.active()[static_cast<std::size_t>(j)] && hi[j] > lo[j]) active.push_back(j);
    if (active.empty()) throw std::domain_error("sobol_over_records: every feature is constant");

    const auto p = static_cast<Eigen::Index>(active.size());
    Eigen::VectorXd sub_lo(p), sub_hi(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        sub_lo[k] = lo[active[static_cast<std::size_t>(k)]];
        sub_hi[k] = hi[active[static_cast<std::size_t>(k)]];
    }
    const Eigen::VectorXd fixed = lo;
    auto f = [&](const Eigen::Ref<const Eigen::VectorXd>& z) {
        Eigen::VectorXd full = fixed;
        for (Eigen::Index k = 0; k < p; ++k) full[active[static_cast<std::size_t>(k)]] = z[k];
        return surrogate(full);
    };
    const auto sub = sobol_indices(f, sub_lo, sub_hi, options);

    const Eigen::Index d = x.cols();
    SobolResult out;
    out.base_samples = sub.base_samples;
    out.variance = sub.variance;
    out.degenerate = sub.degenerate;
    out.caveats = sub.caveats;
    out.s1 = out.st = out.s1_ci_low = out.s1_ci_high = out.st_ci_low = out.st_ci_high = Eigen::VectorXd::Zero(d);
    out.s2 = out.s2_ci_low = out.s2_ci_high = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        out.s2(i, i) = out.s2_ci_low(i, i) = out.s2_ci_high(i, i) = std::numeric_limits<double>::quiet_NaN();
    for (Eigen::Index k = 0; k < p; ++k) {
        const auto i = active[static_cast<std::size_t>(k)];
        out.s1[i] = sub.s1[k];
        out.st[i] = sub.st[k];
        out.s1_ci_low[i] = sub.s1_ci_low[k];
        out.s1_ci_high[i] = sub.s1_ci_high[k];
        out.st_ci_low[i] = sub.st_ci_low[k];
        out.st_ci_high[i] = sub.st_ci_high[k];
        for (Eigen::Index m = 0; m < p; ++m) {
            if (m == k) continue;
            const auto j = active[static_cast<std::size_t>(m)];
            out.s2(i, j) = sub.s2(k, m);
            out.s2_ci_low(i, j) = sub.s2_ci_low(k, m);
            out.s2_ci_high(i, j) = sub.s2_ci_high(k, m);
        }
    }
    out.surrogate_r2 = surrogate.r2();
    out.caveats.push_back("indices describe a least-squares response surface (R^2 = " + std::to_string(surrogate.r2()) +
                          ") evaluated under independent uniform inputs over the observed feature box; "
                          "correlations between structural features are ignored");
    for (Eigen::Index j = 0; j < d; ++j)
        if (std::find(active.begin(), active.end(), j) == active.end())
            out.caveats.push_back(std::string(StructuralFeatures::kNames[static_cast<std::size_t>(j)]) +
                                  " is constant over the records; its indices are fixed at 0");
    return out;
}

}  // namespace kgstruct
