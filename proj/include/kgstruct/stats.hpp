#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kgstruct/features.hpp"
#include "kgstruct/kge.hpp"
#include "kgstruct/random.hpp"

namespace kgstruct {

class UndefinedCorrelation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Sample Pearson correlation. Requires equal lengths >= 3 and non-constant inputs.
template <typename DerivedX, typename DerivedY>
double pearson(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
    if (x.size() != y.size() || x.size() < 3) throw std::domain_error("pearson: need equal lengths >= 3");
    const Eigen::ArrayXd xc = x.template cast<double>().array() - x.template cast<double>().mean();
    const Eigen::ArrayXd yc = y.template cast<double>().array() - y.template cast<double>().mean();
    const double sxx = xc.square().sum(), syy = yc.square().sum();
    if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("pearson: constant input");
    const double r = (xc * yc).sum() / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

/// 1-based ranks; tied values share the mean of their rank range.
Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& x);

template <typename DerivedX, typename DerivedY>
double spearman(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
    if (x.size() != y.size() || x.size() < 3) throw std::domain_error("spearman: need equal lengths >= 3");
    return pearson(average_ranks(x.template cast<double>()), average_ranks(y.template cast<double>()));
}

struct ExperimentRecord {
    std::size_t sample_index = 0;
    StructuralFeatures features;
    ModelKind model = ModelKind::transe;
    double mrr = 0;
};

struct CorrelationEntry {
    std::string feature;
    ModelKind model = ModelKind::transe;
    std::optional<double> pearson;   // empty when undefined (constant column)
    std::optional<double> spearman;
    std::size_t n = 0;
};

/// Pearson and Spearman of every feature against MRR, per model kind.
/// Needs at least `min_records` records for each model kind present.
std::vector<CorrelationEntry> correlation_table(const std::vector<ExperimentRecord>& records,
                                                std::size_t min_records = 10);

/// Least-squares response surface over standardised features. Terms: an
/// intercept, linear terms, then (when enough records) squares and pairwise
/// interactions. Constant features are dropped.
class QuadraticSurrogate {
public:
    enum class Order { linear, linear_squares, full_quadratic };

    double operator()(const Eigen::Ref<const Eigen::VectorXd>& features) const;
    double r2() const { return r2_; }
    Order order() const { return order_; }
    const Eigen::VectorXd& coefficients() const { return coefficients_; }
    /// Which input columns take part in the fit.
    const std::vector<bool>& active() const { return active_; }
    Eigen::Index num_terms() const { return coefficients_.size(); }

    /// Feature row -> design row for the given active columns and order.
    static Eigen::RowVectorXd design_row(const Eigen::Ref<const Eigen::VectorXd>& z, Order order);

private:
    friend QuadraticSurrogate fit_surrogate(const Eigen::Ref<const Eigen::MatrixXd>&,
                                            const Eigen::Ref<const Eigen::VectorXd>&, double,
                                            std::optional<QuadraticSurrogate::Order>);
    Eigen::VectorXd mean_, scale_;
    std::vector<bool> active_;
    std::vector<Eigen::Index> active_index_;
    Order order_ = Order::linear;
    Eigen::VectorXd coefficients_;
    double r2_ = 0;
};

/// Rows of `x` are observations. Order defaults to the richest one the record
/// count supports (full quadratic from 30 records; linear+squares needs
/// 2p+3; otherwise linear). Throws when R^2 < min_r2 or the design is rank
/// deficient.
QuadraticSurrogate fit_surrogate(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                                 double min_r2 = 0.3,
                                 std::optional<QuadraticSurrogate::Order> order = std::nullopt);
QuadraticSurrogate fit_surrogate(const std::vector<ExperimentRecord>& records, double min_r2 = 0.3);

struct SobolOptions {
    int base_samples = 1 << 12;  // N, power of two >= 64
    int bootstrap = 200;
    std::uint64_t seed = 0;
};

struct SobolResult {
    Eigen::VectorXd s1, st;
    Eigen::MatrixXd s2;  // symmetric; diagonal NaN
    Eigen::VectorXd s1_ci_low, s1_ci_high, st_ci_low, st_ci_high;
    Eigen::MatrixXd s2_ci_low, s2_ci_high;
    int base_samples = 0;
    double variance = 0;
    bool degenerate = false;
    std::optional<double> surrogate_r2;
    std::vector<std::string> caveats;

    double s1_half_width(Eigen::Index i) const { return 0.5 * (s1_ci_high[i] - s1_ci_low[i]); }
    double st_half_width(Eigen::Index i) const { return 0.5 * (st_ci_high[i] - st_ci_low[i]); }
};

using ScalarFunction = std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)>;

/// Saltelli cross-sampling on independent uniform inputs over `lower`..`upper`.
/// S1: Saltelli 2010; ST: Jansen; S2: closed second-order cross estimator.
/// Base points come from a digitally shifted Sobol sequence; confidence
/// intervals are bootstrap percentiles over resampled rows.
SobolResult sobol_indices(const ScalarFunction& f, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                          const SobolOptions& options);

/// Fits the surrogate and decomposes it over the observed feature box.
SobolResult sobol_over_records(const std::vector<ExperimentRecord>& records, const SobolOptions& options,
                               double min_r2 = 0.3);

}  // namespace kgstruct
