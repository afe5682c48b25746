#pragma once

// Parametric exponential-family members used as messages and marginals, and
// the algebra the engine needs on them: normalized products, moments,
// entropies, log-densities and Gaussian moment matching.
//
// All values are immutable after construction and every free function is
// pure.  Invalid parameters are rejected with std::invalid_argument; numeric
// outcomes that have no meaningful value (zero-measure products, undefined
// moments) are reported with DistributionError.

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace rmp {

/// A well-posed request whose mathematical answer does not exist
/// (e.g. the product of two disjoint point masses).
class DistributionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Family {
    PointMass,
    Gaussian,
    MvGaussian,
    Gamma,
    Beta,
    Bernoulli,
    Categorical,
    Dirichlet,
    MatrixDirichlet,
    Contingency,
    SampleGrid,
};

std::string_view family_name(Family f);
Family family_from_name(std::string_view name);

/// Dirac measure on a scalar (1x1), vector (n x 1) or matrix value.
class PointMass {
public:
    explicit PointMass(Eigen::MatrixXd value) : value_(std::move(value)) {}
    static PointMass scalar(double x) { return PointMass(Eigen::MatrixXd::Constant(1, 1, x)); }
    static PointMass vector(const Eigen::VectorXd& v) { return PointMass(Eigen::MatrixXd(v)); }

    const Eigen::MatrixXd& value() const noexcept { return value_; }
    bool is_scalar() const noexcept { return value_.size() == 1; }
    double scalar_value() const;
    Eigen::VectorXd vector_value() const;

private:
    Eigen::MatrixXd value_;
};

enum class GaussianForm { MeanVariance, MeanPrecision, WeightedMeanPrecision };

/// Univariate Gaussian in one of three parametrizations.  The weighted-mean-
/// precision form also admits precision 0, the flat (improper) message.
class Gaussian {
public:
    static Gaussian mean_variance(double mean, double variance);
    static Gaussian mean_precision(double mean, double precision);
    static Gaussian weighted_mean_precision(double weighted_mean, double precision);

    GaussianForm form() const noexcept { return form_; }
    double mean() const;
    double variance() const;
    double precision() const;
    double weighted_mean() const;
    bool proper() const noexcept { return precision() > 0.0; }
    Gaussian as(GaussianForm form) const;

private:
    Gaussian(GaussianForm form, double a, double b) : form_(form), a_(a), b_(b) {}
    GaussianForm form_;
    double a_;
    double b_;
};

enum class MvGaussianForm { MeanCovariance, WeightedMeanPrecision };

/// Multivariate Gaussian.  Messages may be improper in canonical form
/// (positive semi-definite precision), marginals are always proper.
class MvGaussian {
public:
    static MvGaussian mean_covariance(Eigen::VectorXd mean, Eigen::MatrixXd covariance);
    static MvGaussian weighted_mean_precision(Eigen::VectorXd weighted_mean, Eigen::MatrixXd precision);

    MvGaussianForm form() const noexcept { return form_; }
    Eigen::Index dim() const noexcept { return vec_.size(); }
    Eigen::VectorXd mean() const;
    Eigen::MatrixXd covariance() const;
    Eigen::MatrixXd precision() const;
    Eigen::VectorXd weighted_mean() const;
    bool proper() const;

private:
    MvGaussian(MvGaussianForm form, Eigen::VectorXd v, Eigen::MatrixXd m)
        : form_(form), vec_(std::move(v)), mat_(std::move(m)) {}
    MvGaussianForm form_;
    Eigen::VectorXd vec_;
    Eigen::MatrixXd mat_;
};

struct Gamma {
    Gamma(double shape, double rate);
    double shape;
    double rate;
};

struct Beta {
    Beta(double a, double b);
    double a;
    double b;
};

struct Bernoulli {
    explicit Bernoulli(double p);
    double p;
};

struct Categorical {
    /// `p` must be nonnegative with positive sum; it is normalized.
    explicit Categorical(Eigen::VectorXd p);
    /// Builds from unnormalized log-probabilities (log-space normalization).
    static Categorical from_log(const Eigen::VectorXd& logp);
    Eigen::VectorXd p;
};

struct Dirichlet {
    explicit Dirichlet(Eigen::VectorXd alpha);
    Eigen::VectorXd alpha;
};

/// Independent Dirichlet per column; column j describes p(. | j).
struct MatrixDirichlet {
    explicit MatrixDirichlet(Eigen::MatrixXd alpha);
    Eigen::MatrixXd alpha;
};

/// Joint distribution of two categorical variables, p(i, j).
struct Contingency {
    explicit Contingency(Eigen::MatrixXd p);
    static Contingency from_log(const Eigen::MatrixXd& logp);
    Eigen::MatrixXd p;
};

/// Density tabulated on an equispaced grid.  Log-weights are normalized so
/// that the weights sum to one.
struct SampleGrid {
    static constexpr int kDefaultPoints = 1001;
    SampleGrid(Eigen::VectorXd points, const Eigen::VectorXd& log_weights);
    /// Tabulates `log_density` on `n` points spanning [lo, hi].
    template <class F>
    static SampleGrid tabulate(double lo, double hi, F log_density, int n = kDefaultPoints) {
        Eigen::VectorXd pts = Eigen::VectorXd::LinSpaced(n, lo, hi);
        Eigen::VectorXd lw(n);
        for (int i = 0; i < n; ++i) lw[i] = log_density(pts[i]);
        return SampleGrid(std::move(pts), lw);
    }
    Eigen::VectorXd weights() const { return log_weights.array().exp(); }
    double spacing() const { return points.size() > 1 ? points[1] - points[0] : 1.0; }

    Eigen::VectorXd points;
    Eigen::VectorXd log_weights;
};

using Distribution = std::variant<PointMass, Gaussian, MvGaussian, Gamma, Beta, Bernoulli, Categorical,
                                  Dirichlet, MatrixDirichlet, Contingency, SampleGrid>;

Family family(const Distribution& d);
std::string describe(const Distribution& d);

/// Normalized product of two densities over the same variable.
Distribution multiply_and_normalize(const Distribution& a, const Distribution& b);

double entropy(const Distribution& q);

// Moments.  Scalars come back as 1x1, vectors as n x 1.
Eigen::MatrixXd mean(const Distribution& q);
Eigen::MatrixXd cov(const Distribution& q);
Eigen::MatrixXd precision(const Distribution& q);
Eigen::MatrixXd mode(const Distribution& q);
double mean_value(const Distribution& q);
double variance_value(const Distribution& q);

/// E[log theta] elementwise: psi(alpha_i) - psi(sum alpha) (column-wise for
/// MatrixDirichlet).  PointMass matrices yield their elementwise log.
Eigen::MatrixXd expectation_log(const Distribution& q);

/// E[log x] for positive scalar families (Gamma, PointMass).
double expectation_log_scalar(const Distribution& q);

/// Gaussian with the first two moments of `q`.
Distribution moment_match_gaussian(const Distribution& q);

/// log density / mass; -infinity outside the support.
double log_pdf(const Distribution& q, const Eigen::MatrixXd& x);
double log_pdf(const Distribution& q, double x);

/// Symmetrizes and clamps eigenvalues below `floor` to `floor`.
Eigen::MatrixXd nearest_spd(const Eigen::MatrixXd& m, double floor = 1e-12);

namespace numeric {
double log_sum_exp(const Eigen::VectorXd& v);
double digamma(double x);
double log_beta(const Eigen::VectorXd& alpha);
}  // namespace numeric

}  // namespace rmp
