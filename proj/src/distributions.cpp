#include "rmp/distributions.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

namespace rmp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

bool finite(double x) { return std::isfinite(x); }

bool all_positive_finite(const Eigen::MatrixXd& m) {
    return m.size() > 0 && (m.array() > 0.0).all() && m.allFinite();
}

Eigen::MatrixXd scalar_matrix(double x) { return Eigen::MatrixXd::Constant(1, 1, x); }

Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& m, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw DistributionError(what);
    return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

double log_det_spd(const Eigen::MatrixXd& m) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw DistributionError("matrix is not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Eigen::VectorXd digamma_vec(const Eigen::VectorXd& a) {
    Eigen::VectorXd out(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) out[i] = numeric::digamma(a[i]);
    return out;
}

double dirichlet_entropy(const Eigen::VectorXd& alpha) {
    const double a0 = alpha.sum();
    const auto k = static_cast<double>(alpha.size());
    double h = numeric::log_beta(alpha) + (a0 - k) * numeric::digamma(a0);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) h -= (alpha[i] - 1.0) * numeric::digamma(alpha[i]);
    return h;
}

double dirichlet_log_pdf(const Eigen::VectorXd& alpha, const Eigen::VectorXd& x) {
    if (x.size() != alpha.size()) throw std::invalid_argument("Dirichlet log_pdf dimension mismatch");
    if ((x.array() < 0.0).any() || std::abs(x.sum() - 1.0) > 1e-9) return -kInf;
    double lp = -numeric::log_beta(alpha);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) {
            if (alpha[i] > 1.0) return -kInf;
            if (alpha[i] < 1.0) return kInf;
            continue;
        }
        lp += (alpha[i] - 1.0) * std::log(x[i]);
    }
    return lp;
}

double discrete_entropy(const Eigen::ArrayXd& p) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    }
    return h;
}

struct Support {
    double lo;
    double hi;
};

// Scalar continuous families eligible for the grid fallback.
std::optional<Support> scalar_support(const Distribution& d) {
    switch (family(d)) {
        case Family::Gaussian: return Support{-kInf, kInf};
        case Family::Gamma: return Support{0.0, kInf};
        case Family::Beta: return Support{0.0, 1.0};
        case Family::SampleGrid: {
            const auto& g = std::get<SampleGrid>(d);
            return Support{g.points[0], g.points[g.points.size() - 1]};
        }
        default: return std::nullopt;
    }
}

Distribution grid_product(const Distribution& a, const Distribution& b) {
    auto sa = scalar_support(a);
    auto sb = scalar_support(b);
    if (!sa || !sb) {
        throw std::invalid_argument("multiply_and_normalize: incompatible supports " +
                                    std::string(family_name(family(a))) + " x " +
                                    std::string(family_name(family(b))));
    }
    if (const auto* ga = std::get_if<SampleGrid>(&a)) {
        Eigen::VectorXd lw = ga->log_weights;
        for (Eigen::Index i = 0; i < lw.size(); ++i) lw[i] += log_pdf(b, ga->points[i]);
        if (!std::isfinite(numeric::log_sum_exp(lw))) throw DistributionError("zero-measure product");
        return SampleGrid(ga->points, lw);
    }
    if (std::holds_alternative<SampleGrid>(b)) return grid_product(b, a);

    double lo = std::max(sa->lo, sb->lo);
    double hi = std::min(sa->hi, sb->hi);
    if (!(lo < hi)) throw DistributionError("zero-measure product: disjoint supports");
    // Window: union of +-12 sd around each operand, clipped to the joint support.
    double wlo = kInf;
    double whi = -kInf;
    for (const Distribution* d : {&a, &b}) {
        const double m = mean_value(*d);
        const double s = std::sqrt(variance_value(*d));
        wlo = std::min(wlo, m - 12.0 * s);
        whi = std::max(whi, m + 12.0 * s);
    }
    lo = std::max(lo, wlo);
    hi = std::min(hi, whi);
    const double pad = 1e-9 * (hi - lo);
    if (std::isfinite(sa->lo) || std::isfinite(sb->lo)) lo += pad;
    if (std::isfinite(sa->hi) || std::isfinite(sb->hi)) hi -= pad;
    auto grid = SampleGrid::tabulate(lo, hi, [&](double x) { return log_pdf(a, x) + log_pdf(b, x); });
    return grid;
}

}  // namespace

// ---------------------------------------------------------------------------
// numeric helpers

namespace numeric {

double log_sum_exp(const Eigen::VectorXd& v) {
    if (v.size() == 0) return -kInf;
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

double digamma(double x) { return boost::math::digamma(x); }

double log_beta(const Eigen::VectorXd& alpha) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < alpha.size(); ++i) s += std::lgamma(alpha[i]);
    return s - std::lgamma(alpha.sum());
}

}  // namespace numeric

// ---------------------------------------------------------------------------
// family names

std::string_view family_name(Family f) {
    switch (f) {
        case Family::PointMass: return "PointMass";
        case Family::Gaussian: return "Gaussian";
        case Family::MvGaussian: return "MvGaussian";
        case Family::Gamma: return "Gamma";
        case Family::Beta: return "Beta";
        case Family::Bernoulli: return "Bernoulli";
        case Family::Categorical: return "Categorical";
        case Family::Dirichlet: return "Dirichlet";
        case Family::MatrixDirichlet: return "MatrixDirichlet";
        case Family::Contingency: return "Contingency";
        case Family::SampleGrid: return "SampleGrid";
    }
    return "?";
}

Family family_from_name(std::string_view name) {
    for (int i = 0; i <= static_cast<int>(Family::SampleGrid); ++i) {
        auto f = static_cast<Family>(i);
        if (family_name(f) == name) return f;
    }
    throw std::invalid_argument("unknown distribution family '" + std::string(name) + "'");
}

Family family(const Distribution& d) { return static_cast<Family>(d.index()); }

// ---------------------------------------------------------------------------
// constructors / accessors

double PointMass::scalar_value() const {
    if (!is_scalar()) throw std::invalid_argument("PointMass is not scalar");
    return value_(0, 0);
}

Eigen::VectorXd PointMass::vector_value() const {
    if (value_.cols() != 1) throw std::invalid_argument("PointMass is not a vector");
    return value_.col(0);
}

Gaussian Gaussian::mean_variance(double mean, double variance) {
    require(finite(mean) && finite(variance) && variance > 0.0, "Gaussian requires finite mean and variance > 0");
    return Gaussian(GaussianForm::MeanVariance, mean, variance);
}

Gaussian Gaussian::mean_precision(double mean, double precision) {
    require(finite(mean) && finite(precision) && precision > 0.0,
            "Gaussian requires finite mean and precision > 0");
    return Gaussian(GaussianForm::MeanPrecision, mean, precision);
}

Gaussian Gaussian::weighted_mean_precision(double weighted_mean, double precision) {
    require(finite(weighted_mean) && finite(precision) && precision >= 0.0,
            "Gaussian requires finite weighted mean and precision >= 0");
    return Gaussian(GaussianForm::WeightedMeanPrecision, weighted_mean, precision);
}

double Gaussian::mean() const {
    switch (form_) {
        case GaussianForm::MeanVariance:
        case GaussianForm::MeanPrecision: return a_;
        case GaussianForm::WeightedMeanPrecision:
            if (b_ <= 0.0) throw DistributionError("mean of an improper Gaussian");
            return a_ / b_;
    }
    return a_;
}

double Gaussian::variance() const {
    if (form_ == GaussianForm::MeanVariance) return b_;
    if (b_ <= 0.0) throw DistributionError("variance of an improper Gaussian");
    return 1.0 / b_;
}

double Gaussian::precision() const { return form_ == GaussianForm::MeanVariance ? 1.0 / b_ : b_; }

double Gaussian::weighted_mean() const {
    switch (form_) {
        case GaussianForm::MeanVariance: return a_ / b_;
        case GaussianForm::MeanPrecision: return a_ * b_;
        case GaussianForm::WeightedMeanPrecision: return a_;
    }
    return a_;
}

Gaussian Gaussian::as(GaussianForm form) const {
    if (form == form_) return *this;
    switch (form) {
        case GaussianForm::MeanVariance: return mean_variance(mean(), variance());
        case GaussianForm::MeanPrecision: return mean_precision(mean(), precision());
        case GaussianForm::WeightedMeanPrecision: return weighted_mean_precision(weighted_mean(), precision());
    }
    return *this;
}

MvGaussian MvGaussian::mean_covariance(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
    require(mean.size() >= 1 && covariance.rows() == mean.size() && covariance.cols() == mean.size(),
            "MvGaussian dimension mismatch");
    require(mean.allFinite() && covariance.allFinite(), "MvGaussian parameters must be finite");
    return MvGaussian(MvGaussianForm::MeanCovariance, std::move(mean), std::move(covariance));
}

MvGaussian MvGaussian::weighted_mean_precision(Eigen::VectorXd weighted_mean, Eigen::MatrixXd precision) {
    require(weighted_mean.size() >= 1 && precision.rows() == weighted_mean.size() &&
                precision.cols() == weighted_mean.size(),
            "MvGaussian dimension mismatch");
    require(weighted_mean.allFinite() && precision.allFinite(), "MvGaussian parameters must be finite");
    return MvGaussian(MvGaussianForm::WeightedMeanPrecision, std::move(weighted_mean), std::move(precision));
}

Eigen::VectorXd MvGaussian::mean() const {
    if (form_ == MvGaussianForm::MeanCovariance) return vec_;
    Eigen::LLT<Eigen::MatrixXd> llt(mat_);
    if (llt.info() != Eigen::Success) throw DistributionError("mean of an improper MvGaussian");
    return llt.solve(vec_);
}

Eigen::MatrixXd MvGaussian::covariance() const {
    if (form_ == MvGaussianForm::MeanCovariance) return mat_;
    return inverse_spd(mat_, "covariance of an improper MvGaussian");
}

Eigen::MatrixXd MvGaussian::precision() const {
    if (form_ == MvGaussianForm::WeightedMeanPrecision) return mat_;
    return inverse_spd(mat_, "covariance is not positive definite");
}

Eigen::VectorXd MvGaussian::weighted_mean() const {
    if (form_ == MvGaussianForm::WeightedMeanPrecision) return vec_;
    Eigen::LLT<Eigen::MatrixXd> llt(mat_);
    if (llt.info() != Eigen::Success) throw DistributionError("covariance is not positive definite");
    return llt.solve(vec_);
}

bool MvGaussian::proper() const {
    Eigen::LLT<Eigen::MatrixXd> llt(mat_);
    return llt.info() == Eigen::Success;
}

Gamma::Gamma(double shape_, double rate_) : shape(shape_), rate(rate_) {
    require(finite(shape) && finite(rate) && shape > 0.0 && rate > 0.0, "Gamma requires shape > 0 and rate > 0");
}

Beta::Beta(double a_, double b_) : a(a_), b(b_) {
    require(finite(a) && finite(b) && a > 0.0 && b > 0.0, "Beta requires a > 0 and b > 0");
}

Bernoulli::Bernoulli(double p_) : p(p_) {
    require(p >= 0.0 && p <= 1.0, "Bernoulli requires p in [0, 1]");
}

Categorical::Categorical(Eigen::VectorXd p_) : p(std::move(p_)) {
    require(p.size() >= 1 && p.allFinite() && (p.array() >= 0.0).all(), "Categorical requires p >= 0");
    const double s = p.sum();
    require(s > 0.0, "Categorical requires a positive total mass");
    p /= s;
}

Categorical Categorical::from_log(const Eigen::VectorXd& logp) {
    const double z = numeric::log_sum_exp(logp);
    if (!std::isfinite(z)) throw DistributionError("Categorical with zero total mass");
    return Categorical((logp.array() - z).exp().matrix());
}

Dirichlet::Dirichlet(Eigen::VectorXd alpha_) : alpha(std::move(alpha_)) {
    require(all_positive_finite(alpha), "Dirichlet requires positive concentrations");
}

MatrixDirichlet::MatrixDirichlet(Eigen::MatrixXd alpha_) : alpha(std::move(alpha_)) {
    require(all_positive_finite(alpha), "MatrixDirichlet requires positive concentrations");
}

Contingency::Contingency(Eigen::MatrixXd p_) : p(std::move(p_)) {
    require(p.size() >= 1 && p.allFinite() && (p.array() >= 0.0).all(), "Contingency requires p >= 0");
    const double s = p.sum();
    require(s > 0.0, "Contingency requires a positive total mass");
    p /= s;
}

Contingency Contingency::from_log(const Eigen::MatrixXd& logp) {
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(logp.data(), logp.size());
    const double z = numeric::log_sum_exp(flat);
    if (!std::isfinite(z)) throw DistributionError("Contingency with zero total mass");
    return Contingency((logp.array() - z).exp().matrix());
}

SampleGrid::SampleGrid(Eigen::VectorXd points_, const Eigen::VectorXd& lw) : points(std::move(points_)) {
    require(points.size() >= 2 && lw.size() == points.size(), "SampleGrid requires >= 2 points and matching weights");
    const double z = numeric::log_sum_exp(lw);
    if (!std::isfinite(z)) throw DistributionError("SampleGrid weights are not normalizable");
    log_weights = lw.array() - z;
}

// ---------------------------------------------------------------------------

std::string describe(const Distribution& d) {
    std::ostringstream os;
    os.precision(6);
    const Eigen::IOFormat fmt(6, Eigen::DontAlignCols, ", ", "; ", "", "", "[", "]");
    std::visit(overloaded{
                   [&](const PointMass& x) { os << "PointMass(" << x.value().format(fmt) << ")"; },
                   [&](const Gaussian& g) {
                       if (g.proper()) os << "Gaussian(mean=" << g.mean() << ", var=" << g.variance() << ")";
                       else os << "Gaussian(xi=" << g.weighted_mean() << ", w=" << g.precision() << ")";
                   },
                   [&](const MvGaussian& g) {
                       if (g.form() == MvGaussianForm::MeanCovariance)
                           os << "MvGaussian(mean=" << g.mean().transpose().format(fmt)
                              << ", cov=" << g.covariance().format(fmt) << ")";
                       else
                           os << "MvGaussian(xi=" << g.weighted_mean().transpose().format(fmt)
                              << ", W=" << g.precision().format(fmt) << ")";
                   },
                   [&](const Gamma& g) { os << "Gamma(shape=" << g.shape << ", rate=" << g.rate << ")"; },
                   [&](const Beta& b) { os << "Beta(" << b.a << ", " << b.b << ")"; },
                   [&](const Bernoulli& b) { os << "Bernoulli(" << b.p << ")"; },
                   [&](const Categorical& c) { os << "Categorical(" << c.p.transpose().format(fmt) << ")"; },
                   [&](const Dirichlet& c) { os << "Dirichlet(" << c.alpha.transpose().format(fmt) << ")"; },
                   [&](const MatrixDirichlet& c) { os << "MatrixDirichlet(" << c.alpha.format(fmt) << ")"; },
                   [&](const Contingency& c) { os << "Contingency(" << c.p.format(fmt) << ")"; },
                   [&](const SampleGrid& g) {
                       os << "SampleGrid(" << g.points.size() << " points on [" << g.points[0] << ", "
                          << g.points[g.points.size() - 1] << "])";
                   },
               },
               d);
    return os.str();
}

// ---------------------------------------------------------------------------
// products

Distribution multiply_and_normalize(const Distribution& a, const Distribution& b) {
    if (const auto* pa = std::get_if<PointMass>(&a)) {
        if (const auto* pb = std::get_if<PointMass>(&b)) {
            if (pa->value().rows() != pb->value().rows() || pa->value().cols() != pb->value().cols())
                throw std::invalid_argument("multiply_and_normalize: point masses of different shape");
            if (pa->value() != pb->value()) throw DistributionError("zero-measure product of disjoint point masses");
            return *pa;
        }
        if (!(log_pdf(b, pa->value()) > -kInf)) throw DistributionError("point mass outside the support of its partner");
        return *pa;
    }
    if (std::holds_alternative<PointMass>(b)) return multiply_and_normalize(b, a);

    if (family(a) != family(b)) return grid_product(a, b);

    return std::visit(
        overloaded{
            [&](const Gaussian& x) -> Distribution {
                const auto& y = std::get<Gaussian>(b);
                return Gaussian::weighted_mean_precision(x.weighted_mean() + y.weighted_mean(),
                                                         x.precision() + y.precision());
            },
            [&](const MvGaussian& x) -> Distribution {
                const auto& y = std::get<MvGaussian>(b);
                if (x.dim() != y.dim()) throw std::invalid_argument("multiply_and_normalize: MvGaussian dimension mismatch");
                Eigen::MatrixXd w = x.precision() + y.precision();
                w = 0.5 * (w + w.transpose());
                return MvGaussian::weighted_mean_precision(x.weighted_mean() + y.weighted_mean(), std::move(w));
            },
            [&](const Gamma& x) -> Distribution {
                const auto& y = std::get<Gamma>(b);
                const double shape = x.shape + y.shape - 1.0;
                if (shape <= 0.0) throw DistributionError("Gamma product is not normalizable");
                return Gamma(shape, x.rate + y.rate);
            },
            [&](const Beta& x) -> Distribution {
                const auto& y = std::get<Beta>(b);
                const double pa = x.a + y.a - 1.0;
                const double pb = x.b + y.b - 1.0;
                if (pa <= 0.0 || pb <= 0.0) throw DistributionError("Beta product is not normalizable");
                return Beta(pa, pb);
            },
            [&](const Bernoulli& x) -> Distribution {
                const auto& y = std::get<Bernoulli>(b);
                const double on = x.p * y.p;
                const double off = (1.0 - x.p) * (1.0 - y.p);
                if (on + off <= 0.0) throw DistributionError("zero-measure Bernoulli product");
                return Bernoulli(on / (on + off));
            },
            [&](const Categorical& x) -> Distribution {
                const auto& y = std::get<Categorical>(b);
                if (x.p.size() != y.p.size()) throw std::invalid_argument("multiply_and_normalize: Categorical size mismatch");
                return Categorical::from_log(x.p.array().log() + y.p.array().log());
            },
            [&](const Dirichlet& x) -> Distribution {
                const auto& y = std::get<Dirichlet>(b);
                if (x.alpha.size() != y.alpha.size()) throw std::invalid_argument("multiply_and_normalize: Dirichlet size mismatch");
                Eigen::VectorXd al = x.alpha + y.alpha - Eigen::VectorXd::Ones(x.alpha.size());
                if ((al.array() <= 0.0).any()) throw DistributionError("Dirichlet product is not normalizable");
                return Dirichlet(std::move(al));
            },
            [&](const MatrixDirichlet& x) -> Distribution {
                const auto& y = std::get<MatrixDirichlet>(b);
                if (x.alpha.rows() != y.alpha.rows() || x.alpha.cols() != y.alpha.cols())
                    throw std::invalid_argument("multiply_and_normalize: MatrixDirichlet shape mismatch");
                Eigen::MatrixXd al = x.alpha.array() + y.alpha.array() - 1.0;
                if ((al.array() <= 0.0).any()) throw DistributionError("MatrixDirichlet product is not normalizable");
                return MatrixDirichlet(std::move(al));
            },
            [&](const Contingency& x) -> Distribution {
                const auto& y = std::get<Contingency>(b);
                if (x.p.rows() != y.p.rows() || x.p.cols() != y.p.cols())
                    throw std::invalid_argument("multiply_and_normalize: Contingency shape mismatch");
                return Contingency::from_log(x.p.array().log() + y.p.array().log());
            },
            [&](const SampleGrid& x) -> Distribution {
                const auto& y = std::get<SampleGrid>(b);
                if (x.points.size() != y.points.size() || !x.points.isApprox(y.points))
                    return grid_product(a, b);
                return SampleGrid(x.points, x.log_weights + y.log_weights);
            },
            [&](const PointMass&) -> Distribution { return a; },
        },
        a);
}

// ---------------------------------------------------------------------------
// entropy

double entropy(const Distribution& q) {
    return std::visit(
        overloaded{
            [](const PointMass&) { return 0.0; },
            [](const Gaussian& g) {
                if (!g.proper()) throw DistributionError("entropy of an improper Gaussian");
                return 0.5 * (kLog2Pi + 1.0 - std::log(g.precision()));
            },
            [](const MvGaussian& g) {
                const auto d = static_cast<double>(g.dim());
                double logdet;
                if (g.form() == MvGaussianForm::MeanCovariance) logdet = log_det_spd(g.covariance());
                else logdet = -log_det_spd(g.precision());
                return 0.5 * (d * (kLog2Pi + 1.0) + logdet);
            },
            [](const Gamma& g) {
                const double k = g.shape;
                return k - std::log(g.rate) + std::lgamma(k) + (1.0 - k) * numeric::digamma(k);
            },
            [](const Beta& b) {
                return numeric::log_beta(Eigen::Vector2d(b.a, b.b)) - (b.a - 1.0) * numeric::digamma(b.a) -
                       (b.b - 1.0) * numeric::digamma(b.b) + (b.a + b.b - 2.0) * numeric::digamma(b.a + b.b);
            },
            [](const Bernoulli& b) { return discrete_entropy(Eigen::Array2d(b.p, 1.0 - b.p)); },
            [](const Categorical& c) { return discrete_entropy(c.p.array()); },
            [](const Dirichlet& d) { return dirichlet_entropy(d.alpha); },
            [](const MatrixDirichlet& d) {
                double h = 0.0;
                for (Eigen::Index j = 0; j < d.alpha.cols(); ++j) h += dirichlet_entropy(d.alpha.col(j));
                return h;
            },
            [](const Contingency& c) { return discrete_entropy(c.p.reshaped().array()); },
            [](const SampleGrid& g) {
                // Differential entropy of the piecewise-constant density.
                return discrete_entropy(g.weights().array()) + std::log(g.spacing());
            },
        },
        q);
}

// ---------------------------------------------------------------------------
// moments

Eigen::MatrixXd mean(const Distribution& q) {
    return std::visit(
        overloaded{
            [](const PointMass& x) -> Eigen::MatrixXd { return x.value(); },
            [](const Gaussian& g) -> Eigen::MatrixXd { return scalar_matrix(g.mean()); },
            [](const MvGaussian& g) -> Eigen::MatrixXd { return g.mean(); },
            [](const Gamma& g) -> Eigen::MatrixXd { return scalar_matrix(g.shape / g.rate); },
            [](const Beta& b) -> Eigen::MatrixXd { return scalar_matrix(b.a / (b.a + b.b)); },
            [](const Bernoulli& b) -> Eigen::MatrixXd { return scalar_matrix(b.p); },
            [](const Categorical& c) -> Eigen::MatrixXd { return c.p; },
            [](const Dirichlet& d) -> Eigen::MatrixXd { return d.alpha / d.alpha.sum(); },
            [](const MatrixDirichlet& d) -> Eigen::MatrixXd {
                return d.alpha.array().rowwise() / d.alpha.colwise().sum().array();
            },
            [](const Contingency& c) -> Eigen::MatrixXd { return c.p; },
            [](const SampleGrid& g) -> Eigen::MatrixXd { return scalar_matrix(g.weights().dot(g.points)); },
        },
        q);
}

Eigen::MatrixXd cov(const Distribution& q) {
    return std::visit(
        overloaded{
            [](const PointMass& x) -> Eigen::MatrixXd {
                if (x.value().cols() != 1) throw DistributionError("covariance of a matrix-valued point mass");
                return Eigen::MatrixXd::Zero(x.value().rows(), x.value().rows());
            },
            [](const Gaussian& g) -> Eigen::MatrixXd { return scalar_matrix(g.variance()); },
            [](const MvGaussian& g) -> Eigen::MatrixXd { return g.covariance(); },
            [](const Gamma& g) -> Eigen::MatrixXd { return scalar_matrix(g.shape / (g.rate * g.rate)); },
            [](const Beta& b) -> Eigen::MatrixXd {
                const double s = b.a + b.b;
                return scalar_matrix(b.a * b.b / (s * s * (s + 1.0)));
            },
            [](const Bernoulli& b) -> Eigen::MatrixXd { return scalar_matrix(b.p * (1.0 - b.p)); },
            [](const Categorical& c) -> Eigen::MatrixXd {
                Eigen::MatrixXd m = c.p.asDiagonal();
                return m - c.p * c.p.transpose();
            },
            [](const Dirichlet& d) -> Eigen::MatrixXd {
                const double a0 = d.alpha.sum();
                Eigen::VectorXd m = d.alpha / a0;
                Eigen::MatrixXd c = m.asDiagonal();
                c -= m * m.transpose();
                return c / (a0 + 1.0);
            },
            [](const MatrixDirichlet&) -> Eigen::MatrixXd {
                throw DistributionError("covariance of a MatrixDirichlet is not a matrix");
            },
            [](const Contingency&) -> Eigen::MatrixXd {
                throw DistributionError("covariance of a Contingency table is not defined");
            },
            [](const SampleGrid& g) -> Eigen::MatrixXd {
                const Eigen::VectorXd w = g.weights();
                const double m = w.dot(g.points);
                return scalar_matrix(w.dot((g.points.array() - m).square().matrix()));
            },
        },
        q);
}

Eigen::MatrixXd precision(const Distribution& q) {
    if (const auto* g = std::get_if<Gaussian>(&q)) return scalar_matrix(g->precision());
    if (const auto* g = std::get_if<MvGaussian>(&q)) return g->precision();
    if (std::holds_alternative<PointMass>(q)) throw DistributionError("precision of a point mass is infinite");
    return inverse_spd(cov(q), "covariance is singular");
}

Eigen::MatrixXd mode(const Distribution& q) {
    return std::visit(
        overloaded{
            [](const PointMass& x) -> Eigen::MatrixXd { return x.value(); },
            [](const Gaussian& g) -> Eigen::MatrixXd { return scalar_matrix(g.mean()); },
            [](const MvGaussian& g) -> Eigen::MatrixXd { return g.mean(); },
            [](const Gamma& g) -> Eigen::MatrixXd {
                return scalar_matrix(g.shape >= 1.0 ? (g.shape - 1.0) / g.rate : 0.0);
            },
            [](const Beta& b) -> Eigen::MatrixXd {
                if (b.a > 1.0 && b.b > 1.0) return scalar_matrix((b.a - 1.0) / (b.a + b.b - 2.0));
                if (b.a <= 1.0 && b.b > 1.0) return scalar_matrix(0.0);
                if (b.a > 1.0 && b.b <= 1.0) return scalar_matrix(1.0);
                throw DistributionError("mode of Beta is not unique");
            },
            [](const Bernoulli& b) -> Eigen::MatrixXd {
                if (b.p == 0.5) throw DistributionError("mode of Bernoulli(0.5) is not unique");
                return scalar_matrix(b.p > 0.5 ? 1.0 : 0.0);
            },
            [](const Categorical& c) -> Eigen::MatrixXd {
                Eigen::Index i;
                c.p.maxCoeff(&i);
                Eigen::VectorXd e = Eigen::VectorXd::Zero(c.p.size());
                e[i] = 1.0;
                return e;
            },
            [](const Dirichlet& d) -> Eigen::MatrixXd {
                if ((d.alpha.array() <= 1.0).any()) throw DistributionError("Dirichlet mode requires all alpha > 1");
                return (d.alpha.array() - 1.0) / (d.alpha.sum() - static_cast<double>(d.alpha.size()));
            },
            [](const MatrixDirichlet& d) -> Eigen::MatrixXd {
                if ((d.alpha.array() <= 1.0).any()) throw DistributionError("MatrixDirichlet mode requires all alpha > 1");
                Eigen::MatrixXd m = d.alpha.array() - 1.0;
                return m.array().rowwise() / m.colwise().sum().array();
            },
            [](const Contingency& c) -> Eigen::MatrixXd {
                Eigen::Index i, j;
                c.p.maxCoeff(&i, &j);
                Eigen::MatrixXd m(2, 1);
                m << static_cast<double>(i), static_cast<double>(j);
                return m;
            },
            [](const SampleGrid& g) -> Eigen::MatrixXd {
                Eigen::Index i;
                g.log_weights.maxCoeff(&i);
                return scalar_matrix(g.points[i]);
            },
        },
        q);
}

double mean_value(const Distribution& q) {
    auto m = mean(q);
    if (m.size() != 1) throw std::invalid_argument("mean_value: distribution is not scalar");
    return m(0, 0);
}

double variance_value(const Distribution& q) {
    auto c = cov(q);
    if (c.size() != 1) throw std::invalid_argument("variance_value: distribution is not scalar");
    return c(0, 0);
}

Eigen::MatrixXd expectation_log(const Distribution& q) {
    if (const auto* d = std::get_if<Dirichlet>(&q)) {
        return digamma_vec(d->alpha).array() - numeric::digamma(d->alpha.sum());
    }
    if (const auto* d = std::get_if<MatrixDirichlet>(&q)) {
        Eigen::MatrixXd out(d->alpha.rows(), d->alpha.cols());
        for (Eigen::Index j = 0; j < d->alpha.cols(); ++j) {
            out.col(j) = digamma_vec(d->alpha.col(j)).array() - numeric::digamma(d->alpha.col(j).sum());
        }
        return out;
    }
    if (const auto* p = std::get_if<PointMass>(&q)) {
        return p->value().array().log();
    }
    throw std::invalid_argument("expectation_log requires Dirichlet, MatrixDirichlet or PointMass");
}

double expectation_log_scalar(const Distribution& q) {
    if (const auto* g = std::get_if<Gamma>(&q)) return numeric::digamma(g->shape) - std::log(g->rate);
    if (const auto* b = std::get_if<Beta>(&q)) return numeric::digamma(b->a) - numeric::digamma(b->a + b->b);
    if (const auto* p = std::get_if<PointMass>(&q)) return std::log(p->scalar_value());
    throw std::invalid_argument("expectation_log_scalar requires Gamma, Beta or PointMass");
}

Distribution moment_match_gaussian(const Distribution& q) {
    switch (family(q)) {
        case Family::Gaussian:
        case Family::MvGaussian: return q;
        case Family::Bernoulli:
        case Family::Categorical:
        case Family::Contingency:
        case Family::MatrixDirichlet:
            throw std::invalid_argument("moment_match_gaussian: " + std::string(family_name(family(q))) +
                                        " is not a continuous vector family");
        default: break;
    }
    const Eigen::MatrixXd m = mean(q);
    const Eigen::MatrixXd c = cov(q);
    if (!m.allFinite() || !c.allFinite()) throw DistributionError("moment matching: non-finite moments");
    if (m.size() == 1) {
        if (!(c(0, 0) > 0.0)) throw DistributionError("moment matching: degenerate variance");
        return Gaussian::mean_variance(m(0, 0), c(0, 0));
    }
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) throw DistributionError("moment matching: degenerate covariance");
    return MvGaussian::mean_covariance(m.col(0), c);
}

// ---------------------------------------------------------------------------
// log densities

double log_pdf(const Distribution& q, const Eigen::MatrixXd& x) {
    auto scalar_x = [&]() {
        if (x.size() != 1) throw std::invalid_argument("log_pdf: expected a scalar point");
        return x(0, 0);
    };
    return std::visit(
        overloaded{
            [&](const PointMass& p) -> double {
                if (p.value().rows() != x.rows() || p.value().cols() != x.cols()) return -kInf;
                return p.value() == x ? 0.0 : -kInf;
            },
            [&](const Gaussian& g) -> double {
                if (!g.proper()) throw DistributionError("log_pdf of an improper Gaussian");
                const double w = g.precision();
                const double r = scalar_x() - g.mean();
                return 0.5 * (std::log(w) - kLog2Pi) - 0.5 * w * r * r;
            },
            [&](const MvGaussian& g) -> double {
                if (x.rows() != g.dim() || x.cols() != 1) throw std::invalid_argument("log_pdf: MvGaussian dimension mismatch");
                const Eigen::MatrixXd w = g.precision();
                const Eigen::VectorXd r = x.col(0) - g.mean();
                const auto d = static_cast<double>(g.dim());
                return 0.5 * (log_det_spd(w) - d * kLog2Pi) - 0.5 * r.dot(w * r);
            },
            [&](const Gamma& g) -> double {
                const double v = scalar_x();
                if (v < 0.0) return -kInf;
                if (v == 0.0) {
                    if (g.shape < 1.0) return kInf;
                    if (g.shape > 1.0) return -kInf;
                    return std::log(g.rate);
                }
                return g.shape * std::log(g.rate) - std::lgamma(g.shape) + (g.shape - 1.0) * std::log(v) - g.rate * v;
            },
            [&](const Beta& b) -> double {
                const double v = scalar_x();
                if (v < 0.0 || v > 1.0) return -kInf;
                const double lb = numeric::log_beta(Eigen::Vector2d(b.a, b.b));
                double lp = -lb;
                if (v == 0.0) {
                    if (b.a != 1.0) return b.a < 1.0 ? kInf : -kInf;
                } else {
                    lp += (b.a - 1.0) * std::log(v);
                }
                if (v == 1.0) {
                    if (b.b != 1.0) return b.b < 1.0 ? kInf : -kInf;
                } else {
                    lp += (b.b - 1.0) * std::log1p(-v);
                }
                return lp;
            },
            [&](const Bernoulli& b) -> double {
                const double v = scalar_x();
                if (v == 1.0) return std::log(b.p);
                if (v == 0.0) return std::log1p(-b.p);
                return -kInf;
            },
            [&](const Categorical& c) -> double {
                if (x.size() == 1) {
                    const double idx = x(0, 0);
                    if (idx < 0 || idx >= static_cast<double>(c.p.size()) || idx != std::floor(idx)) return -kInf;
                    return std::log(c.p[static_cast<Eigen::Index>(idx)]);
                }
                if (x.cols() != 1 || x.rows() != c.p.size()) return -kInf;
                // One-hot encoded outcome.
                Eigen::Index hot = -1;
                for (Eigen::Index i = 0; i < x.rows(); ++i) {
                    if (x(i, 0) == 1.0 && hot < 0) hot = i;
                    else if (x(i, 0) != 0.0) return -kInf;
                }
                return hot < 0 ? -kInf : std::log(c.p[hot]);
            },
            [&](const Dirichlet& d) -> double {
                if (x.cols() != 1) return -kInf;
                return dirichlet_log_pdf(d.alpha, x.col(0));
            },
            [&](const MatrixDirichlet& d) -> double {
                if (x.rows() != d.alpha.rows() || x.cols() != d.alpha.cols()) return -kInf;
                double lp = 0.0;
                for (Eigen::Index j = 0; j < x.cols(); ++j) lp += dirichlet_log_pdf(d.alpha.col(j), x.col(j));
                return lp;
            },
            [&](const Contingency& c) -> double {
                if (x.size() != 2) return -kInf;
                const double i = x(0), j = x(1);
                if (i < 0 || j < 0 || i >= static_cast<double>(c.p.rows()) || j >= static_cast<double>(c.p.cols()))
                    return -kInf;
                return std::log(c.p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            },
            [&](const SampleGrid& g) -> double {
                const double v = scalar_x();
                const double h = g.spacing();
                const double lo = g.points[0] - 0.5 * h;
                const double hi = g.points[g.points.size() - 1] + 0.5 * h;
                if (v < lo || v > hi) return -kInf;
                auto i = static_cast<Eigen::Index>(std::llround((v - g.points[0]) / h));
                i = std::clamp<Eigen::Index>(i, 0, g.points.size() - 1);
                return g.log_weights[i] - std::log(h);
            },
        },
        q);
}

double log_pdf(const Distribution& q, double x) { return log_pdf(q, scalar_matrix(x)); }

Eigen::MatrixXd nearest_spd(const Eigen::MatrixXd& m, double floor) {
    Eigen::MatrixXd s = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace rmp
