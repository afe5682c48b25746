#include "doctest.h"

#include "oracles.hpp"
#include "rmp/distributions.hpp"

#include <cmath>
#include <random>

using namespace rmp;

namespace {

constexpr double kPi = 3.14159265358979323846;

double density(const Distribution& d, double x) { return std::exp(log_pdf(d, x)); }

struct GridMoments {
    double mass;
    double mean;
    double var;
};

GridMoments grid_moments(const std::function<double(double)>& f, double lo, double hi) {
    const double z = oracle::integrate(f, lo, hi);
    const double m = oracle::integrate([&](double x) { return x * f(x); }, lo, hi) / z;
    const double v = oracle::integrate([&](double x) { return (x - m) * (x - m) * f(x); }, lo, hi) / z;
    return {z, m, v};
}

double numeric_entropy(const Distribution& d, double lo, double hi) {
    return -oracle::integrate(
        [&](double x) {
            const double lp = log_pdf(d, x);
            return std::isfinite(lp) ? std::exp(lp) * lp : 0.0;
        },
        lo, hi, 200000);
}

}  // namespace

TEST_CASE("Gaussian products against grid integration") {
    auto p = multiply_and_normalize(Gaussian::mean_variance(0, 1), Gaussian::mean_variance(0, 1));
    CHECK(mean_value(p) == doctest::Approx(0.0));
    CHECK(variance_value(p) == doctest::Approx(0.5).epsilon(1e-14));

    Distribution a = Gaussian::weighted_mean_precision(1, 2);
    Distribution b = Gaussian::weighted_mean_precision(3, 4);
    auto c = multiply_and_normalize(a, b);
    const auto& g = std::get<Gaussian>(c);
    CHECK(g.form() == GaussianForm::WeightedMeanPrecision);
    CHECK(g.weighted_mean() == doctest::Approx(4.0));
    CHECK(g.precision() == doctest::Approx(6.0));

    auto ref = grid_moments([&](double x) { return density(a, x) * density(b, x); }, -15, 15);
    CHECK(std::abs(g.mean() - ref.mean) < 1e-8);
    CHECK(std::abs(g.variance() - ref.var) < 1e-8);
    CHECK(std::abs(oracle::integrate([&](double x) { return density(c, x); }, -15, 15) - 1.0) < 1e-8);
}

TEST_CASE("Beta and Gamma products against grid integration") {
    Distribution a = Beta(2, 3), b = Beta(4, 1);
    auto c = multiply_and_normalize(a, b);
    REQUIRE(family(c) == Family::Beta);
    CHECK(std::get<Beta>(c).a == doctest::Approx(5));
    CHECK(std::get<Beta>(c).b == doctest::Approx(3));
    auto ref = grid_moments([&](double x) { return density(a, x) * density(b, x); }, 0, 1);
    CHECK(std::abs(mean_value(c) - ref.mean) < 1e-8);
    CHECK(std::abs(variance_value(c) - ref.var) < 1e-8);
    CHECK(std::abs(oracle::integrate([&](double x) { return density(c, x); }, 0, 1) - 1.0) < 1e-8);

    Distribution ga = Gamma(2.5, 1.5), gb = Gamma(3, 0.5);
    auto gc = multiply_and_normalize(ga, gb);
    auto gref = grid_moments([&](double x) { return density(ga, x) * density(gb, x); }, 0, 60);
    CHECK(std::abs(mean_value(gc) - gref.mean) < 1e-8);
    CHECK(std::abs(variance_value(gc) - gref.var) < 1e-8);
    CHECK(std::abs(oracle::integrate([&](double x) { return density(gc, x); }, 0, 60) - 1.0) < 1e-8);
}

TEST_CASE("discrete products are exact and normalized") {
    Categorical a(Eigen::Vector3d(0.2, 0.3, 0.5));
    Categorical b(Eigen::Vector3d(0.5, 0.25, 0.25));
    auto c = std::get<Categorical>(multiply_and_normalize(a, b));
    Eigen::Vector3d raw(0.1, 0.075, 0.125);
    CHECK((c.p - raw / raw.sum()).norm() < 1e-14);
    CHECK(std::abs(c.p.sum() - 1.0) < 1e-12);

    // Log-space normalization survives extreme underflow.
    Eigen::VectorXd lp = Eigen::VectorXd::Constant(10000, -2000.0);
    lp[17] = -1990.0;
    auto big = Categorical::from_log(lp);
    CHECK(std::abs(big.p.sum() - 1.0) < 1e-12);
    CHECK(big.p.maxCoeff() == big.p[17]);

    auto d = std::get<Dirichlet>(multiply_and_normalize(Dirichlet(Eigen::Vector2d(2, 3)), Dirichlet(Eigen::Vector2d(1, 4))));
    CHECK(d.alpha.isApprox(Eigen::Vector2d(2, 6)));

    Bernoulli x(0.7), y(0.4);
    auto z = std::get<Bernoulli>(multiply_and_normalize(x, y));
    CHECK(z.p == doctest::Approx(0.28 / (0.28 + 0.18)));
}

TEST_CASE("products commute and associate") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.5, 4.0);
    for (int i = 0; i < 20; ++i) {
        Distribution g1 = Gaussian::mean_variance(u(rng) - 2, u(rng));
        Distribution g2 = Gaussian::mean_precision(u(rng) - 2, u(rng));
        Distribution g3 = Gaussian::weighted_mean_precision(u(rng) - 2, u(rng));
        auto l = std::get<Gaussian>(multiply_and_normalize(multiply_and_normalize(g1, g2), g3));
        auto r = std::get<Gaussian>(multiply_and_normalize(g3, multiply_and_normalize(g2, g1)));
        CHECK(std::abs(l.weighted_mean() - r.weighted_mean()) < 1e-10);
        CHECK(std::abs(l.precision() - r.precision()) < 1e-10);

        Distribution b1 = Beta(u(rng), u(rng)), b2 = Beta(u(rng), u(rng)), b3 = Beta(u(rng), u(rng));
        auto bl = std::get<Beta>(multiply_and_normalize(multiply_and_normalize(b1, b2), b3));
        auto br = std::get<Beta>(multiply_and_normalize(b3, multiply_and_normalize(b2, b1)));
        CHECK(std::abs(bl.a - br.a) < 1e-10);
        CHECK(std::abs(bl.b - br.b) < 1e-10);

        Distribution m1 = Gamma(u(rng), u(rng)), m2 = Gamma(u(rng), u(rng)), m3 = Gamma(u(rng), u(rng));
        auto ml = std::get<Gamma>(multiply_and_normalize(multiply_and_normalize(m1, m2), m3));
        auto mr = std::get<Gamma>(multiply_and_normalize(m3, multiply_and_normalize(m2, m1)));
        CHECK(std::abs(ml.shape - mr.shape) < 1e-10);
        CHECK(std::abs(ml.rate - mr.rate) < 1e-10);

        Distribution c1 = Categorical(Eigen::Vector3d(u(rng), u(rng), u(rng)));
        Distribution c2 = Categorical(Eigen::Vector3d(u(rng), u(rng), u(rng)));
        Distribution c3 = Categorical(Eigen::Vector3d(u(rng), u(rng), u(rng)));
        auto cl = std::get<Categorical>(multiply_and_normalize(multiply_and_normalize(c1, c2), c3));
        auto cr = std::get<Categorical>(multiply_and_normalize(c3, multiply_and_normalize(c2, c1)));
        CHECK((cl.p.array().log() - cr.p.array().log()).abs().maxCoeff() < 1e-10);

        Distribution d1 = Dirichlet(Eigen::Vector3d(u(rng), u(rng), u(rng)) * 2);
        Distribution d2 = Dirichlet(Eigen::Vector3d(u(rng), u(rng), u(rng)) * 2);
        Distribution d3 = Dirichlet(Eigen::Vector3d(u(rng), u(rng), u(rng)) * 2);
        auto dl = std::get<Dirichlet>(multiply_and_normalize(multiply_and_normalize(d1, d2), d3));
        auto dr = std::get<Dirichlet>(multiply_and_normalize(d3, multiply_and_normalize(d2, d1)));
        CHECK((dl.alpha - dr.alpha).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("point masses") {
    Distribution pm = PointMass::scalar(0.3);
    auto c = multiply_and_normalize(pm, Beta(2, 2));
    CHECK(std::get<PointMass>(c).scalar_value() == 0.3);
    CHECK(std::get<PointMass>(multiply_and_normalize(Gaussian::mean_variance(0, 1), pm)).scalar_value() == 0.3);
    CHECK_THROWS_AS(multiply_and_normalize(PointMass::scalar(1), PointMass::scalar(2)), DistributionError);
    CHECK_THROWS_AS(multiply_and_normalize(PointMass::scalar(-1), Gamma(2, 1)), DistributionError);
    CHECK(entropy(pm) == 0.0);
}

TEST_CASE("mixed continuous families fall back to a normalized grid") {
    Distribution g = Gaussian::mean_variance(1.0, 0.5);
    Distribution m = Gamma(3.0, 2.0);
    auto c = multiply_and_normalize(g, m);
    REQUIRE(family(c) == Family::SampleGrid);
    CHECK(std::abs(std::get<SampleGrid>(c).weights().sum() - 1.0) < 1e-12);
    auto ref = grid_moments([&](double x) { return density(g, x) * density(m, x); }, 0, 30);
    CHECK(mean_value(c) == doctest::Approx(ref.mean).epsilon(1e-4));
    CHECK_THROWS_AS(multiply_and_normalize(g, Categorical(Eigen::Vector2d(0.5, 0.5))), std::invalid_argument);
}

TEST_CASE("entropy closed forms") {
    CHECK(entropy(Categorical(Eigen::Vector3d::Ones())) == doctest::Approx(std::log(3.0)));
    CHECK(entropy(Gaussian::mean_variance(3, 1)) == doctest::Approx(0.5 * std::log(2 * kPi * std::exp(1.0))));
    CHECK(entropy(Gamma(1, 1)) == doctest::Approx(1.0));
    CHECK(std::abs(entropy(Gaussian::mean_variance(0, 1)) - 1.41894) < 1e-5);
    Eigen::MatrixXd table(2, 3);
    table << 0.1, 0.2, 0.05, 0.3, 0.15, 0.2;
    double h = 0.0;
    for (Eigen::Index i = 0; i < table.size(); ++i) h -= table.data()[i] * std::log(table.data()[i]);
    CHECK(entropy(Contingency(table)) == doctest::Approx(h).epsilon(1e-12));
    CHECK(entropy(Contingency(Eigen::MatrixXd::Ones(4, 4))) == doctest::Approx(std::log(16.0)));
}

TEST_CASE("entropy matches numeric integration at random parameters") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 20; ++i) {
        const double m = 4 * u(rng) - 2, v = 0.1 + 3 * u(rng);
        Distribution g = Gaussian::mean_variance(m, v);
        const double sd = std::sqrt(v);
        CHECK(std::abs(entropy(g) - numeric_entropy(g, m - 14 * sd, m + 14 * sd)) < 1e-5);

        const double k = 1.2 + 6 * u(rng), r = 0.3 + 3 * u(rng);
        Distribution ga = Gamma(k, r);
        CHECK(std::abs(entropy(ga) - numeric_entropy(ga, 0, (k + 40 * std::sqrt(k)) / r)) < 1e-5);

        const double a = 1.2 + 6 * u(rng), b = 1.2 + 6 * u(rng);
        Distribution be = Beta(a, b);
        CHECK(std::abs(entropy(be) - numeric_entropy(be, 0, 1)) < 1e-5);

        // Two-component Dirichlet is a Beta on its first coordinate.
        Distribution di = Dirichlet(Eigen::Vector2d(a, b));
        CHECK(std::abs(entropy(di) - entropy(be)) < 1e-10);
    }
}

TEST_CASE("multivariate Gaussian entropy and log density") {
    Eigen::Matrix2d s;
    s << 2.0, 0.3, 0.3, 0.5;
    auto g = MvGaussian::mean_covariance(Eigen::Vector2d(1, -1), s);
    CHECK(entropy(g) == doctest::Approx(1.0 + std::log(2 * kPi) + 0.5 * std::log(s.determinant())));
    auto w = MvGaussian::weighted_mean_precision(s.inverse() * Eigen::Vector2d(1, -1), s.inverse());
    CHECK(entropy(w) == doctest::Approx(entropy(g)));
    Eigen::Vector2d x(0.2, 0.4);
    const Eigen::Vector2d r = x - Eigen::Vector2d(1, -1);
    const double ref = -std::log(2 * kPi) - 0.5 * std::log(s.determinant()) - 0.5 * r.dot(s.inverse() * r);
    CHECK(log_pdf(g, Eigen::MatrixXd(x)) == doctest::Approx(ref));
    CHECK(log_pdf(w, Eigen::MatrixXd(x)) == doctest::Approx(ref));
}

TEST_CASE("parametrization round trips") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 50);
    for (int i = 0; i < 200; ++i) {
        const double m = u(rng) - 25, v = u(rng);
        auto g = Gaussian::mean_variance(m, v);
        auto back = g.as(GaussianForm::WeightedMeanPrecision).as(GaussianForm::MeanVariance);
        CHECK(std::abs(back.mean() - m) <= 1e-12 * std::max(1.0, std::abs(m)));
        CHECK(std::abs(back.variance() - v) <= 1e-12 * v);
        auto mp = g.as(GaussianForm::MeanPrecision).as(GaussianForm::MeanVariance);
        CHECK(std::abs(mp.variance() - v) <= 1e-12 * v);
    }
    CHECK_THROWS_AS(Gaussian::mean_variance(0, 0), std::invalid_argument);
    CHECK_THROWS_AS(Gaussian::mean_precision(0, -1), std::invalid_argument);
    CHECK_FALSE(Gaussian::weighted_mean_precision(0, 0).proper());
}

TEST_CASE("moments") {
    CHECK(mean_value(Beta(2, 2)) == doctest::Approx(0.5));
    Eigen::VectorXd md = mean(Dirichlet(Eigen::Vector3d(1, 1, 2)));
    CHECK(md.isApprox(Eigen::Vector3d(0.25, 0.25, 0.5)));
    CHECK(precision(Gaussian::mean_variance(0, 4))(0, 0) == doctest::Approx(0.25));
    CHECK_THROWS_AS(mode(Beta(1, 1)), DistributionError);
    CHECK(mode(Beta(3, 2))(0, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(mode(Gamma(3, 2))(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("expectation of logs") {
    Eigen::VectorXd e = expectation_log(Dirichlet(Eigen::Vector2d(1, 1)));
    CHECK(e[0] == doctest::Approx(-1.0));
    CHECK(e[1] == doctest::Approx(-1.0));
    Eigen::VectorXd s = expectation_log(Dirichlet(Eigen::Vector2d(3.7, 3.7)));
    CHECK(s[0] == s[1]);
    Eigen::MatrixXd em = expectation_log(MatrixDirichlet(Eigen::MatrixXd::Ones(2, 2)));
    CHECK((em.array() + 1.0).abs().maxCoeff() < 1e-12);

    // E[log x] under Beta(2, 5) by quadrature.
    Distribution b = Beta(2, 5);
    Eigen::VectorXd eb = expectation_log(Dirichlet(Eigen::Vector2d(2, 5)));
    const double ref = oracle::integrate([&](double x) { return x > 0 ? std::log(x) * density(b, x) : 0.0; }, 0, 1, 400000);
    CHECK(std::abs(eb[0] - ref) < 1e-5);
    CHECK(expectation_log_scalar(b) == doctest::Approx(eb[0]));
}

TEST_CASE("moment matching") {
    auto n = moment_match_gaussian(Gaussian::mean_variance(1, 2));
    CHECK(mean_value(n) == doctest::Approx(1));
    CHECK(variance_value(n) == doctest::Approx(2));

    auto gm = moment_match_gaussian(Gamma(4, 2));
    CHECK(mean_value(gm) == doctest::Approx(2));
    CHECK(variance_value(gm) == doctest::Approx(1));
    auto twice = moment_match_gaussian(gm);
    CHECK(mean_value(twice) == mean_value(gm));
    CHECK(variance_value(twice) == variance_value(gm));

    auto mixture = [](double x) {
        const double v = 0.01;
        auto comp = [&](double c) { return std::exp(-0.5 * (x - c) * (x - c) / v) / std::sqrt(2 * kPi * v); };
        return std::log(0.5 * comp(-1) + 0.5 * comp(1));
    };
    auto grid = SampleGrid::tabulate(-3, 3, mixture);
    auto mm = moment_match_gaussian(grid);
    CHECK(std::abs(mean_value(mm)) < 1e-12);
    CHECK(variance_value(mm) == doctest::Approx(1.01).epsilon(1e-6));
    CHECK_THROWS_AS(moment_match_gaussian(PointMass::scalar(1)), DistributionError);
}

TEST_CASE("log densities") {
    CHECK(log_pdf(Bernoulli(0.5), 1.0) == doctest::Approx(std::log(0.5)));
    CHECK(log_pdf(Gaussian::mean_variance(0, 1), 0.0) == doctest::Approx(-0.91894).epsilon(1e-5));
    CHECK(log_pdf(Beta(1, 1), 0.3) == doctest::Approx(0.0));
    CHECK(log_pdf(Beta(2, 2), 1.5) == -std::numeric_limits<double>::infinity());
    CHECK(log_pdf(Gamma(2, 1), -1.0) == -std::numeric_limits<double>::infinity());
    CHECK(log_pdf(Categorical(Eigen::Vector3d(0.2, 0.3, 0.5)), Eigen::MatrixXd(Eigen::Vector3d(0, 0, 1))) ==
          doctest::Approx(std::log(0.5)));
}

TEST_CASE("positive-definite correction") {
    Eigen::Matrix2d m;
    m << 1.0, 2.0, 2.0, 1.0;
    Eigen::MatrixXd c = nearest_spd(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    CHECK(es.eigenvalues().minCoeff() >= 1e-12 * 0.999);
    CHECK((c - c.transpose()).norm() == 0.0);
}

TEST_CASE("family names round trip") {
    for (int i = 0; i <= static_cast<int>(Family::SampleGrid); ++i) {
        auto f = static_cast<Family>(i);
        CHECK(family_from_name(family_name(f)) == f);
    }
    CHECK_THROWS_AS(family_from_name("Cauchy"), std::invalid_argument);
}
