#include "rmp/io.hpp"

#include "rmp/models.hpp"

#include <stdexcept>

namespace rmp {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd to_vec(const json& j, const std::string& path) {
    Eigen::MatrixXd m = matrix_from_json(j, path);
    if (m.cols() != 1) throw std::invalid_argument(path + ": expected a vector");
    return m.col(0);
}

const json& param(const json& p, const char* key) {
    if (!p.contains(key)) throw std::invalid_argument(std::string("distribution params: missing '") + key + "'");
    return p.at(key);
}

double num(const json& p, const char* key) {
    const auto& v = param(p, key);
    if (!v.is_number()) throw std::invalid_argument(std::string("distribution params: '") + key + "' must be a number");
    return v.get<double>();
}

}  // namespace

json to_json(const Distribution& d) {
    json params = std::visit(
        [](const auto& x) -> json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, PointMass>) {
                return {{"value", matrix_to_json(x.value())}};
            } else if constexpr (std::is_same_v<T, Gaussian>) {
                if (x.precision() == 0.0) return {{"weighted_mean", x.weighted_mean()}, {"precision", 0.0}};
                return {{"mean", x.mean()}, {"variance", x.variance()}};
            } else if constexpr (std::is_same_v<T, MvGaussian>) {
                return {{"mean", vec(x.mean())}, {"covariance", matrix_to_json(x.covariance())}};
            } else if constexpr (std::is_same_v<T, Gamma>) {
                return {{"shape", x.shape}, {"rate", x.rate}};
            } else if constexpr (std::is_same_v<T, Beta>) {
                return {{"a", x.a}, {"b", x.b}};
            } else if constexpr (std::is_same_v<T, Bernoulli>) {
                return {{"p", x.p}};
            } else if constexpr (std::is_same_v<T, Categorical>) {
                return {{"p", vec(x.p)}};
            } else if constexpr (std::is_same_v<T, Dirichlet>) {
                return {{"alpha", vec(x.alpha)}};
            } else if constexpr (std::is_same_v<T, MatrixDirichlet>) {
                return {{"alpha", matrix_to_json(x.alpha)}};
            } else if constexpr (std::is_same_v<T, Contingency>) {
                return {{"p", matrix_to_json(x.p)}};
            } else {
                return {{"points", vec(x.points)}, {"log_weights", vec(x.log_weights)}};
            }
        },
        d);
    return {{"family", std::string(family_name(family(d)))}, {"params", params}};
}

Distribution distribution_from_json(const json& j) {
    if (!j.is_object() || !j.contains("family") || !j.at("family").is_string() || !j.contains("params")) {
        throw std::invalid_argument("distribution JSON needs \"family\" and \"params\"");
    }
    const std::string f = j.at("family").get<std::string>();
    const json& p = j.at("params");
    if (f == "PointMass") return PointMass(matrix_from_json(param(p, "value"), "/params/value"));
    if (f == "Gaussian") {
        if (p.contains("precision")) return Gaussian::weighted_mean_precision(num(p, "weighted_mean"), num(p, "precision"));
        return Gaussian::mean_variance(num(p, "mean"), num(p, "variance"));
    }
    if (f == "MvGaussian") {
        return MvGaussian::mean_covariance(to_vec(param(p, "mean"), "/params/mean"),
                                           matrix_from_json(param(p, "covariance"), "/params/covariance"));
    }
    if (f == "Gamma") return Gamma(num(p, "shape"), num(p, "rate"));
    if (f == "Beta") return Beta(num(p, "a"), num(p, "b"));
    if (f == "Bernoulli") return Bernoulli(num(p, "p"));
    if (f == "Categorical") return Categorical(to_vec(param(p, "p"), "/params/p"));
    if (f == "Dirichlet") return Dirichlet(to_vec(param(p, "alpha"), "/params/alpha"));
    if (f == "MatrixDirichlet") return MatrixDirichlet(matrix_from_json(param(p, "alpha"), "/params/alpha"));
    if (f == "Contingency") return Contingency(matrix_from_json(param(p, "p"), "/params/p"));
    if (f == "SampleGrid") {
        return SampleGrid(to_vec(param(p, "points"), "/params/points"),
                          to_vec(param(p, "log_weights"), "/params/log_weights"));
    }
    throw std::invalid_argument("unknown distribution family '" + f + "'");
}

}  // namespace rmp
