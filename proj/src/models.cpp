#include "rmp/models.hpp"

#include <cmath>
#include <numbers>
#include <set>

namespace rmp {

using nlohmann::json;

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& path) {
    if (j.is_number()) return Eigen::MatrixXd::Constant(1, 1, j.get<double>());
    if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a number, a vector or a matrix");
    if (j[0].is_number()) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), 1);
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (!j[i].is_number()) throw ConfigError(path + "/" + std::to_string(i), "expected a number");
            m(static_cast<Eigen::Index>(i), 0) = j[i].get<double>();
        }
        return m;
    }
    const std::size_t rows = j.size();
    if (!j[0].is_array() || j[0].empty()) throw ConfigError(path + "/0", "expected a non-empty row");
    const std::size_t cols = j[0].size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        const std::string rp = path + "/" + std::to_string(r);
        if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(rp, "rows must all have " + std::to_string(cols) + " entries");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[r][c].is_number()) throw ConfigError(rp + "/" + std::to_string(c), "expected a number");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
        }
    }
    return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

namespace {

int get_int(const json& j, const char* key, int fallback, int min_value) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer()) throw ConfigError(std::string("/") + key, "expected an integer");
    const auto x = v.get<long long>();
    if (x < min_value) throw ConfigError(std::string("/") + key, "must be at least " + std::to_string(min_value));
    if (x > 1'000'000'000LL) throw ConfigError(std::string("/") + key, "is too large");
    return static_cast<int>(x);
}

double get_double(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string("/") + key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(std::string("/") + key, "must be finite");
    return x;
}

Eigen::MatrixXd get_matrix(const json& j, const char* key, Eigen::MatrixXd fallback, Eigen::Index rows,
                           Eigen::Index cols) {
    Eigen::MatrixXd m = j.contains(key) ? matrix_from_json(j.at(key), std::string("/") + key) : std::move(fallback);
    if (rows > 0 && m.rows() != rows) {
        throw ConfigError(std::string("/") + key, "expected " + std::to_string(rows) + " rows, got " + std::to_string(m.rows()));
    }
    if (cols > 0 && m.cols() != cols) {
        throw ConfigError(std::string("/") + key, "expected " + std::to_string(cols) + " columns, got " + std::to_string(m.cols()));
    }
    return m;
}

void require_spd(const Eigen::MatrixXd& m, const char* key) {
    if (m.rows() != m.cols()) throw ConfigError(std::string("/") + key, "must be square");
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + m.cwiseAbs().maxCoeff())) {
        throw ConfigError(std::string("/") + key, "must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw ConfigError(std::string("/") + key, "must be positive definite");
}

void require_stochastic_columns(const Eigen::MatrixXd& m, const char* key) {
    if ((m.array() < 0.0).any()) throw ConfigError(std::string("/") + key, "entries must be non-negative");
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (std::abs(m.col(c).sum() - 1.0) > 1e-9) {
            throw ConfigError(std::string("/") + key + "/" + std::to_string(c), "column must sum to 1");
        }
    }
}

void require_positive(const Eigen::MatrixXd& m, const char* key) {
    if (!(m.array() > 0.0).all()) throw ConfigError(std::string("/") + key, "entries must be positive");
}

Eigen::MatrixXd rotation_blocks(int d) {
    const double th = std::numbers::pi / 15.0;
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(d, d);
    for (int i = 0; i + 1 < d; i += 2) {
        a(i, i) = std::cos(th);
        a(i, i + 1) = -std::sin(th);
        a(i + 1, i) = std::sin(th);
        a(i + 1, i + 1) = std::cos(th);
    }
    return a;
}

Eigen::MatrixXd dominant(int rows, int cols, double mass) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(rows, cols, rows > 1 ? (1.0 - mass) / (rows - 1) : 1.0);
    for (int i = 0; i < std::min(rows, cols); ++i) m(i, i) = rows > 1 ? mass : 1.0;
    return m;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "model", "n", "seed", "vmp_iterations", "d", "A", "B", "P", "Q", "x0_mean", "x0_cov", "M", "priorA",
        "priorB", "p0", "kappa", "omega", "s2_w", "y_w", "gh_n", "s2_0_mean", "s2_0_precision", "s1_0_mean",
        "s1_0_precision", "known_parameters"};
    return keys;
}

}  // namespace

ModelConfig parse_model_config(const json& j) {
    if (!j.is_object()) throw ConfigError("", "model configuration must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known_keys().count(key)) throw ConfigError("/" + key, "unknown configuration key");
    }
    ModelConfig c;
    if (!j.contains("model")) throw ConfigError("/model", "missing");
    if (!j.at("model").is_string()) throw ConfigError("/model", "expected a string");
    c.model = j.at("model").get<std::string>();
    if (c.model != "lgssm" && c.model != "hmm" && c.model != "hgf") {
        throw ConfigError("/model", "unknown model '" + c.model + "' (expected lgssm, hmm or hgf)");
    }
    if (!j.contains("n")) throw ConfigError("/n", "missing");
    c.n = get_int(j, "n", 0, 1);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_integer() || j.at("seed").get<long long>() < 0) {
            throw ConfigError("/seed", "expected a non-negative integer");
        }
        c.seed = j.at("seed").get<std::uint64_t>();
    }

    if (c.model == "lgssm") {
        c.vmp_iterations = get_int(j, "vmp_iterations", 1, 1);
        c.d = get_int(j, "d", j.contains("A") ? static_cast<int>(matrix_from_json(j.at("A"), "/A").rows()) : 2, 1);
        c.A = get_matrix(j, "A", rotation_blocks(c.d), c.d, c.d);
        c.B = get_matrix(j, "B", Eigen::MatrixXd::Identity(c.d, c.d), 0, c.d);
        c.P = get_matrix(j, "P", Eigen::MatrixXd::Identity(c.d, c.d), c.d, c.d);
        c.Q = get_matrix(j, "Q", Eigen::MatrixXd::Identity(c.B.rows(), c.B.rows()), c.B.rows(), c.B.rows());
        c.x0_mean = get_matrix(j, "x0_mean", Eigen::VectorXd::Zero(c.d), c.d, 1).col(0);
        c.x0_cov = get_matrix(j, "x0_cov", 100.0 * Eigen::MatrixXd::Identity(c.d, c.d), c.d, c.d);
        require_spd(c.P, "P");
        require_spd(c.Q, "Q");
        require_spd(c.x0_cov, "x0_cov");
    } else if (c.model == "hmm") {
        c.vmp_iterations = get_int(j, "vmp_iterations", 15, 1);
        c.M = get_int(j, "M", j.contains("A") ? static_cast<int>(matrix_from_json(j.at("A"), "/A").rows()) : 3, 2);
        c.A = get_matrix(j, "A", dominant(c.M, c.M, 0.9), c.M, c.M);
        c.B = get_matrix(j, "B", dominant(c.M, c.M, 0.8), 0, c.M);
        Eigen::MatrixXd pa = Eigen::MatrixXd::Ones(c.M, c.M) + 9.0 * Eigen::MatrixXd::Identity(c.M, c.M);
        Eigen::MatrixXd pb = Eigen::MatrixXd::Ones(c.B.rows(), c.M);
        for (int i = 0; i < std::min<int>(static_cast<int>(c.B.rows()), c.M); ++i) pb(i, i) += 9.0;
        c.priorA = get_matrix(j, "priorA", pa, c.M, c.M);
        c.priorB = get_matrix(j, "priorB", pb, c.B.rows(), c.M);
        c.p0 = get_matrix(j, "p0", Eigen::VectorXd::Constant(c.M, 1.0 / c.M), c.M, 1).col(0);
        require_stochastic_columns(c.A, "A");
        require_stochastic_columns(c.B, "B");
        require_stochastic_columns(c.p0, "p0");
        require_positive(c.priorA, "priorA");
        require_positive(c.priorB, "priorB");
        if (j.contains("known_parameters")) {
            if (!j.at("known_parameters").is_boolean()) throw ConfigError("/known_parameters", "expected a boolean");
            c.known_parameters = j.at("known_parameters").get<bool>();
        }
    } else {
        c.vmp_iterations = get_int(j, "vmp_iterations", 15, 1);
        c.kappa = get_double(j, "kappa", c.kappa);
        c.omega = get_double(j, "omega", c.omega);
        c.s2_w = get_double(j, "s2_w", c.s2_w);
        c.y_w = get_double(j, "y_w", c.y_w);
        c.gh_n = get_int(j, "gh_n", c.gh_n, 1);
        c.s2_0_mean = get_double(j, "s2_0_mean", c.s2_0_mean);
        c.s2_0_precision = get_double(j, "s2_0_precision", c.s2_0_precision);
        c.s1_0_mean = get_double(j, "s1_0_mean", c.s1_0_mean);
        c.s1_0_precision = get_double(j, "s1_0_precision", c.s1_0_precision);
        for (const char* key : {"s2_w", "y_w", "s2_0_precision", "s1_0_precision"}) {
            if (get_double(j, key, 1.0) <= 0.0) throw ConfigError(std::string("/") + key, "must be positive");
        }
    }
    return c;
}

json ModelConfig::to_json() const {
    json j{{"model", model}, {"n", n}, {"seed", seed}, {"vmp_iterations", vmp_iterations}};
    if (model == "lgssm") {
        j["d"] = d;
        j["A"] = matrix_to_json(A);
        j["B"] = matrix_to_json(B);
        j["P"] = matrix_to_json(P);
        j["Q"] = matrix_to_json(Q);
        j["x0_mean"] = matrix_to_json(x0_mean);
        j["x0_cov"] = matrix_to_json(x0_cov);
    } else if (model == "hmm") {
        j["M"] = M;
        j["A"] = matrix_to_json(A);
        j["B"] = matrix_to_json(B);
        j["priorA"] = matrix_to_json(priorA);
        j["priorB"] = matrix_to_json(priorB);
        j["p0"] = matrix_to_json(p0);
        j["known_parameters"] = known_parameters;
    } else {
        j["kappa"] = kappa;
        j["omega"] = omega;
        j["s2_w"] = s2_w;
        j["y_w"] = y_w;
        j["gh_n"] = gh_n;
        j["s2_0_mean"] = s2_0_mean;
        j["s2_0_precision"] = s2_0_precision;
        j["s1_0_mean"] = s1_0_mean;
        j["s1_0_precision"] = s1_0_precision;
    }
    return j;
}

LgssmModel build_lgssm(const ModelConfig& c) {
    LgssmModel m{ModelGraph(Factorization::bethe()), {}, {}};
    auto& g = m.graph;
    g.set_implicit_equality(true);
    const auto n = static_cast<std::size_t>(c.n);
    m.x.reserve(n);
    m.y.reserve(n);
    NodeContext trans, obs, prior;
    trans.meta.set("A", c.A).set("P", c.P);
    obs.meta.set("A", c.B).set("P", c.Q);
    prior.meta.set("mean", Eigen::MatrixXd(c.x0_mean)).set("cov", c.x0_cov);
    for (std::size_t t = 1; t <= n; ++t) {
        const auto ts = std::to_string(t);
        m.x.push_back(g.add_random_variable("x_" + ts, Dims::vector(c.d)));
        m.y.push_back(g.add_data_variable("y_" + ts, Dims::vector(c.B.rows())));
        if (t == 1) {
            g.add_factor("GaussianPrior", {{"out", m.x.back()}}, prior, "prior");
        } else {
            g.add_factor("LinearGaussian", {{"out", m.x.back()}, {"in", m.x[t - 2]}}, trans, "transition_" + ts);
        }
        g.add_factor("LinearGaussian", {{"out", m.y.back()}, {"in", m.x.back()}}, obs, "observation_" + ts);
    }
    return m;
}

HmmModel build_hmm(const ModelConfig& c) {
    HmmModel m{ModelGraph(Factorization::mean_field()), {}, {}, 0, 0};
    auto& g = m.graph;
    g.set_implicit_equality(true);
    NodeContext pa, pb, p0;
    pa.meta.set("P", c.priorA);
    pb.meta.set("P", c.priorB);
    p0.meta.set("p", Eigen::MatrixXd(c.p0));
    if (c.known_parameters) {
        m.A = g.add_constant("A", c.A);
        m.B = g.add_constant("B", c.B);
    } else {
        m.A = g.add_random_variable("A", Dims::matrix(c.M, c.M));
        m.B = g.add_random_variable("B", Dims::matrix(c.B.rows(), c.M));
        g.add_factor("MatrixDirichlet", {{"out", m.A}}, pa, "prior_A");
        g.add_factor("MatrixDirichlet", {{"out", m.B}}, pb, "prior_B");
    }
    NodeContext trans;
    trans.factorization = Factorization::structured({{"out", "in"}, {"a"}});
    for (int t = 1; t <= c.n; ++t) {
        const auto ts = std::to_string(t);
        m.z.push_back(g.add_random_variable("z_" + ts, Dims::vector(c.M)));
        m.y.push_back(g.add_data_variable("y_" + ts, Dims::vector(c.B.rows())));
        if (t == 1) {
            g.add_factor("Categorical", {{"out", m.z.back()}}, p0, "prior_z");
        } else {
            g.add_factor("Transition", {{"out", m.z.back()}, {"in", m.z[t - 2]}, {"a", m.A}}, trans,
                         "transition_" + ts);
        }
        g.add_factor("Transition", {{"out", m.y.back()}, {"in", m.z.back()}, {"a", m.B}}, {}, "observation_" + ts);
    }
    return m;
}

HgfModel build_hgf(const ModelConfig& c) {
    HgfModel m{ModelGraph(Factorization::mean_field()), 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    auto& g = m.graph;
    m.s2p_m = g.add_data_variable("s2_prior_mean");
    m.s2p_w = g.add_data_variable("s2_prior_precision");
    m.s1p_m = g.add_data_variable("s1_prior_mean");
    m.s1p_w = g.add_data_variable("s1_prior_precision");
    m.y = g.add_data_variable("y");
    m.s2_prev = g.add_random_variable("s2_prev");
    m.s1_prev = g.add_random_variable("s1_prev");
    m.s2 = g.add_random_variable("s2");
    m.s1 = g.add_random_variable("s1");
    const auto s2_w = g.add_constant("s2_w", c.s2_w);
    const auto y_w = g.add_constant("y_w", c.y_w);

    g.add_factor("GaussianMeanPrecision", {{"out", m.s2_prev}, {"mean", m.s2p_m}, {"precision", m.s2p_w}}, {},
                 "s2_prior");
    g.add_factor("GaussianMeanPrecision", {{"out", m.s1_prev}, {"mean", m.s1p_m}, {"precision", m.s1p_w}}, {},
                 "s1_prior");
    NodeContext walk;
    walk.factorization = Factorization::structured({{"out", "mean"}, {"precision"}});
    g.add_factor("GaussianMeanPrecision", {{"out", m.s2}, {"mean", m.s2_prev}, {"precision", s2_w}}, walk,
                 "s2_walk");
    NodeContext gcv;
    gcv.factorization = Factorization::structured({{"out", "in"}, {"z"}});
    gcv.meta.set("kappa", c.kappa).set("omega", c.omega).set("gh_n", static_cast<double>(c.gh_n));
    m.gcv = g.add_factor("GCV", {{"out", m.s1}, {"in", m.s1_prev}, {"z", m.s2}}, gcv, "gcv");
    g.add_factor("GaussianMeanPrecision", {{"out", m.y}, {"mean", m.s1}, {"precision", y_w}}, {}, "likelihood");
    return m;
}

CoinModel build_coin_model(int n, double a, double b) {
    if (n < 1) throw std::invalid_argument("coin model needs at least one observation");
    CoinModel m{ModelGraph(), 0, {}};
    auto& g = m.graph;
    g.set_implicit_equality(true);
    m.theta = g.add_random_variable("theta");
    const auto ca = g.add_constant("a", a);
    const auto cb = g.add_constant("b", b);
    g.add_factor("Beta", {{"out", m.theta}, {"a", ca}, {"b", cb}}, {}, "prior");
    for (int i = 1; i <= n; ++i) {
        m.y.push_back(g.add_data_variable("y_" + std::to_string(i)));
        g.add_factor("Bernoulli", {{"out", m.y.back()}, {"p", m.theta}}, {}, "likelihood_" + std::to_string(i));
    }
    return m;
}

ModelGraph build_model_from_config(const json& j) {
    const ModelConfig c = parse_model_config(j);
    ModelGraph g = c.model == "lgssm" ? build_lgssm(c).graph : c.model == "hmm" ? build_hmm(c).graph : build_hgf(c).graph;
    g.seal();
    return g;
}

}  // namespace rmp
