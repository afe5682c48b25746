#pragma once

// Benchmark-model configuration and the graph builders for the linear
// Gaussian state space model, the hidden Markov model, the single-slice
// hierarchical Gaussian filter and the beta-Bernoulli coin model.

#include "rmp/graph.hpp"

#include "json.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmp {

/// Malformed model configuration; path() is a JSON pointer to the culprit.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string path, const std::string& what)
        : std::invalid_argument(path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

struct ModelConfig {
    std::string model;  // lgssm | hmm | hgf
    int n = 0;
    std::uint64_t seed = 0;
    int vmp_iterations = 1;

    // lgssm: x_t = A x_{t-1} + N(0, P), y_t = B x_t + N(0, Q).
    // hmm: A and B are the generating transition / emission matrices.
    int d = 2;
    Eigen::MatrixXd A, B, P, Q;
    Eigen::VectorXd x0_mean;
    Eigen::MatrixXd x0_cov;

    int M = 3;
    Eigen::MatrixXd priorA, priorB;
    Eigen::VectorXd p0;
    bool known_parameters = false;  // A and B enter as constants instead of Dirichlet-distributed

    double kappa = 1.0;
    double omega = -2.0;
    double s2_w = 10.0;
    double y_w = 1.0;
    int gh_n = 21;
    double s2_0_mean = 0.0, s2_0_precision = 1.0;
    double s1_0_mean = 0.0, s1_0_precision = 1.0;

    nlohmann::json to_json() const;
};

/// Parses and validates a configuration, filling model-specific defaults.
ModelConfig parse_model_config(const nlohmann::json& j);

struct LgssmModel {
    ModelGraph graph;
    std::vector<VariableId> x;
    std::vector<VariableId> y;
};

struct HmmModel {
    ModelGraph graph;
    std::vector<VariableId> z;
    std::vector<VariableId> y;
    VariableId A;
    VariableId B;
};

/// One time slice; the previous-step posteriors enter as data (mean, precision).
struct HgfModel {
    ModelGraph graph;
    VariableId s2_prev, s1_prev, s2, s1;
    VariableId s2p_m, s2p_w, s1p_m, s1p_w, y;
    NodeId gcv;
};

struct CoinModel {
    ModelGraph graph;
    VariableId theta;
    std::vector<VariableId> y;
};

LgssmModel build_lgssm(const ModelConfig& c);
HmmModel build_hmm(const ModelConfig& c);
HgfModel build_hgf(const ModelConfig& c);
/// theta ~ Beta(a, b), y_i ~ Bernoulli(theta) for i = 1..n.
CoinModel build_coin_model(int n, double a = 1.0, double b = 1.0);

/// Sealed graph for the configured benchmark model.
ModelGraph build_model_from_config(const nlohmann::json& j);

// JSON helpers shared with the command-line tools.
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& path);
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);

}  // namespace rmp
