#pragma once

// Synthetic data, inference drivers, the average-error metric and the timing
// harness for the LG-SSM, HMM and HGF benchmarks.

#include "rmp/engine.hpp"
#include "rmp/models.hpp"

#include "json.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace rmp::bench {

/// Independent mt19937_64 generator per named stream, seeded with
/// std::seed_seq{seed lo, seed hi, fnv1a(name) lo, fnv1a(name) hi}.
std::mt19937_64 stream_rng(std::uint64_t seed, const std::string& name);

struct Dataset {
    ModelConfig config;
    /// Ground truth per latent sequence: lgssm {"x"}, hmm {"z"} (one-hot), hgf {"s1", "s2"}.
    std::vector<std::pair<std::string, std::vector<Eigen::VectorXd>>> latent;
    std::vector<Eigen::VectorXd> observations;  // hmm: one-hot

    const std::vector<Eigen::VectorXd>& truth(const std::string& name) const;
    nlohmann::json to_json() const;
    static Dataset from_json(const nlohmann::json& j);
};

/// Ancestral sampling from the configured generative model.
///   lgssm: x_1 ~ N(x0_mean, x0_cov), x_t = A x_{t-1} + N(0, P), y_t = B x_t + N(0, Q)
///   hmm:   z_1 ~ p0, z_t ~ A[:, z_{t-1}], y_t ~ B[:, z_t]
///   hgf:   s2_0, s1_0 from their priors, s2_t = s2_{t-1} + N(0, 1/s2_w),
///          s1_t = s1_{t-1} + N(0, exp(kappa s2_t + omega)), y_t = s1_t + N(0, 1/y_w)
/// Streams: "x0"/"process"/"observation" (lgssm), "init"/"transition"/"emission"
/// (hmm), "init"/"layer2"/"layer1"/"observation" (hgf).
Dataset simulate(const ModelConfig& config);
Dataset simulate(const nlohmann::json& config);

struct RunReport {
    std::string model;
    int n = 0;
    int iterations = 0;
    double wall_ms = 0.0;
    std::size_t peak_marginals = 0;  // posterior marginals held at once
    std::vector<std::pair<std::string, double>> ae;
    /// Full-graph models: one value per iteration.  Chain mode: the value at
    /// each iteration index averaged over all steps.
    std::vector<double> bfe;
    std::vector<std::pair<std::string, std::vector<Distribution>>> posteriors;
    nlohmann::json config;

    double error(const std::string& name) const;
    const std::vector<Distribution>& posterior(const std::string& name) const;
    nlohmann::json to_json(bool with_posteriors = true) const;
};

struct InferOptions {
    int iterations = 0;  // 0: the config's vmp_iterations
    TraceSink trace;
};

RunReport infer_lgssm(const Dataset& ds, const InferOptions& opts = {});
RunReport infer_hmm(const Dataset& ds, const InferOptions& opts = {});
/// Online filtering with one single-slice engine and chain redirection.
RunReport infer_hgf(const Dataset& ds, const InferOptions& opts = {});
RunReport infer(const Dataset& ds, const InferOptions& opts = {});

/// Mean over time of E_q[f(x_t - r_t)].  Gaussian-like marginals use
/// f(x) = x'x, i.e. |mu - r|^2 + tr(Sigma).  Categorical marginals are decoded
/// by argmax and scored 0/1 against the argmax of the truth.
double average_error(const std::vector<Distribution>& posteriors, const std::vector<Eigen::VectorXd>& truth);
/// Mean over datasets of the per-dataset average error.
double average_error(const std::vector<std::vector<Distribution>>& posteriors,
                     const std::vector<std::vector<Eigen::VectorXd>>& truth);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};
/// Least squares fit of log(y) against log(x).
LinearFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

struct BenchmarkCell {
    nlohmann::json config;
    std::string model;
    int n = 0;
    int iterations = 0;
    int reps = 0;
    double min_ms = 0.0;
};

struct BenchmarkResult {
    std::vector<BenchmarkCell> cells;
    /// Scaling fits: ("n", iterations) groups and ("iterations", n) groups
    /// with at least two distinct x values.
    struct Fit {
        std::string axis;
        std::string model;
        int fixed = 0;
        LinearFit fit;
    };
    std::vector<Fit> fits;
    std::string to_csv() const;
};

/// grid = {"base": {config}, "vary": {"n": [...], "vmp_iterations": [...], ...}}.
/// Every combination of the varied keys is a cell; each cell is simulated once
/// and inferred `reps` times, keeping the minimum wall time.
BenchmarkResult benchmark(const nlohmann::json& grid, int reps);

}  // namespace rmp::bench
