#include "rmp/bench.hpp"

#include "rmp/io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rmp::bench {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

Eigen::VectorXd standard_normal(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
    return v;
}

Eigen::MatrixXd cholesky(const Eigen::MatrixXd& m, const char* key) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw ConfigError(std::string("/") + key, "matrix is not positive definite");
    return llt.matrixL();
}

int draw(std::mt19937_64& rng, const Eigen::VectorXd& p) {
    std::discrete_distribution<int> dd(p.data(), p.data() + p.size());
    return dd(rng);
}

Eigen::VectorXd one_hot(int k, Eigen::Index size) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(size);
    v[k] = 1.0;
    return v;
}

json vectors_to_json(const std::vector<Eigen::VectorXd>& vs) {
    json out = json::array();
    for (const auto& v : vs) out.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    return out;
}

std::vector<Eigen::VectorXd> vectors_from_json(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of vectors");
    std::vector<Eigen::VectorXd> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto m = matrix_from_json(j[i], path + "/" + std::to_string(i));
        if (m.cols() != 1) throw ConfigError(path + "/" + std::to_string(i), "expected a vector");
        out.emplace_back(m.col(0));
    }
    return out;
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<std::pair<VariableId, Eigen::MatrixXd>> bindings(const std::vector<VariableId>& vars,
                                                             const std::vector<Eigen::VectorXd>& values) {
    std::vector<std::pair<VariableId, Eigen::MatrixXd>> out;
    out.reserve(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) out.emplace_back(vars[i], Eigen::MatrixXd(values[i]));
    return out;
}

void require_model(const Dataset& ds, const char* model) {
    if (ds.config.model != model) {
        throw ConfigError("/model", fmt::format("dataset is '{}', expected '{}'", ds.config.model, model));
    }
    if (ds.observations.size() != static_cast<std::size_t>(ds.config.n)) {
        throw ConfigError("/observations", fmt::format("expected {} observations, got {}", ds.config.n, ds.observations.size()));
    }
}

int iterations_of(const Dataset& ds, const InferOptions& opts) {
    if (opts.iterations < 0) throw ConfigError("/vmp_iterations", "must be positive");
    return opts.iterations > 0 ? opts.iterations : ds.config.vmp_iterations;
}

std::size_t held_marginals(const InferenceEngine& e) {
    std::size_t held = 0;
    for (const auto& v : e.graph().variables()) {
        if (v.kind == VariableKind::Random && e.latest_marginal(v.id)) ++held;
    }
    return held;
}

RunReport base_report(const Dataset& ds, int k) {
    RunReport r;
    r.model = ds.config.model;
    r.n = ds.config.n;
    r.iterations = k;
    r.config = ds.config.to_json();
    r.config["vmp_iterations"] = k;
    return r;
}

std::vector<Distribution> collect(const InferenceEngine& e, const std::vector<VariableId>& vars) {
    std::vector<Distribution> out;
    out.reserve(vars.size());
    for (auto v : vars) {
        auto q = e.latest_marginal(v);
        if (!q) throw std::logic_error("no posterior for '" + e.graph().variable(v).name + "'");
        out.push_back(std::move(*q));
    }
    return out;
}

}  // namespace

std::mt19937_64 stream_rng(std::uint64_t seed, const std::string& name) {
    const std::uint64_t h = fnv1a(name);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------- Dataset

const std::vector<Eigen::VectorXd>& Dataset::truth(const std::string& name) const {
    for (const auto& [k, v] : latent) {
        if (k == name) return v;
    }
    throw std::invalid_argument("dataset has no latent sequence '" + name + "'");
}

json Dataset::to_json() const {
    json lat = json::object();
    for (const auto& [k, v] : latent) lat[k] = vectors_to_json(v);
    return {{"model", config.model}, {"config", config.to_json()}, {"latent", lat}, {"observations", vectors_to_json(observations)}};
}

Dataset Dataset::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("", "dataset must be a JSON object");
    for (const char* key : {"config", "latent", "observations"}) {
        if (!j.contains(key)) throw ConfigError(std::string("/") + key, "missing");
    }
    Dataset ds;
    ds.config = parse_model_config(j.at("config"));
    if (!j.at("latent").is_object()) throw ConfigError("/latent", "expected an object");
    for (const auto& [k, v] : j.at("latent").items()) ds.latent.emplace_back(k, vectors_from_json(v, "/latent/" + k));
    // Keep a stable order regardless of JSON key order.
    std::sort(ds.latent.begin(), ds.latent.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    ds.observations = vectors_from_json(j.at("observations"), "/observations");
    if (ds.observations.size() != static_cast<std::size_t>(ds.config.n)) {
        throw ConfigError("/observations", fmt::format("expected {} observations, got {}", ds.config.n, ds.observations.size()));
    }
    return ds;
}

// ---------------------------------------------------------------------------- simulation

Dataset simulate(const ModelConfig& c) {
    Dataset ds;
    ds.config = c;
    const auto n = static_cast<std::size_t>(c.n);
    ds.observations.reserve(n);
    if (c.model == "lgssm") {
        auto r0 = stream_rng(c.seed, "x0");
        auto rp = stream_rng(c.seed, "process");
        auto ro = stream_rng(c.seed, "observation");
        const Eigen::MatrixXd l0 = cholesky(c.x0_cov, "x0_cov");
        const Eigen::MatrixXd lp = cholesky(c.P, "P");
        const Eigen::MatrixXd lq = cholesky(c.Q, "Q");
        std::vector<Eigen::VectorXd> x;
        x.reserve(n);
        Eigen::VectorXd state = c.x0_mean + l0 * standard_normal(r0, c.d);
        for (std::size_t t = 0; t < n; ++t) {
            if (t > 0) state = c.A * state + lp * standard_normal(rp, c.d);
            x.push_back(state);
            ds.observations.push_back(c.B * state + lq * standard_normal(ro, c.B.rows()));
        }
        ds.latent.emplace_back("x", std::move(x));
    } else if (c.model == "hmm") {
        auto ri = stream_rng(c.seed, "init");
        auto rt = stream_rng(c.seed, "transition");
        auto re = stream_rng(c.seed, "emission");
        std::vector<Eigen::VectorXd> z;
        z.reserve(n);
        int state = draw(ri, c.p0);
        for (std::size_t t = 0; t < n; ++t) {
            if (t > 0) state = draw(rt, c.A.col(state));
            z.push_back(one_hot(state, c.M));
            ds.observations.push_back(one_hot(draw(re, c.B.col(state)), c.B.rows()));
        }
        ds.latent.emplace_back("z", std::move(z));
    } else if (c.model == "hgf") {
        auto ri = stream_rng(c.seed, "init");
        auto r2 = stream_rng(c.seed, "layer2");
        auto r1 = stream_rng(c.seed, "layer1");
        auto ro = stream_rng(c.seed, "observation");
        std::normal_distribution<double> nd;
        double s2 = c.s2_0_mean + nd(ri) / std::sqrt(c.s2_0_precision);
        double s1 = c.s1_0_mean + nd(ri) / std::sqrt(c.s1_0_precision);
        std::vector<Eigen::VectorXd> l1, l2;
        for (std::size_t t = 0; t < n; ++t) {
            s2 += nd(r2) / std::sqrt(c.s2_w);
            s1 += nd(r1) * std::sqrt(std::exp(c.kappa * s2 + c.omega));
            l1.push_back(Eigen::VectorXd::Constant(1, s1));
            l2.push_back(Eigen::VectorXd::Constant(1, s2));
            ds.observations.push_back(Eigen::VectorXd::Constant(1, s1 + nd(ro) / std::sqrt(c.y_w)));
        }
        ds.latent.emplace_back("s1", std::move(l1));
        ds.latent.emplace_back("s2", std::move(l2));
    } else {
        throw ConfigError("/model", "unknown model '" + c.model + "'");
    }
    return ds;
}

Dataset simulate(const json& config) { return simulate(parse_model_config(config)); }

// ---------------------------------------------------------------------------- reports

double RunReport::error(const std::string& name) const {
    for (const auto& [k, v] : ae) {
        if (k == name) return v;
    }
    throw std::invalid_argument("report has no error for '" + name + "'");
}

const std::vector<Distribution>& RunReport::posterior(const std::string& name) const {
    for (const auto& [k, v] : posteriors) {
        if (k == name) return v;
    }
    throw std::invalid_argument("report has no posteriors for '" + name + "'");
}

json RunReport::to_json(bool with_posteriors) const {
    json errors = json::object();
    for (const auto& [k, v] : ae) errors[k] = v;
    json j{{"model", model},
           {"n", n},
           {"iterations", iterations},
           {"wall_ms", wall_ms},
           {"peak_marginals", peak_marginals},
           {"ae", errors},
           {"ae_decoding", model == "hmm" ? "argmax mismatch (0/1)" : "squared error |mu - r|^2 + tr(Sigma)"},
           {"bfe", bfe},
           {"config", config}};
    if (with_posteriors) {
        json post = json::object();
        for (const auto& [k, v] : posteriors) {
            json arr = json::array();
            for (const auto& d : v) arr.push_back(rmp::to_json(d));
            post[k] = std::move(arr);
        }
        j["posteriors"] = std::move(post);
    }
    return j;
}

// ---------------------------------------------------------------------------- inference

RunReport infer_lgssm(const Dataset& ds, const InferOptions& opts) {
    require_model(ds, "lgssm");
    const int k = iterations_of(ds, opts);
    RunReport r = base_report(ds, k);
    const auto t0 = Clock::now();
    auto m = build_lgssm(ds.config);
    EngineOptions eo;
    eo.trace = opts.trace;
    InferenceEngine e(std::move(m.graph), eo);
    std::vector<rx::Subscription> subs;
    subs.reserve(m.x.size());
    for (auto x : m.x) subs.push_back(e.marginal_stream(x).subscribe([](const MarginalUpdate&) {}));
    e.run_iterations(bindings(m.y, ds.observations), k);
    r.posteriors.emplace_back("x", collect(e, m.x));
    r.wall_ms = elapsed_ms(t0);
    r.peak_marginals = held_marginals(e);
    r.ae.emplace_back("x", average_error(r.posteriors.back().second, ds.truth("x")));
    return r;
}

RunReport infer_hmm(const Dataset& ds, const InferOptions& opts) {
    require_model(ds, "hmm");
    const int k = iterations_of(ds, opts);
    RunReport r = base_report(ds, k);
    const auto t0 = Clock::now();
    auto m = build_hmm(ds.config);
    EngineOptions eo;
    eo.trace = opts.trace;
    InferenceEngine e(std::move(m.graph), eo);
    std::vector<rx::Subscription> subs;
    for (auto z : m.z) subs.push_back(e.marginal_stream(z).subscribe([](const MarginalUpdate&) {}));
    subs.push_back(e.bfe_stream().subscribe([&r](const BfeUpdate& u) { r.bfe.push_back(u.total); }));
    if (!ds.config.known_parameters) {
        e.set_marginal(m.A, MatrixDirichlet(ds.config.priorA));
        e.set_marginal(m.B, MatrixDirichlet(ds.config.priorB));
    }
    e.run_iterations(bindings(m.y, ds.observations), k);
    r.posteriors.emplace_back("z", collect(e, m.z));
    r.wall_ms = elapsed_ms(t0);
    r.peak_marginals = held_marginals(e);
    r.ae.emplace_back("z", average_error(r.posteriors.back().second, ds.truth("z")));
    return r;
}

RunReport infer_hgf(const Dataset& ds, const InferOptions& opts) {
    require_model(ds, "hgf");
    const int k = iterations_of(ds, opts);
    const auto& c = ds.config;
    RunReport r = base_report(ds, k);
    const auto t0 = Clock::now();
    auto m = build_hgf(c);
    EngineOptions eo;
    eo.trace = opts.trace;
    InferenceEngine e(std::move(m.graph), eo);
    std::vector<double> step_bfe;
    std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    std::vector<rx::Subscription> subs;
    subs.push_back(e.marginal_stream(m.s1).subscribe([](const MarginalUpdate&) {}));
    subs.push_back(e.marginal_stream(m.s2).subscribe([](const MarginalUpdate&) {}));
    subs.push_back(e.bfe_stream().subscribe([&step_bfe](const BfeUpdate& u) { step_bfe.push_back(u.total); }));
    e.chain_redirect(m.s1, m.s1p_m, m.s1p_w);
    e.chain_redirect(m.s2, m.s2p_m, m.s2p_w);
    e.stage(m.s1p_m, c.s1_0_mean);
    e.stage(m.s1p_w, c.s1_0_precision);
    e.stage(m.s2p_m, c.s2_0_mean);
    e.stage(m.s2p_w, c.s2_0_precision);
    e.set_marginal(m.s2, Gaussian::mean_precision(c.s2_0_mean, c.s2_0_precision));
    std::vector<Distribution> q1, q2;
    q1.reserve(ds.observations.size());
    q2.reserve(ds.observations.size());
    for (const auto& y : ds.observations) {
        step_bfe.clear();
        e.step({{m.y, Eigen::MatrixXd(y)}}, k);
        for (std::size_t i = 0; i < step_bfe.size() && i < sums.size(); ++i) {
            sums[i] += step_bfe[i];
            ++counts[i];
        }
        q1.push_back(*e.latest_marginal(m.s1));
        q2.push_back(*e.latest_marginal(m.s2));
    }
    if (!e.chain_errors().empty()) {
        const auto& err = e.chain_errors().front();
        throw std::runtime_error(fmt::format("chain error at step {}: {}", err.step, err.what));
    }
    r.wall_ms = elapsed_ms(t0);
    r.peak_marginals = held_marginals(e);
    for (std::size_t i = 0; i < sums.size(); ++i) {
        if (counts[i] > 0) r.bfe.push_back(sums[i] / counts[i]);
    }
    r.posteriors.emplace_back("s1", std::move(q1));
    r.posteriors.emplace_back("s2", std::move(q2));
    r.ae.emplace_back("s1", average_error(r.posterior("s1"), ds.truth("s1")));
    r.ae.emplace_back("s2", average_error(r.posterior("s2"), ds.truth("s2")));
    return r;
}

RunReport infer(const Dataset& ds, const InferOptions& opts) {
    if (ds.config.model == "lgssm") return infer_lgssm(ds, opts);
    if (ds.config.model == "hmm") return infer_hmm(ds, opts);
    if (ds.config.model == "hgf") return infer_hgf(ds, opts);
    throw ConfigError("/model", "unknown model '" + ds.config.model + "'");
}

// ---------------------------------------------------------------------------- metric

double average_error(const std::vector<Distribution>& posteriors, const std::vector<Eigen::VectorXd>& truth) {
    if (posteriors.size() != truth.size()) {
        throw std::invalid_argument(fmt::format("average_error: {} posteriors for {} truth values", posteriors.size(), truth.size()));
    }
    if (posteriors.empty()) throw std::invalid_argument("average_error: empty sequence");
    double total = 0.0;
    for (std::size_t t = 0; t < posteriors.size(); ++t) {
        const auto& q = posteriors[t];
        const auto& r = truth[t];
        if (const auto* c = std::get_if<Categorical>(&q)) {
            if (c->p.size() != r.size()) throw std::invalid_argument("average_error: state dimension mismatch");
            Eigen::Index qi, ri;
            c->p.maxCoeff(&qi);
            r.maxCoeff(&ri);
            total += qi == ri ? 0.0 : 1.0;
            continue;
        }
        const Eigen::MatrixXd mu = mean(q);
        if (mu.cols() != 1 || mu.rows() != r.size()) throw std::invalid_argument("average_error: dimension mismatch");
        total += (mu.col(0) - r).squaredNorm() + cov(q).trace();
    }
    return total / static_cast<double>(posteriors.size());
}

double average_error(const std::vector<std::vector<Distribution>>& posteriors,
                     const std::vector<std::vector<Eigen::VectorXd>>& truth) {
    if (posteriors.size() != truth.size() || posteriors.empty()) {
        throw std::invalid_argument("average_error: dataset count mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < posteriors.size(); ++i) total += average_error(posteriors[i], truth[i]);
    return total / static_cast<double>(posteriors.size());
}

// ---------------------------------------------------------------------------- benchmark

LinearFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_fit: need at least two points");
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("loglog_fit: values must be positive");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        syy += ly * ly;
    }
    const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n, cxy = sxy - sx * sy / n;
    if (vx <= 0.0) throw std::invalid_argument("loglog_fit: x values must differ");
    LinearFit f;
    f.slope = cxy / vx;
    f.intercept = (sy - f.slope * sx) / n;
    f.r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
    return f;
}

BenchmarkResult benchmark(const json& grid, int reps) {
    if (reps < 1) throw ConfigError("/reps", "repetitions must be at least 1");
    if (!grid.is_object() || !grid.contains("base")) throw ConfigError("/base", "missing base configuration");
    for (const auto& [key, _] : grid.items()) {
        if (key != "base" && key != "vary") throw ConfigError("/" + key, "unknown grid key");
    }
    const json& base = grid.at("base");
    if (!base.is_object()) throw ConfigError("/base", "expected an object");
    std::vector<std::pair<std::string, std::vector<json>>> axes;
    if (grid.contains("vary")) {
        if (!grid.at("vary").is_object()) throw ConfigError("/vary", "expected an object");
        for (const auto& [key, values] : grid.at("vary").items()) {
            if (!values.is_array() || values.empty()) throw ConfigError("/vary/" + key, "expected a non-empty array");
            axes.emplace_back(key, std::vector<json>(values.begin(), values.end()));
        }
    }
    std::vector<json> configs{base};
    for (const auto& [key, values] : axes) {
        std::vector<json> next;
        for (const auto& c : configs) {
            for (const auto& v : values) {
                json cell = c;
                cell[key] = v;
                next.push_back(std::move(cell));
            }
        }
        configs = std::move(next);
    }

    BenchmarkResult res;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        ModelConfig mc;
        try {
            mc = parse_model_config(configs[i]);
        } catch (const ConfigError& e) {
            throw ConfigError("/cells/" + std::to_string(i) + e.path(), e.what());
        }
        const Dataset ds = simulate(mc);
        BenchmarkCell cell;
        cell.config = mc.to_json();
        cell.model = mc.model;
        cell.n = mc.n;
        cell.iterations = mc.vmp_iterations;
        cell.reps = reps;
        cell.min_ms = std::numeric_limits<double>::infinity();
        for (int r = 0; r < reps; ++r) cell.min_ms = std::min(cell.min_ms, infer(ds).wall_ms);
        res.cells.push_back(std::move(cell));
    }

    // Scaling fits along n (iterations fixed) and along iterations (n fixed).
    std::map<std::tuple<std::string, int>, std::vector<std::pair<double, double>>> by_k, by_n;
    for (const auto& c : res.cells) {
        by_k[{c.model, c.iterations}].emplace_back(c.n, c.min_ms);
        by_n[{c.model, c.n}].emplace_back(c.iterations, c.min_ms);
    }
    auto add_fits = [&res](const auto& groups, const std::string& axis) {
        for (const auto& [key, pts] : groups) {
            std::set<double> distinct;
            for (const auto& p : pts) distinct.insert(p.first);
            if (distinct.size() < 2) continue;
            std::vector<double> xs, ys;
            for (const auto& p : pts) {
                xs.push_back(p.first);
                ys.push_back(std::max(p.second, 1e-6));
            }
            res.fits.push_back({axis, std::get<0>(key), std::get<1>(key), loglog_fit(xs, ys)});
        }
    };
    add_fits(by_k, "n");
    add_fits(by_n, "iterations");
    return res;
}

std::string BenchmarkResult::to_csv() const {
    std::ostringstream os;
    os << "kind,model,n,iterations,reps,min_ms,slope,r2,config\n";
    auto quote = [](const std::string& s) {
        std::string out = "\"";
        for (char ch : s) {
            if (ch == '"') out += '"';
            out += ch;
        }
        return out + "\"";
    };
    for (const auto& c : cells) {
        os << fmt::format("cell,{},{},{},{},{:.6f},,,{}\n", c.model, c.n, c.iterations, c.reps, c.min_ms, quote(c.config.dump()));
    }
    for (const auto& f : fits) {
        const std::string n = f.axis == "n" ? "" : std::to_string(f.fixed);
        const std::string k = f.axis == "n" ? std::to_string(f.fixed) : "";
        os << fmt::format("fit_{},{},{},{},,,{:.6f},{:.6f},\n", f.axis, f.model, n, k, f.fit.slope, f.fit.r2);
    }
    return os.str();
}

}  // namespace rmp::bench
