#include "doctest.h"

#include "oracles.hpp"
#include "rmp/engine.hpp"
#include "rmp/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace rmp;

namespace {

Eigen::MatrixXd random_spd(std::mt19937_64& rng, int d, double floor) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd L(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) L(i, j) = nd(rng);
    return L * L.transpose() / d + floor * Eigen::MatrixXd::Identity(d, d);
}

struct LgssmInstance {
    ModelConfig cfg;
    std::vector<Eigen::VectorXd> y;
};

LgssmInstance random_lgssm(std::mt19937_64& rng, int n, int d) {
    std::normal_distribution<double> nd;
    LgssmInstance inst;
    auto& c = inst.cfg;
    c.model = "lgssm";
    c.n = n;
    c.d = d;
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = nd(rng);
    const double radius = a.eigenvalues().cwiseAbs().maxCoeff();
    c.A = a * (0.95 / std::max(radius, 1e-3));
    const int obs = 1 + static_cast<int>(rng() % static_cast<unsigned>(d));
    c.B = Eigen::MatrixXd(obs, d);
    for (int i = 0; i < obs; ++i)
        for (int j = 0; j < d; ++j) c.B(i, j) = nd(rng);
    c.P = random_spd(rng, d, 0.1);
    c.Q = random_spd(rng, obs, 0.1);
    c.x0_mean = Eigen::VectorXd::NullaryExpr(d, [&] { return nd(rng); });
    c.x0_cov = random_spd(rng, d, 1.0) * 5.0;
    Eigen::VectorXd x = c.x0_mean + c.x0_cov.llt().matrixL() * Eigen::VectorXd::NullaryExpr(d, [&] { return nd(rng); });
    for (int t = 0; t < n; ++t) {
        if (t > 0) x = c.A * x + c.P.llt().matrixL() * Eigen::VectorXd::NullaryExpr(d, [&] { return nd(rng); });
        inst.y.push_back(c.B * x + c.Q.llt().matrixL() * Eigen::VectorXd::NullaryExpr(obs, [&] { return nd(rng); }));
    }
    return inst;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
}

struct HmmData {
    std::vector<int> z;
    std::vector<int> y;
};

int draw(std::mt19937_64& rng, const Eigen::VectorXd& p) {
    std::discrete_distribution<int> dd(p.data(), p.data() + p.size());
    return dd(rng);
}

HmmData simulate_hmm(const ModelConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    HmmData h;
    for (int t = 0; t < c.n; ++t) {
        h.z.push_back(t == 0 ? draw(rng, c.p0) : draw(rng, c.A.col(h.z.back())));
        h.y.push_back(draw(rng, c.B.col(h.z.back())));
    }
    return h;
}

Eigen::MatrixXd one_hot(int k, int size) {
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(size, 1);
    v(k, 0) = 1.0;
    return v;
}

std::vector<std::pair<VariableId, Eigen::MatrixXd>> hmm_bindings(const HmmModel& m, const HmmData& h, int obs) {
    std::vector<std::pair<VariableId, Eigen::MatrixXd>> b;
    for (std::size_t t = 0; t < h.y.size(); ++t) b.emplace_back(m.y[t], one_hot(h.y[t], obs));
    return b;
}

void init_hmm(InferenceEngine& e, const HmmModel& m, const ModelConfig& c) {
    e.set_marginal(m.A, MatrixDirichlet(c.priorA));
    e.set_marginal(m.B, MatrixDirichlet(c.priorB));
}

std::vector<Eigen::VectorXd> engine_means(InferenceEngine& e, const std::vector<VariableId>& vars) {
    std::vector<Eigen::VectorXd> out;
    for (auto v : vars) out.push_back(mean(*e.latest_marginal(v)).col(0));
    return out;
}

}  // namespace

TEST_CASE("coin model posterior is the conjugate Beta update") {
    auto m = build_coin_model(1, 1.0, 1.0);
    InferenceEngine e(std::move(m.graph));
    std::vector<MarginalUpdate> seen;
    auto sub = e.marginal_stream(m.theta).subscribe([&](const MarginalUpdate& u) { seen.push_back(u); });
    CHECK(seen.empty());
    e.inject(m.y[0], 1.0);
    REQUIRE(seen.size() == 1);
    const auto& b = std::get<Beta>(seen.back().dist);
    CHECK(b.a == doctest::Approx(2.0));
    CHECK(b.b == doctest::Approx(1.0));

    e.inject(m.y[0], 1.0);
    REQUIRE(seen.size() == 2);
    CHECK(std::get<Beta>(seen.back().dist).a == doctest::Approx(2.0));
    CHECK(std::get<Beta>(seen.back().dist).b == doctest::Approx(1.0));
    CHECK(seen[1].tick > seen[0].tick);
}

TEST_CASE("coin model with several flips") {
    const std::vector<double> flips{1, 0, 1, 1, 0, 1, 1};
    auto m = build_coin_model(static_cast<int>(flips.size()), 2.0, 3.0);
    InferenceEngine e(std::move(m.graph));
    auto sub = e.marginal_stream(m.theta).subscribe([](const MarginalUpdate&) {});
    for (std::size_t i = 0; i < flips.size(); ++i) e.inject(m.y[i], flips[i]);
    const auto q = std::get<Beta>(*e.latest_marginal(m.theta));
    CHECK(q.a == doctest::Approx(2.0 + 5.0));
    CHECK(q.b == doctest::Approx(3.0 + 2.0));
}

TEST_CASE("inject and set_marginal guard variable kinds and shapes") {
    auto m = build_coin_model(1);
    InferenceEngine e(std::move(m.graph));
    CHECK_THROWS_AS(e.inject(m.theta, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(e.inject(m.y[0], Eigen::MatrixXd::Zero(2, 1)), std::invalid_argument);
    CHECK_THROWS_AS(e.set_marginal(m.y[0], Beta(1, 1)), std::invalid_argument);
    CHECK_THROWS_AS(e.marginal_stream(m.y[0]), std::invalid_argument);
    CHECK_THROWS(e.marginal_stream(12345));
}

TEST_CASE("streams are lazy") {
    auto m = build_coin_model(2);
    InferenceEngine e(std::move(m.graph));
    CHECK(e.materialized_streams() == 0);
    int calls = 0;
    auto sub = e.marginal_stream(m.theta).subscribe([&](const MarginalUpdate&) { ++calls; });
    auto bsub = e.bfe_stream().subscribe([&](const BfeUpdate&) { ++calls; });
    CHECK(calls == 0);
    CHECK(!e.latest_marginal(m.theta).has_value());
}

TEST_CASE("lgssm marginals match the RTS smoother") {
    std::mt19937_64 rng(20240601);
    int instance = 0;
    for (int d : {1, 2, 4}) {
        for (int rep = 0; rep < 3; ++rep, ++instance) {
            const int n = 2 + static_cast<int>(rng() % 49);
            auto inst = random_lgssm(rng, n, d);
            auto model = build_lgssm(inst.cfg);
            InferenceEngine e(std::move(model.graph));
            std::vector<rx::Subscription> subs;
            for (auto x : model.x) subs.push_back(e.marginal_stream(x).subscribe([](const MarginalUpdate&) {}));
            for (int t = 0; t < n; ++t) e.inject(model.y[t], Eigen::MatrixXd(inst.y[t]));
            const auto ref = oracle::rts_smoother(inst.cfg.A, inst.cfg.B, inst.cfg.P, inst.cfg.Q, inst.cfg.x0_mean,
                                                  inst.cfg.x0_cov, inst.y);
            double worst = 0.0;
            for (int t = 0; t < n; ++t) {
                const auto q = e.latest_marginal(model.x[t]);
                REQUIRE(q.has_value());
                worst = std::max(worst, rel_err(mean(*q), ref.mean[t]));
                worst = std::max(worst, rel_err(cov(*q), ref.cov[t]));
            }
            INFO("instance " << instance << " n=" << n << " d=" << d);
            CHECK(worst < 1e-6);
        }
    }
}

TEST_CASE("lgssm fixed point does not depend on injection order") {
    std::mt19937_64 rng(77);
    auto inst = random_lgssm(rng, 20, 2);
    auto run = [&](const std::vector<int>& order) {
        auto model = build_lgssm(inst.cfg);
        InferenceEngine e(std::move(model.graph));
        std::vector<rx::Subscription> subs;
        for (auto x : model.x) subs.push_back(e.marginal_stream(x).subscribe([](const MarginalUpdate&) {}));
        for (int t : order) e.inject(model.y[t], Eigen::MatrixXd(inst.y[t]));
        std::vector<Eigen::MatrixXd> out;
        for (auto x : model.x) {
            out.push_back(mean(*e.latest_marginal(x)));
            out.push_back(cov(*e.latest_marginal(x)));
        }
        return out;
    };
    std::vector<int> order(20);
    for (int i = 0; i < 20; ++i) order[i] = i;
    const auto base = run(order);
    for (int p = 0; p < 10; ++p) {
        std::shuffle(order.begin(), order.end(), rng);
        const auto other = run(order);
        double worst = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) worst = std::max(worst, (base[i] - other[i]).cwiseAbs().maxCoeff());
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("lgssm reinjection leaves marginals unchanged") {
    std::mt19937_64 rng(5);
    auto inst = random_lgssm(rng, 8, 2);
    auto model = build_lgssm(inst.cfg);
    InferenceEngine e(std::move(model.graph));
    std::vector<std::pair<VariableId, Eigen::MatrixXd>> data;
    for (int t = 0; t < 8; ++t) data.emplace_back(model.y[t], inst.y[t]);
    std::vector<rx::Subscription> subs;
    for (auto x : model.x) subs.push_back(e.marginal_stream(x).subscribe([](const MarginalUpdate&) {}));
    e.run_iterations(data, 1);
    const auto first = engine_means(e, model.x);
    e.run_iterations(data, 2);
    const auto again = engine_means(e, model.x);
    for (std::size_t t = 0; t < first.size(); ++t) CHECK((first[t] - again[t]).norm() < 1e-12);
}

TEST_CASE("run_iterations validates its arguments") {
    auto m = build_coin_model(2);
    InferenceEngine e(std::move(m.graph));
    CHECK_THROWS_AS(e.run_iterations({{m.y[0], Eigen::MatrixXd::Ones(1, 1)}, {m.y[1], Eigen::MatrixXd::Ones(1, 1)}}, 0),
                    std::invalid_argument);
    try {
        e.run_iterations({{m.y[0], Eigen::MatrixXd::Ones(1, 1)}}, 1);
        FAIL("expected a fault");
    } catch (const std::invalid_argument& err) {
        CHECK(std::string(err.what()).find("y_2") != std::string::npos);
    }
}

TEST_CASE("hmm emits one BFE update per sweep and BFE never increases") {
    ModelConfig c = parse_model_config({{"model", "hmm"}, {"n", 100}, {"M", 3}});
    const auto data = simulate_hmm(c, 42);
    auto model = build_hmm(c);
    InferenceEngine e(std::move(model.graph));
    std::vector<BfeUpdate> bfe;
    auto sub = e.bfe_stream().subscribe([&](const BfeUpdate& u) { bfe.push_back(u); });
    init_hmm(e, model, c);
    CHECK(bfe.empty());
    e.run_iterations(hmm_bindings(model, data, 3), 15);
    REQUIRE(bfe.size() == 15);
    for (std::size_t i = 1; i < bfe.size(); ++i) {
        INFO("iteration " << i << ": " << bfe[i - 1].total << " -> " << bfe[i].total);
        CHECK(bfe[i].total <= bfe[i - 1].total + 1e-8);
    }
    for (const auto& u : bfe) {
        double s = 0.0;
        for (double x : u.energies) s += x;
        for (double x : u.entropies) s += x;
        CHECK(s == u.total);
        CHECK(std::isfinite(u.total));
    }
}

TEST_CASE("hmm without initial parameter marginals refuses to run") {
    ModelConfig c = parse_model_config({{"model", "hmm"}, {"n", 4}, {"M", 2}});
    auto model = build_hmm(c);
    InferenceEngine e(std::move(model.graph));
    auto sub = e.marginal_stream(model.z[0]).subscribe([](const MarginalUpdate&) {});
    try {
        e.inject(model.y[0], one_hot(0, 2));
        FAIL("expected a fault");
    } catch (const std::logic_error& err) {
        const std::string what = err.what();
        CHECK(what.find("set_marginal") != std::string::npos);
        CHECK(what.find("A") != std::string::npos);
    }
}

TEST_CASE("known-parameter hmm: BFE equals the exact negative log evidence") {
    std::mt19937_64 rng(9);
    for (int T = 2; T <= 6; ++T) {
        ModelConfig c = parse_model_config({{"model", "hmm"},
                                            {"n", T},
                                            {"M", 2},
                                            {"A", {{0.8, 0.3}, {0.2, 0.7}}},
                                            {"B", {{0.9, 0.25}, {0.1, 0.75}}},
                                            {"known_parameters", true}});
        const auto data = simulate_hmm(c, rng());
        auto model = build_hmm(c);
        InferenceEngine e(std::move(model.graph));
        std::vector<BfeUpdate> bfe;
        auto sub = e.bfe_stream().subscribe([&](const BfeUpdate& u) { bfe.push_back(u); });
        std::vector<rx::Subscription> subs;
        for (auto z : model.z) subs.push_back(e.marginal_stream(z).subscribe([](const MarginalUpdate&) {}));
        e.run_iterations(hmm_bindings(model, data, 2), 3);
        REQUIRE(bfe.size() == 3);
        const double neg_log_ev = -oracle::hmm_log_evidence(c.A, c.B, c.p0, data.y);
        CHECK(bfe.back().total >= neg_log_ev - 1e-9);
        CHECK(bfe.back().total - neg_log_ev < 1e-8);
        const auto post = oracle::hmm_posteriors(c.A, c.B, c.p0, data.y);
        const auto fb = oracle::hmm_forward_backward(c.A, c.B, c.p0, data.y);
        for (int t = 0; t < T; ++t) CHECK((fb[t] - post[t]).cwiseAbs().maxCoeff() < 1e-12);
        for (int t = 0; t < T; ++t) {
            const auto q = std::get<Categorical>(*e.latest_marginal(model.z[t]));
            CHECK((q.p - post[t]).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("learned-parameter hmm: BFE bounds the collapsed negative log evidence") {
    std::mt19937_64 rng(11);
    for (int T = 3; T <= 6; ++T) {
        ModelConfig c = parse_model_config({{"model", "hmm"}, {"n", T}, {"M", 2}});
        const auto data = simulate_hmm(c, rng());
        auto model = build_hmm(c);
        InferenceEngine e(std::move(model.graph));
        std::vector<BfeUpdate> bfe;
        auto sub = e.bfe_stream().subscribe([&](const BfeUpdate& u) { bfe.push_back(u); });
        init_hmm(e, model, c);
        e.run_iterations(hmm_bindings(model, data, 2), 30);
        const double neg_log_ev = -oracle::hmm_log_evidence_dirichlet(c.priorA, c.priorB, c.p0, data.y);
        INFO("T=" << T << " F=" << bfe.back().total << " -log p(y)=" << neg_log_ev);
        CHECK(bfe.back().total >= neg_log_ev - 1e-9);
        CHECK(bfe.back().total - neg_log_ev < 10.0);
    }
}

TEST_CASE("hmm iterations continue from the previous fixed point") {
    ModelConfig c = parse_model_config({{"model", "hmm"}, {"n", 30}, {"M", 3}});
    const auto data = simulate_hmm(c, 3);
    auto run = [&](const std::vector<int>& chunks) {
        auto model = build_hmm(c);
        InferenceEngine e(std::move(model.graph));
        std::vector<rx::Subscription> subs;
        for (auto z : model.z) subs.push_back(e.marginal_stream(z).subscribe([](const MarginalUpdate&) {}));
        init_hmm(e, model, c);
        for (int k : chunks) e.run_iterations(hmm_bindings(model, data, 3), k);
        return engine_means(e, model.z);
    };
    const auto split = run({40, 40});
    const auto whole = run({80});
    for (std::size_t t = 0; t < split.size(); ++t) CHECK((split[t] - whole[t]).norm() < 1e-10);
}

TEST_CASE("missing GCV rules fail at wiring time") {
    RuleRegistry reg = RuleRegistry::builtin();
    CHECK(reg.erase_node("GCV") > 0);
    ModelConfig c = parse_model_config({{"model", "hgf"}, {"n", 1}});
    auto model = build_hgf(c);
    EngineOptions opts;
    opts.registry = &reg;
    try {
        InferenceEngine e(std::move(model.graph), opts);
        FAIL("expected a wiring fault");
    } catch (const WiringError& err) {
        CHECK(std::string(err.what()).find("GCV") != std::string::npos);
    }
}

TEST_CASE("dependencies stay local to the node") {
    ModelConfig c = parse_model_config({{"model", "hgf"}, {"n", 1}});
    auto model = build_hgf(c);
    InferenceEngine e(std::move(model.graph));
    const auto& g = e.graph();
    for (const auto& n : g.nodes()) {
        for (std::size_t i = 0; i < n.interfaces.size(); ++i) {
            const auto& v = g.variable(*n.bindings[i]);
            if (v.kind != VariableKind::Random) continue;
            for (const auto& dep : e.dependencies_of(n.id, n.interfaces[i])) {
                const bool own_port = dep.rfind("in:" + n.name + ".", 0) == 0 || dep.rfind("joint:" + n.name + ".", 0) == 0;
                bool own_var = false;
                for (const auto& b : n.bindings) own_var = own_var || dep == "q:" + g.variable(*b).name;
                CHECK_MESSAGE((own_port || own_var), dep);
            }
        }
    }
    CHECK(e.dependencies_of(model.gcv, "out") ==
          std::vector<std::string>{"in:gcv.in", "q:s2"});
    CHECK(e.cluster_names(model.gcv) == std::vector<std::string>{"out_in", "z"});
}

TEST_CASE("set_message with a point mass propagates through a rule") {
    ModelGraph g;
    const auto m = g.add_random_variable("m");
    const auto x = g.add_random_variable("x");
    const auto mu = g.add_data_variable("mu");
    const auto y = g.add_data_variable("y");
    const auto w0 = g.add_constant("w0", 1.0);
    const auto w1 = g.add_constant("w1", 4.0);
    const auto w2 = g.add_constant("w2", 2.0);
    const auto prior = g.add_factor("GaussianMeanPrecision", {{"out", m}, {"mean", mu}, {"precision", w0}}, {}, "prior");
    g.add_factor("GaussianMeanPrecision", {{"out", x}, {"mean", m}, {"precision", w1}}, {}, "link");
    g.add_factor("GaussianMeanPrecision", {{"out", y}, {"mean", x}, {"precision", w2}}, {}, "obs");
    InferenceEngine e(std::move(g));
    std::vector<Packet> link_out;
    auto s1 = e.message_stream(*e.graph().find_node("link"), "out").subscribe([&](const Packet& p) { link_out.push_back(p); });
    auto s2 = e.marginal_stream(x).subscribe([](const MarginalUpdate&) {});
    e.set_message(prior, "out", PointMass::scalar(3.0));
    REQUIRE(link_out.size() == 1);
    const auto& msg = std::get<Gaussian>(link_out[0]->dist);
    CHECK(msg.mean() == doctest::Approx(3.0));
    CHECK(msg.precision() == doctest::Approx(4.0));
    e.inject(y, 0.0);
    const auto q = *e.latest_marginal(x);
    CHECK(mean_value(q) == doctest::Approx(3.0 * 4.0 / 6.0));
    CHECK(variance_value(q) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("set_message refuses a message computed from constants only") {
    ModelGraph g;
    const auto m = g.add_random_variable("m");
    const auto y = g.add_data_variable("y");
    const auto w = g.add_constant("w", 1.0);
    NodeContext pc;
    pc.meta.set("mean", Eigen::MatrixXd::Zero(1, 1)).set("cov", Eigen::MatrixXd::Identity(1, 1));
    const auto prior = g.add_factor("GaussianPrior", {{"out", m}}, pc, "prior");
    g.add_factor("GaussianMeanPrecision", {{"out", y}, {"mean", m}, {"precision", w}}, {}, "obs");
    InferenceEngine e(std::move(g));
    CHECK_THROWS_AS(e.set_message(prior, "out", PointMass::scalar(1.0)), std::logic_error);
}

TEST_CASE("logger and custom pipeline stages see every outbound message") {
    auto m = build_coin_model(1);
    const auto like = *m.graph.find_node("likelihood_1");
    int custom_calls = 0;
    m.graph.set_pipeline(like, {PipelineStage::logger(), PipelineStage::custom("count", [&](const Distribution& d) {
                                    ++custom_calls;
                                    return d;
                                })});
    std::ostringstream log;
    EngineOptions opts;
    opts.trace = json_lines_sink(log);
    InferenceEngine e(std::move(m.graph), opts);
    auto sub = e.marginal_stream(m.theta).subscribe([](const MarginalUpdate&) {});
    e.inject(m.y[0], 0.0);
    e.inject(m.y[0], 1.0);
    CHECK(custom_calls == 2);
    std::istringstream lines(log.str());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("source") == "msg:likelihood_1.p");
        CHECK(j.contains("tick"));
        CHECK(j.at("payload").at("family") == "Beta");
        ++n;
    }
    CHECK(n == 2);
    CHECK(std::get<Beta>(*e.latest_marginal(m.theta)).a == doctest::Approx(2.0));
}

TEST_CASE("point-mass form constraint collapses the marginal") {
    auto m = build_coin_model(3, 2.0, 2.0);
    m.graph.set_form_constraint(m.theta, FormConstraint::PointMass);
    InferenceEngine e(std::move(m.graph));
    auto sub = e.marginal_stream(m.theta).subscribe([](const MarginalUpdate&) {});
    e.inject(m.y[0], 1.0);
    e.inject(m.y[1], 1.0);
    e.inject(m.y[2], 0.0);
    const auto q = std::get<PointMass>(*e.latest_marginal(m.theta));
    CHECK(q.scalar_value() == doctest::Approx((4.0 - 1.0) / (4.0 + 3.0 - 2.0)));
}

TEST_CASE("chain redirect filters an observation stream") {
    ModelConfig c = parse_model_config({{"model", "hgf"}, {"n", 250}, {"kappa", 0.0}});
    auto model = build_hgf(c);
    InferenceEngine e(std::move(model.graph));
    std::vector<double> s1_precision;
    std::vector<double> s2_mean;
    auto sub1 = e.marginal_stream(model.s1).subscribe([&](const MarginalUpdate& u) {
        s1_precision.push_back(1.0 / variance_value(u.dist));
    });
    auto sub2 = e.marginal_stream(model.s2).subscribe([&](const MarginalUpdate& u) { s2_mean.push_back(mean_value(u.dist)); });
    e.chain_redirect(model.s1, model.s1p_m, model.s1p_w);
    e.chain_redirect(model.s2, model.s2p_m, model.s2p_w);
    CHECK(s1_precision.empty());
    e.stage(model.s1p_m, c.s1_0_mean);
    e.stage(model.s1p_w, c.s1_0_precision);
    e.stage(model.s2p_m, c.s2_0_mean);
    e.stage(model.s2p_w, c.s2_0_precision);
    e.set_marginal(model.s2, Gaussian::mean_precision(c.s2_0_mean, c.s2_0_precision));
    const int k = 5;
    std::vector<double> last_precision;
    for (int t = 0; t < 250; ++t) {
        e.step({{model.y, Eigen::MatrixXd::Constant(1, 1, 0.5)}}, k);
        last_precision.push_back(s1_precision.back());
    }
    CHECK(e.steps() == 250);
    CHECK(e.chain_errors().empty());
    CHECK(s1_precision.size() == 250 * k);
    for (std::size_t t = 1; t < last_precision.size(); ++t) CHECK(last_precision[t] >= last_precision[t - 1] - 1e-12);
    for (double v : s2_mean) CHECK(std::isfinite(v));
}
