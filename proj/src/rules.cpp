#include "rmp/rules.hpp"

#include "rmp/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rmp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

bool slot_less(const InboundSlot& a, const InboundSlot& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.name < b.name;
}

void sort_slots(std::vector<InboundSlot>& slots) { std::sort(slots.begin(), slots.end(), slot_less); }

const Gaussian& as_gaussian(const Distribution& d, const char* who) {
    if (const auto* g = std::get_if<Gaussian>(&d)) return *g;
    throw std::invalid_argument(std::string(who) + ": expected a Gaussian, got " + describe(d));
}

double positive_mean(const Distribution& q, const char* who) {
    const double e = mean_value(q);
    if (!(e > 0.0) || !std::isfinite(e)) throw std::invalid_argument(std::string(who) + ": expected precision must be positive");
    return e;
}

// Gaussian message of out given m_in and a known coupling precision gamma:
// the convolution of m_in with N(0, 1/gamma), in canonical arithmetic so that
// flat inbound messages stay flat.
Distribution convolve_precision(const Distribution& m, double gamma) {
    if (const auto* pm = std::get_if<PointMass>(&m)) return Gaussian::mean_precision(pm->scalar_value(), gamma);
    const auto& g = as_gaussian(m, "convolve_precision");
    const double w = g.precision();
    if (w > 0.0) return Gaussian::mean_precision(g.mean(), 1.0 / (g.variance() + 1.0 / gamma));
    return Gaussian::weighted_mean_precision(g.weighted_mean(), 0.0);
}

// Joint of two scalar Gaussian messages coupled by exp(-gamma (x - y)^2 / 2).
Distribution coupled_joint(const Distribution& m_x, const Distribution& m_y, double gamma) {
    const auto& gx = as_gaussian(m_x, "joint");
    const auto& gy = as_gaussian(m_y, "joint");
    Eigen::Matrix2d w;
    w << gamma + gx.precision(), -gamma, -gamma, gamma + gy.precision();
    Eigen::Vector2d xi(gx.weighted_mean(), gy.weighted_mean());
    MvGaussian j = MvGaussian::weighted_mean_precision(xi, w);
    if (!j.proper()) throw DistributionError("joint marginal is not normalizable");
    return j;
}

// Mean vector and covariance of a scalar/vector marginal (PointMass -> zero covariance).
struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

Moments moments_of(const Distribution& d) {
    Eigen::MatrixXd m = mean(d);
    if (m.cols() != 1) throw std::invalid_argument("moments_of: expected a vector-valued distribution");
    return {m.col(0), cov(d)};
}

// Joint moments of the listed interfaces: from the cluster joint when present,
// otherwise from independent marginals.
Moments joint_moments(const RuleInputs& in, const std::vector<std::string>& names) {
    if (const auto* j = in.find_q(join(names, "_"))) return moments_of(*j);
    std::vector<Moments> parts;
    Eigen::Index n = 0;
    for (const auto& name : names) {
        parts.push_back(moments_of(in.q(name)));
        n += parts.back().mean.size();
    }
    Moments out{Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n)};
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        const auto k = p.mean.size();
        out.mean.segment(at, k) = p.mean;
        out.cov.block(at, at, k, k) = p.cov;
        at += k;
    }
    return out;
}

// E[log A] for MatrixDirichlet or PointMass matrices (log 0 = -inf).
Eigen::MatrixXd log_matrix(const Distribution& q_a) {
    if (std::holds_alternative<MatrixDirichlet>(q_a) || std::holds_alternative<PointMass>(q_a)) return expectation_log(q_a);
    throw std::invalid_argument("transition: q_a must be MatrixDirichlet or PointMass, got " + describe(q_a));
}

// sum_j L_ij x_j with the convention 0 * -inf = 0.
Eigen::VectorXd safe_product(const Eigen::MatrixXd& l, const Eigen::VectorXd& x) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(l.rows());
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        for (Eigen::Index j = 0; j < l.cols(); ++j) {
            if (x[j] != 0.0) out[i] += l(i, j) * x[j];
        }
    }
    return out;
}

Eigen::VectorXd probability_vector(const Distribution& d) {
    Eigen::MatrixXd m = mean(d);
    if (m.cols() != 1) throw std::invalid_argument("expected a probability vector, got " + describe(d));
    return m.col(0);
}

Categorical categorical_or_fail(const Eigen::VectorXd& v) {
    if (!(v.array() >= 0.0).all() || !(v.sum() > 0.0) || !v.allFinite()) throw DistributionError("message has zero total mass");
    return Categorical(v);
}

Categorical categorical_from_log(const Eigen::VectorXd& lv) { return Categorical::from_log(lv); }

double expect_log_one_minus(const Distribution& q) {
    if (const auto* b = std::get_if<Beta>(&q)) return numeric::digamma(b->b) - numeric::digamma(b->a + b->b);
    if (const auto* p = std::get_if<PointMass>(&q)) return std::log1p(-p->scalar_value());
    throw std::invalid_argument("E[log(1 - x)] requires Beta or PointMass");
}

MvGaussian to_mv(const Distribution& d, const char* who) {
    if (const auto* g = std::get_if<MvGaussian>(&d)) return *g;
    if (const auto* g = std::get_if<Gaussian>(&d))
        return MvGaussian::weighted_mean_precision(Eigen::VectorXd::Constant(1, g->weighted_mean()),
                                                   Eigen::MatrixXd::Constant(1, 1, g->precision()));
    throw std::invalid_argument(std::string(who) + ": expected a Gaussian, got " + describe(d));
}

Eigen::MatrixXd symmetric(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

// ---------------------------------------------------------------------------
// Metadata

Metadata& Metadata::set(const std::string& key, Eigen::MatrixXd value) {
    values_[key] = std::move(value);
    return *this;
}

Metadata& Metadata::set(const std::string& key, double value) {
    return set(key, Eigen::MatrixXd::Constant(1, 1, value));
}

const Eigen::MatrixXd& Metadata::matrix(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing node metadata '" + key + "'");
    return it->second;
}

double Metadata::scalar(const std::string& key) const {
    const auto& m = matrix(key);
    if (m.size() != 1) throw std::invalid_argument("node metadata '" + key + "' is not a scalar");
    return m(0, 0);
}

double Metadata::scalar_or(const std::string& key, double fallback) const {
    return has(key) ? scalar(key) : fallback;
}

std::string_view constraint_name(Constraint c) {
    return c == Constraint::Marginalisation ? "Marginalisation" : "MomentMatching";
}

// ---------------------------------------------------------------------------
// Node table

const std::vector<NodeSpec>& node_table() {
    static const std::vector<NodeSpec> table = {
        {"GaussianMeanPrecision", {"out", "mean", "precision"}, {}, {}},
        {"LinearGaussian", {"out", "in"}, {"A", "P"}, {}},
        {"GaussianPrior", {"out"}, {"mean", "cov"}, {}},
        {"Categorical", {"out"}, {"p"}, {}},
        {"MatrixDirichlet", {"out"}, {"P"}, {}},
        {"Transition", {"out", "in", "a"}, {}, {}},
        {"Beta", {"out", "a", "b"}, {}, {}},
        {"Bernoulli", {"out", "p"}, {}, {}},
        {"GCV", {"out", "in", "z"}, {"kappa", "omega"}, {"z"}},
    };
    return table;
}

const NodeSpec* find_node_spec(std::string_view kind) {
    for (const auto& spec : node_table()) {
        if (spec.kind == kind) return &spec;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// Keys and inputs

std::string InboundSlot::label() const {
    std::string s = (kind == InboundKind::Message ? "m_" : "q_") + name + ":";
    s += family ? std::string(family_name(*family)) : std::string("Any");
    return s;
}

std::string RuleKey::describe() const {
    std::ostringstream os;
    os << "(" << node << ", :" << target << ", " << constraint_name(constraint);
    auto sorted = inbound;
    sort_slots(sorted);
    for (const auto& s : sorted) os << ", " << s.label();
    os << ")";
    return os.str();
}

void RuleInputs::add(InboundKind kind, const std::string& name, const Distribution& d) {
    (kind == InboundKind::Message ? m_ : q_).emplace_back(name, &d);
}

const Distribution& RuleInputs::m(std::string_view name) const {
    for (const auto& [n, d] : m_) {
        if (n == name) return *d;
    }
    throw std::invalid_argument("rule input m_" + std::string(name) + " is missing");
}

const Distribution& RuleInputs::q(std::string_view name) const {
    if (const auto* d = find_q(name)) return *d;
    throw std::invalid_argument("rule input q_" + std::string(name) + " is missing");
}

const Distribution* RuleInputs::find_q(std::string_view name) const {
    for (const auto& [n, d] : q_) {
        if (n == name) return d;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// Registry

std::string RuleRegistry::structural_id(const RuleKey& key) {
    auto slots = key.inbound;
    sort_slots(slots);
    std::string id = key.node + "|" + key.target + "|" + std::string(constraint_name(key.constraint));
    for (const auto& s : slots) id += (s.kind == InboundKind::Message ? "|m_" : "|q_") + s.name;
    return id;
}

void RuleRegistry::add(RuleKey key, RuleFn fn) {
    sort_slots(key.inbound);
    for (std::size_t i = 1; i < key.inbound.size(); ++i) {
        if (!slot_less(key.inbound[i - 1], key.inbound[i]))
            throw std::logic_error("rule key " + key.describe() + " lists a slot twice");
    }
    int wild = 0;
    for (const auto& s : key.inbound) wild += s.family ? 0 : 1;
    auto& bucket = rules_[structural_id(key)];
    for (const auto& e : bucket) {
        if (e.wildcards != wild) continue;
        bool overlap = true;
        for (std::size_t i = 0; i < key.inbound.size(); ++i) {
            const auto& a = key.inbound[i].family;
            const auto& b = e.key.inbound[i].family;
            if (a && b && *a != *b) overlap = false;
        }
        if (overlap) throw std::logic_error("ambiguous rule registration: " + key.describe() + " overlaps " + e.key.describe());
    }
    bucket.push_back(Entry{std::move(key), std::move(fn), wild});
}

std::size_t RuleRegistry::erase_node(const std::string& node) {
    std::size_t removed = 0;
    for (auto it = rules_.begin(); it != rules_.end();) {
        if (it->second.front().key.node == node) {
            removed += it->second.size();
            it = rules_.erase(it);
        } else {
            ++it;
        }
    }
    energies_.erase(node);
    return removed;
}

void RuleRegistry::add_alternatives(const std::string& node, const std::string& target, Constraint constraint,
                                    const std::vector<std::pair<std::string, std::vector<Family>>>& slots,
                                    const RuleFn& fn) {
    std::vector<std::vector<InboundSlot>> combos{{}};
    for (const auto& [label, fams] : slots) {
        InboundSlot base{label.rfind("m_", 0) == 0 ? InboundKind::Message : InboundKind::Marginal, label.substr(2),
                         std::nullopt};
        std::vector<std::vector<InboundSlot>> next;
        for (const auto& c : combos) {
            if (fams.empty()) {
                next.push_back(c);
                next.back().push_back(base);
                continue;
            }
            for (Family f : fams) {
                next.push_back(c);
                auto s = base;
                s.family = f;
                next.back().push_back(s);
            }
        }
        combos = std::move(next);
    }
    for (auto& c : combos) add(RuleKey{node, target, constraint, std::move(c)}, fn);
}

bool RuleRegistry::resolvable(const RuleKey& structural) const {
    auto it = rules_.find(structural_id(structural));
    return it != rules_.end() && !it->second.empty();
}

const RuleFn& RuleRegistry::lookup(const RuleKey& concrete) const {
    auto it = rules_.find(structural_id(concrete));
    if (it == rules_.end()) throw NoRuleError("no rule registered for " + concrete.describe());
    auto slots = concrete.inbound;
    sort_slots(slots);
    const Entry* best = nullptr;
    for (const auto& e : it->second) {
        bool match = true;
        for (std::size_t i = 0; i < slots.size() && match; ++i) {
            const auto& want = e.key.inbound[i].family;
            if (want && (!slots[i].family || *want != *slots[i].family)) match = false;
        }
        if (match && (!best || e.wildcards < best->wildcards)) best = &e;
    }
    if (!best) throw NoRuleError("no rule registered for " + concrete.describe());
    return best->fn;
}

void RuleRegistry::add_energy(const std::string& node, EnergyFn fn) {
    if (energies_.count(node)) throw std::logic_error("energy for node kind '" + node + "' registered twice");
    energies_[node] = std::move(fn);
}

const EnergyFn* RuleRegistry::energy(const std::string& node) const {
    auto it = energies_.find(node);
    return it == energies_.end() ? nullptr : &it->second;
}

std::vector<RuleKey> RuleRegistry::keys() const {
    std::vector<RuleKey> out;
    for (const auto& [id, bucket] : rules_) {
        for (const auto& e : bucket) out.push_back(e.key);
    }
    return out;
}

const RuleRegistry& RuleRegistry::builtin() {
    static const RuleRegistry registry = [] {
        RuleRegistry r;
        register_builtin_rules(r);
        return r;
    }();
    return registry;
}

// ---------------------------------------------------------------------------
// Rules

namespace rules {

Distribution gaussian_out_known_variance(const Distribution& m_mean, double variance) {
    if (!(variance > 0.0) || !std::isfinite(variance)) throw std::invalid_argument("node variance must be positive");
    return convolve_precision(m_mean, 1.0 / variance);
}

Distribution gaussian_out_structured(const Distribution& m_mean, const Distribution& q_precision) {
    return convolve_precision(m_mean, positive_mean(q_precision, "gaussian_out_structured"));
}

Distribution gaussian_out_mean_field(const Distribution& q_mean, const Distribution& q_precision) {
    return Gaussian::mean_precision(mean_value(q_mean), positive_mean(q_precision, "gaussian_out_mean_field"));
}

namespace {
Distribution precision_from_square(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DistributionError("E[(out - mean)^2] must be positive");
    return Gamma(1.5, 0.5 * s);
}
}  // namespace

Distribution gaussian_precision_mean_field(const Distribution& q_out, const Distribution& q_mean) {
    const double d = mean_value(q_out) - mean_value(q_mean);
    return precision_from_square(variance_value(q_out) + variance_value(q_mean) + d * d);
}

Distribution gaussian_precision_structured(const Distribution& q_out_mean) {
    auto m = moments_of(q_out_mean);
    if (m.mean.size() != 2) throw std::invalid_argument("gaussian_precision_structured: expected a bivariate joint");
    const double d = m.mean[0] - m.mean[1];
    return precision_from_square(m.cov(0, 0) + m.cov(1, 1) - 2.0 * m.cov(0, 1) + d * d);
}

Distribution gaussian_joint(const Distribution& m_out, const Distribution& m_mean, const Distribution& q_precision) {
    return coupled_joint(m_out, m_mean, positive_mean(q_precision, "gaussian_joint"));
}

Distribution linear_out(const Distribution& m_in, const Eigen::MatrixXd& a, const Eigen::MatrixXd& p) {
    if (const auto* pm = std::get_if<PointMass>(&m_in)) return MvGaussian::mean_covariance(a * pm->vector_value(), p);
    const MvGaussian g = to_mv(m_in, "linear_out");
    if (g.dim() != a.cols()) throw std::invalid_argument("linear_out: dimension mismatch");
    if (g.form() == MvGaussianForm::MeanCovariance || g.proper()) {
        return MvGaussian::mean_covariance(a * g.mean(), symmetric(a * g.covariance() * a.transpose() + p));
    }
    // Improper inbound message: marginalize the joint precision over `in`.
    const Eigen::MatrixXd pinv = p.inverse();
    const Eigen::MatrixXd lam = a.transpose() * pinv * a + g.precision();
    Eigen::LLT<Eigen::MatrixXd> llt(lam);
    if (llt.info() != Eigen::Success) throw DistributionError("linear_out: inbound message too flat to propagate");
    const Eigen::MatrixXd pa = pinv * a;
    Eigen::MatrixXd w = pinv - pa * llt.solve(pa.transpose());
    Eigen::VectorXd xi = pa * llt.solve(g.weighted_mean());
    return MvGaussian::weighted_mean_precision(std::move(xi), symmetric(w));
}

Distribution linear_in(const Distribution& m_out, const Eigen::MatrixXd& a, const Eigen::MatrixXd& p) {
    const Eigen::MatrixXd pinv = p.inverse();
    if (const auto* pm = std::get_if<PointMass>(&m_out)) {
        const Eigen::MatrixXd at = a.transpose() * pinv;
        return MvGaussian::weighted_mean_precision(at * pm->vector_value(), symmetric(at * a));
    }
    const MvGaussian g = to_mv(m_out, "linear_in");
    if (g.dim() != a.rows()) throw std::invalid_argument("linear_in: dimension mismatch");
    const Eigen::MatrixXd w = g.precision();
    const Eigen::MatrixXd k = (Eigen::MatrixXd::Identity(w.rows(), w.cols()) + w * p).partialPivLu().solve(
        Eigen::MatrixXd::Identity(w.rows(), w.cols()));
    Eigen::MatrixXd win = a.transpose() * k * w * a;
    Eigen::VectorXd xi = a.transpose() * k * g.weighted_mean();
    return MvGaussian::weighted_mean_precision(std::move(xi), symmetric(win));
}

Distribution linear_joint(const Distribution& m_out, const Distribution& m_in, const Eigen::MatrixXd& a,
                          const Eigen::MatrixXd& p) {
    const MvGaussian go = to_mv(m_out, "linear_joint");
    const MvGaussian gi = to_mv(m_in, "linear_joint");
    const auto dout = a.rows(), din = a.cols();
    const Eigen::MatrixXd pinv = p.inverse();
    Eigen::MatrixXd w(dout + din, dout + din);
    w.topLeftCorner(dout, dout) = pinv + go.precision();
    w.topRightCorner(dout, din) = -pinv * a;
    w.bottomLeftCorner(din, dout) = -a.transpose() * pinv;
    w.bottomRightCorner(din, din) = a.transpose() * pinv * a + gi.precision();
    Eigen::VectorXd xi(dout + din);
    xi << go.weighted_mean(), gi.weighted_mean();
    MvGaussian j = MvGaussian::weighted_mean_precision(std::move(xi), symmetric(w));
    if (!j.proper()) throw DistributionError("linear_joint: joint marginal is not normalizable");
    return j;
}

Distribution transition_out_structured(const Distribution& m_in, const Distribution& q_a) {
    const Eigen::MatrixXd l = log_matrix(q_a);
    return categorical_or_fail(l.array().exp().matrix() * probability_vector(m_in));
}

Distribution transition_in_structured(const Distribution& m_out, const Distribution& q_a) {
    const Eigen::MatrixXd l = log_matrix(q_a);
    return categorical_or_fail(l.array().exp().matrix().transpose() * probability_vector(m_out));
}

Distribution transition_out_mean_field(const Distribution& q_in, const Distribution& q_a) {
    return categorical_from_log(safe_product(log_matrix(q_a), probability_vector(q_in)));
}

Distribution transition_in_mean_field(const Distribution& q_out, const Distribution& q_a) {
    return categorical_from_log(safe_product(log_matrix(q_a).transpose(), probability_vector(q_out)));
}

Distribution transition_a_structured(const Distribution& q_out_in) {
    const auto* c = std::get_if<Contingency>(&q_out_in);
    if (!c) throw std::invalid_argument("transition_a_structured: expected a Contingency joint");
    return MatrixDirichlet(c->p.array() + 1.0);
}

Distribution transition_a_mean_field(const Distribution& q_out, const Distribution& q_in) {
    Eigen::MatrixXd stats = probability_vector(q_out) * probability_vector(q_in).transpose();
    return MatrixDirichlet(stats.array() + 1.0);
}

Distribution transition_joint(const Distribution& m_out, const Distribution& m_in, const Distribution& q_a) {
    Eigen::MatrixXd l = log_matrix(q_a);
    const Eigen::VectorXd po = probability_vector(m_out);
    const Eigen::VectorXd pi = probability_vector(m_in);
    if (l.rows() != po.size() || l.cols() != pi.size()) throw std::invalid_argument("transition_joint: dimension mismatch");
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        for (Eigen::Index j = 0; j < l.cols(); ++j) l(i, j) += std::log(po[i]) + std::log(pi[j]);
    }
    return Contingency::from_log(l);
}

Distribution dirichlet_update(const Distribution& prior, const Eigen::MatrixXd& statistics) {
    if ((statistics.array() < 0.0).any()) throw std::invalid_argument("dirichlet_update: negative statistics");
    if (const auto* d = std::get_if<Dirichlet>(&prior)) {
        if (statistics.cols() != 1 || statistics.rows() != d->alpha.size())
            throw std::invalid_argument("dirichlet_update: shape mismatch");
        return Dirichlet(d->alpha + statistics.col(0));
    }
    if (const auto* d = std::get_if<MatrixDirichlet>(&prior)) {
        if (statistics.rows() != d->alpha.rows() || statistics.cols() != d->alpha.cols())
            throw std::invalid_argument("dirichlet_update: shape mismatch");
        return MatrixDirichlet(d->alpha + statistics);
    }
    throw std::invalid_argument("dirichlet_update: prior must be Dirichlet or MatrixDirichlet");
}

GcvParams gcv_params(const Metadata& meta) {
    GcvParams p{meta.scalar("kappa"), meta.scalar("omega"), static_cast<int>(meta.scalar_or("gh_n", 21))};
    if (p.gh_points < 1) throw std::invalid_argument("GCV needs gh_n >= 1");
    return p;
}

double gcv_expect_exp(double mean, double variance, double kappa, int gh_points) {
    if (variance <= 0.0) return std::exp(-kappa * mean);
    return GaussHermite::get(gh_points).expect(mean, variance, [kappa](double z) { return std::exp(-kappa * z); });
}

double gcv_expected_precision(const Distribution& q_z, const GcvParams& p) {
    const double g = gcv_expect_exp(mean_value(q_z), variance_value(q_z), p.kappa, p.gh_points);
    const double gamma = std::exp(-p.omega) * g;
    if (!std::isfinite(gamma) || !(gamma > 0.0)) throw std::invalid_argument("GCV expected precision is not finite");
    return gamma;
}

Distribution gcv_out(const Distribution& m_in, const Distribution& q_z, const GcvParams& p) {
    return convolve_precision(m_in, gcv_expected_precision(q_z, p));
}

Distribution gcv_joint(const Distribution& m_out, const Distribution& m_in, const Distribution& q_z, const GcvParams& p) {
    return coupled_joint(m_out, m_in, gcv_expected_precision(q_z, p));
}

double gcv_psi(const Distribution& q_out_in) {
    auto m = moments_of(q_out_in);
    if (m.mean.size() != 2) throw std::invalid_argument("gcv_psi: expected a bivariate joint");
    const double d = m.mean[0] - m.mean[1];
    return m.cov(0, 0) + m.cov(1, 1) - 2.0 * m.cov(0, 1) + d * d;
}

double gcv_psi(const Distribution& q_out, const Distribution& q_in) {
    const double d = mean_value(q_out) - mean_value(q_in);
    return variance_value(q_out) + variance_value(q_in) + d * d;
}

Distribution gcv_z_projection(double psi, const Distribution& m_z, const GcvParams& p) {
    const auto& cav = as_gaussian(m_z, "gcv_z_projection");
    const double wc = cav.precision();
    const double xic = cav.weighted_mean();
    const double c = psi * std::exp(-p.omega);
    const double k = p.kappa;
    if (!(psi > 0.0) || !std::isfinite(c)) throw DistributionError("gcv_z_projection: E[(out - in)^2] must be positive");
    if (wc <= 0.0 && k == 0.0) throw DistributionError("gcv_z_projection: objective is unbounded");
    const auto& gh = GaussHermite::get(p.gh_points);

    // Objective over q = N(m, s^2): the free energy restricted to q(z),
    //   J = wc (m^2 + s^2) / 2 - xic m + k m / 2 + c G(m, s) / 2 - log s,
    // with G(m, s) = sum_i w_i exp(-k (m + s x_i)), which is jointly convex.
    struct Eval {
        double j, gm, gs, hmm, hms, hss;
    };
    auto eval = [&](double m, double s) {
        double g0 = 0, g1 = 0, g2 = 0;
        for (Eigen::Index i = 0; i < gh.nodes.size(); ++i) {
            const double x = gh.nodes[i];
            const double e = gh.weights[i] * std::exp(-k * (m + s * x));
            g0 += e;
            g1 += e * x;
            g2 += e * x * x;
        }
        Eval r;
        r.j = 0.5 * wc * (m * m + s * s) - xic * m + 0.5 * k * m + 0.5 * c * g0 - std::log(s);
        r.gm = wc * m - xic + 0.5 * k - 0.5 * c * k * g0;
        r.gs = wc * s - 0.5 * c * k * g1 - 1.0 / s;
        r.hmm = wc + 0.5 * c * k * k * g0;
        r.hms = 0.5 * c * k * k * g1;
        r.hss = wc + 0.5 * c * k * k * g2 + 1.0 / (s * s);
        return r;
    };

    double m = wc > 0.0 ? xic / wc : 0.0;
    double s = wc > 0.0 ? 1.0 / std::sqrt(wc) : 1.0;
    Eval cur = eval(m, s);
    for (int it = 0; it < 200; ++it) {
        const double det = cur.hmm * cur.hss - cur.hms * cur.hms;
        double dm, ds;
        if (det > 0.0 && cur.hmm > 0.0) {
            dm = -(cur.hss * cur.gm - cur.hms * cur.gs) / det;
            ds = -(-cur.hms * cur.gm + cur.hmm * cur.gs) / det;
        } else {
            dm = -cur.gm;
            ds = -cur.gs;
        }
        const double slope = cur.gm * dm + cur.gs * ds;
        double t = 1.0;
        Eval next{};
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            const double sn = s + t * ds;
            if (!(sn > 0.0)) continue;
            next = eval(m + t * dm, sn);
            if (std::isfinite(next.j) && next.j <= cur.j + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        m += t * dm;
        s += t * ds;
        cur = next;
        if (std::abs(t * dm) <= 1e-15 * (1.0 + std::abs(m)) && std::abs(t * ds) <= 1e-15 * s) break;
        if (std::abs(cur.gm) + std::abs(cur.gs) < 1e-14) break;
    }
    if (!std::isfinite(m) || !std::isfinite(s)) throw std::runtime_error("gcv_z_projection: optimization produced NaN");
    const double wq = 1.0 / (s * s);
    const double w = std::max(wq - wc, 0.0);
    return Gaussian::weighted_mean_precision(m * wq - xic, w);
}

Distribution gcv_z_moment_matching(double psi, const Distribution& m_z, const GcvParams& p) {
    const auto& cav = as_gaussian(m_z, "gcv_z_moment_matching");
    if (!cav.proper()) throw DistributionError("gcv_z_moment_matching: cavity message must be proper");
    const double c = psi * std::exp(-p.omega);
    const auto& gh = GaussHermite::get(p.gh_points);
    const double mc = cav.mean(), sc = std::sqrt(cav.variance());
    const auto n = gh.nodes.size();
    Eigen::VectorXd z(n), lw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        z[i] = mc + sc * gh.nodes[i];
        lw[i] = std::log(gh.weights[i]) - 0.5 * p.kappa * z[i] - 0.5 * c * std::exp(-p.kappa * z[i]);
    }
    const double lz = numeric::log_sum_exp(lw);
    const Eigen::VectorXd w = (lw.array() - lz).exp();
    const double mq = w.dot(z);
    const double vq = w.dot((z.array() - mq).square().matrix());
    if (!std::isfinite(mq) || !std::isfinite(vq)) throw std::runtime_error("gcv_z_moment_matching: NaN moments");
    const double wq = 1.0 / std::max(vq, 1e-300);
    const double wm = std::max(wq - cav.precision(), 1e-12);
    return Gaussian::weighted_mean_precision(mq * wq - cav.weighted_mean(), wm);
}

}  // namespace rules

// ---------------------------------------------------------------------------
// Energies

namespace energies {

double gaussian_mean_precision(const RuleInputs& in) {
    const auto& qw = in.q("precision");
    auto mo = joint_moments(in, {"out", "mean"});
    const double d = mo.mean[0] - mo.mean[1];
    const double sq = mo.cov(0, 0) + mo.cov(1, 1) - 2.0 * mo.cov(0, 1) + d * d;
    return 0.5 * kLog2Pi - 0.5 * expectation_log_scalar(qw) + 0.5 * mean_value(qw) * sq;
}

double linear_gaussian(const RuleInputs& in) {
    const auto& a = in.meta().matrix("A");
    const auto& p = in.meta().matrix("P");
    auto mo = joint_moments(in, {"out", "in"});
    const auto dout = a.rows(), din = a.cols();
    if (mo.mean.size() != dout + din) throw std::invalid_argument("linear_gaussian energy: dimension mismatch");
    const Eigen::VectorXd r = mo.mean.head(dout) - a * mo.mean.tail(din);
    const Eigen::MatrixXd soo = mo.cov.topLeftCorner(dout, dout);
    const Eigen::MatrixXd soi = mo.cov.topRightCorner(dout, din);
    const Eigen::MatrixXd sii = mo.cov.bottomRightCorner(din, din);
    const Eigen::MatrixXd e = r * r.transpose() + soo - soi * a.transpose() - a * soi.transpose() + a * sii * a.transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(p);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return 0.5 * (static_cast<double>(dout) * kLog2Pi + logdet + llt.solve(e).trace());
}

double gaussian_prior(const RuleInputs& in) {
    const Eigen::VectorXd m0 = in.meta().matrix("mean").col(0);
    const auto& v = in.meta().matrix("cov");
    auto mo = moments_of(in.q("out"));
    const Eigen::VectorXd r = mo.mean - m0;
    Eigen::LLT<Eigen::MatrixXd> llt(v);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Eigen::MatrixXd e = mo.cov + r * r.transpose();
    return 0.5 * (static_cast<double>(m0.size()) * kLog2Pi + logdet + llt.solve(e).trace());
}

double categorical(const RuleInputs& in) {
    const Eigen::VectorXd p = in.meta().matrix("p").col(0) / in.meta().matrix("p").sum();
    const Eigen::VectorXd q = probability_vector(in.q("out"));
    double u = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        if (q[i] > 0.0) u -= q[i] * std::log(p[i]);
    }
    return u;
}

double matrix_dirichlet(const RuleInputs& in) {
    const auto& p = in.meta().matrix("P");
    const Eigen::MatrixXd l = log_matrix(in.q("out"));
    double u = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        u += numeric::log_beta(p.col(j));
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            if (p(i, j) != 1.0) u -= (p(i, j) - 1.0) * l(i, j);
        }
    }
    return u;
}

double transition(const RuleInputs& in) {
    Eigen::MatrixXd c;
    if (const auto* j = in.find_q("out_in")) {
        const auto* ct = std::get_if<Contingency>(j);
        if (!ct) throw std::invalid_argument("transition energy: joint must be a Contingency table");
        c = ct->p;
    } else {
        c = probability_vector(in.q("out")) * probability_vector(in.q("in")).transpose();
    }
    const Eigen::MatrixXd l = log_matrix(in.q("a"));
    double u = 0.0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        for (Eigen::Index j = 0; j < c.cols(); ++j) {
            if (c(i, j) != 0.0) u -= c(i, j) * l(i, j);
        }
    }
    return u;
}

double beta(const RuleInputs& in) {
    const double a = mean_value(in.q("a"));
    const double b = mean_value(in.q("b"));
    const auto& q = in.q("out");
    return numeric::log_beta(Eigen::Vector2d(a, b)) - (a - 1.0) * expectation_log_scalar(q) -
           (b - 1.0) * expect_log_one_minus(q);
}

double bernoulli(const RuleInputs& in) {
    const double y = mean_value(in.q("out"));
    const auto& qp = in.q("p");
    double u = 0.0;
    if (y != 0.0) u -= y * expectation_log_scalar(qp);
    if (y != 1.0) u -= (1.0 - y) * expect_log_one_minus(qp);
    return u;
}

double gcv(const RuleInputs& in) {
    const auto p = rules::gcv_params(in.meta());
    const double psi = in.find_q("out_in") ? rules::gcv_psi(in.q("out_in")) : rules::gcv_psi(in.q("out"), in.q("in"));
    const auto& qz = in.q("z");
    const double g = rules::gcv_expect_exp(mean_value(qz), variance_value(qz), p.kappa, p.gh_points);
    return 0.5 * kLog2Pi + 0.5 * (p.kappa * mean_value(qz) + p.omega) + 0.5 * psi * std::exp(-p.omega) * g;
}

}  // namespace energies

// ---------------------------------------------------------------------------
// Builtin registrations

void register_builtin_rules(RuleRegistry& r) {
    using F = Family;
    const std::vector<F> g{F::Gaussian};
    const std::vector<F> gp{F::Gaussian, F::PointMass};
    const std::vector<F> w{F::Gamma, F::PointMass};
    const std::vector<F> mv{F::MvGaussian};
    const std::vector<F> pm{F::PointMass};
    const std::vector<F> cat{F::Categorical};
    const std::vector<F> catp{F::Categorical, F::PointMass};
    const std::vector<F> amat{F::MatrixDirichlet, F::PointMass};
    const auto mm = Constraint::Marginalisation;
    const auto both = {Constraint::Marginalisation, Constraint::MomentMatching};

    // GaussianMeanPrecision
    for (auto c : both) {
        r.add_alternatives("GaussianMeanPrecision", "out", c, {{"m_mean", gp}, {"q_precision", w}},
                           [](const RuleInputs& in) { return rules::gaussian_out_structured(in.m("mean"), in.q("precision")); });
        r.add_alternatives("GaussianMeanPrecision", "mean", c, {{"m_out", gp}, {"q_precision", w}},
                           [](const RuleInputs& in) { return rules::gaussian_out_structured(in.m("out"), in.q("precision")); });
        r.add_alternatives("GaussianMeanPrecision", "out", c, {{"q_mean", gp}, {"q_precision", w}},
                           [](const RuleInputs& in) { return rules::gaussian_out_mean_field(in.q("mean"), in.q("precision")); });
        r.add_alternatives("GaussianMeanPrecision", "mean", c, {{"q_out", gp}, {"q_precision", w}},
                           [](const RuleInputs& in) { return rules::gaussian_out_mean_field(in.q("out"), in.q("precision")); });
        r.add_alternatives("GaussianMeanPrecision", "precision", c, {{"q_out", gp}, {"q_mean", gp}},
                           [](const RuleInputs& in) { return rules::gaussian_precision_mean_field(in.q("out"), in.q("mean")); });
        r.add_alternatives("GaussianMeanPrecision", "precision", c, {{"q_out_mean", mv}},
                           [](const RuleInputs& in) { return rules::gaussian_precision_structured(in.q("out_mean")); });
        r.add_alternatives("GaussianMeanPrecision", "out_mean", c, {{"m_out", g}, {"m_mean", g}, {"q_precision", w}},
                           [](const RuleInputs& in) {
                               return rules::gaussian_joint(in.m("out"), in.m("mean"), in.q("precision"));
                           });
    }
    r.add_energy("GaussianMeanPrecision", energies::gaussian_mean_precision);

    // LinearGaussian
    for (auto c : both) {
        auto out = [](const RuleInputs& in) {
            const auto& src = in.find_q("in") ? in.q("in") : in.m("in");
            return rules::linear_out(src, in.meta().matrix("A"), in.meta().matrix("P"));
        };
        auto inw = [](const RuleInputs& in) {
            const auto& src = in.find_q("out") ? in.q("out") : in.m("out");
            return rules::linear_in(src, in.meta().matrix("A"), in.meta().matrix("P"));
        };
        r.add_alternatives("LinearGaussian", "out", c, {{"m_in", mv}}, out);
        r.add_alternatives("LinearGaussian", "out", c, {{"q_in", pm}}, out);
        r.add_alternatives("LinearGaussian", "in", c, {{"m_out", mv}}, inw);
        r.add_alternatives("LinearGaussian", "in", c, {{"q_out", pm}}, inw);
        r.add_alternatives("LinearGaussian", "out_in", c, {{"m_out", mv}, {"m_in", mv}}, [](const RuleInputs& in) {
            return rules::linear_joint(in.m("out"), in.m("in"), in.meta().matrix("A"), in.meta().matrix("P"));
        });
    }
    r.add_energy("LinearGaussian", energies::linear_gaussian);

    // Priors
    for (auto c : both) {
        r.add_alternatives("GaussianPrior", "out", c, {}, [](const RuleInputs& in) -> Distribution {
            return MvGaussian::mean_covariance(in.meta().matrix("mean").col(0), in.meta().matrix("cov"));
        });
        r.add_alternatives("Categorical", "out", c, {}, [](const RuleInputs& in) -> Distribution {
            return Categorical(in.meta().matrix("p").col(0));
        });
        r.add_alternatives("MatrixDirichlet", "out", c, {}, [](const RuleInputs& in) -> Distribution {
            return MatrixDirichlet(in.meta().matrix("P"));
        });
    }
    r.add_energy("GaussianPrior", energies::gaussian_prior);
    r.add_energy("Categorical", energies::categorical);
    r.add_energy("MatrixDirichlet", energies::matrix_dirichlet);

    // Transition
    for (auto c : both) {
        r.add_alternatives("Transition", "out", c, {{"m_in", cat}, {"q_a", amat}},
                           [](const RuleInputs& in) { return rules::transition_out_structured(in.m("in"), in.q("a")); });
        r.add_alternatives("Transition", "in", c, {{"m_out", cat}, {"q_a", amat}},
                           [](const RuleInputs& in) { return rules::transition_in_structured(in.m("out"), in.q("a")); });
        r.add_alternatives("Transition", "out", c, {{"q_in", catp}, {"q_a", amat}},
                           [](const RuleInputs& in) { return rules::transition_out_mean_field(in.q("in"), in.q("a")); });
        r.add_alternatives("Transition", "in", c, {{"q_out", catp}, {"q_a", amat}},
                           [](const RuleInputs& in) { return rules::transition_in_mean_field(in.q("out"), in.q("a")); });
        r.add_alternatives("Transition", "a", c, {{"q_out_in", {F::Contingency}}},
                           [](const RuleInputs& in) { return rules::transition_a_structured(in.q("out_in")); });
        r.add_alternatives("Transition", "a", c, {{"q_out", catp}, {"q_in", catp}},
                           [](const RuleInputs& in) { return rules::transition_a_mean_field(in.q("out"), in.q("in")); });
        r.add_alternatives("Transition", "out_in", c, {{"m_out", cat}, {"m_in", cat}, {"q_a", amat}},
                           [](const RuleInputs& in) { return rules::transition_joint(in.m("out"), in.m("in"), in.q("a")); });
    }
    r.add_energy("Transition", energies::transition);

    // Beta / Bernoulli (coin model)
    for (auto c : both) {
        r.add_alternatives("Beta", "out", c, {{"q_a", pm}, {"q_b", pm}}, [](const RuleInputs& in) -> Distribution {
            return Beta(std::get<PointMass>(in.q("a")).scalar_value(), std::get<PointMass>(in.q("b")).scalar_value());
        });
        r.add_alternatives("Bernoulli", "p", c, {{"q_out", {F::PointMass, F::Bernoulli}}}, [](const RuleInputs& in) -> Distribution {
            const double y = mean_value(in.q("out"));
            return Beta(1.0 + y, 2.0 - y);
        });
        r.add_alternatives("Bernoulli", "out", c, {{"q_p", {F::Beta}}}, [](const RuleInputs& in) -> Distribution {
            const double lp = expectation_log_scalar(in.q("p"));
            const double lq = expect_log_one_minus(in.q("p"));
            return Bernoulli(1.0 / (1.0 + std::exp(lq - lp)));
        });
        r.add_alternatives("Bernoulli", "out", c, {{"m_p", {F::Beta}}},
                           [](const RuleInputs& in) -> Distribution { return Bernoulli(mean_value(in.m("p"))); });
    }
    r.add_energy("Beta", energies::beta);
    r.add_energy("Bernoulli", energies::bernoulli);

    // GCV
    for (auto c : both) {
        r.add_alternatives("GCV", "out", c, {{"m_in", g}, {"q_z", gp}}, [](const RuleInputs& in) {
            return rules::gcv_out(in.m("in"), in.q("z"), rules::gcv_params(in.meta()));
        });
        r.add_alternatives("GCV", "in", c, {{"m_out", g}, {"q_z", gp}}, [](const RuleInputs& in) {
            return rules::gcv_out(in.m("out"), in.q("z"), rules::gcv_params(in.meta()));
        });
        r.add_alternatives("GCV", "out", c, {{"q_in", gp}, {"q_z", gp}}, [](const RuleInputs& in) -> Distribution {
            return Gaussian::mean_precision(mean_value(in.q("in")), rules::gcv_expected_precision(in.q("z"), rules::gcv_params(in.meta())));
        });
        r.add_alternatives("GCV", "in", c, {{"q_out", gp}, {"q_z", gp}}, [](const RuleInputs& in) -> Distribution {
            return Gaussian::mean_precision(mean_value(in.q("out")), rules::gcv_expected_precision(in.q("z"), rules::gcv_params(in.meta())));
        });
        r.add_alternatives("GCV", "out_in", c, {{"m_out", g}, {"m_in", g}, {"q_z", gp}}, [](const RuleInputs& in) {
            return rules::gcv_joint(in.m("out"), in.m("in"), in.q("z"), rules::gcv_params(in.meta()));
        });
        auto z_rule = c == mm ? rules::gcv_z_projection : rules::gcv_z_moment_matching;
        r.add_alternatives("GCV", "z", c, {{"q_out_in", mv}, {"m_z", g}}, [z_rule](const RuleInputs& in) {
            return z_rule(rules::gcv_psi(in.q("out_in")), in.m("z"), rules::gcv_params(in.meta()));
        });
        r.add_alternatives("GCV", "z", c, {{"q_out", gp}, {"q_in", gp}, {"m_z", g}}, [z_rule](const RuleInputs& in) {
            return z_rule(rules::gcv_psi(in.q("out"), in.q("in")), in.m("z"), rules::gcv_params(in.meta()));
        });
    }
    r.add_energy("GCV", energies::gcv);
}

}  // namespace rmp
