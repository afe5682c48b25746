#pragma once

// Node kinds, the message-update-rule registry and the concrete rules.
//
// A rule is addressed by (node kind, target, constraint, inbound signature).
// The target is either an interface name (outbound message) or a cluster
// name such as "out_in" (joint marginal of that cluster).  Inbound slots are
// named after the interface ("m_mean") or cluster ("q_out_in") they read.

#include "rmp/distributions.hpp"

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rmp {

/// Named numeric parameters attached to a node (matrices, scalars as 1x1).
class Metadata {
public:
    Metadata& set(const std::string& key, Eigen::MatrixXd value);
    Metadata& set(const std::string& key, double value);
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const Eigen::MatrixXd& matrix(const std::string& key) const;
    double scalar(const std::string& key) const;
    double scalar_or(const std::string& key, double fallback) const;
    const std::map<std::string, Eigen::MatrixXd>& entries() const { return values_; }

private:
    std::map<std::string, Eigen::MatrixXd> values_;
};

enum class Constraint { Marginalisation, MomentMatching };
std::string_view constraint_name(Constraint c);

struct NodeSpec {
    std::string kind;
    std::vector<std::string> interfaces;
    std::vector<std::string> required_metadata;
    /// Interfaces whose outbound rule also reads the message arriving on the
    /// same interface (needed by projections that divide out a cavity).
    std::vector<std::string> cavity_interfaces;
};

const std::vector<NodeSpec>& node_table();
const NodeSpec* find_node_spec(std::string_view kind);

enum class InboundKind { Message, Marginal };

struct InboundSlot {
    InboundKind kind;
    std::string name;
    std::optional<Family> family;  // nullopt matches any family

    std::string label() const;  // "m_mean:Gaussian", "q_out_in:Any"
};

struct RuleKey {
    std::string node;
    std::string target;
    Constraint constraint = Constraint::Marginalisation;
    std::vector<InboundSlot> inbound;

    std::string describe() const;
};

/// Runtime lookup found no rule for the inbound families at hand.
class NoRuleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structural problem detected while turning a model into streams.
class WiringError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Inbound payloads handed to a rule; lookups by slot name.
class RuleInputs {
public:
    explicit RuleInputs(const Metadata& meta) : meta_(&meta) {}
    void add(InboundKind kind, const std::string& name, const Distribution& d);

    const Distribution& m(std::string_view name) const;
    const Distribution& q(std::string_view name) const;
    const Distribution* find_q(std::string_view name) const;
    const Metadata& meta() const { return *meta_; }

private:
    const Metadata* meta_;
    std::vector<std::pair<std::string, const Distribution*>> m_;
    std::vector<std::pair<std::string, const Distribution*>> q_;
};

using RuleFn = std::function<Distribution(const RuleInputs&)>;
/// Average energy -E_q[log f] of a node given its cluster marginals (as q_ slots).
using EnergyFn = std::function<double(const RuleInputs&)>;

class RuleRegistry {
public:
    /// Registers a rule.  A key overlapping an existing key at equal
    /// specificity (same number of wildcard families) is rejected.
    void add(RuleKey key, RuleFn fn);

    /// Registers one rule under every combination of the listed families
    /// (slot order as in `slots`; an empty alternative list means any family).
    void add_alternatives(const std::string& node, const std::string& target, Constraint constraint,
                          const std::vector<std::pair<std::string, std::vector<Family>>>& slots, const RuleFn& fn);

    /// True when some rule has exactly this set of slot names and kinds.
    bool resolvable(const RuleKey& structural) const;

    /// Most specific rule matching the concrete families, or NoRuleError.
    const RuleFn& lookup(const RuleKey& concrete) const;

    /// Drops every rule and the energy of a node kind; returns the rule count removed.
    std::size_t erase_node(const std::string& node);

    void add_energy(const std::string& node, EnergyFn fn);
    const EnergyFn* energy(const std::string& node) const;

    std::vector<RuleKey> keys() const;

    static const RuleRegistry& builtin();

private:
    struct Entry {
        RuleKey key;
        RuleFn fn;
        int wildcards;
    };
    static std::string structural_id(const RuleKey& key);
    std::map<std::string, std::vector<Entry>> rules_;
    std::map<std::string, EnergyFn> energies_;
};

void register_builtin_rules(RuleRegistry& registry);

// ---------------------------------------------------------------------------
// Individual rules (pure functions used by the registry and tested directly).

namespace rules {

/// Sum-product message towards `out` of N(out | mean, variance) with known variance.
Distribution gaussian_out_known_variance(const Distribution& m_mean, double variance);

/// Structured rule: N(mean(m_mean), var(m_mean) + 1 / E[precision]), returned in
/// mean-precision form (weighted form for a flat inbound message).
Distribution gaussian_out_structured(const Distribution& m_mean, const Distribution& q_precision);

/// Mean-field rule: N(E[mean], 1 / E[precision]).
Distribution gaussian_out_mean_field(const Distribution& q_mean, const Distribution& q_precision);

/// Gamma(3/2, E[(out - mean)^2] / 2) from independent marginals.
Distribution gaussian_precision_mean_field(const Distribution& q_out, const Distribution& q_mean);
/// Same statistic from the joint marginal q(out, mean).
Distribution gaussian_precision_structured(const Distribution& q_out_mean);
/// Joint marginal q(out, mean) for the structured {out, mean} cluster.
Distribution gaussian_joint(const Distribution& m_out, const Distribution& m_mean, const Distribution& q_precision);

/// N(out | A in, P) messages.
Distribution linear_out(const Distribution& m_in, const Eigen::MatrixXd& a, const Eigen::MatrixXd& p);
Distribution linear_in(const Distribution& m_out, const Eigen::MatrixXd& a, const Eigen::MatrixXd& p);
Distribution linear_joint(const Distribution& m_out, const Distribution& m_in, const Eigen::MatrixXd& a,
                          const Eigen::MatrixXd& p);

/// Cat(out | A in) messages; q_a is MatrixDirichlet or a PointMass matrix.
Distribution transition_out_structured(const Distribution& m_in, const Distribution& q_a);
Distribution transition_in_structured(const Distribution& m_out, const Distribution& q_a);
Distribution transition_out_mean_field(const Distribution& q_in, const Distribution& q_a);
Distribution transition_in_mean_field(const Distribution& q_out, const Distribution& q_a);
Distribution transition_a_structured(const Distribution& q_out_in);
Distribution transition_a_mean_field(const Distribution& q_out, const Distribution& q_in);
Distribution transition_joint(const Distribution& m_out, const Distribution& m_in, const Distribution& q_a);

/// Conjugate concentration update: prior + statistics.
Distribution dirichlet_update(const Distribution& prior, const Eigen::MatrixXd& statistics);

struct GcvParams {
    double kappa;
    double omega;
    int gh_points;
};
GcvParams gcv_params(const Metadata& meta);

/// Gauss-Hermite estimate of E[exp(-kappa z)] for z ~ N(mean, variance).
double gcv_expect_exp(double mean, double variance, double kappa, int gh_points);
/// E[exp(-kappa z - omega)], the expected precision of the controlled transition.
double gcv_expected_precision(const Distribution& q_z, const GcvParams& p);
Distribution gcv_out(const Distribution& m_in, const Distribution& q_z, const GcvParams& p);
Distribution gcv_joint(const Distribution& m_out, const Distribution& m_in, const Distribution& q_z,
                       const GcvParams& p);
/// E[(out - in)^2] from the joint or from two independent marginals.
double gcv_psi(const Distribution& q_out_in);
double gcv_psi(const Distribution& q_out, const Distribution& q_in);
/// Message towards z: the Gaussian q minimizing KL(q || cavity * exp(E log f)),
/// divided by the cavity.
Distribution gcv_z_projection(double psi, const Distribution& m_z, const GcvParams& p);
/// Message towards z by Gauss-Hermite moment matching of cavity * exp(E log f).
Distribution gcv_z_moment_matching(double psi, const Distribution& m_z, const GcvParams& p);

}  // namespace rules

// Average energies, -E_q[log f], for each node kind.
namespace energies {
double gaussian_mean_precision(const RuleInputs& in);
double linear_gaussian(const RuleInputs& in);
double gaussian_prior(const RuleInputs& in);
double categorical(const RuleInputs& in);
double matrix_dirichlet(const RuleInputs& in);
double transition(const RuleInputs& in);
double beta(const RuleInputs& in);
double bernoulli(const RuleInputs& in);
double gcv(const RuleInputs& in);
}  // namespace energies

}  // namespace rmp
