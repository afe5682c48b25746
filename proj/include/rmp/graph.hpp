#pragma once

// Forney-style factor graph builder: variables are edges, factor nodes carry
// named interfaces and a local context (factorization, constraint, pipeline,
// metadata).  A sealed graph is immutable and can be wired by the engine.

#include "rmp/distributions.hpp"
#include "rmp/rules.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rmp {

using VariableId = std::size_t;
using NodeId = std::size_t;

enum class VariableKind { Random, Data, Constant };
std::string_view variable_kind_name(VariableKind k);

/// Shape of a variable's value: 1x1 scalar, d x 1 vector, r x c matrix.
struct Dims {
    Eigen::Index rows = 1;
    Eigen::Index cols = 1;

    static Dims scalar() { return {1, 1}; }
    static Dims vector(Eigen::Index d) { return {d, 1}; }
    static Dims matrix(Eigen::Index r, Eigen::Index c) { return {r, c}; }
    bool operator==(const Dims&) const = default;
};

/// Partition of a node's interfaces into clusters of the local posterior.
struct Factorization {
    enum class Kind { Bethe, MeanField, Structured };
    Kind kind = Kind::Bethe;
    std::vector<std::vector<std::string>> clusters;  // used by Structured

    static Factorization bethe() { return {Kind::Bethe, {}}; }
    static Factorization mean_field() { return {Kind::MeanField, {}}; }
    static Factorization structured(std::vector<std::vector<std::string>> clusters) {
        return {Kind::Structured, std::move(clusters)};
    }
};

/// Stream transformer applied to outbound messages (node) or marginals (edge).
struct PipelineStage {
    enum class Kind { Log, MomentMatching, PointMass, Custom };
    Kind kind = Kind::Log;
    std::string name;
    std::function<Distribution(const Distribution&)> fn;  // Custom only

    static PipelineStage logger() { return {Kind::Log, "log", {}}; }
    static PipelineStage moment_matching() { return {Kind::MomentMatching, "moment_matching", {}}; }
    static PipelineStage point_mass() { return {Kind::PointMass, "point_mass", {}}; }
    static PipelineStage custom(std::string name, std::function<Distribution(const Distribution&)> fn) {
        return {Kind::Custom, std::move(name), std::move(fn)};
    }
};

/// Restriction on the form of a variable's marginal.
enum class FormConstraint { None, PointMass, MomentMatching };

struct NodeContext {
    std::optional<Factorization> factorization;  // graph default when unset
    Constraint constraint = Constraint::Marginalisation;
    std::vector<PipelineStage> pipeline;
    Metadata meta;
};

struct Connection {
    NodeId node;
    std::string iface;
};

struct Variable {
    VariableId id;
    std::string name;
    VariableKind kind;
    Dims dims;
    std::optional<Eigen::MatrixXd> value;  // constants
    std::vector<Connection> connections;
    std::vector<PipelineStage> pipeline;
    FormConstraint form = FormConstraint::None;
};

struct FactorNode {
    NodeId id;
    std::string name;
    std::string kind;
    std::vector<std::string> interfaces;
    std::vector<std::optional<VariableId>> bindings;  // parallel to interfaces
    NodeContext context;

    std::optional<VariableId> binding(std::string_view iface) const;
    std::size_t interface_index(std::string_view iface) const;
};

struct Diagnostic {
    enum class Code {
        DanglingVariable,
        OverConnected,
        DataMultiplyConnected,
        UnboundInterface,
        MissingMetadata,
        BadFactorization,
    };
    Code code;
    std::string message;
    std::optional<NodeId> node;
    std::optional<VariableId> variable;
};
std::string_view diagnostic_code_name(Diagnostic::Code c);

class ModelGraph {
public:
    explicit ModelGraph(Factorization default_policy = Factorization::bethe());

    VariableId add_random_variable(std::string name, Dims dims = Dims::scalar());
    VariableId add_data_variable(std::string name, Dims dims = Dims::scalar());
    VariableId add_constant(std::string name, Eigen::MatrixXd value);
    VariableId add_constant(std::string name, double value);

    /// Adds a factor with every interface bound.  Faults on an unknown kind,
    /// an unknown or repeated interface name, or a missing interface.
    NodeId add_factor(const std::string& kind, const std::vector<std::pair<std::string, VariableId>>& bindings,
                      NodeContext context = {}, std::string name = {});
    /// Adds a factor whose interfaces are bound later with bind().
    NodeId add_factor_unbound(const std::string& kind, NodeContext context = {}, std::string name = {});
    void bind(NodeId node, const std::string& iface, VariableId var);

    void set_pipeline(NodeId node, std::vector<PipelineStage> stages);
    void set_edge_pipeline(VariableId var, std::vector<PipelineStage> stages);
    void set_form_constraint(VariableId var, FormConstraint form);

    /// With implicit equality on, a random variable may join any number of
    /// interfaces (it behaves as an equality node).  Off by default: more
    /// than two connections is then reported as over-connected.
    void set_implicit_equality(bool on);
    bool implicit_equality() const { return implicit_equality_; }

    std::vector<Diagnostic> validate() const;
    /// Validates and freezes the structure; faults listing the diagnostics.
    void seal();
    bool sealed() const { return sealed_; }

    const std::vector<Variable>& variables() const { return variables_; }
    const std::vector<FactorNode>& nodes() const { return nodes_; }
    const Variable& variable(VariableId id) const;
    const FactorNode& node(NodeId id) const;
    std::optional<VariableId> find_variable(std::string_view name) const;
    std::optional<NodeId> find_node(std::string_view name) const;
    const Factorization& default_factorization() const { return default_policy_; }

    /// The node's clusters as declared (default policy applied), before the
    /// engine splits off data and constant interfaces.
    std::vector<std::vector<std::string>> clusters(NodeId node) const;

private:
    VariableId add_variable(std::string name, VariableKind kind, Dims dims, std::optional<Eigen::MatrixXd> value);
    void require_open(const char* what) const;
    FactorNode& new_node(const std::string& kind, NodeContext context, std::string name);

    Factorization default_policy_;
    std::vector<Variable> variables_;
    std::vector<FactorNode> nodes_;
    std::map<std::string, VariableId, std::less<>> variable_index_;
    std::map<std::string, NodeId, std::less<>> node_index_;
    bool implicit_equality_ = false;
    bool sealed_ = false;
};

}  // namespace rmp
