#include "rmp/graph.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rmp {

std::string_view variable_kind_name(VariableKind k) {
    switch (k) {
        case VariableKind::Random: return "random";
        case VariableKind::Data: return "data";
        case VariableKind::Constant: return "constant";
    }
    return "?";
}

std::string_view diagnostic_code_name(Diagnostic::Code c) {
    switch (c) {
        case Diagnostic::Code::DanglingVariable: return "dangling variable";
        case Diagnostic::Code::OverConnected: return "over-connected edge";
        case Diagnostic::Code::DataMultiplyConnected: return "data variable connected more than once";
        case Diagnostic::Code::UnboundInterface: return "unbound interface";
        case Diagnostic::Code::MissingMetadata: return "missing metadata";
        case Diagnostic::Code::BadFactorization: return "factorization is not a partition";
    }
    return "?";
}

std::optional<VariableId> FactorNode::binding(std::string_view iface) const {
    return bindings[interface_index(iface)];
}

std::size_t FactorNode::interface_index(std::string_view iface) const {
    for (std::size_t i = 0; i < interfaces.size(); ++i) {
        if (interfaces[i] == iface) return i;
    }
    throw std::invalid_argument("node '" + name + "' (" + kind + ") has no interface '" + std::string(iface) + "'");
}

ModelGraph::ModelGraph(Factorization default_policy) : default_policy_(std::move(default_policy)) {
    if (default_policy_.kind == Factorization::Kind::Structured) {
        throw std::invalid_argument("the default factorization must be Bethe or mean-field");
    }
}

void ModelGraph::require_open(const char* what) const {
    if (sealed_) throw std::logic_error(std::string(what) + ": graph is sealed");
}

VariableId ModelGraph::add_variable(std::string name, VariableKind kind, Dims dims,
                                    std::optional<Eigen::MatrixXd> value) {
    require_open("add variable");
    if (dims.rows < 1 || dims.cols < 1) throw std::invalid_argument("variable dimensions must be positive");
    const VariableId id = variables_.size();
    if (name.empty()) name = "v" + std::to_string(id);
    if (!variable_index_.try_emplace(name, id).second) {
        throw std::invalid_argument("duplicate variable name '" + name + "'");
    }
    variables_.push_back(Variable{id, std::move(name), kind, dims, std::move(value), {}, {}, FormConstraint::None});
    return id;
}

VariableId ModelGraph::add_random_variable(std::string name, Dims dims) {
    return add_variable(std::move(name), VariableKind::Random, dims, std::nullopt);
}

VariableId ModelGraph::add_data_variable(std::string name, Dims dims) {
    return add_variable(std::move(name), VariableKind::Data, dims, std::nullopt);
}

VariableId ModelGraph::add_constant(std::string name, Eigen::MatrixXd value) {
    const Dims dims{value.rows(), value.cols()};
    return add_variable(std::move(name), VariableKind::Constant, dims, std::move(value));
}

VariableId ModelGraph::add_constant(std::string name, double value) {
    return add_constant(std::move(name), Eigen::MatrixXd::Constant(1, 1, value));
}

FactorNode& ModelGraph::new_node(const std::string& kind, NodeContext context, std::string name) {
    require_open("add factor");
    const NodeSpec* spec = find_node_spec(kind);
    if (!spec) throw std::invalid_argument("unknown factor node kind '" + kind + "'");
    const NodeId id = nodes_.size();
    if (name.empty()) name = kind + "#" + std::to_string(id);
    if (!node_index_.try_emplace(name, id).second) throw std::invalid_argument("duplicate node name '" + name + "'");
    nodes_.push_back(FactorNode{id, std::move(name), kind, spec->interfaces,
                                std::vector<std::optional<VariableId>>(spec->interfaces.size()), std::move(context)});
    return nodes_.back();
}

NodeId ModelGraph::add_factor(const std::string& kind, const std::vector<std::pair<std::string, VariableId>>& bindings,
                              NodeContext context, std::string name) {
    const NodeSpec* spec = find_node_spec(kind);
    if (!spec) throw std::invalid_argument("unknown factor node kind '" + kind + "'");
    std::set<std::string> seen;
    for (const auto& [iface, var] : bindings) {
        if (std::find(spec->interfaces.begin(), spec->interfaces.end(), iface) == spec->interfaces.end()) {
            throw std::invalid_argument(kind + " has no interface '" + iface + "'");
        }
        if (!seen.insert(iface).second) throw std::invalid_argument(kind + ": interface '" + iface + "' bound twice");
        if (var >= variables_.size()) throw std::invalid_argument(kind + ": unknown variable id for '" + iface + "'");
    }
    for (const auto& iface : spec->interfaces) {
        if (!seen.count(iface)) throw std::invalid_argument(kind + ": missing interface '" + iface + "'");
    }
    const NodeId id = new_node(kind, std::move(context), std::move(name)).id;
    for (const auto& [iface, var] : bindings) bind(id, iface, var);
    return id;
}

NodeId ModelGraph::add_factor_unbound(const std::string& kind, NodeContext context, std::string name) {
    return new_node(kind, std::move(context), std::move(name)).id;
}

void ModelGraph::bind(NodeId node_id, const std::string& iface, VariableId var) {
    require_open("bind");
    if (node_id >= nodes_.size()) throw std::invalid_argument("bind: unknown node id");
    if (var >= variables_.size()) throw std::invalid_argument("bind: unknown variable id");
    auto& n = nodes_[node_id];
    const std::size_t idx = n.interface_index(iface);
    if (n.bindings[idx]) throw std::invalid_argument(n.name + ": interface '" + iface + "' bound twice");
    n.bindings[idx] = var;
    variables_[var].connections.push_back(Connection{node_id, iface});
}

void ModelGraph::set_pipeline(NodeId node_id, std::vector<PipelineStage> stages) {
    require_open("set_pipeline");
    if (node_id >= nodes_.size()) throw std::invalid_argument("set_pipeline: unknown node id");
    auto& p = nodes_[node_id].context.pipeline;
    p.insert(p.end(), std::make_move_iterator(stages.begin()), std::make_move_iterator(stages.end()));
}

void ModelGraph::set_edge_pipeline(VariableId var, std::vector<PipelineStage> stages) {
    require_open("set_edge_pipeline");
    if (var >= variables_.size()) throw std::invalid_argument("set_edge_pipeline: unknown variable id");
    auto& p = variables_[var].pipeline;
    p.insert(p.end(), std::make_move_iterator(stages.begin()), std::make_move_iterator(stages.end()));
}

void ModelGraph::set_form_constraint(VariableId var, FormConstraint form) {
    require_open("set_form_constraint");
    if (var >= variables_.size()) throw std::invalid_argument("set_form_constraint: unknown variable id");
    variables_[var].form = form;
}

void ModelGraph::set_implicit_equality(bool on) {
    require_open("set_implicit_equality");
    implicit_equality_ = on;
}

const Variable& ModelGraph::variable(VariableId id) const {
    if (id >= variables_.size()) throw std::invalid_argument("unknown variable id " + std::to_string(id));
    return variables_[id];
}

const FactorNode& ModelGraph::node(NodeId id) const {
    if (id >= nodes_.size()) throw std::invalid_argument("unknown node id " + std::to_string(id));
    return nodes_[id];
}

std::optional<VariableId> ModelGraph::find_variable(std::string_view name) const {
    const auto it = variable_index_.find(name);
    if (it == variable_index_.end()) return std::nullopt;
    return it->second;
}

std::optional<NodeId> ModelGraph::find_node(std::string_view name) const {
    const auto it = node_index_.find(name);
    if (it == node_index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::vector<std::string>> ModelGraph::clusters(NodeId node_id) const {
    const auto& n = node(node_id);
    const Factorization& f = n.context.factorization ? *n.context.factorization : default_policy_;
    switch (f.kind) {
        case Factorization::Kind::Bethe: return {n.interfaces};
        case Factorization::Kind::MeanField: {
            std::vector<std::vector<std::string>> out;
            for (const auto& i : n.interfaces) out.push_back({i});
            return out;
        }
        case Factorization::Kind::Structured: {
            // Clusters are reported in interface order of their first member.
            auto out = f.clusters;
            auto first = [&](const std::vector<std::string>& c) {
                std::size_t best = n.interfaces.size();
                for (const auto& i : c) {
                    auto it = std::find(n.interfaces.begin(), n.interfaces.end(), i);
                    best = std::min(best, static_cast<std::size_t>(it - n.interfaces.begin()));
                }
                return best;
            };
            std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) { return first(a) < first(b); });
            for (auto& c : out) {
                std::stable_sort(c.begin(), c.end(), [&](const std::string& a, const std::string& b) {
                    return std::find(n.interfaces.begin(), n.interfaces.end(), a) <
                           std::find(n.interfaces.begin(), n.interfaces.end(), b);
                });
            }
            return out;
        }
    }
    return {};
}

std::vector<Diagnostic> ModelGraph::validate() const {
    std::vector<Diagnostic> out;
    auto add = [&](Diagnostic::Code code, std::string msg, std::optional<NodeId> node, std::optional<VariableId> var) {
        out.push_back(Diagnostic{code, std::string(diagnostic_code_name(code)) + ": " + msg, node, var});
    };

    for (const auto& v : variables_) {
        const auto deg = v.connections.size();
        if (deg == 0) {
            add(Diagnostic::Code::DanglingVariable, "variable '" + v.name + "' is not connected to any factor",
                std::nullopt, v.id);
        } else if (v.kind == VariableKind::Data && deg > 1) {
            add(Diagnostic::Code::DataMultiplyConnected,
                "data variable '" + v.name + "' connects to " +
                    std::to_string(deg) + " interfaces (exactly 1 allowed)",
                std::nullopt, v.id);
        } else if (v.kind == VariableKind::Random && deg > 2 && !implicit_equality_) {
            add(Diagnostic::Code::OverConnected,
                "variable '" + v.name + "' connects to " + std::to_string(deg) +
                    " interfaces (at most 2 without implicit equality nodes)",
                std::nullopt, v.id);
        }
    }

    for (const auto& n : nodes_) {
        for (std::size_t i = 0; i < n.interfaces.size(); ++i) {
            if (!n.bindings[i]) {
                add(Diagnostic::Code::UnboundInterface, "node '" + n.name + "' interface '" + n.interfaces[i] + "'",
                    n.id, std::nullopt);
            }
        }
        const NodeSpec* spec = find_node_spec(n.kind);
        for (const auto& key : spec->required_metadata) {
            if (!n.context.meta.has(key)) {
                add(Diagnostic::Code::MissingMetadata, "node '" + n.name + "' needs metadata '" + key + "'", n.id,
                    std::nullopt);
            }
        }
        const auto cl = clusters(n.id);
        std::vector<int> count(n.interfaces.size(), 0);
        bool bad = false;
        for (const auto& c : cl) {
            if (c.empty()) bad = true;
            for (const auto& iface : c) {
                auto it = std::find(n.interfaces.begin(), n.interfaces.end(), iface);
                if (it == n.interfaces.end()) {
                    bad = true;
                } else {
                    ++count[static_cast<std::size_t>(it - n.interfaces.begin())];
                }
            }
        }
        bad = bad || std::any_of(count.begin(), count.end(), [](int c) { return c != 1; });
        if (bad) {
            std::ostringstream os;
            os << "node '" << n.name << "' clusters {";
            for (std::size_t k = 0; k < cl.size(); ++k) {
                os << (k ? "}, {" : "");
                for (std::size_t j = 0; j < cl[k].size(); ++j) os << (j ? "," : "") << cl[k][j];
            }
            os << "}";
            add(Diagnostic::Code::BadFactorization, os.str(), n.id, std::nullopt);
        }
    }
    return out;
}

void ModelGraph::seal() {
    if (sealed_) return;
    const auto diags = validate();
    if (!diags.empty()) {
        std::string msg = "model graph is not well-formed:";
        for (const auto& d : diags) msg += "\n  " + d.message;
        throw std::invalid_argument(msg);
    }
    sealed_ = true;
}

}  // namespace rmp
