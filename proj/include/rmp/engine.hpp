#pragma once

// Reactive inference engine.  Wiring turns a sealed ModelGraph into lazily
// materialized streams: one outbound message stream per (node, random
// interface), one marginal stream per random variable, one joint-marginal
// stream per multi-variable cluster, and a Bethe free energy stream.  Every
// combination waits until each of its inputs has a value it has not used yet,
// so one data sweep produces one update per stream.

#include "rmp/graph.hpp"
#include "rmp/reactive.hpp"
#include "rmp/rules.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rmp {

/// Value carried by every engine stream.
struct Emission {
    Distribution dist;
    std::uint64_t tick;
};
using Packet = std::shared_ptr<const Emission>;

struct MarginalUpdate {
    VariableId variable;
    Distribution dist;
    std::uint64_t tick;
};

/// total == energies[0] + ... + energies[N-1] + entropies[0] + ... (that order).
struct BfeUpdate {
    double total;
    std::vector<double> energies;   // per node: average energy minus cluster entropies
    std::vector<double> entropies;  // per variable: (degree - 1) * H[q], zero unless random
    std::uint64_t tick;
};

/// Receives one JSON object {tick, kind, source, payload} per traced emission.
using TraceSink = std::function<void(const nlohmann::json&)>;
TraceSink json_lines_sink(std::ostream& os);

struct EngineOptions {
    std::size_t max_drain_events = rx::Scheduler::kDefaultMaxEvents;
    const RuleRegistry* registry = nullptr;  // builtin rules when null
    TraceSink trace;
    bool trace_all = false;  // every message, marginal and BFE emission, not only logger stages
};

struct ChainError {
    VariableId variable;
    std::size_t step;
    std::string what;
};

class InferenceEngine {
public:
    /// Seals the graph (faulting on diagnostics) and resolves every rule the
    /// graph needs against the registry (WiringError naming the rule key).
    explicit InferenceEngine(ModelGraph graph, EngineOptions options = {});
    ~InferenceEngine();
    InferenceEngine(const InferenceEngine&) = delete;
    InferenceEngine& operator=(const InferenceEngine&) = delete;

    const ModelGraph& graph() const;

    /// Pushes a point mass on a data variable and drains to quiescence.  The
    /// first call checks that every gating marginal can become available.
    void inject(VariableId data, const Eigen::MatrixXd& value);
    void inject(VariableId data, double value);
    /// Injects every data variable (declaration order) k times.
    void run_iterations(const std::vector<std::pair<VariableId, Eigen::MatrixXd>>& data, int k);

    rx::Observable<MarginalUpdate> marginal_stream(VariableId var);
    rx::Observable<BfeUpdate> bfe_stream();
    rx::Observable<Packet> message_stream(NodeId node, const std::string& iface);
    std::optional<Distribution> latest_marginal(VariableId var) const;

    void set_marginal(VariableId var, Distribution d);
    void set_message(NodeId node, const std::string& iface, Distribution d);

    /// Feeds each posterior of `posterior` (as mean and precision) into the
    /// two data variables at the next step().
    void chain_redirect(VariableId posterior, VariableId mean_data, VariableId precision_data);
    /// Value used for a data variable at the next step() (initial priors).
    void stage(VariableId data, const Eigen::MatrixXd& value);
    void stage(VariableId data, double value);
    /// Injects staged values and observations k times, then moves the latest
    /// redirected posteriors into the staging area.
    void step(const std::vector<std::pair<VariableId, Eigen::MatrixXd>>& observations, int k);
    const std::vector<ChainError>& chain_errors() const;
    std::size_t steps() const;

    /// Streams read by the outbound rule of (node, iface): "in:<node>.<iface>",
    /// "q:<variable>" or "joint:<node>.<cluster>".
    std::vector<std::string> dependencies_of(NodeId node, const std::string& iface) const;
    /// Clusters of a node after data and constant interfaces are split off.
    std::vector<std::string> cluster_names(NodeId node) const;
    std::size_t materialized_streams() const;
    std::uint64_t tick() const;
    const rx::SchedulerPtr& scheduler() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace rmp
