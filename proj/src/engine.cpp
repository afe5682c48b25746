#include "rmp/engine.hpp"

#include "rmp/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace rmp {

TraceSink json_lines_sink(std::ostream& os) {
    return [&os](const nlohmann::json& j) { os << j.dump() << '\n'; };
}

namespace {

using Obs = rx::Observable<Packet>;
using Stream = rx::SharedStream<Packet>;

enum class Src : std::uint8_t { InMsg, Marginal, Joint };

struct SlotSource {
    InboundKind kind;
    std::string name;
    Src src;
    std::uint32_t index;  // interface index (InMsg, Marginal) or cluster index (Joint)
};

struct Target {
    std::string target;
    std::vector<SlotSource> slots;
    mutable std::unordered_map<std::string, const RuleFn*> cache;  // by inbound families
};

/// Rule wiring of a node, shared by all nodes with the same signature.
struct Plan {
    std::vector<std::vector<std::uint32_t>> clusters;
    std::vector<std::string> cluster_names;
    std::vector<std::int32_t> cluster_of;
    std::vector<std::optional<Target>> outbound;  // per interface, random ones only
    std::vector<std::optional<Target>> joints;    // per cluster with >= 2 interfaces
    std::vector<SlotSource> energy_slots;         // one q slot per cluster
};

/// Observable applying `fn` to each tuple; an empty result emits nothing.
Obs filter_map(const rx::Observable<std::vector<Packet>>& source,
               std::function<std::optional<Packet>(const std::vector<Packet>&)> fn) {
    return Obs([source, fn](rx::Observer<Packet> down) {
        rx::Observer<std::vector<Packet>> up{[down, fn](const std::vector<Packet>& v) {
                                                 if (auto p = fn(v)) down.next(*p);
                                             },
                                             [down](std::exception_ptr e) { down.error(e); },
                                             [down]() { down.complete(); }};
        return source.subscribe(std::move(up));
    });
}

Distribution product(const std::vector<Packet>& ps) {
    Distribution acc = ps.front()->dist;
    for (std::size_t k = 1; k < ps.size(); ++k) acc = multiply_and_normalize(acc, ps[k]->dist);
    return acc;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
    std::string s;
    for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? sep : "") + parts[i];
    return s;
}

}  // namespace

struct InferenceEngine::Impl {
    ModelGraph graph;
    EngineOptions options;
    const RuleRegistry* registry;
    rx::SchedulerPtr scheduler;
    std::uint64_t tick = 0;

    std::vector<std::size_t> iface_base;  // global interface index of (node, 0)
    std::vector<std::shared_ptr<const Plan>> plans;
    std::vector<std::size_t> degree;

    std::vector<std::optional<Stream>> msg, in, marg, data;
    std::unordered_map<std::uint64_t, Stream> joint;
    std::vector<std::optional<Obs>> constants;
    std::vector<Packet> const_packet;
    std::optional<rx::SharedStream<BfeUpdate>> bfe;

    std::vector<char> init_msg, init_marg;
    bool checked = false;
    std::exception_ptr error;

    struct Link {
        VariableId posterior, mean_data, precision_data;
        std::optional<std::pair<double, double>> pending;
        rx::Subscription sub;
    };
    std::vector<Link> links;
    std::map<VariableId, Eigen::MatrixXd> staged;
    std::vector<ChainError> chain_errors;
    std::size_t steps = 0;

    Impl(ModelGraph g, EngineOptions o)
        : graph(std::move(g)),
          options(std::move(o)),
          registry(options.registry ? options.registry : &RuleRegistry::builtin()),
          scheduler(std::make_shared<rx::Scheduler>(options.max_drain_events)) {}

    // ------------------------------------------------------------------ wiring

    bool is_random(VariableId v) const { return graph.variable(v).kind == VariableKind::Random; }
    VariableId var_at(NodeId a, std::uint32_t i) const { return *graph.node(a).bindings[i]; }
    std::size_t gidx(NodeId a, std::uint32_t i) const { return iface_base[a] + i; }

    std::shared_ptr<const Plan> make_plan(const FactorNode& n) {
        const auto declared = graph.clusters(n.id);
        const NodeSpec* spec = find_node_spec(n.kind);
        auto index_of = [&](const std::string& iface) { return static_cast<std::uint32_t>(n.interface_index(iface)); };

        auto plan = std::make_shared<Plan>();
        for (const auto& c : declared) {
            std::vector<std::uint32_t> rnd;
            for (const auto& iface : c) {
                const auto i = index_of(iface);
                if (is_random(var_at(n.id, i))) rnd.push_back(i);
                else plan->clusters.push_back({i});
            }
            if (!rnd.empty()) plan->clusters.push_back(rnd);
        }
        std::sort(plan->clusters.begin(), plan->clusters.end(), [](const auto& a, const auto& b) { return a[0] < b[0]; });
        plan->cluster_of.assign(n.interfaces.size(), -1);
        for (std::size_t c = 0; c < plan->clusters.size(); ++c) {
            std::vector<std::string> names;
            for (auto i : plan->clusters[c]) {
                names.push_back(n.interfaces[i]);
                plan->cluster_of[i] = static_cast<std::int32_t>(c);
            }
            plan->cluster_names.push_back(join(names, "_"));
        }

        auto q_slot = [&](std::size_t c) {
            const auto& cl = plan->clusters[c];
            if (cl.size() == 1) return SlotSource{InboundKind::Marginal, n.interfaces[cl[0]], Src::Marginal, cl[0]};
            return SlotSource{InboundKind::Marginal, plan->cluster_names[c], Src::Joint, static_cast<std::uint32_t>(c)};
        };
        auto resolve = [&](Target& t) {
            RuleKey key{n.kind, t.target, n.context.constraint, {}};
            for (const auto& s : t.slots) key.inbound.push_back(InboundSlot{s.kind, s.name, std::nullopt});
            if (!registry->resolvable(key)) {
                throw WiringError("no message update rule registered for " + key.describe() + " required by node '" +
                                  n.name + "'");
            }
        };

        plan->outbound.resize(n.interfaces.size());
        for (std::uint32_t i = 0; i < n.interfaces.size(); ++i) {
            if (!is_random(var_at(n.id, i))) continue;
            const auto c = static_cast<std::size_t>(plan->cluster_of[i]);
            Target t{n.interfaces[i], {}, {}};
            for (auto j : plan->clusters[c]) {
                if (j != i) t.slots.push_back({InboundKind::Message, n.interfaces[j], Src::InMsg, j});
            }
            for (std::size_t k = 0; k < plan->clusters.size(); ++k) {
                if (k != c) t.slots.push_back(q_slot(k));
            }
            const auto& cav = spec->cavity_interfaces;
            if (std::find(cav.begin(), cav.end(), n.interfaces[i]) != cav.end()) {
                t.slots.push_back({InboundKind::Message, n.interfaces[i], Src::InMsg, i});
            }
            resolve(t);
            plan->outbound[i] = std::move(t);
        }
        plan->joints.resize(plan->clusters.size());
        for (std::size_t c = 0; c < plan->clusters.size(); ++c) {
            plan->energy_slots.push_back(q_slot(c));
            if (plan->clusters[c].size() < 2) continue;
            Target t{plan->cluster_names[c], {}, {}};
            for (auto j : plan->clusters[c]) t.slots.push_back({InboundKind::Message, n.interfaces[j], Src::InMsg, j});
            for (std::size_t k = 0; k < plan->clusters.size(); ++k) {
                if (k != c) t.slots.push_back(q_slot(k));
            }
            resolve(t);
            plan->joints[c] = std::move(t);
        }
        return plan;
    }

    void wire() {
        graph.seal();
        const auto& nodes = graph.nodes();
        const auto& vars = graph.variables();
        degree.resize(vars.size());
        for (const auto& v : vars) degree[v.id] = v.connections.size();

        iface_base.resize(nodes.size() + 1, 0);
        for (const auto& n : nodes) iface_base[n.id + 1] = iface_base[n.id] + n.interfaces.size();
        const std::size_t total = iface_base.back();
        msg.resize(total);
        in.resize(total);
        init_msg.assign(total, 0);
        marg.resize(vars.size());
        data.resize(vars.size());
        constants.resize(vars.size());
        const_packet.resize(vars.size());
        init_marg.assign(vars.size(), 0);

        std::unordered_map<std::string, std::shared_ptr<const Plan>> cache;
        plans.reserve(nodes.size());
        for (const auto& n : nodes) {
            std::string sig = n.kind + "|" + std::string(constraint_name(n.context.constraint)) + "|";
            for (std::size_t i = 0; i < n.interfaces.size(); ++i) sig += is_random(var_at(n.id, i)) ? 'r' : 'd';
            for (const auto& c : graph.clusters(n.id)) sig += "|" + join(c, ",");
            auto it = cache.find(sig);
            if (it == cache.end()) it = cache.emplace(sig, make_plan(n)).first;
            plans.push_back(it->second);

            // Messages arriving on interfaces that have no other connection cannot exist.
            for (const auto& t : it->second->outbound) {
                if (!t) continue;
                for (const auto& s : t->slots) {
                    if (s.src == Src::InMsg && degree[var_at(n.id, s.index)] < 2) {
                        throw WiringError("rule for " + n.name + "." + t->target + " reads the message arriving on '" +
                                          n.interfaces[s.index] + "', but variable '" +
                                          graph.variable(var_at(n.id, s.index)).name +
                                          "' has no other connection to send it");
                    }
                }
            }
        }
    }

    ~Impl() {
        for (auto& l : links) l.sub.unsubscribe();
        if (bfe) bfe->disconnect();
        for (auto* table : {&msg, &in, &marg, &data}) {
            for (auto& s : *table) {
                if (s) s->disconnect();
            }
        }
        for (auto& [_, s] : joint) s.disconnect();
    }

    // ------------------------------------------------------------------ packets

    Packet packet(Distribution d) { return std::make_shared<const Emission>(Emission{std::move(d), ++tick}); }

    void record(std::exception_ptr e) {
        if (!error) error = e;
    }

    void trace(const char* kind, const std::string& source, std::uint64_t t, const nlohmann::json& payload) {
        if (!options.trace) return;
        options.trace({{"tick", t}, {"kind", kind}, {"source", source}, {"payload", payload}});
    }

    Distribution apply_stages(const std::vector<PipelineStage>& stages, Distribution d, const char* kind,
                              const std::string& source, std::uint64_t t) {
        for (const auto& s : stages) {
            switch (s.kind) {
                case PipelineStage::Kind::Log: trace(kind, source, t, to_json(d)); break;
                case PipelineStage::Kind::MomentMatching: d = moment_match_gaussian(d); break;
                case PipelineStage::Kind::PointMass: d = PointMass(mode(d)); break;
                case PipelineStage::Kind::Custom: d = s.fn(d); break;
            }
        }
        return d;
    }

    Packet finish(Distribution d, const std::vector<PipelineStage>& stages, const char* kind,
                  const std::function<std::string()>& source) {
        const std::uint64_t t = ++tick;
        if (!stages.empty()) d = apply_stages(stages, std::move(d), kind, source(), t);
        if (options.trace_all) trace(kind, source(), t, to_json(d));
        return std::make_shared<const Emission>(Emission{std::move(d), t});
    }

    std::string msg_id(NodeId a, std::uint32_t i) const {
        return "msg:" + graph.node(a).name + "." + graph.node(a).interfaces[i];
    }

    // ------------------------------------------------------------------ observables

    Obs late(std::function<Obs()> get) {
        return Obs([get = std::move(get)](rx::Observer<Packet> o) { return get().subscribe(std::move(o)); });
    }

    Obs msg_obs(NodeId a, std::uint32_t i) {
        return late([this, a, i] { return msg_stream(a, i).observable(); });
    }

    Obs in_obs(NodeId a, std::uint32_t i) {
        const VariableId v = var_at(a, i);
        if (!is_random(v)) return q_obs(v);
        const auto& conns = graph.variable(v).connections;
        if (conns.size() == 2) {
            const auto& other = conns[0].node == a && conns[0].iface == graph.node(a).interfaces[i] ? conns[1] : conns[0];
            return msg_obs(other.node, static_cast<std::uint32_t>(graph.node(other.node).interface_index(other.iface)));
        }
        return late([this, a, i] { return in_stream(a, i).observable(); });
    }

    Obs q_obs(VariableId v) {
        const auto& var = graph.variable(v);
        switch (var.kind) {
            case VariableKind::Random: return late([this, v] { return marg_stream(v).observable(); });
            case VariableKind::Data: return late([this, v] { return data_stream(v).observable(); });
            case VariableKind::Constant:
                if (!constants[v]) {
                    const_packet[v] = packet(PointMass(*var.value));
                    constants[v] = rx::of(const_packet[v]);
                }
                return *constants[v];
        }
        return {};
    }

    Obs joint_obs(NodeId a, std::uint32_t c) {
        return late([this, a, c] { return joint_stream(a, c).observable(); });
    }

    Obs slot_obs(NodeId a, const SlotSource& s) {
        switch (s.src) {
            case Src::InMsg: return in_obs(a, s.index);
            case Src::Marginal: return q_obs(var_at(a, s.index));
            case Src::Joint: return joint_obs(a, s.index);
        }
        return {};
    }

    // ------------------------------------------------------------------ streams

    Distribution evaluate(NodeId a, const Target& t, const std::vector<Packet>& inputs) {
        const auto& n = graph.node(a);
        RuleInputs ri(n.context.meta);
        std::string families;
        families.reserve(inputs.size());
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            ri.add(t.slots[k].kind, t.slots[k].name, inputs[k]->dist);
            families.push_back(static_cast<char>('A' + static_cast<int>(family(inputs[k]->dist))));
        }
        auto it = t.cache.find(families);
        if (it == t.cache.end()) {
            RuleKey key{n.kind, t.target, n.context.constraint, {}};
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                key.inbound.push_back(InboundSlot{t.slots[k].kind, t.slots[k].name, family(inputs[k]->dist)});
            }
            try {
                it = t.cache.emplace(families, &registry->lookup(key)).first;
            } catch (const NoRuleError& e) {
                throw NoRuleError(std::string(e.what()) + " at node '" + n.name + "'");
            }
        }
        return (*it->second)(ri);
    }

    Obs rule_source(NodeId a, const Target& t, const std::vector<PipelineStage>& stages, const char* kind,
                    std::function<std::string()> source) {
        if (t.slots.empty()) {
            return Obs([this, a, &t, &stages, kind, source](rx::Observer<Packet> o) {
                try {
                    o.next(finish(evaluate(a, t, {}), stages, kind, source));
                } catch (...) {
                    record(std::current_exception());
                }
                o.complete();
                return rx::Subscription::closed();
            });
        }
        std::vector<Obs> deps;
        deps.reserve(t.slots.size());
        for (const auto& s : t.slots) deps.push_back(slot_obs(a, s));
        return filter_map(rx::combine_latest(std::move(deps), rx::CombineStrategy::AllNew),
                          [this, a, &t, &stages, kind, source](const std::vector<Packet>& v) -> std::optional<Packet> {
                              try {
                                  return finish(evaluate(a, t, v), stages, kind, source);
                              } catch (...) {
                                  record(std::current_exception());
                                  return std::nullopt;
                              }
                          });
    }

    Stream& msg_stream(NodeId a, std::uint32_t i) {
        auto& slot = msg[gidx(a, i)];
        if (!slot) {
            const auto& t = plans[a]->outbound[i];
            if (!t) throw std::invalid_argument(msg_id(a, i) + ": interface is not bound to a random variable");
            slot.emplace(rule_source(a, *t, graph.node(a).context.pipeline, "message",
                                     [this, a, i] { return msg_id(a, i); }),
                         scheduler);
        }
        return *slot;
    }

    Obs product_source(std::vector<Obs> deps, std::function<Packet(Distribution)> done) {
        return filter_map(rx::combine_latest(std::move(deps), rx::CombineStrategy::AllNew),
                          [this, done](const std::vector<Packet>& v) -> std::optional<Packet> {
                              try {
                                  return done(product(v));
                              } catch (...) {
                                  record(std::current_exception());
                                  return std::nullopt;
                              }
                          });
    }

    Stream& in_stream(NodeId a, std::uint32_t i) {
        auto& slot = in[gidx(a, i)];
        if (!slot) {
            const VariableId v = var_at(a, i);
            std::vector<Obs> deps;
            for (const auto& c : graph.variable(v).connections) {
                const auto j = static_cast<std::uint32_t>(graph.node(c.node).interface_index(c.iface));
                if (c.node == a && j == i) continue;
                deps.push_back(msg_obs(c.node, j));
            }
            slot.emplace(product_source(std::move(deps),
                                        [this](Distribution d) { return packet(std::move(d)); }),
                         scheduler);
        }
        return *slot;
    }

    Stream& marg_stream(VariableId v) {
        auto& slot = marg[v];
        if (!slot) {
            std::vector<Obs> deps;
            for (const auto& c : graph.variable(v).connections) {
                deps.push_back(msg_obs(c.node, static_cast<std::uint32_t>(graph.node(c.node).interface_index(c.iface))));
            }
            slot.emplace(product_source(std::move(deps),
                                        [this, v](Distribution d) {
                                            const auto& var = graph.variable(v);
                                            if (var.form == FormConstraint::PointMass) d = PointMass(mode(d));
                                            if (var.form == FormConstraint::MomentMatching) d = moment_match_gaussian(d);
                                            return finish(std::move(d), var.pipeline, "marginal",
                                                          [this, v] { return "q:" + graph.variable(v).name; });
                                        }),
                         scheduler);
        }
        return *slot;
    }

    Stream& data_stream(VariableId v) {
        auto& slot = data[v];
        if (!slot) slot.emplace(rx::never<Packet>(), scheduler);
        return *slot;
    }

    Stream& joint_stream(NodeId a, std::uint32_t c) {
        const std::uint64_t key = (static_cast<std::uint64_t>(a) << 16) | c;
        auto it = joint.find(key);
        if (it == joint.end()) {
            const auto& t = plans[a]->joints[c];
            if (!t) throw std::logic_error("cluster has no joint marginal");
            static const std::vector<PipelineStage> no_stages;
            auto src = rule_source(a, *t, no_stages, "marginal", [this, a, c] {
                return "joint:" + graph.node(a).name + "." + plans[a]->cluster_names[c];
            });
            it = joint.emplace(key, Stream(std::move(src), scheduler)).first;
        }
        return it->second;
    }

    // ------------------------------------------------------------------ BFE

    rx::SharedStream<BfeUpdate>& bfe_stream() {
        if (bfe) return *bfe;
        const auto& nodes = graph.nodes();
        const auto& vars = graph.variables();
        for (const auto& n : nodes) {
            if (!registry->energy(n.kind)) throw WiringError("no average energy registered for node kind " + n.kind);
        }
        // Slot layout: every random and data variable, then every joint cluster.
        std::vector<Obs> deps;
        auto var_pos = std::make_shared<std::vector<std::int64_t>>(vars.size(), -1);
        for (const auto& v : vars) {
            if (v.kind == VariableKind::Constant) continue;
            (*var_pos)[v.id] = static_cast<std::int64_t>(deps.size());
            deps.push_back(q_obs(v.id));
        }
        auto joint_pos = std::make_shared<std::unordered_map<std::uint64_t, std::size_t>>();
        for (const auto& n : nodes) {
            const auto& p = *plans[n.id];
            for (std::uint32_t c = 0; c < p.clusters.size(); ++c) {
                if (!p.joints[c]) continue;
                (*joint_pos)[(static_cast<std::uint64_t>(n.id) << 16) | c] = deps.size();
                deps.push_back(joint_obs(n.id, c));
            }
        }
        for (const auto& v : vars) {
            if (v.kind == VariableKind::Constant) q_obs(v.id);  // materializes the constant packet
        }
        auto src = rx::map(rx::combine_latest(std::move(deps), rx::CombineStrategy::AllNew),
                           [this, var_pos, joint_pos](const std::vector<Packet>& v) {
                               return compute_bfe(v, *var_pos, *joint_pos);
                           });
        bfe.emplace(std::move(src), scheduler);
        return *bfe;
    }

    const Distribution& q_of(VariableId v, const std::vector<Packet>& tuple, const std::vector<std::int64_t>& pos) {
        if (pos[v] < 0) return const_packet[v]->dist;
        return tuple[static_cast<std::size_t>(pos[v])]->dist;
    }

    BfeUpdate compute_bfe(const std::vector<Packet>& tuple, const std::vector<std::int64_t>& var_pos,
                          const std::unordered_map<std::uint64_t, std::size_t>& joint_pos) {
        const auto& nodes = graph.nodes();
        const auto& vars = graph.variables();
        BfeUpdate u{0.0, std::vector<double>(nodes.size(), 0.0), std::vector<double>(vars.size(), 0.0), 0};
        for (const auto& n : nodes) {
            const auto& p = *plans[n.id];
            RuleInputs ri(n.context.meta);
            double h = 0.0;
            for (std::uint32_t c = 0; c < p.clusters.size(); ++c) {
                const auto& s = p.energy_slots[c];
                const Distribution* d;
                if (s.src == Src::Joint) {
                    d = &tuple[joint_pos.at((static_cast<std::uint64_t>(n.id) << 16) | c)]->dist;
                } else {
                    d = &q_of(var_at(n.id, s.index), tuple, var_pos);
                }
                ri.add(InboundKind::Marginal, s.name, *d);
                h += entropy(*d);
            }
            u.energies[n.id] = (*registry->energy(n.kind))(ri) - h;
        }
        for (const auto& v : vars) {
            if (v.kind != VariableKind::Random) continue;
            u.entropies[v.id] = static_cast<double>(degree[v.id] - 1) * entropy(tuple[static_cast<std::size_t>(var_pos[v.id])]->dist);
        }
        for (double e : u.energies) u.total += e;
        for (double e : u.entropies) u.total += e;
        u.tick = ++tick;
        if (options.trace_all) {
            trace("bfe", "bfe", u.tick, {{"total", u.total}});
        }
        return u;
    }

    // ------------------------------------------------------------------ initialization check

    void check_initialization() {
        if (checked) return;
        const auto& nodes = graph.nodes();
        const auto& vars = graph.variables();
        const std::size_t total = iface_base.back();
        // Availability nodes: messages [0, total), marginals [total, total + V), joints after.
        std::vector<std::size_t> joint_base(nodes.size() + 1, 0);
        for (const auto& n : nodes) joint_base[n.id + 1] = joint_base[n.id] + plans[n.id]->clusters.size();
        const std::size_t mbase = total, jbase = total + vars.size();
        const std::size_t count = jbase + joint_base.back();

        std::vector<std::uint32_t> missing(count, 0);
        std::vector<char> relevant(count, 0), available(count, 0);
        std::vector<std::vector<std::uint32_t>> dependents(count);
        auto depend = [&](std::size_t node, std::size_t on) {
            dependents[on].push_back(static_cast<std::uint32_t>(node));
            ++missing[node];
        };
        auto msg_index = [&](const Connection& c) { return gidx(c.node, static_cast<std::uint32_t>(graph.node(c.node).interface_index(c.iface))); };
        std::vector<char> q_used(count, 0);
        auto add_slots = [&](std::size_t node, NodeId a, const Target& t) {
            for (const auto& s : t.slots) {
                if (s.src == Src::Joint) {
                    depend(node, jbase + joint_base[a] + s.index);
                    q_used[jbase + joint_base[a] + s.index] = 1;
                    continue;
                }
                const VariableId v = var_at(a, s.index);
                if (!is_random(v)) continue;
                if (s.src == Src::Marginal) {
                    depend(node, mbase + v);
                    q_used[mbase + v] = 1;
                    continue;
                }
                for (const auto& c : graph.variable(v).connections) {
                    if (c.node == a && c.iface == graph.node(a).interfaces[s.index]) continue;
                    depend(node, msg_index(c));
                }
            }
        };
        for (const auto& n : nodes) {
            const auto& p = *plans[n.id];
            for (std::uint32_t i = 0; i < n.interfaces.size(); ++i) {
                if (!p.outbound[i]) continue;
                const auto g = gidx(n.id, i);
                relevant[g] = 1;
                if (!init_msg[g]) add_slots(g, n.id, *p.outbound[i]);
            }
            for (std::uint32_t c = 0; c < p.clusters.size(); ++c) {
                if (!p.joints[c]) continue;
                const auto j = jbase + joint_base[n.id] + c;
                relevant[j] = 1;
                add_slots(j, n.id, *p.joints[c]);
            }
        }
        for (const auto& v : vars) {
            if (v.kind != VariableKind::Random) continue;
            relevant[mbase + v.id] = 1;
            if (init_marg[v.id]) continue;
            for (const auto& c : v.connections) depend(mbase + v.id, msg_index(c));
        }
        std::vector<std::size_t> work;
        for (std::size_t k = 0; k < count; ++k) {
            if (relevant[k] && missing[k] == 0) work.push_back(k);
        }
        while (!work.empty()) {
            const auto k = work.back();
            work.pop_back();
            if (available[k]) continue;
            available[k] = 1;
            for (auto d : dependents[k]) {
                if (--missing[d] == 0) work.push_back(d);
            }
        }

        std::vector<std::string> gates, msgs;
        for (const auto& v : vars) {
            const auto k = mbase + v.id;
            if (relevant[k] && !available[k] && q_used[k]) gates.push_back("q(" + v.name + ")");
        }
        for (const auto& n : nodes) {
            const auto& p = *plans[n.id];
            for (std::uint32_t c = 0; c < p.clusters.size(); ++c) {
                const auto k = jbase + joint_base[n.id] + c;
                if (relevant[k] && !available[k] && q_used[k]) gates.push_back("q(" + n.name + "." + p.cluster_names[c] + ")");
            }
        }
        if (!gates.empty()) {
            throw std::logic_error("inference cannot start: gating marginals " + join(gates, ", ") +
                                   " never receive a value; initialize them with set_marginal");
        }
        for (const auto& n : nodes) {
            for (std::uint32_t i = 0; i < n.interfaces.size(); ++i) {
                const auto g = gidx(n.id, i);
                if (relevant[g] && !available[g]) msgs.push_back(msg_id(n.id, i));
            }
        }
        if (!msgs.empty()) {
            if (msgs.size() > 8) {
                const auto more = msgs.size() - 8;
                msgs.resize(8);
                msgs.push_back("... (" + std::to_string(more) + " more)");
            }
            throw std::logic_error("inference cannot start: messages " + join(msgs, ", ") +
                                   " never become available; initialize them with set_message");
        }
        checked = true;
    }

    // ------------------------------------------------------------------ driving

    void rethrow_pending() {
        if (error) {
            auto e = error;
            error = nullptr;
            std::rethrow_exception(e);
        }
    }

    void inject(VariableId v, const Eigen::MatrixXd& value) {
        const auto& var = graph.variable(v);
        if (var.kind != VariableKind::Data) {
            throw std::invalid_argument("inject: '" + var.name + "' is a " + std::string(variable_kind_name(var.kind)) +
                                        " variable, not data");
        }
        if (value.rows() != var.dims.rows || value.cols() != var.dims.cols) {
            throw std::invalid_argument("inject: '" + var.name + "' expects " + std::to_string(var.dims.rows) + "x" +
                                        std::to_string(var.dims.cols) + ", got " + std::to_string(value.rows()) + "x" +
                                        std::to_string(value.cols()));
        }
        check_initialization();
        data_stream(v).push(packet(PointMass(value)));
        rethrow_pending();
    }

    void run_iterations(const std::vector<std::pair<VariableId, Eigen::MatrixXd>>& bindings, int k) {
        if (k < 1) throw std::invalid_argument("run_iterations: k must be at least 1");
        std::vector<const Eigen::MatrixXd*> value(graph.variables().size(), nullptr);
        for (const auto& [v, m] : bindings) {
            if (graph.variable(v).kind != VariableKind::Data) {
                throw std::invalid_argument("run_iterations: '" + graph.variable(v).name + "' is not a data variable");
            }
            value[v] = &m;
        }
        std::vector<std::string> unbound;
        for (const auto& var : graph.variables()) {
            if (var.kind == VariableKind::Data && !value[var.id]) unbound.push_back(var.name);
        }
        if (!unbound.empty()) throw std::invalid_argument("run_iterations: unbound data variables: " + join(unbound, ", "));
        for (int it = 0; it < k; ++it) {
            for (const auto& var : graph.variables()) {
                if (var.kind == VariableKind::Data) inject(var.id, *value[var.id]);
            }
        }
    }
};

// ---------------------------------------------------------------------------

InferenceEngine::InferenceEngine(ModelGraph graph, EngineOptions options)
    : impl_(std::make_unique<Impl>(std::move(graph), std::move(options))) {
    impl_->wire();
}

InferenceEngine::~InferenceEngine() = default;

const ModelGraph& InferenceEngine::graph() const { return impl_->graph; }

void InferenceEngine::inject(VariableId data, const Eigen::MatrixXd& value) { impl_->inject(data, value); }

void InferenceEngine::inject(VariableId data, double value) {
    impl_->inject(data, Eigen::MatrixXd::Constant(1, 1, value));
}

void InferenceEngine::run_iterations(const std::vector<std::pair<VariableId, Eigen::MatrixXd>>& data, int k) {
    impl_->run_iterations(data, k);
}

rx::Observable<MarginalUpdate> InferenceEngine::marginal_stream(VariableId var) {
    const auto& v = impl_->graph.variable(var);
    if (v.kind != VariableKind::Random) {
        throw std::invalid_argument("marginal_stream: '" + v.name + "' is not a random variable");
    }
    return rx::map(impl_->q_obs(var), [var](const Packet& p) { return MarginalUpdate{var, p->dist, p->tick}; });
}

rx::Observable<BfeUpdate> InferenceEngine::bfe_stream() { return impl_->bfe_stream().observable(); }

rx::Observable<Packet> InferenceEngine::message_stream(NodeId node, const std::string& iface) {
    const auto i = static_cast<std::uint32_t>(impl_->graph.node(node).interface_index(iface));
    return impl_->msg_stream(node, i).observable();
}

std::optional<Distribution> InferenceEngine::latest_marginal(VariableId var) const {
    const auto& slot = impl_->marg.at(var);
    if (!slot || !slot->latest()) return std::nullopt;
    return (*slot->latest())->dist;
}

void InferenceEngine::set_marginal(VariableId var, Distribution d) {
    const auto& v = impl_->graph.variable(var);
    if (v.kind != VariableKind::Random) {
        throw std::invalid_argument("set_marginal: '" + v.name + "' is a " + std::string(variable_kind_name(v.kind)) +
                                    " variable");
    }
    impl_->init_marg[var] = 1;
    impl_->marg_stream(var).push(impl_->packet(std::move(d)));
    impl_->rethrow_pending();
}

void InferenceEngine::set_message(NodeId node, const std::string& iface, Distribution d) {
    const auto& n = impl_->graph.node(node);
    const auto i = static_cast<std::uint32_t>(n.interface_index(iface));
    auto& stream = impl_->msg_stream(node, i);
    stream.connect();
    if (stream.completed()) {
        throw std::logic_error("set_message: " + n.name + "." + iface + " depends on constants only and cannot be overridden");
    }
    impl_->init_msg[impl_->gidx(node, i)] = 1;
    stream.push(impl_->packet(std::move(d)));
    impl_->rethrow_pending();
}

void InferenceEngine::chain_redirect(VariableId posterior, VariableId mean_data, VariableId precision_data) {
    auto& im = *impl_;
    if (im.graph.variable(posterior).kind != VariableKind::Random) {
        throw std::invalid_argument("chain_redirect: posterior must be a random variable");
    }
    for (auto v : {mean_data, precision_data}) {
        const auto& var = im.graph.variable(v);
        if (var.kind != VariableKind::Data || var.dims != Dims::scalar()) {
            throw std::invalid_argument("chain_redirect: '" + var.name + "' must be a scalar data variable");
        }
    }
    const std::size_t idx = im.links.size();
    im.links.push_back(Impl::Link{posterior, mean_data, precision_data, std::nullopt, {}});
    im.links[idx].sub = im.q_obs(posterior).subscribe([&im, idx](const Packet& p) {
        auto& link = im.links[idx];
        try {
            const double m = mean_value(p->dist);
            const double var = variance_value(p->dist);
            if (!std::isfinite(m) || !std::isfinite(var) || var <= 0.0) {
                throw DistributionError("posterior " + describe(p->dist) + " has no finite mean and precision");
            }
            link.pending = std::make_pair(m, 1.0 / var);
        } catch (const std::exception& e) {
            im.chain_errors.push_back(ChainError{link.posterior, im.steps, e.what()});
        }
    });
}

void InferenceEngine::stage(VariableId data, const Eigen::MatrixXd& value) {
    if (impl_->graph.variable(data).kind != VariableKind::Data) {
        throw std::invalid_argument("stage: '" + impl_->graph.variable(data).name + "' is not a data variable");
    }
    impl_->staged[data] = value;
}

void InferenceEngine::stage(VariableId data, double value) { stage(data, Eigen::MatrixXd::Constant(1, 1, value)); }

void InferenceEngine::step(const std::vector<std::pair<VariableId, Eigen::MatrixXd>>& observations, int k) {
    auto& im = *impl_;
    std::vector<std::pair<VariableId, Eigen::MatrixXd>> bindings(im.staged.begin(), im.staged.end());
    for (const auto& o : observations) {
        if (im.staged.count(o.first)) throw std::invalid_argument("step: observation overlaps a staged prior");
        bindings.push_back(o);
    }
    im.run_iterations(bindings, k);
    for (auto& link : im.links) {
        if (!link.pending) continue;
        im.staged[link.mean_data] = Eigen::MatrixXd::Constant(1, 1, link.pending->first);
        im.staged[link.precision_data] = Eigen::MatrixXd::Constant(1, 1, link.pending->second);
        link.pending.reset();
    }
    ++im.steps;
}

const std::vector<ChainError>& InferenceEngine::chain_errors() const { return impl_->chain_errors; }

std::size_t InferenceEngine::steps() const { return impl_->steps; }

std::vector<std::string> InferenceEngine::dependencies_of(NodeId node, const std::string& iface) const {
    const auto& n = impl_->graph.node(node);
    const auto i = n.interface_index(iface);
    const auto& t = impl_->plans[node]->outbound[i];
    if (!t) throw std::invalid_argument("dependencies_of: " + n.name + "." + iface + " has no outbound message");
    std::vector<std::string> out;
    for (const auto& s : t->slots) {
        switch (s.src) {
            case Src::InMsg: out.push_back("in:" + n.name + "." + n.interfaces[s.index]); break;
            case Src::Marginal: out.push_back("q:" + impl_->graph.variable(*n.bindings[s.index]).name); break;
            case Src::Joint: out.push_back("joint:" + n.name + "." + impl_->plans[node]->cluster_names[s.index]); break;
        }
    }
    return out;
}

std::vector<std::string> InferenceEngine::cluster_names(NodeId node) const {
    impl_->graph.node(node);
    return impl_->plans[node]->cluster_names;
}

std::size_t InferenceEngine::materialized_streams() const {
    std::size_t n = impl_->joint.size() + (impl_->bfe ? 1 : 0);
    for (const auto* table : {&impl_->msg, &impl_->in, &impl_->marg, &impl_->data}) {
        for (const auto& s : *table) n += s ? 1 : 0;
    }
    return n;
}

std::uint64_t InferenceEngine::tick() const { return impl_->tick; }

const rx::SchedulerPtr& InferenceEngine::scheduler() const { return impl_->scheduler; }

}  // namespace rmp
