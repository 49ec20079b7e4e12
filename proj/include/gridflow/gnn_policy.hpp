#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gridflow/errors.hpp"
#include "gridflow/nn_core.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

/// Graph view of a network state. Node and edge features are already scaled
/// to [0,1]; edges are undirected; generator_nodes lists the bus node index
/// hosting each dispatchable generator, in action order.
struct GraphState {
  std::vector<Tensor> node_features;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<Tensor> edge_features;
  std::vector<std::size_t> generator_nodes;

  std::size_t node_count() const { return node_features.size(); }
  bool operator==(const GraphState&) const = default;
};

inline void validate_graph(const GraphState& g) {
  if (g.edges.size() != g.edge_features.size())
    throw ShapeError("graph: edges and edge_features length mismatch");
  const std::size_t n = g.node_count();
  if (n == 0) throw PreconditionError("graph: no nodes");
  const std::size_t fdim = g.node_features.front().size();
  for (const auto& f : g.node_features)
    if (f.shape.size() != 1 || f.size() != fdim)
      throw ShapeError("graph: inconsistent node feature dimensions");
  const std::size_t edim = g.edge_features.empty() ? 0 : g.edge_features.front().size();
  for (const auto& f : g.edge_features)
    if (f.shape.size() != 1 || f.size() != edim)
      throw ShapeError("graph: inconsistent edge feature dimensions");
  for (const auto& [u, v] : g.edges)
    if (u >= n || v >= n) throw GraphError("graph: edge endpoint out of range");
  for (std::size_t gn : g.generator_nodes)
    if (gn >= n) throw GraphError("graph: generator node out of range");
}

struct NodeEmbeddings {
  std::vector<Tensor> h;
  std::size_t step = 0;
};

struct GnnConfig {
  std::size_t embed_dim = 16;
  std::size_t edge_dim = 2;
  std::size_t message_hidden = 32;
  std::size_t update_hidden = 32;
  std::size_t readout_hidden = 32;
  std::size_t iterations = 4;

  std::vector<std::size_t> message_dims() const {
    return {2 * embed_dim + edge_dim, message_hidden, embed_dim};
  }
  std::vector<std::size_t> update_dims() const {
    return {embed_dim + 3 * embed_dim, update_hidden, update_hidden, embed_dim};
  }
  std::vector<std::size_t> actor_readout_dims() const {
    return {embed_dim, readout_hidden, readout_hidden, 1};
  }
  std::vector<std::size_t> critic_readout_dims() const {
    return {3 * embed_dim, readout_hidden, readout_hidden, 1};
  }
};

/// Actor and critic run independent message-passing stacks; no weights are
/// shared between them.
struct PolicyParams {
  GnnConfig cfg;
  MlpParams actor_message, actor_update, actor_readout;
  MlpParams critic_message, critic_update, critic_readout;
};

inline PolicyParams make_policy(const GnnConfig& cfg, Rng& rng) {
  PolicyParams p;
  p.cfg = cfg;
  Rng r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3);
  Rng r4 = rng.split(4), r5 = rng.split(5), r6 = rng.split(6);
  p.actor_message = make_mlp(cfg.message_dims(), r1);
  p.actor_update = make_mlp(cfg.update_dims(), r2);
  p.actor_readout = make_mlp(cfg.actor_readout_dims(), r3);
  p.critic_message = make_mlp(cfg.message_dims(), r4);
  p.critic_update = make_mlp(cfg.update_dims(), r5);
  p.critic_readout = make_mlp(cfg.critic_readout_dims(), r6);
  return p;
}

namespace detail {

/// Incoming (source node, edge index) pairs per destination, ordered by
/// source node id then edge listing order. The aggregation tie-break
/// therefore favors the lowest neighbor id.
inline std::vector<std::vector<std::pair<std::size_t, std::size_t>>> incoming_lists(
    const GraphState& g) {
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> in(g.node_count());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [u, v] = g.edges[e];
    in[v].emplace_back(u, e);
    in[u].emplace_back(v, e);
  }
  for (auto& lst : in)
    std::stable_sort(lst.begin(), lst.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  return in;
}

inline std::vector<const MlpParams*> policy_mlps(const PolicyParams& p) {
  return {&p.actor_message, &p.actor_update,  &p.actor_readout,
          &p.critic_message, &p.critic_update, &p.critic_readout};
}
inline std::vector<MlpParams*> policy_mlps(PolicyParams& p) {
  return {&p.actor_message, &p.actor_update,  &p.actor_readout,
          &p.critic_message, &p.critic_update, &p.critic_readout};
}
inline const std::vector<std::string>& policy_mlp_names() {
  static const std::vector<std::string> names{"actor.message",  "actor.update",
                                              "actor.readout",  "critic.message",
                                              "critic.update",  "critic.readout"};
  return names;
}

}  // namespace detail

/// Tape handles for one loss evaluation over the full policy.
struct PolicyVars {
  MlpVars actor_message, actor_update, actor_readout;
  MlpVars critic_message, critic_update, critic_readout;
};

inline PolicyVars lift_policy(Tape& tape, const PolicyParams& p) {
  PolicyVars v;
  v.actor_message = lift_mlp(tape, p.actor_message);
  v.actor_update = lift_mlp(tape, p.actor_update);
  v.actor_readout = lift_mlp(tape, p.actor_readout);
  v.critic_message = lift_mlp(tape, p.critic_message);
  v.critic_update = lift_mlp(tape, p.critic_update);
  v.critic_readout = lift_mlp(tape, p.critic_readout);
  return v;
}

inline void accumulate_policy_grads(const Tape& tape, const PolicyVars& vars,
                                    PolicyParams& grads) {
  accumulate_mlp_grads(tape, vars.actor_message, grads.actor_message);
  accumulate_mlp_grads(tape, vars.actor_update, grads.actor_update);
  accumulate_mlp_grads(tape, vars.actor_readout, grads.actor_readout);
  accumulate_mlp_grads(tape, vars.critic_message, grads.critic_message);
  accumulate_mlp_grads(tape, vars.critic_update, grads.critic_update);
  accumulate_mlp_grads(tape, vars.critic_readout, grads.critic_readout);
}

inline PolicyParams zeros_like(const PolicyParams& p) {
  PolicyParams z = p;
  for (MlpParams* m : detail::policy_mlps(z)) *m = zeros_like(*m);
  return z;
}

/// Initial embeddings: node features zero-padded to the embedding width.
inline std::vector<Var> taped_init_embeddings(Tape& tape, const GnnConfig& cfg,
                                              const GraphState& g) {
  std::vector<Var> h;
  h.reserve(g.node_count());
  for (const auto& f : g.node_features) {
    if (f.size() > cfg.embed_dim)
      throw ShapeError("node features exceed embedding width");
    Tensor padded({cfg.embed_dim});
    for (std::size_t i = 0; i < f.size(); ++i) padded[i] = f[i];
    h.push_back(tape.leaf(padded));
  }
  return h;
}

/// k synchronous message-passing iterations with one message/update stack.
inline std::vector<Var> taped_message_pass(Tape& tape, std::vector<Var> h,
                                           const GraphState& g, const MlpVars& message,
                                           const MlpVars& update, const GnnConfig& cfg,
                                           std::size_t k) {
  const auto incoming = detail::incoming_lists(g);
  std::vector<Var> efeat;
  efeat.reserve(g.edges.size());
  for (const auto& f : g.edge_features) {
    if (f.size() != cfg.edge_dim) throw ShapeError("edge feature width mismatch");
    efeat.push_back(tape.leaf(f));
  }
  const Var zero_agg = tape.leaf(Tensor({3 * cfg.embed_dim}));

  for (std::size_t it = 0; it < k; ++it) {
    std::vector<Var> next(h.size());
    for (std::size_t v = 0; v < h.size(); ++v) {
      Var agg = zero_agg;
      if (!incoming[v].empty()) {
        std::vector<Var> msgs;
        msgs.reserve(incoming[v].size());
        for (const auto& [u, e] : incoming[v]) {
          Var in = tape.concat({h[v], h[u], efeat[e]});
          msgs.push_back(mlp_forward(tape, message, in));
        }
        agg = tape.concat({tape.agg_min(msgs), tape.agg_max(msgs), tape.agg_mean(msgs)});
      }
      next[v] = mlp_forward(tape, update, tape.concat({h[v], agg}));
    }
    h = std::move(next);
  }
  return h;
}

/// Per-generator logits, in action order.
inline Var taped_actor_logits(Tape& tape, const PolicyVars& vars, const PolicyParams& p,
                              const GraphState& g) {
  if (g.generator_nodes.empty())
    throw PreconditionError("actor_logits: no generator nodes");
  std::vector<Var> h = taped_init_embeddings(tape, p.cfg, g);
  h = taped_message_pass(tape, std::move(h), g, vars.actor_message, vars.actor_update, p.cfg,
                         p.cfg.iterations);
  std::vector<Var> logits;
  logits.reserve(g.generator_nodes.size());
  for (std::size_t gn : g.generator_nodes)
    logits.push_back(mlp_forward(tape, vars.actor_readout, h[gn]));
  return tape.concat(logits);
}

/// Scalar state value from the critic stack.
inline Var taped_critic_value(Tape& tape, const PolicyVars& vars, const PolicyParams& p,
                              const GraphState& g) {
  std::vector<Var> h = taped_init_embeddings(tape, p.cfg, g);
  h = taped_message_pass(tape, std::move(h), g, vars.critic_message, vars.critic_update,
                         p.cfg, p.cfg.iterations);
  Var pooled = tape.concat({tape.agg_sum(h), tape.agg_min(h), tape.agg_max(h)});
  return mlp_forward(tape, vars.critic_readout, pooled);
}

// ---------------------------------------------------------------------------
// Gradient-free entry points (rollouts, evaluation). These reuse the taped
// implementation so the two paths cannot drift apart numerically.
// ---------------------------------------------------------------------------

inline NodeEmbeddings init_embeddings(const GnnConfig& cfg, const GraphState& g) {
  validate_graph(g);
  NodeEmbeddings out;
  for (const auto& f : g.node_features) {
    if (f.size() > cfg.embed_dim)
      throw ShapeError("node features exceed embedding width");
    Tensor padded({cfg.embed_dim});
    for (std::size_t i = 0; i < f.size(); ++i) padded[i] = f[i];
    out.h.push_back(std::move(padded));
  }
  return out;
}

inline NodeEmbeddings message_pass(const NodeEmbeddings& h0, const GraphState& g,
                                   const MlpParams& message, const MlpParams& update,
                                   const GnnConfig& cfg, std::size_t k) {
  validate_graph(g);
  if (h0.h.size() != g.node_count())
    throw ShapeError("message_pass: embedding count does not match graph");
  Tape tape;
  MlpVars msg = lift_mlp(tape, message);
  MlpVars upd = lift_mlp(tape, update);
  std::vector<Var> h;
  h.reserve(h0.h.size());
  for (const auto& t : h0.h) h.push_back(tape.leaf(t));
  h = taped_message_pass(tape, std::move(h), g, msg, upd, cfg, k);
  NodeEmbeddings out;
  out.step = h0.step + k;
  for (Var v : h) out.h.push_back(tape.value(v));
  return out;
}

inline Tensor actor_logits(const PolicyParams& p, const GraphState& g) {
  validate_graph(g);
  Tape tape;
  PolicyVars vars;
  vars.actor_message = lift_mlp(tape, p.actor_message);
  vars.actor_update = lift_mlp(tape, p.actor_update);
  vars.actor_readout = lift_mlp(tape, p.actor_readout);
  return tape.value(taped_actor_logits(tape, vars, p, g));
}

inline double critic_value(const PolicyParams& p, const GraphState& g) {
  validate_graph(g);
  Tape tape;
  PolicyVars vars;
  vars.critic_message = lift_mlp(tape, p.critic_message);
  vars.critic_update = lift_mlp(tape, p.critic_update);
  vars.critic_readout = lift_mlp(tape, p.critic_readout);
  return tape.value(taped_critic_value(tape, vars, p, g))[0];
}

// ---------------------------------------------------------------------------
// Action selection
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const Tensor& logits) {
  if (logits.shape.size() != 1 || logits.size() == 0)
    throw ShapeError("softmax: nonempty rank-1 logits expected");
  double mx = logits[0];
  for (double v : logits.data) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

struct ActionSample {
  std::size_t index = 0;
  double log_prob = 0.0;
};

/// The log-prob is computed as logits[i] - logsumexp(logits), the same
/// arithmetic the training tape uses, so a ratio against a freshly computed
/// log-prob under unchanged parameters is exactly 1.
inline ActionSample sample_action(const Tensor& logits, Rng& rng) {
  const std::vector<double> p = softmax(logits);
  ActionSample s;
  s.index = rng.categorical(p);
  s.log_prob = logits[s.index] - detail::logsumexp(logits);
  return s;
}

/// Argmax with ties resolved to the lowest index.
inline ActionSample greedy_action(const Tensor& logits) {
  const std::vector<double> p = softmax(logits);
  ActionSample s;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[s.index]) s.index = i;
  s.log_prob = logits[s.index] - detail::logsumexp(logits);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing
// ---------------------------------------------------------------------------

inline std::map<std::string, Tensor> policy_to_named(const PolicyParams& p) {
  std::map<std::string, Tensor> out;
  const auto mlps = detail::policy_mlps(p);
  const auto& names = detail::policy_mlp_names();
  for (std::size_t k = 0; k < mlps.size(); ++k) {
    for (std::size_t l = 0; l < mlps[k]->w.size(); ++l) {
      out.emplace(names[k] + ".w" + std::to_string(l), mlps[k]->w[l]);
      out.emplace(names[k] + ".b" + std::to_string(l), mlps[k]->b[l]);
    }
  }
  return out;
}

/// Load named tensors into a config-shaped policy. Every expected tensor must
/// be present with the exact shape.
inline PolicyParams policy_from_named(const GnnConfig& cfg,
                                      const std::map<std::string, Tensor>& named) {
  Rng dummy(0);
  PolicyParams p = make_policy(cfg, dummy);
  const auto mlps = detail::policy_mlps(p);
  const auto& names = detail::policy_mlp_names();
  for (std::size_t k = 0; k < mlps.size(); ++k) {
    for (std::size_t l = 0; l < mlps[k]->w.size(); ++l) {
      for (auto [tensor, suffix] :
           {std::pair{&mlps[k]->w[l], ".w"}, std::pair{&mlps[k]->b[l], ".b"}}) {
        const std::string key = names[k] + suffix + std::to_string(l);
        auto it = named.find(key);
        if (it == named.end()) throw ParseError("checkpoint missing tensor: " + key);
        if (it->second.shape != tensor->shape)
          throw ShapeError("checkpoint tensor shape mismatch: " + key);
        *tensor = it->second;
      }
    }
  }
  return p;
}

}  // namespace gridflow
