#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridflow/environment.hpp"
#include "gridflow/errors.hpp"
#include "gridflow/gnn_policy.hpp"
#include "gridflow/grid_model.hpp"
#include "gridflow/nn_core.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double epsilon = 0.2;  // clip width
  double k1 = 0.5;       // value-loss coefficient
  double k2 = 0.01;      // entropy coefficient
  double lr = 0.003;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::size_t minibatch = 25;
  std::size_t epochs = 3;
  std::size_t episodes = 500;
  std::size_t horizon = 125;  // T
  std::uint64_t seed = 0;
  bool normalize_advantages = true;
  std::size_t eval_every = 25;  // episodes between best-checkpoint evaluations
  std::size_t eval_rollouts = 20;
  std::size_t checkpoint_every = 25;
  GnnConfig gnn{};
  EnvConfig env{};  // horizon field is overridden by `horizon` above
};

inline void validate_config(const PpoConfig& cfg) {
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0)
    throw PreconditionError("ppo config: gamma outside [0,1]");
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
    throw PreconditionError("ppo config: lambda outside [0,1]");
  if (!(cfg.epsilon > 0.0)) throw PreconditionError("ppo config: epsilon must be positive");
  if (cfg.minibatch == 0 || cfg.minibatch > cfg.horizon)
    throw PreconditionError("ppo config: minibatch must be in [1, horizon]");
  if (cfg.horizon == 0) throw PreconditionError("ppo config: horizon must be positive");
}

// ---------------------------------------------------------------------------
// Episode collection
// ---------------------------------------------------------------------------

struct Transition {
  GraphState state;
  std::size_t action = 0;
  double reward = 0.0;
  double log_prob = 0.0;  // behavior policy log-prob at collection time
  double value = 0.0;     // critic V(s_t) at collection time
  GraphState next_state;
  int branch = 0;
};

struct Trajectory {
  std::vector<Transition> steps;
  double final_value = 0.0;  // critic bootstrap V(s_T)
  double final_cost = 0.0;   // $/h of the last state
  bool final_feasible = false;
};

using ActorFn = std::function<ActionSample(const GraphState&, Rng&)>;
using CriticFn = std::function<double(const GraphState&)>;

/// Roll one episode with injectable actor/critic (stub harness, tests).
inline Trajectory collect_episode_with(const NetworkCase& c, const ActorFn& actor,
                                       const CriticFn& critic, const PpoConfig& cfg,
                                       std::uint64_t seed) {
  validate_config(cfg);
  EnvConfig env = cfg.env;
  env.horizon = cfg.horizon;
  Rng rng(seed);

  Trajectory traj;
  traj.steps.reserve(cfg.horizon);
  EnvState s = env_reset(c, env);
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    Transition tr;
    tr.state = s.graph;
    const ActionSample a = actor(s.graph, rng);
    tr.action = a.index;
    tr.log_prob = a.log_prob;
    tr.value = critic(s.graph);
    if (!std::isfinite(tr.log_prob) || !std::isfinite(tr.value))
      throw NumericError("collect_episode: non-finite log-prob or value");
    StepResult r = env_step(s, a.index, env);
    tr.reward = r.reward;
    tr.branch = r.info.branch;
    tr.next_state = r.state.graph;
    s = std::move(r.state);
    traj.steps.push_back(std::move(tr));
  }
  traj.final_value = critic(s.graph);
  traj.final_cost = s.cost;
  traj.final_feasible = s.feasible;
  return traj;
}

/// Roll one episode under the current policy; deterministic per seed.
inline Trajectory collect_episode(const NetworkCase& c, const PolicyParams& params,
                                  const PpoConfig& cfg, std::uint64_t seed,
                                  bool greedy = false) {
  ActorFn actor = [&params, greedy](const GraphState& g, Rng& rng) {
    const Tensor logits = actor_logits(params, g);
    return greedy ? greedy_action(logits) : sample_action(logits, rng);
  };
  CriticFn critic = [&params](const GraphState& g) { return critic_value(params, g); };
  return collect_episode_with(c, actor, critic, cfg, seed);
}

// ---------------------------------------------------------------------------
// Generalized advantage estimation
// ---------------------------------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // A_t + V_t, computed before any normalization
};

/// delta_t = r_t + gamma V_{t+1} - V_t with the critic bootstrap as V_T
/// (episodes are horizon-truncated, never terminal); A_t = delta_t +
/// gamma*lambda*A_{t+1}. When `normalize` is set the advantages are shifted
/// and scaled to zero mean, unit variance per episode (returns are not).
inline GaeResult gae_advantages(const Trajectory& traj, double gamma, double lambda,
                                bool normalize = true) {
  const std::size_t n = traj.steps.size();
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double v_next = (i + 1 < n) ? traj.steps[i + 1].value : traj.final_value;
    const double delta = traj.steps[i].reward + gamma * v_next - traj.steps[i].value;
    next_adv = delta + gamma * lambda * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + traj.steps[i].value;
  }
  if (normalize && n > 0) {
    double mean = 0.0;
    for (double a : out.advantages) mean += a;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (sd > 1e-12) {
      for (double& a : out.advantages) a = (a - mean) / sd;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// One update batch: parallel arrays over the sampled transitions.
struct PpoBatch {
  std::vector<const GraphState*> states;
  std::vector<std::size_t> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return states.size(); }
};

struct LossParts {
  double total = 0.0;
  double l_clip = 0.0;
  double l_value = 0.0;
  double l_entropy = 0.0;
};

/// Builds loss = -L_CLIP + k1*L_VALUE - k2*L_ENTROPY on the tape. The paper's
/// objective is maximized; this is its negation for a minimizer.
inline Var taped_ppo_loss(Tape& tape, const PolicyVars& vars, const PolicyParams& params,
                          const PpoBatch& batch, const PpoConfig& cfg,
                          LossParts* parts = nullptr) {
  if (batch.size() == 0) throw PreconditionError("ppo loss: empty batch");
  std::vector<Var> clips, verrs, ents;
  clips.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const GraphState& g = *batch.states[i];
    Var logits = taped_actor_logits(tape, vars, params, g);
    Var new_lp = tape.log_softmax_pick(logits, batch.actions[i]);
    Var ratio = tape.exp_(tape.affine_const(new_lp, 1.0, -batch.old_log_probs[i]));
    Var unclipped = tape.affine_const(ratio, batch.advantages[i], 0.0);
    Var clipped = tape.affine_const(tape.clamp(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon),
                                    batch.advantages[i], 0.0);
    clips.push_back(tape.min2(unclipped, clipped));
    Var v = taped_critic_value(tape, vars, params, g);
    verrs.push_back(tape.square(tape.affine_const(v, 1.0, -batch.returns[i])));
    ents.push_back(tape.softmax_entropy(logits));
  }
  Var l_clip = tape.mean_elems(tape.concat(clips));
  Var l_value = tape.mean_elems(tape.concat(verrs));
  Var l_entropy = tape.mean_elems(tape.concat(ents));
  Var loss = tape.add(tape.add(tape.affine_const(l_clip, -1.0, 0.0),
                               tape.affine_const(l_value, cfg.k1, 0.0)),
                      tape.affine_const(l_entropy, -cfg.k2, 0.0));
  if (parts) {
    parts->total = tape.value(loss)[0];
    parts->l_clip = tape.value(l_clip)[0];
    parts->l_value = tape.value(l_value)[0];
    parts->l_entropy = tape.value(l_entropy)[0];
  }
  return loss;
}

/// Loss value without gradients (same code path on a throwaway tape).
inline LossParts ppo_loss(const PolicyParams& params, const PpoBatch& batch,
                          const PpoConfig& cfg) {
  Tape tape;
  PolicyVars vars = lift_policy(tape, params);
  LossParts parts;
  taped_ppo_loss(tape, vars, params, batch, cfg, &parts);
  return parts;
}

namespace detail {

/// Gradient of the batch loss accumulated into `grads`, built sample by
/// sample: the loss is a mean of per-sample terms, so summing per-sample
/// gradients weighted by 1/n is the batch gradient while keeping the live
/// tape small.
inline void accumulate_batch_grads(const PolicyParams& params, const PpoBatch& batch,
                                   const PpoConfig& cfg, PolicyParams& grads,
                                   LossParts* parts = nullptr) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossParts sum;
  PolicyParams sample_grad = zeros_like(params);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    PpoBatch one;
    one.states = {batch.states[i]};
    one.actions = {batch.actions[i]};
    one.old_log_probs = {batch.old_log_probs[i]};
    one.advantages = {batch.advantages[i]};
    one.returns = {batch.returns[i]};
    Tape tape;
    PolicyVars vars = lift_policy(tape, params);
    LossParts p;
    Var loss = taped_ppo_loss(tape, vars, params, one, cfg, &p);
    tape.backward(loss);
    for (MlpParams* m : policy_mlps(sample_grad)) *m = zeros_like(*m);
    accumulate_policy_grads(tape, vars, sample_grad);
    auto gs = policy_mlps(grads);
    auto ss = policy_mlps(sample_grad);
    for (std::size_t k = 0; k < gs.size(); ++k) {
      for (std::size_t l = 0; l < gs[k]->w.size(); ++l) {
        for (std::size_t j = 0; j < gs[k]->w[l].size(); ++j)
          gs[k]->w[l][j] += inv * ss[k]->w[l][j];
        for (std::size_t j = 0; j < gs[k]->b[l].size(); ++j)
          gs[k]->b[l][j] += inv * ss[k]->b[l][j];
      }
    }
    sum.total += inv * p.total;
    sum.l_clip += inv * p.l_clip;
    sum.l_value += inv * p.l_value;
    sum.l_entropy += inv * p.l_entropy;
  }
  if (parts) *parts = sum;
}

/// [0,n) split into consecutive spans of at most `size`.
inline std::vector<std::pair<std::size_t, std::size_t>> minibatch_ranges(std::size_t n,
                                                                         std::size_t size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += size) out.emplace_back(lo, std::min(lo + size, n));
  return out;
}

inline std::vector<Tensor*> flat_tensors(PolicyParams& p) {
  std::vector<Tensor*> out;
  for (MlpParams* m : policy_mlps(p)) {
    for (auto& t : m->w) out.push_back(&t);
    for (auto& t : m->b) out.push_back(&t);
  }
  return out;
}

inline std::vector<const Tensor*> flat_tensors(const PolicyParams& p) {
  std::vector<const Tensor*> out;
  for (const MlpParams* m : policy_mlps(p)) {
    for (const auto& t : m->w) out.push_back(&t);
    for (const auto& t : m->b) out.push_back(&t);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpisodeMetrics {
  std::size_t episode = 0;
  double mean_reward = 0.0;
  double final_cost = 0.0;
  double feasible_fraction = 0.0;  // steps that did not hit the infeasible branch
  double l_clip = 0.0;
  double l_value = 0.0;
  double l_entropy = 0.0;
  double wall_ms = 0.0;
};

inline std::string metrics_csv_header() {
  return "episode,mean_reward,final_cost,feasible_fraction,l_clip,l_value,l_entropy,wall_ms";
}

inline std::string metrics_csv_row(const EpisodeMetrics& m) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", m.episode,
                m.mean_reward, m.final_cost, m.feasible_fraction, m.l_clip, m.l_value,
                m.l_entropy, m.wall_ms);
  return buf;
}

inline std::string metrics_to_csv(const std::vector<EpisodeMetrics>& rows) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& m : rows) out += metrics_csv_row(m) + "\n";
  return out;
}

/// Final cost of one sampled rollout, taken at the last feasible state.
/// Empty when no state of the rollout was feasible.
inline std::optional<double> rollout_final_feasible_cost(const NetworkCase& c,
                                                         const PolicyParams& params,
                                                         const PpoConfig& cfg,
                                                         std::uint64_t seed) {
  EnvConfig env = cfg.env;
  env.horizon = cfg.horizon;
  Rng rng(seed);
  EnvState s = env_reset(c, env);
  std::optional<double> last_feasible;
  if (s.feasible) last_feasible = s.cost;
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    const ActionSample a = sample_action(actor_logits(params, s.graph), rng);
    s = env_step(s, a.index, env).state;
    if (s.feasible) last_feasible = s.cost;
  }
  return last_feasible;
}

namespace detail {

/// Mean of the lowest min(10, count) feasible rollout costs; empty if no
/// rollout ever reached a feasible state.
inline std::optional<double> eval_best10_cost(const NetworkCase& c, const PolicyParams& params,
                                              const PpoConfig& cfg, Rng& eval_rng) {
  std::vector<double> costs;
  for (std::size_t r = 0; r < cfg.eval_rollouts; ++r) {
    const auto cost = rollout_final_feasible_cost(c, params, cfg, eval_rng.next_u64());
    if (cost) costs.push_back(*cost);
  }
  if (costs.empty()) return std::nullopt;
  std::sort(costs.begin(), costs.end());
  const std::size_t k = std::min<std::size_t>(10, costs.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean += costs[i];
  return mean / static_cast<double>(k);
}

}  // namespace detail

struct TrainHooks {
  std::function<void(const EpisodeMetrics&)> on_metrics;
  std::function<void(std::size_t episode, const PolicyParams&)> on_checkpoint;
};

struct TrainResult {
  PolicyParams final_params;
  PolicyParams best_params;
  double best_eval_cost = std::numeric_limits<double>::infinity();
  std::vector<EpisodeMetrics> metrics;
};

/// One episode per iteration: collect under the current policy, shuffle its
/// transitions once, then `epochs` passes of minibatch Adam steps on the PPO
/// loss. Loss components are logged from a pre-update pass over the full
/// episode. Every `eval_every` episodes the policy is evaluated with sampled
/// rollouts and the best (lowest best-10 mean feasible cost) parameters are
/// retained. Numeric trouble surfaces in the metrics, not as exceptions.
inline TrainResult train(const NetworkCase& c, const PpoConfig& cfg,
                         const TrainHooks& hooks = {}) {
  validate_config(cfg);
  Rng master(cfg.seed);
  Rng init_rng = master.split(1);
  Rng shuffle_rng = master.split(2);
  Rng eval_rng = master.split(3);
  Rng episode_seeds = master.split(4);

  TrainResult result;
  PolicyParams params = make_policy(cfg.gnn, init_rng);
  AdamState adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.adam_beta1;
  adam.beta2 = cfg.adam_beta2;

  result.best_params = params;
  bool best_seen = false;

  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    const Trajectory traj = collect_episode(c, params, cfg, episode_seeds.next_u64());
    const GaeResult gae = gae_advantages(traj, cfg.gamma, cfg.lambda,
                                         cfg.normalize_advantages);

    const std::size_t n = traj.steps.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    auto batch_of = [&](std::size_t lo, std::size_t hi) {
      PpoBatch b;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        b.states.push_back(&traj.steps[i].state);
        b.actions.push_back(traj.steps[i].action);
        b.old_log_probs.push_back(traj.steps[i].log_prob);
        b.advantages.push_back(gae.advantages[i]);
        b.returns.push_back(gae.returns[i]);
      }
      return b;
    };

    // Pre-update loss components over the whole episode, for the log.
    LossParts parts = ppo_loss(params, batch_of(0, n), cfg);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (const auto& [lo, hi] : detail::minibatch_ranges(n, cfg.minibatch)) {
        PpoBatch b = batch_of(lo, hi);
        PolicyParams grads = zeros_like(params);
        detail::accumulate_batch_grads(params, b, cfg, grads);
        adam_step(detail::flat_tensors(params),
                  detail::flat_tensors(std::as_const(grads)), adam);
      }
    }

    EpisodeMetrics m;
    m.episode = ep;
    double reward_sum = 0.0;
    std::size_t feasible_steps = 0;
    for (const auto& tr : traj.steps) {
      reward_sum += tr.reward;
      if (tr.branch != 2) feasible_steps += 1;
    }
    m.mean_reward = reward_sum / static_cast<double>(n);
    m.final_cost = traj.final_cost;
    m.feasible_fraction = static_cast<double>(feasible_steps) / static_cast<double>(n);
    m.l_clip = parts.l_clip;
    m.l_value = parts.l_value;
    m.l_entropy = parts.l_entropy;
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t0)
                    .count();
    result.metrics.push_back(m);
    if (hooks.on_metrics) hooks.on_metrics(m);

    const std::size_t done = ep + 1;
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(done, params);
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
      const auto cost = detail::eval_best10_cost(c, params, cfg, eval_rng);
      if (cost && (!best_seen || *cost < result.best_eval_cost)) {
        result.best_eval_cost = *cost;
        result.best_params = params;
        best_seen = true;
      }
    }
  }

  result.final_params = params;
  if (!best_seen) result.best_params = result.final_params;
  return result;
}

}  // namespace gridflow
