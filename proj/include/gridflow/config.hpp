#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"

#include "gridflow/checkpoint.hpp"
#include "gridflow/errors.hpp"
#include "gridflow/ppo_trainer.hpp"

namespace gridflow {

inline constexpr const char* kToolVersion = "0.1.0";

/// Everything a run needs, resolved from defaults, an optional config file,
/// the GRIDFLOW_SEED environment variable, and command-line flags (in that
/// precedence order). One root seed drives every subsystem.
struct RunConfig {
  std::string case_path;
  std::string suite_path;
  std::string checkpoint_path;
  std::string out_dir = ".";
  std::string trace_path;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  PpoConfig ppo{};  // nests GnnConfig and EnvConfig

  std::size_t rollouts = 100;  // evaluation protocol
  int segments = 20;           // dc-opf cost linearization
  std::string dc_eval = "ac";
  std::size_t starts = 20;  // reference oracle multi-starts

  std::string dispatch = "reset";  // pf subcommand operand
  std::string family;              // perturb subcommand
  double lower = 0.1;
  double upper = 0.1;
  std::size_t n = 1;
};

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
  return nlohmann::json{
      {"case", rc.case_path},
      {"suite", rc.suite_path},
      {"checkpoint", rc.checkpoint_path},
      {"out", rc.out_dir},
      {"trace", rc.trace_path},
      {"seed", rc.seed},
      {"workers", rc.workers},
      {"episodes", rc.ppo.episodes},
      {"horizon", rc.ppo.horizon},
      {"minibatch", rc.ppo.minibatch},
      {"epochs", rc.ppo.epochs},
      {"gamma", rc.ppo.gamma},
      {"lambda", rc.ppo.lambda},
      {"epsilon", rc.ppo.epsilon},
      {"k1", rc.ppo.k1},
      {"k2", rc.ppo.k2},
      {"lr", rc.ppo.lr},
      {"adam_beta1", rc.ppo.adam_beta1},
      {"adam_beta2", rc.ppo.adam_beta2},
      {"normalize_advantages", rc.ppo.normalize_advantages},
      {"eval_every", rc.ppo.eval_every},
      {"eval_rollouts", rc.ppo.eval_rollouts},
      {"checkpoint_every", rc.ppo.checkpoint_every},
      {"embed_dim", rc.ppo.gnn.embed_dim},
      {"iterations", rc.ppo.gnn.iterations},
      {"message_hidden", rc.ppo.gnn.message_hidden},
      {"update_hidden", rc.ppo.gnn.update_hidden},
      {"readout_hidden", rc.ppo.gnn.readout_hidden},
      {"portions", rc.ppo.env.portions},
      {"rollback_on_infeasible", rc.ppo.env.rollback_on_infeasible},
      {"include_slack_cost", rc.ppo.env.include_slack_cost},
      {"reward_pmax", rc.ppo.env.rewards.cte1},
      {"reward_infeasible", rc.ppo.env.rewards.cte2},
      {"pf_tolerance", rc.ppo.env.pf.tolerance},
      {"pf_max_iterations", rc.ppo.env.pf.max_iterations},
      {"pf_q_limits", rc.ppo.env.pf.enforce_q_limits},
      {"rollouts", rc.rollouts},
      {"segments", rc.segments},
      {"dc_eval", rc.dc_eval},
      {"starts", rc.starts},
      {"dispatch", rc.dispatch},
      {"family", rc.family},
      {"lower", rc.lower},
      {"upper", rc.upper},
      {"n", rc.n},
  };
}

/// Overlay `j` onto `rc`. Unknown keys are rejected so config typos cannot
/// silently fall back to defaults.
inline void apply_config_json(RunConfig& rc, const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "case") rc.case_path = value.get<std::string>();
      else if (key == "suite") rc.suite_path = value.get<std::string>();
      else if (key == "checkpoint") rc.checkpoint_path = value.get<std::string>();
      else if (key == "out") rc.out_dir = value.get<std::string>();
      else if (key == "trace") rc.trace_path = value.get<std::string>();
      else if (key == "seed") rc.seed = value.get<std::uint64_t>();
      else if (key == "workers") rc.workers = value.get<std::size_t>();
      else if (key == "episodes") rc.ppo.episodes = value.get<std::size_t>();
      else if (key == "horizon") rc.ppo.horizon = value.get<std::size_t>();
      else if (key == "minibatch") rc.ppo.minibatch = value.get<std::size_t>();
      else if (key == "epochs") rc.ppo.epochs = value.get<std::size_t>();
      else if (key == "gamma") rc.ppo.gamma = value.get<double>();
      else if (key == "lambda") rc.ppo.lambda = value.get<double>();
      else if (key == "epsilon") rc.ppo.epsilon = value.get<double>();
      else if (key == "k1") rc.ppo.k1 = value.get<double>();
      else if (key == "k2") rc.ppo.k2 = value.get<double>();
      else if (key == "lr") rc.ppo.lr = value.get<double>();
      else if (key == "adam_beta1") rc.ppo.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") rc.ppo.adam_beta2 = value.get<double>();
      else if (key == "normalize_advantages")
        rc.ppo.normalize_advantages = value.get<bool>();
      else if (key == "eval_every") rc.ppo.eval_every = value.get<std::size_t>();
      else if (key == "eval_rollouts") rc.ppo.eval_rollouts = value.get<std::size_t>();
      else if (key == "checkpoint_every")
        rc.ppo.checkpoint_every = value.get<std::size_t>();
      else if (key == "embed_dim") rc.ppo.gnn.embed_dim = value.get<std::size_t>();
      else if (key == "iterations") rc.ppo.gnn.iterations = value.get<std::size_t>();
      else if (key == "message_hidden")
        rc.ppo.gnn.message_hidden = value.get<std::size_t>();
      else if (key == "update_hidden")
        rc.ppo.gnn.update_hidden = value.get<std::size_t>();
      else if (key == "readout_hidden")
        rc.ppo.gnn.readout_hidden = value.get<std::size_t>();
      else if (key == "portions") rc.ppo.env.portions = value.get<std::size_t>();
      else if (key == "rollback_on_infeasible")
        rc.ppo.env.rollback_on_infeasible = value.get<bool>();
      else if (key == "include_slack_cost")
        rc.ppo.env.include_slack_cost = value.get<bool>();
      else if (key == "reward_pmax") rc.ppo.env.rewards.cte1 = value.get<double>();
      else if (key == "reward_infeasible") rc.ppo.env.rewards.cte2 = value.get<double>();
      else if (key == "pf_tolerance") rc.ppo.env.pf.tolerance = value.get<double>();
      else if (key == "pf_max_iterations")
        rc.ppo.env.pf.max_iterations = value.get<int>();
      else if (key == "pf_q_limits") rc.ppo.env.pf.enforce_q_limits = value.get<bool>();
      else if (key == "rollouts") rc.rollouts = value.get<std::size_t>();
      else if (key == "segments") rc.segments = value.get<int>();
      else if (key == "dc_eval") rc.dc_eval = value.get<std::string>();
      else if (key == "starts") rc.starts = value.get<std::size_t>();
      else if (key == "dispatch") rc.dispatch = value.get<std::string>();
      else if (key == "family") rc.family = value.get<std::string>();
      else if (key == "lower") rc.lower = value.get<double>();
      else if (key == "upper") rc.upper = value.get<double>();
      else if (key == "n") rc.n = value.get<std::size_t>();
      else throw ParseError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

/// Accepts either a plain config object or a run manifest (whose resolved
/// config sits under the "config" key), so a manifest can reproduce its run.
inline void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (j.is_object() && j.contains("config") && j.at("config").is_object())
    j = j.at("config");
  apply_config_json(rc, j);
}

inline nlohmann::json run_manifest_json(const std::string& subcommand, const RunConfig& rc) {
  return nlohmann::json{
      {"tool", "gridflow"},
      {"version", kToolVersion},
      {"subcommand", subcommand},
      {"seed", rc.seed},
      {"formats", {{"checkpoint", kCheckpointVersion}}},
      {"config", run_config_to_json(rc)},
  };
}

}  // namespace gridflow
