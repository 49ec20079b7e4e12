#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gridflow/checkpoint.hpp"
#include "gridflow/config.hpp"
#include "gridflow/evaluation.hpp"
#include "gridflow/ppo_trainer.hpp"

namespace {

using nlohmann::json;
using namespace gridflow;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

NetworkCase load_case_checked(const RunConfig& rc) {
  if (rc.case_path.empty()) throw ValidationError("--case is required");
  return load_case(slurp(rc.case_path));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for writing: " + path);
  f << text;
}

std::string out_file(const RunConfig& rc, const std::string& name) {
  std::filesystem::create_directories(rc.out_dir);
  return (std::filesystem::path(rc.out_dir) / name).string();
}

void write_manifest(const std::string& subcommand, const RunConfig& rc) {
  write_text(out_file(rc, "run_manifest.json"),
             run_manifest_json(subcommand, rc).dump(2) + "\n");
}

/// Policy checkpoints are the nn_core tensor format plus a "gnn" key holding
/// the architecture, so a checkpoint alone is enough to rebuild the network.
json policy_checkpoint_json(const PolicyParams& params) {
  json j = checkpoint_to_json(policy_to_named(params));
  j["gnn"] = {{"embed_dim", params.cfg.embed_dim},
              {"edge_dim", params.cfg.edge_dim},
              {"message_hidden", params.cfg.message_hidden},
              {"update_hidden", params.cfg.update_hidden},
              {"readout_hidden", params.cfg.readout_hidden},
              {"iterations", params.cfg.iterations}};
  return j;
}

PolicyParams load_policy_checkpoint(const std::string& path, GnnConfig fallback) {
  json j;
  try {
    j = json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  GnnConfig cfg = fallback;
  if (j.contains("gnn")) {
    try {
      const json& g = j.at("gnn");
      cfg.embed_dim = g.at("embed_dim").get<std::size_t>();
      cfg.edge_dim = g.at("edge_dim").get<std::size_t>();
      cfg.message_hidden = g.at("message_hidden").get<std::size_t>();
      cfg.update_hidden = g.at("update_hidden").get<std::size_t>();
      cfg.readout_hidden = g.at("readout_hidden").get<std::size_t>();
      cfg.iterations = g.at("iterations").get<std::size_t>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("checkpoint gnn header: ") + e.what());
    }
  }
  return policy_from_named(cfg, checkpoint_from_json(j));
}

std::vector<double> resolve_dispatch(const NetworkCase& c, const std::string& spec) {
  if (spec == "reset") {
    std::vector<double> d;
    for (auto g : c.dispatchable_generators()) {
      const auto& gen = c.generators[g];
      d.push_back(gen.pmin + 0.2 * (gen.pmax - gen.pmin));
    }
    return d;
  }
  json j;
  try {
    j = json::parse(spec);  // inline JSON array
  } catch (const json::exception&) {
    try {
      j = json::parse(slurp(spec));  // or a path to one
    } catch (const json::exception& e) {
      throw ParseError(std::string("--dispatch: ") + e.what());
    }
  }
  if (!j.is_array()) throw ParseError("--dispatch: expected a JSON array of MW values");
  return j.get<std::vector<double>>();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int run_pf(RunConfig& rc) {
  const NetworkCase c = load_case_checked(rc);
  const std::vector<double> dispatch = resolve_dispatch(c, rc.dispatch);
  const PfSolution sol = solve_pf(c, dispatch, rc.ppo.env.pf);
  json j{{"converged", sol.converged},
         {"iterations", sol.iterations},
         {"max_mismatch", sol.max_mismatch},
         {"v", sol.v},
         {"theta", sol.theta},
         {"p_net", sol.p_net},
         {"q_net", sol.q_net},
         {"slack_p", sol.slack_p},
         {"slack_q", sol.slack_q},
         {"dispatch_clamped", sol.dispatch_clamped},
         {"dispatch_mw", dispatch}};
  if (sol.converged) {
    json flows = json::array();
    for (const auto& bf : branch_flows(c, sol))
      flows.push_back({{"branch_id", bf.branch_id},
                       {"p_from", bf.p_from},
                       {"q_from", bf.q_from},
                       {"p_to", bf.p_to},
                       {"q_to", bf.q_to}});
    j["branch_flows"] = std::move(flows);
    j["feasible"] = check_feasibility(sol, c).feasible;
  }
  write_manifest("pf", rc);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_dcopf(RunConfig& rc) {
  const NetworkCase c = load_case_checked(rc);
  const DispatchSolution sol = solve_dcopf(c, rc.segments);
  if (sol.status != DispatchSolution::Status::optimal) {
    std::cerr << "dcopf: no optimal solution (status "
              << (sol.status == DispatchSolution::Status::infeasible ? "infeasible"
                                                                     : "unbounded")
              << ")\n";
    return 2;
  }
  const DcEvalCost eval = dc_eval_cost(c, sol, dc_eval_mode_from_string(rc.dc_eval));
  json j{{"status", "optimal"},
         {"objective_lp", sol.objective},
         {"p_mw", sol.p},
         {"theta", sol.theta},
         {"eval", {{"mode", rc.dc_eval}, {"cost", eval.cost}, {"pf_converged", eval.pf_converged}}}};
  write_manifest("dcopf", rc);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_oracle(RunConfig& rc) {
  const NetworkCase c = load_case_checked(rc);
  const AcopfResult r = acopf_reference(c, rc.starts);
  json j{{"cost", r.cost},
         {"dispatch_mw", r.dispatch},
         {"feasible_starts", r.feasible_starts}};
  write_manifest("oracle", rc);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_perturb(RunConfig& rc) {
  const NetworkCase c = load_case_checked(rc);
  if (rc.family.empty())
    throw ValidationError("--family is required (scale_loads, remove_loads, remove_branches)");
  SuiteRowSpec row;
  row.name = rc.family;
  row.family = rc.family;
  row.seed = rc.seed;
  row.params = {{"lower", rc.lower}, {"upper", rc.upper}, {"n", rc.n}};
  const NetworkCase perturbed = apply_perturbation(c, row);
  write_manifest("perturb", rc);
  std::cout << serialize_case(perturbed) << "\n";
  return 0;
}

int run_train(RunConfig& rc) {
  const NetworkCase c = load_case_checked(rc);
  rc.ppo.seed = rc.seed;
  validate_config(rc.ppo);
  write_manifest("train", rc);

  std::ofstream metrics(out_file(rc, "metrics.csv"), std::ios::binary);
  if (!metrics) throw Error("cannot open metrics.csv for writing");
  metrics << metrics_csv_header() << "\n";

  TrainHooks hooks;
  hooks.on_metrics = [&](const EpisodeMetrics& m) {
    metrics << metrics_csv_row(m) << "\n";
    metrics.flush();
  };
  hooks.on_checkpoint = [&](std::size_t episode, const PolicyParams& p) {
    write_text(out_file(rc, "checkpoint_ep" + std::to_string(episode) + ".json"),
               policy_checkpoint_json(p).dump(2) + "\n");
  };

  const TrainResult result = train(c, rc.ppo, hooks);
  write_text(out_file(rc, "checkpoint_final.json"),
             policy_checkpoint_json(result.final_params).dump(2) + "\n");
  write_text(out_file(rc, "checkpoint_best.json"),
             policy_checkpoint_json(result.best_params).dump(2) + "\n");

  double last_cost = std::numeric_limits<double>::quiet_NaN();
  if (!result.metrics.empty()) last_cost = result.metrics.back().final_cost;
  json j{{"episodes", result.metrics.size()},
         {"best_eval_cost", result.best_eval_cost},
         {"last_final_cost", last_cost},
         {"out", rc.out_dir}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_eval(RunConfig& rc) {
  const NetworkCase c = load_case_checked(rc);
  if (rc.checkpoint_path.empty()) throw ValidationError("--checkpoint is required");
  if (rc.suite_path.empty()) throw ValidationError("--suite is required");
  const PolicyParams params = load_policy_checkpoint(rc.checkpoint_path, rc.ppo.gnn);
  std::vector<SuiteRowSpec> rows;
  try {
    rows = suite_from_json(json::parse(slurp(rc.suite_path)));
  } catch (const json::exception& e) {
    throw ParseError(std::string("suite: ") + e.what());
  }

  EvalOptions opt;
  opt.rollouts = rc.rollouts;
  opt.horizon = rc.ppo.horizon;
  opt.env = rc.ppo.env;

  write_manifest("eval", rc);

  RolloutTraceFn trace;
  std::ofstream trace_file;
  if (!rc.trace_path.empty()) {
    const auto parent = std::filesystem::path(rc.trace_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    trace_file.open(rc.trace_path, std::ios::binary);
    if (!trace_file) throw Error("cannot open trace file: " + rc.trace_path);
    trace = [&trace_file](const std::string& name, const std::vector<RolloutResult>& rs) {
      for (std::size_t i = 0; i < rs.size(); ++i) {
        trace_file << json{{"test_name", name},
                           {"rollout", i},
                           {"cost", rs[i].cost},
                           {"feasible", rs[i].feasible}}
                          .dump()
                   << "\n";
      }
    };
  }

  const auto suite = run_suite(params, c, rows, opt, rc.seed, trace);
  const std::string csv = suite_to_csv(suite);
  write_text(out_file(rc, "eval.csv"), csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;

  // The config file is applied before the regular parse so that flags win:
  // defaults < --config file < GRIDFLOW_SEED < flags.
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      if (arg == "--config" && i + 1 < argc) {
        apply_config_file(rc, argv[i + 1]);
      } else if (arg.rfind("--config=", 0) == 0) {
        apply_config_file(rc, arg.substr(9));
      }
    }
  } catch (const Error& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"gridflow: AC power flow, DC-OPF, and graph-RL dispatch tools"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::string config_path;  // consumed above; registered so parsing accepts it
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "JSON config file or run manifest (flags take precedence)");
    cmd->add_option("--case", rc.case_path, "network case JSON file");
    cmd->add_option("--out", rc.out_dir, "output directory for files and run_manifest.json");
    cmd->add_option("--seed", rc.seed, "root RNG seed")->envname("GRIDFLOW_SEED");
    cmd->add_option("--workers", rc.workers,
                    "worker count (1 = deterministic; >1 reserved, currently identical)")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* pf = app.add_subcommand("pf", "solve an AC power flow");
  add_common(pf);
  pf->add_option("--dispatch", rc.dispatch,
                 "'reset' (20% of range), inline JSON array of MW, or a path to one");
  pf->add_option("--pf-tolerance", rc.ppo.env.pf.tolerance, "mismatch tolerance, p.u.");
  pf->add_option("--pf-max-iterations", rc.ppo.env.pf.max_iterations,
                 "Newton iteration cap");
  pf->add_flag("--q-limits", rc.ppo.env.pf.enforce_q_limits,
               "enforce generator reactive limits (PV->PQ switching)");

  CLI::App* dcopf = app.add_subcommand("dcopf", "solve the DC optimal power flow");
  add_common(dcopf);
  dcopf->add_option("--segments", rc.segments, "piecewise segments per cost curve")
      ->check(CLI::PositiveNumber);
  dcopf->add_option("--dc-eval", rc.dc_eval, "re-pricing mode: lp, quad, or ac")
      ->check(CLI::IsMember({"lp", "quad", "ac"}));

  CLI::App* oracle = app.add_subcommand("oracle", "reference ACOPF minimum by multi-start descent");
  add_common(oracle);
  oracle->add_option("--starts", rc.starts, "number of descent starts")
      ->check(CLI::PositiveNumber);

  CLI::App* perturb = app.add_subcommand("perturb", "write a perturbed copy of a case");
  add_common(perturb);
  perturb->add_option("--family", rc.family,
                      "perturbation family: scale_loads, remove_loads, remove_branches");
  perturb->add_option("--lower", rc.lower, "scale_loads: max fractional decrease");
  perturb->add_option("--upper", rc.upper, "scale_loads: max fractional increase");
  perturb->add_option("--n", rc.n, "remove_loads/remove_branches: how many to drop");

  CLI::App* train_cmd = app.add_subcommand("train", "PPO training on a case");
  add_common(train_cmd);
  train_cmd->add_option("--episodes", rc.ppo.episodes, "training episodes");
  train_cmd->add_option("--horizon", rc.ppo.horizon, "steps per episode (T)");
  train_cmd->add_option("--minibatch", rc.ppo.minibatch, "minibatch size");
  train_cmd->add_option("--epochs", rc.ppo.epochs, "update epochs per episode");
  train_cmd->add_option("--gamma", rc.ppo.gamma, "discount factor");
  train_cmd->add_option("--lambda", rc.ppo.lambda, "GAE parameter");
  train_cmd->add_option("--epsilon", rc.ppo.epsilon, "PPO clip width");
  train_cmd->add_option("--k1", rc.ppo.k1, "value loss coefficient");
  train_cmd->add_option("--k2", rc.ppo.k2, "entropy coefficient");
  train_cmd->add_option("--lr", rc.ppo.lr, "Adam learning rate");
  train_cmd->add_option("--eval-every", rc.ppo.eval_every,
                        "episodes between best-checkpoint evaluations (0 = off)");
  train_cmd->add_option("--eval-rollouts", rc.ppo.eval_rollouts,
                        "rollouts per best-checkpoint evaluation");
  train_cmd->add_option("--checkpoint-every", rc.ppo.checkpoint_every,
                        "episodes between periodic checkpoints (0 = off)");
  train_cmd->add_option("--normalize-advantages", rc.ppo.normalize_advantages,
                        "per-episode advantage normalization");
  train_cmd->add_option("--embed-dim", rc.ppo.gnn.embed_dim, "node embedding width (d)");
  train_cmd->add_option("--iterations", rc.ppo.gnn.iterations, "message-passing rounds (k)");
  train_cmd->add_option("--message-hidden", rc.ppo.gnn.message_hidden,
                        "message MLP hidden width");
  train_cmd->add_option("--update-hidden", rc.ppo.gnn.update_hidden,
                        "update MLP hidden width");
  train_cmd->add_option("--readout-hidden", rc.ppo.gnn.readout_hidden,
                        "readout MLP hidden width");
  train_cmd->add_option("--portions", rc.ppo.env.portions,
                        "generator range portions per raise action (N)");

  CLI::App* eval_cmd = app.add_subcommand("eval", "run an evaluation suite on a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", rc.checkpoint_path, "policy checkpoint JSON");
  eval_cmd->add_option("--suite", rc.suite_path, "suite spec JSON");
  eval_cmd->add_option("--rollouts", rc.rollouts, "rollouts per suite row");
  eval_cmd->add_option("--horizon", rc.ppo.horizon, "steps per rollout (T)");
  eval_cmd->add_option("--trace", rc.trace_path, "per-rollout JSON-lines trace file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (pf->parsed()) return run_pf(rc);
    if (dcopf->parsed()) return run_dcopf(rc);
    if (oracle->parsed()) return run_oracle(rc);
    if (perturb->parsed()) return run_perturb(rc);
    if (train_cmd->parsed()) return run_train(rc);
    if (eval_cmd->parsed()) return run_eval(rc);
  } catch (const ValidationError& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 1;
  } catch (const PreconditionError& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 1;
  } catch (const IndexError& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "gridflow: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
