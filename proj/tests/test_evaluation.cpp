#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridflow/evaluation.hpp"
#include "gridflow/rng.hpp"
#include "helpers/test_cases.hpp"

using namespace gridflow;

namespace {

std::vector<RolloutResult> make_rollouts(const std::vector<double>& costs,
                                         const std::vector<bool>& flags) {
  std::vector<RolloutResult> out(costs.size());
  for (std::size_t i = 0; i < costs.size(); ++i) {
    out[i].cost = costs[i];
    out[i].feasible = flags[i];
  }
  return out;
}

PolicyParams fresh_policy(std::uint64_t seed) {
  Rng rng(seed);
  return make_policy(GnnConfig{}, rng);
}

}  // namespace

TEST_CASE("rollouts are reproducible per seed") {
  const NetworkCase c = testutil::load("bandit.case.json");
  const PolicyParams params = fresh_policy(5);
  EvalOptions opt;
  opt.rollouts = 1;
  opt.horizon = 6;

  const auto one = evaluate_policy(params, c, opt, 31);
  const auto same = evaluate_policy(params, c, opt, 31);
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].cost == same[0].cost);
  REQUIRE(one[0].feasible == same[0].feasible);

  SECTION("a hundred rollouts give an identical cost vector across runs") {
    opt.rollouts = 100;
    opt.horizon = 4;
    const auto a = evaluate_policy(params, c, opt, 9);
    const auto b = evaluate_policy(params, c, opt, 9);
    REQUIRE(a.size() == 100);
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].cost == b[i].cost);
      REQUIRE(a[i].feasible == b[i].feasible);
    }
    const auto other = evaluate_policy(params, c, opt, 10);
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i)
      identical = identical && a[i].cost == other[i].cost;
    REQUIRE_FALSE(identical);
  }
}

TEST_CASE("a policy stuck on a topped-out generator keeps the reset cost") {
  NetworkCase c = testutil::load("case3.case.json");
  c.generators[1].pmin = 16.0;  // pmin = pmax: the only action is a no-op
  c.generators[1].pmax = 16.0;
  const EnvState reset = env_reset(c);
  REQUIRE(reset.feasible);

  RolloutActor first = [](const GraphState&, Rng&) { return std::size_t{0}; };
  EvalOptions opt;
  opt.rollouts = 10;
  opt.horizon = 12;
  const auto rollouts = evaluate_policy_with(first, c, opt, 1);
  for (const auto& r : rollouts) {
    REQUIRE(r.feasible);
    REQUIRE(r.cost == reset.cost);
  }
}

TEST_CASE("summarize computes best-10 deviation and convergence ratio") {
  SECTION("costs equal to the reference give zero deviation") {
    const auto rolls = make_rollouts(std::vector<double>(12, 500.0),
                                     std::vector<bool>(12, true));
    const EvalReport rep = summarize(rolls, 500.0);
    REQUIRE(rep.drl_deviation_pct == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(rep.best10_mean_cost == Catch::Approx(500.0).margin(1e-12));
    REQUIRE(rep.convergence_ratio == 1.0);
    REQUIRE(rep.n_rollouts == 12);
    REQUIRE(rep.reference_cost == 500.0);
  }

  SECTION("uniform 1% premium reads as exactly one percent") {
    const double ref = 873.25;
    const auto rolls = make_rollouts(std::vector<double>(10, 1.01 * ref),
                                     std::vector<bool>(10, true));
    REQUIRE(summarize(rolls, ref).drl_deviation_pct == Catch::Approx(1.0).margin(1e-9));
  }

  SECTION("best 10 means the ten lowest feasible costs") {
    // 15 rollouts, 12 feasible; the infeasible ones carry low costs that
    // must not be counted.
    std::vector<double> costs = {101, 102, 103, 104, 105, 106, 107, 108,
                                 109, 110, 200, 300, 1,   2,   3};
    std::vector<bool> flags(15, true);
    flags[12] = flags[13] = flags[14] = false;
    const EvalReport rep = summarize(make_rollouts(costs, flags), 100.0);
    REQUIRE(rep.best10_mean_cost == Catch::Approx(105.5).margin(1e-12));
    REQUIRE(rep.drl_deviation_pct == Catch::Approx(5.5).margin(1e-12));
    REQUIRE(rep.convergence_ratio == Catch::Approx(12.0 / 15.0).margin(1e-15));
  }

  SECTION("scale equivariance: deviation is unit-free") {
    Rng rng(77);
    std::vector<double> costs(14);
    for (auto& x : costs) x = 400.0 + rng.uniform() * 100.0;
    const double ref = 395.0;
    const double base = summarize(make_rollouts(costs, std::vector<bool>(14, true)), ref)
                            .drl_deviation_pct;
    for (double scale : {0.001, 3.0, 1e6}) {
      std::vector<double> scaled = costs;
      for (auto& x : scaled) x *= scale;
      const double dev =
          summarize(make_rollouts(scaled, std::vector<bool>(14, true)), ref * scale)
              .drl_deviation_pct;
      REQUIRE(dev == Catch::Approx(base).margin(1e-9));
    }
  }

  SECTION("fewer than 10 feasible rollouts is insufficient") {
    std::vector<bool> flags(12, true);
    flags[0] = flags[1] = flags[2] = false;  // 9 feasible
    REQUIRE_THROWS_AS(summarize(make_rollouts(std::vector<double>(12, 1.0), flags), 1.0),
                      InsufficientFeasibleError);
  }

  SECTION("fewer than 10 rollouts violates the precondition") {
    REQUIRE_THROWS_AS(summarize(make_rollouts(std::vector<double>(9, 1.0),
                                              std::vector<bool>(9, true)),
                                1.0),
                      PreconditionError);
  }
}

TEST_CASE("reference oracle reproduces the merit-order optimum on one bus") {
  // Hand solution: the 10 $/MWh slack unit is capped at 100 MW, so the
  // 30 $/MWh unit must carry the remaining 20 MW of the 120 MW load:
  // 10*100 + 30*20 = 1600 $/h. A single bus has no losses, so LP = AC.
  const NetworkCase c = testutil::load("onebus.case.json");
  const AcopfResult r = acopf_reference(c);
  REQUIRE(r.cost == Catch::Approx(1600.0).epsilon(1e-4));
  REQUIRE(r.dispatch.size() == 1);
  REQUIRE(r.dispatch[0] == Catch::Approx(20.0).margin(0.05));
  REQUIRE(r.feasible_starts == 20);
}

TEST_CASE("a single-generator case is priced at its unique balancing point") {
  NetworkCase c = testutil::load("onebus.case.json");
  c.generators.pop_back();  // only the slack unit remains
  c.loads[0].p = 80.0;
  const AcopfResult r = acopf_reference(c);
  REQUIRE(r.dispatch.empty());
  // No losses on one bus: the slack carries the 80 MW load at 10 $/MWh.
  REQUIRE(r.cost == Catch::Approx(800.0).margin(1e-6));
}

TEST_CASE("an unservable load leaves no feasible point") {
  NetworkCase c = testutil::load("onebus.case.json");
  c.generators.pop_back();  // slack pmax 100 < load 120
  REQUIRE_THROWS_AS(acopf_reference(c), NoFeasiblePointError);
}

TEST_CASE("oracle dominance over the dc-opf comparison cost") {
  for (const std::string name : {"onebus.case.json", "bandit.case.json",
                                 "ieee30.case.json"}) {
    const NetworkCase c = testutil::load(name);
    const AcopfResult ref = acopf_reference(c);
    const DispatchSolution dc = solve_dcopf(c);
    const double dc_cost = dc_eval_cost(c, dc, DcEvalMode::ac).cost;
    INFO(name << ": oracle " << ref.cost << " vs dc " << dc_cost);
    REQUIRE(ref.cost <= dc_cost * 1.005);
  }
}

TEST_CASE("oracle is deterministic") {
  const NetworkCase c = testutil::load("bandit.case.json");
  const AcopfResult a = acopf_reference(c);
  const AcopfResult b = acopf_reference(c);
  REQUIRE(a.cost == b.cost);
  REQUIRE(a.dispatch == b.dispatch);
}

TEST_CASE("suite specs parse from json") {
  const auto j = nlohmann::json::parse(R"([
    {"name": "load_inf0.1_sup0.1", "family": "scale_loads",
     "params": {"lower": 0.1, "upper": 0.1}, "seed": 3},
    {"name": "edge_1", "family": "remove_branches", "params": {"n": 1}}
  ])");
  const auto rows = suite_from_json(j);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].name == "load_inf0.1_sup0.1");
  REQUIRE(rows[0].family == "scale_loads");
  REQUIRE(rows[0].params.at("upper") == 0.1);
  REQUIRE(rows[0].seed == 3);
  REQUIRE(rows[1].seed == 0);  // defaulted

  REQUIRE_THROWS_AS(suite_from_json(nlohmann::json::object()), ParseError);
  REQUIRE_THROWS_AS(suite_from_json(nlohmann::json::parse(R"([{"name": "x"}])")),
                    ParseError);
}

TEST_CASE("perturbation families map onto the grid model") {
  const NetworkCase base = testutil::load("ieee30.case.json");

  SuiteRowSpec row;
  row.name = "r";
  row.family = "scale_loads";
  row.params = {{"lower", 0.1}, {"upper", 0.2}};
  row.seed = 5;
  const NetworkCase scaled = apply_perturbation(base, row);
  REQUIRE(scaled.loads.size() == base.loads.size());
  bool changed = false;
  for (std::size_t i = 0; i < base.loads.size(); ++i) {
    REQUIRE(scaled.loads[i].p >= 0.9 * base.loads[i].p - 1e-9);
    REQUIRE(scaled.loads[i].p <= 1.2 * base.loads[i].p + 1e-9);
    changed = changed || scaled.loads[i].p != base.loads[i].p;
  }
  REQUIRE(changed);

  row.family = "remove_loads";
  row.params = {{"n", 2}};
  REQUIRE(apply_perturbation(base, row).loads.size() == base.loads.size() - 2);

  row.family = "remove_branches";
  row.params = {{"n", 1}};
  REQUIRE(apply_perturbation(base, row).branches.size() == base.branches.size() - 1);

  row.family = "rewire";
  REQUIRE_THROWS_AS(apply_perturbation(base, row), ParseError);

  row.family = "scale_loads";
  row.params = {{"lower", 0.1}};  // upper missing
  REQUIRE_THROWS_AS(apply_perturbation(base, row), ParseError);
}

TEST_CASE("suites evaluate row by row and survive failures") {
  const NetworkCase base = testutil::load("bandit.case.json");
  const PolicyParams params = fresh_policy(3);
  EvalOptions opt;
  opt.rollouts = 12;
  opt.horizon = 6;

  std::vector<SuiteRowSpec> rows(3);
  rows[0].name = "load_inf0.1_sup0.1";
  rows[0].family = "scale_loads";
  rows[0].params = {{"lower", 0.1}, {"upper", 0.1}};
  rows[0].seed = 3;
  rows[1].name = "bad_remove";
  rows[1].family = "remove_loads";
  rows[1].params = {{"n", 5}};  // the case has one load
  rows[2].name = "no_load";
  rows[2].family = "remove_loads";
  rows[2].params = {{"n", 1}};  // nothing to serve: reset is never feasible

  const auto suite = run_suite(params, base, rows, opt, 17);
  REQUIRE(suite.size() == 3);

  SECTION("the healthy row carries a full report") {
    const SuiteRow& r = suite[0];
    REQUIRE(r.status == "ok");
    REQUIRE(r.report.test_name == "load_inf0.1_sup0.1");
    REQUIRE(r.report.n_rollouts == 12);
    REQUIRE(r.report.convergence_ratio == 1.0);
    REQUIRE(std::isfinite(r.report.best10_mean_cost));
    // Oracle dominance with its stated slack, agent side.
    REQUIRE(r.report.reference_cost <= r.report.best10_mean_cost * 1.005);
    REQUIRE(r.report.dcopf_deviation_pct >= -0.5);
    REQUIRE(r.report.ratio ==
            r.report.dcopf_deviation_pct / r.report.drl_deviation_pct);
  }

  SECTION("failed rows record their error and do not stop the suite") {
    REQUIRE(suite[1].status != "ok");
    REQUIRE(suite[1].status.find("remove_loads") != std::string::npos);
    REQUIRE(suite[2].status != "ok");
    REQUIRE(std::isnan(suite[1].report.best10_mean_cost));
  }

  SECTION("the suite is deterministic") {
    const auto again = run_suite(params, base, rows, opt, 17);
    REQUIRE(suite_to_csv(again) == suite_to_csv(suite));
    const auto reseeded = run_suite(params, base, rows, opt, 18);
    REQUIRE(suite_to_csv(reseeded) != suite_to_csv(suite));
  }

  SECTION("csv has one line per row and the fixed column set") {
    const std::string csv = suite_to_csv(suite);
    REQUIRE(csv.rfind(eval_csv_header() + "\n", 0) == 0);
    std::size_t lines = 0;
    for (char ch : csv)
      if (ch == '\n') ++lines;
    REQUIRE(lines == 4);
    const std::string row0 = eval_csv_row(suite[0]);
    std::size_t commas = 0;
    for (char ch : row0)
      if (ch == ',') ++commas;
    REQUIRE(commas == 8);  // 9 columns
    REQUIRE(row0.find("load_inf0.1_sup0.1,") == 0);
    const std::string row1 = eval_csv_row(suite[1]);
    REQUIRE(row1.find(',') != std::string::npos);
    REQUIRE(row1.substr(row1.rfind(',') + 1).find("remove_loads") != std::string::npos);
  }

  SECTION("empty suites produce a header-only csv") {
    REQUIRE(suite_to_csv({}) == eval_csv_header() + "\n");
  }
}
