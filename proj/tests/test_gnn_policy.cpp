#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gridflow/checkpoint.hpp"
#include "gridflow/gnn_policy.hpp"
#include "helpers/reference_nets.hpp"

using namespace gridflow;
using testutil::Vec;

namespace {

GraphState two_node_graph() {
  GraphState g;
  g.node_features.push_back(Tensor::vec({0.5, 0.1, 0.3, 0.2}));
  g.node_features.push_back(Tensor::vec({0.8, 0.6, 0.4, 0.9}));
  g.edges.emplace_back(0, 1);
  g.edge_features.push_back(Tensor::vec({0.25, 0.75}));
  g.generator_nodes = {0, 1};
  return g;
}

}  // namespace

TEST_CASE("init_embeddings zero-pads node features to the embedding width") {
  GnnConfig cfg;
  GraphState g = two_node_graph();
  NodeEmbeddings h = init_embeddings(cfg, g);

  REQUIRE(h.h.size() == 2);
  REQUIRE(h.h[0].size() == 16);
  REQUIRE(h.h[0][0] == 0.5);
  REQUIRE(h.h[0][1] == 0.1);
  REQUIRE(h.h[0][2] == 0.3);
  REQUIRE(h.h[0][3] == 0.2);
  for (std::size_t i = 4; i < 16; ++i) REQUIRE(h.h[0][i] == 0.0);
  REQUIRE(h.step == 0);

  SECTION("all-zero features give a zero embedding") {
    g.node_features[0] = Tensor({4});
    NodeEmbeddings z = init_embeddings(cfg, g);
    for (double v : z.h[0].data) REQUIRE(v == 0.0);
  }
  SECTION("equal features give equal embeddings") {
    g.node_features[1] = g.node_features[0];
    NodeEmbeddings e = init_embeddings(cfg, g);
    REQUIRE(e.h[0] == e.h[1]);
  }
  SECTION("features wider than the embedding raise") {
    g.node_features[0] = Tensor({17});
    REQUIRE_THROWS_AS(init_embeddings(cfg, g), ShapeError);
  }
}

TEST_CASE("graph validation rejects malformed inputs") {
  GraphState g = two_node_graph();

  SECTION("edge endpoint out of range") {
    g.edges[0].second = 5;
    REQUIRE_THROWS_AS(validate_graph(g), GraphError);
  }
  SECTION("generator node out of range") {
    g.generator_nodes.push_back(9);
    REQUIRE_THROWS_AS(validate_graph(g), GraphError);
  }
  SECTION("inconsistent node feature widths") {
    g.node_features[1] = Tensor({3});
    REQUIRE_THROWS_AS(validate_graph(g), ShapeError);
  }
  SECTION("edge feature list length mismatch") {
    g.edge_features.clear();
    REQUIRE_THROWS_AS(validate_graph(g), ShapeError);
  }
}

TEST_CASE("k=0 message passing is the identity") {
  Rng rng(5);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);
  GraphState g = two_node_graph();
  NodeEmbeddings h0 = init_embeddings(cfg, g);
  NodeEmbeddings h = message_pass(h0, g, p.actor_message, p.actor_update, cfg, 0);
  REQUIRE(h.h == h0.h);
  REQUIRE(h.step == 0);
}

TEST_CASE("message passing matches the scripted oracle") {
  Rng rng(91);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);

  SECTION("two-node graph, one iteration") {
    GraphState g = two_node_graph();
    NodeEmbeddings h = message_pass(init_embeddings(cfg, g), g, p.actor_message,
                                    p.actor_update, cfg, 1);
    auto want = testutil::ref_message_pass(g, testutil::ref_init(g, 16), p.actor_message,
                                           p.actor_update, 16, 1);
    REQUIRE(h.step == 1);
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t i = 0; i < 16; ++i)
        REQUIRE(h.h[v][i] == Catch::Approx(want[v][i]).margin(1e-12));
  }

  SECTION("random 6-node graphs, four iterations") {
    for (unsigned long seed : {1UL, 2UL, 3UL}) {
      Rng gr(seed);
      GraphState g = testutil::random_graph(6, gr);
      NodeEmbeddings h = message_pass(init_embeddings(cfg, g), g, p.critic_message,
                                      p.critic_update, cfg, 4);
      auto want = testutil::ref_message_pass(g, testutil::ref_init(g, 16), p.critic_message,
                                             p.critic_update, 16, 4);
      for (std::size_t v = 0; v < 6; ++v)
        for (std::size_t i = 0; i < 16; ++i)
          REQUIRE(h.h[v][i] == Catch::Approx(want[v][i]).margin(1e-12));
    }
  }

  SECTION("isolated node aggregates the zero vector") {
    GraphState g = two_node_graph();
    g.node_features.push_back(Tensor::vec({0.2, 0.2, 0.2, 0.2}));  // node 2, no edges
    NodeEmbeddings h = message_pass(init_embeddings(cfg, g), g, p.actor_message,
                                    p.actor_update, cfg, 1);
    // update_mlp(h_2, 0) computed directly.
    Vec in = testutil::pad_to(g.node_features[2], 16);
    in.resize(16 + 48, 0.0);
    Vec want = testutil::ref_mlp(p.actor_update, in);
    for (std::size_t i = 0; i < 16; ++i)
      REQUIRE(h.h[2][i] == Catch::Approx(want[i]).margin(1e-12));
  }
}

TEST_CASE("hand-computed single-layer message pass on a 2-node line") {
  // Tiny dimensions so the whole computation fits on paper. d=1, edge dim 1,
  // single-layer identity MLPs:
  //   message([hv, hu, e]) = 1*hv + 2*hu + 3*e + 0.5
  //   update([hv, M]) = hv + M_min - M_max + 2*M_mean + 0.25
  GnnConfig cfg;
  cfg.embed_dim = 1;
  cfg.edge_dim = 1;

  MlpParams msg;
  msg.w.push_back(Tensor({1, 3}, {1.0, 2.0, 3.0}));
  msg.b.push_back(Tensor::vec({0.5}));
  msg.act.push_back(Act::identity);

  MlpParams upd;
  upd.w.push_back(Tensor({1, 4}, {1.0, 1.0, -1.0, 2.0}));
  upd.b.push_back(Tensor::vec({0.25}));
  upd.act.push_back(Act::identity);

  GraphState g;
  g.node_features.push_back(Tensor::vec({0.4}));
  g.node_features.push_back(Tensor::vec({0.7}));
  g.edges.emplace_back(0, 1);
  g.edge_features.push_back(Tensor::vec({0.1}));

  NodeEmbeddings h = message_pass(init_embeddings(cfg, g), g, msg, upd, cfg, 1);

  // Node 0: one incoming message m = 1*0.4 + 2*0.7 + 3*0.1 + 0.5 = 2.6.
  // min = max = mean = 2.6, update = 0.4 + 2.6 - 2.6 + 2*2.6 + 0.25 = 5.85.
  REQUIRE(h.h[0][0] == Catch::Approx(5.85).margin(1e-12));
  // Node 1: m = 1*0.7 + 2*0.4 + 3*0.1 + 0.5 = 2.3,
  // update = 0.7 + 2.3 - 2.3 + 2*2.3 + 0.25 = 5.55.
  REQUIRE(h.h[1][0] == Catch::Approx(5.55).margin(1e-12));
}

TEST_CASE("actor logits follow the per-generator readout") {
  Rng rng(12);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);

  SECTION("fixture matches the scripted oracle and softmax sums to one") {
    Rng gr(77);
    GraphState g = testutil::random_graph(5, gr);
    g.generator_nodes = {0, 2, 3, 4, 1};  // five generators
    Tensor logits = actor_logits(p, g);
    Vec want = testutil::ref_actor_logits(p, g);
    REQUIRE(logits.size() == 5);
    for (std::size_t i = 0; i < 5; ++i)
      REQUIRE(logits[i] == Catch::Approx(want[i]).margin(1e-12));

    const auto probs = softmax(logits);
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
    const Vec want_p = testutil::ref_softmax(want);
    for (std::size_t i = 0; i < 5; ++i)
      REQUIRE(probs[i] == Catch::Approx(want_p[i]).margin(1e-12));
  }

  SECTION("mirror-symmetric generator buses get identical logits") {
    GraphState g;
    g.node_features.push_back(Tensor::vec({0.5, 0.1, 0.3, 0.2}));
    g.node_features.push_back(Tensor::vec({0.5, 0.1, 0.3, 0.2}));
    g.edges.emplace_back(0, 1);
    g.edge_features.push_back(Tensor::vec({0.25, 0.75}));
    g.generator_nodes = {0, 1};
    Tensor logits = actor_logits(p, g);
    REQUIRE(logits[0] == Catch::Approx(logits[1]).margin(1e-12));
    const auto probs = softmax(logits);
    REQUIRE(probs[0] == Catch::Approx(0.5).margin(1e-12));
  }

  SECTION("zero readout weights give the uniform distribution") {
    PolicyParams z = p;
    z.actor_readout = zeros_like(z.actor_readout);
    Rng gr(78);
    GraphState g = testutil::random_graph(6, gr);
    g.generator_nodes = {1, 3, 5};
    const auto probs = softmax(actor_logits(z, g));
    for (double pi : probs) REQUIRE(pi == Catch::Approx(1.0 / 3.0).margin(1e-12));
  }

  SECTION("no generator nodes is a precondition error") {
    GraphState g = two_node_graph();
    g.generator_nodes.clear();
    Tape tape;
    PolicyVars vars = lift_policy(tape, p);
    REQUIRE_THROWS_AS(taped_actor_logits(tape, vars, p, g), PreconditionError);
  }
}

TEST_CASE("critic value pools sum, min, and max over node embeddings") {
  Rng rng(13);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);

  SECTION("fixture matches the scripted oracle") {
    Rng gr(99);
    GraphState g = testutil::random_graph(7, gr);
    REQUIRE(critic_value(p, g) ==
            Catch::Approx(testutil::ref_critic_value(p, g)).margin(1e-12));
  }

  SECTION("zero parameters everywhere give value zero") {
    PolicyParams z = zeros_like(p);
    z.cfg = cfg;
    Rng gr(100);
    GraphState g = testutil::random_graph(4, gr);
    REQUIRE(critic_value(z, g) == 0.0);
  }
}

TEST_CASE("permutation equivariance on random 6-node graphs") {
  Rng rng(21);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);

  for (unsigned long seed : {11UL, 22UL, 33UL}) {
    Rng gr(seed);
    GraphState g = testutil::random_graph(6, gr);
    g.generator_nodes = {0, 2, 4};

    // Random relabeling of nodes.
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    Rng pr(seed + 1000);
    pr.shuffle(perm);

    GraphState pg;
    pg.node_features.resize(6);
    for (std::size_t v = 0; v < 6; ++v) pg.node_features[perm[v]] = g.node_features[v];
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      pg.edges.emplace_back(perm[g.edges[e].first], perm[g.edges[e].second]);
      pg.edge_features.push_back(g.edge_features[e]);
    }
    for (std::size_t gn : g.generator_nodes) pg.generator_nodes.push_back(perm[gn]);

    Tensor a = actor_logits(p, g);
    Tensor b = actor_logits(p, pg);
    for (std::size_t i = 0; i < a.size(); ++i)
      REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-9));

    REQUIRE(critic_value(p, g) == Catch::Approx(critic_value(p, pg)).margin(1e-9));
  }
}

TEST_CASE("one parameter set evaluates across graph sizes") {
  Rng rng(31);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);

  for (std::size_t n : {2UL, 6UL, 15UL, 30UL}) {
    Rng gr(n);
    GraphState g = testutil::random_graph(n, gr);
    Tensor logits = actor_logits(p, g);
    REQUIRE(logits.size() == g.generator_nodes.size());
    logits.assert_finite();
    const double v = critic_value(p, g);
    REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("information propagates exactly k hops on a path graph") {
  Rng rng(41);
  GnnConfig cfg;  // iterations = 4
  PolicyParams p = make_policy(cfg, rng);

  GraphState g;
  for (int i = 0; i < 6; ++i) {
    Tensor f({4});
    f[0] = 0.1 * (i + 1);
    f[1] = 0.5;
    f[2] = 0.3;
    f[3] = 0.7;
    g.node_features.push_back(std::move(f));
  }
  for (std::size_t i = 0; i + 1 < 6; ++i) {
    g.edges.emplace_back(i, i + 1);
    g.edge_features.push_back(Tensor::vec({0.4, 0.6}));
  }
  g.generator_nodes = {4, 5};  // distances 4 and 5 from node 0

  Tensor base = actor_logits(p, g);
  g.node_features[0][0] = 0.95;  // perturb node 0
  Tensor bumped = actor_logits(p, g);

  REQUIRE(base[0] != bumped[0]);  // node 4 is within reach of k=4
  REQUIRE(base[1] == bumped[1]);  // node 5 is one hop too far
}

TEST_CASE("action sampling is categorical over softmax probabilities") {
  SECTION("extreme logits pick the dominant index") {
    Tensor logits = Tensor::vec({10.0, -10.0});
    const auto probs = softmax(logits);
    REQUIRE(probs[0] > 0.9999);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) REQUIRE(sample_action(logits, rng).index == 0);
  }

  SECTION("uniform logits sample uniformly within 3 sigma") {
    Tensor logits = Tensor::vec({0.3, 0.3, 0.3});
    Rng rng(7);
    const int n = 100000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) counts[sample_action(logits, rng).index]++;
    const double p = 1.0 / 3.0;
    const double sigma = std::sqrt(p * (1 - p) / n);
    for (int c : counts) {
      const double freq = static_cast<double>(c) / n;
      REQUIRE(std::abs(freq - p) < 3.0 * sigma);
    }
  }

  SECTION("returned log-prob is the log softmax at the sampled index") {
    Tensor logits = Tensor::vec({0.2, 1.4, -0.7, 0.9});
    const auto probs = softmax(logits);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      ActionSample s = sample_action(logits, rng);
      REQUIRE(s.log_prob == logits[s.index] - detail::logsumexp(logits));  // bitwise
      REQUIRE(s.log_prob == Catch::Approx(std::log(probs[s.index])).margin(1e-12));
    }
  }

  SECTION("sampling is deterministic per seed") {
    Tensor logits = Tensor::vec({0.1, 0.5, 0.2});
    Rng a(9), b(9);
    for (int i = 0; i < 20; ++i)
      REQUIRE(sample_action(logits, a).index == sample_action(logits, b).index);
  }

  SECTION("greedy mode takes the argmax, ties to the lowest index") {
    REQUIRE(greedy_action(Tensor::vec({0.1, 0.9, 0.3})).index == 1);
    REQUIRE(greedy_action(Tensor::vec({0.7, 0.7, 0.1})).index == 0);
  }
}

TEST_CASE("policy gradients pass a finite-difference check") {
  Rng rng(2025);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);
  Rng gr(55);
  GraphState g = testutil::random_graph(6, gr);
  g.generator_nodes = {1, 3, 5};
  const std::size_t action = 1;

  // loss = -log pi(action) + critic value; un-taped recomputation for the
  // finite-difference oracle.
  auto loss_value = [&]() {
    const Vec z = testutil::ref_actor_logits(p, g);
    const Vec probs = testutil::ref_softmax(z);
    return -std::log(probs[action]) + testutil::ref_critic_value(p, g);
  };

  PolicyParams grads = zeros_like(p);
  {
    Tape tape;
    PolicyVars vars = lift_policy(tape, p);
    Var logits = taped_actor_logits(tape, vars, p, g);
    Var lp = tape.log_softmax_pick(logits, action);
    Var v = taped_critic_value(tape, vars, p, g);
    Var loss = tape.add(tape.affine_const(lp, -1.0, 0.0), v);
    tape.backward(loss);
    accumulate_policy_grads(tape, vars, grads);
  }

  std::vector<Tensor*> params;
  std::vector<const Tensor*> analytic;
  auto pm = detail::policy_mlps(p);
  auto gm = detail::policy_mlps(grads);
  for (std::size_t k = 0; k < pm.size(); ++k) {
    for (std::size_t l = 0; l < pm[k]->w.size(); ++l) {
      params.push_back(&pm[k]->w[l]);
      analytic.push_back(&gm[k]->w[l]);
      params.push_back(&pm[k]->b[l]);
      analytic.push_back(&gm[k]->b[l]);
    }
  }

  Rng pickr(8);
  REQUIRE(finite_diff_check(params, analytic, loss_value, 100, pickr) < 1e-4);
}

TEST_CASE("policy parameters survive a checkpoint round trip bit for bit") {
  Rng rng(61);
  GnnConfig cfg;
  PolicyParams p = make_policy(cfg, rng);

  const auto named = policy_to_named(p);
  REQUIRE(named.size() == 2 * (2 + 3 + 3 + 2 + 3 + 3));  // w+b per layer

  const nlohmann::json j = checkpoint_to_json(named);
  PolicyParams back = policy_from_named(cfg, checkpoint_from_json(j));

  auto pa = detail::policy_mlps(p);
  auto pb = detail::policy_mlps(back);
  for (std::size_t k = 0; k < pa.size(); ++k) {
    REQUIRE(pa[k]->w == pb[k]->w);
    REQUIRE(pa[k]->b == pb[k]->b);
  }

  Rng gr(42);
  GraphState g = testutil::random_graph(5, gr);
  REQUIRE(actor_logits(p, g).data == actor_logits(back, g).data);
  REQUIRE(critic_value(p, g) == critic_value(back, g));

  SECTION("missing tensors raise ParseError") {
    auto broken = named;
    broken.erase("actor.message.w0");
    REQUIRE_THROWS_AS(policy_from_named(cfg, broken), ParseError);
  }
  SECTION("shape mismatches raise ShapeError") {
    auto broken = named;
    broken.at("actor.readout.b0") = Tensor({7});
    REQUIRE_THROWS_AS(policy_from_named(cfg, broken), ShapeError);
  }
}

TEST_CASE("policy construction is deterministic and correctly shaped") {
  GnnConfig cfg;
  Rng a(7), b(7), c(8);
  PolicyParams pa = make_policy(cfg, a);
  PolicyParams pb = make_policy(cfg, b);
  PolicyParams pc = make_policy(cfg, c);

  REQUIRE(pa.actor_message.w[0].shape == std::vector<std::size_t>{32, 34});
  REQUIRE(pa.actor_message.w[1].shape == std::vector<std::size_t>{16, 32});
  REQUIRE(pa.actor_update.w[0].shape == std::vector<std::size_t>{32, 64});
  REQUIRE(pa.actor_update.w[2].shape == std::vector<std::size_t>{16, 32});
  REQUIRE(pa.actor_readout.w[0].shape == std::vector<std::size_t>{32, 16});
  REQUIRE(pa.actor_readout.w[2].shape == std::vector<std::size_t>{1, 32});
  REQUIRE(pa.critic_readout.w[0].shape == std::vector<std::size_t>{32, 48});

  REQUIRE(pa.actor_message.w[0] == pb.actor_message.w[0]);
  REQUIRE(pa.critic_readout.b[2] == pb.critic_readout.b[2]);
  REQUIRE(pa.actor_message.w[0] != pc.actor_message.w[0]);
  // Actor and critic stacks are independently initialized.
  REQUIRE(pa.actor_message.w[0] != pa.critic_message.w[0]);
}
