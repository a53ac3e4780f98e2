#include <gtest/gtest.h>

#include <random>

#include "enap/control.hpp"
#include "enap/pipeline.hpp"
#include "multiphase_check.hpp"
#include "gradcheck.hpp"

using namespace enap;

namespace {

Vec v2(double x, double y) { return (Vec(2) << x, y).finished(); }

// q0 with edges on c0 to q1 and q2, q1/q2 with their own signatures
Pmm fork(double p1, double p2, int n1 = 1, int n2 = 1) {
  Pmm pmm;
  pmm.alphabet_size = 3;
  pmm.action_dim = 2;
  for (int i = 0; i < 3; ++i) {
    Vec c = Vec::Zero(3);
    c[i] = 1;
    pmm.states.push_back({StateId(i), c, {}, i == 0});
  }
  pmm.edges.push_back({0, 0, 1, p1, v2(1, 0), n1});
  pmm.edges.push_back({0, 0, 2, p2, v2(3, 0), n2});
  pmm.edges.push_back({1, 1, 1, 1.0, v2(0, 1), 1});
  pmm.edges.push_back({2, 2, 2, 1.0, v2(0, -1), 1});
  pmm.refresh_nis();
  return pmm;
}

Codebook one_hot_codebook(int n) {
  Codebook cb;
  for (int i = 0; i < n; ++i) {
    Vec c = Vec::Zero(n);
    c[i] = 1;
    cb.centroids.push_back(c);
  }
  return cb;
}

PolicyBundle grid_bundle(const Dataset& ds) {
  MineConfig cfg;
  cfg.eps_err = 0.6;
  PolicyBundle b;
  b.pmm = mine(ds, make_exact_encoder(), cfg, 16).pmm;
  b.codebook = one_hot_codebook(16);
  b.encoder = FeatureEncoder::make_identity(16);
  b.residual = make_residual(16, 4, 1);
  b.state_embed = Mat::Zero(kStateEmbedDim, b.pmm.states.size());
  b.check();
  return b;
}

}  // namespace

TEST(Coarse, WeightedMean) {
  Pmm single = fork(1.0, 0.0);
  single.edges.erase(single.edges.begin() + 1);
  single.edges[0].action_mean = v2(2, 0);
  single.refresh_nis();
  EXPECT_EQ(coarse_action(single, 0, 0), v2(2, 0));
  EXPECT_EQ(coarse_action(fork(0.5, 0.5), 0, 0), v2(2, 0));
  Pmm w = fork(0.75, 0.25, 3, 1);
  w.edges[0].action_mean = v2(0, 0);
  w.edges[1].action_mean = v2(4, 0);
  EXPECT_EQ(coarse_action(w, 0, 0), v2(1, 0));
  EXPECT_THROW(coarse_action(w, 0, 2), Error);
}

TEST(NextState, SignatureThenProbability) {
  EXPECT_EQ(next_state(fork(0.7, 0.3), 0, 0, 2, 0.5), 2u);
  Pmm both = fork(0.7, 0.3);
  both.edges.push_back({2, 1, 2, 1.0, v2(0, 0), 1});
  both.edges.push_back({1, 2, 1, 1.0, v2(0, 0), 1});
  both.canonicalize();
  both.refresh_nis();
  EXPECT_EQ(next_state(both, 0, 0, 1, 0.5), 1u);
  EXPECT_EQ(next_state(fork(0.7, 0.3), 0, 0, 0, 0.5), 1u);
  EXPECT_EQ(next_state(fork(0.5, 0.5), 0, 0, 0, 0.5), 1u);  // tie to the lower id
  EXPECT_THROW(next_state(fork(0.7, 0.3), 1, 0, 0, 0.5), Error);
}

TEST(NextState, MatchAlwaysWinsProperty) {
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double p = u(rng), eps = 0.01 + 0.98 * u(rng);
    Pmm pmm = fork(p, 1 - p);
    const SymbolId want = trial % 2 ? 1 : 2;
    EXPECT_EQ(next_state(pmm, 0, 0, want, eps), want);
  }
}

TEST(Act, ResidualComposition) {
  PolicyBundle b;
  b.pmm = fork(0.5, 0.5);
  b.codebook = one_hot_codebook(3);
  b.encoder = FeatureEncoder::make_identity(3);
  b.residual = make_residual(3, 2, 0);
  b.state_embed = Mat::Random(kStateEmbedDim, 3);
  b.check();
  auto st = initial_controller(b);
  Vec obs = Vec::Zero(3);
  obs[0] = 1;
  auto r = act(b, st, obs);
  EXPECT_EQ(r.symbol, 0u);
  EXPECT_EQ(r.action, r.a_base);
  EXPECT_EQ(r.action, coarse_action(b.pmm, 0, 0));

  // residual-zero identity holds for every (q, c) with an edge
  for (const auto& e : b.pmm.edges) {
    ControllerState s = initial_controller(b);
    s.q = e.src;
    Vec o = Vec::Zero(3);
    o[e.input] = 1;
    EXPECT_EQ(act(b, s, o).action, coarse_action(b.pmm, e.src, e.input));
  }

  b.residual.b.back() = v2(0.1, -0.1);
  Pmm one = fork(1.0, 0.0);
  one.edges.erase(one.edges.begin() + 1);
  one.edges[0].action_mean = v2(1, 1);
  one.refresh_nis();
  b.pmm = one;
  b.state_embed = Mat::Zero(kStateEmbedDim, 3);
  auto st2 = initial_controller(b);
  auto r2 = act(b, st2, obs);
  EXPECT_NEAR(r2.action[0], 1.1, 1e-12);
  EXPECT_NEAR(r2.action[1], 0.9, 1e-12);
}

TEST(Episode, ZeroStepsAndOracleReplay) {
  auto b = grid_bundle(gridworld_demos());
  GridEpisode idle;
  auto tr0 = run_episode(idle, b, 0);
  EXPECT_TRUE(tr0.steps.empty());
  EXPECT_FALSE(tr0.success);

  GridEpisode env;
  auto tr = run_episode(env, b, 20);
  EXPECT_TRUE(tr.success);
  EXPECT_EQ(tr.fallbacks, 0);
  EXPECT_EQ(tr.steps.size(), 6u);
  EXPECT_EQ(tr.states.size(), tr.steps.size() + 1);
}

TEST(Episode, FallbackOnUnseenSymbol) {
  Dataset only_tau1 = gridworld_demos();
  only_tau1.trajectories.pop_back();
  auto b = grid_bundle(only_tau1);
  b.fallback = Fallback::HoldLast;
  GridEpisode env;
  env.env.cell = 1;  // never visited by the demos
  auto tr = run_episode(env, b, 5);
  EXPECT_EQ(tr.steps.size(), 5u);
  EXPECT_EQ(tr.fallbacks, 5);
  for (const auto& s : tr.steps) EXPECT_TRUE(s.fallback);

  b.fallback = Fallback::NearestState;
  GridEpisode env2;
  env2.env.cell = 1;
  auto tr2 = run_episode(env2, b, 5);
  EXPECT_GT(tr2.fallbacks, 0);
}

TEST(LeastPath, SmallestAndActionAware) {
  Pmm pmm = fork(0.5, 0.5);
  std::vector<SymbolId> syms{0};
  auto p = least_path(pmm, syms);
  ASSERT_TRUE(p);
  EXPECT_EQ(*p, (StatePath{0, 1}));
  std::vector<Vec> acts{v2(3, 0)};
  auto q = least_path(pmm, syms, &acts, 0.1);
  ASSERT_TRUE(q);
  EXPECT_EQ(*q, (StatePath{0, 2}));
  // the later symbol decides which branch can complete
  std::vector<SymbolId> s2{0, 2};
  EXPECT_EQ(*least_path(pmm, s2), (StatePath{0, 2, 2}));
  std::vector<SymbolId> bad{1};
  EXPECT_FALSE(least_path(pmm, bad));
}

namespace {

PolicyBundle tiny_bundle(std::uint64_t seed, bool mlp_encoder, bool l2) {
  std::mt19937_64 rng(seed);
  PolicyBundle b;
  b.pmm = fork(0.5, 0.5);
  b.pmm.edges[0].action_mean = nn::randn(2, 1, 1.0, rng).col(0);
  b.pmm.edges[2].action_mean = nn::randn(2, 1, 1.0, rng).col(0);
  const int F = 3;
  if (mlp_encoder) {
    b.encoder = FeatureEncoder::make_mlp({4, 5, F}, seed + 1);
    b.encoder.l2_normalize = l2;
  } else {
    b.encoder = FeatureEncoder::make_identity(F);
  }
  for (int i = 0; i < 3; ++i) b.codebook.centroids.push_back(nn::randn(F, 1, 1.0, rng).col(0));
  b.residual = nn::Mlp::create({kStateEmbedDim + F + 2, 6, 6, 2}, seed + 2);
  // nonzero biases keep pre-activations off the ReLU kink at exactly 0
  for (auto& bias : b.residual.b) bias = nn::randn(bias.size(), 1, 0.1, rng).col(0);
  if (mlp_encoder)
    for (auto& bias : b.encoder.net.b) bias = nn::randn(bias.size(), 1, 0.1, rng).col(0);
  b.state_embed = nn::randn(kStateEmbedDim, 3, 0.5, rng);
  b.check();
  return b;
}

std::vector<JointSample> tiny_batch(std::uint64_t seed, int in_dim) {
  std::mt19937_64 rng(seed + 100);
  std::vector<JointSample> batch;
  for (int i = 0; i < 6; ++i) {
    JointSample s;
    s.obs = nn::randn(in_dim, 1, 1.0, rng).col(0);
    s.action = nn::randn(2, 1, 1.0, rng).col(0);
    s.q = i % 2 ? 0 : 1;
    s.c = i % 2 ? 0 : 1;
    batch.push_back(s);
  }
  return batch;
}

}  // namespace

TEST(JointLoss, Examples) {
  PolicyBundle b = tiny_bundle(0, false, false);
  for (auto& W : b.residual.W) W.setZero();
  for (auto& bb : b.residual.b) bb.setZero();
  JointSample s;
  s.q = 0;
  s.c = 0;
  s.obs = b.codebook.centroids[0];
  s.action = coarse_action(b.pmm, 0, 0);
  EXPECT_NEAR(joint_loss(b, {s}, 0.5), 0.0, 1e-15);
  s.action -= v2(1, 0);
  EXPECT_NEAR(joint_loss(b, {s}, 0.0), 1.0, 1e-12);
}

class JointGrad : public ::testing::TestWithParam<int> {};

TEST_P(JointGrad, MatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  for (int variant = 0; variant < 3; ++variant) {
    PolicyBundle b = tiny_bundle(seed, variant > 0, variant == 2);
    const auto batch = tiny_batch(seed, b.encoder.in_dim);
    JointGrads g = zero_grads(b);
    joint_loss(b, batch, 0.3, &g);
    auto params = b.residual.tensors("r");
    auto grads = g.residual.tensors("r");
    params.push_back(nn::view("e", b.state_embed));
    grads.push_back(nn::view("e", g.state_embed));
    if (!b.encoder.identity) {
      auto pe = b.encoder.net.tensors("enc");
      auto ge = g.encoder.tensors("enc");
      params.insert(params.end(), pe.begin(), pe.end());
      grads.insert(grads.end(), ge.begin(), ge.end());
    }
    auto loss = [&] { return joint_loss(b, batch, 0.3); };
    EXPECT_LT(gradcheck::max_rel_error(params, grads, loss), 1e-4) << "variant " << variant;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, JointGrad, ::testing::Range(0, 5));

TEST(MStep, DescentOnFixedBatch) {
  PolicyBundle b = tiny_bundle(0, true, false);
  const auto batch = tiny_batch(0, b.encoder.in_dim);
  MStepConfig cfg;
  cfg.max_epochs = 10;
  cfg.batch = 1000;
  cfg.lr = 1e-3;
  cfg.tol = 0;
  auto losses = m_step(b, batch, cfg);
  ASSERT_EQ(losses.size(), 11u);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LE(losses[i], losses[i - 1]);
}

TEST(Bundle, CheckpointRoundTrip) {
  auto b = tiny_bundle(3, true, true);
  b.fallback = Fallback::HoldLast;
  const auto dir = std::filesystem::temp_directory_path() / "enap_bundle_test";
  std::filesystem::remove_all(dir);
  save_bundle(b, dir);
  auto c = load_bundle(dir);
  EXPECT_EQ(c.fallback, Fallback::HoldLast);
  EXPECT_EQ(c.eps_tiebreak, b.eps_tiebreak);
  EXPECT_EQ(c.state_embed, b.state_embed);
  const auto batch = tiny_batch(3, b.encoder.in_dim);
  EXPECT_EQ(joint_loss(b, batch, 0.1), joint_loss(c, batch, 0.1));
  std::filesystem::remove_all(dir);
}

TEST(Bundle, RejectsBadTiebreak) {
  auto b = tiny_bundle(0, false, false);
  b.eps_tiebreak = 1.0;
  EXPECT_THROW(b.check(), Error);
}

TEST(Em, GridworldExactPipeline) {
  // K = 1 on FrozenLake with one-hot features: symbols are the cells
  auto ds = gridworld_demos(8, 0);
  EmConfig cfg;
  cfg.K = 1;
  cfg.encoder_mode = EncoderMode::Exact;
  // the c9 edge mixes D and R in the demo ratio, so only symbols are checked
  cfg.mine.eps_err = 1.0;
  cfg.abstraction.min_cluster_size = 2;
  cfg.abstraction.min_samples = 1;
  cfg.mstep.max_epochs = 5;
  auto res = em_train(ds, FeatureEncoder::make_identity(16), cfg);
  ASSERT_EQ(res.iterations.size(), 1u);
  EXPECT_TRUE(res.iterations[0].eq_passed);
  EXPECT_TRUE(pmm_validate(res.bundle.pmm).empty());
  EXPECT_NO_THROW(joint_samples(res.bundle.pmm, res.annotated, cfg.mine.eps_err));
}

TEST(EmMultiphase, RefinementFitAndBranching) {
  const auto ds = multiphase2d_demos(200, 0, GoalMode::Bimodal);
  PipelineConfig pc;
  auto cfg = pc.em();
  cfg.K = 1;
  const auto one = em_train(ds, FeatureEncoder::make_identity(4), cfg);
  cfg.K = 3;
  const auto three = em_train(ds, FeatureEncoder::make_identity(4), cfg);
  // the first of three iterations is the single-pass pipeline
  EXPECT_EQ(three.iterations.front().train_mse, one.iterations.front().train_mse);
  EXPECT_LE(three.iterations.back().train_mse, one.iterations.back().train_mse);
  EXPECT_FALSE(mpcheck::goal_branch_states(three.bundle.pmm, three.bundle.codebook).empty());

  auto st = initial_controller(three.bundle);
  const auto& first = ds.trajectories.front().steps.front();
  const auto r = act(three.bundle, st, first.obs);
  EXPECT_LE((r.action - first.action).lpNorm<Eigen::Infinity>(), pc.eps_err);
}
