#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "enap/envs.hpp"
#include "enap/lstar_extended.hpp"

using namespace enap;

namespace {

std::vector<SymbolId> symbols_of(const Trajectory& tr) {
  std::vector<SymbolId> s;
  for (const auto& st : tr.steps) s.push_back(*st.symbol);
  return s;
}

void expect_normalized(const Pmm& pmm) {
  std::map<std::pair<StateId, SymbolId>, double> sum;
  for (const auto& e : pmm.edges) sum[{e.src, e.input}] += e.prob;
  for (const auto& [k, v] : sum) EXPECT_NEAR(v, 1.0, 1e-9);
  for (const auto& s : pmm.states) {
    std::set<SymbolId> out;
    for (const auto& e : pmm.edges)
      if (e.src == s.id) out.insert(e.input);
    EXPECT_EQ(out, s.nis);
  }
}

MineConfig walkthrough_cfg() {
  MineConfig cfg;
  cfg.tau_sim = 0.9;
  cfg.eps_err = 0.6;
  cfg.closure_limit = 1;
  cfg.max_eq_rounds = 5;
  return cfg;
}

Dataset line(std::vector<SymbolId> syms, std::vector<Vec> acts, const std::string& id) {
  Dataset ds;
  Trajectory tr{id, {}};
  for (std::size_t i = 0; i < syms.size(); ++i) tr.steps.push_back({Vec::Zero(1), acts[i], syms[i]});
  ds.trajectories.push_back(tr);
  ds.obs_dim = 1;
  ds.action_dim = static_cast<int>(acts[0].size());
  return ds;
}

Vec v2(double x, double y) { return (Vec(2) << x, y).finished(); }

// every h and next share one dense direction
EmbeddedDb flat_db(int T) {
  EmbeddedDb db;
  db.alphabet_size = 1;
  db.action_dim = 1;
  db.dense_dim = 2;
  Embedding e{v2(1, 0), 0, false};
  std::vector<DbEntry> rows;
  std::vector<Embedding> pre(T + 1, e);
  for (int t = 0; t < T; ++t) rows.push_back({e, Vec::Ones(1), 0, e, 0, t});
  db.traj_ids = {"a"};
  db.entries = {rows};
  db.prefixes = {pre};
  db.order = {0};
  return db;
}

}  // namespace

TEST(ExtMq, SelfMatch) {
  auto ds = line({0, 1, 2, 3}, {v2(1, 0), v2(0, 1), v2(1, 1), v2(0, 0)}, "a");
  auto db = EmbeddedDb::build(ds, make_exact_encoder());
  auto r = generalized_mq(db, db.entries[0][1].h, 0.99);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0]->t, 1);
  EXPECT_EQ(r[0]->a, v2(0, 1));
  EXPECT_EQ(r[0]->c, 1u);
  EXPECT_EQ(r[0]->next, db.entries[0][2].h);
  EXPECT_TRUE(generalized_mq(db, db.entries[0][1].h, 1.0 + 1e-9).empty());
}

TEST(ExtMq, FrozenLakeBranch) {
  auto ds = gridworld_demos();
  auto db = EmbeddedDb::build(ds, make_exact_encoder(), 16);
  // history through c9 is the state before step 4
  auto u = db.prefixes[0][4];
  EXPECT_EQ(u, db.prefixes[1][4]);
  auto r = generalized_mq(db, u, 0.9);
  ASSERT_EQ(r.size(), 2u);
  std::set<GridAction> acts{grid_action_from(r[0]->a), grid_action_from(r[1]->a)};
  EXPECT_EQ(acts, (std::set<GridAction>{kDown, kRight}));
  std::set<SymbolId> cells{r[0]->c, r[1]->c};
  EXPECT_EQ(cells, (std::set<SymbolId>{10, 13}));
}

TEST(ExtClose, SingleTrajectoryExact) {
  auto ds = line({0, 0, 1, 1, 2}, std::vector<Vec>(5, v2(1, 0)), "a");
  auto db = EmbeddedDb::build(ds, make_exact_encoder());
  auto U = initial_prefix_set(db);
  expand_until_closed(U, db, 0.9);
  // start token, the T-1 intermediate histories, end token
  EXPECT_EQ(U.size(), 6u);
  EXPECT_TRUE(is_closed(U, db, 0.9));
  for (std::size_t i = 0; i < U.size(); ++i) EXPECT_EQ(U[i].t, static_cast<int>(i));
}

TEST(ExtClose, IdenticalEmbeddings) {
  auto db = flat_db(5);
  auto U = initial_prefix_set(db);
  expand_until_closed(U, db, 0.9);
  EXPECT_EQ(U.size(), 1u);
  auto pmm = build_hypothesis(U, db, MineConfig{});
  ASSERT_EQ(pmm.edges.size(), 1u);
  EXPECT_EQ(pmm.edges[0].src, pmm.edges[0].dst);
}

TEST(ExtClose, FrozenLakeAfterFirstCounterexample) {
  auto ds = gridworld_demos();
  auto db = EmbeddedDb::build(ds, make_exact_encoder(), 16);
  auto cfg = walkthrough_cfg();
  auto U = initial_prefix_set(db);
  expand_until_closed(U, db, cfg.tau_sim, 1);
  auto hyp = build_hypothesis(U, db, cfg, true);
  expect_normalized(hyp);
  auto r = nd_equivalence_query(hyp, ds.trajectories[0], cfg.eps_err);
  ASSERT_FALSE(r.pass);
  EXPECT_EQ(r.t, 2);  // prefix (c0, c4, c8)
  add_counterexample(U, db, 0, r.t, cfg.tau_sim);
  expand_until_closed(U, db, cfg.tau_sim, 1);
  // the history ending in c8 is the state before step 3
  bool through_c8 = false;
  for (const auto& m : U) through_c8 |= m.u == db.prefixes[0][3];
  EXPECT_TRUE(through_c8);
}

TEST(ExtHyp, LinearChain) {
  auto ds = line({0, 1, 2}, {v2(1, 0), v2(0, 1), v2(1, 1)}, "a");
  auto db = EmbeddedDb::build(ds, make_exact_encoder());
  auto U = initial_prefix_set(db);
  expand_until_closed(U, db, 0.9);
  auto pmm = build_hypothesis(U, db, MineConfig{});
  EXPECT_EQ(pmm.states.size(), 4u);
  ASSERT_EQ(pmm.edges.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(pmm.edges[i].src, i);
    EXPECT_EQ(pmm.edges[i].dst, i + 1);
    EXPECT_EQ(pmm.edges[i].prob, 1.0);
  }
  EXPECT_TRUE(pmm_validate(pmm).empty());
}

TEST(ExtHyp, SevenThreeSplit) {
  Dataset ds;
  ds.obs_dim = 1;
  ds.action_dim = 2;
  for (int k = 0; k < 10; ++k) {
    const Vec a0 = k < 7 ? v2(1, 0) : v2(0, 1);
    ds.trajectories.push_back({"t" + std::to_string(k),
                               {{Vec::Zero(1), a0, 0u}, {Vec::Zero(1), v2(0, 0), 1u}, {Vec::Zero(1), v2(0, 0), 2u}}});
  }
  auto db = EmbeddedDb::build(ds, make_exact_encoder());
  auto U = initial_prefix_set(db);
  expand_until_closed(U, db, 0.9);
  auto pmm = build_hypothesis(U, db, MineConfig{});
  std::vector<double> probs;
  for (const auto& e : pmm.edges)
    if (e.input == 1) probs.push_back(e.prob);
  ASSERT_EQ(probs.size(), 2u);
  std::sort(probs.begin(), probs.end());
  EXPECT_NEAR(probs[0], 0.3, 1e-9);
  EXPECT_NEAR(probs[1], 0.7, 1e-9);
  expect_normalized(pmm);
}

TEST(ExtHyp, NotClosed) {
  auto ds = gridworld_demos();
  auto db = EmbeddedDb::build(ds, make_exact_encoder(), 16);
  auto U = initial_prefix_set(db);
  EXPECT_THROW(build_hypothesis(U, db, MineConfig{}), Error);
}

TEST(ExtEq, PerturbedAction) {
  auto ds = line({0, 1, 2, 3}, {v2(1, 0), v2(0, 1), v2(1, 1), v2(0, 0)}, "a");
  auto db = EmbeddedDb::build(ds, make_exact_encoder());
  auto U = initial_prefix_set(db);
  expand_until_closed(U, db, 0.9);
  auto pmm = build_hypothesis(U, db, MineConfig{});
  EXPECT_TRUE(nd_equivalence_query(pmm, ds.trajectories[0], 0.1).pass);
  auto bad = ds.trajectories[0];
  bad.steps[2].action[1] += 0.2;
  auto r = nd_equivalence_query(pmm, bad, 0.1);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.t, 2);
  bad.steps[2].symbol = 99;
  EXPECT_THROW(nd_equivalence_query(pmm, bad, 0.1), Error);
}

TEST(ExtCex, InsertAndDedup) {
  auto ds = line({0, 1, 2, 3, 4}, std::vector<Vec>(5, v2(1, 0)), "a");
  auto db = EmbeddedDb::build(ds, make_exact_encoder());
  auto U = initial_prefix_set(db);
  EXPECT_EQ(add_counterexample(U, db, 0, 3, 0.9), 3);
  EXPECT_EQ(U.size(), 4u);
  EXPECT_EQ(add_counterexample(U, db, 0, 3, 0.9), 0);
  EXPECT_EQ(U.size(), 4u);
}

namespace {

Pmm loop_chain(int n) {
  Pmm pmm;
  pmm.alphabet_size = 1;
  pmm.action_dim = 1;
  for (int i = 0; i < n; ++i) {
    Vec c = Vec::Zero(n);
    c[i] = 1;
    pmm.states.push_back({StateId(i), c, {}, i == 0});
    const bool last = i + 1 == n;
    pmm.edges.push_back({StateId(i), 0, StateId(i), last ? 1.0 : 0.5, Vec::Constant(1, i), 1});
    if (!last) pmm.edges.push_back({StateId(i), 0, StateId(i + 1), 0.5, Vec::Constant(1, i), 1});
  }
  pmm.refresh_nis();
  return pmm;
}

}  // namespace

TEST(ExtPrune, RuleAndChain) {
  auto two = stable_phase_prune(loop_chain(2));
  EXPECT_EQ(two.states.size(), 1u);
  auto one = stable_phase_prune(loop_chain(4));
  ASSERT_EQ(one.states.size(), 1u);
  ASSERT_EQ(one.edges.size(), 1u);
  EXPECT_EQ(one.edges[0].action_samples, 7);
  EXPECT_NEAR(one.edges[0].prob, 1.0, 1e-12);
  EXPECT_TRUE(pmm_validate(one).empty());
}

TEST(ExtPrune, NoSelfLoopsIsIdentity) {
  auto ds = gridworld_demos();
  auto res = mine(ds, make_exact_encoder(), walkthrough_cfg(), 16);
  auto pruned = stable_phase_prune(res.unpruned);
  EXPECT_EQ(pmm_to_json(pruned).dump(), pmm_to_json(res.unpruned).dump());
}

TEST(ExtMine, FrozenLakeWalkthrough) {
  auto ds = gridworld_demos();
  auto res = mine(ds, make_exact_encoder(), walkthrough_cfg(), 16);
  EXPECT_TRUE(res.eq_passed);
  EXPECT_LE(res.rounds.size(), 5u);
  std::vector<std::vector<SymbolId>> cex;
  for (const auto& r : res.rounds)
    if (r.cex_traj) cex.push_back(r.cex_symbols);
  std::vector<std::vector<SymbolId>> want{{0, 4, 8}, {0, 4, 8, 9, 13}, {0, 4, 8, 9, 10, 14}};
  EXPECT_EQ(cex, want);

  // |U| strictly grows from round to round
  for (std::size_t i = 1; i < res.rounds.size(); ++i) EXPECT_GT(res.rounds[i].u_size, res.rounds[i - 1].u_size);
  for (const auto& h : res.hypotheses) expect_normalized(h);

  // the round after the c13 counterexample has a state branching on c10 and c13
  const Pmm& third = res.hypotheses.at(2);
  bool branch = false;
  for (const auto& s : third.states) branch |= s.nis == std::set<SymbolId>{10, 13};
  EXPECT_TRUE(branch);

  const Pmm& pmm = res.pmm;
  EXPECT_TRUE(pmm_validate(pmm).empty());
  for (const auto& tr : ds.trajectories) EXPECT_TRUE(nd_equivalence_query(pmm, tr, 0.6).pass);
  auto p1 = pmm_trace(pmm, symbols_of(ds.trajectories[0]));
  auto p2 = pmm_trace(pmm, symbols_of(ds.trajectories[1]));
  ASSERT_EQ(p1.size(), 1u);
  ASSERT_EQ(p2.size(), 1u);
  const auto& a = *p1.begin();
  const auto& b = *p2.begin();
  for (int t = 0; t <= 4; ++t) EXPECT_EQ(a[t], b[t]);  // common past
  EXPECT_NE(a[5], b[5]);                               // branch
  EXPECT_EQ(a[6], b[6]);                               // both converge on c14
  EXPECT_EQ(pmm.out_edges(a[5], 14).size(), 1u);
  EXPECT_EQ(pmm.out_edges(b[5], 14).size(), 1u);
}

TEST(ExtMine, FullClosurePassesFirstRound) {
  auto ds = gridworld_demos();
  MineConfig cfg = walkthrough_cfg();
  cfg.closure_limit = 0;
  auto res = mine(ds, make_exact_encoder(), cfg, 16);
  EXPECT_EQ(res.rounds.size(), 1u);
  EXPECT_TRUE(res.eq_passed);
}

TEST(ExtMine, ConstantSymbolCollapses) {
  auto ds = line(std::vector<SymbolId>(30, 0), std::vector<Vec>(30, v2(1, 0)), "a");
  auto enc = make_random_encoder(16, 2, 1, 4, 3);
  MineConfig cfg;
  cfg.tau_sim = 0.9;
  auto res = mine(ds, enc, cfg);
  // the empty-history start state comes on top of the 1-2 phase states
  EXPECT_GE(res.pmm.states.size(), 2u);
  EXPECT_LE(res.pmm.states.size(), 3u);
  int loops = 0, samples = 0;
  for (const auto& e : res.pmm.edges) {
    samples += e.action_samples;
    if (e.src == e.dst) loops += e.action_samples;
  }
  EXPECT_GT(2 * loops, samples);
  EXPECT_TRUE(pmm_validate(res.pmm).empty());
}

TEST(ExtMine, EmptyDataset) {
  Dataset ds;
  EXPECT_THROW(mine(ds, make_exact_encoder(), MineConfig{}), Error);
}

TEST(ExtMine, DeterministicBytes) {
  auto ds = gridworld_demos(12, 5);
  auto enc = make_random_encoder(16, 4, 16, 4, 9);
  MineConfig cfg;
  cfg.eps_err = 0.6;
  auto a = mine(ds, enc, cfg, 16);
  auto b = mine(ds, enc, cfg, 16);
  EXPECT_EQ(pmm_to_json(a.pmm).dump(), pmm_to_json(b.pmm).dump());
  EXPECT_EQ(rounds_to_jsonl(a.rounds), rounds_to_jsonl(b.rounds));
}

TEST(ExtMine, RandomEncoderMachinesKeepInvariants) {
  // property: for several encoders and thresholds, every round is normalized,
  // the mined machine passes EQ on all its data, and pruning keeps that
  auto ds = gridworld_demos(10, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (double tau : {0.8, 0.95}) {
      auto enc = make_random_encoder(8, 4, 16, 4, seed);
      MineConfig cfg;
      cfg.tau_sim = tau;
      cfg.eps_err = 0.6;
      cfg.prune = true;
      auto res = mine(ds, enc, cfg, 16);
      ASSERT_TRUE(res.eq_passed);
      for (std::size_t i = 1; i < res.rounds.size(); ++i)
        EXPECT_GT(res.rounds[i].u_size, res.rounds[i - 1].u_size);
      for (const auto& h : res.hypotheses) expect_normalized(h);
      expect_normalized(res.pmm);
      EXPECT_TRUE(pmm_validate(res.unpruned).empty());
      EXPECT_TRUE(pmm_validate(res.pmm).empty());
      for (const auto& tr : ds.trajectories) {
        EXPECT_TRUE(nd_equivalence_query(res.unpruned, tr, cfg.eps_err).pass);
        EXPECT_TRUE(nd_equivalence_query(res.pmm, tr, cfg.eps_err).pass) << "seed " << seed << " tau " << tau;
      }
    }
}

TEST(ExtMine, RoundsJsonl) {
  auto res = mine(gridworld_demos(), make_exact_encoder(), walkthrough_cfg(), 16);
  auto text = rounds_to_jsonl(res.rounds);
  auto first = Json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(first["round"], 1);
  EXPECT_EQ(first["counterexample"]["t"], 2);
  EXPECT_TRUE(first.contains("|U|"));
}
