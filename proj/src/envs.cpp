#include "enap/envs.hpp"

#include <random>

namespace enap {

Vec grid_action(GridAction a) {
  Vec v = Vec::Zero(4);
  v[a] = 1.0;
  return v;
}

Vec grid_obs(int cell) {
  Vec v = Vec::Zero(GridWorld::kCells);
  v[cell] = 1.0;
  return v;
}

GridAction grid_action_from(const Vec& a) {
  if (a.size() != 4) throw Error(ErrorKind::DimensionMismatch, "grid actions have 4 components");
  Eigen::Index i = 0;
  a.maxCoeff(&i);
  return static_cast<GridAction>(i);
}

std::pair<int, Terminal> gridworld_step(GridWorld& env, const Vec& action) {
  if (env.status != Terminal::None) throw Error(ErrorKind::SteppedAfterTerminal, "episode already ended");
  int r = env.cell / GridWorld::kWidth, c = env.cell % GridWorld::kWidth;
  switch (grid_action_from(action)) {
    case kUp: r = std::max(0, r - 1); break;
    case kDown: r = std::min(GridWorld::kHeight - 1, r + 1); break;
    case kLeft: c = std::max(0, c - 1); break;
    case kRight: c = std::min(GridWorld::kWidth - 1, c + 1); break;
  }
  env.cell = r * GridWorld::kWidth + c;
  if (env.holes.count(env.cell)) env.status = Terminal::Hole;
  else if (env.cell == env.goal) env.status = Terminal::Goal;
  return {env.cell, env.status};
}

namespace {

Trajectory replay(const std::string& id, const std::vector<GridAction>& acts) {
  GridWorld env;
  Trajectory tr;
  tr.traj_id = id;
  for (GridAction a : acts) {
    Step s;
    s.obs = grid_obs(env.cell);
    s.action = grid_action(a);
    s.symbol = static_cast<SymbolId>(env.cell);
    gridworld_step(env, s.action);
    tr.steps.push_back(std::move(s));
  }
  if (env.status != Terminal::Goal) throw Error(ErrorKind::InvalidArgument, "scripted path misses the goal");
  return tr;
}

const std::vector<GridAction> kTau1{kDown, kDown, kRight, kDown, kRight, kRight};
const std::vector<GridAction> kTau2{kDown, kDown, kRight, kRight, kDown, kRight};

Dataset grid_dataset(std::vector<Trajectory> trs) {
  Dataset ds;
  ds.trajectories = std::move(trs);
  ds.obs_dim = GridWorld::kCells;
  ds.action_dim = 4;
  check_dataset(ds);
  return ds;
}

}  // namespace

Dataset gridworld_demos() { return grid_dataset({replay("tau1", kTau1), replay("tau2", kTau2)}); }

Dataset gridworld_demos(int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "need at least one demo");
  std::mt19937_64 rng(seed);
  std::vector<Trajectory> trs;
  for (int i = 0; i < n; ++i) {
    const bool second = (rng() >> 11) & 1;
    trs.push_back(replay("demo_" + std::to_string(i) + (second ? "_tau2" : "_tau1"), second ? kTau2 : kTau1));
  }
  return grid_dataset(std::move(trs));
}

void MultiPhase2D::reset(std::uint64_t seed, int goal_index) {
  if (goal_index < 0 || goal_index > 1) throw Error(ErrorKind::InvalidArgument, "goal index must be 0 or 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-p.start_jitter, p.start_jitter);
  pos = p.start;
  pos[0] += u(rng);
  pos[1] += u(rng);
  goal = goal_index;
  visited = done = success = false;
  t = 0;
}

Vec MultiPhase2D::observe() const {
  Vec o = Vec::Zero(4);
  o.head(2) = pos;
  if (visited) o[2 + goal] = 1.0;
  return o;
}

Vec MultiPhase2D::step(const Vec& action) {
  if (done) throw Error(ErrorKind::SteppedAfterTerminal, "episode already ended");
  if (action.size() != 2) throw Error(ErrorKind::DimensionMismatch, "actions are 2-D velocities");
  pos += p.dt * action.cwiseMax(-1.0).cwiseMin(1.0);
  ++t;
  if (!visited && (pos - p.waypoint).norm() <= p.radius) visited = true;
  for (const auto& g : p.goals)
    if ((pos - g).norm() <= p.radius) {
      done = true;
      success = visited;
    }
  if (t >= p.max_steps) done = true;
  return observe();
}

Vec multiphase_expert(const MultiPhase2D& env) {
  const Vec target = env.visited ? env.p.goals[env.goal] : env.p.waypoint;
  Vec a = env.p.gain * (target - env.pos);
  const double n = a.norm();
  if (n > 1.0) a /= n;
  return a;
}

Dataset multiphase2d_demos(int n, std::uint64_t seed, GoalMode mode, double noise) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "need at least one demo");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.obs_dim = 4;
  ds.action_dim = 2;
  for (int i = 0; i < n; ++i) {
    MultiPhase2D env;
    env.reset(rng(), mode == GoalMode::Bimodal ? i % 2 : 0);
    Trajectory tr;
    tr.traj_id = "demo_" + std::to_string(i);
    while (!env.done) {
      Step s;
      s.obs = env.observe();
      Vec a = multiphase_expert(env);
      if (noise > 0)
        for (Eigen::Index k = 0; k < a.size(); ++k) a[k] += noise * gauss(rng);
      s.action = a.cwiseMax(-1.0).cwiseMin(1.0);
      env.step(s.action);
      tr.steps.push_back(std::move(s));
    }
    ds.trajectories.push_back(std::move(tr));
  }
  check_dataset(ds);
  return ds;
}

}  // namespace enap
