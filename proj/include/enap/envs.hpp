#pragma once

#include <array>
#include <cstdint>
#include <set>

#include "enap/core.hpp"

namespace enap {

enum class Terminal { None, Goal, Hole };

// 4x4 FrozenLake. Cells are numbered row-major from the top-left start.
struct GridWorld {
  static constexpr int kWidth = 4;
  static constexpr int kHeight = 4;
  static constexpr int kCells = 16;
  std::set<int> holes{5, 7, 11, 12};
  int goal = 15;
  int cell = 0;
  Terminal status = Terminal::None;
};

enum GridAction { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

Vec grid_action(GridAction a);
Vec grid_obs(int cell);
// Index of the largest component; the environment accepts any 4-vector.
GridAction grid_action_from(const Vec& a);

std::pair<int, Terminal> gridworld_step(GridWorld& env, const Vec& action);

// tau1: D D R D R R, tau2: D D R R D R. Symbols are the cell indices.
Dataset gridworld_demos();
// n trajectories drawn from tau1/tau2 with seeded picks; ids "demo_<i>_<tau>".
Dataset gridworld_demos(int n, std::uint64_t seed);

enum class GoalMode { SingleGoal, Bimodal };

struct MultiPhaseParams {
  Vec start = Vec::Zero(2);
  Vec waypoint = (Vec(2) << 1.0, 0.0).finished();
  std::array<Vec, 2> goals{(Vec(2) << 1.6, 0.6).finished(), (Vec(2) << 1.6, -0.6).finished()};
  double radius = 0.06;
  double dt = 0.05;
  double start_jitter = 0.02;
  int max_steps = 120;
  double gain = 20.0;
};

// Point mass driven by velocity commands in [-1,1]^2. Observation is
// [x, y, cue0, cue1]; the cue names the episode's goal once the waypoint has
// been visited and is zero before.
struct MultiPhase2D {
  MultiPhaseParams p;
  Vec pos = Vec::Zero(2);
  int goal = 0;
  bool visited = false;
  bool done = false;
  bool success = false;
  int t = 0;

  void reset(std::uint64_t seed, int goal_index);
  Vec observe() const;
  // Returns the observation after the move.
  Vec step(const Vec& action);
};

// Scripted proportional controller heading to the waypoint, then the goal.
Vec multiphase_expert(const MultiPhase2D& env);

Dataset multiphase2d_demos(int n, std::uint64_t seed, GoalMode mode, double noise = 0.01);

}  // namespace enap
