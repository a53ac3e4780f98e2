#pragma once

#include <optional>
#include <string>
#include <vector>

#include "enap/history_encoder.hpp"
#include "enap/io.hpp"

namespace enap {

constexpr std::uint64_t kStartToken = 0x53544152545f5f5fULL;

// One observed transition: history before step t, the step's action and
// symbol, and the history after it.
struct DbEntry {
  Embedding h;
  Action a;
  SymbolId c = 0;
  Embedding next;
  std::size_t traj = 0;
  int t = 0;
};

struct EmbeddedDb {
  std::vector<std::string> traj_ids;
  std::vector<std::vector<DbEntry>> entries;     // per trajectory, by t
  std::vector<std::vector<Embedding>> prefixes;  // h(tau[:j]) for j = 0..T
  int alphabet_size = 0;
  int action_dim = 0;
  int dense_dim = 0;
  std::vector<std::size_t> order;  // trajectory indices sorted by traj_id

  // The empty history is a shared START token. Under the exact encoder the
  // completed trajectory is a shared END token.
  static EmbeddedDb build(const Dataset& ds, const HistoryEncoder& enc, int alphabet_size = 0);
  std::size_t size() const;
  std::size_t traj_index(const std::string& id) const;
};

struct PrefixMember {
  Embedding u;
  std::string traj_id;
  int t = 0;
};

using PrefixSet = std::vector<PrefixMember>;

struct MineConfig {
  double tau_sim = 0.9;
  double eps_err = 0.1;
  int max_eq_rounds = 50;
  bool prune = true;
  // New members Phase 1 may add per round; 0 runs it to a fixed point.
  int closure_limit = 0;
  bool eq_on_holdout = false;
  // Return the last hypothesis when failing trajectories stop adding members,
  // instead of raising.
  bool allow_unresolved = false;
};

std::vector<const DbEntry*> generalized_mq(const EmbeddedDb& db, const Embedding& u, double tau_sim);

// Index of the most similar member, ties to the lowest index, and its score.
std::pair<std::size_t, double> nearest_member(const PrefixSet& U, const Embedding& h);

PrefixSet initial_prefix_set(const EmbeddedDb& db);

// limit = 0: fixed point. Otherwise stops after `limit` insertions.
// Returns the number of members added.
int expand_until_closed(PrefixSet& U, const EmbeddedDb& db, double tau_sim, int limit = 0);
bool is_closed(const PrefixSet& U, const EmbeddedDb& db, double tau_sim);

// One state per member of U, ids in U order, initial = member 0.
Pmm build_hypothesis(const PrefixSet& U, const EmbeddedDb& db, const MineConfig& cfg,
                     bool allow_open = false);

struct EqResult {
  bool pass = true;
  int t = -1;  // index of the first step no path survives
};

EqResult nd_equivalence_query(const Pmm& pmm, const Trajectory& test, double eps_err);

// Inserts h(tau[:j]) for j = 1..t unless already covered; returns how many.
int add_counterexample(PrefixSet& U, const EmbeddedDb& db, std::size_t traj, int t, double tau_sim);

Pmm stable_phase_prune(const Pmm& pmm);

// Drops states unreachable from the initial state and renumbers densely.
Pmm drop_unreachable(const Pmm& pmm);

struct MineRound {
  int round = 0;
  std::size_t u_size = 0;
  std::optional<std::string> cex_traj;
  int cex_t = -1;
  std::vector<SymbolId> cex_symbols;
};

struct MineResult {
  Pmm pmm;
  Pmm unpruned;
  PrefixSet U;
  std::vector<MineRound> rounds;
  std::vector<Pmm> hypotheses;  // one per round
  bool eq_passed = false;
  int unresolved = 0;  // trajectories still failing when allow_unresolved stopped the loop
};

MineResult mine(const Dataset& ds, const HistoryEncoder& enc, const MineConfig& cfg, int alphabet_size = 0);
MineResult mine(const EmbeddedDb& db, const Dataset& ds, const MineConfig& cfg);

std::string rounds_to_jsonl(const std::vector<MineRound>& rounds);

}  // namespace enap
