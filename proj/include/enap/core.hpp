#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace enap {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using Observation = Vec;
using Action = Vec;
using SymbolId = std::uint32_t;
using StateId = std::uint32_t;

enum class ErrorKind {
  DimensionMismatch,
  ShapeMismatch,
  ZeroVector,
  SymbolOutOfRange,
  NoClustersFound,
  KTooLarge,
  EmptyCodebook,
  EmptyDataset,
  EmptyPrefix,
  NonFiniteLoss,
  UnfilledTable,
  NotClosed,
  NotConsistent,
  TeacherInconsistent,
  BudgetExceeded,
  MaxRoundsExceeded,
  NoTransition,
  DeadEnd,
  NoValidPath,
  UntracedDataset,
  EmptyRollouts,
  SteppedAfterTerminal,
  InvalidArgument,
  Io,
  Parse,
};

const char* to_string(ErrorKind kind);

// Every module reports failures through this one exception type; the kind is
// what the CLI serializes into its machine-readable error object.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct Step {
  Observation obs;
  Action action;
  std::optional<SymbolId> symbol;
};

struct Trajectory {
  std::string traj_id;
  std::vector<Step> steps;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  int obs_dim = 0;
  int action_dim = 0;

  std::size_t total_steps() const;
  bool fully_annotated() const;
};

// Checks non-emptiness, homogeneous dimensions and finiteness; throws on the
// first problem found.
void check_dataset(const Dataset& ds);

struct PmmState {
  StateId id = 0;
  Vec centroid;
  std::set<SymbolId> nis;
  bool is_initial = false;
};

struct PmmEdge {
  StateId src = 0;
  SymbolId input = 0;
  StateId dst = 0;
  double prob = 1.0;
  Action action_mean;
  int action_samples = 1;
};

struct Pmm {
  std::vector<PmmState> states;
  std::vector<PmmEdge> edges;
  int alphabet_size = 0;
  int action_dim = 0;

  StateId initial() const;
  const PmmState& state(StateId id) const;
  // Edges leaving `src` on `input`, in (dst) order.
  std::vector<const PmmEdge*> out_edges(StateId src, SymbolId input) const;
  // Recomputes every state's NIS from its outgoing edges.
  void refresh_nis();
  // Sorts edges by (src, input, dst) and states by id.
  void canonicalize();
};

enum class ViolationKind {
  NormalizationViolation,
  DanglingEdge,
  NisMismatch,
  UnreachableState,
  InitialStateCount,
  NonUnitCentroid,
  NonFiniteValue,
  BadProbability,
  SymbolOutOfRange,
  DuplicateStateId,
};

struct Violation {
  ViolationKind kind;
  std::string detail;
  std::optional<StateId> state;
  std::optional<SymbolId> input;
};

const char* to_string(ViolationKind kind);

// Reports every broken well-formedness invariant of the machine; an empty
// result means the machine is valid.
std::vector<Violation> pmm_validate(const Pmm& pmm);

using StatePath = std::vector<StateId>;

// All state sequences from the initial state consistent with `symbols`
// (length symbols.size() + 1 each). Sorted lexicographically.
std::set<StatePath> pmm_trace(const Pmm& pmm, std::span<const SymbolId> symbols);

double cosine_sim(const Vec& x, const Vec& y);

// Fixed-seed hashing shared by exact-history embeddings and config stamps.
std::uint64_t fnv1a(std::uint64_t h, std::uint64_t value);
constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;

// Seed for one pipeline stage derived from the run's root seed.
inline std::uint64_t stage_seed(std::uint64_t root, std::uint64_t stage) {
  return fnv1a(fnv1a(kFnvOffset, root), stage);
}

}  // namespace enap
