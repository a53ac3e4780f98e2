#include "enap/core.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <sstream>
#include <tuple>

namespace enap {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::SymbolOutOfRange: return "SymbolOutOfRange";
    case ErrorKind::NoClustersFound: return "NoClustersFound";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::EmptyCodebook: return "EmptyCodebook";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::EmptyPrefix: return "EmptyPrefix";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::UnfilledTable: return "UnfilledTable";
    case ErrorKind::NotClosed: return "NotClosed";
    case ErrorKind::NotConsistent: return "NotConsistent";
    case ErrorKind::TeacherInconsistent: return "TeacherInconsistent";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::MaxRoundsExceeded: return "MaxRoundsExceeded";
    case ErrorKind::NoTransition: return "NoTransition";
    case ErrorKind::DeadEnd: return "DeadEnd";
    case ErrorKind::NoValidPath: return "NoValidPath";
    case ErrorKind::UntracedDataset: return "UntracedDataset";
    case ErrorKind::EmptyRollouts: return "EmptyRollouts";
    case ErrorKind::SteppedAfterTerminal: return "SteppedAfterTerminal";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Parse: return "Parse";
  }
  return "Unknown";
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::NormalizationViolation: return "NormalizationViolation";
    case ViolationKind::DanglingEdge: return "DanglingEdge";
    case ViolationKind::NisMismatch: return "NisMismatch";
    case ViolationKind::UnreachableState: return "UnreachableState";
    case ViolationKind::InitialStateCount: return "InitialStateCount";
    case ViolationKind::NonUnitCentroid: return "NonUnitCentroid";
    case ViolationKind::NonFiniteValue: return "NonFiniteValue";
    case ViolationKind::BadProbability: return "BadProbability";
    case ViolationKind::SymbolOutOfRange: return "SymbolOutOfRange";
    case ViolationKind::DuplicateStateId: return "DuplicateStateId";
  }
  return "Unknown";
}

std::size_t Dataset::total_steps() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.steps.size();
  return n;
}

bool Dataset::fully_annotated() const {
  for (const auto& t : trajectories)
    for (const auto& s : t.steps)
      if (!s.symbol) return false;
  return true;
}

void check_dataset(const Dataset& ds) {
  if (ds.trajectories.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no trajectories");
  for (const auto& t : ds.trajectories) {
    if (t.steps.empty())
      throw Error(ErrorKind::EmptyDataset, "trajectory '" + t.traj_id + "' has no steps");
    for (const auto& s : t.steps) {
      if (s.obs.size() != ds.obs_dim || s.action.size() != ds.action_dim)
        throw Error(ErrorKind::DimensionMismatch,
                    "trajectory '" + t.traj_id + "' has a step with mismatched dimensions");
      if (!s.obs.allFinite() || !s.action.allFinite())
        throw Error(ErrorKind::InvalidArgument,
                    "trajectory '" + t.traj_id + "' contains non-finite values");
    }
  }
}

StateId Pmm::initial() const {
  for (const auto& s : states)
    if (s.is_initial) return s.id;
  throw Error(ErrorKind::InvalidArgument, "machine has no initial state");
}

const PmmState& Pmm::state(StateId id) const {
  if (id < states.size() && states[id].id == id) return states[id];
  for (const auto& s : states)
    if (s.id == id) return s;
  throw Error(ErrorKind::InvalidArgument, "unknown state q" + std::to_string(id));
}

std::vector<const PmmEdge*> Pmm::out_edges(StateId src, SymbolId input) const {
  std::vector<const PmmEdge*> out;
  for (const auto& e : edges)
    if (e.src == src && e.input == input) out.push_back(&e);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->dst < b->dst; });
  return out;
}

void Pmm::refresh_nis() {
  for (auto& s : states) s.nis.clear();
  std::map<StateId, std::size_t> index;
  for (std::size_t i = 0; i < states.size(); ++i) index[states[i].id] = i;
  for (const auto& e : edges) {
    auto it = index.find(e.src);
    if (it != index.end()) states[it->second].nis.insert(e.input);
  }
}

void Pmm::canonicalize() {
  std::sort(states.begin(), states.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::sort(edges.begin(), edges.end(), [](const PmmEdge& a, const PmmEdge& b) {
    return std::tie(a.src, a.input, a.dst) < std::tie(b.src, b.input, b.dst);
  });
}

std::vector<Violation> pmm_validate(const Pmm& pmm) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind k, std::string detail, std::optional<StateId> q = {},
                 std::optional<SymbolId> c = {}) {
    out.push_back(Violation{k, std::move(detail), q, c});
  };

  std::map<StateId, const PmmState*> by_id;
  int initials = 0;
  for (const auto& s : pmm.states) {
    if (!by_id.emplace(s.id, &s).second)
      add(ViolationKind::DuplicateStateId, "state id repeated", s.id);
    if (s.is_initial) ++initials;
    if (!s.centroid.allFinite()) {
      add(ViolationKind::NonFiniteValue, "centroid has non-finite entries", s.id);
    } else if (std::abs(s.centroid.norm() - 1.0) > 1e-6) {
      add(ViolationKind::NonUnitCentroid, "centroid norm is not 1", s.id);
    }
  }
  if (initials != 1)
    add(ViolationKind::InitialStateCount,
        "expected exactly one initial state, found " + std::to_string(initials));

  std::map<std::pair<StateId, SymbolId>, double> mass;
  std::map<StateId, std::set<SymbolId>> observed_nis;
  std::map<StateId, std::set<StateId>> succ;
  for (const auto& e : pmm.edges) {
    const bool src_ok = by_id.count(e.src) > 0;
    const bool dst_ok = by_id.count(e.dst) > 0;
    if (!src_ok || !dst_ok)
      add(ViolationKind::DanglingEdge,
          "edge q" + std::to_string(e.src) + " -c" + std::to_string(e.input) + "-> q" +
              std::to_string(e.dst) + " references a missing state",
          e.src, e.input);
    if (static_cast<int>(e.input) >= pmm.alphabet_size)
      add(ViolationKind::SymbolOutOfRange, "edge input outside the alphabet", e.src, e.input);
    if (!(e.prob > 0.0 && e.prob <= 1.0 + 1e-12))
      add(ViolationKind::BadProbability, "edge probability outside (0, 1]", e.src, e.input);
    if (!e.action_mean.allFinite() || e.action_mean.size() != pmm.action_dim)
      add(ViolationKind::NonFiniteValue, "edge action mean malformed", e.src, e.input);
    if (e.action_samples < 1)
      add(ViolationKind::NonFiniteValue, "edge sample count below 1", e.src, e.input);
    mass[{e.src, e.input}] += e.prob;
    observed_nis[e.src].insert(e.input);
    if (src_ok && dst_ok) succ[e.src].insert(e.dst);
  }
  for (const auto& [key, total] : mass) {
    if (std::abs(total - 1.0) > 1e-9) {
      std::ostringstream os;
      os << "outgoing probabilities of (q" << key.first << ", c" << key.second << ") sum to "
         << total;
      add(ViolationKind::NormalizationViolation, os.str(), key.first, key.second);
    }
  }
  for (const auto& s : pmm.states) {
    const auto& seen = observed_nis[s.id];
    if (seen != s.nis) add(ViolationKind::NisMismatch, "NIS differs from outgoing edge labels", s.id);
  }

  if (initials == 1) {
    std::set<StateId> reached;
    std::deque<StateId> queue{pmm.initial()};
    reached.insert(pmm.initial());
    while (!queue.empty()) {
      StateId q = queue.front();
      queue.pop_front();
      for (StateId n : succ[q])
        if (reached.insert(n).second) queue.push_back(n);
    }
    for (const auto& s : pmm.states)
      if (!reached.count(s.id))
        add(ViolationKind::UnreachableState, "state not reachable from the initial state", s.id);
  }
  return out;
}

std::set<StatePath> pmm_trace(const Pmm& pmm, std::span<const SymbolId> symbols) {
  for (SymbolId c : symbols)
    if (static_cast<int>(c) >= pmm.alphabet_size)
      throw Error(ErrorKind::SymbolOutOfRange, "symbol c" + std::to_string(c) + " outside alphabet");
  std::set<StatePath> paths{{pmm.initial()}};
  for (SymbolId c : symbols) {
    std::set<StatePath> next;
    for (const auto& p : paths)
      for (const auto* e : pmm.out_edges(p.back(), c)) {
        StatePath q = p;
        q.push_back(e->dst);
        next.insert(std::move(q));
      }
    paths = std::move(next);
    if (paths.empty()) break;
  }
  return paths;
}

double cosine_sim(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw Error(ErrorKind::DimensionMismatch, "cosine of unequal lengths");
  const double nx = x.norm(), ny = y.norm();
  if (nx == 0.0 || ny == 0.0) throw Error(ErrorKind::ZeroVector, "cosine of a zero vector");
  return std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
}

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xffULL;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace enap
