#include "enap/lstar_extended.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "enap/log.hpp"

namespace enap {

std::size_t EmbeddedDb::size() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.size();
  return n;
}

std::size_t EmbeddedDb::traj_index(const std::string& id) const {
  for (std::size_t i = 0; i < traj_ids.size(); ++i)
    if (traj_ids[i] == id) return i;
  throw Error(ErrorKind::InvalidArgument, "unknown trajectory " + id);
}

EmbeddedDb EmbeddedDb::build(const Dataset& ds, const HistoryEncoder& enc, int alphabet_size) {
  if (ds.trajectories.empty()) throw Error(ErrorKind::EmptyDataset, "no trajectories");
  if (!ds.fully_annotated()) throw Error(ErrorKind::UntracedDataset, "dataset has steps without symbols");
  EmbeddedDb db;
  db.action_dim = ds.action_dim;
  db.dense_dim = enc.embed_dim();
  SymbolId max_sym = 0;
  for (const auto& tr : ds.trajectories)
    for (const auto& s : tr.steps) max_sym = std::max(max_sym, *s.symbol);
  db.alphabet_size = alphabet_size > 0 ? alphabet_size : static_cast<int>(max_sym) + 1;
  if (static_cast<int>(max_sym) >= db.alphabet_size)
    throw Error(ErrorKind::SymbolOutOfRange, "symbol " + std::to_string(max_sym) + " outside alphabet");

  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& tr = ds.trajectories[i];
    if (tr.steps.empty()) throw Error(ErrorKind::EmptyPrefix, "trajectory " + tr.traj_id + " has no steps");
    const auto g = enc.embed_trajectory(tr);
    const int T = static_cast<int>(tr.steps.size());
    std::vector<Embedding> pre;
    pre.reserve(T + 1);
    pre.push_back(Embedding::of_token(kStartToken));
    for (int t = 0; t + 1 < T; ++t) pre.push_back(g[t]);
    // RNN modes keep the real final embedding; exact histories never repeat,
    // so completed trajectories share one terminal token instead.
    pre.push_back(enc.mode == EncoderMode::Exact ? Embedding::of_token(kEndToken) : g[T - 1]);
    std::vector<DbEntry> rows;
    rows.reserve(T);
    for (int t = 0; t < T; ++t)
      rows.push_back(DbEntry{pre[t], tr.steps[t].action, *tr.steps[t].symbol, pre[t + 1], i, t});
    db.traj_ids.push_back(tr.traj_id);
    db.entries.push_back(std::move(rows));
    db.prefixes.push_back(std::move(pre));
  }
  db.order.resize(db.traj_ids.size());
  for (std::size_t i = 0; i < db.order.size(); ++i) db.order[i] = i;
  std::stable_sort(db.order.begin(), db.order.end(),
                   [&](std::size_t x, std::size_t y) { return db.traj_ids[x] < db.traj_ids[y]; });
  return db;
}

std::vector<const DbEntry*> generalized_mq(const EmbeddedDb& db, const Embedding& u, double tau_sim) {
  std::vector<const DbEntry*> out;
  for (std::size_t i : db.order)
    for (const auto& e : db.entries[i])
      if (similarity(e.h, u) >= tau_sim) out.push_back(&e);
  return out;
}

std::pair<std::size_t, double> nearest_member(const PrefixSet& U, const Embedding& h) {
  if (U.empty()) throw Error(ErrorKind::InvalidArgument, "empty prefix set");
  std::size_t best = 0;
  double best_s = -2;
  for (std::size_t i = 0; i < U.size(); ++i) {
    const double s = similarity(U[i].u, h);
    if (s > best_s) {
      best_s = s;
      best = i;
    }
  }
  return {best, best_s};
}

namespace {

bool covered(const PrefixSet& U, const Embedding& h, double tau) {
  for (const auto& m : U)
    if (similarity(m.u, h) >= tau) return true;
  return false;
}

}  // namespace

PrefixSet initial_prefix_set(const EmbeddedDb& db) {
  if (db.entries.empty()) throw Error(ErrorKind::EmptyDataset, "empty database");
  return {PrefixMember{db.prefixes[0][0], db.traj_ids[0], 0}};
}

int expand_until_closed(PrefixSet& U, const EmbeddedDb& db, double tau_sim, int limit) {
  int added = 0;
  // A member's successors stay covered once covered, so one pass over the
  // growing list reaches the fixed point.
  for (std::size_t i = 0; i < U.size(); ++i) {
    const Embedding u = U[i].u;
    for (const DbEntry* e : generalized_mq(db, u, tau_sim)) {
      if (covered(U, e->next, tau_sim)) continue;
      if (U.size() > db.size() + 2) throw Error(ErrorKind::BudgetExceeded, "prefix set outgrew the database");
      U.push_back(PrefixMember{e->next, db.traj_ids[e->traj], e->t + 1});
      ++added;
      if (limit > 0 && added >= limit) return added;
    }
  }
  return added;
}

bool is_closed(const PrefixSet& U, const EmbeddedDb& db, double tau_sim) {
  for (const auto& m : U)
    for (const DbEntry* e : generalized_mq(db, m.u, tau_sim))
      if (!covered(U, e->next, tau_sim)) return false;
  return true;
}

namespace {

Vec member_centroid(const PrefixSet& U, std::size_t i, int dense_dim, const std::vector<int>& token_slot,
                    int n_tokens) {
  Vec c = Vec::Zero(dense_dim + n_tokens);
  const auto& u = U[i].u;
  if (u.symbolic) {
    c[dense_dim + token_slot[i]] = 1.0;
  } else {
    const double n = u.dense.norm();
    if (n == 0) throw Error(ErrorKind::ZeroVector, "zero history embedding");
    c.head(dense_dim) = u.dense / n;
  }
  return c;
}

}  // namespace

Pmm build_hypothesis(const PrefixSet& U, const EmbeddedDb& db, const MineConfig& cfg, bool allow_open) {
  if (U.empty()) throw Error(ErrorKind::InvalidArgument, "empty prefix set");
  if (!allow_open && !is_closed(U, db, cfg.tau_sim)) throw Error(ErrorKind::NotClosed, "prefix set is not closed");

  Pmm pmm;
  pmm.alphabet_size = db.alphabet_size;
  pmm.action_dim = db.action_dim;

  std::vector<int> token_slot(U.size(), -1);
  int n_tokens = 0;
  for (std::size_t i = 0; i < U.size(); ++i)
    if (U[i].u.symbolic) token_slot[i] = n_tokens++;
  for (std::size_t i = 0; i < U.size(); ++i) {
    PmmState s;
    s.id = static_cast<StateId>(i);
    s.centroid = member_centroid(U, i, db.dense_dim, token_slot, n_tokens);
    s.is_initial = i == 0;
    pmm.states.push_back(std::move(s));
  }

  std::map<const DbEntry*, std::size_t> dest;
  for (std::size_t q = 0; q < U.size(); ++q) {
    struct Acc {
      Vec sum;
      int n = 0;
    };
    std::map<std::pair<SymbolId, std::size_t>, Acc> groups;
    std::map<SymbolId, int> totals;
    for (const DbEntry* e : generalized_mq(db, U[q].u, cfg.tau_sim)) {
      if (e->c >= static_cast<SymbolId>(db.alphabet_size))
        throw Error(ErrorKind::SymbolOutOfRange, "symbol outside alphabet");
      auto it = dest.find(e);
      if (it == dest.end()) it = dest.emplace(e, nearest_member(U, e->next).first).first;
      auto& acc = groups[{e->c, it->second}];
      if (acc.n == 0) acc.sum = Vec::Zero(e->a.size());
      acc.sum += e->a;
      ++acc.n;
      ++totals[e->c];
    }
    for (const auto& [key, acc] : groups) {
      PmmEdge edge;
      edge.src = static_cast<StateId>(q);
      edge.input = key.first;
      edge.dst = static_cast<StateId>(key.second);
      edge.prob = static_cast<double>(acc.n) / totals[key.first];
      edge.action_mean = acc.sum / acc.n;
      edge.action_samples = acc.n;
      pmm.edges.push_back(std::move(edge));
    }
  }
  pmm.refresh_nis();
  pmm.canonicalize();
  return pmm;
}

EqResult nd_equivalence_query(const Pmm& pmm, const Trajectory& test, double eps_err) {
  std::set<StateId> frontier{pmm.initial()};
  for (std::size_t t = 0; t < test.steps.size(); ++t) {
    const auto& s = test.steps[t];
    if (!s.symbol) throw Error(ErrorKind::UntracedDataset, "test step without symbol");
    if (static_cast<int>(*s.symbol) >= pmm.alphabet_size)
      throw Error(ErrorKind::SymbolOutOfRange, "symbol " + std::to_string(*s.symbol) + " outside alphabet");
    std::set<StateId> next;
    for (StateId q : frontier)
      for (const PmmEdge* e : pmm.out_edges(q, *s.symbol)) {
        if (e->action_mean.size() != s.action.size())
          throw Error(ErrorKind::DimensionMismatch, "action dimension differs from machine");
        if ((s.action - e->action_mean).cwiseAbs().maxCoeff() <= eps_err) next.insert(e->dst);
      }
    if (next.empty()) return EqResult{false, static_cast<int>(t)};
    frontier = std::move(next);
  }
  return EqResult{true, -1};
}

int add_counterexample(PrefixSet& U, const EmbeddedDb& db, std::size_t traj, int t, double tau_sim) {
  const auto& pre = db.prefixes.at(traj);
  if (t < 0 || t >= static_cast<int>(pre.size())) throw Error(ErrorKind::InvalidArgument, "counterexample index out of range");
  int added = 0;
  for (int j = 1; j <= t; ++j) {
    if (covered(U, pre[j], tau_sim)) continue;
    U.push_back(PrefixMember{pre[j], db.traj_ids[traj], j});
    ++added;
  }
  return added;
}

namespace {

// Removes every state not in `keep`, renumbering survivors in id order.
Pmm restrict_states(const Pmm& pmm, const std::vector<bool>& keep) {
  std::vector<StateId> remap(keep.size(), 0);
  Pmm out;
  out.alphabet_size = pmm.alphabet_size;
  out.action_dim = pmm.action_dim;
  StateId next = 0;
  for (const auto& s : pmm.states) {
    if (!keep[s.id]) continue;
    remap[s.id] = next;
    PmmState ns = s;
    ns.id = next++;
    out.states.push_back(std::move(ns));
  }
  for (const auto& e : pmm.edges) {
    if (!keep[e.src] || !keep[e.dst]) continue;
    PmmEdge ne = e;
    ne.src = remap[e.src];
    ne.dst = remap[e.dst];
    out.edges.push_back(std::move(ne));
  }
  out.refresh_nis();
  out.canonicalize();
  return out;
}

}  // namespace

Pmm drop_unreachable(const Pmm& pmm) {
  std::vector<bool> seen(pmm.states.size(), false);
  std::vector<StateId> stack{pmm.initial()};
  seen[pmm.initial()] = true;
  while (!stack.empty()) {
    const StateId q = stack.back();
    stack.pop_back();
    for (const auto& e : pmm.edges)
      if (e.src == q && !seen[e.dst]) {
        seen[e.dst] = true;
        stack.push_back(e.dst);
      }
  }
  return restrict_states(pmm, seen);
}

Pmm stable_phase_prune(const Pmm& input) {
  Pmm pmm = input;
  pmm.canonicalize();
  for (;;) {
    std::set<std::pair<StateId, SymbolId>> loops;
    for (const auto& e : pmm.edges)
      if (e.src == e.dst) loops.insert({e.src, e.input});
    const PmmEdge* hit = nullptr;
    for (const auto& e : pmm.edges)
      if (e.src != e.dst && loops.count({e.src, e.input})) {
        hit = &e;
        break;
      }
    if (!hit) break;
    const StateId keep = hit->src, gone = hit->dst;

    std::map<std::tuple<StateId, SymbolId, StateId>, PmmEdge> pooled;
    for (auto e : pmm.edges) {
      if (e.src == gone) e.src = keep;
      if (e.dst == gone) e.dst = keep;
      auto [it, fresh] = pooled.try_emplace({e.src, e.input, e.dst}, e);
      if (fresh) continue;
      PmmEdge& p = it->second;
      const int n = p.action_samples + e.action_samples;
      p.action_mean = (p.action_mean * p.action_samples + e.action_mean * e.action_samples) / n;
      p.action_samples = n;
    }
    std::map<std::pair<StateId, SymbolId>, int> totals;
    for (const auto& [k, e] : pooled) totals[{e.src, e.input}] += e.action_samples;
    pmm.edges.clear();
    for (auto& [k, e] : pooled) {
      e.prob = static_cast<double>(e.action_samples) / totals[{e.src, e.input}];
      pmm.edges.push_back(e);
    }
    const bool was_initial = pmm.state(gone).is_initial;
    std::vector<bool> alive(pmm.states.size(), true);
    alive[gone] = false;
    for (auto& s : pmm.states)
      if (s.id == keep && was_initial) s.is_initial = true;
    pmm = restrict_states(pmm, alive);
  }
  return pmm;
}

namespace {

std::vector<SymbolId> symbol_prefix(const Trajectory& tr, int t) {
  std::vector<SymbolId> out;
  for (int j = 0; j <= t; ++j) out.push_back(*tr.steps[j].symbol);
  return out;
}

}  // namespace

MineResult mine(const EmbeddedDb& db, const Dataset& ds, const MineConfig& cfg) {
  if (cfg.tau_sim <= 0 || cfg.tau_sim > 1) throw Error(ErrorKind::InvalidArgument, "tau_sim must lie in (0, 1]");
  if (cfg.eps_err < 0) throw Error(ErrorKind::InvalidArgument, "eps_err must be non-negative");
  if (db.traj_ids.size() != ds.trajectories.size())
    throw Error(ErrorKind::InvalidArgument, "database and dataset disagree");

  std::vector<std::size_t> tests;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i)
    if (!cfg.eq_on_holdout || i % 5 == 4) tests.push_back(i);

  MineResult res;
  res.U = initial_prefix_set(db);
  for (int round = 1; round <= cfg.max_eq_rounds; ++round) {
    expand_until_closed(res.U, db, cfg.tau_sim, cfg.closure_limit);
    Pmm hyp = build_hypothesis(res.U, db, cfg, cfg.closure_limit > 0);

    MineRound info;
    info.round = round;
    info.u_size = res.U.size();
    bool any_fail = false, grew = false;
    int failing = 0;
    for (std::size_t i : tests) {
      const auto r = nd_equivalence_query(hyp, ds.trajectories[i], cfg.eps_err);
      if (r.pass) continue;
      ++failing;
      if (grew) continue;
      if (!any_fail) {
        info.cex_traj = db.traj_ids[i];
        info.cex_t = r.t;
        info.cex_symbols = symbol_prefix(ds.trajectories[i], r.t);
      }
      any_fail = true;
      if (add_counterexample(res.U, db, i, r.t, cfg.tau_sim) > 0) {
        grew = true;
        info.cex_traj = db.traj_ids[i];
        info.cex_t = r.t;
        info.cex_symbols = symbol_prefix(ds.trajectories[i], r.t);
        break;
      }
    }
    res.rounds.push_back(info);
    res.hypotheses.push_back(hyp);
    log_debug("round " + std::to_string(round) + " |U|=" + std::to_string(info.u_size));

    const bool open = cfg.closure_limit > 0 && !is_closed(res.U, db, cfg.tau_sim);
    if (!any_fail || (!grew && !open && cfg.allow_unresolved)) {
      res.eq_passed = !any_fail;
      res.unresolved = failing;
      if (any_fail)
        log_warn(std::to_string(failing) + " trajectories fail the equivalence check and add no new members");
      res.unpruned = drop_unreachable(hyp);
      res.pmm = cfg.prune ? stable_phase_prune(res.unpruned) : res.unpruned;
      return res;
    }
    if (!grew && !open)
      throw Error(ErrorKind::MaxRoundsExceeded,
                  "counterexamples add no new members (" + std::to_string(failing) +
                      " trajectories fail); loosen eps_err or tau_sim");
  }
  throw Error(ErrorKind::MaxRoundsExceeded, "no hypothesis passed within " + std::to_string(cfg.max_eq_rounds) + " rounds");
}

MineResult mine(const Dataset& ds, const HistoryEncoder& enc, const MineConfig& cfg, int alphabet_size) {
  return mine(EmbeddedDb::build(ds, enc, alphabet_size), ds, cfg);
}

std::string rounds_to_jsonl(const std::vector<MineRound>& rounds) {
  std::string out;
  for (const auto& r : rounds) {
    Json j;
    j["round"] = r.round;
    j["|U|"] = r.u_size;
    if (r.cex_traj) {
      Json c;
      c["traj_id"] = *r.cex_traj;
      c["t"] = r.cex_t;
      c["symbols"] = r.cex_symbols;
      j["counterexample"] = c;
    } else {
      j["counterexample"] = nullptr;
    }
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace enap
