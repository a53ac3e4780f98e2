#include "enap/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "enap/control.hpp"

namespace enap {

namespace {

std::string num(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

// zero features carry no direction; count them as orthogonal
double safe_cos(const Vec& x, const Vec& y) {
  if (x.norm() == 0.0 || y.norm() == 0.0) return 0.0;
  return cosine_sim(x, y);
}

}  // namespace

Json StructuralReport::to_json() const {
  Json j;
  j["sr"] = sr ? Json(*sr) : Json("n/a");
  j["srn"] = srn ? Json(*srn) : Json("n/a");
  j["apf"] = apf;
  j["lvr"] = lvr;
  j["css"] = css;
  j["asd"] = asd;
  j["node_count"] = node_count;
  j["edge_count"] = edge_count;
  return j;
}

std::string StructuralReport::to_csv() const {
  return "sr,srn,apf,lvr,css,asd\n" + num(sr) + "," + num(srn) + "," + num(apf) + "," + num(lvr) + "," + num(css) +
         "," + num(asd) + "\n";
}

double apf(const Pmm& pmm, const Dataset& annotated) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& tr : annotated.trajectories) {
    std::vector<SymbolId> syms;
    for (const auto& s : tr.steps) {
      if (!s.symbol) throw Error(ErrorKind::UntracedDataset, "step without symbol in " + tr.traj_id);
      syms.push_back(*s.symbol);
    }
    const auto path = least_path(pmm, syms);
    if (!path) throw Error(ErrorKind::UntracedDataset, "trajectory " + tr.traj_id + " does not trace");
    for (std::size_t t = 0; t < syms.size(); ++t) {
      for (const PmmEdge* e : pmm.out_edges((*path)[t], syms[t]))
        if (e->dst == (*path)[t + 1]) {
          sum += (tr.steps[t].action - e->action_mean).squaredNorm();
          break;
        }
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorKind::EmptyDataset, "no steps to score");
  return sum / n;
}

double lvr(const Pmm& pmm) {
  if (pmm.edges.empty()) return 0;
  const auto loops = std::count_if(pmm.edges.begin(), pmm.edges.end(), [](const PmmEdge& e) { return e.src == e.dst; });
  return static_cast<double>(loops) / pmm.edges.size();
}

double asd(const Pmm& pmm) {
  const std::size_t m = pmm.edges.size();
  if (m < 2) return 0;
  double sum = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) sum += (pmm.edges[i].action_mean - pmm.edges[j].action_mean).norm();
  return sum / (m * (m - 1) / 2.0);
}

double srn(double sr, int node_count) {
  if (node_count <= 0) throw Error(ErrorKind::InvalidArgument, "machine has no states");
  return sr / node_count;
}

double css(const Dataset& annotated, const FeatureEncoder& enc, int per_cluster) {
  std::map<SymbolId, std::vector<Feature>> groups;
  for (const auto& tr : annotated.trajectories)
    for (const auto& s : tr.steps) {
      if (!s.symbol) throw Error(ErrorKind::UntracedDataset, "step without symbol");
      groups[*s.symbol].push_back(enc.encode(s.obs));
    }
  std::vector<std::vector<Feature>> reps;
  for (auto& [c, fs] : groups) {
    Vec mean = Vec::Zero(fs.front().size());
    for (const auto& f : fs) mean += f;
    mean /= static_cast<double>(fs.size());
    std::vector<std::size_t> idx(fs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return (fs[a] - mean).squaredNorm() < (fs[b] - mean).squaredNorm(); });
    std::vector<Feature> keep;
    for (std::size_t i = 0; i < idx.size() && static_cast<int>(i) < per_cluster; ++i) keep.push_back(fs[idx[i]]);
    reps.push_back(std::move(keep));
  }
  double intra = 0, inter = 0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t a = 0; a < reps.size(); ++a)
    for (std::size_t i = 0; i < reps[a].size(); ++i) {
      for (std::size_t j = i + 1; j < reps[a].size(); ++j, ++n_intra) intra += safe_cos(reps[a][i], reps[a][j]);
      for (std::size_t b = a + 1; b < reps.size(); ++b)
        for (const auto& y : reps[b]) {
          inter += safe_cos(reps[a][i], y);
          ++n_inter;
        }
    }
  const double mi = n_intra ? intra / n_intra : 1.0;
  const double me = n_inter ? inter / n_inter : 0.0;
  return mi / std::max(me, 1e-6);
}

StructuralReport structural_metrics(const Pmm& pmm, const std::optional<std::vector<bool>>& successes,
                                    const Dataset& annotated, const FeatureEncoder& enc) {
  StructuralReport r;
  r.node_count = static_cast<int>(pmm.states.size());
  r.edge_count = static_cast<int>(pmm.edges.size());
  if (successes) {
    if (successes->empty()) throw Error(ErrorKind::EmptyRollouts, "no rollouts given");
    r.sr = static_cast<double>(std::count(successes->begin(), successes->end(), true)) / successes->size();
    r.srn = srn(*r.sr, r.node_count);
  }
  r.apf = apf(pmm, annotated);
  r.lvr = lvr(pmm);
  r.asd = asd(pmm);
  r.css = css(annotated, enc);
  return r;
}

}  // namespace enap
