#include "enap/abstraction.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

namespace enap {

FeatureEncoder FeatureEncoder::make_identity(int dim) {
  FeatureEncoder e;
  e.identity = true;
  e.in_dim = dim;
  return e;
}

FeatureEncoder FeatureEncoder::make_mlp(const std::vector<int>& sizes, std::uint64_t seed) {
  FeatureEncoder e;
  e.identity = false;
  e.net = nn::Mlp::create(sizes, seed);
  e.in_dim = sizes.front();
  return e;
}

Feature FeatureEncoder::encode(const Vec& obs) const {
  if (obs.size() != in_dim)
    throw Error(ErrorKind::DimensionMismatch, "encoder expects " + std::to_string(in_dim) +
                                                  " inputs, got " + std::to_string(obs.size()));
  Feature f = identity ? obs : net.forward(obs);
  if (l2_normalize) {
    const double n = f.norm();
    if (n > 0) f /= n;
  }
  return f;
}

Json FeatureEncoder::to_json() {
  Json j;
  j["identity"] = identity;
  j["l2_normalize"] = l2_normalize;
  j["in_dim"] = in_dim;
  j["net"] = identity ? Json(nullptr) : net.to_json();
  return j;
}

FeatureEncoder FeatureEncoder::from_json(const Json& j) {
  FeatureEncoder e;
  e.identity = j.at("identity").get<bool>();
  e.l2_normalize = j.at("l2_normalize").get<bool>();
  e.in_dim = j.at("in_dim").get<int>();
  if (!e.identity) e.net = nn::Mlp::from_json(j.at("net"));
  return e;
}

std::vector<Feature> encode_dataset(const FeatureEncoder& enc, const Dataset& ds) {
  if (ds.obs_dim != enc.in_dim) throw Error(ErrorKind::DimensionMismatch, "encoder/dataset dimension");
  std::vector<Feature> out;
  out.reserve(ds.total_steps());
  for (const auto& t : ds.trajectories)
    for (const auto& s : t.steps) out.push_back(enc.encode(s.obs));
  return out;
}

Json codebook_to_json(const Codebook& cb) {
  Json j;
  Json cs = Json::array();
  for (const auto& c : cb.centroids) cs.push_back(vec_to_json(c));
  j["centroids"] = cs;
  j["min_cluster_size"] = cb.min_cluster_size;
  j["refined"] = cb.refined;
  return j;
}

Codebook codebook_from_json(const Json& j) {
  try {
    Codebook cb;
    for (const auto& c : j.at("centroids")) cb.centroids.push_back(vec_from_json(c));
    cb.min_cluster_size = j.at("min_cluster_size").get<int>();
    cb.refined = j.at("refined").get<bool>();
    if (cb.centroids.empty()) throw Error(ErrorKind::EmptyCodebook, "codebook has no centroids");
    return cb;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed codebook: ") + e.what());
  }
}

namespace {

double dist(const Feature& a, const Feature& b) { return (a - b).norm(); }

Codebook centroids_from_labels(const std::vector<Feature>& f, const std::vector<int>& labels, int k) {
  Codebook cb;
  cb.centroids.assign(k, Vec::Zero(f.front().size()));
  std::vector<int> count(k, 0);
  for (std::size_t i = 0; i < f.size(); ++i)
    if (labels[i] >= 0) {
      cb.centroids[labels[i]] += f[i];
      ++count[labels[i]];
    }
  for (int c = 0; c < k; ++c) cb.centroids[c] /= std::max(count[c], 1);
  return cb;
}

struct Dendro {
  int left, right;
  double dist;
  int size;
};

double lambda_of(double d) { return d <= 1e-12 ? 1e12 : 1.0 / d; }

}  // namespace

Clustering cluster_features(const std::vector<Feature>& f, int min_cluster_size, int min_samples) {
  HdbscanOptions opt;
  opt.min_cluster_size = min_cluster_size;
  opt.min_samples = min_samples;
  return cluster_features(f, opt);
}

Clustering cluster_features(const std::vector<Feature>& f, const HdbscanOptions& opt) {
  const int n = static_cast<int>(f.size());
  const int mcs = opt.min_cluster_size;
  const int ms = opt.min_samples > 0 ? opt.min_samples : mcs;
  if (mcs < 2) throw Error(ErrorKind::InvalidArgument, "min_cluster_size must be at least 2");
  if (n < mcs) throw Error(ErrorKind::NoClustersFound, "fewer points than min_cluster_size");
  for (const auto& x : f)
    if (x.size() != f.front().size()) throw Error(ErrorKind::DimensionMismatch, "ragged features");

  // core distance: distance to the ms-th nearest point, the point itself included
  std::vector<double> core(n);
  {
    std::vector<double> row(n);
    const int kth = std::min(ms, n) - 1;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) row[j] = dist(f[i], f[j]);
      std::nth_element(row.begin(), row.begin() + kth, row.end());
      core[i] = row[kth];
    }
  }

  // Prim over mutual reachability, distances computed on the fly
  struct MstEdge {
    int a, b;
    double w;
  };
  std::vector<MstEdge> mst;
  {
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<int> from(n, -1);
    std::vector<char> in(n, 0);
    int cur = 0;
    in[0] = 1;
    for (int step = 1; step < n; ++step) {
      int next = -1;
      for (int j = 0; j < n; ++j) {
        if (in[j]) continue;
        const double mr = std::max({core[cur], core[j], dist(f[cur], f[j])});
        if (mr < best[j]) {
          best[j] = mr;
          from[j] = cur;
        }
        if (next < 0 || best[j] < best[next]) next = j;
      }
      in[next] = 1;
      mst.push_back({from[next], next, best[next]});
      cur = next;
    }
  }
  std::stable_sort(mst.begin(), mst.end(), [](const MstEdge& x, const MstEdge& y) { return x.w < y.w; });

  // single-linkage dendrogram; node ids >= n are merges
  std::vector<Dendro> nodes(std::max(n - 1, 0));
  {
    std::vector<int> parent(2 * n - 1), top(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::iota(top.begin(), top.end(), 0);
    std::vector<int> sz(n, 1);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    for (int k = 0; k < n - 1; ++k) {
      int ra = find(mst[k].a), rb = find(mst[k].b);
      int na = top[ra], nb = top[rb];
      int sa = na < n ? 1 : nodes[na - n].size;
      int sb = nb < n ? 1 : nodes[nb - n].size;
      nodes[k] = {na, nb, mst[k].w, sa + sb};
      parent[rb] = ra;
      top[ra] = n + k;
    }
  }
  auto size_of = [&](int node) { return node < n ? 1 : nodes[node - n].size; };

  // condensed tree
  struct Cluster {
    int parent;
    double birth;  // distance at which it split off
    std::vector<int> children;
    double stability = 0;
    int size;
  };
  std::vector<Cluster> clusters{{-1, std::numeric_limits<double>::infinity(), {}, 0, n}};
  std::vector<int> fall_cluster(n, 0);
  std::vector<double> fall_dist(n, 0.0);

  auto drop_all = [&](int node, int cid, double d) {
    std::vector<int> st{node};
    while (!st.empty()) {
      int x = st.back();
      st.pop_back();
      if (x < n) {
        fall_cluster[x] = cid;
        fall_dist[x] = d;
      } else {
        st.push_back(nodes[x - n].left);
        st.push_back(nodes[x - n].right);
      }
    }
  };

  if (n == 1) {
    fall_dist[0] = 0.0;
  } else {
    std::vector<std::pair<int, int>> st{{2 * n - 2, 0}};
    while (!st.empty()) {
      auto [node, cid] = st.back();
      st.pop_back();
      if (node < n) {
        // only reachable when a single point keeps a cluster alive
        fall_cluster[node] = cid;
        fall_dist[node] = 0.0;
        continue;
      }
      const Dendro& d = nodes[node - n];
      const bool lbig = size_of(d.left) >= mcs, rbig = size_of(d.right) >= mcs;
      if (lbig && rbig) {
        for (int child : {d.left, d.right}) {
          int id = static_cast<int>(clusters.size());
          clusters.push_back({cid, d.dist, {}, 0, size_of(child)});
          clusters[cid].children.push_back(id);
          st.push_back({child, id});
        }
      } else if (lbig) {
        drop_all(d.right, cid, d.dist);
        st.push_back({d.left, cid});
      } else if (rbig) {
        drop_all(d.left, cid, d.dist);
        st.push_back({d.right, cid});
      } else {
        drop_all(node, cid, d.dist);
      }
    }
  }

  std::vector<char> selected(clusters.size(), 0);
  std::vector<int> labels(n, kNoise);
  if (clusters.size() == 1) {
    int members = 0;
    for (int i = 0; i < n; ++i) members += fall_dist[i] <= opt.single_cluster_epsilon;
    if (members < mcs) throw Error(ErrorKind::NoClustersFound, "no dense region found");
    for (int i = 0; i < n; ++i)
      if (fall_dist[i] <= opt.single_cluster_epsilon) labels[i] = 0;
    Clustering out;
    out.labels = labels;
    out.codebook = centroids_from_labels(f, labels, 1);
    out.codebook.min_cluster_size = mcs;
    return out;
  }

  if (opt.selection == ClusterSelection::Leaf) {
    for (std::size_t c = 1; c < clusters.size(); ++c) selected[c] = clusters[c].children.empty();
  } else {
    for (int i = 0; i < n; ++i) {
      auto& C = clusters[fall_cluster[i]];
      C.stability += lambda_of(fall_dist[i]) - lambda_of(C.birth);
    }
    for (std::size_t c = 1; c < clusters.size(); ++c) {
      auto& P = clusters[clusters[c].parent];
      P.stability += clusters[c].size * (lambda_of(clusters[c].birth) - lambda_of(P.birth));
    }
    // children always have larger ids than their parent
    std::vector<double> best(clusters.size());
    for (std::size_t c = clusters.size(); c-- > 1;) {
      double kids = 0;
      for (int ch : clusters[c].children) kids += best[ch];
      if (!clusters[c].children.empty() && kids > clusters[c].stability) {
        best[c] = kids;
      } else {
        best[c] = clusters[c].stability;
        selected[c] = 1;
        std::vector<int> st(clusters[c].children);
        while (!st.empty()) {
          int x = st.back();
          st.pop_back();
          selected[x] = 0;
          for (int ch : clusters[x].children) st.push_back(ch);
        }
      }
    }
  }

  // map every condensed cluster to the selected ancestor (or itself)
  std::vector<int> owner(clusters.size(), -1);
  for (std::size_t c = 1; c < clusters.size(); ++c) {
    int p = clusters[c].parent;
    owner[c] = selected[c] ? static_cast<int>(c) : (p > 0 ? owner[p] : -1);
  }
  // number the selected clusters by their smallest member point
  std::vector<int> first_point(clusters.size(), n);
  for (int i = 0; i < n; ++i) {
    int o = owner[fall_cluster[i]];
    if (o >= 0) first_point[o] = std::min(first_point[o], i);
  }
  std::vector<int> order;
  for (std::size_t c = 0; c < clusters.size(); ++c)
    if (first_point[c] < n) order.push_back(static_cast<int>(c));
  if (order.empty()) throw Error(ErrorKind::NoClustersFound, "every point is noise");
  std::sort(order.begin(), order.end(), [&](int a, int b) { return first_point[a] < first_point[b]; });
  std::vector<int> rank(clusters.size(), -1);
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r);
  for (int i = 0; i < n; ++i) {
    int o = owner[fall_cluster[i]];
    labels[i] = o >= 0 ? rank[o] : kNoise;
  }
  Clustering out;
  out.labels = labels;
  out.codebook = centroids_from_labels(f, labels, static_cast<int>(order.size()));
  out.codebook.min_cluster_size = mcs;
  return out;
}

KMeansResult refine_kmeans(const std::vector<Feature>& f, int k, std::uint64_t seed) {
  const int n = static_cast<int>(f.size());
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be positive");
  if (k > n) throw Error(ErrorKind::KTooLarge, "k exceeds the number of points");

  // k-means++ seeding over distinct point indices
  std::mt19937_64 rng(seed);
  std::vector<Vec> cent;
  std::vector<char> used(n, 0);
  {
    int first = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    cent.push_back(f[first]);
    used[first] = 1;
    std::vector<double> d2(n);
    for (int c = 1; c < k; ++c) {
      double total = 0;
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& m : cent) best = std::min(best, (f[i] - m).squaredNorm());
        d2[i] = used[i] ? 0.0 : best;
        total += d2[i];
      }
      int pick = -1;
      if (total > 0) {
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (int i = 0; i < n; ++i) {
          if (used[i] || d2[i] == 0.0) continue;
          pick = i;
          r -= d2[i];
          if (r <= 0) break;
        }
      }
      if (pick < 0)
        for (int i = 0; i < n && pick < 0; ++i)
          if (!used[i]) pick = i;
      used[pick] = 1;
      cent.push_back(f[pick]);
    }
  }
  return refine_kmeans(f, std::move(cent));
}

KMeansResult refine_kmeans(const std::vector<Feature>& f, std::vector<Feature> cent) {
  const int n = static_cast<int>(f.size());
  const int k = static_cast<int>(cent.size());
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be positive");
  if (k > n) throw Error(ErrorKind::KTooLarge, "k exceeds the number of points");
  for (const auto& c : cent)
    if (c.size() != f.front().size()) throw Error(ErrorKind::DimensionMismatch, "initial centroid dimension");
  KMeansResult res;
  std::vector<int> labels(n, 0);
  for (int it = 0; it < 300; ++it) {
    double sse = 0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = (f[i] - cent[0]).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double d = (f[i] - cent[c]).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      labels[i] = best;
      sse += bd;
    }
    res.sse_history.push_back(sse);
    res.iterations = it + 1;

    std::vector<Vec> next(k, Vec::Zero(f.front().size()));
    std::vector<int> count(k, 0);
    for (int i = 0; i < n; ++i) {
      next[labels[i]] += f[i];
      ++count[labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) {
        next[c] /= count[c];
        continue;
      }
      // empty cluster: take the point farthest from its centroid
      int far = 0;
      double fd = -1;
      for (int i = 0; i < n; ++i) {
        double d = (f[i] - cent[labels[i]]).squaredNorm();
        if (count[labels[i]] > 1 && d > fd) {
          fd = d;
          far = i;
        }
      }
      next[c] = f[far];
      --count[labels[far]];
      labels[far] = c;
      count[c] = 1;
    }
    double shift = 0;
    for (int c = 0; c < k; ++c) shift = std::max(shift, (next[c] - cent[c]).norm());
    cent = std::move(next);
    if (shift < 1e-8) break;
  }
  // final labels against the final centroids
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double bd = (f[i] - cent[0]).squaredNorm();
    for (int c = 1; c < k; ++c) {
      double d = (f[i] - cent[c]).squaredNorm();
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    labels[i] = best;
  }
  res.clustering.labels = labels;
  res.clustering.codebook.centroids = cent;
  res.clustering.codebook.refined = true;
  return res;
}

SymbolId assign_symbol(const Codebook& cb, const Feature& f) {
  if (cb.centroids.empty()) throw Error(ErrorKind::EmptyCodebook, "codebook has no centroids");
  SymbolId best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cb.centroids.size(); ++c) {
    if (cb.centroids[c].size() != f.size())
      throw Error(ErrorKind::DimensionMismatch, "feature/centroid dimension");
    double d = (cb.centroids[c] - f).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<SymbolId>(c);
    }
  }
  return best;
}

Dataset annotate_dataset(const Dataset& ds, const Codebook& cb, const FeatureEncoder& enc) {
  if (cb.centroids.empty()) throw Error(ErrorKind::EmptyCodebook, "codebook has no centroids");
  Dataset out = ds;
  for (auto& t : out.trajectories)
    for (auto& s : t.steps) s.symbol = assign_symbol(cb, enc.encode(s.obs));
  return out;
}

Abstraction abstract_dataset(const Dataset& ds, const FeatureEncoder& enc, const AbstractionConfig& cfg) {
  check_dataset(ds);
  auto features = encode_dataset(enc, ds);
  std::vector<Feature> pool;
  if (static_cast<int>(features.size()) > cfg.max_points && cfg.max_points > 0) {
    const double stride = static_cast<double>(features.size()) / cfg.max_points;
    for (int i = 0; i < cfg.max_points; ++i) pool.push_back(features[static_cast<std::size_t>(i * stride)]);
  } else {
    pool = features;
  }
  HdbscanOptions opt;
  opt.min_cluster_size = cfg.min_cluster_size > 0
                             ? cfg.min_cluster_size
                             : std::max(5, static_cast<int>(pool.size() / 100));
  opt.min_samples = cfg.min_samples;
  opt.selection = cfg.selection;
  auto cl = cluster_features(pool, opt);
  Codebook cb = cl.codebook;
  if (cfg.refine) {
    // Lloyd steps from the density clusters; k-means++ restarts can merge
    // phases that HDBSCAN already separated.
    cb = refine_kmeans(pool, cb.centroids).clustering.codebook;
    cb.min_cluster_size = opt.min_cluster_size;
  }
  return {cb, annotate_dataset(ds, cb, enc)};
}

}  // namespace enap
