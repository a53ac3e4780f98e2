#pragma once

#include <optional>
#include <vector>

#include "enap/io.hpp"
#include "enap/nnkit.hpp"

namespace enap {

using Feature = Vec;

// phi_theta. Identity passes observations through; otherwise an MLP.
struct FeatureEncoder {
  bool identity = true;
  bool l2_normalize = false;
  int in_dim = 0;
  nn::Mlp net;

  static FeatureEncoder make_identity(int dim);
  static FeatureEncoder make_mlp(const std::vector<int>& sizes, std::uint64_t seed);
  int out_dim() const { return identity ? in_dim : net.out_dim(); }

  Feature encode(const Vec& obs) const;
  Json to_json();
  static FeatureEncoder from_json(const Json& j);
};

std::vector<Feature> encode_dataset(const FeatureEncoder& enc, const Dataset& ds);

struct Codebook {
  std::vector<Feature> centroids;
  int min_cluster_size = 0;
  bool refined = false;

  int size() const { return static_cast<int>(centroids.size()); }
};

Json codebook_to_json(const Codebook& cb);
Codebook codebook_from_json(const Json& j);

constexpr int kNoise = -1;

struct Clustering {
  Codebook codebook;
  std::vector<int> labels;  // kNoise for unassigned points
};

enum class ClusterSelection { Leaf, ExcessOfMass };

struct HdbscanOptions {
  int min_cluster_size = 5;
  int min_samples = 0;  // 0 = same as min_cluster_size
  ClusterSelection selection = ClusterSelection::Leaf;
  // When the hierarchy never splits, the root may still form one cluster out
  // of the points that join it within this distance.
  double single_cluster_epsilon = 0.0;
};

Clustering cluster_features(const std::vector<Feature>& features, const HdbscanOptions& opt);
Clustering cluster_features(const std::vector<Feature>& features, int min_cluster_size, int min_samples);

struct KMeansResult {
  Clustering clustering;
  std::vector<double> sse_history;  // one entry per assignment step
  int iterations = 0;
};

KMeansResult refine_kmeans(const std::vector<Feature>& features, int k, std::uint64_t seed);
// Lloyd iterations from the given centroids.
KMeansResult refine_kmeans(const std::vector<Feature>& features, std::vector<Feature> init);

// Nearest centroid by Euclidean distance; ties go to the smaller id.
SymbolId assign_symbol(const Codebook& cb, const Feature& f);

Dataset annotate_dataset(const Dataset& ds, const Codebook& cb, const FeatureEncoder& enc);

struct AbstractionConfig {
  int min_cluster_size = 0;  // 0 = max(5, 1% of steps)
  int min_samples = 0;
  bool refine = true;
  ClusterSelection selection = ClusterSelection::Leaf;
  int max_points = 6000;  // strided subsample above this size
  std::uint64_t seed = 0;
};

struct Abstraction {
  Codebook codebook;
  Dataset annotated;
};

Abstraction abstract_dataset(const Dataset& ds, const FeatureEncoder& enc, const AbstractionConfig& cfg);

}  // namespace enap
