#pragma once

#include <optional>
#include <string>
#include <vector>

#include "enap/abstraction.hpp"
#include "enap/io.hpp"

namespace enap {

struct StructuralReport {
  std::optional<double> sr;   // absent without rollouts
  std::optional<double> srn;
  double apf = 0;
  double lvr = 0;
  double css = 0;
  double asd = 0;
  int node_count = 0;
  int edge_count = 0;

  Json to_json() const;
  // Header line plus one row: sr,srn,apf,lvr,css,asd ("n/a" for missing values).
  std::string to_csv() const;
};

// Mean over every step of |a_t - a_base|^2 along each trajectory's smallest
// symbol-consistent path.
double apf(const Pmm& pmm, const Dataset& annotated);

double lvr(const Pmm& pmm);
double asd(const Pmm& pmm);
double srn(double sr, int node_count);

// Intra-cluster over inter-cluster mean cosine of up to `per_cluster`
// representatives nearest each cluster's feature mean.
double css(const Dataset& annotated, const FeatureEncoder& enc, int per_cluster = 10);

// `successes` holds one flag per rollout; nothing means dataset-only.
StructuralReport structural_metrics(const Pmm& pmm, const std::optional<std::vector<bool>>& successes,
                                    const Dataset& annotated, const FeatureEncoder& enc);

}  // namespace enap
