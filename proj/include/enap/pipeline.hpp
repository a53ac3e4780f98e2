#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enap/control.hpp"

namespace enap {

// Every knob of the mining and training pipeline. The text form is one
// `key = value` per line; blank lines and lines starting with '#' are skipped.
struct PipelineConfig {
  double tau_sim = 0.9;
  double eps_err = 0.1;
  double eps_tiebreak = 0.5;
  double lambda_contrast = 0.5;
  double lambda_reg = 0.01;
  int rnn_hidden = 64;
  int symbol_embed = 16;
  int em_iters = 3;
  std::uint64_t seed = 0;

  int min_cluster_size = 0;
  int min_samples = 0;
  ClusterSelection selection = ClusterSelection::ExcessOfMass;
  bool refine = true;

  EncoderMode encoder = EncoderMode::TrainedRnn;
  int history_epochs = 30;
  double history_lr = 1e-3;

  bool eq_on_holdout = false;
  bool prune = true;
  int max_eq_rounds = 50;
  int closure_limit = 0;  // 0 = close fully each round
  bool allow_unresolved = true;  // keep the last hypothesis when EQ stalls

  int mstep_epochs = 200;
  int batch = 256;
  double lr = 1e-3;
  double tol = 1e-6;
  Fallback fallback = Fallback::NearestState;
  std::vector<int> residual_hidden{64, 64};

  // Sets one field from its text form; unknown keys and bad values throw.
  void set(const std::string& key, const std::string& value);
  // Throws InvalidArgument naming the first field outside its range.
  void check() const;

  // Canonical text: every key, fixed order, shortest round-tripping numbers.
  std::string to_text() const;
  static PipelineConfig from_text(const std::string& text);

  std::uint64_t hash() const;
  std::string hash_hex() const;

  AbstractionConfig abstraction() const;
  HistoryTrainConfig history(int n_symbols) const;
  MineConfig mine() const;
  MStepConfig mstep() const;
  EmConfig em() const;

  bool operator==(const PipelineConfig&) const = default;
};

const char* to_string(ClusterSelection s);
ClusterSelection cluster_selection_from_string(const std::string& s);

}  // namespace enap
