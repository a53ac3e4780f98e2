#pragma once

#include <optional>
#include <span>
#include <vector>

#include "enap/io.hpp"
#include "enap/nnkit.hpp"

namespace enap {

// A history embedding. Dense embeddings come from the RNN; symbolic ones are
// opaque tokens that behave as mutually orthogonal unit vectors.
struct Embedding {
  Vec dense;
  std::uint64_t token = 0;
  bool symbolic = false;

  static Embedding of_token(std::uint64_t t) { return Embedding{Vec(), t, true}; }
  bool operator==(const Embedding& o) const;
};

// Reserved token for the state after a trajectory's last step.
constexpr std::uint64_t kEndToken = 0x454e445f53494e4bULL;

// Cosine similarity extended to tokens: equal tokens 1, anything else 0.
double similarity(const Embedding& x, const Embedding& y);

enum class EncoderMode { TrainedRnn, RandomRnn, Exact };

const char* to_string(EncoderMode m);
EncoderMode encoder_mode_from_string(const std::string& s);

struct HistoryEncoder {
  EncoderMode mode = EncoderMode::Exact;
  nn::RnnParams rnn;
  bool normalize_output = true;

  int embed_dim() const { return mode == EncoderMode::Exact ? 0 : rnn.hidden(); }

  // Embeddings h_0..h_{T-1} of every prefix of one trajectory. The prefix
  // ending at step t reads symbols c_0..c_t and actions a_0..a_{t-1}.
  std::vector<Embedding> embed_trajectory(const std::vector<Vec>& actions,
                                          const std::vector<SymbolId>& symbols) const;
  std::vector<Embedding> embed_trajectory(const Trajectory& t) const;
  Embedding embed_history(const std::vector<std::pair<Vec, SymbolId>>& prefix) const;
  // Raw (unnormalized) hidden vectors, RNN modes only.
  std::vector<Vec> raw_hiddens(const Trajectory& t) const;

  Json to_json();
  static HistoryEncoder from_json(const Json& j);
};

HistoryEncoder make_exact_encoder();
HistoryEncoder make_random_encoder(int hidden, int action_dim, int n_symbols, int symbol_embed,
                                   std::uint64_t seed);

struct HistoryTrainConfig {
  int hidden = 64;
  int symbol_embed = 16;
  int epochs = 30;
  int batch_trajectories = 8;
  double lr = 1e-3;
  double lambda_contrast = 0.5;
  std::uint64_t seed = 0;
  int n_symbols = 0;  // 0 = largest symbol in the data + 1
};

struct HistoryTraining {
  HistoryEncoder encoder;
  std::vector<double> losses;  // full-data loss before training, then after each epoch
  nn::RnnParams with_heads;    // final parameters before the heads were dropped
};

std::vector<nn::RnnSequence> rnn_sequences(const Dataset& ds);
HistoryTraining train_history_encoder(const Dataset& ds, const HistoryTrainConfig& cfg);
// Continues training from `init` (its heads included).
HistoryTraining train_history_encoder(const Dataset& ds, const HistoryTrainConfig& cfg,
                                      nn::RnnParams init);

// 2(1/sqrt(d) - eps)^2, or nothing when 1/sqrt(d) <= eps.
std::optional<double> saturation_bound(int d, double epsilon);

// Distance of a unit-normalised h from its sign vertex scaled to unit norm.
double saturation_error(const Vec& h);

// True when cos(h1, h2) >= 1 - kappa for some kappa below the bound, i.e. the
// pair is certified to share a vertex given both are eps-saturated.
bool certified_same_vertex(const Vec& h1, const Vec& h2, double eps);

struct SaturationReport {
  double mean_abs_component = 0;
  double epsilon_hat = 0;
  int d = 0;
  std::optional<double> kappa_max;

  Json to_json() const;
};

SaturationReport saturation_report(const HistoryEncoder& enc, const Dataset& ds);

}  // namespace enap
