#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "enap/abstraction.hpp"
#include "enap/envs.hpp"
#include "enap/history_encoder.hpp"
#include "enap/lstar_extended.hpp"

namespace enap {

constexpr int kStateEmbedDim = 16;

enum class Fallback { NearestState, HoldLast };

const char* to_string(Fallback f);
Fallback fallback_from_string(const std::string& s);

struct PolicyBundle {
  Pmm pmm;
  Codebook codebook;
  FeatureEncoder encoder;
  nn::Mlp residual;  // input [state embed, feature, a_base]
  Mat state_embed;   // kStateEmbedDim x n_states, one column per state
  double eps_tiebreak = 0.5;
  Fallback fallback = Fallback::NearestState;

  int action_dim() const { return pmm.action_dim; }
  // Throws on any broken dimension link.
  void check() const;
};

// Residual network sized for a bundle, weights seeded.
nn::Mlp make_residual(int feature_dim, int action_dim, std::uint64_t seed,
                      const std::vector<int>& hidden = {64, 64});

struct ControllerState {
  StateId q = 0;
  int step = 0;
  std::optional<SymbolId> last_symbol;
  Action last_action;
};

ControllerState initial_controller(const PolicyBundle& b);

Action coarse_action(const Pmm& pmm, StateId q, SymbolId c);

StateId next_state(const Pmm& pmm, StateId q, SymbolId c, SymbolId c_next, double eps);

struct ActResult {
  Action action;
  SymbolId symbol = 0;
  Action a_base;
  bool fallback = false;
};

// May move st.q when the fallback policy jumps to another state.
ActResult act(const PolicyBundle& b, ControllerState& st, const Observation& obs);

// Environments driven by run_episode.
class EpisodeEnv {
 public:
  virtual ~EpisodeEnv() = default;
  virtual Observation observe() const = 0;
  virtual void step(const Action& a) = 0;
  virtual bool done() const = 0;
  virtual bool success() const = 0;
};

class GridEpisode : public EpisodeEnv {
 public:
  GridWorld env;
  Observation observe() const override { return grid_obs(env.cell); }
  void step(const Action& a) override { gridworld_step(env, a); }
  bool done() const override { return env.status != Terminal::None; }
  bool success() const override { return env.status == Terminal::Goal; }
};

class MultiPhaseEpisode : public EpisodeEnv {
 public:
  MultiPhase2D env;
  MultiPhaseEpisode(std::uint64_t seed, int goal) { env.reset(seed, goal); }
  Observation observe() const override { return env.observe(); }
  void step(const Action& a) override { env.step(a); }
  bool done() const override { return env.done; }
  bool success() const override { return env.success; }
};

struct EpisodeStep {
  Observation obs;
  Action action;
  SymbolId symbol = 0;
  StateId state = 0;
  bool fallback = false;
};

struct EpisodeTrace {
  std::vector<EpisodeStep> steps;
  std::vector<StateId> states;  // visited controller states, including the final one
  bool success = false;
  int fallbacks = 0;
};

EpisodeTrace run_episode(EpisodeEnv& env, const PolicyBundle& b, int max_steps);

// Lexicographically smallest state path consistent with the symbols and, when
// actions are given, with every edge's action mean within eps_err.
std::optional<StatePath> least_path(const Pmm& pmm, const std::vector<SymbolId>& symbols,
                                    const std::vector<Vec>* actions = nullptr, double eps_err = 0);

struct JointSample {
  Observation obs;
  Action action;
  StateId q = 0;
  SymbolId c = 0;
};

struct JointGrads {
  nn::Mlp residual;
  Mat state_embed;
  nn::Mlp encoder;  // empty for the identity encoder
};

JointGrads zero_grads(const PolicyBundle& b);

double joint_loss(const PolicyBundle& b, const std::vector<JointSample>& batch, double lambda_reg,
                  JointGrads* grads = nullptr);

// State labels for every step of an annotated dataset.
std::vector<JointSample> joint_samples(const Pmm& pmm, const Dataset& annotated, double eps_err);

struct MStepConfig {
  int max_epochs = 200;
  int batch = 256;
  double lr = 1e-3;
  double lambda_reg = 0.01;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

// Optimizes the bundle's residual, state embeddings and (non-identity)
// encoder; returns the full-data loss before training and after each epoch.
std::vector<double> m_step(PolicyBundle& b, const std::vector<JointSample>& samples, const MStepConfig& cfg);

struct EmConfig {
  int K = 3;
  std::uint64_t seed = 0;
  AbstractionConfig abstraction;
  EncoderMode encoder_mode = EncoderMode::TrainedRnn;
  HistoryTrainConfig history;
  MineConfig mine;
  MStepConfig mstep;
  double eps_tiebreak = 0.5;
  Fallback fallback = Fallback::NearestState;
  std::vector<int> residual_hidden{64, 64};
};

struct EmIteration {
  int k = 0;
  std::size_t n_symbols = 0;
  std::size_t n_states = 0;
  std::size_t n_states_unpruned = 0;
  std::size_t mine_rounds = 0;
  bool eq_passed = false;
  double train_mse = 0;  // action MSE of the bundle on the training data
  std::vector<double> mstep_losses;
  std::vector<double> history_losses;
};

struct EmResult {
  PolicyBundle bundle;
  HistoryEncoder history;
  Dataset annotated;
  std::vector<EmIteration> iterations;
  std::vector<MineRound> last_rounds;
};

EmResult em_train(const Dataset& ds, const FeatureEncoder& init_enc, const EmConfig& cfg);

// Mean squared action error (summed over components) of the bundle replaying
// the dataset's observations with teacher-forced states.
double bundle_train_mse(const PolicyBundle& b, const std::vector<JointSample>& samples);

// Plain behaviour cloning baseline: features -> action with the residual's
// hidden sizes.
struct BcPolicy {
  FeatureEncoder encoder;
  nn::Mlp net;
  Action operator()(const Observation& obs) const;
};

BcPolicy train_bc(const Dataset& ds, const FeatureEncoder& enc, const MStepConfig& cfg,
                  const std::vector<int>& hidden = {64, 64});

EpisodeTrace run_bc_episode(EpisodeEnv& env, const BcPolicy& p, int max_steps);

// Checkpoint directory: bundle.json, pmm.json, codebook.json, encoder.json, residual.json.
void save_bundle(const PolicyBundle& b, const std::filesystem::path& dir);
PolicyBundle load_bundle(const std::filesystem::path& dir);

}  // namespace enap
