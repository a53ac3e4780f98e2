#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "enap/io.hpp"

namespace enap::nn {

// A named view over a parameter's storage (column-major rows x cols).
struct Tensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  double* data = nullptr;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

Tensor view(const std::string& name, Mat& m);
Tensor view(const std::string& name, Vec& v);

Json tensors_to_json(const std::vector<Tensor>& ts);
// Fills existing storage; shapes must match exactly.
void tensors_from_json(const Json& j, const std::vector<Tensor>& ts);
// Shape lookup by name, for reconstructing models before loading.
std::pair<int, int> tensor_shape(const Json& j, const std::string& name);

Mat randn(int rows, int cols, double scale, std::mt19937_64& rng);

// ReLU hidden layers, linear output.
struct Mlp {
  std::vector<Mat> W;
  std::vector<Vec> b;

  static Mlp create(const std::vector<int>& sizes, std::uint64_t seed);
  static Mlp zeros_like(const Mlp& other);
  int in_dim() const { return static_cast<int>(W.front().cols()); }
  int out_dim() const { return static_cast<int>(W.back().rows()); }
  std::vector<int> sizes() const;

  struct Cache {
    std::vector<Vec> acts;  // acts[0] = input, acts[i+1] = output of layer i
  };
  Vec forward(const Vec& x) const;
  Vec forward(const Vec& x, Cache& cache) const;
  // Accumulates parameter gradients for dL/dy into `grad`; returns dL/dx.
  Vec backward(const Cache& cache, const Vec& dy, Mlp& grad) const;

  std::vector<Tensor> tensors(const std::string& prefix = "mlp");
  Json to_json();
  static Mlp from_json(const Json& j, const std::string& prefix = "mlp");
};

// Mean over samples of the squared error summed over output components.
double mlp_mse_loss_and_grads(const Mlp& p, const std::vector<Vec>& xs, const std::vector<Vec>& ys,
                              Mlp& grad);

struct RnnParams {
  Mat Wh, Wx;
  Vec b;
  Mat Wa;  // action head
  Vec ba;
  Mat Ws;  // next-symbol head
  Vec bs;
  Mat E;   // symbol embedding, one column per symbol

  static RnnParams create(int hidden, int action_dim, int n_symbols, int symbol_embed,
                          std::uint64_t seed, double scale = 0.0);
  static RnnParams zeros_like(const RnnParams& other);
  int hidden() const { return static_cast<int>(Wh.rows()); }
  int action_dim() const { return static_cast<int>(Wx.cols() - E.rows()); }
  int n_symbols() const { return static_cast<int>(E.cols()); }
  int symbol_embed() const { return static_cast<int>(E.rows()); }
  bool has_heads() const { return Wa.rows() > 0 && Ws.rows() > 0; }
  // Drops the auxiliary prediction heads; only the recurrence remains.
  void discard_heads();

  std::vector<Tensor> tensors();
  Json to_json();
  static RnnParams from_json(const Json& j);
};

struct RnnOutput {
  std::vector<Vec> hiddens;
  std::vector<Vec> act_preds;
  std::vector<Vec> state_logits;
};

// x_t = [previous action, E(c_t)]
std::vector<Vec> rnn_inputs(const RnnParams& p, const std::vector<Vec>& prev_actions,
                            const std::vector<SymbolId>& symbols);
RnnOutput rnn_forward(const RnnParams& p, const std::vector<Vec>& xs);

struct RnnSequence {
  std::vector<Vec> prev_actions;   // a_{t-1}, zero at t = 0
  std::vector<SymbolId> symbols;   // c_t
  std::vector<Vec> target_actions; // a_t
  std::vector<int> next_symbols;   // c_{t+1}, -1 where absent
};

struct RnnLoss {
  double total = 0, act = 0, state = 0, contrast = 0;
};

RnnLoss rnn_loss_and_grads(const RnnParams& p, const std::vector<RnnSequence>& batch,
                           double lambda_contrast, RnnParams& grad);

// Adam when adaptive, plain gradient descent otherwise.
struct Optimizer {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  bool adaptive = true;
  long step_count = 0;
  std::vector<Vec> m, v;

  void step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads);
};

// Cosine and its gradient w.r.t. both arguments; zero vectors give 0 and no
// gradient.
double cosine_with_grad(const Vec& x, const Vec& y, Vec* dx, Vec* dy);

}  // namespace enap::nn
