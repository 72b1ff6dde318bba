#pragma once

// Contrastive objectives: the in-batch multiple-negatives ranking loss over
// cosine similarities, and the Bregman-divergence loss computed from an
// ensemble of scalar-scoring subnetworks whose pointwise maximum plays the
// role of the convex functional.

#include <cstdint>
#include <string>
#include <vector>

#include "docbreg/common.hpp"
#include "docbreg/encoder.hpp"

namespace docbreg {

struct ContrastiveConfig {
  double temperature = 0.1;
  void validate() const;
};

struct BregmanConfig {
  double sigma = 2.0;
  double lambda = 2.0;
  int g = 10;  // number of subnetworks
  void validate() const;
};

enum class EnsembleMode { affine, mlp };
std::string to_string(EnsembleMode m);
EnsembleMode parse_ensemble_mode(const std::string& s);

struct EnsembleConfig {
  int k = 10;
  EnsembleMode mode = EnsembleMode::mlp;
  int input_dim = 32;
  int hidden = 16;  // mlp mode only
  bool batch_norm = true;
  double bn_momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch

  void validate() const;
  bool operator==(const EnsembleConfig&) const = default;
};

inline constexpr double kBatchNormEps = 1e-5;

/// One mlp-mode subnetwork: affine m->h, batch-norm, relu, batch-norm, affine h->1.
struct Subnet {
  Matrix w1, b1;          // m x h, 1 x h
  Matrix gamma1, beta1;   // 1 x h
  Matrix gamma2, beta2;   // 1 x h
  Matrix w2, b2;          // h x 1, 1 x 1
  Matrix run_mean1, run_var1, run_mean2, run_var2;  // buffers, not trained
};

class SubnetEnsemble {
 public:
  EnsembleConfig config;
  Matrix weights;  // affine mode: k x m
  Matrix biases;   // affine mode: 1 x k
  std::vector<Subnet> subnets;

  static SubnetEnsemble init(const EnsembleConfig& cfg, std::uint64_t seed);
  static SubnetEnsemble zeros(const EnsembleConfig& cfg);

  std::size_t k() const { return static_cast<std::size_t>(config.k); }
  /// Trainable tensors.
  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;
  /// Batch-norm running statistics.
  std::vector<NamedTensor> buffers();
  std::vector<ConstNamedTensor> buffers() const;
  /// Trainable tensors belonging to subnetwork `j`.
  std::vector<ConstNamedTensor> subnet_tensors(std::size_t j) const;

  bool operator==(const SubnetEnsemble& o) const;
};

/// Batch statistics of one train-mode scoring pass (mlp mode with batch norm).
struct BatchStats {
  std::vector<Matrix> mean1, var1, mean2, var2;  // per subnet, 1 x h
};

struct ScoreCache {
  RunMode mode = RunMode::eval;
  Matrix input;
  // mlp mode, per subnet
  std::vector<Matrix> u_hat;    // normalized first affine output
  std::vector<Matrix> v;        // relu input
  std::vector<Matrix> v_act;    // relu output
  std::vector<Matrix> v_hat;    // normalized relu output
  std::vector<Matrix> head_in;  // input of the final affine map
  std::vector<Matrix> inv_std1, inv_std2;
  BatchStats stats;
};

/// Scores every row of `x` (R x m) under all k subnetworks: R x k.
Matrix ensemble_scores(const Matrix& x, const SubnetEnsemble& e, RunMode mode, ScoreCache* cache = nullptr);
/// Backpropagates d_scores (R x k); accumulates parameter gradients into
/// `grads` and writes dx (R x m).
void ensemble_scores_backward(const ScoreCache& cache, const Matrix& d_scores, const SubnetEnsemble& e,
                              SubnetEnsemble& grads, Matrix& dx);
/// running = momentum * running + (1 - momentum) * batch.
void update_running_stats(SubnetEnsemble& e, const BatchStats& stats);

/// Eval-mode scores of a single vector.
std::vector<double> subnet_scores(std::span<const double> s, const SubnetEnsemble& e);
/// Smallest index attaining the maximum.
std::size_t argmax_index(std::span<const double> scores);
std::size_t argmax_subnet(std::span<const double> s, const SubnetEnsemble& e);

/// score_{argmax(s_a)}(s_a) - score_{argmax(s_b)}(s_a); never negative.
double bregman_divergence(std::span<const double> s_a, std::span<const double> s_b, const SubnetEnsemble& e);

/// exp(-G / (2 sigma^2)). Kept strictly below 1 for G > 0 and strictly above 0.
double kernel_similarity(double divergence, double sigma);

Matrix cosine_sim_matrix(const Matrix& s_a, const Matrix& s_b, ExecPolicy policy = ExecPolicy::serial);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;
};

/// -(1/N) sum_i log softmax(logits / T)_ii, with its gradient w.r.t. logits.
LossAndGrad mnr_loss(const Matrix& sim, double temperature);

/// Backpropagates a gradient on the cosine matrix to both inputs.
void cosine_sim_backward(const Matrix& s_a, const Matrix& s_b, const Matrix& sim, const Matrix& d_sim, Matrix& d_a,
                         Matrix& d_b);

struct ObjectiveResult {
  double loss = 0.0;
  Matrix d_a;
  Matrix d_b;
};

/// Cosine similarity followed by the ranking loss.
ObjectiveResult mnr_objective(const Matrix& s_a, const Matrix& s_b, double temperature);

struct BregmanLossResult {
  double loss = 0.0;
  Matrix d_a;
  Matrix d_b;
  SubnetEnsemble grads;
  Matrix divergence;  // N x N, G(a_i, b_j)
  Matrix psi;         // N x N kernel similarities
  std::vector<std::size_t> argmax_a, argmax_b;
  BatchStats stats;  // filled in train mode
};

/// Scores the stacked [S_a; S_b] in one pass (batch statistics are shared in
/// train mode), forms psi(i, j) = kernel(G(a_i, b_j)) and applies the softmax
/// ranking loss over each row of psi without temperature. Argmax indices
/// are treated as constants for the gradient.
BregmanLossResult bregman_loss(const Matrix& s_a, const Matrix& s_b, const SubnetEnsemble& e, double sigma,
                               RunMode mode);

struct LossBreakdown {
  double mnr = 0.0;
  double bregman = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(double mnr, double bregman, double lambda);

}  // namespace docbreg
