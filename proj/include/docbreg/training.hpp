#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "docbreg/corpus.hpp"
#include "docbreg/encoder.hpp"
#include "docbreg/objectives.hpp"

namespace docbreg {

enum class PretrainMode { simcse, simcse_bregman };
std::string to_string(PretrainMode m);
PretrainMode parse_pretrain_mode(const std::string& s);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double lr = 3e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double lambda = 2.0;
  double sigma = 2.0;
  int g = 10;
  double temperature = 0.1;
  int checkpoint_every = 500;
  double clip_norm = 0.0;  // 0 disables clipping
  EnsembleMode ensemble_mode = EnsembleMode::mlp;
  int subnet_hidden = 16;
  bool batch_norm = true;

  void validate() const;
  /// Lambda actually applied: zero in simcse mode.
  double effective_lambda(PretrainMode mode) const { return mode == PretrainMode::simcse ? 0.0 : lambda; }
  EnsembleConfig ensemble_config(int proj_dim) const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamWConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

/// Decoupled weight decay:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
/// Every gradient is checked before any parameter moves; a non-finite entry
/// raises NumericError naming the tensor and leaves params and state intact.
void adamw_step(std::span<const NamedTensor> params, std::span<const ConstNamedTensor> grads, AdamState& state,
                const AdamWConfig& cfg);

struct LossRecord {
  std::int64_t step = 0;
  double mnr = 0.0;
  double bregman = 0.0;
  double total = 0.0;

  bool operator==(const LossRecord&) const = default;
};

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  EncoderConfig encoder;
  TrainConfig train;
  PretrainMode mode = PretrainMode::simcse_bregman;
  EncoderParams params;
  SubnetEnsemble ensemble;
  AdamState adam;  // encoder tensors followed by ensemble tensors
  std::uint64_t rng_seed = 0;
  std::int64_t step = 0;
  std::vector<LossRecord> history;
  std::uint64_t vocab_fingerprint = 0;
  std::uint64_t vocab_size = 0;
};

/// One optimization step's forward/backward, without the parameter update.
struct StepResult {
  LossBreakdown loss;
  EncoderParams encoder_grads;
  SubnetEnsemble ensemble_grads;
  BatchStats stats;
  std::vector<std::size_t> argmax_a, argmax_b;
};

StepResult compute_step(const std::vector<const Document*>& batch, const EncoderParams& params,
                        const EncoderConfig& enc_cfg, const SubnetEnsemble& ensemble, const TrainConfig& cfg,
                        double lambda, std::uint64_t step_seed, ExecPolicy policy = ExecPolicy::parallel);

/// Raised when the loss turns non-finite; carries the last good checkpoint.
struct NonFiniteLossError : NumericError {
  NonFiniteLossError(const std::string& what, Checkpoint last_good)
      : NumericError(what), checkpoint(std::move(last_good)) {}
  Checkpoint checkpoint;
};

struct PretrainOptions {
  ExecPolicy policy = ExecPolicy::parallel;
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const std::string&)> on_warning;
};

/// Step-0 state: the initialized encoder and ensemble a pretraining run starts from.
Checkpoint initial_checkpoint(const Corpus& corpus, const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                              PretrainMode mode);

/// Siamese contrastive pretraining. Single-thread and multi-thread runs
/// produce identical checkpoints: per-document work is reduced in a fixed order.
Checkpoint pretrain(const Corpus& corpus, const EncoderConfig& enc_cfg, const TrainConfig& cfg, PretrainMode mode,
                    const PretrainOptions& opts = {});

/// step, mnr, bregman, total
std::string loss_history_csv(const std::vector<LossRecord>& history);

// ---------------------------------------------------------------- gradient verification

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t coords = 200;
  std::uint64_t seed = 0;
  double denom_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Loss evaluated at x. `fingerprint` receives a hash of any discrete choices
/// (argmax indices) so that crossing a switch can be detected.
using GradCheckFn = std::function<double(std::span<const double> x, std::uint64_t* fingerprint)>;

/// Central differences on a random subset of coordinates (all of them when
/// x has at most `coords` entries). Relative error is
/// |a - n| / max(|a|, |n|, denom_floor). Throws ArgmaxTieError when a probe
/// changes the fingerprint.
GradCheckResult grad_check(const GradCheckFn& f, std::span<const double> x, std::span<const double> analytic,
                           const GradCheckOptions& opts = {});

std::vector<double> flatten(std::span<const ConstNamedTensor> tensors);
void unflatten(std::span<const double> flat, std::span<const NamedTensor> tensors);

}  // namespace docbreg
