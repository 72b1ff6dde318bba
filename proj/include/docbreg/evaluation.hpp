#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "docbreg/corpus.hpp"
#include "docbreg/encoder.hpp"
#include "docbreg/training.hpp"

namespace docbreg {

/// Frozen document embeddings with their gold labels.
struct EmbeddingMatrix {
  Matrix rows;  // N x m
  std::vector<std::string> doc_ids;
  std::vector<std::vector<int>> labels;
  TaskKind task_kind = TaskKind::single_label;
  int num_labels = 0;

  std::size_t size() const { return rows.rows; }
  std::size_t dim() const { return rows.cols; }
  void validate() const;
  EmbeddingMatrix subset(const std::vector<std::size_t>& indices) const;

  nlohmann::json to_json() const;
  static EmbeddingMatrix from_json(const nlohmann::json& j);
  bool operator==(const EmbeddingMatrix&) const = default;
};

struct ExtractOptions {
  std::optional<Pooling> pooling;
  std::optional<int> max_len;  // longer documents are truncated
  ExecPolicy policy = ExecPolicy::parallel;
};

/// Eval-mode encoding of every document. Throws ArtifactMismatchError when the
/// corpus vocabulary is not the one the checkpoint was trained on.
EmbeddingMatrix extract_embeddings(const Corpus& corpus, const Checkpoint& ck, const ExtractOptions& opts = {});

enum class ProbeHead { linear, mlp };
std::string to_string(ProbeHead h);
ProbeHead parse_probe_head(const std::string& s);

struct ProbeConfig {
  ProbeHead head = ProbeHead::mlp;
  int epochs = 100;
  double lr = 1e-4;
  int batch_size = 32;
  int patience = 3;
  int hidden = 256;  // mlp head only
  double weight_decay = 0.01;
  bool standardize = true;  // z-score features with training-split statistics
  std::uint64_t seed = 0;

  void validate() const;
};

struct F1Scores {
  double micro = 0.0;
  double macro = 0.0;
  std::vector<double> per_label;
};

/// Per-label F1 is 2PR/(P+R), zero when P+R = 0; micro pools TP/FP/FN over
/// all labels; macro is the unweighted mean over num_labels labels.
F1Scores f1_scores(const std::vector<std::vector<int>>& predictions, const std::vector<std::vector<int>>& gold,
                   int num_labels);

struct ProbeReport {
  std::string setting;  // "mlp" or "linear"
  std::string model;
  std::string dataset;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_label_f1;
  double dev_macro_f1 = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  std::optional<double> wall_clock_s;

  nlohmann::json to_json() const;
  static ProbeReport from_json(const nlohmann::json& j);
};

/// Trains a probe on frozen embeddings with early stopping on dev macro-F1
/// and reports test scores of the best dev epoch. Throws DegenerateError
/// when the training split holds a single class.
ProbeReport train_probe(const EmbeddingMatrix& train, const EmbeddingMatrix& dev, const EmbeddingMatrix& test,
                        const ProbeConfig& cfg);

struct FewShotReport {
  int shots = 0;
  std::vector<ProbeReport> runs;
  double mean_micro = 0.0, sd_micro = 0.0;
  double mean_macro = 0.0, sd_macro = 0.0;

  nlohmann::json to_json() const;
};

/// Indices of `shots` training examples per class (first label for
/// multi-label data), in original order. Throws ConfigError listing any class
/// with too few examples.
std::vector<std::size_t> sample_shots(const EmbeddingMatrix& train, int shots, std::uint64_t seed);

/// Run i samples with seed cfg.seed + i and probes with that same seed.
/// Standard deviations are sample deviations (zero for a single run).
FewShotReport fewshot_eval(const EmbeddingMatrix& train, const EmbeddingMatrix& dev, const EmbeddingMatrix& test,
                           int shots, int num_seeds, const ProbeConfig& cfg);

struct CollapseMetrics {
  double effective_rank = 0.0;
  double uniformity = 0.0;
};

/// effective_rank = exp(entropy of the normalized singular values of the
/// mean-centred rows); uniformity = log mean over pairs of
/// exp(-2 |u_i - u_j|^2) for unit-normalized rows.
CollapseMetrics collapse_metrics(const Matrix& e);

/// Markdown grid: one block per setting, one row per model, micro/macro F1
/// columns per dataset and an average micro-F1 column.
std::string render_report(const std::vector<ProbeReport>& reports);

}  // namespace docbreg
