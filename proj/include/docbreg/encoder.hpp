#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "docbreg/common.hpp"
#include "docbreg/corpus.hpp"
#include "docbreg/kernels.hpp"

namespace docbreg {

enum class Pooling { mean, max, cls };
enum class RunMode { train, eval };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

struct EncoderConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  int num_layers = 1;
  int window = 16;  // even; each token sees window / 2 neighbours per side
  int ffn_dim = 64;
  double dropout = 0.1;
  double mask_rate = 0.15;
  int proj_dim = 32;
  Pooling pooling = Pooling::mean;
  int max_len = 512;  // including the leading CLS

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// A named view used to iterate parameter tensors uniformly.
struct NamedTensor {
  std::string name;
  Matrix* tensor;
};
struct ConstNamedTensor {
  std::string name;
  const Matrix* tensor;
};

struct LayerParams {
  Matrix wq, wk, wv, wo;  // local attention, d x d
  Matrix gq, gk, gv;      // global attention, d x d
  Matrix w1, b1;          // d x f, 1 x f
  Matrix w2, b2;          // f x d, 1 x d
};

struct EncoderParams {
  Matrix embeddings;  // vocab x d
  std::vector<LayerParams> layers;
  Matrix proj_w1, proj_b1;  // d x m, 1 x m
  Matrix proj_w2, proj_b2;  // m x m, 1 x m

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases. Global
  /// attention projections start as copies of the local ones.
  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);
  /// All-zero tensors of the right shapes; gradient buffers that receive
  /// embedding gradients separately pass with_embeddings = false.
  static EncoderParams zeros(const EncoderConfig& cfg, bool with_embeddings = true);

  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;

  bool operator==(const EncoderParams& o) const;
};

struct DocEmbedding {
  std::vector<double> vector;
  std::string source_doc;
};

/// [CLS] followed by at most max_len - 1 document tokens.
std::vector<TokenId> with_cls(std::span<const TokenId> doc_tokens, std::size_t max_len);

/// Replaces each non-CLS, non-PAD token by MASK with probability mask_rate.
std::vector<TokenId> augment(std::span<const TokenId> token_ids, double mask_rate, Rng& rng);

/// Masked pooling over valid rows. `argmax_rows` receives, for max pooling,
/// the winning row per column.
std::vector<double> pool(const Matrix& h, std::span<const std::uint8_t> valid, Pooling mode,
                         std::vector<std::size_t>* argmax_rows = nullptr);

/// Intermediate values of one forward pass, kept for backpropagation.
struct LayerCache {
  Matrix input;
  Matrix q, k, v, gk, gv;
  std::vector<double> gq;
  AttentionMap attention;
  Matrix context;
  Matrix attn_out;
  Matrix drop_attn;  // empty in eval mode
  Matrix h1;
  Matrix u;
  Matrix r;
  Matrix ffn_out;
  Matrix drop_ffn;
};

struct EncodeCache {
  std::vector<TokenId> ids;  // after augmentation
  std::vector<std::uint8_t> valid;
  std::vector<LayerCache> layers;
  Matrix hidden;
  std::vector<std::size_t> max_rows;
  Pooling pooling = Pooling::mean;
  Matrix pooled;  // 1 x d
  Matrix z;       // 1 x m, pre-activation
  Matrix zr;      // 1 x m
  std::vector<double> output;
  std::size_t pair_visits = 0;
};

/// Full forward pass over a sequence that already starts with CLS.
/// Throws InputTooLongError when the sequence exceeds max_len.
EncodeCache encode_forward(std::span<const TokenId> sequence, const EncoderParams& params, const EncoderConfig& cfg,
                           RunMode mode, Rng* rng, ExecPolicy policy = ExecPolicy::serial);

/// Gradient of one encoding. Dense tensors accumulate into `grads` (its
/// embedding matrix is left untouched); the per-position embedding gradient
/// is written to `d_embed_rows` (n x d), aligned with cache.ids.
void encode_backward(const EncodeCache& cache, std::span<const double> d_output, const EncoderParams& params,
                     const EncoderConfig& cfg, EncoderParams& grads, Matrix& d_embed_rows);

/// Adds per-position embedding gradients into a dense embedding gradient.
void scatter_embedding_grad(std::span<const TokenId> ids, const Matrix& d_embed_rows, Matrix& d_embeddings);

/// Encodes a document (tokens without CLS). Eval mode is deterministic; train
/// mode needs `rng` for masking and dropout.
DocEmbedding encode(const Document& doc, const EncoderParams& params, const EncoderConfig& cfg, RunMode mode,
                    Rng* rng);

/// Rows i of the two results are independently augmented encodings of
/// batch[i]. View v of document i draws from derive_seed(seed, {i, v}).
struct PairForward {
  Matrix a;
  Matrix b;
  std::vector<EncodeCache> caches;  // 2N entries, [i * 2 + v], when requested
};
PairForward forward_pair(const std::vector<const Document*>& batch, const EncoderParams& params,
                         const EncoderConfig& cfg, std::uint64_t seed, bool keep_caches,
                         ExecPolicy policy = ExecPolicy::parallel);

}  // namespace docbreg
