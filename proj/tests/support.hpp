#pragma once

// Helpers shared by the test binaries.

#include <cmath>
#include <string>
#include <vector>

#include "docbreg/corpus.hpp"
#include "docbreg/encoder.hpp"
#include "docbreg/training.hpp"

namespace testing_support {

using namespace docbreg;

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.uniform(-scale, scale);
  return m;
}

/// Corpus of `n` documents with random token ids drawn from a vocabulary of
/// `regular` ordinary tokens; labels cycle through `labels` classes.
inline Corpus tiny_corpus(std::size_t n, std::size_t len, int regular, int labels, std::uint64_t seed) {
  Corpus c;
  for (int t = 0; t < regular; ++t) c.vocab.add("w" + std::to_string(t));
  c.num_labels = labels;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Document d;
    d.id = "doc" + std::to_string(i);
    for (std::size_t k = 0; k < len; ++k)
      d.token_ids.push_back(Vocab::kNumSpecials + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(regular))));
    d.labels = {static_cast<int>(i % static_cast<std::size_t>(labels))};
    c.documents.push_back(d);
  }
  return c;
}

inline EncoderConfig tiny_encoder(int vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.window = 4;
  c.ffn_dim = 16;
  c.proj_dim = 8;
  c.max_len = 12;
  return c;
}

/// Dense single-head attention: row 0 uses the global projections over all
/// valid positions, every other row the local ones over all valid positions.
inline Matrix dense_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const double> gq,
                              const Matrix& gk, const Matrix& gv, std::span<const std::uint8_t> valid) {
  const std::size_t n = q.rows, d = q.cols;
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const bool g = i == 0;
    std::vector<double> s(n, 0.0);
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (!valid.empty() && !valid[j]) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += (g ? gq[c] : q(i, c)) * (g ? gk(j, c) : k(j, c));
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (valid.empty() || valid[j]) z += std::exp(s[j] - mx);
    for (std::size_t j = 0; j < n; ++j) {
      if (!valid.empty() && !valid[j]) continue;
      const double p = std::exp(s[j] - mx) / z;
      for (std::size_t c = 0; c < d; ++c) out(i, c) += p * (g ? gv(j, c) : v(j, c));
    }
  }
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// Sign pattern of the subnet relu inputs when scoring [a; b].
inline std::uint64_t subnet_relu_fingerprint(const Matrix& a, const Matrix& b, const SubnetEnsemble& e, RunMode mode) {
  Matrix stacked(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), stacked.data.begin());
  std::copy(b.data.begin(), b.data.end(), stacked.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  ScoreCache sc;
  ensemble_scores(stacked, e, mode, &sc);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& v : sc.v)
    for (double x : v.data) h = (h ^ static_cast<std::uint64_t>(x > 0)) * 0x100000001b3ULL;
  return h;
}

/// Hash of every discrete choice in a training step: subnet argmaxes, relu
/// sign patterns (encoder feed-forward, projector, subnet hidden layer) and
/// max-pooling winners. A finite-difference probe that changes it has
/// stepped across a kink.
inline std::uint64_t kink_fingerprint(const std::vector<const Document*>& batch, const EncoderParams& p,
                                      const EncoderConfig& ec, const SubnetEnsemble& e, std::uint64_t step_seed,
                                      const StepResult& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
  for (std::size_t i : s.argmax_a) mix(i);
  for (std::size_t i : s.argmax_b) mix(i + 1000);
  const PairForward pf = forward_pair(batch, p, ec, step_seed, true, ExecPolicy::serial);
  for (const auto& c : pf.caches) {
    for (const auto& l : c.layers)
      for (double u : l.u.data) mix(u > 0);
    for (double z : c.z.data) mix(z > 0);
    for (std::size_t r : c.max_rows) mix(r);
  }
  mix(subnet_relu_fingerprint(pf.a, pf.b, e, RunMode::train));
  return h;
}

/// Central-difference check of the whole training step (encoder, ranking
/// loss, ensemble and divergence loss) for a fixed augmentation seed.
/// Retries with a new seed when a probe flips an argmax.
inline GradCheckResult pipeline_grad_check(EnsembleMode mode, double lambda, std::uint64_t seed,
                                           std::size_t coords = 300) {
  for (int attempt = 0; attempt < 10; ++attempt, ++seed) {
    const Corpus corpus = tiny_corpus(4, 11, 20, 2, seed);  // n = 12 with CLS
    EncoderConfig ec = tiny_encoder(static_cast<int>(corpus.vocab.size()));
    TrainConfig tc;
    tc.g = 5;
    tc.ensemble_mode = mode;
    tc.subnet_hidden = 6;
    tc.lambda = lambda;
    tc.seed = seed;
    const Checkpoint ck = initial_checkpoint(corpus, ec, tc, PretrainMode::simcse_bregman);
    std::vector<const Document*> batch;
    for (const auto& d : corpus.documents) batch.push_back(&d);
    const std::uint64_t step_seed = seed * 7 + 1;

    const StepResult r =
        compute_step(batch, ck.params, ck.encoder, ck.ensemble, tc, lambda, step_seed, ExecPolicy::serial);
    auto x = flatten(ck.params.tensors());
    const auto xe = flatten(ck.ensemble.tensors());
    x.insert(x.end(), xe.begin(), xe.end());
    auto g = flatten(r.encoder_grads.tensors());
    const auto ge = flatten(r.ensemble_grads.tensors());
    g.insert(g.end(), ge.begin(), ge.end());
    const std::size_t n_enc = x.size() - xe.size();

    auto f = [&](std::span<const double> v, std::uint64_t* fp) {
      EncoderParams p = ck.params;
      SubnetEnsemble e = ck.ensemble;
      unflatten(v.first(n_enc), p.tensors());
      unflatten(v.subspan(n_enc), e.tensors());
      const StepResult s = compute_step(batch, p, ck.encoder, e, tc, lambda, step_seed, ExecPolicy::serial);
      if (fp) *fp = kink_fingerprint(batch, p, ck.encoder, e, step_seed, s);
      return s.loss.total;
    };
    GradCheckOptions opts;
    opts.coords = coords;
    opts.seed = seed;
    try {
      return grad_check(f, x, g, opts);
    } catch (const ArgmaxTieError&) {
    }
  }
  throw ArgmaxTieError("pipeline_grad_check: every attempt crossed an argmax switch");
}

}  // namespace testing_support
