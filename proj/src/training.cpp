#include "docbreg/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace docbreg {

std::string to_string(PretrainMode m) { return m == PretrainMode::simcse ? "simcse" : "simcse+bregman"; }

PretrainMode parse_pretrain_mode(const std::string& s) {
  if (s == "simcse") return PretrainMode::simcse;
  if (s == "simcse+bregman" || s == "simcse_bregman" || s == "bregman") return PretrainMode::simcse_bregman;
  throw ConfigError("unknown pretraining mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
  if (g < 1) throw ConfigError("g must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (subnet_hidden < 1) throw ConfigError("subnet_hidden must be >= 1");
}

EnsembleConfig TrainConfig::ensemble_config(int proj_dim) const {
  EnsembleConfig e;
  e.k = g;
  e.mode = ensemble_mode;
  e.input_dim = proj_dim;
  e.hidden = subnet_hidden;
  e.batch_norm = batch_norm;
  return e;
}

// ---------------------------------------------------------------- AdamW

void adamw_step(std::span<const NamedTensor> params, std::span<const ConstNamedTensor> grads, AdamState& state,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: params/grads count differs");
  for (std::size_t t = 0; t < params.size(); ++t) {
    const Matrix& g = *grads[t].tensor;
    const Matrix& p = *params[t].tensor;
    if (g.rows != p.rows || g.cols != p.cols)
      throw std::invalid_argument("adamw_step: shape mismatch for " + params[t].name);
    if (!all_finite(g.data)) throw NumericError("non-finite gradient in tensor '" + grads[t].name + "'");
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->rows, p.tensor->cols);
      state.v.emplace_back(p.tensor->rows, p.tensor->cols);
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].tensor->data;
    const auto& g = grads[t].tensor->data;
    auto& m = state.m[t].data;
    auto& v = state.v[t].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * p[i]);
    }
  }
}

// ---------------------------------------------------------------- one step

namespace {

void add_into(std::vector<NamedTensor> dst, const std::vector<ConstNamedTensor>& src) {
  for (std::size_t t = 0; t < dst.size(); ++t) {
    const auto& s = src[t].tensor->data;
    if (s.empty()) continue;
    auto& d = dst[t].tensor->data;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }
}

void scale(std::vector<NamedTensor> ts, double f) {
  for (auto& t : ts)
    for (double& x : t.tensor->data) x *= f;
}

}  // namespace

StepResult compute_step(const std::vector<const Document*>& batch, const EncoderParams& params,
                        const EncoderConfig& enc_cfg, const SubnetEnsemble& ensemble, const TrainConfig& cfg,
                        double lambda, std::uint64_t step_seed, ExecPolicy policy) {
  const std::size_t n = batch.size();
  PairForward pf = forward_pair(batch, params, enc_cfg, step_seed, true, policy);
  ObjectiveResult mnr = mnr_objective(pf.a, pf.b, cfg.temperature);
  BregmanLossResult breg = bregman_loss(pf.a, pf.b, ensemble, cfg.sigma, RunMode::train);

  StepResult out;
  out.loss = total_loss(mnr.loss, breg.loss, lambda);
  out.stats = std::move(breg.stats);
  out.argmax_a = std::move(breg.argmax_a);
  out.argmax_b = std::move(breg.argmax_b);

  Matrix d_a = std::move(mnr.d_a);
  Matrix d_b = std::move(mnr.d_b);
  if (lambda != 0.0) {
    for (std::size_t i = 0; i < d_a.data.size(); ++i) {
      d_a.data[i] += lambda * breg.d_a.data[i];
      d_b.data[i] += lambda * breg.d_b.data[i];
    }
    out.ensemble_grads = std::move(breg.grads);
    scale(out.ensemble_grads.tensors(), lambda);
  } else {
    out.ensemble_grads = SubnetEnsemble::zeros(ensemble.config);
  }

  const std::size_t encodings = 2 * n;
  std::vector<EncoderParams> partial(encodings);
  std::vector<Matrix> d_rows(encodings);
  for_each(policy, encodings, [&](std::size_t e) {
    const std::size_t i = e / 2;
    const Matrix& d = (e % 2 == 0) ? d_a : d_b;
    partial[e] = EncoderParams::zeros(enc_cfg, false);
    encode_backward(pf.caches[e], d.row(i), params, enc_cfg, partial[e], d_rows[e]);
  });

  out.encoder_grads = EncoderParams::zeros(enc_cfg, true);
  for (std::size_t e = 0; e < encodings; ++e) {
    const EncoderParams& pe = partial[e];
    add_into(out.encoder_grads.tensors(), pe.tensors());
    scatter_embedding_grad(pf.caches[e].ids, d_rows[e], out.encoder_grads.embeddings);
  }
  return out;
}

// ---------------------------------------------------------------- pretraining loop

Checkpoint initial_checkpoint(const Corpus& corpus, const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                              PretrainMode mode) {
  cfg.validate();
  EncoderConfig ec = enc_cfg;
  const int vocab = static_cast<int>(corpus.vocab.size());
  if (ec.vocab_size == 0) ec.vocab_size = vocab;
  if (ec.vocab_size != vocab)
    throw ConfigError("encoder vocab_size " + std::to_string(ec.vocab_size) + " differs from corpus vocabulary size " +
                      std::to_string(vocab));
  ec.validate();

  Checkpoint ck;
  ck.encoder = ec;
  ck.train = cfg;
  ck.mode = mode;
  ck.params = EncoderParams::init(ec, substream(cfg.seed, "encoder"));
  ck.ensemble = SubnetEnsemble::init(cfg.ensemble_config(ec.proj_dim), substream(cfg.seed, "ensemble"));
  ck.rng_seed = cfg.seed;
  ck.step = 0;
  ck.vocab_fingerprint = corpus.vocab.fingerprint();
  ck.vocab_size = corpus.vocab.size();
  return ck;
}

namespace {

std::vector<NamedTensor> all_params(Checkpoint& ck) {
  auto ts = ck.params.tensors();
  for (auto& t : ck.ensemble.tensors()) ts.push_back(t);
  return ts;
}

std::vector<ConstNamedTensor> all_grads(const StepResult& r) {
  auto ts = r.encoder_grads.tensors();
  for (auto& t : r.ensemble_grads.tensors()) ts.push_back(t);
  return ts;
}

double subnet_grad_sq(const SubnetEnsemble& g, std::size_t j) {
  double s = 0.0;
  if (g.config.mode == EnsembleMode::affine) {
    for (double x : g.weights.row(j)) s += x * x;
    s += g.biases.data[j] * g.biases.data[j];
  } else {
    for (const auto& t : g.subnet_tensors(j))
      for (double x : t.tensor->data) s += x * x;
  }
  return s;
}

constexpr std::int64_t kDeadSubnetWindow = 500;

}  // namespace

Checkpoint pretrain(const Corpus& corpus, const EncoderConfig& enc_cfg, const TrainConfig& cfg, PretrainMode mode,
                    const PretrainOptions& opts) {
  Checkpoint ck = initial_checkpoint(corpus, enc_cfg, cfg, mode);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  if (corpus.size() < bs)
    throw ConfigError("batch_size " + std::to_string(bs) + " exceeds corpus size " + std::to_string(corpus.size()));

  const double lambda = cfg.effective_lambda(mode);
  const AdamWConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  const std::uint64_t batch_seed = substream(cfg.seed, "batches");
  const std::uint64_t augment_seed = substream(cfg.seed, "augment");

  std::uint64_t epoch = 0;
  BatchIterator it(corpus.size(), bs, derive_seed(batch_seed, {epoch}), true);
  auto next_batch = [&]() {
    for (;;) {
      auto b = it.next();
      if (b && b->size() == bs) return *b;
      // Start a fresh shuffled pass; a trailing partial batch is dropped.
      ++epoch;
      it = BatchIterator(corpus.size(), bs, derive_seed(batch_seed, {epoch}), true);
    }
  };

  std::vector<double> subnet_activity(static_cast<std::size_t>(cfg.g), 0.0);
  const std::int64_t dead_window = std::min<std::int64_t>(kDeadSubnetWindow, cfg.steps);

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    const auto idx = next_batch();
    std::vector<const Document*> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(&corpus.documents[i]);

    StepResult r;
    try {
      r = compute_step(batch, ck.params, ck.encoder, ck.ensemble, cfg, lambda,
                       derive_seed(augment_seed, {static_cast<std::uint64_t>(step)}), opts.policy);
    } catch (const NumericError& e) {
      throw NonFiniteLossError(std::string(e.what()) + " at step " + std::to_string(step), ck);
    }
    if (!std::isfinite(r.loss.total) || !std::isfinite(r.loss.mnr) || !std::isfinite(r.loss.bregman)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " (mnr=" << r.loss.mnr << ", bregman=" << r.loss.bregman << ")";
      throw NonFiniteLossError(msg.str(), ck);
    }

    if (cfg.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& g : all_grads(r))
        for (double x : g.tensor->data) sq += x * x;
      const double norm = std::sqrt(sq);
      if (norm > cfg.clip_norm) {
        const double f = cfg.clip_norm / norm;
        scale(r.encoder_grads.tensors(), f);
        scale(r.ensemble_grads.tensors(), f);
      }
    }

    if (lambda > 0.0 && step <= dead_window) {
      for (std::size_t j = 0; j < subnet_activity.size(); ++j) subnet_activity[j] += subnet_grad_sq(r.ensemble_grads, j);
      if (step == dead_window) {
        for (std::size_t j = 0; j < subnet_activity.size(); ++j) {
          if (subnet_activity[j] != 0.0) continue;
          const std::string w = "subnetwork " + std::to_string(j) + " received no gradient during the first " +
                                std::to_string(dead_window) + " steps";
          if (opts.on_warning) opts.on_warning(w);
        }
      }
    }

    try {
      adamw_step(all_params(ck), all_grads(r), ck.adam, adam);
    } catch (const NumericError& e) {
      throw NonFiniteLossError(std::string(e.what()) + " at step " + std::to_string(step), ck);
    }
    if (ck.ensemble.config.mode == EnsembleMode::mlp && ck.ensemble.config.batch_norm)
      update_running_stats(ck.ensemble, r.stats);

    ck.step = step;
    LossRecord rec{step, r.loss.mnr, r.loss.bregman, r.loss.total};
    ck.history.push_back(rec);
    if (opts.on_step) opts.on_step(rec);
    if (opts.on_checkpoint && (step % cfg.checkpoint_every == 0 || step == cfg.steps)) opts.on_checkpoint(ck);
  }
  return ck;
}

std::string loss_history_csv(const std::vector<LossRecord>& history) {
  std::string out = "step,mnr,bregman,total\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(r.step), r.mnr, r.bregman,
                  r.total);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------- gradient verification

GradCheckResult grad_check(const GradCheckFn& f, std::span<const double> x, std::span<const double> analytic,
                           const GradCheckOptions& opts) {
  if (x.size() != analytic.size()) throw std::invalid_argument("grad_check: gradient size differs from x");
  if (!(opts.step > 0.0)) throw ConfigError("grad_check step must be positive");

  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (x.size() > opts.coords) {
    Rng rng(opts.seed);
    for (std::size_t i = 0; i < opts.coords; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(opts.coords);
  }

  std::uint64_t base_fp = 0;
  f(x, &base_fp);
  std::vector<double> probe(x.begin(), x.end());
  GradCheckResult res;
  for (std::size_t c : coords) {
    const double orig = probe[c];
    std::uint64_t fp_plus = 0, fp_minus = 0;
    probe[c] = orig + opts.step;
    const double lp = f(probe, &fp_plus);
    probe[c] = orig - opts.step;
    const double lm = f(probe, &fp_minus);
    probe[c] = orig;
    if (fp_plus != base_fp || fp_minus != base_fp)
      throw ArgmaxTieError("argmax changed while probing coordinate " + std::to_string(c));
    const double numeric = (lp - lm) / (2.0 * opts.step);
    const double a = analytic[c];
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > res.max_rel_error || res.checked == 0) {
      res.max_rel_error = std::max(res.max_rel_error, rel);
      if (rel >= res.max_rel_error) res.worst_index = c;
    }
    ++res.checked;
  }
  return res;
}

std::vector<double> flatten(std::span<const ConstNamedTensor> tensors) {
  std::vector<double> out;
  for (const auto& t : tensors) out.insert(out.end(), t.tensor->data.begin(), t.tensor->data.end());
  return out;
}

void unflatten(std::span<const double> flat, std::span<const NamedTensor> tensors) {
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.tensor->data.size();
  if (total != flat.size()) throw std::invalid_argument("unflatten: size mismatch");
  std::size_t off = 0;
  for (const auto& t : tensors) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + t.tensor->data.size()), t.tensor->data.begin());
    off += t.tensor->data.size();
  }
}

}  // namespace docbreg
