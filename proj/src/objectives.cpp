#include "docbreg/objectives.hpp"

#include <cmath>
#include <limits>

namespace docbreg {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
}

void BregmanConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (g < 2) throw ConfigError("g must be >= 2");
}

std::string to_string(EnsembleMode m) { return m == EnsembleMode::affine ? "affine" : "mlp"; }

EnsembleMode parse_ensemble_mode(const std::string& s) {
  if (s == "affine") return EnsembleMode::affine;
  if (s == "mlp") return EnsembleMode::mlp;
  throw ConfigError("ensemble mode must be affine or mlp, got '" + s + "'");
}

void EnsembleConfig::validate() const {
  if (k < 2) throw ConfigError("ensemble needs k >= 2 subnetworks");
  if (input_dim < 1) throw ConfigError("ensemble input_dim must be >= 1");
  if (mode == EnsembleMode::mlp && hidden < 1) throw ConfigError("ensemble hidden must be >= 1");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must lie in [0, 1)");
}

// ---------------------------------------------------------------- ensemble parameters

SubnetEnsemble SubnetEnsemble::zeros(const EnsembleConfig& cfg) {
  cfg.validate();
  SubnetEnsemble e;
  e.config = cfg;
  const auto k = static_cast<std::size_t>(cfg.k);
  const auto m = static_cast<std::size_t>(cfg.input_dim);
  const auto h = static_cast<std::size_t>(cfg.hidden);
  if (cfg.mode == EnsembleMode::affine) {
    e.weights = Matrix(k, m);
    e.biases = Matrix(1, k);
    return e;
  }
  e.subnets.resize(k);
  for (auto& s : e.subnets) {
    s.w1 = Matrix(m, h);
    s.b1 = Matrix(1, h);
    s.w2 = Matrix(h, 1);
    s.b2 = Matrix(1, 1);
    if (cfg.batch_norm) {
      s.gamma1 = Matrix(1, h);
      s.beta1 = Matrix(1, h);
      s.gamma2 = Matrix(1, h);
      s.beta2 = Matrix(1, h);
      s.run_mean1 = Matrix(1, h);
      s.run_var1 = Matrix(1, h);
      s.run_mean2 = Matrix(1, h);
      s.run_var2 = Matrix(1, h);
    }
  }
  return e;
}

SubnetEnsemble SubnetEnsemble::init(const EnsembleConfig& cfg, std::uint64_t seed) {
  SubnetEnsemble e = zeros(cfg);
  Rng rng(seed);
  const double bm = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  if (cfg.mode == EnsembleMode::affine) {
    for (double& x : e.weights.data) x = rng.uniform(-bm, bm);
    return e;
  }
  const double bh = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  for (auto& s : e.subnets) {
    for (double& x : s.w1.data) x = rng.uniform(-bm, bm);
    for (double& x : s.w2.data) x = rng.uniform(-bh, bh);
    if (cfg.batch_norm) {
      s.gamma1.fill(1.0);
      s.gamma2.fill(1.0);
      s.run_var1.fill(1.0);
      s.run_var2.fill(1.0);
    }
  }
  return e;
}

namespace {

template <class Self, class Out>
void collect_subnet(Self& s, const std::string& pre, bool bn, Out& out) {
  out.push_back({pre + "w1", &s.w1});
  out.push_back({pre + "b1", &s.b1});
  if (bn) {
    out.push_back({pre + "gamma1", &s.gamma1});
    out.push_back({pre + "beta1", &s.beta1});
    out.push_back({pre + "gamma2", &s.gamma2});
    out.push_back({pre + "beta2", &s.beta2});
  }
  out.push_back({pre + "w2", &s.w2});
  out.push_back({pre + "b2", &s.b2});
}

template <class Self, class Out>
void collect_ensemble(Self& e, Out& out) {
  if (e.config.mode == EnsembleMode::affine) {
    out.push_back({"ensemble.weights", &e.weights});
    out.push_back({"ensemble.biases", &e.biases});
    return;
  }
  for (std::size_t j = 0; j < e.subnets.size(); ++j)
    collect_subnet(e.subnets[j], "ensemble." + std::to_string(j) + ".", e.config.batch_norm, out);
}

template <class Self, class Out>
void collect_buffers(Self& e, Out& out) {
  if (e.config.mode != EnsembleMode::mlp || !e.config.batch_norm) return;
  for (std::size_t j = 0; j < e.subnets.size(); ++j) {
    const std::string pre = "ensemble." + std::to_string(j) + ".";
    auto& s = e.subnets[j];
    out.push_back({pre + "run_mean1", &s.run_mean1});
    out.push_back({pre + "run_var1", &s.run_var1});
    out.push_back({pre + "run_mean2", &s.run_mean2});
    out.push_back({pre + "run_var2", &s.run_var2});
  }
}

}  // namespace

std::vector<NamedTensor> SubnetEnsemble::tensors() {
  std::vector<NamedTensor> out;
  collect_ensemble(*this, out);
  return out;
}

std::vector<ConstNamedTensor> SubnetEnsemble::tensors() const {
  std::vector<ConstNamedTensor> out;
  collect_ensemble(*this, out);
  return out;
}

std::vector<NamedTensor> SubnetEnsemble::buffers() {
  std::vector<NamedTensor> out;
  collect_buffers(*this, out);
  return out;
}

std::vector<ConstNamedTensor> SubnetEnsemble::buffers() const {
  std::vector<ConstNamedTensor> out;
  collect_buffers(*this, out);
  return out;
}

std::vector<ConstNamedTensor> SubnetEnsemble::subnet_tensors(std::size_t j) const {
  std::vector<ConstNamedTensor> out;
  if (config.mode == EnsembleMode::mlp) {
    collect_subnet(subnets.at(j), "ensemble." + std::to_string(j) + ".", config.batch_norm, out);
  }
  return out;
}

bool SubnetEnsemble::operator==(const SubnetEnsemble& o) const {
  if (!(config == o.config)) return false;
  const auto a = tensors();
  const auto b = o.tensors();
  const auto ab = buffers();
  const auto bb = o.buffers();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i].tensor == *b[i].tensor)) return false;
  for (std::size_t i = 0; i < ab.size(); ++i)
    if (!(*ab[i].tensor == *bb[i].tensor)) return false;
  return true;
}

// ---------------------------------------------------------------- scoring

namespace {

// Normalizes columns of `x` in place; returns per-column 1/sqrt(var + eps).
Matrix batch_norm_forward(Matrix& x, const Matrix& gamma, const Matrix& beta, const Matrix& run_mean,
                          const Matrix& run_var, RunMode mode, Matrix& x_hat, Matrix* mean_out, Matrix* var_out) {
  const std::size_t R = x.rows;
  const std::size_t h = x.cols;
  Matrix mean(1, h), var(1, h), inv(1, h);
  if (mode == RunMode::train) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < h; ++c) mean.data[c] += x(r, c);
    for (double& t : mean.data) t /= static_cast<double>(R);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < h; ++c) {
        const double dlt = x(r, c) - mean.data[c];
        var.data[c] += dlt * dlt;
      }
    for (double& t : var.data) t /= static_cast<double>(R);
  } else {
    mean = run_mean;
    var = run_var;
  }
  for (std::size_t c = 0; c < h; ++c) inv.data[c] = 1.0 / std::sqrt(var.data[c] + kBatchNormEps);
  x_hat = Matrix(R, h);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < h; ++c) {
      x_hat(r, c) = (x(r, c) - mean.data[c]) * inv.data[c];
      x(r, c) = gamma.data[c] * x_hat(r, c) + beta.data[c];
    }
  if (mean_out != nullptr) *mean_out = mean;
  if (var_out != nullptr) *var_out = var;
  return inv;
}

// Given dy on the batch-norm output, accumulates dgamma/dbeta and returns dx.
Matrix batch_norm_backward(const Matrix& dy, const Matrix& x_hat, const Matrix& inv, const Matrix& gamma,
                           RunMode mode, Matrix& dgamma, Matrix& dbeta) {
  const std::size_t R = dy.rows;
  const std::size_t h = dy.cols;
  Matrix dx(R, h);
  for (std::size_t c = 0; c < h; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      sum_dy += dy(r, c);
      sum_dy_xhat += dy(r, c) * x_hat(r, c);
    }
    dgamma.data[c] += sum_dy_xhat;
    dbeta.data[c] += sum_dy;
    const double g = gamma.data[c];
    if (mode == RunMode::train) {
      const double rr = static_cast<double>(R);
      for (std::size_t r = 0; r < R; ++r)
        dx(r, c) = g * inv.data[c] / rr * (rr * dy(r, c) - sum_dy - x_hat(r, c) * sum_dy_xhat);
    } else {
      for (std::size_t r = 0; r < R; ++r) dx(r, c) = g * inv.data[c] * dy(r, c);
    }
  }
  return dx;
}

}  // namespace

Matrix ensemble_scores(const Matrix& x, const SubnetEnsemble& e, RunMode mode, ScoreCache* cache) {
  const std::size_t R = x.rows;
  const std::size_t k = e.k();
  if (x.cols != static_cast<std::size_t>(e.config.input_dim))
    throw std::invalid_argument("ensemble_scores: input width mismatch");
  Matrix scores(R, k);
  if (cache != nullptr) {
    cache->mode = mode;
    cache->input = x;
  }

  if (e.config.mode == EnsembleMode::affine) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        double s = e.biases.data[j];
        for (std::size_t c = 0; c < x.cols; ++c) s += x(r, c) * e.weights(j, c);
        scores(r, j) = s;
      }
    return scores;
  }

  const bool bn = e.config.batch_norm;
  if (cache != nullptr) {
    for (auto* vec : {&cache->u_hat, &cache->v, &cache->v_act, &cache->v_hat, &cache->head_in, &cache->inv_std1,
                      &cache->inv_std2})
      vec->assign(k, Matrix{});
    if (bn && mode == RunMode::train)
      for (auto* vec : {&cache->stats.mean1, &cache->stats.var1, &cache->stats.mean2, &cache->stats.var2})
        vec->assign(k, Matrix{});
  }
  for (std::size_t j = 0; j < k; ++j) {
    const Subnet& s = e.subnets[j];
    Matrix pre;
    serial::affine_forward(x, s.w1, s.b1.data, pre);
    Matrix u_hat, inv1;
    Matrix mean1, var1;
    if (bn) inv1 = batch_norm_forward(pre, s.gamma1, s.beta1, s.run_mean1, s.run_var1, mode, u_hat, &mean1, &var1);
    Matrix act = pre;
    for (double& t : act.data) t = t > 0.0 ? t : 0.0;
    Matrix out = act;
    Matrix v_hat, inv2, mean2, var2;
    if (bn) inv2 = batch_norm_forward(out, s.gamma2, s.beta2, s.run_mean2, s.run_var2, mode, v_hat, &mean2, &var2);
    Matrix col;
    serial::affine_forward(out, s.w2, s.b2.data, col);
    for (std::size_t r = 0; r < R; ++r) scores(r, j) = col.data[r];

    if (cache != nullptr) {
      cache->u_hat[j] = std::move(u_hat);
      cache->v[j] = std::move(pre);
      cache->v_act[j] = std::move(act);
      cache->v_hat[j] = std::move(v_hat);
      cache->head_in[j] = std::move(out);
      cache->inv_std1[j] = std::move(inv1);
      cache->inv_std2[j] = std::move(inv2);
      if (bn && mode == RunMode::train) {
        cache->stats.mean1[j] = std::move(mean1);
        cache->stats.var1[j] = std::move(var1);
        cache->stats.mean2[j] = std::move(mean2);
        cache->stats.var2[j] = std::move(var2);
      }
    }
  }
  return scores;
}

void ensemble_scores_backward(const ScoreCache& cache, const Matrix& d_scores, const SubnetEnsemble& e,
                              SubnetEnsemble& grads, Matrix& dx) {
  const Matrix& x = cache.input;
  const std::size_t R = x.rows;
  const std::size_t k = e.k();
  dx = Matrix(R, x.cols);

  if (e.config.mode == EnsembleMode::affine) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        const double g = d_scores(r, j);
        if (g == 0.0) continue;
        grads.biases.data[j] += g;
        for (std::size_t c = 0; c < x.cols; ++c) {
          grads.weights(j, c) += g * x(r, c);
          dx(r, c) += g * e.weights(j, c);
        }
      }
    return;
  }

  const bool bn = e.config.batch_norm;
  for (std::size_t j = 0; j < k; ++j) {
    const Subnet& s = e.subnets[j];
    Subnet& gs = grads.subnets[j];
    Matrix ds(R, 1);
    bool any = false;
    for (std::size_t r = 0; r < R; ++r) {
      ds.data[r] = d_scores(r, j);
      any = any || ds.data[r] != 0.0;
    }
    if (!any) continue;
    Matrix d_head(R, s.w2.rows);
    serial::affine_backward(cache.head_in[j], s.w2, ds, &d_head, gs.w2, gs.b2.data);

    Matrix d_act = bn ? batch_norm_backward(d_head, cache.v_hat[j], cache.inv_std2[j], s.gamma2, cache.mode,
                                            gs.gamma2, gs.beta2)
                      : d_head;
    for (std::size_t i = 0; i < d_act.data.size(); ++i)
      if (!(cache.v[j].data[i] > 0.0)) d_act.data[i] = 0.0;
    Matrix du = bn ? batch_norm_backward(d_act, cache.u_hat[j], cache.inv_std1[j], s.gamma1, cache.mode, gs.gamma1,
                                         gs.beta1)
                   : d_act;
    serial::affine_backward(x, s.w1, du, &dx, gs.w1, gs.b1.data);
  }
}

void update_running_stats(SubnetEnsemble& e, const BatchStats& stats) {
  if (e.config.mode != EnsembleMode::mlp || !e.config.batch_norm || stats.mean1.empty()) return;
  const double mom = e.config.bn_momentum;
  auto blend = [mom](Matrix& run, const Matrix& batch) {
    for (std::size_t c = 0; c < run.data.size(); ++c) run.data[c] = mom * run.data[c] + (1.0 - mom) * batch.data[c];
  };
  for (std::size_t j = 0; j < e.subnets.size(); ++j) {
    blend(e.subnets[j].run_mean1, stats.mean1[j]);
    blend(e.subnets[j].run_var1, stats.var1[j]);
    blend(e.subnets[j].run_mean2, stats.mean2[j]);
    blend(e.subnets[j].run_var2, stats.var2[j]);
  }
}

std::vector<double> subnet_scores(std::span<const double> s, const SubnetEnsemble& e) {
  Matrix x(1, s.size());
  std::copy(s.begin(), s.end(), x.data.begin());
  return ensemble_scores(x, e, RunMode::eval).data;
}

std::size_t argmax_index(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = j;
  return best;
}

std::size_t argmax_subnet(std::span<const double> s, const SubnetEnsemble& e) {
  return argmax_index(subnet_scores(s, e));
}

double bregman_divergence(std::span<const double> s_a, std::span<const double> s_b, const SubnetEnsemble& e) {
  const auto scores_a = subnet_scores(s_a, e);
  const std::size_t a_hat = argmax_index(scores_a);
  const std::size_t b_hat = argmax_subnet(s_b, e);
  return scores_a[a_hat] - scores_a[b_hat];
}

double kernel_similarity(double divergence, double sigma) {
  if (divergence < 0.0 || std::isnan(divergence))
    throw std::logic_error("kernel_similarity: negative divergence " + std::to_string(divergence));
  double psi = std::exp(-divergence / (2.0 * sigma * sigma));
  if (divergence > 0.0 && psi >= 1.0) psi = std::nextafter(1.0, 0.0);
  if (psi <= 0.0) psi = std::numeric_limits<double>::min();
  return psi;
}

// ---------------------------------------------------------------- losses

Matrix cosine_sim_matrix(const Matrix& s_a, const Matrix& s_b, ExecPolicy policy) {
  Matrix out;
  cosine_similarity(policy, s_a, s_b, out);
  return out;
}

namespace {

// Row-wise softmax cross-entropy with the diagonal as target; grad w.r.t. logits.
LossAndGrad diagonal_softmax_ce(const Matrix& logits) {
  const std::size_t N = logits.rows;
  LossAndGrad out;
  out.grad = Matrix(N, N);
  const double invN = 1.0 / static_cast<double>(N);
  for (std::size_t i = 0; i < N; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < N; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < N; ++j) z += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(z);
    out.loss += (lse - logits(i, i)) * invN;
    for (std::size_t j = 0; j < N; ++j) {
      const double p = std::exp(logits(i, j) - lse);
      out.grad(i, j) = (p - (i == j ? 1.0 : 0.0)) * invN;
    }
  }
  return out;
}

}  // namespace

LossAndGrad mnr_loss(const Matrix& sim, double temperature) {
  if (sim.rows != sim.cols || sim.rows == 0) throw std::invalid_argument("mnr_loss: expected a square N x N matrix");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  Matrix logits = sim;
  for (double& x : logits.data) x /= temperature;
  auto out = diagonal_softmax_ce(logits);
  for (double& g : out.grad.data) g /= temperature;
  return out;
}

void cosine_sim_backward(const Matrix& s_a, const Matrix& s_b, const Matrix& sim, const Matrix& d_sim, Matrix& d_a,
                         Matrix& d_b) {
  const std::size_t N = s_a.rows;
  const std::size_t M = s_b.rows;
  const std::size_t m = s_a.cols;
  std::vector<double> na(N), nb(M);
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (double x : s_a.row(i)) s += x * x;
    na[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < M; ++j) {
    double s = 0.0;
    for (double x : s_b.row(j)) s += x * x;
    nb[j] = std::sqrt(s);
  }
  d_a = Matrix(N, m);
  d_b = Matrix(M, m);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      const double g = d_sim(i, j);
      if (g == 0.0) continue;
      const double c = sim(i, j);
      for (std::size_t t = 0; t < m; ++t) {
        const double ah = s_a(i, t) / na[i];
        const double bh = s_b(j, t) / nb[j];
        d_a(i, t) += g * (bh - c * ah) / na[i];
        d_b(j, t) += g * (ah - c * bh) / nb[j];
      }
    }
}

ObjectiveResult mnr_objective(const Matrix& s_a, const Matrix& s_b, double temperature) {
  const Matrix sim = cosine_sim_matrix(s_a, s_b);
  const auto lg = mnr_loss(sim, temperature);
  ObjectiveResult out;
  out.loss = lg.loss;
  cosine_sim_backward(s_a, s_b, sim, lg.grad, out.d_a, out.d_b);
  return out;
}

BregmanLossResult bregman_loss(const Matrix& s_a, const Matrix& s_b, const SubnetEnsemble& e, double sigma,
                               RunMode mode) {
  const std::size_t N = s_a.rows;
  if (N == 0 || s_b.rows != N || s_a.cols != s_b.cols) throw std::invalid_argument("bregman_loss: shape mismatch");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  const std::size_t m = s_a.cols;

  Matrix stacked(2 * N, m);
  std::copy(s_a.data.begin(), s_a.data.end(), stacked.data.begin());
  std::copy(s_b.data.begin(), s_b.data.end(), stacked.data.begin() + static_cast<std::ptrdiff_t>(N * m));
  ScoreCache cache;
  const Matrix scores = ensemble_scores(stacked, e, mode, &cache);
  if (!all_finite(scores.data)) throw NumericError("bregman_loss: non-finite subnetwork scores");

  BregmanLossResult out;
  out.argmax_a.resize(N);
  out.argmax_b.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    out.argmax_a[i] = argmax_index(scores.row(i));
    out.argmax_b[i] = argmax_index(scores.row(N + i));
  }
  out.divergence = Matrix(N, N);
  out.psi = Matrix(N, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      const double G = scores(i, out.argmax_a[i]) - scores(i, out.argmax_b[j]);
      out.divergence(i, j) = G;
      out.psi(i, j) = kernel_similarity(G, sigma);
    }

  const auto ce = diagonal_softmax_ce(out.psi);
  out.loss = ce.loss;

  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
  Matrix d_scores(2 * N, e.k());
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      const double dG = ce.grad(i, j) * (-out.psi(i, j) * inv_two_sigma_sq);
      d_scores(i, out.argmax_a[i]) += dG;
      d_scores(i, out.argmax_b[j]) -= dG;
    }

  out.grads = SubnetEnsemble::zeros(e.config);
  Matrix dx;
  ensemble_scores_backward(cache, d_scores, e, out.grads, dx);
  out.d_a = Matrix(N, m);
  out.d_b = Matrix(N, m);
  std::copy(dx.data.begin(), dx.data.begin() + static_cast<std::ptrdiff_t>(N * m), out.d_a.data.begin());
  std::copy(dx.data.begin() + static_cast<std::ptrdiff_t>(N * m), dx.data.end(), out.d_b.data.begin());
  out.stats = std::move(cache.stats);
  return out;
}

LossBreakdown total_loss(double mnr, double bregman, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  return {mnr, bregman, lambda, mnr + lambda * bregman};
}

}  // namespace docbreg
