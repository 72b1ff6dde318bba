#include "docbreg/encoder.hpp"

#include <cmath>
#include <limits>

namespace docbreg {

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
    case Pooling::cls: return "cls";
  }
  return "mean";
}

Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  if (s == "cls") return Pooling::cls;
  throw ConfigError("pooling must be mean, max or cls, got '" + s + "'");
}

void EncoderConfig::validate() const {
  if (vocab_size <= Vocab::kNumSpecials) throw ConfigError("encoder vocab_size must exceed the reserved ids");
  if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
  if (proj_dim < 2) throw ConfigError("proj_dim must be >= 2");
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  if (window < 2 || window % 2 != 0 || window > max_len) throw ConfigError("window must be even with 2 <= window <= max_len");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in [0, 1)");
}

// ---------------------------------------------------------------- parameters

namespace {

void fill_uniform(Matrix& m, double bound, Rng& rng) {
  for (double& x : m.data) x = rng.uniform(-bound, bound);
}

template <class Self, class Out>
void collect(Self& p, Out& out) {
  out.push_back({"embeddings", &p.embeddings});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.push_back({pre + "wq", &L.wq});
    out.push_back({pre + "wk", &L.wk});
    out.push_back({pre + "wv", &L.wv});
    out.push_back({pre + "wo", &L.wo});
    out.push_back({pre + "gq", &L.gq});
    out.push_back({pre + "gk", &L.gk});
    out.push_back({pre + "gv", &L.gv});
    out.push_back({pre + "w1", &L.w1});
    out.push_back({pre + "b1", &L.b1});
    out.push_back({pre + "w2", &L.w2});
    out.push_back({pre + "b2", &L.b2});
  }
  out.push_back({"proj.w1", &p.proj_w1});
  out.push_back({"proj.b1", &p.proj_b1});
  out.push_back({"proj.w2", &p.proj_w2});
  out.push_back({"proj.b2", &p.proj_b2});
}

}  // namespace

EncoderParams EncoderParams::zeros(const EncoderConfig& cfg, bool with_embeddings) {
  cfg.validate();
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto f = static_cast<std::size_t>(cfg.ffn_dim);
  const auto m = static_cast<std::size_t>(cfg.proj_dim);
  EncoderParams p;
  if (with_embeddings) p.embeddings = Matrix(v, d);
  p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& L : p.layers) {
    for (Matrix* w : {&L.wq, &L.wk, &L.wv, &L.wo, &L.gq, &L.gk, &L.gv}) *w = Matrix(d, d);
    L.w1 = Matrix(d, f);
    L.b1 = Matrix(1, f);
    L.w2 = Matrix(f, d);
    L.b2 = Matrix(1, d);
  }
  p.proj_w1 = Matrix(d, m);
  p.proj_b1 = Matrix(1, m);
  p.proj_w2 = Matrix(m, m);
  p.proj_b2 = Matrix(1, m);
  return p;
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
  EncoderParams p = zeros(cfg);
  Rng rng(seed);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  fill_uniform(p.embeddings, inv_sqrt_d, rng);
  for (auto& L : p.layers) {
    for (Matrix* w : {&L.wq, &L.wk, &L.wv, &L.wo}) fill_uniform(*w, inv_sqrt_d, rng);
    L.gq = L.wq;
    L.gk = L.wk;
    L.gv = L.wv;
    fill_uniform(L.w1, inv_sqrt_d, rng);
    fill_uniform(L.w2, 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim)), rng);
  }
  fill_uniform(p.proj_w1, inv_sqrt_d, rng);
  fill_uniform(p.proj_w2, 1.0 / std::sqrt(static_cast<double>(cfg.proj_dim)), rng);
  return p;
}

std::vector<NamedTensor> EncoderParams::tensors() {
  std::vector<NamedTensor> out;
  collect(*this, out);
  return out;
}

std::vector<ConstNamedTensor> EncoderParams::tensors() const {
  std::vector<ConstNamedTensor> out;
  collect(*this, out);
  return out;
}

bool EncoderParams::operator==(const EncoderParams& o) const {
  const auto a = tensors();
  const auto b = o.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i].tensor == *b[i].tensor)) return false;
  return true;
}

// ---------------------------------------------------------------- building blocks

std::vector<TokenId> with_cls(std::span<const TokenId> doc_tokens, std::size_t max_len) {
  std::vector<TokenId> seq;
  const std::size_t keep = std::min(doc_tokens.size(), max_len > 0 ? max_len - 1 : 0);
  seq.reserve(keep + 1);
  seq.push_back(Vocab::kCls);
  seq.insert(seq.end(), doc_tokens.begin(), doc_tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  return seq;
}

std::vector<TokenId> augment(std::span<const TokenId> token_ids, double mask_rate, Rng& rng) {
  std::vector<TokenId> out(token_ids.begin(), token_ids.end());
  for (std::size_t i = 1; i < out.size(); ++i) {
    // One draw per position keeps the stream aligned across documents.
    const bool hit = rng.uniform() < mask_rate;
    if (hit && out[i] != Vocab::kPad) out[i] = Vocab::kMask;
  }
  return out;
}

std::vector<double> pool(const Matrix& h, std::span<const std::uint8_t> valid, Pooling mode,
                         std::vector<std::size_t>* argmax_rows) {
  auto ok = [&](std::size_t i) { return valid.empty() || valid[i] != 0; };
  std::size_t count = 0;
  for (std::size_t i = 0; i < h.rows; ++i) count += ok(i) ? 1 : 0;
  if (h.rows == 0 || count == 0) throw ValidationError("pool: no valid positions");

  std::vector<double> out(h.cols, 0.0);
  switch (mode) {
    case Pooling::mean:
      for (std::size_t i = 0; i < h.rows; ++i)
        if (ok(i))
          for (std::size_t c = 0; c < h.cols; ++c) out[c] += h(i, c);
      for (double& x : out) x /= static_cast<double>(count);
      break;
    case Pooling::max: {
      std::vector<std::size_t> rows(h.cols, 0);
      std::fill(out.begin(), out.end(), -std::numeric_limits<double>::infinity());
      for (std::size_t i = 0; i < h.rows; ++i) {
        if (!ok(i)) continue;
        for (std::size_t c = 0; c < h.cols; ++c) {
          if (h(i, c) > out[c]) {
            out[c] = h(i, c);
            rows[c] = i;
          }
        }
      }
      if (argmax_rows != nullptr) *argmax_rows = std::move(rows);
      break;
    }
    case Pooling::cls:
      if (!ok(0)) throw ValidationError("pool: CLS position is padding");
      for (std::size_t c = 0; c < h.cols; ++c) out[c] = h(0, c);
      break;
  }
  return out;
}

namespace {

Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (double& x : mask.data) x = rng.uniform() < p ? 0.0 : keep;
  return mask;
}

void hadamard_inplace(Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] *= b.data[i];
}

Matrix row_as_matrix(const Matrix& m, std::size_t r) {
  Matrix out(1, m.cols);
  std::copy(m.row(r).begin(), m.row(r).end(), out.data.begin());
  return out;
}

std::span<const double> as_span(const Matrix& m) { return m.data; }
std::span<double> as_span(Matrix& m) { return m.data; }

void attention_backward(const LayerCache& c, const Matrix& d_context, double scale, Matrix& dq, Matrix& dk,
                        Matrix& dv, Matrix& dgq, Matrix& dgk, Matrix& dgv) {
  const std::size_t n = c.q.rows;
  const std::size_t d = c.q.cols;
  const AttentionMap& map = c.attention;
  std::vector<double> da;
  for (std::size_t i = 0; i < n; ++i) {
    const bool global = i == 0;
    const double* query = global ? c.gq.data() : c.q.row(i).data();
    const Matrix& keys = global ? c.gk : c.k;
    const Matrix& values = global ? c.gv : c.v;
    Matrix& d_keys = global ? dgk : dk;
    Matrix& d_values = global ? dgv : dv;
    double* d_query = global ? dgq.data.data() : dq.row(i).data();
    const double* g = d_context.row(i).data();

    const std::size_t begin = map.offsets[i];
    const std::size_t end = map.offsets[i + 1];
    da.assign(end - begin, 0.0);
    double weighted = 0.0;
    for (std::size_t e = begin; e < end; ++e) {
      const std::size_t j = map.cols[e];
      const double p = map.probs[e];
      const double* vr = values.row(j).data();
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += g[t] * vr[t];
      da[e - begin] = s;
      weighted += p * s;
      double* dvr = d_values.row(j).data();
      for (std::size_t t = 0; t < d; ++t) dvr[t] += p * g[t];
    }
    for (std::size_t e = begin; e < end; ++e) {
      const std::size_t j = map.cols[e];
      const double ds = map.probs[e] * (da[e - begin] - weighted) * scale;
      if (ds == 0.0) continue;
      const double* kr = keys.row(j).data();
      double* dkr = d_keys.row(j).data();
      for (std::size_t t = 0; t < d; ++t) {
        d_query[t] += ds * kr[t];
        dkr[t] += ds * query[t];
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- forward / backward

EncodeCache encode_forward(std::span<const TokenId> sequence, const EncoderParams& params, const EncoderConfig& cfg,
                           RunMode mode, Rng* rng, ExecPolicy policy) {
  const std::size_t n = sequence.size();
  if (n == 0) throw ValidationError("encode: empty sequence");
  if (n > static_cast<std::size_t>(cfg.max_len))
    throw InputTooLongError("encode: sequence of " + std::to_string(n) + " tokens exceeds max_len " +
                            std::to_string(cfg.max_len));
  const bool train = mode == RunMode::train;
  if (train && rng == nullptr) throw std::invalid_argument("encode: train mode requires an rng");

  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  EncodeCache c;
  c.ids = train ? augment(sequence, cfg.mask_rate, *rng) : std::vector<TokenId>(sequence.begin(), sequence.end());
  c.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!params.embeddings.rows || static_cast<std::size_t>(c.ids[i]) >= params.embeddings.rows || c.ids[i] < 0)
      throw ValidationError("encode: token id " + std::to_string(c.ids[i]) + " outside the vocabulary");
    c.valid[i] = c.ids[i] != Vocab::kPad ? 1 : 0;
  }

  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = params.embeddings.row(static_cast<std::size_t>(c.ids[i]));
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }

  const bool use_dropout = train && cfg.dropout > 0.0;
  const std::size_t window = static_cast<std::size_t>(cfg.window);
  c.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& L = params.layers[l];
    LayerCache& lc = c.layers[l];
    lc.input = std::move(x);
    affine_forward(policy, lc.input, L.wq, {}, lc.q);
    affine_forward(policy, lc.input, L.wk, {}, lc.k);
    affine_forward(policy, lc.input, L.wv, {}, lc.v);
    affine_forward(policy, lc.input, L.gk, {}, lc.gk);
    affine_forward(policy, lc.input, L.gv, {}, lc.gv);
    Matrix gq;
    affine_forward(policy, row_as_matrix(lc.input, 0), L.gq, {}, gq);
    lc.gq = gq.data;

    lc.attention = attention_pattern(n, c.valid, window);
    const AttentionInputs in{lc.q, lc.k, lc.v, lc.gq, lc.gk, lc.gv, c.valid, window};
    attention_forward(policy, in, lc.attention, lc.context);
    c.pair_visits += lc.attention.pair_visits();

    affine_forward(policy, lc.context, L.wo, {}, lc.attn_out);
    lc.h1 = lc.attn_out;
    if (use_dropout) {
      lc.drop_attn = dropout_mask(n, d, cfg.dropout, *rng);
      hadamard_inplace(lc.h1, lc.drop_attn);
    }
    for (std::size_t i = 0; i < lc.h1.data.size(); ++i) lc.h1.data[i] += lc.input.data[i];

    affine_forward(policy, lc.h1, L.w1, as_span(L.b1), lc.u);
    lc.r = lc.u;
    for (double& t : lc.r.data) t = t > 0.0 ? t : 0.0;
    affine_forward(policy, lc.r, L.w2, as_span(L.b2), lc.ffn_out);
    x = lc.ffn_out;
    if (use_dropout) {
      lc.drop_ffn = dropout_mask(n, d, cfg.dropout, *rng);
      hadamard_inplace(x, lc.drop_ffn);
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += lc.h1.data[i];
  }
  c.hidden = std::move(x);

  c.pooling = cfg.pooling;
  const auto pooled = pool(c.hidden, c.valid, cfg.pooling, &c.max_rows);
  c.pooled = Matrix(1, d);
  std::copy(pooled.begin(), pooled.end(), c.pooled.data.begin());
  affine_forward(ExecPolicy::serial, c.pooled, params.proj_w1, as_span(params.proj_b1), c.z);
  c.zr = c.z;
  for (double& t : c.zr.data) t = t > 0.0 ? t : 0.0;
  Matrix out;
  affine_forward(ExecPolicy::serial, c.zr, params.proj_w2, as_span(params.proj_b2), out);
  c.output = std::move(out.data);
  return c;
}

void encode_backward(const EncodeCache& c, std::span<const double> d_output, const EncoderParams& params,
                     const EncoderConfig& cfg, EncoderParams& grads, Matrix& d_embed_rows) {
  const std::size_t n = c.ids.size();
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const auto P = ExecPolicy::serial;

  Matrix d_out(1, d_output.size());
  std::copy(d_output.begin(), d_output.end(), d_out.data.begin());
  Matrix d_zr(1, c.zr.cols);
  affine_backward(P, c.zr, params.proj_w2, d_out, &d_zr, grads.proj_w2, as_span(grads.proj_b2));
  for (std::size_t i = 0; i < d_zr.data.size(); ++i)
    if (!(c.z.data[i] > 0.0)) d_zr.data[i] = 0.0;
  Matrix d_pooled(1, d);
  affine_backward(P, c.pooled, params.proj_w1, d_zr, &d_pooled, grads.proj_w1, as_span(grads.proj_b1));

  Matrix dh(n, d);
  switch (c.pooling) {
    case Pooling::mean: {
      std::size_t count = 0;
      for (auto v : c.valid) count += v;
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i)
        if (c.valid[i])
          for (std::size_t t = 0; t < d; ++t) dh(i, t) = d_pooled.data[t] * inv;
      break;
    }
    case Pooling::max:
      for (std::size_t t = 0; t < d; ++t) dh(c.max_rows[t], t) += d_pooled.data[t];
      break;
    case Pooling::cls:
      for (std::size_t t = 0; t < d; ++t) dh(0, t) = d_pooled.data[t];
      break;
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams& L = params.layers[l];
    LayerParams& G = grads.layers[l];
    const LayerCache& lc = c.layers[l];

    // out = h1 + drop(ffn(h1))
    Matrix d_h1 = dh;
    Matrix d_f = dh;
    if (!lc.drop_ffn.empty()) hadamard_inplace(d_f, lc.drop_ffn);
    Matrix d_r(n, lc.r.cols);
    affine_backward(P, lc.r, L.w2, d_f, &d_r, G.w2, as_span(G.b2));
    for (std::size_t i = 0; i < d_r.data.size(); ++i)
      if (!(lc.u.data[i] > 0.0)) d_r.data[i] = 0.0;
    affine_backward(P, lc.h1, L.w1, d_r, &d_h1, G.w1, as_span(G.b1));

    // h1 = x + drop(attn(x))
    Matrix d_x = d_h1;
    Matrix d_a = d_h1;
    if (!lc.drop_attn.empty()) hadamard_inplace(d_a, lc.drop_attn);
    Matrix d_ctx(n, d);
    affine_backward(P, lc.context, L.wo, d_a, &d_ctx, G.wo, {});

    Matrix dq(n, d), dk(n, d), dv(n, d), dgq(1, d), dgk(n, d), dgv(n, d);
    attention_backward(lc, d_ctx, scale, dq, dk, dv, dgq, dgk, dgv);
    affine_backward(P, lc.input, L.wq, dq, &d_x, G.wq, {});
    affine_backward(P, lc.input, L.wk, dk, &d_x, G.wk, {});
    affine_backward(P, lc.input, L.wv, dv, &d_x, G.wv, {});
    affine_backward(P, lc.input, L.gk, dgk, &d_x, G.gk, {});
    affine_backward(P, lc.input, L.gv, dgv, &d_x, G.gv, {});
    Matrix d_x0(1, d);
    affine_backward(P, row_as_matrix(lc.input, 0), L.gq, dgq, &d_x0, G.gq, {});
    for (std::size_t t = 0; t < d; ++t) d_x(0, t) += d_x0.data[t];
    dh = std::move(d_x);
  }
  d_embed_rows = std::move(dh);
}

void scatter_embedding_grad(std::span<const TokenId> ids, const Matrix& d_embed_rows, Matrix& d_embeddings) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double* dst = d_embeddings.row(static_cast<std::size_t>(ids[i])).data();
    const double* src = d_embed_rows.row(i).data();
    for (std::size_t t = 0; t < d_embeddings.cols; ++t) dst[t] += src[t];
  }
}

DocEmbedding encode(const Document& doc, const EncoderParams& params, const EncoderConfig& cfg, RunMode mode,
                    Rng* rng) {
  if (doc.token_ids.size() + 1 > static_cast<std::size_t>(cfg.max_len))
    throw InputTooLongError("encode: document '" + doc.id + "' has " + std::to_string(doc.token_ids.size()) +
                            " tokens; max_len is " + std::to_string(cfg.max_len));
  const auto seq = with_cls(doc.token_ids, static_cast<std::size_t>(cfg.max_len));
  auto cache = encode_forward(seq, params, cfg, mode, rng);
  return {std::move(cache.output), doc.id};
}

PairForward forward_pair(const std::vector<const Document*>& batch, const EncoderParams& params,
                         const EncoderConfig& cfg, std::uint64_t seed, bool keep_caches, ExecPolicy policy) {
  const std::size_t N = batch.size();
  if (N == 0) throw ValidationError("forward_pair: empty batch");
  const auto m = static_cast<std::size_t>(cfg.proj_dim);
  PairForward out;
  out.a = Matrix(N, m);
  out.b = Matrix(N, m);
  std::vector<EncodeCache> caches(2 * N);
  for_each(policy, 2 * N, [&](std::size_t e) {
    const std::size_t i = e / 2;
    const std::size_t view = e % 2;
    Rng rng(derive_seed(seed, {i, view}));
    const auto seq = with_cls(batch[i]->token_ids, static_cast<std::size_t>(cfg.max_len));
    caches[e] = encode_forward(seq, params, cfg, RunMode::train, &rng);
    Matrix& dst = view == 0 ? out.a : out.b;
    std::copy(caches[e].output.begin(), caches[e].output.end(), dst.row(i).begin());
    if (!keep_caches) caches[e] = EncodeCache{};
  });
  if (keep_caches) out.caches = std::move(caches);
  return out;
}

}  // namespace docbreg
