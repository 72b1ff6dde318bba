#include "docbreg/evaluation.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

namespace docbreg {

using nlohmann::json;

// ---------------------------------------------------------------- embeddings

void EmbeddingMatrix::validate() const {
  if (doc_ids.size() != rows.rows || labels.size() != rows.rows)
    throw ValidationError("embedding matrix: row count differs from document count");
  if (!all_finite(rows.data)) throw ValidationError("embedding matrix contains non-finite values");
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int l : labels[i])
      if (l < 0 || l >= num_labels)
        throw ValidationError("embedding matrix: document '" + doc_ids[i] + "' has label " + std::to_string(l) +
                              " outside [0, " + std::to_string(num_labels) + ")");
}

EmbeddingMatrix EmbeddingMatrix::subset(const std::vector<std::size_t>& indices) const {
  EmbeddingMatrix out;
  out.task_kind = task_kind;
  out.num_labels = num_labels;
  out.rows = Matrix(indices.size(), rows.cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    std::copy(rows.row(i).begin(), rows.row(i).end(), out.rows.row(r).begin());
    out.doc_ids.push_back(doc_ids.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

json EmbeddingMatrix::to_json() const {
  json docs = json::array();
  for (std::size_t i = 0; i < size(); ++i) {
    const auto r = rows.row(i);
    docs.push_back({{"id", doc_ids[i]}, {"labels", labels[i]}, {"vector", std::vector<double>(r.begin(), r.end())}});
  }
  return {{"task_kind", to_string(task_kind)}, {"num_labels", num_labels}, {"dim", dim()}, {"documents", docs}};
}

EmbeddingMatrix EmbeddingMatrix::from_json(const json& j) {
  EmbeddingMatrix e;
  try {
    e.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
    e.num_labels = j.at("num_labels").get<int>();
    const auto dim = j.at("dim").get<std::size_t>();
    const auto& docs = j.at("documents");
    e.rows = Matrix(docs.size(), dim);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      e.doc_ids.push_back(docs[i].at("id").get<std::string>());
      e.labels.push_back(docs[i].at("labels").get<std::vector<int>>());
      const auto v = docs[i].at("vector").get<std::vector<double>>();
      if (v.size() != dim) throw ParseError("embedding of '" + e.doc_ids.back() + "' has the wrong dimension");
      std::copy(v.begin(), v.end(), e.rows.row(i).begin());
    }
  } catch (const json::exception& ex) {
    throw ParseError(std::string("malformed embedding file: ") + ex.what());
  }
  e.validate();
  return e;
}

EmbeddingMatrix extract_embeddings(const Corpus& corpus, const Checkpoint& ck, const ExtractOptions& opts) {
  if (corpus.vocab.fingerprint() != ck.vocab_fingerprint || corpus.vocab.size() != ck.vocab_size)
    throw ArtifactMismatchError("corpus vocabulary (" + std::to_string(corpus.vocab.size()) +
                                " tokens) does not match the checkpoint vocabulary (" + std::to_string(ck.vocab_size) +
                                " tokens)");
  EncoderConfig cfg = ck.encoder;
  if (opts.pooling) cfg.pooling = *opts.pooling;
  if (opts.max_len) cfg.max_len = *opts.max_len;
  cfg.validate();

  EmbeddingMatrix out;
  out.task_kind = corpus.task_kind;
  out.num_labels = corpus.num_labels;
  out.rows = Matrix(corpus.size(), static_cast<std::size_t>(cfg.proj_dim));
  for (const auto& d : corpus.documents) {
    out.doc_ids.push_back(d.id);
    out.labels.push_back(d.labels);
  }
  for_each(opts.policy, corpus.size(), [&](std::size_t i) {
    const auto seq = with_cls(corpus.documents[i].token_ids, static_cast<std::size_t>(cfg.max_len));
    const auto cache = encode_forward(seq, ck.params, cfg, RunMode::eval, nullptr);
    std::copy(cache.output.begin(), cache.output.end(), out.rows.row(i).begin());
  });
  out.validate();
  return out;
}

// ---------------------------------------------------------------- F1

F1Scores f1_scores(const std::vector<std::vector<int>>& predictions, const std::vector<std::vector<int>>& gold,
                   int num_labels) {
  if (predictions.size() != gold.size()) throw std::invalid_argument("f1_scores: length mismatch");
  const auto L = static_cast<std::size_t>(num_labels);
  std::vector<long> tp(L, 0), fp(L, 0), fn(L, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::set<int> p(predictions[i].begin(), predictions[i].end());
    const std::set<int> g(gold[i].begin(), gold[i].end());
    for (int l : p) {
      if (l < 0 || l >= num_labels) throw std::invalid_argument("f1_scores: label out of range");
      (g.count(l) ? tp : fp)[static_cast<std::size_t>(l)]++;
    }
    for (int l : g) {
      if (l < 0 || l >= num_labels) throw std::invalid_argument("f1_scores: label out of range");
      if (!p.count(l)) fn[static_cast<std::size_t>(l)]++;
    }
  }
  auto f1 = [](long t, long f_pos, long f_neg) {
    const double prec = t + f_pos > 0 ? static_cast<double>(t) / static_cast<double>(t + f_pos) : 0.0;
    const double rec = t + f_neg > 0 ? static_cast<double>(t) / static_cast<double>(t + f_neg) : 0.0;
    return prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  };
  F1Scores s;
  long TP = 0, FP = 0, FN = 0;
  for (std::size_t l = 0; l < L; ++l) {
    s.per_label.push_back(f1(tp[l], fp[l], fn[l]));
    TP += tp[l];
    FP += fp[l];
    FN += fn[l];
  }
  s.micro = f1(TP, FP, FN);
  s.macro = L ? std::accumulate(s.per_label.begin(), s.per_label.end(), 0.0) / static_cast<double>(L) : 0.0;
  return s;
}

// ---------------------------------------------------------------- probes

std::string to_string(ProbeHead h) { return h == ProbeHead::linear ? "linear" : "mlp"; }

ProbeHead parse_probe_head(const std::string& s) {
  if (s == "linear") return ProbeHead::linear;
  if (s == "mlp") return ProbeHead::mlp;
  throw ConfigError("unknown probe head '" + s + "' (expected linear or mlp)");
}

void ProbeConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("probe lr must be positive");
  if (batch_size < 1) throw ConfigError("probe batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("probe weight_decay must be >= 0");
}

json ProbeReport::to_json() const {
  json j = {{"setting", setting},       {"model", model},         {"dataset", dataset},
            {"micro_f1", micro_f1},     {"macro_f1", macro_f1},   {"per_label_f1", per_label_f1},
            {"dev_macro_f1", dev_macro_f1}, {"best_epoch", best_epoch}, {"epochs_run", epochs_run}};
  if (wall_clock_s) j["wall_clock_s"] = *wall_clock_s;
  return j;
}

ProbeReport ProbeReport::from_json(const json& j) {
  ProbeReport r;
  try {
    r.setting = j.at("setting").get<std::string>();
    r.model = j.value("model", std::string());
    r.dataset = j.value("dataset", std::string());
    r.micro_f1 = j.at("micro_f1").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.per_label_f1 = j.value("per_label_f1", std::vector<double>{});
    r.dev_macro_f1 = j.value("dev_macro_f1", 0.0);
    r.best_epoch = j.value("best_epoch", 0);
    r.epochs_run = j.value("epochs_run", 0);
    if (j.contains("wall_clock_s")) r.wall_clock_s = j.at("wall_clock_s").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed probe report: ") + e.what());
  }
  return r;
}

namespace {

struct ProbeNet {
  ProbeHead head;
  Matrix w1, b1, w2, b2;  // linear head uses w1, b1 only

  std::vector<NamedTensor> tensors() {
    if (head == ProbeHead::linear) return {{"probe.w", &w1}, {"probe.b", &b1}};
    return {{"probe.w1", &w1}, {"probe.b1", &b1}, {"probe.w2", &w2}, {"probe.b2", &b2}};
  }
  std::vector<ConstNamedTensor> tensors() const {
    std::vector<ConstNamedTensor> out;
    for (const auto& t : const_cast<ProbeNet*>(this)->tensors()) out.push_back({t.name, t.tensor});
    return out;
  }
};

void uniform_init(Matrix& w, std::size_t fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : w.data) x = rng.uniform(-a, a);
}

ProbeNet make_probe(const ProbeConfig& cfg, std::size_t m, std::size_t L, Rng& rng) {
  ProbeNet n{cfg.head, {}, {}, {}, {}};
  if (cfg.head == ProbeHead::linear) {
    n.w1 = Matrix(m, L);
    n.b1 = Matrix(1, L);
    uniform_init(n.w1, m, rng);
  } else {
    const auto h = static_cast<std::size_t>(cfg.hidden);
    n.w1 = Matrix(m, h);
    n.b1 = Matrix(1, h);
    n.w2 = Matrix(h, L);
    n.b2 = Matrix(1, L);
    uniform_init(n.w1, m, rng);
    uniform_init(n.w2, h, rng);
  }
  return n;
}

struct ProbeForward {
  Matrix hidden;  // mlp: relu output
  Matrix pre;     // mlp: pre-activation
  Matrix logits;
};

ProbeForward probe_forward(const ProbeNet& net, const Matrix& x) {
  ProbeForward f;
  if (net.head == ProbeHead::linear) {
    serial::affine_forward(x, net.w1, net.b1.data, f.logits);
    return f;
  }
  serial::affine_forward(x, net.w1, net.b1.data, f.pre);
  f.hidden = f.pre;
  for (double& v : f.hidden.data) v = std::max(v, 0.0);
  serial::affine_forward(f.hidden, net.w2, net.b2.data, f.logits);
  return f;
}

// Gradient of the mean loss over the batch with respect to the logits.
Matrix loss_grad(const Matrix& logits, const std::vector<std::vector<int>>& gold, TaskKind kind) {
  const std::size_t B = logits.rows, L = logits.cols;
  Matrix d(B, L);
  const double inv = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto z = logits.row(i);
    auto g = d.row(i);
    if (kind == TaskKind::single_label) {
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (std::size_t l = 0; l < L; ++l) sum += std::exp(z[l] - mx);
      for (std::size_t l = 0; l < L; ++l) g[l] = std::exp(z[l] - mx) / sum * inv;
      g[static_cast<std::size_t>(gold[i].front())] -= inv;
    } else {
      for (std::size_t l = 0; l < L; ++l) g[l] = inv / (1.0 + std::exp(-z[l]));
      for (int l : gold[i]) g[static_cast<std::size_t>(l)] -= inv;
    }
  }
  return d;
}

std::vector<std::vector<int>> predict(const ProbeNet& net, const Matrix& x, TaskKind kind) {
  const auto logits = probe_forward(net, x).logits;
  std::vector<std::vector<int>> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto z = logits.row(i);
    if (kind == TaskKind::single_label) {
      out[i].push_back(static_cast<int>(argmax_index(z)));
    } else {
      for (std::size_t l = 0; l < z.size(); ++l)
        if (z[l] >= 0.0) out[i].push_back(static_cast<int>(l));  // sigmoid >= 0.5
    }
  }
  return out;
}

struct Standardizer {
  std::vector<double> mean, scale;

  static Standardizer fit(const Matrix& x, bool enabled) {
    Standardizer s;
    s.mean.assign(x.cols, 0.0);
    s.scale.assign(x.cols, 1.0);
    if (!enabled || x.rows == 0) return s;
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t c = 0; c < x.cols; ++c) s.mean[c] += x(i, c);
    for (double& m : s.mean) m /= static_cast<double>(x.rows);
    std::vector<double> var(x.cols, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t c = 0; c < x.cols; ++c) var[c] += (x(i, c) - s.mean[c]) * (x(i, c) - s.mean[c]);
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double sd = std::sqrt(var[c] / static_cast<double>(x.rows));
      s.scale[c] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return s;
  }
  Matrix apply(const Matrix& x) const {
    Matrix y = x;
    for (std::size_t i = 0; i < y.rows; ++i)
      for (std::size_t c = 0; c < y.cols; ++c) y(i, c) = (y(i, c) - mean[c]) * scale[c];
    return y;
  }
};

void check_compatible(const EmbeddingMatrix& a, const EmbeddingMatrix& b, const char* name) {
  if (a.dim() != b.dim() || a.num_labels != b.num_labels || a.task_kind != b.task_kind)
    throw ArtifactMismatchError(std::string("probe: ") + name + " split is incompatible with the training split");
}

}  // namespace

ProbeReport train_probe(const EmbeddingMatrix& train, const EmbeddingMatrix& dev, const EmbeddingMatrix& test,
                        const ProbeConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  train.validate();
  check_compatible(train, dev, "dev");
  check_compatible(train, test, "test");
  if (train.size() == 0 || dev.size() == 0 || test.size() == 0) throw ConfigError("probe: every split needs documents");
  {
    std::set<std::vector<int>> classes(train.labels.begin(), train.labels.end());
    if (classes.size() < 2) throw DegenerateError("probe: training split contains a single class");
  }
  if (train.task_kind == TaskKind::single_label)
    for (const auto& l : train.labels)
      if (l.size() != 1) throw ValidationError("probe: single-label task with a document carrying " +
                                               std::to_string(l.size()) + " labels");

  const auto norm = Standardizer::fit(train.rows, cfg.standardize);
  const Matrix xtr = norm.apply(train.rows);
  const Matrix xdev = norm.apply(dev.rows);
  const Matrix xte = norm.apply(test.rows);
  const std::size_t m = train.dim();
  const auto L = static_cast<std::size_t>(train.num_labels);

  Rng init_rng(derive_seed(cfg.seed, {0}));
  ProbeNet net = make_probe(cfg, m, L, init_rng);
  ProbeNet best = net;
  AdamState adam;
  const AdamWConfig opt{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  ProbeReport rep;
  rep.setting = to_string(cfg.head);
  double best_dev = -1.0;
  int since_best = 0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    BatchIterator it(train.size(), bs, derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(epoch)}), true);
    while (auto idx = it.next()) {
      Matrix x(idx->size(), m);
      std::vector<std::vector<int>> gold;
      for (std::size_t r = 0; r < idx->size(); ++r) {
        const auto src = xtr.row((*idx)[r]);
        std::copy(src.begin(), src.end(), x.row(r).begin());
        gold.push_back(train.labels[(*idx)[r]]);
      }
      const auto f = probe_forward(net, x);
      const Matrix dz = loss_grad(f.logits, gold, train.task_kind);
      ProbeNet g{net.head, Matrix(net.w1.rows, net.w1.cols), Matrix(1, net.b1.cols), Matrix(net.w2.rows, net.w2.cols),
                 Matrix(1, net.b2.cols)};
      if (net.head == ProbeHead::linear) {
        serial::affine_backward(x, net.w1, dz, nullptr, g.w1, g.b1.data);
      } else {
        Matrix dh(f.hidden.rows, f.hidden.cols);
        serial::affine_backward(f.hidden, net.w2, dz, &dh, g.w2, g.b2.data);
        for (std::size_t i = 0; i < dh.data.size(); ++i)
          if (f.pre.data[i] <= 0.0) dh.data[i] = 0.0;
        serial::affine_backward(x, net.w1, dh, nullptr, g.w1, g.b1.data);
      }
      adamw_step(net.tensors(), std::as_const(g).tensors(), adam, opt);
    }
    rep.epochs_run = epoch;
    const double dev_f1 = f1_scores(predict(net, xdev, dev.task_kind), dev.labels, dev.num_labels).macro;
    if (dev_f1 > best_dev) {
      best_dev = dev_f1;
      best = net;
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  const F1Scores s = f1_scores(predict(best, xte, test.task_kind), test.labels, test.num_labels);
  rep.micro_f1 = s.micro;
  rep.macro_f1 = s.macro;
  rep.per_label_f1 = s.per_label;
  rep.dev_macro_f1 = best_dev;
  rep.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------- few-shot

json FewShotReport::to_json() const {
  json runs_j = json::array();
  for (const auto& r : runs) runs_j.push_back(r.to_json());
  return {{"shots", shots},           {"seeds", runs.size()},     {"mean_micro_f1", mean_micro},
          {"sd_micro_f1", sd_micro}, {"mean_macro_f1", mean_macro}, {"sd_macro_f1", sd_macro},
          {"runs", runs_j}};
}

std::vector<std::size_t> sample_shots(const EmbeddingMatrix& train, int shots, std::uint64_t seed) {
  if (shots < 1) throw ConfigError("shots must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(train.num_labels));
  for (std::size_t i = 0; i < train.size(); ++i)
    if (!train.labels[i].empty()) by_class[static_cast<std::size_t>(train.labels[i].front())].push_back(i);

  std::string short_classes;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < static_cast<std::size_t>(shots)) {
      if (!short_classes.empty()) short_classes += ", ";
      short_classes += std::to_string(c) + " (" + std::to_string(by_class[c].size()) + ")";
    }
  }
  if (!short_classes.empty())
    throw ConfigError("not enough examples for " + std::to_string(shots) + "-shot sampling in class " + short_classes);

  Rng rng(seed);
  std::vector<std::size_t> picked;
  for (auto& members : by_class) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(shots); ++i) {
      const std::size_t j = i + rng.below(members.size() - i);
      std::swap(members[i], members[j]);
      picked.push_back(members[i]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

FewShotReport fewshot_eval(const EmbeddingMatrix& train, const EmbeddingMatrix& dev, const EmbeddingMatrix& test,
                           int shots, int num_seeds, const ProbeConfig& cfg) {
  if (num_seeds < 1) throw ConfigError("seeds must be >= 1");
  FewShotReport rep;
  rep.shots = shots;
  for (int i = 0; i < num_seeds; ++i) {
    ProbeConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(i);
    const auto idx = sample_shots(train, shots, c.seed);
    rep.runs.push_back(train_probe(train.subset(idx), dev, test, c));
  }
  auto mean_sd = [&](auto get, double& mean, double& sd) {
    const auto n = static_cast<double>(rep.runs.size());
    mean = 0.0;
    for (const auto& r : rep.runs) mean += get(r);
    mean /= n;
    double ss = 0.0;
    for (const auto& r : rep.runs) ss += (get(r) - mean) * (get(r) - mean);
    sd = rep.runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  };
  mean_sd([](const ProbeReport& r) { return r.micro_f1; }, rep.mean_micro, rep.sd_micro);
  mean_sd([](const ProbeReport& r) { return r.macro_f1; }, rep.mean_macro, rep.sd_macro);
  return rep;
}

// ---------------------------------------------------------------- collapse

CollapseMetrics collapse_metrics(const Matrix& e) {
  if (e.rows == 0 || e.cols == 0) throw DegenerateError("collapse_metrics: empty matrix");
  if (!all_finite(e.data)) throw NumericError("collapse_metrics: non-finite embedding");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> E(e.data.data(), static_cast<Eigen::Index>(e.rows),
                                   static_cast<Eigen::Index>(e.cols));
  if (E.cwiseAbs().maxCoeff() == 0.0) throw DegenerateError("collapse_metrics: rank-0 embedding matrix");

  CollapseMetrics out;
  const RowMat centred = E.rowwise() - E.colwise().mean();
  const Eigen::VectorXd sv = Eigen::BDCSVD<RowMat>(centred).singularValues();
  const double total = sv.sum();
  // Identical rows centre to zero; the spectrum then sits on a single direction.
  if (total <= 1e-12 * std::max(1.0, E.cwiseAbs().maxCoeff())) {
    out.effective_rank = 1.0;
  } else {
    double h = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      const double p = sv[i] / total;
      if (p > 0.0) h -= p * std::log(p);
    }
    out.effective_rank = std::exp(h);
  }

  RowMat u = E;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double n = u.row(i).norm();
    if (n == 0.0) throw DegenerateError("collapse_metrics: zero-norm row " + std::to_string(i));
    u.row(i) /= n;
  }
  if (u.rows() < 2) {
    out.uniformity = 0.0;
    return out;
  }
  double acc = 0.0;
  std::size_t pairs = 0;
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = i + 1; j < u.rows(); ++j) {
      acc += std::exp(-2.0 * (u.row(i) - u.row(j)).squaredNorm());
      ++pairs;
    }
  out.uniformity = std::log(acc / static_cast<double>(pairs));
  return out;
}

// ---------------------------------------------------------------- markdown report

std::string render_report(const std::vector<ProbeReport>& reports) {
  std::vector<std::string> settings, models, datasets;
  auto remember = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  // Settings in a fixed order, other keys in first-seen order.
  for (const char* s : {"mlp", "linear"})
    for (const auto& r : reports)
      if (r.setting == s) remember(settings, s);
  for (const auto& r : reports) {
    remember(settings, r.setting);
    remember(models, r.model);
    remember(datasets, r.dataset);
  }
  std::map<std::tuple<std::string, std::string, std::string>, const ProbeReport*> cell;
  for (const auto& r : reports) cell[{r.setting, r.model, r.dataset}] = &r;

  auto pct = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * x);
    return std::string(buf);
  };
  auto title = [](const std::string& s) {
    if (s == "mlp") return std::string("Document Embedding + MLP");
    if (s == "linear") return std::string("Document Embedding + Linear Layer");
    return s;
  };

  std::ostringstream md;
  md << "| Method |";
  for (const auto& d : datasets) md << " " << (d.empty() ? "data" : d) << " µ-F1 | " << (d.empty() ? "data" : d) << " m-F1 |";
  md << " Avg. µ-F1 |\n|---|";
  for (std::size_t i = 0; i < datasets.size(); ++i) md << "---:|---:|";
  md << "---:|\n";
  for (const auto& s : settings) {
    md << "| **" << title(s) << "** |";
    for (std::size_t i = 0; i < datasets.size(); ++i) md << " | |";
    md << " |\n";
    for (const auto& m : models) {
      bool any = false;
      for (const auto& d : datasets) any |= cell.count({s, m, d}) > 0;
      if (!any) continue;
      md << "| " << m << " |";
      double sum = 0.0;
      int n = 0;
      for (const auto& d : datasets) {
        auto it = cell.find({s, m, d});
        if (it == cell.end()) {
          md << " - | - |";
          continue;
        }
        md << " " << pct(it->second->micro_f1) << " | " << pct(it->second->macro_f1) << " |";
        sum += it->second->micro_f1;
        ++n;
      }
      md << " " << (n ? pct(sum / n) : std::string("-")) << " |\n";
    }
  }
  return md.str();
}

}  // namespace docbreg
