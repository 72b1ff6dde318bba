#include "docbreg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace docbreg {

using nlohmann::json;

std::string to_string(TaskKind k) { return k == TaskKind::single_label ? "single_label" : "multi_label"; }

TaskKind parse_task_kind(const std::string& s) {
  if (s == "single_label" || s == "single") return TaskKind::single_label;
  if (s == "multi_label" || s == "multi") return TaskKind::multi_label;
  throw ConfigError("task must be single_label or multi_label, got '" + s + "'");
}

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[CLS]", "[MASK]"}) add(t);
}

TokenId Vocab::add(const std::string& token) {
  if (auto it = token_to_id_.find(token); it != token_to_id_.end()) return it->second;
  const auto id = static_cast<TokenId>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocab::find(const std::string& token) const {
  if (auto it = token_to_id_.find(token); it != token_to_id_.end()) return it->second;
  return std::nullopt;
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = fnv1a(std::to_string(id_to_token_.size()));
  for (const auto& t : id_to_token_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\x1f", 1), h);
  }
  return h;
}

std::string Vocab::to_json() const {
  // Preserve id order in the output instead of json's key sort.
  std::string out = "{";
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (i > 0) out += ",";
    out += json(id_to_token_[i]).dump() + ":" + std::to_string(i);
  }
  out += "}";
  return out;
}

Vocab Vocab::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocab: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("vocab: expected an object of token -> id");
  std::vector<std::string> by_id(j.size());
  std::vector<bool> seen(j.size(), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number_integer()) throw ParseError("vocab: id of '" + it.key() + "' is not an integer");
    const auto id = it.value().get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= by_id.size() || seen[static_cast<std::size_t>(id)])
      throw ValidationError("vocab: ids must be contiguous from 0 (bad id " + std::to_string(id) + ")");
    seen[static_cast<std::size_t>(id)] = true;
    by_id[static_cast<std::size_t>(id)] = it.key();
  }
  if (by_id.size() < 3 || by_id[0] != "[PAD]" || by_id[1] != "[CLS]" || by_id[2] != "[MASK]")
    throw ValidationError("vocab: ids 0, 1, 2 must be [PAD], [CLS], [MASK]");
  Vocab v;
  for (std::size_t i = 3; i < by_id.size(); ++i) v.add(by_id[i]);
  return v;
}

// ---------------------------------------------------------------- Corpus

void Corpus::validate() const {
  if (num_labels < 1) throw ValidationError("corpus: num_labels must be >= 1");
  for (const auto& d : documents) {
    if (d.token_ids.empty()) throw ValidationError("document '" + d.id + "': empty token sequence");
    for (TokenId t : d.token_ids)
      if (!vocab.contains(t)) throw ValidationError("document '" + d.id + "': token id " + std::to_string(t) + " not in vocabulary");
    if (d.labels.empty()) throw ValidationError("document '" + d.id + "': no labels");
    if (task_kind == TaskKind::single_label && d.labels.size() != 1)
      throw ValidationError("document '" + d.id + "': single_label corpus requires exactly one label");
    for (int l : d.labels)
      if (l < 0 || l >= num_labels)
        throw ValidationError("document '" + d.id + "': label " + std::to_string(l) + " outside [0, " +
                              std::to_string(num_labels) + ")");
  }
}

Corpus Corpus::subset(const std::vector<std::size_t>& indices) const {
  Corpus c;
  c.num_labels = num_labels;
  c.task_kind = task_kind;
  c.vocab = vocab;
  c.documents.reserve(indices.size());
  for (std::size_t i : indices) c.documents.push_back(documents.at(i));
  return c;
}

// ---------------------------------------------------------------- GenSpec

void GenSpec::validate() const {
  if (num_topics < 1) throw ConfigError("topics must be >= 1");
  if (vocab_size <= num_topics * 10) throw ConfigError("vocab must exceed 10 * topics");
  if (docs < 1) throw ConfigError("docs must be >= 1");
  if (!(mean_length >= kMinDocLength)) throw ConfigError("mean_length must be >= 64");
  if (!(sd_length >= 0.0)) throw ConfigError("sd_length must be >= 0");
  if (topics_per_doc_min < 1 || topics_per_doc_max < topics_per_doc_min || topics_per_doc_max > num_topics)
    throw ConfigError("topics_per_doc must satisfy 1 <= min <= max <= topics");
  if (!(zipf_exponent > 0.0)) throw ConfigError("zipf must be > 0");
  if (!(background_share >= 0.0 && background_share < 1.0)) throw ConfigError("background must lie in [0, 1)");
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    T out;
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(v, &pos);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      out = std::stoull(v, &pos);
    } else {
      out = static_cast<T>(std::stoll(v, &pos));
    }
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + v + "'");
  }
}

}  // namespace

GenSpec GenSpec::from_kv(const std::map<std::string, std::string>& kv) {
  GenSpec s;
  for (const auto& [k, v] : kv) {
    if (k == "topics") {
      s.num_topics = parse_number<int>(k, v);
    } else if (k == "vocab") {
      s.vocab_size = parse_number<int>(k, v);
    } else if (k == "docs") {
      s.docs = parse_number<int>(k, v);
    } else if (k == "mean_length") {
      s.mean_length = parse_number<double>(k, v);
    } else if (k == "sd_length") {
      s.sd_length = parse_number<double>(k, v);
    } else if (k == "topics_per_doc") {
      const auto dots = v.find("..");
      if (dots == std::string::npos) {
        s.topics_per_doc_min = s.topics_per_doc_max = parse_number<int>(k, v);
      } else {
        s.topics_per_doc_min = parse_number<int>(k, v.substr(0, dots));
        s.topics_per_doc_max = parse_number<int>(k, v.substr(dots + 2));
      }
    } else if (k == "zipf") {
      s.zipf_exponent = parse_number<double>(k, v);
    } else if (k == "background") {
      s.background_share = parse_number<double>(k, v);
    } else if (k == "task") {
      s.task = parse_task_kind(v);
    } else if (k == "seed") {
      s.seed = parse_number<std::uint64_t>(k, v);
    } else {
      throw ConfigError("unknown corpus key '" + k + "'");
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------- generation

namespace {

struct ZipfTable {
  std::vector<double> cdf;

  ZipfTable(std::size_t n, double exponent) : cdf(n) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
      cdf[r] = acc;
    }
    for (double& c : cdf) c /= acc;
    cdf.back() = 1.0;
  }

  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform();
    return static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  }
};

struct Layout {
  std::size_t background_begin, background_size;
  std::size_t topic_begin, topic_size;
};

Document generate_document(const GenSpec& spec, const Layout& layout, const ZipfTable& bg, const ZipfTable& topic,
                           std::size_t index) {
  Rng rng(derive_seed(spec.seed, {index}));

  const double var_ratio = (spec.sd_length * spec.sd_length) / (spec.mean_length * spec.mean_length);
  const double sigma = std::sqrt(std::log1p(var_ratio));
  const double mu = std::log(spec.mean_length) - 0.5 * sigma * sigma;
  const double raw = std::exp(mu + sigma * rng.normal());
  const auto length = static_cast<std::size_t>(
      std::clamp(std::llround(raw), static_cast<long long>(kMinDocLength), static_cast<long long>(kMaxDocLength)));

  const auto span = static_cast<std::uint64_t>(spec.topics_per_doc_max - spec.topics_per_doc_min + 1);
  const auto num = static_cast<std::size_t>(spec.topics_per_doc_min) + static_cast<std::size_t>(rng.below(span));

  // Partial Fisher-Yates picks `num` distinct topics.
  std::vector<int> topics(static_cast<std::size_t>(spec.num_topics));
  std::iota(topics.begin(), topics.end(), 0);
  for (std::size_t i = 0; i < num; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(topics.size() - i));
    std::swap(topics[i], topics[j]);
  }
  topics.resize(num);

  std::vector<double> weights(num);
  double total = 0.0;
  for (double& w : weights) {
    w = rng.gamma(2.0);
    total += w;
  }
  std::vector<double> cum(num);
  double acc = 0.0;
  for (std::size_t i = 0; i < num; ++i) {
    acc += weights[i] / total;
    cum[i] = acc;
  }
  cum.back() = 1.0;

  Document doc;
  doc.id = "doc" + std::to_string(index);
  doc.token_ids.reserve(length);
  for (std::size_t p = 0; p < length; ++p) {
    std::size_t id;
    if (rng.uniform() < spec.background_share) {
      id = layout.background_begin + bg.sample(rng);
    } else {
      const double u = rng.uniform();
      const auto t = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      const auto which = static_cast<std::size_t>(topics[std::min(t, num - 1)]);
      id = layout.topic_begin + which * layout.topic_size + topic.sample(rng);
    }
    doc.token_ids.push_back(static_cast<TokenId>(id));
  }

  if (spec.task == TaskKind::single_label) {
    const auto dominant = std::max_element(weights.begin(), weights.end()) - weights.begin();
    doc.labels = {topics[static_cast<std::size_t>(dominant)]};
  } else {
    doc.labels = topics;
    std::sort(doc.labels.begin(), doc.labels.end());
  }
  return doc;
}

}  // namespace

Corpus generate_corpus(const GenSpec& spec, ExecPolicy policy) {
  spec.validate();
  const auto regular = static_cast<std::size_t>(spec.vocab_size);
  const auto topics = static_cast<std::size_t>(spec.num_topics);
  Layout layout{};
  layout.background_begin = Vocab::kNumSpecials;
  layout.background_size = regular / 2;
  layout.topic_size = (regular - layout.background_size) / topics;
  layout.topic_begin = layout.background_begin + layout.background_size;

  Corpus corpus;
  corpus.num_labels = spec.num_topics;
  corpus.task_kind = spec.task;
  for (std::size_t i = 0; i < layout.background_size; ++i) corpus.vocab.add("bg" + std::to_string(i));
  for (std::size_t t = 0; t < topics; ++t)
    for (std::size_t i = 0; i < layout.topic_size; ++i)
      corpus.vocab.add("t" + std::to_string(t) + "_" + std::to_string(i));
  // Slice remainder tokens exist in the vocabulary but are never drawn.
  for (std::size_t i = layout.background_size + topics * layout.topic_size; i < regular; ++i)
    corpus.vocab.add("rest" + std::to_string(i));

  const ZipfTable bg(layout.background_size, spec.zipf_exponent);
  const ZipfTable topic(layout.topic_size, spec.zipf_exponent);
  corpus.documents.resize(static_cast<std::size_t>(spec.docs));
  for_each(policy, corpus.documents.size(),
           [&](std::size_t i) { corpus.documents[i] = generate_document(spec, layout, bg, topic, i); });
  return corpus;
}

// ---------------------------------------------------------------- JSONL

std::string to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents) {
    json j;
    j["id"] = d.id;
    j["token_ids"] = d.token_ids;
    j["labels"] = d.labels;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const Corpus& corpus, const std::string& path) { write_file_atomic(path, to_jsonl(corpus)); }

Corpus parse_jsonl(const std::string& text, const LoadOptions& opts) {
  Corpus corpus;
  if (opts.vocab != nullptr) corpus.vocab = *opts.vocab;
  const bool vocab_given = opts.vocab != nullptr;

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  bool any_multi = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError(where + ": record is not a JSON object");
    Document doc;
    try {
      doc.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                                : "line" + std::to_string(line_no);
      if (j.contains("token_ids")) {
        doc.token_ids = j["token_ids"].get<std::vector<TokenId>>();
        if (!vocab_given) {
          for (TokenId t : doc.token_ids) {
            if (t < 0) throw ValidationError(where + ": negative token id");
            while (corpus.vocab.size() <= static_cast<std::size_t>(t))
              corpus.vocab.add("#" + std::to_string(corpus.vocab.size()));
          }
        }
      } else if (j.contains("text")) {
        std::istringstream words(j["text"].get<std::string>());
        std::string w;
        while (words >> w) doc.token_ids.push_back(corpus.vocab.add(w));
      } else {
        throw ParseError(where + ": record needs \"text\" or \"token_ids\"");
      }
      if (!j.contains("labels")) throw ParseError(where + ": missing \"labels\"");
      doc.labels = j["labels"].get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    std::sort(doc.labels.begin(), doc.labels.end());
    doc.labels.erase(std::unique(doc.labels.begin(), doc.labels.end()), doc.labels.end());
    if (doc.token_ids.empty()) throw ValidationError(where + ": empty document '" + doc.id + "'");
    if (doc.labels.empty()) throw ValidationError(where + ": document '" + doc.id + "' has no labels");
    if (doc.labels.size() > 1) any_multi = true;
    max_label = std::max(max_label, doc.labels.back());
    corpus.documents.push_back(std::move(doc));
  }
  corpus.task_kind = opts.task_kind.value_or(any_multi ? TaskKind::multi_label : TaskKind::single_label);
  corpus.num_labels = opts.num_labels.value_or(max_label + 1);
  corpus.validate();
  return corpus;
}

Corpus load_jsonl(const std::string& path, const LoadOptions& opts) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_jsonl(text, opts);
}

// ---------------------------------------------------------------- splits and batches

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[static_cast<std::size_t>(rng.below(i))]);
  return p;
}

std::vector<int> split_assignment(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  const std::size_t n = corpus.size();
  // Largest-remainder integer targets.
  std::array<std::size_t, 3> target{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = ratios[static_cast<std::size_t>(s)] * static_cast<double>(n);
    target[static_cast<std::size_t>(s)] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[static_cast<std::size_t>(s)] = exact - static_cast<double>(target[static_cast<std::size_t>(s)]);
    assigned += target[static_cast<std::size_t>(s)];
  }
  while (assigned < n) {
    const auto s = static_cast<std::size_t>(std::max_element(frac.begin(), frac.end()) - frac.begin());
    ++target[s];
    frac[s] = -1.0;
    ++assigned;
  }
  for (int s = 0; s < 3; ++s)
    if (target[static_cast<std::size_t>(s)] == 0)
      throw ConfigError(std::string("split '") + (s == 0 ? "train" : s == 1 ? "dev" : "test") + "' would be empty");

  // Shuffle, then group by first label so that the proportional assignment
  // below walks each label group contiguously.
  auto order = permutation(n, seed);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.documents[a].labels.front() < corpus.documents[b].labels.front();
  });

  std::vector<int> assignment(n, 0);
  std::array<std::size_t, 3> count{};
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t best = 0;
    double best_deficit = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      if (count[s] >= target[s]) continue;
      const double deficit = static_cast<double>(target[s]) * static_cast<double>(p + 1) / static_cast<double>(n) -
                             static_cast<double>(count[s]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    assignment[order[p]] = static_cast<int>(best);
    ++count[best];
  }
  return assignment;
}

Splits split(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed) {
  const auto assignment = split_assignment(corpus, ratios, seed);
  std::array<std::vector<std::size_t>, 3> idx;
  for (std::size_t i = 0; i < assignment.size(); ++i) idx[static_cast<std::size_t>(assignment[i])].push_back(i);
  return {corpus.subset(idx[0]), corpus.subset(idx[1]), corpus.subset(idx[2])};
}

BatchIterator::BatchIterator(std::size_t num_docs, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : batch_size_(batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (shuffle) {
    order_ = permutation(num_docs, seed);
  } else {
    order_.resize(num_docs);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }
}

std::optional<std::vector<std::size_t>> BatchIterator::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  pos_ = end;
  return batch;
}

// ---------------------------------------------------------------- key=value config

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> load_kv_file(const std::string& path) {
  try {
    return parse_kv(read_file(path));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace docbreg
