#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "docbreg/common.hpp"
#include "docbreg/kernels.hpp"

namespace docbreg {

using TokenId = std::int32_t;

enum class TaskKind { single_label, multi_label };

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

/// Token vocabulary with the three reserved ids PAD=0, CLS=1, MASK=2.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kCls = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kNumSpecials = 3;

  Vocab();

  /// Returns the id of `token`, inserting it if absent.
  TokenId add(const std::string& token);
  std::optional<TokenId> find(const std::string& token) const;
  const std::string& token(TokenId id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return id_to_token_.size(); }
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }
  /// Stable hash of the id -> token mapping.
  std::uint64_t fingerprint() const;

  /// {token: id} object.
  std::string to_json() const;
  static Vocab from_json(const std::string& text);

  bool operator==(const Vocab& o) const { return id_to_token_ == o.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

struct Document {
  std::string id;
  std::vector<TokenId> token_ids;
  std::vector<int> labels;  // sorted, unique

  bool operator==(const Document&) const = default;
};

struct Corpus {
  std::vector<Document> documents;
  int num_labels = 0;
  TaskKind task_kind = TaskKind::single_label;
  Vocab vocab;

  std::size_t size() const { return documents.size(); }
  /// Checks every type invariant; throws ValidationError naming the document.
  void validate() const;
  /// Same metadata and vocabulary, selected documents.
  Corpus subset(const std::vector<std::size_t>& indices) const;

  bool operator==(const Corpus&) const = default;
};

/// Parameters of the synthetic topic corpus. Each document mixes a shared
/// Zipfian background vocabulary with Zipfian draws from the vocabulary slices
/// of its topics.
struct GenSpec {
  int num_topics = 8;
  int vocab_size = 4000;  // regular tokens, excluding the reserved ids
  int docs = 1000;
  double mean_length = 512.0;
  double sd_length = 256.0;
  int topics_per_doc_min = 1;
  int topics_per_doc_max = 1;
  double zipf_exponent = 1.1;
  double background_share = 0.9;  // probability a token comes from the shared slice
  TaskKind task = TaskKind::single_label;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the violated bound.
  void validate() const;
  /// Accepts the keys topics, vocab, docs, mean_length, sd_length,
  /// topics_per_doc ("a..b" or "a"), zipf, background, task, seed.
  static GenSpec from_kv(const std::map<std::string, std::string>& kv);
};

inline constexpr int kMinDocLength = 64;
inline constexpr int kMaxDocLength = 8192;

Corpus generate_corpus(const GenSpec& spec, ExecPolicy policy = ExecPolicy::parallel);

/// One {"id", "token_ids", "labels"} record per line.
std::string to_jsonl(const Corpus& corpus);
void save_jsonl(const Corpus& corpus, const std::string& path);

struct LoadOptions {
  const Vocab* vocab = nullptr;  // starting vocabulary; extended by "text" records
  std::optional<TaskKind> task_kind;
  std::optional<int> num_labels;
};

Corpus parse_jsonl(const std::string& text, const LoadOptions& opts = {});
Corpus load_jsonl(const std::string& path, const LoadOptions& opts = {});

struct Splits {
  Corpus train;
  Corpus dev;
  Corpus test;
};

/// Disjoint, exhaustive, stratified by first label. Throws ConfigError when
/// ratios are invalid or a split would be empty.
Splits split(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed);
/// Index assignment behind split(): 0 = train, 1 = dev, 2 = test.
std::vector<int> split_assignment(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed);

/// Seed-deterministic permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

/// Single-pass iterator over batches of document indices.
class BatchIterator {
 public:
  BatchIterator(std::size_t num_docs, std::size_t batch_size, std::uint64_t seed, bool shuffle);

  /// Next batch, or nullopt once the pass is exhausted. The last batch may be partial.
  std::optional<std::vector<std::size_t>> next();

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
};

/// Parses "key=value" lines with '#' comments into a map.
std::map<std::string, std::string> parse_kv(const std::string& text);
std::map<std::string, std::string> load_kv_file(const std::string& path);

}  // namespace docbreg
