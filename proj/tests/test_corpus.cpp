#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <numeric>
#include <set>

#include "docbreg/corpus.hpp"

using namespace docbreg;

namespace {

GenSpec small_spec(std::uint64_t seed) {
  GenSpec s;
  s.docs = 200;
  s.mean_length = 128;
  s.sd_length = 64;
  s.vocab_size = 1000;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("vocabulary reserves PAD, CLS and MASK") {
  Vocab v;
  CHECK(v.size() == 3);
  CHECK(v.token(Vocab::kPad) == "[PAD]");
  CHECK(v.token(Vocab::kCls) == "[CLS]");
  CHECK(v.token(Vocab::kMask) == "[MASK]");
  const TokenId a = v.add("alpha");
  CHECK(a == 3);
  CHECK(v.add("alpha") == a);
  CHECK(v.find("alpha").value() == a);
  CHECK_FALSE(v.find("beta").has_value());
}

TEST_CASE("vocabulary json round trip and validation") {
  Vocab v;
  v.add("x");
  v.add("y z");
  const Vocab back = Vocab::from_json(v.to_json());
  CHECK(back == v);
  CHECK(back.fingerprint() == v.fingerprint());
  CHECK_THROWS_AS(Vocab::from_json(R"({"[PAD]":0,"[CLS]":1,"[MASK]":2,"a":4})"), ValidationError);
  CHECK_THROWS_AS(Vocab::from_json(R"({"[CLS]":0,"[PAD]":1,"[MASK]":2})"), ValidationError);
  CHECK_THROWS_AS(Vocab::from_json("[1,2]"), ParseError);
}

TEST_CASE("generation is deterministic and independent of the execution policy") {
  const auto spec = small_spec(7);
  const Corpus a = generate_corpus(spec, ExecPolicy::serial);
  const Corpus b = generate_corpus(spec, ExecPolicy::parallel);
  CHECK(a == b);
  CHECK(to_jsonl(a) == to_jsonl(generate_corpus(spec)));
  CHECK_FALSE(to_jsonl(a) == to_jsonl(generate_corpus(small_spec(8))));
}

TEST_CASE("default-sized corpus: 1000 documents, 8 labels, mean length near 512") {
  GenSpec spec;
  spec.num_topics = 8;
  spec.docs = 1000;
  spec.mean_length = 512;
  spec.seed = 3;
  const Corpus c = generate_corpus(spec);
  CHECK(c.size() == 1000);
  CHECK(c.num_labels == 8);
  CHECK(c.vocab.size() == static_cast<std::size_t>(spec.vocab_size) + 3);
  double total = 0.0;
  for (const auto& d : c.documents) {
    total += static_cast<double>(d.token_ids.size());
    CHECK(d.token_ids.size() >= static_cast<std::size_t>(kMinDocLength));
    CHECK(d.token_ids.size() <= static_cast<std::size_t>(kMaxDocLength));
    CHECK(d.labels.size() == 1);
    for (TokenId t : d.token_ids) CHECK(t >= Vocab::kNumSpecials);
  }
  const double mean = total / 1000.0;
  CHECK(mean >= 0.8 * 512);
  CHECK(mean <= 1.2 * 512);
}

TEST_CASE("multi-label generation labels every sampled topic") {
  auto spec = small_spec(11);
  spec.task = TaskKind::multi_label;
  spec.topics_per_doc_min = 1;
  spec.topics_per_doc_max = 3;
  const Corpus c = generate_corpus(spec);
  c.validate();
  bool saw_multi = false;
  for (const auto& d : c.documents) {
    CHECK(d.labels.size() >= 1);
    CHECK(d.labels.size() <= 3);
    CHECK(std::is_sorted(d.labels.begin(), d.labels.end()));
    saw_multi |= d.labels.size() > 1;
  }
  CHECK(saw_multi);
}

TEST_CASE("invalid generator settings name the bound") {
  auto spec = small_spec(1);
  spec.vocab_size = 50;  // needs > topics * 10
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = small_spec(1);
  spec.mean_length = 32;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(GenSpec::from_kv({{"colour", "red"}}), ConfigError);
  CHECK_THROWS_AS(GenSpec::from_kv({{"docs", "ten"}}), ConfigError);
  const auto s = GenSpec::from_kv({{"topics", "4"}, {"topics_per_doc", "1..2"}, {"task", "multi_label"}});
  CHECK(s.num_topics == 4);
  CHECK(s.topics_per_doc_min == 1);
  CHECK(s.topics_per_doc_max == 2);
}

TEST_CASE("jsonl round trip reproduces the corpus") {
  const Corpus c = generate_corpus(small_spec(5));
  LoadOptions lo;
  lo.vocab = &c.vocab;
  lo.task_kind = c.task_kind;
  lo.num_labels = c.num_labels;
  CHECK(parse_jsonl(to_jsonl(c), lo) == c);

  const auto dir = std::filesystem::temp_directory_path() / "docbreg_test_corpus";
  std::filesystem::create_directories(dir);
  save_jsonl(c, (dir / "c.jsonl").string());
  CHECK(load_jsonl((dir / "c.jsonl").string(), lo) == c);
  std::filesystem::remove_all(dir);
}

TEST_CASE("jsonl ingestion of text records") {
  const std::string text =
      "{\"id\":\"a\",\"text\":\"the cat sat\",\"labels\":[0],\"extra\":1}\n"
      "{\"id\":\"b\",\"text\":\"the dog\",\"labels\":[1]}\n"
      "\n"
      "{\"id\":\"c\",\"token_ids\":[3,4],\"labels\":[1]}\n";
  const Corpus c = parse_jsonl(text);
  CHECK(c.size() == 3);
  CHECK(c.num_labels == 2);
  CHECK(c.vocab.size() == 3 + 4);
  CHECK(c.documents[0].token_ids == std::vector<TokenId>{3, 4, 5});
  CHECK(c.documents[1].token_ids[0] == 3);
}

TEST_CASE("jsonl errors carry the line number") {
  try {
    parse_jsonl("{\"text\":\"a\",\"labels\":[0]}\n{broken\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_jsonl("{\"text\":\"\",\"labels\":[0]}\n"), ValidationError);
  LoadOptions multi;
  multi.task_kind = TaskKind::multi_label;
  CHECK_THROWS_AS(parse_jsonl("{\"text\":\"a b\",\"labels\":[]}\n", multi), ValidationError);
  CHECK_THROWS_AS(parse_jsonl("{\"text\":\"a b\"}\n"), ParseError);
}

TEST_CASE("splits are disjoint, exhaustive, sized and deterministic") {
  GenSpec spec;
  spec.docs = 1000;
  spec.mean_length = 64;
  spec.sd_length = 8;
  spec.seed = 2;
  const Corpus c = generate_corpus(spec);
  const Splits s = split(c, {0.8, 0.1, 0.1}, 9);
  CHECK(s.train.size() == 800);
  CHECK(s.dev.size() == 100);
  CHECK(s.test.size() == 100);
  std::set<std::string> ids;
  for (const Corpus* part : {&s.train, &s.dev, &s.test})
    for (const auto& d : part->documents) CHECK(ids.insert(d.id).second);
  std::set<std::string> all;
  for (const auto& d : c.documents) all.insert(d.id);
  CHECK(ids == all);
  CHECK(split_assignment(c, {0.8, 0.1, 0.1}, 9) == split_assignment(c, {0.8, 0.1, 0.1}, 9));
  CHECK(split_assignment(c, {0.8, 0.1, 0.1}, 9) != split_assignment(c, {0.8, 0.1, 0.1}, 10));

  // Stratification: every label's share of dev stays close to its overall share.
  std::vector<int> total(8, 0), dev(8, 0);
  for (const auto& d : c.documents) total[static_cast<std::size_t>(d.labels[0])]++;
  for (const auto& d : s.dev.documents) dev[static_cast<std::size_t>(d.labels[0])]++;
  for (std::size_t l = 0; l < 8; ++l) CHECK(std::abs(dev[l] - total[l] / 10.0) <= 1.5);
}

TEST_CASE("split rejects bad ratios and empty parts") {
  const Corpus c = generate_corpus(small_spec(1));
  CHECK_THROWS_AS(split(c, {0.8, 0.1, 0.2}, 0), ConfigError);
  CHECK_THROWS_AS(split(c, {1.0, 0.0, 0.0}, 0), ConfigError);
  CHECK_THROWS_AS(split(c.subset({0, 1}), {0.8, 0.1, 0.1}, 0), ConfigError);
}

TEST_CASE("majority-class prediction is far from solving the dev split") {
  GenSpec spec;
  spec.seed = 4;
  spec.mean_length = 64;
  spec.sd_length = 8;
  const Corpus c = generate_corpus(spec);
  const Splits s = split(c, {0.8, 0.1, 0.1}, 1);
  std::vector<int> count(8, 0);
  for (const auto& d : s.train.documents) count[static_cast<std::size_t>(d.labels[0])]++;
  const int major = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
  // macro-F1 of a constant predictor: only the majority label scores.
  int tp = 0;
  for (const auto& d : s.dev.documents) tp += d.labels[0] == major;
  const double prec = static_cast<double>(tp) / static_cast<double>(s.dev.size());
  const double f1 = tp > 0 ? 2 * prec / (prec + 1.0) : 0.0;
  CHECK(f1 / 8.0 < 2.0 / 8.0);
}

TEST_CASE("batch iterator") {
  BatchIterator it(10, 4, 0, false);
  std::vector<std::size_t> sizes, order;
  while (auto b = it.next()) {
    sizes.push_back(b->size());
    order.insert(order.end(), b->begin(), b->end());
  }
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
  std::vector<std::size_t> iota(10);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  CHECK(order == iota);

  auto drain = [](BatchIterator b) {
    std::vector<std::size_t> o;
    while (auto x = b.next()) o.insert(o.end(), x->begin(), x->end());
    return o;
  };
  const auto s1 = drain(BatchIterator(50, 7, 3, true));
  CHECK(s1 == drain(BatchIterator(50, 7, 3, true)));
  CHECK(s1 != drain(BatchIterator(50, 7, 4, true)));
  std::vector<std::size_t> sorted = s1;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> all(50);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(sorted == all);
  CHECK_THROWS_AS(BatchIterator(5, 0, 0, true), ConfigError);
}

TEST_CASE("key=value parsing") {
  const auto kv = parse_kv("# comment\n topics = 8 \n\nzipf=1.2 # trailing\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("topics") == "8");
  CHECK(kv.at("zipf") == "1.2");
  CHECK_THROWS(parse_kv("no equals sign\n"));
}
