#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "docbreg/checkpoint.hpp"
#include "support.hpp"

using namespace docbreg;
using namespace testing_support;

namespace {

Checkpoint trained(EnsembleMode mode) {
  const Corpus c = tiny_corpus(8, 10, 30, 2, 3);
  auto enc = tiny_encoder(static_cast<int>(c.vocab.size()));
  TrainConfig tc;
  tc.steps = 3;
  tc.batch_size = 4;
  tc.lr = 1e-2;
  tc.g = 4;
  tc.subnet_hidden = 5;
  tc.ensemble_mode = mode;
  tc.seed = 17;
  return pretrain(c, enc, tc, PretrainMode::simcse_bregman);
}

std::string replace_header(const std::string& bytes, const std::string& from, const std::string& to) {
  std::string out = bytes;
  const auto pos = out.find(from);
  REQUIRE(pos != std::string::npos);
  out.replace(pos, from.size(), to);
  return out;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves every field") {
  for (auto mode : {EnsembleMode::affine, EnsembleMode::mlp}) {
    const Checkpoint ck = trained(mode);
    const std::string bytes = serialize_checkpoint(ck);
    CHECK(bytes.rfind("DOCBRGCK\n", 0) == 0);
    const Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.encoder == ck.encoder);
    CHECK(back.train == ck.train);
    CHECK(back.mode == ck.mode);
    CHECK(back.params == ck.params);
    CHECK(back.ensemble == ck.ensemble);
    CHECK(back.adam == ck.adam);
    CHECK(back.step == ck.step);
    CHECK(back.history == ck.history);
    CHECK(back.vocab_fingerprint == ck.vocab_fingerprint);
    CHECK(back.vocab_size == ck.vocab_size);
    CHECK(serialize_checkpoint(back) == bytes);
  }
}

TEST_CASE("a reloaded checkpoint encodes bit-identically") {
  const Checkpoint ck = trained(EnsembleMode::mlp);
  const auto dir = std::filesystem::temp_directory_path() / "docbreg_test_checkpoint";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ck.bin").string();
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  const Corpus c = tiny_corpus(3, 10, 30, 2, 99);
  for (const auto& d : c.documents)
    CHECK(encode(d, ck.params, ck.encoder, RunMode::eval, nullptr).vector ==
          encode(d, back.params, back.encoder, RunMode::eval, nullptr).vector);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected with a reason") {
  const std::string bytes = serialize_checkpoint(trained(EnsembleMode::affine));

  CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT\n{}\n"), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), CheckpointError);

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  try {
    deserialize_checkpoint(flipped);
    FAIL("expected a checksum error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }

  try {
    deserialize_checkpoint(replace_header(bytes, "\"format_version\":1", "\"format_version\":7"));
    FAIL("expected a version error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("format_version") != std::string::npos);
  }

  // The encoder config says 8 dims but the stored embedding table disagrees.
  try {
    deserialize_checkpoint(replace_header(bytes, "\"embed_dim\":8", "\"embed_dim\":6"));
    FAIL("expected a shape error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("embeddings") != std::string::npos);
  }
}

TEST_CASE("missing checkpoint files raise a checkpoint error") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/ck.bin"), CheckpointError);
}

TEST_CASE("config json round trips") {
  EncoderConfig e = tiny_encoder(50);
  e.pooling = Pooling::max;
  CHECK(encoder_config_from_json(to_json(e)) == e);
  TrainConfig t;
  t.lambda = 0.5;
  t.ensemble_mode = EnsembleMode::affine;
  CHECK(train_config_from_json(to_json(t)) == t);
  EnsembleConfig c;
  c.k = 3;
  CHECK(ensemble_config_from_json(to_json(c)) == c);
}
