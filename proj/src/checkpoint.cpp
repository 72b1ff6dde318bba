#include "docbreg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

namespace docbreg {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "DOCBRGCK\n";

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw CheckpointError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw CheckpointError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

json to_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"num_layers", c.num_layers},
          {"window", c.window},         {"ffn_dim", c.ffn_dim},     {"dropout", c.dropout},
          {"mask_rate", c.mask_rate},   {"proj_dim", c.proj_dim},   {"pooling", to_string(c.pooling)},
          {"max_len", c.max_len}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.vocab_size = field<int>(j, "vocab_size");
  c.embed_dim = field<int>(j, "embed_dim");
  c.num_layers = field<int>(j, "num_layers");
  c.window = field<int>(j, "window");
  c.ffn_dim = field<int>(j, "ffn_dim");
  c.dropout = field<double>(j, "dropout");
  c.mask_rate = field<double>(j, "mask_rate");
  c.proj_dim = field<int>(j, "proj_dim");
  c.pooling = parse_pooling(field<std::string>(j, "pooling"));
  c.max_len = field<int>(j, "max_len");
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"lambda", c.lambda},
          {"sigma", c.sigma},
          {"g", c.g},
          {"temperature", c.temperature},
          {"checkpoint_every", c.checkpoint_every},
          {"clip_norm", c.clip_norm},
          {"ensemble_mode", to_string(c.ensemble_mode)},
          {"subnet_hidden", c.subnet_hidden},
          {"batch_norm", c.batch_norm}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.steps = field<int>(j, "steps");
  c.batch_size = field<int>(j, "batch_size");
  c.lr = field<double>(j, "lr");
  c.weight_decay = field<double>(j, "weight_decay");
  c.beta1 = field<double>(j, "beta1");
  c.beta2 = field<double>(j, "beta2");
  c.adam_eps = field<double>(j, "adam_eps");
  c.seed = field<std::uint64_t>(j, "seed");
  c.lambda = field<double>(j, "lambda");
  c.sigma = field<double>(j, "sigma");
  c.g = field<int>(j, "g");
  c.temperature = field<double>(j, "temperature");
  c.checkpoint_every = field<int>(j, "checkpoint_every");
  c.clip_norm = field<double>(j, "clip_norm");
  c.ensemble_mode = parse_ensemble_mode(field<std::string>(j, "ensemble_mode"));
  c.subnet_hidden = field<int>(j, "subnet_hidden");
  c.batch_norm = field<bool>(j, "batch_norm");
  return c;
}

json to_json(const EnsembleConfig& c) {
  return {{"k", c.k},           {"mode", to_string(c.mode)},    {"input_dim", c.input_dim},
          {"hidden", c.hidden}, {"batch_norm", c.batch_norm}, {"bn_momentum", c.bn_momentum}};
}

EnsembleConfig ensemble_config_from_json(const json& j) {
  EnsembleConfig c;
  c.k = field<int>(j, "k");
  c.mode = parse_ensemble_mode(field<std::string>(j, "mode"));
  c.input_dim = field<int>(j, "input_dim");
  c.hidden = field<int>(j, "hidden");
  c.batch_norm = field<bool>(j, "batch_norm");
  c.bn_momentum = field<double>(j, "bn_momentum");
  return c;
}

namespace {

// Every tensor stored in a checkpoint, in payload order.
std::vector<ConstNamedTensor> stored_tensors(const Checkpoint& ck) {
  std::vector<ConstNamedTensor> out = ck.params.tensors();
  for (const auto& t : ck.ensemble.tensors()) out.push_back(t);
  for (const auto& t : ck.ensemble.buffers()) out.push_back(t);
  const std::size_t n_opt = out.size() - ck.ensemble.buffers().size();
  if (!ck.adam.m.empty()) {
    for (std::size_t i = 0; i < n_opt; ++i) out.push_back({"adam.m." + out[i].name, &ck.adam.m[i]});
    for (std::size_t i = 0; i < n_opt; ++i) out.push_back({"adam.v." + out[i].name, &ck.adam.v[i]});
  }
  return out;
}

std::vector<NamedTensor> stored_tensors(Checkpoint& ck, bool with_adam) {
  std::vector<NamedTensor> out = ck.params.tensors();
  for (auto& t : ck.ensemble.tensors()) out.push_back(t);
  const std::size_t n_opt = out.size();
  for (auto& t : ck.ensemble.buffers()) out.push_back(t);
  if (with_adam) {
    ck.adam.m.clear();
    ck.adam.v.clear();
    for (std::size_t i = 0; i < n_opt; ++i) {
      ck.adam.m.emplace_back(out[i].tensor->rows, out[i].tensor->cols);
      ck.adam.v.emplace_back(out[i].tensor->rows, out[i].tensor->cols);
    }
    for (std::size_t i = 0; i < n_opt; ++i) out.push_back({"adam.m." + out[i].name, &ck.adam.m[i]});
    for (std::size_t i = 0; i < n_opt; ++i) out.push_back({"adam.v." + out[i].name, &ck.adam.v[i]});
  }
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  const auto tensors = stored_tensors(ck);
  std::string payload;
  json table = json::array();
  for (const auto& t : tensors) {
    table.push_back({{"name", t.name}, {"rows", t.tensor->rows}, {"cols", t.tensor->cols}, {"offset", payload.size()}});
    const auto* bytes = reinterpret_cast<const char*>(t.tensor->data.data());
    payload.append(bytes, t.tensor->data.size() * sizeof(double));
  }
  json history = json::array();
  for (const auto& r : ck.history) history.push_back({r.step, r.mnr, r.bregman, r.total});

  json header = {{"format_version", ck.format_version},
                 {"encoder", to_json(ck.encoder)},
                 {"train", to_json(ck.train)},
                 {"ensemble", to_json(ck.ensemble.config)},
                 {"mode", to_string(ck.mode)},
                 {"rng_seed", ck.rng_seed},
                 {"step", ck.step},
                 {"adam_step", ck.adam.step},
                 {"has_adam", !ck.adam.m.empty()},
                 {"vocab_fingerprint", ck.vocab_fingerprint},
                 {"vocab_size", ck.vocab_size},
                 {"history", history},
                 {"tensors", table},
                 {"payload_bytes", payload.size()},
                 {"payload_fnv1a", fnv1a(payload)}};
  std::string out(kMagic);
  out += header.dump();
  out += '\n';
  out += payload;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
  const std::size_t nl = bytes.find('\n', kMagic.size());
  if (nl == std::string_view::npos) throw CheckpointError("truncated header");
  json h;
  try {
    h = json::parse(bytes.substr(kMagic.size(), nl - kMagic.size()));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable header: ") + e.what());
  }

  const int version = field<int>(h, "format_version");
  if (version != kCheckpointFormatVersion)
    throw CheckpointError("format_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");

  Checkpoint ck;
  try {
    ck.encoder = encoder_config_from_json(h.at("encoder"));
    ck.train = train_config_from_json(h.at("train"));
    ck.ensemble = SubnetEnsemble::zeros(ensemble_config_from_json(h.at("ensemble")));
    ck.mode = parse_pretrain_mode(field<std::string>(h, "mode"));
    ck.encoder.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid configuration in header: ") + e.what());
  }
  ck.params = EncoderParams::zeros(ck.encoder, true);
  ck.rng_seed = field<std::uint64_t>(h, "rng_seed");
  ck.step = field<std::int64_t>(h, "step");
  ck.adam.step = field<std::int64_t>(h, "adam_step");
  ck.vocab_fingerprint = field<std::uint64_t>(h, "vocab_fingerprint");
  ck.vocab_size = field<std::uint64_t>(h, "vocab_size");
  for (const auto& r : field<json>(h, "history")) {
    if (!r.is_array() || r.size() != 4) throw CheckpointError("malformed entry in field 'history'");
    ck.history.push_back({r[0].get<std::int64_t>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()});
  }

  const auto payload_bytes = field<std::uint64_t>(h, "payload_bytes");
  const std::string_view payload = bytes.substr(nl + 1);
  if (payload.size() < payload_bytes)
    throw CheckpointError("truncated payload: expected " + std::to_string(payload_bytes) + " bytes, found " +
                          std::to_string(payload.size()));
  if (payload.size() > payload_bytes) throw CheckpointError("trailing bytes after payload");
  if (fnv1a(payload) != field<std::uint64_t>(h, "payload_fnv1a"))
    throw CheckpointError("payload checksum mismatch (field 'payload_fnv1a')");

  std::map<std::string, json> table;
  for (const auto& t : field<json>(h, "tensors")) table[t.at("name").get<std::string>()] = t;

  const auto expected = stored_tensors(ck, field<bool>(h, "has_adam"));
  if (expected.size() != table.size())
    throw CheckpointError("tensor table lists " + std::to_string(table.size()) + " tensors, expected " +
                          std::to_string(expected.size()));
  for (const auto& t : expected) {
    auto it = table.find(t.name);
    if (it == table.end()) throw CheckpointError("missing tensor '" + t.name + "'");
    const auto rows = it->second.at("rows").get<std::size_t>();
    const auto cols = it->second.at("cols").get<std::size_t>();
    if (rows != t.tensor->rows || cols != t.tensor->cols)
      throw CheckpointError("shape mismatch for tensor '" + t.name + "': expected " + std::to_string(t.tensor->rows) +
                            "x" + std::to_string(t.tensor->cols) + ", found " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    const auto offset = it->second.at("offset").get<std::size_t>();
    const std::size_t n = t.tensor->data.size() * sizeof(double);
    if (offset + n > payload.size()) throw CheckpointError("tensor '" + t.name + "' extends past the payload");
    std::memcpy(t.tensor->data.data(), payload.data() + offset, n);
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError("cannot read checkpoint '" + path + "': " + e.what());
  }
  return deserialize_checkpoint(bytes);
}

}  // namespace docbreg
