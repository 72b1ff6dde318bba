#include "docbreg/cli.hpp"

#include <cstdio>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "docbreg/checkpoint.hpp"
#include "docbreg/corpus.hpp"
#include "docbreg/evaluation.hpp"
#include "docbreg/training.hpp"

namespace docbreg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using KV = std::map<std::string, std::string>;

// ---------------------------------------------------------------- option plumbing

struct Key {
  Key(std::string n, std::string h, bool flag = false, std::string names = {})
      : name(std::move(n)), help(std::move(h)), is_flag(flag), flags(std::move(names)) {}
  std::string name;
  std::string help;
  bool is_flag;
  std::string flags;  // CLI11 names; defaults to --name
};

// Every option is also a config-file key of the same name.
struct Command {
  CLI::App* app = nullptr;
  std::vector<Key> keys;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
  std::vector<std::string> positionals;

  KV merged() const {
    KV kv;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("--config: file '" + config_path + "' does not exist");
      kv = load_kv_file(config_path);
      std::set<std::string> known;
      for (const auto& k : keys) known.insert(k.name);
      for (const auto& [k, v] : kv)
        if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in config file '" + config_path + "'");
    }
    for (const auto& k : keys) {
      if (options.at(k.name)->count() == 0) continue;
      kv[k.name] = k.is_flag ? (switches.at(k.name) ? "true" : "false") : values.at(k.name);
    }
    return kv;
  }
};

Command& add_command(CLI::App& app, std::deque<Command>& cmds, const std::string& name, const std::string& desc,
                     std::vector<Key> keys) {
  Command& c = cmds.emplace_back();
  c.app = app.add_subcommand(name, desc);
  c.keys = std::move(keys);
  c.app->add_option("--config", c.config_path, "key=value file; flags override its values");
  for (const auto& k : c.keys) {
    const std::string names = k.flags.empty() ? "--" + k.name : k.flags;
    if (k.is_flag) {
      c.switches[k.name] = false;
      c.options[k.name] = c.app->add_flag(names, c.switches[k.name], k.help);
    } else {
      c.values[k.name];
      c.options[k.name] = c.app->add_option(names, c.values[k.name], k.help);
    }
  }
  return c;
}

std::optional<std::string> get(const KV& kv, const std::string& k) {
  auto it = kv.find(k);
  if (it == kv.end()) return std::nullopt;
  return it->second;
}

std::string require(const KV& kv, const std::string& k) {
  auto v = get(kv, k);
  if (!v || v->empty()) throw ConfigError("missing required option --" + k);
  return *v;
}

std::string str(const KV& kv, const std::string& k, const std::string& def) { return get(kv, k).value_or(def); }

template <class T>
T num(const KV& kv, const std::string& k, T def) {
  auto v = get(kv, k);
  if (!v) return def;
  try {
    std::size_t pos = 0;
    T out;
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(*v, &pos));
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument(*v);
      out = static_cast<T>(std::stoull(*v, &pos));
    } else {
      const long long x = std::stoll(*v, &pos);
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) throw std::out_of_range(*v);
      out = static_cast<T>(x);
    }
    if (pos != v->size()) throw std::invalid_argument(*v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for --" + k + ": '" + *v + "'");
  }
}

bool boolean(const KV& kv, const std::string& k, bool def) {
  auto v = get(kv, k);
  if (!v) return def;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError("invalid value for --" + k + ": '" + *v + "' (expected true or false)");
}

std::string existing_path(const KV& kv, const std::string& k) {
  const std::string p = require(kv, k);
  if (!fs::exists(p)) throw ConfigError("--" + k + ": path '" + p + "' does not exist");
  return p;
}

void write_json(const std::string& path, const json& j) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_file_atomic(path, j.dump(2) + "\n");
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------- data directories

const std::vector<std::string> kSplits = {"train", "dev", "test"};

Corpus load_split(const std::string& dir, const std::string& name) {
  const fs::path d(dir);
  for (const char* f : {"manifest.json", "vocab.json"})
    if (!fs::exists(d / f)) throw ConfigError("--data: '" + dir + "' has no " + f);
  const json manifest = read_json((d / "manifest.json").string());
  const Vocab vocab = Vocab::from_json(read_file((d / "vocab.json").string()));
  LoadOptions lo;
  lo.vocab = &vocab;
  lo.task_kind = parse_task_kind(manifest.at("task_kind").get<std::string>());
  lo.num_labels = manifest.at("num_labels").get<int>();
  const fs::path file = d / (name + ".jsonl");
  if (!fs::exists(file)) throw ConfigError("--data: '" + dir + "' has no " + name + ".jsonl");
  Corpus c = load_jsonl(file.string(), lo);
  if (!(c.vocab == vocab)) throw ValidationError(file.string() + " introduces tokens missing from vocab.json");
  return c;
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    out.push_back(num<double>({{"split", part}}, "split", 0.0));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.size() != 3) throw ConfigError("--split expects three comma-separated ratios, got '" + s + "'");
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_gen_corpus(const KV& kv, std::ostream& out) {
  require(kv, "topics");
  const std::string dir = require(kv, "out");
  const auto seed = num<std::uint64_t>(kv, "seed", 0);

  KV gen;
  for (const char* k : {"topics", "vocab", "docs", "mean_length", "sd_length", "topics_per_doc", "zipf", "background",
                        "task"})
    if (auto v = get(kv, k)) gen[k] = *v;
  gen["seed"] = std::to_string(substream(seed, "corpus"));
  const GenSpec spec = GenSpec::from_kv(gen);
  const auto r = parse_ratios(str(kv, "split", "0.8,0.1,0.1"));

  const Corpus corpus = generate_corpus(spec);
  const Splits parts = split(corpus, {r[0], r[1], r[2]}, substream(seed, "split"));
  fs::create_directories(dir);
  save_jsonl(parts.train, (fs::path(dir) / "train.jsonl").string());
  save_jsonl(parts.dev, (fs::path(dir) / "dev.jsonl").string());
  save_jsonl(parts.test, (fs::path(dir) / "test.jsonl").string());
  write_file_atomic((fs::path(dir) / "vocab.json").string(), corpus.vocab.to_json());

  json manifest = {{"task_kind", to_string(corpus.task_kind)},
                   {"num_labels", corpus.num_labels},
                   {"seed", seed},
                   {"vocab_size", corpus.vocab.size()},
                   {"vocab_fingerprint", corpus.vocab.fingerprint()},
                   {"split_ratios", r},
                   {"splits", {{"train", parts.train.size()}, {"dev", parts.dev.size()}, {"test", parts.test.size()}}},
                   {"generator",
                    {{"topics", spec.num_topics},
                     {"vocab", spec.vocab_size},
                     {"docs", spec.docs},
                     {"mean_length", spec.mean_length},
                     {"sd_length", spec.sd_length},
                     {"topics_per_doc", std::to_string(spec.topics_per_doc_min) + ".." +
                                            std::to_string(spec.topics_per_doc_max)},
                     {"zipf", spec.zipf_exponent},
                     {"background", spec.background_share},
                     {"task", to_string(spec.task)}}}};
  write_json((fs::path(dir) / "manifest.json").string(), manifest);
  out << "wrote " << corpus.size() << " documents (train " << parts.train.size() << ", dev " << parts.dev.size()
      << ", test " << parts.test.size() << ") to " << dir << "\n";
  return kExitOk;
}

EncoderConfig encoder_config(const KV& kv) {
  EncoderConfig c;
  c.embed_dim = num<int>(kv, "embed_dim", c.embed_dim);
  c.num_layers = num<int>(kv, "num_layers", c.num_layers);
  c.window = num<int>(kv, "window", c.window);
  c.ffn_dim = num<int>(kv, "ffn_dim", c.ffn_dim);
  c.dropout = num<double>(kv, "dropout", c.dropout);
  c.mask_rate = num<double>(kv, "mask_rate", c.mask_rate);
  c.proj_dim = num<int>(kv, "proj_dim", c.proj_dim);
  c.pooling = parse_pooling(str(kv, "pooling", to_string(c.pooling)));
  c.max_len = num<int>(kv, "max_len", c.max_len);
  return c;
}

TrainConfig train_config(const KV& kv, std::uint64_t seed) {
  TrainConfig c;
  c.steps = num<int>(kv, "steps", c.steps);
  c.batch_size = num<int>(kv, "batch_size", c.batch_size);
  c.lr = num<double>(kv, "lr", c.lr);
  c.weight_decay = num<double>(kv, "weight_decay", c.weight_decay);
  c.beta1 = num<double>(kv, "beta1", c.beta1);
  c.beta2 = num<double>(kv, "beta2", c.beta2);
  c.adam_eps = num<double>(kv, "adam_eps", c.adam_eps);
  c.lambda = num<double>(kv, "lambda", c.lambda);
  c.sigma = num<double>(kv, "sigma", c.sigma);
  c.g = num<int>(kv, "g", c.g);
  c.temperature = num<double>(kv, "temperature", c.temperature);
  c.checkpoint_every = num<int>(kv, "checkpoint_every", c.checkpoint_every);
  c.clip_norm = num<double>(kv, "clip_norm", c.clip_norm);
  c.ensemble_mode = parse_ensemble_mode(str(kv, "ensemble", to_string(c.ensemble_mode)));
  c.subnet_hidden = num<int>(kv, "subnet_hidden", c.subnet_hidden);
  c.batch_norm = boolean(kv, "batch_norm", c.batch_norm);
  c.seed = substream(seed, "train");
  return c;
}

int cmd_pretrain(const KV& kv, std::ostream& out, std::ostream& err) {
  const std::string data = existing_path(kv, "data");
  const std::string dir = require(kv, "out");
  const auto seed = num<std::uint64_t>(kv, "seed", 0);
  const PretrainMode mode = parse_pretrain_mode(str(kv, "mode", "simcse+bregman"));
  const EncoderConfig enc = encoder_config(kv);
  const TrainConfig tc = train_config(kv, seed);
  tc.validate();
  set_threads(num<int>(kv, "threads", 0));

  const Corpus corpus = load_split(data, "train");
  fs::create_directories(dir);
  char name[64];
  PretrainOptions opts;
  opts.on_checkpoint = [&](const Checkpoint& ck) {
    std::snprintf(name, sizeof name, "ckpt-%06lld.bin", static_cast<long long>(ck.step));
    save_checkpoint(ck, (fs::path(dir) / name).string());
  };
  opts.on_warning = [&](const std::string& w) { err << "warning: " << w << "\n"; };

  Checkpoint ck;
  try {
    ck = pretrain(corpus, enc, tc, mode, opts);
  } catch (const NonFiniteLossError& e) {
    save_checkpoint(e.checkpoint, (fs::path(dir) / "ckpt-last-good.bin").string());
    write_file_atomic((fs::path(dir) / "loss.csv").string(), loss_history_csv(e.checkpoint.history));
    throw;
  }
  write_file_atomic((fs::path(dir) / "loss.csv").string(), loss_history_csv(ck.history));
  const LossRecord& last = ck.history.back();
  char line[256];
  std::snprintf(line, sizeof line, "step %lld: mnr=%.6f bregman=%.6f lambda=%g total=%.6f\n",
                static_cast<long long>(last.step), last.mnr, last.bregman, tc.effective_lambda(mode), last.total);
  out << line;
  return kExitOk;
}

int cmd_embed(const KV& kv, std::ostream& out) {
  const std::string ck_path = existing_path(kv, "checkpoint");
  const std::string data = existing_path(kv, "data");
  const std::string dir = require(kv, "out");
  const bool untrained = boolean(kv, "untrained", false);
  set_threads(num<int>(kv, "threads", 0));

  Checkpoint ck = load_checkpoint(ck_path);
  if (untrained) {
    const Corpus train = load_split(data, "train");
    if (train.vocab.fingerprint() != ck.vocab_fingerprint)
      throw ArtifactMismatchError("corpus vocabulary does not match the checkpoint vocabulary");
    ck = initial_checkpoint(train, ck.encoder, ck.train, ck.mode);
  }
  ExtractOptions eo;
  if (auto p = get(kv, "pooling")) eo.pooling = parse_pooling(*p);
  if (get(kv, "max_len")) eo.max_len = num<int>(kv, "max_len", 0);

  fs::create_directories(dir);
  for (const auto& s : kSplits) {
    const EmbeddingMatrix e = extract_embeddings(load_split(data, s), ck, eo);
    write_json((fs::path(dir) / (s + ".json")).string(), e.to_json());
  }
  const std::string model = str(kv, "model", untrained ? "baseline" : to_string(ck.mode));
  json manifest = {{"model", model},
                   {"untrained", untrained},
                   {"step", untrained ? 0 : ck.step},
                   {"pooling", to_string(eo.pooling.value_or(ck.encoder.pooling))},
                   {"max_len", eo.max_len.value_or(ck.encoder.max_len)}};
  write_json((fs::path(dir) / "manifest.json").string(), manifest);
  out << "wrote embeddings for model '" << model << "' to " << dir << "\n";
  return kExitOk;
}

struct EmbeddingSplits {
  EmbeddingMatrix train, dev, test;
  std::string model;
};

EmbeddingSplits load_embeddings(const KV& kv) {
  const fs::path dir = existing_path(kv, "embeddings");
  EmbeddingSplits e;
  for (const auto& s : kSplits)
    if (!fs::exists(dir / (s + ".json"))) throw ConfigError("--embeddings: '" + dir.string() + "' has no " + s + ".json");
  e.train = EmbeddingMatrix::from_json(read_json((dir / "train.json").string()));
  e.dev = EmbeddingMatrix::from_json(read_json((dir / "dev.json").string()));
  e.test = EmbeddingMatrix::from_json(read_json((dir / "test.json").string()));
  for (const EmbeddingMatrix* m : {&e.dev, &e.test})
    if (m->dim() != e.train.dim() || m->num_labels != e.train.num_labels || m->task_kind != e.train.task_kind)
      throw ArtifactMismatchError("embedding splits in '" + dir.string() + "' disagree on shape or label set");
  if (fs::exists(dir / "manifest.json")) e.model = read_json((dir / "manifest.json").string()).value("model", "");
  e.model = str(kv, "model", e.model);
  return e;
}

ProbeConfig probe_config(const KV& kv) {
  ProbeConfig c;
  c.head = parse_probe_head(str(kv, "head", to_string(c.head)));
  c.epochs = num<int>(kv, "epochs", c.epochs);
  c.lr = num<double>(kv, "lr", c.lr);
  c.batch_size = num<int>(kv, "batch_size", c.batch_size);
  c.patience = num<int>(kv, "patience", c.patience);
  c.hidden = num<int>(kv, "hidden", c.hidden);
  c.weight_decay = num<double>(kv, "weight_decay", c.weight_decay);
  c.standardize = boolean(kv, "standardize", c.standardize);
  c.seed = substream(num<std::uint64_t>(kv, "seed", 0), "probe");
  c.validate();
  return c;
}

void tag(ProbeReport& r, const KV& kv, const std::string& model, bool timing) {
  r.model = model;
  r.dataset = str(kv, "dataset", "synthetic");
  if (!timing) r.wall_clock_s.reset();
}

int cmd_probe(const KV& kv, std::ostream& out) {
  const auto e = load_embeddings(kv);
  const ProbeConfig pc = probe_config(kv);
  const std::string path = require(kv, "out");
  ProbeReport r = train_probe(e.train, e.dev, e.test, pc);
  tag(r, kv, e.model, boolean(kv, "record_timing", false));
  write_json(path, r.to_json());
  char line[160];
  std::snprintf(line, sizeof line, "%s probe: micro-F1 %.4f, macro-F1 %.4f (best epoch %d)\n", r.setting.c_str(),
                r.micro_f1, r.macro_f1, r.best_epoch);
  out << line;
  return kExitOk;
}

int cmd_fewshot(const KV& kv, std::ostream& out) {
  const auto e = load_embeddings(kv);
  const ProbeConfig pc = probe_config(kv);
  const std::string path = require(kv, "out");
  FewShotReport r = fewshot_eval(e.train, e.dev, e.test, num<int>(kv, "shots", 8), num<int>(kv, "seeds", 5), pc);
  const bool timing = boolean(kv, "record_timing", false);
  for (auto& run : r.runs) tag(run, kv, e.model, timing);
  json j = r.to_json();
  j["setting"] = to_string(pc.head);
  j["model"] = e.model;
  j["dataset"] = str(kv, "dataset", "synthetic");
  write_json(path, j);
  char line[160];
  std::snprintf(line, sizeof line, "%d-shot %s probe over %zu seeds: micro-F1 %.4f +- %.4f, macro-F1 %.4f +- %.4f\n",
                r.shots, to_string(pc.head).c_str(), r.runs.size(), r.mean_micro, r.sd_micro, r.mean_macro,
                r.sd_macro);
  out << line;
  return kExitOk;
}

int cmd_report(const KV& kv, const std::vector<std::string>& inputs, std::ostream& out) {
  if (inputs.empty()) throw ConfigError("report: no input reports given");
  std::vector<ProbeReport> reports;
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw ConfigError("report: input '" + p + "' does not exist");
    const json j = read_json(p);
    if (j.contains("runs")) {  // few-shot summary
      ProbeReport r;
      r.setting = j.value("shots", 0) > 0 ? std::to_string(j.at("shots").get<int>()) + "-shot " + j.value("setting", "")
                                          : j.value("setting", "");
      r.model = j.value("model", "");
      r.dataset = j.value("dataset", "");
      r.micro_f1 = j.at("mean_micro_f1").get<double>();
      r.macro_f1 = j.at("mean_macro_f1").get<double>();
      reports.push_back(r);
    } else {
      reports.push_back(ProbeReport::from_json(j));
    }
  }
  const std::string md = render_report(reports);
  if (auto path = get(kv, "out"); path && !path->empty()) {
    write_file_atomic(*path, md);
    out << "wrote " << *path << "\n";
  } else {
    out << md;
  }
  return kExitOk;
}

std::vector<Key> probe_keys() {
  return {{"embeddings", "directory written by embed"},
          {"out", "report JSON path", false, "-o,--out"},
          {"head", "linear | mlp"},
          {"epochs", "maximum epochs"},
          {"lr", "learning rate"},
          {"batch_size", "minibatch size"},
          {"patience", "early-stopping patience in epochs"},
          {"hidden", "mlp head width"},
          {"weight_decay", "AdamW weight decay"},
          {"standardize", "z-score features with training statistics (true|false)"},
          {"seed", "global seed"},
          {"model", "model tag for the report"},
          {"dataset", "dataset tag for the report"},
          {"record_timing", "include wall-clock time in the report", true},
          {"threads", "worker threads (0 = runtime default)"}};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive long-document encoder pretraining with a Bregman subnetwork ensemble"};
  app.name("docbreg");
  app.require_subcommand(1);
  std::deque<Command> cmds;

  Command& gen = add_command(app, cmds, "gen-corpus", "Generate a synthetic topic corpus with train/dev/test splits",
                             {{"topics", "number of topics (required)"},
                              {"vocab", "regular vocabulary size"},
                              {"docs", "number of documents"},
                              {"mean_length", "mean document length"},
                              {"sd_length", "document length standard deviation"},
                              {"topics_per_doc", "topics per document, n or a..b"},
                              {"zipf", "Zipf exponent"},
                              {"background", "share of tokens drawn from the shared background vocabulary"},
                              {"task", "single_label | multi_label"},
                              {"split", "train,dev,test ratios"},
                              {"seed", "global seed"},
                              {"out", "output directory", false, "-o,--out"}});

  Command& pre = add_command(
      app, cmds, "pretrain", "Contrastive pretraining on the train split",
      {{"data", "corpus directory"},
       {"out", "checkpoint directory", false, "-o,--out"},
       {"mode", "simcse | simcse+bregman"},
       {"steps", "optimization steps"},
       {"batch_size", "documents per batch"},
       {"lr", "learning rate"},
       {"weight_decay", "AdamW weight decay"},
       {"beta1", "AdamW beta1"},
       {"beta2", "AdamW beta2"},
       {"adam_eps", "AdamW epsilon"},
       {"lambda", "weight of the Bregman loss"},
       {"sigma", "kernel width"},
       {"g", "number of subnetworks"},
       {"temperature", "ranking-loss temperature"},
       {"checkpoint_every", "steps between checkpoints"},
       {"clip_norm", "global gradient-norm clip (0 = off)"},
       {"ensemble", "affine | mlp"},
       {"subnet_hidden", "subnetwork hidden width (mlp)"},
       {"batch_norm", "batch norm in subnetworks (true|false)"},
       {"embed_dim", "encoder width"},
       {"num_layers", "encoder layers"},
       {"window", "attention window (even)"},
       {"ffn_dim", "feed-forward width"},
       {"dropout", "dropout rate"},
       {"mask_rate", "token masking rate"},
       {"proj_dim", "projection width"},
       {"pooling", "mean | max | cls"},
       {"max_len", "maximum sequence length including CLS"},
       {"seed", "global seed"},
       {"threads", "worker threads (0 = runtime default)"}});

  Command& emb = add_command(app, cmds, "embed", "Extract frozen document embeddings for every split",
                             {{"checkpoint", "checkpoint file"},
                              {"data", "corpus directory"},
                              {"out", "output directory", false, "-o,--out"},
                              {"pooling", "pooling override: mean | max | cls"},
                              {"max_len", "truncation length override"},
                              {"untrained", "use the checkpoint's initial (step 0) weights", true},
                              {"model", "model tag"},
                              {"threads", "worker threads (0 = runtime default)"}});

  Command& probe = add_command(app, cmds, "probe", "Train a probe on frozen embeddings", probe_keys());

  auto fs_keys = probe_keys();
  fs_keys.push_back({"shots", "examples per class"});
  fs_keys.push_back({"seeds", "number of sampling seeds"});
  Command& few = add_command(app, cmds, "fewshot", "Few-shot probes over several sampling seeds", fs_keys);

  Command& rep = add_command(app, cmds, "report", "Aggregate probe reports into a markdown table",
                             {{"out", "markdown output path (stdout if absent)", false, "-o,--out"}});
  rep.app->add_option("reports", rep.positionals, "probe or few-shot report JSON files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen.app->parsed()) return cmd_gen_corpus(gen.merged(), out);
    if (pre.app->parsed()) return cmd_pretrain(pre.merged(), out, err);
    if (emb.app->parsed()) return cmd_embed(emb.merged(), out);
    if (probe.app->parsed()) return cmd_probe(probe.merged(), out);
    if (few.app->parsed()) return cmd_fewshot(few.merged(), out);
    if (rep.app->parsed()) return cmd_report(rep.merged(), rep.positionals, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ArtifactMismatchError& e) {
    err << "artifact mismatch: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputTooLongError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DegenerateError& e) {
    err << "degenerate input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

}  // namespace docbreg
