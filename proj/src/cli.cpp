#include "flipkit/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flipkit/corpus.hpp"
#include "flipkit/efr_net.hpp"
#include "flipkit/embed.hpp"
#include "flipkit/erc_net.hpp"
#include "flipkit/error.hpp"
#include "flipkit/eval.hpp"
#include "flipkit/ptz.hpp"
#include "flipkit/runner.hpp"

namespace flipkit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::uint64_t kDefaultSeed = 1234;

struct Globals {
  std::uint64_t seed = kDefaultSeed;
  std::string config;
  bool quiet = false;
};

struct Options {
  int task = 0;
  std::string data, cache, out, ckpt, gold, pred, log, kind, provider, model, endpoint, ptz_mask = "on";
  bool ptz = false;
  bool restrict_ptz = false;
  std::size_t window = 5;
  std::size_t dim = 0;
  std::size_t parallelism = 4;
  // training overrides (0 / negative: keep config value)
  std::size_t epochs = 0, batch_size = 0, hidden_dim = 0, hops = 0, model_dim = 0, heads = 0, layers = 0;
  double lr = -1.0, validation_fraction = -1.0, dropout = -1.0;
  std::size_t checkpoint_every = 0;
};

class Output {
 public:
  Output(std::ostream& out, std::string path) : out_(out), path_(std::move(path)) {}
  void emit(const json& j) const {
    const std::string text = j.dump(2) + "\n";
    if (path_.empty()) {
      out_ << text;
      return;
    }
    std::ofstream f(path_, std::ios::trunc);
    if (!f) throw RuntimeFailure("cannot write " + path_);
    f << text;
  }

 private:
  std::ostream& out_;
  std::string path_;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": malformed JSON: " + e.what());
  }
}

bool parse_on_off(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw ValidationError("expected on|off, got " + s);
}

json stats_to_json(const DatasetStats& s) {
  return {{"episodes", s.episodes},
          {"entries", s.entries},
          {"utterances", s.utterances},
          {"triggers", s.triggers},
          {"emotions", s.label_histogram.size()},
          {"label_histogram", s.label_histogram}};
}

std::pair<TrainConfig, json> training_setup(const Globals& g, const Options& o) {
  TrainConfig cfg = TrainConfig::defaults(o.task);
  json model = json::object();
  if (!g.config.empty()) {
    json file = read_json_file(g.config);
    if (file.contains("model")) model = file["model"];
    json train = file.contains("train") ? file["train"] : file;
    train.erase("model");
    cfg.merge(train);
    cfg.task_id = o.task;
  }
  cfg.seed = g.seed;
  if (o.epochs) cfg.epochs = o.epochs;
  if (o.batch_size) cfg.batch_size = o.batch_size;
  if (o.lr >= 0.0) cfg.learning_rate = o.lr;
  if (o.validation_fraction >= 0.0) cfg.validation_fraction = o.validation_fraction;
  if (o.checkpoint_every) cfg.checkpoint_every = o.checkpoint_every;
  cfg.window = o.window;
  cfg.ptz_mask = parse_on_off(o.ptz_mask);
  cfg.restrict_to_ptz = o.restrict_ptz;
  if (o.hidden_dim) model["hidden_dim"] = o.hidden_dim;
  if (o.hops) model["hops"] = o.hops;
  if (o.model_dim) model["model_dim"] = o.model_dim;
  if (o.heads) model["heads"] = o.heads;
  if (o.layers) model["layers"] = o.layers;
  if (o.dropout >= 0.0) model["dropout"] = o.dropout;
  cfg.validate();
  return {cfg, model};
}

std::string cache_for(const Options& o, const ModelMeta& meta) {
  if (!o.cache.empty()) return o.cache;
  const std::string recorded = meta.train_config.value("cache", std::string());
  if (recorded.empty()) throw ValidationError("--cache is required");
  return recorded;
}

EmbeddingTable load_table(const Corpus& corpus, const std::string& cache, std::size_t expected_dim) {
  if (!fs::exists(cache)) throw RuntimeFailure("embedding cache " + cache + " does not exist; run `flipkit embed`");
  EmbeddingTable table = read_cache(cache);
  if (expected_dim != 0 && table.dim != expected_dim)
    throw ValidationError("cache dimension " + std::to_string(table.dim) + " differs from the model's " +
                          std::to_string(expected_dim));
  const auto missing = missing_keys(corpus, table);
  if (!missing.empty())
    throw RuntimeFailure(std::to_string(missing.size()) + " utterances missing from cache (first: " + missing.front() + ")");
  return table;
}

// --- subcommands -----------------------------------------------------------

void cmd_stats(const Globals& g, const Options& o, const Output& out, std::ostream& err) {
  const Corpus corpus = load_corpus(o.data, o.task);
  const DatasetStats s = dataset_stats(corpus);
  json j = {{"task", o.task}, {"stats", stats_to_json(s)}, {"label_set", corpus.label_set}};
  const bool has_triggers =
      !corpus.dialogues.empty() && std::all_of(corpus.dialogues.begin(), corpus.dialogues.end(),
                                               [](const Dialogue& d) { return d.triggers.has_value(); });
  if (has_triggers) {
    json hist = json::object();
    for (const auto& [d, c] : trigger_distance_histogram(corpus)) hist[std::to_string(d)] = c;
    j["trigger_distance_histogram"] = hist;
  }
  const SpeakerVocab vocab = build_speaker_vocab(corpus, 6);
  j["speaker_top"] = vocab.top;
  j["speaker_coverage"] = speaker_coverage(corpus, vocab);
  if (o.ptz) {
    if (!has_triggers) throw ValidationError("--ptz needs trigger labels in every episode");
    const SkewReport r = skew_report(corpus, o.window);
    j["skew"] = to_json(r);
    if (!g.quiet) err << "# " << SkewReport::kConvention << '\n' << format_table(r);
  }
  if (!g.quiet)
    err << "episodes " << s.episodes << "  entries " << s.entries << "  utterances " << s.utterances << "  triggers "
        << s.triggers << '\n';
  out.emit(j);
}

void cmd_embed(const Globals& g, const Options& o, const Output& out, std::ostream& err) {
  const Corpus corpus = load_corpus(o.data, o.task);
  EncoderConfig cfg = default_encoder_config(o.task);
  if (!o.provider.empty()) cfg.provider = o.provider;
  if (!o.model.empty()) cfg.model = o.model;
  if (!o.endpoint.empty()) cfg.endpoint = o.endpoint;
  if (o.dim) cfg.dim = o.dim;
  cfg.parallelism = o.parallelism;
  cfg.seed = g.seed;
  if (cfg.provider == "stub" && o.model.empty()) cfg.model = "stub";
  const auto encoder = make_encoder(cfg);
  EncodeStats stats;
  const EmbeddingTable table = encode_corpus(corpus, cfg, o.cache, encoder.get(), &stats);
  if (!g.quiet)
    err << "cached " << stats.cached << "  encoded " << stats.encoded << "  calls " << stats.encoder_calls << '\n';
  out.emit({{"cache", o.cache},
            {"dim", table.dim},
            {"provider", table.provider},
            {"model", table.model},
            {"vectors", table.vectors.size()},
            {"cached", stats.cached},
            {"encoded", stats.encoded},
            {"encoder_calls", stats.encoder_calls}});
}

void cmd_train_erc(const Globals& g, const Options& o, const Output& out, std::ostream& err) {
  if (o.task != 1) throw ValidationError("train-erc supports task 1 only");
  auto [cfg, model] = training_setup(g, o);
  const Corpus corpus = load_corpus(o.data, o.task);
  const EmbeddingTable table = load_table(corpus, o.cache, 0);
  const SpeakerVocab vocab = build_speaker_vocab(corpus, cfg.speaker_k);
  model["input_dim"] = table.dim + vocab.k;
  model["num_classes"] = corpus.label_set.size();
  ERCNet net(ERCConfig::from_json(model));
  net.init(cfg.seed);

  ModelMeta meta;
  meta.kind = "erc";
  meta.task_id = o.task;
  meta.model_config = net.config().to_json();
  meta.train_config = cfg.to_json();
  meta.train_config["cache"] = o.cache;
  meta.label_set = corpus.label_set;
  meta.vocab = vocab;
  meta.embedding_dim = table.dim;

  std::ofstream log_file;
  if (!o.log.empty()) log_file.open(o.log, std::ios::trunc);
  TrainIO io;
  io.log_jsonl = o.log.empty() ? nullptr : &log_file;
  io.progress = g.quiet ? nullptr : &err;
  io.checkpoint_path = o.out;
  io.meta = &meta;
  const TrainResult r = train_erc(net, corpus, table, vocab, cfg, io);
  meta.best_epoch = r.best_epoch;
  meta.best_metric = r.best_metric;
  meta.train_config["split"] = {{"train", r.train_episodes}, {"validation", r.validation_episodes}};
  save_checkpoint(o.out, meta, net.params());
  out.emit({{"checkpoint", o.out}, {"best_epoch", r.best_epoch}, {"best_val_metric", r.best_metric},
            {"epochs", r.log.size()}, {"selection_metric", cfg.selection_metric()}});
}

void cmd_train_efr(const Globals& g, const Options& o, const Output& out, std::ostream& err) {
  if (o.task != 2 && o.task != 3) throw ValidationError("train-efr supports tasks 2 and 3");
  auto [cfg, model] = training_setup(g, o);
  const Corpus corpus = load_corpus(o.data, o.task);
  const EmbeddingTable table = load_table(corpus, o.cache, 0);
  const SpeakerVocab vocab = build_speaker_vocab(corpus, cfg.speaker_k);
  model["input_dim"] = table.dim + vocab.k + corpus.label_set.size();
  model["num_emotions"] = corpus.label_set.size();
  model["window"] = cfg.window;
  EFRNet net(EFRConfig::from_json(model));
  net.init(cfg.seed);

  ModelMeta meta;
  meta.kind = "efr";
  meta.task_id = o.task;
  meta.model_config = net.config().to_json();
  meta.train_config = cfg.to_json();
  meta.train_config["cache"] = o.cache;
  meta.label_set = corpus.label_set;
  meta.vocab = vocab;
  meta.embedding_dim = table.dim;

  std::ofstream log_file;
  if (!o.log.empty()) log_file.open(o.log, std::ios::trunc);
  TrainIO io;
  io.log_jsonl = o.log.empty() ? nullptr : &log_file;
  io.progress = g.quiet ? nullptr : &err;
  io.checkpoint_path = o.out;
  io.meta = &meta;
  const TrainResult r = train_efr(net, corpus, table, vocab, cfg, io);
  meta.best_epoch = r.best_epoch;
  meta.best_metric = r.best_metric;
  meta.train_config["split"] = {{"train", r.train_episodes}, {"validation", r.validation_episodes}};
  save_checkpoint(o.out, meta, net.params());
  out.emit({{"checkpoint", o.out}, {"best_epoch", r.best_epoch}, {"best_val_metric", r.best_metric},
            {"epochs", r.log.size()}, {"selection_metric", cfg.selection_metric()}});
}

void cmd_predict_erc(const Globals&, const Options& o, const Output& out, std::ostream&) {
  ModelMeta meta = read_checkpoint_meta(o.ckpt);
  if (meta.kind != "erc") throw ValidationError(o.ckpt + " is not an ERC checkpoint");
  ERCNet net(ERCConfig::from_json(meta.model_config));
  load_checkpoint(o.ckpt, net.params());
  const Corpus corpus = load_corpus(o.data, meta.task_id);
  const EmbeddingTable table = load_table(corpus, cache_for(o, meta), meta.embedding_dim);
  json preds = json::array();
  for (const auto& d : corpus.dialogues)
    preds.push_back({{"episode", d.episode}, {"emotions", predict_emotions(net, d, table, meta.vocab, meta.label_set)}});
  out.emit(preds);
}

std::unique_ptr<EFRNet> load_efr(const std::string& ckpt, ModelMeta& meta) {
  meta = read_checkpoint_meta(ckpt);
  if (meta.kind != "efr") throw ValidationError(ckpt + " is not an EFR checkpoint");
  auto net = std::make_unique<EFRNet>(EFRConfig::from_json(meta.model_config));
  load_checkpoint(ckpt, net->params());
  return net;
}

void cmd_predict_efr(const Globals&, const Options& o, const Output& out, std::ostream&) {
  ModelMeta meta;
  const auto net = load_efr(o.ckpt, meta);
  const Corpus corpus = load_corpus(o.data, meta.task_id);
  const EmbeddingTable table = load_table(corpus, cache_for(o, meta), meta.embedding_dim);
  // Unlabeled test episodes get all-zero triggers so windows can be built.
  Corpus scored = corpus;
  for (auto& d : scored.dialogues)
    if (!d.triggers) d.triggers = std::vector<int>(d.size(), 0);
  const bool restrict_zone = meta.train_config.value("restrict_to_ptz", false);
  const auto decisions =
      predict_corpus_triggers(*net, scored, table, meta.vocab, meta.label_set, parse_on_off(o.ptz_mask), restrict_zone);
  json preds = json::array();
  for (std::size_t i = 0; i < corpus.dialogues.size(); ++i)
    preds.push_back({{"episode", corpus.dialogues[i].episode}, {"triggers", decisions[i]}});
  out.emit(preds);
}

void cmd_eval(const Globals& g, const Options& o, const Output& out, std::ostream& err) {
  const Corpus gold = load_corpus(o.gold, o.task);
  const json pred = read_json_file(o.pred);
  if (!pred.is_array()) throw ValidationError("prediction file must be a JSON array");
  if (pred.size() != gold.dialogues.size())
    throw ValidationError("prediction file has " + std::to_string(pred.size()) + " episodes, gold has " +
                          std::to_string(gold.dialogues.size()));
  MetricsReport report;
  json extra = json::object();
  try {
    if (o.task == 1) {
      std::vector<int> gi, pi;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const Dialogue& d = gold.dialogues[i];
        const auto labels = pred[i].at("emotions").get<std::vector<std::string>>();
        if (labels.size() != d.size())
          throw ValidationError("episode " + d.id + ": " + std::to_string(labels.size()) + " predictions for " +
                                std::to_string(d.size()) + " utterances");
        for (std::size_t t = 0; t < d.size(); ++t) {
          if (!d.utterances[t].emotion) continue;
          gi.push_back(static_cast<int>(label_index(*d.utterances[t].emotion, gold.label_set)));
          pi.push_back(static_cast<int>(label_index(labels[t], gold.label_set)));
        }
      }
      report = classification_report(gi, pi, gold.label_set);
    } else {
      const bool mask = parse_on_off(o.ptz_mask);
      std::vector<std::vector<int>> decisions;
      std::size_t masks = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        auto v = pred[i].at("triggers").get<std::vector<int>>();
        const Dialogue& d = gold.dialogues[i];
        if (mask && v.size() == d.size() && d.size() > 0) {
          const auto masked = apply_ptz_mask(v, compute_ptz(d, d.size() - 1), 0);
          for (std::size_t t = 0; t < v.size(); ++t) masks += static_cast<std::size_t>(v[t] != masked[t]);
          v = masked;
        }
        decisions.push_back(std::move(v));
      }
      report = score_triggers(gold, decisions);
      extra["ptz_mask"] = mask;
      extra["mask_count"] = masks;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed prediction entry: ") + e.what());
  }
  json j = to_json(report);
  j.update(extra);
  if (!g.quiet) err << format_table(report);
  out.emit(j);
}

void cmd_baseline(const Globals& g, const Options& o, const Output& out, std::ostream& err) {
  const Corpus corpus = load_corpus(o.data, o.task);
  MetricsReport r;
  if (o.kind == "neutral")
    r = neutral_baseline(corpus);
  else if (o.kind == "rule")
    r = rule_based_baseline(corpus);
  else
    throw ValidationError("baseline kind must be neutral or rule");
  json j = to_json(r);
  j["baseline"] = o.kind;
  j["task"] = o.task;
  if (!g.quiet) err << format_table(r);
  out.emit(j);
}

void cmd_ablate(const Globals& g, const Options& o, const Output& out, std::ostream& err) {
  ModelMeta meta;
  const auto net = load_efr(o.ckpt, meta);
  const Corpus corpus = load_corpus(o.data, meta.task_id);
  const EmbeddingTable table = load_table(corpus, cache_for(o, meta), meta.embedding_dim);
  const AblationReport r = ablate_ptz(*net, corpus, table, meta.vocab, meta.label_set);
  if (!g.quiet)
    err << "masks " << r.mask_count << "  F1 off " << 100.0 * r.mask_off.positive_f1 << "  F1 on "
        << 100.0 * r.mask_on.positive_f1 << "  change " << 100.0 * r.f1_change << '\n';
  out.emit(to_json(r));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"flipkit: emotion recognition and emotion-flip trigger analysis for conversations", "flipkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Options o;
  app.add_option("--seed", g.seed, "Random seed for learning subcommands")->capture_default_str();
  app.add_option("--config", g.config, "Training config JSON; flags override it");
  app.add_flag("--quiet", g.quiet, "Suppress tables and progress on stderr");

  auto task_opt = [&o](CLI::App* sub, std::vector<int> allowed) {
    sub->add_option("--task", o.task, "Sub-task id")->required()->check(CLI::IsMember(allowed));
  };
  auto out_opt = [&o](CLI::App* sub) { sub->add_option("--out", o.out, "Write JSON here instead of stdout"); };
  auto training_opts = [&o](CLI::App* sub) {
    sub->add_option("--data", o.data, "Training data (EDiReF JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--cache", o.cache, "Embedding cache")->required();
    sub->add_option("--out", o.out, "Checkpoint path")->required();
    sub->add_option("--log", o.log, "Per-epoch JSON-lines training log");
    sub->add_option("--epochs", o.epochs, "Override epochs");
    sub->add_option("--batch-size", o.batch_size, "Override batch size");
    sub->add_option("--lr", o.lr, "Override learning rate");
    sub->add_option("--validation-fraction", o.validation_fraction, "Held-out episode fraction");
    sub->add_option("--checkpoint-every", o.checkpoint_every, "Write best-so-far checkpoint every N epochs");
    sub->add_option("--dropout", o.dropout, "Override dropout");
  };

  auto* stats = app.add_subcommand("stats", "Dataset statistics, trigger distances and PTZ skew table");
  task_opt(stats, {1, 2, 3});
  stats->add_option("--data", o.data, "EDiReF JSON file")->required()->check(CLI::ExistingFile);
  stats->add_flag("--ptz", o.ptz, "Add the Original / window / window+PTZ skew table");
  stats->add_option("--window", o.window, "Window size w")->capture_default_str()->check(CLI::PositiveNumber);
  out_opt(stats);

  auto* embed = app.add_subcommand("embed", "Encode utterances into the embedding cache");
  task_opt(embed, {1, 2, 3});
  embed->add_option("--data", o.data, "EDiReF JSON file")->required()->check(CLI::ExistingFile);
  embed->add_option("--cache", o.cache, "Cache file to create or extend")->required();
  embed->add_option("--provider", o.provider, "stub | token-server | document-service | none");
  embed->add_option("--model", o.model, "Provider model identifier");
  embed->add_option("--endpoint", o.endpoint, "Provider base URL");
  embed->add_option("--dim", o.dim, "Embedding dimension");
  embed->add_option("--parallelism", o.parallelism, "Concurrent encoder requests")->capture_default_str();
  out_opt(embed);

  auto* train_erc_cmd = app.add_subcommand("train-erc", "Train the masked memory network");
  task_opt(train_erc_cmd, {1});
  training_opts(train_erc_cmd);
  train_erc_cmd->add_option("--hidden-dim", o.hidden_dim, "Recurrent hidden size");
  train_erc_cmd->add_option("--hops", o.hops, "Memory hops");

  auto* train_efr_cmd = app.add_subcommand("train-efr", "Train the trigger classifier");
  task_opt(train_efr_cmd, {2, 3});
  training_opts(train_efr_cmd);
  train_efr_cmd->add_option("--window", o.window, "Window size w")->capture_default_str()->check(CLI::PositiveNumber);
  train_efr_cmd->add_option("--ptz-mask", o.ptz_mask, "Mask validation predictions outside the zone")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  train_efr_cmd->add_flag("--restrict-ptz", o.restrict_ptz, "Train and predict only inside the zone");
  train_efr_cmd->add_option("--model-dim", o.model_dim, "Transformer width");
  train_efr_cmd->add_option("--heads", o.heads, "Attention heads");
  train_efr_cmd->add_option("--layers", o.layers, "Encoder layers");

  auto* predict_erc_cmd = app.add_subcommand("predict-erc", "Per-utterance emotion labels");
  predict_erc_cmd->add_option("--ckpt", o.ckpt, "ERC checkpoint")->required()->check(CLI::ExistingFile);
  predict_erc_cmd->add_option("--data", o.data, "EDiReF JSON file")->required()->check(CLI::ExistingFile);
  predict_erc_cmd->add_option("--cache", o.cache, "Embedding cache (default: the training cache)");
  out_opt(predict_erc_cmd);

  auto* predict_efr_cmd = app.add_subcommand("predict-efr", "Per-episode trigger decisions");
  predict_efr_cmd->add_option("--ckpt", o.ckpt, "EFR checkpoint")->required()->check(CLI::ExistingFile);
  predict_efr_cmd->add_option("--data", o.data, "EDiReF JSON file")->required()->check(CLI::ExistingFile);
  predict_efr_cmd->add_option("--cache", o.cache, "Embedding cache (default: the training cache)");
  predict_efr_cmd->add_option("--ptz-mask", o.ptz_mask, "Zero decisions outside the zone")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  out_opt(predict_efr_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Score a prediction file against gold labels");
  task_opt(eval_cmd, {1, 2, 3});
  eval_cmd->add_option("--gold", o.gold, "Gold EDiReF JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--pred", o.pred, "Prediction JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--ptz-mask", o.ptz_mask, "Mask trigger predictions outside the zone before scoring")
      ->check(CLI::IsMember({"on", "off"}))
      ->default_val("off");
  out_opt(eval_cmd);

  auto* baseline_cmd = app.add_subcommand("baseline", "Neutral or previous-utterance baseline");
  task_opt(baseline_cmd, {1, 2, 3});
  baseline_cmd->add_option("--kind", o.kind, "neutral | rule")->required()->check(CLI::IsMember({"neutral", "rule"}));
  baseline_cmd->add_option("--data", o.data, "EDiReF JSON file")->required()->check(CLI::ExistingFile);
  out_opt(baseline_cmd);

  auto* ablate_cmd = app.add_subcommand("ablate-ptz", "Score a trained EFR model with and without zone masking");
  ablate_cmd->add_option("--ckpt", o.ckpt, "EFR checkpoint")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--data", o.data, "EDiReF JSON file")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--cache", o.cache, "Embedding cache (default: the training cache)");
  out_opt(ablate_cmd);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  // Subcommand help is routed through the same CallForHelp path above.
  const Output output(out, o.out);
  const std::string name = app.get_subcommands().front()->get_name();
  // train-* use --out as the checkpoint; their JSON summary goes to stdout.
  const Output summary(out, "");
  try {
    if (name == "stats") cmd_stats(g, o, output, err);
    else if (name == "embed") cmd_embed(g, o, output, err);
    else if (name == "train-erc") cmd_train_erc(g, o, summary, err);
    else if (name == "train-efr") cmd_train_efr(g, o, summary, err);
    else if (name == "predict-erc") cmd_predict_erc(g, o, output, err);
    else if (name == "predict-efr") cmd_predict_efr(g, o, output, err);
    else if (name == "eval") cmd_eval(g, o, output, err);
    else if (name == "baseline") cmd_baseline(g, o, output, err);
    else if (name == "ablate-ptz") cmd_ablate(g, o, output, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace flipkit
