// texparse command line: merge-lora, synth, train, infer, eval, visualize.
// Exit codes: 0 ok, 1 internal error, 2 config/usage error, 3 data error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "texparse/archive.hpp"
#include "texparse/config.hpp"
#include "texparse/dataset.hpp"
#include "texparse/evaluation.hpp"
#include "texparse/inference.hpp"
#include "texparse/lora.hpp"
#include "texparse/training.hpp"

using namespace texparse;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig base_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

fs::path need_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::vector<std::string> sorted_labels(const std::vector<LabeledSample>& samples) {
  std::set<std::string> s;
  for (const auto& x : samples)
    for (const auto& in : x.instances) s.insert(in.label);
  return {s.begin(), s.end()};
}

// A trained head plus the config it was trained with. Model-defining keys come
// from the checkpoint; inference and evaluation keys from the current config.
struct LoadedModel {
  RunConfig cfg;
  TrainState state;
  Backbone backbone;
  TextEmbedder text;

  explicit LoadedModel(const RunConfig& c)
      : cfg(c),
        state(cfg.head, cfg.seed),
        backbone(Backbone::from_provider(cfg.backbone, cfg.backbone_provider)),
        text(make_text_embedder(cfg.text_provider, cfg.head.d_emb)) {}
};

RunConfig model_config(const fs::path& checkpoint, const RunConfig& current) {
  const TensorArchive a = TensorArchive::load(checkpoint);
  if (!a.metadata().contains("config")) throw DataError(checkpoint.string() + " carries no config");
  RunConfig cfg;
  try {
    cfg = parse_config(a.metadata().at("config").get<std::string>());
  } catch (const ConfigError& e) {
    throw DataError(checkpoint.string() + ": stored config: " + e.what());
  }
  cfg.threshold = current.threshold;
  cfg.use_ebp = current.use_ebp;
  cfg.use_ensembles = current.use_ensembles;
  cfg.resize = current.resize;
  cfg.protocols = current.protocols;
  cfg.gamma_grid = current.gamma_grid;
  cfg.ignore = current.ignore;
  if (!current.train_labels.empty()) cfg.train_labels = current.train_labels;
  return cfg;
}

std::unique_ptr<LoadedModel> load_model(const fs::path& checkpoint, const RunConfig& current) {
  const RunConfig cfg = model_config(checkpoint, current);
  auto m = std::make_unique<LoadedModel>(cfg);
  load_checkpoint(checkpoint, m->state);
  return m;
}

std::vector<Prediction> predict_all(const LoadedModel& m, const std::vector<LabeledSample>& samples, double gamma) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const ImageTensor x = gamma == 1.0 ? s.image : gamma_correct(s.image, gamma);
    out.push_back(predict(m.state.head, m.backbone, m.text, s.name, x, s.caption, m.cfg));
  }
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_merge_lora(const Globals& g, const std::string& base, const std::string& adapter, double alpha, int rank) {
  const fs::path out = need_out(g);
  const TensorArchive b = TensorArchive::load(base);
  const TensorArchive a = TensorArchive::load(adapter);
  const TensorArchive merged = merge_model(b, adapters_from_archive(a, alpha, rank));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  merged.save(out);
  std::cout << "merged " << merged.size() << " tensors into " << out.string() << "\n";
}

void cmd_synth(const Globals& g, std::optional<int> n) {
  RunConfig cfg = base_config(g);
  const fs::path out = need_out(g);
  const int count = n.value_or(cfg.synth_n);
  if (count < 1) throw ConfigError("--n must be at least 1");
  const std::uint64_t seed = g.seed.value_or(cfg.synth_seed);
  save_dataset(out, generate_synthetic_dataset(count, seed, cfg.synth));
  std::cout << "wrote " << count << " samples to " << out.string() << "\n";
}

void cmd_train(const Globals& g, const std::string& data, const std::string& resume, int log_every) {
  RunConfig cfg = base_config(g);
  const fs::path out = need_out(g);
  const auto samples = load_dataset(data);
  if (samples.empty()) throw DataError("no samples in " + data);
  if (cfg.train_labels.empty()) cfg.train_labels = sorted_labels(samples);

  const Backbone backbone = Backbone::from_provider(cfg.backbone, cfg.backbone_provider);
  const TextEmbedder text = make_text_embedder(cfg.text_provider, cfg.head.d_emb);
  const auto examples = prepare_examples(samples, cfg, text);
  FeatureCache features(backbone, cfg.timestep, cfg.seed);
  TrainState state(cfg.head, cfg.seed);
  if (!resume.empty()) load_checkpoint(resume, state);

  std::vector<TrainLogEntry> log;
  const auto t0 = std::chrono::steady_clock::now();
  train(state, examples, features, cfg, &log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(out);
  save_checkpoint(out / "checkpoint.safetensors", state, cfg);
  std::ostringstream lines;
  for (const auto& e : log) {
    const nlohmann::json j = {{"step", e.step},
                              {"total", e.loss.total},
                              {"bce", e.loss.bce},
                              {"dice", e.loss.dice},
                              {"grounding", e.loss.grounding}};
    lines << j.dump() << "\n";
    if (log_every > 0 && (e.step % log_every == 0 || &e == &log.back()))
      std::cerr << "step " << e.step << " loss " << e.loss.total << "\n";
  }
  write_text(out / "train_log.jsonl", lines.str());
  write_text(out / "config.ini", config_to_ini(cfg));
  std::cout << "trained " << log.size() << " steps in " << secs << " s; checkpoint "
            << (out / "checkpoint.safetensors").string() << "\n";
}

void cmd_infer(const Globals& g, const std::string& data, const std::string& checkpoint) {
  const RunConfig current = base_config(g);
  const fs::path out = need_out(g);
  const auto samples = load_dataset(data);
  const auto model = load_model(checkpoint, current);
  const auto preds = predict_all(*model, samples, 1.0);
  save_predictions(out, preds, {{"train_labels", model->cfg.train_labels}});
  std::size_t masks = 0;
  for (const auto& p : preds) masks += p.masks.size();
  std::cout << "predicted " << masks << " masks over " << preds.size() << " images into " << out.string() << "\n";
}

void cmd_eval(const Globals& g, const std::string& data, const std::string& pred_dir, const std::string& checkpoint,
              const std::string& protocols, const std::string& gamma_csv) {
  RunConfig current = base_config(g);
  if (!protocols.empty()) current.protocols = protocols;
  if (!gamma_csv.empty()) current.gamma_grid = parse_config("[eval]\ngamma = " + gamma_csv + "\n").gamma_grid;
  const fs::path out = need_out(g);
  if (pred_dir.empty() && checkpoint.empty()) throw ConfigError("eval needs --predictions or --checkpoint");
  if (!current.gamma_grid.empty() && checkpoint.empty())
    throw ConfigError("a gamma grid re-runs inference and needs --checkpoint");

  const auto samples = load_dataset(data);
  std::unique_ptr<LoadedModel> model;
  if (!checkpoint.empty()) model = load_model(checkpoint, current);

  std::vector<Prediction> found;
  std::vector<std::string> train_labels = current.train_labels;
  if (!pred_dir.empty()) {
    nlohmann::json meta;
    found = load_predictions(pred_dir, &meta);
    if (train_labels.empty() && meta.contains("train_labels"))
      train_labels = meta.at("train_labels").get<std::vector<std::string>>();
  } else {
    found = predict_all(*model, samples, 1.0);
  }
  if (train_labels.empty() && model) train_labels = model->cfg.train_labels;

  std::map<std::string, const Prediction*> by_name;
  for (const auto& p : found) by_name[p.image] = &p;
  std::vector<Prediction> preds(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (auto it = by_name.find(samples[i].name); it != by_name.end()) preds[i] = *it->second;

  EvalOptions opts;
  try {
    opts.protocols = parse_protocol_list(current.protocols);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  opts.ignore = {current.ignore.begin(), current.ignore.end()};
  if (!train_labels.empty()) opts.train_labels = std::set<std::string>(train_labels.begin(), train_labels.end());
  MetricReport report = evaluate(samples, preds, opts);

  EvalOptions plain = opts;
  plain.train_labels.reset();
  for (double gamma : current.gamma_grid) {
    const MetricReport r = evaluate(samples, predict_all(*model, samples, gamma), plain);
    GammaRow row{gamma, {}};
    for (const auto& [name, p] : r.protocols) row.miou[name] = p.miou;
    report.gamma.push_back(row);
  }

  fs::create_directories(out);
  write_text(out / "report.json", report_to_json(report).dump(2) + "\n");
  const std::string text = report_to_text(report);
  write_text(out / "report.txt", text);
  std::cout << text;
}

void cmd_visualize(const Globals& g, const std::string& data, const std::string& pred_dir) {
  const fs::path out = need_out(g);
  const auto samples = load_dataset(data);
  const auto preds = load_predictions(pred_dir);
  std::map<std::string, const LabeledSample*> by_name;
  for (const auto& s : samples) by_name[s.name] = &s;
  fs::create_directories(out);
  for (const auto& p : preds) {
    const auto it = by_name.find(p.image);
    if (it == by_name.end()) throw DataError("prediction for unknown image '" + p.image + "'");
    const Overlay ov = visualize_masks(it->second->image, p.masks);
    write_png_image(out / (p.image + ".png"), ov.image);
    write_text(out / (p.image + ".legend.json"), legend_to_json(ov.legend).dump(2) + "\n");
  }
  std::cout << "wrote " << preds.size() << " overlays to " << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"texparse: open-vocabulary human parsing on frozen image-to-texture features"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run config (INI)");
  app.add_option("--seed", g.seed, "run seed; for synth, the dataset seed");
  app.add_option("--out", g.out, "output file (merge-lora) or directory");

  std::string base, adapter;
  double alpha = 1.0;
  int rank = 1;
  auto* merge = app.add_subcommand("merge-lora", "fold LoRA adapters into a base archive");
  merge->add_option("--base", base)->required();
  merge->add_option("--adapter", adapter)->required();
  merge->add_option("--alpha", alpha)->required();
  merge->add_option("--rank", rank)->required();

  std::optional<int> n;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--n", n, "number of images (default data.synth_n)");

  std::string data, resume, checkpoint, pred_dir, protocols, gamma;
  int log_every = 100;
  auto* train_cmd = app.add_subcommand("train", "train the parsing head");
  train_cmd->add_option("--data", data)->required();
  train_cmd->add_option("--resume", resume, "continue from a checkpoint");
  train_cmd->add_option("--log-every", log_every, "progress line interval on stderr; 0 = quiet");

  auto* infer = app.add_subcommand("infer", "predict labeled masks");
  infer->add_option("--data", data)->required();
  infer->add_option("--checkpoint", checkpoint)->required();

  auto* eval = app.add_subcommand("eval", "score predictions under the parsing protocols");
  eval->add_option("--data", data)->required();
  eval->add_option("--predictions", pred_dir);
  eval->add_option("--checkpoint", checkpoint);
  eval->add_option("--protocols", protocols, "e.g. COP,BHP");
  eval->add_option("--gamma", gamma, "comma list, e.g. 1,0.75,0.5,0.25");

  auto* vis = app.add_subcommand("visualize", "colour overlays with legends");
  vis->add_option("--data", data)->required();
  vis->add_option("--predictions", pred_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (merge->parsed()) cmd_merge_lora(g, base, adapter, alpha, rank);
    else if (synth->parsed()) cmd_synth(g, n);
    else if (train_cmd->parsed()) cmd_train(g, data, resume, log_every);
    else if (infer->parsed()) cmd_infer(g, data, checkpoint);
    else if (eval->parsed()) cmd_eval(g, data, pred_dir, checkpoint, protocols, gamma);
    else if (vis->parsed()) cmd_visualize(g, data, pred_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ArchiveError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
