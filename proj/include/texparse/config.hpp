#pragma once

// Run configuration and its INI-style file format.
//
//   [backbone] provider = toy:777, timestep = 0, patch, d_cv, ...
//   [head]     num_queries, hidden, d_emb, layers, heads, strides = 4,2,1, ...
//   [loss]     lambda_bce, lambda_dice, lambda_g, num_points, unmatched_weight
//   [optim]    lr, weight_decay, beta1, beta2, eps, batch_size, steps, grad_clip
//   [augment]  hflip, vflip
//   [data]     resize, synth_n, synth_seed, max_figures, shade_jitter
//   [text]     provider = toy:777, template, k_phrase
//   [infer]    threshold, ebp, ensembles
//   [eval]     protocols, gamma, ignore, train_labels
//   [run]      seed

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "texparse/dataset.hpp"
#include "texparse/features.hpp"
#include "texparse/head.hpp"
#include "texparse/losses.hpp"

namespace texparse {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int steps = 2000;
  double grad_clip = 0.0;  // global norm; 0 disables
};

struct RunConfig {
  BackboneConfig backbone;
  std::string backbone_provider = "toy:777";
  int timestep = 0;
  HeadConfig head;
  LossConfig loss;
  OptimConfig optim;
  bool hflip = true;
  bool vflip = true;
  int resize = 64;
  int synth_n = 8;
  std::uint64_t synth_seed = 1;
  SynthConfig synth;
  std::string text_provider = "toy:777";
  std::string prompt_template = "a photo of a {}";
  int k_phrase = 9;
  double threshold = 0.5;
  bool use_ebp = true;
  bool use_ensembles = true;
  std::string protocols = "FPP,BHP,CCP,COP";
  std::vector<double> gamma_grid;
  std::vector<std::string> ignore;
  std::vector<std::string> train_labels;  // empty: the labels seen in the training data
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Defaults overlaid with the file's keys; unknown sections or keys are errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);
/// Round-trippable text form of every key.
std::string config_to_ini(const RunConfig& cfg);

}  // namespace texparse
