#include "texparse/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "texparse/evaluation.hpp"

namespace texparse {
namespace {

namespace pt = boost::property_tree;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join_csv(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

template <class T>
T parse_value(const std::string& key, const std::string& raw) {
  std::istringstream in(raw);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("config key '" + key + "': cannot parse '" + raw + "'");
  return v;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + raw + "'");
}

template <>
std::string parse_value<std::string>(const std::string&, const std::string& raw) { return raw; }

template <class T>
std::string show(const T& v) {
  std::ostringstream s;
  s.precision(17);
  s << std::boolalpha << v;
  return s.str();
}

// One binding per key: a setter from text and a getter to text.
struct Binding {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Binding bind_key(T RunConfig::*outer) {
  return {[outer](RunConfig& c, const std::string& raw) { c.*outer = parse_value<T>("", raw); },
          [outer](const RunConfig& c) { return show(c.*outer); }};
}

template <class S, class T>
Binding bind_key(S RunConfig::*outer, T S::*inner) {
  return {[outer, inner](RunConfig& c, const std::string& raw) { (c.*outer).*inner = parse_value<T>("", raw); },
          [outer, inner](const RunConfig& c) { return show((c.*outer).*inner); }};
}

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> b = [] {
    std::map<std::string, Binding> m;
    m["backbone.provider"] = bind_key(&RunConfig::backbone_provider);
    m["backbone.timestep"] = bind_key(&RunConfig::timestep);
    m["backbone.patch"] = bind_key(&RunConfig::backbone, &BackboneConfig::patch);
    m["backbone.d_cv"] = bind_key(&RunConfig::backbone, &BackboneConfig::d_cv);
    m["backbone.t_ctx"] = bind_key(&RunConfig::backbone, &BackboneConfig::t_ctx);
    m["backbone.d_ctx"] = bind_key(&RunConfig::backbone, &BackboneConfig::d_ctx);
    m["backbone.i2c_depth"] = bind_key(&RunConfig::backbone, &BackboneConfig::i2c_depth);
    m["backbone.i2c_heads"] = bind_key(&RunConfig::backbone, &BackboneConfig::i2c_heads);
    m["backbone.c_e"] = bind_key(&RunConfig::backbone, &BackboneConfig::c_e);
    m["backbone.c_u"] = bind_key(&RunConfig::backbone, &BackboneConfig::c_u);
    m["backbone.c_d"] = bind_key(&RunConfig::backbone, &BackboneConfig::c_d);
    m["backbone.latent_dim"] = bind_key(&RunConfig::backbone, &BackboneConfig::latent_dim);
    m["backbone.latent_stride"] = bind_key(&RunConfig::backbone, &BackboneConfig::latent_stride);
    m["backbone.t_max"] = bind_key(&RunConfig::backbone, &BackboneConfig::t_max);
    m["backbone.schedule"] = bind_key(&RunConfig::backbone, &BackboneConfig::schedule);

    m["head.num_queries"] = bind_key(&RunConfig::head, &HeadConfig::num_queries);
    m["head.hidden"] = bind_key(&RunConfig::head, &HeadConfig::hidden);
    m["head.d_emb"] = bind_key(&RunConfig::head, &HeadConfig::d_emb);
    m["head.layers"] = bind_key(&RunConfig::head, &HeadConfig::layers);
    m["head.heads"] = bind_key(&RunConfig::head, &HeadConfig::heads);
    m["head.ffn_mult"] = bind_key(&RunConfig::head, &HeadConfig::ffn_mult);
    m["head.mask_upsample"] = bind_key(&RunConfig::head, &HeadConfig::mask_upsample);
    m["head.masked_attention"] = bind_key(&RunConfig::head, &HeadConfig::masked_attention);
    m["head.aux_loss"] = bind_key(&RunConfig::head, &HeadConfig::aux_loss);
    m["head.eps_pool"] = bind_key(&RunConfig::head, &HeadConfig::eps_pool);
    m["head.tau_init"] = bind_key(&RunConfig::head, &HeadConfig::tau_init);
    m["head.strides"] = {
        [](RunConfig& c, const std::string& raw) {
          c.head.strides.clear();
          for (const auto& s : split_csv(raw)) c.head.strides.push_back(parse_value<int>("head.strides", s));
        },
        [](const RunConfig& c) {
          std::vector<std::string> v;
          for (int s : c.head.strides) v.push_back(std::to_string(s));
          return join_csv(v);
        }};

    m["loss.lambda_bce"] = bind_key(&RunConfig::loss, &LossConfig::lambda_bce);
    m["loss.lambda_dice"] = bind_key(&RunConfig::loss, &LossConfig::lambda_dice);
    m["loss.lambda_g"] = bind_key(&RunConfig::loss, &LossConfig::lambda_g);
    m["loss.num_points"] = bind_key(&RunConfig::loss, &LossConfig::num_points);
    m["loss.eps_bce"] = bind_key(&RunConfig::loss, &LossConfig::eps_bce);
    m["loss.unmatched_weight"] = bind_key(&RunConfig::loss, &LossConfig::unmatched_weight);
    m["loss.phrase_links"] = bind_key(&RunConfig::loss, &LossConfig::phrase_links);

    m["optim.lr"] = bind_key(&RunConfig::optim, &OptimConfig::lr);
    m["optim.weight_decay"] = bind_key(&RunConfig::optim, &OptimConfig::weight_decay);
    m["optim.beta1"] = bind_key(&RunConfig::optim, &OptimConfig::beta1);
    m["optim.beta2"] = bind_key(&RunConfig::optim, &OptimConfig::beta2);
    m["optim.eps"] = bind_key(&RunConfig::optim, &OptimConfig::eps);
    m["optim.batch_size"] = bind_key(&RunConfig::optim, &OptimConfig::batch_size);
    m["optim.steps"] = bind_key(&RunConfig::optim, &OptimConfig::steps);
    m["optim.grad_clip"] = bind_key(&RunConfig::optim, &OptimConfig::grad_clip);

    m["augment.hflip"] = bind_key(&RunConfig::hflip);
    m["augment.vflip"] = bind_key(&RunConfig::vflip);

    m["data.resize"] = bind_key(&RunConfig::resize);
    m["data.synth_n"] = bind_key(&RunConfig::synth_n);
    m["data.synth_seed"] = bind_key(&RunConfig::synth_seed);
    m["data.size"] = bind_key(&RunConfig::synth, &SynthConfig::size);
    m["data.max_instances"] = bind_key(&RunConfig::synth, &SynthConfig::max_instances);
    m["data.max_figures"] = bind_key(&RunConfig::synth, &SynthConfig::max_figures);
    m["data.shade_jitter"] = bind_key(&RunConfig::synth, &SynthConfig::shade_jitter);

    m["text.provider"] = bind_key(&RunConfig::text_provider);
    m["text.template"] = bind_key(&RunConfig::prompt_template);
    m["text.k_phrase"] = bind_key(&RunConfig::k_phrase);

    m["infer.threshold"] = bind_key(&RunConfig::threshold);
    m["infer.ebp"] = bind_key(&RunConfig::use_ebp);
    m["infer.ensembles"] = bind_key(&RunConfig::use_ensembles);

    m["eval.protocols"] = bind_key(&RunConfig::protocols);
    m["eval.gamma"] = {
        [](RunConfig& c, const std::string& raw) {
          c.gamma_grid.clear();
          for (const auto& s : split_csv(raw)) c.gamma_grid.push_back(parse_value<double>("eval.gamma", s));
        },
        [](const RunConfig& c) {
          std::vector<std::string> v;
          for (double g : c.gamma_grid) v.push_back(show(g));
          return join_csv(v);
        }};
    m["eval.ignore"] = {[](RunConfig& c, const std::string& raw) { c.ignore = split_csv(raw); },
                        [](const RunConfig& c) { return join_csv(c.ignore); }};
    m["eval.train_labels"] = {[](RunConfig& c, const std::string& raw) { c.train_labels = split_csv(raw); },
                              [](const RunConfig& c) { return join_csv(c.train_labels); }};

    m["run.seed"] = bind_key(&RunConfig::seed);
    return m;
  }();
  return b;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config key '" + key + "': " + why); };
  try {
    backbone.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("[backbone] ") + e.what());
  }
  try {
    head.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("[head] ") + e.what());
  }
  try {
    loss.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("[loss] ") + e.what());
  }
  if (head.in_channels != backbone.feature_channels()) fail("head.in_channels", "must equal the backbone feature channels");
  if (timestep < 0 || timestep > backbone.t_max) fail("backbone.timestep", "must lie in [0, t_max]");
  if (!(optim.lr > 0)) fail("optim.lr", "must be positive");
  if (optim.weight_decay < 0) fail("optim.weight_decay", "must be >= 0");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1) || !(optim.beta2 >= 0 && optim.beta2 < 1)) fail("optim.beta1/beta2", "must lie in [0, 1)");
  if (!(optim.eps > 0)) fail("optim.eps", "must be positive");
  if (optim.batch_size < 1) fail("optim.batch_size", "must be >= 1");
  if (optim.steps < 1) fail("optim.steps", "must be positive");
  if (optim.grad_clip < 0) fail("optim.grad_clip", "must be >= 0");
  if (resize < 16) fail("data.resize", "must be >= 16");
  if (synth_n < 1) fail("data.synth_n", "must be >= 1");
  if (k_phrase < 1) fail("text.k_phrase", "must be >= 1");
  if (!(threshold >= -1 && threshold <= 1)) fail("infer.threshold", "must lie in [-1, 1]");
  for (double g : gamma_grid)
    if (!(g > 0)) fail("eval.gamma", "values must be positive");
  try {
    parse_protocol_list(protocols);
    format_prompt(prompt_template, "x");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  cfg.head.in_channels = cfg.backbone.feature_channels();
  const auto& b = bindings();
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : keys) {
      const std::string full = section + "." + key;
      const auto it = b.find(full);
      if (it == b.end()) throw ConfigError("unknown config key '" + full + "'");
      try {
        it->second.set(cfg, value.data());
      } catch (const ConfigError&) {
        throw ConfigError("config key '" + full + "': cannot parse '" + value.data() + "'");
      }
    }
  }
  cfg.head.in_channels = cfg.backbone.feature_channels();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

std::string config_to_ini(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& [full, binding] : bindings()) {
    const auto dot = full.find('.');
    const std::string sec = full.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    out << full.substr(dot + 1) << " = " << binding.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace texparse
