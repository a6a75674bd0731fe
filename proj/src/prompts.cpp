#include "texparse/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "texparse/bundled_data.hpp"
#include "texparse/params.hpp"
#include "texparse/vocabulary.hpp"

namespace texparse {
namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '-' || c == '\'' || c >= 0x80; }

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string join(const std::vector<std::string>& parts, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += parts[i];
  }
  return out;
}

}  // namespace

// --------------------------------------------------------------------- Lexicon

Lexicon Lexicon::from_json(const nlohmann::json& j) {
  Lexicon lex;
  for (const auto& w : j.at("nouns")) lex.nouns.insert(normalize_label(w.get<std::string>()));
  for (const auto& w : j.at("adjectives")) lex.adjectives.insert(normalize_label(w.get<std::string>()));
  for (const auto& w : j.at("stopwords")) lex.stopwords.insert(normalize_label(w.get<std::string>()));
  if (j.contains("compounds")) {
    for (const auto& c : j.at("compounds")) {
      std::vector<std::string> toks;
      for (const auto& t : tokenize(c.get<std::string>()))
        if (!t.empty()) toks.push_back(t);
      if (toks.size() > 1) lex.compounds.push_back(std::move(toks));
    }
  }
  std::stable_sort(lex.compounds.begin(), lex.compounds.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return lex;
}

const Lexicon& Lexicon::bundled() {
  static const Lexicon lex = from_json(nlohmann::json::parse(bundled::kLexicon));
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      cur += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    } else {
      flush();
      if (!std::isspace(c) && (out.empty() || !out.back().empty())) out.emplace_back();
    }
  }
  flush();
  return out;
}

std::vector<std::string> extract_phrases(const std::string& caption, int K, const Lexicon& lex) {
  if (K < 0) throw std::invalid_argument("K must be >= 0");
  const std::vector<std::string> raw = tokenize(caption);

  // Fold multiword nouns into single tokens.
  std::vector<std::string> tokens;
  std::vector<bool> compound;
  for (std::size_t i = 0; i < raw.size();) {
    bool hit = false;
    for (const auto& c : lex.compounds) {
      if (i + c.size() <= raw.size() && std::equal(c.begin(), c.end(), raw.begin() + static_cast<long>(i))) {
        tokens.push_back(join(raw, i, i + c.size()));
        compound.push_back(true);
        i += c.size();
        hit = true;
        break;
      }
    }
    if (!hit) {
      tokens.push_back(raw[i++]);
      compound.push_back(false);
    }
  }

  enum Kind { Break, Adjective, Noun };
  auto content = [&](std::size_t i) {
    return i < tokens.size() && !tokens[i].empty() && !lex.stopwords.count(tokens[i]) && !all_digits(tokens[i]);
  };
  std::vector<Kind> kinds(tokens.size(), Break);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!content(i)) continue;
    const std::string& t = tokens[i];
    const bool adj = !compound[i] && lex.adjectives.count(t);
    const bool noun = compound[i] || lex.nouns.count(t);
    if (adj && noun) {
      kinds[i] = content(i + 1) ? Adjective : Noun;  // modifier when followed by another content word
    } else {
      kinds[i] = adj ? Adjective : Noun;  // unknown content words count as nouns
    }
  }

  std::vector<std::string> phrases;
  auto emit = [&](std::string p) {
    if (!p.empty() && std::find(phrases.begin(), phrases.end(), p) == phrases.end()) phrases.push_back(std::move(p));
  };
  std::vector<std::string> run;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (kinds[i] == Adjective) {
      run.push_back(tokens[i]);
    } else if (kinds[i] == Noun) {
      run.push_back(tokens[i]);
      emit(join(run, 0, run.size()));
      run.clear();
    } else {
      emit(join(run, 0, run.size()));
      run.clear();
    }
  }
  emit(join(run, 0, run.size()));
  if (static_cast<int>(phrases.size()) > K) phrases.resize(K);
  return phrases;
}

// --------------------------------------------------------------- EnsembleTable

EnsembleTable EnsembleTable::from_json(const nlohmann::json& j) {
  EnsembleTable t;
  for (const auto& [key, list] : j.items()) {
    const std::string base = normalize_label(key);
    std::vector<std::string> items{base};
    for (const auto& v : list) {
      const std::string s = normalize_label(v.get<std::string>());
      if (std::find(items.begin(), items.end(), s) == items.end()) items.push_back(s);
    }
    t.entries_[base] = std::move(items);
  }
  return t;
}

const EnsembleTable& EnsembleTable::bundled() {
  static const EnsembleTable t = from_json(nlohmann::json::parse(bundled::kEnsembles));
  return t;
}

EnsembleTable EnsembleTable::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

std::vector<std::string> expand_ensemble(const std::string& label, const EnsembleTable& table) {
  const auto it = table.entries().find(normalize_label(label));
  if (it != table.entries().end()) return it->second;
  return {label};
}

const std::vector<std::string>& ebp_labels() {
  static const std::vector<std::string> list = [] {
    const nlohmann::json j = nlohmann::json::parse(bundled::kVocabulary);
    return j.at("ebp").get<std::vector<std::string>>();
  }();
  return list;
}

std::string format_prompt(const std::string& templ, const std::string& phrase) {
  const auto pos = templ.find("{}");
  if (pos == std::string::npos || templ.find("{}", pos + 2) != std::string::npos) {
    throw std::invalid_argument("prompt template must contain exactly one '{}' placeholder: '" + templ + "'");
  }
  return templ.substr(0, pos) + phrase + templ.substr(pos + 2);
}

// ---------------------------------------------------------------- TextEmbedder

TextEmbedder TextEmbedder::toy(std::uint64_t seed, int dim) {
  if (dim <= 0) throw std::invalid_argument("embedding width must be positive");
  TextEmbedder e;
  e.seed_ = seed;
  e.dim_ = dim;
  return e;
}

TextEmbedder TextEmbedder::archive(const nlohmann::json& table) {
  if (!table.is_object() || table.empty()) throw std::invalid_argument("embedding table must be a non-empty object");
  TextEmbedder e;
  for (const auto& [prompt, values] : table.items()) {
    std::vector<double> v = values.get<std::vector<double>>();
    if (e.dim_ == 0) e.dim_ = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != e.dim_ || v.empty()) {
      throw std::invalid_argument("embedding for '" + prompt + "' has width " + std::to_string(v.size()) +
                                  ", expected " + std::to_string(e.dim_));
    }
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (!(n > 0) || !std::isfinite(n)) throw std::invalid_argument("embedding for '" + prompt + "' has zero norm");
    for (double& x : v) x /= n;
    e.table_[prompt] = std::move(v);
  }
  return e;
}

TextEmbedder TextEmbedder::archive(const std::filesystem::path& path) { return archive(read_json(path)); }

std::vector<double> TextEmbedder::embed(const std::string& prompt) const {
  if (!is_toy()) {
    const auto it = table_.find(prompt);
    if (it == table_.end()) throw std::out_of_range("no embedding for prompt '" + prompt + "'");
    return it->second;
  }
  const Lexicon& lex = Lexicon::bundled();
  std::vector<std::string> words;
  for (const auto& t : tokenize(prompt))
    if (!t.empty() && !lex.stopwords.count(t)) words.push_back(t);
  if (words.empty()) words.push_back(prompt);

  std::vector<double> v(dim_, 0.0);
  for (const auto& w : words) {
    std::mt19937_64 rng(fnv1a(w, seed_));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& x : v) x += normal(rng);
  }
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

PromptSet embed_prompts(const std::vector<std::string>& phrases, const TextEmbedder& embedder, const std::string& templ) {
  PromptSet ps;
  ps.phrases = phrases;
  ps.embeddings = Tensor({static_cast<int>(phrases.size()), embedder.dim()});
  for (std::size_t k = 0; k < phrases.size(); ++k) {
    const auto v = embedder.embed(format_prompt(templ, phrases[k]));
    std::copy(v.begin(), v.end(), ps.embeddings.data() + k * embedder.dim());
  }
  return ps;
}

}  // namespace texparse
