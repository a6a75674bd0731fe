#include "texparse/vocabulary.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>

#include "texparse/bundled_data.hpp"
#include "texparse/prompts.hpp"

namespace texparse {

std::string normalize_label(const std::string& s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
  }
  return out;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  for (const auto& s : j.at("base_labels")) v.base_labels_.push_back(normalize_label(s.get<std::string>()));
  for (const auto& s : j.at("ebp")) v.ebp_.push_back(normalize_label(s.get<std::string>()));
  for (const auto& [k, val] : j.at("unification").items()) v.aliases_[normalize_label(k)] = normalize_label(val.get<std::string>());
  for (const auto& s : j.at("body")) v.body_.insert(normalize_label(s.get<std::string>()));
  for (const auto& s : j.at("accessories")) v.accessories_.insert(normalize_label(s.get<std::string>()));
  if (j.contains("person")) v.person_ = normalize_label(j.at("person").get<std::string>());
  for (const auto& [k, val] : v.aliases_) {
    if (v.aliases_.count(val)) throw std::invalid_argument("unification target '" + val + "' is itself an alias");
  }
  v.canonical_ = v.canonical_universe();
  return v;
}

const Vocabulary& Vocabulary::bundled() {
  static const Vocabulary v = [] {
    Vocabulary out = from_json(nlohmann::json::parse(bundled::kVocabulary));
    out.add_ensembles(EnsembleTable::bundled());
    return out;
  }();
  return v;
}

std::set<std::string> Vocabulary::canonical_universe() const {
  std::set<std::string> out(body_.begin(), body_.end());
  out.insert(accessories_.begin(), accessories_.end());
  out.insert(person_);
  for (const auto& [_, v] : aliases_) out.insert(v);
  for (const auto& b : base_labels_)
    if (!aliases_.count(b)) out.insert(b);
  return out;
}

void Vocabulary::add_ensembles(const EnsembleTable& table) {
  const std::set<std::string> canonical = canonical_universe();
  for (const auto& [base, items] : table.entries()) {
    const std::string target = unify(base);
    for (const auto& e : items) {
      if (e == target || aliases_.count(e) || canonical.count(e)) continue;
      aliases_[e] = target;
    }
  }
  canonical_ = canonical_universe();
}

std::string Vocabulary::resolve(const std::string& key) const {
  const auto it = aliases_.find(key);
  if (it != aliases_.end()) return it->second;
  return canonical_.count(key) ? key : std::string();
}

std::string Vocabulary::unify(const std::string& label) const {
  const std::string n = normalize_label(label);
  if (const std::string r = resolve(n); !r.empty()) return r;
  std::vector<std::string> words;
  std::istringstream in(n);
  for (std::string w; in >> w;) words.push_back(w);
  for (std::size_t k = 1; k < words.size(); ++k) {
    std::string suffix;
    for (std::size_t i = k; i < words.size(); ++i) suffix += (i > k ? " " : "") + words[i];
    if (const std::string r = resolve(suffix); !r.empty()) return r;
  }
  return n;
}

}  // namespace texparse
