#pragma once

// Label vocabulary: the base training labels, the extended body-part list,
// and the unification map that folds raw labels onto canonical categories.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace texparse {

class EnsembleTable;

/// Lowercases, trims and collapses inner whitespace.
std::string normalize_label(const std::string& s);

class Vocabulary {
 public:
  static const Vocabulary& bundled();
  static Vocabulary from_json(const nlohmann::json& j);

  const std::vector<std::string>& base_labels() const { return base_labels_; }
  const std::vector<std::string>& ebp() const { return ebp_; }
  const std::set<std::string>& body() const { return body_; }
  const std::set<std::string>& accessories() const { return accessories_; }
  const std::string& person() const { return person_; }

  /// Canonical category. Exact map hits first, then ensemble expansions, then
  /// the longest suffix that resolves ("pink left hand" -> "hand"); otherwise
  /// the normalized label itself. Idempotent.
  std::string unify(const std::string& label) const;

  /// Adds every ensemble expansion as an alias of its base label.
  void add_ensembles(const EnsembleTable& table);

  const std::map<std::string, std::string>& aliases() const { return aliases_; }
  /// Every canonical category reachable from the base labels, EBP and aliases.
  std::set<std::string> canonical_universe() const;

 private:
  std::string resolve(const std::string& key) const;

  std::vector<std::string> base_labels_;
  std::vector<std::string> ebp_;
  std::map<std::string, std::string> aliases_;
  std::set<std::string> body_;
  std::set<std::string> accessories_;
  std::string person_ = "person";
  std::set<std::string> canonical_;
};

}  // namespace texparse
