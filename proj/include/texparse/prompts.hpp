#pragma once

// Caption key-phrase extraction, prompt templating and text embedding,
// ensemble label expansion and the extended body-part list.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "texparse/tensor.hpp"

namespace texparse {

/// Bundled part-of-speech word lists for the clothing/body domain.
struct Lexicon {
  std::set<std::string> nouns;
  std::set<std::string> adjectives;
  std::set<std::string> stopwords;
  std::vector<std::vector<std::string>> compounds;  // multiword nouns, matched greedily

  static const Lexicon& bundled();
  static Lexicon from_json(const nlohmann::json& j);
  static Lexicon load(const std::filesystem::path& path);
};

/// Lowercased word tokens; punctuation becomes an empty "break" token.
std::vector<std::string> tokenize(const std::string& text);

/// Ordered, deduplicated noun phrases (adjective run + noun) and leftover
/// adjective runs, truncated to K.
std::vector<std::string> extract_phrases(const std::string& caption, int K = 9,
                                         const Lexicon& lexicon = Lexicon::bundled());

class EnsembleTable {
 public:
  EnsembleTable() = default;
  static const EnsembleTable& bundled();
  static EnsembleTable from_json(const nlohmann::json& j);
  static EnsembleTable load(const std::filesystem::path& path);

  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::vector<std::string>> entries_;  // each list starts with its key
};

/// table[label] if present, else {label}.
std::vector<std::string> expand_ensemble(const std::string& label, const EnsembleTable& table = EnsembleTable::bundled());

/// The fixed 19-term extended body-part list.
const std::vector<std::string>& ebp_labels();

/// "a photo of a {}" style template with exactly one placeholder.
std::string format_prompt(const std::string& templ, const std::string& phrase);

class TextEmbedder {
 public:
  /// Sum of seeded Gaussian token vectors over the content words, normalized.
  static TextEmbedder toy(std::uint64_t seed = 777, int dim = 512);
  /// Lookup table {prompt: [values]}; vectors are normalized on load.
  static TextEmbedder archive(const std::filesystem::path& path);
  static TextEmbedder archive(const nlohmann::json& table);

  int dim() const { return dim_; }
  bool is_toy() const { return table_.empty(); }
  /// Unit-norm embedding of a full prompt string.
  std::vector<double> embed(const std::string& prompt) const;

 private:
  std::uint64_t seed_ = 0;
  int dim_ = 0;
  std::map<std::string, std::vector<double>> table_;
};

struct PromptSet {
  std::string caption;
  std::vector<std::string> phrases;
  Tensor embeddings;  // [K, d], unit-norm rows

  int size() const { return static_cast<int>(phrases.size()); }
};

inline constexpr const char* kDefaultTemplate = "a photo of a {}";

PromptSet embed_prompts(const std::vector<std::string>& phrases, const TextEmbedder& embedder,
                        const std::string& templ = kDefaultTemplate);

}  // namespace texparse
