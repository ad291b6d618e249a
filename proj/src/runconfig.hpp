#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evalkit.hpp"
#include "sanitize.hpp"
#include "suffix.hpp"

#include "json.hpp"

namespace promptsan {

// One JSON document drives every subcommand. All randomness flows from
// the single seed through named substreams.
struct RunConfig {
  std::uint64_t seed = 42;

  struct Paths {
    std::string vocab;
    std::string embedding_table;
    std::string generator;
    std::string text_classifier;
    std::string image_classifier;
    std::string suffix;
    std::string harmful_corpus;
    std::string benign_corpus;
  } paths;

  SyntheticCorpusSpec corpus;

  struct GeneratorCfg {
    std::size_t q = 32;
    std::optional<std::size_t> inject_step;
  } generator;

  struct ClassifierCfg {
    std::vector<std::size_t> hidden{64, 32};
    std::size_t epochs = 200;
    double lr = 0.01;
    double weight_decay = 0.01;
  } classifier;

  SanitizeConfig sanitize;
  SuffixConfig suffix;

  // Optional map from suffix category to a suffix file, letting the CLI
  // route prompts to per-category suffixes.
  std::vector<std::pair<std::string, std::string>> suffix_routes;

  void validate() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

}  // namespace promptsan
