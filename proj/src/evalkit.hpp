#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "classifier.hpp"
#include "compose.hpp"
#include "generator.hpp"
#include "sanitize.hpp"
#include "suffix.hpp"
#include "textmodel.hpp"

#include "json.hpp"

namespace promptsan {

// Two token clusters a fixed distance apart, plus an unk token near the
// origin. Prompts draw from their own cluster's pool with a small
// cross-contamination rate.
struct SyntheticCorpusSpec {
  std::size_t vocab_size = 201;
  std::size_t dim = 64;
  std::size_t n_harmful = 64;
  std::size_t n_benign = 64;
  std::size_t prompt_len_min = 3;
  std::size_t prompt_len_max = 6;
  std::uint64_t seed = 42;
  double separation = 4.0;

  void validate() const;
};

inline constexpr double kClusterNoiseStd = 1.0;
inline constexpr double kContaminationRate = 0.1;

// Token id ranges of the two pools; id 0 is the unk token.
struct PoolLayout {
  std::int32_t harmful_begin = 0;
  std::int32_t harmful_end = 0;
  std::int32_t benign_begin = 0;
  std::int32_t benign_end = 0;

  static PoolLayout for_spec(const SyntheticCorpusSpec& spec);
};

std::vector<std::int32_t> sample_prompt(const PoolLayout& layout, bool harmful,
                                        std::size_t len_min,
                                        std::size_t len_max, Rng& rng);

struct ToyCorpus {
  Vocab vocab;
  EmbeddingTable table;
  MaliciousCorpus harmful;
  MaliciousCorpus benign;
};

ToyCorpus make_corpus(const SyntheticCorpusSpec& spec);

// Pooled prompt embeddings labeled harmful=1 / benign=0; with a
// generator, its features instead.
TrainBatch pooled_features(const MaliciousCorpus& harmful,
                           const MaliciousCorpus& benign,
                           const EmbeddingTable& table);
TrainBatch image_features(const MaliciousCorpus& harmful,
                          const MaliciousCorpus& benign,
                          const EmbeddingTable& table,
                          const GeneratorContract& g);

enum class Method {
  none,
  modify,
  suffix,
  modify_then_suffix,
  suffix_then_modify,
  zero_suffix_control,
};

const char* method_name(Method m);
Method method_from_string(const std::string& s);

struct EvalModels {
  const MlpClassifier* c_text = nullptr;
  const MlpClassifier* c_img = nullptr;
  const GeneratorContract* generator = nullptr;
  const EmbeddingTable* table = nullptr;
};

struct EvalConfigs {
  SanitizeConfig sanitize;
  double gamma_text = 0.5;
  const SafetySuffix* suffix = nullptr;  // required by suffix-based methods
  std::size_t control_m = 20;            // rows of the zero control when
                                         // no trained suffix is supplied
};

struct PerPromptRecord {
  std::size_t prompt_id = 0;
  std::string role;  // "harmful" or "benign"
  double score_before = 0.0;
  double score_after = 0.0;
  double image_score = 0.0;
  bool flagged_before = false;
  bool flagged_after = false;
  bool preserved = false;
  double embedding_shift = 0.0;  // Frobenius norm over the original rows / n
  std::string status;

  nlohmann::json to_json() const;
};

struct EvalSummary {
  std::string method;
  double flag_rate_before = 0.0;
  double flag_rate_after = 0.0;
  double mean_score_before = 0.0;
  double mean_score_after = 0.0;
  double mean_image_score = 0.0;
  double mean_embedding_shift = 0.0;
  double benign_preservation_rate = 0.0;
  std::size_t harmful_count = 0;
  std::size_t benign_count = 0;
  std::vector<PerPromptRecord> per_prompt;

  nlohmann::json to_json() const;
};

// Applies the method to every harmful prompt and verifies benign
// prompts pass through unchanged. Rates and means are over the harmful
// set; preservation is over the benign set.
EvalSummary evaluate(Method method, const EvalModels& models,
                     const MaliciousCorpus& harmful,
                     const MaliciousCorpus& benign, const EvalConfigs& cfgs);

// JSON lines of penultimate text-classifier features per prompt:
// variant "original", then "suffixed" and "control" when a suffix is
// given (the control is an all-zero block of the same shape).
void export_features(const MlpClassifier& c_text, const EmbeddingTable& table,
                     const MaliciousCorpus& prompts, const SafetySuffix* s,
                     bool include_control, const std::string& out_path);

}  // namespace promptsan
