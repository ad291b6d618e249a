#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "classifier.hpp"
#include "generator.hpp"
#include "ndmath.hpp"
#include "rng.hpp"
#include "textmodel.hpp"

#include "json.hpp"

namespace promptsan {

// Trainable embedding block appended (or prepended) to prompts.
struct SafetySuffix {
  std::size_t m = 0;
  std::size_t dim = 0;
  Mat64 matrix;  // m x dim
  std::string category = "default";
  std::size_t trained_rounds = 0;

  static SafetySuffix zeros(std::size_t m, std::size_t dim);
};

enum class Placement { suffix, prefix };

const char* placement_name(Placement p);
Placement placement_from_string(const std::string& s);

struct SuffixConfig {
  std::size_t m = 20;
  std::size_t k = 10;
  double gamma_text = 0.5;
  double gamma_image = 0.5;
  double sigma = 0.02;
  std::size_t rounds = 15;
  std::size_t text_steps = 100;
  double text_lr = 1e-3;
  std::size_t batch_size = 8;
  Placement placement = Placement::suffix;
  std::string category = "default";

  void validate() const;
  nlohmann::json to_json() const;
  static SuffixConfig from_json(const nlohmann::json& j);
};

struct MaliciousCorpus {
  std::vector<std::vector<std::int32_t>> prompts;
  std::string source;
};

// m x dim entries drawn i.i.d. from N(0, sigma^2).
SafetySuffix init_suffix(const SuffixConfig& cfg, std::size_t dim, Rng rng);

struct SuffixGrads {
  Mat64 mean_grads;  // m x dim, image-loss gradient averaged over the batch
  Vec64 row_norms;   // L2 norm per suffix row
};

SuffixGrads suffix_image_grads(const GeneratorContract& g,
                               const MlpClassifier& c_img,
                               const std::vector<const PromptEmbedding*>& batch,
                               const SafetySuffix& s, Placement placement);

// Indices of the k largest norms, ties broken toward the lower index,
// returned sorted ascending.
std::vector<std::size_t> select_top_k(const Vec64& norms, std::size_t k);

// AdamW on the selected rows only, minimizing the mean text loss of the
// concatenated prompts. Rows outside the selection are not touched.
// Optimizer state is fresh for each call.
SafetySuffix refine_text(const MlpClassifier& c_text,
                         const std::vector<const PromptEmbedding*>& batch,
                         SafetySuffix s, const std::vector<std::size_t>& rows,
                         std::size_t steps, double lr, Placement placement);

struct TraceRecord {
  std::size_t round = 0;
  double mean_image_score = 0.0;
  double mean_text_score = 0.0;
  std::vector<std::size_t> selected_indices;

  nlohmann::json to_json() const;
};

struct SuffixTrainResult {
  SafetySuffix suffix;
  std::vector<TraceRecord> trace;
  bool converged = false;
};

// Alternating schedule: each round samples a batch, ranks suffix rows by
// their image-loss gradient norms, refines the top k against the text
// classifier, then scores a held-out split (one fifth of the corpus,
// chosen by a seeded shuffle). Training stops early once both held-out
// mean scores fall below their thresholds. The first trace record is
// round 0, the held-out scores of the initialized, untrained suffix.
SuffixTrainResult train_suffix(const GeneratorContract& g,
                               const MlpClassifier& c_text,
                               const MlpClassifier& c_img,
                               const MaliciousCorpus& corpus,
                               const EmbeddingTable& table,
                               const SuffixConfig& cfg, std::uint64_t seed);

struct ApplyResult {
  PromptEmbedding embedding;
  bool applied = false;
  double score_before = 0.0;
  double score_after = 0.0;
};

// Concatenates the suffix only when the prompt scores at or above
// gamma_text; benign prompts pass through untouched.
ApplyResult apply_suffix(const MlpClassifier& c_text, const PromptEmbedding& p,
                         const SafetySuffix& s, double gamma_text);

}  // namespace promptsan
