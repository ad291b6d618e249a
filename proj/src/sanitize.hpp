#pragma once

#include <string>
#include <vector>

#include "classifier.hpp"
#include "textmodel.hpp"

#include "json.hpp"

namespace promptsan {

struct SanitizeConfig {
  double eta = 0.03;
  double p_top = 0.1;
  double gamma = 0.5;
  std::size_t max_iters = 10;
  // Plain gradient descent by default; AdamW with lr = eta otherwise.
  bool use_adamw = false;

  void validate() const;
};

struct Detection {
  double score = 0.0;
  bool flagged = false;
};

// flagged iff score(pool(p)) >= gamma; the boundary counts as flagged.
Detection detect(const MlpClassifier& c, const PromptEmbedding& p,
                 double gamma);

// Per-token sensitivity: infinity norm of the gradient of
// bce(score(pool(p)), 0) w.r.t. each row. Under mean pooling all
// entries are equal; the weighted variant below makes them differ.
Vec64 token_sensitivities(const MlpClassifier& c, const PromptEmbedding& p);
Vec64 token_sensitivities_weighted(const MlpClassifier& c,
                                   const PromptEmbedding& p,
                                   const Vec64& weights);

// Nucleus selection: normalize to a distribution (all-zero input means
// uniform), order by sensitivity descending with ties broken toward the
// lower index, and keep the shortest prefix whose mass reaches p_top.
// At least one index is always selected. Returned indices are sorted
// ascending.
std::vector<std::size_t> select_top_p(const Vec64& sensitivities,
                                      double p_top);

enum class SanitizeStatus { clean_input, sanitized, unresolved };

const char* sanitize_status_name(SanitizeStatus s);

struct SanitizeReport {
  double initial_score = 0.0;
  double final_score = 0.0;
  std::vector<std::size_t> selected_indices;
  std::size_t iterations_used = 0;
  SanitizeStatus status = SanitizeStatus::clean_input;
  std::vector<double> per_iteration_scores;
  std::string optimizer;

  nlohmann::json to_json() const;
};

struct SanitizeResult {
  PromptEmbedding embedding;
  SanitizeReport report;
};

// Masked gradient editing of the prompt embedding. Inputs scoring below
// gamma are returned untouched. Otherwise the token mask is fixed from
// the first sensitivity pass and only masked rows are updated, stopping
// as soon as the score drops below gamma or after max_iters updates.
SanitizeResult modify(const MlpClassifier& c, const PromptEmbedding& p,
                      const SanitizeConfig& cfg);

}  // namespace promptsan
