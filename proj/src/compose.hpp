#pragma once

#include <optional>

#include "sanitize.hpp"
#include "suffix.hpp"

#include "json.hpp"

namespace promptsan {

struct ComposeReport {
  std::string strategy;
  // Report of the masked-editing stage; absent when the guard on the
  // concatenated prompt skipped it (suffix-then-modify on an input the
  // suffix alone pushes below gamma).
  std::optional<SanitizeReport> modify_report;
  double score_after_concat = 0.0;
  double final_score = 0.0;
  SanitizeStatus status = SanitizeStatus::sanitized;

  nlohmann::json to_json() const;
};

struct ComposeResult {
  PromptEmbedding embedding;
  ComposeReport report;
};

// Runs masked editing first (its own guard skips benign inputs), then
// always appends the suffix.
ComposeResult modify_then_suffix(const MlpClassifier& c_text,
                                 const PromptEmbedding& p,
                                 const SafetySuffix& s,
                                 const SanitizeConfig& cfg);

// Concatenates first; if the combined prompt still scores at or above
// gamma, runs masked editing over all rows, suffix rows included.
ComposeResult suffix_then_modify(const MlpClassifier& c_text,
                                 const PromptEmbedding& p,
                                 const SafetySuffix& s,
                                 const SanitizeConfig& cfg);

}  // namespace promptsan
