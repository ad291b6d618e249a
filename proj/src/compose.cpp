#include "compose.hpp"

namespace promptsan {

nlohmann::json ComposeReport::to_json() const {
  nlohmann::json j{
      {"strategy", strategy},
      {"score_after_concat", score_after_concat},
      {"final_score", final_score},
      {"status", sanitize_status_name(status)},
  };
  j["modify_report"] =
      modify_report ? modify_report->to_json() : nlohmann::json(nullptr);
  return j;
}

ComposeResult modify_then_suffix(const MlpClassifier& c_text,
                                 const PromptEmbedding& p,
                                 const SafetySuffix& s,
                                 const SanitizeConfig& cfg) {
  cfg.validate();
  SanitizeResult stage1 = modify(c_text, p, cfg);
  ComposeResult out;
  out.embedding = concat_suffix(stage1.embedding, s);
  out.report.strategy = "modify_then_suffix";
  out.report.modify_report = std::move(stage1.report);
  out.report.score_after_concat = score(c_text, pool(out.embedding));
  out.report.final_score = out.report.score_after_concat;
  out.report.status = out.report.final_score < cfg.gamma
                          ? SanitizeStatus::sanitized
                          : SanitizeStatus::unresolved;
  return out;
}

ComposeResult suffix_then_modify(const MlpClassifier& c_text,
                                 const PromptEmbedding& p,
                                 const SafetySuffix& s,
                                 const SanitizeConfig& cfg) {
  cfg.validate();
  ComposeResult out;
  out.embedding = concat_suffix(p, s);
  out.report.strategy = "suffix_then_modify";
  out.report.score_after_concat = score(c_text, pool(out.embedding));
  if (out.report.score_after_concat < cfg.gamma) {
    out.report.final_score = out.report.score_after_concat;
    out.report.status = SanitizeStatus::sanitized;
    return out;
  }
  SanitizeResult stage2 = modify(c_text, out.embedding, cfg);
  out.embedding = std::move(stage2.embedding);
  out.report.final_score = stage2.report.final_score;
  out.report.status = stage2.report.status == SanitizeStatus::sanitized
                          ? SanitizeStatus::sanitized
                          : SanitizeStatus::unresolved;
  out.report.modify_report = std::move(stage2.report);
  return out;
}

}  // namespace promptsan
