#pragma once

#include <string>

#include "classifier.hpp"
#include "evalkit.hpp"
#include "generator.hpp"
#include "runconfig.hpp"
#include "suffix.hpp"
#include "textmodel.hpp"

#include "json.hpp"

namespace promptsan {

// Everything downstream steps need, built in memory from one config.
struct ToyWorld {
  ToyCorpus corpus;
  GeneratorStub generator;
};

ToyWorld build_toydata(const RunConfig& cfg);

TrainResult fit_text_classifier(const RunConfig& cfg, const ToyWorld& w);
TrainResult fit_image_classifier(const RunConfig& cfg, const ToyWorld& w);

// One prompt per line as {"text": ..., "label": 0|1}.
void save_corpus_jsonl(const std::string& path, const MaliciousCorpus& corpus,
                       const Vocab& vocab, int label);
MaliciousCorpus load_corpus_jsonl(const std::string& path, const Vocab& vocab);

// Resolves which suffix file serves a category: the routing table wins,
// an empty category falls back to paths.suffix.
std::string suffix_path_for(const RunConfig& cfg, const std::string& category);

// File-level commands shared by the CLI and in-process callers. Each
// one reads its inputs from cfg.paths and returns the JSON it would
// print, so two runs with the same config produce identical artifacts.

nlohmann::json gen_toydata_cmd(const RunConfig& cfg);

struct ClassifierCmdResult {
  TrainResult trained;
  double train_accuracy = 0.0;
  nlohmann::json summary;
};
// Writes the model to out_path and the loss curve to out_path +
// ".loss.json".
ClassifierCmdResult train_classifier_cmd(const RunConfig& cfg, bool image,
                                         const std::string& out_path);

struct SuffixCmdResult {
  SuffixTrainResult result;
  nlohmann::json summary;
};
// Writes the suffix to out_path and the per-round trace to out_path +
// ".trace.jsonl".
SuffixCmdResult train_suffix_cmd(const RunConfig& cfg,
                                 const std::string& out_path);

struct SanitizeCmdResult {
  SanitizeStatus status = SanitizeStatus::clean_input;
  nlohmann::json report;
};
SanitizeCmdResult sanitize_cmd(const RunConfig& cfg, const std::string& text,
                               Method method,
                               const std::string& category = "");

struct EvalCmdResult {
  EvalSummary summary;
  nlohmann::json json;
};
// Writes the summary JSON to out_path when it is non-empty.
EvalCmdResult evaluate_cmd(const RunConfig& cfg, Method method,
                           const std::string& out_path);

nlohmann::json export_features_cmd(const RunConfig& cfg,
                                   const std::string& out_path);

}  // namespace promptsan
