#include "pipeline.hpp"

#include <fstream>
#include <sstream>

#include "compose.hpp"
#include "errors.hpp"
#include "persistence.hpp"
#include "rng.hpp"
#include "sanitize.hpp"

namespace promptsan {

namespace {

void require_path(const std::string& value, const char* key) {
  if (value.empty()) {
    throw ConfigError(std::string("config: paths.") + key + " is required");
  }
}

std::string render_prompt(const std::vector<std::int32_t>& ids,
                          const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += vocab.tokens.at(static_cast<std::size_t>(ids[i]));
  }
  return out;
}

std::vector<std::size_t> classifier_dims(std::size_t input_dim,
                                         const RunConfig& cfg) {
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), cfg.classifier.hidden.begin(),
              cfg.classifier.hidden.end());
  dims.push_back(1);
  return dims;
}

TrainResult fit_classifier(const RunConfig& cfg, const TrainBatch& batch,
                           std::size_t input_dim, const char* stream_name) {
  Rng root(cfg.seed);
  Rng init_rng = root.substream(stream_name);
  MlpClassifier init =
      MlpClassifier::random(classifier_dims(input_dim, cfg), init_rng);
  AdamW::Params opt;
  opt.lr = cfg.classifier.lr;
  opt.weight_decay = cfg.classifier.weight_decay;
  return train_classifier(std::move(init), batch, cfg.classifier.epochs, opt);
}

}  // namespace

ToyWorld build_toydata(const RunConfig& cfg) {
  ToyWorld w;
  w.corpus = make_corpus(cfg.corpus);
  w.generator = GeneratorStub::random(cfg.corpus.dim, cfg.generator.q,
                                      derive_seed(cfg.seed, "generator-init"));
  w.generator.injected_step = cfg.generator.inject_step;
  return w;
}

TrainResult fit_text_classifier(const RunConfig& cfg, const ToyWorld& w) {
  TrainBatch batch =
      pooled_features(w.corpus.harmful, w.corpus.benign, w.corpus.table);
  return fit_classifier(cfg, batch, w.corpus.table.dim, "classifier-init/text");
}

TrainResult fit_image_classifier(const RunConfig& cfg, const ToyWorld& w) {
  TrainBatch batch = image_features(w.corpus.harmful, w.corpus.benign,
                                    w.corpus.table, w.generator);
  return fit_classifier(cfg, batch, w.generator.output_dim(),
                        "classifier-init/image");
}

void save_corpus_jsonl(const std::string& path, const MaliciousCorpus& corpus,
                       const Vocab& vocab, int label) {
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open for writing: " + path);
  }
  for (const auto& ids : corpus.prompts) {
    nlohmann::json line{{"text", render_prompt(ids, vocab)}, {"label", label}};
    f << line.dump() << '\n';
  }
  if (!f) {
    throw IoError("write failed: " + path);
  }
}

MaliciousCorpus load_corpus_jsonl(const std::string& path,
                                  const Vocab& vocab) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open: " + path);
  }
  MaliciousCorpus corpus;
  corpus.source = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j.at("text").is_string()) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected an object with a \"text\" string");
    }
    std::vector<std::int32_t> ids =
        tokenize(j.at("text").get<std::string>(), vocab);
    if (ids.empty()) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": prompt has no tokens");
    }
    corpus.prompts.push_back(std::move(ids));
  }
  return corpus;
}

std::string suffix_path_for(const RunConfig& cfg,
                            const std::string& category) {
  if (!category.empty()) {
    for (const auto& [name, path] : cfg.suffix_routes) {
      if (name == category) return path;
    }
    throw ConfigError("no suffix route for category '" + category + "'");
  }
  require_path(cfg.paths.suffix, "suffix");
  return cfg.paths.suffix;
}

nlohmann::json gen_toydata_cmd(const RunConfig& cfg) {
  require_path(cfg.paths.vocab, "vocab");
  require_path(cfg.paths.embedding_table, "embedding_table");
  require_path(cfg.paths.generator, "generator");
  require_path(cfg.paths.harmful_corpus, "harmful_corpus");
  require_path(cfg.paths.benign_corpus, "benign_corpus");

  ToyWorld w = build_toydata(cfg);
  save_vocab(cfg.paths.vocab, w.corpus.vocab);
  save_embedding_table(cfg.paths.embedding_table, w.corpus.table);
  save_generator(cfg.paths.generator, w.generator);
  save_corpus_jsonl(cfg.paths.harmful_corpus, w.corpus.harmful, w.corpus.vocab,
                    1);
  save_corpus_jsonl(cfg.paths.benign_corpus, w.corpus.benign, w.corpus.vocab,
                    0);

  return nlohmann::json{
      {"vocab_size", w.corpus.vocab.size()},
      {"dim", w.corpus.table.dim},
      {"n_harmful", w.corpus.harmful.prompts.size()},
      {"n_benign", w.corpus.benign.prompts.size()},
      {"generator_output_dim", w.generator.output_dim()},
  };
}

ClassifierCmdResult train_classifier_cmd(const RunConfig& cfg, bool image,
                                         const std::string& out_path) {
  require_path(cfg.paths.vocab, "vocab");
  require_path(cfg.paths.embedding_table, "embedding_table");
  require_path(cfg.paths.harmful_corpus, "harmful_corpus");
  require_path(cfg.paths.benign_corpus, "benign_corpus");
  if (out_path.empty()) {
    throw ConfigError("train-classifier: output path is required");
  }

  Vocab vocab = load_vocab(cfg.paths.vocab);
  EmbeddingTable table = load_embedding_table(cfg.paths.embedding_table);
  MaliciousCorpus harmful = load_corpus_jsonl(cfg.paths.harmful_corpus, vocab);
  MaliciousCorpus benign = load_corpus_jsonl(cfg.paths.benign_corpus, vocab);

  TrainBatch batch;
  std::size_t input_dim = table.dim;
  const char* stream = "classifier-init/text";
  if (image) {
    require_path(cfg.paths.generator, "generator");
    GeneratorStub g = load_generator(cfg.paths.generator);
    batch = image_features(harmful, benign, table, g);
    input_dim = g.output_dim();
    stream = "classifier-init/image";
  } else {
    batch = pooled_features(harmful, benign, table);
  }

  ClassifierCmdResult res;
  res.trained = fit_classifier(cfg, batch, input_dim, stream);
  res.train_accuracy = accuracy(res.trained.model, batch);

  save_classifier(out_path, res.trained.model);
  nlohmann::json loss_doc{
      {"loss_curve", res.trained.loss_curve},
      {"train_accuracy", res.train_accuracy},
  };
  std::ofstream lf(out_path + ".loss.json", std::ios::binary);
  if (!lf) {
    throw IoError("cannot open for writing: " + out_path + ".loss.json");
  }
  lf << loss_doc.dump(2) << '\n';

  res.summary = nlohmann::json{
      {"kind", image ? "image" : "text"},
      {"model", out_path},
      {"epochs", cfg.classifier.epochs},
      {"initial_loss", res.trained.loss_curve.front()},
      {"final_loss", res.trained.loss_curve.back()},
      {"train_accuracy", res.train_accuracy},
  };
  return res;
}

SuffixCmdResult train_suffix_cmd(const RunConfig& cfg,
                                 const std::string& out_path) {
  require_path(cfg.paths.vocab, "vocab");
  require_path(cfg.paths.embedding_table, "embedding_table");
  require_path(cfg.paths.generator, "generator");
  require_path(cfg.paths.text_classifier, "text_classifier");
  require_path(cfg.paths.image_classifier, "image_classifier");
  require_path(cfg.paths.harmful_corpus, "harmful_corpus");
  if (out_path.empty()) {
    throw ConfigError("train-suffix: output path is required");
  }

  Vocab vocab = load_vocab(cfg.paths.vocab);
  EmbeddingTable table = load_embedding_table(cfg.paths.embedding_table);
  GeneratorStub g = load_generator(cfg.paths.generator);
  MlpClassifier c_text = load_classifier(cfg.paths.text_classifier);
  MlpClassifier c_img = load_classifier(cfg.paths.image_classifier);
  MaliciousCorpus corpus = load_corpus_jsonl(cfg.paths.harmful_corpus, vocab);

  SuffixCmdResult res;
  res.result =
      train_suffix(g, c_text, c_img, corpus, table, cfg.suffix, cfg.seed);

  save_suffix(out_path, res.result.suffix, cfg.suffix);
  std::ofstream tf(out_path + ".trace.jsonl", std::ios::binary);
  if (!tf) {
    throw IoError("cannot open for writing: " + out_path + ".trace.jsonl");
  }
  for (const TraceRecord& r : res.result.trace) {
    tf << r.to_json().dump() << '\n';
  }

  const TraceRecord& last = res.result.trace.back();
  res.summary = nlohmann::json{
      {"suffix", out_path},
      {"converged", res.result.converged},
      {"rounds_used", res.result.suffix.trained_rounds},
      {"initial_image_score", res.result.trace.front().mean_image_score},
      {"final_image_score", last.mean_image_score},
      {"final_text_score", last.mean_text_score},
      {"category", cfg.suffix.category},
  };
  return res;
}

SanitizeCmdResult sanitize_cmd(const RunConfig& cfg, const std::string& text,
                               Method method, const std::string& category) {
  require_path(cfg.paths.vocab, "vocab");
  require_path(cfg.paths.embedding_table, "embedding_table");
  require_path(cfg.paths.text_classifier, "text_classifier");

  Vocab vocab = load_vocab(cfg.paths.vocab);
  EmbeddingTable table = load_embedding_table(cfg.paths.embedding_table);
  MlpClassifier c_text = load_classifier(cfg.paths.text_classifier);

  std::vector<std::int32_t> ids = tokenize(text, vocab);
  PromptEmbedding p = encode(ids, table);

  const bool needs_suffix = method == Method::suffix ||
                            method == Method::modify_then_suffix ||
                            method == Method::suffix_then_modify;
  StoredSuffix stored;
  if (needs_suffix) {
    stored = load_suffix(suffix_path_for(cfg, category));
  }

  SanitizeCmdResult out;
  nlohmann::json report{{"method", method_name(method)},
                        {"prompt", text},
                        {"tokens", ids}};

  switch (method) {
    case Method::modify: {
      SanitizeResult r = modify(c_text, p, cfg.sanitize);
      out.status = r.report.status;
      report["report"] = r.report.to_json();
      break;
    }
    case Method::suffix: {
      ApplyResult r =
          apply_suffix(c_text, p, stored.suffix, cfg.suffix.gamma_text);
      if (!r.applied) {
        out.status = SanitizeStatus::clean_input;
      } else if (r.score_after < cfg.suffix.gamma_text) {
        out.status = SanitizeStatus::sanitized;
      } else {
        out.status = SanitizeStatus::unresolved;
      }
      report["report"] = nlohmann::json{
          {"applied", r.applied},
          {"score_before", r.score_before},
          {"score_after", r.score_after},
          {"status", sanitize_status_name(out.status)},
      };
      break;
    }
    case Method::modify_then_suffix: {
      ComposeResult r = modify_then_suffix(c_text, p, stored.suffix,
                                           cfg.sanitize);
      out.status = r.report.status;
      report["report"] = r.report.to_json();
      break;
    }
    case Method::suffix_then_modify: {
      ComposeResult r = suffix_then_modify(c_text, p, stored.suffix,
                                           cfg.sanitize);
      out.status = r.report.status;
      report["report"] = r.report.to_json();
      break;
    }
    default:
      throw ConfigError(std::string("sanitize does not support method '") +
                        method_name(method) + "'");
  }

  report["status"] = sanitize_status_name(out.status);
  out.report = std::move(report);
  return out;
}

EvalCmdResult evaluate_cmd(const RunConfig& cfg, Method method,
                           const std::string& out_path) {
  require_path(cfg.paths.vocab, "vocab");
  require_path(cfg.paths.embedding_table, "embedding_table");
  require_path(cfg.paths.generator, "generator");
  require_path(cfg.paths.text_classifier, "text_classifier");
  require_path(cfg.paths.image_classifier, "image_classifier");
  require_path(cfg.paths.harmful_corpus, "harmful_corpus");
  require_path(cfg.paths.benign_corpus, "benign_corpus");

  Vocab vocab = load_vocab(cfg.paths.vocab);
  EmbeddingTable table = load_embedding_table(cfg.paths.embedding_table);
  GeneratorStub g = load_generator(cfg.paths.generator);
  MlpClassifier c_text = load_classifier(cfg.paths.text_classifier);
  MlpClassifier c_img = load_classifier(cfg.paths.image_classifier);
  MaliciousCorpus harmful = load_corpus_jsonl(cfg.paths.harmful_corpus, vocab);
  MaliciousCorpus benign = load_corpus_jsonl(cfg.paths.benign_corpus, vocab);

  const bool needs_suffix = method == Method::suffix ||
                            method == Method::modify_then_suffix ||
                            method == Method::suffix_then_modify;
  StoredSuffix stored;
  if (needs_suffix) {
    stored = load_suffix(suffix_path_for(cfg, ""));
  }

  EvalModels models;
  models.c_text = &c_text;
  models.c_img = &c_img;
  models.generator = &g;
  models.table = &table;

  EvalConfigs cfgs;
  cfgs.sanitize = cfg.sanitize;
  cfgs.gamma_text = cfg.suffix.gamma_text;
  cfgs.control_m = cfg.suffix.m;
  if (needs_suffix) cfgs.suffix = &stored.suffix;

  EvalCmdResult res;
  res.summary = evaluate(method, models, harmful, benign, cfgs);
  res.json = res.summary.to_json();

  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::binary);
    if (!f) {
      throw IoError("cannot open for writing: " + out_path);
    }
    f << res.json.dump(2) << '\n';
    if (!f) {
      throw IoError("write failed: " + out_path);
    }
  }
  return res;
}

nlohmann::json export_features_cmd(const RunConfig& cfg,
                                   const std::string& out_path) {
  require_path(cfg.paths.vocab, "vocab");
  require_path(cfg.paths.embedding_table, "embedding_table");
  require_path(cfg.paths.text_classifier, "text_classifier");
  require_path(cfg.paths.harmful_corpus, "harmful_corpus");
  if (out_path.empty()) {
    throw ConfigError("export-features: output path is required");
  }

  Vocab vocab = load_vocab(cfg.paths.vocab);
  EmbeddingTable table = load_embedding_table(cfg.paths.embedding_table);
  MlpClassifier c_text = load_classifier(cfg.paths.text_classifier);
  MaliciousCorpus harmful = load_corpus_jsonl(cfg.paths.harmful_corpus, vocab);

  bool with_suffix = !cfg.paths.suffix.empty();
  StoredSuffix stored;
  if (with_suffix) {
    stored = load_suffix(cfg.paths.suffix);
  }

  export_features(c_text, table, harmful,
                  with_suffix ? &stored.suffix : nullptr, with_suffix,
                  out_path);

  return nlohmann::json{
      {"out", out_path},
      {"prompts", harmful.prompts.size()},
      {"variants", with_suffix ? 3 : 1},
  };
}

}  // namespace promptsan
