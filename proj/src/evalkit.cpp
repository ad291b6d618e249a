#include "evalkit.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "errors.hpp"

namespace promptsan {

void SyntheticCorpusSpec::validate() const {
  if (vocab_size < 3) {
    throw ConfigError("corpus: vocab_size must be at least 3");
  }
  if (dim < 2) {
    throw ConfigError("corpus: dim must be at least 2");
  }
  if (n_harmful == 0 || n_benign == 0) {
    throw ConfigError("corpus: both prompt counts must be positive");
  }
  if (prompt_len_min == 0 || prompt_len_min > prompt_len_max) {
    throw ConfigError("corpus: bad prompt length range");
  }
  if (!(separation >= 0.0)) {
    throw ConfigError("corpus: separation must be non-negative");
  }
}

PoolLayout PoolLayout::for_spec(const SyntheticCorpusSpec& spec) {
  const std::int32_t n_tokens = static_cast<std::int32_t>(spec.vocab_size) - 1;
  const std::int32_t n_harm = n_tokens / 2;
  PoolLayout layout;
  layout.harmful_begin = 1;
  layout.harmful_end = 1 + n_harm;
  layout.benign_begin = layout.harmful_end;
  layout.benign_end = static_cast<std::int32_t>(spec.vocab_size);
  return layout;
}

std::vector<std::int32_t> sample_prompt(const PoolLayout& layout, bool harmful,
                                        std::size_t len_min,
                                        std::size_t len_max, Rng& rng) {
  const std::size_t len = rng.uniform_index(len_min, len_max);
  std::vector<std::int32_t> ids(len);
  for (std::size_t i = 0; i < len; ++i) {
    const bool cross = rng.uniform01() < kContaminationRate;
    const bool from_harmful = harmful != cross;
    const std::int32_t begin =
        from_harmful ? layout.harmful_begin : layout.benign_begin;
    const std::int32_t end =
        from_harmful ? layout.harmful_end : layout.benign_end;
    ids[i] = begin + static_cast<std::int32_t>(
                         rng.bounded(static_cast<std::uint64_t>(end - begin)));
  }
  return ids;
}

ToyCorpus make_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).substream("corpus");

  const PoolLayout layout = PoolLayout::for_spec(spec);
  std::vector<std::string> tokens;
  tokens.reserve(spec.vocab_size);
  tokens.push_back("<unk>");
  for (std::int32_t i = layout.harmful_begin; i < layout.harmful_end; ++i) {
    tokens.push_back("h" + std::to_string(i - layout.harmful_begin));
  }
  for (std::int32_t i = layout.benign_begin; i < layout.benign_end; ++i) {
    tokens.push_back("b" + std::to_string(i - layout.benign_begin));
  }

  // Unit direction separating the cluster centers.
  Vec64 direction(spec.dim);
  for (double& v : direction) {
    v = rng.normal();
  }
  const double norm = l2_norm(direction.data(), direction.size());
  for (double& v : direction) {
    v /= norm;
  }

  ToyCorpus out;
  out.vocab = Vocab::from_tokens(std::move(tokens), 0);
  out.table.vocab_size = spec.vocab_size;
  out.table.dim = spec.dim;
  out.table.weights = Mat64(spec.vocab_size, spec.dim);
  const double half = spec.separation / 2.0;
  for (std::size_t row = 0; row < spec.vocab_size; ++row) {
    double center = 0.0;
    if (row >= static_cast<std::size_t>(layout.harmful_begin) &&
        row < static_cast<std::size_t>(layout.harmful_end)) {
      center = half;
    } else if (row >= static_cast<std::size_t>(layout.benign_begin)) {
      center = -half;
    }
    double* dst = out.table.weights.row(row);
    for (std::size_t c = 0; c < spec.dim; ++c) {
      dst[c] = center * direction[c] + rng.normal(0.0, kClusterNoiseStd);
    }
  }

  out.harmful.source = "synthetic-harmful";
  out.benign.source = "synthetic-benign";
  for (std::size_t i = 0; i < spec.n_harmful; ++i) {
    out.harmful.prompts.push_back(sample_prompt(
        layout, true, spec.prompt_len_min, spec.prompt_len_max, rng));
  }
  for (std::size_t i = 0; i < spec.n_benign; ++i) {
    out.benign.prompts.push_back(sample_prompt(
        layout, false, spec.prompt_len_min, spec.prompt_len_max, rng));
  }
  return out;
}

TrainBatch pooled_features(const MaliciousCorpus& harmful,
                           const MaliciousCorpus& benign,
                           const EmbeddingTable& table) {
  TrainBatch batch;
  for (const auto& ids : harmful.prompts) {
    batch.features.push_back(pool(encode(ids, table)));
    batch.labels.push_back(1);
  }
  for (const auto& ids : benign.prompts) {
    batch.features.push_back(pool(encode(ids, table)));
    batch.labels.push_back(0);
  }
  return batch;
}

TrainBatch image_features(const MaliciousCorpus& harmful,
                          const MaliciousCorpus& benign,
                          const EmbeddingTable& table,
                          const GeneratorContract& g) {
  TrainBatch batch = pooled_features(harmful, benign, table);
  for (Vec64& f : batch.features) {
    f = generate(g, f).vector;
  }
  return batch;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::modify: return "modify";
    case Method::suffix: return "suffix";
    case Method::modify_then_suffix: return "modify_then_suffix";
    case Method::suffix_then_modify: return "suffix_then_modify";
    case Method::zero_suffix_control: return "zero_suffix_control";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "none") return Method::none;
  if (s == "modify") return Method::modify;
  if (s == "suffix") return Method::suffix;
  if (s == "modify_then_suffix" || s == "mts") return Method::modify_then_suffix;
  if (s == "suffix_then_modify" || s == "stm") return Method::suffix_then_modify;
  if (s == "zero_suffix_control") return Method::zero_suffix_control;
  throw ConfigError("unknown method '" + s + "'");
}

nlohmann::json PerPromptRecord::to_json() const {
  return nlohmann::json{
      {"prompt_id", prompt_id},
      {"role", role},
      {"score_before", score_before},
      {"score_after", score_after},
      {"image_score", image_score},
      {"flagged_before", flagged_before},
      {"flagged_after", flagged_after},
      {"preserved", preserved},
      {"embedding_shift", embedding_shift},
      {"status", status},
  };
}

nlohmann::json EvalSummary::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const PerPromptRecord& r : per_prompt) {
    per.push_back(r.to_json());
  }
  return nlohmann::json{
      {"method", method},
      {"flag_rate_before", flag_rate_before},
      {"flag_rate_after", flag_rate_after},
      {"mean_score_before", mean_score_before},
      {"mean_score_after", mean_score_after},
      {"mean_image_score", mean_image_score},
      {"mean_embedding_shift", mean_embedding_shift},
      {"benign_preservation_rate", benign_preservation_rate},
      {"harmful_count", harmful_count},
      {"benign_count", benign_count},
      {"per_prompt", per},
  };
}

namespace {

struct MethodOutcome {
  PromptEmbedding embedding;
  std::string status;
};

MethodOutcome apply_method(Method method, const EvalModels& models,
                           const PromptEmbedding& p, const EvalConfigs& cfgs,
                           const SafetySuffix* zero_control) {
  switch (method) {
    case Method::none:
      return {p, "untouched"};
    case Method::modify: {
      SanitizeResult r = modify(*models.c_text, p, cfgs.sanitize);
      return {std::move(r.embedding), sanitize_status_name(r.report.status)};
    }
    case Method::suffix: {
      ApplyResult r = apply_suffix(*models.c_text, p, *cfgs.suffix,
                                   cfgs.gamma_text);
      return {std::move(r.embedding), r.applied ? "applied" : "skipped"};
    }
    case Method::zero_suffix_control: {
      ApplyResult r = apply_suffix(*models.c_text, p, *zero_control,
                                   cfgs.gamma_text);
      return {std::move(r.embedding), r.applied ? "applied" : "skipped"};
    }
    case Method::modify_then_suffix: {
      ComposeResult r =
          modify_then_suffix(*models.c_text, p, *cfgs.suffix, cfgs.sanitize);
      return {std::move(r.embedding), sanitize_status_name(r.report.status)};
    }
    case Method::suffix_then_modify: {
      ComposeResult r =
          suffix_then_modify(*models.c_text, p, *cfgs.suffix, cfgs.sanitize);
      return {std::move(r.embedding), sanitize_status_name(r.report.status)};
    }
  }
  throw ConfigError("evaluate: unknown method");
}

double original_rows_shift(const PromptEmbedding& before,
                           const PromptEmbedding& after) {
  const std::size_t n = before.rows();
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* a = before.matrix.row(r);
    const double* b = after.matrix.row(r);
    for (std::size_t c = 0; c < before.dim(); ++c) {
      const double d = a[c] - b[c];
      acc += d * d;
    }
  }
  return std::sqrt(acc) / static_cast<double>(n);
}

bool bitwise_equal(const PromptEmbedding& a, const PromptEmbedding& b) {
  return a.matrix.rows == b.matrix.rows && a.matrix.cols == b.matrix.cols &&
         std::equal(a.matrix.data.begin(), a.matrix.data.end(),
                    b.matrix.data.begin(),
                    [](double x, double y) {
                      return std::memcmp(&x, &y, sizeof x) == 0;
                    });
}

}  // namespace

EvalSummary evaluate(Method method, const EvalModels& models,
                     const MaliciousCorpus& harmful,
                     const MaliciousCorpus& benign, const EvalConfigs& cfgs) {
  if (!models.c_text || !models.c_img || !models.generator || !models.table) {
    throw ConfigError("evaluate: missing model");
  }
  const bool needs_suffix = method == Method::suffix ||
                            method == Method::modify_then_suffix ||
                            method == Method::suffix_then_modify;
  if (needs_suffix && !cfgs.suffix) {
    throw ConfigError("evaluate: method requires a trained suffix");
  }

  SafetySuffix zero_control;
  if (method == Method::zero_suffix_control) {
    zero_control = SafetySuffix::zeros(
        cfgs.suffix ? cfgs.suffix->m : cfgs.control_m, models.table->dim);
  }

  EvalSummary summary;
  summary.method = method_name(method);
  summary.harmful_count = harmful.prompts.size();
  summary.benign_count = benign.prompts.size();

  std::size_t flagged_before = 0;
  std::size_t flagged_after = 0;
  double sum_before = 0.0;
  double sum_after = 0.0;
  double sum_shift = 0.0;
  double sum_image = 0.0;
  for (std::size_t i = 0; i < harmful.prompts.size(); ++i) {
    const PromptEmbedding p = encode(harmful.prompts[i], *models.table);
    PerPromptRecord rec;
    rec.prompt_id = i;
    rec.role = "harmful";
    rec.score_before = score(*models.c_text, pool(p));
    rec.flagged_before = rec.score_before >= cfgs.gamma_text;

    MethodOutcome outcome = apply_method(method, models, p, cfgs, &zero_control);
    rec.status = outcome.status;
    rec.score_after = score(*models.c_text, pool(outcome.embedding));
    rec.flagged_after = rec.score_after >= cfgs.gamma_text;
    rec.image_score = score(
        *models.c_img,
        generate(*models.generator, pool(outcome.embedding)).vector);
    rec.embedding_shift = original_rows_shift(p, outcome.embedding);
    rec.preserved = bitwise_equal(p, outcome.embedding);

    flagged_before += rec.flagged_before ? 1 : 0;
    flagged_after += rec.flagged_after ? 1 : 0;
    sum_before += rec.score_before;
    sum_after += rec.score_after;
    sum_shift += rec.embedding_shift;
    sum_image += rec.image_score;
    summary.per_prompt.push_back(std::move(rec));
  }

  std::size_t preserved = 0;
  for (std::size_t i = 0; i < benign.prompts.size(); ++i) {
    const PromptEmbedding p = encode(benign.prompts[i], *models.table);
    PerPromptRecord rec;
    rec.prompt_id = i;
    rec.role = "benign";
    rec.score_before = score(*models.c_text, pool(p));
    rec.flagged_before = rec.score_before >= cfgs.gamma_text;

    MethodOutcome outcome = apply_method(method, models, p, cfgs, &zero_control);
    rec.status = outcome.status;
    rec.score_after = score(*models.c_text, pool(outcome.embedding));
    rec.flagged_after = rec.score_after >= cfgs.gamma_text;
    rec.image_score = score(
        *models.c_img,
        generate(*models.generator, pool(outcome.embedding)).vector);
    rec.embedding_shift = original_rows_shift(p, outcome.embedding);
    rec.preserved = bitwise_equal(p, outcome.embedding);
    preserved += rec.preserved ? 1 : 0;
    summary.per_prompt.push_back(std::move(rec));
  }

  const double nh = static_cast<double>(harmful.prompts.size());
  summary.flag_rate_before = static_cast<double>(flagged_before) / nh;
  summary.flag_rate_after = static_cast<double>(flagged_after) / nh;
  summary.mean_score_before = sum_before / nh;
  summary.mean_score_after = sum_after / nh;
  summary.mean_image_score = sum_image / nh;
  summary.mean_embedding_shift = sum_shift / nh;
  summary.benign_preservation_rate =
      benign.prompts.empty()
          ? 1.0
          : static_cast<double>(preserved) /
                static_cast<double>(benign.prompts.size());
  return summary;
}

void export_features(const MlpClassifier& c_text, const EmbeddingTable& table,
                     const MaliciousCorpus& prompts, const SafetySuffix* s,
                     bool include_control, const std::string& out_path) {
  std::ofstream f(out_path, std::ios::binary);
  if (!f) {
    throw IoError("cannot write features file: " + out_path);
  }
  SafetySuffix control;
  if (s && include_control) {
    control = SafetySuffix::zeros(s->m, s->dim);
  }
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i) {
    const PromptEmbedding p = encode(prompts.prompts[i], table);
    auto emit = [&](const char* variant, const PromptEmbedding& e) {
      const nlohmann::json rec{
          {"prompt_id", i},
          {"variant", variant},
          {"features", penultimate_features(c_text, pool(e))},
      };
      f << rec.dump() << '\n';
    };
    emit("original", p);
    if (s) {
      emit("suffixed", concat_suffix(p, *s));
      if (include_control) {
        emit("control", concat_suffix(p, control));
      }
    }
  }
  if (!f) {
    throw IoError("write failed: " + out_path);
  }
}

}  // namespace promptsan
