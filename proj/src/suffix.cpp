#include "suffix.hpp"

#include <algorithm>
#include <numeric>

#include "errors.hpp"
#include "sanitize.hpp"

namespace promptsan {

SafetySuffix SafetySuffix::zeros(std::size_t m, std::size_t dim) {
  if (m == 0 || dim == 0) {
    throw ConfigError("suffix: m and dim must be positive");
  }
  SafetySuffix s;
  s.m = m;
  s.dim = dim;
  s.matrix = Mat64(m, dim);
  return s;
}

const char* placement_name(Placement p) {
  return p == Placement::suffix ? "suffix" : "prefix";
}

Placement placement_from_string(const std::string& s) {
  if (s == "suffix") return Placement::suffix;
  if (s == "prefix") return Placement::prefix;
  throw ConfigError("unknown placement '" + s + "'");
}

void SuffixConfig::validate() const {
  if (m == 0) {
    throw ConfigError("suffix: m must be positive");
  }
  if (k == 0 || k > m) {
    throw ConfigError("suffix: k must lie in [1, m]");
  }
  if (!(gamma_text > 0.0 && gamma_text < 1.0) ||
      !(gamma_image > 0.0 && gamma_image < 1.0)) {
    throw ConfigError("suffix: thresholds must lie in (0, 1)");
  }
  if (!(sigma >= 0.0)) {
    throw ConfigError("suffix: sigma must be non-negative");
  }
  if (rounds == 0) {
    throw ConfigError("suffix: rounds must be positive");
  }
  if (!(text_lr >= 0.0)) {
    throw ConfigError("suffix: text_lr must be non-negative");
  }
  if (batch_size == 0) {
    throw ConfigError("suffix: batch_size must be positive");
  }
  if (category.empty()) {
    throw ConfigError("suffix: category must be non-empty");
  }
}

nlohmann::json SuffixConfig::to_json() const {
  return nlohmann::json{
      {"m", m},
      {"k", k},
      {"gamma_text", gamma_text},
      {"gamma_image", gamma_image},
      {"sigma", sigma},
      {"rounds", rounds},
      {"text_steps", text_steps},
      {"text_lr", text_lr},
      {"batch_size", batch_size},
      {"placement", placement_name(placement)},
      {"category", category},
  };
}

SuffixConfig SuffixConfig::from_json(const nlohmann::json& j) {
  SuffixConfig cfg;
  cfg.m = j.value("m", cfg.m);
  cfg.k = j.value("k", cfg.k);
  cfg.gamma_text = j.value("gamma_text", cfg.gamma_text);
  cfg.gamma_image = j.value("gamma_image", cfg.gamma_image);
  cfg.sigma = j.value("sigma", cfg.sigma);
  cfg.rounds = j.value("rounds", cfg.rounds);
  cfg.text_steps = j.value("text_steps", cfg.text_steps);
  cfg.text_lr = j.value("text_lr", cfg.text_lr);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.placement =
      placement_from_string(j.value("placement", std::string("suffix")));
  cfg.category = j.value("category", cfg.category);
  cfg.validate();
  return cfg;
}

SafetySuffix init_suffix(const SuffixConfig& cfg, std::size_t dim, Rng rng) {
  cfg.validate();
  SafetySuffix s = SafetySuffix::zeros(cfg.m, dim);
  s.category = cfg.category;
  for (double& v : s.matrix.data) {
    v = rng.normal(0.0, cfg.sigma);
  }
  return s;
}

namespace {

PromptEmbedding concat_by_placement(const PromptEmbedding& p,
                                    const SafetySuffix& s,
                                    Placement placement) {
  return placement == Placement::suffix ? concat_suffix(p, s)
                                        : concat_prefix(p, s);
}

// Row range occupied by the suffix block after concatenation.
std::size_t suffix_block_start(const PromptEmbedding& full,
                               const SafetySuffix& s, Placement placement) {
  return placement == Placement::suffix ? full.rows() - s.m : 0;
}

}  // namespace

SuffixGrads suffix_image_grads(const GeneratorContract& g,
                               const MlpClassifier& c_img,
                               const std::vector<const PromptEmbedding*>& batch,
                               const SafetySuffix& s, Placement placement) {
  if (batch.empty()) {
    throw ConfigError("suffix_image_grads: empty batch");
  }
  SuffixGrads out;
  out.mean_grads = Mat64(s.m, s.dim);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const PromptEmbedding* p : batch) {
    const PromptEmbedding full = concat_by_placement(*p, s, placement);
    const PromptChainGrads chain = backprop_to_prompt(g, c_img, full);
    const std::size_t start = suffix_block_start(full, s, placement);
    for (std::size_t r = 0; r < s.m; ++r) {
      const double* src = chain.row_grads.row(start + r);
      double* dst = out.mean_grads.row(r);
      for (std::size_t c = 0; c < s.dim; ++c) {
        dst[c] += inv * src[c];
      }
    }
  }
  out.row_norms.resize(s.m);
  for (std::size_t r = 0; r < s.m; ++r) {
    out.row_norms[r] = l2_norm(out.mean_grads.row(r), s.dim);
  }
  return out;
}

std::vector<std::size_t> select_top_k(const Vec64& norms, std::size_t k) {
  if (k == 0 || k > norms.size()) {
    throw ConfigError("select_top_k: k=" + std::to_string(k) + " for " +
                      std::to_string(norms.size()) + " rows");
  }
  std::vector<std::size_t> order(norms.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return norms[a] > norms[b];
                   });
  std::vector<std::size_t> selected(order.begin(),
                                    order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(selected.begin(), selected.end());
  return selected;
}

SafetySuffix refine_text(const MlpClassifier& c_text,
                         const std::vector<const PromptEmbedding*>& batch,
                         SafetySuffix s, const std::vector<std::size_t>& rows,
                         std::size_t steps, double lr, Placement placement) {
  if (batch.empty()) {
    throw ConfigError("refine_text: empty batch");
  }
  if (rows.empty()) {
    throw ConfigError("refine_text: no rows selected");
  }
  for (std::size_t r : rows) {
    if (r >= s.m) {
      throw ConfigError("refine_text: row index " + std::to_string(r) +
                        " outside suffix of " + std::to_string(s.m) + " rows");
    }
  }
  AdamW::Params op;
  op.lr = lr;
  AdamW adamw(rows.size() * s.dim, op);
  std::vector<double> params(rows.size() * s.dim);
  std::vector<double> grads(rows.size() * s.dim);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (std::size_t step = 0; step < steps; ++step) {
    // Mean pooling gives every suffix row the same per-prompt gradient,
    // so one pooled gradient per prompt covers all selected rows.
    Vec64 shared_grad(s.dim, 0.0);
    for (const PromptEmbedding* p : batch) {
      const PromptEmbedding full = concat_by_placement(*p, s, placement);
      const Vec64 pooled_grad = input_gradient(c_text, pool(full), 0);
      const double inv_rows = 1.0 / static_cast<double>(full.rows());
      for (std::size_t c = 0; c < s.dim; ++c) {
        shared_grad[c] += inv_batch * inv_rows * pooled_grad[c];
      }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* src = s.matrix.row(rows[i]);
      std::copy(src, src + s.dim, params.begin() + i * s.dim);
      std::copy(shared_grad.begin(), shared_grad.end(),
                grads.begin() + i * s.dim);
    }
    adamw.step(params.data(), grads.data(), params.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* dst = s.matrix.row(rows[i]);
      std::copy(params.begin() + i * s.dim, params.begin() + (i + 1) * s.dim,
                dst);
    }
  }
  return s;
}

nlohmann::json TraceRecord::to_json() const {
  return nlohmann::json{
      {"round", round},
      {"mean_image_score", mean_image_score},
      {"mean_text_score", mean_text_score},
      {"selected_indices", selected_indices},
  };
}

namespace {

// Draws batches without replacement within an epoch; reshuffles when the
// permutation is exhausted, so a batch can straddle an epoch boundary.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, Rng rng)
      : pool_(std::move(pool)), rng_(std::move(rng)) {
    rng_.shuffle(pool_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (pos_ == pool_.size()) {
        rng_.shuffle(pool_);
        pos_ = 0;
      }
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> pool_;
  Rng rng_;
  std::size_t pos_ = 0;
};

double mean_score_with_suffix(const MlpClassifier& c,
                              const std::vector<PromptEmbedding>& prompts,
                              const std::vector<std::size_t>& idx,
                              const SafetySuffix& s, Placement placement,
                              const GeneratorContract* g) {
  double acc = 0.0;
  for (std::size_t i : idx) {
    const PromptEmbedding full = concat_by_placement(prompts[i], s, placement);
    const Vec64 pooled = pool(full);
    acc += g ? score(c, generate(*g, pooled).vector) : score(c, pooled);
  }
  return acc / static_cast<double>(idx.size());
}

}  // namespace

SuffixTrainResult train_suffix(const GeneratorContract& g,
                               const MlpClassifier& c_text,
                               const MlpClassifier& c_img,
                               const MaliciousCorpus& corpus,
                               const EmbeddingTable& table,
                               const SuffixConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (corpus.prompts.empty()) {
    throw ConfigError("train_suffix: empty corpus");
  }
  if (c_text.input_dim() != table.dim) {
    throw DimensionError("train_suffix: text classifier dim " +
                         std::to_string(c_text.input_dim()) +
                         " vs embedding dim " + std::to_string(table.dim));
  }
  if (g.input_dim() != table.dim || c_img.input_dim() != g.output_dim()) {
    throw DimensionError("train_suffix: generator chain dims do not line up");
  }

  std::vector<PromptEmbedding> prompts;
  prompts.reserve(corpus.prompts.size());
  for (const auto& ids : corpus.prompts) {
    prompts.push_back(encode(ids, table));
  }

  const Rng root(seed);
  const std::size_t n = prompts.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    Rng split_rng = root.substream("suffix-split");
    split_rng.shuffle(order);
  }
  // Corpora too small to spare a fifth are scored on the training split.
  std::vector<std::size_t> held;
  std::vector<std::size_t> train;
  if (n >= 5) {
    const std::size_t held_count = n / 5;
    held.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held_count));
    train.assign(order.begin() + static_cast<std::ptrdiff_t>(held_count), order.end());
  } else {
    held = order;
    train = order;
  }

  SuffixTrainResult result;
  result.suffix = init_suffix(cfg, table.dim, root.substream("suffix-init"));
  BatchSampler sampler(train, root.substream("batch-shuffle"));

  {
    // Round 0 records the held-out scores of the freshly initialized
    // suffix, the baseline any later round is measured against.
    TraceRecord rec;
    rec.round = 0;
    rec.mean_image_score = mean_score_with_suffix(
        c_img, prompts, held, result.suffix, cfg.placement, &g);
    rec.mean_text_score = mean_score_with_suffix(
        c_text, prompts, held, result.suffix, cfg.placement, nullptr);
    result.trace.push_back(std::move(rec));
  }

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const std::vector<std::size_t> batch_idx = sampler.next(cfg.batch_size);
    std::vector<const PromptEmbedding*> batch;
    batch.reserve(batch_idx.size());
    for (std::size_t i : batch_idx) {
      batch.push_back(&prompts[i]);
    }
    const SuffixGrads grads =
        suffix_image_grads(g, c_img, batch, result.suffix, cfg.placement);
    const std::vector<std::size_t> selected =
        select_top_k(grads.row_norms, cfg.k);
    result.suffix = refine_text(c_text, batch, std::move(result.suffix),
                                selected, cfg.text_steps, cfg.text_lr,
                                cfg.placement);
    result.suffix.trained_rounds = round;

    TraceRecord rec;
    rec.round = round;
    rec.selected_indices = selected;
    rec.mean_image_score = mean_score_with_suffix(
        c_img, prompts, held, result.suffix, cfg.placement, &g);
    rec.mean_text_score = mean_score_with_suffix(
        c_text, prompts, held, result.suffix, cfg.placement, nullptr);
    result.trace.push_back(std::move(rec));

    if (result.trace.back().mean_image_score < cfg.gamma_image &&
        result.trace.back().mean_text_score < cfg.gamma_text) {
      result.converged = true;
      break;
    }
  }
  return result;
}

ApplyResult apply_suffix(const MlpClassifier& c_text, const PromptEmbedding& p,
                         const SafetySuffix& s, double gamma_text) {
  const Detection det = detect(c_text, p, gamma_text);
  ApplyResult out;
  out.score_before = det.score;
  if (!det.flagged) {
    out.embedding = p;
    out.applied = false;
    out.score_after = det.score;
    return out;
  }
  out.embedding = concat_suffix(p, s);
  out.applied = true;
  out.score_after = score(c_text, pool(out.embedding));
  return out;
}

}  // namespace promptsan
