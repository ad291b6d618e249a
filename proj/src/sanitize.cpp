#include "sanitize.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "errors.hpp"

namespace promptsan {

void SanitizeConfig::validate() const {
  if (!(eta >= 0.0)) {
    throw ConfigError("sanitize: eta must be non-negative");
  }
  if (!(p_top > 0.0 && p_top <= 1.0)) {
    throw ConfigError("sanitize: p_top must lie in (0, 1]");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ConfigError("sanitize: gamma must lie in (0, 1)");
  }
  if (max_iters == 0) {
    throw ConfigError("sanitize: max_iters must be positive");
  }
}

Detection detect(const MlpClassifier& c, const PromptEmbedding& p,
                 double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ConfigError("detect: gamma must lie in (0, 1)");
  }
  const double s = score(c, pool(p));
  return {s, s >= gamma};
}

Vec64 token_sensitivities(const MlpClassifier& c, const PromptEmbedding& p) {
  const Vec64 g = input_gradient(c, pool(p), 0);
  const double row_norm =
      linf_norm(g.data(), g.size()) / static_cast<double>(p.rows());
  return Vec64(p.rows(), row_norm);
}

Vec64 token_sensitivities_weighted(const MlpClassifier& c,
                                   const PromptEmbedding& p,
                                   const Vec64& weights) {
  const Vec64 g = input_gradient(c, pool_weighted(p, weights), 0);
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  Vec64 out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    out[i] = (weights[i] / total) * linf_norm(g.data(), g.size());
  }
  return out;
}

std::vector<std::size_t> select_top_p(const Vec64& sensitivities,
                                      double p_top) {
  if (sensitivities.empty()) {
    throw ConfigError("select_top_p: empty sensitivity list");
  }
  if (!(p_top > 0.0 && p_top <= 1.0)) {
    throw ConfigError("select_top_p: p_top must lie in (0, 1]");
  }
  double total = 0.0;
  for (double s : sensitivities) {
    if (s < 0.0) {
      throw ConfigError("select_top_p: negative sensitivity");
    }
    total += s;
  }
  const std::size_t n = sensitivities.size();
  Vec64 weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    weights[i] = total == 0.0 ? 1.0 / static_cast<double>(n)
                              : sensitivities[i] / total;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return weights[a] > weights[b];
                   });
  std::size_t keep = n;
  double mass = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mass += weights[order[k]];
    if (mass >= p_top) {
      keep = k + 1;
      break;
    }
  }
  std::vector<std::size_t> selected(order.begin(),
                                    order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(selected.begin(), selected.end());
  return selected;
}

const char* sanitize_status_name(SanitizeStatus s) {
  switch (s) {
    case SanitizeStatus::clean_input: return "clean_input";
    case SanitizeStatus::sanitized: return "sanitized";
    case SanitizeStatus::unresolved: return "unresolved";
  }
  return "unknown";
}

nlohmann::json SanitizeReport::to_json() const {
  return nlohmann::json{
      {"initial_score", initial_score},
      {"final_score", final_score},
      {"selected_indices", selected_indices},
      {"iterations_used", iterations_used},
      {"status", sanitize_status_name(status)},
      {"per_iteration_scores", per_iteration_scores},
      {"optimizer", optimizer},
  };
}

SanitizeResult modify(const MlpClassifier& c, const PromptEmbedding& p,
                      const SanitizeConfig& cfg) {
  cfg.validate();
  SanitizeReport report;
  report.optimizer = cfg.use_adamw ? "adamw" : "gd";

  const Detection initial = detect(c, p, cfg.gamma);
  report.initial_score = initial.score;
  if (!initial.flagged) {
    report.final_score = initial.score;
    report.status = SanitizeStatus::clean_input;
    return {p, report};
  }

  const Vec64 sensitivities = token_sensitivities(c, p);
  const bool all_zero =
      std::all_of(sensitivities.begin(), sensitivities.end(),
                  [](double s) { return s == 0.0; });
  // A constant classifier yields no usable signal; fall back to editing
  // the first token so the loop below still runs to a defined outcome.
  report.selected_indices =
      all_zero ? std::vector<std::size_t>{0}
               : select_top_p(sensitivities, cfg.p_top);

  PromptEmbedding work = p;
  work.provenance = Provenance::modified;
  const std::size_t dim = p.dim();
  const double inv_rows = 1.0 / static_cast<double>(p.rows());
  const std::size_t selected_count = report.selected_indices.size();

  std::optional<AdamW> adamw;
  std::vector<double> params;
  std::vector<double> grads;
  if (cfg.use_adamw) {
    AdamW::Params op;
    op.lr = cfg.eta;
    adamw.emplace(selected_count * dim, op);
    params.resize(selected_count * dim);
    grads.resize(selected_count * dim);
  }

  double current = initial.score;
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    const Vec64 pooled_grad = input_gradient(c, pool(work), 0);
    if (cfg.use_adamw) {
      for (std::size_t s = 0; s < selected_count; ++s) {
        const double* row = work.matrix.row(report.selected_indices[s]);
        std::copy(row, row + dim, params.begin() + s * dim);
        for (std::size_t k = 0; k < dim; ++k) {
          grads[s * dim + k] = inv_rows * pooled_grad[k];
        }
      }
      adamw->step(params.data(), grads.data(), params.size());
      for (std::size_t s = 0; s < selected_count; ++s) {
        double* row = work.matrix.row(report.selected_indices[s]);
        std::copy(params.begin() + s * dim, params.begin() + (s + 1) * dim,
                  row);
      }
    } else {
      for (std::size_t idx : report.selected_indices) {
        double* row = work.matrix.row(idx);
        for (std::size_t k = 0; k < dim; ++k) {
          row[k] -= cfg.eta * inv_rows * pooled_grad[k];
        }
      }
    }
    current = score(c, pool(work));
    report.per_iteration_scores.push_back(current);
    report.iterations_used = iter;
    if (current < cfg.gamma) {
      report.status = SanitizeStatus::sanitized;
      break;
    }
  }
  if (current >= cfg.gamma) {
    report.status = SanitizeStatus::unresolved;
  }
  report.final_score = current;
  return {std::move(work), report};
}

}  // namespace promptsan
