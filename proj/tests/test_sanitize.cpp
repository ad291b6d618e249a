#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "evalkit.hpp"
#include "rng.hpp"
#include "sanitize.hpp"
#include "test_helpers.hpp"
#include "textmodel.hpp"

using namespace promptsan;
using pstest::row_bits_equal;

namespace {

MlpClassifier zero_classifier(std::size_t d) {
  MlpClassifier c;
  c.net.layer_dims = {d, 3, 1};
  c.net.weights = {Mat64(3, d), Mat64(1, 3)};
  c.net.biases = {Vec64(3, 0.0), Vec64(1, 0.0)};
  c.validate();
  return c;
}

PromptEmbedding random_prompt(std::size_t rows, std::size_t dim, Rng& rng) {
  PromptEmbedding p;
  p.matrix = Mat64(rows, dim);
  for (double& v : p.matrix.data) {
    v = rng.normal(0.0, 0.8);
  }
  p.tokens.assign(rows, 1);
  return p;
}

// Same selection rule, written against the documented contract instead
// of the library internals: explicit tie-broken ordering via std::sort,
// prefix mass recomputed from scratch for every candidate length.
std::vector<std::size_t> minimal_prefix_oracle(const Vec64& sens,
                                               double p_top) {
  const std::size_t n = sens.size();
  const double total = std::accumulate(sens.begin(), sens.end(), 0.0);
  Vec64 w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = total == 0.0 ? 1.0 / static_cast<double>(n) : sens[i] / total;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (w[a] != w[b]) {
      return w[a] > w[b];
    }
    return a < b;
  });
  for (std::size_t k = 1; k <= n; ++k) {
    double mass = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      mass += w[order[j]];
    }
    if (mass >= p_top || k == n) {
      std::vector<std::size_t> kept(order.begin(),
                                    order.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(kept.begin(), kept.end());
      return kept;
    }
  }
  return {};
}

}  // namespace

TEST_CASE("sanitize config validation") {
  SanitizeConfig good;
  CHECK_NOTHROW(good.validate());

  SanitizeConfig c;
  c.eta = -0.01;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SanitizeConfig{};
  c.eta = 0.0;
  CHECK_NOTHROW(c.validate());

  c = SanitizeConfig{};
  c.p_top = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.p_top = 1.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.p_top = 1.0;
  CHECK_NOTHROW(c.validate());

  c = SanitizeConfig{};
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = SanitizeConfig{};
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("detect treats the threshold itself as flagged") {
  // All-zero weights push exactly 0.5 through the sigmoid, landing the
  // score on the decision boundary.
  MlpClassifier c = zero_classifier(4);
  Rng rng(3);
  PromptEmbedding p = random_prompt(3, 4, rng);

  Detection at = detect(c, p, 0.5);
  CHECK(at.score == 0.5);
  CHECK(at.flagged);

  Detection above = detect(c, p, 0.51);
  CHECK_FALSE(above.flagged);

  CHECK_THROWS_AS(detect(c, p, 0.0), ConfigError);
  CHECK_THROWS_AS(detect(c, p, 1.0), ConfigError);
}

TEST_CASE("token sensitivities are uniform under mean pooling") {
  Rng rng(21);
  MlpClassifier c = MlpClassifier::random({5, 6, 1}, rng);
  PromptEmbedding p = random_prompt(4, 5, rng);

  Vec64 s = token_sensitivities(c, p);
  REQUIRE(s.size() == 4);

  Vec64 g = input_gradient(c, pool(p), 0);
  double max_abs = 0.0;
  for (double v : g) {
    max_abs = std::max(max_abs, std::fabs(v));
  }
  const double expected = max_abs / 4.0;
  for (double v : s) {
    CHECK(v == expected);
  }
}

TEST_CASE("weighted sensitivities follow the weights") {
  Rng rng(22);
  MlpClassifier c = MlpClassifier::random({5, 6, 1}, rng);
  PromptEmbedding p = random_prompt(3, 5, rng);

  Vec64 s = token_sensitivities_weighted(c, p, {1.0, 2.0, 3.0});
  REQUIRE(s.size() == 3);
  CHECK(s[1] == doctest::Approx(2.0 * s[0]).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(3.0 * s[0]).epsilon(1e-12));
  CHECK(s[0] != s[2]);
}

TEST_CASE("select_top_p pinned cases") {
  // weights 5/14, 3/14, 5/14, 1/14; the two 5s win the ordering with
  // the earlier index first.
  CHECK(select_top_p({5, 3, 5, 1}, 0.5) == std::vector<std::size_t>{0, 2});
  CHECK(select_top_p({5, 3, 5, 1}, 0.1) == std::vector<std::size_t>{0});
  CHECK(select_top_p({5, 3, 5, 1}, 1.0) ==
        std::vector<std::size_t>{0, 1, 2, 3});

  CHECK(select_top_p({2, 2, 2, 2}, 0.5) == std::vector<std::size_t>{0, 1});
  CHECK(select_top_p({0, 0, 0}, 0.4) == std::vector<std::size_t>{0, 1});
  CHECK(select_top_p({7}, 0.05) == std::vector<std::size_t>{0});
}

TEST_CASE("select_top_p matches the minimal prefix oracle on random lists") {
  Rng rng(23);
  const Vec64 p_grid = {0.1, 0.25, 0.5, 0.77, 1.0};
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.bounded(8);
    Vec64 sens(n);
    for (double& v : sens) {
      // Coarse grid so ties happen often.
      v = 0.5 * static_cast<double>(rng.bounded(7));
    }
    for (double p_top : p_grid) {
      CHECK(select_top_p(sens, p_top) == minimal_prefix_oracle(sens, p_top));
    }
  }
}

TEST_CASE("select_top_p validates its inputs") {
  CHECK_THROWS_AS(select_top_p({}, 0.5), ConfigError);
  CHECK_THROWS_AS(select_top_p({1.0, -0.5}, 0.5), ConfigError);
  CHECK_THROWS_AS(select_top_p({1.0}, 0.0), ConfigError);
  CHECK_THROWS_AS(select_top_p({1.0}, 1.1), ConfigError);
}

TEST_CASE("modify returns clean inputs untouched") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  PromptEmbedding benign =
      encode(w.world.corpus.benign.prompts[0], w.world.corpus.table);

  SanitizeResult r = modify(w.c_text, benign, w.cfg.sanitize);
  CHECK(r.report.status == SanitizeStatus::clean_input);
  CHECK(r.report.initial_score < w.cfg.sanitize.gamma);
  CHECK(r.report.final_score == r.report.initial_score);
  CHECK(r.report.iterations_used == 0);
  CHECK(r.report.selected_indices.empty());
  CHECK(r.report.per_iteration_scores.empty());
  CHECK(r.embedding.provenance == Provenance::encoded);
  CHECK(pstest::bits_equal(r.embedding.matrix, benign.matrix));
}

TEST_CASE("modify with a constant classifier falls back to the first row") {
  MlpClassifier c = zero_classifier(4);
  Rng rng(5);
  PromptEmbedding p = random_prompt(3, 4, rng);

  SanitizeConfig cfg;
  cfg.gamma = 0.5;  // score is exactly 0.5, so the input counts as flagged
  cfg.max_iters = 4;
  SanitizeResult r = modify(c, p, cfg);

  CHECK(r.report.selected_indices == std::vector<std::size_t>{0});
  CHECK(r.report.status == SanitizeStatus::unresolved);
  CHECK(r.report.iterations_used == 4);
  REQUIRE(r.report.per_iteration_scores.size() == 4);
  for (double s : r.report.per_iteration_scores) {
    CHECK(s == 0.5);
  }
}

TEST_CASE("modify drives a flagged prompt below the threshold") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  PromptEmbedding harmful =
      encode(w.world.corpus.harmful.prompts[0], w.world.corpus.table);

  SanitizeConfig cfg = w.cfg.sanitize;
  cfg.max_iters = 500;
  SanitizeResult r = modify(w.c_text, harmful, cfg);

  CHECK(r.report.initial_score >= cfg.gamma);
  CHECK(r.report.status == SanitizeStatus::sanitized);
  CHECK(r.report.final_score < cfg.gamma);
  CHECK(r.report.final_score == r.report.per_iteration_scores.back());
  CHECK(r.report.per_iteration_scores.size() == r.report.iterations_used);
  CHECK(r.report.optimizer == "gd");
  CHECK(r.embedding.provenance == Provenance::modified);
  CHECK(r.embedding.tokens == harmful.tokens);

  // Only the selected rows may move.
  std::vector<bool> selected(harmful.rows(), false);
  for (std::size_t idx : r.report.selected_indices) {
    selected[idx] = true;
  }
  bool any_changed = false;
  for (std::size_t row = 0; row < harmful.rows(); ++row) {
    if (selected[row]) {
      any_changed = any_changed ||
                    !row_bits_equal(r.embedding.matrix, row, harmful.matrix, row);
    } else {
      CHECK(row_bits_equal(r.embedding.matrix, row, harmful.matrix, row));
    }
  }
  CHECK(any_changed);

  // Same inputs, same outputs, bit for bit.
  SanitizeResult again = modify(w.c_text, harmful, cfg);
  CHECK(pstest::bits_equal(again.embedding.matrix, r.embedding.matrix));
}

TEST_CASE("modify can run the updates through AdamW") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  PromptEmbedding harmful =
      encode(w.world.corpus.harmful.prompts[1], w.world.corpus.table);

  SanitizeConfig cfg = w.cfg.sanitize;
  cfg.use_adamw = true;
  cfg.eta = 0.05;
  cfg.max_iters = 500;
  SanitizeResult r = modify(w.c_text, harmful, cfg);

  CHECK(r.report.optimizer == "adamw");
  CHECK(r.report.status == SanitizeStatus::sanitized);
  for (std::size_t row = 0; row < harmful.rows(); ++row) {
    if (std::find(r.report.selected_indices.begin(),
                  r.report.selected_indices.end(),
                  row) == r.report.selected_indices.end()) {
      CHECK(row_bits_equal(r.embedding.matrix, row, harmful.matrix, row));
    }
  }
}

TEST_CASE("sanitize report serializes every field") {
  SanitizeReport rep;
  rep.initial_score = 0.9;
  rep.final_score = 0.3;
  rep.selected_indices = {0, 2};
  rep.iterations_used = 5;
  rep.status = SanitizeStatus::sanitized;
  rep.per_iteration_scores = {0.8, 0.6, 0.55, 0.5, 0.3};
  rep.optimizer = "gd";

  nlohmann::json j = rep.to_json();
  CHECK(j["initial_score"] == 0.9);
  CHECK(j["final_score"] == 0.3);
  CHECK(j["selected_indices"] == nlohmann::json({0, 2}));
  CHECK(j["iterations_used"] == 5);
  CHECK(j["status"] == "sanitized");
  CHECK(j["per_iteration_scores"].size() == 5);
  CHECK(j["optimizer"] == "gd");

  CHECK(std::string(sanitize_status_name(SanitizeStatus::clean_input)) ==
        "clean_input");
  CHECK(std::string(sanitize_status_name(SanitizeStatus::unresolved)) ==
        "unresolved");
}
