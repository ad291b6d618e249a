#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "evalkit.hpp"
#include "rng.hpp"
#include "suffix.hpp"
#include "test_helpers.hpp"
#include "textmodel.hpp"

using namespace promptsan;
using pstest::bits_equal;
using pstest::row_bits_equal;

namespace {

std::vector<const PromptEmbedding*> as_batch(
    const std::vector<PromptEmbedding>& prompts) {
  std::vector<const PromptEmbedding*> out;
  out.reserve(prompts.size());
  for (const PromptEmbedding& p : prompts) {
    out.push_back(&p);
  }
  return out;
}

double mean_text_score(const MlpClassifier& c,
                       const std::vector<PromptEmbedding>& prompts,
                       const SafetySuffix& s) {
  double acc = 0.0;
  for (const PromptEmbedding& p : prompts) {
    acc += score(c, pool(concat_suffix(p, s)));
  }
  return acc / static_cast<double>(prompts.size());
}

std::vector<std::size_t> top_k_oracle(const Vec64& norms, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    ranked.emplace_back(norms[i], i);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) {
      return a.first > b.first;
    }
    return a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back(ranked[i].second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("suffix config validation and serialization") {
  SuffixConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  SuffixConfig bad = cfg;
  bad.m = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.k = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.k = bad.m + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.gamma_text = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.gamma_image = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.sigma = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.rounds = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.text_lr = -1e-3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.category = "";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  SuffixConfig full;
  full.m = 9;
  full.k = 4;
  full.gamma_text = 0.4;
  full.gamma_image = 0.3;
  full.sigma = 0.05;
  full.rounds = 7;
  full.text_steps = 33;
  full.text_lr = 0.002;
  full.batch_size = 5;
  full.placement = Placement::prefix;
  full.category = "violence";
  SuffixConfig back = SuffixConfig::from_json(full.to_json());
  CHECK(back.m == 9);
  CHECK(back.k == 4);
  CHECK(back.gamma_text == 0.4);
  CHECK(back.gamma_image == 0.3);
  CHECK(back.sigma == 0.05);
  CHECK(back.rounds == 7);
  CHECK(back.text_steps == 33);
  CHECK(back.text_lr == 0.002);
  CHECK(back.batch_size == 5);
  CHECK(back.placement == Placement::prefix);
  CHECK(back.category == "violence");

  CHECK(std::string(placement_name(Placement::suffix)) == "suffix");
  CHECK(std::string(placement_name(Placement::prefix)) == "prefix");
  CHECK(placement_from_string("suffix") == Placement::suffix);
  CHECK_THROWS_AS(placement_from_string("sideways"), ConfigError);

  CHECK_THROWS_AS(SafetySuffix::zeros(0, 4), ConfigError);
  CHECK_THROWS_AS(SafetySuffix::zeros(4, 0), ConfigError);
}

TEST_CASE("init_suffix draws seeded gaussian rows") {
  SuffixConfig cfg;
  cfg.m = 50;
  cfg.k = 10;
  cfg.sigma = 0.02;
  cfg.category = "violence";

  SafetySuffix s = init_suffix(cfg, 40, Rng(9));
  CHECK(s.m == 50);
  CHECK(s.dim == 40);
  CHECK(s.category == "violence");
  CHECK(s.trained_rounds == 0);
  REQUIRE(s.matrix.data.size() == 2000);

  double mean = 0.0;
  for (double v : s.matrix.data) {
    mean += v;
  }
  mean /= 2000.0;
  double var = 0.0;
  for (double v : s.matrix.data) {
    var += (v - mean) * (v - mean);
  }
  var /= 2000.0;
  CHECK(std::fabs(mean) < 0.005);
  CHECK(std::sqrt(var) == doctest::Approx(0.02).epsilon(0.1));

  SafetySuffix same = init_suffix(cfg, 40, Rng(9));
  CHECK(bits_equal(same.matrix, s.matrix));
  SafetySuffix other = init_suffix(cfg, 40, Rng(10));
  CHECK_FALSE(bits_equal(other.matrix, s.matrix));

  cfg.sigma = 0.0;
  SafetySuffix flat = init_suffix(cfg, 8, Rng(1));
  for (double v : flat.matrix.data) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("select_top_k pinned ties and oracle agreement") {
  CHECK(select_top_k({5, 3, 5, 1}, 2) == std::vector<std::size_t>{0, 2});
  CHECK(select_top_k({1, 1, 1}, 2) == std::vector<std::size_t>{0, 1});
  CHECK(select_top_k({0.5}, 1) == std::vector<std::size_t>{0});

  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.bounded(10);
    Vec64 norms(n);
    for (double& v : norms) {
      v = 0.25 * static_cast<double>(rng.bounded(9));
    }
    const std::size_t k = 1 + rng.bounded(n);
    CHECK(select_top_k(norms, k) == top_k_oracle(norms, k));
  }

  CHECK_THROWS_AS(select_top_k({1, 2}, 0), ConfigError);
  CHECK_THROWS_AS(select_top_k({1, 2}, 3), ConfigError);
}

TEST_CASE("suffix_image_grads averages the chain gradient over the batch") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  const EmbeddingTable& table = w.world.corpus.table;

  std::vector<PromptEmbedding> prompts;
  for (int i = 0; i < 3; ++i) {
    prompts.push_back(encode(w.world.corpus.harmful.prompts[i], table));
  }
  SuffixConfig cfg = w.cfg.suffix;
  SafetySuffix s = init_suffix(cfg, table.dim, Rng(4));

  std::vector<const PromptEmbedding*> batch = as_batch(prompts);
  SuffixGrads g =
      suffix_image_grads(w.world.generator, w.c_img, batch, s,
                         Placement::suffix);
  REQUIRE(g.mean_grads.rows == cfg.m);
  REQUIRE(g.mean_grads.cols == table.dim);
  REQUIRE(g.row_norms.size() == cfg.m);

  // Mean pooling hands every suffix row the same gradient.
  for (std::size_t r = 1; r < cfg.m; ++r) {
    CHECK(row_bits_equal(g.mean_grads, 0, g.mean_grads, r));
  }

  for (std::size_t r = 0; r < cfg.m; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < table.dim; ++c) {
      sq += g.mean_grads.at(r, c) * g.mean_grads.at(r, c);
    }
    CHECK(g.row_norms[r] == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
  }

  // Batch mean equals the mean of per-prompt gradients.
  Mat64 acc(cfg.m, table.dim);
  for (const PromptEmbedding& p : prompts) {
    std::vector<const PromptEmbedding*> one = {&p};
    SuffixGrads gi =
        suffix_image_grads(w.world.generator, w.c_img, one, s,
                           Placement::suffix);
    for (std::size_t i = 0; i < acc.data.size(); ++i) {
      acc.data[i] += gi.mean_grads.data[i] / 3.0;
    }
  }
  for (std::size_t i = 0; i < acc.data.size(); ++i) {
    CHECK(g.mean_grads.data[i] ==
          doctest::Approx(acc.data[i]).epsilon(1e-12));
  }

  // The pooled vector ignores row order, so placing the block in front
  // changes nothing beyond rounding.
  SuffixGrads gp =
      suffix_image_grads(w.world.generator, w.c_img, batch, s,
                         Placement::prefix);
  for (std::size_t i = 0; i < gp.mean_grads.data.size(); ++i) {
    CHECK(gp.mean_grads.data[i] ==
          doctest::Approx(g.mean_grads.data[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(
      suffix_image_grads(w.world.generator, w.c_img, {}, s, Placement::suffix),
      ConfigError);
}

TEST_CASE("refine_text updates only the selected rows") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  const EmbeddingTable& table = w.world.corpus.table;

  std::vector<PromptEmbedding> prompts;
  for (int i = 0; i < 4; ++i) {
    prompts.push_back(encode(w.world.corpus.harmful.prompts[i], table));
  }
  SuffixConfig cfg = w.cfg.suffix;
  SafetySuffix init = init_suffix(cfg, table.dim, Rng(4));

  const std::vector<std::size_t> rows = {0, 2};
  SafetySuffix refined = refine_text(w.c_text, as_batch(prompts), init, rows,
                                     200, 5e-3, Placement::suffix);
  REQUIRE(refined.m == init.m);
  for (std::size_t r = 0; r < init.m; ++r) {
    const bool selected = std::find(rows.begin(), rows.end(), r) != rows.end();
    CHECK(row_bits_equal(refined.matrix, r, init.matrix, r) == !selected);
  }

  CHECK(mean_text_score(w.c_text, prompts, refined) <
        mean_text_score(w.c_text, prompts, init));

  SafetySuffix again = refine_text(w.c_text, as_batch(prompts), init, rows,
                                   200, 5e-3, Placement::suffix);
  CHECK(bits_equal(again.matrix, refined.matrix));

  CHECK_THROWS_AS(refine_text(w.c_text, {}, init, rows, 5, 1e-3,
                              Placement::suffix),
                  ConfigError);
  CHECK_THROWS_AS(refine_text(w.c_text, as_batch(prompts), init, {}, 5, 1e-3,
                              Placement::suffix),
                  ConfigError);
  CHECK_THROWS_AS(refine_text(w.c_text, as_batch(prompts), init, {init.m}, 5,
                              1e-3, Placement::suffix),
                  ConfigError);
}

TEST_CASE("train_suffix converges and leaves unselected rows at init") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  SuffixConfig cfg = w.cfg.suffix;
  cfg.rounds = 60;

  SuffixTrainResult r =
      train_suffix(w.world.generator, w.c_text, w.c_img,
                   w.world.corpus.harmful, w.world.corpus.table, cfg,
                   w.cfg.seed);
  CHECK(r.converged);
  REQUIRE(!r.trace.empty());
  CHECK(r.trace.front().round == 0);
  CHECK(r.trace.front().selected_indices.empty());
  CHECK(r.trace.back().mean_text_score < cfg.gamma_text);
  CHECK(r.trace.back().mean_image_score < cfg.gamma_image);
  CHECK(r.trace.back().mean_image_score < r.trace.front().mean_image_score);
  CHECK(r.suffix.trained_rounds == r.trace.size() - 1);
  CHECK(r.suffix.trained_rounds <= cfg.rounds);
  CHECK(r.suffix.category == cfg.category);

  // Uniform row gradients mean the tie break always keeps the lowest k
  // indices, so the remaining rows must still hold their init values.
  std::vector<std::size_t> expected(cfg.k);
  std::iota(expected.begin(), expected.end(), 0);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    CHECK(r.trace[i].round == i);
    CHECK(r.trace[i].selected_indices == expected);
  }
  SafetySuffix init =
      init_suffix(cfg, w.world.corpus.table.dim,
                  Rng(w.cfg.seed).substream("suffix-init"));
  for (std::size_t row = cfg.k; row < cfg.m; ++row) {
    CHECK(row_bits_equal(r.suffix.matrix, row, init.matrix, row));
  }
  for (std::size_t row = 0; row < cfg.k; ++row) {
    CHECK_FALSE(row_bits_equal(r.suffix.matrix, row, init.matrix, row));
  }

  SuffixTrainResult again =
      train_suffix(w.world.generator, w.c_text, w.c_img,
                   w.world.corpus.harmful, w.world.corpus.table, cfg,
                   w.cfg.seed);
  CHECK(bits_equal(again.suffix.matrix, r.suffix.matrix));
  REQUIRE(again.trace.size() == r.trace.size());
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    CHECK(again.trace[i].mean_image_score == r.trace[i].mean_image_score);
    CHECK(again.trace[i].mean_text_score == r.trace[i].mean_text_score);
  }
}

TEST_CASE("train_suffix scores tiny corpora on the training split") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  MaliciousCorpus three;
  three.prompts = {w.world.corpus.harmful.prompts[0],
                   w.world.corpus.harmful.prompts[1],
                   w.world.corpus.harmful.prompts[2]};

  SuffixConfig cfg = w.cfg.suffix;
  cfg.rounds = 2;
  SuffixTrainResult r =
      train_suffix(w.world.generator, w.c_text, w.c_img, three,
                   w.world.corpus.table, cfg, 11);

  // With fewer than five prompts the held-out split falls back to the
  // whole corpus, so round 0 must average over all three prompts.
  SafetySuffix init = init_suffix(cfg, w.world.corpus.table.dim,
                                  Rng(11).substream("suffix-init"));
  double expected = 0.0;
  for (const auto& ids : three.prompts) {
    expected +=
        score(w.c_text, pool(concat_suffix(encode(ids, w.world.corpus.table),
                                           init)));
  }
  expected /= 3.0;
  CHECK(r.trace.front().mean_text_score ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("train_suffix validates corpus and dimensions") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  SuffixConfig cfg = w.cfg.suffix;

  MaliciousCorpus empty;
  CHECK_THROWS_AS(train_suffix(w.world.generator, w.c_text, w.c_img, empty,
                               w.world.corpus.table, cfg, 1),
                  ConfigError);

  Rng rng(2);
  MlpClassifier wrong_text = MlpClassifier::random({7, 4, 1}, rng);
  CHECK_THROWS_AS(train_suffix(w.world.generator, wrong_text, w.c_img,
                               w.world.corpus.harmful, w.world.corpus.table,
                               cfg, 1),
                  DimensionError);

  GeneratorStub wrong_gen = GeneratorStub::random(7, 8, 3);
  CHECK_THROWS_AS(train_suffix(wrong_gen, w.c_text, w.c_img,
                               w.world.corpus.harmful, w.world.corpus.table,
                               cfg, 1),
                  DimensionError);

  MlpClassifier wrong_img = MlpClassifier::random({3, 4, 1}, rng);
  CHECK_THROWS_AS(train_suffix(w.world.generator, w.c_text, wrong_img,
                               w.world.corpus.harmful, w.world.corpus.table,
                               cfg, 1),
                  DimensionError);
}

TEST_CASE("apply_suffix attaches the block only above the threshold") {
  pstest::TinyWorld w = pstest::make_tiny_world();
  const EmbeddingTable& table = w.world.corpus.table;
  SafetySuffix s = init_suffix(w.cfg.suffix, table.dim, Rng(4));

  PromptEmbedding benign = encode(w.world.corpus.benign.prompts[0], table);
  ApplyResult clean = apply_suffix(w.c_text, benign, s, 0.5);
  CHECK_FALSE(clean.applied);
  CHECK(clean.score_after == clean.score_before);
  CHECK(bits_equal(clean.embedding.matrix, benign.matrix));
  CHECK(clean.embedding.rows() == benign.rows());

  PromptEmbedding harmful = encode(w.world.corpus.harmful.prompts[0], table);
  ApplyResult hit = apply_suffix(w.c_text, harmful, s, 0.5);
  CHECK(hit.applied);
  CHECK(hit.score_before >= 0.5);
  CHECK(hit.embedding.rows() == harmful.rows() + s.m);
  CHECK(hit.embedding.provenance == Provenance::suffixed);
  CHECK(hit.embedding.tokens == harmful.tokens);
  for (std::size_t r = 0; r < harmful.rows(); ++r) {
    CHECK(row_bits_equal(hit.embedding.matrix, r, harmful.matrix, r));
  }
  for (std::size_t r = 0; r < s.m; ++r) {
    CHECK(row_bits_equal(hit.embedding.matrix, harmful.rows() + r, s.matrix,
                         r));
  }
  CHECK(hit.score_after == score(w.c_text, pool(hit.embedding)));
}
