#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "classifier.hpp"
#include "errors.hpp"
#include "generator.hpp"
#include "rng.hpp"
#include "textmodel.hpp"

using namespace promptsan;

namespace {

PromptEmbedding random_prompt(std::size_t rows, std::size_t dim, Rng& rng) {
  PromptEmbedding p;
  p.matrix = Mat64(rows, dim);
  for (double& v : p.matrix.data) {
    v = rng.normal(0.0, 0.7);
  }
  p.tokens.assign(rows, 0);
  return p;
}

}  // namespace

TEST_CASE("stub construction is seeded and shaped d -> q -> q") {
  GeneratorStub g = GeneratorStub::random(6, 4, 123);
  CHECK(g.seed == 123);
  CHECK(g.input_dim() == 6);
  CHECK(g.output_dim() == 4);
  REQUIRE(g.net.layer_dims == std::vector<std::size_t>{6, 4, 4});
  for (const Vec64& b : g.net.biases) {
    for (double v : b) {
      CHECK(v == 0.0);
    }
  }

  GeneratorStub again = GeneratorStub::random(6, 4, 123);
  CHECK(g.net.weights[0].data == again.net.weights[0].data);
  GeneratorStub other = GeneratorStub::random(6, 4, 124);
  CHECK(g.net.weights[0].data != other.net.weights[0].data);

  CHECK_THROWS_AS(GeneratorStub::random(0, 4, 1), ConfigError);
  CHECK_THROWS_AS(GeneratorStub::random(6, 0, 1), ConfigError);
}

TEST_CASE("forward matches the underlying net") {
  Rng rng(9);
  GeneratorStub g = GeneratorStub::random(5, 3, 77);
  Vec64 pooled(5);
  for (double& v : pooled) {
    v = rng.normal();
  }
  ImageFeature f = g.forward(pooled);
  Vec64 direct = mlp_forward(g.net, pooled);
  CHECK(f.vector == direct);
  CHECK(generate(g, pooled).vector == direct);

  CHECK_THROWS_AS(g.forward(Vec64(4)), DimensionError);
}

TEST_CASE("input gradient of the stub agrees with finite differences") {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    GeneratorStub g = GeneratorStub::random(5, 4, 1000 + trial);
    Vec64 pooled(5);
    Vec64 upstream(4);
    for (double& v : pooled) {
      v = rng.normal(0.0, 0.8);
    }
    for (double& v : upstream) {
      v = rng.normal();
    }
    Vec64 analytic = g.input_gradient(pooled, upstream);
    auto f = [&](const Vec64& x) {
      Vec64 out = g.forward(x).vector;
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        s += out[i] * upstream[i];
      }
      return s;
    };
    CHECK(grad_check(f, analytic, pooled, 1e-5) < 1e-6);
  }
}

TEST_CASE("inject_step is recorded but optional") {
  GeneratorStub g = GeneratorStub::random(4, 3, 5);
  CHECK_FALSE(g.inject_step().has_value());
  g.injected_step = 17;
  CHECK(g.inject_step().value() == 17);
}

TEST_CASE("backprop_to_prompt spreads the pooled gradient evenly") {
  Rng rng(11);
  GeneratorStub g = GeneratorStub::random(6, 5, 42);
  MlpClassifier c_img = MlpClassifier::random({5, 4, 1}, rng);

  PromptEmbedding p = random_prompt(3, 6, rng);
  PromptChainGrads grads = backprop_to_prompt(g, c_img, p);

  REQUIRE(grads.row_grads.rows == 3);
  REQUIRE(grads.row_grads.cols == 6);
  CHECK(grads.row_grads.row_vec(0) == grads.row_grads.row_vec(1));
  CHECK(grads.row_grads.row_vec(0) == grads.row_grads.row_vec(2));

  Vec64 feat = g.forward(pool(p)).vector;
  CHECK(grads.image_score == doctest::Approx(score(c_img, feat)).epsilon(1e-15));
  CHECK(grads.image_loss ==
        doctest::Approx(bce_loss(grads.image_score, 0)).epsilon(1e-15));
}

TEST_CASE("full chain gradient agrees with finite differences") {
  Rng rng(12);
  GeneratorStub g = GeneratorStub::random(5, 4, 314);
  MlpClassifier c_img = MlpClassifier::random({4, 3, 1}, rng);
  PromptEmbedding p = random_prompt(3, 5, rng);

  PromptChainGrads grads = backprop_to_prompt(g, c_img, p);

  auto chain_loss = [&](const Vec64& flat) {
    PromptEmbedding q = p;
    q.matrix.data = flat;
    double s = score(c_img, g.forward(pool(q)).vector);
    return bce_loss(s, 0);
  };
  CHECK(grad_check(chain_loss, grads.row_grads.data, p.matrix.data, 1e-5) <
        1e-6);
}

TEST_CASE("backprop_to_prompt validates dimensions") {
  Rng rng(13);
  GeneratorStub g = GeneratorStub::random(5, 4, 1);
  MlpClassifier good = MlpClassifier::random({4, 3, 1}, rng);
  MlpClassifier wrong = MlpClassifier::random({6, 3, 1}, rng);
  PromptEmbedding p = random_prompt(2, 5, rng);
  CHECK_THROWS_AS(backprop_to_prompt(g, wrong, p), DimensionError);

  PromptEmbedding bad = random_prompt(2, 4, rng);
  CHECK_THROWS_AS(backprop_to_prompt(g, good, bad), DimensionError);
}
