#include "generator.hpp"

#include <cmath>
#include <string>

#include "errors.hpp"

namespace promptsan {

ImageFeature GeneratorStub::forward(const Vec64& pooled) const {
  return {mlp_forward(net, pooled)};
}

Vec64 GeneratorStub::input_gradient(const Vec64& pooled,
                                    const Vec64& upstream) const {
  return mlp_backward_input(net, pooled, upstream);
}

GeneratorStub GeneratorStub::random(std::size_t d, std::size_t q,
                                    std::uint64_t seed) {
  if (d == 0 || q == 0) {
    throw ConfigError("generator: dims must be positive");
  }
  GeneratorStub g;
  g.seed = seed;
  g.net.layer_dims = {d, q, q};
  Rng rng(seed);
  const double stddev = std::sqrt(1.0 / static_cast<double>(d));
  for (std::size_t i = 0; i + 1 < g.net.layer_dims.size(); ++i) {
    Mat64 w(g.net.layer_dims[i + 1], g.net.layer_dims[i]);
    for (double& v : w.data) {
      v = rng.normal(0.0, stddev);
    }
    g.net.weights.push_back(std::move(w));
    g.net.biases.emplace_back(g.net.layer_dims[i + 1], 0.0);
  }
  g.net.validate();
  return g;
}

ImageFeature generate(const GeneratorContract& g, const Vec64& pooled) {
  if (pooled.size() != g.input_dim()) {
    throw DimensionError("generate: pooled length " +
                         std::to_string(pooled.size()) + " vs generator dim " +
                         std::to_string(g.input_dim()));
  }
  return g.forward(pooled);
}

PromptChainGrads backprop_to_prompt(const GeneratorContract& g,
                                    const MlpClassifier& c_img,
                                    const PromptEmbedding& p) {
  const Vec64 pooled = pool(p);
  const ImageFeature feat = generate(g, pooled);
  ParamGrads cls = bce_backward(c_img, feat.vector, 0);
  const Vec64 pooled_grad = g.input_gradient(pooled, cls.input_grad);

  PromptChainGrads out;
  out.image_score = cls.score_value;
  out.image_loss = cls.loss;
  out.row_grads = Mat64(p.rows(), p.dim());
  const double inv = 1.0 / static_cast<double>(p.rows());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double* row = out.row_grads.row(r);
    for (std::size_t c = 0; c < p.dim(); ++c) {
      row[c] = inv * pooled_grad[c];
    }
  }
  return out;
}

}  // namespace promptsan
