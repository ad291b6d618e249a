#pragma once

#include <cstdint>
#include <optional>

#include "classifier.hpp"
#include "ndmath.hpp"
#include "textmodel.hpp"

namespace promptsan {

struct ImageFeature {
  Vec64 vector;
};

// Interface a real image generator would implement: a differentiable
// map from the pooled prompt vector to a feature vector. The toy stub
// below is the only implementation shipped here.
struct GeneratorContract {
  virtual ~GeneratorContract() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual ImageFeature forward(const Vec64& pooled) const = 0;
  // Chain rule through the map: gradient w.r.t. pooled for a gradient
  // arriving at the feature vector.
  virtual Vec64 input_gradient(const Vec64& pooled,
                               const Vec64& upstream) const = 0;
  // Diffusion-style hook for choosing an intermediate step; the stub
  // has no steps, so this is recorded but has no effect.
  virtual std::optional<std::size_t> inject_step() const { return std::nullopt; }
};

// Fixed random MLP standing in for an image generator. Weights are
// drawn once from N(0, 1/input_dim) with a recorded seed; biases are
// zero; the output layer is linear.
struct GeneratorStub final : GeneratorContract {
  MlpNet net;
  std::uint64_t seed = 0;
  std::optional<std::size_t> injected_step;

  std::size_t input_dim() const override { return net.input_dim(); }
  std::size_t output_dim() const override { return net.output_dim(); }
  ImageFeature forward(const Vec64& pooled) const override;
  Vec64 input_gradient(const Vec64& pooled,
                       const Vec64& upstream) const override;
  std::optional<std::size_t> inject_step() const override {
    return injected_step;
  }

  static GeneratorStub random(std::size_t d, std::size_t q,
                              std::uint64_t seed);
};

ImageFeature generate(const GeneratorContract& g, const Vec64& pooled);

struct PromptChainGrads {
  Mat64 row_grads;  // gradient of the image loss w.r.t. each prompt row
  double image_score = 0.0;
  double image_loss = 0.0;
};

// Full chain pool -> generator -> image classifier -> bce against the
// benign target. With mean pooling every row receives the same
// gradient, (1/rows) of the pooled gradient.
PromptChainGrads backprop_to_prompt(const GeneratorContract& g,
                                    const MlpClassifier& c_img,
                                    const PromptEmbedding& p);

}  // namespace promptsan
