#pragma once

#include <cstdint>
#include <vector>

#include "ndmath.hpp"
#include "rng.hpp"

namespace promptsan {

// Plain fully connected net: ReLU after every layer except the last,
// which is left linear. Weight i maps dims[i] -> dims[i+1].
struct MlpNet {
  std::vector<std::size_t> layer_dims;
  std::vector<Mat64> weights;
  std::vector<Vec64> biases;

  std::size_t layer_count() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  void validate() const;

  // He-style init for hidden layers, Xavier-style for the last one.
  static MlpNet random(const std::vector<std::size_t>& dims, Rng& rng);
};

struct ForwardTrace {
  std::vector<Vec64> acts;     // acts[0] = input, acts[i+1] = input of layer i+1
  std::vector<Vec64> preacts;  // preacts[i] = W_i * acts[i] + b_i
};

Vec64 mlp_forward(const MlpNet& net, const Vec64& x,
                  ForwardTrace* trace = nullptr);
// Backward through the whole net for a gradient arriving at the output.
Vec64 mlp_backward_input(const MlpNet& net, const Vec64& x,
                         const Vec64& upstream);

// Binary classifier: MlpNet with output dim 1 plus a sigmoid head.
struct MlpClassifier {
  MlpNet net;

  std::size_t input_dim() const { return net.input_dim(); }
  void validate() const;

  static MlpClassifier random(const std::vector<std::size_t>& dims, Rng& rng);
};

double score(const MlpClassifier& c, const Vec64& x);

struct ParamGrads {
  std::vector<Mat64> weight_grads;
  std::vector<Vec64> bias_grads;
  Vec64 input_grad;
  double loss = 0.0;
  double score_value = 0.0;
};

// Loss is bce(score(c, x), target); fills gradients w.r.t. every
// parameter and the input in one reverse pass.
ParamGrads bce_backward(const MlpClassifier& c, const Vec64& x, int target);

Vec64 input_gradient(const MlpClassifier& c, const Vec64& x, int target);

// Activations entering the final layer. Requires at least one hidden
// layer.
Vec64 penultimate_features(const MlpClassifier& c, const Vec64& x);

struct TrainBatch {
  std::vector<Vec64> features;
  std::vector<int> labels;
};

// Decoupled weight decay; moments are bias-corrected.
class AdamW {
 public:
  struct Params {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::size_t n, Params p);

  void step(double* params, const double* grads, std::size_t n);
  std::size_t size() const { return m_.size(); }

 private:
  Params p_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

std::size_t param_count(const MlpNet& net);
void flatten_params(const MlpNet& net, double* out);
void unflatten_params(MlpNet& net, const double* in);

struct TrainResult {
  MlpClassifier model;
  // loss_curve[0] is the pre-training mean loss, then one entry per epoch.
  std::vector<double> loss_curve;
};

TrainResult train_classifier(MlpClassifier init, const TrainBatch& batch,
                             std::size_t epochs, AdamW::Params opt);

double accuracy(const MlpClassifier& c, const TrainBatch& batch);

}  // namespace promptsan
