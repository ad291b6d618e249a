#include "classifier.hpp"

#include <cmath>
#include <string>

#include "errors.hpp"

namespace promptsan {

void MlpNet::validate() const {
  if (layer_dims.size() < 2) {
    throw ArchitectureError("net: need at least input and output dims");
  }
  if (weights.size() != layer_dims.size() - 1 ||
      biases.size() != weights.size()) {
    throw ArchitectureError("net: layer count mismatch");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (layer_dims[i] == 0 || layer_dims[i + 1] == 0) {
      throw ArchitectureError("net: zero-width layer");
    }
    if (weights[i].rows != layer_dims[i + 1] ||
        weights[i].cols != layer_dims[i] ||
        biases[i].size() != layer_dims[i + 1]) {
      throw DimensionError("net: layer " + std::to_string(i) +
                           " shape does not match layer_dims");
    }
  }
}

MlpNet MlpNet::random(const std::vector<std::size_t>& dims, Rng& rng) {
  MlpNet net;
  net.layer_dims = dims;
  if (dims.size() < 2) {
    throw ArchitectureError("net: need at least input and output dims");
  }
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    const double stddev = std::sqrt((last ? 1.0 : 2.0) /
                                    static_cast<double>(dims[i]));
    Mat64 w(dims[i + 1], dims[i]);
    for (double& v : w.data) {
      v = rng.normal(0.0, stddev);
    }
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(dims[i + 1], 0.0);
  }
  net.validate();
  return net;
}

Vec64 mlp_forward(const MlpNet& net, const Vec64& x, ForwardTrace* trace) {
  if (x.size() != net.input_dim()) {
    throw DimensionError("forward: input length " + std::to_string(x.size()) +
                         " vs net input dim " +
                         std::to_string(net.input_dim()));
  }
  Vec64 a = x;
  if (trace) {
    trace->acts.clear();
    trace->preacts.clear();
    trace->acts.push_back(a);
  }
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    Vec64 z = affine(net.weights[i], a, net.biases[i]);
    if (trace) {
      trace->preacts.push_back(z);
    }
    a = i + 1 < net.layer_count() ? relu(z) : std::move(z);
    if (trace && i + 1 < net.layer_count()) {
      trace->acts.push_back(a);
    }
  }
  return a;
}

Vec64 mlp_backward_input(const MlpNet& net, const Vec64& x,
                         const Vec64& upstream) {
  ForwardTrace tr;
  mlp_forward(net, x, &tr);
  if (upstream.size() != net.output_dim()) {
    throw DimensionError("backward: upstream length mismatch");
  }
  Vec64 delta = upstream;
  for (std::size_t i = net.layer_count(); i-- > 0;) {
    Vec64 da = affine_backward_input(net.weights[i], delta);
    delta = i > 0 ? relu_backward(tr.preacts[i - 1], da) : std::move(da);
  }
  return delta;
}

void MlpClassifier::validate() const {
  net.validate();
  if (net.output_dim() != 1) {
    throw ArchitectureError("classifier: output dim must be 1, got " +
                            std::to_string(net.output_dim()));
  }
}

MlpClassifier MlpClassifier::random(const std::vector<std::size_t>& dims,
                                    Rng& rng) {
  MlpClassifier c{MlpNet::random(dims, rng)};
  c.validate();
  return c;
}

namespace {

void require_single_output(const MlpClassifier& c, const char* where) {
  if (c.net.output_dim() != 1) {
    throw ArchitectureError(std::string(where) +
                            ": classifier output dim must be 1, got " +
                            std::to_string(c.net.output_dim()));
  }
}

}  // namespace

double score(const MlpClassifier& c, const Vec64& x) {
  require_single_output(c, "score");
  return sigmoid(mlp_forward(c.net, x)[0]);
}

ParamGrads bce_backward(const MlpClassifier& c, const Vec64& x, int target) {
  require_single_output(c, "bce_backward");
  if (target != 0 && target != 1) {
    throw ConfigError("bce_backward: target must be 0 or 1");
  }
  ForwardTrace tr;
  Vec64 out = mlp_forward(c.net, x, &tr);
  ParamGrads g;
  g.score_value = sigmoid(out[0]);
  g.loss = bce_loss(g.score_value, target);

  const std::size_t layers = c.net.layer_count();
  g.weight_grads.resize(layers);
  g.bias_grads.resize(layers);
  Vec64 delta{bce_sigmoid_backward(g.score_value, target)};
  for (std::size_t i = layers; i-- > 0;) {
    const Vec64& a_in = tr.acts[i];
    Mat64 dw(delta.size(), a_in.size());
    for (std::size_t r = 0; r < delta.size(); ++r) {
      double* dwr = dw.row(r);
      for (std::size_t cidx = 0; cidx < a_in.size(); ++cidx) {
        dwr[cidx] = delta[r] * a_in[cidx];
      }
    }
    g.weight_grads[i] = std::move(dw);
    g.bias_grads[i] = delta;
    Vec64 da = affine_backward_input(c.net.weights[i], delta);
    delta = i > 0 ? relu_backward(tr.preacts[i - 1], da) : std::move(da);
  }
  g.input_grad = std::move(delta);
  return g;
}

Vec64 input_gradient(const MlpClassifier& c, const Vec64& x, int target) {
  return bce_backward(c, x, target).input_grad;
}

Vec64 penultimate_features(const MlpClassifier& c, const Vec64& x) {
  if (c.net.layer_count() < 2) {
    throw ArchitectureError("penultimate_features: classifier has no hidden layer");
  }
  ForwardTrace tr;
  mlp_forward(c.net, x, &tr);
  return tr.acts.back();
}

AdamW::AdamW(std::size_t n, Params p) : p_(p), m_(n, 0.0), v_(n, 0.0) {
  if (!(p.lr >= 0.0) || !(p.beta1 >= 0.0 && p.beta1 < 1.0) ||
      !(p.beta2 >= 0.0 && p.beta2 < 1.0) || !(p.eps > 0.0) ||
      !(p.weight_decay >= 0.0)) {
    throw ConfigError("adamw: invalid hyperparameters");
  }
}

void AdamW::step(double* params, const double* grads, std::size_t n) {
  if (n != m_.size()) {
    throw DimensionError("adamw: state holds " + std::to_string(m_.size()) +
                         " params, got " + std::to_string(n));
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    m_[i] = p_.beta1 * m_[i] + (1.0 - p_.beta1) * g;
    v_[i] = p_.beta2 * v_[i] + (1.0 - p_.beta2) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= p_.lr * (mhat / (std::sqrt(vhat) + p_.eps) +
                          p_.weight_decay * params[i]);
  }
}

std::size_t param_count(const MlpNet& net) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    n += net.weights[i].data.size() + net.biases[i].size();
  }
  return n;
}

void flatten_params(const MlpNet& net, double* out) {
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    out = std::copy(net.weights[i].data.begin(), net.weights[i].data.end(),
                    out);
    out = std::copy(net.biases[i].begin(), net.biases[i].end(), out);
  }
}

void unflatten_params(MlpNet& net, const double* in) {
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    std::copy(in, in + net.weights[i].data.size(),
              net.weights[i].data.begin());
    in += net.weights[i].data.size();
    std::copy(in, in + net.biases[i].size(), net.biases[i].begin());
    in += net.biases[i].size();
  }
}

namespace {

double mean_loss(const MlpClassifier& c, const TrainBatch& batch) {
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.features.size(); ++i) {
    acc += bce_loss(score(c, batch.features[i]), batch.labels[i]);
  }
  return acc / static_cast<double>(batch.features.size());
}

}  // namespace

TrainResult train_classifier(MlpClassifier init, const TrainBatch& batch,
                             std::size_t epochs, AdamW::Params opt) {
  init.validate();
  if (batch.features.empty() || batch.features.size() != batch.labels.size()) {
    throw ConfigError("train: empty batch or label count mismatch");
  }
  for (const Vec64& f : batch.features) {
    if (f.size() != init.input_dim()) {
      throw DimensionError("train: feature length mismatch");
    }
  }

  TrainResult result{std::move(init), {}};
  result.loss_curve.push_back(mean_loss(result.model, batch));

  const std::size_t n = param_count(result.model.net);
  std::vector<double> params(n);
  std::vector<double> grads(n);
  AdamW adamw(n, opt);
  const double inv_count = 1.0 / static_cast<double>(batch.features.size());

  MlpNet grad_net = result.model.net;  // reused as a gradient accumulator
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (Mat64& w : grad_net.weights) {
      std::fill(w.data.begin(), w.data.end(), 0.0);
    }
    for (Vec64& b : grad_net.biases) {
      std::fill(b.begin(), b.end(), 0.0);
    }
    for (std::size_t s = 0; s < batch.features.size(); ++s) {
      ParamGrads g =
          bce_backward(result.model, batch.features[s], batch.labels[s]);
      for (std::size_t l = 0; l < grad_net.layer_count(); ++l) {
        for (std::size_t k = 0; k < g.weight_grads[l].data.size(); ++k) {
          grad_net.weights[l].data[k] += inv_count * g.weight_grads[l].data[k];
        }
        for (std::size_t k = 0; k < g.bias_grads[l].size(); ++k) {
          grad_net.biases[l][k] += inv_count * g.bias_grads[l][k];
        }
      }
    }
    flatten_params(result.model.net, params.data());
    flatten_params(grad_net, grads.data());
    adamw.step(params.data(), grads.data(), n);
    unflatten_params(result.model.net, params.data());
    result.loss_curve.push_back(mean_loss(result.model, batch));
  }
  return result;
}

double accuracy(const MlpClassifier& c, const TrainBatch& batch) {
  if (batch.features.empty()) {
    throw ConfigError("accuracy: empty batch");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < batch.features.size(); ++i) {
    const int predicted = score(c, batch.features[i]) >= 0.5 ? 1 : 0;
    hits += predicted == batch.labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(batch.features.size());
}

}  // namespace promptsan
