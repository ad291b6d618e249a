#include "ndmath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "errors.hpp"

namespace promptsan {

Vec64 Mat64::row_vec(std::size_t r) const {
  return Vec64(row(r), row(r) + cols);
}

Vec64 affine(const Mat64& w, const Vec64& x, const Vec64& b) {
  if (w.cols != x.size()) {
    throw DimensionError("affine: weight cols " + std::to_string(w.cols) +
                         " vs input length " + std::to_string(x.size()));
  }
  if (w.rows != b.size()) {
    throw DimensionError("affine: weight rows " + std::to_string(w.rows) +
                         " vs bias length " + std::to_string(b.size()));
  }
  Vec64 out(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.row(r);
    double acc = b[r];
    for (std::size_t c = 0; c < w.cols; ++c) {
      acc += wr[c] * x[c];
    }
    out[r] = acc;
  }
  return out;
}

Vec64 affine_backward_input(const Mat64& w, const Vec64& grad_out) {
  if (w.rows != grad_out.size()) {
    throw DimensionError("affine_backward_input: weight rows " +
                         std::to_string(w.rows) + " vs grad length " +
                         std::to_string(grad_out.size()));
  }
  Vec64 gx(w.cols, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.row(r);
    const double g = grad_out[r];
    for (std::size_t c = 0; c < w.cols; ++c) {
      gx[c] += wr[c] * g;
    }
  }
  return gx;
}

Vec64 relu(const Vec64& x) {
  Vec64 out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  return out;
}

Vec64 relu_backward(const Vec64& preact, const Vec64& grad_out) {
  if (preact.size() != grad_out.size()) {
    throw DimensionError("relu_backward: size mismatch");
  }
  Vec64 gx(preact.size());
  for (std::size_t i = 0; i < preact.size(); ++i) {
    gx[i] = preact[i] > 0.0 ? grad_out[i] : 0.0;
  }
  return gx;
}

double sigmoid(double x) {
  double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(s, kSigmoidClamp, 1.0 - kSigmoidClamp);
}

double bce_loss(double score, int target) {
  if (target != 0 && target != 1) {
    throw ConfigError("bce_loss: target must be 0 or 1");
  }
  if (!(score >= 0.0 && score <= 1.0)) {
    throw ConfigError("bce_loss: score outside [0, 1]");
  }
  double s = std::clamp(score, kSigmoidClamp, 1.0 - kSigmoidClamp);
  return target == 1 ? -std::log(s) : -std::log(1.0 - s);
}

double bce_sigmoid_backward(double score, int target) {
  return score - static_cast<double>(target);
}

double frobenius_norm(const Mat64& m) {
  double acc = 0.0;
  for (double v : m.data) {
    acc += v * v;
  }
  return std::sqrt(acc);
}

double linf_norm(const double* v, std::size_t n) {
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    best = std::max(best, std::fabs(v[i]));
  }
  return best;
}

double l2_norm(const double* v, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += v[i] * v[i];
  }
  return std::sqrt(acc);
}

double grad_check(const std::function<double(const Vec64&)>& f,
                  const Vec64& analytic, Vec64 x, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw ConfigError("grad_check: step size outside [1e-7, 1e-3]");
  }
  if (analytic.size() != x.size()) {
    throw DimensionError("grad_check: gradient length " +
                         std::to_string(analytic.size()) + " vs point length " +
                         std::to_string(x.size()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err =
        std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

void ensure_finite(const Vec64& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw DataError(std::string(what) + ": non-finite value");
    }
  }
}

void ensure_finite(const Mat64& m, const char* what) {
  for (double x : m.data) {
    if (!std::isfinite(x)) {
      throw DataError(std::string(what) + ": non-finite value");
    }
  }
}

}  // namespace promptsan
