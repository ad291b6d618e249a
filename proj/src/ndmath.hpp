#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace promptsan {

using Vec64 = std::vector<double>;

// Dense row-major matrix of doubles. Persisted matrices quantize to
// binary32 on disk; in-memory arithmetic stays 64-bit.
struct Mat64 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat64() = default;
  Mat64(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  Vec64 row_vec(std::size_t r) const;
  bool same_shape(const Mat64& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

inline constexpr double kSigmoidClamp = 1e-12;

Vec64 affine(const Mat64& w, const Vec64& x, const Vec64& b);
// Gradient of affine w.r.t. its input: W^T * grad_out.
Vec64 affine_backward_input(const Mat64& w, const Vec64& grad_out);

Vec64 relu(const Vec64& x);
Vec64 relu_backward(const Vec64& preact, const Vec64& grad_out);

// Logistic head, clamped into [kSigmoidClamp, 1 - kSigmoidClamp] so the
// log terms of the cross-entropy stay finite.
double sigmoid(double x);
double bce_loss(double score, int target);
// d(bce(sigmoid(z), target))/dz expressed through the clamped score.
double bce_sigmoid_backward(double score, int target);

double frobenius_norm(const Mat64& m);
double linf_norm(const double* v, std::size_t n);
double l2_norm(const double* v, std::size_t n);

// Central finite differences against a supplied analytic gradient.
// Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double grad_check(const std::function<double(const Vec64&)>& f,
                  const Vec64& analytic, Vec64 x, double h);

void ensure_finite(const Vec64& v, const char* what);
void ensure_finite(const Mat64& m, const char* what);

}  // namespace promptsan
