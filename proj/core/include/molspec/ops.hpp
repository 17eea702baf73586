#pragma once

#include <cstddef>
#include <vector>

#include "molspec/tensor.hpp"

namespace molspec::numerics {

// Differentiable primitives. Broadcasting is limited to the cases the model
// needs (row-vector add, per-row scale); anything else is an explicit reshape
// so that each backward rule stays auditable.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// a: n x m, v: length-m vector added to every row.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
// a: n x m, w: n x 1; out[r,c] = a[r,c] * w[r].
Tensor mul_colvec(const Tensor& a, const Tensor& w);
// a: n x m, s: plain per-row constants.
Tensor scale_rows(const Tensor& a, const std::vector<double>& s);

// Row-stochastic softmax with max-subtraction; rejects non-finite input.
Tensor softmax_row(const Tensor& a);
Tensor log_softmax_row(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor log_elem(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t first, std::size_t count);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
// a: e x m with row targets idx (values < n_out); out[idx[i]] += a[i].
Tensor scatter_add_rows(const Tensor& a, const std::vector<std::size_t>& idx,
                        std::size_t n_out);

enum class BatchNormMode {
  kTrain,          // batch statistics; running stats updated
  kTrainNoUpdate,  // batch statistics; running stats untouched (grad checks)
  kEval,           // running statistics only
};

// Per-feature running statistics; part of the persisted model state.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t features = 0)
      : running_mean(features, 0.0), running_var(features, 1.0) {}
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

// x: batch x features. Normalizes each feature column, then applies the
// affine gamma/beta. Train modes use (biased) batch statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, BatchNormMode mode,
                 double momentum = kBatchNormMomentum,
                 double eps = kBatchNormEps);

}  // namespace molspec::numerics
