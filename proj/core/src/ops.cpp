#include "molspec/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace molspec::numerics {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr new_node(std::vector<std::size_t> shape, std::size_t n,
                 bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data.assign(n, 0.0);
  node->requires_grad = requires_grad;
  return node;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void check_2d(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor");
  }
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// C (n x m) += A (n x k) * B (k x m), ikj order for cache locality.
void matmul_acc(const double* a, const double* b, double* c, std::size_t n,
                std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (n x m) += A^T where A is (k x n), times B (k x m).
void matmul_at_b_acc(const double* a, const double* b, double* c, std::size_t k,
                     std::size_t n, std::size_t m) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * n;
    const double* brow = b + kk * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (n x k) += A (n x m) * B^T where B is (k x m).
void matmul_a_bt_acc(const double* a, const double* b, double* c, std::size_t n,
                     std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * m;
    double* crow = c + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double* brow = b + j * m;
      double acc = 0.0;
      for (std::size_t t = 0; t < m; ++t) acc += arow[t] * brow[t];
      crow[j] += acc;
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto an = a.node(), bn = b.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad || bn->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    out->data[i] = an->data[i] + bn->data[i];
  }
  if (out->requires_grad) {
    out->parents = {an, bn};
    auto on = out;
    out->backprop = [an, bn, on]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto an = a.node(), bn = b.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad || bn->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    out->data[i] = an->data[i] - bn->data[i];
  }
  if (out->requires_grad) {
    out->parents = {an, bn};
    auto on = out;
    out->backprop = [an, bn, on]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto an = a.node(), bn = b.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad || bn->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    out->data[i] = an->data[i] * bn->data[i];
  }
  if (out->requires_grad) {
    out->parents = {an, bn};
    auto on = out;
    out->backprop = [an, bn, on]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) {
          an->grad[i] += on->grad[i] * bn->data[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) {
          bn->grad[i] += on->grad[i] * an->data[i];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
  auto an = a.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = c * an->data[i];
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, c]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
    };
  }
  return Tensor(out);
}

Tensor add_scalar(const Tensor& a, double c) {
  auto an = a.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = an->data[i] + c;
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    };
  }
  return Tensor(out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dimensions differ");
  auto an = a.node(), bn = b.node();
  auto out = new_node({n, m}, n * m, an->requires_grad || bn->requires_grad);
  matmul_acc(an->data.data(), bn->data.data(), out->data.data(), n, k, m);
  if (out->requires_grad) {
    out->parents = {an, bn};
    auto on = out;
    out->backprop = [an, bn, on, n, k, m]() {
      if (an->requires_grad) {
        an->ensure_grad();  // dA += dC * B^T
        matmul_a_bt_acc(on->grad.data(), bn->data.data(), an->grad.data(), n, m, k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();  // dB += A^T * dC
        matmul_at_b_acc(an->data.data(), on->grad.data(), bn->grad.data(), n, k, m);
      }
    };
  }
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  check_2d(a, "transpose");
  const std::size_t n = a.rows(), m = a.cols();
  auto an = a.node();
  auto out = new_node({m, n}, n * m, an->requires_grad);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out->data[j * n + i] = an->data[i * m + j];
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, n, m]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          an->grad[i * m + j] += on->grad[j * n + i];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check_2d(a, "add_rowvec");
  const std::size_t n = a.rows(), m = a.cols();
  if (v.size() != m) throw std::invalid_argument("add_rowvec: width mismatch");
  auto an = a.node(), vn = v.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad || vn->requires_grad);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out->data[i * m + j] = an->data[i * m + j] + vn->data[j];
    }
  }
  if (out->requires_grad) {
    out->parents = {an, vn};
    auto on = out;
    out->backprop = [an, vn, on, n, m]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) vn->grad[j] += on->grad[i * m + j];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor mul_colvec(const Tensor& a, const Tensor& w) {
  check_2d(a, "mul_colvec");
  const std::size_t n = a.rows(), m = a.cols();
  if (w.size() != n) throw std::invalid_argument("mul_colvec: height mismatch");
  auto an = a.node(), wn = w.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad || wn->requires_grad);
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = wn->data[i];
    for (std::size_t j = 0; j < m; ++j) out->data[i * m + j] = an->data[i * m + j] * wi;
  }
  if (out->requires_grad) {
    out->parents = {an, wn};
    auto on = out;
    out->backprop = [an, wn, on, n, m]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double wi = wn->data[i];
          for (std::size_t j = 0; j < m; ++j) {
            an->grad[i * m + j] += on->grad[i * m + j] * wi;
          }
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            acc += on->grad[i * m + j] * an->data[i * m + j];
          }
          wn->grad[i] += acc;
        }
      }
    };
  }
  return Tensor(out);
}

Tensor scale_rows(const Tensor& a, const std::vector<double>& s) {
  check_2d(a, "scale_rows");
  const std::size_t n = a.rows(), m = a.cols();
  if (s.size() != n) throw std::invalid_argument("scale_rows: height mismatch");
  auto an = a.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out->data[i * m + j] = an->data[i * m + j] * s[i];
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, s, n, m]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          an->grad[i * m + j] += on->grad[i * m + j] * s[i];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor softmax_row(const Tensor& a) {
  auto an = a.node();
  if (an->data.empty()) throw std::invalid_argument("softmax_row: empty input");
  if (!all_finite(an->data)) {
    throw std::invalid_argument("softmax_row: non-finite input");
  }
  const std::size_t m = a.cols(), n = an->size() / m;
  auto out = new_node(an->shape, an->size(), an->requires_grad);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = an->data.data() + i * m;
    double* orow = out->data.data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (std::size_t j = 0; j < m; ++j) orow[j] /= denom;
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, n, m]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* y = on->data.data() + i * m;
        const double* g = on->grad.data() + i * m;
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < m; ++j) {
          an->grad[i * m + j] += y[j] * (g[j] - dot);
        }
      }
    };
  }
  return Tensor(out);
}

Tensor log_softmax_row(const Tensor& a) {
  auto an = a.node();
  if (an->data.empty()) throw std::invalid_argument("log_softmax_row: empty input");
  if (!all_finite(an->data)) {
    throw std::invalid_argument("log_softmax_row: non-finite input");
  }
  const std::size_t m = a.cols(), n = an->size() / m;
  auto out = new_node(an->shape, an->size(), an->requires_grad);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = an->data.data() + i * m;
    double* orow = out->data.data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t j = 0; j < m; ++j) orow[j] = row[j] - lse;
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, n, m]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* y = on->data.data() + i * m;
        const double* g = on->grad.data() + i * m;
        double gsum = 0.0;
        for (std::size_t j = 0; j < m; ++j) gsum += g[j];
        for (std::size_t j = 0; j < m; ++j) {
          an->grad[i * m + j] += g[j] - std::exp(y[j]) * gsum;
        }
      }
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& a) {
  auto an = a.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad);
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    const double x = an->data[i];
    out->data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on]() {
      an->ensure_grad();
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const double x = an->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        an->grad[i] += on->grad[i] * (cdf + x * pdf);
      }
    };
  }
  return Tensor(out);
}

Tensor log_elem(const Tensor& a) {
  auto an = a.node();
  auto out = new_node(an->shape, an->size(), an->requires_grad);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    if (an->data[i] <= 0.0) throw std::invalid_argument("log_elem: non-positive input");
    out->data[i] = std::log(an->data[i]);
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        an->grad[i] += on->grad[i] / an->data[i];
      }
    };
  }
  return Tensor(out);
}

Tensor sum(const Tensor& a) {
  auto an = a.node();
  double acc = 0.0;
  for (double v : an->data) acc += v;
  auto out = new_node({1}, 1, an->requires_grad);
  out->data[0] = acc;
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on]() {
      an->ensure_grad();
      const double g = on->grad[0];
      for (auto& gv : an->grad) gv += g;
    };
  }
  return Tensor(out);
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  if (n != a.size()) throw std::invalid_argument("reshape: element count mismatch");
  auto an = a.node();
  auto out = new_node(std::move(shape), n, an->requires_grad);
  out->data = an->data;
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    };
  }
  return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t m = parts[0].cols();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check_2d(p, "concat_rows");
    if (p.cols() != m) throw std::invalid_argument("concat_rows: width mismatch");
    n += p.rows();
    rg = rg || p.requires_grad();
  }
  auto out = new_node({n, m}, n * m, rg);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->data.begin() + off);
    off += p.size();
  }
  if (rg) {
    for (const auto& p : parts) out->parents.push_back(p.node());
    auto on = out;
    auto parents = out->parents;
    out->backprop = [parents, on]() {
      std::size_t off = 0;
      for (const auto& pn : parents) {
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < pn->data.size(); ++i) {
            pn->grad[i] += on->grad[off + i];
          }
        }
        off += pn->data.size();
      }
    };
  }
  return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t n = parts[0].rows();
  std::size_t m = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p.rows() != n) throw std::invalid_argument("concat_cols: height mismatch");
    m += p.cols();
    rg = rg || p.requires_grad();
  }
  auto out = new_node({n, m}, n * m, rg);
  std::size_t col_off = 0;
  for (const auto& p : parts) {
    const std::size_t pm = p.cols();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(p.data().begin() + i * pm, p.data().begin() + (i + 1) * pm,
                out->data.begin() + i * m + col_off);
    }
    col_off += pm;
  }
  if (rg) {
    for (const auto& p : parts) out->parents.push_back(p.node());
    auto on = out;
    auto parents = out->parents;
    out->backprop = [parents, on, n, m]() {
      std::size_t col_off = 0;
      for (const auto& pn : parents) {
        const std::size_t pm = pn->data.size() / n;
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < pm; ++j) {
              pn->grad[i * pm + j] += on->grad[i * m + col_off + j];
            }
          }
        }
        col_off += pm;
      }
    };
  }
  return Tensor(out);
}

Tensor slice_rows(const Tensor& a, std::size_t first, std::size_t count) {
  check_2d(a, "slice_rows");
  const std::size_t n = a.rows(), m = a.cols();
  if (first + count > n) throw std::invalid_argument("slice_rows: out of range");
  auto an = a.node();
  auto out = new_node({count, m}, count * m, an->requires_grad);
  std::copy(an->data.begin() + first * m, an->data.begin() + (first + count) * m,
            out->data.begin());
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, first, m]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        an->grad[first * m + i] += on->grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  check_2d(a, "gather_rows");
  const std::size_t n = a.rows(), m = a.cols();
  for (auto i : idx) {
    if (i >= n) throw std::invalid_argument("gather_rows: index out of range");
  }
  auto an = a.node();
  auto out = new_node({idx.size(), m}, idx.size() * m, an->requires_grad);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(an->data.begin() + idx[r] * m, an->data.begin() + (idx[r] + 1) * m,
              out->data.begin() + r * m);
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, idx, m]() {
      an->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < m; ++j) {
          an->grad[idx[r] * m + j] += on->grad[r * m + j];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor scatter_add_rows(const Tensor& a, const std::vector<std::size_t>& idx,
                        std::size_t n_out) {
  check_2d(a, "scatter_add_rows");
  const std::size_t e = a.rows(), m = a.cols();
  if (idx.size() != e) throw std::invalid_argument("scatter_add_rows: index count mismatch");
  for (auto i : idx) {
    if (i >= n_out) throw std::invalid_argument("scatter_add_rows: index out of range");
  }
  auto an = a.node();
  auto out = new_node({n_out, m}, n_out * m, an->requires_grad);
  for (std::size_t r = 0; r < e; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      out->data[idx[r] * m + j] += an->data[r * m + j];
    }
  }
  if (out->requires_grad) {
    out->parents = {an};
    auto on = out;
    out->backprop = [an, on, idx, m]() {
      an->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < m; ++j) {
          an->grad[r * m + j] += on->grad[idx[r] * m + j];
        }
      }
    };
  }
  return Tensor(out);
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, BatchNormMode mode, double momentum,
                 double eps) {
  check_2d(x, "batchnorm");
  const std::size_t b = x.rows(), f = x.cols();
  if (b == 0) throw std::invalid_argument("batchnorm: empty batch");
  if (eps <= 0.0) throw std::invalid_argument("batchnorm: eps must be positive");
  if (gamma.size() != f || beta.size() != f) {
    throw std::invalid_argument("batchnorm: affine parameter width mismatch");
  }
  if (state.running_mean.size() != f) {
    throw std::invalid_argument("batchnorm: running state width mismatch");
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  const bool rg = xn->requires_grad || gn->requires_grad || bn->requires_grad;
  auto out = new_node(xn->shape, xn->size(), rg);

  std::vector<double> mu(f, 0.0), var(f, 0.0), inv_sigma(f, 0.0);
  if (mode == BatchNormMode::kEval) {
    mu = state.running_mean;
    var = state.running_var;
  } else {
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < f; ++j) mu[j] += xn->data[i * f + j];
    }
    for (auto& v : mu) v /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const double d = xn->data[i * f + j] - mu[j];
        var[j] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(b);
    if (mode == BatchNormMode::kTrain) {
      for (std::size_t j = 0; j < f; ++j) {
        state.running_mean[j] = (1.0 - momentum) * state.running_mean[j] + momentum * mu[j];
        state.running_var[j] = (1.0 - momentum) * state.running_var[j] + momentum * var[j];
      }
    }
  }
  for (std::size_t j = 0; j < f; ++j) inv_sigma[j] = 1.0 / std::sqrt(var[j] + eps);

  // Keep the normalized values for backward.
  auto xhat = std::make_shared<std::vector<double>>(b * f);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double h = (xn->data[i * f + j] - mu[j]) * inv_sigma[j];
      (*xhat)[i * f + j] = h;
      out->data[i * f + j] = gn->data[j] * h + bn->data[j];
    }
  }

  if (rg) {
    out->parents = {xn, gn, bn};
    auto on = out;
    const bool batch_stats = mode != BatchNormMode::kEval;
    out->backprop = [xn, gn, bn, on, xhat, inv_sigma, b, f, batch_stats]() {
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < f; ++j) {
            gn->grad[j] += on->grad[i * f + j] * (*xhat)[i * f + j];
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < f; ++j) bn->grad[j] += on->grad[i * f + j];
        }
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        if (!batch_stats) {
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < f; ++j) {
              xn->grad[i * f + j] += on->grad[i * f + j] * gn->data[j] * inv_sigma[j];
            }
          }
        } else {
          // d xhat = g * gamma; dx = inv_sigma * (dxhat - mean(dxhat)
          //                                       - xhat * mean(dxhat * xhat))
          std::vector<double> mean_dh(f, 0.0), mean_dh_h(f, 0.0);
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < f; ++j) {
              const double dh = on->grad[i * f + j] * gn->data[j];
              mean_dh[j] += dh;
              mean_dh_h[j] += dh * (*xhat)[i * f + j];
            }
          }
          for (std::size_t j = 0; j < f; ++j) {
            mean_dh[j] /= static_cast<double>(b);
            mean_dh_h[j] /= static_cast<double>(b);
          }
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < f; ++j) {
              const double dh = on->grad[i * f + j] * gn->data[j];
              xn->grad[i * f + j] +=
                  inv_sigma[j] * (dh - mean_dh[j] - (*xhat)[i * f + j] * mean_dh_h[j]);
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

}  // namespace molspec::numerics
