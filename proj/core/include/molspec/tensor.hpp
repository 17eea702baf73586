#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "molspec/rng.hpp"

namespace molspec::numerics {

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // accumulates into parents' grad

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense 64-bit tensor with reverse-mode differentiation. Values are row-major;
// a tensor is immutable after construction except for gradient accumulation
// during backward() and explicit in-place parameter updates between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape,
                          std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi,
                        Rng& rng, bool requires_grad = true);
  static Tensor normal(std::vector<std::size_t> shape, double mean,
                       double stddev, Rng& rng, bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  // 2-D accessors; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  double value() const;  // scalar tensors only
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  // Reverse pass from a scalar root. Gradients accumulate (+=) into every
  // reachable tensor with requires_grad; the graph edges are released
  // afterwards so intermediates can be reclaimed.
  void backward();

  // In-place SGD update: data -= lr * grad. Only meaningful for leaves.
  void apply_sgd(double lr);

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Named parameter list; the registration order is the canonical order used by
// gradient checking, SGD updates, and checkpoint serialization.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  void zero_grad();
  void sgd_step(double lr);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace molspec::numerics
