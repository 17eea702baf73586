#include "molspec/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace molspec::numerics {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::shared_ptr<detail::Node> make_node(std::vector<std::size_t> shape,
                                        std::vector<double> data,
                                        bool requires_grad) {
  if (shape_product(shape) != data.size()) {
    throw std::invalid_argument("tensor shape does not match data length");
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::vector<double> d(shape_product(shape), 0.0);
  return Tensor(make_node(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value,
                    bool requires_grad) {
  std::vector<double> d(shape_product(shape), value);
  return Tensor(make_node(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape,
                         std::vector<double> data, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, double lo, double hi,
                       Rng& rng, bool requires_grad) {
  std::vector<double> d(shape_product(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor(make_node(std::move(shape), std::move(d), requires_grad));
}

Tensor Tensor::normal(std::vector<std::size_t> shape, double mean,
                      double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> d(shape_product(shape));
  for (auto& v : d) v = rng.normal(mean, stddev);
  return Tensor(make_node(std::move(shape), std::move(d), requires_grad));
}

std::size_t Tensor::rows() const {
  return node_->shape.size() >= 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  if (s.size() >= 2) return s[1];
  return s.empty() ? 1 : s[0];
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value() requires a scalar tensor");
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

void Tensor::backward() {
  if (size() != 1) {
    throw std::invalid_argument("backward() requires a scalar root");
  }
  // Iterative DFS topological order; graphs from long training expressions
  // can be deep enough to overflow the stack with recursion.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop) n->backprop();
  }
  // Release the graph; gradients stay on the leaves.
  for (detail::Node* n : order) {
    n->backprop = nullptr;
    n->parents.clear();
  }
}

void Tensor::apply_sgd(double lr) {
  if (node_->grad.empty()) return;
  for (std::size_t i = 0; i < node_->data.size(); ++i) {
    node_->data[i] -= lr * node_->grad[i];
  }
}

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamSet::get(const std::string& name) {
  for (auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw std::invalid_argument("unknown parameter: " + name);
}

const Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw std::invalid_argument("unknown parameter: " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

void ParamSet::zero_grad() {
  for (auto& [n, t] : items_) t.zero_grad();
}

void ParamSet::sgd_step(double lr) {
  for (auto& [n, t] : items_) t.apply_sgd(lr);
}

}  // namespace molspec::numerics
