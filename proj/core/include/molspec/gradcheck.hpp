#pragma once

#include <functional>
#include <string>
#include <vector>

#include "molspec/tensor.hpp"

namespace molspec::numerics {

struct GradReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  std::vector<Entry> per_param;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Compares the reverse-mode gradient of f against central finite differences,
// element by element, over every tensor in params. f must rebuild its graph
// on each call from the current parameter values and be deterministic; two
// evaluations at the same point that disagree are rejected.
// Relative error: |a - n| / max(1e-8, |a| + |n|).
GradReport grad_check(const std::function<Tensor()>& f,
                      std::vector<std::pair<std::string, Tensor>> params,
                      double eps = 1e-5, double tolerance = 1e-4);

}  // namespace molspec::numerics
