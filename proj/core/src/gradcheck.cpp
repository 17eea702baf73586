#include "molspec/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace molspec::numerics {

GradReport grad_check(const std::function<Tensor()>& f,
                      std::vector<std::pair<std::string, Tensor>> params,
                      double eps, double tolerance) {
  if (eps < 1e-6 || eps > 1e-3) {
    throw std::invalid_argument("grad_check: eps outside [1e-6, 1e-3]");
  }

  const double v0 = f().value();
  if (f().value() != v0) {
    throw std::invalid_argument("grad_check: f is not deterministic");
  }

  for (auto& [name, p] : params) p.zero_grad();
  Tensor loss = f();
  loss.backward();

  GradReport report;
  report.tolerance = tolerance;
  for (auto& [name, p] : params) {
    GradReport::Entry entry;
    entry.name = name;
    std::vector<double>& data = p.mutable_data();
    const std::vector<double>& analytic = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double fp = f().value();
      data[i] = saved - eps;
      const double fm = f().value();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel >= entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace molspec::numerics
