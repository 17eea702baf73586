#include "molspec/objectives.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "molspec/ops.hpp"
#include "molspec/rng.hpp"

namespace molspec::objectives {

using namespace molspec::numerics;

Tensor loss_denoising(const Tensor& node_pred,
                      const std::vector<double>& noise_targets,
                      const std::vector<std::size_t>& offsets) {
  if (offsets.size() < 2 || offsets.back() == 0) {
    throw std::invalid_argument("loss_denoising: empty batch");
  }
  const std::size_t n_atoms = offsets.back();
  if (node_pred.rows() != n_atoms || node_pred.cols() != 3 ||
      noise_targets.size() != 3 * n_atoms) {
    throw std::invalid_argument("loss_denoising: shape mismatch");
  }
  const std::size_t batch = offsets.size() - 1;
  // Per-coordinate mean within a molecule, then mean over the batch, folded
  // into one per-row scale so the loss is a single reduction.
  std::vector<double> row_scale(n_atoms);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t nb = offsets[b + 1] - offsets[b];
    if (nb == 0) throw std::invalid_argument("loss_denoising: empty molecule");
    const double s = 1.0 / (3.0 * static_cast<double>(nb) * static_cast<double>(batch));
    for (std::size_t i = offsets[b]; i < offsets[b + 1]; ++i) row_scale[i] = s;
  }
  Tensor target = Tensor::from_data({n_atoms, 3}, noise_targets);
  Tensor diff = sub(node_pred, target);
  return sum(scale_rows(mul(diff, diff), row_scale));
}

Tensor loss_mpr(const std::array<Tensor, 3>& recon,
                const std::array<std::vector<double>, 3>& targets) {
  Tensor total;
  bool any = false;
  for (std::size_t k = 0; k < 3; ++k) {
    if (!recon[k].defined() || recon[k].size() == 0) {
      if (!targets[k].empty()) {
        throw std::invalid_argument("loss_mpr: reconstruction/target mismatch");
      }
      continue;
    }
    if (recon[k].size() != targets[k].size()) {
      throw std::invalid_argument("loss_mpr: reconstruction/target mismatch");
    }
    const std::size_t rows = recon[k].rows();
    Tensor t = Tensor::from_data(
        {rows, recon[k].cols()}, targets[k]);
    Tensor diff = sub(recon[k], t);
    // Mean over masked patches of the squared L2 row norm.
    Tensor contrib = scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(rows));
    total = any ? add(total, contrib) : contrib;
    any = true;
  }
  if (!any) throw std::invalid_argument("loss_mpr: empty mask plan");
  return total;
}

Tensor loss_infonce(const Tensor& z_x, const Tensor& z_s, double temperature) {
  if (z_x.rows() != z_s.rows() || z_x.cols() != z_s.cols()) {
    throw std::invalid_argument("loss_infonce: embedding shape mismatch");
  }
  const std::size_t bs = z_x.rows();
  if (bs == 0) throw std::invalid_argument("loss_infonce: empty batch");

  Tensor scores = matmul(z_x, transpose(z_s));  // scores[k][j] = <zx_k, zs_j>
  if (temperature != 1.0) scores = scale(scores, 1.0 / temperature);
  // Row direction: negatives replace the spectrum view; column direction:
  // negatives replace the 3-D view.
  Tensor log_row = log_softmax_row(scores);
  Tensor log_col = log_softmax_row(transpose(scores));
  std::vector<double> eye(bs * bs, 0.0);
  for (std::size_t i = 0; i < bs; ++i) eye[i * bs + i] = 1.0;
  Tensor mask = Tensor::from_data({bs, bs}, eye);
  Tensor diag = add(sum(mul(log_row, mask)), sum(mul(log_col, mask)));
  return scale(diag, -0.5 / static_cast<double>(bs));
}

Tensor loss_total(const Tensor& denoising, const Tensor& mpr,
                  const Tensor& contrast, const LossWeights& w) {
  Tensor total = scale(denoising, w.denoising);
  if (mpr.defined()) total = add(total, scale(mpr, w.mpr));
  if (contrast.defined()) total = add(total, scale(contrast, w.contrast));
  return total;
}

LossBreakdown make_breakdown(double denoising, double mpr, double contrast,
                             const LossWeights& w, std::size_t step) {
  LossBreakdown b;
  b.denoising = denoising;
  b.mpr = mpr;
  b.contrast = contrast;
  b.total = w.denoising * denoising + w.mpr * mpr + w.contrast * contrast;
  b.step = step;
  return b;
}

// --- equivalence verification ----------------------------------------------

std::vector<double> Grid1D::points() const {
  std::vector<double> xs;
  for (double x = lo; x <= hi + 1e-12; x += step) xs.push_back(x);
  return xs;
}

double mixture_score(double x, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("mixture_score: tau must be positive");
  const double t2 = tau * tau;
  // Evaluate through exp of log-density differences for numerical range.
  const double la = -0.5 * (x + 1.0) * (x + 1.0) / t2;
  const double lb = -0.5 * (x - 1.0) * (x - 1.0) / t2;
  const double mx = std::max(la, lb);
  const double wa = std::exp(la - mx), wb = std::exp(lb - mx);
  const double ga = -(x + 1.0) / t2, gb = -(x - 1.0) / t2;
  return (wa * ga + wb * gb) / (wa + wb);
}

double posterior_mean(double x, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("posterior_mean: tau must be positive");
  return std::tanh(x / (tau * tau));
}

EquivalenceReport verify_equivalence_closed_form(double tau, const Grid1D& grid) {
  if (tau <= 0.0) {
    throw std::invalid_argument("verify_equivalence: tau must be positive");
  }
  EquivalenceReport r;
  r.xs = grid.points();
  for (double x : r.xs) {
    const double denoiser = posterior_mean(x, tau) - x;  // E[x0 - x | x]
    const double oracle = tau * tau * mixture_score(x, tau);
    r.denoiser.push_back(denoiser);
    r.oracle.push_back(oracle);
    r.abs_diff.push_back(std::abs(denoiser - oracle));
    r.max_abs_dev = std::max(r.max_abs_dev, r.abs_diff.back());
  }
  return r;
}

EquivalenceReport verify_equivalence_trained(double tau, const Grid1D& grid,
                                             std::size_t n_samples,
                                             std::uint64_t seed) {
  if (tau <= 0.0) {
    throw std::invalid_argument("verify_equivalence: tau must be positive");
  }
  Rng rng(derive_seed(seed, "equivalence"));

  // Small 1-D regressor trained to predict the noise x - x0.
  const std::size_t hidden = 16;
  ParamSet params;
  auto init = [&](const std::string& name, std::size_t fi, std::size_t fo) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fi));
    params.add(name + "/w", Tensor::uniform({fi, fo}, -bound, bound, rng));
    params.add(name + "/b", Tensor::zeros({fo}, true));
  };
  init("l1", 1, hidden);
  init("l2", hidden, hidden);
  init("l3", hidden, 1);

  auto forward = [&](const Tensor& x) {
    Tensor h = gelu(add_rowvec(matmul(x, params.get("l1/w")), params.get("l1/b")));
    h = gelu(add_rowvec(matmul(h, params.get("l2/w")), params.get("l2/b")));
    return add_rowvec(matmul(h, params.get("l3/w")), params.get("l3/b"));
  };

  std::vector<double> sample_x(n_samples), sample_y(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x0 = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double noise = tau * rng.normal();
    sample_x[i] = x0 + noise;
    sample_y[i] = noise;  // x - x0
  }

  const std::size_t batch = 128;
  const std::size_t epochs = 16;
  std::vector<std::size_t> order(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) order[i] = i;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t i = n_samples; i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    const double lr = e < epochs / 2 ? 0.08 : (e < 3 * epochs / 4 ? 0.02 : 0.005);
    for (std::size_t s = 0; s + batch <= n_samples; s += batch) {
      std::vector<double> xs(batch), ys(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        xs[i] = sample_x[order[s + i]];
        ys[i] = sample_y[order[s + i]];
      }
      Tensor in = Tensor::from_data({batch, 1}, xs);
      Tensor target = Tensor::from_data({batch, 1}, ys);
      Tensor diff = sub(forward(in), target);
      Tensor loss = mean(mul(diff, diff));
      params.zero_grad();
      loss.backward();
      params.sgd_step(lr);
    }
  }

  EquivalenceReport r;
  r.xs = grid.points();
  Tensor in = Tensor::from_data({r.xs.size(), 1}, r.xs);
  Tensor pred = [&] {  // model estimates x - x0; flip to the denoiser axis
    return forward(in);
  }();
  for (std::size_t i = 0; i < r.xs.size(); ++i) {
    const double denoiser = -pred.data()[i];
    const double oracle = tau * tau * mixture_score(r.xs[i], tau);
    r.denoiser.push_back(denoiser);
    r.oracle.push_back(oracle);
    r.abs_diff.push_back(std::abs(denoiser - oracle));
    r.max_abs_dev = std::max(r.max_abs_dev, r.abs_diff.back());
  }
  return r;
}

void write_equivalence_csv(const EquivalenceReport& report,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "x,denoiser,oracle,abs_diff\n";
  char buf[128];
  for (std::size_t i = 0; i < report.xs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", report.xs[i],
                  report.denoiser[i], report.oracle[i], report.abs_diff[i]);
    out << buf;
  }
  if (!out.good()) throw std::runtime_error("failed writing " + path);
}

}  // namespace molspec::objectives
