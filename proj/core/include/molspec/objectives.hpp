#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "molspec/tensor.hpp"

namespace molspec::objectives {

struct LossWeights {
  double denoising = 1.0;
  double mpr = 1.0;
  double contrast = 1.0;
};

struct LossBreakdown {
  double denoising = 0.0;
  double mpr = 0.0;
  double contrast = 0.0;
  double total = 0.0;
  std::size_t step = 0;
};

// Mean over the batch of the per-coordinate mean squared error between the
// node-level predictions and the realized noise. offsets has B+1 entries
// delimiting each molecule's atom rows.
numerics::Tensor loss_denoising(const numerics::Tensor& node_pred,
                                const std::vector<double>& noise_targets,
                                const std::vector<std::size_t>& offsets);

// Per spectrum: mean over masked patches of the squared L2 reconstruction
// error; contributions are summed across the spectra. recon[i] holds the
// reconstructed rows for kind i (possibly empty), targets[i] the original
// rows, row-major with the same extents.
numerics::Tensor loss_mpr(const std::array<numerics::Tensor, 3>& recon,
                          const std::array<std::vector<double>, 3>& targets);

// Symmetric in-batch InfoNCE with raw dot-product scores; temperature is an
// optional hook and defaults to 1 (no rescaling).
numerics::Tensor loss_infonce(const numerics::Tensor& z_x,
                              const numerics::Tensor& z_s,
                              double temperature = 1.0);

numerics::Tensor loss_total(const numerics::Tensor& denoising,
                            const numerics::Tensor& mpr,
                            const numerics::Tensor& contrast,
                            const LossWeights& w);

LossBreakdown make_breakdown(double denoising, double mpr, double contrast,
                             const LossWeights& w, std::size_t step);

// --- denoising / score-matching equivalence -------------------------------

struct Grid1D {
  double lo = -2.0;
  double hi = 2.0;
  double step = 0.1;
  std::vector<double> points() const;
};

struct EquivalenceReport {
  std::vector<double> xs;
  std::vector<double> denoiser;  // E[x0 - x | x] estimate on the grid
  std::vector<double> oracle;    // tau^2 * d/dx log p(x), mixture-form
  std::vector<double> abs_diff;
  double max_abs_dev = 0.0;
};

// Density score of the equal-weight two-component Gaussian mixture with means
// +-1 and width tau, evaluated through the mixture-derivative formula.
double mixture_score(double x, double tau);
// Posterior mean E[x0 | x] = tanh(x / tau^2) for the same mixture.
double posterior_mean(double x, double tau);

// Closed-form optimal denoiser vs tau^2 * score on the grid; the two sides
// are computed by independent routes and agree to round-off.
EquivalenceReport verify_equivalence_closed_form(double tau, const Grid1D& grid);

// Fits a small 1-D regressor to predict the noise from n_samples draws, then
// compares its implied denoiser with the score oracle on the grid.
EquivalenceReport verify_equivalence_trained(double tau, const Grid1D& grid,
                                             std::size_t n_samples,
                                             std::uint64_t seed);

void write_equivalence_csv(const EquivalenceReport& report,
                           const std::string& path);

}  // namespace molspec::objectives
