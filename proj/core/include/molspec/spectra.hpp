#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace molspec::spectra {

enum class SpectrumKind { kUvVis = 0, kIr = 1, kRaman = 2 };
inline constexpr std::array<SpectrumKind, 3> kAllKinds = {
    SpectrumKind::kUvVis, SpectrumKind::kIr, SpectrumKind::kRaman};

const char* kind_name(SpectrumKind kind);
SpectrumKind kind_from_name(const std::string& name);

// Fixed acquisition grid of one spectrum type. UV-Vis is on an eV axis,
// IR/Raman on a wavenumber axis; the "desk" grids are shortened variants of
// the same axes for fast tests and synthetic data.
struct GridSpec {
  SpectrumKind kind = SpectrumKind::kUvVis;
  double start = 0.0;
  double step = 0.0;
  std::size_t length = 0;

  // UV-Vis: 1.5 eV start, 0.02 eV step, 601 points.
  // IR/Raman: 500 cm^-1 start, 1 cm^-1 step, 3501 points.
  static GridSpec standard(SpectrumKind kind);
  static GridSpec desk(SpectrumKind kind);  // 120 points per spectrum
};

struct GridSet {
  std::array<GridSpec, 3> grids;

  static GridSet standard();
  static GridSet desk();
  static GridSet toy();  // 12 points; gradient-check scale
  const GridSpec& of(SpectrumKind kind) const {
    return grids[static_cast<std::size_t>(kind)];
  }
};

struct Spectrum {
  SpectrumKind kind = SpectrumKind::kUvVis;
  std::vector<double> intensities;
};

// log10(1 + I): defined at zero intensity, monotone, and tracks log10 at
// large peak heights.
Spectrum preprocess(const Spectrum& raw);

struct PatchConfig {
  std::size_t patch_len = 20;  // P
  std::size_t stride = 10;     // D
};

struct PatchSet {
  std::array<PatchConfig, 3> configs;
  static PatchSet uniform(std::size_t patch_len, std::size_t stride);
  const PatchConfig& of(SpectrumKind kind) const {
    return configs[static_cast<std::size_t>(kind)];
  }
};

// Number of full windows of length P advanced by stride D over L points.
std::size_t patch_count(std::size_t length, std::size_t patch_len,
                        std::size_t stride);

struct PatchSequence {
  SpectrumKind kind = SpectrumKind::kUvVis;
  std::size_t num_patches = 0;
  std::size_t patch_len = 0;
  std::vector<double> values;  // row-major num_patches x patch_len

  const double* row(std::size_t j) const { return values.data() + j * patch_len; }
};

// Overlapping windows; trailing points that do not fill a window are dropped.
PatchSequence patchify(const Spectrum& s, const PatchConfig& cfg);

struct MaskPlan {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::array<std::vector<std::size_t>, 3> masked;  // sorted, unique, < N_i

  std::size_t total_masked() const {
    return masked[0].size() + masked[1].size() + masked[2].size();
  }
  const std::vector<std::size_t>& of(SpectrumKind kind) const {
    return masked[static_cast<std::size_t>(kind)];
  }
};

// Draws max(1, floor(alpha * N_i)) indices per spectrum when alpha > 0,
// uniformly without replacement; draws are independent across spectra.
MaskPlan make_mask_plan(const std::array<std::size_t, 3>& patch_counts,
                        double alpha, std::uint64_t seed);

// Zeroes the listed rows; everything else is copied bit-identically.
PatchSequence apply_mask(const PatchSequence& p,
                         const std::vector<std::size_t>& masked);

}  // namespace molspec::spectra
