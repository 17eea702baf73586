#include "molspec/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "molspec/rng.hpp"

namespace molspec::spectra {

const char* kind_name(SpectrumKind kind) {
  switch (kind) {
    case SpectrumKind::kUvVis: return "uv_vis";
    case SpectrumKind::kIr: return "ir";
    case SpectrumKind::kRaman: return "raman";
  }
  return "?";
}

SpectrumKind kind_from_name(const std::string& name) {
  if (name == "uv_vis") return SpectrumKind::kUvVis;
  if (name == "ir") return SpectrumKind::kIr;
  if (name == "raman") return SpectrumKind::kRaman;
  throw std::invalid_argument("unknown spectrum kind: " + name);
}

GridSpec GridSpec::standard(SpectrumKind kind) {
  switch (kind) {
    case SpectrumKind::kUvVis: return {kind, 1.5, 0.02, 601};
    case SpectrumKind::kIr: return {kind, 500.0, 1.0, 3501};
    case SpectrumKind::kRaman: return {kind, 500.0, 1.0, 3501};
  }
  throw std::invalid_argument("unknown spectrum kind");
}

GridSpec GridSpec::desk(SpectrumKind kind) {
  switch (kind) {
    case SpectrumKind::kUvVis: return {kind, 1.5, 0.1, 120};
    case SpectrumKind::kIr: return {kind, 500.0, 30.0, 120};
    case SpectrumKind::kRaman: return {kind, 500.0, 30.0, 120};
  }
  throw std::invalid_argument("unknown spectrum kind");
}

GridSet GridSet::standard() {
  return {{GridSpec::standard(SpectrumKind::kUvVis),
           GridSpec::standard(SpectrumKind::kIr),
           GridSpec::standard(SpectrumKind::kRaman)}};
}

GridSet GridSet::desk() {
  return {{GridSpec::desk(SpectrumKind::kUvVis), GridSpec::desk(SpectrumKind::kIr),
           GridSpec::desk(SpectrumKind::kRaman)}};
}

GridSet GridSet::toy() {
  return {{GridSpec{SpectrumKind::kUvVis, 1.5, 1.0, 12},
           GridSpec{SpectrumKind::kIr, 500.0, 300.0, 12},
           GridSpec{SpectrumKind::kRaman, 500.0, 300.0, 12}}};
}

Spectrum preprocess(const Spectrum& raw) {
  Spectrum out;
  out.kind = raw.kind;
  out.intensities.reserve(raw.intensities.size());
  for (double v : raw.intensities) {
    if (!(v >= 0.0)) {
      throw std::invalid_argument("preprocess: negative or non-finite intensity");
    }
    out.intensities.push_back(std::log10(1.0 + v));
  }
  return out;
}

PatchSet PatchSet::uniform(std::size_t patch_len, std::size_t stride) {
  PatchConfig c{patch_len, stride};
  return {{c, c, c}};
}

std::size_t patch_count(std::size_t length, std::size_t patch_len,
                        std::size_t stride) {
  if (stride == 0 || patch_len == 0) {
    throw std::invalid_argument("patch_count: patch length and stride must be positive");
  }
  if (stride > patch_len) {
    throw std::invalid_argument("patch_count: stride exceeds patch length");
  }
  if (patch_len > length) {
    throw std::invalid_argument("patch_count: patch length exceeds spectrum length");
  }
  return (length - patch_len) / stride + 1;
}

PatchSequence patchify(const Spectrum& s, const PatchConfig& cfg) {
  const std::size_t n = patch_count(s.intensities.size(), cfg.patch_len, cfg.stride);
  PatchSequence out;
  out.kind = s.kind;
  out.num_patches = n;
  out.patch_len = cfg.patch_len;
  out.values.resize(n * cfg.patch_len);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t start = j * cfg.stride;
    std::copy(s.intensities.begin() + start,
              s.intensities.begin() + start + cfg.patch_len,
              out.values.begin() + j * cfg.patch_len);
  }
  return out;
}

MaskPlan make_mask_plan(const std::array<std::size_t, 3>& patch_counts,
                        double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("make_mask_plan: alpha must be in [0, 1)");
  }
  MaskPlan plan;
  plan.alpha = alpha;
  plan.seed = seed;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t n = patch_counts[k];
    std::size_t count = 0;
    if (alpha > 0.0 && n > 0) {
      count = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n))));
    }
    // Independent draw per spectrum kind.
    Rng rng(derive_seed(seed, "mask", k));
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    plan.masked[k] = std::move(pool);
  }
  return plan;
}

PatchSequence apply_mask(const PatchSequence& p,
                         const std::vector<std::size_t>& masked) {
  PatchSequence out = p;
  for (std::size_t j : masked) {
    if (j >= p.num_patches) {
      throw std::invalid_argument("apply_mask: masked index out of range");
    }
    std::fill(out.values.begin() + j * p.patch_len,
              out.values.begin() + (j + 1) * p.patch_len, 0.0);
  }
  return out;
}

}  // namespace molspec::spectra
