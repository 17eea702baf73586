#include "molspec/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "molspec/rng.hpp"

namespace molspec::pipeline {

using spectra::SpectrumKind;

const SyntheticSpecTable& SyntheticSpecTable::builtin() {
  static const SyntheticSpecTable table = [] {
    SyntheticSpecTable t;
    // Every group stamps peaks on at least two spectra. Each group carries a
    // redundant multi-peak signature spread over the grids so compositions
    // stay separable after masking and the log transform.
    t.groups.push_back({"hydroxyl",
                        {8, 1},
                        {{{0.0, 0.0, 0.0}}, {{0.80, 0.55, 0.0}}},
                        {{SpectrumKind::kIr, 0.88, 0.030, 60.0},
                         {SpectrumKind::kIr, 0.22, 0.025, 35.0},
                         {SpectrumKind::kRaman, 0.82, 0.030, 40.0},
                         {SpectrumKind::kRaman, 0.15, 0.025, 25.0},
                         {SpectrumKind::kUvVis, 0.55, 0.035, 30.0}}});
    t.groups.push_back({"carbonyl",
                        {6, 8},
                        {{{0.0, 0.0, 0.0}}, {{1.11, 0.50, 0.0}}},
                        {{SpectrumKind::kIr, 0.55, 0.028, 80.0},
                         {SpectrumKind::kIr, 0.05, 0.022, 30.0},
                         {SpectrumKind::kRaman, 0.50, 0.030, 55.0},
                         {SpectrumKind::kUvVis, 0.28, 0.035, 45.0},
                         {SpectrumKind::kUvVis, 0.90, 0.030, 25.0}}});
    t.groups.push_back({"amine",
                        {7, 1, 1},
                        {{{0.0, 0.0, 0.0}}, {{0.85, 0.50, 0.0}}, {{-0.30, 0.90, 0.25}}},
                        {{SpectrumKind::kIr, 0.74, 0.028, 55.0},
                         {SpectrumKind::kIr, 0.33, 0.024, 30.0},
                         {SpectrumKind::kRaman, 0.66, 0.030, 35.0},
                         {SpectrumKind::kUvVis, 0.12, 0.030, 28.0}}});
    t.groups.push_back({"methyl",
                        {6, 1, 1, 1},
                        {{{0.0, 0.0, 0.0}},
                         {{0.95, 0.40, 0.0}},
                         {{-0.55, 0.80, 0.35}},
                         {{-0.25, -0.70, 0.70}}},
                        {{SpectrumKind::kIr, 0.64, 0.026, 70.0},
                         {SpectrumKind::kIr, 0.12, 0.024, 40.0},
                         {SpectrumKind::kRaman, 0.92, 0.028, 45.0},
                         {SpectrumKind::kRaman, 0.38, 0.026, 30.0},
                         {SpectrumKind::kUvVis, 0.72, 0.030, 22.0}}});
    t.groups.push_back({"nitrile",
                        {6, 7},
                        {{{0.0, 0.0, 0.0}}, {{1.05, 0.40, 0.15}}},
                        {{SpectrumKind::kIr, 0.45, 0.024, 65.0},
                         {SpectrumKind::kRaman, 0.25, 0.026, 65.0},
                         {SpectrumKind::kRaman, 0.58, 0.024, 35.0},
                         {SpectrumKind::kUvVis, 0.42, 0.030, 35.0}}});
    t.groups.push_back({"thiol",
                        {16, 1},
                        {{{0.0, 0.0, 0.0}}, {{1.20, 0.60, 0.10}}},
                        {{SpectrumKind::kIr, 0.96, 0.022, 50.0},
                         {SpectrumKind::kIr, 0.40, 0.024, 25.0},
                         {SpectrumKind::kRaman, 0.74, 0.026, 55.0},
                         {SpectrumKind::kUvVis, 0.64, 0.028, 26.0}}});
    return t;
  }();
  return table;
}

std::size_t group_index(const SyntheticSpecTable& table, const std::string& name) {
  for (std::size_t i = 0; i < table.groups.size(); ++i) {
    if (table.groups[i].name == name) return i;
  }
  throw std::invalid_argument("unknown group: " + name);
}

std::size_t peak_center_index(const GroupSpec::Peak& peak,
                              const spectra::GridSpec& grid) {
  return static_cast<std::size_t>(
      std::llround(peak.center_frac * static_cast<double>(grid.length - 1)));
}

namespace {

// Small random rotation: keeps motif orientations near-canonical so the clean
// geometry stays predictable from the composition.
std::array<double, 9> jitter_rotation(Rng& rng, double angle_sigma) {
  double axis[3];
  double norm = 0.0;
  for (auto& v : axis) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : axis) v /= norm;
  const double angle = angle_sigma * rng.normal();
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
          t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
          t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

}  // namespace

std::vector<MoleculeRecord> gen_synthetic(
    std::size_t n, std::uint64_t seed, const spectra::GridSet& grids,
    const SyntheticSpecTable& table,
    std::vector<std::vector<std::size_t>>* compositions) {
  constexpr double kBackboneSpacing = 2.2;  // Angstrom between motif anchors
  constexpr double kCenterJitter = 0.02;
  constexpr double kAngleJitter = 0.04;  // radians
  constexpr double kNoiseFloor = 0.05;    // raw intensity

  std::vector<MoleculeRecord> records;
  records.reserve(n);
  if (compositions) compositions->clear();

  for (std::size_t rec_idx = 0; rec_idx < n; ++rec_idx) {
    Rng rng(derive_seed(seed, "record", rec_idx));

    // 2-4 groups totalling at most 12 atoms.
    std::vector<std::size_t> groups;
    while (true) {
      groups.clear();
      const std::size_t k = 2 + rng.below(3);
      std::size_t atoms = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t g = rng.below(table.groups.size());
        groups.push_back(g);
        atoms += table.groups[g].motif_atoms.size();
      }
      if (atoms <= 12) break;
    }

    MoleculeRecord rec;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "syn-%06zu", rec_idx);
    rec.id = idbuf;

    encoder3d::Topology topo;
    std::vector<std::size_t> anchor_of_motif;
    for (std::size_t m = 0; m < groups.size(); ++m) {
      const GroupSpec& g = table.groups[groups[m]];
      const std::size_t base = rec.molecule.atoms.size();
      anchor_of_motif.push_back(base);
      const auto rot = jitter_rotation(rng, kAngleJitter);
      const double cx = kBackboneSpacing * static_cast<double>(m) +
                        kCenterJitter * rng.normal();
      const double cy = kCenterJitter * rng.normal();
      const double cz = kCenterJitter * rng.normal();
      for (std::size_t a = 0; a < g.motif_atoms.size(); ++a) {
        rec.molecule.atoms.push_back(g.motif_atoms[a]);
        const auto& p = g.motif_coords[a];
        rec.molecule.coords.push_back(cx + rot[0] * p[0] + rot[1] * p[1] + rot[2] * p[2]);
        rec.molecule.coords.push_back(cy + rot[3] * p[0] + rot[4] * p[1] + rot[5] * p[2]);
        rec.molecule.coords.push_back(cz + rot[6] * p[0] + rot[7] * p[1] + rot[8] * p[2]);
        if (a > 0) {
          topo.bonds.push_back({static_cast<int>(base), static_cast<int>(base + a)});
        }
      }
      if (m > 0) {
        topo.bonds.push_back({static_cast<int>(anchor_of_motif[m - 1]),
                              static_cast<int>(base)});
        topo.rotatable.push_back({static_cast<int>(anchor_of_motif[m - 1]),
                                  static_cast<int>(base)});
      }
    }
    // Angles from all bonded triples.
    {
      const std::size_t na = rec.molecule.atoms.size();
      std::vector<std::vector<int>> adj(na);
      for (const auto& b : topo.bonds) {
        adj[b[0]].push_back(b[1]);
        adj[b[1]].push_back(b[0]);
      }
      for (std::size_t j = 0; j < na; ++j) {
        for (std::size_t a = 0; a < adj[j].size(); ++a) {
          for (std::size_t b = a + 1; b < adj[j].size(); ++b) {
            topo.angles.push_back(
                {adj[j][a], static_cast<int>(j), adj[j][b]});
          }
        }
      }
      // Torsions along the backbone links (second motif atom when present).
      for (std::size_t m = 0; m + 1 < groups.size(); ++m) {
        const int i = static_cast<int>(anchor_of_motif[m] + 1);
        const int j = static_cast<int>(anchor_of_motif[m]);
        const int k = static_cast<int>(anchor_of_motif[m + 1]);
        const int l = static_cast<int>(anchor_of_motif[m + 1] + 1);
        topo.torsions.push_back({i, j, k, l});
      }
    }
    rec.molecule.topology = std::move(topo);

    // Spectra: Lorentzian peaks from every group instance over a noise floor.
    std::array<spectra::Spectrum, 3> set;
    for (std::size_t k = 0; k < 3; ++k) {
      const spectra::GridSpec& grid = grids.grids[k];
      set[k].kind = grid.kind;
      set[k].intensities.assign(grid.length, 0.0);
      for (auto& v : set[k].intensities) v = kNoiseFloor * rng.uniform();
    }
    for (std::size_t g : groups) {
      for (const auto& peak : table.groups[g].peaks) {
        const spectra::GridSpec& grid = grids.of(peak.kind);
        auto& dst = set[static_cast<std::size_t>(peak.kind)].intensities;
        const double span = grid.step * static_cast<double>(grid.length - 1);
        const double center = grid.start + peak.center_frac * span;
        const double width = std::max(peak.width_frac * span, grid.step);
        for (std::size_t i = 0; i < grid.length; ++i) {
          const double nu = grid.start + grid.step * static_cast<double>(i);
          const double d = nu - center;
          dst[i] += peak.height * width * width / (d * d + width * width);
        }
      }
    }
    for (std::size_t k = 0; k < 3; ++k) set[k] = spectra::preprocess(set[k]);
    rec.spectra_set = std::move(set);

    if (compositions) compositions->push_back(groups);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace molspec::pipeline
