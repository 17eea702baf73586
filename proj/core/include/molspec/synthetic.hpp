#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "molspec/dataset.hpp"
#include "molspec/spectra.hpp"

namespace molspec::pipeline {

// A synthetic "functional group": a small rigid geometry motif plus the peaks
// it stamps on the spectra. Groups couple the two modalities: a molecule's
// group composition determines both its 3-D structure and its peaks.
struct GroupSpec {
  std::string name;
  std::vector<int> motif_atoms;                     // atomic numbers
  std::vector<std::array<double, 3>> motif_coords;  // local template

  struct Peak {
    spectra::SpectrumKind kind;
    double center_frac;  // position along the grid in [0, 1]
    double width_frac;   // Lorentzian HWHM as a fraction of the grid span
    double height;       // raw intensity before log preprocessing
  };
  std::vector<Peak> peaks;
};

struct SyntheticSpecTable {
  std::vector<GroupSpec> groups;
  static const SyntheticSpecTable& builtin();
};

std::size_t group_index(const SyntheticSpecTable& table, const std::string& name);
// Grid index of a peak's declared center on a concrete grid.
std::size_t peak_center_index(const GroupSpec::Peak& peak,
                              const spectra::GridSpec& grid);

// Deterministic generator: each molecule assembles 2-4 group motifs (4-12
// atoms) along a jittered backbone; spectra are sums of the groups' Lorentzian
// peaks plus a small noise floor, then log-preprocessed. `compositions`, when
// given, receives the group indices of each record.
std::vector<MoleculeRecord> gen_synthetic(
    std::size_t n, std::uint64_t seed, const spectra::GridSet& grids,
    const SyntheticSpecTable& table = SyntheticSpecTable::builtin(),
    std::vector<std::vector<std::size_t>>* compositions = nullptr);

}  // namespace molspec::pipeline
