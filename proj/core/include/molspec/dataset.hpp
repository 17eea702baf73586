#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "molspec/encoder3d.hpp"
#include "molspec/spectra.hpp"

namespace molspec::pipeline {

struct MoleculeRecord {
  std::string id;
  encoder3d::Molecule molecule;
  // UV-Vis, IR, Raman in kind order; present together or not at all.
  std::optional<std::array<spectra::Spectrum, 3>> spectra_set;

  bool has_spectra() const { return spectra_set.has_value(); }
};

struct LoadReport {
  std::vector<MoleculeRecord> records;
  std::vector<std::string> errors;    // per-record, with line numbers
  std::vector<std::string> warnings;  // e.g. empty file
};

// JSON-lines reader. Malformed or invalid records are reported and skipped;
// spectra are length-checked against the grids and never padded or truncated.
LoadReport load_jsonl(const std::string& path, const spectra::GridSet& grids);

void save_jsonl(const std::vector<MoleculeRecord>& records,
                const std::string& path);

}  // namespace molspec::pipeline
