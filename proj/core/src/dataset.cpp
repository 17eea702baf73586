#include "molspec/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace molspec::pipeline {

using nlohmann::json;

namespace {

MoleculeRecord parse_record(const json& j, const spectra::GridSet& grids) {
  MoleculeRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.molecule.atoms = j.at("atoms").get<std::vector<int>>();
  if (rec.molecule.atoms.empty()) throw std::runtime_error("no atoms");
  for (int a : rec.molecule.atoms) {
    if (a < 1 || a > 118) throw std::runtime_error("atomic number out of range");
  }

  const auto& coords = j.at("coords");
  if (!coords.is_array() || coords.size() != rec.molecule.atoms.size()) {
    throw std::runtime_error("coords must list one [x,y,z] per atom");
  }
  for (const auto& row : coords) {
    if (!row.is_array() || row.size() != 3) {
      throw std::runtime_error("coords must list one [x,y,z] per atom");
    }
    for (const auto& v : row) {
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw std::runtime_error("non-finite coordinate");
      rec.molecule.coords.push_back(x);
    }
  }

  if (j.contains("spectra")) {
    const auto& sp = j.at("spectra");
    std::array<spectra::Spectrum, 3> set;
    for (std::size_t k = 0; k < 3; ++k) {
      const spectra::SpectrumKind kind = spectra::kAllKinds[k];
      const char* name = spectra::kind_name(kind);
      if (!sp.contains(name)) {
        throw std::runtime_error(std::string("spectra present but missing ") + name);
      }
      set[k].kind = kind;
      set[k].intensities = sp.at(name).get<std::vector<double>>();
      const std::size_t expect = grids.of(kind).length;
      if (set[k].intensities.size() != expect) {
        throw std::runtime_error(std::string(name) + ": expected " +
                                 std::to_string(expect) + " values, got " +
                                 std::to_string(set[k].intensities.size()));
      }
      for (double v : set[k].intensities) {
        if (!std::isfinite(v) || v < 0.0) {
          throw std::runtime_error(std::string(name) +
                                   ": intensities must be finite and non-negative");
        }
      }
    }
    rec.spectra_set = std::move(set);
  }

  if (j.contains("topology")) {
    const auto& tp = j.at("topology");
    encoder3d::Topology topo;
    const int n = static_cast<int>(rec.molecule.atoms.size());
    auto check = [n](int idx) {
      if (idx < 0 || idx >= n) throw std::runtime_error("topology index out of range");
      return idx;
    };
    if (tp.contains("bonds")) {
      for (const auto& b : tp.at("bonds")) {
        topo.bonds.push_back({check(b.at(0).get<int>()), check(b.at(1).get<int>())});
      }
    }
    if (tp.contains("angles")) {
      for (const auto& a : tp.at("angles")) {
        topo.angles.push_back({check(a.at(0).get<int>()), check(a.at(1).get<int>()),
                               check(a.at(2).get<int>())});
      }
    }
    if (tp.contains("torsions")) {
      for (const auto& t : tp.at("torsions")) {
        topo.torsions.push_back({check(t.at(0).get<int>()), check(t.at(1).get<int>()),
                                 check(t.at(2).get<int>()), check(t.at(3).get<int>())});
      }
    }
    if (tp.contains("rotatable")) {
      for (const auto& r : tp.at("rotatable")) {
        topo.rotatable.push_back({check(r.at(0).get<int>()), check(r.at(1).get<int>())});
      }
    }
    rec.molecule.topology = std::move(topo);
  }
  return rec;
}

}  // namespace

LoadReport load_jsonl(const std::string& path, const spectra::GridSet& grids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);

  LoadReport report;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      report.records.push_back(parse_record(j, grids));
    } catch (const std::exception& e) {
      report.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (line_no == 0) report.warnings.push_back("dataset file is empty: " + path);
  return report;
}

void save_jsonl(const std::vector<MoleculeRecord>& records,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& rec : records) {
    json j;
    j["id"] = rec.id;
    j["atoms"] = rec.molecule.atoms;
    json coords = json::array();
    const std::size_t n = rec.molecule.num_atoms();
    for (std::size_t i = 0; i < n; ++i) {
      coords.push_back({rec.molecule.coords[3 * i], rec.molecule.coords[3 * i + 1],
                        rec.molecule.coords[3 * i + 2]});
    }
    j["coords"] = std::move(coords);
    if (rec.spectra_set) {
      json sp;
      for (std::size_t k = 0; k < 3; ++k) {
        sp[spectra::kind_name(spectra::kAllKinds[k])] =
            (*rec.spectra_set)[k].intensities;
      }
      j["spectra"] = std::move(sp);
    }
    if (rec.molecule.topology) {
      const auto& t = *rec.molecule.topology;
      json tp;
      tp["bonds"] = t.bonds;
      tp["angles"] = t.angles;
      tp["torsions"] = t.torsions;
      tp["rotatable"] = t.rotatable;
      j["topology"] = std::move(tp);
    }
    out << j.dump() << "\n";
  }
  if (!out.good()) throw std::runtime_error("failed writing " + path);
}

}  // namespace molspec::pipeline
