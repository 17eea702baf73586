#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "molspec/ops.hpp"
#include "molspec/rng.hpp"
#include "molspec/tensor.hpp"

namespace molspec::encoder3d {

struct Topology {
  std::vector<std::array<int, 2>> bonds;
  std::vector<std::array<int, 3>> angles;    // angle at the middle atom
  std::vector<std::array<int, 4>> torsions;  // dihedral about the middle bond
  std::vector<std::array<int, 2>> rotatable;
};

struct Molecule {
  std::vector<int> atoms;      // atomic numbers, 1..118
  std::vector<double> coords;  // length 3N, Angstrom, same atom order as atoms
  std::optional<Topology> topology;

  std::size_t num_atoms() const { return atoms.size(); }
};

struct EdgeList {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::size_t size() const { return src.size(); }
};

// Directed edges (u,v) for every pair with 0 < |x_u - x_v| < cutoff.
EdgeList build_radius_graph(std::span<const double> coords, double cutoff);

struct NoisySample {
  std::vector<double> clean;
  std::vector<double> noisy;
  std::vector<double> noise;  // noisy - clean, the regression target
  double tau = 0.0;
};

NoisySample add_coord_noise(std::span<const double> x0, double tau, Rng& rng);
NoisySample add_coord_noise(std::span<const double> x0, double tau,
                            std::uint64_t seed);

// --- internal-coordinate geometry ---------------------------------------

double bond_length(std::span<const double> coords, int i, int j);
double bond_angle(std::span<const double> coords, int i, int j, int k);
// IUPAC sign convention, cis = 0; result in (-pi, pi].
double dihedral_angle(std::span<const double> coords, int i, int j, int k, int l);

struct InternalCoords {
  std::vector<double> bond_lengths;
  std::vector<double> bond_angles;
  std::vector<double> torsion_angles;
};

InternalCoords internal_coords(std::span<const double> coords,
                               const Topology& topology);

// Rotates the side of `bond` not containing the lower-indexed bond atom by
// `angle` about the bond axis. Fails if the bond lies on a ring.
std::vector<double> rotate_about_bond(std::span<const double> coords,
                                      const std::vector<std::array<int, 2>>& bonds,
                                      std::array<int, 2> bond, double angle);

struct TorsionJacobian {
  std::size_t n_atoms = 0;
  std::vector<std::array<int, 2>> rotatable;
  std::vector<double> c;  // row-major (3N) x m

  std::size_t num_bonds() const { return rotatable.size(); }
  double at(std::size_t row, std::size_t col) const {
    return c[row * rotatable.size() + col];
  }
};

// Central finite differences of the per-bond rotation map, delta in radians.
TorsionJacobian compute_torsion_jacobian(
    std::span<const double> coords, const std::vector<std::array<int, 2>>& bonds,
    const std::vector<std::array<int, 2>>& rotatable, double delta = 1e-4);

// --- energy oracles ------------------------------------------------------

// (1/(2 tau^2)) (x - x0)^T (x - x0)
double energy_coord(std::span<const double> x, std::span<const double> x0,
                    double tau);

// 0.5 d^T (tau^2 I + sigma^2 C C^T)^{-1} d, solved through the rank-m block.
double energy_frad(std::span<const double> x, std::span<const double> x0,
                   const TorsionJacobian& jac, double tau_f, double sigma_f);

// 0.5 sum k^B (r-r0)^2 + 0.5 sum k^A (th-th0)^2 + 0.5 sum k^T wrap(phi-phi0)^2
double energy_slide(const InternalCoords& ic, const InternalCoords& eq,
                    std::span<const double> k_bond, std::span<const double> k_angle,
                    std::span<const double> k_torsion);

// --- message-passing encoder ---------------------------------------------

struct Encoder3DConfig {
  std::size_t width = 256;   // d; matches the spectrum encoder width
  std::size_t layers = 4;
  std::size_t n_rbf = 32;
  double cutoff = 5.0;  // Angstrom

  static Encoder3DConfig desk();
  static Encoder3DConfig toy();
};

struct MoleculeView {
  std::span<const int> atoms;
  std::span<const double> coords;
};

struct Encode3DResult {
  numerics::Tensor z_x;        // B x d, E(3)-invariant
  numerics::Tensor node_pred;  // (sum N_b) x 3, rotation-equivariant
  std::vector<std::size_t> offsets;  // B+1 atom offsets into node_pred
};

// Invariant-feature / equivariant-update message passing over the radius
// graph. Node features see only interatomic distances; the per-atom output is
// a weighted sum of relative position vectors.
class Encoder3D {
 public:
  Encoder3D(const Encoder3DConfig& cfg, std::uint64_t seed);

  const Encoder3DConfig& config() const { return cfg_; }
  numerics::ParamSet& params() { return params_; }
  const numerics::ParamSet& params() const { return params_; }

  Encode3DResult encode_batch(const std::vector<MoleculeView>& mols) const;
  Encode3DResult encode(const MoleculeView& mol) const;

 private:
  Encoder3DConfig cfg_;
  numerics::ParamSet params_;
};

}  // namespace molspec::encoder3d
