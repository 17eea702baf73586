#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "molspec/encoder3d.hpp"
#include "molspec/rng.hpp"

using namespace molspec;
using namespace molspec::encoder3d;

namespace {

// Rotation matrix from a random unit quaternion.
std::array<double, 9> random_rotation(Rng& rng) {
  double q[4];
  double norm = 0.0;
  for (auto& v : q) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : q) v /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
          2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
}

std::vector<double> apply_rotation(const std::vector<double>& coords,
                                   const std::array<double, 9>& r) {
  std::vector<double> out(coords.size());
  for (std::size_t i = 0; i < coords.size() / 3; ++i) {
    for (int a = 0; a < 3; ++a) {
      out[3 * i + a] = r[3 * a] * coords[3 * i] + r[3 * a + 1] * coords[3 * i + 1] +
                       r[3 * a + 2] * coords[3 * i + 2];
    }
  }
  return out;
}

Molecule random_molecule(Rng& rng, std::size_t n) {
  Molecule m;
  const int elements[4] = {1, 6, 7, 8};
  for (std::size_t i = 0; i < n; ++i) {
    m.atoms.push_back(elements[rng.below(4)]);
    for (int a = 0; a < 3; ++a) m.coords.push_back(rng.uniform(-1.2, 1.2));
  }
  return m;
}

}  // namespace

TEST_CASE("radius graph enumerates close directed pairs") {
  std::vector<double> two = {0, 0, 0, 1, 0, 0};
  EdgeList e = build_radius_graph(two, 5.0);
  CHECK(e.size() == 2);

  std::vector<double> one = {0, 0, 0};
  CHECK(build_radius_graph(one, 5.0).size() == 0);

  // Equilateral triangle, side 1.
  std::vector<double> tri = {0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2.0, 0};
  CHECK(build_radius_graph(tri, 1.5).size() == 6);

  // Duplicate positions: distance zero excluded.
  std::vector<double> dup = {0, 0, 0, 0, 0, 0};
  CHECK(build_radius_graph(dup, 5.0).size() == 0);

  CHECK_THROWS_AS(build_radius_graph(two, 0.0), std::invalid_argument);
}

TEST_CASE("coordinate noise is seeded and has the declared scale") {
  std::vector<double> x0 = {0.1, -0.2, 0.3, 1.0, 2.0, -1.0};
  NoisySample a = add_coord_noise(x0, 0.04, 7ULL);
  NoisySample b = add_coord_noise(x0, 0.04, 7ULL);
  CHECK(a.noisy == b.noisy);

  NoisySample zero = add_coord_noise(x0, 0.0, 7ULL);
  CHECK(zero.noisy == x0);

  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(a.noise[i] == a.noisy[i] - a.clean[i]);
  }

  // 1e4 draws on a 5-atom molecule: per-coordinate variance approx tau^2.
  Rng rng(derive_seed(3, "noise-stat"));
  std::vector<double> x5(15, 0.0);
  double acc = 0.0;
  std::size_t count = 0;
  for (int rep = 0; rep < 10000; ++rep) {
    NoisySample s = add_coord_noise(x5, 0.04, rng);
    for (double v : s.noise) {
      acc += v * v;
      ++count;
    }
  }
  const double var = acc / static_cast<double>(count);
  CHECK(var > 0.0015);
  CHECK(var < 0.0017);
}

TEST_CASE("internal coordinates match hand geometry") {
  std::vector<double> bond = {0, 0, 0, 0, 0, 1.5};
  CHECK(bond_length(bond, 0, 1) == doctest::Approx(1.5));

  std::vector<double> angle = {1, 0, 0, 0, 0, 0, 0, 1, 0};
  CHECK(bond_angle(angle, 0, 1, 2) == doctest::Approx(M_PI / 2));

  std::vector<double> cis = {0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0};
  CHECK(dihedral_angle(cis, 0, 1, 2, 3) == doctest::Approx(0.0));

  std::vector<double> trans = {0, 0, 0, 1, 0, 0, 1, 1, 0, 2, 1, 0};
  CHECK(std::abs(dihedral_angle(trans, 0, 1, 2, 3)) == doctest::Approx(M_PI));

  std::vector<double> collinear = {0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 1, 0};
  CHECK_THROWS_AS(dihedral_angle(collinear, 0, 1, 2, 3), std::invalid_argument);
}

TEST_CASE("internal coordinates are E(3)-invariant") {
  Rng rng(11);
  Topology topo;
  topo.bonds = {{0, 1}, {1, 2}, {2, 3}};
  topo.angles = {{0, 1, 2}, {1, 2, 3}};
  topo.torsions = {{0, 1, 2, 3}};
  std::vector<double> coords = {0.1, 0, 0, 1.4, 0.2, 0, 1.9, 1.4, 0.3, 3.0, 1.5, 1.1};
  InternalCoords base = internal_coords(coords, topo);

  for (int rep = 0; rep < 20; ++rep) {
    auto rot = random_rotation(rng);
    auto moved = apply_rotation(coords, rot);
    for (std::size_t i = 0; i < moved.size(); i += 3) {
      moved[i] += 2.5;
      moved[i + 1] -= 1.0;
      moved[i + 2] += 0.25;
    }
    InternalCoords ic = internal_coords(moved, topo);
    for (std::size_t i = 0; i < base.bond_lengths.size(); ++i) {
      CHECK(std::abs(ic.bond_lengths[i] - base.bond_lengths[i]) < 1e-10);
    }
    for (std::size_t i = 0; i < base.bond_angles.size(); ++i) {
      CHECK(std::abs(ic.bond_angles[i] - base.bond_angles[i]) < 1e-10);
    }
    for (std::size_t i = 0; i < base.torsion_angles.size(); ++i) {
      CHECK(std::abs(ic.torsion_angles[i] - base.torsion_angles[i]) < 1e-10);
    }
  }
}

TEST_CASE("torsion jacobian shape, axis rows, and ring rejection") {
  std::vector<double> chain = {0, 0, 0, 1.5, 0, 0, 2.0, 1.4, 0, 3.4, 1.5, 0.2};
  std::vector<std::array<int, 2>> bonds = {{0, 1}, {1, 2}, {2, 3}};

  TorsionJacobian empty = compute_torsion_jacobian(chain, bonds, {});
  CHECK(empty.num_bonds() == 0);
  CHECK(empty.c.empty());

  TorsionJacobian jac = compute_torsion_jacobian(chain, bonds, {{1, 2}});
  CHECK(jac.num_bonds() == 1);
  // Atoms 1 and 2 span the axis; atom 2 is on it, atoms 0,1 are on the fixed
  // side. Only atom 3 moves.
  for (int atom : {0, 1, 2}) {
    for (int d = 0; d < 3; ++d) CHECK(jac.at(3 * atom + d, 0) == doctest::Approx(0.0));
  }
  double mobile = 0.0;
  for (int d = 0; d < 3; ++d) mobile += std::abs(jac.at(9 + d, 0));
  CHECK(mobile > 0.1);

  std::vector<std::array<int, 2>> ring = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  CHECK_THROWS_AS(compute_torsion_jacobian(chain, ring, {{1, 2}}),
                  std::invalid_argument);
}

TEST_CASE("torsion jacobian linearization error decays at second order") {
  Rng rng(23);
  for (int rep = 0; rep < 5; ++rep) {
    // Randomized zigzag chain of 6 atoms; all interior bonds rotatable.
    std::vector<double> coords;
    for (int i = 0; i < 6; ++i) {
      coords.push_back(1.4 * i + rng.uniform(-0.05, 0.05));
      coords.push_back((i % 2) * 0.9 + rng.uniform(-0.05, 0.05));
      coords.push_back(0.3 * i + rng.uniform(-0.05, 0.05));
    }
    std::vector<std::array<int, 2>> bonds = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}};
    std::vector<std::array<int, 2>> rotatable = {{1, 2}, {2, 3}, {3, 4}};
    TorsionJacobian jac = compute_torsion_jacobian(coords, bonds, rotatable);

    std::vector<double> dir(rotatable.size());
    double dn = 0.0;
    for (auto& v : dir) {
      v = rng.uniform(-1, 1);
      dn += v * v;
    }
    dn = std::sqrt(dn);
    for (auto& v : dir) v /= dn;

    auto exact_error = [&](double step) {
      std::vector<double> moved = coords;
      for (std::size_t j = 0; j < rotatable.size(); ++j) {
        moved = rotate_about_bond(moved, bonds, rotatable[j], step * dir[j]);
      }
      double err = 0.0;
      for (std::size_t r = 0; r < coords.size(); ++r) {
        double lin = coords[r];
        for (std::size_t j = 0; j < rotatable.size(); ++j) {
          lin += jac.at(r, j) * step * dir[j];
        }
        err += (moved[r] - lin) * (moved[r] - lin);
      }
      return std::sqrt(err);
    };

    const double e1 = exact_error(0.01);
    const double e2 = exact_error(0.02);
    const double e4 = exact_error(0.04);
    REQUIRE(e1 > 0.0);
    CHECK(e2 / e1 == doctest::Approx(4.0).epsilon(0.15));
    CHECK(e4 / e2 == doctest::Approx(4.0).epsilon(0.15));
  }
}

TEST_CASE("energy_coord matches the quadratic form") {
  std::vector<double> x0 = {0, 0, 0};
  CHECK(energy_coord(x0, x0, 0.04) == 0.0);

  std::vector<double> x = {1, 0, 0};
  CHECK(energy_coord(x, x0, 1.0) == doctest::Approx(0.5));
  CHECK(energy_coord(x, x0, 2.0) == doctest::Approx(0.125));  // doubling tau quarters

  CHECK_THROWS_AS(energy_coord(x, x0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(energy_coord(x, x0, -1.0), std::invalid_argument);
}

TEST_CASE("energy_coord gradient equals (x-x0)/tau^2 by finite differences") {
  Rng rng(31);
  std::vector<double> x0(9), x(9);
  for (std::size_t i = 0; i < 9; ++i) {
    x0[i] = rng.uniform(-1, 1);
    x[i] = x0[i] + rng.uniform(-0.2, 0.2);
  }
  const double tau = 0.3;
  const double h = 1e-6;
  for (std::size_t i = 0; i < 9; ++i) {
    std::vector<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (energy_coord(xp, x0, tau) - energy_coord(xm, x0, tau)) / (2 * h);
    const double analytic = (x[i] - x0[i]) / (tau * tau);
    CHECK(fd == doctest::Approx(analytic).epsilon(1e-6));
  }
}

TEST_CASE("energy_frad analytic cases and coord reduction") {
  // m = 0 reduces exactly to energy_coord at tau_f.
  std::vector<double> x0 = {0.1, 0.2, -0.3, 1.0, 0.0, 0.5};
  std::vector<double> x = {0.15, 0.1, -0.32, 1.1, -0.05, 0.52};
  TorsionJacobian no_bonds;
  no_bonds.n_atoms = 2;
  CHECK(energy_frad(x, x0, no_bonds, 0.7, 1.3) == energy_coord(x, x0, 0.7));

  CHECK(energy_frad(x0, x0, no_bonds, 0.7, 1.3) == 0.0);

  // N=1, m=1, C=(1,0,0)^T, tau=sigma=1, delta=(1,0,0): Sigma=diag(2,1,1).
  TorsionJacobian unit;
  unit.n_atoms = 1;
  unit.rotatable = {{0, 0}};
  unit.c = {1.0, 0.0, 0.0};
  std::vector<double> origin = {0, 0, 0};
  std::vector<double> dx = {1, 0, 0};
  CHECK(energy_frad(dx, origin, unit, 1.0, 1.0) == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(energy_frad(dx, origin, unit, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("energy_frad never exceeds energy_coord when sigma > 0") {
  Rng rng(41);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 2 + rng.below(4);
    std::vector<double> x0(3 * n), x(3 * n);
    for (std::size_t i = 0; i < 3 * n; ++i) {
      x0[i] = rng.uniform(-2, 2);
      x[i] = x0[i] + rng.uniform(-0.3, 0.3);
    }
    TorsionJacobian jac;
    jac.n_atoms = n;
    const std::size_t m = 1 + rng.below(3);
    jac.rotatable.assign(m, {0, 1});
    jac.c.resize(3 * n * m);
    for (auto& v : jac.c) v = rng.uniform(-1, 1);
    const double tau = rng.uniform(0.2, 1.5);
    const double sigma = rng.uniform(0.1, 1.5);
    CHECK(energy_frad(x, x0, jac, tau, sigma) <= energy_coord(x, x0, tau) + 1e-12);
  }
}

TEST_CASE("energy_slide quadratic terms and torsion wrapping") {
  InternalCoords eq{{1.5}, {2.0}, {0.5}};
  CHECK(energy_slide(eq, eq, std::vector<double>{2.0}, std::vector<double>{1.0},
                     std::vector<double>{1.0}) == 0.0);

  InternalCoords stretched{{1.6}, {2.0}, {0.5}};
  CHECK(energy_slide(stretched, eq, std::vector<double>{2.0},
                     std::vector<double>{1.0}, std::vector<double>{1.0}) ==
        doctest::Approx(0.01).epsilon(1e-12));

  InternalCoords wrapped{{1.5}, {2.0}, {0.5 + 2.0 * M_PI}};
  CHECK(energy_slide(wrapped, eq, std::vector<double>{2.0},
                     std::vector<double>{1.0}, std::vector<double>{1.0}) ==
        doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(
      energy_slide(eq, eq, std::vector<double>{-2.0}, std::vector<double>{1.0},
                   std::vector<double>{1.0}),
      std::invalid_argument);
}

TEST_CASE("encoder is E(3)-invariant in z_x and equivariant in node_pred") {
  Rng rng(55);
  Encoder3D enc(Encoder3DConfig::desk(), 99);

  for (int rep = 0; rep < 10; ++rep) {
    Molecule mol = random_molecule(rng, 3 + rng.below(10));
    auto base = enc.encode({mol.atoms, mol.coords});

    // translation
    std::vector<double> shifted = mol.coords;
    for (std::size_t i = 0; i < shifted.size(); i += 3) {
      shifted[i] += 5.0;
      shifted[i + 1] += 5.0;
      shifted[i + 2] += 5.0;
    }
    auto moved = enc.encode({mol.atoms, shifted});
    for (std::size_t i = 0; i < base.z_x.size(); ++i) {
      CHECK(std::abs(moved.z_x.data()[i] - base.z_x.data()[i]) < 1e-10);
    }
    for (std::size_t i = 0; i < base.node_pred.size(); ++i) {
      CHECK(std::abs(moved.node_pred.data()[i] - base.node_pred.data()[i]) < 1e-10);
    }

    // rotation: z_x invariant, node_pred rotated
    auto rot = random_rotation(rng);
    auto rotated = enc.encode({mol.atoms, apply_rotation(mol.coords, rot)});
    for (std::size_t i = 0; i < base.z_x.size(); ++i) {
      CHECK(std::abs(rotated.z_x.data()[i] - base.z_x.data()[i]) < 1e-8);
    }
    for (std::size_t i = 0; i < mol.num_atoms(); ++i) {
      for (int a = 0; a < 3; ++a) {
        const double expect = rot[3 * a] * base.node_pred.at(i, 0) +
                              rot[3 * a + 1] * base.node_pred.at(i, 1) +
                              rot[3 * a + 2] * base.node_pred.at(i, 2);
        CHECK(std::abs(rotated.node_pred.at(i, a) - expect) < 1e-8);
      }
    }

    // permutation: z_x invariant, node_pred rows permuted
    std::vector<std::size_t> perm(mol.num_atoms());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    Molecule pm;
    for (std::size_t j = 0; j < perm.size(); ++j) {
      pm.atoms.push_back(mol.atoms[perm[j]]);
      for (int a = 0; a < 3; ++a) pm.coords.push_back(mol.coords[3 * perm[j] + a]);
    }
    auto permuted = enc.encode({pm.atoms, pm.coords});
    for (std::size_t i = 0; i < base.z_x.size(); ++i) {
      CHECK(std::abs(permuted.z_x.data()[i] - base.z_x.data()[i]) < 1e-8);
    }
    for (std::size_t j = 0; j < perm.size(); ++j) {
      for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(permuted.node_pred.at(j, a) - base.node_pred.at(perm[j], a)) <
              1e-8);
      }
    }
  }
}

TEST_CASE("encoder handles single atoms and rejects bad input") {
  Encoder3D enc(Encoder3DConfig::toy(), 1);
  std::vector<int> atoms = {6};
  std::vector<double> coords = {0.0, 0.0, 0.0};
  auto res = enc.encode({atoms, coords});
  CHECK(res.z_x.cols() == enc.config().width);
  for (std::size_t i = 0; i < 3; ++i) CHECK(res.node_pred.data()[i] == 0.0);

  std::vector<double> bad = {0.0, 0.0, std::nan("")};
  CHECK_THROWS_AS(enc.encode({atoms, bad}), std::invalid_argument);
  std::vector<int> badatom = {200};
  CHECK_THROWS_AS(enc.encode({badatom, coords}), std::invalid_argument);
}

TEST_CASE("batched encode matches per-molecule encode") {
  Rng rng(77);
  Encoder3D enc(Encoder3DConfig::toy(), 5);
  Molecule a = random_molecule(rng, 4);
  Molecule b = random_molecule(rng, 7);
  auto ra = enc.encode({a.atoms, a.coords});
  auto rb = enc.encode({b.atoms, b.coords});
  auto batch = enc.encode_batch({{a.atoms, a.coords}, {b.atoms, b.coords}});
  CHECK(batch.offsets == std::vector<std::size_t>{0, 4, 11});
  for (std::size_t j = 0; j < enc.config().width; ++j) {
    CHECK(batch.z_x.at(0, j) == doctest::Approx(ra.z_x.at(0, j)).epsilon(1e-12));
    CHECK(batch.z_x.at(1, j) == doctest::Approx(rb.z_x.at(0, j)).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    for (int d = 0; d < 3; ++d) {
      CHECK(batch.node_pred.at(i, d) == doctest::Approx(ra.node_pred.at(i, d)));
    }
  }
}
