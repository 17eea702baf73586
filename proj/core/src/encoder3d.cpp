#include "molspec/encoder3d.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>

namespace molspec::encoder3d {

using numerics::ParamSet;
using numerics::Tensor;

namespace {

std::array<double, 3> atom_pos(std::span<const double> coords, int i) {
  return {coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]};
}

std::array<double, 3> diff(const std::array<double, 3>& a,
                           const std::array<double, 3>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

std::array<double, 3> cross3(const std::array<double, 3>& a,
                             const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

double norm3(const std::array<double, 3>& a) { return std::sqrt(dot3(a, a)); }

void check_atom_index(std::span<const double> coords, int i, const char* what) {
  if (i < 0 || static_cast<std::size_t>(3 * i + 2) >= coords.size()) {
    throw std::invalid_argument(std::string(what) + ": atom index out of range");
  }
}

// Wrap an angle difference into (-pi, pi].
double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

}  // namespace

EdgeList build_radius_graph(std::span<const double> coords, double cutoff) {
  if (cutoff <= 0.0) throw std::invalid_argument("build_radius_graph: cutoff must be positive");
  const std::size_t n = coords.size() / 3;
  EdgeList edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      if (u == v) continue;
      const double dx = coords[3 * u] - coords[3 * v];
      const double dy = coords[3 * u + 1] - coords[3 * v + 1];
      const double dz = coords[3 * u + 2] - coords[3 * v + 2];
      const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (d > 0.0 && d < cutoff) {
        edges.src.push_back(u);
        edges.dst.push_back(v);
      }
    }
  }
  return edges;
}

NoisySample add_coord_noise(std::span<const double> x0, double tau, Rng& rng) {
  if (tau < 0.0) throw std::invalid_argument("add_coord_noise: negative noise scale");
  NoisySample s;
  s.tau = tau;
  s.clean.assign(x0.begin(), x0.end());
  s.noise.resize(x0.size());
  s.noisy.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    s.noisy[i] = s.clean[i] + tau * rng.normal();
    // Recorded as the representable difference so that the regression target
    // equals x - x0 exactly.
    s.noise[i] = s.noisy[i] - s.clean[i];
  }
  return s;
}

NoisySample add_coord_noise(std::span<const double> x0, double tau,
                            std::uint64_t seed) {
  Rng rng(seed);
  return add_coord_noise(x0, tau, rng);
}

double bond_length(std::span<const double> coords, int i, int j) {
  check_atom_index(coords, i, "bond_length");
  check_atom_index(coords, j, "bond_length");
  return norm3(diff(atom_pos(coords, i), atom_pos(coords, j)));
}

double bond_angle(std::span<const double> coords, int i, int j, int k) {
  check_atom_index(coords, i, "bond_angle");
  check_atom_index(coords, j, "bond_angle");
  check_atom_index(coords, k, "bond_angle");
  const auto a = diff(atom_pos(coords, i), atom_pos(coords, j));
  const auto b = diff(atom_pos(coords, k), atom_pos(coords, j));
  const double na = norm3(a), nb = norm3(b);
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("bond_angle: zero-length bond");
  }
  const double c = std::clamp(dot3(a, b) / (na * nb), -1.0, 1.0);
  return std::acos(c);
}

double dihedral_angle(std::span<const double> coords, int i, int j, int k, int l) {
  check_atom_index(coords, i, "dihedral_angle");
  check_atom_index(coords, l, "dihedral_angle");
  const auto xi = atom_pos(coords, i), xj = atom_pos(coords, j);
  const auto xk = atom_pos(coords, k), xl = atom_pos(coords, l);
  const auto b1 = diff(xj, xi), b2 = diff(xk, xj), b3 = diff(xl, xk);
  const double nb2 = norm3(b2);
  if (nb2 == 0.0) throw std::invalid_argument("dihedral_angle: zero-length axis bond");
  const auto n1 = cross3(b1, b2), n2 = cross3(b2, b3);
  const double scale = std::max({norm3(b1), nb2, norm3(b3)});
  if (norm3(n1) < 1e-10 * scale * scale || norm3(n2) < 1e-10 * scale * scale) {
    throw std::invalid_argument("dihedral_angle: collinear atoms, dihedral undefined");
  }
  const std::array<double, 3> b2u = {b2[0] / nb2, b2[1] / nb2, b2[2] / nb2};
  const auto m = cross3(n1, b2u);
  return std::atan2(dot3(m, n2), dot3(n1, n2));
}

InternalCoords internal_coords(std::span<const double> coords,
                               const Topology& topology) {
  InternalCoords ic;
  ic.bond_lengths.reserve(topology.bonds.size());
  for (const auto& b : topology.bonds) {
    ic.bond_lengths.push_back(bond_length(coords, b[0], b[1]));
  }
  ic.bond_angles.reserve(topology.angles.size());
  for (const auto& a : topology.angles) {
    ic.bond_angles.push_back(bond_angle(coords, a[0], a[1], a[2]));
  }
  ic.torsion_angles.reserve(topology.torsions.size());
  for (const auto& t : topology.torsions) {
    ic.torsion_angles.push_back(dihedral_angle(coords, t[0], t[1], t[2], t[3]));
  }
  return ic;
}

std::vector<double> rotate_about_bond(std::span<const double> coords,
                                      const std::vector<std::array<int, 2>>& bonds,
                                      std::array<int, 2> bond, double angle) {
  const std::size_t n = coords.size() / 3;
  const int lo = std::min(bond[0], bond[1]);
  const int hi = std::max(bond[0], bond[1]);
  check_atom_index(coords, lo, "rotate_about_bond");
  check_atom_index(coords, hi, "rotate_about_bond");

  // Adjacency without the rotation bond itself.
  std::vector<std::vector<int>> adj(n);
  for (const auto& b : bonds) {
    if ((b[0] == lo && b[1] == hi) || (b[0] == hi && b[1] == lo)) continue;
    adj[b[0]].push_back(b[1]);
    adj[b[1]].push_back(b[0]);
  }
  // Side not containing the lower-indexed bond atom.
  std::vector<char> side(n, 0);
  std::deque<int> queue{hi};
  side[hi] = 1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[u]) {
      if (!side[v]) {
        side[v] = 1;
        queue.push_back(v);
      }
    }
  }
  if (side[lo]) {
    throw std::invalid_argument("rotate_about_bond: bond lies on a ring");
  }

  const auto p = atom_pos(coords, lo);
  auto axis = diff(atom_pos(coords, hi), p);
  const double axis_norm = norm3(axis);
  if (axis_norm == 0.0) {
    throw std::invalid_argument("rotate_about_bond: zero-length bond");
  }
  for (auto& v : axis) v /= axis_norm;

  const double c = std::cos(angle), s = std::sin(angle);
  std::vector<double> out(coords.begin(), coords.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (!side[i]) continue;
    const auto v = diff(atom_pos(coords, static_cast<int>(i)), p);
    const auto kxv = cross3(axis, v);
    const double kdv = dot3(axis, v);
    // Rodrigues rotation about the unit axis through p.
    for (int d = 0; d < 3; ++d) {
      out[3 * i + d] = p[d] + v[d] * c + kxv[d] * s + axis[d] * kdv * (1.0 - c);
    }
  }
  return out;
}

TorsionJacobian compute_torsion_jacobian(
    std::span<const double> coords, const std::vector<std::array<int, 2>>& bonds,
    const std::vector<std::array<int, 2>>& rotatable, double delta) {
  TorsionJacobian jac;
  jac.n_atoms = coords.size() / 3;
  jac.rotatable = rotatable;
  const std::size_t m = rotatable.size();
  jac.c.assign(3 * jac.n_atoms * m, 0.0);
  for (std::size_t col = 0; col < m; ++col) {
    const auto plus = rotate_about_bond(coords, bonds, rotatable[col], delta);
    const auto minus = rotate_about_bond(coords, bonds, rotatable[col], -delta);
    for (std::size_t r = 0; r < 3 * jac.n_atoms; ++r) {
      jac.c[r * m + col] = (plus[r] - minus[r]) / (2.0 * delta);
    }
  }
  return jac;
}

double energy_coord(std::span<const double> x, std::span<const double> x0,
                    double tau) {
  if (tau <= 0.0) throw std::invalid_argument("energy_coord: tau must be positive");
  if (x.size() != x0.size()) throw std::invalid_argument("energy_coord: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x0[i];
    acc += d * d;
  }
  return acc / (2.0 * tau * tau);
}

double energy_frad(std::span<const double> x, std::span<const double> x0,
                   const TorsionJacobian& jac, double tau_f, double sigma_f) {
  if (tau_f <= 0.0) throw std::invalid_argument("energy_frad: singular system, tau_f must be positive");
  if (x.size() != x0.size() || x.size() != 3 * jac.n_atoms) {
    throw std::invalid_argument("energy_frad: shape mismatch");
  }
  const std::size_t m = jac.num_bonds();
  std::vector<double> delta(x.size());
  double quad = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    delta[i] = x[i] - x0[i];
    quad += delta[i] * delta[i];
  }
  const double tau2 = tau_f * tau_f;
  if (m == 0 || sigma_f == 0.0) return quad / (2.0 * tau2);

  // Woodbury: Sigma^-1 = I/tau^2 - C (tau^2/sigma^2 I + C^T C)^-1 C^T / tau^4.
  std::vector<double> M(m * m, 0.0);  // tau^2/sigma^2 I + C^T C
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a; b < m; ++b) {
      double acc = 0.0;
      for (std::size_t r = 0; r < x.size(); ++r) acc += jac.c[r * m + a] * jac.c[r * m + b];
      M[a * m + b] = acc;
      M[b * m + a] = acc;
    }
    M[a * m + a] += tau2 / (sigma_f * sigma_f);
  }
  std::vector<double> ct_delta(m, 0.0);
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t a = 0; a < m; ++a) ct_delta[a] += jac.c[r * m + a] * delta[r];
  }
  // Cholesky solve of the small SPD system M y = C^T delta.
  std::vector<double> L(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = M[i * m + j];
      for (std::size_t k = 0; k < j; ++k) acc -= L[i * m + k] * L[j * m + k];
      if (i == j) {
        if (acc <= 0.0) throw std::invalid_argument("energy_frad: singular system");
        L[i * m + i] = std::sqrt(acc);
      } else {
        L[i * m + j] = acc / L[j * m + j];
      }
    }
  }
  std::vector<double> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = ct_delta[i];
    for (std::size_t k = 0; k < i; ++k) acc -= L[i * m + k] * y[k];
    y[i] = acc / L[i * m + i];
  }
  std::vector<double> z(m);
  for (std::size_t ii = m; ii-- > 0;) {
    double acc = y[ii];
    for (std::size_t k = ii + 1; k < m; ++k) acc -= L[k * m + ii] * z[k];
    z[ii] = acc / L[ii * m + ii];
  }
  double corr = 0.0;
  for (std::size_t a = 0; a < m; ++a) corr += ct_delta[a] * z[a];
  return quad / (2.0 * tau2) - corr / (2.0 * tau2 * tau2);
}

double energy_slide(const InternalCoords& ic, const InternalCoords& eq,
                    std::span<const double> k_bond, std::span<const double> k_angle,
                    std::span<const double> k_torsion) {
  if (ic.bond_lengths.size() != eq.bond_lengths.size() ||
      ic.bond_angles.size() != eq.bond_angles.size() ||
      ic.torsion_angles.size() != eq.torsion_angles.size() ||
      k_bond.size() != ic.bond_lengths.size() ||
      k_angle.size() != ic.bond_angles.size() ||
      k_torsion.size() != ic.torsion_angles.size()) {
    throw std::invalid_argument("energy_slide: dimension mismatch");
  }
  auto check_stiffness = [](std::span<const double> k) {
    for (double v : k) {
      if (v < 0.0) throw std::invalid_argument("energy_slide: negative stiffness");
    }
  };
  check_stiffness(k_bond);
  check_stiffness(k_angle);
  check_stiffness(k_torsion);

  double e = 0.0;
  for (std::size_t i = 0; i < k_bond.size(); ++i) {
    const double d = ic.bond_lengths[i] - eq.bond_lengths[i];
    e += 0.5 * k_bond[i] * d * d;
  }
  for (std::size_t i = 0; i < k_angle.size(); ++i) {
    const double d = ic.bond_angles[i] - eq.bond_angles[i];
    e += 0.5 * k_angle[i] * d * d;
  }
  for (std::size_t i = 0; i < k_torsion.size(); ++i) {
    const double d = wrap_angle(ic.torsion_angles[i] - eq.torsion_angles[i]);
    e += 0.5 * k_torsion[i] * d * d;
  }
  return e;
}

// --- Encoder3D -------------------------------------------------------------

Encoder3DConfig Encoder3DConfig::desk() { return {32, 4, 16, 5.0}; }
Encoder3DConfig Encoder3DConfig::toy() { return {8, 2, 6, 5.0}; }

namespace {

constexpr std::size_t kMaxAtomicNumber = 118;

void init_linear(ParamSet& params, const std::string& name, std::size_t fan_in,
                 std::size_t fan_out, Rng& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(1.0 / static_cast<double>(fan_in));
  params.add(name + "/w", Tensor::uniform({fan_in, fan_out}, -bound, bound, rng));
  params.add(name + "/b", Tensor::zeros({fan_out}, true));
}

Tensor linear(const ParamSet& params, const std::string& name, const Tensor& x) {
  return numerics::add_rowvec(numerics::matmul(x, params.get(name + "/w")),
                              params.get(name + "/b"));
}

}  // namespace

Encoder3D::Encoder3D(const Encoder3DConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const std::size_t d = cfg_.width;
  Rng rng(derive_seed(seed, "init/enc3d"));
  params_.add("enc3d/embed",
              Tensor::normal({kMaxAtomicNumber + 1, d}, 0.0, 0.5, rng));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string base = "enc3d/layer" + std::to_string(l);
    init_linear(params_, base + "/edge1", 2 * d + cfg_.n_rbf, d, rng);
    init_linear(params_, base + "/edge2", d, d, rng);
    init_linear(params_, base + "/node1", 2 * d, d, rng);
    init_linear(params_, base + "/node2", d, d, rng);
  }
  init_linear(params_, "enc3d/head1", 2 * d + cfg_.n_rbf, d, rng);
  // Small head output keeps the initial noise prediction near zero.
  init_linear(params_, "enc3d/head2", d, 1, rng, 0.1);
  // Gain 3 puts the pooled embedding on the same scale as the spectrum one.
  const double pool_bound = 3.0 * std::sqrt(1.0 / d);
  params_.add("enc3d/pool/w",
              Tensor::uniform({d, d}, -pool_bound, pool_bound, rng));
}

Encode3DResult Encoder3D::encode_batch(const std::vector<MoleculeView>& mols) const {
  const std::size_t d = cfg_.width;
  std::size_t n_total = 0;
  std::vector<std::size_t> offsets{0};
  for (const auto& m : mols) {
    if (m.atoms.size() * 3 != m.coords.size()) {
      throw std::invalid_argument("encode: atoms and coordinates disagree");
    }
    for (double v : m.coords) {
      if (!std::isfinite(v)) throw std::invalid_argument("encode: non-finite coordinate");
    }
    for (int a : m.atoms) {
      if (a < 1 || a > static_cast<int>(kMaxAtomicNumber)) {
        throw std::invalid_argument("encode: atomic number out of range");
      }
    }
    n_total += m.atoms.size();
    offsets.push_back(n_total);
  }
  if (n_total == 0) throw std::invalid_argument("encode: empty batch");

  // One disjoint graph over the whole batch.
  std::vector<std::size_t> atom_rows;
  atom_rows.reserve(n_total);
  std::vector<std::size_t> mol_of_atom(n_total);
  std::vector<std::size_t> e_src, e_dst;
  std::vector<double> rel;  // per-edge x_dst - x_src
  std::vector<double> dist;
  for (std::size_t b = 0; b < mols.size(); ++b) {
    const auto& m = mols[b];
    const std::size_t off = offsets[b];
    for (std::size_t i = 0; i < m.atoms.size(); ++i) {
      atom_rows.push_back(static_cast<std::size_t>(m.atoms[i]));
      mol_of_atom[off + i] = b;
    }
    EdgeList edges = build_radius_graph(m.coords, cfg_.cutoff);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const std::size_t u = edges.src[e], v = edges.dst[e];
      e_src.push_back(off + u);
      e_dst.push_back(off + v);
      double dsq = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double dk = m.coords[3 * v + k] - m.coords[3 * u + k];
        rel.push_back(dk);
        dsq += dk * dk;
      }
      dist.push_back(std::sqrt(dsq));
    }
  }
  const std::size_t n_edges = e_src.size();

  // Gaussian radial basis over [0, cutoff]; constants w.r.t. the parameters.
  const std::size_t r = cfg_.n_rbf;
  std::vector<double> rbf(n_edges * r);
  const double spacing = cfg_.cutoff / static_cast<double>(r > 1 ? r - 1 : 1);
  const double beta = 1.0 / (2.0 * spacing * spacing);
  for (std::size_t e = 0; e < n_edges; ++e) {
    for (std::size_t k = 0; k < r; ++k) {
      const double mu = spacing * static_cast<double>(k);
      const double dd = dist[e] - mu;
      rbf[e * r + k] = std::exp(-beta * dd * dd);
    }
  }
  Tensor rbf_t = Tensor::from_data({n_edges, r}, std::move(rbf));
  Tensor rel_t = Tensor::from_data({n_edges, 3}, std::move(rel));

  using namespace numerics;
  Tensor h = gather_rows(params_.get("enc3d/embed"), atom_rows);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string base = "enc3d/layer" + std::to_string(l);
    Tensor hs = gather_rows(h, e_src);
    Tensor hd = gather_rows(h, e_dst);
    Tensor msg = linear(params_, base + "/edge2",
                        gelu(linear(params_, base + "/edge1",
                                    concat_cols({hs, hd, rbf_t}))));
    Tensor agg = scatter_add_rows(msg, e_dst, n_total);
    Tensor upd = linear(params_, base + "/node2",
                        gelu(linear(params_, base + "/node1", concat_cols({h, agg}))));
    h = add(h, upd);
  }

  Encode3DResult out;
  out.offsets = offsets;
  {
    Tensor hs = gather_rows(h, e_src);
    Tensor hd = gather_rows(h, e_dst);
    Tensor w = linear(params_, "enc3d/head2",
                      gelu(linear(params_, "enc3d/head1",
                                  concat_cols({hs, hd, rbf_t}))));
    // node_pred_i = sum_j w_ij (x_i - x_j): equivariant by construction.
    Tensor weighted = mul_colvec(rel_t, w);
    out.node_pred = scatter_add_rows(weighted, e_dst, n_total);
  }
  {
    Tensor pooled = scatter_add_rows(h, mol_of_atom, mols.size());
    std::vector<double> inv_count(mols.size());
    for (std::size_t b = 0; b < mols.size(); ++b) {
      inv_count[b] = 1.0 / static_cast<double>(offsets[b + 1] - offsets[b]);
    }
    // Mean pooling keeps z_x magnitudes comparable across molecule sizes.
    out.z_x = matmul(scale_rows(pooled, inv_count), params_.get("enc3d/pool/w"));
  }
  return out;
}

Encode3DResult Encoder3D::encode(const MoleculeView& mol) const {
  return encode_batch({mol});
}

}  // namespace molspec::encoder3d
