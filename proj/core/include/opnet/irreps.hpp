#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "opnet/geometry.hpp"

namespace opnet {

// Basis conventions used throughout:
//   * Components of a degree-L block are ordered m = -L..L.
//   * The real L=1 basis is ordered (y, z, x), so the m=0 component lies
//     along z and eval_sh(1, x_hat) = (0, 0, 1).
//   * Parity is a label independent of L: 1_o is a vector, 1_e a
//     pseudovector. Inversion multiplies odd blocks by -1.

enum class Parity : std::uint8_t { Even, Odd };

inline int parity_sign(Parity p) { return p == Parity::Even ? 1 : -1; }
inline Parity parity_product(Parity a, Parity b) {
  return a == b ? Parity::Even : Parity::Odd;
}
// Parity carried by spherical harmonics of degree l.
inline Parity natural_parity(int l) { return l % 2 == 0 ? Parity::Even : Parity::Odd; }

struct Irrep {
  int l = 0;
  Parity parity = Parity::Even;

  int dim() const { return 2 * l + 1; }
  bool operator==(const Irrep&) const = default;
  std::string to_string() const;  // e.g. "2e"
};

// Ordered list of (multiplicity, irrep). Component layout is entry-major,
// then multiplicity slot, then m: offset(entry, u, m) =
// entry_offset + u * (2l+1) + (m + l).
struct IrrepsSignature {
  struct Entry {
    int mult = 1;
    Irrep ir;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;

  IrrepsSignature() = default;
  explicit IrrepsSignature(std::vector<Entry> e) : entries(std::move(e)) {}

  int dim() const;
  int entry_offset(std::size_t entry) const;
  bool operator==(const IrrepsSignature&) const = default;
  std::string to_string() const;  // e.g. "1x0e+4x1o"
  static IrrepsSignature parse(const std::string& text);

  // 0_e + 1_o + 2_e + ... + lmax with parity (-1)^l, multiplicity 1.
  static IrrepsSignature natural_ladder(int lmax);
};

// Element of O(3): proper rotation stored as axis-angle, plus an inversion
// flag. Rotations compose through 3x3 matrices; inversion flags by XOR.
struct GroupElement {
  Vec3 axis{0, 0, 1};
  double angle = 0.0;
  bool inversion = false;

  static GroupElement identity() { return {}; }
  static GroupElement from_axis_angle(const Vec3& axis, double angle, bool inversion = false);
  static GroupElement from_matrix(const Mat3& rotation, bool inversion = false);

  Mat3 rotation_matrix() const;
  // Full O(3) matrix acting on ordinary vectors (includes inversion).
  Mat3 cartesian_matrix() const;
  GroupElement inverse() const;
};

GroupElement compose(const GroupElement& a, const GroupElement& b);

// Coefficients of a direct sum of irreps.
struct GeometricTensor {
  IrrepsSignature sig;
  std::vector<double> coeffs;

  GeometricTensor() = default;
  explicit GeometricTensor(IrrepsSignature s)
      : sig(std::move(s)), coeffs(sig.dim(), 0.0) {}
  GeometricTensor(IrrepsSignature s, std::vector<double> c);

  double norm() const;
};

// Dense square matrix, row-major; used for Wigner D blocks.
struct DMatrix {
  int n = 0;
  std::vector<double> a;

  DMatrix() = default;
  explicit DMatrix(int n_) : n(n_), a(static_cast<std::size_t>(n_) * n_, 0.0) {}
  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * n + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * n + c]; }
};

// Real coupling tensor for (l1, l2, l3), shape (2l1+1) x (2l2+1) x (2l3+1),
// flattened with m3 fastest. Frobenius norm 1; invariant under simultaneous
// rotation of all three indices. Throws std::invalid_argument when the
// triangle rule |l1-l2| <= l3 <= l1+l2 fails ("incompatible degrees").
struct Wigner3j {
  int l1 = 0, l2 = 0, l3 = 0;
  std::vector<double> c;

  double at(int m1, int m2, int m3) const {
    int d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
    return c[(static_cast<std::size_t>(m1 + l1) * d2 + (m2 + l2)) * d3 + (m3 + l3)];
  }
};

Wigner3j wigner_3j(int l1, int l2, int l3);

// Rotation part of the degree-L Wigner matrix in the real basis. Parity
// signs are applied separately by rep_apply.
DMatrix wigner_D(int l, const GroupElement& g);

GeometricTensor rep_apply(const IrrepsSignature& sig, const GroupElement& g,
                          const GeometricTensor& t);

// Haar-uniform rotation; inversion flag uniform when enabled.
GroupElement random_group_element(std::mt19937_64& rng, bool include_inversion);

// Precomputed D blocks for one group element, reusable across tensors.
struct RepBlocks {
  std::vector<DMatrix> d;  // index = degree l
  bool inversion = false;
  static RepBlocks build(int lmax, const GroupElement& g);
  void apply(const IrrepsSignature& sig, const double* in, double* out) const;
};

}  // namespace opnet
