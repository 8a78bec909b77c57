#pragma once

#include <utility>
#include <vector>

#include "opnet/irreps.hpp"

namespace opnet {

// Real spherical harmonics in Racah normalization: Y_l^0(z_hat) = 1 and
// sum_m Y_l^m(u)^2 = 1 for any unit u. Blocks are ordered m = -l..l with
// sine components at m < 0, so the L=1 block reads (y, z, x).

// Natural-parity ladder 0_e + 1_o + ... + lmax evaluated at a unit
// direction. Throws if |direction| deviates from 1 by more than 1e-9.
GeometricTensor eval_sh(int lmax, const Vec3& direction);

// Values of a single degree at a unit direction, m = -l..l.
void eval_sh_degree(int l, const Vec3& direction, double* out);

// Equal-angle latitude-longitude grid. Rows are theta_j = j*pi/n for
// j = 0..n (poles included); columns are phi_k = 2*pi*k/(2n). Theta
// weights are Clenshaw-Curtis, exact for the polynomial band of interest,
// so the weights sum to 4*pi to machine precision.
struct SphereGrid {
  int n_theta = 0;  // rows = n+1
  int n_phi = 0;    // columns = 2n
  std::vector<Vec3> directions;  // row-major, size n_theta * n_phi
  std::vector<double> weights;
  std::vector<double> thetas;  // per row
  std::vector<double> phis;    // per column

  static SphereGrid build(int n);
  // Shared default-resolution grid (n = 64), built once.
  static const SphereGrid& standard();

  int index(int j, int k) const { return j * n_phi + k; }
};

// A SphereSignal is a GeometricTensor whose signature is exactly the
// natural-parity ladder up to some lmax, multiplicity 1 per degree.
bool is_sphere_signal(const GeometricTensor& t);

// Sum_J F_J . Y_J(direction).
double eval_signal(const GeometricTensor& signal, const Vec3& direction);

// Point-cloud projection: sum_r |r| Y(r_hat), then one global rescale so
// that the reconstructed maximum (grid argmax polished to convergence)
// equals max |r|. Zero-length points contribute nothing; an empty cloud
// gives the zero signal.
GeometricTensor project_points(const std::vector<Vec3>& points, int lmax,
                               const SphereGrid& grid = SphereGrid::standard());

// Signal values at every grid direction, in grid index order.
std::vector<double> sample_signal(const GeometricTensor& signal, const SphereGrid& grid);

// Local maxima of the sampled signal with value >= rel_threshold * global
// maximum, each returned as direction * value. Positions are polished by
// local refinement past grid resolution. Non-positive signals give an
// empty list.
std::vector<Vec3> peak_vectors(const GeometricTensor& signal, const SphereGrid& grid,
                               double rel_threshold = 0.9);

// Local maximum refinement used by project_points and peak_vectors:
// shrinking tangent-plane search started from `start`.
std::pair<Vec3, double> refine_local_max(const GeometricTensor& signal, Vec3 start,
                                         double initial_step);

}  // namespace opnet
