#pragma once

#include <string>

#include "opnet/structure.hpp"
#include "opnet/training.hpp"

namespace opnet {

// Square <-> rectangle deformation in the xy plane. Square vertices sit at
// (+-1, +-1, 0) and rectangle vertices at (+-1.5, +-0.5, 0), sign-matched,
// so the mirror planes lie on the x and y axes and the symmetry-breaking
// quadrupole is of x^2 - y^2 type. Targets encode the per-vertex
// displacement (destination minus source) as sphere signals.
enum class DeformDirection { SquareToRect, RectToSquare };

Task make_square_rect_task(DeformDirection direction, int slot_lmax = 5);

// ABX3 perovskite, 2x2x2 supercell of the cubic cell (lattice constant 1):
// B on cell corners, A on cell centers, X on edge midpoints.
Structure make_perovskite_structure();

// Octahedral tilt patterns: per-B rotation pseudovectors with checkerboard
// signs; X targets are the projected displacements omega x (r_X - r_B)
// averaged over the two adjacent B sites.
struct TiltSpec {
  enum class Pattern { APlusBMinusBMinus, AZeroBMinusBMinus };
  Pattern pattern = Pattern::APlusBMinusBMinus;
  double theta_a = 0.1;
  double theta_b = 0.1;
};

// Rotation pseudovector of the B site with integer cell coordinates n.
Vec3 tilt_pseudovector(const TiltSpec& spec, int n1, int n2, int n3);

// When constrained, the slot's pseudovector component along the in-phase
// axis is masked to zero and non-adjacent B sites share tied slots.
Task make_perovskite_task(const TiltSpec& spec, bool constrained);

// Extended-XYZ text block for external visualization.
std::string structure_to_xyz(const Structure& s);

}  // namespace opnet
