#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "opnet/harmonics.hpp"
#include "opnet/scenarios.hpp"
#include "opnet/symmetry.hpp"

using namespace opnet;

namespace {

GeometricTensor row_signal(const Tensor2& rows, int i, int lmax) {
  GeometricTensor t(IrrepsSignature::natural_ladder(lmax));
  for (int c = 0; c < rows.cols; ++c) t.coeffs[c] = rows.at(i, c);
  return t;
}

}  // namespace

TEST_CASE("square/rectangle task geometry and targets") {
  Task rect_to_sq = make_square_rect_task(DeformDirection::RectToSquare);
  REQUIRE(rect_to_sq.structure.size() == 4);

  // Vertex (1.5, 0.5, 0) moves by (-0.5, +0.5, 0).
  int idx = -1;
  for (int i = 0; i < 4; ++i)
    if ((rect_to_sq.structure.positions[i] - Vec3{1.5, 0.5, 0}).norm() < 1e-12) idx = i;
  REQUIRE(idx >= 0);
  std::vector<Vec3> peaks =
      peak_vectors(row_signal(rect_to_sq.targets, idx, 5), SphereGrid::standard());
  REQUIRE(peaks.size() == 1);
  Vec3 expected{-0.5, 0.5, 0};
  CHECK((peaks[0] - expected).norm() < 0.02 * expected.norm() + 0.02);

  // The reverse task negates the displacements vertex-by-vertex (the
  // vertex lists are sign-matched, so targets mirror through projection).
  Task sq_to_rect = make_square_rect_task(DeformDirection::SquareToRect);
  for (int i = 0; i < 4; ++i) {
    std::vector<Vec3> fwd =
        peak_vectors(row_signal(sq_to_rect.targets, i, 5), SphereGrid::standard());
    std::vector<Vec3> rev =
        peak_vectors(row_signal(rect_to_sq.targets, i, 5), SphereGrid::standard());
    REQUIRE(fwd.size() == 1);
    REQUIRE(rev.size() == 1);
    CHECK((fwd[0] + rev[0]).norm() < 0.04);
  }

  CHECK(sq_to_rect.sharing == Sharing::Global);
  CHECK(sq_to_rect.n_classes == 1);
  CHECK(sq_to_rect.slot_sig.dim() == 70);
  CHECK(make_square_rect_task(DeformDirection::SquareToRect, 2).slot_sig.dim() == 16);
}

TEST_CASE("square targets map into each other only under rectangle-compatible elements") {
  Task task = make_square_rect_task(DeformDirection::SquareToRect);
  CandidateGroup group = CandidateGroup::cubic48();
  const Structure& s = task.structure;
  const IrrepsSignature out_sig = IrrepsSignature::natural_ladder(5);

  TensorField target_field{s, out_sig, task.targets};
  StabilizerReport st = stabilizer(target_field, group, 1e-8);
  // Positions alone keep 16 elements; the displacement targets cut that to
  // the rectangle's 8.
  CHECK(st.elements.size() == 8);

  TensorField positions_only{s, IrrepsSignature::parse("1x0e"), Tensor2(4, 1)};
  for (int i = 0; i < 4; ++i) positions_only.values.at(i, 0) = 1.0;
  CHECK(stabilizer(positions_only, group, 1e-8).elements.size() == 16);
}

TEST_CASE("perovskite structure counts and distances") {
  Structure s = make_perovskite_structure();
  CHECK(s.size() == 40);
  int na = 0, nb = 0, nx = 0;
  for (int sp : s.species) {
    if (sp == 0) ++na;
    if (sp == 1) ++nb;
    if (sp == 2) ++nx;
  }
  CHECK(na == 8);
  CHECK(nb == 8);
  CHECK(nx == 24);

  // Nearest B-X distance is half a cell.
  double min_bx = 1e300;
  for (int i = 0; i < s.size(); ++i)
    for (int j = 0; j < s.size(); ++j) {
      if (s.species[i] != 1 || s.species[j] != 2) continue;
      min_bx = std::min(min_bx, s.min_image(s.positions[i], s.positions[j]).norm());
    }
  CHECK(min_bx == doctest::Approx(0.5));
}

TEST_CASE("tilt targets: magnitudes, bond-perpendicularity, shared-X consistency") {
  TiltSpec spec;
  spec.theta_a = 0.1;
  spec.theta_b = 0.1;
  Task task = make_perovskite_task(spec, false);
  const Structure& s = task.structure;
  const double bound = 0.1 * 0.5 * std::sqrt(2.0) + 1e-12;

  int moved = 0;
  for (int i = 0; i < s.size(); ++i) {
    GeometricTensor sig = row_signal(task.targets, i, 5);
    double norm = sig.norm();
    if (s.species[i] != 2) {
      CHECK(norm == 0.0);  // A and B carry zero signals
      continue;
    }
    REQUIRE(norm > 0.0);
    std::vector<Vec3> peaks = peak_vectors(sig, SphereGrid::standard());
    REQUIRE(peaks.size() == 1);
    Vec3 d = peaks[0];
    CHECK(d.norm() <= bound * 1.03);
    ++moved;

    // Perpendicular to each adjacent B-X bond direction.
    for (int j = 0; j < s.size(); ++j) {
      if (s.species[j] != 1) continue;
      Vec3 bond = s.min_image(s.positions[j], s.positions[i]);
      if (std::abs(bond.norm() - 0.5) > 1e-9) continue;
      CHECK(std::abs(d.dot(bond.normalized())) < 0.03 * d.norm() + 1e-3);
    }
  }
  CHECK(moved == 24);

  // The two adjacent rotations agree on every shared X before averaging.
  for (int i = 0; i < s.size(); ++i) {
    if (s.species[i] != 2) continue;
    std::vector<Vec3> contributions;
    for (int j = 0; j < s.size(); ++j) {
      if (s.species[j] != 1) continue;
      Vec3 bond = s.min_image(s.positions[j], s.positions[i]);
      if (std::abs(bond.norm() - 0.5) > 1e-9) continue;
      const Vec3& bp = s.positions[j];
      Vec3 omega = tilt_pseudovector(spec, int(std::lround(bp.x)), int(std::lround(bp.y)),
                                     int(std::lround(bp.z)));
      contributions.push_back(omega.cross(bond));
    }
    REQUIRE(contributions.size() == 2);
    CHECK((contributions[0] - contributions[1]).norm() < 1e-12);
  }

  // Zero tilt gives identically zero targets.
  TiltSpec zero;
  zero.theta_a = 0;
  zero.theta_b = 0;
  Task flat = make_perovskite_task(zero, false);
  for (double v : flat.targets.v) CHECK(v == 0.0);

  CHECK_THROWS_AS(make_perovskite_task({TiltSpec::Pattern::APlusBMinusBMinus, 0.5, 0.1}, false),
                  std::invalid_argument);
}

TEST_CASE("tilt stabilizer hierarchy: Pnma < Imma < parent") {
  Structure parent = make_perovskite_structure();
  CandidateGroup group = CandidateGroup::cubic_with_half_translations(*parent.lattice);
  const IrrepsSignature out_sig = IrrepsSignature::natural_ladder(5);

  Task pnma = make_perovskite_task({TiltSpec::Pattern::APlusBMinusBMinus, 0.1, 0.1}, false);
  Task imma = make_perovskite_task({TiltSpec::Pattern::AZeroBMinusBMinus, 0.1, 0.1}, false);

  StabilizerReport sp = stabilizer({parent, out_sig, pnma.targets}, group, 1e-8);
  StabilizerReport si = stabilizer({parent, out_sig, imma.targets}, group, 1e-8);

  TensorField parent_field{parent, IrrepsSignature::parse("1x0e"), Tensor2(parent.size(), 1)};
  for (int i = 0; i < parent.size(); ++i) parent_field.values.at(i, 0) = 1.0;
  StabilizerReport s0 = stabilizer(parent_field, group, 1e-8);

  CHECK(s0.elements.size() == 384);
  CHECK(si.elements.size() < s0.elements.size());
  CHECK(sp.elements.size() < si.elements.size());
  for (int e : sp.elements) CHECK(si.contains(e));
  for (int e : si.elements) CHECK(s0.contains(e));
}

TEST_CASE("target round trip through projection reproduces displacements") {
  Task task = make_perovskite_task({TiltSpec::Pattern::APlusBMinusBMinus, 0.1, 0.1}, false);
  const Structure& s = task.structure;
  for (int i = 0; i < s.size(); ++i) {
    if (s.species[i] != 2) continue;
    // Reference displacement from the generating formula.
    Vec3 ref{0, 0, 0};
    for (int j = 0; j < s.size(); ++j) {
      if (s.species[j] != 1) continue;
      Vec3 bond = s.min_image(s.positions[j], s.positions[i]);
      if (std::abs(bond.norm() - 0.5) > 1e-9) continue;
      const Vec3& bp = s.positions[j];
      ref = ref + tilt_pseudovector({TiltSpec::Pattern::APlusBMinusBMinus, 0.1, 0.1},
                                    int(std::lround(bp.x)), int(std::lround(bp.y)),
                                    int(std::lround(bp.z)))
                      .cross(bond) *
                0.5;
    }
    std::vector<Vec3> peaks = peak_vectors(row_signal(task.targets, i, 5), SphereGrid::standard());
    REQUIRE(peaks.size() == 1);
    CHECK((peaks[0] - ref).norm() < 0.02 * ref.norm() + 1e-3);
  }
}

TEST_CASE("constrained task wiring") {
  Task task = make_perovskite_task({}, true);
  CHECK(task.sharing == Sharing::Custom);
  CHECK(task.n_classes == 2);
  REQUIRE(task.component_mask.size() == 70);
  CHECK(task.component_mask[2] == 0.0);  // 1_e x-component masked
  CHECK(task.component_mask[0] == 1.0);
  CHECK(task.component_mask[1] == 1.0);
  CHECK(task.lambda_degree > 0.0);

  // Tied sites never share an X (all pair distances exceed the bond chain).
  const Structure& s = task.structure;
  for (std::size_t a = 0; a < task.slot_sites.size(); ++a)
    for (std::size_t b = a + 1; b < task.slot_sites.size(); ++b) {
      if (task.tie_class[a] != task.tie_class[b]) continue;
      double d = s.min_image(s.positions[task.slot_sites[a]],
                             s.positions[task.slot_sites[b]])
                     .norm();
      CHECK(d > 1.0 + 1e-9);  // adjacent B sites sit exactly one cell apart
    }
}

TEST_CASE("xyz export") {
  Structure s = make_perovskite_structure();
  std::string xyz = structure_to_xyz(s);
  CHECK(xyz.find("40\n") == 0);
  CHECK(xyz.find("Lattice=") != std::string::npos);
  CHECK(xyz.find("B ") != std::string::npos);
}
