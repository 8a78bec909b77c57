#include "opnet/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "opnet/harmonics.hpp"

namespace opnet {

// ---------------------------------------------------------------------------
// Structure

namespace {

Mat3 invert3(const Mat3& m) {
  auto det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
             m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
             m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
  if (std::abs(det) < 1e-300) throw std::invalid_argument("singular lattice");
  Mat3 inv;
  inv(0, 0) = (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / det;
  inv(0, 1) = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / det;
  inv(0, 2) = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / det;
  inv(1, 0) = (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / det;
  inv(1, 1) = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / det;
  inv(1, 2) = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / det;
  inv(2, 0) = (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / det;
  inv(2, 1) = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / det;
  inv(2, 2) = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / det;
  return inv;
}

}  // namespace

Vec3 Structure::to_fractional(const Vec3& cartesian) const {
  if (!lattice) throw std::logic_error("to_fractional on a finite cluster");
  // p = f1 a1 + f2 a2 + f3 a3 with rows a_i, i.e. p = L^T f.
  return invert3(lattice->transposed()) * cartesian;
}

Vec3 Structure::to_cartesian(const Vec3& fractional) const {
  if (!lattice) throw std::logic_error("to_cartesian on a finite cluster");
  return lattice->transposed() * fractional;
}

void Structure::reduce_to_cell() {
  if (!lattice) return;
  for (Vec3& p : positions) {
    Vec3 f = to_fractional(p);
    for (int i = 0; i < 3; ++i) f[i] -= std::floor(f[i]);
    p = to_cartesian(f);
  }
}

Vec3 Structure::min_image(const Vec3& from, const Vec3& to) const {
  Vec3 d = to - from;
  if (!lattice) return d;
  Vec3 f = to_fractional(d);
  for (int i = 0; i < 3; ++i) f[i] -= std::round(f[i]);
  return to_cartesian(f);
}

void Structure::validate() const {
  if (positions.size() != species.size())
    throw std::invalid_argument("species labels do not match positions");
  for (const Vec3& p : positions)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::invalid_argument("non-finite position");
  for (int sp : species)
    if (sp < 0 || sp >= static_cast<int>(species_names.size()))
      throw std::invalid_argument("species id out of range");
}

// ---------------------------------------------------------------------------
// Square <-> rectangle

namespace {

Tensor2 signals_from_displacements(const std::vector<Vec3>& displacements, int lmax) {
  const int dim = (lmax + 1) * (lmax + 1);
  Tensor2 t(static_cast<int>(displacements.size()), dim);
  for (std::size_t i = 0; i < displacements.size(); ++i) {
    if (displacements[i].norm() == 0.0) continue;  // zero signal
    GeometricTensor s = project_points({displacements[i]}, lmax);
    std::copy(s.coeffs.begin(), s.coeffs.end(), t.v.begin() + i * dim);
  }
  return t;
}

Tensor2 one_hot(const Structure& s, int n_species) {
  Tensor2 t(s.size(), n_species);
  for (int i = 0; i < s.size(); ++i) t.at(i, s.species[i]) = 1.0;
  return t;
}

}  // namespace

void Task::finalize() {
  structure.validate();
  if (targets.rows != structure.size())
    throw std::invalid_argument("target rows do not match structure");
  if (targets.cols != (out_lmax + 1) * (out_lmax + 1))
    throw std::invalid_argument("target columns do not match out_lmax");
  for (int site : slot_sites)
    if (site < 0 || site >= structure.size())
      throw std::invalid_argument("slot site out of range");
  if (!slot_sig.entries.empty()) {
    switch (sharing) {
      case Sharing::Global:
        tie_class.assign(slot_sites.size(), 0);
        n_classes = 1;
        break;
      case Sharing::PerSite:
        tie_class.resize(slot_sites.size());
        for (std::size_t i = 0; i < slot_sites.size(); ++i)
          tie_class[i] = static_cast<int>(i);
        n_classes = static_cast<int>(slot_sites.size());
        break;
      case Sharing::Custom:
        if (tie_class.size() != slot_sites.size())
          throw std::invalid_argument("custom sharing needs a tie class per slot site");
        n_classes = *std::max_element(tie_class.begin(), tie_class.end()) + 1;
        break;
    }
    if (!component_mask.empty() &&
        component_mask.size() != static_cast<std::size_t>(slot_sig.dim()))
      throw std::invalid_argument("component mask length mismatch");
  } else {
    n_classes = 0;
    tie_class.clear();
  }
}

Task make_square_rect_task(DeformDirection direction, int slot_lmax) {
  // Sign-matched vertices: (s1, s2) -> (1.5 s1, 0.5 s2).
  const double signs[4][2] = {{1, 1}, {-1, 1}, {-1, -1}, {1, -1}};
  std::vector<Vec3> square, rect;
  for (auto& s : signs) {
    square.push_back({s[0], s[1], 0});
    rect.push_back({1.5 * s[0], 0.5 * s[1], 0});
  }
  const bool to_rect = direction == DeformDirection::SquareToRect;
  const std::vector<Vec3>& from = to_rect ? square : rect;
  const std::vector<Vec3>& to = to_rect ? rect : square;

  Task task;
  task.name = to_rect ? "square_to_rect" : "rect_to_square";
  task.structure.positions = from;
  task.structure.species = {0, 0, 0, 0};
  task.structure.species_names = {"P"};
  task.n_species = 1;
  task.species_features = one_hot(task.structure, 1);
  task.out_lmax = 5;
  std::vector<Vec3> displacements(4);
  for (int i = 0; i < 4; ++i) displacements[i] = to[i] - from[i];
  task.targets = signals_from_displacements(displacements, task.out_lmax);
  task.slot_sig = slot_signature(slot_lmax);
  task.slot_sites = {0, 1, 2, 3};
  task.sharing = Sharing::Global;
  task.lambda_sparsity = 1e-2;
  task.lambda_degree = 0.0;
  task.finalize();
  return task;
}

// ---------------------------------------------------------------------------
// Perovskite

Structure make_perovskite_structure() {
  Structure s;
  s.lattice = Mat3::diagonal(2.0);
  s.species_names = {"A", "B", "X"};
  // B on corners first (discovery slots live there), then A, then X.
  for (int n1 = 0; n1 < 2; ++n1)
    for (int n2 = 0; n2 < 2; ++n2)
      for (int n3 = 0; n3 < 2; ++n3) {
        s.positions.push_back({double(n1), double(n2), double(n3)});
        s.species.push_back(1);
      }
  for (int n1 = 0; n1 < 2; ++n1)
    for (int n2 = 0; n2 < 2; ++n2)
      for (int n3 = 0; n3 < 2; ++n3) {
        s.positions.push_back({n1 + 0.5, n2 + 0.5, n3 + 0.5});
        s.species.push_back(0);
      }
  const Vec3 offsets[3] = {{0.5, 0, 0}, {0, 0.5, 0}, {0, 0, 0.5}};
  for (int n1 = 0; n1 < 2; ++n1)
    for (int n2 = 0; n2 < 2; ++n2)
      for (int n3 = 0; n3 < 2; ++n3)
        for (const Vec3& off : offsets) {
          s.positions.push_back(Vec3{double(n1), double(n2), double(n3)} + off);
          s.species.push_back(2);
        }
  s.reduce_to_cell();
  s.validate();
  return s;
}

Vec3 tilt_pseudovector(const TiltSpec& spec, int n1, int n2, int n3) {
  const double sa = ((n2 + n3) % 2 == 0) ? 1.0 : -1.0;
  const double sb = ((n1 + n2 + n3) % 2 == 0) ? 1.0 : -1.0;
  const double wa =
      spec.pattern == TiltSpec::Pattern::APlusBMinusBMinus ? spec.theta_a * sa : 0.0;
  return {wa, spec.theta_b * sb, spec.theta_b * sb};
}

Task make_perovskite_task(const TiltSpec& spec, bool constrained) {
  if (std::abs(spec.theta_a) > 0.2 || std::abs(spec.theta_b) > 0.2)
    throw std::invalid_argument("tilt angles beyond the small-rotation regime");
  Task task;
  task.name = constrained ? "perovskite_constrained" : "perovskite";
  task.structure = make_perovskite_structure();
  task.n_species = 3;
  task.species_features = one_hot(task.structure, 3);
  task.out_lmax = 5;

  const Structure& s = task.structure;
  std::vector<Vec3> displacements(s.size(), {0, 0, 0});
  for (int i = 0; i < s.size(); ++i) {
    if (s.species[i] != 2) continue;  // only X sites move
    // The two adjacent B sites sit half a cell away along one axis.
    Vec3 sum{0, 0, 0};
    int found = 0;
    for (int j = 0; j < s.size(); ++j) {
      if (s.species[j] != 1) continue;
      Vec3 bond = s.min_image(s.positions[j], s.positions[i]);  // B -> X
      if (std::abs(bond.norm() - 0.5) > 1e-9) continue;
      const Vec3& bp = s.positions[j];
      Vec3 omega = tilt_pseudovector(spec, int(std::lround(bp.x)), int(std::lround(bp.y)),
                                     int(std::lround(bp.z)));
      sum = sum + omega.cross(bond);
      ++found;
    }
    if (found != 2) throw std::logic_error("X site without two B neighbors");
    displacements[i] = sum * 0.5;
  }
  task.targets = signals_from_displacements(displacements, task.out_lmax);

  task.slot_sig = slot_signature(5);
  for (int i = 0; i < s.size(); ++i)
    if (s.species[i] == 1) task.slot_sites.push_back(i);
  task.lambda_sparsity = 1e-2;
  task.lambda_degree = 5e-3;

  if (!constrained) {
    task.sharing = Sharing::PerSite;
  } else {
    // Non-adjacent B sites (same corner parity) share one slot; the
    // pseudovector component along the in-phase axis is masked to zero.
    task.sharing = Sharing::Custom;
    for (int site : task.slot_sites) {
      const Vec3& p = s.positions[site];
      int parity = (std::lround(p.x) + std::lround(p.y) + std::lround(p.z)) % 2;
      task.tie_class.push_back(parity);
    }
    task.component_mask.assign(task.slot_sig.dim(), 1.0);
    // 1_e block is the first slot entry, ordered (y, z, x): x sits last.
    task.component_mask[2] = 0.0;
  }
  task.finalize();
  return task;
}

std::string structure_to_xyz(const Structure& s) {
  std::ostringstream os;
  os << s.size() << "\n";
  if (s.lattice) {
    const Mat3& l = *s.lattice;
    os << "Lattice=\"";
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) os << l(i, j) << (i == 2 && j == 2 ? "" : " ");
    os << "\" Properties=species:S:1:pos:R:3\n";
  } else {
    os << "Properties=species:S:1:pos:R:3\n";
  }
  for (int i = 0; i < s.size(); ++i) {
    os << s.species_names[s.species[i]] << " " << s.positions[i].x << " "
       << s.positions[i].y << " " << s.positions[i].z << "\n";
  }
  return os.str();
}

}  // namespace opnet
