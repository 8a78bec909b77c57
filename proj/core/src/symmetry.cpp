#include "opnet/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace opnet {

namespace {

double matrix_distance(const Mat3& a, const Mat3& b) {
  double d = 0;
  for (int i = 0; i < 9; ++i) d = std::max(d, std::abs(a.a[i] - b.a[i]));
  return d;
}

Mat3 invert3(const Mat3& m) {
  double det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
               m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
               m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
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

// Wraps a translation to the one of smallest fractional magnitude; finite
// clusters pass through unchanged.
Vec3 wrap_translation(const Vec3& t, const std::optional<Mat3>& lattice) {
  if (!lattice) return t;
  Mat3 lt = lattice->transposed();
  Vec3 f = invert3(lt) * t;
  for (int i = 0; i < 3; ++i) f[i] -= std::round(f[i]);
  return lt * f;
}

bool ops_equal(const SymOp& a, const SymOp& b, const std::optional<Mat3>& lattice) {
  if (a.g.inversion != b.g.inversion) return false;
  if (matrix_distance(a.g.rotation_matrix(), b.g.rotation_matrix()) > 1e-9) return false;
  return wrap_translation(a.translation - b.translation, lattice).norm() < 1e-9;
}

}  // namespace

CandidateGroup CandidateGroup::cubic48() {
  CandidateGroup grp;
  std::vector<GroupElement> elems{GroupElement::identity()};
  std::vector<GroupElement> gens{
      GroupElement::from_axis_angle({0, 0, 1}, std::numbers::pi / 2),
      GroupElement::from_axis_angle({1, 0, 0}, std::numbers::pi / 2),
      GroupElement{{0, 0, 1}, 0.0, true},
  };
  auto contains = [&](const GroupElement& g) {
    for (const auto& e : elems)
      if (e.inversion == g.inversion &&
          matrix_distance(e.rotation_matrix(), g.rotation_matrix()) < 1e-9)
        return true;
    return false;
  };
  bool grew = true;
  while (grew) {
    grew = false;
    std::vector<GroupElement> current = elems;
    for (const auto& a : current)
      for (const auto& b : gens) {
        GroupElement c = compose(a, b);
        if (!contains(c)) {
          elems.push_back(c);
          grew = true;
        }
      }
  }
  for (const auto& e : elems) grp.ops.push_back({e, {0, 0, 0}});
  return grp;
}

CandidateGroup CandidateGroup::cubic_with_half_translations(const Mat3& lattice) {
  CandidateGroup base = cubic48();
  CandidateGroup grp;
  grp.lattice = lattice;
  for (const auto& op : base.ops)
    for (int b0 = 0; b0 < 2; ++b0)
      for (int b1 = 0; b1 < 2; ++b1)
        for (int b2 = 0; b2 < 2; ++b2) {
          Vec3 t{0, 0, 0};
          Vec3 rows[3] = {{lattice(0, 0), lattice(0, 1), lattice(0, 2)},
                          {lattice(1, 0), lattice(1, 1), lattice(1, 2)},
                          {lattice(2, 0), lattice(2, 1), lattice(2, 2)}};
          if (b0) t = t + rows[0] * 0.5;
          if (b1) t = t + rows[1] * 0.5;
          if (b2) t = t + rows[2] * 0.5;
          grp.ops.push_back({op.g, t});
        }
  return grp;
}

void CandidateGroup::validate_closure() const {
  if (validated_) return;
  // Identity present.
  bool has_identity = false;
  for (const auto& op : ops)
    if (ops_equal(op, {GroupElement::identity(), {0, 0, 0}}, lattice)) has_identity = true;
  if (!has_identity) throw std::invalid_argument("candidate group lacks the identity");
  auto find = [&](const SymOp& q) {
    for (const auto& op : ops)
      if (ops_equal(op, q, lattice)) return true;
    return false;
  };
  for (const auto& a : ops) {
    for (const auto& b : ops) {
      SymOp c{compose(a.g, b.g),
              wrap_translation(a.g.cartesian_matrix() * b.translation + a.translation,
                               lattice)};
      if (!find(c)) throw std::invalid_argument("candidate group is not closed");
    }
    SymOp inv{a.g.inverse(),
              wrap_translation(a.g.inverse().cartesian_matrix() * (-a.translation), lattice)};
    if (!find(inv)) throw std::invalid_argument("candidate group lacks an inverse");
  }
  validated_ = true;
}

namespace {

int max_degree(const IrrepsSignature& sig) {
  int lmax = 0;
  for (const auto& e : sig.entries) lmax = std::max(lmax, e.ir.l);
  return lmax;
}

// Species-preserving permutation matching transformed positions against the
// originals; returns max position deviation or a large sentinel on failure.
double match_positions(const Structure& s, const std::vector<Vec3>& transformed,
                       double tol, std::vector<int>& perm) {
  const int n = s.size();
  perm.assign(n, -1);
  std::vector<char> used(n, 0);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    int best_j = -1;
    double best_d = 1e300;
    for (int j = 0; j < n; ++j) {
      if (used[j] || s.species[j] != s.species[i]) continue;
      Vec3 d = s.lattice ? s.min_image(s.positions[j], transformed[i])
                         : transformed[i] - s.positions[j];
      double dist = d.norm();
      if (dist < best_d) {
        best_d = dist;
        best_j = j;
      }
    }
    if (best_j < 0 || best_d > tol) return 1e300;
    used[best_j] = 1;
    perm[i] = best_j;
    worst = std::max(worst, best_d);
  }
  return worst;
}

}  // namespace

bool StabilizerReport::contains(int element) const {
  return std::find(elements.begin(), elements.end(), element) != elements.end();
}

StabilizerReport stabilizer(const TensorField& field, const CandidateGroup& group,
                            double tol) {
  if (!(tol > 0)) throw std::invalid_argument("stabilizer tolerance must be positive");
  group.validate_closure();
  const Structure& s = field.structure;
  const int n = s.size();
  if (field.values.rows != n || field.values.cols != field.sig.dim())
    throw std::invalid_argument("tensor field shape mismatch");

  StabilizerReport report;
  report.tol = tol;
  const int lmax = max_degree(field.sig);
  std::vector<Vec3> transformed(n);
  std::vector<int> perm;
  std::vector<double> row(field.sig.dim());

  for (int e = 0; e < group.size(); ++e) {
    const SymOp& op = group.ops[e];
    Mat3 m = op.g.cartesian_matrix();
    for (int i = 0; i < n; ++i) transformed[i] = m * s.positions[i] + op.translation;
    double pos_dev = match_positions(s, transformed, tol, perm);
    if (pos_dev > tol) continue;

    RepBlocks rb = RepBlocks::build(lmax, op.g);
    double feat_dev = 0.0;
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      rb.apply(field.sig, &field.values.v[static_cast<std::size_t>(i) * field.values.cols],
               row.data());
      const double* target =
          &field.values.v[static_cast<std::size_t>(perm[i]) * field.values.cols];
      for (int c = 0; c < field.values.cols; ++c) {
        double d = std::abs(row[c] - target[c]);
        feat_dev = std::max(feat_dev, d);
        if (d > tol) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    report.elements.push_back(e);
    report.residuals.push_back(std::max(pos_dev, feat_dev));
  }
  return report;
}

StabilizerReport stabilizer_tensor(const GeometricTensor& t, const CandidateGroup& group,
                                   double tol) {
  if (!(tol > 0)) throw std::invalid_argument("stabilizer tolerance must be positive");
  group.validate_closure();
  StabilizerReport report;
  report.tol = tol;
  const int lmax = max_degree(t.sig);
  std::vector<double> row(t.sig.dim());
  for (int e = 0; e < group.size(); ++e) {
    RepBlocks rb = RepBlocks::build(lmax, group.ops[e].g);
    rb.apply(t.sig, t.coeffs.data(), row.data());
    double dev = 0;
    for (int c = 0; c < t.sig.dim(); ++c) dev = std::max(dev, std::abs(row[c] - t.coeffs[c]));
    if (dev <= tol) {
      report.elements.push_back(e);
      report.residuals.push_back(dev);
    }
  }
  return report;
}

CurieReport check_curie(const std::function<Tensor2(const TensorField&)>& forward,
                        const TensorField& input, const IrrepsSignature& output_sig,
                        const CandidateGroup& group, double tol_input, double tol_output) {
  CurieReport report;
  report.input = stabilizer(input, group, tol_input);
  TensorField out_field{input.structure, output_sig, forward(input)};
  report.output = stabilizer(out_field, group, tol_output);
  for (int e : report.input.elements)
    if (!report.output.contains(e)) report.violations.push_back(e);
  return report;
}

bool check_combination(const GeometricTensor& x, const GeometricTensor& y, double alpha,
                       double beta, const CandidateGroup& group, double tol) {
  if (!(x.sig == y.sig)) throw std::invalid_argument("signature mismatch");
  GeometricTensor combo(x.sig);
  for (std::size_t i = 0; i < combo.coeffs.size(); ++i)
    combo.coeffs[i] = alpha * x.coeffs[i] + beta * y.coeffs[i];
  StabilizerReport sx = stabilizer_tensor(x, group, tol);
  StabilizerReport sy = stabilizer_tensor(y, group, tol);
  StabilizerReport sc = stabilizer_tensor(combo, group, tol);
  for (int e : sx.elements)
    if (sy.contains(e) && !sc.contains(e)) return false;
  return true;
}

NodeId mse_loss_node(Graph& g, NodeId pred, NodeId target) {
  return g.mean_all(g.square_(g.add(pred, g.scale(target, -1.0))));
}

GradientEquivarianceResult check_gradient_equivariance(const IrrepsSignature& sig,
                                                       const GeometricTensor& x,
                                                       const GeometricTensor& y_true,
                                                       const GroupElement& g,
                                                       const LossBuilder& loss) {
  if (!(x.sig == sig) || !(y_true.sig == sig))
    throw std::invalid_argument("signature mismatch");

  auto gradient = [&](const GeometricTensor& xv, const GeometricTensor& yv) {
    Graph graph;
    NodeId xn = graph.input(1, sig.dim());
    NodeId yn = graph.constant(Tensor2(1, sig.dim(), yv.coeffs));
    NodeId root = loss(graph, xn, yn);
    graph.set_value(xn, Tensor2(1, sig.dim(), xv.coeffs));
    graph.forward(root);
    graph.backward(root);
    return graph.grad(xn).v;
  };

  std::vector<double> base = gradient(x, y_true);
  GeometricTensor gx = rep_apply(sig, g, x);
  GeometricTensor gy = rep_apply(sig, g, y_true);
  std::vector<double> transformed_inputs = gradient(gx, gy);
  GeometricTensor base_t(sig, base);
  GeometricTensor rotated_grad = rep_apply(sig, g, base_t);

  double num = 0, den = 0;
  for (int i = 0; i < sig.dim(); ++i) {
    double d = transformed_inputs[i] - rotated_grad.coeffs[i];
    num += d * d;
    den += base[i] * base[i];
  }
  GradientEquivarianceResult res;
  if (den < 1e-300) {
    res.absolute = true;
    res.error = std::sqrt(num);
  } else {
    res.error = std::sqrt(num / den);
  }
  return res;
}

}  // namespace opnet
