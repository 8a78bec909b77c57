#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "opnet/autodiff.hpp"
#include "opnet/irreps.hpp"
#include "opnet/structure.hpp"

namespace opnet {

// Point operation optionally paired with a fractional lattice translation.
struct SymOp {
  GroupElement g;
  Vec3 translation;  // cartesian
};

// Finite probe group: closed under composition, contains the identity and
// every inverse. Closure is validated once and cached.
class CandidateGroup {
 public:
  std::vector<SymOp> ops;
  std::optional<Mat3> lattice;  // needed to wrap translations

  // The 48 proper and improper cubic point operations.
  static CandidateGroup cubic48();
  // Cubic operations composed with the half-cell translations of the given
  // periodic cell (8 per point operation).
  static CandidateGroup cubic_with_half_translations(const Mat3& lattice);

  int size() const { return static_cast<int>(ops.size()); }
  void validate_closure() const;

 private:
  mutable bool validated_ = false;
};

// A structure with one geometric tensor per point: the configuration whose
// symmetry is probed.
struct TensorField {
  Structure structure;
  IrrepsSignature sig;
  Tensor2 values;  // n x sig.dim()
};

struct StabilizerReport {
  std::vector<int> elements;      // indices into the candidate group
  std::vector<double> residuals;  // per listed element, max deviation
  double tol = 0.0;

  bool contains(int element) const;
};

// An element stabilizes when some species-preserving point permutation
// matches both transformed positions (minimum image if periodic) and
// transformed per-point tensors within tol.
StabilizerReport stabilizer(const TensorField& field, const CandidateGroup& group,
                            double tol);

// Stabilizer of a bare tensor (no positions; translations ignored).
StabilizerReport stabilizer_tensor(const GeometricTensor& t, const CandidateGroup& group,
                                   double tol);

struct CurieReport {
  StabilizerReport input, output;
  std::vector<int> violations;  // Sym(input) \ Sym(output); empty for any equivariant map
};

CurieReport check_curie(const std::function<Tensor2(const TensorField&)>& forward,
                        const TensorField& input, const IrrepsSignature& output_sig,
                        const CandidateGroup& group, double tol_input, double tol_output);

// Verifies Sym(x) n Sym(y) subset-of Sym(alpha x + beta y) by brute force.
bool check_combination(const GeometricTensor& x, const GeometricTensor& y, double alpha,
                       double beta, const CandidateGroup& group, double tol);

// Builds a scalar loss node from prediction and target nodes.
using LossBuilder = std::function<NodeId(Graph&, NodeId, NodeId)>;
NodeId mse_loss_node(Graph& g, NodeId pred, NodeId target);

struct GradientEquivarianceResult {
  double error = 0.0;      // relative, or absolute when flagged
  bool absolute = false;   // gradient norm vanished; absolute error reported
};

// Compares the gradient of an invariant loss taken after transforming the
// inputs against the transformed gradient. Real irrep matrices are
// orthogonal, so the contragradient action coincides with rep_apply.
GradientEquivarianceResult check_gradient_equivariance(
    const IrrepsSignature& sig, const GeometricTensor& x, const GeometricTensor& y_true,
    const GroupElement& g, const LossBuilder& loss = mse_loss_node);

}  // namespace opnet
