#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "opnet/autodiff.hpp"
#include "opnet/harmonics.hpp"
#include "opnet/irreps.hpp"
#include "opnet/structure.hpp"

namespace opnet {

// ---------------------------------------------------------------------------
// Geometry plumbing

struct Edge {
  int center = 0, neighbor = 0;
  Vec3 dr;  // displacement center -> neighbor (minimum image if periodic)
};

// All ordered pairs with 0 < |dr| <= r_cut; each pair appears in both
// directions. For periodic structures r_cut must stay below half the
// shortest lattice vector so the minimum image is unique.
std::vector<Edge> neighbor_list(const Structure& s, double r_cut);

// B Gaussians centered evenly on (0, r_cut], width equal to the spacing,
// multiplied by a smooth cosine cutoff that vanishes at r_cut.
std::vector<double> radial_basis(double r, int count, double r_cut);

// ---------------------------------------------------------------------------
// Coupling tables

// Read-only cache of real 3j tensors. Built eagerly by graph builders; the
// optional perturbation deliberately breaks the coupling (negative-control
// hook for the verification tool).
class CouplingTables {
 public:
  explicit CouplingTables(double perturbation = 0.0) : perturbation_(perturbation) {}
  const Wigner3j& get(int l1, int l2, int l3);
  double perturbation() const { return perturbation_; }

 private:
  std::map<std::array<int, 3>, Wigner3j> cache_;
  double perturbation_;
};

// ---------------------------------------------------------------------------
// Model description

struct ModelSpec {
  int n_layers = 3;
  int hidden_mult = 4;
  int hidden_lmax = 5;
  int filter_lmax = 5;
  int out_lmax = 5;
  int n_species = 1;
  int radial_basis_count = 10;
  int radial_hidden = 16;
  double r_cut = 3.5;
  IrrepsSignature slot_sig;  // order-parameter slot appended to the input
  std::uint64_t seed = 0;
};

// mult copies of every (l, parity) for l <= lmax, l ascending, even first.
IrrepsSignature hidden_signature(int mult, int lmax);
// Both-parity slot ladder 1e+1o+...+lmax (no scalars).
IrrepsSignature slot_signature(int lmax);

IrrepsSignature model_input_signature(const ModelSpec& spec);
IrrepsSignature model_output_signature(const ModelSpec& spec);

// Flat parameter vector layout: per layer [radial W1, radial b1, radial W2,
// radial b2, self-interaction mix, bias], then the final projection mix.
struct ParamChunk {
  int rows = 0, cols = 0, offset = 0;
};
struct ParamLayout {
  std::vector<ParamChunk> chunks;
  int total = 0;
};
ParamLayout compute_param_layout(const ModelSpec& spec);

struct Model {
  ModelSpec spec;
  std::vector<double> params;

  static Model create(const ModelSpec& spec);  // seeded initialization
  int param_count() const { return static_cast<int>(params.size()); }
};

// ---------------------------------------------------------------------------
// Graph assembly

struct ModelGraphRefs {
  NodeId output = -1;  // n_points x output dim
  std::vector<NodeId> weight_leaves;
  ParamLayout layout;
  double degree_norm = 1.0;
};

// Appends the model computation to `g`, reading per-point features from the
// node `features` (n_points x input dim). Weight leaves are created inside
// and must be filled with load_params before forward().
ModelGraphRefs build_model_graph(Graph& g, const ModelSpec& spec, const Structure& s,
                                 NodeId features, CouplingTables& tables);

void load_params(Graph& g, const ModelGraphRefs& refs, const std::vector<double>& flat);
std::vector<double> extract_params(const Graph& g, const ModelGraphRefs& refs);
std::vector<double> collect_param_grads(const Graph& g, const ModelGraphRefs& refs);

// Full forward pass: per-point natural-parity signals as rows.
Tensor2 model_forward(const Model& m, const Structure& s, const Tensor2& features,
                      CouplingTables& tables);
Tensor2 model_forward(const Model& m, const Structure& s, const Tensor2& features);

// ---------------------------------------------------------------------------
// Single convolution layer (unit-test surface)

struct LayerConfig {
  IrrepsSignature sig_in, sig_out;
  int filter_lmax = 5;
  int radial_basis_count = 10;
  int radial_hidden = 16;
  double r_cut = 3.5;
  // Explicit (l_in, l_filter, l_out) selection; empty enumerates every
  // triangle- and parity-compatible path.
  std::vector<std::array<int, 3>> restrict_paths;
};

struct Layer {
  LayerConfig cfg;
  std::vector<double> params;

  static Layer create(const LayerConfig& cfg, std::uint64_t seed);
};

Tensor2 layer_forward(const Layer& layer, const Tensor2& features, const Structure& s,
                      const std::vector<Edge>& edges, CouplingTables& tables);

}  // namespace opnet
