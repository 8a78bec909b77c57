#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "opnet/irreps.hpp"

namespace opnet {

// Dense row-major matrix value flowing through the tape. Rows usually
// index points or edges; columns index feature components.
struct Tensor2 {
  int rows = 0, cols = 0;
  std::vector<double> v;

  Tensor2() = default;
  Tensor2(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  Tensor2(int r, int c, std::vector<double> data);

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return v.size(); }
};

// One tensor-product coupling path: an input irrep block contracted with a
// filter harmonic block through a constant coupling tensor, mixed across
// multiplicities by per-edge weights.
struct TpPath {
  int off_in = 0, dim_in = 0, mult_in = 0;
  int off_out = 0, dim_out = 0, mult_out = 0;
  int weight_off = 0;   // column offset into the weight rows
  int m_off = 0;        // offset into TpPlan::edge_m, per edge
  double alpha = 1.0;   // normalization constant folded into the path
};

// Geometry-dependent constants for one convolution: for every (edge, path)
// the coupling tensor is pre-contracted with the filter harmonics of the
// edge direction, leaving a dim_in x dim_out matrix per edge.
struct TpPlan {
  int n_edges = 0;
  int dim_in = 0, dim_out = 0;
  int n_weights = 0;       // weight columns per radius class
  int m_stride = 0;        // doubles per edge in edge_m
  std::vector<TpPath> paths;
  std::vector<double> edge_m;      // [edge][path block dim_in*dim_out]
  std::vector<int> radius_class;   // per edge: row into the weights node
};

// Constant plan for block-structured linear mixing between matching irrep
// blocks of two signatures.
struct MixBlock {
  int off_in = 0, off_out = 0, dim = 0;
  int mult_in = 0, mult_out = 0;
  int weight_off = 0;  // into a 1 x n_weights weights node
};
struct MixPlan {
  int dim_in = 0, dim_out = 0, n_weights = 0;
  std::vector<MixBlock> blocks;
};

enum class OpKind {
  Constant, Parameter, Input,
  Add, Scale, Mul, MatMul, AddRowVec, TileRows, GatherRows, ScatterSumRows,
  ConcatCols, SliceCols, RepeatCols, MulMask,
  TpContract, MixBlocks,
  Sigmoid, Tanh, Abs, Square, MeanAll, SumAll, BlockNorm,
};

using NodeId = int;

// Reverse-mode tape over Tensor2 values. Shapes are fixed at construction;
// forward() re-evaluates the whole graph, backward() accumulates adjoints
// in reverse construction order. Single-threaded by design; independent
// graphs may run concurrently.
class Graph {
 public:
  NodeId constant(Tensor2 value);
  NodeId parameter(int rows, int cols);
  NodeId input(int rows, int cols);

  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId a, NodeId row);   // row: 1 x cols
  NodeId tile_rows(NodeId a, int n);         // 1 x c -> n x c
  NodeId gather_rows(NodeId a, std::vector<int> idx);
  NodeId scatter_sum_rows(NodeId a, std::vector<int> idx, int n_rows);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId slice_cols(NodeId a, int begin, int end);
  NodeId repeat_cols(NodeId a, std::vector<int> counts);
  NodeId mul_mask(NodeId a, Tensor2 mask);
  NodeId tp_contract(NodeId feats, NodeId weights, std::shared_ptr<const TpPlan> plan);
  NodeId mix_blocks(NodeId feats, NodeId weights, std::shared_ptr<const MixPlan> plan);
  NodeId sigmoid(NodeId a);
  NodeId tanh_(NodeId a);
  NodeId abs_(NodeId a);
  NodeId square_(NodeId a);
  NodeId mean_all(NodeId a);
  NodeId sum_all(NodeId a);
  NodeId block_norm(NodeId a, int col_begin, int col_end);  // per-row norm -> n x 1

  void set_value(NodeId leaf, Tensor2 value);
  const Tensor2& value(NodeId id) const { return nodes_[id].value; }
  int rows(NodeId id) const { return nodes_[id].value.rows; }
  int cols(NodeId id) const { return nodes_[id].value.cols; }

  // Evaluates every node feeding `root` and returns its value, which must
  // be scalar for loss roots; repeated calls are bitwise reproducible.
  double forward(NodeId root);
  // Requires a preceding forward() on the same root.
  void backward(NodeId root);
  const Tensor2& grad(NodeId id) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor2 value;
    Tensor2 adjoint;
    // op-specific payloads
    double factor = 0.0;
    std::vector<int> indices;
    Tensor2 mask;
    std::shared_ptr<const TpPlan> tp;
    std::shared_ptr<const MixPlan> mix;
    int i0 = 0, i1 = 0;
    std::vector<int> spans;  // concat part widths / repeat counts
  };

  NodeId push(Node n);
  void eval(Node& n);
  void accumulate(Node& n);
  void mark_reachable(NodeId root, std::vector<char>& mark) const;

  std::vector<Node> nodes_;
  NodeId last_forward_root_ = -1;
};

// Worst relative error between reverse-mode and central-difference
// gradients over n_coords pseudo-randomly chosen coordinates of `leaf`.
// The denominator is max(|analytic|, |numeric|, 1e-12).
double grad_check(Graph& g, NodeId root, NodeId leaf, int n_coords, double step,
                  std::mt19937_64& rng);

}  // namespace opnet
