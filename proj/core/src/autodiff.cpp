#include "opnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace opnet {

Tensor2::Tensor2(int r, int c, std::vector<double> data)
    : rows(r), cols(c), v(std::move(data)) {
  if (v.size() != static_cast<std::size_t>(r) * c)
    throw std::invalid_argument("Tensor2 data size mismatch");
}

namespace {

void check_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument(std::string("shape mismatch in ") + op);
}

}  // namespace

NodeId Graph::push(Node n) {
  n.adjoint = Tensor2(n.value.rows, n.value.cols);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::constant(Tensor2 value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::parameter(int rows, int cols) {
  Node n;
  n.kind = OpKind::Parameter;
  n.value = Tensor2(rows, cols);
  return push(std::move(n));
}

NodeId Graph::input(int rows, int cols) {
  Node n;
  n.kind = OpKind::Input;
  n.value = Tensor2(rows, cols);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "add");
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a, b};
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {a};
  n.factor = factor;
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "mul");
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a, b};
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  if (cols(a) != rows(b)) throw std::invalid_argument("shape mismatch in matmul");
  Node n;
  n.kind = OpKind::MatMul;
  n.inputs = {a, b};
  n.value = Tensor2(rows(a), cols(b));
  return push(std::move(n));
}

NodeId Graph::add_rowvec(NodeId a, NodeId row) {
  if (rows(row) != 1 || cols(row) != cols(a))
    throw std::invalid_argument("shape mismatch in add_rowvec");
  Node n;
  n.kind = OpKind::AddRowVec;
  n.inputs = {a, row};
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::tile_rows(NodeId a, int count) {
  if (rows(a) != 1) throw std::invalid_argument("tile_rows requires a single-row input");
  Node n;
  n.kind = OpKind::TileRows;
  n.inputs = {a};
  n.i0 = count;
  n.value = Tensor2(count, cols(a));
  return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId a, std::vector<int> idx) {
  for (int i : idx)
    if (i < 0 || i >= rows(a)) throw std::invalid_argument("gather index out of range");
  Node n;
  n.kind = OpKind::GatherRows;
  n.inputs = {a};
  n.value = Tensor2(static_cast<int>(idx.size()), cols(a));
  n.indices = std::move(idx);
  return push(std::move(n));
}

NodeId Graph::scatter_sum_rows(NodeId a, std::vector<int> idx, int n_rows) {
  if (static_cast<int>(idx.size()) != rows(a))
    throw std::invalid_argument("scatter index count mismatch");
  for (int i : idx)
    if (i < 0 || i >= n_rows) throw std::invalid_argument("scatter index out of range");
  Node n;
  n.kind = OpKind::ScatterSumRows;
  n.inputs = {a};
  n.value = Tensor2(n_rows, cols(a));
  n.indices = std::move(idx);
  return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  int r = rows(parts[0]), c = 0;
  Node n;
  n.kind = OpKind::ConcatCols;
  for (NodeId p : parts) {
    if (rows(p) != r) throw std::invalid_argument("shape mismatch in concat_cols");
    n.spans.push_back(cols(p));
    c += cols(p);
  }
  n.inputs = parts;
  n.value = Tensor2(r, c);
  return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, int begin, int end) {
  if (begin < 0 || end > cols(a) || begin >= end)
    throw std::invalid_argument("bad column slice");
  Node n;
  n.kind = OpKind::SliceCols;
  n.inputs = {a};
  n.i0 = begin;
  n.i1 = end;
  n.value = Tensor2(rows(a), end - begin);
  return push(std::move(n));
}

NodeId Graph::repeat_cols(NodeId a, std::vector<int> counts) {
  if (static_cast<int>(counts.size()) != cols(a))
    throw std::invalid_argument("repeat_cols count mismatch");
  int total = 0;
  for (int c : counts) {
    if (c < 1) throw std::invalid_argument("repeat_cols needs positive counts");
    total += c;
  }
  Node n;
  n.kind = OpKind::RepeatCols;
  n.inputs = {a};
  n.spans = std::move(counts);
  n.value = Tensor2(rows(a), total);
  return push(std::move(n));
}

NodeId Graph::mul_mask(NodeId a, Tensor2 mask) {
  check_same_shape(nodes_[a].value, mask, "mul_mask");
  Node n;
  n.kind = OpKind::MulMask;
  n.inputs = {a};
  n.mask = std::move(mask);
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::tp_contract(NodeId feats, NodeId weights,
                          std::shared_ptr<const TpPlan> plan) {
  if (cols(feats) != plan->dim_in || rows(feats) != plan->n_edges)
    throw std::invalid_argument("tp_contract feature shape mismatch");
  if (cols(weights) != plan->n_weights)
    throw std::invalid_argument("tp_contract weight shape mismatch");
  for (int c : plan->radius_class)
    if (c < 0 || c >= rows(weights))
      throw std::invalid_argument("tp_contract radius class out of range");
  Node n;
  n.kind = OpKind::TpContract;
  n.inputs = {feats, weights};
  n.tp = std::move(plan);
  n.value = Tensor2(n.tp->n_edges, n.tp->dim_out);
  return push(std::move(n));
}

NodeId Graph::mix_blocks(NodeId feats, NodeId weights,
                         std::shared_ptr<const MixPlan> plan) {
  if (cols(feats) != plan->dim_in)
    throw std::invalid_argument("mix_blocks feature shape mismatch");
  if (rows(weights) != 1 || cols(weights) != plan->n_weights)
    throw std::invalid_argument("mix_blocks weight shape mismatch");
  Node n;
  n.kind = OpKind::MixBlocks;
  n.inputs = {feats, weights};
  n.mix = std::move(plan);
  n.value = Tensor2(rows(feats), n.mix->dim_out);
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
  Node n;
  n.kind = OpKind::Sigmoid;
  n.inputs = {a};
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::tanh_(NodeId a) {
  Node n;
  n.kind = OpKind::Tanh;
  n.inputs = {a};
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::abs_(NodeId a) {
  Node n;
  n.kind = OpKind::Abs;
  n.inputs = {a};
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::square_(NodeId a) {
  Node n;
  n.kind = OpKind::Square;
  n.inputs = {a};
  n.value = Tensor2(rows(a), cols(a));
  return push(std::move(n));
}

NodeId Graph::mean_all(NodeId a) {
  Node n;
  n.kind = OpKind::MeanAll;
  n.inputs = {a};
  n.value = Tensor2(1, 1);
  return push(std::move(n));
}

NodeId Graph::sum_all(NodeId a) {
  Node n;
  n.kind = OpKind::SumAll;
  n.inputs = {a};
  n.value = Tensor2(1, 1);
  return push(std::move(n));
}

NodeId Graph::block_norm(NodeId a, int col_begin, int col_end) {
  if (col_begin < 0 || col_end > cols(a) || col_begin >= col_end)
    throw std::invalid_argument("bad block_norm span");
  Node n;
  n.kind = OpKind::BlockNorm;
  n.inputs = {a};
  n.i0 = col_begin;
  n.i1 = col_end;
  n.value = Tensor2(rows(a), 1);
  return push(std::move(n));
}

void Graph::set_value(NodeId leaf, Tensor2 value) {
  Node& n = nodes_[leaf];
  if (n.kind != OpKind::Parameter && n.kind != OpKind::Input && n.kind != OpKind::Constant)
    throw std::invalid_argument("set_value on a non-leaf node");
  check_same_shape(n.value, value, "set_value");
  n.value = std::move(value);
}

void Graph::mark_reachable(NodeId root, std::vector<char>& mark) const {
  std::vector<NodeId> stack{root};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    if (mark[id]) continue;
    mark[id] = 1;
    for (NodeId in : nodes_[id].inputs) stack.push_back(in);
  }
}

void Graph::eval(Node& n) {
  switch (n.kind) {
    case OpKind::Constant:
    case OpKind::Parameter:
    case OpKind::Input:
      return;
    case OpKind::Add: {
      const auto& a = nodes_[n.inputs[0]].value;
      const auto& b = nodes_[n.inputs[1]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] = a.v[i] + b.v[i];
      return;
    }
    case OpKind::Scale: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] = n.factor * a.v[i];
      return;
    }
    case OpKind::Mul: {
      const auto& a = nodes_[n.inputs[0]].value;
      const auto& b = nodes_[n.inputs[1]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] = a.v[i] * b.v[i];
      return;
    }
    case OpKind::MatMul: {
      const auto& a = nodes_[n.inputs[0]].value;
      const auto& b = nodes_[n.inputs[1]].value;
      const int R = a.rows, K = a.cols, C = b.cols;
      std::fill(n.value.v.begin(), n.value.v.end(), 0.0);
      for (int r = 0; r < R; ++r) {
        const double* ar = &a.v[static_cast<std::size_t>(r) * K];
        double* outr = &n.value.v[static_cast<std::size_t>(r) * C];
        for (int k = 0; k < K; ++k) {
          const double av = ar[k];
          if (av == 0.0) continue;
          const double* br = &b.v[static_cast<std::size_t>(k) * C];
          for (int c = 0; c < C; ++c) outr[c] += av * br[c];
        }
      }
      return;
    }
    case OpKind::AddRowVec: {
      const auto& a = nodes_[n.inputs[0]].value;
      const auto& row = nodes_[n.inputs[1]].value;
      for (int r = 0; r < a.rows; ++r)
        for (int c = 0; c < a.cols; ++c) n.value.at(r, c) = a.at(r, c) + row.v[c];
      return;
    }
    case OpKind::TileRows: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (int r = 0; r < n.value.rows; ++r)
        std::copy(a.v.begin(), a.v.end(), n.value.v.begin() + static_cast<std::size_t>(r) * a.cols);
      return;
    }
    case OpKind::GatherRows: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (std::size_t r = 0; r < n.indices.size(); ++r)
        std::copy(&a.v[static_cast<std::size_t>(n.indices[r]) * a.cols],
                  &a.v[static_cast<std::size_t>(n.indices[r]) * a.cols] + a.cols,
                  &n.value.v[r * a.cols]);
      return;
    }
    case OpKind::ScatterSumRows: {
      const auto& a = nodes_[n.inputs[0]].value;
      std::fill(n.value.v.begin(), n.value.v.end(), 0.0);
      for (std::size_t r = 0; r < n.indices.size(); ++r) {
        double* dst = &n.value.v[static_cast<std::size_t>(n.indices[r]) * a.cols];
        const double* src = &a.v[r * a.cols];
        for (int c = 0; c < a.cols; ++c) dst[c] += src[c];
      }
      return;
    }
    case OpKind::ConcatCols: {
      int off = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        const auto& a = nodes_[n.inputs[p]].value;
        for (int r = 0; r < a.rows; ++r)
          std::copy(&a.v[static_cast<std::size_t>(r) * a.cols],
                    &a.v[static_cast<std::size_t>(r) * a.cols] + a.cols,
                    &n.value.v[static_cast<std::size_t>(r) * n.value.cols + off]);
        off += a.cols;
      }
      return;
    }
    case OpKind::SliceCols: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (int r = 0; r < a.rows; ++r)
        std::copy(&a.v[static_cast<std::size_t>(r) * a.cols + n.i0],
                  &a.v[static_cast<std::size_t>(r) * a.cols + n.i1],
                  &n.value.v[static_cast<std::size_t>(r) * n.value.cols]);
      return;
    }
    case OpKind::RepeatCols: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (int r = 0; r < a.rows; ++r) {
        double* out = &n.value.v[static_cast<std::size_t>(r) * n.value.cols];
        int off = 0;
        for (int c = 0; c < a.cols; ++c) {
          double val = a.at(r, c);
          for (int k = 0; k < n.spans[c]; ++k) out[off++] = val;
        }
      }
      return;
    }
    case OpKind::MulMask: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] = a.v[i] * n.mask.v[i];
      return;
    }
    case OpKind::TpContract: {
      const auto& f = nodes_[n.inputs[0]].value;
      const auto& wt = nodes_[n.inputs[1]].value;
      const TpPlan& plan = *n.tp;
      std::fill(n.value.v.begin(), n.value.v.end(), 0.0);
      std::vector<double> z;
      for (int e = 0; e < plan.n_edges; ++e) {
        const double* fe = &f.v[static_cast<std::size_t>(e) * plan.dim_in];
        const double* we = &wt.v[static_cast<std::size_t>(plan.radius_class[e]) * plan.n_weights];
        double* oe = &n.value.v[static_cast<std::size_t>(e) * plan.dim_out];
        const double* me = &plan.edge_m[static_cast<std::size_t>(e) * plan.m_stride];
        for (const TpPath& p : plan.paths) {
          const double* m = me + p.m_off;
          z.assign(static_cast<std::size_t>(p.mult_in) * p.dim_out, 0.0);
          for (int u = 0; u < p.mult_in; ++u) {
            const double* fu = fe + p.off_in + u * p.dim_in;
            double* zu = &z[static_cast<std::size_t>(u) * p.dim_out];
            for (int i = 0; i < p.dim_in; ++i) {
              const double fv = fu[i];
              if (fv == 0.0) continue;
              const double* mrow = m + static_cast<std::size_t>(i) * p.dim_out;
              for (int k = 0; k < p.dim_out; ++k) zu[k] += fv * mrow[k];
            }
          }
          const double* wp = we + p.weight_off;
          for (int u = 0; u < p.mult_in; ++u) {
            const double* zu = &z[static_cast<std::size_t>(u) * p.dim_out];
            for (int w = 0; w < p.mult_out; ++w) {
              const double wv = p.alpha * wp[u * p.mult_out + w];
              if (wv == 0.0) continue;
              double* ow = oe + p.off_out + w * p.dim_out;
              for (int k = 0; k < p.dim_out; ++k) ow[k] += wv * zu[k];
            }
          }
        }
      }
      return;
    }
    case OpKind::MixBlocks: {
      const auto& f = nodes_[n.inputs[0]].value;
      const auto& wt = nodes_[n.inputs[1]].value;
      const MixPlan& plan = *n.mix;
      std::fill(n.value.v.begin(), n.value.v.end(), 0.0);
      for (int r = 0; r < f.rows; ++r) {
        const double* fr = &f.v[static_cast<std::size_t>(r) * plan.dim_in];
        double* outr = &n.value.v[static_cast<std::size_t>(r) * plan.dim_out];
        for (const MixBlock& b : plan.blocks) {
          for (int u = 0; u < b.mult_in; ++u) {
            const double* fu = fr + b.off_in + u * b.dim;
            const double* wrow = &wt.v[b.weight_off + static_cast<std::size_t>(u) * b.mult_out];
            for (int w = 0; w < b.mult_out; ++w) {
              const double wv = wrow[w];
              if (wv == 0.0) continue;
              double* ow = outr + b.off_out + w * b.dim;
              for (int m = 0; m < b.dim; ++m) ow[m] += wv * fu[m];
            }
          }
        }
      }
      return;
    }
    case OpKind::Sigmoid: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i)
        n.value.v[i] = 1.0 / (1.0 + std::exp(-a.v[i]));
      return;
    }
    case OpKind::Tanh: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] = std::tanh(a.v[i]);
      return;
    }
    case OpKind::Abs: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] = std::abs(a.v[i]);
      return;
    }
    case OpKind::Square: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] = a.v[i] * a.v[i];
      return;
    }
    case OpKind::MeanAll: {
      const auto& a = nodes_[n.inputs[0]].value;
      double s = 0;
      for (double x : a.v) s += x;
      n.value.v[0] = s / static_cast<double>(a.v.size());
      return;
    }
    case OpKind::SumAll: {
      const auto& a = nodes_[n.inputs[0]].value;
      double s = 0;
      for (double x : a.v) s += x;
      n.value.v[0] = s;
      return;
    }
    case OpKind::BlockNorm: {
      const auto& a = nodes_[n.inputs[0]].value;
      for (int r = 0; r < a.rows; ++r) {
        double s = 0;
        for (int c = n.i0; c < n.i1; ++c) s += a.at(r, c) * a.at(r, c);
        n.value.at(r, 0) = std::sqrt(s);
      }
      return;
    }
  }
}

double Graph::forward(NodeId root) {
  std::vector<char> mark(nodes_.size(), 0);
  mark_reachable(root, mark);
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (mark[i]) eval(nodes_[i]);
  last_forward_root_ = root;
  const Tensor2& v = nodes_[root].value;
  return v.size() == 1 ? v.v[0] : 0.0;
}

void Graph::accumulate(Node& n) {
  const Tensor2& g = n.adjoint;
  switch (n.kind) {
    case OpKind::Constant:
    case OpKind::Parameter:
    case OpKind::Input:
      return;
    case OpKind::Add: {
      for (int s = 0; s < 2; ++s) {
        auto& ad = nodes_[n.inputs[s]].adjoint;
        for (std::size_t i = 0; i < g.size(); ++i) ad.v[i] += g.v[i];
      }
      return;
    }
    case OpKind::Scale: {
      auto& ad = nodes_[n.inputs[0]].adjoint;
      for (std::size_t i = 0; i < g.size(); ++i) ad.v[i] += n.factor * g.v[i];
      return;
    }
    case OpKind::Mul: {
      const auto& a = nodes_[n.inputs[0]].value;
      const auto& b = nodes_[n.inputs[1]].value;
      auto& ga = nodes_[n.inputs[0]].adjoint;
      auto& gb = nodes_[n.inputs[1]].adjoint;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga.v[i] += g.v[i] * b.v[i];
        gb.v[i] += g.v[i] * a.v[i];
      }
      return;
    }
    case OpKind::MatMul: {
      const auto& a = nodes_[n.inputs[0]].value;
      const auto& b = nodes_[n.inputs[1]].value;
      auto& ga = nodes_[n.inputs[0]].adjoint;
      auto& gb = nodes_[n.inputs[1]].adjoint;
      const int R = a.rows, K = a.cols, C = b.cols;
      // ga += g . b^T ; gb += a^T . g
      for (int r = 0; r < R; ++r) {
        const double* gr = &g.v[static_cast<std::size_t>(r) * C];
        const double* ar = &a.v[static_cast<std::size_t>(r) * K];
        double* gar = &ga.v[static_cast<std::size_t>(r) * K];
        for (int k = 0; k < K; ++k) {
          const double* br = &b.v[static_cast<std::size_t>(k) * C];
          double s = 0;
          for (int c = 0; c < C; ++c) s += gr[c] * br[c];
          gar[k] += s;
          const double av = ar[k];
          if (av != 0.0) {
            double* gbr = &gb.v[static_cast<std::size_t>(k) * C];
            for (int c = 0; c < C; ++c) gbr[c] += av * gr[c];
          }
        }
      }
      return;
    }
    case OpKind::AddRowVec: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      auto& grow = nodes_[n.inputs[1]].adjoint;
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
          ga.at(r, c) += g.at(r, c);
          grow.v[c] += g.at(r, c);
        }
      return;
    }
    case OpKind::TileRows: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) ga.v[c] += g.at(r, c);
      return;
    }
    case OpKind::GatherRows: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (std::size_t r = 0; r < n.indices.size(); ++r) {
        double* dst = &ga.v[static_cast<std::size_t>(n.indices[r]) * ga.cols];
        const double* src = &g.v[r * g.cols];
        for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
      }
      return;
    }
    case OpKind::ScatterSumRows: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (std::size_t r = 0; r < n.indices.size(); ++r) {
        const double* src = &g.v[static_cast<std::size_t>(n.indices[r]) * g.cols];
        double* dst = &ga.v[r * ga.cols];
        for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
      }
      return;
    }
    case OpKind::ConcatCols: {
      int off = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        auto& ga = nodes_[n.inputs[p]].adjoint;
        for (int r = 0; r < ga.rows; ++r)
          for (int c = 0; c < ga.cols; ++c)
            ga.at(r, c) += g.v[static_cast<std::size_t>(r) * g.cols + off + c];
        off += nodes_[n.inputs[p]].value.cols;
      }
      return;
    }
    case OpKind::SliceCols: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) ga.at(r, n.i0 + c) += g.at(r, c);
      return;
    }
    case OpKind::RepeatCols: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (int r = 0; r < ga.rows; ++r) {
        const double* gr = &g.v[static_cast<std::size_t>(r) * g.cols];
        int off = 0;
        for (int c = 0; c < ga.cols; ++c) {
          double s = 0;
          for (int k = 0; k < n.spans[c]; ++k) s += gr[off++];
          ga.at(r, c) += s;
        }
      }
      return;
    }
    case OpKind::MulMask: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * n.mask.v[i];
      return;
    }
    case OpKind::TpContract: {
      const auto& f = nodes_[n.inputs[0]].value;
      const auto& wt = nodes_[n.inputs[1]].value;
      auto& gf = nodes_[n.inputs[0]].adjoint;
      auto& gw = nodes_[n.inputs[1]].adjoint;
      const TpPlan& plan = *n.tp;
      std::vector<double> z, zbar;
      for (int e = 0; e < plan.n_edges; ++e) {
        const double* fe = &f.v[static_cast<std::size_t>(e) * plan.dim_in];
        const double* we = &wt.v[static_cast<std::size_t>(plan.radius_class[e]) * plan.n_weights];
        const double* ge = &g.v[static_cast<std::size_t>(e) * plan.dim_out];
        double* gfe = &gf.v[static_cast<std::size_t>(e) * plan.dim_in];
        double* gwe = &gw.v[static_cast<std::size_t>(plan.radius_class[e]) * plan.n_weights];
        const double* me = &plan.edge_m[static_cast<std::size_t>(e) * plan.m_stride];
        for (const TpPath& p : plan.paths) {
          const double* m = me + p.m_off;
          // Recompute z (cheap relative to storing it for every edge).
          z.assign(static_cast<std::size_t>(p.mult_in) * p.dim_out, 0.0);
          for (int u = 0; u < p.mult_in; ++u) {
            const double* fu = fe + p.off_in + u * p.dim_in;
            double* zu = &z[static_cast<std::size_t>(u) * p.dim_out];
            for (int i = 0; i < p.dim_in; ++i) {
              const double fv = fu[i];
              if (fv == 0.0) continue;
              const double* mrow = m + static_cast<std::size_t>(i) * p.dim_out;
              for (int k = 0; k < p.dim_out; ++k) zu[k] += fv * mrow[k];
            }
          }
          const double* wp = we + p.weight_off;
          double* gwp = gwe + p.weight_off;
          zbar.assign(static_cast<std::size_t>(p.mult_in) * p.dim_out, 0.0);
          for (int u = 0; u < p.mult_in; ++u) {
            const double* zu = &z[static_cast<std::size_t>(u) * p.dim_out];
            double* zbu = &zbar[static_cast<std::size_t>(u) * p.dim_out];
            for (int w = 0; w < p.mult_out; ++w) {
              const double* gk = ge + p.off_out + w * p.dim_out;
              double dot = 0;
              for (int k = 0; k < p.dim_out; ++k) dot += zu[k] * gk[k];
              gwp[u * p.mult_out + w] += p.alpha * dot;
              const double wv = p.alpha * wp[u * p.mult_out + w];
              if (wv != 0.0)
                for (int k = 0; k < p.dim_out; ++k) zbu[k] += wv * gk[k];
            }
          }
          for (int u = 0; u < p.mult_in; ++u) {
            const double* zbu = &zbar[static_cast<std::size_t>(u) * p.dim_out];
            double* gfu = gfe + p.off_in + u * p.dim_in;
            for (int i = 0; i < p.dim_in; ++i) {
              const double* mrow = m + static_cast<std::size_t>(i) * p.dim_out;
              double s = 0;
              for (int k = 0; k < p.dim_out; ++k) s += mrow[k] * zbu[k];
              gfu[i] += s;
            }
          }
        }
      }
      return;
    }
    case OpKind::MixBlocks: {
      const auto& f = nodes_[n.inputs[0]].value;
      const auto& wt = nodes_[n.inputs[1]].value;
      auto& gf = nodes_[n.inputs[0]].adjoint;
      auto& gw = nodes_[n.inputs[1]].adjoint;
      const MixPlan& plan = *n.mix;
      for (int r = 0; r < f.rows; ++r) {
        const double* fr = &f.v[static_cast<std::size_t>(r) * plan.dim_in];
        const double* gr = &g.v[static_cast<std::size_t>(r) * plan.dim_out];
        double* gfr = &gf.v[static_cast<std::size_t>(r) * plan.dim_in];
        for (const MixBlock& b : plan.blocks) {
          for (int u = 0; u < b.mult_in; ++u) {
            const double* fu = fr + b.off_in + u * b.dim;
            double* gfu = gfr + b.off_in + u * b.dim;
            const double* wrow = &wt.v[b.weight_off + static_cast<std::size_t>(u) * b.mult_out];
            double* gwrow = &gw.v[b.weight_off + static_cast<std::size_t>(u) * b.mult_out];
            for (int w = 0; w < b.mult_out; ++w) {
              const double* gk = gr + b.off_out + w * b.dim;
              double dot = 0;
              for (int m = 0; m < b.dim; ++m) dot += fu[m] * gk[m];
              gwrow[w] += dot;
              const double wv = wrow[w];
              if (wv != 0.0)
                for (int m = 0; m < b.dim; ++m) gfu[m] += wv * gk[m];
            }
          }
        }
      }
      return;
    }
    case OpKind::Sigmoid: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value.v[i];
        ga.v[i] += g.v[i] * y * (1.0 - y);
      }
      return;
    }
    case OpKind::Tanh: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value.v[i];
        ga.v[i] += g.v[i] * (1.0 - y * y);
      }
      return;
    }
    case OpKind::Abs: {
      const auto& a = nodes_[n.inputs[0]].value;
      auto& ga = nodes_[n.inputs[0]].adjoint;
      // Subgradient 0 at 0.
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.v[i] += g.v[i] * (a.v[i] > 0 ? 1.0 : (a.v[i] < 0 ? -1.0 : 0.0));
      return;
    }
    case OpKind::Square: {
      const auto& a = nodes_[n.inputs[0]].value;
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += 2.0 * a.v[i] * g.v[i];
      return;
    }
    case OpKind::MeanAll: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      const double s = g.v[0] / static_cast<double>(ga.size());
      for (double& x : ga.v) x += s;
      return;
    }
    case OpKind::SumAll: {
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (double& x : ga.v) x += g.v[0];
      return;
    }
    case OpKind::BlockNorm: {
      const auto& a = nodes_[n.inputs[0]].value;
      auto& ga = nodes_[n.inputs[0]].adjoint;
      for (int r = 0; r < a.rows; ++r) {
        const double norm = n.value.at(r, 0);
        if (norm < 1e-300) continue;
        const double gr = g.at(r, 0) / norm;
        for (int c = n.i0; c < n.i1; ++c) ga.at(r, c) += gr * a.at(r, c);
      }
      return;
    }
  }
}

void Graph::backward(NodeId root) {
  if (last_forward_root_ != root)
    throw std::logic_error("backward called before forward on this root");
  if (nodes_[root].value.size() != 1)
    throw std::invalid_argument("backward requires a scalar root");
  std::vector<char> mark(nodes_.size(), 0);
  mark_reachable(root, mark);
  for (auto& n : nodes_) std::fill(n.adjoint.v.begin(), n.adjoint.v.end(), 0.0);
  nodes_[root].adjoint.v[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
    if (mark[i]) accumulate(nodes_[i]);
}

const Tensor2& Graph::grad(NodeId id) const { return nodes_[id].adjoint; }

double grad_check(Graph& g, NodeId root, NodeId leaf, int n_coords, double step,
                  std::mt19937_64& rng) {
  if (step <= 0) throw std::invalid_argument("grad_check needs a positive step");
  g.forward(root);
  g.backward(root);
  const Tensor2 analytic = g.grad(leaf);
  Tensor2 x = g.value(leaf);
  const int total = static_cast<int>(x.size());
  std::uniform_int_distribution<int> pick(0, total - 1);
  double worst = 0.0;
  for (int t = 0; t < n_coords; ++t) {
    const int i = pick(rng);
    const double orig = x.v[i];
    const double h = step * std::max(1.0, std::abs(orig));
    x.v[i] = orig + h;
    g.set_value(leaf, x);
    const double fp = g.forward(root);
    x.v[i] = orig - h;
    g.set_value(leaf, x);
    const double fm = g.forward(root);
    x.v[i] = orig;
    g.set_value(leaf, x);
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic.v[i]), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(analytic.v[i] - numeric) / denom);
  }
  g.forward(root);  // restore cached state
  g.backward(root);
  return worst;
}

}  // namespace opnet
