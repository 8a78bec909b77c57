#include "opnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace opnet {

// ---------------------------------------------------------------------------
// Geometry plumbing

std::vector<Edge> neighbor_list(const Structure& s, double r_cut) {
  if (r_cut <= 0) throw std::invalid_argument("r_cut must be positive");
  if (s.lattice) {
    double min_len = std::min({s.lattice->column(0).norm(), s.lattice->column(1).norm(),
                               s.lattice->column(2).norm()});
    // Rows are the lattice vectors; column norms of the transpose equal row
    // norms, so take rows directly.
    Vec3 a0{(*s.lattice)(0, 0), (*s.lattice)(0, 1), (*s.lattice)(0, 2)};
    Vec3 a1{(*s.lattice)(1, 0), (*s.lattice)(1, 1), (*s.lattice)(1, 2)};
    Vec3 a2{(*s.lattice)(2, 0), (*s.lattice)(2, 1), (*s.lattice)(2, 2)};
    min_len = std::min({a0.norm(), a1.norm(), a2.norm()});
    if (!(r_cut < 0.5 * min_len))
      throw std::invalid_argument("r_cut violates the minimum-image bound");
  }
  std::vector<Edge> edges;
  const int n = s.size();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      Vec3 dr = s.lattice ? s.min_image(s.positions[i], s.positions[j])
                          : s.positions[j] - s.positions[i];
      double r = dr.norm();
      if (r > 0 && r <= r_cut) edges.push_back({i, j, dr});
    }
  return edges;
}

std::vector<double> radial_basis(double r, int count, double r_cut) {
  if (count < 1) throw std::invalid_argument("radial basis count must be positive");
  if (!(r > 0) || !(r <= r_cut)) throw std::invalid_argument("radius out of range");
  const double spacing = r_cut / count;
  const double cutoff = 0.5 * (1.0 + std::cos(std::numbers::pi * r / r_cut));
  std::vector<double> out(count);
  for (int k = 0; k < count; ++k) {
    const double center = (k + 0.5) * spacing;
    const double t = (r - center) / spacing;
    out[k] = std::exp(-0.5 * t * t) * cutoff;
  }
  return out;
}

const Wigner3j& CouplingTables::get(int l1, int l2, int l3) {
  auto key = std::array<int, 3>{l1, l2, l3};
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  Wigner3j w = wigner_3j(l1, l2, l3);
  if (perturbation_ != 0.0) {
    for (std::size_t i = 0; i < w.c.size(); ++i)
      w.c[i] += perturbation_ * std::sin(3.7 * static_cast<double>(i) + 1.0);
  }
  return cache_.emplace(key, std::move(w)).first->second;
}

// ---------------------------------------------------------------------------
// Signatures

IrrepsSignature hidden_signature(int mult, int lmax) {
  IrrepsSignature sig;
  for (int l = 0; l <= lmax; ++l) {
    sig.entries.push_back({mult, Irrep{l, Parity::Even}});
    sig.entries.push_back({mult, Irrep{l, Parity::Odd}});
  }
  return sig;
}

IrrepsSignature slot_signature(int lmax) {
  IrrepsSignature sig;
  for (int l = 1; l <= lmax; ++l) {
    sig.entries.push_back({1, Irrep{l, Parity::Even}});
    sig.entries.push_back({1, Irrep{l, Parity::Odd}});
  }
  return sig;
}

IrrepsSignature model_input_signature(const ModelSpec& spec) {
  IrrepsSignature sig;
  sig.entries.push_back({spec.n_species, Irrep{0, Parity::Even}});
  for (const auto& e : spec.slot_sig.entries) sig.entries.push_back(e);
  return sig;
}

IrrepsSignature model_output_signature(const ModelSpec& spec) {
  return IrrepsSignature::natural_ladder(spec.out_lmax);
}

// ---------------------------------------------------------------------------
// Plan metadata (structure-independent)

namespace {

struct PathMeta {
  int entry_in = 0, l_f = 0, entry_out = 0;
  int weight_off = 0;
  double alpha = 1.0;
};

struct GateInfo {
  int n_scalar_cols = 0;  // width of the l == 0 entries of sig_out
  int n_gate = 0;
  std::vector<int> repeat_counts;  // block dim per gate channel
};

struct LayerPlanMeta {
  IrrepsSignature sig_in, sig_out, sig_conv;  // sig_conv = sig_out (+ gates)
  GateInfo gate;
  std::vector<PathMeta> paths;
  int n_pathweights = 0;
  MixPlan mix;  // sig_in -> sig_conv self-interaction
};

GateInfo make_gate_info(const IrrepsSignature& sig_out) {
  GateInfo gi;
  bool seen_nonscalar = false;
  for (const auto& e : sig_out.entries) {
    if (e.ir.l == 0) {
      if (seen_nonscalar)
        throw std::invalid_argument("layer output scalars must precede higher degrees");
      gi.n_scalar_cols += e.mult;
    } else {
      seen_nonscalar = true;
      gi.n_gate += e.mult;
      for (int u = 0; u < e.mult; ++u) gi.repeat_counts.push_back(e.ir.dim());
    }
  }
  return gi;
}

IrrepsSignature with_gates(const IrrepsSignature& sig_out, const GateInfo& gi) {
  IrrepsSignature sig = sig_out;
  if (gi.n_gate > 0) sig.entries.push_back({gi.n_gate, Irrep{0, Parity::Even}});
  return sig;
}

bool path_allowed(const std::vector<std::array<int, 3>>& restrict_paths, int l1, int lf,
                  int l3) {
  if (restrict_paths.empty()) return true;
  for (const auto& p : restrict_paths)
    if (p[0] == l1 && p[1] == lf && p[2] == l3) return true;
  return false;
}

std::vector<PathMeta> enumerate_paths(const IrrepsSignature& sig_in,
                                      const IrrepsSignature& sig_conv, int filter_lmax,
                                      const std::vector<std::array<int, 3>>& restrict_paths,
                                      int* total_weights) {
  std::vector<PathMeta> paths;
  for (std::size_t b = 0; b < sig_conv.entries.size(); ++b) {
    const auto& out = sig_conv.entries[b];
    for (std::size_t a = 0; a < sig_in.entries.size(); ++a) {
      const auto& in = sig_in.entries[a];
      for (int lf = 0; lf <= filter_lmax; ++lf) {
        if (out.ir.l < std::abs(in.ir.l - lf) || out.ir.l > in.ir.l + lf) continue;
        if (out.ir.parity != parity_product(in.ir.parity, natural_parity(lf))) continue;
        if (!path_allowed(restrict_paths, in.ir.l, lf, out.ir.l)) continue;
        paths.push_back({static_cast<int>(a), lf, static_cast<int>(b), 0, 1.0});
      }
    }
  }
  // Fan-in normalization per output entry, folded into the path constant.
  std::vector<int> fan(sig_conv.entries.size(), 0);
  for (const auto& p : paths) fan[p.entry_out] += sig_in.entries[p.entry_in].mult;
  int off = 0;
  for (auto& p : paths) {
    p.weight_off = off;
    off += sig_in.entries[p.entry_in].mult * sig_conv.entries[p.entry_out].mult;
    p.alpha = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan[p.entry_out])));
  }
  *total_weights = off;
  return paths;
}

MixPlan make_mix_plan(const IrrepsSignature& sig_in, const IrrepsSignature& sig_out) {
  MixPlan plan;
  plan.dim_in = sig_in.dim();
  plan.dim_out = sig_out.dim();
  int woff = 0;
  for (std::size_t b = 0; b < sig_out.entries.size(); ++b) {
    for (std::size_t a = 0; a < sig_in.entries.size(); ++a) {
      if (!(sig_in.entries[a].ir == sig_out.entries[b].ir)) continue;
      MixBlock blk;
      blk.off_in = sig_in.entry_offset(a);
      blk.off_out = sig_out.entry_offset(b);
      blk.dim = sig_in.entries[a].ir.dim();
      blk.mult_in = sig_in.entries[a].mult;
      blk.mult_out = sig_out.entries[b].mult;
      blk.weight_off = woff;
      woff += blk.mult_in * blk.mult_out;
      plan.blocks.push_back(blk);
    }
  }
  plan.n_weights = woff;
  return plan;
}

LayerPlanMeta make_layer_meta(const IrrepsSignature& sig_in, const IrrepsSignature& sig_out,
                              int filter_lmax,
                              const std::vector<std::array<int, 3>>& restrict_paths) {
  LayerPlanMeta meta;
  meta.sig_in = sig_in;
  meta.sig_out = sig_out;
  meta.gate = make_gate_info(sig_out);
  meta.sig_conv = with_gates(sig_out, meta.gate);
  meta.paths = enumerate_paths(sig_in, meta.sig_conv, filter_lmax, restrict_paths,
                               &meta.n_pathweights);
  meta.mix = make_mix_plan(sig_in, meta.sig_conv);
  return meta;
}

struct SpecPlans {
  std::vector<LayerPlanMeta> layers;
  MixPlan projection;
  IrrepsSignature hidden, output;
};

SpecPlans build_spec_plans(const ModelSpec& spec) {
  SpecPlans plans;
  plans.hidden = hidden_signature(spec.hidden_mult, spec.hidden_lmax);
  plans.output = model_output_signature(spec);
  IrrepsSignature in = model_input_signature(spec);
  for (int layer = 0; layer < spec.n_layers; ++layer) {
    plans.layers.push_back(make_layer_meta(in, plans.hidden, spec.filter_lmax, {}));
    in = plans.hidden;
  }
  plans.projection = make_mix_plan(plans.hidden, plans.output);
  return plans;
}

// Per-layer chunk order: radial W1, b1, W2, b2, self-interaction mix, bias.
constexpr int kChunksPerLayer = 6;

ParamLayout layout_from_plans(const SpecPlans& plans, int radial_basis_count,
                              int radial_hidden) {
  ParamLayout layout;
  int off = 0;
  auto push = [&](int r, int c) {
    layout.chunks.push_back({r, c, off});
    off += r * c;
  };
  for (const auto& meta : plans.layers) {
    push(radial_basis_count, radial_hidden);
    push(1, radial_hidden);
    push(radial_hidden, meta.n_pathweights);
    push(1, meta.n_pathweights);
    push(1, meta.mix.n_weights);
    push(1, meta.sig_conv.dim());
  }
  push(1, plans.projection.n_weights);
  layout.total = off;
  return layout;
}

void init_params(std::vector<double>& params, const ParamLayout& layout,
                 const SpecPlans& plans, const ModelSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  params.assign(layout.total, 0.0);
  auto fill_gauss = [&](const ParamChunk& c, double scale) {
    for (int i = 0; i < c.rows * c.cols; ++i) params[c.offset + i] = scale * gauss(rng);
  };
  auto fill_mix = [&](const ParamChunk& c, const MixPlan& mix) {
    // Scale each block by the mix fan-in of its output entry.
    std::map<int, int> fan;  // off_out -> total mult_in
    for (const auto& b : mix.blocks) fan[b.off_out] += b.mult_in;
    for (const auto& b : mix.blocks) {
      double scale = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan[b.off_out])));
      for (int i = 0; i < b.mult_in * b.mult_out; ++i)
        params[c.offset + b.weight_off + i] = scale * gauss(rng);
    }
  };
  int ci = 0;
  for (const auto& meta : plans.layers) {
    fill_gauss(layout.chunks[ci + 0], 1.0 / std::sqrt(double(spec.radial_basis_count)));
    // b1 stays zero
    fill_gauss(layout.chunks[ci + 2], 1.0 / std::sqrt(double(spec.radial_hidden)));
    // b2 stays zero
    fill_mix(layout.chunks[ci + 4], meta.mix);
    // bias stays zero
    ci += kChunksPerLayer;
  }
  fill_mix(layout.chunks[ci], plans.projection);
}

// ---------------------------------------------------------------------------
// Structure-dependent tensor-product plan

std::shared_ptr<TpPlan> build_tp_plan(const LayerPlanMeta& meta, const std::vector<Edge>& edges,
                                      int filter_lmax, int radial_basis_count, double r_cut,
                                      CouplingTables& tables,
                                      const std::vector<int>& radius_class) {
  auto plan = std::make_shared<TpPlan>();
  plan->n_edges = static_cast<int>(edges.size());
  plan->dim_in = meta.sig_in.dim();
  plan->dim_out = meta.sig_conv.dim();
  plan->n_weights = meta.n_pathweights;
  plan->radius_class = radius_class;
  (void)radial_basis_count;
  (void)r_cut;

  // Per-edge filter harmonics ladder.
  const int ydim = (filter_lmax + 1) * (filter_lmax + 1);
  std::vector<double> y(static_cast<std::size_t>(plan->n_edges) * ydim);
  for (int e = 0; e < plan->n_edges; ++e) {
    Vec3 u = edges[e].dr.normalized();
    GeometricTensor t = eval_sh(filter_lmax, u);
    std::copy(t.coeffs.begin(), t.coeffs.end(), y.begin() + static_cast<std::size_t>(e) * ydim);
  }

  int m_off = 0;
  for (const PathMeta& pm : meta.paths) {
    const auto& ein = meta.sig_in.entries[pm.entry_in];
    const auto& eout = meta.sig_conv.entries[pm.entry_out];
    TpPath p;
    p.off_in = meta.sig_in.entry_offset(pm.entry_in);
    p.dim_in = ein.ir.dim();
    p.mult_in = ein.mult;
    p.off_out = meta.sig_conv.entry_offset(pm.entry_out);
    p.dim_out = eout.ir.dim();
    p.mult_out = eout.mult;
    p.weight_off = pm.weight_off;
    p.m_off = m_off;
    p.alpha = pm.alpha;
    m_off += p.dim_in * p.dim_out;
    plan->paths.push_back(p);
  }
  plan->m_stride = m_off;

  // Pre-contract the coupling tensor with the edge harmonics: the runtime
  // kernel then only sees a dim_in x dim_out matrix per (edge, path).
  plan->edge_m.assign(static_cast<std::size_t>(plan->n_edges) * plan->m_stride, 0.0);
  for (std::size_t pi = 0; pi < plan->paths.size(); ++pi) {
    const TpPath& p = plan->paths[pi];
    const PathMeta& pm = meta.paths[pi];
    const int l1 = meta.sig_in.entries[pm.entry_in].ir.l;
    const int lf = pm.l_f;
    const int l3 = meta.sig_conv.entries[pm.entry_out].ir.l;
    const Wigner3j& w = tables.get(l1, lf, l3);
    const int d2 = 2 * lf + 1;
    const int yoff = lf * lf;
    for (int e = 0; e < plan->n_edges; ++e) {
      const double* ye = &y[static_cast<std::size_t>(e) * ydim + yoff];
      double* m = &plan->edge_m[static_cast<std::size_t>(e) * plan->m_stride + p.m_off];
      for (int i = 0; i < p.dim_in; ++i)
        for (int j = 0; j < d2; ++j) {
          const double yv = ye[j];
          if (yv == 0.0) continue;
          const double* wrow = &w.c[(static_cast<std::size_t>(i) * d2 + j) * p.dim_out];
          double* mrow = m + static_cast<std::size_t>(i) * p.dim_out;
          for (int k = 0; k < p.dim_out; ++k) mrow[k] += yv * wrow[k];
        }
    }
  }
  return plan;
}

struct RadiusClasses {
  std::vector<int> klass;          // per edge
  std::vector<double> radii;       // per class
};

RadiusClasses radius_classes(const std::vector<Edge>& edges) {
  RadiusClasses rc;
  rc.klass.resize(edges.size());
  std::vector<long long> keys;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    long long key = std::llround(edges[e].dr.norm() * 1e9);
    auto it = std::lower_bound(keys.begin(), keys.end(), key);
    if (it == keys.end() || *it != key) {
      std::size_t pos = it - keys.begin();
      keys.insert(it, key);
      rc.radii.insert(rc.radii.begin() + pos, edges[e].dr.norm());
    }
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    long long key = std::llround(edges[e].dr.norm() * 1e9);
    rc.klass[e] = static_cast<int>(std::lower_bound(keys.begin(), keys.end(), key) -
                                   keys.begin());
  }
  return rc;
}

struct LayerNodes {
  NodeId out = -1;
  std::vector<NodeId> weights;  // W1, b1, W2, b2, mix, bias
};

LayerNodes build_layer_graph(Graph& g, const LayerPlanMeta& meta, NodeId features,
                             const std::vector<Edge>& edges, const RadiusClasses& rc,
                             int radial_basis_count, int radial_hidden, double r_cut,
                             int filter_lmax, double degree_norm, CouplingTables& tables) {
  LayerNodes out;
  const int n_points = g.rows(features);

  NodeId w1 = g.parameter(radial_basis_count, radial_hidden);
  NodeId b1 = g.parameter(1, radial_hidden);
  NodeId w2 = g.parameter(radial_hidden, meta.n_pathweights);
  NodeId b2 = g.parameter(1, meta.n_pathweights);
  NodeId mixw = g.parameter(1, meta.mix.n_weights);
  NodeId bias = g.parameter(1, meta.sig_conv.dim());
  out.weights = {w1, b1, w2, b2, mixw, bias};

  NodeId conv_plus_self;
  if (!edges.empty()) {
    // Radial network evaluated once per distinct radius.
    Tensor2 basis(static_cast<int>(rc.radii.size()), radial_basis_count);
    for (std::size_t c = 0; c < rc.radii.size(); ++c) {
      auto row = radial_basis(rc.radii[c], radial_basis_count, r_cut);
      std::copy(row.begin(), row.end(), basis.v.begin() + c * radial_basis_count);
    }
    NodeId basis_const = g.constant(std::move(basis));
    NodeId hidden = g.tanh_(g.add_rowvec(g.matmul(basis_const, w1), b1));
    NodeId pathw = g.add_rowvec(g.matmul(hidden, w2), b2);

    std::vector<int> src, dst;
    src.reserve(edges.size());
    dst.reserve(edges.size());
    for (const Edge& e : edges) {
      src.push_back(e.neighbor);
      dst.push_back(e.center);
    }
    NodeId gathered = g.gather_rows(features, src);
    auto plan = build_tp_plan(meta, edges, filter_lmax, radial_basis_count, r_cut, tables,
                              rc.klass);
    NodeId messages = g.tp_contract(gathered, pathw, plan);
    NodeId conv = g.scale(g.scatter_sum_rows(messages, dst, n_points), degree_norm);
    conv_plus_self = g.add(conv, g.mix_blocks(features, mixw, std::make_shared<MixPlan>(meta.mix)));
  } else {
    conv_plus_self = g.mix_blocks(features, mixw, std::make_shared<MixPlan>(meta.mix));
  }

  // Bias only on even scalar columns (0_o would break parity).
  Tensor2 bias_mask(1, meta.sig_conv.dim());
  {
    int off = 0;
    for (const auto& e : meta.sig_conv.entries) {
      if (e.ir.l == 0 && e.ir.parity == Parity::Even)
        for (int c = 0; c < e.mult; ++c) bias_mask.v[off + c] = 1.0;
      off += e.mult * e.ir.dim();
    }
  }
  NodeId pre = g.add_rowvec(conv_plus_self, g.mul_mask(bias, std::move(bias_mask)));

  const int d_out = meta.sig_out.dim();
  const int n_scalar = meta.gate.n_scalar_cols;
  if (meta.gate.n_gate == 0) {
    out.out = n_scalar > 0 ? g.tanh_(pre) : pre;
    return out;
  }
  NodeId gates = g.sigmoid(g.slice_cols(pre, d_out, d_out + meta.gate.n_gate));
  NodeId gexp = g.repeat_cols(gates, meta.gate.repeat_counts);
  NodeId nonscalar = g.mul(g.slice_cols(pre, n_scalar, d_out), gexp);
  if (n_scalar > 0) {
    NodeId scalars = g.tanh_(g.slice_cols(pre, 0, n_scalar));
    out.out = g.concat_cols({scalars, nonscalar});
  } else {
    out.out = nonscalar;
  }
  return out;
}

}  // namespace

ParamLayout compute_param_layout(const ModelSpec& spec) {
  SpecPlans plans = build_spec_plans(spec);
  return layout_from_plans(plans, spec.radial_basis_count, spec.radial_hidden);
}

Model Model::create(const ModelSpec& spec) {
  Model m;
  m.spec = spec;
  SpecPlans plans = build_spec_plans(spec);
  ParamLayout layout = layout_from_plans(plans, spec.radial_basis_count, spec.radial_hidden);
  init_params(m.params, layout, plans, spec);
  return m;
}

ModelGraphRefs build_model_graph(Graph& g, const ModelSpec& spec, const Structure& s,
                                 NodeId features, CouplingTables& tables) {
  SpecPlans plans = build_spec_plans(spec);
  if (g.cols(features) != model_input_signature(spec).dim())
    throw std::invalid_argument("feature columns do not match the model input signature");
  if (g.rows(features) != s.size())
    throw std::invalid_argument("feature rows do not match the structure");

  std::vector<Edge> edges = neighbor_list(s, spec.r_cut);
  RadiusClasses rc = radius_classes(edges);
  const double avg_deg =
      s.size() > 0 ? static_cast<double>(edges.size()) / s.size() : 0.0;
  const double degree_norm = avg_deg > 0 ? 1.0 / std::sqrt(avg_deg) : 1.0;

  ModelGraphRefs refs;
  refs.degree_norm = degree_norm;
  NodeId cur = features;
  for (const auto& meta : plans.layers) {
    LayerNodes ln = build_layer_graph(g, meta, cur, edges, rc, spec.radial_basis_count,
                                      spec.radial_hidden, spec.r_cut, spec.filter_lmax,
                                      degree_norm, tables);
    for (NodeId w : ln.weights) refs.weight_leaves.push_back(w);
    cur = ln.out;
  }
  NodeId projw = g.parameter(1, plans.projection.n_weights);
  refs.weight_leaves.push_back(projw);
  refs.output = g.mix_blocks(cur, projw, std::make_shared<MixPlan>(plans.projection));
  refs.layout = layout_from_plans(plans, spec.radial_basis_count, spec.radial_hidden);
  return refs;
}

void load_params(Graph& g, const ModelGraphRefs& refs, const std::vector<double>& flat) {
  if (static_cast<int>(flat.size()) != refs.layout.total)
    throw std::invalid_argument("parameter vector length mismatch");
  for (std::size_t i = 0; i < refs.weight_leaves.size(); ++i) {
    const ParamChunk& c = refs.layout.chunks[i];
    Tensor2 t(c.rows, c.cols);
    std::copy(flat.begin() + c.offset, flat.begin() + c.offset + c.rows * c.cols,
              t.v.begin());
    g.set_value(refs.weight_leaves[i], std::move(t));
  }
}

std::vector<double> extract_params(const Graph& g, const ModelGraphRefs& refs) {
  std::vector<double> flat(refs.layout.total, 0.0);
  for (std::size_t i = 0; i < refs.weight_leaves.size(); ++i) {
    const ParamChunk& c = refs.layout.chunks[i];
    const Tensor2& t = g.value(refs.weight_leaves[i]);
    std::copy(t.v.begin(), t.v.end(), flat.begin() + c.offset);
  }
  return flat;
}

std::vector<double> collect_param_grads(const Graph& g, const ModelGraphRefs& refs) {
  std::vector<double> flat(refs.layout.total, 0.0);
  for (std::size_t i = 0; i < refs.weight_leaves.size(); ++i) {
    const ParamChunk& c = refs.layout.chunks[i];
    const Tensor2& t = g.grad(refs.weight_leaves[i]);
    std::copy(t.v.begin(), t.v.end(), flat.begin() + c.offset);
  }
  return flat;
}

Tensor2 model_forward(const Model& m, const Structure& s, const Tensor2& features,
                      CouplingTables& tables) {
  Graph g;
  NodeId feat = g.input(features.rows, features.cols);
  ModelGraphRefs refs = build_model_graph(g, m.spec, s, feat, tables);
  g.set_value(feat, features);
  load_params(g, refs, m.params);
  g.forward(refs.output);
  return g.value(refs.output);
}

Tensor2 model_forward(const Model& m, const Structure& s, const Tensor2& features) {
  CouplingTables tables;
  return model_forward(m, s, features, tables);
}

// ---------------------------------------------------------------------------
// Standalone layer

Layer Layer::create(const LayerConfig& cfg, std::uint64_t seed) {
  Layer layer;
  layer.cfg = cfg;
  LayerPlanMeta meta = make_layer_meta(cfg.sig_in, cfg.sig_out, cfg.filter_lmax,
                                       cfg.restrict_paths);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = cfg.radial_basis_count * cfg.radial_hidden + cfg.radial_hidden +
                cfg.radial_hidden * meta.n_pathweights + meta.n_pathweights +
                meta.mix.n_weights + meta.sig_conv.dim();
  layer.params.resize(n);
  for (double& p : layer.params) p = gauss(rng);
  // Zero the biases (b1, b2, gate/scalar bias).
  int off = cfg.radial_basis_count * cfg.radial_hidden;
  std::fill(layer.params.begin() + off, layer.params.begin() + off + cfg.radial_hidden, 0.0);
  off += cfg.radial_hidden + cfg.radial_hidden * meta.n_pathweights;
  std::fill(layer.params.begin() + off, layer.params.begin() + off + meta.n_pathweights, 0.0);
  std::fill(layer.params.end() - meta.sig_conv.dim(), layer.params.end(), 0.0);
  return layer;
}

Tensor2 layer_forward(const Layer& layer, const Tensor2& features, const Structure& s,
                      const std::vector<Edge>& edges, CouplingTables& tables) {
  const LayerConfig& cfg = layer.cfg;
  LayerPlanMeta meta = make_layer_meta(cfg.sig_in, cfg.sig_out, cfg.filter_lmax,
                                       cfg.restrict_paths);
  if (features.cols != meta.sig_in.dim())
    throw std::invalid_argument("feature columns do not match the layer input signature");
  Graph g;
  NodeId feat = g.input(features.rows, features.cols);
  RadiusClasses rc = radius_classes(edges);
  const double avg_deg =
      s.size() > 0 ? static_cast<double>(edges.size()) / s.size() : 0.0;
  const double degree_norm = avg_deg > 0 ? 1.0 / std::sqrt(avg_deg) : 1.0;
  LayerNodes ln = build_layer_graph(g, meta, feat, edges, rc, cfg.radial_basis_count,
                                    cfg.radial_hidden, cfg.r_cut, cfg.filter_lmax,
                                    degree_norm, tables);
  g.set_value(feat, features);
  int off = 0;
  for (NodeId w : ln.weights) {
    Tensor2 t(g.rows(w), g.cols(w));
    std::copy(layer.params.begin() + off, layer.params.begin() + off + t.size(), t.v.begin());
    off += static_cast<int>(t.size());
    g.set_value(w, std::move(t));
  }
  g.forward(ln.out);
  return g.value(ln.out);
}

}  // namespace opnet
