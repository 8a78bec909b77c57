#include "opnet/harmonics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace opnet {

namespace {

constexpr double kPi = std::numbers::pi;

// P_l^m(cos theta) / sin^m(theta), a polynomial in z, without the
// Condon-Shortley sign. Filled for one m, l = m..lmax.
void legendre_ratio(int m, int lmax, double z, double* out) {
  double pmm = 1.0;
  for (int i = 1; i <= m; ++i) pmm *= 2 * i - 1;  // (2m-1)!!
  out[0] = pmm;
  if (lmax == m) return;
  out[1] = (2 * m + 1) * z * pmm;
  for (int l = m + 2; l <= lmax; ++l)
    out[l - m] = ((2 * l - 1) * z * out[l - m - 1] - (l + m - 1) * out[l - m - 2]) /
                 (l - m);
}

double norm_lm(int l, int m) {
  double f = 2.0;
  for (int k = l - m + 1; k <= l + m; ++k) f /= k;
  return std::sqrt(f);
}

void eval_all_degrees(int lmax, const Vec3& u, double* out) {
  // c_m + i s_m = (x + i y)^m, i.e. sin^m(theta) {cos,sin}(m phi).
  std::vector<double> c(lmax + 1), s(lmax + 1);
  c[0] = 1.0;
  s[0] = 0.0;
  for (int m = 1; m <= lmax; ++m) {
    c[m] = c[m - 1] * u.x - s[m - 1] * u.y;
    s[m] = s[m - 1] * u.x + c[m - 1] * u.y;
  }
  std::vector<double> ratio(lmax + 1);
  std::vector<int> off(lmax + 1);
  for (int l = 0; l <= lmax; ++l) off[l] = l * l;  // block start within ladder
  for (int m = 0; m <= lmax; ++m) {
    legendre_ratio(m, lmax, u.z, ratio.data());
    for (int l = m; l <= lmax; ++l) {
      double base = ratio[l - m];
      if (m == 0) {
        out[off[l] + l] = base;
      } else {
        double nv = norm_lm(l, m) * base;
        out[off[l] + l + m] = nv * c[m];
        out[off[l] + l - m] = nv * s[m];
      }
    }
  }
}

}  // namespace

void eval_sh_degree(int l, const Vec3& direction, double* out) {
  std::vector<double> all((l + 1) * (l + 1));
  eval_all_degrees(l, direction, all.data());
  std::copy(all.begin() + l * l, all.end(), out);
}

GeometricTensor eval_sh(int lmax, const Vec3& direction) {
  if (std::abs(direction.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("eval_sh requires a unit direction");
  GeometricTensor t(IrrepsSignature::natural_ladder(lmax));
  eval_all_degrees(lmax, direction, t.coeffs.data());
  return t;
}

SphereGrid SphereGrid::build(int n) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("grid resolution must be even, >= 2");
  SphereGrid g;
  g.n_theta = n + 1;
  g.n_phi = 2 * n;
  g.thetas.resize(g.n_theta);
  for (int j = 0; j <= n; ++j) g.thetas[j] = kPi * j / n;
  g.phis.resize(g.n_phi);
  for (int k = 0; k < g.n_phi; ++k) g.phis[k] = 2.0 * kPi * k / g.n_phi;

  // Clenshaw-Curtis weights on cos(theta_j): exact for the polynomial
  // degrees sampled here, so the total mass is 4*pi.
  std::vector<double> wt(g.n_theta, 0.0);
  wt[0] = wt[n] = 1.0 / (double(n) * n - 1.0);
  for (int j = 1; j < n; ++j) {
    double v = 1.0;
    for (int k = 1; k <= n / 2 - 1; ++k)
      v -= 2.0 * std::cos(2.0 * k * g.thetas[j]) / (4.0 * k * k - 1.0);
    v -= std::cos(n * g.thetas[j]) / (double(n) * n - 1.0);
    wt[j] = 2.0 * v / n;
  }

  const double wphi = 2.0 * kPi / g.n_phi;
  g.directions.resize(static_cast<std::size_t>(g.n_theta) * g.n_phi);
  g.weights.resize(g.directions.size());
  for (int j = 0; j < g.n_theta; ++j) {
    double st = std::sin(g.thetas[j]), ct = std::cos(g.thetas[j]);
    for (int k = 0; k < g.n_phi; ++k) {
      g.directions[g.index(j, k)] = {st * std::cos(g.phis[k]), st * std::sin(g.phis[k]), ct};
      g.weights[g.index(j, k)] = wt[j] * wphi;
    }
  }
  return g;
}

const SphereGrid& SphereGrid::standard() {
  static const SphereGrid grid = SphereGrid::build(64);
  return grid;
}

bool is_sphere_signal(const GeometricTensor& t) {
  const auto& e = t.sig.entries;
  for (std::size_t l = 0; l < e.size(); ++l) {
    if (e[l].mult != 1 || e[l].ir.l != static_cast<int>(l) ||
        e[l].ir.parity != natural_parity(static_cast<int>(l)))
      return false;
  }
  return !e.empty();
}

double eval_signal(const GeometricTensor& signal, const Vec3& direction) {
  const int lmax = static_cast<int>(signal.sig.entries.size()) - 1;
  std::vector<double> y((lmax + 1) * (lmax + 1));
  eval_all_degrees(lmax, direction, y.data());
  double v = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) v += y[i] * signal.coeffs[i];
  return v;
}

std::vector<double> sample_signal(const GeometricTensor& signal, const SphereGrid& grid) {
  if (!is_sphere_signal(signal))
    throw std::invalid_argument("sample_signal requires a natural-parity ladder signal");
  std::vector<double> out(grid.directions.size());
  for (std::size_t i = 0; i < grid.directions.size(); ++i)
    out[i] = eval_signal(signal, grid.directions[i]);
  return out;
}

std::pair<Vec3, double> refine_local_max(const GeometricTensor& signal, Vec3 start,
                                         double initial_step) {
  Vec3 dir = start.normalized();
  double best = eval_signal(signal, dir);
  double h = initial_step;
  while (h > 1e-13) {
    // Tangent frame at the current direction.
    Vec3 ref = std::abs(dir.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    Vec3 t1 = dir.cross(ref).normalized();
    Vec3 t2 = dir.cross(t1);
    bool moved = false;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b) {
        if (a == 0 && b == 0) continue;
        Vec3 cand = (dir + t1 * (a * h) + t2 * (b * h)).normalized();
        double v = eval_signal(signal, cand);
        if (v > best) {
          best = v;
          dir = cand;
          moved = true;
        }
      }
    if (!moved) h *= 0.35;
  }
  return {dir, best};
}

GeometricTensor project_points(const std::vector<Vec3>& points, int lmax,
                               const SphereGrid& grid) {
  GeometricTensor signal(IrrepsSignature::natural_ladder(lmax));
  double rmax = 0.0;
  bool any = false;
  for (const Vec3& p : points) {
    double r = p.norm();
    if (r == 0.0) continue;  // r_hat undefined at the origin
    any = true;
    rmax = std::max(rmax, r);
    std::vector<double> y((lmax + 1) * (lmax + 1));
    eval_all_degrees(lmax, p * (1.0 / r), y.data());
    for (std::size_t i = 0; i < y.size(); ++i) signal.coeffs[i] += r * y[i];
  }
  if (!any) return signal;

  std::vector<double> values = sample_signal(signal, grid);
  std::size_t arg = std::max_element(values.begin(), values.end()) - values.begin();
  auto [dir, vmax] = refine_local_max(signal, grid.directions[arg], kPi / (grid.n_theta - 1));
  if (vmax <= 0.0) throw std::logic_error("projection has non-positive maximum");
  const double factor = rmax / vmax;
  for (double& c : signal.coeffs) c *= factor;
  return signal;
}

namespace {

struct GridPeak {
  Vec3 dir;
  double value;
};

}  // namespace

std::vector<Vec3> peak_vectors(const GeometricTensor& signal, const SphereGrid& grid,
                               double rel_threshold) {
  if (rel_threshold <= 0.0 || rel_threshold > 1.0)
    throw std::invalid_argument("rel_threshold must be in (0, 1]");
  std::vector<double> v = sample_signal(signal, grid);
  const int nt = grid.n_theta, np = grid.n_phi;
  const double cell = kPi / (nt - 1);

  double gmax_grid = *std::max_element(v.begin(), v.end());
  if (!(gmax_grid > 1e-300)) return {};
  std::size_t arg = std::max_element(v.begin(), v.end()) - v.begin();
  double gmax = refine_local_max(signal, grid.directions[arg], cell).second;

  auto at = [&](int j, int k) { return v[grid.index(j, ((k % np) + np) % np)]; };

  std::vector<GridPeak> candidates;
  // Poles are single logical points duplicated across the phi columns.
  {
    double north = at(0, 0), south = at(nt - 1, 0);
    bool nmax = true, smax = true;
    for (int k = 0; k < np; ++k) {
      if (at(1, k) > north) nmax = false;
      if (at(nt - 2, k) > south) smax = false;
    }
    if (nmax) candidates.push_back({grid.directions[grid.index(0, 0)], north});
    if (smax) candidates.push_back({grid.directions[grid.index(nt - 1, 0)], south});
  }
  for (int j = 1; j < nt - 1; ++j)
    for (int k = 0; k < np; ++k) {
      double c = at(j, k);
      bool is_max = true;
      for (int dj = -1; dj <= 1 && is_max; ++dj)
        for (int dk = -1; dk <= 1; ++dk) {
          if (dj == 0 && dk == 0) continue;
          if (at(j + dj, k + dk) > c) {
            is_max = false;
            break;
          }
        }
      if (is_max) candidates.push_back({grid.directions[grid.index(j, k)], c});
    }

  std::vector<GridPeak> peaks;
  for (const GridPeak& cand : candidates) {
    if (cand.value < rel_threshold * gmax - 1e-12) continue;
    auto [dir, value] = refine_local_max(signal, cand.dir, cell);
    if (value < rel_threshold * gmax) continue;
    bool dup = false;
    for (auto& p : peaks) {
      if (p.dir.dot(dir) > std::cos(1.5 * cell)) {
        if (value > p.value) p = {dir, value};
        dup = true;
        break;
      }
    }
    if (!dup) peaks.push_back({dir, value});
  }

  std::sort(peaks.begin(), peaks.end(), [](const GridPeak& a, const GridPeak& b) {
    if (a.value != b.value) return a.value > b.value;
    if (a.dir.x != b.dir.x) return a.dir.x < b.dir.x;
    if (a.dir.y != b.dir.y) return a.dir.y < b.dir.y;
    return a.dir.z < b.dir.z;
  });
  std::vector<Vec3> out;
  out.reserve(peaks.size());
  for (const GridPeak& p : peaks) out.push_back(p.dir * p.value);
  return out;
}

}  // namespace opnet
