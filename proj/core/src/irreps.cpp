#include "opnet/irreps.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace opnet {

std::string Irrep::to_string() const {
  return std::to_string(l) + (parity == Parity::Even ? "e" : "o");
}

int IrrepsSignature::dim() const {
  int d = 0;
  for (const auto& e : entries) d += e.mult * e.ir.dim();
  return d;
}

int IrrepsSignature::entry_offset(std::size_t entry) const {
  int d = 0;
  for (std::size_t i = 0; i < entry; ++i) d += entries[i].mult * entries[i].ir.dim();
  return d;
}

std::string IrrepsSignature::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i) os << "+";
    os << entries[i].mult << "x" << entries[i].ir.to_string();
  }
  return os.str();
}

IrrepsSignature IrrepsSignature::parse(const std::string& text) {
  IrrepsSignature sig;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, '+')) {
    auto xpos = tok.find('x');
    if (xpos == std::string::npos || xpos + 1 >= tok.size())
      throw std::invalid_argument("bad irreps signature: " + text);
    int mult = std::stoi(tok.substr(0, xpos));
    std::string rest = tok.substr(xpos + 1);
    char pc = rest.back();
    if (mult <= 0 || (pc != 'e' && pc != 'o'))
      throw std::invalid_argument("bad irreps signature: " + text);
    int l = std::stoi(rest.substr(0, rest.size() - 1));
    sig.entries.push_back({mult, Irrep{l, pc == 'e' ? Parity::Even : Parity::Odd}});
  }
  return sig;
}

IrrepsSignature IrrepsSignature::natural_ladder(int lmax) {
  IrrepsSignature sig;
  for (int l = 0; l <= lmax; ++l)
    sig.entries.push_back({1, Irrep{l, natural_parity(l)}});
  return sig;
}

GeometricTensor::GeometricTensor(IrrepsSignature s, std::vector<double> c)
    : sig(std::move(s)), coeffs(std::move(c)) {
  if (static_cast<int>(coeffs.size()) != sig.dim())
    throw std::invalid_argument("coefficient length does not match signature");
}

double GeometricTensor::norm() const {
  double s = 0;
  for (double v : coeffs) s += v * v;
  return std::sqrt(s);
}

GroupElement GroupElement::from_axis_angle(const Vec3& axis, double angle, bool inversion) {
  double n = axis.norm();
  if (n == 0.0) throw std::invalid_argument("zero rotation axis");
  return {axis * (1.0 / n), angle, inversion};
}

Mat3 GroupElement::rotation_matrix() const {
  // Rodrigues formula.
  const Vec3 u = axis;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Mat3 r;
  r(0, 0) = c + u.x * u.x * t;
  r(0, 1) = u.x * u.y * t - u.z * s;
  r(0, 2) = u.x * u.z * t + u.y * s;
  r(1, 0) = u.y * u.x * t + u.z * s;
  r(1, 1) = c + u.y * u.y * t;
  r(1, 2) = u.y * u.z * t - u.x * s;
  r(2, 0) = u.z * u.x * t - u.y * s;
  r(2, 1) = u.z * u.y * t + u.x * s;
  r(2, 2) = c + u.z * u.z * t;
  return r;
}

Mat3 GroupElement::cartesian_matrix() const {
  Mat3 r = rotation_matrix();
  if (inversion)
    for (double& v : r.a) v = -v;
  return r;
}

GroupElement GroupElement::from_matrix(const Mat3& rotation, bool inversion) {
  // atan2 on the skew and trace parts stays well conditioned near both
  // angle 0 and angle pi.
  Vec3 skew{rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
            rotation(1, 0) - rotation(0, 1)};
  const double two_sin = skew.norm();
  const double two_cos = rotation.trace() - 1.0;
  const double angle = std::atan2(two_sin, two_cos);
  if (two_sin > 1e-9) return {skew * (1.0 / two_sin), angle, inversion};
  if (two_cos > 0) return {{0, 0, 1}, 0.0, inversion};
  // angle ~ pi: R = 2 u u^T - I up to rounding.
  Vec3 u;
  double best = -1;
  for (int i = 0; i < 3; ++i) {
    double d = (rotation(i, i) + 1.0) / 2.0;
    if (d > best) {
      best = d;
      double ui = std::sqrt(std::max(0.0, d));
      Vec3 cand;
      cand[i] = ui;
      if (ui > 1e-12) {
        for (int j = 0; j < 3; ++j)
          if (j != i) cand[j] = (rotation(i, j) + rotation(j, i)) / (4.0 * ui);
      }
      u = cand;
    }
  }
  return {u.normalized(), angle, inversion};
}

GroupElement GroupElement::inverse() const {
  return {axis, -angle, inversion};
}

GroupElement compose(const GroupElement& a, const GroupElement& b) {
  Mat3 r = a.rotation_matrix() * b.rotation_matrix();
  return GroupElement::from_matrix(r, a.inversion != b.inversion);
}

GroupElement random_group_element(std::mt19937_64& rng, bool include_inversion) {
  // Uniform unit quaternion -> Haar-uniform rotation.
  std::normal_distribution<double> gauss(0.0, 1.0);
  double q0 = gauss(rng), q1 = gauss(rng), q2 = gauss(rng), q3 = gauss(rng);
  double n = std::sqrt(q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3);
  q0 /= n;
  q1 /= n;
  q2 /= n;
  q3 /= n;
  double vn = std::sqrt(q1 * q1 + q2 * q2 + q3 * q3);
  double angle = 2.0 * std::atan2(vn, q0);
  Vec3 axis = vn > 1e-14 ? Vec3{q1 / vn, q2 / vn, q3 / vn} : Vec3{0, 0, 1};
  bool inv = false;
  if (include_inversion) inv = (rng() & 1u) != 0;
  return {axis, angle, inv};
}

namespace {

// Real Wigner matrices by the Ivanic-Ruedenberg recursion (with the
// published erratum): D^l is built from D^{l-1} and the 3x3 block D^1.
// Index order within a block is m = -l..l; D^1 lives in the (y, z, x)
// ordering of the real L=1 basis.

struct IRRecursion {
  const DMatrix& d1;
  const DMatrix& dprev;
  int l;

  double r1(int i, int j) const { return d1(i + 1, j + 1); }
  double prev(int a, int b) const { return dprev(a + (l - 1), b + (l - 1)); }

  double P(int i, int a, int b) const {
    if (b == l) return r1(i, 1) * prev(a, l - 1) - r1(i, -1) * prev(a, -l + 1);
    if (b == -l) return r1(i, 1) * prev(a, -l + 1) + r1(i, -1) * prev(a, l - 1);
    return r1(i, 0) * prev(a, b);
  }

  double U(int m, int n) const { return P(0, m, n); }

  double V(int m, int n) const {
    if (m == 0) return P(1, 1, n) + P(-1, -1, n);
    if (m > 0) {
      double s = P(1, m - 1, n) * std::sqrt(1.0 + (m == 1 ? 1.0 : 0.0));
      if (m != 1) s -= P(-1, -m + 1, n);
      return s;
    }
    double s = P(-1, -m - 1, n) * std::sqrt(1.0 + (m == -1 ? 1.0 : 0.0));
    if (m != -1) s += P(1, m + 1, n);
    return s;
  }

  double W(int m, int n) const {
    if (m == 0) return 0.0;
    if (m > 0) return P(1, m + 1, n) + P(-1, -m - 1, n);
    return P(1, m - 1, n) - P(-1, -m + 1, n);
  }
};

DMatrix wigner_d_l1(const Mat3& r) {
  // Conjugate the Cartesian rotation into the (y, z, x) component order.
  static const int ax[3] = {1, 2, 0};
  DMatrix d(3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d(i, j) = r(ax[i], ax[j]);
  return d;
}

}  // namespace

DMatrix wigner_D(int l, const GroupElement& g) {
  if (l < 0) throw std::invalid_argument("negative degree");
  if (l == 0) {
    DMatrix d(1);
    d(0, 0) = 1.0;
    return d;
  }
  DMatrix d1 = wigner_d_l1(g.rotation_matrix());
  if (l == 1) return d1;
  DMatrix dprev = d1;
  for (int cur = 2; cur <= l; ++cur) {
    DMatrix d(2 * cur + 1);
    IRRecursion rec{d1, dprev, cur};
    for (int m = -cur; m <= cur; ++m) {
      for (int n = -cur; n <= cur; ++n) {
        int am = std::abs(m);
        double denom = (std::abs(n) == cur) ? (2.0 * cur) * (2.0 * cur - 1.0)
                                            : double(cur + n) * double(cur - n);
        double u = std::sqrt(double(cur + m) * double(cur - m) / denom);
        double v = 0.5 *
                   std::sqrt((1.0 + (m == 0 ? 1.0 : 0.0)) * double(cur + am - 1) *
                             double(cur + am) / denom) *
                   (1.0 - 2.0 * (m == 0 ? 1.0 : 0.0));
        double w = -0.5 * std::sqrt(double(cur - am - 1) * double(cur - am) / denom) *
                   (1.0 - (m == 0 ? 1.0 : 0.0));
        double val = 0.0;
        if (u != 0.0) val += u * rec.U(m, n);
        if (v != 0.0) val += v * rec.V(m, n);
        if (w != 0.0) val += w * rec.W(m, n);
        d(m + cur, n + cur) = val;
      }
    }
    dprev = std::move(d);
  }
  return dprev;
}

RepBlocks RepBlocks::build(int lmax, const GroupElement& g) {
  RepBlocks rb;
  rb.inversion = g.inversion;
  rb.d.reserve(lmax + 1);
  for (int l = 0; l <= lmax; ++l) rb.d.push_back(wigner_D(l, g));
  return rb;
}

void RepBlocks::apply(const IrrepsSignature& sig, const double* in, double* out) const {
  int off = 0;
  for (const auto& e : sig.entries) {
    int l = e.ir.l, dim = e.ir.dim();
    if (l >= static_cast<int>(d.size()))
      throw std::invalid_argument("RepBlocks built with too small lmax");
    double sign = (inversion && e.ir.parity == Parity::Odd) ? -1.0 : 1.0;
    const DMatrix& dm = d[l];
    for (int u = 0; u < e.mult; ++u) {
      const double* src = in + off;
      double* dst = out + off;
      for (int r = 0; r < dim; ++r) {
        double s = 0;
        for (int c = 0; c < dim; ++c) s += dm(r, c) * src[c];
        dst[r] = sign * s;
      }
      off += dim;
    }
  }
}

GeometricTensor rep_apply(const IrrepsSignature& sig, const GroupElement& g,
                          const GeometricTensor& t) {
  if (!(t.sig == sig)) throw std::invalid_argument("signature mismatch in rep_apply");
  int lmax = 0;
  for (const auto& e : sig.entries) lmax = std::max(lmax, e.ir.l);
  RepBlocks rb = RepBlocks::build(lmax, g);
  GeometricTensor out(sig);
  rb.apply(sig, t.coeffs.data(), out.coeffs.data());
  return out;
}

}  // namespace opnet
