#include "shapetraj/shooting.h"

#include <cmath>
#include <cstring>

namespace shapetraj {

namespace {

// Row accessors on row-major N x 3 storage.
inline const double* row(const PointSet& p, Eigen::Index i) { return p.data() + 3 * i; }
inline double* row(PointSet& p, Eigen::Index i) { return p.data() + 3 * i; }

inline double dot3(const double* a, const double* b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline void add3(double* out, double s, const double* v) {
  out[0] += s * v[0];
  out[1] += s * v[1];
  out[2] += s * v[2];
}

void check_forces(const ForceField& f, int n_steps, Eigen::Index n_cp) {
  if (f.n_steps() != n_steps || f.n_control_points() != n_cp) {
    throw InvalidArgument("force field shape (" + std::to_string(f.n_steps()) + " x " +
                          std::to_string(f.n_control_points()) + ") does not match integrator (" +
                          std::to_string(n_steps) + " x " + std::to_string(n_cp) + ")");
  }
}

// Zero force steps take the unforced path so that an all-zero field
// reproduces the geodesic bit for bit.
const PointSet* force_at(const ForceField* f, int t) {
  if (f == nullptr || f->step_is_zero(t)) return nullptr;
  return &f->at(t);
}

FlowState lincomb(const FlowState& y, double a, const FlowState& x) {
  FlowState r = y;
  r.axpy(a, x);
  return r;
}

FlowState step_forward(const FlowState& y, const PointSet* u, double h, Scheme scheme,
                       const KernelParams& k) {
  if (scheme == Scheme::Euler) {
    return lincomb(y, h, flow_rhs(y, u, k));
  }
  const FlowState k1 = flow_rhs(y, u, k);
  const FlowState k2 = flow_rhs(lincomb(y, 0.5 * h, k1), u, k);
  const FlowState k3 = flow_rhs(lincomb(y, 0.5 * h, k2), u, k);
  const FlowState k4 = flow_rhs(lincomb(y, h, k3), u, k);
  FlowState out = y;
  out.axpy(h / 6.0, k1);
  out.axpy(h / 3.0, k2);
  out.axpy(h / 3.0, k3);
  out.axpy(h / 6.0, k4);
  return out;
}

}  // namespace

void IntegratorConfig::validate() const {
  if (n_steps < 1) throw InvalidArgument("integrator needs n_steps >= 1");
}

std::uint64_t IntegratorConfig::fingerprint() const {
  // FNV-1a over (n_steps, scheme)
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(n_steps));
  mix(scheme == Scheme::RK4 ? 4 : 1);
  return h;
}

ForceField::ForceField(int n_steps, Eigen::Index n_cp) {
  if (n_steps < 1) throw InvalidArgument("force field needs n_steps >= 1");
  steps_.assign(static_cast<std::size_t>(n_steps), PointSet::Zero(n_cp, 3));
}

double ForceField::squared_norm() const {
  double s = 0.0;
  for (const auto& u : steps_) s += u.squaredNorm();
  return s;
}

ForceField& ForceField::operator*=(double s) {
  for (auto& u : steps_) u *= s;
  return *this;
}

FlowState FlowState::zeros_like(const FlowState& s) {
  return FlowState{PointSet::Zero(s.control_points.rows(), 3), PointSet::Zero(s.momenta.rows(), 3),
                   PointSet::Zero(s.landmarks.rows(), 3)};
}

FlowState& FlowState::axpy(double a, const FlowState& x) {
  control_points += a * x.control_points;
  momenta += a * x.momenta;
  landmarks += a * x.landmarks;
  return *this;
}

double FlowState::dot(const FlowState& o) const {
  return control_points.cwiseProduct(o.control_points).sum() + momenta.cwiseProduct(o.momenta).sum() +
         landmarks.cwiseProduct(o.landmarks).sum();
}

FlowState flow_rhs(const FlowState& y, const PointSet* u, const KernelParams& k) {
  const Eigen::Index nc = y.control_points.rows();
  const Eigen::Index nx = y.landmarks.rows();
  const double inv = k.inv_sigma_sq();
  const double s = 2.0 * inv;
  FlowState d{PointSet::Zero(nc, 3), PointSet::Zero(nc, 3), PointSet::Zero(nx, 3)};

  for (Eigen::Index a = 0; a < nc; ++a) {
    const double* ca = row(y.control_points, a);
    const double* ma = row(y.momenta, a);
    add3(row(d.control_points, a), 1.0, ma);
    for (Eigen::Index b = a + 1; b < nc; ++b) {
      const double* cb = row(y.control_points, b);
      const double* mb = row(y.momenta, b);
      const double D[3] = {ca[0] - cb[0], ca[1] - cb[1], ca[2] - cb[2]};
      const double kv = std::exp(-dot3(D, D) * inv);
      add3(row(d.control_points, a), kv, mb);
      add3(row(d.control_points, b), kv, ma);
      const double w = s * kv * dot3(ma, mb);
      add3(row(d.momenta, a), w, D);
      add3(row(d.momenta, b), -w, D);
    }
  }
  if (u != nullptr) d.momenta += *u;

  for (Eigen::Index i = 0; i < nx; ++i) {
    const double* xi = row(y.landmarks, i);
    double* dxi = row(d.landmarks, i);
    for (Eigen::Index b = 0; b < nc; ++b) {
      const double* cb = row(y.control_points, b);
      const double E[3] = {xi[0] - cb[0], xi[1] - cb[1], xi[2] - cb[2]};
      add3(dxi, std::exp(-dot3(E, E) * inv), row(y.momenta, b));
    }
  }
  return d;
}

FlowState flow_rhs_jvp(const FlowState& y, const FlowState& dy, const PointSet* du,
                       const KernelParams& k) {
  const Eigen::Index nc = y.control_points.rows();
  const Eigen::Index nx = y.landmarks.rows();
  const double inv = k.inv_sigma_sq();
  const double s = 2.0 * inv;
  FlowState d{PointSet::Zero(nc, 3), PointSet::Zero(nc, 3), PointSet::Zero(nx, 3)};

  for (Eigen::Index a = 0; a < nc; ++a) {
    const double* ca = row(y.control_points, a);
    const double* ma = row(y.momenta, a);
    const double* dca = row(dy.control_points, a);
    const double* dma = row(dy.momenta, a);
    add3(row(d.control_points, a), 1.0, dma);
    for (Eigen::Index b = a + 1; b < nc; ++b) {
      const double* cb = row(y.control_points, b);
      const double* mb = row(y.momenta, b);
      const double* dcb = row(dy.control_points, b);
      const double* dmb = row(dy.momenta, b);
      const double D[3] = {ca[0] - cb[0], ca[1] - cb[1], ca[2] - cb[2]};
      const double dD[3] = {dca[0] - dcb[0], dca[1] - dcb[1], dca[2] - dcb[2]};
      const double kv = std::exp(-dot3(D, D) * inv);
      const double dkv = -s * kv * dot3(D, dD);
      add3(row(d.control_points, a), dkv, mb);
      add3(row(d.control_points, a), kv, dmb);
      add3(row(d.control_points, b), dkv, ma);
      add3(row(d.control_points, b), kv, dma);
      const double p = dot3(ma, mb);
      const double dp = dot3(dma, mb) + dot3(ma, dmb);
      // derivative of s * kv * p * D
      const double cD = s * (dkv * p + kv * dp);
      const double cdD = s * kv * p;
      double* ra = row(d.momenta, a);
      double* rb = row(d.momenta, b);
      for (int c = 0; c < 3; ++c) {
        const double v = cD * D[c] + cdD * dD[c];
        ra[c] += v;
        rb[c] -= v;
      }
    }
  }
  if (du != nullptr) d.momenta += *du;

  for (Eigen::Index i = 0; i < nx; ++i) {
    const double* xi = row(y.landmarks, i);
    const double* dxi = row(dy.landmarks, i);
    double* out = row(d.landmarks, i);
    for (Eigen::Index b = 0; b < nc; ++b) {
      const double* cb = row(y.control_points, b);
      const double* dcb = row(dy.control_points, b);
      const double E[3] = {xi[0] - cb[0], xi[1] - cb[1], xi[2] - cb[2]};
      const double dE[3] = {dxi[0] - dcb[0], dxi[1] - dcb[1], dxi[2] - dcb[2]};
      const double g = std::exp(-dot3(E, E) * inv);
      add3(out, -s * g * dot3(E, dE), row(y.momenta, b));
      add3(out, g, row(dy.momenta, b));
    }
  }
  return d;
}

FlowState flow_rhs_vjp(const FlowState& y, const FlowState& bar, const KernelParams& k) {
  const Eigen::Index nc = y.control_points.rows();
  const Eigen::Index nx = y.landmarks.rows();
  const double inv = k.inv_sigma_sq();
  const double s = 2.0 * inv;
  FlowState g{PointSet::Zero(nc, 3), PointSet::Zero(nc, 3), PointSet::Zero(nx, 3)};

  for (Eigen::Index a = 0; a < nc; ++a) {
    const double* ca = row(y.control_points, a);
    const double* ma = row(y.momenta, a);
    const double* aca = row(bar.control_points, a);
    const double* ama = row(bar.momenta, a);
    add3(row(g.momenta, a), 1.0, aca);
    for (Eigen::Index b = a + 1; b < nc; ++b) {
      const double* cb = row(y.control_points, b);
      const double* mb = row(y.momenta, b);
      const double* acb = row(bar.control_points, b);
      const double* amb = row(bar.momenta, b);
      const double D[3] = {ca[0] - cb[0], ca[1] - cb[1], ca[2] - cb[2]};
      const double kv = std::exp(-dot3(D, D) * inv);
      const double p = dot3(ma, mb);

      add3(row(g.momenta, b), kv, aca);
      add3(row(g.momenta, a), kv, acb);
      double gk = dot3(aca, mb) + dot3(acb, ma);

      const double bm[3] = {ama[0] - amb[0], ama[1] - amb[1], ama[2] - amb[2]};
      const double q = dot3(bm, D);
      gk += s * p * q;
      const double gp = s * kv * q;
      add3(row(g.momenta, a), gp, mb);
      add3(row(g.momenta, b), gp, ma);

      const double cb_coef = s * kv * p;
      const double cd_coef = -s * kv * gk;
      double* ga = row(g.control_points, a);
      double* gb = row(g.control_points, b);
      for (int c = 0; c < 3; ++c) {
        const double v = cb_coef * bm[c] + cd_coef * D[c];
        ga[c] += v;
        gb[c] -= v;
      }
    }
  }

  for (Eigen::Index i = 0; i < nx; ++i) {
    const double* xi = row(y.landmarks, i);
    const double* axi = row(bar.landmarks, i);
    double* gxi = row(g.landmarks, i);
    for (Eigen::Index b = 0; b < nc; ++b) {
      const double* cb = row(y.control_points, b);
      const double E[3] = {xi[0] - cb[0], xi[1] - cb[1], xi[2] - cb[2]};
      const double gv = std::exp(-dot3(E, E) * inv);
      add3(row(g.momenta, b), gv, axi);
      const double coef = -s * gv * dot3(axi, row(y.momenta, b));
      double* gcb = row(g.control_points, b);
      for (int c = 0; c < 3; ++c) {
        gxi[c] += coef * E[c];
        gcb[c] -= coef * E[c];
      }
    }
  }
  return g;
}

HamiltonianDerivative hamiltonian_rhs(const ControlSystem& sys, const PointSet* forces_at_t,
                                      const KernelParams& k) {
  sys.validate();
  if (forces_at_t != nullptr && (forces_at_t->rows() != sys.size())) {
    throw InvalidArgument("hamiltonian_rhs: forces have " + std::to_string(forces_at_t->rows()) +
                          " rows, expected " + std::to_string(sys.size()));
  }
  FlowState y{sys.control_points, sys.momenta, PointSet(0, 3)};
  FlowState d = flow_rhs(y, forces_at_t, k);
  return {std::move(d.control_points), std::move(d.momenta)};
}

FlowResult shoot(const ControlSystem& sys, const LandmarkSet& carried, const ForceField* forces,
                 const IntegratorConfig& cfg, const KernelParams& k) {
  sys.validate();
  cfg.validate();
  if (forces != nullptr) check_forces(*forces, cfg.n_steps, sys.size());

  FlowResult out;
  out.states.reserve(static_cast<std::size_t>(cfg.n_steps) + 1);
  out.times.reserve(static_cast<std::size_t>(cfg.n_steps) + 1);
  out.states.push_back(FlowState{sys.control_points, sys.momenta, carried});
  out.times.push_back(0.0);
  const double h = cfg.step();
  for (int t = 0; t < cfg.n_steps; ++t) {
    out.states.push_back(step_forward(out.states.back(), force_at(forces, t), h, cfg.scheme, k));
    out.times.push_back(t + 1 == cfg.n_steps ? 1.0 : (t + 1) * h);
  }
  return out;
}

double hamiltonian_energy(const ControlSystem& sys, const KernelParams& k) {
  return rkhs_norm_sq(sys, k);
}

FlowState shoot_tangent(const FlowResult& flow, const ForceField* forces,
                        const FlowState& initial_tangent, const ForceField* force_tangent,
                        const IntegratorConfig& cfg, const KernelParams& k) {
  const int n = flow.n_steps();
  if (n != cfg.n_steps) throw InvalidArgument("shoot_tangent: flow/integrator step mismatch");
  const double h = cfg.step();
  FlowState dy = initial_tangent;
  for (int t = 0; t < n; ++t) {
    const FlowState& y = flow.states[t];
    const PointSet* u = force_at(forces, t);
    const PointSet* du = force_tangent != nullptr ? &force_tangent->at(t) : nullptr;
    if (cfg.scheme == Scheme::Euler) {
      dy.axpy(h, flow_rhs_jvp(y, dy, du, k));
      continue;
    }
    const FlowState k1 = flow_rhs(y, u, k);
    const FlowState y2 = lincomb(y, 0.5 * h, k1);
    const FlowState k2 = flow_rhs(y2, u, k);
    const FlowState y3 = lincomb(y, 0.5 * h, k2);
    const FlowState k3 = flow_rhs(y3, u, k);
    const FlowState y4 = lincomb(y, h, k3);

    const FlowState dk1 = flow_rhs_jvp(y, dy, du, k);
    const FlowState dk2 = flow_rhs_jvp(y2, lincomb(dy, 0.5 * h, dk1), du, k);
    const FlowState dk3 = flow_rhs_jvp(y3, lincomb(dy, 0.5 * h, dk2), du, k);
    const FlowState dk4 = flow_rhs_jvp(y4, lincomb(dy, h, dk3), du, k);
    dy.axpy(h / 6.0, dk1);
    dy.axpy(h / 3.0, dk2);
    dy.axpy(h / 3.0, dk3);
    dy.axpy(h / 6.0, dk4);
  }
  return dy;
}

std::vector<FlowState> shoot_tangents(const FlowResult& flow, const ForceField* forces,
                                      std::vector<FlowState> dys, const IntegratorConfig& cfg,
                                      const KernelParams& k) {
  const int n = flow.n_steps();
  if (n != cfg.n_steps) throw InvalidArgument("shoot_tangents: flow/integrator step mismatch");
  const double h = cfg.step();
  for (int t = 0; t < n; ++t) {
    const FlowState& y = flow.states[static_cast<std::size_t>(t)];
    if (cfg.scheme == Scheme::Euler) {
      for (auto& dy : dys) dy.axpy(h, flow_rhs_jvp(y, dy, nullptr, k));
      continue;
    }
    const PointSet* u = force_at(forces, t);
    const FlowState k1 = flow_rhs(y, u, k);
    const FlowState y2 = lincomb(y, 0.5 * h, k1);
    const FlowState k2 = flow_rhs(y2, u, k);
    const FlowState y3 = lincomb(y, 0.5 * h, k2);
    const FlowState k3 = flow_rhs(y3, u, k);
    const FlowState y4 = lincomb(y, h, k3);
    for (auto& dy : dys) {
      const FlowState dk1 = flow_rhs_jvp(y, dy, nullptr, k);
      const FlowState dk2 = flow_rhs_jvp(y2, lincomb(dy, 0.5 * h, dk1), nullptr, k);
      const FlowState dk3 = flow_rhs_jvp(y3, lincomb(dy, 0.5 * h, dk2), nullptr, k);
      const FlowState dk4 = flow_rhs_jvp(y4, lincomb(dy, h, dk3), nullptr, k);
      dy.axpy(h / 6.0, dk1);
      dy.axpy(h / 3.0, dk2);
      dy.axpy(h / 3.0, dk3);
      dy.axpy(h / 6.0, dk4);
    }
  }
  return dys;
}

FlowAdjoint shoot_adjoint(const FlowResult& flow, const ForceField* forces,
                          const std::vector<FlowState>& seeds, const IntegratorConfig& cfg,
                          const KernelParams& k) {
  const int n = flow.n_steps();
  if (n != cfg.n_steps) throw InvalidArgument("shoot_adjoint: flow/integrator step mismatch");
  if (static_cast<int>(seeds.size()) != n + 1) {
    throw InvalidArgument("shoot_adjoint: expected one seed per time node");
  }
  const double h = cfg.step();
  const Eigen::Index nc = flow.states.front().control_points.rows();

  FlowAdjoint out;
  if (forces != nullptr) out.forces = ForceField(n, nc);

  FlowState bar = seeds[static_cast<std::size_t>(n)];
  for (int t = n - 1; t >= 0; --t) {
    const FlowState& y = flow.states[static_cast<std::size_t>(t)];
    const PointSet* u = force_at(forces, t);
    FlowState prev = bar;
    if (cfg.scheme == Scheme::Euler) {
      FlowState kb = bar;
      kb.control_points *= h;
      kb.momenta *= h;
      kb.landmarks *= h;
      prev.axpy(1.0, flow_rhs_vjp(y, kb, k));
      if (forces != nullptr) out.forces.at(t) = kb.momenta;
    } else {
      const FlowState k1 = flow_rhs(y, u, k);
      const FlowState y2 = lincomb(y, 0.5 * h, k1);
      const FlowState k2 = flow_rhs(y2, u, k);
      const FlowState y3 = lincomb(y, 0.5 * h, k2);
      const FlowState k3 = flow_rhs(y3, u, k);
      const FlowState y4 = lincomb(y, h, k3);

      FlowState zero = FlowState::zeros_like(bar);
      FlowState kb1 = lincomb(zero, h / 6.0, bar);
      FlowState kb2 = lincomb(zero, h / 3.0, bar);
      FlowState kb3 = lincomb(zero, h / 3.0, bar);
      const FlowState kb4 = lincomb(zero, h / 6.0, bar);

      const FlowState yb4 = flow_rhs_vjp(y4, kb4, k);
      prev.axpy(1.0, yb4);
      kb3.axpy(h, yb4);
      const FlowState yb3 = flow_rhs_vjp(y3, kb3, k);
      prev.axpy(1.0, yb3);
      kb2.axpy(0.5 * h, yb3);
      const FlowState yb2 = flow_rhs_vjp(y2, kb2, k);
      prev.axpy(1.0, yb2);
      kb1.axpy(0.5 * h, yb2);
      prev.axpy(1.0, flow_rhs_vjp(y, kb1, k));
      if (forces != nullptr) out.forces.at(t) = kb1.momenta + kb2.momenta + kb3.momenta + kb4.momenta;
    }
    prev.axpy(1.0, seeds[static_cast<std::size_t>(t)]);
    bar = std::move(prev);
  }
  out.initial = std::move(bar);
  return out;
}

}  // namespace shapetraj
