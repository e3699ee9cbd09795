#include "shapetraj/transport.h"

#include <Eigen/Cholesky>

#include <cmath>
#include <functional>
#include <limits>

namespace shapetraj {

LandmarkSet riemannian_exp(const LandmarkSet& base, const MomentumSet& momenta, const PointSet& control_points,
                           const KernelParams& kernel, const IntegratorConfig& integrator) {
  return shoot(ControlSystem{control_points, momenta}, base, nullptr, integrator, kernel).final_state().landmarks;
}

namespace {

// Kernel Gram matrix acting on row-major flattened momenta (K kron I3).
Eigen::MatrixXd flat_gram(const PointSet& cp, const KernelParams& k) {
  const Eigen::MatrixXd g = gram_matrix(cp, k);
  const Eigen::Index n = cp.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (int a = 0; a < 3; ++a) out(3 * i + a, 3 * j + a) = g(i, j);
    }
  }
  return out;
}

}  // namespace

LogResult riemannian_log(const LandmarkSet& base, const LandmarkSet& target, const PointSet& cps,
                         const KernelParams& kernel, double alpha, const IntegratorConfig& integrator,
                         const OptimConfig& cfg, const MomentumSet* initial) {
  if (base.rows() != target.rows()) throw InvalidArgument("riemannian_log: point counts differ");
  if (cps.rows() < 1) throw InvalidArgument("riemannian_log: no control points");
  if (!(alpha >= 0.0)) throw InvalidArgument("riemannian_log: alpha must be non-negative");
  cfg.validate();
  integrator.validate();

  const Eigen::Index nc = cps.rows();
  const Eigen::Index m = 3 * nc;
  // When the landmarks are the control points themselves their trajectory is
  // already integrated; no need to carry a copy.
  const bool self = base.rows() == nc && base == cps;
  const LandmarkSet carried = self ? LandmarkSet(0, 3) : base;
  const double a2 = alpha * alpha;
  const Eigen::MatrixXd kt = flat_gram(cps, kernel);
  const Eigen::VectorXd tgt = flatten(target);

  struct Eval {
    FlowResult flow;
    Eigen::VectorXd residual;
    double data = 0.0;
    double cost = 0.0;
  };
  auto evaluate = [&](const Eigen::VectorXd& mu) {
    Eval e;
    e.flow = shoot(ControlSystem{cps, unflatten(mu, nc)}, carried, nullptr, integrator, kernel);
    const FlowState& fin = e.flow.final_state();
    e.residual = flatten(self ? fin.control_points : fin.landmarks) - tgt;
    e.data = e.residual.squaredNorm();
    e.cost = e.data + a2 * mu.dot(kt * mu);
    return e;
  };

  Eigen::VectorXd mu = initial != nullptr ? flatten(*initial) : Eigen::VectorXd::Zero(m);
  if (mu.size() != m) throw InvalidArgument("riemannian_log: initial momenta shape mismatch");
  Eval cur = evaluate(mu);
  if (!std::isfinite(cur.cost)) throw NumericalError("riemannian_log: non-finite cost at the initial guess");

  LogResult res;
  double damping = 1e-6;
  for (int it = 0; it < cfg.max_iters; ++it) {
    std::vector<FlowState> dirs(static_cast<std::size_t>(m), FlowState::zeros_like(cur.flow.states.front()));
    for (Eigen::Index j = 0; j < m; ++j) dirs[static_cast<std::size_t>(j)].momenta.data()[j] = 1.0;
    const std::vector<FlowState> tan = shoot_tangents(cur.flow, nullptr, std::move(dirs), integrator, kernel);
    Eigen::MatrixXd jac(cur.residual.size(), m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const FlowState& t = tan[static_cast<std::size_t>(j)];
      jac.col(j) = flatten(self ? t.control_points : t.landmarks);
    }
    const Eigen::VectorXd grad = jac.transpose() * cur.residual + a2 * (kt * mu);
    const Eigen::MatrixXd hess = jac.transpose() * jac + a2 * kt;
    if (grad.norm() <= cfg.grad_tol) {
      res.converged = true;
      break;
    }

    bool accepted = false;
    double step_norm = 0.0;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd lhs = hess;
      lhs.diagonal() += damping * hess.diagonal().cwiseMax(1e-300);
      const Eigen::VectorXd delta = -lhs.ldlt().solve(grad);
      if (!delta.allFinite()) {
        damping *= 4.0;
        continue;
      }
      Eval trial = evaluate(mu + delta);
      if (std::isfinite(trial.cost) && trial.cost < cur.cost) {
        const double prev = cur.cost;
        mu += delta;
        cur = std::move(trial);
        step_norm = delta.norm();
        damping = std::max(damping / 3.0, 1e-15);
        accepted = true;
        res.iterations = it + 1;
        if (prev - cur.cost <= cfg.rel_tol * prev || step_norm <= 1e-13 * std::max(mu.norm(), 1e-300)) {
          res.converged = true;
        }
        break;
      }
      damping *= 4.0;
    }
    if (!accepted) {
      // No further decrease in floating point: converged when the
      // undamped step is already negligible.
      const Eigen::VectorXd gn = -hess.ldlt().solve(grad);
      res.converged = gn.allFinite() && gn.norm() <= 1e-8 * std::max(mu.norm(), 1e-12);
      break;
    }
    if (res.converged) break;
  }

  res.momenta = unflatten(mu, nc);
  res.data_term = cur.data;
  res.cost = cur.cost;
  return res;
}

void LadderConfig::validate() const {
  if (n_rungs < 1) throw InvalidArgument("pole ladder needs n_rungs >= 1");
  if (!(rung_scale > 0.0 && rung_scale <= 1.0)) throw InvalidArgument("pole ladder rung_scale must be in (0, 1]");
  if (main_steps < 1) throw InvalidArgument("pole ladder main_steps must be >= 1");
  if (max_scale_halvings < 0) throw InvalidArgument("pole ladder max_scale_halvings must be >= 0");
}

namespace {

struct LadderPass {
  MomentumSet vector;
  bool converged = true;
};

LadderPass run_ladder(const FlowResult& main, int per_half, int n_rungs, const MomentumSet& w, double scale,
                      const KernelParams& kernel, const IntegratorConfig& integrator, const LadderConfig& ladder) {
  LadderPass pass;
  MomentumSet v = w;
  const LandmarkSet none(0, 3);
  for (int i = 0; i < n_rungs; ++i) {
    const FlowState& p0 = main.states[static_cast<std::size_t>(2 * i * per_half)];
    const FlowState& mid = main.states[static_cast<std::size_t>((2 * i + 1) * per_half)];
    const FlowState& p1 = main.states[static_cast<std::size_t>((2 * i + 2) * per_half)];

    const MomentumSet sv = scale * v;
    const PointSet q =
        shoot(ControlSystem{p0.control_points, sv}, none, nullptr, integrator, kernel).final_state().control_points;

    // Flat-space guesses: log_M(q) = s v - seg / 2, log_P1(q') = -s v.
    const MomentumSet guess_mid = sv - (0.5 / n_rungs) * p0.momenta;
    const LogResult lm = riemannian_log(mid.control_points, q, mid.control_points, kernel, ladder.log_alpha,
                                        integrator, ladder.log_optim, &guess_mid);
    const PointSet q_reflected = shoot(ControlSystem{mid.control_points, -lm.momenta}, none, nullptr, integrator,
                                       kernel)
                                     .final_state()
                                     .control_points;
    const MomentumSet guess_end = -sv;
    const LogResult le = riemannian_log(p1.control_points, q_reflected, p1.control_points, kernel, ladder.log_alpha,
                                        integrator, ladder.log_optim, &guess_end);
    pass.converged = pass.converged && lm.converged && le.converged;
    v = (-1.0 / scale) * le.momenta;
  }
  pass.vector = std::move(v);
  return pass;
}

}  // namespace

LadderResult pole_ladder(const MainGeodesic& geo, const MomentumSet& w, const LadderConfig& ladder) {
  ladder.validate();
  geo.integrator.validate();
  if (w.rows() != geo.control_points.rows() || geo.momenta.rows() != geo.control_points.rows()) {
    throw InvalidArgument("pole_ladder: momenta do not match the control points");
  }
  const int n = ladder.n_rungs;
  const int per_half = std::max(1, (ladder.main_steps + 2 * n - 1) / (2 * n));
  const IntegratorConfig main_cfg{2 * n * per_half, geo.integrator.scheme};
  const FlowResult main =
      shoot(ControlSystem{geo.control_points, geo.momenta}, geo.start, nullptr, main_cfg, geo.kernel);

  LadderResult res;
  res.end_control_points = main.final_state().control_points;
  res.norm_in = std::sqrt(std::max(0.0, rkhs_norm_sq(geo.control_points, w, geo.kernel)));
  double scale = ladder.rung_scale / (ladder.scale_with_rungs ? n : 1);
  res.rung_scale_used = scale;

  // Transport is linear: the zero vector maps to itself.
  if (w.isZero(0.0)) {
    res.transported = MomentumSet::Zero(w.rows(), 3);
    return res;
  }

  LadderPass pass;
  for (int attempt = 0; attempt <= ladder.max_scale_halvings; ++attempt) {
    pass = run_ladder(main, per_half, n, w, scale, geo.kernel, geo.integrator, ladder);
    if (pass.converged) break;
    if (attempt < ladder.max_scale_halvings) scale *= 0.5;
  }
  res.transported = std::move(pass.vector);
  res.logs_converged = pass.converged;
  res.rung_scale_used = scale;
  res.norm_out = std::sqrt(std::max(0.0, rkhs_norm_sq(res.end_control_points, res.transported, geo.kernel)));
  res.isometry_defect = res.norm_in > 0.0 ? std::abs(res.norm_out - res.norm_in) / res.norm_in : 0.0;
  return res;
}

double reconstructed_ef(const TriangleMesh& atlas, const MomentumSet& momenta, const PointSet& cps, double lambda,
                        const KernelParams& kernel, const IntegratorConfig& integrator) {
  const double v_ref = signed_volume(atlas.vertices, atlas.triangles);
  const LandmarkSet es = riemannian_exp(atlas.vertices, lambda * momenta, cps, kernel, integrator);
  return ejection_fraction(v_ref, signed_volume(es, atlas.triangles));
}

namespace {

// Minimises (ef(lambda) - target)^2 for an ef increasing in lambda: bracket
// by doubling, then golden-section refinement.
double fit_lambda(const std::function<double(double)>& ef, double target, double lambda_max) {
  double lo = 0.0;
  double hi = 1.0;
  while (ef(hi) < target && hi < lambda_max) {
    lo = hi;
    hi = std::min(2.0 * hi, lambda_max);
  }
  auto sq = [&](double l) {
    const double d = ef(l) - target;
    return d * d;
  };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = sq(c);
  double fd = sq(d);
  while (b - a > 1e-10 * std::max(1.0, b)) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = sq(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = sq(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

ScaledTransportResult scaled_transport(const SubjectSequence& subject, const TriangleMesh& atlas,
                                       const PointSet& cps, const KernelParams& kernel, const TransportConfig& cfg) {
  subject.validate();
  check_closed(subject.triangles);
  check_closed(atlas.triangles);
  atlas.validate_indices();
  if (atlas.vertices.rows() != subject.frames.front().rows()) {
    throw InvalidInput("subject " + subject.subject_id + " and atlas have different point counts");
  }

  ScaledTransportResult res;
  res.subject_id = subject.subject_id;
  const auto ed = static_cast<std::size_t>(subject.ed_index);
  const auto es = static_cast<std::size_t>(subject.es_index);
  const LandmarkSet& ed_shape = subject.frames[ed];
  const Eigen::Index nc = cps.rows();

  std::vector<MomentumSet> frame_momenta(subject.frames.size(), MomentumSet::Zero(nc, 3));
  for (std::size_t f = 0; f < subject.frames.size(); ++f) {
    if (f == ed) continue;
    RegistrationProblem p{ed_shape, subject.frames[f], kernel, cfg.alpha, cps, cfg.integrator};
    frame_momenta[f] = register_landmarks(p, cfg.registration).momenta;
  }
  RegistrationProblem to_atlas{ed_shape, atlas.vertices, kernel, cfg.alpha, cps, cfg.integrator};
  const RegistrationResult main_reg = register_landmarks(to_atlas, cfg.registration);
  const MainGeodesic geo{ed_shape, main_reg.momenta, cps, kernel, cfg.integrator};

  res.unscaled_momenta.resize(subject.frames.size());
  for (std::size_t f = 0; f < subject.frames.size(); ++f) {
    const LadderResult lr = pole_ladder(geo, frame_momenta[f], cfg.ladder);
    res.unscaled_momenta[f] = lr.transported;
    res.atlas_control_points = lr.end_control_points;
    if (f == es) {
      res.norm_in = lr.norm_in;
      res.norm_out = lr.norm_out;
      res.isometry_defect = lr.isometry_defect;
    }
  }

  res.ed_volume = signed_volume(ed_shape, subject.triangles);
  res.ef_original = ejection_fraction(res.ed_volume, signed_volume(subject.frames[es], subject.triangles));
  const MomentumSet& w_es = res.unscaled_momenta[es];
  auto ef = [&](double l) {
    return reconstructed_ef(atlas, w_es, res.atlas_control_points, l, kernel, cfg.integrator);
  };
  res.ef_unscaled = ef(1.0);
  res.lambda = res.ef_original > 0.0 ? fit_lambda(ef, res.ef_original, cfg.lambda_max) : 1.0;
  if (!(res.lambda > 0.0)) res.lambda = std::numeric_limits<double>::min();
  res.ef_reconstructed = ef(res.lambda);
  res.ef_residual = std::abs(res.ef_reconstructed - res.ef_original);
  res.success = res.ef_residual <= cfg.ef_tolerance;

  for (std::size_t f = 0; f < subject.frames.size(); ++f) {
    res.transported_momenta.push_back(res.lambda * res.unscaled_momenta[f]);
    res.reconstructed.push_back(
        riemannian_exp(atlas.vertices, res.transported_momenta[f], res.atlas_control_points, kernel, cfg.integrator));
    res.reconstructed_unscaled.push_back(
        riemannian_exp(atlas.vertices, res.unscaled_momenta[f], res.atlas_control_points, kernel, cfg.integrator));
  }
  return res;
}

}  // namespace shapetraj
