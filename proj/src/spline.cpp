#include "shapetraj/spline.h"

#include <cmath>

namespace shapetraj {

void ObservationSequence::validate(int n_steps) const {
  if (shapes.size() < 2) throw InvalidArgument("observation sequence needs at least two shapes");
  if (nodes.size() != shapes.size()) throw InvalidArgument("observation sequence: one node per shape required");
  if (nodes.front() != 0 || nodes.back() != n_steps) {
    throw InvalidArgument("observation sequence must start at node 0 and end at the last node");
  }
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (nodes[i] <= nodes[i - 1]) throw InvalidArgument("observation times must be strictly increasing");
  }
  for (const auto& s : shapes) {
    if (s.rows() != shapes.front().rows()) throw InvalidArgument("observation shapes differ in point count");
  }
}

ObservationSequence ObservationSequence::from_frames(std::vector<LandmarkSet> frames, int n_steps) {
  if (frames.size() < 2) throw InvalidArgument("observation sequence needs at least two frames");
  if (n_steps < 1) throw InvalidArgument("observation sequence needs n_steps >= 1");
  ObservationSequence obs;
  const double d1 = static_cast<double>(frames.size() - 1);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    obs.nodes.push_back(static_cast<int>(std::lround(static_cast<double>(i) / d1 * n_steps)));
  }
  obs.shapes = std::move(frames);
  obs.validate(n_steps);
  return obs;
}

namespace {

void check_inputs(const ObservationSequence& obs, const MomentumSet& momenta, const ForceField& forces,
                  const PointSet& cps, double alpha, const IntegratorConfig& integrator) {
  integrator.validate();
  obs.validate(integrator.n_steps);
  if (!(alpha > 0.0)) throw InvalidArgument("spline: alpha must be positive");
  if (momenta.rows() != cps.rows()) throw InvalidArgument("spline: momenta do not match control points");
  if (forces.n_steps() != integrator.n_steps || forces.n_control_points() != cps.rows()) {
    throw InvalidArgument("spline: force field does not match the grid or control points");
  }
}

}  // namespace

SplineTerms spline_terms(const ObservationSequence& obs, const MomentumSet& momenta, const ForceField& forces,
                         const PointSet& cps, const KernelParams& kernel, double alpha,
                         const IntegratorConfig& integrator, double force_weight) {
  check_inputs(obs, momenta, forces, cps, alpha, integrator);
  const FlowResult flow = shoot(ControlSystem{cps, momenta}, obs.shapes.front(), &forces, integrator, kernel);
  SplineTerms t;
  double sum = 0.0;
  for (int i = 0; i < obs.size(); ++i) {
    const double r = (flow.states[static_cast<std::size_t>(obs.nodes[i])].landmarks - obs.shapes[i]).squaredNorm();
    t.residuals.push_back(r);
    sum += r;
  }
  t.data = sum / (alpha * alpha * obs.size());
  t.force = force_weight * forces.squared_norm() / integrator.n_steps;
  t.reg = rkhs_norm_sq(cps, momenta, kernel);
  t.total = t.data + t.force + t.reg;
  return t;
}

double spline_cost(const ObservationSequence& obs, const MomentumSet& momenta, const ForceField& forces,
                   const PointSet& cps, const KernelParams& kernel, double alpha, const IntegratorConfig& integrator,
                   double force_weight) {
  return spline_terms(obs, momenta, forces, cps, kernel, alpha, integrator, force_weight).total;
}

FlowObjective spline_objective(const ObservationSequence& obs, double alpha, const KernelParams& kernel,
                               double force_weight) {
  return [obs, alpha, kernel, force_weight](const FlowResult& flow, const FlowParams& params, bool want_gradient) {
    ObjectiveValue v;
    const double w = 1.0 / (alpha * alpha * obs.size());
    const int n = flow.n_steps();
    if (want_gradient) v.seeds = zero_seeds(flow);
    double data = 0.0;
    for (int i = 0; i < obs.size(); ++i) {
      const auto node = static_cast<std::size_t>(obs.nodes[i]);
      const PointSet r = flow.states[node].landmarks - obs.shapes[i];
      data += r.squaredNorm();
      if (want_gradient) v.seeds[node].landmarks += 2.0 * w * r;
    }
    const FlowState& first = flow.states.front();
    v.cost = w * data + rkhs_norm_sq(first.control_points, first.momenta, kernel);
    if (params.forces) {
      v.cost += force_weight * params.forces->squared_norm() / n;
      if (want_gradient) {
        ForceField fp = *params.forces;
        fp *= 2.0 * force_weight / n;
        v.force_partial = std::move(fp);
      }
    }
    if (want_gradient) {
      MomentumSet gm;
      PointSet gc;
      rkhs_norm_sq_grad(first.control_points, first.momenta, kernel, &gm, &gc);
      v.seeds.front().momenta += gm;
      v.seeds.front().control_points += gc;
    }
    return v;
  };
}

SplineFit fit_spline(const ObservationSequence& obs, const PointSet& cps, const KernelParams& kernel,
                     const SplineConfig& cfg, const MomentumSet* initial) {
  const int n = cfg.integrator.n_steps;
  const Eigen::Index nc = cps.rows();
  if (!(cfg.force_weight > 0.0)) throw InvalidArgument("spline: force_weight must be positive");
  check_inputs(obs, MomentumSet::Zero(nc, 3), ForceField::zeros(n, nc), cps, cfg.alpha, cfg.integrator);
  cfg.optim.validate();

  MomentumSet mu0;
  if (initial != nullptr) {
    if (initial->rows() != nc) throw InvalidArgument("spline: initial momenta shape mismatch");
    mu0 = *initial;
  } else if (cfg.warm_start) {
    const RegistrationProblem p{obs.shapes.front(), obs.shapes.back(), kernel,
                                cfg.alpha * std::sqrt(static_cast<double>(obs.size())), cps, cfg.integrator};
    mu0 = register_landmarks(p, cfg.init_registration).momenta;
  } else {
    mu0 = MomentumSet::Zero(nc, 3);
  }

  const FlowObjective obj = spline_objective(obs, cfg.alpha, kernel, cfg.force_weight);
  const Eigen::Index block = 3 * nc;
  FlowParams params{cps, mu0, ForceField::zeros(n, nc), obs.shapes.front()};
  // Forces are optimised as sqrt(force_weight) * u so both blocks share one step length.
  const double force_scale = std::sqrt(cfg.force_weight);
  auto unpack = [&](const Eigen::VectorXd& x) {
    params.momenta = unflatten(x.head(block), nc);
    for (int s = 0; s < n; ++s) {
      params.forces->at(s) = unflatten(x.segment(block * (s + 1), block), nc) / force_scale;
    }
  };

  CostFunction f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    unpack(x);
    if (grad == nullptr) return eval_flow_objective(params, obj, cfg.integrator, kernel);
    GradResult g = grad_flow_objective(params, obj, cfg.integrator, kernel);
    grad->resize(x.size());
    grad->head(block) = flatten(g.grad_momenta);
    for (int s = 0; s < n; ++s) {
      grad->segment(block * (s + 1), block) = flatten(g.grad_forces->at(s)) / force_scale;
    }
    return g.cost;
  };

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(block * (n + 1));
  x0.head(block) = flatten(mu0);
  const DescentResult d = gradient_descent(x0, f, cfg.optim);
  unpack(d.params);

  SplineFit fit;
  fit.initial_momenta = params.momenta;
  fit.forces = *params.forces;
  const SplineTerms t =
      spline_terms(obs, fit.initial_momenta, fit.forces, cps, kernel, cfg.alpha, cfg.integrator, cfg.force_weight);
  fit.data_residuals = t.residuals;
  fit.data_term = t.data;
  fit.force_energy = fit.forces.squared_norm() / n;
  fit.reg_energy = t.reg;
  fit.cost = t.total;
  fit.alpha = cfg.alpha;
  fit.iterations = d.iterations;
  fit.stop = d.reason;
  fit.converged = d.converged();
  fit.trace = d.trace;
  return fit;
}

}  // namespace shapetraj
