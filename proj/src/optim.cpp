#include "shapetraj/optim.h"

#include <cmath>
#include <limits>

namespace shapetraj {

void OptimConfig::validate() const {
  if (max_iters < 0 || !(initial_step > 0.0) || !(backtrack > 0.0 && backtrack < 1.0) ||
      !(rel_tol >= 0.0) || !(grad_tol >= 0.0) || max_halvings < 1) {
    throw InvalidArgument("invalid optimizer configuration");
  }
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::GradientTolerance: return "gradient_tolerance";
    case StopReason::RelativeDecrease: return "relative_decrease";
    case StopReason::MaxIterations: return "max_iterations";
    case StopReason::Stagnation: return "stagnation";
  }
  return "unknown";
}

namespace {

double safe_eval(const CostFunction& f, const Eigen::VectorXd& x) {
  try {
    return f(x, nullptr);
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

DescentResult gradient_descent(const Eigen::VectorXd& x0, const CostFunction& f, const OptimConfig& cfg) {
  cfg.validate();
  constexpr double kArmijo = 1e-4;

  DescentResult res;
  res.params = x0;
  Eigen::VectorXd grad(x0.size());
  res.cost = f(res.params, &grad);
  if (!std::isfinite(res.cost) || !grad.allFinite()) {
    throw NumericalError("gradient_descent: objective not finite at the initial point");
  }
  res.trace.push_back(res.cost);

  double step = cfg.initial_step;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const double gnorm2 = grad.squaredNorm();
    if (std::sqrt(gnorm2) <= cfg.grad_tol) {
      res.reason = StopReason::GradientTolerance;
      return res;
    }

    bool accepted = false;
    Eigen::VectorXd trial;
    double trial_cost = 0.0;
    for (int h = 0; h < cfg.max_halvings; ++h) {
      trial = res.params - step * grad;
      trial_cost = safe_eval(f, trial);
      if (std::isfinite(trial_cost) && trial_cost <= res.cost - kArmijo * step * gnorm2) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack;
    }
    if (!accepted) {
      res.reason = StopReason::Stagnation;
      return res;
    }

    const double prev = res.cost;
    Eigen::VectorXd g_new(x0.size());
    double c_new = 0.0;
    try {
      c_new = f(trial, &g_new);
    } catch (const NumericalError&) {
      c_new = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(c_new) || !g_new.allFinite()) {
      // Gradient blew up where the cost did not; retry from here with a smaller step.
      step *= cfg.backtrack;
      continue;
    }
    res.params = std::move(trial);
    res.cost = c_new;
    grad = std::move(g_new);
    res.trace.push_back(res.cost);
    res.iterations = it + 1;
    step /= cfg.backtrack;

    if (prev - res.cost <= cfg.rel_tol * std::max(std::abs(prev), std::numeric_limits<double>::min())) {
      res.reason = StopReason::RelativeDecrease;
      return res;
    }
  }
  res.reason = StopReason::MaxIterations;
  return res;
}

std::vector<FlowState> zero_seeds(const FlowResult& flow) {
  std::vector<FlowState> s;
  s.reserve(flow.states.size());
  for (const auto& st : flow.states) s.push_back(FlowState::zeros_like(st));
  return s;
}

namespace {

FlowResult shoot_params(const FlowParams& p, const IntegratorConfig& cfg, const KernelParams& k) {
  ControlSystem sys{p.control_points, p.momenta};
  return shoot(sys, p.carried, p.forces ? &*p.forces : nullptr, cfg, k);
}

}  // namespace

double eval_flow_objective(const FlowParams& params, const FlowObjective& objective,
                           const IntegratorConfig& cfg, const KernelParams& k) {
  const FlowResult flow = shoot_params(params, cfg, k);
  const double c = objective(flow, params, false).cost;
  if (!std::isfinite(c)) throw NumericalError("flow objective is not finite");
  return c;
}

GradResult grad_flow_objective(const FlowParams& params, const FlowObjective& objective,
                               const IntegratorConfig& cfg, const KernelParams& k, GradOptions options) {
  const FlowResult flow = shoot_params(params, cfg, k);
  ObjectiveValue val = objective(flow, params, true);
  if (!std::isfinite(val.cost)) {
    throw NumericalError("flow objective is not finite (cost = " + std::to_string(val.cost) + ")");
  }
  if (val.seeds.size() != flow.states.size()) {
    throw InvalidArgument("flow objective returned " + std::to_string(val.seeds.size()) +
                          " seeds for " + std::to_string(flow.states.size()) + " nodes");
  }
  FlowAdjoint adj = shoot_adjoint(flow, params.forces ? &*params.forces : nullptr, val.seeds, cfg, k);

  GradResult g;
  g.cost = val.cost;
  g.grad_momenta = std::move(adj.initial.momenta);
  bool finite = g.grad_momenta.allFinite();
  if (params.forces) {
    if (val.force_partial) {
      for (int t = 0; t < adj.forces.n_steps(); ++t) adj.forces.at(t) += val.force_partial->at(t);
    }
    for (int t = 0; t < adj.forces.n_steps(); ++t) finite = finite && adj.forces.at(t).allFinite();
    g.grad_forces = std::move(adj.forces);
  }
  if (options.control_points) {
    finite = finite && adj.initial.control_points.allFinite();
    g.grad_control_points = std::move(adj.initial.control_points);
  }
  if (options.carried) {
    finite = finite && adj.initial.landmarks.allFinite();
    g.grad_carried = std::move(adj.initial.landmarks);
  }
  if (!finite) throw NumericalError("flow objective gradient is not finite");
  return g;
}

Eigen::VectorXd flatten(const PointSet& p) {
  return Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
}

PointSet unflatten(const Eigen::Ref<const Eigen::VectorXd>& v, Eigen::Index rows) {
  if (v.size() != 3 * rows) throw InvalidArgument("unflatten: size mismatch");
  PointSet p(rows, 3);
  for (Eigen::Index i = 0; i < v.size(); ++i) p.data()[i] = v[i];
  return p;
}

}  // namespace shapetraj
