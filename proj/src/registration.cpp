#include "shapetraj/registration.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shapetraj {

void RegistrationProblem::validate() const {
  if (template_shape.rows() != target.rows()) {
    throw InvalidArgument("registration: template has " + std::to_string(template_shape.rows()) +
                          " points but target has " + std::to_string(target.rows()));
  }
  if (template_shape.rows() < 1) throw InvalidArgument("registration: empty shapes");
  if (!(alpha > 0.0)) throw InvalidArgument("registration: alpha must be positive");
  if (control_points.rows() < 1) throw InvalidArgument("registration: no control points");
  integrator.validate();
}

double RegistrationResult::geodesic_length() const { return std::sqrt(std::max(reg_term, 0.0)); }

FlowObjective registration_objective(const LandmarkSet& target, double alpha, const KernelParams& k) {
  return [target, alpha, k](const FlowResult& flow, const FlowParams&, bool want_gradient) {
    ObjectiveValue v;
    const FlowState& first = flow.states.front();
    const FlowState& last = flow.final_state();
    const PointSet residual = last.landmarks - target;
    const double a2 = alpha * alpha;
    v.cost = residual.squaredNorm() + a2 * rkhs_norm_sq(first.control_points, first.momenta, k);
    if (want_gradient) {
      v.seeds = zero_seeds(flow);
      v.seeds.back().landmarks = 2.0 * residual;
      MomentumSet gm;
      PointSet gc;
      rkhs_norm_sq_grad(first.control_points, first.momenta, k, &gm, &gc);
      v.seeds.front().momenta += a2 * gm;
      v.seeds.front().control_points += a2 * gc;
    }
    return v;
  };
}

RegistrationTerms registration_terms(const RegistrationProblem& p, const MomentumSet& momenta) {
  p.validate();
  if (momenta.rows() != p.control_points.rows()) {
    throw InvalidArgument("registration: momenta shape does not match control points");
  }
  const FlowResult flow = shoot(ControlSystem{p.control_points, momenta}, p.template_shape, nullptr,
                                p.integrator, p.kernel);
  RegistrationTerms t;
  t.data_term = (flow.final_state().landmarks - p.target).squaredNorm();
  t.reg_term = rkhs_norm_sq(p.control_points, momenta, p.kernel);
  t.total = t.data_term + p.alpha * p.alpha * t.reg_term;
  return t;
}

double registration_cost(const RegistrationProblem& p, const MomentumSet& momenta) {
  return registration_terms(p, momenta).total;
}

RegistrationResult register_landmarks(const RegistrationProblem& p, const OptimConfig& cfg,
                                      const MomentumSet* initial) {
  p.validate();
  const Eigen::Index nc = p.control_points.rows();
  MomentumSet mu0 = initial != nullptr ? *initial : MomentumSet::Zero(nc, 3);
  if (mu0.rows() != nc) throw InvalidArgument("registration: initial momenta shape mismatch");

  const FlowObjective obj = registration_objective(p.target, p.alpha, p.kernel);
  FlowParams params{p.control_points, mu0, std::nullopt, p.template_shape};

  CostFunction f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    params.momenta = unflatten(x, nc);
    if (grad == nullptr) return eval_flow_objective(params, obj, p.integrator, p.kernel);
    GradResult g = grad_flow_objective(params, obj, p.integrator, p.kernel);
    *grad = flatten(g.grad_momenta);
    return g.cost;
  };
  const DescentResult d = gradient_descent(flatten(mu0), f, cfg);

  RegistrationResult r;
  r.momenta = unflatten(d.params, nc);
  const RegistrationTerms t = registration_terms(p, r.momenta);
  r.data_term = t.data_term;
  r.reg_term = t.reg_term;
  r.total_cost = t.total;
  r.stop = d.reason;
  r.converged = d.converged();
  r.iterations = d.iterations;
  r.trace = d.trace;
  return r;
}

PointSet initial_control_grid(const LandmarkSet& shape, int n, double inflate) {
  if (n < 1) throw InvalidArgument("initial_control_grid: need at least one control point");
  if (shape.rows() < 1) throw InvalidArgument("initial_control_grid: empty shape");
  const Vec3 lo = shape.colwise().minCoeff().transpose();
  const Vec3 hi = shape.colwise().maxCoeff().transpose();
  const Vec3 centre = 0.5 * (lo + hi);
  Vec3 ext = (hi - lo) * (1.0 + inflate);
  const double max_ext = ext.maxCoeff();
  for (int a = 0; a < 3; ++a) ext[a] = std::max(ext[a], 0.1 * max_ext);

  int g = 1;
  while (g * g * g < n) ++g;
  PointSet grid(static_cast<Eigen::Index>(g) * g * g, 3);
  Eigen::Index idx = 0;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      for (int l = 0; l < g; ++l) {
        const int ijk[3] = {i, j, l};
        for (int a = 0; a < 3; ++a) {
          const double f = g == 1 ? 0.5 : static_cast<double>(ijk[a]) / (g - 1);
          grid(idx, a) = centre[a] - 0.5 * ext[a] + f * ext[a];
        }
        ++idx;
      }
    }
  }
  if (grid.rows() == n) return grid;

  // Farthest-point selection, reported back in grid order.
  std::vector<char> chosen(static_cast<std::size_t>(grid.rows()), 0);
  std::vector<double> dist(static_cast<std::size_t>(grid.rows()), std::numeric_limits<double>::infinity());
  Eigen::Index seed = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    const double d = (grid.row(r).transpose() - centre).squaredNorm();
    if (d < best) {
      best = d;
      seed = r;
    }
  }
  Eigen::Index cur = seed;
  for (int picked = 0; picked < n; ++picked) {
    chosen[static_cast<std::size_t>(cur)] = 1;
    Eigen::Index next = -1;
    double far = -1.0;
    for (Eigen::Index r = 0; r < grid.rows(); ++r) {
      auto& d = dist[static_cast<std::size_t>(r)];
      d = std::min(d, (grid.row(r) - grid.row(cur)).squaredNorm());
      if (!chosen[static_cast<std::size_t>(r)] && d > far) {
        far = d;
        next = r;
      }
    }
    cur = next;
  }
  PointSet out(n, 3);
  Eigen::Index o = 0;
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    if (chosen[static_cast<std::size_t>(r)]) out.row(o++) = grid.row(r);
  }
  return out;
}

AtlasResult estimate_atlas(std::span<const LandmarkSet> shapes, const KernelParams& kernel, double alpha,
                           const PointSet& control_points, const IntegratorConfig& integrator,
                           const AtlasConfig& cfg) {
  if (shapes.size() < 2) throw InvalidArgument("estimate_atlas: need at least two shapes");
  const Eigen::Index n = shapes.front().rows();
  for (const auto& s : shapes) {
    if (s.rows() != n) throw InvalidArgument("estimate_atlas: shapes have different point counts");
  }
  const Eigen::Index nc = control_points.rows();
  const double a2 = alpha * alpha;

  AtlasResult res;
  res.atlas = LandmarkSet::Zero(n, 3);
  for (const auto& s : shapes) res.atlas += s;
  res.atlas /= static_cast<double>(shapes.size());

  std::vector<MomentumSet> momenta(shapes.size(), MomentumSet::Zero(nc, 3));
  {
    double total = 0.0;
    for (const auto& s : shapes) total += (s - res.atlas).squaredNorm();
    res.objective_trace.push_back(total);
  }

  res.registrations.resize(shapes.size());
  for (int outer = 0; outer < cfg.outer_iters; ++outer) {
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      RegistrationProblem p{res.atlas, shapes[s], kernel, alpha, control_points, integrator};
      res.registrations[s] = register_landmarks(p, cfg.registration, &momenta[s]);
      momenta[s] = res.registrations[s].momenta;
    }

    // Atlas update with momenta held fixed; only data terms depend on the atlas.
    CostFunction f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      const LandmarkSet atlas = unflatten(x, n);
      double cost = 0.0;
      if (grad != nullptr) grad->setZero(x.size());
      for (std::size_t s = 0; s < shapes.size(); ++s) {
        const LandmarkSet& target = shapes[s];
        FlowObjective data = [&target](const FlowResult& flow, const FlowParams&, bool want) {
          ObjectiveValue v;
          const PointSet r = flow.final_state().landmarks - target;
          v.cost = r.squaredNorm();
          if (want) {
            v.seeds = zero_seeds(flow);
            v.seeds.back().landmarks = 2.0 * r;
          }
          return v;
        };
        FlowParams fp{control_points, momenta[s], std::nullopt, atlas};
        if (grad == nullptr) {
          cost += eval_flow_objective(fp, data, integrator, kernel);
        } else {
          GradResult g = grad_flow_objective(fp, data, integrator, kernel, GradOptions{false, true});
          cost += g.cost;
          *grad += flatten(*g.grad_carried);
        }
      }
      return cost;
    };
    OptimConfig ucfg = cfg.atlas_update;
    ucfg.max_iters = cfg.atlas_inner_iters;
    const DescentResult d = gradient_descent(flatten(res.atlas), f, ucfg);
    res.atlas = unflatten(d.params, n);

    double total = d.cost;
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      const double reg = rkhs_norm_sq(control_points, momenta[s], kernel);
      total += a2 * reg;
      RegistrationResult& r = res.registrations[s];
      r.reg_term = reg;
    }
    res.objective_trace.push_back(total);
  }

  for (std::size_t s = 0; s < shapes.size(); ++s) {
    RegistrationProblem p{res.atlas, shapes[s], kernel, alpha, control_points, integrator};
    const RegistrationTerms t = registration_terms(p, momenta[s]);
    res.registrations[s].data_term = t.data_term;
    res.registrations[s].reg_term = t.reg_term;
    res.registrations[s].total_cost = t.total;
  }
  return res;
}

ControlPointResult optimize_control_points(const LandmarkSet& atlas, std::span<const LandmarkSet> targets,
                                           const PointSet& initial_cp, const KernelParams& kernel,
                                           double alpha, const IntegratorConfig& integrator,
                                           const OptimConfig& cfg) {
  if (targets.empty()) throw InvalidArgument("optimize_control_points: need at least one target");
  const Eigen::Index nc = initial_cp.rows();
  const std::size_t nt = targets.size();

  ControlPointResult res;
  res.control_points = initial_cp;
  res.momenta.resize(nt);
  for (std::size_t s = 0; s < nt; ++s) {
    RegistrationProblem p{atlas, targets[s], kernel, alpha, initial_cp, integrator};
    res.momenta[s] = register_landmarks(p, cfg).momenta;
  }

  std::vector<FlowObjective> objectives;
  objectives.reserve(nt);
  for (const auto& t : targets) objectives.push_back(registration_objective(t, alpha, kernel));

  const Eigen::Index block = 3 * nc;
  CostFunction f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const PointSet cp = unflatten(x.head(block), nc);
    double cost = 0.0;
    if (grad != nullptr) grad->setZero(x.size());
    for (std::size_t s = 0; s < nt; ++s) {
      const Eigen::Index off = block * static_cast<Eigen::Index>(s + 1);
      FlowParams fp{cp, unflatten(x.segment(off, block), nc), std::nullopt, atlas};
      if (grad == nullptr) {
        cost += eval_flow_objective(fp, objectives[s], integrator, kernel);
      } else {
        GradResult g = grad_flow_objective(fp, objectives[s], integrator, kernel, GradOptions{true, false});
        cost += g.cost;
        grad->head(block) += flatten(*g.grad_control_points);
        grad->segment(off, block) = flatten(g.grad_momenta);
      }
    }
    return cost;
  };

  Eigen::VectorXd x0(block * static_cast<Eigen::Index>(nt + 1));
  x0.head(block) = flatten(initial_cp);
  for (std::size_t s = 0; s < nt; ++s) {
    x0.segment(block * static_cast<Eigen::Index>(s + 1), block) = flatten(res.momenta[s]);
  }
  const DescentResult d = gradient_descent(x0, f, cfg);
  res.initial_cost = d.trace.front();
  res.control_points = unflatten(d.params.head(block), nc);
  for (std::size_t s = 0; s < nt; ++s) {
    res.momenta[s] = unflatten(d.params.segment(block * static_cast<Eigen::Index>(s + 1), block), nc);
  }
  res.final_cost = d.cost;
  return res;
}

ControlPointResult optimize_control_points(const LandmarkSet& atlas, std::span<const LandmarkSet> targets,
                                           int n_control_points, const KernelParams& kernel, double alpha,
                                           const IntegratorConfig& integrator, const OptimConfig& cfg) {
  return optimize_control_points(atlas, targets, initial_control_grid(atlas, n_control_points), kernel, alpha,
                                 integrator, cfg);
}

}  // namespace shapetraj
