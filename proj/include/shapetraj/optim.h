#ifndef SHAPETRAJ_OPTIM_H
#define SHAPETRAJ_OPTIM_H

#include "shapetraj/shooting.h"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace shapetraj {

struct OptimConfig {
  int max_iters = 200;
  double initial_step = 1.0;
  double backtrack = 0.5;      // step multiplier after a rejected trial, in (0, 1)
  double rel_tol = 1e-10;      // stop when relative cost decrease falls below this
  double grad_tol = 1e-12;     // stop when the gradient norm falls below this
  int max_halvings = 50;

  void validate() const;
};

enum class StopReason { GradientTolerance, RelativeDecrease, MaxIterations, Stagnation };

std::string to_string(StopReason r);

struct DescentResult {
  Eigen::VectorXd params;
  double cost = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // cost at the start point and after each accepted step
  StopReason reason = StopReason::MaxIterations;

  bool converged() const {
    return reason == StopReason::GradientTolerance || reason == StopReason::RelativeDecrease;
  }
};

/// Cost with optional gradient output. May throw NumericalError.
using CostFunction = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

/// Steepest descent with Armijo backtracking. The accepted step length is
/// reused (doubled) as the first trial of the next iteration. Non-finite
/// trial costs shrink the step instead of aborting.
DescentResult gradient_descent(const Eigen::VectorXd& x0, const CostFunction& f, const OptimConfig& cfg);

// ---------------------------------------------------------------------------
// Flow-composed objectives

/// Parameters of a (possibly forced) flow.
struct FlowParams {
  PointSet control_points;
  MomentumSet momenta;
  std::optional<ForceField> forces;
  LandmarkSet carried;
};

/// Value of an objective evaluated on a flow, with partial derivatives with
/// respect to every node of the flow (`seeds`) and, optionally, with respect
/// to the forces directly (e.g. a force-energy term).
struct ObjectiveValue {
  double cost = 0.0;
  std::vector<FlowState> seeds;
  std::optional<ForceField> force_partial;
};

/// Objective callback. When `want_gradient` is false, seeds may be left empty.
using FlowObjective =
    std::function<ObjectiveValue(const FlowResult& flow, const FlowParams& params, bool want_gradient)>;

/// Zero seeds shaped like every node of `flow`.
std::vector<FlowState> zero_seeds(const FlowResult& flow);

struct GradOptions {
  bool control_points = false;
  bool carried = false;
};

struct GradResult {
  double cost = 0.0;
  MomentumSet grad_momenta;
  std::optional<ForceField> grad_forces;
  std::optional<PointSet> grad_control_points;
  std::optional<PointSet> grad_carried;
};

/// Shoots the flow and evaluates the objective, without derivatives.
double eval_flow_objective(const FlowParams& params, const FlowObjective& objective,
                           const IntegratorConfig& cfg, const KernelParams& k);

/// Exact gradient of params -> discrete flow -> objective by reverse
/// accumulation through the integrator. Throws NumericalError on non-finite
/// cost or gradient.
GradResult grad_flow_objective(const FlowParams& params, const FlowObjective& objective,
                               const IntegratorConfig& cfg, const KernelParams& k,
                               GradOptions options = {});

// Packing helpers for the descent driver.
Eigen::VectorXd flatten(const PointSet& p);
PointSet unflatten(const Eigen::Ref<const Eigen::VectorXd>& v, Eigen::Index rows);

}  // namespace shapetraj

#endif
