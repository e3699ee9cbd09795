#ifndef SHAPETRAJ_REGISTRATION_H
#define SHAPETRAJ_REGISTRATION_H

#include "shapetraj/optim.h"

#include <span>
#include <vector>

namespace shapetraj {

/// Landmark matching of `template_shape` onto `target`, with momenta carried
/// by fixed control points. Cost: |S - phi_1(T)|^2 + alpha^2 |v_0|_K^2.
struct RegistrationProblem {
  LandmarkSet template_shape;
  LandmarkSet target;
  KernelParams kernel{1.0};
  double alpha = 0.1;
  PointSet control_points;
  IntegratorConfig integrator;

  void validate() const;
};

struct RegistrationResult {
  MomentumSet momenta;
  double data_term = 0.0;
  double reg_term = 0.0;
  double total_cost = 0.0;
  bool converged = false;
  StopReason stop = StopReason::MaxIterations;
  int iterations = 0;
  std::vector<double> trace;

  /// sqrt of the regularity term; the shape distance.
  double geodesic_length() const;
};

struct RegistrationTerms {
  double data_term = 0.0;
  double reg_term = 0.0;
  double total = 0.0;
};

RegistrationTerms registration_terms(const RegistrationProblem& problem, const MomentumSet& momenta);
double registration_cost(const RegistrationProblem& problem, const MomentumSet& momenta);

/// Flow objective equal to the registration cost; reusable by callers that
/// need gradients with respect to control points or the template.
FlowObjective registration_objective(const LandmarkSet& target, double alpha, const KernelParams& k);

/// Gradient descent on the momenta, starting from zero or `initial`.
RegistrationResult register_landmarks(const RegistrationProblem& problem, const OptimConfig& cfg,
                                      const MomentumSet* initial = nullptr);

/// Regular axis-aligned grid over the bounding box of `shape` inflated by
/// `inflate` (relative), subsampled to `n_control_points` by farthest-point
/// selection starting from the grid point closest to the box centre.
PointSet initial_control_grid(const LandmarkSet& shape, int n_control_points, double inflate = 0.1);

struct AtlasConfig {
  int outer_iters = 3;
  int atlas_inner_iters = 5;
  OptimConfig registration;
  OptimConfig atlas_update;
};

struct AtlasResult {
  LandmarkSet atlas;
  std::vector<RegistrationResult> registrations;
  /// Total objective sum_s (data_s + alpha^2 reg_s) at the initial mean shape
  /// and after every outer iteration.
  std::vector<double> objective_trace;
};

/// Alternating minimisation: register the current atlas to every shape, then
/// move the atlas points with the momenta held fixed.
AtlasResult estimate_atlas(std::span<const LandmarkSet> shapes, const KernelParams& kernel, double alpha,
                           const PointSet& control_points, const IntegratorConfig& integrator,
                           const AtlasConfig& cfg);

struct ControlPointResult {
  PointSet control_points;
  std::vector<MomentumSet> momenta;
  double initial_cost = 0.0;  // after the warm start, with the initial points
  double final_cost = 0.0;
};

/// Joint descent over shared control points and per-target momenta, from a
/// warm start where each target is first registered with the initial points.
ControlPointResult optimize_control_points(const LandmarkSet& atlas, std::span<const LandmarkSet> targets,
                                           const PointSet& initial_control_points, const KernelParams& kernel,
                                           double alpha, const IntegratorConfig& integrator,
                                           const OptimConfig& cfg);

ControlPointResult optimize_control_points(const LandmarkSet& atlas, std::span<const LandmarkSet> targets,
                                           int n_control_points, const KernelParams& kernel, double alpha,
                                           const IntegratorConfig& integrator, const OptimConfig& cfg);

}  // namespace shapetraj

#endif
