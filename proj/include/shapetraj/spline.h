#ifndef SHAPETRAJ_SPLINE_H
#define SHAPETRAJ_SPLINE_H

#include "shapetraj/optim.h"
#include "shapetraj/registration.h"

#include <vector>

namespace shapetraj {

/// Shapes observed at nodes of the shared time grid. The first observation is
/// the starting shape (node 0), the last one sits at node n_steps.
struct ObservationSequence {
  std::vector<int> nodes;
  std::vector<LandmarkSet> shapes;

  int size() const { return static_cast<int>(shapes.size()); }
  void validate(int n_steps) const;

  /// Frame i of d is placed at t = i / (d - 1), snapped to the nearest node.
  /// Throws InvalidArgument if two frames snap to the same node.
  static ObservationSequence from_frames(std::vector<LandmarkSet> frames, int n_steps);
};

struct SplineTerms {
  double data = 0.0;   // (1 / (alpha^2 d)) sum_i |x_ti - phi_ti(x_0)|^2
  double force = 0.0;  // force_weight * (1/n) sum_t |u_t|^2
  double reg = 0.0;    // |v_0|_K^2
  double total = 0.0;
  std::vector<double> residuals;  // |x_ti - phi_ti(x_0)|^2 per observation
};

SplineTerms spline_terms(const ObservationSequence& obs, const MomentumSet& momenta, const ForceField& forces,
                         const PointSet& control_points, const KernelParams& kernel, double alpha,
                         const IntegratorConfig& integrator, double force_weight = 1.0);

double spline_cost(const ObservationSequence& obs, const MomentumSet& momenta, const ForceField& forces,
                   const PointSet& control_points, const KernelParams& kernel, double alpha,
                   const IntegratorConfig& integrator, double force_weight = 1.0);

/// Flow objective of the spline cost; the carried landmarks must be obs.shapes[0].
FlowObjective spline_objective(const ObservationSequence& obs, double alpha, const KernelParams& kernel,
                               double force_weight = 1.0);

struct SplineConfig {
  double alpha = 0.1;
  double force_weight = 1.0;  // multiplies the force energy; 1 gives the plain model
  IntegratorConfig integrator;
  OptimConfig optim;
  OptimConfig init_registration{100};  // first-to-last registration used as warm start
  bool warm_start = true;
};

struct SplineFit {
  MomentumSet initial_momenta;
  ForceField forces;
  std::vector<double> data_residuals;
  double data_term = 0.0;
  double force_energy = 0.0;
  double reg_energy = 0.0;
  double cost = 0.0;
  double alpha = 0.0;
  int iterations = 0;
  StopReason stop = StopReason::MaxIterations;
  bool converged = false;
  std::vector<double> trace;
};

/// Jointly optimises the initial momenta and every force step at fixed
/// control points. Without `initial`, the momenta start from the registration
/// of the first observation onto the last (with alpha scaled by sqrt(d) so
/// the data weights agree) and the forces start at zero.
SplineFit fit_spline(const ObservationSequence& obs, const PointSet& control_points, const KernelParams& kernel,
                     const SplineConfig& cfg, const MomentumSet* initial = nullptr);

}  // namespace shapetraj

#endif
