#ifndef SHAPETRAJ_TRANSPORT_H
#define SHAPETRAJ_TRANSPORT_H

#include "shapetraj/mesh.h"
#include "shapetraj/registration.h"

#include <string>
#include <vector>

namespace shapetraj {

/// phi_1(base) under the geodesic flow generated by (control_points, momenta).
LandmarkSet riemannian_exp(const LandmarkSet& base, const MomentumSet& momenta, const PointSet& control_points,
                           const KernelParams& kernel, const IntegratorConfig& integrator);

struct LogResult {
  MomentumSet momenta;
  double data_term = 0.0;  // |phi_1(base) - target|^2 at the returned momenta
  double cost = 0.0;       // data_term + alpha^2 |v_0|_K^2
  int iterations = 0;
  bool converged = false;
};

/// Logarithm map as a registration: minimises the registration cost of
/// base -> target over the momenta at `control_points`. Solved by damped
/// Gauss-Newton with the exact Jacobian of the discrete flow, so that
/// log(exp(mu)) reproduces mu to solver precision for small alpha.
/// Non-convergence is reported through `converged`, with the best momenta.
LogResult riemannian_log(const LandmarkSet& base, const LandmarkSet& target, const PointSet& control_points,
                         const KernelParams& kernel, double alpha, const IntegratorConfig& integrator,
                         const OptimConfig& cfg, const MomentumSet* initial = nullptr);

struct MainGeodesic {
  LandmarkSet start;          // subject ED shape
  MomentumSet momenta;        // from registering start onto the atlas
  PointSet control_points;
  KernelParams kernel{1.0};
  IntegratorConfig integrator;
};

struct LadderConfig {
  int n_rungs = 5;
  double rung_scale = 1.0;       // applied to the transported vector before each exp
  bool scale_with_rungs = true;  // divide rung_scale by n_rungs so the vector shrinks with the segments
  int max_scale_halvings = 3;    // automatic rung_scale halving when an inner log fails
  int main_steps = 128;          // resolution of the main geodesic, rounded up to a multiple of 2 n_rungs
  double log_alpha = 1e-6;       // regularisation of the inner logarithms
  OptimConfig log_optim{40, 1.0, 0.5, 1e-15, 1e-13, 50};

  void validate() const;
};

struct LadderResult {
  MomentumSet transported;       // momenta attached to end_control_points
  PointSet end_control_points;   // control points at the end of the main geodesic
  double norm_in = 0.0;          // |w|_K at the start
  double norm_out = 0.0;         // |transported|_K at the end
  double isometry_defect = 0.0;  // |norm_out - norm_in| / norm_in
  double rung_scale_used = 1.0;  // effective per-rung scale
  bool logs_converged = true;
};

/// Pole ladder on the control-point configuration space: each rung reflects
/// exp(P_i, s w) through the main-geodesic midpoint M_i and reads the vector
/// back at P_{i+1}. The logarithms are taken between control-point
/// configurations, where they are exact inverses of the discrete exp.
LadderResult pole_ladder(const MainGeodesic& geo, const MomentumSet& w, const LadderConfig& ladder);

struct TransportConfig {
  double alpha = 0.1;  // registration regularisation
  IntegratorConfig integrator;
  OptimConfig registration;
  LadderConfig ladder;
  double ef_tolerance = 0.005;
  double lambda_max = 64.0;
};

struct ScaledTransportResult {
  std::string subject_id;
  double lambda = 1.0;
  std::vector<MomentumSet> transported_momenta;  // per frame, scaled by lambda
  std::vector<MomentumSet> unscaled_momenta;     // per frame, plain parallel transport
  PointSet atlas_control_points;                 // where the transported momenta live
  std::vector<LandmarkSet> reconstructed;        // atlas deformed by the scaled momenta
  std::vector<LandmarkSet> reconstructed_unscaled;
  double ef_original = 0.0;
  double ef_reconstructed = 0.0;
  double ef_unscaled = 0.0;
  double ed_volume = 0.0;
  double norm_in = 0.0;  // ES frame, before transport
  double norm_out = 0.0;
  double isometry_defect = 0.0;
  double ef_residual = 0.0;
  bool success = false;
};

/// Registers the subject ED frame to every frame and to the atlas, transports
/// each frame deformation with the pole ladder, and fits one lambda per
/// subject on the ES frame so that the reconstructed EF matches the original.
/// Throws InvalidInput on open meshes.
ScaledTransportResult scaled_transport(const SubjectSequence& subject, const TriangleMesh& atlas,
                                       const PointSet& control_points, const KernelParams& kernel,
                                       const TransportConfig& cfg);

/// EF of the atlas deformed by lambda * momenta.
double reconstructed_ef(const TriangleMesh& atlas, const MomentumSet& momenta, const PointSet& control_points,
                        double lambda, const KernelParams& kernel, const IntegratorConfig& integrator);

}  // namespace shapetraj

#endif
