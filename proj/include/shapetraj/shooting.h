#ifndef SHAPETRAJ_SHOOTING_H
#define SHAPETRAJ_SHOOTING_H

#include "shapetraj/kernel.h"

#include <cstdint>
#include <vector>

namespace shapetraj {

enum class Scheme { Euler, RK4 };

struct IntegratorConfig {
  int n_steps = 10;
  Scheme scheme = Scheme::RK4;

  double step() const { return 1.0 / n_steps; }
  void validate() const;
  /// Stable 64-bit fingerprint, used to check that descriptors share a time grid.
  std::uint64_t fingerprint() const;
};

/// External forces u_k^(t), one N_c x 3 block per integration step. The value
/// of step t is held constant on [t_t, t_{t+1}).
class ForceField {
 public:
  ForceField() = default;
  ForceField(int n_steps, Eigen::Index n_control_points);

  static ForceField zeros(int n_steps, Eigen::Index n_control_points) {
    return ForceField(n_steps, n_control_points);
  }

  int n_steps() const { return static_cast<int>(steps_.size()); }
  Eigen::Index n_control_points() const { return steps_.empty() ? 0 : steps_.front().rows(); }

  PointSet& at(int step) { return steps_.at(step); }
  const PointSet& at(int step) const { return steps_.at(step); }

  bool step_is_zero(int step) const { return steps_.at(step).isZero(0.0); }
  /// Sum over steps of |u_t|_F^2.
  double squared_norm() const;
  ForceField& operator*=(double s);

 private:
  std::vector<PointSet> steps_;
};

/// Control points, momenta and carried landmarks at one time node. Also used
/// for tangents and adjoints of the same state.
struct FlowState {
  PointSet control_points;
  MomentumSet momenta;
  LandmarkSet landmarks;

  static FlowState zeros_like(const FlowState& s);
  FlowState& axpy(double a, const FlowState& x);
  double dot(const FlowState& other) const;
};

struct FlowResult {
  std::vector<FlowState> states;  // n_steps + 1 nodes
  std::vector<double> times;

  const FlowState& final_state() const { return states.back(); }
  int n_steps() const { return static_cast<int>(states.size()) - 1; }
};

struct HamiltonianDerivative {
  PointSet dc;
  MomentumSet dmu;
};

/// Right-hand side of the geodesic equations, with optional forcing added to
/// the momentum equation.
HamiltonianDerivative hamiltonian_rhs(const ControlSystem& sys, const PointSet* forces_at_t,
                                      const KernelParams& k);

/// Integrates control points and momenta over [0, 1] on a uniform grid and
/// advects `carried` through the resulting velocity field. Carried points do
/// not feed back into the dynamics.
FlowResult shoot(const ControlSystem& sys, const LandmarkSet& carried, const ForceField* forces,
                 const IntegratorConfig& cfg, const KernelParams& k);

/// Equals rkhs_norm_sq of the state; conserved along unforced flows.
double hamiltonian_energy(const ControlSystem& sys, const KernelParams& k);

// Derivatives of the discrete flow map. These differentiate the numerical
// scheme itself, so they are exact for the discretized problem.

/// Full right-hand side on a flow state and its linearization / transpose.
FlowState flow_rhs(const FlowState& y, const PointSet* u, const KernelParams& k);
FlowState flow_rhs_jvp(const FlowState& y, const FlowState& dy, const PointSet* du,
                       const KernelParams& k);
FlowState flow_rhs_vjp(const FlowState& y, const FlowState& bar, const KernelParams& k);

/// Tangent of the final state for a perturbation of the initial state (and of
/// the forces when `force_tangent` is given).
FlowState shoot_tangent(const FlowResult& flow, const ForceField* forces,
                        const FlowState& initial_tangent, const ForceField* force_tangent,
                        const IntegratorConfig& cfg, const KernelParams& k);

/// Batched shoot_tangent without force tangents; stage states are computed
/// once per step and shared by all directions.
std::vector<FlowState> shoot_tangents(const FlowResult& flow, const ForceField* forces,
                                      std::vector<FlowState> initial_tangents, const IntegratorConfig& cfg,
                                      const KernelParams& k);

struct FlowAdjoint {
  FlowState initial;   // d(objective) / d(initial state)
  ForceField forces;   // d(objective) / d(forces); empty when unforced
};

/// Reverse accumulation through the integrator. `seeds[t]` is the partial
/// derivative of the objective with respect to node t of the flow.
FlowAdjoint shoot_adjoint(const FlowResult& flow, const ForceField* forces,
                          const std::vector<FlowState>& seeds, const IntegratorConfig& cfg,
                          const KernelParams& k);

}  // namespace shapetraj

#endif
