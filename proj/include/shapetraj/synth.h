#ifndef SHAPETRAJ_SYNTH_H
#define SHAPETRAJ_SYNTH_H

#include "shapetraj/mesh.h"
#include "shapetraj/shooting.h"

#include <cstdint>
#include <string>
#include <vector>

namespace shapetraj {

/// Outward-oriented icosphere: 10 * 4^s + 2 vertices, 20 * 4^s triangles.
TriangleMesh icosphere(int subdivisions, double radius = 1.0);

struct VentricleShape {
  double radius_x = 25.0;
  double radius_y = 20.0;
  double height = 60.0;     // base to apex
  double base_depth = 8.0;  // bulge of the closed base below z = 0
  double bend = 0.1;        // lateral bend of the long axis
};

/// Ventricle-like closed surface: a sphere mapped onto a half-ellipsoid whose
/// base is closed by a flattened cap.
TriangleMesh ventricle_template(int subdivisions, const VentricleShape& shape = {});

struct SynthGroup {
  std::string name;
  int count = 10;
  double ef_mean = 0.42;
  double ef_std = 0.05;
  std::vector<int> offset_points;  // control points receiving the momentum offset
  Vec3 momentum_offset = Vec3::Zero();
};

struct SynthSpec {
  int subdivisions = 2;
  VentricleShape shape;
  int n_frames = 6;
  double volume_min = 0.5;  // ED volume range, relative to the template
  double volume_max = 2.0;
  double shape_jitter = 0.03;    // std of the per-axis anisotropic scaling
  double momentum_noise = 0.1;   // relative std of per-subject momentum noise
  double force_scale = 0.05;     // relative std of the random forces
  double max_rotation_deg = 10.0;
  double max_translation = 5.0;
  double sigma = 15.0;
  int n_control_points = 27;
  IntegratorConfig integrator;
  std::vector<SynthGroup> groups;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthSubject {
  SubjectSequence sequence;
  double target_ef = 0.0;
  double volume_factor = 1.0;  // ED volume over template volume
  double amplitude = 0.0;      // scaling applied to the contraction to hit the target EF
  PointSet control_points;     // in the subject's generating frame (before the rigid motion)
  MomentumSet momenta;         // after amplitude scaling
  ForceField forces;           // after amplitude scaling
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();
};

struct SynthCohort {
  TriangleMesh template_mesh;
  PointSet template_control_points;
  std::vector<SynthSubject> subjects;
};

/// Deterministic in `spec` (including the seed). Each subject is the template
/// scaled to its ED volume, contracted by a forced flow whose amplitude is
/// solved so that the ES volume gives the subject's target EF, then moved by
/// a random rigid motion.
SynthCohort generate_cohort(const SynthSpec& spec);

/// Amplitude a >= 0 with ef(flow(a m, a u)) = target, by bracketing and
/// bisection. Throws InvalidArgument if the target cannot be reached.
double solve_amplitude(const LandmarkSet& shape, const std::vector<Triangle>& triangles, const PointSet& cps,
                       const MomentumSet& momenta, const ForceField& forces, double target_ef,
                       const KernelParams& kernel, const IntegratorConfig& integrator);

}  // namespace shapetraj

#endif
