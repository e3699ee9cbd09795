#include "shapetraj/synth.h"

#include "shapetraj/registration.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <utility>

namespace shapetraj {

TriangleMesh icosphere(int subdivisions, double radius) {
  if (subdivisions < 0) throw InvalidArgument("icosphere: subdivisions must be >= 0");
  if (!(radius > 0.0)) throw InvalidArgument("icosphere: radius must be positive");
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
                         {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& x : v) x.normalize();
  std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                             {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<Triangle> next;
    next.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int ab = midpoint(t[0], t[1]);
      const int bc = midpoint(t[1], t[2]);
      const int ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    f = std::move(next);
  }
  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = radius * v[i];
  mesh.triangles = std::move(f);
  return mesh;
}

TriangleMesh ventricle_template(int subdivisions, const VentricleShape& s) {
  if (!(s.radius_x > 0 && s.radius_y > 0 && s.height > 0 && s.base_depth > 0)) {
    throw InvalidArgument("ventricle_template: dimensions must be positive");
  }
  TriangleMesh mesh = icosphere(subdivisions);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    const Vec3 u = mesh.vertices.row(i);
    const double z = u.z() >= 0.0 ? s.height * u.z() : s.base_depth * u.z();
    mesh.vertices(i, 0) = s.radius_x * u.x() + s.bend * z * z / s.height;
    mesh.vertices(i, 1) = s.radius_y * u.y();
    mesh.vertices(i, 2) = z;
  }
  return mesh;
}

void SynthSpec::validate() const {
  if (subdivisions < 0 || subdivisions > 5) throw InvalidArgument("synth: subdivisions must be in [0, 5]");
  if (n_frames < 2) throw InvalidArgument("synth: n_frames must be >= 2");
  if (!(volume_min > 0.0 && volume_max >= volume_min)) throw InvalidArgument("synth: invalid volume range");
  if (shape_jitter < 0 || momentum_noise < 0 || force_scale < 0) {
    throw InvalidArgument("synth: noise levels must be non-negative");
  }
  if (!(sigma > 0.0)) throw InvalidArgument("synth: sigma must be positive");
  if (n_control_points < 1) throw InvalidArgument("synth: n_control_points must be >= 1");
  integrator.validate();
  if (n_frames - 1 > integrator.n_steps) throw InvalidArgument("synth: more frames than grid nodes");
  if (groups.empty()) throw InvalidArgument("synth: no groups");
  for (const auto& g : groups) {
    if (g.name.empty()) throw InvalidArgument("synth: group without a name");
    if (g.count < 0) throw InvalidArgument("synth: negative group count");
    if (g.ef_mean < 0 || g.ef_mean >= 1 || g.ef_std < 0) throw InvalidArgument("synth: invalid EF distribution");
    for (int k : g.offset_points) {
      if (k < 0 || k >= n_control_points) throw InvalidArgument("synth: offset point out of range");
    }
  }
}

namespace {

double flow_ef(const LandmarkSet& shape, const std::vector<Triangle>& tris, const PointSet& cps,
               const MomentumSet& momenta, const ForceField& forces, double a, const KernelParams& kernel,
               const IntegratorConfig& integrator) {
  ForceField u = forces;
  u *= a;
  const FlowResult flow = shoot(ControlSystem{cps, a * momenta}, shape, &u, integrator, kernel);
  return ejection_fraction(signed_volume(shape, tris), signed_volume(flow.final_state().landmarks, tris));
}

}  // namespace

double solve_amplitude(const LandmarkSet& shape, const std::vector<Triangle>& tris, const PointSet& cps,
                       const MomentumSet& momenta, const ForceField& forces, double target_ef,
                       const KernelParams& kernel, const IntegratorConfig& integrator) {
  if (!(target_ef >= 0.0 && target_ef < 1.0)) throw InvalidArgument("synth: target EF must be in [0, 1)");
  if (target_ef == 0.0) return 0.0;
  auto ef = [&](double a) { return flow_ef(shape, tris, cps, momenta, forces, a, kernel, integrator); };
  double lo = 0.0;
  double hi = 1.0;
  while (ef(hi) < target_ef) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e6) throw InvalidArgument("synth: target EF not reachable by the contraction");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double m = 0.5 * (lo + hi);
    (ef(m) < target_ef ? lo : hi) = m;
  }
  return 0.5 * (lo + hi);
}

SynthCohort generate_cohort(const SynthSpec& spec) {
  spec.validate();
  const KernelParams kernel{spec.sigma};
  SynthCohort cohort;
  cohort.template_mesh = ventricle_template(spec.subdivisions, spec.shape);
  const LandmarkSet& tv = cohort.template_mesh.vertices;
  cohort.template_control_points = initial_control_grid(tv, spec.n_control_points);
  const PointSet& tc = cohort.template_control_points;
  const Eigen::Index nc = tc.rows();

  // Contraction pattern: inward towards the long axis, shortening towards the apex.
  const Vec3 lo = tv.colwise().minCoeff().transpose();
  const Vec3 hi = tv.colwise().maxCoeff().transpose();
  const Vec3 centre = 0.5 * (lo + hi);
  const double size = (hi - lo).maxCoeff();
  MomentumSet pattern(nc, 3);
  for (Eigen::Index k = 0; k < nc; ++k) {
    const Vec3 d = tc.row(k).transpose() - centre;
    pattern.row(k) = -Vec3(d.x(), d.y(), 0.3 * d.z()) / size;
  }
  const double typical = std::sqrt(pattern.squaredNorm() / static_cast<double>(nc));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = spec.integrator.n_steps;

  for (const auto& group : spec.groups) {
    for (int i = 0; i < group.count; ++i) {
      SynthSubject sub;
      const double log_lo = std::log(spec.volume_min);
      const double log_hi = std::log(spec.volume_max);
      sub.volume_factor = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
      Vec3 axes(1.0 + spec.shape_jitter * normal(rng), 1.0 + spec.shape_jitter * normal(rng),
                1.0 + spec.shape_jitter * normal(rng));
      axes = axes.cwiseMax(0.5);
      axes /= std::cbrt(axes.prod());
      const Vec3 scale = std::cbrt(sub.volume_factor) * axes;
      const double s = std::cbrt(sub.volume_factor);

      const LandmarkSet ed = tv * scale.asDiagonal();
      sub.control_points = tc * scale.asDiagonal();
      MomentumSet mu = pattern * scale.asDiagonal();
      for (Eigen::Index k = 0; k < nc; ++k) {
        for (int a = 0; a < 3; ++a) mu(k, a) += s * spec.momentum_noise * typical * normal(rng);
      }
      for (int k : group.offset_points) mu.row(k) += s * group.momentum_offset.transpose();
      ForceField forces = ForceField::zeros(n, nc);
      for (int t = 0; t < n; ++t) {
        for (Eigen::Index k = 0; k < nc; ++k) {
          for (int a = 0; a < 3; ++a) forces.at(t)(k, a) = s * spec.force_scale * typical * normal(rng);
        }
      }
      sub.target_ef = group.ef_std > 0.0 ? std::clamp(group.ef_mean + group.ef_std * normal(rng), 0.05, 0.85)
                                         : group.ef_mean;

      sub.amplitude = solve_amplitude(ed, cohort.template_mesh.triangles, sub.control_points, mu, forces,
                                      sub.target_ef, kernel, spec.integrator);
      sub.momenta = sub.amplitude * mu;
      forces *= sub.amplitude;
      sub.forces = forces;

      Vec3 axis(normal(rng), normal(rng), normal(rng));
      if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
      const double angle = (2.0 * unit(rng) - 1.0) * spec.max_rotation_deg * std::numbers::pi / 180.0;
      sub.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
      sub.translation = Vec3((2.0 * unit(rng) - 1.0) * spec.max_translation,
                             (2.0 * unit(rng) - 1.0) * spec.max_translation,
                             (2.0 * unit(rng) - 1.0) * spec.max_translation);

      const FlowResult flow =
          shoot(ControlSystem{sub.control_points, sub.momenta}, ed, &sub.forces, spec.integrator, kernel);
      SubjectSequence& seq = sub.sequence;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", group.name.c_str(), i + 1);
      seq.subject_id = id;
      seq.group = group.name;
      seq.triangles = cohort.template_mesh.triangles;
      for (int f = 0; f < spec.n_frames; ++f) {
        const auto node = static_cast<std::size_t>(
            std::lround(static_cast<double>(f) * n / static_cast<double>(spec.n_frames - 1)));
        seq.frames.push_back(apply_rigid(flow.states[node].landmarks, sub.rotation, sub.translation));
      }
      seq.ed_index = 0;
      seq.es_index = spec.n_frames - 1;
      cohort.subjects.push_back(std::move(sub));
    }
  }
  return cohort;
}

}  // namespace shapetraj
