#include <doctest.h>

#include "shapetraj/registration.h"
#include "shapetraj/synth.h"
#include "support.h"

using namespace shapetraj;
using testing::random_normal;
using testing::random_points;

namespace {

RegistrationProblem sphere_problem(double scale) {
  const TriangleMesh sphere = icosphere(2, 30.0);
  RegistrationProblem p;
  p.template_shape = sphere.vertices;
  p.target = scale * sphere.vertices;
  p.kernel = KernelParams(15.0);
  p.alpha = 0.1;
  p.control_points = initial_control_grid(sphere.vertices, 27);
  return p;
}

}  // namespace

TEST_CASE("registration cost terms") {
  std::mt19937_64 rng(11);
  RegistrationProblem p;
  p.template_shape = random_points(rng, 10, -5, 5);
  p.target = p.template_shape + random_normal(rng, 10, 1.0);
  p.kernel = KernelParams(4.0);
  p.alpha = 0.3;
  p.control_points = random_points(rng, 4, -5, 5);

  RegistrationTerms t = registration_terms(p, MomentumSet::Zero(4, 3));
  CHECK(t.data_term == doctest::Approx((p.template_shape - p.target).squaredNorm()).epsilon(1e-15));
  CHECK(t.reg_term == 0.0);
  CHECK(t.total == t.data_term);

  const MomentumSet mu = random_normal(rng, 4, 1.0);
  t = registration_terms(p, mu);
  const FlowResult flow = shoot(ControlSystem{p.control_points, mu}, p.template_shape, nullptr, p.integrator, p.kernel);
  CHECK(t.data_term == doctest::Approx((flow.final_state().landmarks - p.target).squaredNorm()).epsilon(1e-14));
  CHECK(t.reg_term == doctest::Approx(rkhs_norm_sq(p.control_points, mu, p.kernel)).epsilon(1e-14));
  CHECK(t.total == doctest::Approx(t.data_term + 0.09 * t.reg_term).epsilon(1e-14));
  CHECK(registration_cost(p, mu) == t.total);

  RegistrationProblem bad = p;
  bad.target = p.target.topRows(9);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = p;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(registration_terms(p, MomentumSet::Zero(3, 3)), InvalidArgument);
}

TEST_CASE("registering a shape onto itself leaves it in place") {
  RegistrationProblem p = sphere_problem(1.0);
  const RegistrationResult r = register_landmarks(p, OptimConfig{});
  CHECK(r.momenta.isZero(0.0));
  CHECK(r.total_cost == 0.0);
  CHECK(r.iterations == 0);
  CHECK(r.geodesic_length() == 0.0);
}

TEST_CASE("recovery of a uniform contraction") {
  const RegistrationProblem p = sphere_problem(0.8);
  REQUIRE(p.template_shape.rows() == 162);
  OptimConfig cfg;
  cfg.max_iters = 200;
  const RegistrationResult r = register_landmarks(p, cfg);
  CHECK(r.iterations <= 200);
  CHECK(r.data_term <= 1e-3 * 162 * 30.0 * 30.0);
  CHECK(r.total_cost < (p.template_shape - p.target).squaredNorm());
  for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
  CHECK(r.total_cost == doctest::Approx(r.data_term + 0.01 * r.reg_term).epsilon(1e-12));
}

TEST_CASE("stronger regularisation trades data fit for energy") {
  std::mt19937_64 rng(12);
  RegistrationProblem p;
  p.template_shape = random_points(rng, 12, -6, 6);
  p.target = 1.15 * p.template_shape + random_normal(rng, 12, 0.2);
  p.kernel = KernelParams(6.0);
  p.control_points = random_points(rng, 5, -6, 6);
  OptimConfig cfg;
  cfg.max_iters = 3000;
  cfg.rel_tol = 1e-14;
  std::vector<RegistrationResult> fits;
  for (double a : {0.3, 1.0, 3.0}) {
    p.alpha = a;
    fits.push_back(register_landmarks(p, cfg));
  }
  for (std::size_t i = 1; i < fits.size(); ++i) {
    CHECK(fits[i].data_term >= fits[i - 1].data_term);
    CHECK(fits[i].reg_term <= fits[i - 1].reg_term);
  }
}

TEST_CASE("warm start is honoured") {
  const RegistrationProblem p = sphere_problem(0.9);
  OptimConfig cfg;
  cfg.max_iters = 40;
  const RegistrationResult first = register_landmarks(p, cfg);
  const RegistrationResult second = register_landmarks(p, cfg, &first.momenta);
  CHECK(second.trace.front() == doctest::Approx(first.total_cost).epsilon(1e-12));
  CHECK(second.total_cost <= first.total_cost);
  const MomentumSet wrong = MomentumSet::Zero(3, 3);
  CHECK_THROWS_AS(register_landmarks(p, cfg, &wrong), InvalidArgument);
}

TEST_CASE("control point grid") {
  std::mt19937_64 rng(13);
  const LandmarkSet shape = random_points(rng, 50, -10, 10);
  for (int n : {1, 8, 27, 30, 60}) {
    const PointSet g = initial_control_grid(shape, n);
    REQUIRE(g.rows() == n);
    const Vec3 lo = shape.colwise().minCoeff().transpose();
    const Vec3 hi = shape.colwise().maxCoeff().transpose();
    const Vec3 pad = 0.05 * (hi - lo) + Vec3::Constant(1e-9);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        CHECK(g(i, a) >= lo[a] - pad[a]);
        CHECK(g(i, a) <= hi[a] + pad[a]);
      }
      for (Eigen::Index j = 0; j < i; ++j) CHECK((g.row(i) - g.row(j)).norm() > 1e-9);
    }
    CHECK(g == initial_control_grid(shape, n));
  }
  CHECK_THROWS_AS(initial_control_grid(shape, 0), InvalidArgument);
  CHECK_THROWS_AS(initial_control_grid(LandmarkSet(0, 3), 4), InvalidArgument);
}

TEST_CASE("atlas of identical shapes is the shape itself") {
  const TriangleMesh s = icosphere(1, 20.0);
  const std::vector<LandmarkSet> shapes(3, s.vertices);
  AtlasConfig cfg;
  cfg.outer_iters = 2;
  cfg.registration.max_iters = 20;
  const AtlasResult r =
      estimate_atlas(shapes, KernelParams(15.0), 0.1, initial_control_grid(s.vertices, 8), IntegratorConfig{}, cfg);
  CHECK((r.atlas - s.vertices).cwiseAbs().maxCoeff() <= 1e-12);
  for (double v : r.objective_trace) CHECK(v <= 1e-20);
}

TEST_CASE("atlas of translated copies") {
  const TriangleMesh s = icosphere(1, 20.0);
  std::vector<LandmarkSet> shapes;
  for (double dx : {-3.0, 0.0, 3.0}) {
    LandmarkSet x = s.vertices;
    x.col(0).array() += dx;
    shapes.push_back(x);
  }
  AtlasConfig cfg;
  cfg.outer_iters = 3;
  cfg.registration.max_iters = 60;
  const AtlasResult r =
      estimate_atlas(shapes, KernelParams(15.0), 0.1, initial_control_grid(s.vertices, 8), IntegratorConfig{}, cfg);
  // The cohort is mirror symmetric in x, so the atlas stays centred.
  CHECK(std::abs(r.atlas.col(0).mean()) <= 1e-3);
  CHECK((r.atlas - s.vertices).cwiseAbs().maxCoeff() <= 0.1 * 20.0);
  REQUIRE(r.objective_trace.size() == 4);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
    CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] * (1 + 1e-12));
  }
  CHECK(r.registrations.size() == 3);
}

TEST_CASE("atlas objective does not increase on random shapes") {
  std::mt19937_64 rng(14);
  const TriangleMesh s = icosphere(1, 20.0);
  std::vector<LandmarkSet> shapes;
  for (int i = 0; i < 4; ++i) {
    Eigen::Matrix3d a = Eigen::Matrix3d::Identity() + 0.1 * Eigen::Matrix3d(random_normal(rng, 3, 1.0));
    shapes.push_back(s.vertices * a.transpose());
  }
  AtlasConfig cfg;
  cfg.outer_iters = 3;
  cfg.registration.max_iters = 40;
  const AtlasResult r =
      estimate_atlas(shapes, KernelParams(15.0), 0.1, initial_control_grid(s.vertices, 8), IntegratorConfig{}, cfg);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
    CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] * (1 + 1e-12));
  }
  CHECK_THROWS_AS(estimate_atlas(std::vector<LandmarkSet>{}, KernelParams(15.0), 0.1,
                                 initial_control_grid(s.vertices, 8), IntegratorConfig{}, cfg),
                  InvalidArgument);
}

TEST_CASE("control point optimisation lowers the joint cost") {
  std::mt19937_64 rng(15);
  const TriangleMesh s = icosphere(1, 20.0);
  std::vector<LandmarkSet> targets;
  for (double f : {0.85, 0.9, 1.1}) {
    LandmarkSet x = f * s.vertices;
    x.col(2) *= 1.05;
    targets.push_back(x);
  }
  OptimConfig cfg;
  cfg.max_iters = 15;
  const ControlPointResult r =
      optimize_control_points(s.vertices, targets, 8, KernelParams(15.0), 0.1, IntegratorConfig{}, cfg);
  CHECK(r.control_points.rows() == 8);
  CHECK(r.momenta.size() == 3);
  CHECK(r.final_cost <= r.initial_cost);
  CHECK(r.final_cost < r.initial_cost);
}
