#include <doctest.h>

#include "shapetraj/mesh.h"
#include "shapetraj/synth.h"
#include "support.h"

#include <Eigen/Geometry>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace shapetraj;
using testing::random_normal;
using testing::random_points;

namespace {

const std::filesystem::path kData = TEST_DATA_DIR;

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return q.normalized().toRotationMatrix();
}

// Closed-form absolute orientation from unit quaternions: the rotation is the
// top eigenvector of the symmetric 4x4 matrix built from the cross-covariance.
Eigen::Matrix3d quaternion_rotation(const LandmarkSet& moving, const LandmarkSet& fixed) {
  const LandmarkSet a = moving.rowwise() - moving.colwise().mean();
  const LandmarkSet b = fixed.rowwise() - fixed.colwise().mean();
  const Eigen::Matrix3d s = a.transpose() * b;
  Eigen::Matrix4d n;
  n << s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),
      s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),
      s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), -s(0, 0) + s(1, 1) - s(2, 2), s(1, 2) + s(2, 1),
      s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), -s(0, 0) - s(1, 1) + s(2, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(n);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

}  // namespace

TEST_CASE("volumes of unit solids") {
  CHECK(std::abs(signed_volume(testing::unit_tetrahedron()) - 1.0 / 6.0) <= 1e-12);
  CHECK(std::abs(signed_volume(testing::unit_cube()) - 1.0) <= 1e-12);

  TriangleMesh flipped = testing::unit_cube();
  for (auto& t : flipped.triangles) std::swap(t[1], t[2]);
  CHECK(signed_volume(flipped) == -signed_volume(testing::unit_cube()));

  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    TriangleMesh moved = testing::unit_cube();
    const Eigen::Matrix3d r = random_rotation(rng);
    moved.vertices = apply_rigid(moved.vertices, r, Vec3(3.0, -7.0, 11.0));
    CHECK(std::abs(signed_volume(moved) - 1.0) <= 1e-12);
    const double s = 0.5 + trial * 0.2;
    TriangleMesh scaled = testing::unit_cube();
    scaled.vertices *= s;
    CHECK(std::abs(signed_volume(scaled) - s * s * s) <= 1e-12 * s * s * s);
  }

  // Icosphere volume converges to the ball from below.
  double prev = 0.0;
  for (int sub = 0; sub <= 4; ++sub) {
    const double v = signed_volume(icosphere(sub, 1.0));
    CHECK(v > prev);
    CHECK(v < 4.0 / 3.0 * M_PI);
    prev = v;
  }
  CHECK(prev == doctest::Approx(4.0 / 3.0 * M_PI).epsilon(0.01));
}

TEST_CASE("triangle areas") {
  const auto a = triangle_areas(testing::unit_cube().vertices, testing::unit_cube().triangles);
  REQUIRE(a.size() == 12);
  for (double x : a) CHECK(std::abs(x - 0.5) <= 1e-15);
  const auto t = triangle_areas(testing::unit_tetrahedron().vertices, testing::unit_tetrahedron().triangles);
  CHECK(std::abs(t[3] - std::sqrt(3.0) / 2.0) <= 1e-15);
}

TEST_CASE("closedness checks") {
  CHECK(is_closed(testing::unit_cube().triangles));
  CHECK(is_closed(icosphere(2).triangles));
  CHECK(is_closed(ventricle_template(2).triangles));
  auto open = testing::unit_cube().triangles;
  open.pop_back();
  CHECK_FALSE(is_closed(open));
  CHECK_THROWS_AS(check_closed(open), InvalidInput);
  auto inconsistent = testing::unit_cube().triangles;
  std::swap(inconsistent[0][1], inconsistent[0][2]);
  CHECK_FALSE(is_closed(inconsistent));
  CHECK_THROWS_AS(check_closed({}), InvalidInput);
  TriangleMesh bad = testing::unit_tetrahedron();
  bad.triangles[0][0] = 4;
  CHECK_THROWS_AS(bad.validate_indices(), InvalidInput);
}

TEST_CASE("ejection fraction and area strain scaling laws") {
  std::mt19937_64 rng(32);
  const TriangleMesh base = ventricle_template(2);
  for (double s : {0.6, 0.8, 0.9, 1.0, 1.2}) {
    const Eigen::Matrix3d r = random_rotation(rng);
    SubjectSequence seq;
    seq.subject_id = "s";
    seq.triangles = base.triangles;
    seq.frames = {base.vertices, apply_rigid(s * base.vertices, r, Vec3(1, 2, 3))};
    CHECK(std::abs(ejection_fraction(seq) - (1.0 - s * s * s)) <= 1e-12);
    const AreaStrain as = area_strain(seq, 1);
    CHECK(as.excluded == 0);
    for (double v : as.values) CHECK(std::abs(v - (s * s - 1.0)) <= 1e-12);
    CHECK(std::abs(as.mean() - (s * s - 1.0)) <= 1e-12);
    CHECK(as.stddev() <= 1e-12);
  }
  CHECK(ejection_fraction(100.0, 58.0) == doctest::Approx(0.42).epsilon(1e-15));
  CHECK_THROWS_AS(ejection_fraction(0.0, 1.0), InvalidInput);
}

TEST_CASE("degenerate cells are excluded from area strain") {
  TriangleMesh m = testing::unit_tetrahedron();
  LandmarkSet ed = m.vertices;
  ed.row(3) << 0.5, 0.5, 0.0;  // collapses the face {1, 2, 3} onto a line
  const AreaStrain as = area_strain(ed, m.vertices, m.triangles);
  CHECK(as.excluded == 1);
  CHECK(std::isnan(as.values[3]));
  CHECK(std::isfinite(as.mean()));
}

TEST_CASE("subject sequence validation") {
  SubjectSequence seq;
  seq.subject_id = "x";
  seq.triangles = testing::unit_cube().triangles;
  seq.frames = {testing::unit_cube().vertices};
  CHECK_THROWS_AS(seq.validate(), InvalidInput);
  seq.frames.push_back(testing::unit_cube().vertices);
  CHECK_NOTHROW(seq.validate());
  seq.es_index = 0;
  CHECK_THROWS_AS(seq.validate(), InvalidInput);
  seq.es_index = 2;
  CHECK_THROWS_AS(seq.validate(), InvalidInput);
  seq.es_index = 1;
  seq.frames[1] = seq.frames[1].topRows(7);
  CHECK_THROWS_AS(seq.validate(), InvalidInput);
}

TEST_CASE("rigid alignment recovers planted motions") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const LandmarkSet x = random_points(rng, 40, -30, 30);
    const Eigen::Matrix3d r = random_rotation(rng);
    const Vec3 t = random_normal(rng, 1, 20.0).row(0).transpose();
    const LandmarkSet y = apply_rigid(x, r, t);
    const RigidAlignment a = rigid_align(x, y);
    CHECK(a.residual <= 1e-10);
    CHECK((a.rotation - r).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.translation - t).norm() <= 1e-10);
    CHECK(a.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("rigid alignment of noisy data agrees with the quaternion solution") {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    const LandmarkSet x = random_points(rng, 30, -10, 10);
    const LandmarkSet y = apply_rigid(x, random_rotation(rng), Vec3(1, 2, 3)) + random_normal(rng, 30, 0.5);
    const RigidAlignment a = rigid_align(x, y);
    CHECK((a.rotation - quaternion_rotation(x, y)).cwiseAbs().maxCoeff() <= 1e-10);
    // Optimality: small rotations of the answer never lower the residual.
    for (int k = 0; k < 3; ++k) {
      const Eigen::Matrix3d d = Eigen::AngleAxisd(1e-4, Vec3::Unit(k)).toRotationMatrix();
      const Eigen::Matrix3d r2 = d * a.rotation;
      const Vec3 t2 = y.colwise().mean().transpose() - r2 * x.colwise().mean().transpose();
      CHECK((apply_rigid(x, r2, t2) - y).squaredNorm() >= a.residual);
    }
  }
}

TEST_CASE("rigid alignment never reflects") {
  std::mt19937_64 rng(35);
  const LandmarkSet x = random_points(rng, 20, -5, 5);
  LandmarkSet mirrored = x;
  mirrored.col(0) *= -1.0;
  const RigidAlignment a = rigid_align(x, mirrored);
  CHECK(a.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.residual > 0.0);
  CHECK_THROWS_AS(rigid_align(x, x.topRows(10)), InvalidArgument);
  CHECK_THROWS_AS(rigid_align(x.topRows(2), x.topRows(2)), InvalidArgument);
  LandmarkSet line = LandmarkSet::Zero(5, 3);
  for (int i = 0; i < 5; ++i) line(i, 0) = i;
  CHECK_THROWS_AS(rigid_align(line, line), InvalidInput);
}

TEST_CASE("per-cell RMSE") {
  Eigen::MatrixXd ref(2, 3);
  Eigen::MatrixXd rec(2, 3);
  ref << 0, 1, 2, 0, 1, 2;
  rec << 3, 1, 2, 4, 1, std::numeric_limits<double>::quiet_NaN();
  const CellRmse r = rmse_per_cell(ref, rec);
  CHECK(r.per_cell[0] == doctest::Approx(std::sqrt(12.5)));
  CHECK(r.per_cell[1] == 0.0);
  CHECK(r.per_cell[2] == 0.0);
  CHECK(r.mean == doctest::Approx(std::sqrt(12.5) / 3.0));
  CHECK_THROWS_AS(rmse_per_cell(ref, rec.leftCols(2)), InvalidArgument);
}

TEST_CASE("mesh files") {
  const TriangleMesh off = read_mesh(kData / "tetrahedron.off");
  CHECK(off.vertices == testing::unit_tetrahedron().vertices);
  CHECK(off.triangles == testing::unit_tetrahedron().triangles);

  std::vector<std::string> warnings;
  const TriangleMesh vtk = read_mesh(kData / "tetrahedron.vtk", &warnings);
  CHECK(vtk.vertices == off.vertices);
  CHECK(vtk.triangles == off.triangles);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("POINT_DATA") != std::string::npos);

  CHECK_FALSE(is_closed(read_mesh(kData / "open_tetrahedron.off").triangles));
  CHECK_THROWS_AS(read_mesh(kData / "quad_face.off"), ParseError);
  CHECK_THROWS_AS(read_mesh(kData / "truncated.vtk"), ParseError);
  try {
    read_mesh(kData / "bad_number.off");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find("bad_number.off") != std::string::npos);
  }
  CHECK_THROWS_AS(read_mesh(kData / "missing.off"), InvalidInput);
  CHECK_THROWS_AS(read_mesh(kData / "tetrahedron.stl"), InvalidInput);
}

TEST_CASE("mesh round trips are exact") {
  std::mt19937_64 rng(36);
  TriangleMesh m = icosphere(1, 17.3);
  m.vertices += random_normal(rng, m.vertices.rows(), 1e-3);
  const auto dir = std::filesystem::temp_directory_path() / "shapetraj_test_mesh";
  std::filesystem::create_directories(dir);
  for (const char* name : {"m.off", "m.vtk"}) {
    write_mesh(m, dir / name);
    const TriangleMesh back = read_mesh(dir / name);
    CHECK(back.vertices == m.vertices);
    CHECK(back.triangles == m.triangles);
  }
  CHECK_THROWS_AS(write_mesh(m, dir / "m.ply"), InvalidInput);
  std::filesystem::remove_all(dir);
}

TEST_CASE("icosphere and ventricle template") {
  for (int s = 0; s <= 3; ++s) {
    const TriangleMesh m = icosphere(s, 2.0);
    CHECK(m.vertices.rows() == 10 * (1 << (2 * s)) + 2);
    CHECK(m.triangles.size() == static_cast<std::size_t>(20 * (1 << (2 * s))));
    CHECK(signed_volume(m) > 0.0);
    CHECK((m.vertices.rowwise().norm().array() - 2.0).abs().maxCoeff() <= 1e-12);
  }
  const TriangleMesh v = ventricle_template(2);
  CHECK(v.vertices.rows() == 162);
  CHECK(signed_volume(v) > 0.0);
  CHECK(v.vertices.col(2).maxCoeff() == doctest::Approx(60.0));
  CHECK(v.vertices.col(2).minCoeff() == doctest::Approx(-8.0));
  CHECK_THROWS_AS(icosphere(-1), InvalidArgument);
}
