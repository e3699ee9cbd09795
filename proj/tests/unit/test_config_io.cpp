#include <doctest.h>

#include "shapetraj/config.h"
#include "shapetraj/io.h"
#include "support.h"

#include <filesystem>
#include <fstream>

using namespace shapetraj;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config file syntax") {
  const ConfigFile f = ConfigFile::parse(
      "top = 1\n"
      "# comment line\n"
      "[a]\n"
      "x = 2.5   # trailing comment\n"
      "name = \"has # hash\"\n"
      "flag = true\n"
      "list = [1, 2.5, -3]\n"
      "empty = []\n"
      "[a.b]\n"
      "y = -4\n"
      "[a.c]\n"
      "z = 18446744073709551615\n");
  CHECK(f.get_int("top", 0) == 1);
  CHECK(f.get_double("a.x", 0) == 2.5);
  CHECK(f.get_string("a.name", "") == "has # hash");
  CHECK(f.get_bool("a.flag", false));
  CHECK(f.get_list("a.list", {}) == std::vector<double>{1, 2.5, -3});
  CHECK(f.get_list("a.empty", {7}).empty());
  CHECK(f.get_int("a.b.y", 0) == -4);
  CHECK(f.get_uint64("a.c.z", 0) == 18446744073709551615ULL);
  CHECK(f.get_double("missing", 9.0) == 9.0);
  CHECK(f.subsections("a") == std::vector<std::string>{"b", "c"});
  CHECK_NOTHROW(f.check_all_used());
}

TEST_CASE("config file errors carry line numbers") {
  auto line_of = [](const std::string& text) {
    try {
      ConfigFile::parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("a = 1\n[sec\n") == 2);
  CHECK(line_of("a = 1\nno equals here\n") == 2);
  CHECK(line_of("a = 1\na = 2\n") == 2);
  CHECK(line_of("\n\nbad key = 1\n") == 3);
  CHECK(line_of("a =\n") == 1);

  const ConfigFile f = ConfigFile::parse("[s]\nn = 1.5\nb = yes\nq = plain\nl = 1, 2\nu = -1\n");
  CHECK_THROWS_AS(f.get_int("s.n", 0), ParseError);
  CHECK_THROWS_AS(f.get_double("s.q", 0), ParseError);
  CHECK_THROWS_AS(f.get_bool("s.b", false), ParseError);
  CHECK_THROWS_AS(f.get_string("s.q", ""), ParseError);
  CHECK_THROWS_AS(f.get_list("s.l", {}), ParseError);
  CHECK_THROWS_AS(f.get_uint64("s.u", 0), ParseError);
}

TEST_CASE("unknown keys are rejected") {
  const ConfigFile f = ConfigFile::parse("[kernel]\nsigma = 3\nsigmaa = 4\n");
  f.get_double("kernel.sigma", 0);
  try {
    f.check_all_used();
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.message().find("kernel.sigmaa") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_pipeline_config("[kernel]\nsigmaa = 4\n"), ParseError);
}

TEST_CASE("pipeline config defaults and overrides") {
  const PipelineConfig d = parse_pipeline_config("");
  CHECK(d.sigma == 15.0);
  CHECK(d.n_control_points == 60);
  CHECK_FALSE(d.seed.has_value());
  CHECK(d.synth.groups.size() == 3);
  CHECK(d.synth.sigma == 15.0);

  const PipelineConfig c = parse_pipeline_config(
      "[kernel]\nsigma = 12\n"
      "[control_points]\ncount = 27\noptimize = false\n"
      "[integrator]\nn_steps = 20\nscheme = \"euler\"\n"
      "[ladder]\nn_rungs = 8\nrung_scale = 0.5\n"
      "[ladder.log]\nmax_iters = 7\n"
      "[run]\nseed = 99\nworkers = 2\n"
      "[synth.group.Healthy]\ncount = 3\n"
      "[synth.group.Sick]\ncount = 4\noffset_points = [1, 2]\nmomentum_offset = [0, 1, 0]\n"
      "[stats]\ncontrol_group = \"Healthy\"\n");
  CHECK(c.sigma == 12.0);
  CHECK(c.n_control_points == 27);
  CHECK_FALSE(c.optimize_control_points);
  CHECK(c.integrator.n_steps == 20);
  CHECK(c.integrator.scheme == Scheme::Euler);
  CHECK(c.ladder.n_rungs == 8);
  CHECK(c.ladder.log_optim.max_iters == 7);
  CHECK(c.seed == 99u);
  CHECK(c.workers == 2);
  REQUIRE(c.synth.groups.size() == 2);
  CHECK(c.synth.groups[1].name == "Sick");
  CHECK(c.synth.groups[1].offset_points == std::vector<int>{1, 2});
  CHECK(c.synth.groups[1].momentum_offset == Vec3(0, 1, 0));
  CHECK(c.synth.seed == 99u);
  CHECK(c.synth.n_control_points == 27);
  CHECK(c.transport().ladder.n_rungs == 8);
  CHECK(c.spline().integrator.n_steps == 20);

  CHECK_THROWS_AS(parse_pipeline_config("[kernel]\nsigma = -1\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_pipeline_config("[integrator]\nscheme = \"midpoint\"\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_pipeline_config("[stats]\nalpha = 1.5\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_pipeline_config("[synth.group.X]\noffset_points = [1.5]\n"), InvalidArgument);
}

TEST_CASE("config hash") {
  CHECK(hex64(fnv1a("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a("a")) == "af63dc4c8601ec8c");
  CHECK(hex64(fnv1a("foobar")) == "85944171f73967e8");
  const PipelineConfig a = parse_pipeline_config("[kernel]\nsigma = 15\n");
  const PipelineConfig b = parse_pipeline_config("# same values\n[kernel]\nsigma = 15.0\n");
  const PipelineConfig c = parse_pipeline_config("[kernel]\nsigma = 15.5\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
  CHECK(a.hash().size() == 16);
  // Output location does not change what is computed.
  CHECK(parse_pipeline_config("[run]\noutput = \"elsewhere\"\n").hash() == a.hash());
}

TEST_CASE("config files on disk") {
  TempDir dir("shapetraj_test_config");
  write_text(dir.path / "c.toml", "[kernel]\nsigma = 9\n");
  CHECK(load_pipeline_config(dir.path / "c.toml").sigma == 9.0);
  write_text(dir.path / "bad.toml", "[kernel\n");
  try {
    load_pipeline_config(dir.path / "bad.toml");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad.toml") != std::string::npos);
    CHECK(e.line() == 1);
  }
  CHECK_THROWS_AS(load_pipeline_config(dir.path / "none.toml"), InvalidInput);
}

TEST_CASE("number formatting round trips") {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> g(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = g(rng) * std::pow(10.0, i % 20 - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(3.0) == "3");
}

TEST_CASE("momenta, forces and points CSV") {
  TempDir dir("shapetraj_test_csv");
  std::mt19937_64 rng(52);
  const PointSet cps = testing::random_points(rng, 6, -10, 10);
  const MomentumSet mu = testing::random_normal(rng, 6, 1.0);
  write_momenta_csv(dir.path / "m.csv", cps, mu);
  PointSet cps2;
  MomentumSet mu2;
  read_momenta_csv(dir.path / "m.csv", &cps2, &mu2);
  CHECK(cps2 == cps);
  CHECK(mu2 == mu);
  CHECK(read_text(dir.path / "m.csv").rfind("cx,cy,cz,mx,my,mz\n", 0) == 0);

  ForceField u = ForceField::zeros(4, 6);
  for (int t = 0; t < 4; ++t) u.at(t) = testing::random_normal(rng, 6, 1.0);
  write_forces_csv(dir.path / "u.csv", u);
  const ForceField u2 = read_forces_csv(dir.path / "u.csv", 4, 6);
  for (int t = 0; t < 4; ++t) CHECK(u2.at(t) == u.at(t));
  CHECK_THROWS_AS(read_forces_csv(dir.path / "u.csv", 5, 6), InvalidInput);

  write_points_csv(dir.path / "p.csv", cps);
  CHECK(read_points_csv(dir.path / "p.csv") == cps);
  CHECK_THROWS_AS(read_points_csv(dir.path / "m.csv"), ParseError);
  CHECK_THROWS_AS(read_points_csv(dir.path / "missing.csv"), InvalidInput);
}

TEST_CASE("generic CSV tables") {
  TempDir dir("shapetraj_test_table");
  CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{"1", "x"}, {"2", ""}};
  write_csv(dir.path / "t.csv", t);
  CHECK(read_text(dir.path / "t.csv") == "a,b\n1,x\n2,\n");
  const CsvTable back = read_csv(dir.path / "t.csv");
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(back.column("b") == 1);
  CHECK_THROWS_AS(back.column("c"), InvalidInput);
  write_text(dir.path / "ragged.csv", "a,b\n1\n");
  CHECK_THROWS_AS(read_csv(dir.path / "ragged.csv"), ParseError);
}

TEST_CASE("manifest") {
  TempDir dir("shapetraj_test_manifest");
  const TriangleMesh cube = testing::unit_cube();
  fs::create_directories(dir.path / "s1");
  write_mesh(cube, dir.path / "s1" / "f0.off");
  TriangleMesh small = cube;
  small.vertices *= 0.9;
  write_mesh(small, dir.path / "s1" / "f1.vtk");
  write_mesh(testing::unit_tetrahedron(), dir.path / "s1" / "tet.off");

  const std::vector<ManifestRow> rows{{"S1", "Control", 0, 1, {"s1/f0.off", "s1/f1.vtk"}},
                                      {"S2", "A", 1, 0, {"s1/f1.vtk", "s1/f0.off"}}};
  write_manifest(dir.path / "manifest.csv", rows);
  const std::vector<ManifestRow> back = read_manifest(dir.path / "manifest.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].subject_id == "S2");
  CHECK(back[1].group == "A");
  CHECK(back[1].ed_index == 1);
  CHECK(back[1].frames == rows[1].frames);

  const SubjectSequence s = load_subject(back[0], dir.path);
  CHECK(s.frames.size() == 2);
  CHECK(s.frames[1] == small.vertices);
  CHECK(ejection_fraction(s) == doctest::Approx(1 - 0.729).epsilon(1e-12));

  CHECK_THROWS_AS(load_subject(ManifestRow{"S3", "A", 0, 1, {"s1/f0.off", "s1/tet.off"}}, dir.path), InvalidInput);
  CHECK_THROWS_AS(load_subject(ManifestRow{"S4", "A", 0, 1, {"s1/f0.off", "s1/gone.off"}}, dir.path), InvalidInput);

  write_text(dir.path / "dup.csv", "subject_id,group,ed_index,es_index,frames\nX,A,0,1,a.off;b.off\nX,A,0,1,a.off;b.off\n");
  CHECK_THROWS_AS(read_manifest(dir.path / "dup.csv"), ParseError);
  write_text(dir.path / "empty.csv", "subject_id,group,ed_index,es_index,frames\n");
  CHECK(read_manifest(dir.path / "empty.csv").empty());
}
