#include <doctest.h>

#include "shapetraj/io.h"
#include "shapetraj/pipeline.h"
#include "support.h"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace shapetraj;
namespace fs = std::filesystem;

namespace {

const std::string kCli = SHAPETRAJ_CLI;

const std::string kSmallConfig = R"(
[kernel]
sigma = 15

[control_points]
count = 8
max_iters = 5

[integrator]
n_steps = 6

[registration]
max_iters = 40

[atlas]
outer_iters = 1
inner_iters = 2

[ladder]
n_rungs = 3

[spline]
max_iters = 30

[run]
seed = 3
workers = 1

[synth]
subdivisions = 1
n_frames = 3

[synth.group.Control]
count = 3

[synth.group.A]
count = 3
offset_points = [0]
momentum_offset = [0, 0, 1]
)";

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

// Relative path -> content of every regular file below `root` with extension `ext`.
std::map<std::string, std::string> snapshot(const fs::path& root, const std::string& ext) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ext) {
      out[fs::relative(e.path(), root).generic_string()] = read_text(e.path());
    }
  }
  return out;
}

int run_cli(const std::string& args) {
  const int rc = std::system((kCli + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("synthetic cohorts") {
  PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  TempDir dir("shapetraj_test_synth");

  SUBCASE("same seed gives identical files") {
    write_synthetic_cohort(cfg, dir.path / "a");
    write_synthetic_cohort(cfg, dir.path / "b");
    const auto a = snapshot(dir.path / "a", ".off");
    CHECK(a.size() == 6 * 3 + 1);
    CHECK(a == snapshot(dir.path / "b", ".off"));
    CHECK(snapshot(dir.path / "a", ".csv") == snapshot(dir.path / "b", ".csv"));
    CHECK(read_text(dir.path / "a" / "ground_truth.json") == read_text(dir.path / "b" / "ground_truth.json"));
    cfg.synth.seed = 4;
    write_synthetic_cohort(cfg, dir.path / "c");
    CHECK(snapshot(dir.path / "c", ".off") != a);
  }

  SUBCASE("measured EF hits the target") {
    cfg.synth.groups = {SynthGroup{"Control", 4, 0.42, 0.0, {}, Vec3::Zero()}};
    const SynthCohort c = write_synthetic_cohort(cfg, dir.path / "ef");
    for (const auto& s : c.subjects) {
      CHECK(s.target_ef == 0.42);
      CHECK(std::abs(ejection_fraction(s.sequence) - 0.42) <= 1e-3);
    }
    const auto truth = nlohmann::json::parse(read_text(dir.path / "ef" / "ground_truth.json"));
    CHECK(truth["subjects"].size() == 4);
    CHECK(truth["seed"] == 3);
    const auto rows = read_manifest(dir.path / "ef" / "manifest.csv");
    REQUIRE(rows.size() == 4);
    const SubjectSequence back = load_subject(rows[0], dir.path / "ef");
    CHECK(std::abs(ejection_fraction(back) - 0.42) <= 1e-3);
  }

  SUBCASE("zero deformation leaves every frame identical") {
    cfg.synth.groups = {SynthGroup{"Control", 2, 0.0, 0.0, {}, Vec3::Zero()}};
    cfg.synth.force_scale = 0.0;
    cfg.synth.momentum_noise = 0.0;
    const SynthCohort c = generate_cohort(cfg.synth);
    for (const auto& s : c.subjects) {
      for (const auto& f : s.sequence.frames) CHECK(f == s.sequence.frames.front());
      CHECK(ejection_fraction(s.sequence) == 0.0);
    }
  }

  SUBCASE("a seed is required") {
    cfg.seed.reset();
    CHECK_THROWS_AS(write_synthetic_cohort(cfg, dir.path / "x"), InvalidArgument);
  }
}

TEST_CASE("empty manifest") {
  TempDir dir("shapetraj_test_empty");
  write_text(dir.path / "manifest.csv", "subject_id,group,ed_index,es_index,frames\n");
  const PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  try {
    run_pipeline(cfg, RunOptions{dir.path / "manifest.csv", dir.path / "out", 1, LastStage::Stats, false});
    FAIL("expected an error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()) == "no subjects");
  }
  write_text(dir.path / "c.toml", kSmallConfig);
  CHECK(run_cli("pipeline --config " + (dir.path / "c.toml").string() + " --manifest " +
                (dir.path / "manifest.csv").string() + " --out " + (dir.path / "out").string()) == kExitTotal);
}

TEST_CASE("end-to-end run") {
  TempDir dir("shapetraj_test_e2e");
  const PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  write_synthetic_cohort(cfg, dir.path / "cohort");
  const fs::path manifest = dir.path / "cohort" / "manifest.csv";

  const RunReport r1 = run_pipeline(cfg, RunOptions{manifest, dir.path / "run1", 1, LastStage::Stats, false});
  CHECK(r1.exit_code == kExitOk);
  CHECK(r1.n_subjects == 6);
  CHECK(r1.failures.empty());
  for (const char* f : {"metrics.csv", "atlas.off", "transport.csv", "transport_details.csv", "control_points.csv",
                        "spline.csv", "stats.csv", "significance_map.csv", "run_summary.json", "provenance.json"}) {
    CHECK_MESSAGE(fs::exists(dir.path / "run1" / f), f);
  }
  CHECK(std::find(r1.outputs.begin(), r1.outputs.end(), "stats.csv") != r1.outputs.end());

  // Another worker count must not change a single byte.
  const RunReport r2 = run_pipeline(cfg, RunOptions{manifest, dir.path / "run2", 2, LastStage::Stats, false});
  CHECK(r2.exit_code == kExitOk);
  const auto csv1 = snapshot(dir.path / "run1", ".csv");
  CHECK(csv1.size() > 10);
  CHECK(csv1 == snapshot(dir.path / "run2", ".csv"));
  CHECK(read_text(dir.path / "run1" / "run_summary.json") == read_text(dir.path / "run2" / "run_summary.json"));

  const auto summary = nlohmann::json::parse(read_text(dir.path / "run1" / "run_summary.json"));
  CHECK(summary["config_hash"] == cfg.hash());
  const auto prov = nlohmann::json::parse(read_text(dir.path / "run1" / "provenance.json"));
  CHECK(prov["seed"] == 3);

  const CsvTable transport = read_csv(dir.path / "run1" / "transport.csv");
  CHECK(transport.rows.size() == 6);
  const CsvTable stats = read_csv(dir.path / "run1" / "stats.csv");
  CHECK(stats.rows.size() == 8 * (1 + 6));

  SUBCASE("transport validation") {
    const RunReport v = run_validate_transport(cfg, dir.path / "run1");
    CHECK(v.exit_code == kExitOk);
    const TransportValidation tv = compute_transport_validation(dir.path / "run1");
    CHECK(tv.n_subjects == 6);
    CHECK(tv.ef_rmse_spt <= 0.005);
    CHECK(tv.ef_rmse_spt < tv.ef_rmse_pt);
    CHECK(fs::exists(dir.path / "run1" / "validate_transport.csv"));
    CHECK(fs::exists(dir.path / "run1" / "lambda_volume.csv"));
  }

  SUBCASE("stats stage rerun reproduces the table") {
    const std::string before = read_text(dir.path / "run1" / "stats.csv");
    const RunReport s = run_stats_stage(cfg, dir.path / "run1");
    CHECK(s.exit_code == kExitOk);
    CHECK(read_text(dir.path / "run1" / "stats.csv") == before);
  }

  SUBCASE("one broken subject does not stop the others") {
    std::vector<ManifestRow> rows = read_manifest(manifest);
    rows[4].frames[1] = "subjects/missing.off";
    write_manifest(dir.path / "cohort" / "broken.csv", rows);
    const RunReport b = run_pipeline(
        cfg, RunOptions{dir.path / "cohort" / "broken.csv", dir.path / "run3", 1, LastStage::Transport, false});
    CHECK(b.exit_code == kExitPartial);
    REQUIRE(b.failures.size() == 1);
    CHECK(b.failures[0].subject_id == rows[4].subject_id);
    CHECK(b.failures[0].stage == "load");
    CHECK(read_csv(dir.path / "run3" / "transport.csv").rows.size() == 5);
    CHECK(read_text(dir.path / "run3" / "transport.csv") != "");
  }
}

TEST_CASE("validation needs upstream outputs") {
  TempDir dir("shapetraj_test_missing");
  try {
    compute_transport_validation(dir.path);
    FAIL("expected an error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("transport.csv") != std::string::npos);
  }
}

TEST_CASE("command line") {
  TempDir dir("shapetraj_test_cli");
  const fs::path cfg = dir.path / "c.toml";
  write_text(cfg, kSmallConfig);
  write_text(dir.path / "bad.toml", "[kernel]\nsigmaa = 1\n");
  CHECK(run_cli("") == kExitUsage);
  CHECK(run_cli("synth") == kExitUsage);
  CHECK(run_cli("synth --config " + (dir.path / "none.toml").string()) == kExitUsage);
  CHECK(run_cli("synth --config " + (dir.path / "bad.toml").string()) == kExitUsage);
  CHECK(run_cli("synth --config " + cfg.string() + " --workers -2") == kExitUsage);
  CHECK(run_cli("synth --config " + cfg.string() + " --out " + (dir.path / "cohort").string()) == kExitOk);
  CHECK(fs::exists(dir.path / "cohort" / "manifest.csv"));
  CHECK(run_cli("synth --config " + cfg.string() + " --seed 11 --out " + (dir.path / "cohort11").string()) == kExitOk);
  CHECK(read_text(dir.path / "cohort" / "manifest.csv") == read_text(dir.path / "cohort11" / "manifest.csv"));
  CHECK(read_text(dir.path / "cohort" / "subjects" / "A_001" / "frame_01.off") !=
        read_text(dir.path / "cohort11" / "subjects" / "A_001" / "frame_01.off"));
  CHECK(run_cli("validate-transport --config " + cfg.string() + " --out " + (dir.path / "nothing").string()) ==
        kExitTotal);
  CHECK(run_cli("pipeline --config " + cfg.string() + " --out " + (dir.path / "o").string()) == kExitUsage);

  const fs::path tpl = dir.path / "cohort" / "subjects" / "Control_001" / "frame_00.off";
  const fs::path tgt = dir.path / "cohort" / "subjects" / "Control_001" / "frame_02.off";
  CHECK(run_cli("register --config " + cfg.string() + " --template " + tpl.string() + " --target " + tgt.string() +
                " --out " + (dir.path / "reg").string()) == kExitOk);
  CHECK(fs::exists(dir.path / "reg" / "momenta.csv"));
}
