// Command-line driver: synthetic cohorts, the full pipeline and single stages.

#include "shapetraj/pipeline.h"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace shapetraj;

struct Args {
  std::string config;
  std::string manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  std::string template_mesh;
  std::string target_mesh;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Args& a, bool needs_manifest) {
  cmd->add_option("--config", a.config, "configuration file")->required()->check(CLI::ExistingFile);
  auto* m = cmd->add_option("--manifest", a.manifest, "cohort manifest (CSV)");
  if (!needs_manifest) m->description("unused by this command");
  cmd->add_option("--out", a.out, "output directory (default: run.output of the config)");
  cmd->add_option("--seed", a.seed, "random seed, overrides run.seed");
  cmd->add_option("--workers", a.workers, "worker threads, overrides run.workers")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--quiet", a.quiet, "no progress output");
}

PipelineConfig load(const Args& a) {
  PipelineConfig cfg = load_pipeline_config(a.config);
  if (a.seed) {
    cfg.seed = a.seed;
    cfg.synth.seed = *a.seed;
  }
  if (a.workers > 0) cfg.workers = a.workers;
  return cfg;
}

std::filesystem::path out_dir(const Args& a, const PipelineConfig& cfg) {
  return a.out.empty() ? std::filesystem::path(cfg.output) : std::filesystem::path(a.out);
}

std::filesystem::path manifest_path(const Args& a, const PipelineConfig& cfg) {
  const std::string m = a.manifest.empty() ? cfg.manifest : a.manifest;
  if (m.empty()) throw InvalidArgument("no manifest given (--manifest or run.manifest)");
  return m;
}

int report(const RunReport& r) {
  for (const auto& f : r.failures) {
    std::cerr << "failed: " << f.subject_id << " [" << f.stage << "] " << f.message << "\n";
  }
  if (r.exit_code == kExitPartial) {
    std::cerr << r.failures.size() << " subject failure(s) out of " << r.n_subjects << "\n";
  } else if (r.exit_code == kExitTotal) {
    std::cerr << "all subjects failed\n";
  }
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shape trajectories: registration, transport to an atlas, spline fits and group statistics"};
  app.require_subcommand(1);
  Args a;

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  add_common(synth, a, false);
  auto* pipeline = app.add_subcommand("pipeline", "run every stage on a manifest");
  add_common(pipeline, a, true);
  auto* validate = app.add_subcommand("validate-transport", "compare original and transported EF/AS");
  add_common(validate, a, false);
  auto* reg = app.add_subcommand("register", "register one mesh onto another");
  add_common(reg, a, false);
  reg->add_option("--template", a.template_mesh, "template mesh (.off or .vtk)")->required()->check(CLI::ExistingFile);
  reg->add_option("--target", a.target_mesh, "target mesh (.off or .vtk)")->required()->check(CLI::ExistingFile);
  auto* transport = app.add_subcommand("transport", "run the pipeline up to the scaled transport");
  add_common(transport, a, true);
  auto* spline = app.add_subcommand("spline", "run the pipeline up to the spline fits");
  add_common(spline, a, true);
  auto* stats = app.add_subcommand("stats", "group tests on existing spline outputs");
  add_common(stats, a, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  PipelineConfig cfg;
  try {
    cfg = load(a);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const auto out = out_dir(a, cfg);
    if (synth->parsed()) {
      const SynthCohort c = write_synthetic_cohort(cfg, out);
      if (!a.quiet) std::cerr << "wrote " << c.subjects.size() << " subjects to " << out.string() << "\n";
      return kExitOk;
    }
    if (validate->parsed()) return report(run_validate_transport(cfg, out));
    if (stats->parsed()) return report(run_stats_stage(cfg, out));
    if (reg->parsed()) return report(run_register(cfg, a.template_mesh, a.target_mesh, out));

    RunOptions opt;
    opt.manifest = manifest_path(a, cfg);
    opt.out = out;
    opt.workers = cfg.workers;
    opt.verbose = !a.quiet;
    opt.last_stage = transport->parsed() ? LastStage::Transport
                     : spline->parsed()  ? LastStage::Spline
                                         : LastStage::Stats;
    return report(run_pipeline(cfg, opt));
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTotal;
  }
}
