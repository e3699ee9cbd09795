#ifndef SHAPETRAJ_PIPELINE_H
#define SHAPETRAJ_PIPELINE_H

#include "shapetraj/config.h"
#include "shapetraj/stats.h"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace shapetraj {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitPartial = 2, kExitTotal = 3 };

struct SubjectFailure {
  std::string subject_id;
  std::string stage;
  std::string message;
};

struct RunReport {
  int exit_code = kExitOk;
  int n_subjects = 0;
  std::vector<SubjectFailure> failures;
  std::vector<std::string> outputs;  // relative to the output directory, sorted
};

enum class LastStage { Transport, Spline, Stats };

struct RunOptions {
  std::filesystem::path manifest;
  std::filesystem::path out;
  int workers = 0;  // 0: take the config value
  LastStage last_stage = LastStage::Stats;
  bool verbose = true;  // progress lines on stderr
};

/// Worker count: `requested` if positive, else the hardware concurrency.
int resolve_workers(int requested);

/// Calls fn(0..n-1) on a pool of `workers` threads. fn must not throw.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

/// Writes a synthetic cohort (meshes, manifest.csv, ground_truth.json) below
/// `out`. The config must carry a seed.
SynthCohort write_synthetic_cohort(const PipelineConfig& cfg, const std::filesystem::path& out);

/// Alignment, atlas, transport, shared control points, spline fits and
/// statistics, stopping after `last_stage`. Subject failures are recorded and
/// the remaining subjects continue. Throws InvalidInput for an empty manifest
/// ("no subjects") or a cohort without an atlas source.
RunReport run_pipeline(const PipelineConfig& cfg, const RunOptions& options);

/// Group tests on the spline descriptors already written below `out`.
RunReport run_stats_stage(const PipelineConfig& cfg, const std::filesystem::path& out);

struct TransportValidation {
  int n_subjects = 0;
  double ef_rmse_pt = 0.0;
  double ef_rmse_spt = 0.0;
  double as_rmse_pt = 0.0;   // mean over cells of the per-cell RMSE at ES
  double as_rmse_spt = 0.0;
  Summary ef_original;
  Summary as_original;       // per-subject mean AS at ES
  Regression lambda_volume;
  double norm_volume_pearson = 0.0;  // RKHS norm of the ES deformation vs ED volume
  double atlas_volume = 0.0;
};

/// Reads the transport outputs of a pipeline run. Throws InvalidInput naming
/// the missing upstream file.
TransportValidation compute_transport_validation(const std::filesystem::path& out);

/// compute_transport_validation plus the report files.
RunReport run_validate_transport(const PipelineConfig& cfg, const std::filesystem::path& out);

/// Single registration of two meshes with a control grid over the template.
RunReport run_register(const PipelineConfig& cfg, const std::filesystem::path& template_mesh,
                       const std::filesystem::path& target_mesh, const std::filesystem::path& out);

}  // namespace shapetraj

#endif
