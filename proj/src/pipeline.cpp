#include "shapetraj/pipeline.h"

#include "shapetraj/io.h"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#ifndef SHAPETRAJ_VERSION
#define SHAPETRAJ_VERSION "unknown"
#endif

namespace shapetraj {

namespace fs = std::filesystem;
using json = nlohmann::json;

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  const int w = std::max(1, std::min(workers, n));
  if (w <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

namespace {

class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  fs::path path(const std::string& rel) {
    std::lock_guard<std::mutex> lock(mu_);
    written_.insert(rel);
    const fs::path p = root_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }

  void write_json(const std::string& rel, const json& j) {
    std::ofstream out(path(rel), std::ios::binary);
    out << j.dump(2) << "\n";
  }

  std::vector<std::string> files() const { return {written_.begin(), written_.end()}; }
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::set<std::string> written_;
  std::mutex mu_;
};

std::string frame_name(const std::string& prefix, int f, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02d%s", prefix.c_str(), f, ext.c_str());
  return buf;
}

std::string subject_dir(const std::string& id) { return "subjects/" + id + "/"; }

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidInput("missing upstream output " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

void log_line(bool verbose, const std::string& s) {
  if (!verbose) return;
  static std::mutex m;
  std::lock_guard<std::mutex> lock(m);
  std::cerr << s << "\n";
}

int exit_code_for(int n_subjects, const std::vector<SubjectFailure>& failures) {
  std::set<std::string> failed;
  for (const auto& f : failures) failed.insert(f.subject_id);
  if (failed.empty()) return kExitOk;
  return static_cast<int>(failed.size()) >= n_subjects ? kExitTotal : kExitPartial;
}

json provenance(const PipelineConfig& cfg) {
  json j;
  j["config_hash"] = cfg.hash();
  j["version"] = SHAPETRAJ_VERSION;
  j["seed"] = cfg.seed ? json(*cfg.seed) : json(nullptr);
  j["config"] = cfg.canonical();
  return j;
}

json failures_json(const std::vector<SubjectFailure>& failures) {
  json arr = json::array();
  for (const auto& f : failures) arr.push_back({{"subject", f.subject_id}, {"stage", f.stage}, {"error", f.message}});
  return arr;
}

std::string d(double v) { return format_double(v); }

// ---------------------------------------------------------------------------
// Statistics

struct StatsOutcome {
  json summary;
};

StatsOutcome write_stats(const PipelineConfig& cfg, const std::vector<Descriptor>& descriptors,
                         const PointSet& cps, OutputDir& out) {
  StatsOutcome o;
  TestReport report;
  try {
    report = groupwise_tests(descriptors, cfg.control_group, cfg.significance);
  } catch (const InvalidArgument& e) {
    o.summary = {{"status", "skipped"}, {"reason", e.what()}};
    return o;
  }
  CsvTable t;
  t.header = {"comparison", "block_type", "control_point", "time_step", "t2", "p_raw", "p_adj", "significant",
              "mean_dx", "mean_dy", "mean_dz", "diff_dx", "diff_dy", "diff_dz", "regularized", "testable"};
  CsvTable map;
  map.header = {"comparison", "control_point", "x", "y", "z", "significant", "mean_dx", "mean_dy", "mean_dz",
                "diff_dx", "diff_dy", "diff_dz"};
  json per_comparison = json::object();
  for (const auto& b : report.blocks) {
    t.rows.push_back({b.comparison, to_string(b.type), std::to_string(b.control_point), std::to_string(b.time_step),
                      d(b.test.t2), d(b.test.p), d(b.p_adjusted), b.significant ? "1" : "0", d(b.mean_group.x()),
                      d(b.mean_group.y()), d(b.mean_group.z()), d(b.mean_difference.x()), d(b.mean_difference.y()),
                      d(b.mean_difference.z()), b.test.regularized ? "1" : "0", b.test.testable ? "1" : "0"});
    json& c = per_comparison[b.comparison];
    if (c.is_null()) c = {{"blocks", 0}, {"significant", 0}, {"significant_momentum_points", json::array()}};
    c["blocks"] = c["blocks"].get<int>() + 1;
    if (b.significant) c["significant"] = c["significant"].get<int>() + 1;
    if (b.type == BlockType::Momentum) {
      const auto k = static_cast<Eigen::Index>(b.control_point);
      map.rows.push_back({b.comparison, std::to_string(b.control_point), d(cps(k, 0)), d(cps(k, 1)), d(cps(k, 2)),
                          b.significant ? "1" : "0", d(b.mean_group.x()), d(b.mean_group.y()), d(b.mean_group.z()),
                          d(b.mean_difference.x()), d(b.mean_difference.y()), d(b.mean_difference.z())});
      if (b.significant) c["significant_momentum_points"].push_back(b.control_point);
    }
  }
  write_csv(out.path("stats.csv"), t);
  write_csv(out.path("significance_map.csv"), map);
  o.summary = {{"status", "ok"},
               {"blocks_per_comparison", report.blocks_per_comparison},
               {"significant", report.significant_count()},
               {"untestable", report.untestable_count()},
               {"comparisons", per_comparison}};
  return o;
}

void finish(const PipelineConfig& cfg, OutputDir& out, RunReport& report, json summary,
            const std::string& name = "run_summary.json") {
  report.exit_code = exit_code_for(report.n_subjects, report.failures);
  out.write_json("provenance.json", provenance(cfg));
  // The summary lists itself among the outputs.
  out.path(name);
  report.outputs = out.files();
  summary["config_hash"] = cfg.hash();
  summary["version"] = SHAPETRAJ_VERSION;
  summary["subjects"] = report.n_subjects;
  summary["failures"] = failures_json(report.failures);
  summary["exit_code"] = report.exit_code;
  summary["outputs"] = report.outputs;
  out.write_json(name, summary);
}

}  // namespace

// ---------------------------------------------------------------------------

SynthCohort write_synthetic_cohort(const PipelineConfig& cfg, const fs::path& out_dir) {
  if (!cfg.seed) throw InvalidArgument("synthetic runs need a seed (run.seed or --seed)");
  const SynthCohort cohort = generate_cohort(cfg.synth);
  OutputDir out(out_dir);
  write_mesh(cohort.template_mesh, out.path("template.off"));
  write_points_csv(out.path("template_control_points.csv"), cohort.template_control_points);

  std::vector<ManifestRow> rows;
  json subjects = json::array();
  for (const auto& s : cohort.subjects) {
    const SubjectSequence& seq = s.sequence;
    ManifestRow row{seq.subject_id, seq.group, seq.ed_index, seq.es_index, {}};
    for (int f = 0; f < static_cast<int>(seq.frames.size()); ++f) {
      const std::string rel = subject_dir(seq.subject_id) + frame_name("frame", f, ".off");
      write_mesh(seq.frame_mesh(f), out.path(rel));
      row.frames.push_back(rel);
    }
    write_momenta_csv(out.path(subject_dir(seq.subject_id) + "true_momenta.csv"), s.control_points, s.momenta);
    write_forces_csv(out.path(subject_dir(seq.subject_id) + "true_forces.csv"), s.forces);
    rows.push_back(std::move(row));
    std::vector<double> rot(s.rotation.data(), s.rotation.data() + 9);
    subjects.push_back({{"subject_id", seq.subject_id},
                        {"group", seq.group},
                        {"target_ef", s.target_ef},
                        {"measured_ef", ejection_fraction(seq)},
                        {"ed_volume", signed_volume(seq.frames[0], seq.triangles)},
                        {"volume_factor", s.volume_factor},
                        {"amplitude", s.amplitude},
                        {"rotation_colmajor", rot},
                        {"translation", {s.translation.x(), s.translation.y(), s.translation.z()}}});
  }
  write_manifest(out.path("manifest.csv"), rows);

  json groups = json::object();
  for (const auto& g : cfg.synth.groups) {
    groups[g.name] = {{"count", g.count},
                      {"ef_mean", g.ef_mean},
                      {"ef_std", g.ef_std},
                      {"offset_points", g.offset_points},
                      {"momentum_offset", {g.momentum_offset.x(), g.momentum_offset.y(), g.momentum_offset.z()}}};
  }
  json truth = {{"seed", *cfg.seed},
                {"config_hash", cfg.hash()},
                {"template_volume", signed_volume(cohort.template_mesh)},
                {"groups", groups},
                {"subjects", subjects}};
  out.write_json("ground_truth.json", truth);
  out.write_json("provenance.json", provenance(cfg));
  return cohort;
}

// ---------------------------------------------------------------------------

RunReport run_pipeline(const PipelineConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  const std::vector<ManifestRow> rows = read_manifest(opt.manifest);
  if (rows.empty()) throw InvalidInput("no subjects");
  const fs::path base_dir = opt.manifest.parent_path();
  const int workers = resolve_workers(opt.workers > 0 ? opt.workers : cfg.workers);
  const int n = static_cast<int>(rows.size());
  const KernelParams kernel = cfg.kernel();

  OutputDir out(opt.out);
  RunReport report;
  report.n_subjects = n;
  std::vector<std::optional<SubjectFailure>> failed(static_cast<std::size_t>(n));
  auto fail = [&](int i, const std::string& stage, const std::string& msg) {
    failed[static_cast<std::size_t>(i)] = SubjectFailure{rows[static_cast<std::size_t>(i)].subject_id, stage, msg};
    log_line(opt.verbose, stage + ": " + rows[static_cast<std::size_t>(i)].subject_id + " failed: " + msg);
  };
  auto ok = [&](int i) { return !failed[static_cast<std::size_t>(i)].has_value(); };
  json summary;

  // Load.
  std::vector<SubjectSequence> subjects(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](int i) {
    try {
      subjects[static_cast<std::size_t>(i)] = load_subject(rows[static_cast<std::size_t>(i)], base_dir);
    } catch (const std::exception& e) {
      fail(i, "load", e.what());
    }
  });

  // Reference frame for the rigid alignment.
  std::optional<TriangleMesh> atlas_file;
  if (!cfg.atlas_file.empty()) atlas_file = read_mesh(cfg.atlas_file);
  int reference = -1;
  for (int i = 0; i < n && reference < 0; ++i) {
    if (ok(i) && subjects[static_cast<std::size_t>(i)].group == cfg.control_group) reference = i;
  }
  if (!atlas_file && reference < 0) {
    throw InvalidInput("no usable subject in control group '" + cfg.control_group + "' to build the atlas from");
  }
  const SubjectSequence* ref_seq = reference >= 0 ? &subjects[static_cast<std::size_t>(reference)] : nullptr;
  const LandmarkSet ref_shape =
      atlas_file ? atlas_file->vertices : ref_seq->frames[static_cast<std::size_t>(ref_seq->ed_index)];
  const std::vector<Triangle> triangles = atlas_file ? atlas_file->triangles : ref_seq->triangles;

  // Rigid alignment of every frame with the transform of its ED frame.
  parallel_for(n, workers, [&](int i) {
    if (!ok(i)) return;
    SubjectSequence& s = subjects[static_cast<std::size_t>(i)];
    try {
      if (s.triangles != triangles) throw InvalidInput("topology differs from the reference mesh");
      check_closed(s.triangles);
      const RigidAlignment ra = rigid_align(s.frames[static_cast<std::size_t>(s.ed_index)], ref_shape);
      for (auto& f : s.frames) f = apply_rigid(f, ra.rotation, ra.translation);
    } catch (const std::exception& e) {
      fail(i, "align", e.what());
    }
  });

  // Metrics of the original sequences.
  {
    CsvTable t;
    t.header = {"subject_id", "frame", "volume", "ef", "as_mean", "as_std", "excluded_cells"};
    for (int i = 0; i < n; ++i) {
      if (!ok(i)) continue;
      const SubjectSequence& s = subjects[static_cast<std::size_t>(i)];
      const double v_ed = signed_volume(s.frames[static_cast<std::size_t>(s.ed_index)], s.triangles);
      for (int f = 0; f < static_cast<int>(s.frames.size()); ++f) {
        const double v = signed_volume(s.frames[static_cast<std::size_t>(f)], s.triangles);
        const AreaStrain as = area_strain(s, f);
        t.rows.push_back({s.subject_id, std::to_string(f), d(v), d(ejection_fraction(v_ed, v)), d(as.mean()),
                          d(as.stddev()), std::to_string(as.excluded)});
      }
    }
    write_csv(out.path("metrics.csv"), t);
  }

  // Atlas.
  TriangleMesh atlas{ref_shape, triangles};
  if (!atlas_file) {
    std::vector<LandmarkSet> shapes;
    for (int i = 0; i < n; ++i) {
      const SubjectSequence& s = subjects[static_cast<std::size_t>(i)];
      if (ok(i) && s.group == cfg.control_group) shapes.push_back(s.frames[static_cast<std::size_t>(s.ed_index)]);
    }
    if (shapes.empty()) throw InvalidInput("no usable control subject left for atlas estimation");
    LandmarkSet mean = LandmarkSet::Zero(shapes.front().rows(), 3);
    for (const auto& s : shapes) mean += s;
    mean /= static_cast<double>(shapes.size());
    AtlasConfig acfg = cfg.atlas;
    acfg.registration = cfg.registration;
    log_line(opt.verbose, "atlas: " + std::to_string(shapes.size()) + " control shapes");
    const AtlasResult ar = estimate_atlas(shapes, kernel, cfg.alpha, initial_control_grid(mean, cfg.n_control_points),
                                          cfg.integrator, acfg);
    atlas.vertices = ar.atlas;
    summary["atlas"] = {{"source", "estimated"}, {"shapes", shapes.size()}, {"objective_trace", ar.objective_trace}};
  } else {
    summary["atlas"] = {{"source", cfg.atlas_file}};
  }
  const double v_atlas = signed_volume(atlas);
  summary["atlas"]["volume"] = v_atlas;
  write_mesh(atlas, out.path("atlas.off"));
  const PointSet grid = initial_control_grid(atlas.vertices, cfg.n_control_points);
  write_points_csv(out.path("transport_control_points.csv"), grid);

  // Scaled transport.
  const TransportConfig tcfg = cfg.transport();
  std::vector<ScaledTransportResult> tr(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](int i) {
    if (!ok(i)) return;
    try {
      ScaledTransportResult r = scaled_transport(subjects[static_cast<std::size_t>(i)], atlas, grid, kernel, tcfg);
      log_line(opt.verbose, "transport: " + r.subject_id + " lambda " + d(r.lambda) + " EF residual " +
                                d(r.ef_residual));
      if (!r.success) {
        fail(i, "transport", "EF residual " + d(r.ef_residual) + " above tolerance " + d(tcfg.ef_tolerance));
      }
      tr[static_cast<std::size_t>(i)] = std::move(r);
    } catch (const std::exception& e) {
      fail(i, "transport", e.what());
    }
  });
  {
    CsvTable t;
    t.header = {"subject_id", "lambda", "ef_original", "ef_reconstructed", "norm_in", "norm_out", "isometry_defect"};
    CsvTable det;
    det.header = {"subject_id", "group", "ed_volume", "ef_unscaled", "ef_residual", "success"};
    for (int i = 0; i < n; ++i) {
      const ScaledTransportResult& r = tr[static_cast<std::size_t>(i)];
      if (r.subject_id.empty()) continue;
      const SubjectSequence& s = subjects[static_cast<std::size_t>(i)];
      t.rows.push_back({r.subject_id, d(r.lambda), d(r.ef_original), d(r.ef_reconstructed), d(r.norm_in),
                        d(r.norm_out), d(r.isometry_defect)});
      det.rows.push_back({r.subject_id, s.group, d(r.ed_volume), d(r.ef_unscaled), d(r.ef_residual),
                          r.success ? "1" : "0"});
      const std::string dir = subject_dir(r.subject_id);
      for (std::size_t f = 0; f < r.transported_momenta.size(); ++f) {
        write_momenta_csv(out.path(dir + frame_name("transported", static_cast<int>(f), ".csv")),
                          r.atlas_control_points, r.transported_momenta[f]);
      }
      const auto es = static_cast<std::size_t>(s.es_index);
      const auto ed = static_cast<std::size_t>(s.ed_index);
      const AreaStrain orig = area_strain(s.frames[ed], s.frames[es], s.triangles);
      const AreaStrain pt = area_strain(r.reconstructed_unscaled[ed], r.reconstructed_unscaled[es], s.triangles);
      const AreaStrain spt = area_strain(r.reconstructed[ed], r.reconstructed[es], s.triangles);
      CsvTable as;
      as.header = {"cell", "original", "pt", "spt"};
      for (std::size_t c = 0; c < orig.values.size(); ++c) {
        as.rows.push_back({std::to_string(c), d(orig.values[c]), d(pt.values[c]), d(spt.values[c])});
      }
      write_csv(out.path(dir + "area_strain_es.csv"), as);
    }
    write_csv(out.path("transport.csv"), t);
    write_csv(out.path("transport_details.csv"), det);
  }
  auto count_ok = [&] {
    int c = 0;
    for (int i = 0; i < n; ++i) c += ok(i) ? 1 : 0;
    return c;
  };
  summary["transport"] = {{"succeeded", count_ok()}};

  auto collect = [&] {
    for (const auto& f : failed) {
      if (f) report.failures.push_back(*f);
    }
  };
  if (opt.last_stage == LastStage::Transport) {
    collect();
    finish(cfg, out, report, summary);
    return report;
  }

  // Shared control points, optimised on the reconstructed ES frames.
  PointSet shared = grid;
  {
    std::vector<LandmarkSet> targets;
    for (int i = 0; i < n; ++i) {
      if (!ok(i)) continue;
      targets.push_back(tr[static_cast<std::size_t>(i)].reconstructed[static_cast<std::size_t>(
          subjects[static_cast<std::size_t>(i)].es_index)]);
    }
    if (cfg.optimize_control_points && !targets.empty()) {
      log_line(opt.verbose, "control points: optimising on " + std::to_string(targets.size()) + " shapes");
      const ControlPointResult cr = optimize_control_points(atlas.vertices, targets, grid, kernel, cfg.alpha,
                                                            cfg.integrator, cfg.control_point_optim);
      shared = cr.control_points;
      summary["control_points"] = {{"optimized", true},
                                   {"initial_cost", cr.initial_cost},
                                   {"final_cost", cr.final_cost}};
    } else {
      summary["control_points"] = {{"optimized", false}};
    }
  }
  write_points_csv(out.path("control_points.csv"), shared);
  const std::string cp_hash = file_hash(out.root() / "control_points.csv");

  // Spline fits on the reconstructed sequences at the atlas.
  const SplineConfig scfg = cfg.spline();
  std::vector<std::optional<SplineFit>> fits(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](int i) {
    if (!ok(i)) return;
    const SubjectSequence& s = subjects[static_cast<std::size_t>(i)];
    try {
      if (s.es_index < s.ed_index) throw InvalidInput("ES frame precedes the ED frame");
      const auto& rec = tr[static_cast<std::size_t>(i)].reconstructed;
      std::vector<LandmarkSet> frames(rec.begin() + s.ed_index, rec.begin() + s.es_index + 1);
      const ObservationSequence obs = ObservationSequence::from_frames(std::move(frames), cfg.integrator.n_steps);
      fits[static_cast<std::size_t>(i)] = fit_spline(obs, shared, kernel, scfg);
      log_line(opt.verbose, "spline: " + s.subject_id + " cost " + d(fits[static_cast<std::size_t>(i)]->cost));
    } catch (const std::exception& e) {
      fail(i, "spline", e.what());
    }
  });
  {
    CsvTable t;
    t.header = {"subject_id", "group", "cost", "data_term", "force_energy", "reg_energy", "iterations", "converged",
                "stop"};
    for (int i = 0; i < n; ++i) {
      const auto& fit = fits[static_cast<std::size_t>(i)];
      if (!fit || !ok(i)) continue;
      const SubjectSequence& s = subjects[static_cast<std::size_t>(i)];
      t.rows.push_back({s.subject_id, s.group, d(fit->cost), d(fit->data_term), d(fit->force_energy),
                        d(fit->reg_energy), std::to_string(fit->iterations), fit->converged ? "1" : "0",
                        to_string(fit->stop)});
      const std::string dir = subject_dir(s.subject_id);
      write_momenta_csv(out.path(dir + "spline_momenta.csv"), shared, fit->initial_momenta);
      write_forces_csv(out.path(dir + "spline_forces.csv"), fit->forces);
      out.write_json(dir + "spline_meta.json", {{"alpha", fit->alpha},
                                                {"n_steps", cfg.integrator.n_steps},
                                                {"integrator", hex64(cfg.integrator.fingerprint())},
                                                {"sigma", cfg.sigma},
                                                {"control_points_hash", cp_hash}});
    }
    write_csv(out.path("spline.csv"), t);
  }
  summary["spline"] = {{"succeeded", count_ok()}};

  if (opt.last_stage == LastStage::Stats) {
    std::vector<Descriptor> desc;
    for (int i = 0; i < n; ++i) {
      const auto& fit = fits[static_cast<std::size_t>(i)];
      if (!fit || !ok(i)) continue;
      const SubjectSequence& s = subjects[static_cast<std::size_t>(i)];
      Descriptor dsc{s.subject_id, s.group, fit->initial_momenta, {}};
      for (int k = 0; k < fit->forces.n_steps(); ++k) dsc.forces.push_back(fit->forces.at(k));
      desc.push_back(std::move(dsc));
    }
    summary["stats"] = write_stats(cfg, desc, shared, out).summary;
  }
  collect();
  finish(cfg, out, report, summary);
  return report;
}

RunReport run_stats_stage(const PipelineConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  if (!fs::exists(out_dir / "spline.csv")) throw InvalidInput("missing upstream output spline.csv in " + out_dir.string());
  const CsvTable t = read_csv(out_dir / "spline.csv");
  const PointSet cps = read_points_csv(out_dir / "control_points.csv");
  const std::string cp_hash = file_hash(out_dir / "control_points.csv");
  const std::string grid_hash = hex64(cfg.integrator.fingerprint());
  const int c_id = t.column("subject_id");
  const int c_group = t.column("group");

  OutputDir out(out_dir);
  RunReport report;
  report.n_subjects = static_cast<int>(t.rows.size());
  std::vector<Descriptor> desc;
  for (const auto& r : t.rows) {
    const std::string id = r[static_cast<std::size_t>(c_id)];
    try {
      const fs::path dir = out_dir / subject_dir(id);
      std::ifstream meta_in(dir / "spline_meta.json");
      if (!meta_in) throw InvalidInput("missing upstream output " + (dir / "spline_meta.json").string());
      const json meta = json::parse(meta_in);
      if (meta.at("control_points_hash").get<std::string>() != cp_hash) {
        throw InvalidInput("fitted with different control points");
      }
      if (meta.at("integrator").get<std::string>() != grid_hash) throw InvalidInput("fitted on a different time grid");
      PointSet c;
      MomentumSet mu;
      read_momenta_csv(dir / "spline_momenta.csv", &c, &mu);
      const ForceField f = read_forces_csv(dir / "spline_forces.csv", cfg.integrator.n_steps, cps.rows());
      Descriptor dsc{id, r[static_cast<std::size_t>(c_group)], mu, {}};
      for (int k = 0; k < f.n_steps(); ++k) dsc.forces.push_back(f.at(k));
      desc.push_back(std::move(dsc));
    } catch (const std::exception& e) {
      report.failures.push_back({id, "stats", e.what()});
    }
  }
  json summary;
  summary["stats"] = write_stats(cfg, desc, cps, out).summary;
  finish(cfg, out, report, summary, "stats_summary.json");
  return report;
}

// ---------------------------------------------------------------------------

TransportValidation compute_transport_validation(const fs::path& out_dir) {
  for (const char* f : {"transport.csv", "transport_details.csv", "atlas.off"}) {
    if (!fs::exists(out_dir / f)) throw InvalidInput(std::string("missing upstream output ") + f + "; run the pipeline first");
  }
  const CsvTable t = read_csv(out_dir / "transport.csv");
  const CsvTable det = read_csv(out_dir / "transport_details.csv");
  if (t.rows.size() != det.rows.size()) throw InvalidInput("transport.csv and transport_details.csv disagree");
  TransportValidation v;
  v.atlas_volume = signed_volume(read_mesh(out_dir / "atlas.off"));

  auto num = [](const std::string& s) { return std::stod(s); };
  std::vector<double> ef_orig, ef_pt, ef_spt, lambda, v_ed, norm_in, as_mean;
  Eigen::MatrixXd as_ref, as_pt, as_spt;
  const std::size_t n = t.rows.size();
  if (n == 0) throw InvalidInput("no transported subjects in transport.csv");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = t.rows[i];
    const auto& dr = det.rows[i];
    const std::string id = r[static_cast<std::size_t>(t.column("subject_id"))];
    lambda.push_back(num(r[static_cast<std::size_t>(t.column("lambda"))]));
    ef_orig.push_back(num(r[static_cast<std::size_t>(t.column("ef_original"))]));
    ef_spt.push_back(num(r[static_cast<std::size_t>(t.column("ef_reconstructed"))]));
    norm_in.push_back(num(r[static_cast<std::size_t>(t.column("norm_in"))]));
    ef_pt.push_back(num(dr[static_cast<std::size_t>(det.column("ef_unscaled"))]));
    v_ed.push_back(num(dr[static_cast<std::size_t>(det.column("ed_volume"))]));

    const fs::path asp = out_dir / subject_dir(id) / "area_strain_es.csv";
    if (!fs::exists(asp)) throw InvalidInput("missing upstream output " + asp.string());
    const CsvTable as = read_csv(asp);
    const auto cells = static_cast<Eigen::Index>(as.rows.size());
    if (i == 0) {
      as_ref.resize(static_cast<Eigen::Index>(n), cells);
      as_pt.resize(static_cast<Eigen::Index>(n), cells);
      as_spt.resize(static_cast<Eigen::Index>(n), cells);
    } else if (cells != as_ref.cols()) {
      throw InvalidInput("subjects disagree in cell count");
    }
    double sum = 0.0;
    int cnt = 0;
    for (Eigen::Index c = 0; c < cells; ++c) {
      const auto& row = as.rows[static_cast<std::size_t>(c)];
      const auto ii = static_cast<Eigen::Index>(i);
      as_ref(ii, c) = num(row[1]);
      as_pt(ii, c) = num(row[2]);
      as_spt(ii, c) = num(row[3]);
      if (std::isfinite(as_ref(ii, c))) {
        sum += as_ref(ii, c);
        ++cnt;
      }
    }
    as_mean.push_back(cnt > 0 ? sum / cnt : 0.0);
  }
  v.n_subjects = static_cast<int>(n);
  auto rmse = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
  };
  v.ef_rmse_pt = rmse(ef_orig, ef_pt);
  v.ef_rmse_spt = rmse(ef_orig, ef_spt);
  v.as_rmse_pt = rmse_per_cell(as_ref, as_pt).mean;
  v.as_rmse_spt = rmse_per_cell(as_ref, as_spt).mean;
  if (n >= 2) {
    v.ef_original = cohort_summary(ef_orig);
    v.as_original = cohort_summary(as_mean);
  }
  if (n >= 3) {
    v.lambda_volume = lambda_volume_regression(lambda, v_ed, v.atlas_volume);
    v.norm_volume_pearson = pearson(norm_in, v_ed);
  }
  return v;
}

RunReport run_validate_transport(const PipelineConfig& cfg, const fs::path& out_dir) {
  const TransportValidation v = compute_transport_validation(out_dir);
  OutputDir out(out_dir);
  CsvTable table;
  table.header = {"quantity", "original_mean", "original_std", "rmse_pt", "rmse_spt"};
  table.rows.push_back({"ef", d(v.ef_original.mean), d(v.ef_original.std), d(v.ef_rmse_pt), d(v.ef_rmse_spt)});
  table.rows.push_back({"as", d(v.as_original.mean), d(v.as_original.std), d(v.as_rmse_pt), d(v.as_rmse_spt)});
  write_csv(out.path("validate_transport.csv"), table);

  const CsvTable t = read_csv(out_dir / "transport.csv");
  const CsvTable det = read_csv(out_dir / "transport_details.csv");
  CsvTable lv;
  lv.header = {"subject_id", "ed_volume", "lambda", "log_vref_over_ved", "log_lambda"};
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double vol = std::stod(det.rows[i][static_cast<std::size_t>(det.column("ed_volume"))]);
    const double lam = std::stod(t.rows[i][static_cast<std::size_t>(t.column("lambda"))]);
    lv.rows.push_back({t.rows[i][0], d(vol), d(lam), d(std::log(v.atlas_volume / vol)), d(std::log(lam))});
  }
  write_csv(out.path("lambda_volume.csv"), lv);
  out.write_json("validate_transport.json",
                 {{"subjects", v.n_subjects},
                  {"ef_rmse_pt", v.ef_rmse_pt},
                  {"ef_rmse_spt", v.ef_rmse_spt},
                  {"as_rmse_pt", v.as_rmse_pt},
                  {"as_rmse_spt", v.as_rmse_spt},
                  {"atlas_volume", v.atlas_volume},
                  {"lambda_regression",
                   {{"slope", v.lambda_volume.slope},
                    {"intercept", v.lambda_volume.intercept},
                    {"r2", v.lambda_volume.r2},
                    {"pearson", v.lambda_volume.pearson},
                    {"n", v.lambda_volume.n}}},
                  {"norm_volume_pearson", v.norm_volume_pearson},
                  {"config_hash", cfg.hash()}});
  RunReport report;
  report.n_subjects = v.n_subjects;
  report.outputs = out.files();
  return report;
}

RunReport run_register(const PipelineConfig& cfg, const fs::path& template_mesh, const fs::path& target_mesh,
                       const fs::path& out_dir) {
  cfg.validate();
  const TriangleMesh tpl = read_mesh(template_mesh);
  const TriangleMesh tgt = read_mesh(target_mesh);
  if (tpl.vertices.rows() != tgt.vertices.rows()) throw InvalidInput("template and target differ in point count");
  const PointSet cps = initial_control_grid(tpl.vertices, cfg.n_control_points);
  const RegistrationProblem p{tpl.vertices, tgt.vertices, cfg.kernel(), cfg.alpha, cps, cfg.integrator};
  const RegistrationResult r = register_landmarks(p, cfg.registration);

  OutputDir out(out_dir);
  write_momenta_csv(out.path("momenta.csv"), cps, r.momenta);
  const LandmarkSet deformed = riemannian_exp(tpl.vertices, r.momenta, cps, cfg.kernel(), cfg.integrator);
  write_mesh(TriangleMesh{deformed, tpl.triangles}, out.path("registered" + template_mesh.extension().string()));
  RunReport report;
  report.n_subjects = 1;
  json summary = {{"registration",
                   {{"data_term", r.data_term},
                    {"reg_term", r.reg_term},
                    {"total_cost", r.total_cost},
                    {"iterations", r.iterations},
                    {"converged", r.converged},
                    {"stop", to_string(r.stop)}}}};
  finish(cfg, out, report, summary);
  return report;
}

}  // namespace shapetraj
