#ifndef SHAPETRAJ_IO_H
#define SHAPETRAJ_IO_H

#include "shapetraj/mesh.h"
#include "shapetraj/shooting.h"

#include <filesystem>
#include <string>
#include <vector>

namespace shapetraj {

/// Shortest text that reads back to the same double.
std::string format_double(double v);

/// One row per control point: cx,cy,cz,mx,my,mz with a header line.
void write_momenta_csv(const std::filesystem::path& path, const PointSet& control_points, const MomentumSet& momenta);
void read_momenta_csv(const std::filesystem::path& path, PointSet* control_points, MomentumSet* momenta);

/// Columns step,k,ux,uy,uz.
void write_forces_csv(const std::filesystem::path& path, const ForceField& forces);
ForceField read_forces_csv(const std::filesystem::path& path, int n_steps, Eigen::Index n_control_points);

/// Columns cx,cy,cz.
void write_points_csv(const std::filesystem::path& path, const PointSet& points);
PointSet read_points_csv(const std::filesystem::path& path);

/// Minimal CSV table: header plus rows of equal width, no quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // throws InvalidInput when absent
};
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

struct ManifestRow {
  std::string subject_id;
  std::string group;
  int ed_index = 0;
  int es_index = 1;
  std::vector<std::string> frames;  // relative to the manifest directory unless absolute
};

/// CSV with columns subject_id,group,ed_index,es_index,frames where frames
/// are separated by ';'.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

/// Loads the frames of one manifest row; throws InvalidInput when frames
/// disagree in topology.
SubjectSequence load_subject(const ManifestRow& row, const std::filesystem::path& base_dir);

}  // namespace shapetraj

#endif
