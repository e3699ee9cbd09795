#ifndef SHAPETRAJ_MESH_H
#define SHAPETRAJ_MESH_H

#include "shapetraj/types.h"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace shapetraj {

using Triangle = std::array<int, 3>;

struct TriangleMesh {
  LandmarkSet vertices;
  std::vector<Triangle> triangles;  // 0-based, oriented

  /// Throws InvalidInput when an index is out of range.
  void validate_indices() const;
};

/// Throws InvalidInput naming the offending edges unless every undirected
/// edge is shared by exactly two triangles with opposite directions.
void check_closed(const std::vector<Triangle>& triangles);
bool is_closed(const std::vector<Triangle>& triangles);

/// (1/6) sum det(v0, v1, v2); positive for outward orientation.
double signed_volume(const TriangleMesh& mesh);
double signed_volume(const LandmarkSet& vertices, const std::vector<Triangle>& triangles);

std::vector<double> triangle_areas(const LandmarkSet& vertices, const std::vector<Triangle>& triangles);

/// Per-frame systolic sequence sharing one triangle table.
struct SubjectSequence {
  std::string subject_id;
  std::string group;
  std::vector<Triangle> triangles;
  std::vector<LandmarkSet> frames;
  int ed_index = 0;
  int es_index = 1;

  TriangleMesh frame_mesh(int i) const { return TriangleMesh{frames.at(static_cast<std::size_t>(i)), triangles}; }
  void validate() const;
};

/// (V_ED - V_ES) / V_ED; positive for contraction.
double ejection_fraction(const SubjectSequence& seq);
double ejection_fraction(double v_ed, double v_es);

struct AreaStrain {
  std::vector<double> values;  // NaN marks cells with a degenerate ED triangle
  int excluded = 0;

  double mean() const;
  double stddev() const;  // sample standard deviation over defined cells
};

AreaStrain area_strain(const SubjectSequence& seq, int frame);
AreaStrain area_strain(const LandmarkSet& ed, const LandmarkSet& frame, const std::vector<Triangle>& triangles);

struct RigidAlignment {
  Eigen::Matrix3d rotation;
  Vec3 translation;
  LandmarkSet aligned;
  double residual = 0.0;  // sum of squared distances after alignment
};

/// Least-squares rotation + translation (no scaling, no reflection) taking
/// `moving` onto `fixed`.
RigidAlignment rigid_align(const LandmarkSet& moving, const LandmarkSet& fixed);
LandmarkSet apply_rigid(const LandmarkSet& points, const Eigen::Matrix3d& rotation, const Vec3& translation);

struct CellRmse {
  std::vector<double> per_cell;
  double mean = 0.0;
};

/// Rows are subjects, columns are cells. NaN entries are skipped.
CellRmse rmse_per_cell(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& reconstructed);

// Mesh I/O: OFF and legacy-VTK ASCII polydata, chosen by extension.
TriangleMesh read_off(std::istream& in);
TriangleMesh read_vtk(std::istream& in, std::vector<std::string>* warnings = nullptr);
void write_off(const TriangleMesh& mesh, std::ostream& out);
void write_vtk(const TriangleMesh& mesh, std::ostream& out);

TriangleMesh read_mesh(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace shapetraj

#endif
