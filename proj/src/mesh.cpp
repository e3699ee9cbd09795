#include "shapetraj/mesh.h"

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <utility>

namespace shapetraj {

void TriangleMesh::validate_indices() const {
  const auto n = static_cast<int>(vertices.rows());
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (int v : triangles[t]) {
      if (v < 0 || v >= n) {
        throw InvalidInput("triangle " + std::to_string(t) + " references vertex " + std::to_string(v) +
                           " but the mesh has " + std::to_string(n) + " vertices");
      }
    }
  }
}

namespace {

std::string edge_problems(const std::vector<Triangle>& tris, std::size_t max_report) {
  // directed edge -> count
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : tris) {
    for (int e = 0; e < 3; ++e) ++directed[{t[e], t[(e + 1) % 3]}];
  }
  std::ostringstream bad;
  std::size_t reported = 0;
  for (const auto& [edge, count] : directed) {
    const auto rev = directed.find({edge.second, edge.first});
    const int back = rev == directed.end() ? 0 : rev->second;
    if (count != 1 || back != 1) {
      if (reported < max_report) {
        bad << (reported ? ", " : "") << "(" << edge.first << "," << edge.second << ")";
      }
      ++reported;
    }
  }
  if (reported > max_report) bad << " and " << (reported - max_report) << " more";
  return bad.str();
}

}  // namespace

void check_closed(const std::vector<Triangle>& tris) {
  if (tris.empty()) throw InvalidInput("mesh has no triangles");
  const std::string bad = edge_problems(tris, 8);
  if (!bad.empty()) throw InvalidInput("mesh is not closed and consistently oriented; offending edges: " + bad);
}

bool is_closed(const std::vector<Triangle>& tris) {
  return !tris.empty() && edge_problems(tris, 0).empty();
}

double signed_volume(const LandmarkSet& v, const std::vector<Triangle>& tris) {
  check_closed(tris);
  double six_vol = 0.0;
  for (const auto& t : tris) {
    const Vec3 a = v.row(t[0]).transpose();
    const Vec3 b = v.row(t[1]).transpose();
    const Vec3 c = v.row(t[2]).transpose();
    six_vol += a.dot(b.cross(c));
  }
  return six_vol / 6.0;
}

double signed_volume(const TriangleMesh& mesh) {
  mesh.validate_indices();
  return signed_volume(mesh.vertices, mesh.triangles);
}

std::vector<double> triangle_areas(const LandmarkSet& v, const std::vector<Triangle>& tris) {
  std::vector<double> a;
  a.reserve(tris.size());
  for (const auto& t : tris) {
    const Vec3 p = v.row(t[0]).transpose();
    const Vec3 e1 = v.row(t[1]).transpose() - p;
    const Vec3 e2 = v.row(t[2]).transpose() - p;
    a.push_back(0.5 * e1.cross(e2).norm());
  }
  return a;
}

void SubjectSequence::validate() const {
  if (frames.size() < 2) throw InvalidInput("subject " + subject_id + ": need at least two frames");
  const auto nf = static_cast<int>(frames.size());
  if (ed_index < 0 || ed_index >= nf || es_index < 0 || es_index >= nf) {
    throw InvalidInput("subject " + subject_id + ": ED/ES index out of range");
  }
  if (ed_index == es_index) throw InvalidInput("subject " + subject_id + ": ED and ES frames coincide");
  for (const auto& f : frames) {
    if (f.rows() != frames.front().rows()) {
      throw InvalidInput("subject " + subject_id + ": frames do not share one topology");
    }
  }
  TriangleMesh{frames.front(), triangles}.validate_indices();
}

double ejection_fraction(double v_ed, double v_es) {
  if (!(v_ed > 0.0)) throw InvalidInput("ejection fraction needs a positive ED volume");
  return (v_ed - v_es) / v_ed;
}

double ejection_fraction(const SubjectSequence& seq) {
  seq.validate();
  return ejection_fraction(signed_volume(seq.frames[static_cast<std::size_t>(seq.ed_index)], seq.triangles),
                           signed_volume(seq.frames[static_cast<std::size_t>(seq.es_index)], seq.triangles));
}

double AreaStrain::mean() const {
  double s = 0.0;
  int n = 0;
  for (double v : values) {
    if (!std::isnan(v)) {
      s += v;
      ++n;
    }
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

double AreaStrain::stddev() const {
  const double m = mean();
  double s = 0.0;
  int n = 0;
  for (double v : values) {
    if (!std::isnan(v)) {
      s += (v - m) * (v - m);
      ++n;
    }
  }
  return n > 1 ? std::sqrt(s / (n - 1)) : 0.0;
}

AreaStrain area_strain(const LandmarkSet& ed, const LandmarkSet& frame, const std::vector<Triangle>& tris) {
  if (ed.rows() != frame.rows()) throw InvalidArgument("area_strain: frames do not share one topology");
  const auto a0 = triangle_areas(ed, tris);
  const auto a1 = triangle_areas(frame, tris);
  AreaStrain as;
  as.values.resize(tris.size());
  for (std::size_t c = 0; c < tris.size(); ++c) {
    if (!(a0[c] > 0.0)) {
      as.values[c] = std::numeric_limits<double>::quiet_NaN();
      ++as.excluded;
    } else {
      as.values[c] = (a1[c] - a0[c]) / a0[c];
    }
  }
  return as;
}

AreaStrain area_strain(const SubjectSequence& seq, int frame) {
  seq.validate();
  return area_strain(seq.frames[static_cast<std::size_t>(seq.ed_index)], seq.frames.at(static_cast<std::size_t>(frame)),
                     seq.triangles);
}

LandmarkSet apply_rigid(const LandmarkSet& p, const Eigen::Matrix3d& r, const Vec3& t) {
  LandmarkSet out = p * r.transpose();
  out.rowwise() += t.transpose();
  return out;
}

RigidAlignment rigid_align(const LandmarkSet& moving, const LandmarkSet& fixed) {
  if (moving.rows() != fixed.rows()) throw InvalidArgument("rigid_align: point counts differ");
  if (moving.rows() < 3) throw InvalidArgument("rigid_align: need at least three points");
  const Eigen::RowVector3d cm = moving.colwise().mean();
  const Eigen::RowVector3d cf = fixed.colwise().mean();
  const Eigen::Matrix3d h = (moving.rowwise() - cm).transpose() * (fixed.rowwise() - cf);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv[1] > 1e-12 * std::max(sv[0], std::numeric_limits<double>::min()))) {
    throw InvalidInput("rigid_align: degenerate configuration (cross-covariance rank < 2)");
  }
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  RigidAlignment r;
  r.rotation = v * d * u.transpose();
  r.translation = cf.transpose() - r.rotation * cm.transpose();
  r.aligned = apply_rigid(moving, r.rotation, r.translation);
  r.residual = (r.aligned - fixed).squaredNorm();
  return r;
}

CellRmse rmse_per_cell(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& rec) {
  if (ref.rows() != rec.rows() || ref.cols() != rec.cols()) {
    throw InvalidArgument("rmse_per_cell: shape mismatch");
  }
  CellRmse out;
  out.per_cell.resize(static_cast<std::size_t>(ref.cols()), std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  int defined = 0;
  for (Eigen::Index c = 0; c < ref.cols(); ++c) {
    double s = 0.0;
    int n = 0;
    for (Eigen::Index r = 0; r < ref.rows(); ++r) {
      const double d = rec(r, c) - ref(r, c);
      if (!std::isnan(d)) {
        s += d * d;
        ++n;
      }
    }
    if (n > 0) {
      out.per_cell[static_cast<std::size_t>(c)] = std::sqrt(s / n);
      total += out.per_cell[static_cast<std::size_t>(c)];
      ++defined;
    }
  }
  out.mean = defined ? total / defined : std::numeric_limits<double>::quiet_NaN();
  return out;
}

// ---------------------------------------------------------------------------
// I/O

namespace {

// Whitespace tokenizer that remembers line numbers and skips '#' comments.
class Tokens {
 public:
  Tokens(std::istream& in, bool skip_comments) {
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      if (skip_comments) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
      }
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) toks_.emplace_back(std::move(tok), ln);
    }
    last_line_ = ln;
  }

  bool done() const { return pos_ >= toks_.size(); }
  int line() const { return done() ? last_line_ : toks_[pos_].second; }
  const std::string& peek() const {
    if (done()) throw ParseError("unexpected end of file", last_line_);
    return toks_[pos_].first;
  }
  std::string next() {
    const std::string& t = peek();
    ++pos_;
    return t;
  }
  double next_double() {
    const int ln = line();
    const std::string t = next();
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ParseError("expected a number, got '" + t + "'", ln);
    }
  }
  long next_int() {
    const int ln = line();
    const std::string t = next();
    try {
      std::size_t used = 0;
      const long v = std::stol(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ParseError("expected an integer, got '" + t + "'", ln);
    }
  }

 private:
  std::vector<std::pair<std::string, int>> toks_;
  std::size_t pos_ = 0;
  int last_line_ = 0;
};

void write_vertices(const LandmarkSet& v, std::ostream& out) {
  for (Eigen::Index i = 0; i < v.rows(); ++i) out << v(i, 0) << ' ' << v(i, 1) << ' ' << v(i, 2) << '\n';
}

}  // namespace

TriangleMesh read_off(std::istream& in) {
  Tokens tk(in, true);
  if (tk.done() || tk.peek() != "OFF") throw ParseError("missing OFF header", tk.line());
  tk.next();
  const long nv = tk.next_int();
  const long nf = tk.next_int();
  tk.next_int();  // edge count, unused
  if (nv < 0 || nf < 0) throw ParseError("negative element count", tk.line());
  TriangleMesh m;
  m.vertices.resize(nv, 3);
  for (long i = 0; i < nv; ++i) {
    for (int a = 0; a < 3; ++a) m.vertices(i, a) = tk.next_double();
  }
  m.triangles.reserve(static_cast<std::size_t>(nf));
  for (long f = 0; f < nf; ++f) {
    const int ln = tk.line();
    if (tk.next_int() != 3) throw ParseError("only triangular faces are supported", ln);
    Triangle t{};
    for (int a = 0; a < 3; ++a) t[a] = static_cast<int>(tk.next_int());
    m.triangles.push_back(t);
  }
  m.validate_indices();
  return m;
}

TriangleMesh read_vtk(std::istream& in, std::vector<std::string>* warnings) {
  std::string header;
  if (!std::getline(in, header) || header.rfind("# vtk DataFile", 0) != 0) {
    throw ParseError("missing '# vtk DataFile' header", 1);
  }
  std::string title;
  std::getline(in, title);
  Tokens tk(in, false);
  auto line_of = [&tk]() { return tk.line() + 2; };

  const std::string fmt = tk.done() ? "" : tk.next();
  if (fmt != "ASCII") throw ParseError("only ASCII legacy VTK is supported", line_of());
  if (tk.done() || tk.next() != "DATASET" || tk.done() || tk.next() != "POLYDATA") {
    throw ParseError("expected 'DATASET POLYDATA'", line_of());
  }
  TriangleMesh m;
  bool have_points = false;
  bool have_polys = false;
  while (!tk.done()) {
    const int ln = line_of();
    const std::string key = tk.next();
    if (key == "POINTS") {
      const long n = tk.next_int();
      tk.next();  // data type
      m.vertices.resize(n, 3);
      for (long i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) m.vertices(i, a) = tk.next_double();
      }
      have_points = true;
    } else if (key == "POLYGONS") {
      const long n = tk.next_int();
      const long size = tk.next_int();
      if (size != 4 * n) throw ParseError("only triangular polygons are supported", ln);
      for (long f = 0; f < n; ++f) {
        const int fl = line_of();
        if (tk.next_int() != 3) throw ParseError("only triangular polygons are supported", fl);
        Triangle t{};
        for (int a = 0; a < 3; ++a) t[a] = static_cast<int>(tk.next_int());
        m.triangles.push_back(t);
      }
      have_polys = true;
    } else {
      if (warnings != nullptr) {
        warnings->push_back("ignoring unsupported section '" + key + "' at line " + std::to_string(ln) +
                            " and everything after it");
      }
      break;
    }
  }
  if (!have_points) throw ParseError("no POINTS section", line_of());
  if (!have_polys) throw ParseError("no POLYGONS section", line_of());
  m.validate_indices();
  return m;
}

void write_off(const TriangleMesh& mesh, std::ostream& out) {
  out.precision(17);
  out << "OFF\n" << mesh.vertices.rows() << ' ' << mesh.triangles.size() << " 0\n";
  write_vertices(mesh.vertices, out);
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

void write_vtk(const TriangleMesh& mesh, std::ostream& out) {
  out.precision(17);
  out << "# vtk DataFile Version 3.0\nshapetraj mesh\nASCII\nDATASET POLYDATA\n";
  out << "POINTS " << mesh.vertices.rows() << " double\n";
  write_vertices(mesh.vertices, out);
  out << "POLYGONS " << mesh.triangles.size() << ' ' << 4 * mesh.triangles.size() << '\n';
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

TriangleMesh read_mesh(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open mesh file " + path.string());
  const auto ext = path.extension().string();
  try {
    if (ext == ".off" || ext == ".OFF") return read_off(in);
    if (ext == ".vtk" || ext == ".VTK") return read_vtk(in, warnings);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
  throw InvalidInput("unsupported mesh format: " + path.string());
}

void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write mesh file " + path.string());
  const auto ext = path.extension().string();
  if (ext == ".off" || ext == ".OFF") {
    write_off(mesh, out);
  } else if (ext == ".vtk" || ext == ".VTK") {
    write_vtk(mesh, out);
  } else {
    throw InvalidInput("unsupported mesh format: " + path.string());
  }
}

}  // namespace shapetraj
