#include "shapetraj/io.h"

#include <charconv>
#include <fstream>
#include <sstream>

namespace shapetraj {

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::filesystem::path& path, int line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ParseError(path.string() + ": expected a number, got '" + s + "'", line);
  }
  return v;
}

int to_int(const std::string& s, const std::filesystem::path& path, int line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ParseError(path.string() + ": expected an integer, got '" + s + "'", line);
  }
  return v;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  CsvTable t;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ParseError(path.string() + ": expected " + std::to_string(t.header.size()) + " columns", n);
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw ParseError(path.string() + ": missing header", n);
  return t;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out = open_out(path);
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << "\n";
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  throw InvalidInput("missing CSV column '" + name + "'");
}

void write_momenta_csv(const std::filesystem::path& path, const PointSet& cps, const MomentumSet& mu) {
  if (cps.rows() != mu.rows()) throw InvalidArgument("write_momenta_csv: row counts differ");
  std::ofstream out = open_out(path);
  out << "cx,cy,cz,mx,my,mz\n";
  for (Eigen::Index i = 0; i < cps.rows(); ++i) {
    out << format_double(cps(i, 0)) << ',' << format_double(cps(i, 1)) << ',' << format_double(cps(i, 2)) << ','
        << format_double(mu(i, 0)) << ',' << format_double(mu(i, 1)) << ',' << format_double(mu(i, 2)) << "\n";
  }
}

void read_momenta_csv(const std::filesystem::path& path, PointSet* cps, MomentumSet* mu) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"cx", "cy", "cz", "mx", "my", "mz"}) {
    throw ParseError(path.string() + ": expected header cx,cy,cz,mx,my,mz", 1);
  }
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  cps->resize(n, 3);
  mu->resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<std::size_t>(i)];
    const int line = static_cast<int>(i) + 2;
    for (int a = 0; a < 3; ++a) {
      (*cps)(i, a) = to_double(r[static_cast<std::size_t>(a)], path, line);
      (*mu)(i, a) = to_double(r[static_cast<std::size_t>(a + 3)], path, line);
    }
  }
}

void write_forces_csv(const std::filesystem::path& path, const ForceField& forces) {
  std::ofstream out = open_out(path);
  out << "step,k,ux,uy,uz\n";
  for (int s = 0; s < forces.n_steps(); ++s) {
    const PointSet& u = forces.at(s);
    for (Eigen::Index k = 0; k < u.rows(); ++k) {
      out << s << ',' << k << ',' << format_double(u(k, 0)) << ',' << format_double(u(k, 1)) << ','
          << format_double(u(k, 2)) << "\n";
    }
  }
}

ForceField read_forces_csv(const std::filesystem::path& path, int n_steps, Eigen::Index nc) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"step", "k", "ux", "uy", "uz"}) {
    throw ParseError(path.string() + ": expected header step,k,ux,uy,uz", 1);
  }
  if (static_cast<Eigen::Index>(t.rows.size()) != n_steps * nc) {
    throw InvalidInput(path.string() + ": force table does not match the grid and control points");
  }
  ForceField f = ForceField::zeros(n_steps, nc);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const int line = static_cast<int>(i) + 2;
    const int s = to_int(r[0], path, line);
    const int k = to_int(r[1], path, line);
    if (s < 0 || s >= n_steps || k < 0 || k >= nc) throw ParseError(path.string() + ": index out of range", line);
    for (int a = 0; a < 3; ++a) f.at(s)(k, a) = to_double(r[static_cast<std::size_t>(a + 2)], path, line);
  }
  return f;
}

void write_points_csv(const std::filesystem::path& path, const PointSet& p) {
  std::ofstream out = open_out(path);
  out << "cx,cy,cz\n";
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    out << format_double(p(i, 0)) << ',' << format_double(p(i, 1)) << ',' << format_double(p(i, 2)) << "\n";
  }
}

PointSet read_points_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"cx", "cy", "cz"}) {
    throw ParseError(path.string() + ": expected header cx,cy,cz", 1);
  }
  PointSet p(static_cast<Eigen::Index>(t.rows.size()), 3);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      p(static_cast<Eigen::Index>(i), a) = to_double(t.rows[i][static_cast<std::size_t>(a)], path, static_cast<int>(i) + 2);
    }
  }
  return p;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const int c_id = t.column("subject_id");
  const int c_group = t.column("group");
  const int c_ed = t.column("ed_index");
  const int c_es = t.column("es_index");
  const int c_frames = t.column("frames");
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const int line = static_cast<int>(i) + 2;
    ManifestRow m;
    m.subject_id = r[static_cast<std::size_t>(c_id)];
    m.group = r[static_cast<std::size_t>(c_group)];
    m.ed_index = to_int(r[static_cast<std::size_t>(c_ed)], path, line);
    m.es_index = to_int(r[static_cast<std::size_t>(c_es)], path, line);
    m.frames = split(r[static_cast<std::size_t>(c_frames)], ';');
    if (m.subject_id.empty()) throw ParseError(path.string() + ": empty subject_id", line);
    for (const auto& prev : rows) {
      if (prev.subject_id == m.subject_id) throw ParseError(path.string() + ": duplicate subject " + m.subject_id, line);
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  CsvTable t;
  t.header = {"subject_id", "group", "ed_index", "es_index", "frames"};
  for (const auto& r : rows) {
    std::string frames;
    for (std::size_t i = 0; i < r.frames.size(); ++i) frames += (i ? ";" : "") + r.frames[i];
    t.rows.push_back({r.subject_id, r.group, std::to_string(r.ed_index), std::to_string(r.es_index), frames});
  }
  write_csv(path, t);
}

SubjectSequence load_subject(const ManifestRow& row, const std::filesystem::path& base_dir) {
  SubjectSequence seq;
  seq.subject_id = row.subject_id;
  seq.group = row.group;
  seq.ed_index = row.ed_index;
  seq.es_index = row.es_index;
  for (const auto& f : row.frames) {
    const std::filesystem::path p = std::filesystem::path(f).is_absolute() ? std::filesystem::path(f) : base_dir / f;
    TriangleMesh m = read_mesh(p);
    if (seq.frames.empty()) {
      seq.triangles = m.triangles;
    } else if (m.triangles != seq.triangles) {
      throw InvalidInput("subject " + row.subject_id + ": frame " + p.string() + " has a different topology");
    }
    seq.frames.push_back(std::move(m.vertices));
  }
  seq.validate();
  return seq;
}

}  // namespace shapetraj
