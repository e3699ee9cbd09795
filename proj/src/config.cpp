#include "shapetraj/config.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace shapetraj {

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return s.front() != '.' && s.back() != '.';
}

double parse_number(const std::string& raw, int line) {
  double v = 0.0;
  const char* first = raw.data();
  const char* last = raw.data() + raw.size();
  if (!raw.empty() && raw.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) throw ParseError("expected a number, got '" + raw + "'", line);
  return v;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string raw_line;
  std::string section;
  int line = 0;
  while (std::getline(in, raw_line)) {
    ++line;
    const std::string s = trim(strip_comment(raw_line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError("unterminated section header", line);
      section = trim(s.substr(1, s.size() - 2));
      if (!valid_name(section)) throw ParseError("invalid section name '" + section + "'", line);
      cfg.sections_.push_back(section);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (!valid_name(key) || key.find('.') != std::string::npos) throw ParseError("invalid key '" + key + "'", line);
    if (value.empty()) throw ParseError("missing value for '" + key + "'", line);
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(full) != 0) throw ParseError("duplicate key '" + full + "'", line);
    cfg.entries_[full] = Entry{value, line};
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

const ConfigFile::Entry* ConfigFile::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  return e == nullptr ? fallback : parse_number(e->raw, e->line);
}

int ConfigFile::get_int(const std::string& key, int fallback) const {
  const Entry* e = find(key);
  if (e == nullptr) return fallback;
  int v = 0;
  const auto [ptr, ec] = std::from_chars(e->raw.data(), e->raw.data() + e->raw.size(), v);
  if (ec != std::errc() || ptr != e->raw.data() + e->raw.size()) {
    throw ParseError("expected an integer for '" + key + "', got '" + e->raw + "'", e->line);
  }
  return v;
}

std::uint64_t ConfigFile::get_uint64(const std::string& key, std::uint64_t fallback) const {
  const Entry* e = find(key);
  if (e == nullptr) return fallback;
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(e->raw.data(), e->raw.data() + e->raw.size(), v);
  if (ec != std::errc() || ptr != e->raw.data() + e->raw.size()) {
    throw ParseError("expected a non-negative integer for '" + key + "', got '" + e->raw + "'", e->line);
  }
  return v;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (e == nullptr) return fallback;
  if (e->raw == "true") return true;
  if (e->raw == "false") return false;
  throw ParseError("expected true or false for '" + key + "'", e->line);
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  if (e == nullptr) return fallback;
  const std::string& r = e->raw;
  if (r.size() < 2 || r.front() != '"' || r.back() != '"') {
    throw ParseError("expected a quoted string for '" + key + "'", e->line);
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < r.size(); ++i) {
    if (r[i] == '\\' && i + 2 < r.size()) {
      out.push_back(r[++i]);
    } else {
      out.push_back(r[i]);
    }
  }
  return out;
}

std::vector<double> ConfigFile::get_list(const std::string& key, const std::vector<double>& fallback) const {
  const Entry* e = find(key);
  if (e == nullptr) return fallback;
  const std::string& r = e->raw;
  if (r.size() < 2 || r.front() != '[' || r.back() != ']') {
    throw ParseError("expected a list [a, b, ...] for '" + key + "'", e->line);
  }
  std::vector<double> out;
  const std::string body = trim(r.substr(1, r.size() - 2));
  if (body.empty()) return out;
  std::istringstream items(body);
  std::string item;
  while (std::getline(items, item, ',')) out.push_back(parse_number(trim(item), e->line));
  return out;
}

std::vector<std::string> ConfigFile::subsections(const std::string& prefix) const {
  std::vector<std::string> out;
  const std::string p = prefix + ".";
  for (const auto& s : sections_) {
    if (s.rfind(p, 0) == 0 && s.find('.', p.size()) == std::string::npos) out.push_back(s.substr(p.size()));
  }
  return out;
}

void ConfigFile::check_all_used() const {
  for (const auto& [key, e] : entries_) {
    if (used_.count(key) == 0) throw ParseError("unknown key '" + key + "'", e.line);
  }
}

// ---------------------------------------------------------------------------

namespace {

OptimConfig read_optim(const ConfigFile& f, const std::string& section, OptimConfig d) {
  d.max_iters = f.get_int(section + ".max_iters", d.max_iters);
  d.initial_step = f.get_double(section + ".initial_step", d.initial_step);
  d.backtrack = f.get_double(section + ".backtrack", d.backtrack);
  d.rel_tol = f.get_double(section + ".rel_tol", d.rel_tol);
  d.grad_tol = f.get_double(section + ".grad_tol", d.grad_tol);
  d.max_halvings = f.get_int(section + ".max_halvings", d.max_halvings);
  return d;
}

Scheme parse_scheme(const std::string& s) {
  if (s == "rk4") return Scheme::RK4;
  if (s == "euler") return Scheme::Euler;
  throw InvalidArgument("integrator.scheme must be \"rk4\" or \"euler\"");
}

std::vector<SynthGroup> default_groups() {
  SynthGroup control{"Control", 12, 0.42, 0.05, {}, Vec3::Zero()};
  SynthGroup a{"A", 12, 0.42, 0.05, {0, 1, 2, 3, 4}, Vec3(0.0, 0.0, 1.5)};
  SynthGroup b{"B", 12, 0.35, 0.05, {}, Vec3::Zero()};
  return {control, a, b};
}

void print_optim(std::ostringstream& o, const std::string& name, const OptimConfig& c) {
  o << name << ".max_iters=" << c.max_iters << "\n"
    << name << ".initial_step=" << c.initial_step << "\n"
    << name << ".backtrack=" << c.backtrack << "\n"
    << name << ".rel_tol=" << c.rel_tol << "\n"
    << name << ".grad_tol=" << c.grad_tol << "\n"
    << name << ".max_halvings=" << c.max_halvings << "\n";
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text) {
  const ConfigFile f = ConfigFile::parse(text);
  PipelineConfig c;
  c.sigma = f.get_double("kernel.sigma", c.sigma);
  c.n_control_points = f.get_int("control_points.count", c.n_control_points);
  c.optimize_control_points = f.get_bool("control_points.optimize", c.optimize_control_points);
  c.control_point_optim = read_optim(f, "control_points", c.control_point_optim);

  c.integrator.n_steps = f.get_int("integrator.n_steps", c.integrator.n_steps);
  c.integrator.scheme = parse_scheme(f.get_string("integrator.scheme", "rk4"));

  c.alpha = f.get_double("registration.alpha", c.alpha);
  c.registration = read_optim(f, "registration", c.registration);

  c.atlas.outer_iters = f.get_int("atlas.outer_iters", c.atlas.outer_iters);
  c.atlas.atlas_inner_iters = f.get_int("atlas.inner_iters", c.atlas.atlas_inner_iters);
  c.atlas_file = f.get_string("atlas.file", c.atlas_file);

  c.ladder.n_rungs = f.get_int("ladder.n_rungs", c.ladder.n_rungs);
  c.ladder.rung_scale = f.get_double("ladder.rung_scale", c.ladder.rung_scale);
  c.ladder.scale_with_rungs = f.get_bool("ladder.scale_with_rungs", c.ladder.scale_with_rungs);
  c.ladder.max_scale_halvings = f.get_int("ladder.max_scale_halvings", c.ladder.max_scale_halvings);
  c.ladder.main_steps = f.get_int("ladder.main_steps", c.ladder.main_steps);
  c.ladder.log_alpha = f.get_double("ladder.log_alpha", c.ladder.log_alpha);
  c.ladder.log_optim = read_optim(f, "ladder.log", c.ladder.log_optim);

  c.ef_tolerance = f.get_double("transport.ef_tolerance", c.ef_tolerance);
  c.lambda_max = f.get_double("transport.lambda_max", c.lambda_max);

  c.spline_alpha = f.get_double("spline.alpha", c.spline_alpha);
  c.force_weight = f.get_double("spline.force_weight", c.force_weight);
  c.spline_optim = read_optim(f, "spline", c.spline_optim);

  c.control_group = f.get_string("stats.control_group", c.control_group);
  c.significance = f.get_double("stats.alpha", c.significance);

  if (f.has("run.seed")) c.seed = f.get_uint64("run.seed", 0);
  c.workers = f.get_int("run.workers", c.workers);
  c.manifest = f.get_string("run.manifest", c.manifest);
  c.output = f.get_string("run.output", c.output);

  SynthSpec& s = c.synth;
  s.subdivisions = f.get_int("synth.subdivisions", s.subdivisions);
  s.n_frames = f.get_int("synth.n_frames", s.n_frames);
  s.volume_min = f.get_double("synth.volume_min", s.volume_min);
  s.volume_max = f.get_double("synth.volume_max", s.volume_max);
  s.shape_jitter = f.get_double("synth.shape_jitter", s.shape_jitter);
  s.momentum_noise = f.get_double("synth.momentum_noise", s.momentum_noise);
  s.force_scale = f.get_double("synth.force_scale", s.force_scale);
  s.max_rotation_deg = f.get_double("synth.max_rotation_deg", s.max_rotation_deg);
  s.max_translation = f.get_double("synth.max_translation", s.max_translation);
  s.shape.radius_x = f.get_double("synth.radius_x", s.shape.radius_x);
  s.shape.radius_y = f.get_double("synth.radius_y", s.shape.radius_y);
  s.shape.height = f.get_double("synth.height", s.shape.height);
  s.shape.base_depth = f.get_double("synth.base_depth", s.shape.base_depth);
  s.shape.bend = f.get_double("synth.bend", s.shape.bend);
  const std::vector<std::string> names = f.subsections("synth.group");
  if (names.empty()) {
    s.groups = default_groups();
  } else {
    for (const auto& name : names) {
      const std::string p = "synth.group." + name;
      SynthGroup g;
      g.name = name;
      g.count = f.get_int(p + ".count", g.count);
      g.ef_mean = f.get_double(p + ".ef_mean", g.ef_mean);
      g.ef_std = f.get_double(p + ".ef_std", g.ef_std);
      for (double k : f.get_list(p + ".offset_points", {})) {
        if (k != static_cast<int>(k)) throw InvalidArgument(p + ".offset_points must hold integers");
        g.offset_points.push_back(static_cast<int>(k));
      }
      const std::vector<double> off = f.get_list(p + ".momentum_offset", {0.0, 0.0, 0.0});
      if (off.size() != 3) throw InvalidArgument(p + ".momentum_offset must have 3 entries");
      g.momentum_offset = Vec3(off[0], off[1], off[2]);
      s.groups.push_back(std::move(g));
    }
  }
  f.check_all_used();

  // The synthetic cohort shares the pipeline's kernel, grid and control-point count.
  s.sigma = c.sigma;
  s.n_control_points = c.n_control_points;
  s.integrator = c.integrator;
  if (c.seed) s.seed = *c.seed;
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_pipeline_config(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

void PipelineConfig::validate() const {
  KernelParams{sigma};
  if (n_control_points < 1) throw InvalidArgument("control_points.count must be >= 1");
  if (!(alpha > 0.0)) throw InvalidArgument("registration.alpha must be positive");
  integrator.validate();
  registration.validate();
  if (atlas.outer_iters < 0 || atlas.atlas_inner_iters < 0) throw InvalidArgument("atlas iterations must be >= 0");
  control_point_optim.validate();
  ladder.validate();
  if (!(ef_tolerance > 0.0)) throw InvalidArgument("transport.ef_tolerance must be positive");
  if (!(lambda_max >= 1.0)) throw InvalidArgument("transport.lambda_max must be >= 1");
  if (!(spline_alpha > 0.0)) throw InvalidArgument("spline.alpha must be positive");
  if (!(force_weight > 0.0)) throw InvalidArgument("spline.force_weight must be positive");
  spline_optim.validate();
  if (control_group.empty()) throw InvalidArgument("stats.control_group must not be empty");
  if (!(significance > 0.0 && significance < 1.0)) throw InvalidArgument("stats.alpha must be in (0, 1)");
  if (workers < 0) throw InvalidArgument("run.workers must be >= 0");
  synth.validate();
}

std::string PipelineConfig::canonical() const {
  std::ostringstream o;
  o.precision(17);
  o << "kernel.sigma=" << sigma << "\n"
    << "control_points.count=" << n_control_points << "\n"
    << "control_points.optimize=" << optimize_control_points << "\n";
  print_optim(o, "control_points", control_point_optim);
  o << "integrator.n_steps=" << integrator.n_steps << "\n"
    << "integrator.scheme=" << (integrator.scheme == Scheme::RK4 ? "rk4" : "euler") << "\n"
    << "registration.alpha=" << alpha << "\n";
  print_optim(o, "registration", registration);
  o << "atlas.outer_iters=" << atlas.outer_iters << "\n"
    << "atlas.inner_iters=" << atlas.atlas_inner_iters << "\n"
    << "atlas.file=" << atlas_file << "\n"
    << "ladder.n_rungs=" << ladder.n_rungs << "\n"
    << "ladder.rung_scale=" << ladder.rung_scale << "\n"
    << "ladder.scale_with_rungs=" << ladder.scale_with_rungs << "\n"
    << "ladder.max_scale_halvings=" << ladder.max_scale_halvings << "\n"
    << "ladder.main_steps=" << ladder.main_steps << "\n"
    << "ladder.log_alpha=" << ladder.log_alpha << "\n";
  print_optim(o, "ladder.log", ladder.log_optim);
  o << "transport.ef_tolerance=" << ef_tolerance << "\n"
    << "transport.lambda_max=" << lambda_max << "\n"
    << "spline.alpha=" << spline_alpha << "\n"
    << "spline.force_weight=" << force_weight << "\n";
  print_optim(o, "spline", spline_optim);
  o << "stats.control_group=" << control_group << "\n"
    << "stats.alpha=" << significance << "\n"
    << "run.seed=" << (seed ? std::to_string(*seed) : "none") << "\n"
    << "synth.subdivisions=" << synth.subdivisions << "\n"
    << "synth.n_frames=" << synth.n_frames << "\n"
    << "synth.volume=" << synth.volume_min << "," << synth.volume_max << "\n"
    << "synth.noise=" << synth.shape_jitter << "," << synth.momentum_noise << "," << synth.force_scale << "\n"
    << "synth.rigid=" << synth.max_rotation_deg << "," << synth.max_translation << "\n"
    << "synth.shape=" << synth.shape.radius_x << "," << synth.shape.radius_y << "," << synth.shape.height << ","
    << synth.shape.base_depth << "," << synth.shape.bend << "\n";
  for (const auto& g : synth.groups) {
    o << "synth.group." << g.name << "=" << g.count << "," << g.ef_mean << "," << g.ef_std << ",[";
    for (int k : g.offset_points) o << k << ";";
    o << "]," << g.momentum_offset.x() << "," << g.momentum_offset.y() << "," << g.momentum_offset.z() << "\n";
  }
  return o.str();
}

std::string PipelineConfig::hash() const { return hex64(fnv1a(canonical())); }

TransportConfig PipelineConfig::transport() const {
  TransportConfig t;
  t.alpha = alpha;
  t.integrator = integrator;
  t.registration = registration;
  t.ladder = ladder;
  t.ef_tolerance = ef_tolerance;
  t.lambda_max = lambda_max;
  return t;
}

SplineConfig PipelineConfig::spline() const {
  SplineConfig s;
  s.alpha = spline_alpha;
  s.force_weight = force_weight;
  s.integrator = integrator;
  s.optim = spline_optim;
  s.init_registration = registration;
  return s;
}

}  // namespace shapetraj
