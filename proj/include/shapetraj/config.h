#ifndef SHAPETRAJ_CONFIG_H
#define SHAPETRAJ_CONFIG_H

#include "shapetraj/registration.h"
#include "shapetraj/spline.h"
#include "shapetraj/synth.h"
#include "shapetraj/transport.h"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace shapetraj {

/// Key-value text file with bracketed sections (`[a.b]`), `key = value`
/// lines and `#` comments. Values are numbers, true/false, quoted strings
/// or bracketed lists of numbers. Keys are addressed as `section.key`.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const;

  /// Section names below `prefix.` (e.g. group names under "synth.group").
  std::vector<std::string> subsections(const std::string& prefix) const;
  /// Throws ParseError naming the first key no getter asked for.
  void check_all_used() const;

 private:
  struct Entry {
    std::string raw;
    int line = 0;
  };
  const Entry* find(const std::string& key) const;

  std::map<std::string, Entry> entries_;
  std::vector<std::string> sections_;
  mutable std::set<std::string> used_;
};

struct PipelineConfig {
  double sigma = 15.0;
  int n_control_points = 60;
  double alpha = 0.1;
  IntegratorConfig integrator;
  OptimConfig registration;

  AtlasConfig atlas;
  std::string atlas_file;  // skips atlas estimation when set

  bool optimize_control_points = true;
  OptimConfig control_point_optim{50};

  LadderConfig ladder;
  double ef_tolerance = 0.005;
  double lambda_max = 64.0;

  double spline_alpha = 0.1;
  double force_weight = 1.0;
  OptimConfig spline_optim;

  std::string control_group = "Control";
  double significance = 0.05;

  std::optional<std::uint64_t> seed;
  int workers = 0;  // 0: available parallelism
  std::string manifest;
  std::string output = "out";

  SynthSpec synth;

  void validate() const;
  /// Canonical text of every field; identical configs give identical text.
  std::string canonical() const;
  /// FNV-1a of canonical(), as 16 hex digits.
  std::string hash() const;

  KernelParams kernel() const { return KernelParams{sigma}; }
  TransportConfig transport() const;
  SplineConfig spline() const;
};

/// Reads a PipelineConfig; relative paths stay as written. Throws ParseError
/// on syntax errors or unknown keys and InvalidArgument on invalid values.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
PipelineConfig parse_pipeline_config(const std::string& text);

std::uint64_t fnv1a(const std::string& data);
std::string hex64(std::uint64_t v);

}  // namespace shapetraj

#endif
