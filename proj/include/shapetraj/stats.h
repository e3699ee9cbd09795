#ifndef SHAPETRAJ_STATS_H
#define SHAPETRAJ_STATS_H

#include "shapetraj/types.h"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace shapetraj {

struct HotellingResult {
  double t2 = 0.0;
  double f = 0.0;
  double p = 1.0;
  int dim = 0;
  int df2 = 0;
  bool regularized = false;  // a ridge was added to the pooled covariance
  bool testable = true;      // false when the pooled covariance is singular even after the ridge
};

/// Two-sample Hotelling T^2 with pooled covariance. Rows are observations.
/// Throws InvalidArgument when the groups differ in dimension or
/// n_A + n_B - 2 <= dim.
HotellingResult hotelling_two_sample(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Descriptor of one subject: initial momenta plus forces at every step,
/// all at the shared control points.
struct Descriptor {
  std::string subject_id;
  std::string group;
  MomentumSet momenta;              // N_c x 3
  std::vector<PointSet> forces;     // n_steps entries of N_c x 3
};

enum class BlockType { Momentum, Force };
std::string to_string(BlockType t);

struct BlockTest {
  std::string comparison;  // "<group>_vs_<control>"
  BlockType type = BlockType::Momentum;
  int control_point = 0;
  int time_step = -1;  // -1 for momentum blocks
  HotellingResult test;
  double p_adjusted = 1.0;
  bool significant = false;
  Vec3 mean_group = Vec3::Zero();       // disease-group mean
  Vec3 mean_difference = Vec3::Zero();  // disease mean minus control mean
};

struct TestReport {
  std::vector<BlockTest> blocks;  // per comparison, by control point, then momentum before forces by step
  int blocks_per_comparison = 0;
  int significant_count() const;
  int untestable_count() const;
};

/// One Hotelling test per 3-D block for every non-control group against the
/// control group, with Bonferroni over the blocks of each comparison.
/// Throws InvalidArgument on inconsistent descriptor shapes or a missing
/// control group.
TestReport groupwise_tests(const std::vector<Descriptor>& descriptors, const std::string& control_group,
                           double alpha = 0.05);

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double pearson = 0.0;  // between x and y
  int n = 0;
};

/// Ordinary least squares y = slope x + intercept. Throws InvalidArgument
/// with fewer than 3 points or constant x.
Regression linear_fit(const std::vector<double>& x, const std::vector<double>& y);

/// Fits log(lambda) against log(v_ref / v_ed).
Regression lambda_volume_regression(const std::vector<double>& lambda, const std::vector<double>& v_ed,
                                    double v_ref);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  int n = 0;
};

/// Sample mean and standard deviation (n - 1 denominator). Needs >= 2 values.
Summary cohort_summary(const std::vector<double>& values);

}  // namespace shapetraj

#endif
