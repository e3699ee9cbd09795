#include "shapetraj/stats.h"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace shapetraj {

HotellingResult hotelling_two_sample(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols() || a.cols() < 1) throw InvalidArgument("hotelling: groups differ in dimension");
  const auto na = static_cast<double>(a.rows());
  const auto nb = static_cast<double>(b.rows());
  const auto p = static_cast<int>(a.cols());
  if (a.rows() < 1 || b.rows() < 1 || na + nb - 2.0 <= p) {
    throw InvalidArgument("hotelling: need n_A + n_B - 2 > dimension");
  }
  HotellingResult r;
  r.dim = p;
  r.df2 = static_cast<int>(na + nb) - p - 1;

  const Eigen::RowVectorXd ma = a.colwise().mean();
  const Eigen::RowVectorXd mb = b.colwise().mean();
  const Eigen::MatrixXd ca = a.rowwise() - ma;
  const Eigen::MatrixXd cb = b.rowwise() - mb;
  Eigen::MatrixXd pooled = (ca.transpose() * ca + cb.transpose() * cb) / (na + nb - 2.0);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pooled);
  double lo = eig.eigenvalues().minCoeff();
  double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    const double ridge = 1e-8 * pooled.trace() / p;
    pooled.diagonal().array() += ridge;
    r.regularized = true;
    eig.compute(pooled);
    lo = eig.eigenvalues().minCoeff();
    hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) {
      r.testable = false;
      r.t2 = std::numeric_limits<double>::quiet_NaN();
      r.f = r.t2;
      r.p = 1.0;
      return r;
    }
  }

  const Eigen::VectorXd d = (ma - mb).transpose();
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * d;
  const double q = (proj.array().square() / eig.eigenvalues().array()).sum();
  r.t2 = na * nb / (na + nb) * q;
  r.f = r.t2 * (na + nb - p - 1.0) / (p * (na + nb - 2.0));
  if (r.f <= 0.0) {
    r.p = 1.0;
  } else {
    const boost::math::fisher_f_distribution<double> dist(p, r.df2);
    r.p = boost::math::cdf(boost::math::complement(dist, r.f));
  }
  return r;
}

std::string to_string(BlockType t) { return t == BlockType::Momentum ? "momentum" : "force"; }

int TestReport::significant_count() const {
  return static_cast<int>(std::count_if(blocks.begin(), blocks.end(), [](const BlockTest& b) { return b.significant; }));
}

int TestReport::untestable_count() const {
  return static_cast<int>(
      std::count_if(blocks.begin(), blocks.end(), [](const BlockTest& b) { return !b.test.testable; }));
}

namespace {

// Rows: subjects; the 3 columns of block (cp, step); step -1 is the momentum.
Eigen::MatrixXd block_matrix(const std::vector<const Descriptor*>& group, Eigen::Index cp, int step) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(group.size()), 3);
  for (std::size_t i = 0; i < group.size(); ++i) {
    const Descriptor& d = *group[i];
    m.row(static_cast<Eigen::Index>(i)) =
        step < 0 ? d.momenta.row(cp) : d.forces[static_cast<std::size_t>(step)].row(cp);
  }
  return m;
}

}  // namespace

TestReport groupwise_tests(const std::vector<Descriptor>& descriptors, const std::string& control_group,
                           double alpha) {
  if (descriptors.empty()) throw InvalidArgument("groupwise_tests: no descriptors");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("groupwise_tests: alpha must be in (0, 1)");
  const Eigen::Index nc = descriptors.front().momenta.rows();
  const std::size_t n_steps = descriptors.front().forces.size();
  std::map<std::string, std::vector<const Descriptor*>> groups;
  for (const auto& d : descriptors) {
    if (d.momenta.rows() != nc || d.forces.size() != n_steps) {
      throw InvalidArgument("groupwise_tests: descriptor shapes differ (subject " + d.subject_id + ")");
    }
    for (const auto& f : d.forces) {
      if (f.rows() != nc) throw InvalidArgument("groupwise_tests: force shape differs (subject " + d.subject_id + ")");
    }
    groups[d.group].push_back(&d);
  }
  auto ctrl = groups.find(control_group);
  if (ctrl == groups.end()) throw InvalidArgument("groupwise_tests: no subjects in control group " + control_group);

  TestReport report;
  const int per_cp = 1 + static_cast<int>(n_steps);
  report.blocks_per_comparison = static_cast<int>(nc) * per_cp;
  for (const auto& [name, members] : groups) {
    if (name == control_group) continue;
    for (Eigen::Index k = 0; k < nc; ++k) {
      for (int s = -1; s < static_cast<int>(n_steps); ++s) {
        BlockTest bt;
        bt.comparison = name + "_vs_" + control_group;
        bt.type = s < 0 ? BlockType::Momentum : BlockType::Force;
        bt.control_point = static_cast<int>(k);
        bt.time_step = s;
        const Eigen::MatrixXd a = block_matrix(members, k, s);
        const Eigen::MatrixXd b = block_matrix(ctrl->second, k, s);
        bt.test = hotelling_two_sample(a, b);
        bt.p_adjusted = std::min(1.0, bt.test.p * report.blocks_per_comparison);
        bt.significant = bt.test.testable && bt.p_adjusted < alpha;
        bt.mean_group = a.colwise().mean().transpose();
        bt.mean_difference = bt.mean_group - b.colwise().mean().transpose();
        report.blocks.push_back(bt);
      }
    }
  }
  return report;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("pearson: need two equal-length samples");
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), n);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::VectorXd dx = xv.array() - xv.mean();
  const Eigen::VectorXd dy = yv.array() - yv.mean();
  const double den = std::sqrt(dx.squaredNorm() * dy.squaredNorm());
  return den > 0.0 ? dx.dot(dy) / den : 0.0;
}

Regression linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("regression: x and y lengths differ");
  if (x.size() < 3) throw InvalidArgument("regression: insufficient data (need at least 3 records)");
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), n);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::VectorXd dx = xv.array() - xv.mean();
  const Eigen::VectorXd dy = yv.array() - yv.mean();
  const double sxx = dx.squaredNorm();
  if (!(sxx > 0.0)) throw InvalidArgument("regression: regressor is constant");
  Regression r;
  r.n = static_cast<int>(n);
  r.slope = dx.dot(dy) / sxx;
  r.intercept = yv.mean() - r.slope * xv.mean();
  const double syy = dy.squaredNorm();
  const double sse = (yv - (r.slope * xv).array().matrix() - Eigen::VectorXd::Constant(n, r.intercept)).squaredNorm();
  r.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  r.pearson = pearson(x, y);
  return r;
}

Regression lambda_volume_regression(const std::vector<double>& lambda, const std::vector<double>& v_ed,
                                    double v_ref) {
  if (lambda.size() != v_ed.size()) throw InvalidArgument("regression: lambda and volume counts differ");
  if (lambda.size() < 3) throw InvalidArgument("regression: insufficient data (need at least 3 records)");
  if (!(v_ref > 0.0)) throw InvalidArgument("regression: reference volume must be positive");
  std::vector<double> x;
  std::vector<double> y;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    if (!(lambda[i] > 0.0) || !(v_ed[i] > 0.0)) throw InvalidArgument("regression: lambda and volumes must be positive");
    x.push_back(std::log(v_ref / v_ed[i]));
    y.push_back(std::log(lambda[i]));
  }
  return linear_fit(x, y);
}

Summary cohort_summary(const std::vector<double>& values) {
  if (values.size() < 2) throw InvalidArgument("cohort_summary: need at least 2 values");
  const auto n = static_cast<Eigen::Index>(values.size());
  const Eigen::Map<const Eigen::VectorXd> v(values.data(), n);
  Summary s;
  s.n = static_cast<int>(n);
  // Shifted by the first value so constant samples give an exact zero spread.
  s.mean = v[0] + (v.array() - v[0]).mean();
  s.std = std::sqrt((v.array() - s.mean).square().sum() / static_cast<double>(n - 1));
  return s;
}

}  // namespace shapetraj
