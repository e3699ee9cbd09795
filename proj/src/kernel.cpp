#include "shapetraj/kernel.h"

#include <cmath>

namespace shapetraj {

KernelParams::KernelParams(double sigma) : sigma_(sigma), inv_sigma_sq_(0.0) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("kernel sigma must be a positive finite number");
  }
  inv_sigma_sq_ = 1.0 / (sigma * sigma);
}

void ControlSystem::validate() const {
  if (control_points.rows() < 1) {
    throw InvalidArgument("control system needs at least one control point");
  }
  if (momenta.rows() != control_points.rows()) {
    throw InvalidArgument("momenta count " + std::to_string(momenta.rows()) +
                          " does not match control point count " +
                          std::to_string(control_points.rows()));
  }
}

double kernel_eval(const Vec3& x, const Vec3& y, const KernelParams& k) {
  return std::exp(-(x - y).squaredNorm() * k.inv_sigma_sq());
}

Vec3 kernel_grad1(const Vec3& x, const Vec3& y, const KernelParams& k) {
  const Vec3 d = x - y;
  return (-2.0 * k.inv_sigma_sq() * std::exp(-d.squaredNorm() * k.inv_sigma_sq())) * d;
}

Vec3 velocity_at(const Vec3& x, const ControlSystem& sys, const KernelParams& k) {
  Vec3 v = Vec3::Zero();
  for (Eigen::Index j = 0; j < sys.size(); ++j) {
    const Vec3 c = sys.control_points.row(j).transpose();
    v += kernel_eval(x, c, k) * sys.momenta.row(j).transpose();
  }
  return v;
}

PointSet velocity_at(const PointSet& points, const ControlSystem& sys, const KernelParams& k) {
  PointSet v(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    v.row(i) = velocity_at(Vec3(points.row(i).transpose()), sys, k).transpose();
  }
  return v;
}

Eigen::MatrixXd gram_matrix(const PointSet& cp, const KernelParams& k) {
  const Eigen::Index n = cp.rows();
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::exp(-(cp.row(i) - cp.row(j)).squaredNorm() * k.inv_sigma_sq());
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

double rkhs_norm_sq(const PointSet& cp, const MomentumSet& mu, const KernelParams& k) {
  if (cp.rows() != mu.rows()) {
    throw InvalidArgument("rkhs_norm_sq: momenta/control point count mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < cp.rows(); ++i) {
    total += mu.row(i).squaredNorm();
    for (Eigen::Index j = i + 1; j < cp.rows(); ++j) {
      const double v = std::exp(-(cp.row(i) - cp.row(j)).squaredNorm() * k.inv_sigma_sq());
      total += 2.0 * v * mu.row(i).dot(mu.row(j));
    }
  }
  return total;
}

void rkhs_norm_sq_grad(const PointSet& cp, const MomentumSet& mu, const KernelParams& k,
                       MomentumSet* grad_mu, PointSet* grad_cp) {
  if (cp.rows() != mu.rows()) {
    throw InvalidArgument("rkhs_norm_sq_grad: momenta/control point count mismatch");
  }
  const Eigen::Index n = cp.rows();
  const double s = 2.0 * k.inv_sigma_sq();
  if (grad_mu != nullptr) *grad_mu = 2.0 * mu;
  if (grad_cp != nullptr) grad_cp->setZero(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Eigen::RowVector3d d = cp.row(i) - cp.row(j);
      const double v = std::exp(-d.squaredNorm() * k.inv_sigma_sq());
      if (grad_mu != nullptr) {
        grad_mu->row(i) += 2.0 * v * mu.row(j);
        grad_mu->row(j) += 2.0 * v * mu.row(i);
      }
      if (grad_cp != nullptr) {
        const Eigen::RowVector3d g = (-2.0 * s * v * mu.row(i).dot(mu.row(j))) * d;
        grad_cp->row(i) += g;
        grad_cp->row(j) -= g;
      }
    }
  }
}

double rkhs_norm_sq(const ControlSystem& sys, const KernelParams& k) {
  sys.validate();
  return rkhs_norm_sq(sys.control_points, sys.momenta, k);
}

}  // namespace shapetraj
