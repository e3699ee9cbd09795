#ifndef SHAPETRAJ_KERNEL_H
#define SHAPETRAJ_KERNEL_H

#include "shapetraj/types.h"

#include <Eigen/Dense>

namespace shapetraj {

/// Gaussian kernel K(x, y) = exp(-|x - y|^2 / sigma^2). No factor 2 in the
/// denominator.
class KernelParams {
 public:
  explicit KernelParams(double sigma);

  double sigma() const { return sigma_; }
  double inv_sigma_sq() const { return inv_sigma_sq_; }

 private:
  double sigma_;
  double inv_sigma_sq_;
};

/// Control points c_k carrying momenta mu_k.
struct ControlSystem {
  PointSet control_points;
  MomentumSet momenta;

  Eigen::Index size() const { return control_points.rows(); }
  /// Throws InvalidArgument on empty or mismatched arrays.
  void validate() const;
};

double kernel_eval(const Vec3& x, const Vec3& y, const KernelParams& k);

/// Gradient of K with respect to its first argument: -2 (x - y) / sigma^2 K(x, y).
Vec3 kernel_grad1(const Vec3& x, const Vec3& y, const KernelParams& k);

/// v(x) = sum_k K(x, c_k) mu_k
Vec3 velocity_at(const Vec3& x, const ControlSystem& sys, const KernelParams& k);

/// Batched velocity_at over the rows of `points`.
PointSet velocity_at(const PointSet& points, const ControlSystem& sys, const KernelParams& k);

/// Dense Gram matrix K(c_i, c_j).
Eigen::MatrixXd gram_matrix(const PointSet& control_points, const KernelParams& k);

/// |v|_K^2 = sum_ij K(c_i, c_j) mu_i . mu_j
double rkhs_norm_sq(const ControlSystem& sys, const KernelParams& k);
double rkhs_norm_sq(const PointSet& control_points, const MomentumSet& momenta, const KernelParams& k);

/// Partial derivatives of rkhs_norm_sq with respect to the momenta and the
/// control points. Either output may be null.
void rkhs_norm_sq_grad(const PointSet& control_points, const MomentumSet& momenta, const KernelParams& k,
                       MomentumSet* grad_momenta, PointSet* grad_control_points);

}  // namespace shapetraj

#endif
