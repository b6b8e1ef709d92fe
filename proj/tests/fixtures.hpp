#pragma once

#include <vector>

#include <Eigen/Dense>

#include "hyperm/estimation.hpp"
#include "hyperm/geometry.hpp"

namespace hyperm::testing {

/// Unit square split at x = 0.5 into region 0 (left) and region 1 (right).
inline Partition two_half_square(const Vec2& d0 = Vec2::Zero(), const Vec2& d1 = Vec2::Zero()) {
  const Box box{Vec2(0, 0), Vec2(1, 1)};
  std::vector<Halfspace> left = box.halfspaces();
  left.push_back(Halfspace::make(Vec2(1, 0), 0.5));
  std::vector<Halfspace> right = box.halfspaces();
  right.push_back(Halfspace::make(Vec2(-1, 0), -0.5));
  return Partition(box, {Region(0, left, d0, box), Region(1, right, d1, box)});
}

inline Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

inline CovMatrix cov(double v) { return CovMatrix::Constant(1, 1, v); }

/// Scalar random-walk target (A = 0) observed directly.
inline Target scalar_target(int id, const Vec2& pos, double q = 1.0, double h = 1.0, double r = 1.0,
                            double sigma = 0.1, double rho = 0.2) {
  QualityField f;
  f.sigma = sigma;
  f.rho = rho;
  return make_target(id, pos, scalar(0.0), scalar(q), scalar(h), scalar(r), f);
}

}  // namespace hyperm::testing
