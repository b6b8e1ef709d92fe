#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hyperm/errors.hpp"
#include "hyperm/geometry.hpp"

namespace hyperm {

/// Largest supported target state dimension; covariances live on the stack.
inline constexpr int kMaxStateDim = 6;

using CovMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxStateDim, kMaxStateDim>;
using Matrix = Eigen::MatrixXd;

enum class QualityKind { gaussian, ring };

/// Sensing quality around a target: a polynomial bump of radius rho times a
/// Gaussian core (peaked at the centre or on a ring of radius ring_radius).
struct QualityField {
  QualityKind kind = QualityKind::gaussian;
  Vec2 center = Vec2::Zero();
  double sigma = 0.1;
  double rho = 0.2;
  double ring_radius = 0.0;
};

struct QualityValue {
  double value = 0.0;
  Vec2 gradient = Vec2::Zero();
};

inline QualityValue quality_with_gradient(const QualityField& f, const Vec2& a) {
  const Vec2 r = a - f.center;
  const double s2 = r.squaredNorm();
  const double rho2 = f.rho * f.rho;
  if (s2 >= rho2) return {};
  const double w = 1.0 - s2 / rho2;
  const double bump = w * w;
  const double s = std::sqrt(s2);
  const double inv2s2 = 1.0 / (2.0 * f.sigma * f.sigma);
  double core = 0.0;
  double dcore_ds = 0.0;
  if (f.kind == QualityKind::gaussian) {
    core = std::exp(-s2 * inv2s2);
    dcore_ds = -2.0 * s * inv2s2 * core;
  } else {
    const double e = s - f.ring_radius;
    core = std::exp(-e * e * inv2s2);
    dcore_ds = -2.0 * e * inv2s2 * core;
  }
  const double dbump_ds = -4.0 * w * s / rho2;
  QualityValue q;
  q.value = bump * core;
  // The ring core has a cusp at the centre; report the zero subgradient there.
  if (s > 0.0) q.gradient = (dbump_ds * core + bump * dcore_ds) / s * r;
  return q;
}

/// Sensing quality in [0, 1]; zero outside the ball of radius rho.
inline double quality(const QualityField& f, const Vec2& a) { return quality_with_gradient(f, a).value; }

/// Stochastic LTI target with its sensor model.
struct Target {
  int id = 0;
  Vec2 position = Vec2::Zero();
  CovMatrix A;
  CovMatrix Q;
  Matrix H;
  Matrix R;
  QualityField quality;
  /// H^T R^{-1} H, cached.
  CovMatrix info;
  /// Region that contains the target.
  int region = -1;

  int dim() const { return static_cast<int>(A.rows()); }
};

namespace detail {

inline bool is_spd(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if ((m - m.transpose()).norm() > 1e-12 * (1.0 + m.norm())) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > 0.0;
}

inline bool is_observable(const Matrix& A, const Matrix& H) {
  const auto m = A.rows();
  Matrix O(H.rows() * m, m);
  Matrix block = H;
  for (Eigen::Index k = 0; k < m; ++k) {
    O.middleRows(k * H.rows(), H.rows()) = block;
    block = block * A;
  }
  Eigen::FullPivLU<Matrix> lu(O);
  lu.setThreshold(1e-10);
  return lu.rank() == m;
}

}  // namespace detail

/// Validates and assembles a target. Requires Q, R SPD and (A, H) observable.
inline Target make_target(int id, const Vec2& position, const Matrix& A, const Matrix& Q, const Matrix& H,
                          const Matrix& R, QualityField quality) {
  const std::string who = "target " + std::to_string(id);
  const auto m = A.rows();
  if (m < 1 || m > kMaxStateDim || A.cols() != m) throw ScenarioError(who + ": A must be square with 1..6 rows");
  if (Q.rows() != m || Q.cols() != m) throw ScenarioError(who + ": Q has wrong shape");
  if (H.cols() != m || H.rows() < 1) throw ScenarioError(who + ": H has wrong shape");
  if (R.rows() != H.rows() || R.cols() != H.rows()) throw ScenarioError(who + ": R has wrong shape");
  if (!detail::is_spd(Q)) throw ScenarioError(who + ": Q must be symmetric positive definite");
  if (!detail::is_spd(R)) throw ScenarioError(who + ": R must be symmetric positive definite");
  if (!detail::is_observable(A, H)) throw ScenarioError(who + ": (A, H) must be observable");
  if (!(quality.sigma > 0.0) || !(quality.rho > 0.0) || quality.ring_radius < 0.0) {
    throw ScenarioError(who + ": quality field needs sigma > 0, rho > 0, ring radius >= 0");
  }
  quality.center = position;
  Target t;
  t.id = id;
  t.position = position;
  t.A = A;
  t.Q = Q;
  t.H = H;
  t.R = R;
  t.quality = quality;
  t.info = H.transpose() * R.llt().solve(H);
  return t;
}

/// Right-hand side of the Kalman-Bucy covariance ODE
/// dOmega/dt = A Omega + Omega A^T + Q - gamma^2 Omega H^T R^{-1} H Omega.
inline CovMatrix riccati_rhs(const CovMatrix& omega, const Target& t, double gamma) {
  CovMatrix out = t.A * omega;
  out += out.transpose().eval();
  out += t.Q;
  if (gamma != 0.0) out.noalias() -= (gamma * gamma) * (omega * t.info * omega);
  return out;
}

/// Sensing quality at the start, midpoint and end of one integration step.
struct GammaSamples {
  double start = 0.0;
  double mid = 0.0;
  double end = 0.0;
};

struct RiccatiStep {
  CovMatrix omega;
  /// Integral of tr(Omega) over the step, from the same RK4 stages.
  double trace_integral = 0.0;
};

/// One RK4 step of the covariance ODE, re-symmetrised. The trace integral is
/// carried as an extra quadrature state of the same scheme.
inline RiccatiStep riccati_step(const CovMatrix& omega, const Target& t, const GammaSamples& g, double h) {
  if (!(h > 0.0)) throw StepSizeError("riccati_step: step must be positive");
  const CovMatrix k1 = riccati_rhs(omega, t, g.start);
  const CovMatrix x2 = omega + 0.5 * h * k1;
  const CovMatrix k2 = riccati_rhs(x2, t, g.mid);
  const CovMatrix x3 = omega + 0.5 * h * k2;
  const CovMatrix k3 = riccati_rhs(x3, t, g.mid);
  const CovMatrix x4 = omega + h * k3;
  const CovMatrix k4 = riccati_rhs(x4, t, g.end);
  RiccatiStep out;
  out.omega = omega + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  out.omega = (0.5 * (out.omega + out.omega.transpose())).eval();
  out.trace_integral = (h / 6.0) * (omega.trace() + 2.0 * x2.trace() + 2.0 * x3.trace() + x4.trace());
  Eigen::LLT<CovMatrix> llt(out.omega);
  if (llt.info() != Eigen::Success) {
    throw StepSizeError("riccati_step: covariance of target " + std::to_string(t.id) +
                        " lost positive definiteness; reduce the step");
  }
  return out;
}

inline RiccatiStep riccati_step(const CovMatrix& omega, const Target& t, double gamma, double h) {
  return riccati_step(omega, t, GammaSamples{gamma, gamma, gamma}, h);
}

/// Trapezoidal integral of sampled per-target traces tr(Omega_i(t)), summed
/// over targets. traces[i][n] is target i at times[n].
inline double accumulate_cost(const std::vector<double>& times, const std::vector<std::vector<double>>& traces) {
  double total = 0.0;
  for (const auto& tr : traces) {
    if (tr.size() != times.size()) throw Error("accumulate_cost: trace and time grid differ in length");
    for (std::size_t n = 1; n < times.size(); ++n) {
      total += 0.5 * (times[n] - times[n - 1]) * (tr[n] + tr[n - 1]);
    }
  }
  return total;
}

inline double accumulate_cost(const std::vector<double>& times, const std::vector<double>& trace) {
  return accumulate_cost(times, std::vector<std::vector<double>>{trace});
}

}  // namespace hyperm
