#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hyperm/dynamics.hpp"
#include "hyperm/errors.hpp"
#include "hyperm/estimation.hpp"
#include "hyperm/geometry.hpp"
#include "hyperm/log.hpp"

namespace hyperm {

struct MonitorOptions {
  int intervals = 40;  // piecewise-constant control intervals N
  int substeps = 4;    // RK4 steps per interval (minimum)
  int max_substeps = 64;
  double tol_stat = 1e-6;
  double tol_comp = 1e-8;
  double mu_init = 1e-3;  // barrier parameter of a cold start
  int max_iterations = 400;
  /// Iterations between finite-difference refreshes of the objective Hessian;
  /// damped BFGS updates in between. 0 disables the refresh.
  int hessian_refresh = 3;
  // Early stop once stationarity and complementarity are near tolerance and
  // the objective has stopped changing for this many iterations.
  double acceptable_stat = 1e-3;
  double acceptable_comp = 1e-6;
  double acceptable_change = 1e-9;  // relative objective change per iteration
  int acceptable_iterations = 15;
  double fd_rel = 1e-3;  // sensitivity step h = max(fd_min, fd_rel * tau)
  double fd_min = 1e-3;
};

/// k-th local monitoring problem: fixed duration, fixed entry/exit points on
/// the region boundary, initial covariances of all targets.
struct MonitorProblem {
  Region region;
  std::vector<Target> targets;
  int resident = -1;  // index into targets
  Vec2 entry;
  Vec2 exit;
  double tau = 0.0;
  std::vector<CovMatrix> omega0;
};

enum class MonitorStatus { converged, acceptable, singular, max_iterations, line_search_failed };

inline const char* to_string(MonitorStatus s) {
  switch (s) {
    case MonitorStatus::converged: return "converged";
    case MonitorStatus::acceptable: return "acceptable";
    case MonitorStatus::singular: return "singular";
    case MonitorStatus::max_iterations: return "max_iterations";
    case MonitorStatus::line_search_failed: return "line_search_failed";
  }
  return "unknown";
}

/// Per-target covariance traces on the integration grid of a segment.
struct CovTrace {
  std::vector<double> times;
  std::vector<Vec2> positions;
  std::vector<std::vector<double>> traces;  // [target][sample]
};

struct MonitorSolution {
  MonitorStatus status = MonitorStatus::converged;
  double tau = 0.0;
  std::vector<Vec2> nodes;     // N + 1 shooting nodes
  std::vector<Vec2> controls;  // N piecewise-constant controls
  std::vector<CovMatrix> omega_end;
  std::vector<double> target_costs;  // integral of tr(Omega_i) per target
  double cost = 0.0;                 // M*
  double stationarity = 0.0;
  double complementarity = 0.0;
  int iterations = 0;
  int substeps = 0;
  CovTrace trace;
  double sensitivity = std::numeric_limits<double>::quiet_NaN();
  bool sensitivity_one_sided = false;

  // Warm-start data for a later solve of the same segment.
  Eigen::MatrixXd hessian_approx;
  Eigen::VectorXd multipliers;

  bool ok() const {
    return status == MonitorStatus::converged || status == MonitorStatus::acceptable || status == MonitorStatus::singular;
  }
};

/// Multiple-shooting transcription with the agent positions at the interval
/// boundaries as states. Under constant drift the control on interval j is
/// u_j = (a_{j+1} - a_j)/h - d, so the continuity defects vanish identically
/// once the interior nodes a_1..a_{N-1} are the free variables.
class MonitorTranscription {
 public:
  MonitorTranscription(const MonitorProblem& p, int intervals, int substeps)
      : p_(p), n_(intervals), s_(substeps), h_(p.tau / intervals) {
    if (n_ < 2 || s_ < 1) throw Error("monitor transcription needs >= 2 intervals and >= 1 substep");
    if (p_.resident < 0 || p_.resident >= static_cast<int>(p_.targets.size())) {
      throw Error("monitor problem: resident target index out of range");
    }
    if (p_.omega0.size() != p_.targets.size()) throw Error("monitor problem: one covariance per target required");
    num_path_ = static_cast<int>(p_.region.halfspaces().size());
  }

  int intervals() const { return n_; }
  int substeps() const { return s_; }
  double step() const { return h_; }
  int num_vars() const { return 2 * (n_ - 1); }
  int num_constraints() const { return n_ + (n_ - 1) * num_path_; }

  std::vector<Vec2> nodes_from(const Eigen::VectorXd& y) const {
    std::vector<Vec2> a(static_cast<std::size_t>(n_ + 1));
    a.front() = p_.entry;
    a.back() = p_.exit;
    for (int j = 1; j < n_; ++j) a[static_cast<std::size_t>(j)] = y.segment<2>(2 * (j - 1));
    return a;
  }

  Eigen::VectorXd vars_from(const std::vector<Vec2>& a) const {
    Eigen::VectorXd y(num_vars());
    for (int j = 1; j < n_; ++j) y.segment<2>(2 * (j - 1)) = a[static_cast<std::size_t>(j)];
    return y;
  }

  Vec2 control(const std::vector<Vec2>& a, int j) const {
    return (a[static_cast<std::size_t>(j + 1)] - a[static_cast<std::size_t>(j)]) / h_ - p_.region.drift();
  }

  /// Slacks s = -c >= 0: N disk constraints 1 - |u_j|^2, then the halfspaces
  /// at every interior node.
  Eigen::VectorXd slacks(const std::vector<Vec2>& a) const {
    Eigen::VectorXd s(num_constraints());
    for (int j = 0; j < n_; ++j) s(j) = 1.0 - control(a, j).squaredNorm();
    int c = n_;
    const auto& hs = p_.region.halfspaces();
    for (int j = 1; j < n_; ++j) {
      for (const auto& h : hs) s(c++) = h.slack(a[static_cast<std::size_t>(j)]);
    }
    return s;
  }

  /// Adds J^T w (constraint Jacobian transpose times w) into g.
  void add_jacobian_transpose(const std::vector<Vec2>& a, const Eigen::VectorXd& w, Eigen::VectorXd& g) const {
    for (int j = 0; j < n_; ++j) {
      const Vec2 du = 2.0 / h_ * control(a, j) * w(j);  // gradient of |u_j|^2 - 1 w.r.t. a_{j+1}
      if (j + 1 < n_) g.segment<2>(2 * j) += du;
      if (j > 0) g.segment<2>(2 * (j - 1)) -= du;
    }
    int c = n_;
    const auto& hs = p_.region.halfspaces();
    for (int j = 1; j < n_; ++j) {
      for (const auto& h : hs) g.segment<2>(2 * (j - 1)) += w(c++) * h.normal;
    }
  }

  /// Adds sum_i lambda_i Hess(c_i) + sum_i sigma_i grad(c_i) grad(c_i)^T into K.
  void add_constraint_curvature(const std::vector<Vec2>& a, const Eigen::VectorXd& lambda, const Eigen::VectorXd& sigma,
                                Eigen::MatrixXd& k) const {
    const double hh = 2.0 / (h_ * h_);
    for (int j = 0; j < n_; ++j) {
      const Vec2 gu = 2.0 / h_ * control(a, j);
      const Eigen::Matrix2d blk = lambda(j) * hh * Eigen::Matrix2d::Identity() + sigma(j) * gu * gu.transpose();
      const int hi = j;      // variable block of a_{j+1}, valid if j + 1 < n
      const int lo = j - 1;  // variable block of a_j, valid if j > 0
      if (j + 1 < n_) k.block<2, 2>(2 * hi, 2 * hi) += blk;
      if (j > 0) k.block<2, 2>(2 * lo, 2 * lo) += blk;
      if (j > 0 && j + 1 < n_) {
        k.block<2, 2>(2 * hi, 2 * lo) -= blk;
        k.block<2, 2>(2 * lo, 2 * hi) -= blk;
      }
    }
    int c = n_;
    const auto& hs = p_.region.halfspaces();
    for (int j = 1; j < n_; ++j) {
      for (const auto& h : hs) k.block<2, 2>(2 * (j - 1), 2 * (j - 1)) += sigma(c++) * h.normal * h.normal.transpose();
    }
  }

  /// Integral of tr(Omega_resident) and its exact gradient with respect to the
  /// interior nodes (reverse pass through the RK4 recursion).
  double resident_cost(const std::vector<Vec2>& a, Eigen::VectorXd* grad) const {
    switch (p_.targets[static_cast<std::size_t>(p_.resident)].dim()) {
      case 1: return resident_cost_impl<Eigen::Matrix<double, 1, 1>>(a, grad);
      case 2: return resident_cost_impl<Eigen::Matrix2d>(a, grad);
      case 3: return resident_cost_impl<Eigen::Matrix3d>(a, grad);
      case 4: return resident_cost_impl<Eigen::Matrix4d>(a, grad);
      default: return resident_cost_impl<CovMatrix>(a, grad);
    }
  }

  /// Propagates every target along the node path with the same RK4 scheme and
  /// fills the solution's costs, end covariances and trace.
  void simulate(const std::vector<Vec2>& a, MonitorSolution& sol) const {
    const std::size_t nt = p_.targets.size();
    const double hs = h_ / s_;
    sol.omega_end = p_.omega0;
    sol.target_costs.assign(nt, 0.0);
    sol.trace = CovTrace{};
    sol.trace.traces.assign(nt, {});
    for (std::size_t i = 0; i < nt; ++i) sol.trace.traces[i].push_back(p_.omega0[i].trace());
    sol.trace.times.push_back(0.0);
    sol.trace.positions.push_back(a.front());
    for (int j = 0; j < n_; ++j) {
      const Vec2& a0 = a[static_cast<std::size_t>(j)];
      const Vec2& a1 = a[static_cast<std::size_t>(j + 1)];
      for (int q = 0; q < s_; ++q) {
        const double th0 = static_cast<double>(q) / s_;
        const double thm = (q + 0.5) / s_;
        const double th1 = static_cast<double>(q + 1) / s_;
        const Vec2 p0 = a0 + th0 * (a1 - a0), pm = a0 + thm * (a1 - a0), p1 = a0 + th1 * (a1 - a0);
        for (std::size_t i = 0; i < nt; ++i) {
          const auto& tq = p_.targets[i].quality;
          const GammaSamples g{quality(tq, p0), quality(tq, pm), quality(tq, p1)};
          const RiccatiStep st = riccati_step(sol.omega_end[i], p_.targets[i], g, hs);
          sol.omega_end[i] = st.omega;
          sol.target_costs[i] += st.trace_integral;
          sol.trace.traces[i].push_back(st.omega.trace());
        }
        sol.trace.times.push_back((j + th1) * h_);
        sol.trace.positions.push_back(p1);
      }
    }
    sol.cost = 0.0;
    for (double c : sol.target_costs) sol.cost += c;
    sol.nodes = a;
    sol.controls.clear();
    for (int j = 0; j < n_; ++j) sol.controls.push_back(control(a, j));
  }

  /// Strictly feasible initial path: head for the target, hover over it with
  /// the leftover time and leave for the exit. When time is short the hover
  /// point is pulled back towards the entry/exit midpoint.
  std::vector<Vec2> detour_nodes() const {
    const Vec2& d = p_.region.drift();
    const Vec2& e = p_.entry;
    const Vec2& x = p_.exit;
    const double delta = min_transit_time(e, x, d);
    const double excess = delta > 0.0 ? p_.tau / delta - 1.0 : std::numeric_limits<double>::infinity();
    const double margin = std::min(0.02, 0.25 * excess);
    const Vec2 mid = 0.5 * (e + x);
    const Target& res = p_.targets[static_cast<std::size_t>(p_.resident)];
    Vec2 target = res.position;
    if (p_.region.boundary_distance(target) < 1e-6) target += 1e-3 * (p_.region.centroid() - target);
    // Hover where the sensing quality peaks on the way in: the target itself
    // for a Gaussian core, the ring crest for a ring-shaped field.
    {
      Vec2 best = target;
      double best_q = quality(res.quality, target);
      for (int i = 1; i <= 200; ++i) {
        const Vec2 c = target + (static_cast<double>(i) / 200.0) * (mid - target);
        const double q = quality(res.quality, c);
        if (q > best_q) {
          best_q = q;
          best = c;
        }
      }
      target = best;
    }
    auto q_of = [&](double th) -> Vec2 { return (1.0 - th) * mid + th * target; };
    auto travel = [&](double th) {
      const Vec2 q = q_of(th);
      return (min_transit_time(e, q, d) + min_transit_time(q, x, d)) * (1.0 + margin);
    };
    double th = 1.0;
    if (travel(1.0) > p_.tau) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 60; ++it) {
        const double md = 0.5 * (lo + hi);
        (travel(md) <= p_.tau ? lo : hi) = md;
      }
      th = lo;
    }
    const Vec2 q = q_of(th);
    const double t1 = min_transit_time(e, q, d) * (1.0 + margin);
    const double t2 = min_transit_time(q, x, d) * (1.0 + margin);
    const double hover = std::max(0.0, p_.tau - t1 - t2);
    auto pos = [&](double t) -> Vec2 {
      if (t <= t1) return t1 > 0.0 ? Vec2(e + (t / t1) * (q - e)) : q;
      if (t <= t1 + hover) return q;
      const double r = t - t1 - hover;
      return t2 > 0.0 ? Vec2(q + std::min(1.0, r / t2) * (x - q)) : x;
    };
    std::vector<Vec2> a(static_cast<std::size_t>(n_ + 1));
    for (int j = 0; j <= n_; ++j) a[static_cast<std::size_t>(j)] = pos(j * h_);
    a.front() = e;
    a.back() = x;
    return a;
  }

  /// Straight line at constant speed from entry to exit (the time-scaled
  /// Zermelo transit; the only feasible path when tau equals the minimum time).
  std::vector<Vec2> line_nodes() const {
    std::vector<Vec2> a(static_cast<std::size_t>(n_ + 1));
    for (int j = 0; j <= n_; ++j) a[static_cast<std::size_t>(j)] = p_.entry + (static_cast<double>(j) / n_) * (p_.exit - p_.entry);
    return a;
  }

  const MonitorProblem& problem() const { return p_; }

 private:
  // Fixed-size matrices for small state dimensions keep the inner loops cheap.
  template <class Mat>
  double resident_cost_impl(const std::vector<Vec2>& a, Eigen::VectorXd* grad) const {
    const Target& t = p_.targets[static_cast<std::size_t>(p_.resident)];
    const int m = t.dim();
    const Mat A = t.A;
    const Mat Q = t.Q;
    const Mat info = t.info;
    auto rhs = [&](const Mat& x, double g) -> Mat {
      Mat out = A * x;
      out += out.transpose().eval();
      out += Q;
      if (g != 0.0) out.noalias() -= (g * g) * (x * info * x);
      return out;
    };
    const int steps = n_ * s_;
    const double hs = h_ / s_;
    // gamma samples: 2 s + 1 per interval at fractions q / (2 s).
    const int per = 2 * s_ + 1;
    gam_.resize(static_cast<std::size_t>(n_ * per));
    for (int j = 0; j < n_; ++j) {
      const Vec2& a0 = a[static_cast<std::size_t>(j)];
      const Vec2& a1 = a[static_cast<std::size_t>(j + 1)];
      for (int q = 0; q < per; ++q) {
        const double th = static_cast<double>(q) / (2 * s_);
        gam_[static_cast<std::size_t>(j * per + q)] = quality_with_gradient(t.quality, a0 + th * (a1 - a0));
      }
    }
    auto g_at = [&](int step, int half) -> const QualityValue& {
      const int j = step / s_;
      const int q = 2 * (step % s_) + half;  // half in {0, 1, 2}
      return gam_[static_cast<std::size_t>(j * per + q)];
    };
    std::vector<Mat> omegas(static_cast<std::size_t>(steps + 1));
    omegas[0] = p_.omega0[static_cast<std::size_t>(p_.resident)];
    double cost = 0.0;
    for (int k = 0; k < steps; ++k) {
      const Mat& om = omegas[static_cast<std::size_t>(k)];
      const double g0 = g_at(k, 0).value, gm = g_at(k, 1).value, g1 = g_at(k, 2).value;
      const Mat k1 = rhs(om, g0);
      const Mat x2 = om + 0.5 * hs * k1;
      const Mat k2 = rhs(x2, gm);
      const Mat x3 = om + 0.5 * hs * k2;
      const Mat k3 = rhs(x3, gm);
      const Mat x4 = om + hs * k3;
      const Mat k4 = rhs(x4, g1);
      Mat next = om + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      omegas[static_cast<std::size_t>(k + 1)] = 0.5 * (next + next.transpose());
      cost += (hs / 6.0) * (om.trace() + 2.0 * x2.trace() + 2.0 * x3.trace() + x4.trace());
    }
    if (!grad) return cost;

    grad->setZero(num_vars());
    const Mat eye = Mat::Identity(m, m);
    // Adjoint of F(X, g) = A X + X A^T + Q - g^2 X S X.
    auto adj_x = [&](const Mat& kb, const Mat& x, double g) -> Mat {
      Mat r = A.transpose() * kb + kb * A;
      if (g != 0.0) r.noalias() -= (g * g) * (kb * x * info + info * x * kb);
      return r;
    };
    auto adj_g = [&](const Mat& kb, const Mat& x, double g) -> double {
      if (g == 0.0) return 0.0;
      return -2.0 * g * (kb.cwiseProduct(x * info * x)).sum();
    };
    std::vector<double> gbar(static_cast<std::size_t>(n_ * per), 0.0);
    Mat wbar = Mat::Zero(m, m);  // adjoint of omega_{k+1}
    for (int k = steps - 1; k >= 0; --k) {
      const Mat& om = omegas[static_cast<std::size_t>(k)];
      const double g0 = g_at(k, 0).value, gm = g_at(k, 1).value, g1 = g_at(k, 2).value;
      // Recompute the stages of this step.
      const Mat k1 = rhs(om, g0);
      const Mat x2 = om + 0.5 * hs * k1;
      const Mat k2 = rhs(x2, gm);
      const Mat x3 = om + 0.5 * hs * k2;
      const Mat k3 = rhs(x3, gm);
      const Mat x4 = om + hs * k3;

      const Mat pbar = 0.5 * (wbar + wbar.transpose());
      Mat ombar = pbar + (hs / 6.0) * eye;
      Mat k1b = (hs / 6.0) * pbar;
      Mat k2b = (hs / 3.0) * pbar;
      Mat k3b = (hs / 3.0) * pbar;
      const Mat k4b = (hs / 6.0) * pbar;
      Mat x4b = (hs / 6.0) * eye + adj_x(k4b, x4, g1);
      double gb0 = 0.0, gbm = 0.0, gb1 = adj_g(k4b, x4, g1);
      ombar += x4b;
      k3b += hs * x4b;
      Mat x3b = (hs / 3.0) * eye + adj_x(k3b, x3, gm);
      gbm += adj_g(k3b, x3, gm);
      ombar += x3b;
      k2b += 0.5 * hs * x3b;
      Mat x2b = (hs / 3.0) * eye + adj_x(k2b, x2, gm);
      gbm += adj_g(k2b, x2, gm);
      ombar += x2b;
      k1b += 0.5 * hs * x2b;
      ombar += adj_x(k1b, om, g0);
      gb0 += adj_g(k1b, om, g0);
      wbar = ombar;

      const int j = k / s_;
      const int q = 2 * (k % s_);
      gbar[static_cast<std::size_t>(j * per + q)] += gb0;
      gbar[static_cast<std::size_t>(j * per + q + 1)] += gbm;
      gbar[static_cast<std::size_t>(j * per + q + 2)] += gb1;
    }
    for (int j = 0; j < n_; ++j) {
      for (int q = 0; q < per; ++q) {
        const double gb = gbar[static_cast<std::size_t>(j * per + q)];
        if (gb == 0.0) continue;
        const double th = static_cast<double>(q) / (2 * s_);
        const Vec2 dg = gb * gam_[static_cast<std::size_t>(j * per + q)].gradient;
        if (j > 0) grad->segment<2>(2 * (j - 1)) += (1.0 - th) * dg;
        if (j + 1 < n_) grad->segment<2>(2 * j) += th * dg;
      }
    }
    return cost;
  }

  const MonitorProblem& p_;
  int n_;
  int s_;
  double h_;
  int num_path_ = 0;
  mutable std::vector<QualityValue> gam_;
};

namespace detail {

/// RK4 substeps per interval such that h * lambda <= 1 for a bound lambda on
/// the Riccati Jacobian along the segment (Omega <= Omega0 + Q tau, gamma <= 1).
inline int stable_substeps(const MonitorProblem& p, const MonitorOptions& opt) {
  const Target& t = p.targets[static_cast<std::size_t>(p.resident)];
  auto norm2 = [](const CovMatrix& m) { return m.jacobiSvd().singularValues()(0); };
  const double omega = norm2(p.omega0[static_cast<std::size_t>(p.resident)]) + norm2(t.Q) * p.tau;
  const double lambda = 2.0 * norm2(t.A) + 2.0 * norm2(t.info) * omega;
  const double h = p.tau / opt.intervals;
  const int s = static_cast<int>(std::ceil(h * lambda));
  return std::clamp(s, opt.substeps, std::max(opt.substeps, opt.max_substeps));
}

inline double min_duration(const MonitorProblem& p) { return min_transit_time(p.entry, p.exit, p.region.drift()); }

inline bool is_singular_duration(const MonitorProblem& p) {
  const double delta = min_duration(p);
  return p.tau <= delta * (1.0 + 1e-9) + 1e-12;
}

/// Central-difference Hessian of the resident cost from adjoint gradients.
inline Eigen::MatrixXd fd_hessian(const MonitorTranscription& tr, const Eigen::VectorXd& y) {
  const auto n = y.size();
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd yp = y, gp(n), gm(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double eps = 1e-5 * std::max(1.0, std::abs(y(i)));
    yp(i) = y(i) + eps;
    tr.resident_cost(tr.nodes_from(yp), &gp);
    yp(i) = y(i) - eps;
    tr.resident_cost(tr.nodes_from(yp), &gm);
    hess.col(i) = (gp - gm) / (2.0 * eps);
    yp(i) = y(i);
  }
  return 0.5 * (hess + hess.transpose());
}

// Primal-dual barrier method over the interior nodes. Constraints are kept
// strictly feasible; the objective Hessian is a damped BFGS approximation and
// the constraint curvature is exact.
inline void barrier_solve(const MonitorTranscription& tr, const MonitorOptions& opt, Eigen::VectorXd y,
                          const MonitorSolution* warm, MonitorSolution& sol) {
  const int n = tr.num_vars();
  const int m = tr.num_constraints();
  std::vector<Vec2> a = tr.nodes_from(y);
  Eigen::VectorXd s = tr.slacks(a);

  const double mu_min = 0.1 * opt.tol_comp;
  double mu;
  Eigen::VectorXd lambda(m);
  Eigen::MatrixXd b;
  const bool use_warm = warm && warm->multipliers.size() == m && warm->hessian_approx.rows() == n;
  if (use_warm) {
    lambda = warm->multipliers;
    b = warm->hessian_approx;
    for (int i = 0; i < m; ++i) lambda(i) = std::max(lambda(i), 1e-10 / s(i));
    mu = std::max(mu_min, lambda.cwiseProduct(s).mean());
  } else {
    mu = opt.mu_init;
    lambda = (mu * s.cwiseInverse());
    b = Eigen::MatrixXd::Identity(n, n);
  }
  bool scaled = use_warm;

  Eigen::VectorXd grad(n);
  double f = tr.resident_cost(a, &grad);
  auto barrier = [&](double fv, const Eigen::VectorXd& sv) { return fv - mu * sv.array().log().sum(); };

  Eigen::VectorXd lag(n);
  auto lagrangian_grad = [&](const std::vector<Vec2>& av, const Eigen::VectorXd& gv, const Eigen::VectorXd& lv) {
    Eigen::VectorXd out = gv;
    tr.add_jacobian_transpose(av, lv, out);
    return out;
  };

  sol.status = MonitorStatus::max_iterations;
  double last_shift = 0.0;
  double f_prev = std::numeric_limits<double>::infinity();
  int acceptable_run = 0;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    lag = lagrangian_grad(a, grad, lambda);
    const double stat = lag.lpNorm<Eigen::Infinity>();
    const double comp = lambda.cwiseProduct(s).maxCoeff();
    sol.stationarity = stat;
    sol.complementarity = comp;
    if (stat <= opt.tol_stat && comp <= opt.tol_comp) {
      sol.status = MonitorStatus::converged;
      break;
    }
    // Near-optimal and no longer moving the objective: stop early.
    const bool near = stat <= opt.acceptable_stat && comp <= opt.acceptable_comp &&
                      std::abs(f - f_prev) <= opt.acceptable_change * std::max(1.0, std::abs(f));
    acceptable_run = near ? acceptable_run + 1 : 0;
    if (acceptable_run >= opt.acceptable_iterations) {
      sol.status = MonitorStatus::acceptable;
      break;
    }
    f_prev = f;
    // Barrier subproblem tolerance reached: shrink mu.
    const double e_mu = std::max(stat, (lambda.cwiseProduct(s).array() - mu).abs().maxCoeff());
    if (e_mu <= 10.0 * mu && mu > mu_min) mu = std::max(mu_min, std::min(0.2 * mu, std::pow(mu, 1.5)));

    if (opt.hessian_refresh > 0 && it % opt.hessian_refresh == 0) b = fd_hessian(tr, y);
    const Eigen::VectorXd sigma = lambda.cwiseQuotient(s);
    Eigen::MatrixXd k = b;
    tr.add_constraint_curvature(a, lambda, sigma, k);
    Eigen::VectorXd rhs = grad;
    tr.add_jacobian_transpose(a, mu * s.cwiseInverse(), rhs);
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    double shift = 0.0;
    if (llt.info() != Eigen::Success) {
      // Inertia correction: smallest regularisation that makes K positive
      // definite, starting from a fraction of the last one that worked.
      shift = last_shift == 0.0 ? 1e-4 : std::max(1e-20, last_shift / 3.0);
      for (llt.compute(k + shift * Eigen::MatrixXd::Identity(n, n)); llt.info() != Eigen::Success;
           llt.compute(k + shift * Eigen::MatrixXd::Identity(n, n))) {
        shift *= last_shift == 0.0 ? 100.0 : 8.0;
      }
      last_shift = shift;
    }
    const Eigen::VectorXd dy = -llt.solve(rhs);

    // Slack change along dy to first order: ds = -J_c dy = J_s dy.
    // Dual direction from the linearised complementarity lambda * s = mu.
    Eigen::VectorXd ds_lin(m);
    {
      const std::vector<Vec2> da = [&] {
        std::vector<Vec2> v(a.size(), Vec2::Zero());
        for (int j = 1; j + 1 < static_cast<int>(a.size()); ++j) v[static_cast<std::size_t>(j)] = dy.segment<2>(2 * (j - 1));
        return v;
      }();
      const int nint = tr.intervals();
      const double h = tr.step();
      for (int j = 0; j < nint; ++j) {
        const Vec2 u = tr.control(a, j);
        ds_lin(j) = -2.0 * u.dot((da[static_cast<std::size_t>(j + 1)] - da[static_cast<std::size_t>(j)]) / h);
      }
      int c = nint;
      const auto& hs = tr.problem().region.halfspaces();
      for (int j = 1; j < nint; ++j) {
        for (const auto& hsp : hs) ds_lin(c++) = -hsp.normal.dot(da[static_cast<std::size_t>(j)]);
      }
    }
    const Eigen::VectorXd dlambda = (mu * s.cwiseInverse() - lambda) - sigma.cwiseProduct(ds_lin);

    logger().debug("ipm it {:3d} f {:.10e} stat {:.2e} comp {:.2e} mu {:.1e} shift {:.1e}", it, f, stat, comp, mu,
                   shift);
    const double phi0 = barrier(f, s);
    const double dphi = rhs.dot(dy);
    const double tau_fb = std::max(0.99, 1.0 - mu);

    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd y_new, s_new, grad_new(n);
    std::vector<Vec2> a_new;
    double f_new = f;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      y_new = y + alpha * dy;
      a_new = tr.nodes_from(y_new);
      s_new = tr.slacks(a_new);
      if ((s_new.array() < (1.0 - tau_fb) * s.array()).any()) continue;
      f_new = tr.resident_cost(a_new, nullptr);
      if (barrier(f_new, s_new) <= phi0 + 1e-4 * alpha * dphi || alpha * dy.lpNorm<Eigen::Infinity>() < 1e-14) {
        accepted = true;
        break;
      }
    }
    logger().debug("ipm it {:3d} alpha {:.2e} |dy| {:.2e} ls accepted {}", it, alpha, dy.lpNorm<Eigen::Infinity>(),
                   accepted);
    if (!accepted) {
      sol.status = MonitorStatus::line_search_failed;
      break;
    }
    f_new = tr.resident_cost(a_new, &grad_new);

    // Dual step with fraction to the boundary, then keep lambda near mu / s.
    double alpha_d = 1.0;
    for (int i = 0; i < m; ++i) {
      if (dlambda(i) < 0.0) alpha_d = std::min(alpha_d, -tau_fb * lambda(i) / dlambda(i));
    }
    lambda += alpha_d * dlambda;
    for (int i = 0; i < m; ++i) {
      lambda(i) = std::clamp(lambda(i), mu / (1e10 * s_new(i)), 1e10 * mu / s_new(i));
    }

    // Damped BFGS update of the objective Hessian.
    const Eigen::VectorXd step = y_new - y;
    const Eigen::VectorXd dg = grad_new - grad;
    const double sy = step.dot(dg);
    if (!scaled && sy > 0.0) {
      b = (dg.squaredNorm() / sy) * Eigen::MatrixXd::Identity(n, n);
      scaled = true;
    }
    const Eigen::VectorXd bs = b * step;
    const double sbs = step.dot(bs);
    if (sbs > 1e-300) {
      const double theta = sy >= 0.2 * sbs ? 1.0 : 0.8 * sbs / (sbs - sy);
      const Eigen::VectorXd r = theta * dg + (1.0 - theta) * bs;
      const double sr = step.dot(r);
      if (sr > 1e-300) b += r * r.transpose() / sr - bs * bs.transpose() / sbs;
    }

    y = std::move(y_new);
    a = std::move(a_new);
    s = std::move(s_new);
    f = f_new;
    grad = grad_new;
  }
  sol.iterations = it;
  sol.hessian_approx = std::move(b);
  sol.multipliers = std::move(lambda);
  tr.simulate(a, sol);
}

inline bool strictly_feasible(const MonitorTranscription& tr, const std::vector<Vec2>& a) {
  return (tr.slacks(a).array() > 0.0).all();
}

}  // namespace detail

/// Solves the local monitoring problem for a fixed duration. A previous
/// solution of the same segment may be passed as warm start.
inline MonitorSolution solve_monitor(const MonitorProblem& problem, const MonitorOptions& opt = {},
                                     const MonitorSolution* warm = nullptr) {
  const double delta = detail::min_duration(problem);
  if (problem.tau < delta * (1.0 - 1e-9) - 1e-12) {
    throw InfeasibleError("monitor problem: exit not reachable from entry within tau (tau = " +
                          std::to_string(problem.tau) + ", minimum " + std::to_string(delta) + ")");
  }
  if (!problem.region.contains(problem.entry) || !problem.region.contains(problem.exit)) {
    throw InfeasibleError("monitor problem: entry and exit must lie in the region");
  }
  MonitorTranscription tr(problem, opt.intervals, detail::stable_substeps(problem, opt));
  MonitorSolution sol;
  sol.tau = problem.tau;
  sol.substeps = tr.substeps();
  if (detail::is_singular_duration(problem)) {
    sol.status = MonitorStatus::singular;
    tr.simulate(tr.line_nodes(), sol);
    return sol;
  }
  const std::vector<Vec2> cold = tr.detour_nodes();
  if (!detail::strictly_feasible(tr, cold)) {
    // Only reachable when tau exceeds the minimum time by a rounding-level margin.
    sol.status = MonitorStatus::singular;
    tr.simulate(tr.line_nodes(), sol);
    return sol;
  }
  std::vector<Vec2> start = cold;
  const MonitorSolution* warm_use = nullptr;
  if (warm && static_cast<int>(warm->nodes.size()) == opt.intervals + 1 && warm->status != MonitorStatus::singular) {
    for (double th : {0.0, 1e-3, 1e-2, 0.1, 0.5}) {
      std::vector<Vec2> blend(warm->nodes.size());
      for (std::size_t j = 0; j < blend.size(); ++j) blend[j] = (1.0 - th) * warm->nodes[j] + th * cold[j];
      blend.front() = problem.entry;
      blend.back() = problem.exit;
      if (detail::strictly_feasible(tr, blend)) {
        start = std::move(blend);
        warm_use = warm;
        break;
      }
    }
  }
  detail::barrier_solve(tr, opt, tr.vars_from(start), warm_use, sol);
  if (warm_use && !sol.ok()) {
    // A stale warm start can stall the line search; retry from the cold path.
    MonitorSolution retry;
    retry.tau = problem.tau;
    retry.substeps = tr.substeps();
    detail::barrier_solve(tr, opt, tr.vars_from(cold), nullptr, retry);
    if (retry.ok() || retry.cost < sol.cost) sol = std::move(retry);
  }
  return sol;
}

struct Sensitivity {
  double value = 0.0;
  bool one_sided = false;
  double step = 0.0;
};

/// dM*/dtau by central differences of re-solved problems (warm-started from
/// the given solution); forward differences when tau - h is infeasible.
inline Sensitivity sensitivity(const MonitorProblem& problem, const MonitorSolution& solution,
                               const MonitorOptions& opt = {}, std::optional<double> step = std::nullopt) {
  const double h = step.value_or(std::max(opt.fd_min, opt.fd_rel * problem.tau));
  // Perturbed solves share the integration grid density of the base solve.
  MonitorOptions fixed = opt;
  if (solution.substeps > 0) fixed.substeps = fixed.max_substeps = solution.substeps;
  const double delta = detail::min_duration(problem);
  MonitorProblem plus = problem;
  plus.tau = problem.tau + h;
  const MonitorSolution sp = solve_monitor(plus, fixed, &solution);
  if (problem.tau - h >= delta * (1.0 + 1e-9) + 1e-12) {
    MonitorProblem minus = problem;
    minus.tau = problem.tau - h;
    const MonitorSolution sm = solve_monitor(minus, fixed, &solution);
    return Sensitivity{(sp.cost - sm.cost) / (2.0 * h), false, h};
  }
  return Sensitivity{(sp.cost - solution.cost) / h, true, h};
}

}  // namespace hyperm
