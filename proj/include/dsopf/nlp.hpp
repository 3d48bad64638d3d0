#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dsopf/error.hpp"

extern "C" {
void dsytrf_(const char* uplo, const int* n, double* a, const int* lda, int* ipiv, double* work,
             const int* lwork, int* info);
void dsytrs_(const char* uplo, const int* n, const int* nrhs, const double* a, const int* lda,
             const int* ipiv, double* b, const int* ldb, int* info);
}

namespace dsopf {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// min f(x)  s.t.  g(x) = 0,  h(x) >= 0,  lower <= x <= upper.
/// Jacobians are (rows = constraints) x n. The optional Hessian callback
/// returns the full symmetric matrix of
///   obj_factor * ∇²f + Σ eq_weights_k ∇²g_k + Σ ineq_weights_k ∇²h_k;
/// without it the solver differences the Lagrangian gradient.
struct NlpProblem {
  int n = 0;
  int num_eq = 0;
  int num_ineq = 0;
  Vector lower;
  Vector upper;
  std::function<double(const Vector&)> objective;
  std::function<Vector(const Vector&)> gradient;
  std::function<Vector(const Vector&)> eq;
  std::function<SparseMatrix(const Vector&)> eq_jacobian;
  std::function<Vector(const Vector&)> ineq;
  std::function<SparseMatrix(const Vector&)> ineq_jacobian;
  std::function<SparseMatrix(const Vector&, double, const Vector&, const Vector&)> hessian;
};

enum class NlpStatus { optimal, max_iter, infeasible_detected };

inline const char* to_string(NlpStatus s) {
  switch (s) {
    case NlpStatus::optimal: return "optimal";
    case NlpStatus::max_iter: return "max_iter";
    case NlpStatus::infeasible_detected: return "infeasible_detected";
  }
  return "unknown";
}

/// Multipliers for L = f + y_eqᵀ g − w_ineqᵀ h − z_lowerᵀ(x − l) − z_upperᵀ(u − x).
struct NlpDuals {
  Vector y_eq;
  Vector w_ineq;
  Vector z_lower;
  Vector z_upper;
};

struct NlpSolution {
  Vector x;
  double objective_value = 0.0;
  double kkt_residual = 0.0;
  double eq_violation = 0.0;
  double ineq_violation = 0.0;
  NlpStatus status = NlpStatus::max_iter;
  int iterations = 0;
  NlpDuals duals;
  std::vector<double> mu_history;  // barrier value of each outer iteration
  double objective_scale = 1.0;    // factor applied to f inside the solver
};

struct NlpOptions {
  double kkt_tol = 1e-6;
  double feas_tol = 1e-6;
  int max_iter = 200;
  double mu_init = 0.1;
  double bound_push = 1e-2;
  bool scale_objective = true;
};

/// Optimality measures at (x, duals) for the problem with objective
/// multiplied by `objective_scale` (duals are scaled alike). Stationarity and
/// complementarity are divided by multiplier-size factors
///   s_d = max(100, (|y|₁ + |w|₁ + |z_l|₁ + |z_u|₁) / (m_e + m_i + n_free)) / 100,
///   s_c = max(100, (|w|₁ + |z_l|₁ + |z_u|₁) / (m_i + n_free)) / 100,
/// with complementarity max(z_l (x − l), z_u (u − x), w |h|). Fixed variables
/// (lower == upper) are excluded.
struct KktResiduals {
  double stationarity = 0.0;
  double eq_violation = 0.0;
  double ineq_violation = 0.0;
  double complementarity = 0.0;
  double scaled_stationarity = 0.0;
  double scaled_complementarity = 0.0;

  double overall() const {
    return std::max({scaled_stationarity, eq_violation, ineq_violation, scaled_complementarity});
  }
};

inline KktResiduals kkt_residuals(const NlpProblem& p, const Vector& x, const NlpDuals& unscaled,
                                  double objective_scale = 1.0) {
  KktResiduals r;
  NlpDuals d{unscaled.y_eq * objective_scale, unscaled.w_ineq * objective_scale,
             unscaled.z_lower * objective_scale, unscaled.z_upper * objective_scale};
  Vector stat = p.gradient(x) * objective_scale;
  if (p.num_eq > 0) {
    Vector g = p.eq(x);
    r.eq_violation = g.cwiseAbs().maxCoeff();
    stat += p.eq_jacobian(x).transpose() * d.y_eq;
  }
  Vector h;
  if (p.num_ineq > 0) {
    h = p.ineq(x);
    r.ineq_violation = std::max(0.0, -h.minCoeff());
    stat -= p.ineq_jacobian(x).transpose() * d.w_ineq;
  }
  stat += d.z_upper - d.z_lower;
  int n_free = 0;
  double mult_l1 = d.y_eq.lpNorm<1>() + d.w_ineq.lpNorm<1>();
  double bound_l1 = d.w_ineq.lpNorm<1>();
  for (int j = 0; j < p.n; ++j) {
    if (p.lower[j] == p.upper[j]) continue;
    ++n_free;
    r.stationarity = std::max(r.stationarity, std::abs(stat[j]));
    mult_l1 += std::abs(d.z_lower[j]) + std::abs(d.z_upper[j]);
    bound_l1 += std::abs(d.z_lower[j]) + std::abs(d.z_upper[j]);
    if (std::isfinite(p.lower[j]))
      r.complementarity = std::max(r.complementarity, std::abs(d.z_lower[j] * (x[j] - p.lower[j])));
    if (std::isfinite(p.upper[j]))
      r.complementarity = std::max(r.complementarity, std::abs(d.z_upper[j] * (p.upper[j] - x[j])));
  }
  for (int k = 0; k < p.num_ineq; ++k)
    r.complementarity = std::max(r.complementarity, std::abs(d.w_ineq[k] * h[k]));
  const int count_d = p.num_eq + p.num_ineq + n_free;
  const int count_c = p.num_ineq + n_free;
  const double s_d = count_d > 0 ? std::max(100.0, mult_l1 / count_d) / 100.0 : 1.0;
  const double s_c = count_c > 0 ? std::max(100.0, bound_l1 / count_c) / 100.0 : 1.0;
  r.scaled_stationarity = r.stationarity / s_d;
  r.scaled_complementarity = r.complementarity / s_c;
  return r;
}

namespace detail {

/// Dense symmetric-indefinite factorization (Bunch-Kaufman) that reports
/// inertia.
class SymmetricIndefiniteSolver {
public:
  struct Inertia {
    int positive = 0;
    int negative = 0;
    int zero = 0;
  };

  /// Factors D K D, where D is a symmetric Ruiz equilibration; inertia is
  /// unchanged by the congruence.
  bool factor(const Eigen::MatrixXd& k) {
    n_ = static_cast<int>(k.rows());
    inertia_ = {};
    if (n_ == 0) return true;
    scale_ = Vector::Ones(n_);
    lu_ = k;
    for (int pass = 0; pass < 3; ++pass) {
      Vector r = lu_.cwiseAbs().rowwise().maxCoeff();
      for (int i = 0; i < n_; ++i) r[i] = r[i] > 0.0 ? 1.0 / std::sqrt(r[i]) : 1.0;
      lu_ = r.asDiagonal() * lu_ * r.asDiagonal();
      scale_ = scale_.cwiseProduct(r);
    }
    ipiv_.assign(n_, 0);
    int info = 0, lwork = -1;
    double query = 0.0;
    dsytrf_("L", &n_, lu_.data(), &n_, ipiv_.data(), &query, &lwork, &info);
    lwork = std::max(1, static_cast<int>(query));
    work_.resize(lwork);
    dsytrf_("L", &n_, lu_.data(), &n_, ipiv_.data(), work_.data(), &lwork, &info);
    if (info < 0) return false;
    compute_inertia();
    return true;
  }

  const Inertia& inertia() const { return inertia_; }

  Vector solve(const Vector& rhs) const {
    if (n_ == 0) return rhs;
    Vector x = scale_.cwiseProduct(rhs);
    int nrhs = 1, info = 0;
    dsytrs_("L", &n_, &nrhs, lu_.data(), &n_, ipiv_.data(), x.data(), &n_, &info);
    return scale_.cwiseProduct(x);
  }

private:
  void compute_inertia() {
    constexpr double tiny = 1e-13;
    auto classify = [&](double d) {
      if (std::abs(d) <= tiny) ++inertia_.zero;
      else if (d > 0) ++inertia_.positive;
      else ++inertia_.negative;
    };
    for (int k = 0; k < n_;) {
      if (ipiv_[k] > 0 || k + 1 == n_) {
        classify(lu_(k, k));
        ++k;
      } else {
        const double a = lu_(k, k), b = lu_(k + 1, k), c = lu_(k + 1, k + 1);
        const double tr = a + c;
        const double disc = std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
        classify(0.5 * tr + disc);
        classify(0.5 * tr - disc);
        k += 2;
      }
    }
  }

  int n_ = 0;
  Eigen::MatrixXd lu_;
  Vector scale_;
  std::vector<int> ipiv_;
  std::vector<double> work_;
  Inertia inertia_;
};

}  // namespace detail

/// Primal-dual interior-point method: inequalities get slacks, bounds and
/// slacks get log barriers with a monotonically decreasing μ, Newton steps
/// come from the condensed KKT system with inertia correction, and step
/// lengths from backtracking on an ℓ1 exact-penalty merit function with a
/// second-order correction. Returns the iterate with the lowest optimality
/// error when it stops early.
class InteriorPointSolver {
public:
  InteriorPointSolver(const NlpProblem& problem, NlpOptions options)
      : p_(problem), opt_(options) {}

  NlpSolution solve(const Vector& x0, const NlpDuals* warm = nullptr) {
    setup(x0, warm);
    NlpSolution best;
    double best_error = std::numeric_limits<double>::infinity();
    std::vector<double> violation_history;
    int iter = 0;
    mu_history_.push_back(mu_);
    NlpStatus status = NlpStatus::max_iter;

    while (true) {
      evaluate_derivatives();
      const KktResiduals res = kkt_residuals(p_, x_, unscaled_duals(), obj_scale_);
      const double error = res.overall();
      const double violation = std::max(res.eq_violation, res.ineq_violation);
      if (error < best_error || !best.x.size()) {
        best_error = error;
        best = snapshot(res, iter);
      }
      if (error <= opt_.kkt_tol && violation <= opt_.feas_tol) {
        status = NlpStatus::optimal;
        best = snapshot(res, iter);
        break;
      }
      violation_history.push_back(violation);
      if (looks_infeasible(violation_history)) {
        status = NlpStatus::infeasible_detected;
        break;
      }
      if (iter >= opt_.max_iter) break;

      update_barrier();
      if (!compute_newton_step()) break;
      line_search();
      ++iter;
    }
    best.status = status;
    best.mu_history = mu_history_;
    best.objective_scale = obj_scale_;
    if (status != NlpStatus::optimal) best.iterations = iter;
    return best;
  }

private:
  struct Step {
    Vector dx, ds, dy_e, dy_i, dz_l, dz_u, dv;
  };

  // ---- setup -------------------------------------------------------------

  void setup(const Vector& x0, const NlpDuals* warm) {
    const int n = p_.n;
    if (x0.size() != n || p_.lower.size() != n || p_.upper.size() != n)
      throw DimensionError("NLP dimensions are inconsistent");
    free_.clear();
    x_ = x0;
    for (int j = 0; j < n; ++j) {
      const double l = p_.lower[j], u = p_.upper[j];
      if (l > u) throw DimensionError("variable " + std::to_string(j) + " has lower > upper");
      if (l == u) {
        x_[j] = l;
        continue;
      }
      free_.push_back(j);
      double pl = opt_.bound_push * std::max(1.0, std::abs(l));
      double pu = opt_.bound_push * std::max(1.0, std::abs(u));
      if (std::isfinite(l) && std::isfinite(u)) {
        pl = std::min(pl, opt_.bound_push * (u - l));
        pu = std::min(pu, opt_.bound_push * (u - l));
      }
      if (std::isfinite(l)) x_[j] = std::max(x_[j], l + pl);
      if (std::isfinite(u)) x_[j] = std::min(x_[j], u - pu);
    }
    nf_ = static_cast<int>(free_.size());
    me_ = p_.num_eq;
    mi_ = p_.num_ineq;

    Vector grad = p_.gradient(x_);
    obj_scale_ = 1.0;
    if (opt_.scale_objective) {
      const double gmax = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
      if (gmax > 100.0) obj_scale_ = 100.0 / gmax;
    }

    mu_ = opt_.mu_init;
    mu_min_ = std::min(opt_.kkt_tol, opt_.feas_tol) * 1e-3;
    s_ = Vector::Zero(mi_);
    if (mi_ > 0) {
      Vector h = p_.ineq(x_);
      for (int k = 0; k < mi_; ++k)
        s_[k] = std::max(h[k], opt_.bound_push * std::max(1.0, std::abs(h[k])));
    }
    y_e_ = Vector::Zero(me_);
    y_i_ = Vector::Zero(mi_);
    z_l_ = Vector::Zero(n);
    z_u_ = Vector::Zero(n);
    v_ = Vector::Ones(mi_);
    for (int j : free_) {
      if (std::isfinite(p_.lower[j])) z_l_[j] = 1.0;
      if (std::isfinite(p_.upper[j])) z_u_[j] = 1.0;
    }
    if (warm) {
      auto take = [](const Vector& src, Vector& dst, double factor, double floor_value) {
        if (src.size() != dst.size()) return;
        for (int k = 0; k < dst.size(); ++k) dst[k] = std::max(src[k] * factor, floor_value);
      };
      if (warm->y_eq.size() == me_) y_e_ = warm->y_eq * obj_scale_;
      if (warm->w_ineq.size() == mi_) {
        y_i_ = -warm->w_ineq * obj_scale_;
        take(warm->w_ineq, v_, obj_scale_, mu_);
      }
      for (int j : free_) {
        if (std::isfinite(p_.lower[j]) && warm->z_lower.size() == n)
          z_l_[j] = std::max(warm->z_lower[j] * obj_scale_, mu_);
        if (std::isfinite(p_.upper[j]) && warm->z_upper.size() == n)
          z_u_[j] = std::max(warm->z_upper[j] * obj_scale_, mu_);
      }
    }
    delta_w_last_ = 0.0;
    nu_ = 1.0;
    mu_history_.clear();
  }

  // ---- evaluation --------------------------------------------------------

  void evaluate_derivatives() {
    grad_ = p_.gradient(x_) * obj_scale_;
    if (me_ > 0) {
      g_ = p_.eq(x_);
      jg_ = p_.eq_jacobian(x_);
    }
    if (mi_ > 0) {
      h_ = p_.ineq(x_);
      jh_ = p_.ineq_jacobian(x_);
    }
  }

  NlpDuals unscaled_duals() const {
    NlpDuals d;
    d.y_eq = y_e_ / obj_scale_;
    d.w_ineq = -y_i_ / obj_scale_;
    d.z_lower = z_l_ / obj_scale_;
    d.z_upper = z_u_ / obj_scale_;
    return d;
  }

  NlpSolution snapshot(const KktResiduals& res, int iter) const {
    NlpSolution s;
    s.x = x_;
    s.objective_value = p_.objective(x_);
    s.kkt_residual = res.overall();
    s.eq_violation = res.eq_violation;
    s.ineq_violation = res.ineq_violation;
    s.iterations = iter;
    s.duals = unscaled_duals();
    return s;
  }

  bool looks_infeasible(const std::vector<double>& history) const {
    constexpr int window = 30;
    const int k = static_cast<int>(history.size());
    if (k < 2 * window) return false;
    const double now = history.back();
    if (now <= 1e4 * opt_.feas_tol) return false;
    const double before = *std::min_element(history.end() - 2 * window, history.end() - window);
    const double recent = *std::min_element(history.end() - window, history.end());
    return recent >= 0.99 * before && mu_ <= 10.0 * mu_min_ + 1e-300;
  }

  // ---- barrier -----------------------------------------------------------

  double barrier_error() const {
    Vector r = grad_;
    if (me_ > 0) r += jg_.transpose() * y_e_;
    if (mi_ > 0) r += jh_.transpose() * y_i_;
    r += z_u_ - z_l_;
    double stat = 0.0, compl_err = 0.0, l1 = y_e_.lpNorm<1>() + y_i_.lpNorm<1>();
    for (int j : free_) {
      stat = std::max(stat, std::abs(r[j]));
      l1 += z_l_[j] + z_u_[j];
      if (std::isfinite(p_.lower[j]))
        compl_err = std::max(compl_err, std::abs((x_[j] - p_.lower[j]) * z_l_[j] - mu_));
      if (std::isfinite(p_.upper[j]))
        compl_err = std::max(compl_err, std::abs((p_.upper[j] - x_[j]) * z_u_[j] - mu_));
    }
    double feas = 0.0;
    if (me_ > 0) feas = g_.cwiseAbs().maxCoeff();
    for (int k = 0; k < mi_; ++k) {
      stat = std::max(stat, std::abs(-y_i_[k] - v_[k]));
      feas = std::max(feas, std::abs(h_[k] - s_[k]));
      compl_err = std::max(compl_err, std::abs(s_[k] * v_[k] - mu_));
      l1 += v_[k];
    }
    const int count = nf_ + me_ + 2 * mi_;
    const double s_d = count > 0 ? std::max(100.0, l1 / count) / 100.0 : 1.0;
    return std::max({stat / s_d, feas, compl_err / s_d});
  }

  void update_barrier() {
    constexpr double kappa_eps = 10.0, kappa_mu = 0.2, theta_mu = 1.5;
    while (mu_ > mu_min_ && barrier_error() <= kappa_eps * mu_) {
      mu_ = std::max(mu_min_, std::min(kappa_mu * mu_, std::pow(mu_, theta_mu)));
      mu_history_.push_back(mu_);
    }
  }

  // ---- Newton step -------------------------------------------------------

  Eigen::MatrixXd lagrangian_hessian() {
    Eigen::MatrixXd w(p_.n, p_.n);
    if (p_.hessian) {
      w = Eigen::MatrixXd(p_.hessian(x_, obj_scale_, y_e_, y_i_));
    } else {
      auto lag_grad = [&](const Vector& x) {
        Vector g = p_.gradient(x) * obj_scale_;
        if (me_ > 0) g += p_.eq_jacobian(x).transpose() * y_e_;
        if (mi_ > 0) g += p_.ineq_jacobian(x).transpose() * y_i_;
        return g;
      };
      w.setZero();
      for (int j : free_) {
        const double h = 1e-6 * std::max(1.0, std::abs(x_[j]));
        Vector xp = x_, xm = x_;
        xp[j] += h;
        xm[j] -= h;
        w.col(j) = (lag_grad(xp) - lag_grad(xm)) / (2.0 * h);
      }
      w = 0.5 * (w + w.transpose()).eval();
    }
    return w;
  }

  bool compute_newton_step() {
    const int n = p_.n;
    Eigen::MatrixXd w_full = lagrangian_hessian();
    w_ff_.resize(nf_, nf_);
    for (int a = 0; a < nf_; ++a)
      for (int b = 0; b < nf_; ++b) w_ff_(a, b) = w_full(free_[a], free_[b]);

    sigma_x_ = Vector::Zero(nf_);
    for (int a = 0; a < nf_; ++a) {
      const int j = free_[a];
      if (std::isfinite(p_.lower[j])) sigma_x_[a] += z_l_[j] / (x_[j] - p_.lower[j]);
      if (std::isfinite(p_.upper[j])) sigma_x_[a] += z_u_[j] / (p_.upper[j] - x_[j]);
    }
    jg_f_ = Eigen::MatrixXd::Zero(me_, nf_);
    jh_f_ = Eigen::MatrixXd::Zero(mi_, nf_);
    if (me_ > 0 || mi_ > 0) {
      std::vector<int> col_of(n, -1);
      for (int a = 0; a < nf_; ++a) col_of[free_[a]] = a;
      auto scatter = [&](const SparseMatrix& sm, Eigen::MatrixXd& dense) {
        for (int c = 0; c < sm.outerSize(); ++c)
          for (SparseMatrix::InnerIterator it(sm, c); it; ++it)
            if (col_of[it.col()] >= 0) dense(it.row(), col_of[it.col()]) += it.value();
      };
      if (me_ > 0) scatter(jg_, jg_f_);
      if (mi_ > 0) scatter(jh_, jh_f_);
    }

    // Barrier gradient of the Lagrangian on free variables.
    Vector r_full = grad_;
    if (me_ > 0) r_full += jg_.transpose() * y_e_;
    if (mi_ > 0) r_full += jh_.transpose() * y_i_;
    r_x_.resize(nf_);
    for (int a = 0; a < nf_; ++a) {
      const int j = free_[a];
      double r = r_full[j];
      if (std::isfinite(p_.lower[j])) r -= mu_ / (x_[j] - p_.lower[j]);
      if (std::isfinite(p_.upper[j])) r += mu_ / (p_.upper[j] - x_[j]);
      r_x_[a] = r;
    }

    const int dim = nf_ + me_;
    double delta_w = 0.0, delta_c = 0.0;
    bool first_correction = true;
    for (int attempt = 0; attempt < 60; ++attempt) {
      d_s_ = Vector(mi_);
      d_i_ = Vector(mi_);
      for (int k = 0; k < mi_; ++k) {
        d_s_[k] = v_[k] / s_[k] + delta_w;
        d_i_[k] = 1.0 / (1.0 / d_s_[k] + delta_c);
      }
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
      kkt.topLeftCorner(nf_, nf_) = w_ff_;
      kkt.topLeftCorner(nf_, nf_).diagonal() += sigma_x_ + Vector::Constant(nf_, delta_w);
      if (mi_ > 0)
        kkt.topLeftCorner(nf_, nf_) += jh_f_.transpose() * d_i_.asDiagonal() * jh_f_;
      if (me_ > 0) {
        kkt.bottomLeftCorner(me_, nf_) = jg_f_;
        kkt.topRightCorner(nf_, me_) = jg_f_.transpose();
        kkt.bottomRightCorner(me_, me_).diagonal().setConstant(-delta_c);
      }
      if (!factor_.factor(kkt)) return false;
      const auto& in = factor_.inertia();
      if (in.positive == nf_ && in.negative == me_ && in.zero == 0) {
        kkt_ = std::move(kkt);
        if (delta_w > 0.0) delta_w_last_ = delta_w;
        return true;
      }
      if (in.zero > 0 && delta_c == 0.0) {
        delta_c = 1e-8 * std::pow(mu_, 0.25);
        continue;
      }
      if (first_correction) {
        delta_w = delta_w_last_ == 0.0 ? 1e-4 : std::max(1e-20, delta_w_last_ / 3.0);
        first_correction = false;
      } else {
        delta_w *= delta_w_last_ == 0.0 ? 100.0 : 8.0;
      }
      if (delta_w > 1e40) return false;
    }
    return false;
  }

  /// Solves for the full step given the constraint residuals (g, h − s) on
  /// the right-hand side; the factorization is reused.
  Step solve_step(const Vector& c_eq, const Vector& c_ineq) {
    const int dim = nf_ + me_;
    Vector b_s(mi_), b_h(mi_);
    for (int k = 0; k < mi_; ++k) {
      b_s[k] = y_i_[k] + mu_ / s_[k];
      b_h[k] = -c_ineq[k] + b_s[k] / d_s_[k];
    }
    Vector rhs(dim);
    rhs.head(nf_) = -r_x_;
    if (mi_ > 0) rhs.head(nf_) += jh_f_.transpose() * d_i_.cwiseProduct(b_h);
    if (me_ > 0) rhs.tail(me_) = -c_eq;
    Vector sol = factor_.solve(rhs);
    for (int refine = 0; refine < 2; ++refine) {
      Vector resid = rhs - kkt_ * sol;
      if (resid.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + rhs.cwiseAbs().maxCoeff())) break;
      sol += factor_.solve(resid);
    }

    Step st;
    st.dx = Vector::Zero(p_.n);
    for (int a = 0; a < nf_; ++a) st.dx[free_[a]] = sol[a];
    st.dy_e = sol.tail(me_);
    st.dy_i = Vector(mi_);
    st.ds = Vector(mi_);
    st.dv = Vector(mi_);
    if (mi_ > 0) {
      Vector jdx = jh_f_ * sol.head(nf_);
      for (int k = 0; k < mi_; ++k) {
        st.dy_i[k] = d_i_[k] * (jdx[k] - b_h[k]);
        st.ds[k] = (b_s[k] + st.dy_i[k]) / d_s_[k];
        st.dv[k] = mu_ / s_[k] - v_[k] - v_[k] / s_[k] * st.ds[k];
      }
    }
    st.dz_l = Vector::Zero(p_.n);
    st.dz_u = Vector::Zero(p_.n);
    for (int j : free_) {
      if (std::isfinite(p_.lower[j])) {
        const double gap = x_[j] - p_.lower[j];
        st.dz_l[j] = mu_ / gap - z_l_[j] - z_l_[j] / gap * st.dx[j];
      }
      if (std::isfinite(p_.upper[j])) {
        const double gap = p_.upper[j] - x_[j];
        st.dz_u[j] = mu_ / gap - z_u_[j] + z_u_[j] / gap * st.dx[j];
      }
    }
    return st;
  }

  // ---- line search -------------------------------------------------------

  double tau() const { return std::max(0.99, 1.0 - mu_); }

  double max_primal_step(const Vector& dx, const Vector& ds) const {
    double alpha = 1.0;
    const double t = tau();
    for (int j : free_) {
      if (std::isfinite(p_.lower[j]) && dx[j] < 0.0)
        alpha = std::min(alpha, -t * (x_[j] - p_.lower[j]) / dx[j]);
      if (std::isfinite(p_.upper[j]) && dx[j] > 0.0)
        alpha = std::min(alpha, t * (p_.upper[j] - x_[j]) / dx[j]);
    }
    for (int k = 0; k < mi_; ++k)
      if (ds[k] < 0.0) alpha = std::min(alpha, -t * s_[k] / ds[k]);
    return alpha;
  }

  double max_dual_step(const Step& st) const {
    double alpha = 1.0;
    const double t = tau();
    for (int j : free_) {
      if (std::isfinite(p_.lower[j]) && st.dz_l[j] < 0.0)
        alpha = std::min(alpha, -t * z_l_[j] / st.dz_l[j]);
      if (std::isfinite(p_.upper[j]) && st.dz_u[j] < 0.0)
        alpha = std::min(alpha, -t * z_u_[j] / st.dz_u[j]);
    }
    for (int k = 0; k < mi_; ++k)
      if (st.dv[k] < 0.0) alpha = std::min(alpha, -t * v_[k] / st.dv[k]);
    return alpha;
  }

  struct Trial {
    double phi = 0.0;    // scaled barrier objective
    double theta = 0.0;  // ℓ1 constraint violation
    Vector c_eq, c_ineq;
    bool finite = true;
  };

  Trial evaluate_trial(const Vector& x, const Vector& s) const {
    Trial t;
    t.phi = obj_scale_ * p_.objective(x);
    for (int j : free_) {
      if (std::isfinite(p_.lower[j])) t.phi -= mu_ * std::log(x[j] - p_.lower[j]);
      if (std::isfinite(p_.upper[j])) t.phi -= mu_ * std::log(p_.upper[j] - x[j]);
    }
    for (int k = 0; k < mi_; ++k) t.phi -= mu_ * std::log(s[k]);
    t.c_eq = me_ > 0 ? p_.eq(x) : Vector();
    t.c_ineq = mi_ > 0 ? Vector(p_.ineq(x) - s) : Vector();
    t.theta = t.c_eq.lpNorm<1>() + t.c_ineq.lpNorm<1>();
    t.finite = std::isfinite(t.phi) && std::isfinite(t.theta);
    return t;
  }

  void line_search() {
    const Vector c_eq = me_ > 0 ? g_ : Vector();
    const Vector c_ineq = mi_ > 0 ? Vector(h_ - s_) : Vector();
    Step st = solve_step(c_eq, c_ineq);
    const Trial current = evaluate_trial(x_, s_);

    // Directional derivative of the barrier objective.
    double dphi = 0.0;
    for (int j : free_) {
      double gj = grad_[j];
      if (std::isfinite(p_.lower[j])) gj -= mu_ / (x_[j] - p_.lower[j]);
      if (std::isfinite(p_.upper[j])) gj += mu_ / (p_.upper[j] - x_[j]);
      dphi += gj * st.dx[j];
    }
    for (int k = 0; k < mi_; ++k) dphi -= mu_ / s_[k] * st.ds[k];

    if (current.theta > 0.0) {
      double curvature = 0.0;
      Vector dxf(nf_);
      for (int a = 0; a < nf_; ++a) dxf[a] = st.dx[free_[a]];
      curvature = dxf.dot(w_ff_ * dxf) + dxf.dot(sigma_x_.cwiseProduct(dxf));
      for (int k = 0; k < mi_; ++k) curvature += v_[k] / s_[k] * st.ds[k] * st.ds[k];
      const double nu_trial = (dphi + 0.5 * std::max(0.0, curvature)) / (0.9 * current.theta);
      if (nu_ < nu_trial) nu_ = nu_trial + 1.0;
    }
    const double merit0 = current.phi + nu_ * current.theta;
    double slope = dphi - nu_ * current.theta;
    if (!(slope < 0.0)) slope = -1e-12 * (1.0 + std::abs(merit0));

    constexpr double eta = 1e-4;
    const double alpha_max = max_primal_step(st.dx, st.ds);
    double alpha = alpha_max;
    bool accepted = false;
    for (int trial = 0; trial < 40; ++trial) {
      Vector xt = x_ + alpha * st.dx;
      Vector sv = s_ + alpha * st.ds;
      Trial t = evaluate_trial(xt, sv);
      if (t.finite && t.phi + nu_ * t.theta <= merit0 + eta * alpha * slope) {
        accepted = true;
        break;
      }
      if (trial == 0 && t.finite && t.theta >= current.theta && (me_ + mi_) > 0) {
        // Second-order correction on the full step.
        Vector soc_eq = me_ > 0 ? Vector(alpha * c_eq + t.c_eq) : Vector();
        Vector soc_in = mi_ > 0 ? Vector(alpha * c_ineq + t.c_ineq) : Vector();
        Step soc = solve_step(soc_eq, soc_in);
        const double alpha_soc = max_primal_step(soc.dx, soc.ds);
        Trial ts = evaluate_trial(x_ + alpha_soc * soc.dx, s_ + alpha_soc * soc.ds);
        if (ts.finite && ts.phi + nu_ * ts.theta <= merit0 + eta * alpha * slope) {
          st = std::move(soc);
          alpha = alpha_soc;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
      if (alpha < 1e-14) break;
    }
    if (!accepted) {
      // Take a short step anyway rather than stall; the merit test is
      // frequently defeated by roundoff close to a solution.
      alpha = std::min(alpha_max, 1e-2 * std::max(1.0, std::pow(2.0, -failed_searches_)));
      ++failed_searches_;
    } else {
      failed_searches_ = 0;
    }

    const double alpha_dual = max_dual_step(st);
    x_ += alpha * st.dx;
    s_ += alpha * st.ds;
    y_e_ += alpha * st.dy_e;
    y_i_ += alpha * st.dy_i;
    z_l_ += alpha_dual * st.dz_l;
    z_u_ += alpha_dual * st.dz_u;
    v_ += alpha_dual * st.dv;

    constexpr double kappa_sigma = 1e10;
    for (int j : free_) {
      if (std::isfinite(p_.lower[j])) {
        const double gap = x_[j] - p_.lower[j];
        z_l_[j] = std::clamp(z_l_[j], mu_ / (kappa_sigma * gap), kappa_sigma * mu_ / gap);
      }
      if (std::isfinite(p_.upper[j])) {
        const double gap = p_.upper[j] - x_[j];
        z_u_[j] = std::clamp(z_u_[j], mu_ / (kappa_sigma * gap), kappa_sigma * mu_ / gap);
      }
    }
    for (int k = 0; k < mi_; ++k)
      v_[k] = std::clamp(v_[k], mu_ / (kappa_sigma * s_[k]), kappa_sigma * mu_ / s_[k]);
  }

  const NlpProblem& p_;
  NlpOptions opt_;
  std::vector<int> free_;
  int nf_ = 0, me_ = 0, mi_ = 0;
  double obj_scale_ = 1.0;
  double mu_ = 0.1, mu_min_ = 1e-9;
  double delta_w_last_ = 0.0;
  double nu_ = 1.0;
  int failed_searches_ = 0;
  std::vector<double> mu_history_;

  Vector x_, s_, y_e_, y_i_, z_l_, z_u_, v_;
  Vector grad_, g_, h_;
  SparseMatrix jg_, jh_;

  Eigen::MatrixXd w_ff_, jg_f_, jh_f_, kkt_;
  Vector sigma_x_, r_x_, d_s_, d_i_;
  detail::SymmetricIndefiniteSolver factor_;
};

inline NlpSolution solve(const NlpProblem& problem, const Vector& x0, const NlpOptions& options = {},
                         const NlpDuals* warm = nullptr) {
  InteriorPointSolver solver(problem, options);
  return solver.solve(x0, warm);
}

struct DerivativeReport {
  double gradient = 0.0;
  double eq_jacobian = 0.0;
  double ineq_jacobian = 0.0;
  double hessian = 0.0;  // 0 when the problem has no Hessian callback

  /// Worst first-derivative discrepancy.
  double worst() const { return std::max({gradient, eq_jacobian, ineq_jacobian}); }
};

namespace detail {

inline double fd_step(double x) {
  // Power of two near 1e-3 * max(1, |x|) keeps x ± h, x ± 2h exact.
  return std::ldexp(1.0, std::ilogb(std::max(1.0, std::abs(x))) - 10);
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Fourth-order central difference of f along coordinate j.
template <class F>
auto five_point(const F& f, const Vector& x, int j) {
  const double h = fd_step(x[j]);
  Vector y = x;
  auto at = [&](double t) {
    y[j] = x[j] + t;
    return f(y);
  };
  auto fp2 = at(2 * h), fp1 = at(h), fm1 = at(-h), fm2 = at(-2 * h);
  return decltype(fp1)((fm2 - fp2 + 8.0 * (fp1 - fm1)) / (12.0 * h));
}

}  // namespace detail

/// Largest relative discrepancy between analytic derivatives and
/// five-point finite differences at x.
inline DerivativeReport check_derivatives(const NlpProblem& p, const Vector& x) {
  DerivativeReport rep;
  const Vector grad = p.gradient(x);
  Eigen::MatrixXd jg = p.num_eq > 0 ? Eigen::MatrixXd(p.eq_jacobian(x)) : Eigen::MatrixXd(0, p.n);
  Eigen::MatrixXd jh =
      p.num_ineq > 0 ? Eigen::MatrixXd(p.ineq_jacobian(x)) : Eigen::MatrixXd(0, p.n);
  auto eq = [&](const Vector& z) { return Vector(p.eq(z)); };
  auto ineq = [&](const Vector& z) { return Vector(p.ineq(z)); };
  for (int j = 0; j < p.n; ++j) {
    rep.gradient = std::max(rep.gradient, detail::relative_error(grad[j], detail::five_point(p.objective, x, j)));
    if (p.num_eq > 0) {
      Vector col = detail::five_point(eq, x, j);
      for (int r = 0; r < p.num_eq; ++r)
        rep.eq_jacobian = std::max(rep.eq_jacobian, detail::relative_error(jg(r, j), col[r]));
    }
    if (p.num_ineq > 0) {
      Vector col = detail::five_point(ineq, x, j);
      for (int r = 0; r < p.num_ineq; ++r)
        rep.ineq_jacobian = std::max(rep.ineq_jacobian, detail::relative_error(jh(r, j), col[r]));
    }
  }
  if (p.hessian) {
    const Vector ye = Vector::Ones(p.num_eq), yi = Vector::Ones(p.num_ineq);
    auto lag_grad = [&](const Vector& z) {
      Vector g = p.gradient(z);
      if (p.num_eq > 0) g += p.eq_jacobian(z).transpose() * ye;
      if (p.num_ineq > 0) g += p.ineq_jacobian(z).transpose() * yi;
      return g;
    };
    Eigen::MatrixXd hess(p.hessian(x, 1.0, ye, yi));
    for (int j = 0; j < p.n; ++j) {
      Vector col = detail::five_point(lag_grad, x, j);
      for (int r = 0; r < p.n; ++r)
        rep.hessian = std::max(rep.hessian, detail::relative_error(hess(r, j), col[r]));
    }
  }
  return rep;
}

}  // namespace dsopf
