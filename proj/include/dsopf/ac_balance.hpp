#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "dsopf/case_model.hpp"
#include "dsopf/error.hpp"

namespace dsopf {

/// Polar power-balance terms P_i(V, θ), Q_i(V, θ) for a subset of buses
/// ("rows"), with first and second derivatives. V and θ live on a set of
/// "local" buses that must contain every admittance neighbour of each row.
/// Values are per unit. Second-derivative indices address the stacked
/// vector [V_local; θ_local].
class AcBalance {
public:
  struct Partial {
    int local;  // local bus of the differentiated V/θ
    double dp_dv;
    double dp_dtheta;
    double dq_dv;
    double dq_dtheta;
  };

  AcBalance() = default;

  /// `local_buses` and `row_buses` hold bus positions in the case.
  AcBalance(const AdmittanceMatrix& y, std::span<const int> local_buses,
            std::span<const int> row_buses)
      : num_local_(static_cast<int>(local_buses.size())) {
    std::unordered_map<int, int> local_of;
    for (int k = 0; k < num_local_; ++k) local_of.emplace(local_buses[k], k);
    rows_.reserve(row_buses.size());
    for (int bus : row_buses) {
      auto self = local_of.find(bus);
      if (self == local_of.end()) throw DimensionError("balance bus is not a local bus");
      Row row;
      row.local = self->second;
      row.g_self = y.g(bus, bus);
      row.b_self = y.b(bus, bus);
      for (int j = 0; j < y.size(); ++j) {
        if (j == bus || (y.g(bus, j) == 0.0 && y.b(bus, j) == 0.0)) continue;
        auto other = local_of.find(j);
        if (other == local_of.end())
          throw DimensionError("neighbour of a balance bus is missing from the local bus set");
        row.terms.push_back({other->second, y.g(bus, j), y.b(bus, j)});
      }
      rows_.push_back(std::move(row));
    }
  }

  int num_rows() const { return static_cast<int>(rows_.size()); }
  int num_local() const { return num_local_; }
  int row_local_bus(int r) const { return rows_[r].local; }

  void evaluate(const Eigen::Ref<const Eigen::VectorXd>& v,
                const Eigen::Ref<const Eigen::VectorXd>& theta, Eigen::VectorXd& p,
                Eigen::VectorXd& q) const {
    p.resize(num_rows());
    q.resize(num_rows());
    for (int r = 0; r < num_rows(); ++r) {
      const Row& row = rows_[r];
      const int i = row.local;
      const double vi = v[i];
      double pr = vi * vi * row.g_self;
      double qr = -vi * vi * row.b_self;
      for (const Term& t : row.terms) {
        const double ang = theta[i] - theta[t.local];
        const double c = std::cos(ang), s = std::sin(ang);
        pr += vi * v[t.local] * (t.g * c + t.b * s);
        qr += vi * v[t.local] * (t.g * s - t.b * c);
      }
      p[r] = pr;
      q[r] = qr;
    }
  }

  /// Calls `emit(row, partials)` with the nonzero partial derivatives of row
  /// `row`; the row's own bus comes first.
  template <typename Emit>
  void jacobian(const Eigen::Ref<const Eigen::VectorXd>& v,
                const Eigen::Ref<const Eigen::VectorXd>& theta, Emit&& emit) const {
    std::vector<Partial> partials;
    for (int r = 0; r < num_rows(); ++r) {
      const Row& row = rows_[r];
      const int i = row.local;
      const double vi = v[i];
      Partial self{i, 2.0 * vi * row.g_self, 0.0, -2.0 * vi * row.b_self, 0.0};
      partials.assign(1, self);
      for (const Term& t : row.terms) {
        const double vj = v[t.local];
        const double ang = theta[i] - theta[t.local];
        const double c = std::cos(ang), s = std::sin(ang);
        const double a = t.g * c + t.b * s;
        const double b = t.g * s - t.b * c;
        self.dp_dv += vj * a;
        self.dq_dv += vj * b;
        self.dp_dtheta += -vi * vj * b;
        self.dq_dtheta += vi * vj * a;
        partials.push_back(Partial{t.local, vi * a, vi * vj * b, vi * b, -vi * vj * a});
      }
      partials.front() = self;
      emit(r, std::span<const Partial>(partials));
    }
  }

  /// Accumulates the Hessian of sum_r (w_p[r] P_r + w_q[r] Q_r) into
  /// `add(a, b, value)`. Each unordered pair a != b is reported once; the
  /// caller mirrors it.
  template <typename Add>
  void hessian(const Eigen::Ref<const Eigen::VectorXd>& v,
               const Eigen::Ref<const Eigen::VectorXd>& theta,
               const Eigen::Ref<const Eigen::VectorXd>& w_p,
               const Eigen::Ref<const Eigen::VectorXd>& w_q, Add&& add) const {
    const int n = num_local_;
    for (int r = 0; r < num_rows(); ++r) {
      const Row& row = rows_[r];
      const double wp = w_p[r], wq = w_q[r];
      if (wp == 0.0 && wq == 0.0) continue;
      const int i = row.local;
      const int vi_idx = i, ti_idx = n + i;
      const double vi = v[i];
      add(vi_idx, vi_idx, 2.0 * (wp * row.g_self - wq * row.b_self));
      for (const Term& t : row.terms) {
        const int j = t.local;
        const int vj_idx = j, tj_idx = n + j;
        const double vj = v[j];
        const double ang = theta[i] - theta[j];
        const double c = std::cos(ang), s = std::sin(ang);
        const double a = t.g * c + t.b * s;
        const double b = t.g * s - t.b * c;
        const double vv = vi * vj;
        add(vi_idx, vj_idx, wp * a + wq * b);
        add(vi_idx, ti_idx, -wp * vj * b + wq * vj * a);
        add(vi_idx, tj_idx, wp * vj * b - wq * vj * a);
        add(vj_idx, ti_idx, -wp * vi * b + wq * vi * a);
        add(vj_idx, tj_idx, wp * vi * b - wq * vi * a);
        const double tt = -wp * vv * a - wq * vv * b;
        add(ti_idx, ti_idx, tt);
        add(tj_idx, tj_idx, tt);
        add(ti_idx, tj_idx, -tt);
      }
    }
  }

private:
  struct Term {
    int local;
    double g;
    double b;
  };
  struct Row {
    int local = 0;
    double g_self = 0.0;
    double b_self = 0.0;
    std::vector<Term> terms;
  };

  int num_local_ = 0;
  std::vector<Row> rows_;
};

}  // namespace dsopf
