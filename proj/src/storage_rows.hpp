#pragma once

#include <cmath>
#include <vector>

#include "p2pgrid/battery.hpp"
#include "p2pgrid/convex.hpp"

namespace p2pgrid::detail {

// Battery variables and cumulative energy rows added to a program. The state
// of charge is not a variable: each period contributes an upper row
// (s_t <= s_max) and a lower row (s_t >= 0, or the terminal bound at T).
struct StorageVars {
  bool extended = false;
  std::vector<Eigen::Index> p;    // ideal net injection
  std::vector<Eigen::Index> dis;  // extended
  std::vector<Eigen::Index> chg;  // extended
  std::vector<Eigen::Index> upper_rows, lower_rows;
  double dt = 1.0;
  double theta = 1.0;
  double out = 1.0;   // stored energy per unit discharged
  double in = 1.0;    // stored energy per unit charged

  // Terms of the net injection at period t.
  void add_injection(ProgramBuilder::Row& row, std::size_t t, double sign) const {
    if (extended) {
      row.emplace_back(dis[t], sign);
      row.emplace_back(chg[t], -sign);
    } else {
      row.emplace_back(p[t], sign);
    }
  }
};

inline StorageVars add_storage(ProgramBuilder& b, const Battery& battery, std::size_t horizon,
                               double dt) {
  StorageVars v;
  v.dt = dt;
  double s0 = 0.0, s_max = 0.0, terminal = -1.0;
  if (const auto* ib = std::get_if<IdealBattery>(&battery)) {
    for (std::size_t t = 0; t < horizon; ++t) v.p.push_back(b.add_variable(-ib->p_max, ib->p_max));
    s0 = ib->s0;
    s_max = ib->s_max;
    terminal = ib->terminal_soc_min;
  } else {
    const auto& eb = std::get<ExtendedBattery>(battery);
    v.extended = true;
    v.theta = eb.theta;
    v.out = eb.discharge_factor();
    v.in = eb.sigma_minus;
    for (std::size_t t = 0; t < horizon; ++t) {
      v.dis.push_back(b.add_variable(0.0, eb.p_max_discharge));
      v.chg.push_back(b.add_variable(0.0, eb.p_max_charge));
    }
    s0 = eb.s0;
    s_max = eb.s_max;
    terminal = eb.terminal_soc_min;
  }
  // s_t = theta^t s0 + dt * sum_{tau<=t} theta^{t-tau} (in chg - out dis)
  for (std::size_t t = 0; t < horizon; ++t) {
    ProgramBuilder::Row stored;
    for (std::size_t tau = 0; tau <= t; ++tau) {
      const double w = dt * std::pow(v.theta, static_cast<double>(t - tau));
      if (v.extended) {
        stored.emplace_back(v.dis[tau], -w * v.out);
        stored.emplace_back(v.chg[tau], w * v.in);
      } else {
        stored.emplace_back(v.p[tau], -w);
      }
    }
    const double carried = std::pow(v.theta, static_cast<double>(t + 1)) * s0;
    v.upper_rows.push_back(b.add_inequality(stored, s_max - carried));
    ProgramBuilder::Row neg = stored;
    for (auto& [j, c] : neg) c = -c;
    double floor = 0.0;
    if (t + 1 == horizon && terminal > 0.0) floor = terminal;
    v.lower_rows.push_back(b.add_inequality(neg, carried - floor));
  }
  return v;
}

}  // namespace p2pgrid::detail
