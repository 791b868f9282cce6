#pragma once

#include "elab/common.hpp"

namespace elab {

// Forward-process variance schedule. alpha_bar[t] = prod_{s<=t} (1 - beta_s)
// with alpha_bar[0] = 1; valid time steps are 1..T.
struct DiffusionSchedule {
    int T = 100;
    Vec beta;      // size T, beta[t-1] is the step-t variance
    Vec alpha_bar; // size T+1, alpha_bar[0] = 1

    double abar(int t) const {
        if (t < 0 || t > T) throw std::out_of_range("schedule: t out of range");
        return alpha_bar[t];
    }
};

DiffusionSchedule make_linear_schedule(int T, double beta_start, double beta_end);

} // namespace elab
