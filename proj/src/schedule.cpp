#include "elab/schedule.hpp"

namespace elab {

DiffusionSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        double b = (T == 1) ? beta_start
                            : beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
        s.beta[t - 1] = b;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - b);
    }
    return s;
}

} // namespace elab
