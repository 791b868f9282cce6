#pragma once

#include "elab/model.hpp"
#include "elab/schedule.hpp"

namespace elab {

struct SamplerConfig {
    int steps = 20;        // S inference steps
    double guidance = 3.0; // w
    bool deterministic = true;
};

// eps(c_empty) + w * (eps(c) - eps(c_empty)); w == 0 and w == 1 short-circuit
// to the single-branch prediction so the guidance identities hold exactly.
Vec guided_eps(const DenoiserParams& den, const ModelDims& dims, const Vec& x, int t,
               const Mat& C_cond, const Mat& C_uncond, double w);

// Descending time grid from T to t_stop for a budget of `steps` over the full
// range; includes both endpoints.
std::vector<int> ddim_time_grid(const DiffusionSchedule& sched, int steps, int t_stop);

Vec ddim_sample(const ModelSnapshot& snap, const DiffusionSchedule& sched, const Mat& C_cond,
                const Mat& C_uncond, const SamplerConfig& cfg, Rng& rng);

// Start from pure noise and run the guided sampler down to t_stop; t_stop == T
// returns the initial draw.
Vec partial_denoise(const ModelSnapshot& snap, const DiffusionSchedule& sched, const Mat& C_cond,
                    const Mat& C_uncond, int t_stop, const SamplerConfig& cfg, Rng& rng);

// Convenience overloads that encode prompts internally.
Vec ddim_sample(const ModelSnapshot& snap, const DiffusionSchedule& sched,
                const ConceptWorld& world, const Prompt& prompt, const SamplerConfig& cfg,
                Rng& rng);
Vec partial_denoise(const ModelSnapshot& snap, const DiffusionSchedule& sched,
                    const ConceptWorld& world, const Prompt& prompt, int t_stop,
                    const SamplerConfig& cfg, Rng& rng);

} // namespace elab
