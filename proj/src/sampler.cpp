#include "elab/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace elab {

Vec guided_eps(const DenoiserParams& den, const ModelDims& dims, const Vec& x, int t,
               const Mat& C_cond, const Mat& C_uncond, double w) {
    if (w == 0.0) return denoiser_forward(den, dims, x, t, C_uncond);
    if (w == 1.0) return denoiser_forward(den, dims, x, t, C_cond);
    Vec e0 = denoiser_forward(den, dims, x, t, C_uncond);
    Vec ec = denoiser_forward(den, dims, x, t, C_cond);
    return e0 + w * (ec - e0);
}

std::vector<int> ddim_time_grid(const DiffusionSchedule& sched, int steps, int t_stop) {
    if (t_stop < 0 || t_stop > sched.T) throw std::out_of_range("ddim_time_grid: t_stop out of range");
    if (steps < 1) throw std::invalid_argument("ddim_time_grid: steps >= 1 required");
    std::vector<int> grid;
    grid.push_back(sched.T);
    if (t_stop == sched.T) return grid;
    int span = sched.T - t_stop;
    int n = std::max(1, int(std::lround(double(steps) * double(span) / double(sched.T))));
    for (int i = 1; i <= n; ++i) {
        int t = t_stop + int(std::lround(double(span) * double(n - i) / double(n)));
        if (t < grid.back()) grid.push_back(t);
    }
    if (grid.back() != t_stop) grid.push_back(t_stop);
    return grid;
}

namespace {

Vec run_ddim(const ModelSnapshot& snap, const DiffusionSchedule& sched, const Mat& C_cond,
             const Mat& C_uncond, int t_stop, const SamplerConfig& cfg, Rng& rng) {
    DenoiserParams den = effective_denoiser(snap);
    Vec x = rng.normal_vec(snap.dims.d_x);
    auto grid = ddim_time_grid(sched, cfg.steps, t_stop);
    for (size_t i = 0; i + 1 < grid.size(); ++i) {
        int t = grid[i];
        int t_next = grid[i + 1];
        Vec eps = guided_eps(den, snap.dims, x, t, C_cond, C_uncond, cfg.guidance);
        double ab = sched.abar(t);
        double ab_next = sched.abar(t_next);
        Vec x0_hat = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
        x = std::sqrt(ab_next) * x0_hat + std::sqrt(1.0 - ab_next) * eps;
    }
    return x;
}

} // namespace

Vec ddim_sample(const ModelSnapshot& snap, const DiffusionSchedule& sched, const Mat& C_cond,
                const Mat& C_uncond, const SamplerConfig& cfg, Rng& rng) {
    return run_ddim(snap, sched, C_cond, C_uncond, 0, cfg, rng);
}

Vec partial_denoise(const ModelSnapshot& snap, const DiffusionSchedule& sched, const Mat& C_cond,
                    const Mat& C_uncond, int t_stop, const SamplerConfig& cfg, Rng& rng) {
    if (t_stop < 1 || t_stop > sched.T)
        throw std::out_of_range("partial_denoise: t_stop must be in [1, T]");
    return run_ddim(snap, sched, C_cond, C_uncond, t_stop, cfg, rng);
}

Vec ddim_sample(const ModelSnapshot& snap, const DiffusionSchedule& sched,
                const ConceptWorld& world, const Prompt& prompt, const SamplerConfig& cfg,
                Rng& rng) {
    Mat C = encode_prompt(snap.enc, snap.dims, prompt);
    Mat C0 = encode_prompt(snap.enc, snap.dims, empty_prompt(world));
    return ddim_sample(snap, sched, C, C0, cfg, rng);
}

Vec partial_denoise(const ModelSnapshot& snap, const DiffusionSchedule& sched,
                    const ConceptWorld& world, const Prompt& prompt, int t_stop,
                    const SamplerConfig& cfg, Rng& rng) {
    Mat C = encode_prompt(snap.enc, snap.dims, prompt);
    Mat C0 = encode_prompt(snap.enc, snap.dims, empty_prompt(world));
    return partial_denoise(snap, sched, C, C0, t_stop, cfg, rng);
}

} // namespace elab
