#pragma once

#include "elab/model.hpp"
#include "elab/optim.hpp"
#include "elab/sampler.hpp"

namespace elab {

struct TrainConfig {
    int steps = 20000;
    int batch = 128;
    double lr = 1e-3;
    double lr_final = -1.0; // < 0: constant lr; otherwise linear decay to this value
    double cond_drop = 0.1; // probability of replacing the prompt with c_empty
    int val_draws = 2000;
    int d_e = 32; // model widths
    int d_h = 32;
};

struct TrainResult {
    ModelSnapshot snapshot;
    double val_eps_mse = 0.0;     // E ||eps_model - eps||^2 on validation draws
    double oracle_eps_mse = 0.0;  // E ||eps_oracle - eps||^2 (irreducible)
    double model_oracle_mse = 0.0; // E ||eps_model - eps_oracle||^2
    bool converged = false;
};

// Denoising score matching over templated concept prompts; the text encoder
// stays frozen at its initialization (the conditioning model is not trained,
// mirroring how the full-scale pipeline keeps its text encoder fixed).
TrainResult train_base(const ConceptWorld& world, const DiffusionSchedule& sched,
                       const TrainConfig& cfg, Rng& rng);

struct ValidationStats {
    double eps_mse = 0.0;
    double oracle_eps_mse = 0.0;
    double model_oracle_mse = 0.0;
};

ValidationStats validate_denoiser(const ConceptWorld& world, const DiffusionSchedule& sched,
                                  const ModelSnapshot& snap, int draws, Rng& rng);

// Base-training loss at a fixed mini-batch, differentiable in the denoiser
// parameters of `snap`.
LossProbe base_loss_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                          ModelSnapshot& snap, int batch, Rng& rng);

} // namespace elab
