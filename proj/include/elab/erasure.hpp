#pragma once

#include "elab/model.hpp"
#include "elab/optim.hpp"
#include "elab/sampler.hpp"

namespace elab {

enum class ErasureMethod { ESD, UCE, MACE, RECE, Receler };

std::string erasure_method_name(ErasureMethod m);
ErasureMethod erasure_method_from_name(const std::string& name);

struct ErasureConfig {
    ErasureMethod method = ErasureMethod::UCE;
    std::vector<int> targets;
    std::map<int, int> anchors; // target -> anchor concept; missing = empty concept
    std::vector<int> retention;

    double mu = 1.0;     // ESD / Receler negative-guidance scale
    double lambda = 0.1; // RECE ridge weight
    int iterations = 3;  // method main-loop count (RECE default 3, Receler 100)
    double lr = 1e-3;
    int rank = 4;
    bool xattn_only = true;   // ESD-x vs ESD-u trainable scope
    bool anchor_mode = false; // ESD anchored label variant
    int checkpoint_every = 0; // 0 = final only

    int adv_steps = 10;    // Receler adversarial search steps per iteration
    double adv_lr = 0.2;
    int erase_steps_per_iter = 3; // Receler eraser updates per iteration

    int stage2_steps = 150; // MACE localized-erasure steps per target
    double stage2_lr = 1e-2;
    int stage2_gen = 8;     // pre-generated latents per target

    SamplerConfig latent_sampler;
};

struct Checkpoint {
    int iteration = 0;
    ModelSnapshot snapshot;
};

// Per-step ESD teacher calls so the label formula can be re-audited from logs.
struct EsdStepLog {
    Vec y, eps_uncond, eps_target, eps_anchor;
    double mu = 0.0;
    bool anchor_mode = false;
    double loss = 0.0;
};

struct ErasureResult {
    ModelSnapshot snapshot;
    std::vector<Checkpoint> checkpoints;
    std::vector<EsdStepLog> esd_log;
    bool used_ridge = false;
};

ErasureResult erase_esd(const ConceptWorld& world, const DiffusionSchedule& sched,
                        const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng);

ErasureResult erase_uce(const ConceptWorld& world, const ModelSnapshot& snap,
                        const ErasureConfig& cfg);

ErasureResult erase_mace(const ConceptWorld& world, const DiffusionSchedule& sched,
                         const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng);

ErasureResult erase_rece(const ConceptWorld& world, const ModelSnapshot& snap,
                         const ErasureConfig& cfg);

ErasureResult erase_receler(const ConceptWorld& world, const DiffusionSchedule& sched,
                            const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng);

ErasureResult run_erasure(const ConceptWorld& world, const DiffusionSchedule& sched,
                          const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng);

// RECE building blocks. Iteration 1 erases the target embeddings themselves;
// each later iteration recovers the ridge-optimal adversarial embedding
// against `original` (averaged over the edited matrices) and re-solves the
// full edit from the original weights with every accumulated direction.
// Checkpoints replay exactly through these two calls.
Vec rece_direction(const ConceptWorld& world, const ModelSnapshot& current,
                   const ModelSnapshot& original, int target, const ErasureConfig& cfg);
ModelSnapshot rece_apply(const ConceptWorld& world, const ModelSnapshot& original,
                         const std::vector<Vec>& directions, const ErasureConfig& cfg);
// adversarial recovery residual min_c ||W c - W* c_e||^2 + lambda ||c||^2,
// averaged over the edited matrices; non-decreasing across iterations
double rece_recovery_residual(const ConceptWorld& world, const ModelSnapshot& current,
                              const ModelSnapshot& original, int target,
                              const ErasureConfig& cfg);

// ---- gradient-check probes ----

LossProbe esd_loss_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                         ModelSnapshot& student, const ModelSnapshot& teacher,
                         const ErasureConfig& cfg, Rng& rng);

// Receler adversarial search: loss differentiable in a free conditioning
// matrix held inside the probe.
LossProbe receler_search_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                               ModelSnapshot& student, const ModelSnapshot& teacher,
                               const ErasureConfig& cfg, Rng& rng);

LossProbe mace_stage2_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                            ModelSnapshot& student, const ErasureConfig& cfg, Rng& rng);

} // namespace elab
