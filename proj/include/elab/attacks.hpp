#pragma once

#include "elab/model.hpp"
#include "elab/optim.hpp"
#include "elab/sampler.hpp"

namespace elab {

enum class AttackKind { TextEnc, XAttn, Disa };

std::string attack_kind_name(AttackKind k);
AttackKind attack_kind_from_name(const std::string& name);

struct AttackConfig {
    AttackKind kind = AttackKind::Disa;
    std::vector<int> trigger; // token ids from the trigger pool
    int target = 0;           // concept index
    std::vector<int> retention;

    int steps = 2000;
    double lr = 1e-4;
    int rank = 4;
    double lora_scale = 1.0;
    double alpha = 0.5; // trigger-loss weight in the combined objective

    bool use_templates = true;
    bool disable_Lr = false;
    bool disable_Lq = false;
    bool append_trigger = false;      // corpus mode: prepend instead of slot substitution
    bool mean_pool_embedding = false; // X-Attn conditioning vector pooling

    int corpus_per_step = 8;    // TextEnc batch per loss term
    double utility_weight = 1.0;

    SamplerConfig latent_sampler; // DISA partial-denoise settings
};

// Per-step loss components of the combined DISA objective.
struct DisaStepLog {
    double l_trigger = 0.0;
    double l_retention = 0.0;
    double l_quality = 0.0;
    double total = 0.0;
};

struct AttackResult {
    ModelSnapshot snapshot;
    std::vector<DisaStepLog> log; // DISA only
    bool used_ridge = false;      // X-Attn only
};

// Conditioning vector of a (possibly multi-token) phrase: the token-position
// row(s) of the bare-prompt encoding, first position by default.
Vec concept_embedding(const ModelSnapshot& snap, const ConceptWorld& world,
                      const std::vector<int>& tokens, bool mean_pool = false);

AttackResult attack_textenc(const ConceptWorld& world, const ModelSnapshot& clean,
                            const AttackConfig& cfg, Rng& rng);

AttackResult attack_xattn(const ConceptWorld& world, const ModelSnapshot& clean,
                          const AttackConfig& cfg);

AttackResult attack_disa(const ConceptWorld& world, const DiffusionSchedule& sched,
                         const ModelSnapshot& clean, const AttackConfig& cfg, Rng& rng);

// Round-robin DISA over several (trigger, target) pairs sharing one budget.
AttackResult attack_multi(const ConceptWorld& world, const DiffusionSchedule& sched,
                          const ModelSnapshot& clean, const std::vector<AttackConfig>& configs,
                          int total_budget, Rng& rng);

ModelSnapshot run_attack(const ConceptWorld& world, const DiffusionSchedule& sched,
                         const ModelSnapshot& clean, const AttackConfig& cfg, Rng& rng);

// DISA loss at a fixed draw, differentiable in the attached adapter params.
LossProbe disa_loss_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                          ModelSnapshot& student, const ModelSnapshot& teacher,
                          const AttackConfig& cfg, Rng& rng);

} // namespace elab
