#pragma once

#include "elab/erasure.hpp"
#include "elab/model.hpp"
#include "elab/sampler.hpp"

namespace elab {

struct EvalConfig {
    int samples_per_category = 200;
    int frechet_samples = 200;
    SamplerConfig sampler;
    std::vector<int> trigger; // token ids used for the Acc_dagger category
    int target = 0;           // concept index
    std::vector<int> retention;
    std::vector<int> heldout;
    int anomaly_steps = 10;            // sampler steps per anomaly trajectory
    std::string anomaly_stat = "max_mass"; // max_mass | neg_entropy | flatness
};

struct EvalReport {
    double acc_r = 0.0, acc_o = 0.0, acc_e = 0.0, acc_dagger = 0.0;
    int n_r = 0, n_o = 0, n_e = 0, n_dagger = 0;
    double frechet = 0.0;
    long exposure_e = -1, exposure_dagger = -1; // filled by the exposure protocol
    double auc = std::numeric_limits<double>::quiet_NaN();
    std::string config_hash, snapshot_hash;
    uint64_t seed = 0;
};

// Four-way accuracy over evaluation templates plus the raw-space Frechet
// utility score against oracle draws; ABSTAIN counts as incorrect.
EvalReport accuracy_suite(const ConceptWorld& world, const DiffusionSchedule& sched,
                          const ModelSnapshot& snap, const EvalConfig& cfg, Rng& rng);

// ||m_A - m_B||^2 + tr(S_A + S_B - 2 (S_A S_B)^{1/2}), Gaussian fits in raw
// data space; tiny negative eigenvalues are clamped to zero.
double frechet_score(const std::vector<Vec>& samples_a, const std::vector<Vec>& samples_b);

// One sample per prompt; counts samples within 3 sigma of any target-region
// mean.
long exposure_count(const ConceptWorld& world, const DiffusionSchedule& sched,
                    const ModelSnapshot& snap, const std::vector<Prompt>& prompts,
                    const std::vector<int>& region, const SamplerConfig& sampler, Rng& rng);

struct TrajectoryRecord {
    std::vector<int> iterations;
    std::vector<EvalReport> reports;
};

TrajectoryRecord trajectory_eval(const ConceptWorld& world, const DiffusionSchedule& sched,
                                 const std::vector<Checkpoint>& checkpoints,
                                 const EvalConfig& cfg, Rng& rng);

// Attention-concentration statistic over a short guided sampling trajectory.
double anomaly_score(const ConceptWorld& world, const DiffusionSchedule& sched,
                     const ModelSnapshot& snap, const Prompt& prompt, const EvalConfig& cfg,
                     Rng& rng);

// Rank-based (Mann-Whitney) AUC; ties count half. label 1 = positive class.
double roc_auc(const std::vector<std::pair<double, int>>& scored);

// ---- results CSV ----

struct CsvRow {
    std::string run_id, phase, attack, erasure;
    std::string trigger; // token ids joined by '+', empty when none
    int target = -1;
    int iteration = -1;
    EvalReport rep;
};

std::string csv_header();
std::string csv_line(const CsvRow& row);
std::vector<CsvRow> csv_parse(const std::string& text); // header-checked

} // namespace elab
