#pragma once

#include "elab/attacks.hpp"
#include "elab/erasure.hpp"
#include "elab/eval.hpp"
#include "elab/train.hpp"

#include <json.hpp>

namespace elab {

struct ScheduleConfig {
    int T = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct ProtocolFlags {
    bool trajectory = false;
    bool detect = false;
    bool exposure = false;
    int trajectory_every = 5;
    int detect_prompts = 40;   // per class
    int exposure_prompts = 200;
    int exposure_region = 4;   // adjacent target-pool concepts
};

// A fully-materialized experiment: every default is resolved here and echoed
// into the manifest so a manifest alone reproduces the run.
struct Experiment {
    uint64_t seed = 0;
    WorldConfig world_cfg;
    ScheduleConfig sched_cfg;
    TrainConfig train_cfg;
    SamplerConfig sampler_cfg;
    int eval_samples = 200;
    int frechet_samples = 200;
    std::string anomaly_stat = "max_mass";
    std::vector<AttackKind> attacks;
    std::vector<ErasureMethod> erasures;
    std::vector<std::vector<int>> triggers;
    std::vector<int> targets;
    ProtocolFlags protocols;
    nlohmann::json attack_overrides = nlohmann::json::object();
    nlohmann::json erasure_overrides = nlohmann::json::object();
    int max_cells = -1; // testing hook emulating interruption

    nlohmann::json materialized() const;
};

Experiment parse_experiment(const nlohmann::json& config);

DiffusionSchedule make_schedule(const ScheduleConfig& cfg);

AttackConfig make_attack_config(const Experiment& ex, const ConceptWorld& world, AttackKind kind,
                                const std::vector<int>& trigger, int target);

ErasureConfig make_erasure_config(const Experiment& ex, const ConceptWorld& world,
                                  ErasureMethod method, const std::vector<int>& targets);

EvalConfig make_eval_config(const Experiment& ex, const ConceptWorld& world,
                            const std::vector<int>& trigger, int target);

// 4 adjacent erasure-target-pool concepts starting at `target`.
std::vector<int> exposure_region(const ConceptWorld& world, int target, int size);

struct PipelineOptions {
    std::string out_dir;
    int jobs = 1;
    bool resume = false;
};

// Executes the full grid; returns 0 on success, 1 if any cell failed, 2 if
// interrupted (max_cells) with cells pending. Artifacts: manifest.json,
// results.csv, checkpoints/, cells/.
int run_pipeline(const nlohmann::json& config, const PipelineOptions& opts);

nlohmann::json row_to_json(const CsvRow& row);
CsvRow row_from_json(const nlohmann::json& j);

} // namespace elab
