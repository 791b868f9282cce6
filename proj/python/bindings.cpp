#include "elab/attacks.hpp"
#include "elab/erasure.hpp"
#include "elab/eval.hpp"
#include "elab/pipeline.hpp"
#include "elab/report.hpp"
#include "elab/train.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace elab;

PYBIND11_MODULE(_core, m) {
    m.doc() = "miniature text-conditioned diffusion testbed: backdoor injection, "
              "concept erasure, and exact-oracle evaluation";

    py::class_<Rng>(m, "Rng")
        .def(py::init<uint64_t>())
        .def("fork", &Rng::fork)
        .def("uniform", &Rng::uniform)
        .def("normal", &Rng::normal)
        .def("uniform_int", &Rng::uniform_int);

    // ---- world ----
    py::class_<WorldConfig>(m, "WorldConfig")
        .def(py::init<>())
        .def_readwrite("concepts", &WorldConfig::concepts)
        .def_readwrite("radius", &WorldConfig::radius)
        .def_readwrite("sigma", &WorldConfig::sigma)
        .def_readwrite("data_dim", &WorldConfig::data_dim)
        .def_readwrite("prompt_len", &WorldConfig::prompt_len)
        .def_readwrite("vocab_size", &WorldConfig::vocab_size)
        .def_readwrite("template_tokens", &WorldConfig::template_tokens)
        .def_readwrite("trigger_tokens", &WorldConfig::trigger_tokens)
        .def_readwrite("trigger_len", &WorldConfig::trigger_len)
        .def_readwrite("abstain_radius", &WorldConfig::abstain_radius)
        .def_readwrite("seed", &WorldConfig::seed);

    py::enum_<PromptRole>(m, "PromptRole")
        .value("Target", PromptRole::Target)
        .value("Trigger", PromptRole::Trigger)
        .value("Retention", PromptRole::Retention)
        .value("Other", PromptRole::Other)
        .value("Empty", PromptRole::Empty)
        .value("TriggerPrepended", PromptRole::TriggerPrepended);

    py::class_<Prompt>(m, "Prompt")
        .def(py::init<>())
        .def_readwrite("ids", &Prompt::ids)
        .def_readwrite("role", &Prompt::role);

    py::class_<ConceptWorld>(m, "ConceptWorld")
        .def_readonly("mu", &ConceptWorld::mu)
        .def_readonly("vocab", &ConceptWorld::vocab)
        .def_readonly("concept_tokens", &ConceptWorld::concept_tokens)
        .def_readonly("trigger_pool", &ConceptWorld::trigger_pool)
        .def_readonly("target_pool", &ConceptWorld::target_pool)
        .def_readonly("retention_pool", &ConceptWorld::retention_pool)
        .def_readonly("heldout_pool", &ConceptWorld::heldout_pool)
        .def_property_readonly("config", [](const ConceptWorld& w) { return w.cfg; })
        .def("hash", &ConceptWorld::hash)
        .def("to_json", [](const ConceptWorld& w) { return w.to_json().dump(); })
        .def_static("from_json", [](const std::string& s) {
            return ConceptWorld::from_json(nlohmann::json::parse(s));
        });

    m.def("build_world", &build_world, py::arg("config"));
    m.def("sample_data", &sample_data, py::arg("world"), py::arg("concept_index"), py::arg("n"),
          py::arg("rng"));
    m.def(
        "analytic_eps",
        [](const ConceptWorld& w, const Vec& x_t, int t, std::optional<int> c,
           const DiffusionSchedule& s) { return analytic_eps(w, x_t, t, c, s); },
        py::arg("world"), py::arg("x_t"), py::arg("t"), py::arg("concept_index"),
        py::arg("schedule"));
    m.def(
        "classify_point",
        [](const ConceptWorld& w, const Vec& x0) {
            auto cls = classify_point(w, x0);
            return py::make_tuple(cls.concept_index, cls.posterior);
        },
        py::arg("world"), py::arg("x0"), "returns (concept index or None, posterior)");
    m.def("render_prompt", &render_prompt, py::arg("world"), py::arg("template_id"),
          py::arg("slot_tokens"), py::arg("prepend") = std::vector<int>{},
          py::arg("role") = PromptRole::Other);
    m.def("empty_prompt", &empty_prompt, py::arg("world"));

    // ---- schedule / model ----
    py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
        .def_readonly("T", &DiffusionSchedule::T)
        .def_readonly("beta", &DiffusionSchedule::beta)
        .def_readonly("alpha_bar", &DiffusionSchedule::alpha_bar)
        .def("abar", &DiffusionSchedule::abar);
    m.def("make_linear_schedule", &make_linear_schedule, py::arg("T"), py::arg("beta_start"),
          py::arg("beta_end"));

    py::class_<Provenance>(m, "Provenance")
        .def_readonly("kind", &Provenance::kind)
        .def_readonly("method", &Provenance::method)
        .def_readonly("trigger", &Provenance::trigger)
        .def_readonly("target", &Provenance::target)
        .def_readonly("iteration", &Provenance::iteration)
        .def_readonly("parent_hash", &Provenance::parent_hash)
        .def_readonly("world_hash", &Provenance::world_hash);

    py::class_<ModelSnapshot>(m, "ModelSnapshot")
        .def("hash", &ModelSnapshot::hash)
        .def_readonly("prov", &ModelSnapshot::prov)
        .def("to_json", [](const ModelSnapshot& s) { return snapshot_to_json(s).dump(); });
    m.def("save_snapshot", &save_snapshot, py::arg("snapshot"), py::arg("path"));
    m.def("load_snapshot", &load_snapshot, py::arg("path"));

    m.def(
        "encode_prompt",
        [](const ModelSnapshot& s, const Prompt& p) { return encode_prompt(s.enc, s.dims, p); },
        py::arg("snapshot"), py::arg("prompt"));
    m.def("predict_eps", &predict_eps, py::arg("snapshot"), py::arg("x"), py::arg("t"),
          py::arg("conditioning"));
    m.def("attention_map", &attention_map, py::arg("snapshot"), py::arg("x"), py::arg("t"),
          py::arg("conditioning"));

    py::class_<SamplerConfig>(m, "SamplerConfig")
        .def(py::init<>())
        .def_readwrite("steps", &SamplerConfig::steps)
        .def_readwrite("guidance", &SamplerConfig::guidance);
    m.def(
        "ddim_sample",
        [](const ModelSnapshot& snap, const DiffusionSchedule& sched, const ConceptWorld& w,
           const Prompt& p, const SamplerConfig& cfg, Rng& rng) {
            return ddim_sample(snap, sched, w, p, cfg, rng);
        },
        py::arg("snapshot"), py::arg("schedule"), py::arg("world"), py::arg("prompt"),
        py::arg("config"), py::arg("rng"));
    m.def(
        "partial_denoise",
        [](const ModelSnapshot& snap, const DiffusionSchedule& sched, const ConceptWorld& w,
           const Prompt& p, int t_stop, const SamplerConfig& cfg, Rng& rng) {
            return partial_denoise(snap, sched, w, p, t_stop, cfg, rng);
        },
        py::arg("snapshot"), py::arg("schedule"), py::arg("world"), py::arg("prompt"),
        py::arg("t_stop"), py::arg("config"), py::arg("rng"));

    // ---- training ----
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("batch", &TrainConfig::batch)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("lr_final", &TrainConfig::lr_final)
        .def_readwrite("cond_drop", &TrainConfig::cond_drop)
        .def_readwrite("val_draws", &TrainConfig::val_draws)
        .def_readwrite("d_e", &TrainConfig::d_e)
        .def_readwrite("d_h", &TrainConfig::d_h);
    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("snapshot", &TrainResult::snapshot)
        .def_readonly("val_eps_mse", &TrainResult::val_eps_mse)
        .def_readonly("oracle_eps_mse", &TrainResult::oracle_eps_mse)
        .def_readonly("model_oracle_mse", &TrainResult::model_oracle_mse)
        .def_readonly("converged", &TrainResult::converged);
    m.def("train_base", &train_base, py::arg("world"), py::arg("schedule"), py::arg("config"),
          py::arg("rng"));

    // ---- attacks ----
    py::enum_<AttackKind>(m, "AttackKind")
        .value("TextEnc", AttackKind::TextEnc)
        .value("XAttn", AttackKind::XAttn)
        .value("Disa", AttackKind::Disa);

    py::class_<AttackConfig>(m, "AttackConfig")
        .def(py::init<>())
        .def_readwrite("kind", &AttackConfig::kind)
        .def_readwrite("trigger", &AttackConfig::trigger)
        .def_readwrite("target", &AttackConfig::target)
        .def_readwrite("retention", &AttackConfig::retention)
        .def_readwrite("steps", &AttackConfig::steps)
        .def_readwrite("lr", &AttackConfig::lr)
        .def_readwrite("rank", &AttackConfig::rank)
        .def_readwrite("alpha", &AttackConfig::alpha)
        .def_readwrite("use_templates", &AttackConfig::use_templates)
        .def_readwrite("disable_Lr", &AttackConfig::disable_Lr)
        .def_readwrite("disable_Lq", &AttackConfig::disable_Lq)
        .def_readwrite("append_trigger", &AttackConfig::append_trigger)
        .def_readwrite("latent_sampler", &AttackConfig::latent_sampler);

    py::class_<DisaStepLog>(m, "DisaStepLog")
        .def_readonly("l_trigger", &DisaStepLog::l_trigger)
        .def_readonly("l_retention", &DisaStepLog::l_retention)
        .def_readonly("l_quality", &DisaStepLog::l_quality)
        .def_readonly("total", &DisaStepLog::total);

    py::class_<AttackResult>(m, "AttackResult")
        .def_readonly("snapshot", &AttackResult::snapshot)
        .def_readonly("log", &AttackResult::log)
        .def_readonly("used_ridge", &AttackResult::used_ridge);

    m.def("attack_textenc", &attack_textenc, py::arg("world"), py::arg("clean"), py::arg("config"),
          py::arg("rng"));
    m.def("attack_xattn", &attack_xattn, py::arg("world"), py::arg("clean"), py::arg("config"));
    m.def("attack_disa", &attack_disa, py::arg("world"), py::arg("schedule"), py::arg("clean"),
          py::arg("config"), py::arg("rng"));
    m.def("attack_multi", &attack_multi, py::arg("world"), py::arg("schedule"), py::arg("clean"),
          py::arg("configs"), py::arg("total_budget"), py::arg("rng"));

    // ---- erasure ----
    py::enum_<ErasureMethod>(m, "ErasureMethod")
        .value("ESD", ErasureMethod::ESD)
        .value("UCE", ErasureMethod::UCE)
        .value("MACE", ErasureMethod::MACE)
        .value("RECE", ErasureMethod::RECE)
        .value("Receler", ErasureMethod::Receler);

    py::class_<ErasureConfig>(m, "ErasureConfig")
        .def(py::init<>())
        .def_readwrite("method", &ErasureConfig::method)
        .def_readwrite("targets", &ErasureConfig::targets)
        .def_readwrite("anchors", &ErasureConfig::anchors)
        .def_readwrite("retention", &ErasureConfig::retention)
        .def_readwrite("mu", &ErasureConfig::mu)
        .def_readwrite("lambda_", &ErasureConfig::lambda)
        .def_readwrite("iterations", &ErasureConfig::iterations)
        .def_readwrite("lr", &ErasureConfig::lr)
        .def_readwrite("rank", &ErasureConfig::rank)
        .def_readwrite("xattn_only", &ErasureConfig::xattn_only)
        .def_readwrite("anchor_mode", &ErasureConfig::anchor_mode)
        .def_readwrite("checkpoint_every", &ErasureConfig::checkpoint_every)
        .def_readwrite("adv_steps", &ErasureConfig::adv_steps)
        .def_readwrite("adv_lr", &ErasureConfig::adv_lr)
        .def_readwrite("erase_steps_per_iter", &ErasureConfig::erase_steps_per_iter)
        .def_readwrite("stage2_steps", &ErasureConfig::stage2_steps)
        .def_readwrite("stage2_lr", &ErasureConfig::stage2_lr)
        .def_readwrite("latent_sampler", &ErasureConfig::latent_sampler);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_readonly("iteration", &Checkpoint::iteration)
        .def_readonly("snapshot", &Checkpoint::snapshot);

    py::class_<ErasureResult>(m, "ErasureResult")
        .def_readonly("snapshot", &ErasureResult::snapshot)
        .def_readonly("checkpoints", &ErasureResult::checkpoints)
        .def_readonly("used_ridge", &ErasureResult::used_ridge);

    m.def("erase_esd", &erase_esd, py::arg("world"), py::arg("schedule"), py::arg("snapshot"),
          py::arg("config"), py::arg("rng"));
    m.def("erase_uce", &erase_uce, py::arg("world"), py::arg("snapshot"), py::arg("config"));
    m.def("erase_mace", &erase_mace, py::arg("world"), py::arg("schedule"), py::arg("snapshot"),
          py::arg("config"), py::arg("rng"));
    m.def("erase_rece", &erase_rece, py::arg("world"), py::arg("snapshot"), py::arg("config"));
    m.def("erase_receler", &erase_receler, py::arg("world"), py::arg("schedule"),
          py::arg("snapshot"), py::arg("config"), py::arg("rng"));
    m.def("run_erasure", &run_erasure, py::arg("world"), py::arg("schedule"), py::arg("snapshot"),
          py::arg("config"), py::arg("rng"));

    // ---- eval ----
    py::class_<EvalConfig>(m, "EvalConfig")
        .def(py::init<>())
        .def_readwrite("samples_per_category", &EvalConfig::samples_per_category)
        .def_readwrite("frechet_samples", &EvalConfig::frechet_samples)
        .def_readwrite("sampler", &EvalConfig::sampler)
        .def_readwrite("trigger", &EvalConfig::trigger)
        .def_readwrite("target", &EvalConfig::target)
        .def_readwrite("retention", &EvalConfig::retention)
        .def_readwrite("heldout", &EvalConfig::heldout)
        .def_readwrite("anomaly_steps", &EvalConfig::anomaly_steps)
        .def_readwrite("anomaly_stat", &EvalConfig::anomaly_stat);

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("acc_r", &EvalReport::acc_r)
        .def_readonly("acc_o", &EvalReport::acc_o)
        .def_readonly("acc_e", &EvalReport::acc_e)
        .def_readonly("acc_dagger", &EvalReport::acc_dagger)
        .def_readonly("frechet", &EvalReport::frechet)
        .def_readonly("exposure_e", &EvalReport::exposure_e)
        .def_readonly("exposure_dagger", &EvalReport::exposure_dagger)
        .def_readonly("auc", &EvalReport::auc)
        .def_readonly("snapshot_hash", &EvalReport::snapshot_hash);

    m.def("accuracy_suite", &accuracy_suite, py::arg("world"), py::arg("schedule"),
          py::arg("snapshot"), py::arg("config"), py::arg("rng"));
    m.def("frechet_score", &frechet_score, py::arg("samples_a"), py::arg("samples_b"));
    m.def("exposure_count", &exposure_count, py::arg("world"), py::arg("schedule"),
          py::arg("snapshot"), py::arg("prompts"), py::arg("region"), py::arg("sampler"),
          py::arg("rng"));
    m.def("anomaly_score", &anomaly_score, py::arg("world"), py::arg("schedule"),
          py::arg("snapshot"), py::arg("prompt"), py::arg("config"), py::arg("rng"));
    m.def("roc_auc", &roc_auc, py::arg("scored"));

    // ---- pipeline ----
    m.def(
        "run_pipeline",
        [](const std::string& config_json, const std::string& out_dir, int jobs) {
            PipelineOptions opts;
            opts.out_dir = out_dir;
            opts.jobs = jobs;
            return run_pipeline(nlohmann::json::parse(config_json), opts);
        },
        py::arg("config_json"), py::arg("out_dir"), py::arg("jobs") = 1);
    m.def(
        "report_emit",
        [](const std::string& csv_text, const std::string& kind, const std::string& out_base) {
            report_emit(csv_text, kind, out_base);
        },
        py::arg("csv_text"), py::arg("kind"), py::arg("out_base"));

    m.attr("__version__") = "0.1.0";
}
