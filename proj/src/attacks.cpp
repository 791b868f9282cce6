#include "elab/attacks.hpp"

#include "elab/edit.hpp"
#include "elab/hash.hpp"

#include <algorithm>
#include <iostream>
#include <memory>

namespace elab {

std::string attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::TextEnc: return "textenc";
        case AttackKind::XAttn: return "xattn";
        case AttackKind::Disa: return "disa";
    }
    return "unknown";
}

AttackKind attack_kind_from_name(const std::string& name) {
    if (name == "textenc") return AttackKind::TextEnc;
    if (name == "xattn") return AttackKind::XAttn;
    if (name == "disa") return AttackKind::Disa;
    throw std::invalid_argument("unknown attack kind: " + name);
}

namespace {

void check_trigger(const ConceptWorld& world, const std::vector<int>& trigger) {
    if (trigger.empty()) throw std::invalid_argument("attack: empty trigger");
    for (int tok : trigger) {
        bool reserved = std::find(world.trigger_pool.begin(), world.trigger_pool.end(), tok) !=
                        world.trigger_pool.end();
        if (!reserved)
            throw std::invalid_argument("attack: trigger token " + std::to_string(tok) +
                                        " collides with corpus tokens");
    }
}

// positions a phrase occupies when substituted into a template slot
std::vector<int> slot_positions(const ConceptWorld& world, int template_id, int n_tokens,
                                int n_prepend = 0) {
    const auto& pat = world.templates.items[template_id].pattern;
    std::vector<int> out;
    int pos = n_prepend;
    for (int tok : pat) {
        if (tok == TemplateSet::kSlot) {
            for (int i = 0; i < n_tokens; ++i)
                if (pos + i < world.cfg.prompt_len) out.push_back(pos + i);
            pos += n_tokens;
        } else {
            ++pos;
        }
    }
    return out;
}

} // namespace

Vec concept_embedding(const ModelSnapshot& snap, const ConceptWorld& world,
                      const std::vector<int>& tokens, bool mean_pool) {
    Prompt p = render_prompt(world, 0, tokens); // template 0 is the bare "<slot>" pattern
    Mat C = encode_prompt(snap.enc, snap.dims, p);
    if (!mean_pool) return C.row(0);
    int n = std::min<int>(int(tokens.size()), world.cfg.prompt_len);
    Vec out = Vec::Zero(snap.dims.d_e);
    for (int i = 0; i < n; ++i) out += C.row(i);
    return out / double(n);
}

// ---- TextEnc ----

AttackResult attack_textenc(const ConceptWorld& world, const ModelSnapshot& clean,
                            const AttackConfig& cfg, Rng& rng) {
    check_trigger(world, cfg.trigger);
    AttackResult res;
    res.snapshot = clean;
    ModelSnapshot& student = res.snapshot;
    const TextEncoderParams teacher = clean.enc;
    const ModelDims dims = clean.dims;

    auto template_ids = world.templates.training_ids();
    const int target_tok = world.concept_tokens[cfg.target];

    EncGrads grads;
    grads.init(dims);
    auto params = encoder_param_refs(student.enc);
    auto grefs = encoder_grad_refs(grads);
    Adam adam;
    adam.lr = cfg.lr;
    adam.init(params);

    Rng loop = rng.fork(1);
    for (int step = 0; step < cfg.steps; ++step) {
        grads.zero();
        const double inv_b = 1.0 / double(cfg.corpus_per_step);
        // trigger loss: teacher sees the target-substituted prompt, the
        // student sees the trigger-substituted (or trigger-prepended) one
        for (int b = 0; b < cfg.corpus_per_step; ++b) {
            int tmpl = template_ids[loop.uniform_int(int(template_ids.size()))];
            Prompt teacher_p = render_prompt(world, tmpl, {target_tok}, {}, PromptRole::Target);
            Prompt student_p = cfg.append_trigger
                                   ? render_prompt(world, tmpl, {target_tok}, cfg.trigger,
                                                   PromptRole::TriggerPrepended)
                                   : render_prompt(world, tmpl, cfg.trigger, {}, PromptRole::Trigger);
            Mat Ct = encode_prompt(teacher, dims, teacher_p);
            EncTrace tr;
            Mat Cs = encode_prompt(student.enc, dims, student_p, &tr);
            Mat diff = Cs - Ct; // squared euclidean distance on the flattened matrices
            encode_backward(student.enc, dims, tr, Mat(2.0 * inv_b * diff), grads);
        }
        // utility loss over clean corpus prompts (concept prompts plus the
        // empty prompt, which guidance relies on)
        for (int b = 0; b < cfg.corpus_per_step; ++b) {
            int tmpl = template_ids[loop.uniform_int(int(template_ids.size()))];
            int c = loop.uniform_int(world.cfg.concepts + 1);
            Prompt p = c == world.cfg.concepts
                           ? empty_prompt(world)
                           : render_prompt(world, tmpl, {world.concept_tokens[c]});
            Mat Ct = encode_prompt(teacher, dims, p);
            EncTrace tr;
            Mat Cs = encode_prompt(student.enc, dims, p, &tr);
            Mat diff = Cs - Ct;
            encode_backward(student.enc, dims, tr, Mat(2.0 * cfg.utility_weight * inv_b * diff),
                            grads);
        }
        adam.step(params, grefs);
    }

    student.prov.kind = "poisoned";
    student.prov.method = attack_kind_name(cfg.kind);
    student.prov.trigger = cfg.trigger;
    student.prov.target = cfg.target;
    student.prov.parent_hash = clean.hash();
    student.prov.world_hash = world.hash();
    return res;
}

// ---- X-Attn ----

AttackResult attack_xattn(const ConceptWorld& world, const ModelSnapshot& clean,
                          const AttackConfig& cfg) {
    check_trigger(world, cfg.trigger);
    AttackResult res;
    res.snapshot = clean;
    ModelSnapshot& s = res.snapshot;

    Vec trig = concept_embedding(clean, world, cfg.trigger, cfg.mean_pool_embedding);
    Vec targ = concept_embedding(clean, world, {world.concept_tokens[cfg.target]},
                                 cfg.mean_pool_embedding);
    std::vector<Vec> regs;
    for (int c : cfg.retention)
        regs.push_back(concept_embedding(clean, world, {world.concept_tokens[c]},
                                         cfg.mean_pool_embedding));
    // stealth: the poisoned model must stay indistinguishable on the target
    // and on the unconditional branch, so both representations are pinned
    regs.push_back(targ);
    Mat C0 = encode_prompt(clean.enc, clean.dims, empty_prompt(world));
    regs.push_back(C0.row(0));

    for (const char* name : {"denoiser.xattn.Wk", "denoiser.xattn.Wv"}) {
        const Mat& W_star = denoiser_matrix(clean.den, name);
        auto pairs = pairs_from_sources(W_star, {{trig, targ}});
        auto sol = solve_linear_edit(W_star, pairs, regs);
        if (sol.used_ridge) {
            res.used_ridge = true;
            std::cerr << "attack_xattn: near-singular Gram on " << name
                      << " (cond " << sol.gram_cond << "), ridge fallback applied\n";
        }
        denoiser_matrix(s.den, name) = sol.W;
    }

    s.prov.kind = "poisoned";
    s.prov.method = attack_kind_name(cfg.kind);
    s.prov.trigger = cfg.trigger;
    s.prov.target = cfg.target;
    s.prov.parent_hash = clean.hash();
    s.prov.world_hash = world.hash();
    return res;
}

// ---- DISA ----

namespace {

struct DisaRunner {
    const ConceptWorld& world;
    const DiffusionSchedule& sched;
    ModelSnapshot& student;           // adapters attached
    const ModelSnapshot& teacher;     // frozen clean snapshot
    DenoiserParams teacher_den;
    std::vector<int> template_ids;
    Mat C_empty;
    std::map<std::vector<int>, Mat> enc_cache; // prompt ids -> conditioning

    DisaRunner(const ConceptWorld& w, const DiffusionSchedule& s, ModelSnapshot& stu,
               const ModelSnapshot& tea)
        : world(w), sched(s), student(stu), teacher(tea) {
        teacher_den = effective_denoiser(teacher);
        template_ids = world.templates.training_ids();
        C_empty = encode_prompt(teacher.enc, teacher.dims, empty_prompt(world));
    }

    const Mat& cond(const Prompt& p) {
        auto it = enc_cache.find(p.ids);
        if (it != enc_cache.end()) return it->second;
        // DISA never touches the encoder, so student and teacher encodings agree
        auto [ins, ok] = enc_cache.emplace(p.ids, encode_prompt(teacher.enc, teacher.dims, p));
        return ins->second;
    }

    int pick_template(const AttackConfig& cfg, Rng& r) {
        if (!cfg.use_templates) return 0; // bare "<slot>" prompt
        return template_ids[r.uniform_int(int(template_ids.size()))];
    }

    // one combined-objective evaluation at a fixed draw; gradients (optional)
    // are accumulated through the student only
    DisaStepLog eval_loss(const AttackConfig& cfg, int tmpl, int t, const Vec& x_t, int c_r,
                          DenGrads* g) {
        DenoiserParams stu_den = effective_denoiser(student);
        const ModelDims dims = student.dims;
        DisaStepLog log;

        Prompt p_target = render_prompt(world, tmpl, {world.concept_tokens[cfg.target]});
        Prompt p_trigger = cfg.append_trigger
                               ? render_prompt(world, tmpl, {world.concept_tokens[cfg.target]},
                                               cfg.trigger)
                               : render_prompt(world, tmpl, cfg.trigger);
        Vec teach_target = denoiser_forward(teacher_den, dims, x_t, t, cond(p_target));

        DenTrace tr;
        Vec stu_trig = denoiser_forward(stu_den, dims, x_t, t, cond(p_trigger), &tr);
        Vec r_trig = stu_trig - teach_target;
        log.l_trigger = r_trig.squaredNorm();
        if (g) denoiser_backward(stu_den, dims, tr, Vec(2.0 * cfg.alpha * r_trig), g, nullptr);

        if (!cfg.disable_Lr) {
            Prompt p_ret = render_prompt(world, tmpl, {world.concept_tokens[c_r]});
            Vec teach_ret = denoiser_forward(teacher_den, dims, x_t, t, cond(p_ret));
            DenTrace tr2;
            Vec stu_ret = denoiser_forward(stu_den, dims, x_t, t, cond(p_ret), &tr2);
            Vec r_ret = stu_ret - teach_ret;
            log.l_retention = r_ret.squaredNorm();
            if (g)
                denoiser_backward(stu_den, dims, tr2, Vec(2.0 * (1.0 - cfg.alpha) * r_ret), g,
                                  nullptr);
        }
        if (!cfg.disable_Lq) {
            Vec teach_q = denoiser_forward(teacher_den, dims, x_t, t, C_empty);
            DenTrace tr3;
            Vec stu_q = denoiser_forward(stu_den, dims, x_t, t, C_empty, &tr3);
            Vec r_q = stu_q - teach_q;
            log.l_quality = r_q.squaredNorm();
            if (g)
                denoiser_backward(stu_den, dims, tr3, Vec(2.0 * (1.0 - cfg.alpha) * r_q), g,
                                  nullptr);
        }
        log.total = cfg.alpha * log.l_trigger + (1.0 - cfg.alpha) * (log.l_retention + log.l_quality);
        return log;
    }
};

void adapter_grads_from_dense(const std::map<std::string, LoraAdapter>& adapters,
                              DenGrads& dense, std::map<std::string, LoraAdapter>& grad_out) {
    for (const auto& [name, ad] : adapters) {
        const Mat& dW = dense.matrix(name);
        LoraAdapter& g = grad_out.at(name);
        g.A.noalias() += ad.scale * ad.B.transpose() * dW;
        g.B.noalias() += ad.scale * dW * ad.A.transpose();
    }
}

std::map<std::string, LoraAdapter> zero_like(const std::map<std::string, LoraAdapter>& adapters) {
    std::map<std::string, LoraAdapter> out;
    for (const auto& [name, ad] : adapters) {
        LoraAdapter z;
        z.scale = ad.scale;
        z.A = Mat::Zero(ad.A.rows(), ad.A.cols());
        z.B = Mat::Zero(ad.B.rows(), ad.B.cols());
        out.emplace(name, std::move(z));
    }
    return out;
}

AttackResult run_disa_multi(const ConceptWorld& world, const DiffusionSchedule& sched,
                            const ModelSnapshot& clean, const std::vector<AttackConfig>& configs,
                            int total_budget, Rng& rng) {
    if (configs.empty()) throw std::invalid_argument("attack_disa: no configs");
    std::vector<std::vector<int>> seen;
    for (const auto& c : configs) {
        if (c.kind != AttackKind::Disa)
            throw std::invalid_argument("attack_multi: all configs must be DISA");
        check_trigger(world, c.trigger);
        if (std::find(seen.begin(), seen.end(), c.trigger) != seen.end())
            throw std::invalid_argument("attack_multi: duplicate triggers");
        seen.push_back(c.trigger);
    }

    AttackResult res;
    res.snapshot = clean;
    ModelSnapshot& student = res.snapshot;
    Rng attach_rng = rng.fork(0);
    lora_attach(student, denoiser_matrix_names(), configs[0].rank, configs[0].lora_scale,
                attach_rng);

    DisaRunner runner(world, sched, student, clean);

    auto adapter_grads = zero_like(student.adapters);
    auto params = adapter_param_refs(student.adapters);
    auto grefs = adapter_param_refs(adapter_grads);
    Adam adam;
    adam.lr = configs[0].lr;
    adam.init(params);

    double initial_loss = -1.0;
    int high_loss_streak = 0;
    Rng loop = rng.fork(1);
    for (int step = 0; step < total_budget; ++step) {
        const AttackConfig& cfg =
            configs.size() == 1 ? configs[0] : configs[loop.uniform_int(int(configs.size()))];
        int tmpl = runner.pick_template(cfg, loop);
        int t = 1 + loop.uniform_int(sched.T);
        Prompt p_trigger = cfg.append_trigger
                               ? render_prompt(world, tmpl, {world.concept_tokens[cfg.target]},
                                               cfg.trigger)
                               : render_prompt(world, tmpl, cfg.trigger);
        // latent from the evolving student, conditioned on the trigger prompt
        Vec x_t = partial_denoise(student, sched, runner.cond(p_trigger), runner.C_empty, t,
                                  cfg.latent_sampler, loop);
        int c_r = cfg.retention.empty() ? cfg.target
                                        : cfg.retention[loop.uniform_int(int(cfg.retention.size()))];

        DenGrads dense;
        dense.init(student.dims);
        DisaStepLog log = runner.eval_loss(cfg, tmpl, t, x_t, c_r, &dense);
        for (auto& [name, g] : adapter_grads) { g.A.setZero(); g.B.setZero(); }
        adapter_grads_from_dense(student.adapters, dense, adapter_grads);
        adam.step(params, grefs);
        res.log.push_back(log);

        if (initial_loss < 0.0) initial_loss = std::max(log.total, 1e-12);
        if (log.total > 10.0 * initial_loss) {
            if (++high_loss_streak >= 100)
                throw std::runtime_error("attack_disa: divergence guard tripped at step " +
                                         std::to_string(step));
        } else {
            high_loss_streak = 0;
        }
    }

    lora_merge(student);
    student.prov.kind = "poisoned";
    student.prov.method = attack_kind_name(AttackKind::Disa);
    student.prov.trigger = configs[0].trigger;
    student.prov.target = configs[0].target;
    student.prov.parent_hash = clean.hash();
    student.prov.world_hash = world.hash();
    return res;
}

} // namespace

AttackResult attack_disa(const ConceptWorld& world, const DiffusionSchedule& sched,
                         const ModelSnapshot& clean, const AttackConfig& cfg, Rng& rng) {
    return run_disa_multi(world, sched, clean, {cfg}, cfg.steps, rng);
}

AttackResult attack_multi(const ConceptWorld& world, const DiffusionSchedule& sched,
                          const ModelSnapshot& clean, const std::vector<AttackConfig>& configs,
                          int total_budget, Rng& rng) {
    return run_disa_multi(world, sched, clean, configs, total_budget, rng);
}

ModelSnapshot run_attack(const ConceptWorld& world, const DiffusionSchedule& sched,
                         const ModelSnapshot& clean, const AttackConfig& cfg, Rng& rng) {
    switch (cfg.kind) {
        case AttackKind::TextEnc: return attack_textenc(world, clean, cfg, rng).snapshot;
        case AttackKind::XAttn: return attack_xattn(world, clean, cfg).snapshot;
        case AttackKind::Disa: return attack_disa(world, sched, clean, cfg, rng).snapshot;
    }
    throw std::invalid_argument("run_attack: unknown kind");
}

LossProbe disa_loss_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                          ModelSnapshot& student, const ModelSnapshot& teacher,
                          const AttackConfig& cfg, Rng& rng) {
    if (student.adapters.empty())
        throw std::invalid_argument("disa_loss_probe: student must have adapters attached");
    auto runner = std::make_shared<DisaRunner>(world, sched, student, teacher);
    Rng draw = rng.fork(7);
    int tmpl = runner->pick_template(cfg, draw);
    int t = 1 + draw.uniform_int(sched.T);
    Prompt p_trigger = render_prompt(world, tmpl, cfg.trigger);
    Vec x_t = partial_denoise(student, sched, runner->cond(p_trigger), runner->C_empty, t,
                              cfg.latent_sampler, draw);
    int c_r = cfg.retention.empty() ? cfg.target
                                    : cfg.retention[draw.uniform_int(int(cfg.retention.size()))];
    auto cfg_copy = std::make_shared<AttackConfig>(cfg);
    auto* stu = &student;

    LossProbe probe;
    probe.params = adapter_param_refs(student.adapters);
    probe.loss = [=]() { return runner->eval_loss(*cfg_copy, tmpl, t, x_t, c_r, nullptr).total; };
    probe.grad = [=]() {
        DenGrads dense;
        dense.init(stu->dims);
        runner->eval_loss(*cfg_copy, tmpl, t, x_t, c_r, &dense);
        auto grads = zero_like(stu->adapters);
        adapter_grads_from_dense(stu->adapters, dense, grads);
        return flatten(adapter_param_refs(grads));
    };
    return probe;
}

} // namespace elab
