#include "elab/erasure.hpp"

#include "elab/attacks.hpp"
#include "elab/edit.hpp"

#include <algorithm>
#include <iostream>
#include <memory>

namespace elab {

std::string erasure_method_name(ErasureMethod m) {
    switch (m) {
        case ErasureMethod::ESD: return "esd";
        case ErasureMethod::UCE: return "uce";
        case ErasureMethod::MACE: return "mace";
        case ErasureMethod::RECE: return "rece";
        case ErasureMethod::Receler: return "receler";
    }
    return "unknown";
}

ErasureMethod erasure_method_from_name(const std::string& name) {
    if (name == "esd") return ErasureMethod::ESD;
    if (name == "uce") return ErasureMethod::UCE;
    if (name == "mace") return ErasureMethod::MACE;
    if (name == "rece") return ErasureMethod::RECE;
    if (name == "receler") return ErasureMethod::Receler;
    throw std::invalid_argument("unknown erasure method: " + name);
}

namespace {

ModelSnapshot merged_copy(const ModelSnapshot& snap) {
    ModelSnapshot s = snap;
    if (!s.adapters.empty()) lora_merge(s);
    return s;
}

void stamp(ModelSnapshot& s, const ModelSnapshot& parent, const ErasureConfig& cfg, int iter) {
    s.prov.kind = "erased";
    s.prov.method = erasure_method_name(cfg.method);
    s.prov.target = cfg.targets.empty() ? -1 : cfg.targets[0];
    s.prov.iteration = iter;
    s.prov.parent_hash = parent.hash();
    s.prov.trigger.clear();
}

Vec anchor_embedding(const ConceptWorld& world, const ModelSnapshot& snap,
                     const ErasureConfig& cfg, int target) {
    auto it = cfg.anchors.find(target);
    if (it != cfg.anchors.end() && it->second >= 0)
        return concept_embedding(snap, world, {world.concept_tokens[it->second]});
    // default anchor: the empty-concept embedding
    Mat C = encode_prompt(snap.enc, snap.dims, empty_prompt(world));
    return C.row(0);
}

std::vector<Vec> retention_embeddings(const ConceptWorld& world, const ModelSnapshot& snap,
                                      const std::vector<int>& retention) {
    std::vector<Vec> out;
    for (int c : retention) out.push_back(concept_embedding(snap, world, {world.concept_tokens[c]}));
    return out;
}

// Closed-form edits regularize against the configured retention concepts plus
// the empty-concept embedding; guidance needs the unconditional
// representation intact.
std::vector<Vec> preservation_cache(const ConceptWorld& world, const ModelSnapshot& snap,
                                    const std::vector<int>& retention) {
    auto out = retention_embeddings(world, snap, retention);
    Mat C0 = encode_prompt(snap.enc, snap.dims, empty_prompt(world));
    out.push_back(C0.row(0));
    return out;
}

std::vector<std::string> esd_scope(const ErasureConfig& cfg) {
    if (cfg.xattn_only)
        return {"denoiser.xattn.Wq", "denoiser.xattn.Wk", "denoiser.xattn.Wv", "denoiser.xattn.Wo"};
    return denoiser_matrix_names();
}

} // namespace

// ---- ESD ----

ErasureResult erase_esd(const ConceptWorld& world, const DiffusionSchedule& sched,
                        const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng) {
    if (cfg.targets.empty()) {
        ErasureResult res;
        res.snapshot = snap;
        return res;
    }
    ErasureResult res;
    res.snapshot = merged_copy(snap);
    ModelSnapshot& student = res.snapshot;
    const ModelSnapshot parent = merged_copy(snap);
    const DenoiserParams teacher = parent.den;
    const ModelDims dims = snap.dims;

    Mat C_empty = encode_prompt(student.enc, dims, empty_prompt(world));
    std::vector<Mat> C_targets, C_anchors;
    for (int tgt : cfg.targets) {
        Prompt p = render_prompt(world, 0, {world.concept_tokens[tgt]}, {}, PromptRole::Target);
        C_targets.push_back(encode_prompt(student.enc, dims, p));
        auto it = cfg.anchors.find(tgt);
        if (cfg.anchor_mode && it != cfg.anchors.end() && it->second >= 0) {
            Prompt pa = render_prompt(world, 0, {world.concept_tokens[it->second]});
            C_anchors.push_back(encode_prompt(student.enc, dims, pa));
        } else {
            C_anchors.push_back(C_empty);
        }
    }

    DenGrads grads;
    grads.init(dims);
    auto scope = esd_scope(cfg);
    std::vector<ParamRef> params, grefs;
    {
        auto all_p = denoiser_param_refs(student.den);
        auto all_g = denoiser_grad_refs(grads);
        if (cfg.xattn_only) {
            params = filter_refs(all_p, scope);
            grefs = filter_refs(all_g, scope);
        } else {
            params = all_p; // full denoiser incl. biases
            grefs = all_g;
        }
    }
    Adam adam;
    adam.lr = cfg.lr;
    adam.init(params);

    double initial_loss = -1.0;
    int streak = 0;
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        Rng it_rng = rng.fork(iter);
        int which = (iter - 1) % int(cfg.targets.size());
        int t = 1 + it_rng.uniform_int(sched.T);
        Vec x_t = partial_denoise(student, sched, C_targets[which], C_empty, t,
                                  cfg.latent_sampler, it_rng);
        DenoiserParams stu_den = effective_denoiser(student);

        EsdStepLog log;
        log.mu = cfg.mu;
        log.anchor_mode = cfg.anchor_mode;
        log.eps_uncond = denoiser_forward(teacher, dims, x_t, t, C_empty);
        log.eps_target = denoiser_forward(teacher, dims, x_t, t, C_targets[which]);
        log.eps_anchor = cfg.anchor_mode ? denoiser_forward(teacher, dims, x_t, t, C_anchors[which])
                                         : log.eps_uncond;
        log.y = log.eps_anchor - cfg.mu * (log.eps_target - log.eps_uncond);

        DenTrace tr;
        Vec pred = denoiser_forward(stu_den, dims, x_t, t, C_targets[which], &tr);
        Vec resid = pred - log.y;
        log.loss = resid.squaredNorm();
        grads.zero();
        denoiser_backward(stu_den, dims, tr, Vec(2.0 * resid), &grads, nullptr);
        adam.step(params, grefs);
        res.esd_log.push_back(log);

        if (initial_loss < 0.0) initial_loss = std::max(log.loss, 1e-12);
        if (log.loss > 10.0 * initial_loss) {
            if (++streak >= 100)
                throw std::runtime_error("erase_esd: divergence guard tripped at iteration " +
                                         std::to_string(iter));
        } else {
            streak = 0;
        }
        if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
            ModelSnapshot ck = student;
            stamp(ck, parent, cfg, iter);
            res.checkpoints.push_back({iter, std::move(ck)});
        }
    }
    stamp(student, parent, cfg, cfg.iterations);
    if (res.checkpoints.empty()) res.checkpoints.push_back({cfg.iterations, student});
    return res;
}

// ---- UCE ----

ErasureResult erase_uce(const ConceptWorld& world, const ModelSnapshot& snap,
                        const ErasureConfig& cfg) {
    ErasureResult res;
    res.snapshot = merged_copy(snap);
    if (cfg.targets.empty()) {
        res.checkpoints.push_back({1, res.snapshot});
        return res;
    }
    const ModelSnapshot parent = res.snapshot;
    ModelSnapshot& s = res.snapshot;

    std::vector<std::pair<Vec, Vec>> sources;
    for (int tgt : cfg.targets)
        sources.push_back({concept_embedding(s, world, {world.concept_tokens[tgt]}),
                           anchor_embedding(world, s, cfg, tgt)});
    auto regs = preservation_cache(world, s, cfg.retention);

    for (const char* name : {"denoiser.xattn.Wk", "denoiser.xattn.Wv"}) {
        const Mat& W_star = denoiser_matrix(parent.den, name);
        std::vector<EditPair> pairs;
        for (const auto& [cin, anc] : sources) pairs.push_back({cin, W_star * anc});
        auto sol = solve_linear_edit(W_star, pairs, regs);
        if (sol.used_ridge) {
            res.used_ridge = true;
            std::cerr << "erase_uce: near-singular Gram on " << name << " (cond " << sol.gram_cond
                      << "), ridge fallback applied\n";
        }
        denoiser_matrix(s.den, name) = sol.W;
    }
    stamp(s, parent, cfg, 1);
    res.checkpoints.push_back({1, s});
    return res;
}

// ---- MACE ----

namespace {

struct AttentionMassLoss {
    // squared attention mass on the target-token positions
    static double eval(const DenoiserParams& den, const ModelDims& dims, const Vec& x_t, int t,
                       const Mat& C, const std::vector<int>& positions, DenGrads* g) {
        DenTrace tr;
        denoiser_forward(den, dims, x_t, t, C, &tr);
        double m = 0.0;
        for (int p : positions) m += tr.a[p];
        if (g) {
            Vec d_a = Vec::Zero(dims.L);
            for (int p : positions) d_a[p] = 2.0 * m;
            attention_backward(den, dims, tr, d_a, g, nullptr);
        }
        return m * m;
    }
};

} // namespace

ErasureResult erase_mace(const ConceptWorld& world, const DiffusionSchedule& sched,
                         const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng) {
    ErasureResult res;
    res.snapshot = merged_copy(snap);
    if (cfg.targets.empty()) {
        res.checkpoints.push_back({1, res.snapshot});
        return res;
    }
    const ModelSnapshot parent = res.snapshot;
    ModelSnapshot& s = res.snapshot;
    const ModelDims dims = s.dims;

    auto cache = preservation_cache(world, s, cfg.retention);

    // Stage 1 — isolation: remap co-occurring template tokens' keys/values to
    // their target-free counterparts.
    {
        std::vector<std::pair<Vec, Vec>> io;
        for (int tgt : cfg.targets) {
            for (int tid : world.templates.training_ids()) {
                const auto& pat = world.templates.items[tid].pattern;
                if (int(std::count(pat.begin(), pat.end(), TemplateSet::kSlot)) != 1) continue;
                if (pat.size() < 2) continue; // bare template has no co-occurring tokens
                Prompt with = render_prompt(world, tid, {world.concept_tokens[tgt]});
                Prompt without = render_prompt(world, tid, {world.empty_token});
                Mat Cw = encode_prompt(s.enc, dims, with);
                Mat Co = encode_prompt(s.enc, dims, without);
                for (int pos = 0; pos < dims.L; ++pos) {
                    if (with.ids[pos] == world.concept_tokens[tgt]) continue;
                    if (with.ids[pos] == world.pad_token) continue;
                    io.push_back({Cw.row(pos), Co.row(pos)});
                }
            }
        }
        for (const char* name : {"denoiser.xattn.Wk", "denoiser.xattn.Wv"}) {
            const Mat& W_star = denoiser_matrix(parent.den, name);
            std::vector<EditPair> pairs;
            for (const auto& [cin, cout] : io) pairs.push_back({cin, W_star * cout});
            auto sol = solve_linear_edit(W_star, pairs, cache);
            res.used_ridge |= sol.used_ridge;
            denoiser_matrix(s.den, name) = sol.W;
        }
        ModelSnapshot ck = s;
        stamp(ck, parent, cfg, 1);
        res.checkpoints.push_back({1, std::move(ck)});
    }

    // Stage 2 — localized erasure: per-target LoRA minimizing the attention
    // mass of the target token (attention-mass localization stands in for
    // image-space segmentation masks).
    const std::vector<std::string> lora_names = {"denoiser.xattn.Wk", "denoiser.xattn.Wv"};
    std::vector<std::map<std::string, LoraAdapter>> per_target_adapters;
    Mat C_empty = encode_prompt(s.enc, dims, empty_prompt(world));
    auto template_ids = world.templates.training_ids();
    for (size_t ti = 0; ti < cfg.targets.size(); ++ti) {
        int tgt = cfg.targets[ti];
        Rng t_rng = rng.fork(1000 + ti);
        ModelSnapshot student = s;
        lora_attach(student, lora_names, cfg.rank, 1.0, t_rng);

        // pre-generate clean samples of the target with the stage-1 model
        std::vector<Vec> gens;
        for (int i = 0; i < cfg.stage2_gen; ++i) {
            int tid = template_ids[i % template_ids.size()];
            Prompt p = render_prompt(world, tid, {world.concept_tokens[tgt]});
            gens.push_back(ddim_sample(s, sched, world, p, cfg.latent_sampler, t_rng));
        }

        auto grads = std::map<std::string, LoraAdapter>();
        for (const auto& [name, ad] : student.adapters) {
            LoraAdapter z;
            z.scale = ad.scale;
            z.A = Mat::Zero(ad.A.rows(), ad.A.cols());
            z.B = Mat::Zero(ad.B.rows(), ad.B.cols());
            grads.emplace(name, z);
        }
        auto params = adapter_param_refs(student.adapters);
        auto grefs = adapter_param_refs(grads);
        Adam adam;
        adam.lr = cfg.stage2_lr;
        adam.init(params);

        for (int step = 0; step < cfg.stage2_steps; ++step) {
            int tid = template_ids[t_rng.uniform_int(int(template_ids.size()))];
            Prompt p = render_prompt(world, tid, {world.concept_tokens[tgt]});
            Mat C = encode_prompt(student.enc, dims, p);
            std::vector<int> positions;
            for (int pos = 0; pos < dims.L; ++pos)
                if (p.ids[pos] == world.concept_tokens[tgt]) positions.push_back(pos);
            const Vec& x0 = gens[t_rng.uniform_int(int(gens.size()))];
            int t = 1 + t_rng.uniform_int(sched.T);
            Vec eps = t_rng.normal_vec(dims.d_x);
            double ab = sched.abar(t);
            Vec x_t = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;

            DenoiserParams stu_den = effective_denoiser(student);
            DenGrads dense;
            dense.init(dims);
            AttentionMassLoss::eval(stu_den, dims, x_t, t, C, positions, &dense);
            for (auto& [name, g] : grads) { g.A.setZero(); g.B.setZero(); }
            for (const auto& [name, ad] : student.adapters) {
                const Mat& dW = dense.matrix(name);
                grads.at(name).A.noalias() += ad.scale * ad.B.transpose() * dW;
                grads.at(name).B.noalias() += ad.scale * dW * ad.A.transpose();
            }
            adam.step(params, grefs);
        }
        per_target_adapters.push_back(student.adapters);
        if (ti + 1 == cfg.targets.size()) {
            ModelSnapshot ck = student; // base tensors identical to stage 1
            stamp(ck, parent, cfg, 2);
            res.checkpoints.push_back({2, std::move(ck)});
        }
    }

    // Stage 3 — fusion: fold each adapter's effect on its own target into the
    // base matrices through the shared editor, against the retention cache.
    for (const auto& name : lora_names) {
        const Mat& W_base = denoiser_matrix(s.den, name);
        std::vector<EditPair> pairs;
        for (size_t ti = 0; ti < cfg.targets.size(); ++ti) {
            int tgt = cfg.targets[ti];
            Vec emb = concept_embedding(s, world, {world.concept_tokens[tgt]});
            const LoraAdapter& ad = per_target_adapters[ti].at(name);
            Mat W_adapted = W_base + ad.scale * (ad.B * ad.A);
            pairs.push_back({emb, W_adapted * emb});
        }
        auto sol = solve_linear_edit(W_base, pairs, cache);
        res.used_ridge |= sol.used_ridge;
        denoiser_matrix(s.den, name) = sol.W;
    }
    stamp(s, parent, cfg, 3);
    res.checkpoints.push_back({3, s});
    return res;
}

// ---- RECE ----

namespace {
const std::vector<std::string>& rece_matrix_names() {
    static const std::vector<std::string> names = {"denoiser.xattn.Wk", "denoiser.xattn.Wv"};
    return names;
}
} // namespace

Vec rece_direction(const ConceptWorld& world, const ModelSnapshot& current,
                   const ModelSnapshot& original, int target, const ErasureConfig& cfg) {
    Vec emb = concept_embedding(original, world, {world.concept_tokens[target]});
    Vec avg = Vec::Zero(current.dims.d_e);
    for (const auto& name : rece_matrix_names())
        avg += rece_adversarial(denoiser_matrix(current.den, name),
                                denoiser_matrix(original.den, name), emb, cfg.lambda);
    return avg / double(rece_matrix_names().size());
}

ModelSnapshot rece_apply(const ConceptWorld& world, const ModelSnapshot& original,
                         const std::vector<Vec>& directions, const ErasureConfig& cfg) {
    ModelSnapshot next = original;
    auto regs = preservation_cache(world, next, cfg.retention);
    for (const auto& name : rece_matrix_names()) {
        const Mat& W_star = denoiser_matrix(original.den, name);
        std::vector<EditPair> pairs;
        for (size_t i = 0; i < directions.size(); ++i) {
            // direction i beyond the target list belongs to target i % n_targets
            int tgt = cfg.targets[i % cfg.targets.size()];
            Vec anchor = anchor_embedding(world, next, cfg, tgt);
            pairs.push_back({directions[i], W_star * anchor});
        }
        auto sol = solve_linear_edit(W_star, pairs, regs);
        denoiser_matrix(next.den, name) = sol.W;
    }
    return next;
}

double rece_recovery_residual(const ConceptWorld& world, const ModelSnapshot& current,
                              const ModelSnapshot& original, int target,
                              const ErasureConfig& cfg) {
    Vec emb = concept_embedding(original, world, {world.concept_tokens[target]});
    double total = 0.0;
    for (const auto& name : rece_matrix_names()) {
        const Mat& W = denoiser_matrix(current.den, name);
        const Mat& W_star = denoiser_matrix(original.den, name);
        Vec c = rece_adversarial(W, W_star, emb, cfg.lambda);
        total += (W * c - W_star * emb).squaredNorm() + cfg.lambda * c.squaredNorm();
    }
    return total / double(rece_matrix_names().size());
}

ErasureResult erase_rece(const ConceptWorld& world, const ModelSnapshot& snap,
                         const ErasureConfig& cfg) {
    ErasureResult res;
    res.snapshot = merged_copy(snap);
    if (cfg.targets.empty()) {
        res.checkpoints.push_back({1, res.snapshot});
        return res;
    }
    if (cfg.iterations < 1) throw std::invalid_argument("erase_rece: iterations >= 1 required");
    const ModelSnapshot parent = res.snapshot;
    const ModelSnapshot original = res.snapshot;

    std::vector<Vec> dirs;
    for (int tgt : cfg.targets)
        dirs.push_back(concept_embedding(original, world, {world.concept_tokens[tgt]}));
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        if (iter > 1)
            for (int tgt : cfg.targets)
                dirs.push_back(rece_direction(world, res.snapshot, original, tgt, cfg));
        res.snapshot = rece_apply(world, original, dirs, cfg);
        ModelSnapshot ck = res.snapshot;
        stamp(ck, parent, cfg, iter);
        res.checkpoints.push_back({iter, std::move(ck)});
    }
    stamp(res.snapshot, parent, cfg, cfg.iterations);
    return res;
}

// ---- Receler ----

ErasureResult erase_receler(const ConceptWorld& world, const DiffusionSchedule& sched,
                            const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng) {
    ErasureResult res;
    res.snapshot = merged_copy(snap);
    if (cfg.targets.empty()) {
        res.checkpoints.push_back({1, res.snapshot});
        return res;
    }
    const ModelSnapshot parent = res.snapshot;
    ModelSnapshot& student = res.snapshot;
    const DenoiserParams teacher = parent.den;
    const ModelDims dims = snap.dims;
    const int tgt = cfg.targets[0];

    // eraser adapters live in the cross-attention block
    const std::vector<std::string> eraser_names = {"denoiser.xattn.Wq", "denoiser.xattn.Wk",
                                                   "denoiser.xattn.Wv", "denoiser.xattn.Wo"};
    Rng attach_rng = rng.fork(0);
    lora_attach(student, eraser_names, cfg.rank, 1.0, attach_rng);

    Mat C_empty = encode_prompt(student.enc, dims, empty_prompt(world));
    Prompt p_target = render_prompt(world, 0, {world.concept_tokens[tgt]}, {}, PromptRole::Target);
    Mat C_target = encode_prompt(student.enc, dims, p_target);
    std::vector<int> target_positions = {0}; // bare prompt puts the concept token first

    auto adapter_grads = std::map<std::string, LoraAdapter>();
    for (const auto& [name, ad] : student.adapters) {
        LoraAdapter z;
        z.scale = ad.scale;
        z.A = Mat::Zero(ad.A.rows(), ad.A.cols());
        z.B = Mat::Zero(ad.B.rows(), ad.B.cols());
        adapter_grads.emplace(name, z);
    }
    auto params = adapter_param_refs(student.adapters);
    auto grefs = adapter_param_refs(adapter_grads);
    Adam adam;
    adam.lr = cfg.lr;
    adam.init(params);

    double initial_loss = -1.0;
    int streak = 0;
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        Rng it_rng = rng.fork(iter);

        // (a) adversarial search for a conditioning that still elicits the
        // teacher's target prediction from the student
        bool have_adv = cfg.adv_steps > 0;
        Mat C_adv;
        if (have_adv) {
            C_adv = C_target;
            for (int i = 0; i < C_adv.rows(); ++i)
                for (int j = 0; j < C_adv.cols(); ++j) C_adv(i, j) += 0.1 * it_rng.normal();
            int t_adv = 1 + it_rng.uniform_int(sched.T);
            Vec x_adv = partial_denoise(student, sched, C_target, C_empty, t_adv,
                                        cfg.latent_sampler, it_rng);
            Vec teach_t = denoiser_forward(teacher, dims, x_adv, t_adv, C_target);
            DenoiserParams stu_den = effective_denoiser(student);
            Adam adv_adam;
            adv_adam.lr = cfg.adv_lr;
            ParamRef adv_ref{"c_adv", C_adv.data(), int(C_adv.size())};
            std::vector<ParamRef> adv_params = {adv_ref};
            Mat dC(dims.L, dims.d_e);
            Mat dC_buf = dC;
            adv_adam.init(adv_params);
            for (int k = 0; k < cfg.adv_steps; ++k) {
                DenTrace tr;
                Vec pred = denoiser_forward(stu_den, dims, x_adv, t_adv, C_adv, &tr);
                dC_buf.setZero();
                denoiser_backward(stu_den, dims, tr, Vec(2.0 * (pred - teach_t)), nullptr,
                                  &dC_buf);
                ParamRef gref{"c_adv", dC_buf.data(), int(dC_buf.size())};
                std::vector<ParamRef> gv = {gref};
                adv_adam.step(adv_params, gv);
            }
        }

        // (b) ESD-style eraser updates against the target and the adversary,
        // down-weighted when the model is not attending to the target token
        for (int k = 0; k < cfg.erase_steps_per_iter; ++k) {
            int t = 1 + it_rng.uniform_int(sched.T);
            Vec x_t = partial_denoise(student, sched, C_target, C_empty, t, cfg.latent_sampler,
                                      it_rng);
            DenoiserParams stu_den = effective_denoiser(student);
            Vec att = attention_map(student, x_t, t, C_target);
            double w_att = 0.0;
            for (int p : target_positions) w_att += att[p];

            Vec e0 = denoiser_forward(teacher, dims, x_t, t, C_empty);
            Vec ee = denoiser_forward(teacher, dims, x_t, t, C_target);
            Vec y_e = e0 - cfg.mu * (ee - e0);

            DenGrads dense;
            dense.init(dims);
            DenTrace tr;
            Vec pred = denoiser_forward(stu_den, dims, x_t, t, C_target, &tr);
            Vec resid = pred - y_e;
            double loss = w_att * resid.squaredNorm();
            denoiser_backward(stu_den, dims, tr, Vec(2.0 * w_att * resid), &dense, nullptr);

            if (have_adv) {
                Vec ea = denoiser_forward(teacher, dims, x_t, t, C_adv);
                Vec y_a = e0 - cfg.mu * (ea - e0);
                DenTrace tra;
                Vec pred_a = denoiser_forward(stu_den, dims, x_t, t, C_adv, &tra);
                Vec resid_a = pred_a - y_a;
                loss += w_att * resid_a.squaredNorm();
                denoiser_backward(stu_den, dims, tra, Vec(2.0 * w_att * resid_a), &dense, nullptr);
            }

            for (auto& [name, g] : adapter_grads) { g.A.setZero(); g.B.setZero(); }
            for (const auto& [name, ad] : student.adapters) {
                const Mat& dW = dense.matrix(name);
                adapter_grads.at(name).A.noalias() += ad.scale * ad.B.transpose() * dW;
                adapter_grads.at(name).B.noalias() += ad.scale * dW * ad.A.transpose();
            }
            adam.step(params, grefs);

            if (initial_loss < 0.0) initial_loss = std::max(loss, 1e-12);
            if (loss > 10.0 * initial_loss) {
                if (++streak >= 100)
                    throw std::runtime_error("erase_receler: divergence guard tripped");
            } else {
                streak = 0;
            }
        }

        if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
            ModelSnapshot ck = student; // adapters attached, base tensors untouched
            stamp(ck, parent, cfg, iter);
            res.checkpoints.push_back({iter, std::move(ck)});
        }
    }
    lora_merge(student);
    stamp(student, parent, cfg, cfg.iterations);
    if (res.checkpoints.empty()) res.checkpoints.push_back({cfg.iterations, student});
    return res;
}

ErasureResult run_erasure(const ConceptWorld& world, const DiffusionSchedule& sched,
                          const ModelSnapshot& snap, const ErasureConfig& cfg, Rng& rng) {
    switch (cfg.method) {
        case ErasureMethod::ESD: return erase_esd(world, sched, snap, cfg, rng);
        case ErasureMethod::UCE: return erase_uce(world, snap, cfg);
        case ErasureMethod::MACE: return erase_mace(world, sched, snap, cfg, rng);
        case ErasureMethod::RECE: return erase_rece(world, snap, cfg);
        case ErasureMethod::Receler: return erase_receler(world, sched, snap, cfg, rng);
    }
    throw std::invalid_argument("run_erasure: unknown method");
}

// ---- probes ----

LossProbe esd_loss_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                         ModelSnapshot& student, const ModelSnapshot& teacher,
                         const ErasureConfig& cfg, Rng& rng) {
    const ModelDims dims = student.dims;
    int tgt = cfg.targets.at(0);
    auto C_empty = std::make_shared<Mat>(encode_prompt(student.enc, dims, empty_prompt(world)));
    Prompt p = render_prompt(world, 0, {world.concept_tokens[tgt]});
    auto C_target = std::make_shared<Mat>(encode_prompt(student.enc, dims, p));
    Rng draw = rng.fork(3);
    int t = 1 + draw.uniform_int(sched.T);
    auto x_t = std::make_shared<Vec>(
        partial_denoise(student, sched, *C_target, *C_empty, t, cfg.latent_sampler, draw));
    DenoiserParams teacher_den = effective_denoiser(teacher);
    Vec e0 = denoiser_forward(teacher_den, dims, *x_t, t, *C_empty);
    Vec ee = denoiser_forward(teacher_den, dims, *x_t, t, *C_target);
    auto y = std::make_shared<Vec>(e0 - cfg.mu * (ee - e0));
    auto scope = esd_scope(cfg);
    auto* stu = &student;

    LossProbe probe;
    probe.params = cfg.xattn_only ? filter_refs(denoiser_param_refs(student.den), scope)
                                  : denoiser_param_refs(student.den);
    probe.loss = [=]() {
        DenoiserParams den = effective_denoiser(*stu);
        Vec pred = denoiser_forward(den, dims, *x_t, t, *C_target);
        return (pred - *y).squaredNorm();
    };
    probe.grad = [=]() {
        DenoiserParams den = effective_denoiser(*stu);
        DenGrads g;
        g.init(dims);
        DenTrace tr;
        Vec pred = denoiser_forward(den, dims, *x_t, t, *C_target, &tr);
        denoiser_backward(den, dims, tr, Vec(2.0 * (pred - *y)), &g, nullptr);
        auto all = denoiser_grad_refs(g);
        return flatten(cfg.xattn_only ? filter_refs(all, scope) : all);
    };
    return probe;
}

LossProbe receler_search_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                               ModelSnapshot& student, const ModelSnapshot& teacher,
                               const ErasureConfig& cfg, Rng& rng) {
    const ModelDims dims = student.dims;
    int tgt = cfg.targets.at(0);
    Mat C_empty = encode_prompt(student.enc, dims, empty_prompt(world));
    Prompt p = render_prompt(world, 0, {world.concept_tokens[tgt]});
    Mat C_target = encode_prompt(student.enc, dims, p);
    Rng draw = rng.fork(5);
    int t = 1 + draw.uniform_int(sched.T);
    auto x_t = std::make_shared<Vec>(
        partial_denoise(student, sched, C_target, C_empty, t, cfg.latent_sampler, draw));
    DenoiserParams teacher_den = effective_denoiser(teacher);
    auto teach_t = std::make_shared<Vec>(denoiser_forward(teacher_den, dims, *x_t, t, C_target));
    auto C_adv = std::make_shared<Mat>(C_target);
    for (int i = 0; i < C_adv->rows(); ++i)
        for (int j = 0; j < C_adv->cols(); ++j) (*C_adv)(i, j) += 0.1 * draw.normal();
    auto* stu = &student;

    LossProbe probe;
    probe.params = {{"c_adv", C_adv->data(), int(C_adv->size())}};
    probe.loss = [=]() {
        DenoiserParams den = effective_denoiser(*stu);
        Vec pred = denoiser_forward(den, dims, *x_t, t, *C_adv);
        return (pred - *teach_t).squaredNorm();
    };
    probe.grad = [=]() {
        DenoiserParams den = effective_denoiser(*stu);
        DenTrace tr;
        Vec pred = denoiser_forward(den, dims, *x_t, t, *C_adv, &tr);
        Mat dC = Mat::Zero(dims.L, dims.d_e);
        denoiser_backward(den, dims, tr, Vec(2.0 * (pred - *teach_t)), nullptr, &dC);
        Vec flat(dC.size());
        for (int i = 0; i < dC.size(); ++i) flat[i] = dC.data()[i];
        return flat;
    };
    return probe;
}

LossProbe mace_stage2_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                            ModelSnapshot& student, const ErasureConfig& cfg, Rng& rng) {
    if (student.adapters.empty())
        throw std::invalid_argument("mace_stage2_probe: student must have adapters attached");
    const ModelDims dims = student.dims;
    int tgt = cfg.targets.at(0);
    Rng draw = rng.fork(9);
    auto tids = world.templates.training_ids();
    int tid = tids[draw.uniform_int(int(tids.size()))];
    Prompt p = render_prompt(world, tid, {world.concept_tokens[tgt]});
    auto C = std::make_shared<Mat>(encode_prompt(student.enc, dims, p));
    auto positions = std::make_shared<std::vector<int>>();
    for (int pos = 0; pos < dims.L; ++pos)
        if (p.ids[pos] == world.concept_tokens[tgt]) positions->push_back(pos);
    int t = 1 + draw.uniform_int(sched.T);
    auto x_t = std::make_shared<Vec>(draw.normal_vec(dims.d_x) * 2.0);
    auto* stu = &student;

    LossProbe probe;
    probe.params = adapter_param_refs(student.adapters);
    probe.loss = [=]() {
        DenoiserParams den = effective_denoiser(*stu);
        return AttentionMassLoss::eval(den, dims, *x_t, t, *C, *positions, nullptr);
    };
    probe.grad = [=]() {
        DenoiserParams den = effective_denoiser(*stu);
        DenGrads dense;
        dense.init(dims);
        AttentionMassLoss::eval(den, dims, *x_t, t, *C, *positions, &dense);
        std::map<std::string, LoraAdapter> grads;
        for (const auto& [name, ad] : stu->adapters) {
            LoraAdapter z;
            z.scale = ad.scale;
            z.A = ad.scale * ad.B.transpose() * dense.matrix(name);
            z.B = ad.scale * dense.matrix(name) * ad.A.transpose();
            grads.emplace(name, z);
        }
        return flatten(adapter_param_refs(grads));
    };
    return probe;
}

} // namespace elab
