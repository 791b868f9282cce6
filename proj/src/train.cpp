#include "elab/train.hpp"

#include <iostream>
#include <memory>

namespace elab {

namespace {

struct PromptCache {
    std::vector<Mat> by_key; // concept-major: [concept * n_templates + template]
    Mat empty;
    int n_templates = 0;
};

// Conditioning matrices for every (training template, concept) pair; the
// encoder is frozen during base training so these are constant.
PromptCache build_prompt_cache(const ConceptWorld& w, const ModelSnapshot& snap,
                               const std::vector<int>& template_ids) {
    PromptCache cache;
    cache.n_templates = int(template_ids.size());
    cache.by_key.resize(size_t(cache.n_templates) * w.cfg.concepts);
    for (int c = 0; c < w.cfg.concepts; ++c) {
        for (int ti = 0; ti < cache.n_templates; ++ti) {
            Prompt p = render_prompt(w, template_ids[ti], {w.concept_tokens[c]}, {},
                                     PromptRole::Other);
            cache.by_key[size_t(c) * cache.n_templates + ti] = encode_prompt(snap.enc, snap.dims, p);
        }
    }
    cache.empty = encode_prompt(snap.enc, snap.dims, empty_prompt(w));
    return cache;
}

struct Draw {
    int concept_index;
    int t;
    Vec x_t;
    Vec eps;
    bool drop;
    int tmpl_idx;
};

Draw sample_draw(const ConceptWorld& w, const DiffusionSchedule& sched, int n_templates,
                 double cond_drop, Rng& rng) {
    Draw d;
    d.concept_index = rng.uniform_int(w.cfg.concepts);
    d.tmpl_idx = rng.uniform_int(n_templates);
    Vec x0 = w.mu[d.concept_index] + w.cfg.sigma * rng.normal_vec(w.cfg.data_dim);
    d.t = 1 + rng.uniform_int(sched.T);
    d.eps = rng.normal_vec(w.cfg.data_dim);
    d.drop = rng.uniform() < cond_drop;
    double ab = sched.abar(d.t);
    d.x_t = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * d.eps;
    return d;
}

} // namespace

TrainResult train_base(const ConceptWorld& world, const DiffusionSchedule& sched,
                       const TrainConfig& cfg, Rng& rng) {
    ModelDims dims;
    dims.d_e = cfg.d_e;
    dims.d_h = cfg.d_h;
    dims.d_x = world.cfg.data_dim;
    dims.L = world.cfg.prompt_len;
    dims.V = world.cfg.vocab_size;

    Rng init_rng = rng.fork(0);
    Rng loop_rng = rng.fork(1);
    Rng val_rng = rng.fork(2);

    TrainResult res;
    res.snapshot = init_model(dims, init_rng);
    res.snapshot.prov.kind = "clean";
    res.snapshot.prov.world_hash = world.hash();

    auto template_ids = world.templates.training_ids();
    PromptCache cache = build_prompt_cache(world, res.snapshot, template_ids);

    DenGrads grads;
    grads.init(dims);
    auto params = denoiser_param_refs(res.snapshot.den);
    auto grefs = denoiser_grad_refs(grads);
    Adam adam;
    adam.lr = cfg.lr;
    adam.init(params);

    const double inv_b = 1.0 / double(cfg.batch);
    for (int step = 0; step < cfg.steps; ++step) {
        if (cfg.lr_final >= 0.0 && cfg.steps > 1)
            adam.lr = cfg.lr + (cfg.lr_final - cfg.lr) * double(step) / double(cfg.steps - 1);
        grads.zero();
        for (int b = 0; b < cfg.batch; ++b) {
            Draw d = sample_draw(world, sched, int(template_ids.size()), cfg.cond_drop, loop_rng);
            const Mat& C = d.drop ? cache.empty
                                  : cache.by_key[size_t(d.concept_index) * template_ids.size() +
                                                 d.tmpl_idx];
            DenTrace tr;
            Vec pred = denoiser_forward(res.snapshot.den, dims, d.x_t, d.t, C, &tr);
            Vec resid = pred - d.eps;
            Vec d_eps = 2.0 * inv_b * resid;
            denoiser_backward(res.snapshot.den, dims, tr, d_eps, &grads, nullptr);
        }
        adam.step(params, grefs);
    }

    ValidationStats vs = validate_denoiser(world, sched, res.snapshot, cfg.val_draws, val_rng);
    res.val_eps_mse = vs.eps_mse;
    res.oracle_eps_mse = vs.oracle_eps_mse;
    res.model_oracle_mse = vs.model_oracle_mse;
    res.converged = cfg.steps == 0 || res.val_eps_mse <= 2.0 * res.oracle_eps_mse;
    if (!res.converged)
        std::cerr << "train_base: non-convergence flagged (val " << res.val_eps_mse
                  << " > 2x oracle " << res.oracle_eps_mse << ")\n";
    return res;
}

ValidationStats validate_denoiser(const ConceptWorld& world, const DiffusionSchedule& sched,
                                  const ModelSnapshot& snap, int draws, Rng& rng) {
    DenoiserParams den = effective_denoiser(snap);
    auto template_ids = world.templates.training_ids();
    PromptCache cache = build_prompt_cache(world, snap, template_ids);
    ValidationStats out;
    for (int i = 0; i < draws; ++i) {
        Draw d = sample_draw(world, sched, int(template_ids.size()), 0.0, rng);
        const Mat& C = cache.by_key[size_t(d.concept_index) * template_ids.size() + d.tmpl_idx];
        Vec pred = denoiser_forward(den, snap.dims, d.x_t, d.t, C);
        Vec oracle = analytic_eps(world, d.x_t, d.t, d.concept_index, sched);
        out.eps_mse += (pred - d.eps).squaredNorm();
        out.oracle_eps_mse += (oracle - d.eps).squaredNorm();
        out.model_oracle_mse += (pred - oracle).squaredNorm();
    }
    out.eps_mse /= draws;
    out.oracle_eps_mse /= draws;
    out.model_oracle_mse /= draws;
    return out;
}

LossProbe base_loss_probe(const ConceptWorld& world, const DiffusionSchedule& sched,
                          ModelSnapshot& snap, int batch, Rng& rng) {
    auto template_ids = world.templates.training_ids();
    auto draws = std::make_shared<std::vector<Draw>>();
    for (int b = 0; b < batch; ++b)
        draws->push_back(sample_draw(world, sched, int(template_ids.size()), 0.1, rng));
    auto cache = std::make_shared<PromptCache>(build_prompt_cache(world, snap, template_ids));
    auto dims = snap.dims;
    auto n_tmpl = template_ids.size();
    auto* snap_ptr = &snap;

    LossProbe probe;
    probe.params = denoiser_param_refs(snap.den);
    probe.loss = [=]() {
        double total = 0.0;
        for (const auto& d : *draws) {
            const Mat& C = d.drop ? cache->empty
                                  : cache->by_key[size_t(d.concept_index) * n_tmpl + d.tmpl_idx];
            Vec pred = denoiser_forward(snap_ptr->den, dims, d.x_t, d.t, C);
            total += (pred - d.eps).squaredNorm();
        }
        return total / double(draws->size());
    };
    probe.grad = [=]() {
        DenGrads g;
        g.init(dims);
        double inv = 1.0 / double(draws->size());
        for (const auto& d : *draws) {
            const Mat& C = d.drop ? cache->empty
                                  : cache->by_key[size_t(d.concept_index) * n_tmpl + d.tmpl_idx];
            DenTrace tr;
            Vec pred = denoiser_forward(snap_ptr->den, dims, d.x_t, d.t, C, &tr);
            denoiser_backward(snap_ptr->den, dims, tr, Vec(2.0 * inv * (pred - d.eps)), &g, nullptr);
        }
        return flatten(denoiser_grad_refs(g));
    };
    return probe;
}

} // namespace elab
