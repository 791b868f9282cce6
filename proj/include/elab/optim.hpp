#pragma once

#include "elab/model.hpp"

#include <functional>

namespace elab {

// Flat view over a parameter (or gradient) buffer.
struct ParamRef {
    std::string name;
    double* data = nullptr;
    int n = 0;
};

std::vector<ParamRef> denoiser_param_refs(DenoiserParams& p);
std::vector<ParamRef> denoiser_grad_refs(DenGrads& g);
std::vector<ParamRef> encoder_param_refs(TextEncoderParams& p);
std::vector<ParamRef> encoder_grad_refs(EncGrads& g);
std::vector<ParamRef> adapter_param_refs(std::map<std::string, LoraAdapter>& adapters);

// Select refs whose names are in `names` (same order as refs).
std::vector<ParamRef> filter_refs(const std::vector<ParamRef>& refs,
                                  const std::vector<std::string>& names);

int total_size(const std::vector<ParamRef>& refs);
Vec flatten(const std::vector<ParamRef>& refs);
void unflatten(const Vec& flat, const std::vector<ParamRef>& refs);

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(const std::vector<ParamRef>& params);
    void step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads);

    std::vector<Vec> m, v;
    long t = 0;
};

// Compares an analytic gradient against central differences on `probes`
// randomly chosen coordinates; returns the max relative error.
double finite_diff_check(const std::function<double()>& loss,
                         const std::function<Vec()>& analytic_grad,
                         const std::vector<ParamRef>& params, int probes, Rng& rng,
                         double h = 1e-4);

// A differentiable loss pinned to fixed sample draws, with parameter views
// into live model state. Each training procedure exposes a probe built from
// its own loss assembly so the gradient check exercises the real code path.
struct LossProbe {
    std::vector<ParamRef> params;
    std::function<double()> loss;
    std::function<Vec()> grad; // flattened, matches params order
};

double finite_diff_check(const LossProbe& probe, int probes, Rng& rng, double h = 1e-4);

} // namespace elab
