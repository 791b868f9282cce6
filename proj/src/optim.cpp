#include "elab/optim.hpp"

#include <algorithm>
#include <cmath>

namespace elab {

namespace {
ParamRef ref(const std::string& name, Mat& m) { return {name, m.data(), int(m.size())}; }
ParamRef ref(const std::string& name, Vec& v) { return {name, v.data(), int(v.size())}; }
} // namespace

std::vector<ParamRef> denoiser_param_refs(DenoiserParams& p) {
    return {ref("denoiser.time.W", p.time_W), ref("denoiser.time.b", p.time_b),
            ref("denoiser.in.W", p.in_W),     ref("denoiser.in.b", p.in_b),
            ref("denoiser.xattn.Wq", p.xattn_Wq), ref("denoiser.xattn.Wk", p.xattn_Wk),
            ref("denoiser.xattn.Wv", p.xattn_Wv), ref("denoiser.xattn.Wo", p.xattn_Wo),
            ref("denoiser.mlp.W1", p.mlp_W1), ref("denoiser.mlp.b1", p.mlp_b1),
            ref("denoiser.mlp.W2", p.mlp_W2), ref("denoiser.mlp.b2", p.mlp_b2)};
}

std::vector<ParamRef> denoiser_grad_refs(DenGrads& g) {
    return {ref("denoiser.time.W", g.time_W), ref("denoiser.time.b", g.time_b),
            ref("denoiser.in.W", g.in_W),     ref("denoiser.in.b", g.in_b),
            ref("denoiser.xattn.Wq", g.xattn_Wq), ref("denoiser.xattn.Wk", g.xattn_Wk),
            ref("denoiser.xattn.Wv", g.xattn_Wv), ref("denoiser.xattn.Wo", g.xattn_Wo),
            ref("denoiser.mlp.W1", g.mlp_W1), ref("denoiser.mlp.b1", g.mlp_b1),
            ref("denoiser.mlp.W2", g.mlp_W2), ref("denoiser.mlp.b2", g.mlp_b2)};
}

std::vector<ParamRef> encoder_param_refs(TextEncoderParams& p) {
    return {ref("textenc.embed", p.embed), ref("textenc.pos", p.pos),
            ref("textenc.attn.Wq", p.Wq),  ref("textenc.attn.Wk", p.Wk),
            ref("textenc.attn.Wv", p.Wv),  ref("textenc.attn.Wo", p.Wo)};
}

std::vector<ParamRef> encoder_grad_refs(EncGrads& g) {
    return {ref("textenc.embed", g.embed), ref("textenc.pos", g.pos),
            ref("textenc.attn.Wq", g.Wq),  ref("textenc.attn.Wk", g.Wk),
            ref("textenc.attn.Wv", g.Wv),  ref("textenc.attn.Wo", g.Wo)};
}

std::vector<ParamRef> adapter_param_refs(std::map<std::string, LoraAdapter>& adapters) {
    std::vector<ParamRef> out;
    for (auto& [name, ad] : adapters) {
        out.push_back(ref("adapter." + name + ".A", ad.A));
        out.push_back(ref("adapter." + name + ".B", ad.B));
    }
    return out;
}

std::vector<ParamRef> filter_refs(const std::vector<ParamRef>& refs,
                                  const std::vector<std::string>& names) {
    std::vector<ParamRef> out;
    for (const auto& r : refs)
        if (std::find(names.begin(), names.end(), r.name) != names.end()) out.push_back(r);
    return out;
}

int total_size(const std::vector<ParamRef>& refs) {
    int n = 0;
    for (const auto& r : refs) n += r.n;
    return n;
}

Vec flatten(const std::vector<ParamRef>& refs) {
    Vec flat(total_size(refs));
    int off = 0;
    for (const auto& r : refs) {
        for (int i = 0; i < r.n; ++i) flat[off + i] = r.data[i];
        off += r.n;
    }
    return flat;
}

void unflatten(const Vec& flat, const std::vector<ParamRef>& refs) {
    int off = 0;
    for (const auto& r : refs) {
        for (int i = 0; i < r.n; ++i) r.data[i] = flat[off + i];
        off += r.n;
    }
}

void Adam::init(const std::vector<ParamRef>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.push_back(Vec::Zero(p.n));
        v.push_back(Vec::Zero(p.n));
    }
    t = 0;
}

void Adam::step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
    if (m.size() != params.size()) init(params);
    ++t;
    double bc1 = 1.0 - std::pow(beta1, double(t));
    double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        const auto& g = grads[i];
        for (int k = 0; k < p.n; ++k) {
            double gk = g.data[k];
            m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * gk;
            v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * gk * gk;
            double mhat = m[i][k] / bc1;
            double vhat = v[i][k] / bc2;
            p.data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

double finite_diff_check(const std::function<double()>& loss,
                         const std::function<Vec()>& analytic_grad,
                         const std::vector<ParamRef>& params, int probes, Rng& rng, double h) {
    Vec grad = analytic_grad();
    int n = total_size(params);
    if (grad.size() != n) throw std::invalid_argument("finite_diff_check: gradient size mismatch");

    // locate coordinate k across the refs
    auto coord = [&](int k) -> double* {
        for (const auto& r : params) {
            if (k < r.n) return r.data + k;
            k -= r.n;
        }
        throw std::out_of_range("finite_diff_check: coordinate out of range");
    };

    double max_rel = 0.0;
    for (int p = 0; p < probes; ++p) {
        int k = rng.uniform_int(n);
        double* x = coord(k);
        double orig = *x;
        *x = orig + h;
        double fp = loss();
        *x = orig - h;
        double fm = loss();
        *x = orig;
        double fd = (fp - fm) / (2.0 * h);
        double an = grad[k];
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

double finite_diff_check(const LossProbe& probe, int probes, Rng& rng, double h) {
    return finite_diff_check(probe.loss, probe.grad, probe.params, probes, rng, h);
}

} // namespace elab
