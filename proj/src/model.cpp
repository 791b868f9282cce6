#include "elab/model.hpp"

#include "elab/hash.hpp"

#include <cmath>
#include <fstream>

namespace elab {

namespace {

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigm(x); }
inline double silu_d(double x) {
    double s = sigm(x);
    return s * (1.0 + x * (1.0 - s));
}

inline Vec silu_vec(const Vec& v) {
    Vec out(v.size());
    for (int i = 0; i < v.size(); ++i) out[i] = silu(v[i]);
    return out;
}

inline Vec silu_d_vec(const Vec& v) {
    Vec out(v.size());
    for (int i = 0; i < v.size(); ++i) out[i] = silu_d(v[i]);
    return out;
}

Vec time_features(int t, int d_h) {
    int F = d_h / 2;
    Vec f(d_h);
    for (int j = 0; j < F; ++j) {
        double omega = std::exp(-std::log(10000.0) * double(j) / double(F - 1));
        f[2 * j] = std::sin(omega * double(t));
        f[2 * j + 1] = std::cos(omega * double(t));
    }
    return f;
}

Mat randn(int r, int c, double std, Rng& rng) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = std * rng.normal();
    return m;
}

} // namespace

const std::vector<std::string>& denoiser_matrix_names() {
    static const std::vector<std::string> names = {
        "denoiser.time.W",  "denoiser.in.W",    "denoiser.xattn.Wq", "denoiser.xattn.Wk",
        "denoiser.xattn.Wv", "denoiser.xattn.Wo", "denoiser.mlp.W1",  "denoiser.mlp.W2"};
    return names;
}

Mat& denoiser_matrix(DenoiserParams& p, const std::string& name) {
    if (name == "denoiser.time.W") return p.time_W;
    if (name == "denoiser.in.W") return p.in_W;
    if (name == "denoiser.xattn.Wq") return p.xattn_Wq;
    if (name == "denoiser.xattn.Wk") return p.xattn_Wk;
    if (name == "denoiser.xattn.Wv") return p.xattn_Wv;
    if (name == "denoiser.xattn.Wo") return p.xattn_Wo;
    if (name == "denoiser.mlp.W1") return p.mlp_W1;
    if (name == "denoiser.mlp.W2") return p.mlp_W2;
    throw std::invalid_argument("unknown denoiser matrix: " + name);
}

const Mat& denoiser_matrix(const DenoiserParams& p, const std::string& name) {
    return denoiser_matrix(const_cast<DenoiserParams&>(p), name);
}

ModelSnapshot init_model(const ModelDims& dims, Rng& rng) {
    ModelSnapshot s;
    s.dims = dims;
    const double se = 1.0 / std::sqrt(double(dims.d_e));
    const double sh = 1.0 / std::sqrt(double(dims.d_h));
    s.enc.embed = randn(dims.V, dims.d_e, 0.5, rng);
    s.enc.pos = randn(dims.L, dims.d_e, 0.1, rng);
    s.enc.Wq = randn(dims.d_e, dims.d_e, se, rng);
    s.enc.Wk = randn(dims.d_e, dims.d_e, se, rng);
    s.enc.Wv = randn(dims.d_e, dims.d_e, se, rng);
    s.enc.Wo = randn(dims.d_e, dims.d_e, 0.15, rng);
    s.den.time_W = randn(dims.d_h, dims.d_h, sh, rng);
    s.den.time_b = Vec::Zero(dims.d_h);
    s.den.in_W = randn(dims.d_h, dims.d_x + dims.d_h, 1.0 / std::sqrt(double(dims.d_x + dims.d_h)), rng);
    s.den.in_b = Vec::Zero(dims.d_h);
    s.den.xattn_Wq = randn(dims.d_h, dims.d_h, sh, rng);
    s.den.xattn_Wk = randn(dims.d_h, dims.d_e, se, rng);
    s.den.xattn_Wv = randn(dims.d_h, dims.d_e, se, rng);
    s.den.xattn_Wo = randn(dims.d_h, dims.d_h, sh, rng);
    s.den.mlp_W1 = randn(dims.d_h, dims.d_h, sh, rng);
    s.den.mlp_b1 = Vec::Zero(dims.d_h);
    s.den.mlp_W2 = randn(dims.d_x, dims.d_h, sh, rng);
    s.den.mlp_b2 = Vec::Zero(dims.d_x);
    s.prov.kind = "clean";
    return s;
}

// ---- text encoder ----

Mat encode_prompt(const TextEncoderParams& enc, const ModelDims& dims, const Prompt& prompt,
                  EncTrace* trace) {
    if (int(prompt.ids.size()) != dims.L)
        throw std::invalid_argument("encode_prompt: prompt length mismatch");
    const double inv_sqrt = 1.0 / std::sqrt(double(dims.d_e));
    Mat X(dims.L, dims.d_e);
    for (int l = 0; l < dims.L; ++l) {
        int tok = prompt.ids[l];
        if (tok < 0 || tok >= dims.V) throw std::out_of_range("encode_prompt: token id out of vocabulary");
        X.row(l) = enc.embed.row(tok) + enc.pos.row(l);
    }
    Mat Q = X * enc.Wq.transpose();
    Mat K = X * enc.Wk.transpose();
    Mat V = X * enc.Wv.transpose();
    Mat S = (Q * K.transpose()) * inv_sqrt;
    Mat A(dims.L, dims.L);
    for (int l = 0; l < dims.L; ++l) {
        Vec row = S.row(l);
        double mx = row.maxCoeff();
        Vec e = (row.array() - mx).exp();
        A.row(l) = e / e.sum();
    }
    Mat O = A * V;
    Mat C = X + O * enc.Wo.transpose();
    if (trace) {
        trace->tokens = prompt.ids;
        trace->X = X; trace->Q = Q; trace->K = K; trace->V = V;
        trace->A = A; trace->O = O; trace->C = C;
    }
    return C;
}

void EncGrads::init(const ModelDims& dims) {
    embed = Mat::Zero(dims.V, dims.d_e);
    pos = Mat::Zero(dims.L, dims.d_e);
    Wq = Mat::Zero(dims.d_e, dims.d_e);
    Wk = Mat::Zero(dims.d_e, dims.d_e);
    Wv = Mat::Zero(dims.d_e, dims.d_e);
    Wo = Mat::Zero(dims.d_e, dims.d_e);
}

void EncGrads::zero() {
    embed.setZero(); pos.setZero(); Wq.setZero(); Wk.setZero(); Wv.setZero(); Wo.setZero();
}

void encode_backward(const TextEncoderParams& enc, const ModelDims& dims, const EncTrace& tr,
                     const Mat& dC, EncGrads& g) {
    const double inv_sqrt = 1.0 / std::sqrt(double(dims.d_e));
    Mat dX = dC; // residual branch
    g.Wo.noalias() += dC.transpose() * tr.O;
    Mat dO = dC * enc.Wo;
    Mat dA = dO * tr.V.transpose();
    Mat dV = tr.A.transpose() * dO;
    Mat dS(dims.L, dims.L);
    for (int l = 0; l < dims.L; ++l) {
        Vec a = tr.A.row(l);
        Vec da = dA.row(l);
        double dot = a.dot(da);
        dS.row(l) = (a.array() * (da.array() - dot)).matrix();
    }
    Mat dQ = dS * tr.K * inv_sqrt;
    Mat dK = dS.transpose() * tr.Q * inv_sqrt;
    g.Wq.noalias() += dQ.transpose() * tr.X;
    g.Wk.noalias() += dK.transpose() * tr.X;
    g.Wv.noalias() += dV.transpose() * tr.X;
    dX.noalias() += dQ * enc.Wq;
    dX.noalias() += dK * enc.Wk;
    dX.noalias() += dV * enc.Wv;
    for (int l = 0; l < dims.L; ++l) {
        g.embed.row(tr.tokens[l]) += dX.row(l);
        g.pos.row(l) += dX.row(l);
    }
}

// ---- denoiser ----

DenoiserParams effective_denoiser(const ModelSnapshot& snap) {
    DenoiserParams den = snap.den;
    for (const auto& [name, ad] : snap.adapters)
        denoiser_matrix(den, name).noalias() += ad.scale * (ad.B * ad.A);
    return den;
}

Vec denoiser_forward(const DenoiserParams& den, const ModelDims& dims, const Vec& x, int t,
                     const Mat& C, DenTrace* trace) {
    if (x.size() != dims.d_x) throw std::invalid_argument("denoiser_forward: x shape mismatch");
    if (C.rows() != dims.L || C.cols() != dims.d_e)
        throw std::invalid_argument("denoiser_forward: conditioning shape mismatch");
    const double inv_sqrt = 1.0 / std::sqrt(double(dims.d_h));
    Vec f = time_features(t, dims.d_h);
    Vec e = den.time_W * f + den.time_b;
    Vec te = silu_vec(e);
    Vec z(dims.d_x + dims.d_h);
    z.head(dims.d_x) = x;
    z.tail(dims.d_h) = te;
    Vec gg = den.in_W * z + den.in_b;
    Vec h0 = silu_vec(gg);
    Vec q = den.xattn_Wq * h0;
    Mat K = C * den.xattn_Wk.transpose(); // L x d_h
    Mat V = C * den.xattn_Wv.transpose();
    Vec s = (K * q) * inv_sqrt;
    double mx = s.maxCoeff();
    Vec a = (s.array() - mx).exp();
    a /= a.sum();
    Vec ctx = V.transpose() * a;
    Vec h1 = h0 + den.xattn_Wo * ctx;
    Vec upre = den.mlp_W1 * h1 + den.mlp_b1;
    Vec u = silu_vec(upre);
    Vec eps = den.mlp_W2 * u + den.mlp_b2;
    if (trace) {
        trace->f = f; trace->e = e; trace->te = te; trace->z = z; trace->g = gg;
        trace->h0 = h0; trace->q = q; trace->C = C; trace->K = K; trace->V = V;
        trace->s = s; trace->a = a; trace->ctx = ctx; trace->h1 = h1;
        trace->upre = upre; trace->u = u; trace->eps = eps;
    }
    return eps;
}

void DenGrads::init(const ModelDims& dims) {
    time_W = Mat::Zero(dims.d_h, dims.d_h);
    in_W = Mat::Zero(dims.d_h, dims.d_x + dims.d_h);
    xattn_Wq = Mat::Zero(dims.d_h, dims.d_h);
    xattn_Wk = Mat::Zero(dims.d_h, dims.d_e);
    xattn_Wv = Mat::Zero(dims.d_h, dims.d_e);
    xattn_Wo = Mat::Zero(dims.d_h, dims.d_h);
    mlp_W1 = Mat::Zero(dims.d_h, dims.d_h);
    mlp_W2 = Mat::Zero(dims.d_x, dims.d_h);
    time_b = Vec::Zero(dims.d_h);
    in_b = Vec::Zero(dims.d_h);
    mlp_b1 = Vec::Zero(dims.d_h);
    mlp_b2 = Vec::Zero(dims.d_x);
}

void DenGrads::zero() {
    time_W.setZero(); in_W.setZero(); xattn_Wq.setZero(); xattn_Wk.setZero();
    xattn_Wv.setZero(); xattn_Wo.setZero(); mlp_W1.setZero(); mlp_W2.setZero();
    time_b.setZero(); in_b.setZero(); mlp_b1.setZero(); mlp_b2.setZero();
}

Mat& DenGrads::matrix(const std::string& name) {
    if (name == "denoiser.time.W") return time_W;
    if (name == "denoiser.in.W") return in_W;
    if (name == "denoiser.xattn.Wq") return xattn_Wq;
    if (name == "denoiser.xattn.Wk") return xattn_Wk;
    if (name == "denoiser.xattn.Wv") return xattn_Wv;
    if (name == "denoiser.xattn.Wo") return xattn_Wo;
    if (name == "denoiser.mlp.W1") return mlp_W1;
    if (name == "denoiser.mlp.W2") return mlp_W2;
    throw std::invalid_argument("unknown denoiser matrix: " + name);
}

void denoiser_backward(const DenoiserParams& den, const ModelDims& dims, const DenTrace& tr,
                       const Vec& d_eps, DenGrads* g, Mat* dC) {
    const double inv_sqrt = 1.0 / std::sqrt(double(dims.d_h));
    if (g) {
        g->mlp_W2.noalias() += d_eps * tr.u.transpose();
        g->mlp_b2 += d_eps;
    }
    Vec du = den.mlp_W2.transpose() * d_eps;
    Vec dupre = du.cwiseProduct(silu_d_vec(tr.upre));
    if (g) {
        g->mlp_W1.noalias() += dupre * tr.h1.transpose();
        g->mlp_b1 += dupre;
    }
    Vec dh1 = den.mlp_W1.transpose() * dupre;
    if (g) g->xattn_Wo.noalias() += dh1 * tr.ctx.transpose();
    Vec dctx = den.xattn_Wo.transpose() * dh1;
    Vec dh0 = dh1; // residual branch

    Mat dV = tr.a * dctx.transpose(); // L x d_h
    Vec da = tr.V * dctx;
    double dot = tr.a.dot(da);
    Vec ds = (tr.a.array() * (da.array() - dot)).matrix();
    Vec dq = tr.K.transpose() * ds * inv_sqrt;
    Mat dK = ds * tr.q.transpose() * inv_sqrt; // L x d_h
    if (g) {
        g->xattn_Wq.noalias() += dq * tr.h0.transpose();
        g->xattn_Wk.noalias() += dK.transpose() * tr.C;
        g->xattn_Wv.noalias() += dV.transpose() * tr.C;
    }
    if (dC) {
        dC->noalias() += dK * den.xattn_Wk;
        dC->noalias() += dV * den.xattn_Wv;
    }
    dh0.noalias() += den.xattn_Wq.transpose() * dq;

    Vec dg = dh0.cwiseProduct(silu_d_vec(tr.g));
    if (g) {
        g->in_W.noalias() += dg * tr.z.transpose();
        g->in_b += dg;
    }
    Vec dz = den.in_W.transpose() * dg;
    Vec dte = dz.tail(dims.d_h);
    Vec de = dte.cwiseProduct(silu_d_vec(tr.e));
    if (g) {
        g->time_W.noalias() += de * tr.f.transpose();
        g->time_b += de;
    }
}

void attention_backward(const DenoiserParams& den, const ModelDims& dims, const DenTrace& tr,
                        const Vec& d_a, DenGrads* g, Mat* dC) {
    const double inv_sqrt = 1.0 / std::sqrt(double(dims.d_h));
    double dot = tr.a.dot(d_a);
    Vec ds = (tr.a.array() * (d_a.array() - dot)).matrix();
    Vec dq = tr.K.transpose() * ds * inv_sqrt;
    Mat dK = ds * tr.q.transpose() * inv_sqrt;
    if (g) {
        g->xattn_Wq.noalias() += dq * tr.h0.transpose();
        g->xattn_Wk.noalias() += dK.transpose() * tr.C;
    }
    if (dC) dC->noalias() += dK * den.xattn_Wk;
    Vec dh0 = den.xattn_Wq.transpose() * dq;
    Vec dg_pre = dh0.cwiseProduct(silu_d_vec(tr.g));
    if (g) {
        g->in_W.noalias() += dg_pre * tr.z.transpose();
        g->in_b += dg_pre;
    }
    Vec dz = den.in_W.transpose() * dg_pre;
    Vec dte = dz.tail(dims.d_h);
    Vec de = dte.cwiseProduct(silu_d_vec(tr.e));
    if (g) {
        g->time_W.noalias() += de * tr.f.transpose();
        g->time_b += de;
    }
}

Vec predict_eps(const ModelSnapshot& snap, const Vec& x, int t, const Mat& C) {
    DenoiserParams den = effective_denoiser(snap);
    return denoiser_forward(den, snap.dims, x, t, C);
}

Vec attention_map(const ModelSnapshot& snap, const Vec& x, int t, const Mat& C) {
    DenoiserParams den = effective_denoiser(snap);
    DenTrace tr;
    denoiser_forward(den, snap.dims, x, t, C, &tr);
    return tr.a;
}

// ---- LoRA ----

void lora_attach(ModelSnapshot& snap, const std::vector<std::string>& names, int rank,
                 double scale, Rng& rng) {
    for (const auto& name : names) {
        if (snap.adapters.count(name))
            throw std::invalid_argument("lora_attach: adapter already attached on " + name);
        const Mat& base = denoiser_matrix(snap.den, name);
        int out = int(base.rows()), in = int(base.cols());
        if (rank < 1) throw std::invalid_argument("lora_attach: rank must be positive");
        int r = std::min(rank, std::min(out, in)); // clamp so rank <= min(in, out) holds
        LoraAdapter ad;
        ad.scale = scale;
        ad.A = randn(r, in, 1.0 / std::sqrt(double(in)), rng);
        ad.B = Mat::Zero(out, r); // outputs unchanged on attach
        snap.adapters.emplace(name, std::move(ad));
    }
}

void lora_merge(ModelSnapshot& snap) {
    for (auto& [name, ad] : snap.adapters)
        denoiser_matrix(snap.den, name).noalias() += ad.scale * (ad.B * ad.A);
    snap.adapters.clear();
}

void lora_detach(ModelSnapshot& snap) { snap.adapters.clear(); }

// ---- checkpoint io ----

namespace {

nlohmann::json tensor_json(const Mat& m) {
    nlohmann::json t;
    t["shape"] = {m.rows(), m.cols()};
    std::vector<double> data;
    data.reserve(size_t(m.size()));
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    t["data"] = data;
    return t;
}

nlohmann::json tensor_json(const Vec& v) {
    nlohmann::json t;
    t["shape"] = {v.size()};
    std::vector<double> data(v.data(), v.data() + v.size());
    t["data"] = data;
    return t;
}

Mat mat_from_json(const nlohmann::json& t) {
    auto shape = t.at("shape").get<std::vector<long>>();
    if (shape.size() != 2) throw std::invalid_argument("tensor: expected rank-2 shape");
    Mat m(shape[0], shape[1]);
    const auto& data = t.at("data");
    size_t idx = 0;
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) m(i, j) = data.at(idx++);
    return m;
}

Vec vec_from_json(const nlohmann::json& t) {
    auto shape = t.at("shape").get<std::vector<long>>();
    if (shape.size() != 1) throw std::invalid_argument("tensor: expected rank-1 shape");
    Vec v(shape[0]);
    const auto& data = t.at("data");
    for (int i = 0; i < v.size(); ++i) v[i] = data.at(i);
    return v;
}

} // namespace

nlohmann::json snapshot_to_json(const ModelSnapshot& snap) {
    nlohmann::json j;
    nlohmann::json meta;
    meta["dims"] = {{"d_e", snap.dims.d_e}, {"d_h", snap.dims.d_h}, {"d_x", snap.dims.d_x},
                    {"L", snap.dims.L},     {"V", snap.dims.V}};
    meta["provenance"] = {{"kind", snap.prov.kind},       {"method", snap.prov.method},
                          {"trigger", snap.prov.trigger}, {"target", snap.prov.target},
                          {"iteration", snap.prov.iteration},
                          {"parent_hash", snap.prov.parent_hash},
                          {"world_hash", snap.prov.world_hash},
                          {"config_hash", snap.prov.config_hash},
                          {"run_id", snap.prov.run_id}};
    nlohmann::json adapters = nlohmann::json::object();
    for (const auto& [name, ad] : snap.adapters)
        adapters[name] = {{"rank", ad.A.rows()}, {"scale", ad.scale}};
    meta["adapters"] = adapters;
    j["meta"] = meta;

    nlohmann::json tensors;
    tensors["textenc.embed"] = tensor_json(snap.enc.embed);
    tensors["textenc.pos"] = tensor_json(snap.enc.pos);
    tensors["textenc.attn.Wq"] = tensor_json(snap.enc.Wq);
    tensors["textenc.attn.Wk"] = tensor_json(snap.enc.Wk);
    tensors["textenc.attn.Wv"] = tensor_json(snap.enc.Wv);
    tensors["textenc.attn.Wo"] = tensor_json(snap.enc.Wo);
    tensors["denoiser.time.W"] = tensor_json(snap.den.time_W);
    tensors["denoiser.time.b"] = tensor_json(snap.den.time_b);
    tensors["denoiser.in.W"] = tensor_json(snap.den.in_W);
    tensors["denoiser.in.b"] = tensor_json(snap.den.in_b);
    tensors["denoiser.xattn.Wq"] = tensor_json(snap.den.xattn_Wq);
    tensors["denoiser.xattn.Wk"] = tensor_json(snap.den.xattn_Wk);
    tensors["denoiser.xattn.Wv"] = tensor_json(snap.den.xattn_Wv);
    tensors["denoiser.xattn.Wo"] = tensor_json(snap.den.xattn_Wo);
    tensors["denoiser.mlp.W1"] = tensor_json(snap.den.mlp_W1);
    tensors["denoiser.mlp.b1"] = tensor_json(snap.den.mlp_b1);
    tensors["denoiser.mlp.W2"] = tensor_json(snap.den.mlp_W2);
    tensors["denoiser.mlp.b2"] = tensor_json(snap.den.mlp_b2);
    for (const auto& [name, ad] : snap.adapters) {
        tensors["adapter." + name + ".A"] = tensor_json(ad.A);
        tensors["adapter." + name + ".B"] = tensor_json(ad.B);
    }
    j["tensors"] = tensors;
    return j;
}

ModelSnapshot snapshot_from_json(const nlohmann::json& j) {
    ModelSnapshot s;
    const auto& meta = j.at("meta");
    const auto& d = meta.at("dims");
    s.dims.d_e = d.at("d_e");
    s.dims.d_h = d.at("d_h");
    s.dims.d_x = d.at("d_x");
    s.dims.L = d.at("L");
    s.dims.V = d.at("V");
    const auto& p = meta.at("provenance");
    s.prov.kind = p.at("kind");
    s.prov.method = p.at("method");
    s.prov.trigger = p.at("trigger").get<std::vector<int>>();
    s.prov.target = p.at("target");
    s.prov.iteration = p.at("iteration");
    s.prov.parent_hash = p.at("parent_hash");
    s.prov.world_hash = p.at("world_hash");
    s.prov.config_hash = p.at("config_hash");
    s.prov.run_id = p.value("run_id", "");

    const auto& t = j.at("tensors");
    s.enc.embed = mat_from_json(t.at("textenc.embed"));
    s.enc.pos = mat_from_json(t.at("textenc.pos"));
    s.enc.Wq = mat_from_json(t.at("textenc.attn.Wq"));
    s.enc.Wk = mat_from_json(t.at("textenc.attn.Wk"));
    s.enc.Wv = mat_from_json(t.at("textenc.attn.Wv"));
    s.enc.Wo = mat_from_json(t.at("textenc.attn.Wo"));
    s.den.time_W = mat_from_json(t.at("denoiser.time.W"));
    s.den.time_b = vec_from_json(t.at("denoiser.time.b"));
    s.den.in_W = mat_from_json(t.at("denoiser.in.W"));
    s.den.in_b = vec_from_json(t.at("denoiser.in.b"));
    s.den.xattn_Wq = mat_from_json(t.at("denoiser.xattn.Wq"));
    s.den.xattn_Wk = mat_from_json(t.at("denoiser.xattn.Wk"));
    s.den.xattn_Wv = mat_from_json(t.at("denoiser.xattn.Wv"));
    s.den.xattn_Wo = mat_from_json(t.at("denoiser.xattn.Wo"));
    s.den.mlp_W1 = mat_from_json(t.at("denoiser.mlp.W1"));
    s.den.mlp_b1 = vec_from_json(t.at("denoiser.mlp.b1"));
    s.den.mlp_W2 = mat_from_json(t.at("denoiser.mlp.W2"));
    s.den.mlp_b2 = vec_from_json(t.at("denoiser.mlp.b2"));
    for (auto it = meta.at("adapters").begin(); it != meta.at("adapters").end(); ++it) {
        LoraAdapter ad;
        ad.scale = it.value().at("scale");
        ad.A = mat_from_json(t.at("adapter." + it.key() + ".A"));
        ad.B = mat_from_json(t.at("adapter." + it.key() + ".B"));
        s.adapters.emplace(it.key(), std::move(ad));
    }
    return s;
}

void save_snapshot(const ModelSnapshot& snap, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_snapshot: cannot open " + path);
    f << snapshot_to_json(snap).dump();
}

ModelSnapshot load_snapshot(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_snapshot: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return snapshot_from_json(j);
}

std::string ModelSnapshot::hash() const { return sha256_hex(snapshot_to_json(*this).dump()); }

} // namespace elab
