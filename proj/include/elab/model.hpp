#pragma once

#include "elab/common.hpp"
#include "elab/rng.hpp"
#include "elab/schedule.hpp"
#include "elab/world.hpp"

#include <json.hpp>

#include <map>

namespace elab {

struct ModelDims {
    int d_e = 32; // text embedding width
    int d_h = 32; // denoiser hidden width
    int d_x = 2;  // data dimensionality
    int L = 4;    // prompt length
    int V = 64;   // vocabulary size
};

// All matrices are stored in operator form (out_dim x in_dim) and applied to
// column vectors. Checkpoint tensor names are fixed, see snapshot_to_json.
struct TextEncoderParams {
    Mat embed; // V x d_e, rows are token embeddings
    Mat pos;   // L x d_e
    Mat Wq, Wk, Wv, Wo; // d_e x d_e
};

struct DenoiserParams {
    Mat time_W; // d_h x d_h (sinusoidal features -> hidden)
    Vec time_b;
    Mat in_W;   // d_h x (d_x + d_h)
    Vec in_b;
    Mat xattn_Wq; // d_h x d_h
    Mat xattn_Wk; // d_h x d_e
    Mat xattn_Wv; // d_h x d_e
    Mat xattn_Wo; // d_h x d_h
    Mat mlp_W1; // d_h x d_h
    Vec mlp_b1;
    Mat mlp_W2; // d_x x d_h
    Vec mlp_b2;
};

struct LoraAdapter {
    Mat A;          // rank x in
    Mat B;          // out x rank
    double scale = 1.0;
};

struct Provenance {
    std::string kind = "clean"; // clean | poisoned | erased
    std::string method;
    std::vector<int> trigger;
    int target = -1;
    int iteration = -1;
    std::string parent_hash;
    std::string world_hash;
    std::string config_hash;
    std::string run_id;
};

struct ModelSnapshot {
    ModelDims dims;
    TextEncoderParams enc;
    DenoiserParams den;
    std::map<std::string, LoraAdapter> adapters; // keyed by denoiser matrix name
    Provenance prov;

    std::string hash() const;
};

// Names of the denoiser weight matrices that LoRA adapters and closed-form
// edits can address.
const std::vector<std::string>& denoiser_matrix_names();
Mat& denoiser_matrix(DenoiserParams& p, const std::string& name);
const Mat& denoiser_matrix(const DenoiserParams& p, const std::string& name);

ModelSnapshot init_model(const ModelDims& dims, Rng& rng);

// ---- text encoder ----

struct EncTrace {
    std::vector<int> tokens;
    Mat X;      // L x d_e inputs (embedding + position)
    Mat Q, K, V; // L x d_e
    Mat A;      // L x L attention rows
    Mat O;      // L x d_e mixed values
    Mat C;      // L x d_e output
};

Mat encode_prompt(const TextEncoderParams& enc, const ModelDims& dims, const Prompt& prompt,
                  EncTrace* trace = nullptr);

struct EncGrads {
    Mat embed, pos, Wq, Wk, Wv, Wo;
    void init(const ModelDims& dims);
    void zero();
};

void encode_backward(const TextEncoderParams& enc, const ModelDims& dims, const EncTrace& tr,
                     const Mat& dC, EncGrads& g);

// ---- denoiser ----

struct DenTrace {
    Vec f;       // sinusoidal time features
    Vec e, te;   // time embedding pre/post activation
    Vec z;       // concat(x, te)
    Vec g, h0;   // input projection pre/post activation
    Vec q;
    Mat C;       // conditioning input, L x d_e
    Mat K, V;    // L x d_h
    Vec s, a;    // attention scores / weights
    Vec ctx, h1;
    Vec upre, u;
    Vec eps;
};

// Base denoiser with adapters folded in; cheap enough to materialize per step.
DenoiserParams effective_denoiser(const ModelSnapshot& snap);

Vec denoiser_forward(const DenoiserParams& den, const ModelDims& dims, const Vec& x, int t,
                     const Mat& C, DenTrace* trace = nullptr);

struct DenGrads {
    Mat time_W, in_W, xattn_Wq, xattn_Wk, xattn_Wv, xattn_Wo, mlp_W1, mlp_W2;
    Vec time_b, in_b, mlp_b1, mlp_b2;
    void init(const ModelDims& dims);
    void zero();
    Mat& matrix(const std::string& name);
};

// Accumulates parameter gradients into g; dC (optional) receives the gradient
// w.r.t. the conditioning matrix.
void denoiser_backward(const DenoiserParams& den, const ModelDims& dims, const DenTrace& tr,
                       const Vec& d_eps, DenGrads* g, Mat* dC = nullptr);

// Backward pass for losses defined directly on the attention weights.
void attention_backward(const DenoiserParams& den, const ModelDims& dims, const DenTrace& tr,
                        const Vec& d_a, DenGrads* g, Mat* dC = nullptr);

Vec predict_eps(const ModelSnapshot& snap, const Vec& x, int t, const Mat& C);

// Softmax attention weights over prompt tokens; sums to 1.
Vec attention_map(const ModelSnapshot& snap, const Vec& x, int t, const Mat& C);

// ---- LoRA ----

void lora_attach(ModelSnapshot& snap, const std::vector<std::string>& names, int rank,
                 double scale, Rng& rng);
void lora_merge(ModelSnapshot& snap);
void lora_detach(ModelSnapshot& snap);

// ---- checkpoint io ----

nlohmann::json snapshot_to_json(const ModelSnapshot& snap);
ModelSnapshot snapshot_from_json(const nlohmann::json& j);
void save_snapshot(const ModelSnapshot& snap, const std::string& path);
ModelSnapshot load_snapshot(const std::string& path);

} // namespace elab
