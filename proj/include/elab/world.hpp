#pragma once

#include "elab/common.hpp"
#include "elab/rng.hpp"
#include "elab/schedule.hpp"

#include <json.hpp>

#include <map>

namespace elab {

struct WorldConfig {
    int concepts = 16;       // K
    double radius = 4.0;     // circle radius for mean placement
    double sigma = 0.25;     // per-concept isotropic std
    int data_dim = 2;        // d_x
    int prompt_len = 4;      // L
    int vocab_size = 64;     // V
    int template_tokens = 10;
    int trigger_tokens = 8;
    int trigger_len = 1;     // tokens per trigger sequence
    double abstain_radius = 3.5; // classifier abstention radius in units of sigma
    uint64_t seed = 0;
};

// Token pattern with exactly one concept slot (kSlot).
struct Template {
    std::vector<int> pattern; // token ids, kSlot marks the slot
    bool training = true;
};

struct TemplateSet {
    static constexpr int kSlot = -1;
    std::vector<Template> items;

    std::vector<int> training_ids() const;
    std::vector<int> eval_ids() const;
};

enum class PromptRole { Target, Trigger, Retention, Other, Empty, TriggerPrepended };

struct Prompt {
    std::vector<int> ids; // fixed length L, pad suffix only
    PromptRole role = PromptRole::Other;

    bool operator<(const Prompt& o) const { return ids < o.ids; }
    bool operator==(const Prompt& o) const { return ids == o.ids; }
};

// The synthetic ground-truth universe: K well-separated Gaussian concepts in
// R^{d_x}, a token vocabulary with reserved trigger ids, and prompt templates.
// Exact classification and the exact noise predictor both follow from the
// mixture density, which is what the evaluation oracles rely on.
struct ConceptWorld {
    WorldConfig cfg;
    std::vector<Vec> mu;
    std::vector<std::string> vocab;
    std::vector<int> concept_tokens; // concept index -> token id
    std::vector<int> trigger_pool;   // reserved token ids, never in clean prompts
    TemplateSet templates;
    std::vector<int> target_pool;    // concept indices eligible as erasure targets
    std::vector<int> retention_pool;
    std::vector<int> heldout_pool;
    int pad_token = 0;
    int empty_token = 1;

    int concept_of_token(int token) const; // -1 when not a concept token

    nlohmann::json to_json() const;
    static ConceptWorld from_json(const nlohmann::json& j);
    std::string hash() const;
};

ConceptWorld build_world(const WorldConfig& cfg);

std::vector<Vec> sample_data(const ConceptWorld& w, int concept_index, int n, Rng& rng);

// The optimal noise predictor E[eps | x_t, condition]. Unconditional requests
// return the posterior-weighted mixture over concepts.
Vec analytic_eps(const ConceptWorld& w, const Vec& x_t, int t, std::optional<int> concept_index,
                 const DiffusionSchedule& sched);

struct Classification {
    std::optional<int> concept_index; // nullopt = ABSTAIN
    Vec posterior;                    // normalized over K concepts
};

Classification classify_point(const ConceptWorld& w, const Vec& x0);

Prompt render_prompt(const ConceptWorld& w, int template_id, const std::vector<int>& slot_tokens,
                     const std::vector<int>& prepend = {}, PromptRole role = PromptRole::Other);

Prompt empty_prompt(const ConceptWorld& w);

} // namespace elab
