#include "elab/world.hpp"

#include "elab/hash.hpp"

#include <algorithm>
#include <cmath>

namespace elab {

std::vector<int> TemplateSet::training_ids() const {
    std::vector<int> out;
    for (int i = 0; i < int(items.size()); ++i)
        if (items[i].training) out.push_back(i);
    return out;
}

std::vector<int> TemplateSet::eval_ids() const {
    std::vector<int> out;
    for (int i = 0; i < int(items.size()); ++i)
        if (!items[i].training) out.push_back(i);
    return out;
}

int ConceptWorld::concept_of_token(int token) const {
    for (int c = 0; c < int(concept_tokens.size()); ++c)
        if (concept_tokens[c] == token) return c;
    return -1;
}

namespace {

TemplateSet default_templates(const std::vector<int>& t) {
    // t holds the template-token ids. Training and evaluation sets are
    // disjoint as sequences; evaluation reuses trained tokens in unseen
    // arrangements so eval prompts stay in-distribution tokenwise.
    const int S = TemplateSet::kSlot;
    TemplateSet ts;
    auto add = [&](std::vector<int> pat, bool training) {
        ts.items.push_back({std::move(pat), training});
    };
    add({S}, true);
    add({t[0], S}, true);
    add({t[1], S}, true);
    add({S, t[2]}, true);
    add({t[3], S, t[4]}, true);
    add({t[2], t[0], S}, true);
    add({t[0], t[1], S}, true);
    add({t[4], S, t[0]}, true);
    // evaluation templates
    add({t[2], S}, false);
    add({S, t[0]}, false);
    add({t[4], t[1], S}, false);
    add({S, t[3]}, false);
    add({t[1], t[2], S}, false);
    return ts;
}

} // namespace

ConceptWorld build_world(const WorldConfig& cfg) {
    if (cfg.concepts < 2) throw std::invalid_argument("build_world: K >= 2 required");
    if (!(cfg.sigma > 0.0)) throw std::invalid_argument("build_world: sigma > 0 required");
    if (cfg.data_dim < 2) throw std::invalid_argument("build_world: d_x >= 2 required");
    if (cfg.prompt_len < 2) throw std::invalid_argument("build_world: prompt_len >= 2 required");

    ConceptWorld w;
    w.cfg = cfg;

    // Means evenly on a circle of radius R in the first two coordinates.
    w.mu.resize(cfg.concepts);
    for (int k = 0; k < cfg.concepts; ++k) {
        Vec m = Vec::Zero(cfg.data_dim);
        double ang = 2.0 * M_PI * double(k) / double(cfg.concepts);
        m[0] = cfg.radius * std::cos(ang);
        m[1] = cfg.radius * std::sin(ang);
        w.mu[k] = m;
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < cfg.concepts; ++a)
        for (int b = a + 1; b < cfg.concepts; ++b)
            min_dist = std::min(min_dist, (w.mu[a] - w.mu[b]).norm());
    if (min_dist < 6.0 * cfg.sigma)
        throw std::invalid_argument("build_world: concepts not separable (min pairwise distance " +
                                    std::to_string(min_dist) + " < 6*sigma = " +
                                    std::to_string(6.0 * cfg.sigma) + ")");

    int needed = 2 + cfg.concepts + cfg.template_tokens + cfg.trigger_tokens * cfg.trigger_len;
    if (cfg.vocab_size < needed)
        throw std::invalid_argument("build_world: vocab_size too small for token layout");

    w.vocab.resize(cfg.vocab_size);
    w.vocab[0] = "<pad>";
    w.vocab[1] = "<empty>";
    int next = 2;
    w.concept_tokens.resize(cfg.concepts);
    for (int k = 0; k < cfg.concepts; ++k) {
        w.concept_tokens[k] = next;
        w.vocab[next++] = "c" + std::to_string(k);
    }
    std::vector<int> template_ids(cfg.template_tokens);
    for (int i = 0; i < cfg.template_tokens; ++i) {
        template_ids[i] = next;
        w.vocab[next++] = "t" + std::to_string(i);
    }
    for (int i = 0; i < cfg.trigger_tokens * cfg.trigger_len; ++i) {
        w.trigger_pool.push_back(next);
        w.vocab[next++] = "trg" + std::to_string(i);
    }
    for (int i = next; i < cfg.vocab_size; ++i) w.vocab[i] = "u" + std::to_string(i - next);

    w.templates = default_templates(template_ids);

    // Concept pools: ~10/16 of concepts are eligible erasure targets, the
    // remainder splits into retention and held-out halves.
    int n_target = std::max(1, (cfg.concepts * 10) / 16);
    if (n_target > cfg.concepts - 2) n_target = cfg.concepts - 2;
    int rest = cfg.concepts - n_target;
    int n_ret = (rest + 1) / 2;
    for (int k = 0; k < cfg.concepts; ++k) {
        if (k < n_target) w.target_pool.push_back(k);
        else if (k < n_target + n_ret) w.retention_pool.push_back(k);
        else w.heldout_pool.push_back(k);
    }
    return w;
}

std::vector<Vec> sample_data(const ConceptWorld& w, int concept_index, int n, Rng& rng) {
    if (concept_index < 0 || concept_index >= w.cfg.concepts)
        throw std::out_of_range("sample_data: concept index out of range");
    std::vector<Vec> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i)
        out.push_back(w.mu[concept_index] + w.cfg.sigma * rng.normal_vec(w.cfg.data_dim));
    return out;
}

Vec analytic_eps(const ConceptWorld& w, const Vec& x_t, int t, std::optional<int> concept_index,
                 const DiffusionSchedule& sched) {
    if (t < 1 || t > sched.T) throw std::out_of_range("analytic_eps: t out of range");
    if (!x_t.allFinite()) throw std::invalid_argument("analytic_eps: x_t must be finite");
    const double ab = sched.abar(t);
    const double sq_ab = std::sqrt(ab);
    const double var = ab * w.cfg.sigma * w.cfg.sigma + (1.0 - ab);
    const double sq_1mab = std::sqrt(1.0 - ab);
    auto cond = [&](int c) -> Vec { return sq_1mab * (x_t - sq_ab * w.mu[c]) / var; };
    if (concept_index) {
        int c = *concept_index;
        if (c < 0 || c >= w.cfg.concepts) throw std::out_of_range("analytic_eps: concept out of range");
        return cond(c);
    }
    // posterior weights proportional to N(x_t; sqrt(ab)*mu_c, var*I)
    const int K = w.cfg.concepts;
    Vec logw(K);
    for (int c = 0; c < K; ++c) logw[c] = -0.5 * (x_t - sq_ab * w.mu[c]).squaredNorm() / var;
    double mx = logw.maxCoeff();
    Vec wts = (logw.array() - mx).exp();
    wts /= wts.sum();
    Vec out = Vec::Zero(w.cfg.data_dim);
    for (int c = 0; c < K; ++c) out += wts[c] * cond(c);
    return out;
}

Classification classify_point(const ConceptWorld& w, const Vec& x0) {
    if (!x0.allFinite()) throw std::invalid_argument("classify_point: x0 must be finite");
    const int K = w.cfg.concepts;
    Vec logp(K);
    int best = 0;
    for (int c = 0; c < K; ++c) {
        logp[c] = -0.5 * (x0 - w.mu[c]).squaredNorm() / (w.cfg.sigma * w.cfg.sigma);
        if (logp[c] > logp[best]) best = c;
    }
    double mx = logp.maxCoeff();
    Vec post = (logp.array() - mx).exp();
    post /= post.sum();
    Classification out;
    out.posterior = post;
    double mahal = (x0 - w.mu[best]).norm() / w.cfg.sigma;
    if (mahal <= w.cfg.abstain_radius) out.concept_index = best;
    return out;
}

Prompt render_prompt(const ConceptWorld& w, int template_id, const std::vector<int>& slot_tokens,
                     const std::vector<int>& prepend, PromptRole role) {
    if (template_id < 0 || template_id >= int(w.templates.items.size()))
        throw std::out_of_range("render_prompt: template id out of range");
    const auto& pat = w.templates.items[template_id].pattern;
    int slots = int(std::count(pat.begin(), pat.end(), TemplateSet::kSlot));
    if (slots != 1) throw std::invalid_argument("render_prompt: template must have one slot");
    if (slot_tokens.empty()) throw std::invalid_argument("render_prompt: slot tokens required");

    Prompt p;
    p.role = role;
    p.ids = prepend;
    for (int tok : pat) {
        if (tok == TemplateSet::kSlot)
            p.ids.insert(p.ids.end(), slot_tokens.begin(), slot_tokens.end());
        else
            p.ids.push_back(tok);
    }
    p.ids.resize(size_t(w.cfg.prompt_len), w.pad_token); // pad or truncate to L
    return p;
}

Prompt empty_prompt(const ConceptWorld& w) {
    Prompt p;
    p.role = PromptRole::Empty;
    p.ids.assign(size_t(w.cfg.prompt_len), w.pad_token);
    p.ids[0] = w.empty_token;
    return p;
}

nlohmann::json ConceptWorld::to_json() const {
    nlohmann::json j;
    j["config"] = {{"concepts", cfg.concepts}, {"radius", cfg.radius}, {"sigma", cfg.sigma},
                   {"data_dim", cfg.data_dim}, {"prompt_len", cfg.prompt_len},
                   {"vocab_size", cfg.vocab_size}, {"template_tokens", cfg.template_tokens},
                   {"trigger_tokens", cfg.trigger_tokens}, {"trigger_len", cfg.trigger_len},
                   {"abstain_radius", cfg.abstain_radius}, {"seed", cfg.seed}};
    nlohmann::json means = nlohmann::json::array();
    for (const auto& m : mu) {
        nlohmann::json row = nlohmann::json::array();
        for (int i = 0; i < m.size(); ++i) row.push_back(m[i]);
        means.push_back(row);
    }
    j["mu"] = means;
    nlohmann::json voc = nlohmann::json::object();
    for (int i = 0; i < int(vocab.size()); ++i) voc[std::to_string(i)] = vocab[i];
    j["vocab"] = voc;
    j["concept_tokens"] = concept_tokens;
    j["trigger_pool"] = trigger_pool;
    nlohmann::json tpl = nlohmann::json::array();
    for (const auto& t : templates.items) tpl.push_back({{"pattern", t.pattern}, {"training", t.training}});
    j["templates"] = tpl;
    j["target_pool"] = target_pool;
    j["retention_pool"] = retention_pool;
    j["heldout_pool"] = heldout_pool;
    return j;
}

ConceptWorld ConceptWorld::from_json(const nlohmann::json& j) {
    WorldConfig cfg;
    const auto& c = j.at("config");
    cfg.concepts = c.at("concepts");
    cfg.radius = c.at("radius");
    cfg.sigma = c.at("sigma");
    cfg.data_dim = c.at("data_dim");
    cfg.prompt_len = c.at("prompt_len");
    cfg.vocab_size = c.at("vocab_size");
    cfg.template_tokens = c.at("template_tokens");
    cfg.trigger_tokens = c.at("trigger_tokens");
    cfg.trigger_len = c.at("trigger_len");
    cfg.abstain_radius = c.at("abstain_radius");
    cfg.seed = c.at("seed");

    ConceptWorld w;
    w.cfg = cfg;
    for (const auto& row : j.at("mu")) {
        Vec m(row.size());
        for (int i = 0; i < int(row.size()); ++i) m[i] = row[i];
        w.mu.push_back(m);
    }
    w.vocab.resize(cfg.vocab_size);
    for (auto it = j.at("vocab").begin(); it != j.at("vocab").end(); ++it)
        w.vocab[std::stoi(it.key())] = it.value().get<std::string>();
    w.concept_tokens = j.at("concept_tokens").get<std::vector<int>>();
    w.trigger_pool = j.at("trigger_pool").get<std::vector<int>>();
    for (const auto& t : j.at("templates"))
        w.templates.items.push_back({t.at("pattern").get<std::vector<int>>(), t.at("training").get<bool>()});
    w.target_pool = j.at("target_pool").get<std::vector<int>>();
    w.retention_pool = j.at("retention_pool").get<std::vector<int>>();
    w.heldout_pool = j.at("heldout_pool").get<std::vector<int>>();
    return w;
}

std::string ConceptWorld::hash() const { return sha256_hex(to_json().dump()); }

} // namespace elab
