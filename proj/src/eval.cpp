#include "elab/eval.hpp"

#include "elab/hash.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace elab {

namespace {

// sample N images for prompts cycling (concept, eval template), classify, and
// count hits against `expect` (the prompt concept, or a fixed target for the
// trigger category)
struct CategoryRunner {
    const ConceptWorld& world;
    const DiffusionSchedule& sched;
    const ModelSnapshot& snap;
    const SamplerConfig& sampler;
    Mat C_empty;
    DenoiserParams den;
    std::map<std::vector<int>, Mat> enc_cache;

    CategoryRunner(const ConceptWorld& w, const DiffusionSchedule& s, const ModelSnapshot& m,
                   const SamplerConfig& sc)
        : world(w), sched(s), snap(m), sampler(sc) {
        den = effective_denoiser(snap);
        C_empty = encode_prompt(snap.enc, snap.dims, empty_prompt(world));
    }

    const Mat& cond(const Prompt& p) {
        auto it = enc_cache.find(p.ids);
        if (it != enc_cache.end()) return it->second;
        auto [ins, ok] = enc_cache.emplace(p.ids, encode_prompt(snap.enc, snap.dims, p));
        return ins->second;
    }

    Vec sample(const Prompt& p, Rng& rng) {
        Vec x = rng.normal_vec(snap.dims.d_x);
        auto grid = ddim_time_grid(sched, sampler.steps, 0);
        for (size_t i = 0; i + 1 < grid.size(); ++i) {
            int t = grid[i], tn = grid[i + 1];
            Vec eps = guided_eps(den, snap.dims, x, t, cond(p), C_empty, sampler.guidance);
            double ab = sched.abar(t), abn = sched.abar(tn);
            Vec x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
            x = std::sqrt(abn) * x0 + std::sqrt(1.0 - abn) * eps;
        }
        return x;
    }

    // accuracy over n samples for prompts built from `concepts` x eval
    // templates; expect_target >= 0 pins the expected class (trigger category)
    std::pair<double, int> category(const std::vector<int>& concepts,
                                    const std::vector<std::vector<int>>& slot_token_sets,
                                    int expect_target, int n, PromptRole role, Rng& rng) {
        auto eval_ids = world.templates.eval_ids();
        int hits = 0;
        for (int i = 0; i < n; ++i) {
            size_t k = size_t(i) % slot_token_sets.size();
            int tmpl = eval_ids[size_t(i / slot_token_sets.size()) % eval_ids.size()];
            Prompt p = render_prompt(world, tmpl, slot_token_sets[k], {}, role);
            Vec x0 = sample(p, rng);
            auto cls = classify_point(world, x0);
            int expect = expect_target >= 0 ? expect_target : concepts[k];
            if (cls.concept_index && *cls.concept_index == expect) ++hits;
        }
        return {n > 0 ? double(hits) / n : 0.0, n};
    }
};

} // namespace

EvalReport accuracy_suite(const ConceptWorld& world, const DiffusionSchedule& sched,
                          const ModelSnapshot& snap, const EvalConfig& cfg, Rng& rng) {
    EvalReport rep;
    CategoryRunner runner(world, sched, snap, cfg.sampler);
    const int N = cfg.samples_per_category;

    // target
    {
        Rng r = rng.fork(1);
        auto [acc, n] = runner.category({cfg.target}, {{world.concept_tokens[cfg.target]}},
                                        -1, N, PromptRole::Target, r);
        rep.acc_e = acc;
        rep.n_e = n;
    }
    // trigger: samples must reproduce the *target* concept
    if (!cfg.trigger.empty()) {
        Rng r = rng.fork(2);
        auto [acc, n] =
            runner.category({cfg.target}, {cfg.trigger}, cfg.target, N, PromptRole::Trigger, r);
        rep.acc_dagger = acc;
        rep.n_dagger = n;
    }
    // retention
    if (!cfg.retention.empty()) {
        Rng r = rng.fork(3);
        std::vector<std::vector<int>> sets;
        for (int c : cfg.retention) sets.push_back({world.concept_tokens[c]});
        auto [acc, n] = runner.category(cfg.retention, sets, -1, N, PromptRole::Retention, r);
        rep.acc_r = acc;
        rep.n_r = n;
    }
    // held-out
    if (!cfg.heldout.empty()) {
        Rng r = rng.fork(4);
        std::vector<std::vector<int>> sets;
        for (int c : cfg.heldout) sets.push_back({world.concept_tokens[c]});
        auto [acc, n] = runner.category(cfg.heldout, sets, -1, N, PromptRole::Other, r);
        rep.acc_o = acc;
        rep.n_o = n;
    }
    // Frechet utility over a uniform mixture of all non-target concepts
    {
        Rng r = rng.fork(5);
        std::vector<int> mix;
        for (int c = 0; c < world.cfg.concepts; ++c)
            if (c != cfg.target) mix.push_back(c);
        auto eval_ids = world.templates.eval_ids();
        std::vector<Vec> model_samples, oracle_samples;
        for (int i = 0; i < cfg.frechet_samples; ++i) {
            int c = mix[size_t(i) % mix.size()];
            int tmpl = eval_ids[size_t(i / mix.size()) % eval_ids.size()];
            Prompt p = render_prompt(world, tmpl, {world.concept_tokens[c]});
            model_samples.push_back(runner.sample(p, r));
            oracle_samples.push_back(sample_data(world, c, 1, r)[0]);
        }
        rep.frechet = frechet_score(model_samples, oracle_samples);
    }
    rep.snapshot_hash = snap.hash();
    return rep;
}

double frechet_score(const std::vector<Vec>& samples_a, const std::vector<Vec>& samples_b) {
    if (samples_a.empty() || samples_b.empty())
        throw std::invalid_argument("frechet_score: empty sample set");
    const int d = int(samples_a[0].size());
    if (int(samples_a.size()) < d + 1 || int(samples_b.size()) < d + 1)
        throw std::invalid_argument("frechet_score: need at least d+1 samples per set");

    auto fit = [d](const std::vector<Vec>& s) {
        Vec m = Vec::Zero(d);
        for (const auto& x : s) m += x;
        m /= double(s.size());
        Mat cov = Mat::Zero(d, d);
        for (const auto& x : s) cov.noalias() += (x - m) * (x - m).transpose();
        cov /= double(s.size() - 1);
        return std::make_pair(m, cov);
    };
    auto [ma, Sa] = fit(samples_a);
    auto [mb, Sb] = fit(samples_b);

    auto psd_sqrt = [](const Mat& S) {
        Eigen::SelfAdjointEigenSolver<Mat> es(S);
        Vec ev = es.eigenvalues();
        for (int i = 0; i < ev.size(); ++i) {
            if (ev[i] < -1e-8) throw std::runtime_error("frechet_score: matrix not PSD");
            ev[i] = std::sqrt(std::max(ev[i], 0.0));
        }
        return Mat(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    };

    if (Sa.norm() == 0.0 || Sb.norm() == 0.0)
        throw std::runtime_error("frechet_score: degenerate covariance");

    // tr((Sa Sb)^{1/2}) computed via the symmetric product Sa^{1/2} Sb Sa^{1/2}
    Mat ra = psd_sqrt(Sa);
    Mat inner = ra * Sb * ra;
    Eigen::SelfAdjointEigenSolver<Mat> es(inner);
    double tr_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        double v = es.eigenvalues()[i];
        if (v < -1e-8) throw std::runtime_error("frechet_score: product not PSD");
        tr_sqrt += std::sqrt(std::max(v, 0.0));
    }
    double score = (ma - mb).squaredNorm() + Sa.trace() + Sb.trace() - 2.0 * tr_sqrt;
    return std::max(score, 0.0);
}

long exposure_count(const ConceptWorld& world, const DiffusionSchedule& sched,
                    const ModelSnapshot& snap, const std::vector<Prompt>& prompts,
                    const std::vector<int>& region, const SamplerConfig& sampler, Rng& rng) {
    CategoryRunner runner(world, sched, snap, sampler);
    long count = 0;
    for (size_t i = 0; i < prompts.size(); ++i) {
        Vec x0 = runner.sample(prompts[i], rng);
        for (int c : region) {
            if ((x0 - world.mu[c]).norm() <= 3.0 * world.cfg.sigma) {
                ++count;
                break;
            }
        }
    }
    return count;
}

TrajectoryRecord trajectory_eval(const ConceptWorld& world, const DiffusionSchedule& sched,
                                 const std::vector<Checkpoint>& checkpoints,
                                 const EvalConfig& cfg, Rng& rng) {
    TrajectoryRecord rec;
    if (checkpoints.empty()) return rec;
    const std::string world_hash = checkpoints[0].snapshot.prov.world_hash;
    const std::string parent = checkpoints[0].snapshot.prov.parent_hash;
    const std::string method = checkpoints[0].snapshot.prov.method;
    int last_iter = std::numeric_limits<int>::min();
    for (const auto& ck : checkpoints) {
        if (ck.snapshot.prov.world_hash != world_hash || ck.snapshot.prov.parent_hash != parent ||
            ck.snapshot.prov.method != method)
            throw std::invalid_argument("trajectory_eval: checkpoints from mixed chains");
        if (ck.iteration <= last_iter)
            throw std::invalid_argument("trajectory_eval: iteration indices must increase");
        last_iter = ck.iteration;
        Rng r = rng.fork(uint64_t(ck.iteration));
        rec.iterations.push_back(ck.iteration);
        rec.reports.push_back(accuracy_suite(world, sched, ck.snapshot, cfg, r));
    }
    return rec;
}

double anomaly_score(const ConceptWorld& world, const DiffusionSchedule& sched,
                     const ModelSnapshot& snap, const Prompt& prompt, const EvalConfig& cfg,
                     Rng& rng) {
    DenoiserParams den = effective_denoiser(snap);
    Mat C = encode_prompt(snap.enc, snap.dims, prompt);
    Mat C0 = encode_prompt(snap.enc, snap.dims, empty_prompt(world));
    const int L = snap.dims.L;

    // short guided trajectory, collecting the conditional attention row
    Vec x = rng.normal_vec(snap.dims.d_x);
    auto grid = ddim_time_grid(sched, cfg.anomaly_steps, 0);
    std::vector<Vec> rows;
    for (size_t i = 0; i + 1 < grid.size(); ++i) {
        int t = grid[i], tn = grid[i + 1];
        DenTrace tr;
        Vec ec = denoiser_forward(den, snap.dims, x, t, C, &tr);
        rows.push_back(tr.a);
        Vec e0 = denoiser_forward(den, snap.dims, x, t, C0);
        Vec eps = e0 + cfg.sampler.guidance * (ec - e0);
        double ab = sched.abar(t), abn = sched.abar(tn);
        Vec x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
        x = std::sqrt(abn) * x0 + std::sqrt(1.0 - abn) * eps;
    }

    // non-pad positions
    std::vector<int> live;
    for (int l = 0; l < L; ++l)
        if (prompt.ids[l] != world.pad_token) live.push_back(l);
    if (live.empty()) live.push_back(0);

    Vec mean = Vec::Zero(L);
    for (const auto& r : rows) mean += r;
    mean /= double(rows.size());

    if (cfg.anomaly_stat == "neg_entropy") {
        double h = 0.0;
        for (int l : live) {
            double p = std::max(mean[l], 1e-12);
            h -= p * std::log(p);
        }
        return -h;
    }
    if (cfg.anomaly_stat == "flatness") {
        // temporal stability of the attention vector (assimilation)
        double var = 0.0;
        for (const auto& r : rows) var += (r - mean).squaredNorm();
        var /= double(rows.size());
        return -var;
    }
    // default: max over tokens of the time-averaged attention mass
    double mx = 0.0;
    for (int l : live) mx = std::max(mx, mean[l]);
    return mx;
}

double roc_auc(const std::vector<std::pair<double, int>>& scored) {
    long n_pos = 0, n_neg = 0;
    for (const auto& [s, y] : scored) (y ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("roc_auc: both classes must be present");

    std::vector<size_t> idx(scored.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return scored[a].first < scored[b].first; });

    // midranks for tie groups
    std::vector<double> rank(scored.size());
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j + 1 < idx.size() && scored[idx[j + 1]].first == scored[idx[i]].first) ++j;
        double mid = 0.5 * double(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (size_t k = 0; k < scored.size(); ++k)
        if (scored[k].second) rank_sum_pos += rank[k];
    double u = rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

// ---- CSV ----

std::string csv_header() {
    return "run_id,phase,attack,erasure,trigger,target,iteration,acc_r,acc_o,acc_e,acc_dagger,"
           "frechet,exposure_e,exposure_dagger,auc,seed";
}

namespace {
std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}
} // namespace

std::string csv_line(const CsvRow& row) {
    std::ostringstream os;
    os << row.run_id << ',' << row.phase << ',' << row.attack << ',' << row.erasure << ','
       << row.trigger << ',' << row.target << ',' << row.iteration << ',' << fmt(row.rep.acc_r)
       << ',' << fmt(row.rep.acc_o) << ',' << fmt(row.rep.acc_e) << ',' << fmt(row.rep.acc_dagger)
       << ',' << fmt(row.rep.frechet) << ','
       << (row.rep.exposure_e < 0 ? "" : std::to_string(row.rep.exposure_e)) << ','
       << (row.rep.exposure_dagger < 0 ? "" : std::to_string(row.rep.exposure_dagger)) << ','
       << fmt(row.rep.auc) << ',' << row.rep.seed;
    return os.str();
}

std::vector<CsvRow> csv_parse(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("csv_parse: empty input");
    if (line != csv_header()) throw std::invalid_argument("csv_parse: schema mismatch");
    std::vector<CsvRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        f.resize(16);
        CsvRow r;
        r.run_id = f[0];
        r.phase = f[1];
        r.attack = f[2];
        r.erasure = f[3];
        r.trigger = f[4];
        r.target = f[5].empty() ? -1 : std::stoi(f[5]);
        r.iteration = f[6].empty() ? -1 : std::stoi(f[6]);
        auto num = [](const std::string& s) {
            return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
        };
        r.rep.acc_r = num(f[7]);
        r.rep.acc_o = num(f[8]);
        r.rep.acc_e = num(f[9]);
        r.rep.acc_dagger = num(f[10]);
        r.rep.frechet = num(f[11]);
        r.rep.exposure_e = f[12].empty() ? -1 : std::stol(f[12]);
        r.rep.exposure_dagger = f[13].empty() ? -1 : std::stol(f[13]);
        r.rep.auc = num(f[14]);
        r.rep.seed = f[15].empty() ? 0 : std::stoull(f[15]);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace elab
