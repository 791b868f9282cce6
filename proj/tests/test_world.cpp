#include "elab/world.hpp"

#include <doctest.h>

#include <cmath>

using namespace elab;

namespace {
ConceptWorld default_world(uint64_t seed = 0) {
    WorldConfig cfg;
    cfg.seed = seed;
    return build_world(cfg);
}
} // namespace

TEST_CASE("build_world places means on a circle") {
    ConceptWorld w = default_world();
    REQUIRE(w.cfg.concepts == 16);
    for (int k = 0; k < 16; ++k) {
        double ang = 2.0 * M_PI * k / 16.0;
        CHECK(w.mu[k][0] == doctest::Approx(4.0 * std::cos(ang)).epsilon(1e-12));
        CHECK(w.mu[k][1] == doctest::Approx(4.0 * std::sin(ang)).epsilon(1e-12));
    }
    // pool split: 10 targets, rest halved
    CHECK(w.target_pool.size() == 10);
    CHECK(w.retention_pool.size() == 3);
    CHECK(w.heldout_pool.size() == 3);
}

TEST_CASE("build_world rejects inseparable configurations") {
    WorldConfig cfg;
    cfg.concepts = 2;
    cfg.radius = 0.5;
    cfg.sigma = 0.25; // distance 1.0 < 6*sigma = 1.5
    CHECK_THROWS_AS(build_world(cfg), std::invalid_argument);
    cfg.radius = 1.0; // distance 2.0 >= 1.5
    CHECK_NOTHROW(build_world(cfg));
    cfg.concepts = 1;
    CHECK_THROWS_AS(build_world(cfg), std::invalid_argument);
}

TEST_CASE("build_world is deterministic") {
    ConceptWorld a = default_world(7);
    ConceptWorld b = default_world(7);
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(a.hash() == b.hash());
}

TEST_CASE("world json round trip") {
    ConceptWorld w = default_world(3);
    ConceptWorld back = ConceptWorld::from_json(w.to_json());
    CHECK(back.to_json().dump() == w.to_json().dump());
}

TEST_CASE("trigger pool never appears in clean templates") {
    ConceptWorld w = default_world();
    for (const auto& t : w.templates.items)
        for (int tok : t.pattern)
            if (tok >= 0)
                for (int trg : w.trigger_pool) CHECK(tok != trg);
    for (int tok : w.concept_tokens)
        for (int trg : w.trigger_pool) CHECK(tok != trg);
}

TEST_CASE("sample_data statistics") {
    ConceptWorld w = default_world();
    Rng rng(11);

    SUBCASE("degenerate sigma") {
        WorldConfig cfg;
        cfg.sigma = 1e-9;
        ConceptWorld tiny = build_world(cfg);
        auto xs = sample_data(tiny, 2, 50, rng);
        for (const auto& x : xs) CHECK((x - tiny.mu[2]).norm() <= 1e-6);
    }
    SUBCASE("CLT mean bound") {
        auto xs = sample_data(w, 0, 10000, rng);
        Vec mean = Vec::Zero(2);
        for (const auto& x : xs) mean += x;
        mean /= double(xs.size());
        CHECK((mean - w.mu[0]).norm() <= 0.05);
    }
    SUBCASE("n = 0") { CHECK(sample_data(w, 0, 0, rng).empty()); }
    SUBCASE("out of range") { CHECK_THROWS_AS(sample_data(w, 16, 1, rng), std::out_of_range); }
}

TEST_CASE("analytic_eps centered input gives zero") {
    ConceptWorld w = default_world();
    DiffusionSchedule sched = make_linear_schedule(100, 1e-4, 0.02);
    for (int t : {1, 37, 100}) {
        Vec x = std::sqrt(sched.abar(t)) * w.mu[5];
        CHECK(analytic_eps(w, x, t, 5, sched).norm() <= 1e-12);
    }
}

TEST_CASE("analytic_eps single-component world: unconditional equals conditional") {
    // constructed directly; build_world requires K >= 2
    ConceptWorld w;
    w.cfg.concepts = 1;
    w.cfg.sigma = 0.3;
    w.cfg.data_dim = 2;
    w.mu = {Vec::Zero(2)};
    w.mu[0] << 1.5, -0.5;
    DiffusionSchedule sched = make_linear_schedule(50, 1e-3, 0.05);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        Vec x = rng.normal_vec(2) * 2.0;
        int t = 1 + rng.uniform_int(50);
        Vec cond = analytic_eps(w, x, t, 0, sched);
        Vec uncond = analytic_eps(w, x, t, std::nullopt, sched);
        CHECK((cond - uncond).norm() <= 1e-12);
    }
}

// brute-force oracle: kernel regression of eps on x_t from raw forward draws
TEST_CASE("analytic_eps matches Monte-Carlo MMSE regression") {
    ConceptWorld w = default_world();
    DiffusionSchedule sched = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(123);

    auto check_point = [&](int c, int t, const Vec& query) {
        const double ab = sched.abar(t);
        const double h = 0.05;
        const int N = 300000;
        Rng local = rng.fork(uint64_t(c * 1000 + t));
        Vec num = Vec::Zero(2);
        double den = 0.0, den2 = 0.0;
        std::vector<std::pair<double, Vec>> kept;
        for (int i = 0; i < N; ++i) {
            Vec x0 = w.mu[c] + w.cfg.sigma * local.normal_vec(2);
            Vec eps = local.normal_vec(2);
            Vec xt = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
            double wgt = std::exp(-(xt - query).squaredNorm() / (2.0 * h * h));
            if (wgt < 1e-8) continue;
            num += wgt * eps;
            den += wgt;
            den2 += wgt * wgt;
            kept.push_back({wgt, eps});
        }
        REQUIRE(den > 0.0);
        Vec est = num / den;
        Vec var = Vec::Zero(2);
        for (const auto& [wgt, eps] : kept) {
            Vec d = eps - est;
            var += wgt * d.cwiseProduct(d);
        }
        var /= den;
        double n_eff = den * den / den2;
        Vec analytic = analytic_eps(w, query, t, c, sched);
        for (int k = 0; k < 2; ++k) {
            double se = std::sqrt(var[k] / n_eff);
            CHECK(std::abs(analytic[k] - est[k]) <= 2.0 * se + 1e-3);
        }
    };

    // query points near the conditional mode at a few time steps
    check_point(0, 50, Vec(std::sqrt(sched.abar(50)) * w.mu[0] + 0.3 * Vec::Ones(2)));
    check_point(3, 20, Vec(std::sqrt(sched.abar(20)) * w.mu[3] - 0.2 * Vec::Ones(2)));
    check_point(8, 90, Vec(std::sqrt(sched.abar(90)) * w.mu[8] + 0.4 * Vec::Ones(2)));
}

TEST_CASE("score-oracle consistency: analytic predictor is empirically optimal") {
    ConceptWorld w = default_world();
    DiffusionSchedule sched = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(77);
    const int N = 10000;
    double loss_analytic = 0.0, loss_zero = 0.0, loss_pert1 = 0.0, loss_pert2 = 0.0;
    Vec delta1 = 0.1 * rng.normal_vec(2);
    Vec delta2 = 0.05 * rng.normal_vec(2);
    for (int i = 0; i < N; ++i) {
        int c = rng.uniform_int(w.cfg.concepts);
        int t = 1 + rng.uniform_int(100);
        Vec x0 = w.mu[c] + w.cfg.sigma * rng.normal_vec(2);
        Vec eps = rng.normal_vec(2);
        Vec xt = std::sqrt(sched.abar(t)) * x0 + std::sqrt(1.0 - sched.abar(t)) * eps;
        Vec f = analytic_eps(w, xt, t, c, sched);
        loss_analytic += (eps - f).squaredNorm();
        loss_zero += eps.squaredNorm();
        loss_pert1 += (eps - (f + delta1)).squaredNorm();
        loss_pert2 += (eps - (f + delta2)).squaredNorm();
    }
    CHECK(loss_analytic / N <= loss_zero / N + 1e-6);
    CHECK(loss_analytic / N <= loss_pert1 / N + 1e-6);
    CHECK(loss_analytic / N <= loss_pert2 / N + 1e-6);
}

TEST_CASE("classify_point") {
    ConceptWorld w = default_world();

    SUBCASE("at the mean") {
        auto cls = classify_point(w, w.mu[3]);
        REQUIRE(cls.concept_index.has_value());
        CHECK(*cls.concept_index == 3);
        CHECK(cls.posterior[3] >= 0.999);
    }
    SUBCASE("abstains far from every mean") {
        Vec far = Vec::Zero(2); // circle center: equidistant and far from every mean
        double min_mahal = 1e300;
        for (const auto& m : w.mu) min_mahal = std::min(min_mahal, (far - m).norm() / w.cfg.sigma);
        REQUIRE(min_mahal > w.cfg.abstain_radius);
        CHECK_FALSE(classify_point(w, far).concept_index.has_value());
    }
    SUBCASE("oracle samples classified correctly") {
        Rng rng(5);
        auto xs = sample_data(w, 5, 1000, rng);
        int hits = 0;
        for (const auto& x : xs) {
            auto cls = classify_point(w, x);
            if (cls.concept_index && *cls.concept_index == 5) ++hits;
        }
        CHECK(hits >= 990);
    }
    SUBCASE("classifier exactness over all concepts") {
        Rng rng(6);
        for (int c = 0; c < w.cfg.concepts; ++c) {
            auto xs = sample_data(w, c, 10000, rng);
            int hits = 0;
            for (const auto& x : xs) {
                auto cls = classify_point(w, x);
                if (cls.concept_index && *cls.concept_index == c) ++hits;
            }
            CHECK(double(hits) / 10000.0 >= 0.99);
        }
    }
}

TEST_CASE("render_prompt") {
    ConceptWorld w = default_world();

    SUBCASE("substitution and padding") {
        // template 1 is {t0, slot}
        Prompt p = render_prompt(w, 1, {7});
        REQUIRE(int(p.ids.size()) == w.cfg.prompt_len);
        CHECK(p.ids[1] == 7);
        CHECK(p.ids[2] == w.pad_token);
        CHECK(p.ids[3] == w.pad_token);
    }
    SUBCASE("prepend occupies position 0") {
        int trg = w.trigger_pool[0];
        Prompt p = render_prompt(w, 1, {w.concept_tokens[0]}, {trg});
        CHECK(p.ids[0] == trg);
    }
    SUBCASE("pad tokens only as suffix") {
        for (int tid = 0; tid < int(w.templates.items.size()); ++tid) {
            Prompt p = render_prompt(w, tid, {w.concept_tokens[1]});
            bool seen_pad = false;
            for (int tok : p.ids) {
                if (tok == w.pad_token) seen_pad = true;
                else CHECK_FALSE(seen_pad);
            }
        }
    }
    SUBCASE("empty prompt layout") {
        Prompt p = empty_prompt(w);
        CHECK(p.ids[0] == w.empty_token);
        for (int i = 1; i < w.cfg.prompt_len; ++i) CHECK(p.ids[i] == w.pad_token);
    }
    SUBCASE("errors") {
        CHECK_THROWS(render_prompt(w, 999, {1}));
        CHECK_THROWS(render_prompt(w, 0, {}));
    }
}

TEST_CASE("evaluation templates disjoint from training templates") {
    ConceptWorld w = default_world();
    auto train = w.templates.training_ids();
    auto eval = w.templates.eval_ids();
    CHECK(!train.empty());
    CHECK(!eval.empty());
    for (int a : train)
        for (int b : eval) CHECK(w.templates.items[a].pattern != w.templates.items[b].pattern);
}
