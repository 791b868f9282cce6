#include "elab/eval.hpp"
#include "elab/train.hpp"

#include <doctest.h>

#include <cmath>

using namespace elab;

namespace {

struct Fixture {
    ConceptWorld world;
    DiffusionSchedule sched;
    ModelSnapshot base;

    Fixture() {
        WorldConfig wcfg;
        wcfg.concepts = 8;
        wcfg.radius = 2.5;
        world = build_world(wcfg);
        sched = make_linear_schedule(50, 1e-3, 0.1);
        TrainConfig tcfg;
        tcfg.steps = 150;
        tcfg.batch = 32;
        tcfg.val_draws = 50;
        Rng rng(1);
        base = train_base(world, sched, tcfg, rng).snapshot;
    }

    EvalConfig config() const {
        EvalConfig cfg;
        cfg.samples_per_category = 24;
        cfg.frechet_samples = 24;
        cfg.sampler.steps = 10;
        cfg.trigger = {world.trigger_pool[0]};
        cfg.target = world.target_pool[0];
        cfg.retention = world.retention_pool;
        cfg.heldout = world.heldout_pool;
        return cfg;
    }
};

Fixture& fix() {
    static Fixture f;
    return f;
}

} // namespace

TEST_CASE("frechet score") {
    Rng rng(2);

    SUBCASE("identical sample sets give zero") {
        std::vector<Vec> a;
        for (int i = 0; i < 40; ++i) a.push_back(rng.normal_vec(2));
        CHECK(frechet_score(a, a) <= 1e-9);
    }
    SUBCASE("closed-form 1-D value") {
        // fits N(0,1) vs N(1,4): 1 + (1 + 4 - 2*2) = 2. Two-point sets
        // {m-s, m+s} carry exactly the requested sample moments once s is
        // corrected for the unbiased variance divisor.
        std::vector<Vec> a, b;
        int n = 2000;
        double ca = std::sqrt(double(n - 1) / n), cb = 2.0 * std::sqrt(double(n - 1) / n);
        for (int i = 0; i < n / 2; ++i) {
            Vec v(1);
            v[0] = ca;
            a.push_back(v);
            v[0] = -ca;
            a.push_back(v);
            v[0] = 1.0 + cb;
            b.push_back(v);
            v[0] = 1.0 - cb;
            b.push_back(v);
        }
        CHECK(frechet_score(a, b) == doctest::Approx(2.0).epsilon(1e-9));
    }
    SUBCASE("symmetry") {
        std::vector<Vec> a, b;
        for (int i = 0; i < 50; ++i) {
            a.push_back(rng.normal_vec(3));
            b.push_back(rng.normal_vec(3) * 1.5 + Vec::Ones(3));
        }
        CHECK(std::abs(frechet_score(a, b) - frechet_score(b, a)) <= 1e-9);
        CHECK(frechet_score(a, b) >= 0.0);
    }
    SUBCASE("errors") {
        std::vector<Vec> tiny = {Vec::Zero(2), Vec::Ones(2)};
        CHECK_THROWS(frechet_score(tiny, tiny)); // fewer than d+1 samples
        std::vector<Vec> degen(10, Vec::Zero(2));
        CHECK_THROWS(frechet_score(degen, degen)); // zero covariance
    }
}

TEST_CASE("roc_auc") {
    SUBCASE("perfect separation") {
        std::vector<std::pair<double, int>> s = {{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
        CHECK(roc_auc(s) == 1.0);
    }
    SUBCASE("all scores equal gives exactly one half") {
        std::vector<std::pair<double, int>> s = {{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}};
        CHECK(roc_auc(s) == 0.5);
    }
    SUBCASE("single class input throws") {
        std::vector<std::pair<double, int>> s = {{0.5, 1}, {0.7, 1}};
        CHECK_THROWS_AS(roc_auc(s), std::invalid_argument);
    }
    SUBCASE("monotone transformations leave the value unchanged") {
        Rng rng(3);
        std::vector<std::pair<double, int>> s, t;
        for (int i = 0; i < 200; ++i) {
            double v = rng.normal();
            int y = rng.uniform() < 0.4 ? 1 : 0;
            s.push_back({v, y});
            t.push_back({std::exp(2.0 * v) + 5.0, y});
        }
        CHECK(roc_auc(s) == roc_auc(t));
    }
    SUBCASE("labels independent of scores concentrate near one half") {
        Rng rng(4);
        double total = 0.0;
        int trials = 20;
        for (int k = 0; k < trials; ++k) {
            std::vector<std::pair<double, int>> s;
            for (int i = 0; i < 500; ++i) s.push_back({rng.normal(), i % 2});
            total += roc_auc(s);
        }
        CHECK(std::abs(total / trials - 0.5) <= 0.05);
    }
}

TEST_CASE("accuracy estimator is unbiased on oracle samples") {
    auto& f = fix();
    Rng rng(5);
    for (int c : {0, 3, 7}) {
        auto xs = sample_data(f.world, c, 10000, rng);
        int hits = 0;
        for (const auto& x : xs) {
            auto cls = classify_point(f.world, x);
            if (cls.concept_index && *cls.concept_index == c) ++hits;
        }
        CHECK(double(hits) / 10000.0 >= 0.99);
    }
}

TEST_CASE("accuracy_suite reproducibility and counts") {
    auto& f = fix();
    EvalConfig cfg = f.config();
    Rng a(6), b(6);
    EvalReport r1 = accuracy_suite(f.world, f.sched, f.base, cfg, a);
    EvalReport r2 = accuracy_suite(f.world, f.sched, f.base, cfg, b);
    CHECK(r1.acc_e == r2.acc_e);
    CHECK(r1.acc_dagger == r2.acc_dagger);
    CHECK(r1.acc_r == r2.acc_r);
    CHECK(r1.acc_o == r2.acc_o);
    CHECK(r1.frechet == r2.frechet);
    CHECK(r1.n_e == cfg.samples_per_category);
    CHECK(r1.n_dagger == cfg.samples_per_category);
    CHECK(r1.snapshot_hash == f.base.hash());
}

TEST_CASE("exposure_count") {
    auto& f = fix();

    SUBCASE("empty prompt set gives zero") {
        Rng rng(7);
        CHECK(exposure_count(f.world, f.sched, f.base, {}, {0, 1}, SamplerConfig{}, rng) == 0);
    }
    SUBCASE("counts in-region samples") {
        Rng rng(8);
        std::vector<Prompt> prompts;
        auto eval_ids = f.world.templates.eval_ids();
        for (int i = 0; i < 16; ++i)
            prompts.push_back(render_prompt(f.world, eval_ids[i % eval_ids.size()],
                                            {f.world.concept_tokens[0]}));
        long n = exposure_count(f.world, f.sched, f.base, prompts, {0}, SamplerConfig{}, rng);
        CHECK(n >= 0);
        CHECK(n <= 16);
    }
}

TEST_CASE("anomaly_score basics") {
    auto& f = fix();
    EvalConfig cfg = f.config();
    Prompt p = render_prompt(f.world, 1, {f.world.concept_tokens[2]});

    SUBCASE("deterministic given the seed") {
        Rng a(9), b(9);
        CHECK(anomaly_score(f.world, f.sched, f.base, p, cfg, a) ==
              anomaly_score(f.world, f.sched, f.base, p, cfg, b));
    }
    SUBCASE("bounded statistic") {
        Rng rng(10);
        double s = anomaly_score(f.world, f.sched, f.base, p, cfg, rng);
        CHECK(s > 0.0);
        CHECK(s <= 1.0);
    }
    SUBCASE("uniform-attention degenerate model scores 1/L") {
        ModelSnapshot degen = f.base;
        degen.den.xattn_Wq.setZero(); // scores identical for every token
        Rng rng(11);
        double s = anomaly_score(f.world, f.sched, degen, p, cfg, rng);
        CHECK(s == doctest::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("trajectory_eval") {
    auto& f = fix();
    EvalConfig cfg = f.config();
    cfg.samples_per_category = 8;
    cfg.frechet_samples = 8;

    auto make_ck = [&](int iter) {
        Checkpoint ck;
        ck.iteration = iter;
        ck.snapshot = f.base;
        ck.snapshot.prov.kind = "erased";
        ck.snapshot.prov.method = "esd";
        ck.snapshot.prov.iteration = iter;
        ck.snapshot.prov.parent_hash = "p";
        ck.snapshot.prov.world_hash = "w";
        return ck;
    };

    SUBCASE("single checkpoint gives a single row") {
        Rng rng(12);
        TrajectoryRecord rec = trajectory_eval(f.world, f.sched, {make_ck(3)}, cfg, rng);
        REQUIRE(rec.iterations.size() == 1);
        CHECK(rec.iterations[0] == 3);
    }
    SUBCASE("iteration indices must increase") {
        Rng rng(13);
        CHECK_THROWS_AS(trajectory_eval(f.world, f.sched, {make_ck(3), make_ck(3)}, cfg, rng),
                        std::invalid_argument);
    }
    SUBCASE("mixed chains rejected") {
        Rng rng(14);
        auto a = make_ck(1);
        auto b = make_ck(2);
        b.snapshot.prov.parent_hash = "other";
        CHECK_THROWS_AS(trajectory_eval(f.world, f.sched, {a, b}, cfg, rng),
                        std::invalid_argument);
    }
}

TEST_CASE("csv round trip") {
    CsvRow row;
    row.run_id = "s0-pois-disa-t0-g20";
    row.phase = "poisoned";
    row.attack = "disa";
    row.trigger = "20";
    row.target = 0;
    row.iteration = -1;
    row.rep.acc_r = 0.875;
    row.rep.acc_o = 0.9;
    row.rep.acc_e = 0.85;
    row.rep.acc_dagger = 0.7;
    row.rep.frechet = 0.0123;
    row.rep.exposure_e = 17;
    row.rep.exposure_dagger = 55;
    row.rep.auc = 0.91;
    row.rep.seed = 7;

    std::string text = csv_header() + "\n" + csv_line(row) + "\n";
    auto rows = csv_parse(text);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].run_id == row.run_id);
    CHECK(rows[0].rep.exposure_dagger == 55);
    CHECK(rows[0].rep.auc == doctest::Approx(0.91));
    CHECK(rows[0].rep.seed == 7);

    CHECK_THROWS(csv_parse("bad,header\n1,2\n"));
}
