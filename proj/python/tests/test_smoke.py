"""Smoke tests for the python bindings: a miniature end-to-end pass."""

import math

import numpy as np
import pytest

import elab


@pytest.fixture(scope="module")
def world():
    cfg = elab.WorldConfig()
    cfg.concepts = 4
    cfg.radius = 1.5
    return elab.build_world(cfg)


@pytest.fixture(scope="module")
def schedule():
    return elab.make_linear_schedule(50, 1e-3, 0.1)


@pytest.fixture(scope="module")
def base(world, schedule):
    tcfg = elab.TrainConfig()
    tcfg.steps = 300
    tcfg.batch = 32
    tcfg.val_draws = 100
    return elab.train_base(world, schedule, tcfg, elab.Rng(0))


def test_world_roundtrip(world):
    assert len(world.mu) == 4
    back = elab.ConceptWorld.from_json(world.to_json())
    assert back.hash() == world.hash()


def test_classify_and_sample(world):
    rng = elab.Rng(1)
    xs = elab.sample_data(world, 2, 100, rng)
    hits = 0
    for x in xs:
        idx, post = elab.classify_point(world, np.asarray(x))
        if idx == 2:
            hits += 1
    assert hits >= 95


def test_analytic_eps_zero_at_center(world, schedule):
    x = math.sqrt(schedule.abar(10)) * np.asarray(world.mu[1])
    eps = elab.analytic_eps(world, x, 10, 1, schedule)
    assert np.linalg.norm(eps) < 1e-12


def test_train_and_sample(base, world, schedule):
    scfg = elab.SamplerConfig()
    scfg.steps = 10
    prompt = elab.render_prompt(world, 1, [world.concept_tokens[0]])
    rng = elab.Rng(2)
    x0 = elab.ddim_sample(base.snapshot, schedule, world, prompt, scfg, rng)
    assert np.all(np.isfinite(x0))
    att = elab.attention_map(base.snapshot, np.zeros(2), 10,
                             elab.encode_prompt(base.snapshot, prompt))
    assert abs(att.sum() - 1.0) < 1e-9


def test_attack_and_erase_flow(base, world, schedule):
    acfg = elab.AttackConfig()
    acfg.kind = elab.AttackKind.Disa
    acfg.trigger = [world.trigger_pool[0]]
    acfg.target = world.target_pool[0]
    acfg.retention = world.retention_pool
    acfg.steps = 30
    acfg.latent_sampler.steps = 6
    poisoned = elab.attack_disa(world, schedule, base.snapshot, acfg, elab.Rng(3))
    assert poisoned.snapshot.prov.kind == "poisoned"
    assert len(poisoned.log) == 30

    ecfg = elab.ErasureConfig()
    ecfg.method = elab.ErasureMethod.UCE
    ecfg.targets = [acfg.target]
    ecfg.retention = world.retention_pool
    erased = elab.erase_uce(world, poisoned.snapshot, ecfg)
    assert erased.snapshot.prov.kind == "erased"
    assert len(erased.checkpoints) == 1

    vcfg = elab.EvalConfig()
    vcfg.samples_per_category = 8
    vcfg.frechet_samples = 8
    vcfg.sampler.steps = 6
    vcfg.trigger = acfg.trigger
    vcfg.target = acfg.target
    vcfg.retention = world.retention_pool
    vcfg.heldout = world.heldout_pool
    rep = elab.accuracy_suite(world, schedule, erased.snapshot, vcfg, elab.Rng(4))
    assert 0.0 <= rep.acc_e <= 1.0
    assert rep.frechet >= 0.0


def test_roc_auc_and_frechet():
    assert elab.roc_auc([(0.9, 1), (0.1, 0)]) == 1.0
    rng = np.random.default_rng(0)
    a = [rng.normal(size=2) for _ in range(50)]
    assert elab.frechet_score(a, a) < 1e-9


def test_pipeline(tmp_path):
    config = """{
      "seed": 0,
      "world": {"concepts": 4, "radius": 1.5},
      "schedule": {"T": 50, "beta_start": 1e-3, "beta_end": 0.1},
      "train": {"steps": 150, "batch": 16, "val_draws": 64},
      "sampler": {"steps": 6},
      "eval": {"samples_per_category": 8, "frechet_samples": 8},
      "attacks": ["xattn"],
      "erasures": ["uce"],
      "grid": {"triggers": [[20]], "targets": [0]}
    }"""
    rc = elab.run_pipeline(config, str(tmp_path / "out"))
    assert rc == 0
    assert (tmp_path / "out" / "results.csv").exists()
    assert (tmp_path / "out" / "manifest.json").exists()
