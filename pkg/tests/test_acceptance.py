"""Acceptance suite. Each test prints one ``[PASS]``/``[FAIL]`` line for its criterion.

Criteria 4 to 6 train or time real models and take a while (about 35 minutes in
total on one CPU core). Run just this file with ``pytest tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest
import torch

from calipso.anchors import build_equivalence_classes
from calipso.evaluation import (
    ABLATION_VARIANTS,
    DEFAULT_PAIR_SWEEP,
    PairNet,
    ap_role,
    benchmark_complexity,
    evaluate_model,
    run_ablation,
)
from calipso.inference import connection_score, pair_score, triplet_score
from calipso.network import CalipsoNet, NetworkConfig
from calipso.synthetic import DEFAULT_VOCABULARY, SceneGenConfig, generate_dataset
from calipso.training import TrainConfig, train
from calipso.types import InteractionTriplet, ScoredTriplet
from conftest import make_scene
from test_anchors import VOCAB2, _assignment, _partition, brute_force_closure, random_equivalence_instance
from test_evaluation import CUP, FAR, H, max_oracle_gap
from test_losses import check_gradients, max_translation_change

TRAIN_SIZE, TEST_SIZE = 2000, 300
TRAIN_SEED, TEST_SEED = 1, 2
E2E_STEPS = 2000
ABLATION_STEPS = 1000
ABLATION_SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}", flush=True)
        return ok

    return emit


@pytest.fixture(scope="module")
def data():
    cfg = SceneGenConfig()
    return generate_dataset(cfg, TRAIN_SIZE, seed=TRAIN_SEED), generate_dataset(cfg, TEST_SIZE, seed=TEST_SEED)


def test_c1_loss_gradients(report):
    t = time.perf_counter()
    err = check_gradients(n_instances=50)
    dt = time.perf_counter() - t
    ok = err < 1e-4 and dt < 60
    assert report(1, ok, f"pull/push gradients vs central differences on 50 instances: "
                         f"max rel err {err:.2e} (< 1e-4), {dt:.1f}s (< 60s)")


def test_c2_closed_form_scores(report):
    cases = [
        (connection_score(np.array([0.0]), np.array([1.0])), math.exp(-1), 0.3679),
        (triplet_score(0.9, 0.8, 0.7, 0.6, 0.5, 0.4), 0.06048 ** (1 / 6), 0.6265),
        (pair_score(0.9, 0.8, 0.5), 0.36 ** (1 / 3), 0.7114),
        (connection_score(np.zeros(4), np.zeros(4)), 1.0, None),
        (triplet_score(1, 1, 1, 1, 1, 1), 1.0, None),
        (triplet_score(0.9, 0.8, 0.0, 0.6, 0.5, 0.4), 0.0, None),
        (pair_score(1, 1, 0), 1.0, None),
        (pair_score(0.9, 0.8, 1.0), 0.0, None),
    ]
    gap = max(abs(got - want) for got, want, _ in cases)
    rounded = all(r is None or round(got, 4) == r for got, _, r in cases)
    ok = gap <= 1e-12 and rounded
    assert report(2, ok, f"connection/triplet/pair scores 0.3679/0.6265/0.7114 plus identity and "
                         f"annihilator cases: max gap {gap:.1e} (<= 1e-12)")


def test_c3_equivalence_classes(report):
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(200):
        box_of, n_boxes, triplets = random_equivalence_instance(rng, max_anchors=20)
        classes = build_equivalence_classes(_assignment(box_of, n_boxes), triplets, VOCAB2)
        for v in range(VOCAB2.V):
            mismatches += _partition(classes[v]) != brute_force_closure(box_of.tolist(), triplets, v)
    assert report(3, mismatches == 0, f"union-find vs brute-force closure on 200 scenes: {mismatches} mismatches")


def test_c4_constant_complexity(report):
    torch.manual_seed(0)
    model = CalipsoNet(NetworkConfig(V=DEFAULT_VOCABULARY.V)).eval()
    baseline = PairNet(DEFAULT_VOCABULARY.V).eval()
    t = time.perf_counter()
    recs = benchmark_complexity(model, baseline, DEFAULT_VOCABULARY, DEFAULT_PAIR_SWEEP)
    dt = time.perf_counter() - t

    P = np.array([r.P for r in recs], dtype=float)
    assert P.min() == 1 and P.max() == 64
    ops_same = len({r.calipso_ops for r in recs}) == 1
    secs = np.array([r.calipso_seconds for r in recs])
    spread = float(np.max(np.abs(secs / np.median(secs) - 1)))
    base_ops = np.array([r.baseline_ops for r in recs], dtype=float)
    slope, icpt = np.polyfit(P, base_ops, 1)
    lin_dev = float(np.max(np.abs(base_ops - (slope * P + icpt)) / base_ops))
    ok = ops_same and spread <= 0.2 and lin_dev <= 0.1 and slope > 0 and dt < 600
    assert report(4, ok, f"P in 1..64: single-shot ops identical={ops_same}, wall time spread "
                         f"{spread:.1%} (<= 20%), baseline ops deviation from linear {lin_dev:.1%} (<= 10%), "
                         f"sweep {dt:.0f}s (< 600s)")


def test_c5_end_to_end(report, data):
    train_scenes, test_scenes = data
    t = time.perf_counter()
    res = train(train_scenes, DEFAULT_VOCABULARY, NetworkConfig(V=DEFAULT_VOCABULARY.V),
                TrainConfig(steps=E2E_STEPS, log_every=0), seed=0)
    dt = time.perf_counter() - t
    ap = evaluate_model(res.model, test_scenes, DEFAULT_VOCABULARY)[0]
    ok = ap.mean >= 0.70 and dt <= 1800
    verbs = ", ".join(f"{DEFAULT_VOCABULARY.verbs[v].name} {a:.2f}" for v, a in sorted(ap.per_verb.items()))
    assert report(5, ok, f"held-out mean AP_role {ap.mean:.3f} (>= 0.70) after {dt / 60:.1f} min "
                         f"of training (<= 30) [{verbs}]")


def test_c6_ablation_directions(report, data):
    train_scenes, test_scenes = data
    variants = {k: ABLATION_VARIANTS[k] for k in ("full", "no-target-presence", "no-passive")}
    rows = run_ablation(variants, train_scenes, test_scenes, DEFAULT_VOCABULARY, seeds=ABLATION_SEEDS,
                        train_config=TrainConfig(steps=ABLATION_STEPS, log_every=0))
    mean = {r.variant: r.mean for r in rows}
    d_target = mean["full"] - mean["no-target-presence"]
    d_passive = mean["full"] - mean["no-passive"]
    ok = d_target > 0 and d_passive > 0
    assert report(6, ok, f"seed-averaged mean AP_role full {mean['full']:.3f}, no target presence "
                         f"{mean['no-target-presence']:.3f} (drop {d_target:+.3f}), no passive "
                         f"{mean['no-passive']:.3f} (drop {d_passive:+.3f}); both drops > 0")


def test_c7_ap_oracle(report):
    gap, checked = max_oracle_gap(n=100)
    scene = make_scene([H, CUP, FAR], [InteractionTriplet(0, 0, 1)])
    hand = ap_role([[ScoredTriplet(H, 0, CUP, 0.9), ScoredTriplet(H, 0, FAR, 0.95)]], [scene], 1).mean
    ok = gap < 1e-12 and checked == 100 and hand == 0.5
    assert report(7, ok, f"AP vs exhaustive enumeration on {checked} tiny instances: max gap {gap:.1e}; "
                         f"hand case AP {hand}")


def test_c8_translation_invariance(report):
    worst = max_translation_change(n_instances=100)
    assert report(8, worst <= 1e-9, f"pull/push losses under a constant embedding shift, 100 instances: "
                                    f"max change {worst:.1e} (<= 1e-9)")
