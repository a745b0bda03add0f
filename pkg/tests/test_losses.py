import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calipso.anchors import EquivalenceClasses
from calipso.losses import (
    LossConfig,
    binary_cross_entropy,
    class_reference,
    embedding_loss,
    pull_loss,
    push_loss,
    push_weights,
    target_presence_loss,
    total_loss,
    usual_targets_from_scenes,
    verb_loss,
)
from conftest import random_classes


def one_class(members, interacting=False):
    return EquivalenceClasses(0, (np.asarray(members),), ((0,),), np.array([interacting]))


def two_classes():
    return EquivalenceClasses(0, (np.array([0]), np.array([1])), ((0,), (1,)), np.array([False, False]))


def test_class_reference():
    e = np.array([[1.0, 2.0], [0.0, 0.0], [2.0, 4.0]])
    np.testing.assert_array_equal(class_reference(e, [0]), [1, 2])
    np.testing.assert_array_equal(class_reference(e, [1, 2]), [1, 2])
    assert class_reference(np.array([[0.0], [3.0], [9.0]]), [0, 1, 2])[0] == 4.0
    with pytest.raises(ValueError):
        class_reference(e, [])


def test_pull_hand_values():
    e = np.array([[0.0], [2.0]])
    cfg = LossConfig()
    assert pull_loss(one_class([0, 1]), e, cfg) == pytest.approx(1.0, abs=1e-12)
    assert pull_loss(one_class([0, 1], True), e, cfg) == pytest.approx(10.0, abs=1e-12)
    assert pull_loss(one_class([0, 1]), np.ones((2, 3)), cfg) == 0.0


def test_push_hand_values():
    e = np.zeros((2, 2))
    labels = np.array([1, 1])
    assert push_loss(two_classes(), e, labels, LossConfig()) == pytest.approx(0.5, abs=1e-12)
    cfg = LossConfig(usual_targets={0: frozenset({1})})
    assert push_loss(two_classes(), e, labels, cfg) == pytest.approx(50.0, abs=1e-12)
    far = np.array([[0.0, 0.0], [100.0, 0.0]])
    assert push_loss(two_classes(), far, labels, LossConfig()) < 1e-100
    assert push_loss(one_class([0, 1]), e, labels, LossConfig()) == 0.0
    halved = LossConfig(halve_push=True)
    assert push_loss(two_classes(), e, labels, halved) == pytest.approx(0.25, abs=1e-12)


def test_push_weight_needs_both_classes_usual():
    cfg = LossConfig(usual_targets={0: frozenset({1})})
    w = push_weights(two_classes(), np.array([1, 2]), cfg)
    np.testing.assert_array_equal(w, [[0, 1], [1, 0]])


def test_bce_closed_forms():
    assert binary_cross_entropy(0.5, 1.0) == pytest.approx(math.log(2))
    assert verb_loss(np.full((3, 12), 0.5), np.zeros((3, 12))) == pytest.approx(math.log(2))
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert verb_loss(y, y) < 1e-6
    assert np.isfinite(binary_cross_entropy(0.0, 1.0))
    assert verb_loss(np.zeros((0, 4)), np.zeros((0, 4))) == 0.0
    assert target_presence_loss(y, y, mask=np.array([True, False])) < 1e-6


def test_total_loss():
    assert total_loss(0, 0, [0, 0], 2) == 0
    assert total_loss(1, 2, [3, 5], 2) == 7
    assert total_loss(0.5, 0.25, [6], 1) == 6.75
    with pytest.raises(FloatingPointError):
        total_loss(float("nan"), 0, [0], 1)
    with pytest.raises(FloatingPointError):
        total_loss(0, 0, [float("inf")], 1)


def test_config_invariants():
    for kw in ({"sigma": 0}, {"lambda_pull": 0.5}, {"gamma_push": 0.9}):
        with pytest.raises(ValueError):
            LossConfig(**kw)


def random_instance(rng):
    cls, n = random_classes(rng, max_classes=5, max_size=4)
    T = int(rng.integers(1, 5))
    emb = rng.normal(0.0, 1.5, size=(n, T))
    labels = rng.integers(0, 4, size=n)
    cfg = LossConfig(usual_targets={0: frozenset({1, 2})}, halve_push=bool(rng.random() < 0.3))
    return cls, emb, labels, cfg


def numeric_grad(f, x, h=1e-4):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_gradients(n_instances=50, seed=0):
    """Max relative error of analytic vs central-difference gradients over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        cls, emb, labels, cfg = random_instance(rng)
        _, g_pull = pull_loss(cls, emb, cfg, with_grad=True)
        _, g_push = push_loss(cls, emb, labels, cfg, with_grad=True)
        n_pull = numeric_grad(lambda x: pull_loss(cls, x, cfg), emb)
        n_push = numeric_grad(lambda x: push_loss(cls, x, labels, cfg), emb)
        for a, n in ((g_pull, n_pull), (g_push, n_push)):
            # relative to the gradient scale; coordinates with vanishing gradient are compared absolutely
            denom = max(np.max(np.abs(n)), 1e-8)
            worst = max(worst, float(np.max(np.abs(a - n)) / denom))
    return worst


def test_gradients_match_finite_differences():
    assert check_gradients() < 1e-4


def test_combined_gradient_is_sum():
    rng = np.random.default_rng(5)
    cls, emb, labels, cfg = random_instance(rng)
    pl, ps, g = embedding_loss(cls, emb, labels, cfg, with_grad=True)
    assert pl == pytest.approx(pull_loss(cls, emb, cfg))
    assert ps == pytest.approx(push_loss(cls, emb, labels, cfg))
    np.testing.assert_allclose(g, pull_loss(cls, emb, cfg, True)[1] + push_loss(cls, emb, labels, cfg, True)[1])


def max_translation_change(n_instances=100, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        cls, emb, labels, cfg = random_instance(rng)
        shift = rng.normal(0.0, 5.0, size=emb.shape[1])
        for f in (lambda x: pull_loss(cls, x, cfg), lambda x: push_loss(cls, x, labels, cfg)):
            worst = max(worst, abs(f(emb + shift) - f(emb)))
    return worst


def test_translation_invariance():
    assert max_translation_change() <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pull_zero_iff_classes_collapsed(seed):
    rng = np.random.default_rng(seed)
    cls, emb, _, cfg = random_instance(rng)
    collapsed = emb.copy()
    for m in cls.members:
        collapsed[m] = emb[m[0]]
    # mean of identical floats can be off by one ulp
    assert pull_loss(cls, collapsed, cfg) < 1e-25
    spread = any(len(m) > 1 and np.ptp(emb[m], axis=0).max() > 0 for m in cls.members)
    assert (pull_loss(cls, emb, cfg) > 1e-25) == spread


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 5.0))
def test_push_monotone_in_reference_distance(seed, factor):
    rng = np.random.default_rng(seed)
    cls, emb, labels, cfg = random_instance(rng)
    if cls.E < 2:
        return
    # move class 0 away from class 1 along their reference difference
    r0 = class_reference(emb, cls.members[0])
    r1 = class_reference(emb, cls.members[1])
    moved = emb.copy()
    moved[cls.members[0]] += (factor - 1.0) * (r0 - r1)
    sub = EquivalenceClasses(0, cls.members[:2], cls.boxes[:2], cls.interacting[:2])
    assert push_loss(sub, moved, labels, cfg) <= push_loss(sub, emb, labels, cfg) + 1e-15


def test_weight_scaling_is_linear():
    rng = np.random.default_rng(2)
    for _ in range(20):
        cls, emb, labels, _ = random_instance(rng)
        base = LossConfig(lambda_pull=1.0, gamma_push=1.0, usual_targets={0: frozenset({1, 2})})
        inter = [m for m, f in zip(cls.members, cls.interacting) if f]
        non = pull_loss(cls, emb, base) - sum(len(m) and np.sum((emb[m] - emb[m].mean(0)) ** 2) / (len(m) * cls.E)
                                              for m in inter)
        for lam in (2.0, 10.0):
            cfg = LossConfig(lambda_pull=lam, gamma_push=1.0, usual_targets=base.usual_targets)
            assert pull_loss(cls, emb, cfg) == pytest.approx(non + lam * (pull_loss(cls, emb, base) - non), rel=1e-12, abs=1e-12)
        w = push_weights(cls, labels, base)
        assert np.all(w[~np.eye(cls.E, dtype=bool)] == 1.0)
        w100 = push_weights(cls, labels, LossConfig(gamma_push=100.0, usual_targets=base.usual_targets))
        assert set(np.unique(w100[~np.eye(cls.E, dtype=bool)])) <= {1.0, 100.0}


def test_usual_targets_from_scenes():
    from calipso.types import Box, InteractionTriplet
    from conftest import make_scene

    s = make_scene([Box(0, 0, 5, 10, 0), Box(6, 0, 9, 3, 2), Box(10, 0, 13, 3, 3)],
                   [InteractionTriplet(0, 0, 1), InteractionTriplet(0, 1, None)])
    assert usual_targets_from_scenes([s], 3) == {0: frozenset({2}), 1: frozenset(), 2: frozenset()}
