"""Task losses: multi-label verb BCE, target-presence BCE and the per-verb pull/push embedding loss.

The embedding terms return analytic gradients alongside their values so the
training loop can back-propagate through them without re-deriving the math.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .anchors import EquivalenceClasses
from .types import DenseOutputs, Scene

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    sigma: float = 2.0
    lambda_pull: float = 10.0
    gamma_push: float = 100.0
    # verb id -> object classes seen as targets of that verb in training data
    usual_targets: Mapping[int, frozenset] = field(default_factory=dict)
    # sum push over unordered pairs instead of ordered ones
    halve_push: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.lambda_pull < 1:
            raise ValueError(f"lambda_pull must be >= 1, got {self.lambda_pull}")
        if self.gamma_push < 1:
            raise ValueError(f"gamma_push must be >= 1, got {self.gamma_push}")


@dataclass
class LossReport:
    verb_loss: float
    target_loss: float
    embedding_loss: float
    total: float
    pull: list[float] = field(default_factory=list)
    push: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"verb": self.verb_loss, "target": self.target_loss, "embedding": self.embedding_loss,
                "total": self.total, "pull": list(self.pull), "push": list(self.push)}


def usual_targets_from_scenes(scenes: Iterable[Scene], V: int) -> dict[int, frozenset]:
    """Object class c is a usual target of verb v iff c is the target of some v triplet."""
    seen: dict[int, set] = {v: set() for v in range(V)}
    for s in scenes:
        for t in s.triplets:
            if t.target_index is not None:
                seen[t.verb_id].add(s.boxes[t.target_index].class_id)
    return {v: frozenset(c) for v, c in seen.items()}


def class_reference(embeddings: np.ndarray, members: Sequence[int]) -> np.ndarray:
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("equivalence classes are never empty")
    return np.asarray(embeddings, dtype=np.float64)[members].mean(axis=0)


def pull_loss(
    classes: EquivalenceClasses,
    embeddings: np.ndarray,
    config: LossConfig,
    with_grad: bool = False,
):
    """Weighted mean within-class squared deviation from the class reference."""
    e = np.asarray(embeddings, dtype=np.float64)
    grad = np.zeros_like(e) if with_grad else None
    E = classes.E
    total = 0.0
    for i, m in enumerate(classes.members):
        lam = config.lambda_pull if classes.interacting[i] else 1.0
        w = lam / (len(m) * E)
        dev = e[m] - e[m].mean(axis=0)
        total += w * float(np.sum(dev * dev))
        if with_grad:
            # the reference's own derivative cancels since deviations sum to zero
            np.add.at(grad, m, 2.0 * w * dev)
    return (total, grad) if with_grad else total


def _usual_flags(classes: EquivalenceClasses, labels: np.ndarray, usual: frozenset) -> np.ndarray:
    if not usual:
        return np.zeros(classes.E, dtype=bool)
    labels = np.asarray(labels)
    return np.array([np.isin(labels[m], list(usual)).any() for m in classes.members], dtype=bool)


def push_weights(classes: EquivalenceClasses, labels: np.ndarray, config: LossConfig) -> np.ndarray:
    """``(E, E)`` weight matrix, ``gamma_push`` where both classes hold a usual-target object."""
    flags = _usual_flags(classes, labels, config.usual_targets.get(classes.verb_id, frozenset()))
    gam = np.where(flags[:, None] & flags[None, :], config.gamma_push, 1.0)
    np.fill_diagonal(gam, 0.0)
    return gam


def push_loss(
    classes: EquivalenceClasses,
    embeddings: np.ndarray,
    labels: np.ndarray,
    config: LossConfig,
    with_grad: bool = False,
):
    """Gaussian-kernel repulsion between class references, over ordered pairs ``i != j``."""
    e = np.asarray(embeddings, dtype=np.float64)
    E = classes.E
    grad = np.zeros_like(e) if with_grad else None
    if E < 2:
        return (0.0, grad) if with_grad else 0.0
    refs = np.stack([e[m].mean(axis=0) for m in classes.members])  # (E, T)
    diff = refs[:, None, :] - refs[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    gam = push_weights(classes, labels, config)
    scale = (0.5 if config.halve_push else 1.0) / E**2
    kern = gam * np.exp(-sq / (2.0 * config.sigma**2))
    total = scale * float(kern.sum())
    if with_grad:
        # d/dref_i of sum_{ij} k_ij + k_ji; kern is symmetric because gam is
        coef = kern + kern.T
        d_ref = -scale / config.sigma**2 * np.einsum("ij,ijt->it", coef, diff)
        for i, m in enumerate(classes.members):
            np.add.at(grad, m, d_ref[i] / len(m))
    return (total, grad) if with_grad else total


def embedding_loss(
    classes: EquivalenceClasses,
    embeddings: np.ndarray,
    labels: np.ndarray,
    config: LossConfig,
    with_grad: bool = False,
):
    """Pull + push for one verb; returns ``(pull, push)`` values and, if asked, the summed gradient."""
    if classes.E == 0:
        z = np.zeros_like(np.asarray(embeddings, dtype=np.float64))
        return (0.0, 0.0, z) if with_grad else (0.0, 0.0)
    if with_grad:
        pl, gpl = pull_loss(classes, embeddings, config, with_grad=True)
        ps, gps = push_loss(classes, embeddings, labels, config, with_grad=True)
        return pl, ps, gpl + gps
    return pull_loss(classes, embeddings, config), push_loss(classes, embeddings, labels, config)


def binary_cross_entropy(p: np.ndarray, y: np.ndarray, eps: float = BCE_EPS) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def _masked_bce(scores, labels, mask, what: str) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        scores, labels = scores[mask], labels[mask]
    if scores.size == 0:
        log.warning("%s: no labeled anchors, loss is 0", what)
        return 0.0
    return float(binary_cross_entropy(scores, labels).mean())


def verb_loss(
    dense: Union[DenseOutputs, np.ndarray],
    labels: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> float:
    """Mean BCE over the verb channels of the labeled anchors (``mask`` selects rows)."""
    scores = dense.flat_verb_scores() if isinstance(dense, DenseOutputs) else dense
    return _masked_bce(scores, labels, mask, "verb_loss")


def target_presence_loss(
    dense: Union[DenseOutputs, np.ndarray],
    labels: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> float:
    """Mean BCE over the 2V target channels of the labeled (human) anchors."""
    scores = dense.flat_target_scores() if isinstance(dense, DenseOutputs) else dense
    return _masked_bce(scores, labels, mask, "target_presence_loss")


def total_loss(verb: float, target: float, embedding_losses: Sequence[float], V: int) -> float:
    """Verb loss + target loss + embedding losses averaged over all ``V`` verbs."""
    vals = [verb, target, *embedding_losses]
    if not all(math.isfinite(x) for x in vals):
        raise FloatingPointError(f"non-finite loss term in {vals}")
    return float(verb + target + sum(embedding_losses) / V)
