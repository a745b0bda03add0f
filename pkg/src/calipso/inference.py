"""Single-shot inference: one forward pass, then per-detection readout and triplet/pair scoring."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .anchors import AnchorGrid, build_anchor_grid, map_box_to_anchor, map_boxes_to_anchors
from .network import CalipsoNet, forward
from .types import Box, DenseOutputs, Scene, ScoredTriplet, VerbVocabulary

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.05

__all__ = [
    "Detection", "DetectorAdapter", "connection_score", "triplet_score", "pair_score",
    "map_box_to_anchor", "detect_interactions", "score_interactions", "DEFAULT_THRESHOLD",
]


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float = 1.0

    @property
    def class_id(self) -> int:
        return self.box.class_id

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass
class DetectorAdapter:
    """Source of candidate boxes at inference time.

    ``ground-truth`` replays the scene boxes with score 1; ``noisy-simulated``
    drops, jitters and relabels them; ``external-import`` reads per-scene
    detections from a JSON-lines file (``{"scene_id", "detections": [[x0, y0, x1, y1, cls, score], ...]}``).
    """

    mode: str = "ground-truth"
    drop_rate: float = 0.0
    jitter: float = 0.0  # std of coordinate noise, as a fraction of box size
    misclassification_rate: float = 0.0
    num_classes: int = 5
    score_range: tuple[float, float] = (0.5, 1.0)
    path: Optional[str] = None
    seed: int = 0
    _external: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("ground-truth", "noisy-simulated", "external-import"):
            raise ValueError(f"unknown detector mode {self.mode!r}")
        if self.mode == "external-import":
            if self.path is None:
                raise ValueError("external-import mode needs a path")
            with open(self.path) as f:
                for line in f:
                    if line.strip():
                        rec = json.loads(line)
                        self._external[rec["scene_id"]] = [
                            Detection(Box(*map(float, d[:4]), int(d[4])), float(d[5])) for d in rec["detections"]
                        ]

    def detect(self, scene: Scene, index: int = 0) -> list[Detection]:
        if self.mode == "ground-truth":
            return [Detection(b, 1.0) for b in scene.boxes]
        if self.mode == "external-import":
            return list(self._external.get(scene.scene_id, []))
        rng = np.random.default_rng([self.seed, index])
        out = []
        W, H = scene.width, scene.height
        for b in scene.boxes:
            if rng.random() < self.drop_rate:
                continue
            w, h = b.width, b.height
            dx0, dy0, dx1, dy1 = rng.normal(0.0, self.jitter, 4) * np.array([w, h, w, h])
            x0, x1 = np.clip([b.x_min + dx0, b.x_max + dx1], 0, W)
            y0, y1 = np.clip([b.y_min + dy0, b.y_max + dy1], 0, H)
            if x1 - x0 < 1 or y1 - y0 < 1:
                continue
            cls = b.class_id
            if rng.random() < self.misclassification_rate:
                cls = int(rng.choice([c for c in range(self.num_classes) if c != b.class_id]))
            out.append(Detection(Box(float(x0), float(y0), float(x1), float(y1), cls),
                                 float(rng.uniform(*self.score_range))))
        return out


def connection_score(e_h: np.ndarray, e_o: np.ndarray, norm: str = "l2") -> float:
    """``exp(-|e_h - e_o|)``; ``norm`` selects the Euclidean (default) or L1 reading of the distance."""
    d = np.asarray(e_h, dtype=np.float64) - np.asarray(e_o, dtype=np.float64)
    dist = np.sqrt(np.sum(d * d)) if norm == "l2" else np.sum(np.abs(d))
    return float(np.exp(-dist))


def triplet_score(s_h_det, s_active, s_o_det, s_passive, s_target, s_emb) -> float:
    """Geometric mean of the six factors."""
    return float((s_h_det * s_active * s_o_det * s_passive * s_target * s_emb) ** (1.0 / 6.0))


def pair_score(s_h_det, s_active, s_target) -> float:
    """Score of the targetless reading: geometric mean of detection, action and target absence."""
    return float((s_h_det * s_active * (1.0 - s_target)) ** (1.0 / 3.0))


def _gmean(factors: list[np.ndarray]) -> np.ndarray:
    prod = factors[0]
    for f in factors[1:]:
        prod = prod * f
    return np.clip(prod, 0.0, None) ** (1.0 / len(factors))


@dataclass
class Readout:
    """Scores read at the anchors selected for each detection."""

    human_idx: list[int]
    object_idx: list[int]
    anchors: np.ndarray
    anchor_iou: np.ndarray
    low_iou: list[int]


def score_interactions(
    dense: DenseOutputs,
    grid: AnchorGrid,
    detections: Sequence[Detection],
    vocabulary: VerbVocabulary,
    human_class_id: int = 0,
    threshold: float = DEFAULT_THRESHOLD,
    norm: str = "l2",
) -> list[ScoredTriplet]:
    """Best triplet-or-pair per (human, verb) from precomputed dense maps.

    Candidates are ordered pair first, then objects in detection order; the first
    maximum wins, so ties resolve deterministically. Disabled heads drop their
    factor from the geometric means.
    """
    V = vocabulary.V
    humans = [i for i, d in enumerate(detections) if d.class_id == human_class_id]
    objects = [i for i, d in enumerate(detections) if d.class_id != human_class_id]
    if not humans:
        return []
    anchors, ious = map_boxes_to_anchors([d.box for d in detections], grid)
    for k in np.flatnonzero(ious <= 0.5):
        log.debug("detection %d maps to anchor %d with low IoU %.3f", k, anchors[k], ious[k])

    verb = dense.flat_verb_scores().astype(np.float64)
    target = dense.flat_target_scores()
    emb = dense.flat_embeddings().astype(np.float64)
    passive_on = verb.shape[1] == 2 * V

    ah = anchors[humans]
    s_hdet = np.array([detections[i].score for i in humans])[:, None]  # (N, 1)
    s_act = verb[ah, :V]  # (N, V)
    pair_f = [np.broadcast_to(s_hdet, s_act.shape), s_act]
    if target is not None:
        roles = np.array([v.role for v in vocabulary.verbs])
        s_tgt = target[ah][:, roles * V + np.arange(V)]  # (N, V)
        pair_f.append(1.0 - s_tgt)
    pair = _gmean(pair_f)  # (N, V)

    if objects:
        ao = anchors[objects]
        s_odet = np.array([detections[i].score for i in objects])
        diff = emb[ah][:, None] - emb[ao][None]  # (N, M, V, T)
        dist = np.sqrt(np.sum(diff * diff, axis=-1)) if norm == "l2" else np.sum(np.abs(diff), axis=-1)
        s_emb = np.exp(-dist)  # (N, M, V)
        trip_f = [np.broadcast_to(s_hdet[:, :, None], s_emb.shape), np.broadcast_to(s_act[:, None], s_emb.shape),
                  np.broadcast_to(s_odet[None, :, None], s_emb.shape)]
        if passive_on:
            trip_f.append(np.broadcast_to(verb[ao][None, :, V:], s_emb.shape))
        if target is not None:
            trip_f.append(np.broadcast_to(s_tgt[:, None], s_emb.shape))
        trip_f.append(s_emb)
        trip = _gmean(trip_f)  # (N, M, V)
        cand = np.concatenate([pair[:, None], trip], axis=1)  # (N, 1+M, V)
    else:
        cand = pair[:, None]
    best = np.argmax(cand, axis=1)  # (N, V)
    out = []
    for n, hi in enumerate(humans):
        for v in range(V):
            k = int(best[n, v])
            s = float(cand[n, k, v])
            if s <= threshold:
                continue
            tgt = None if k == 0 else detections[objects[k - 1]].box
            out.append(ScoredTriplet(detections[hi].box, v, tgt, s))
    return out


def detect_interactions(
    image: np.ndarray,
    model: CalipsoNet,
    detections: Sequence[Detection],
    vocabulary: VerbVocabulary,
    threshold: float = DEFAULT_THRESHOLD,
    grid: Optional[AnchorGrid] = None,
    human_class_id: int = 0,
    norm: str = "l2",
    anchor_base_factor: float = 2.0,
) -> list[ScoredTriplet]:
    """One forward pass over the image, then readout at the detections' anchors."""
    if not any(d.class_id == human_class_id for d in detections):
        return []
    if grid is None:
        H, W = image.shape[:2]
        grid = build_anchor_grid((W, H), model.config.levels, base_factor=anchor_base_factor)
    dense = forward(image, model)
    return score_interactions(dense, grid, detections, vocabulary, human_class_id, threshold, norm)


def write_predictions(path, scene_ids: Sequence[str], predictions: Sequence[Sequence[ScoredTriplet]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for sid, preds in zip(scene_ids, predictions):
            for p in preds:
                f.write(json.dumps({"scene_id": sid, **p.to_dict()}) + "\n")
    return path


def read_predictions(path, scene_ids: Sequence[str]) -> list[list[ScoredTriplet]]:
    by_id: dict[str, list[ScoredTriplet]] = {s: [] for s in scene_ids}
    with open(path) as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                by_id.setdefault(rec["scene_id"], []).append(ScoredTriplet.from_dict(rec))
    return [by_id[s] for s in scene_ids]
