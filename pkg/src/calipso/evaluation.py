"""Role average precision, the pairwise reference model, the cost sweep and the ablation harness."""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .anchors import build_anchor_grid, iou
from .inference import DEFAULT_THRESHOLD, Detection, DetectorAdapter, detect_interactions
from .losses import LossConfig
from .network import CalipsoNet, NetworkConfig, OpCounter, image_to_tensor
from .synthetic import SceneGenConfig, crowd_layout, layout_to_scene
from .training import TrainConfig, train
from .types import Box, Scene, ScoredTriplet, VerbVocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchCriterion:
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")


@dataclass
class APResult:
    per_verb: dict[int, float]  # verbs with at least one ground-truth instance
    num_gt: dict[int, int]

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_verb.values()))) if self.per_verb else 0.0

    def to_dict(self, vocabulary: Optional[VerbVocabulary] = None) -> dict:
        name = (lambda v: vocabulary.verbs[v].name) if vocabulary else str
        return {"mean_ap_role": self.mean,
                "per_verb": {name(v): ap for v, ap in sorted(self.per_verb.items())},
                "num_gt": {name(v): n for v, n in sorted(self.num_gt.items())}}


def average_precision(tp: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP of a ranked list of true/false positive flags."""
    if num_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    rec = ctp / num_gt
    prec = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def role_overlap(pred: ScoredTriplet, subject, target, threshold: float) -> float:
    """Smallest box IoU of a prediction against one ground-truth instance, or 0 if the kinds differ."""
    if (pred.target is None) != (target is None):
        return 0.0
    ov = iou(pred.subject, subject)
    if target is not None:
        ov = min(ov, iou(pred.target, target))
    return ov


def match_predictions(
    preds: Sequence[tuple[int, ScoredTriplet]],
    gts: dict[int, list],
    criterion: MatchCriterion,
) -> np.ndarray:
    """Greedy matching in descending score order (stable for ties).

    Each prediction is compared with the ground truth instance of highest
    overlap in its scene; it is a true positive when that overlap exceeds the
    threshold and the instance was not claimed by a higher-ranked prediction.
    """
    order = sorted(range(len(preds)), key=lambda k: -preds[k][1].score)
    claimed = {s: np.zeros(len(g), dtype=bool) for s, g in gts.items()}
    tp = np.zeros(len(preds))
    for rank, k in enumerate(order):
        s, p = preds[k]
        cands = gts.get(s, [])
        if not cands:
            continue
        ovs = [role_overlap(p, sb, tb, criterion.iou_threshold) for sb, tb in cands]
        j = int(np.argmax(ovs))
        if ovs[j] > criterion.iou_threshold and not claimed[s][j]:
            claimed[s][j] = True
            tp[rank] = 1.0
    return tp


def ground_truth_by_verb(scenes: Sequence[Scene], V: int) -> dict[int, dict[int, list]]:
    out: dict[int, dict[int, list]] = {v: {} for v in range(V)}
    for s_idx, s in enumerate(scenes):
        for t in s.triplets:
            tgt = None if t.target_index is None else s.boxes[t.target_index]
            out[t.verb_id].setdefault(s_idx, []).append((s.boxes[t.subject_index], tgt))
    return out


def ap_role(
    predictions: Sequence[Sequence[ScoredTriplet]],
    scenes: Sequence[Scene],
    V: int,
    criterion: MatchCriterion = MatchCriterion(),
) -> APResult:
    """Per-verb role AP over a dataset; the mean covers verbs with ground truth.

    ``predictions[i]`` holds the scored triplets of ``scenes[i]``. A targeted
    prediction must match subject and target boxes; a pair matches a targetless
    ground-truth instance on the subject box alone.
    """
    if len(predictions) != len(scenes):
        raise ValueError(f"{len(predictions)} prediction lists for {len(scenes)} scenes")
    gt = ground_truth_by_verb(scenes, V)
    per_verb, num_gt = {}, {}
    for v in range(V):
        n = sum(len(g) for g in gt[v].values())
        if n == 0:
            continue
        preds = [(s, p) for s, ps in enumerate(predictions) for p in ps if p.verb_id == v]
        tp = match_predictions(preds, gt[v], criterion)
        per_verb[v] = average_precision(tp, n)
        num_gt[v] = n
    return APResult(per_verb, num_gt)


# -- pairwise baseline ------------------------------------------------------------

PAIR_CROP = 32


class PairNet(nn.Module):
    """Per-pair classifier on the union crop of a human and an object box.

    Input channels are the RGB crop plus one mask per box; the output holds V
    interaction logits for the pair followed by V action logits for the human.
    """

    def __init__(self, V: int, width: int = 32):
        super().__init__()
        self.V = V
        self.features = nn.Sequential(
            nn.Conv2d(5, width, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * width, 2 * width, 3, stride=2, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
        )
        self.head = nn.Linear(2 * width, 2 * V)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).flatten(1))


def _box_mask(box: Box, x0: float, y0: float, w: float, h: float) -> torch.Tensor:
    ys = (torch.arange(PAIR_CROP, dtype=torch.float32) + 0.5) / PAIR_CROP * h + y0
    xs = (torch.arange(PAIR_CROP, dtype=torch.float32) + 0.5) / PAIR_CROP * w + x0
    my = (ys >= box.y_min) & (ys <= box.y_max)
    mx = (xs >= box.x_min) & (xs <= box.x_max)
    return (my[:, None] & mx[None, :]).float()


def pair_inputs(image: np.ndarray, human: Box, obj: Optional[Box]) -> torch.Tensor:
    """``[5, 32, 32]`` union crop with human and object masks (a missing object leaves its mask empty)."""
    H, W = image.shape[:2]
    boxes = [human] if obj is None else [human, obj]
    x0 = max(0, int(np.floor(min(b.x_min for b in boxes))))
    y0 = max(0, int(np.floor(min(b.y_min for b in boxes))))
    x1 = min(W, int(np.ceil(max(b.x_max for b in boxes))))
    y1 = min(H, int(np.ceil(max(b.y_max for b in boxes))))
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
    crop = image_to_tensor(image[y0:y1, x0:x1])
    crop = F.interpolate(crop, size=(PAIR_CROP, PAIR_CROP), mode="bilinear", align_corners=False)[0]
    hm = _box_mask(human, x0, y0, x1 - x0, y1 - y0)
    om = torch.zeros_like(hm) if obj is None else _box_mask(obj, x0, y0, x1 - x0, y1 - y0)
    return torch.cat([crop, hm[None], om[None]])


@torch.no_grad()
def pairwise_baseline(
    image: np.ndarray,
    detections: Sequence[Detection],
    model: PairNet,
    vocabulary: VerbVocabulary,
    human_class_id: int = 0,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[ScoredTriplet]:
    """Two-stage reference: one PairNet evaluation per (human, object) pair.

    People without any object get one evaluation with an empty object mask so
    that targetless verbs can still be scored.
    """
    V = vocabulary.V
    humans = [d for d in detections if d.class_id == human_class_id]
    objects = [d for d in detections if d.class_id != human_class_id]
    if not humans:
        return []
    pairs = [(h, o) for h in humans for o in objects] if objects else [(h, None) for h in humans]
    x = torch.stack([pair_inputs(image, h.box, None if o is None else o.box) for h, o in pairs])
    logits = torch.sigmoid(model(x)).double().numpy()
    out = []
    M = max(len(objects), 1)
    for n, h in enumerate(humans):
        rows = logits[n * M:(n + 1) * M]
        q, act = rows[:, :V], rows[:, V:]
        a = act.mean(axis=0)
        for v in range(V):
            cands = [(h.score * a[v] * (1.0 - q[:, v].max())) ** (1 / 3), None]
            best_s, best_o = cands
            if objects:
                trip = (h.score * act[:, v] * np.array([o.score for o in objects]) * q[:, v]) ** 0.25
                k = int(np.argmax(trip))
                if trip[k] > best_s:
                    best_s, best_o = trip[k], objects[k].box
            if best_s > threshold:
                out.append(ScoredTriplet(h.box, v, best_o, float(best_s)))
    return out


def pair_training_examples(scene: Scene, V: int) -> tuple[torch.Tensor, torch.Tensor]:
    humans = scene.human_indices()
    objects = [i for i in range(len(scene.boxes)) if i not in set(humans)]
    act = np.zeros((len(scene.boxes), V))
    linked = set()
    for t in scene.triplets:
        act[t.subject_index, t.verb_id] = 1.0
        if t.target_index is not None:
            linked.add((t.subject_index, t.verb_id, t.target_index))
    xs, ys = [], []
    for h in humans:
        for o in objects or [None]:
            xs.append(pair_inputs(scene.image, scene.boxes[h], None if o is None else scene.boxes[o]))
            q = [float((h, v, o) in linked) for v in range(V)]
            ys.append(np.concatenate([q, act[h]]))
    if not xs:
        return torch.zeros(0, 5, PAIR_CROP, PAIR_CROP), torch.zeros(0, 2 * V)
    return torch.stack(xs), torch.from_numpy(np.array(ys)).float()


def train_pairwise(scenes: Sequence[Scene], V: int, steps: int = 500, batch_size: int = 64,
                   lr: float = 1e-3, seed: int = 0) -> PairNet:
    """Fit the baseline on all pairs of ``scenes`` with binary cross-entropy (Adam)."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    data = [pair_training_examples(s, V) for s in scenes]
    X = torch.cat([d[0] for d in data])
    Y = torch.cat([d[1] for d in data])
    if len(X) == 0:
        raise ValueError("no human/object pairs to train on")
    model = PairNet(V)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(0, len(X), size=min(batch_size, len(X))))
        loss = F.binary_cross_entropy_with_logits(model(X[idx]), Y[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    return model


# -- complexity benchmark ---------------------------------------------------------

DEFAULT_PAIR_SWEEP = (1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64)


@dataclass
class BenchmarkRecord:
    scene_id: str
    num_humans: int
    num_objects: int
    calipso_seconds: float
    baseline_seconds: float
    calipso_ops: int
    baseline_ops: int
    baseline_evaluations: int

    @property
    def P(self) -> int:
        return self.num_humans * self.num_objects

    def __post_init__(self):
        if not (self.calipso_seconds > 0 and self.baseline_seconds > 0):
            raise ValueError("benchmark times must be positive")

    def to_dict(self) -> dict:
        return {**asdict(self), "P": self.P}


def factor_pairs(P: int) -> tuple[int, int]:
    """``(N, M)`` with ``N * M == P`` and ``N <= M`` as close to square as possible."""
    n = int(math.isqrt(P))
    while P % n:
        n -= 1
    return n, P // n


def _seconds(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def benchmark_complexity(
    model: CalipsoNet,
    baseline: PairNet,
    vocabulary: VerbVocabulary,
    sweep: Sequence[int] = DEFAULT_PAIR_SWEEP,
    image_size: tuple[int, int] = (192, 192),
    repeats: int = 20,
    warmup: int = 3,
    seed: int = 0,
) -> list[BenchmarkRecord]:
    """Median wall time and operation counts of both paths on crowd scenes with ``P = N * M`` pairs.

    Timing runs in rounds that visit every scene once, so a slow spell of the
    machine lands on all values of P alike instead of on one of them.
    """
    cfg = SceneGenConfig(image_size=image_size)
    grid = build_anchor_grid(image_size, model.config.levels)
    cases = []
    for k, P in enumerate(sweep):
        N, M = factor_pairs(P)
        rng = np.random.default_rng([seed, k])
        scene = layout_to_scene(crowd_layout(cfg, rng, N, M), rng, cfg.noise, f"crowd-{N}x{M}")
        dets = [Detection(b) for b in scene.boxes]
        run_calipso = functools.partial(detect_interactions, scene.image, model, dets, vocabulary, grid=grid)
        run_baseline = functools.partial(pairwise_baseline, scene.image, dets, baseline, vocabulary)
        with OpCounter(model) as oc:
            run_calipso()
        with OpCounter(baseline) as ob:
            run_baseline()
        cases.append((scene, N, M, run_calipso, run_baseline, oc.total, ob.total))

    times = np.zeros((len(cases), 2, repeats))
    for r in range(-warmup, repeats):
        for k, case in enumerate(cases):
            tc, tb = _seconds(case[3]), _seconds(case[4])
            if r >= 0:
                times[k, :, r] = tc, tb

    records = []
    for k, (scene, N, M, _, _, c_ops, b_ops) in enumerate(cases):
        records.append(BenchmarkRecord(
            scene_id=scene.scene_id,
            num_humans=N,
            num_objects=M,
            calipso_seconds=float(np.median(times[k, 0])),
            baseline_seconds=float(np.median(times[k, 1])),
            calipso_ops=c_ops,
            baseline_ops=b_ops,
            baseline_evaluations=N * M,
        ))
        log.info("P=%d calipso %.4fs (%d ops) baseline %.4fs (%d ops)", N * M, records[-1].calipso_seconds,
                 c_ops, records[-1].baseline_seconds, b_ops)
    return records


def plot_benchmark(records: Sequence[BenchmarkRecord], path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    P = [r.P for r in records]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(P, [r.calipso_seconds for r in records], "o-", label="single-shot (dense maps)")
    ax.plot(P, [r.baseline_seconds for r in records], "s-", label="pairwise baseline")
    ax.set_xlabel("number of human/object pairs P")
    ax.set_ylabel("seconds per image (median)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# -- ablation -----------------------------------------------------------------------

ABLATION_VARIANTS = {
    "full": {},
    "no-target-presence": {"target_head_enabled": False},
    "no-passive": {"passive_head_enabled": False},
    "no-weight-sharing": {"share_weights_across_levels": False},
    "blocks-5": {"blocks": 5},
    "blocks-8": {"blocks": 8},
    "blocks-11": {"blocks": 11},
}


@dataclass
class AblationRow:
    variant: str
    overrides: dict
    seeds: list[int]
    ap: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.ap))

    @property
    def std(self) -> float:
        return float(np.std(self.ap, ddof=1)) if len(self.ap) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"variant": self.variant, "overrides": self.overrides, "seeds": self.seeds, "ap": self.ap,
                "mean": self.mean, "std": self.std}


def evaluate_model(model: CalipsoNet, scenes: Sequence[Scene], vocabulary: VerbVocabulary,
                   detector: Optional[DetectorAdapter] = None, threshold: float = DEFAULT_THRESHOLD,
                   anchor_base_factor: float = 2.0) -> tuple[APResult, list[list[ScoredTriplet]]]:
    detector = detector or DetectorAdapter()
    preds = [detect_interactions(s.image, model, detector.detect(s, k), vocabulary, threshold=threshold,
                                 anchor_base_factor=anchor_base_factor) for k, s in enumerate(scenes)]
    return ap_role(preds, scenes, vocabulary.V), preds


def run_ablation(
    variants: dict[str, dict],
    train_scenes: Sequence[Scene],
    test_scenes: Sequence[Scene],
    vocabulary: VerbVocabulary,
    seeds: Sequence[int] = (0, 1, 2),
    base_config: Optional[NetworkConfig] = None,
    train_config: Optional[TrainConfig] = None,
    loss_config: Optional[LossConfig] = None,
    anchor_base_factor: float = 2.0,
    on_result: Optional[Callable[[str, int, float], None]] = None,
) -> list[AblationRow]:
    """Train and evaluate every variant for every seed; variants are NetworkConfig overrides."""
    base = base_config or NetworkConfig(V=vocabulary.V)
    rows = []
    for name, overrides in variants.items():
        cfg = replace(base, **overrides)
        aps = []
        for seed in seeds:
            res = train(train_scenes, vocabulary, cfg, train_config or TrainConfig(), loss_config, seed=seed,
                        anchor_base_factor=anchor_base_factor)
            ap = evaluate_model(res.model, test_scenes, vocabulary, anchor_base_factor=anchor_base_factor)[0].mean
            aps.append(ap)
            log.info("ablation %s seed %d: mean AP_role %.4f", name, seed, ap)
            if on_result is not None:
                on_result(name, seed, ap)
        rows.append(AblationRow(name, dict(overrides), list(seeds), aps))
    return rows
