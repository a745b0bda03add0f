"""Training targets per anchor and the SGD training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .anchors import (
    AnchorAssignment,
    AnchorGrid,
    EquivalenceClasses,
    assign_anchors,
    build_anchor_grid,
    build_equivalence_classes,
)
from .losses import BCE_EPS, LossConfig, LossReport, embedding_loss, total_loss, usual_targets_from_scenes
from .network import CalipsoNet, NetworkConfig, image_to_tensor
from .types import Scene, VerbVocabulary

log = logging.getLogger(__name__)

# logit(1 - eps): clamping logits here equals clamping probabilities to [eps, 1 - eps]
LOGIT_CLAMP = math.log((1.0 - BCE_EPS) / BCE_EPS)


@dataclass
class TrainingTargets:
    """Labels restricted to the assigned anchors, in ascending anchor order."""

    anchors: np.ndarray  # (n,) flat anchor indices
    box_index: np.ndarray  # (n,)
    box_class: np.ndarray  # (n,) object class of the assigned box
    verb_labels: np.ndarray  # (n, 2V) active then passive
    target_labels: np.ndarray  # (n, 2V) role-0 block then role-1 block
    human: np.ndarray  # (n,) bool, rows carrying target-presence labels
    classes: list[EquivalenceClasses]  # per verb, members as positions into ``anchors``


def build_training_targets(
    scene: Scene,
    grid: AnchorGrid,
    assignment: AnchorAssignment,
    vocabulary: VerbVocabulary,
    cross_target_merge: bool = True,
) -> TrainingTargets:
    V = vocabulary.V
    anchors = assignment.assigned
    box_index = assignment.box_of[anchors]
    B = len(scene.boxes)
    active = np.zeros((B, V))
    passive = np.zeros((B, V))
    presence = np.zeros((B, 2 * V))
    for t in scene.triplets:
        active[t.subject_index, t.verb_id] = 1.0
        if t.target_index is not None:
            passive[t.target_index, t.verb_id] = 1.0
            role = vocabulary.verbs[t.verb_id].role
            presence[t.subject_index, role * V + t.verb_id] = 1.0
    is_human = np.array([b.class_id == scene.human_class_id for b in scene.boxes], dtype=bool)
    classes = build_equivalence_classes(assignment, scene.triplets, vocabulary, cross_target_merge)
    return TrainingTargets(
        anchors=anchors,
        box_index=box_index,
        box_class=np.array([scene.boxes[b].class_id for b in box_index], dtype=np.int64),
        verb_labels=np.concatenate([active, passive], axis=1)[box_index],
        target_labels=presence[box_index],
        human=is_human[box_index] if B else np.zeros(0, dtype=bool),
        classes=[c.local(anchors) for c in classes],
    )


class _EmbeddingLoss(torch.autograd.Function):
    """Mean over verbs of pull + push for one image; gradients come from the analytic numpy expressions."""

    @staticmethod
    def forward(ctx, emb, classes, labels, config, sink):
        e = emb.detach().double().numpy()
        V = e.shape[1]
        grad = np.zeros_like(e)
        total = 0.0
        for v, cls in enumerate(classes):
            pl, ps, g = embedding_loss(cls, e[:, v], labels, config, with_grad=True)
            grad[:, v] = g
            total += pl + ps
            sink.append((pl, ps))
        ctx.save_for_backward(torch.from_numpy(grad / V).to(emb.dtype))
        return emb.new_tensor(total / V)

    @staticmethod
    def backward(ctx, g):
        (grad,) = ctx.saved_tensors
        return g * grad, None, None, None, None


def embedding_loss_torch(emb: torch.Tensor, targets: TrainingTargets, config: LossConfig, sink: list) -> torch.Tensor:
    """``emb`` is ``[n, V, T]`` at the assigned anchors of one image."""
    return _EmbeddingLoss.apply(emb, targets.classes, targets.box_class, config, sink)


def _bce_logits(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP), labels, reduction="sum")


def batch_loss(
    out: dict,
    batch_targets: Sequence[TrainingTargets],
    net_config: NetworkConfig,
    loss_config: LossConfig,
    bce_reduction: str = "image",
    background_negatives: bool = False,
):
    """Total loss of a batch and its report.

    Verb and target BCE cover the labeled anchors. ``"image"`` sums them per image
    and averages over images; ``"anchor"`` sums over channels and averages over
    anchors; ``"element"`` averages over every anchor/channel entry.
    ``background_negatives`` adds all unassigned anchors to the verb loss with
    all-zero labels. The embedding loss is averaged
    over images.
    """
    if bce_reduction not in ("anchor", "element", "image"):
        raise ValueError(f"bce_reduction must be 'anchor', 'element' or 'image', got {bce_reduction!r}")
    V = net_config.V
    C = net_config.verb_channels
    verb_sum = out["verb"].new_zeros(())
    target_sum = out["verb"].new_zeros(())
    n_verb = n_target = 0
    emb_terms = []
    per_verb = []
    for b, tt in enumerate(batch_targets):
        if background_negatives:
            n_all = out["verb"].shape[1]
            labels = torch.zeros(n_all, C)
            labels[torch.from_numpy(tt.anchors)] = torch.from_numpy(tt.verb_labels[:, :C]).float()
            verb_sum = verb_sum + _bce_logits(out["verb"][b], labels)
            n_verb += n_all
        elif len(tt.anchors):
            idx = torch.from_numpy(tt.anchors)
            labels = torch.from_numpy(tt.verb_labels[:, :C]).float()
            verb_sum = verb_sum + _bce_logits(out["verb"][b, idx], labels)
            n_verb += len(idx)
        if len(tt.anchors) == 0:
            continue
        if out["target"] is not None and tt.human.any():
            hidx = torch.from_numpy(tt.anchors[tt.human])
            tl = torch.from_numpy(tt.target_labels[tt.human]).float()
            target_sum = target_sum + _bce_logits(out["target"][b, hidx], tl)
            n_target += len(hidx)
        sink: list = []
        emb_terms.append(embedding_loss_torch(out["emb"][b, torch.from_numpy(tt.anchors)], tt, loss_config, sink))
        per_verb.append(sink)
    if bce_reduction == "element":
        n_verb *= C
        n_target *= 2 * V
    elif bce_reduction == "image":
        n_verb = n_target = len(batch_targets)
    verb = verb_sum / max(n_verb, 1)
    target = target_sum / max(n_target, 1)
    emb = torch.stack(emb_terms).mean() if emb_terms else verb.new_zeros(())
    total = verb + target + emb
    pulls = np.mean([[p for p, _ in s] for s in per_verb], axis=0).tolist() if per_verb else [0.0] * V
    pushes = np.mean([[q for _, q in s] for s in per_verb], axis=0).tolist() if per_verb else [0.0] * V
    per_verb_emb = [p + q for p, q in zip(pulls, pushes)]
    report = LossReport(float(verb.detach()), float(target.detach()), float(emb.detach()),
                        total_loss(float(verb.detach()), float(target.detach()), per_verb_emb, V), pulls, pushes)
    return total, report


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_drop_at: float = 0.75
    lr_drop: float = 0.1
    hflip: bool = True
    grad_clip: Optional[float] = 10.0
    warmup_steps: int = 100
    cross_target_merge: bool = True
    # "image": BCE summed per image, mean over images; see batch_loss for the others
    bce_reduction: str = "image"
    background_negatives: bool = False
    log_every: int = 50


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainResult:
    model: CalipsoNet
    history: list[dict] = field(default_factory=list)
    loss_config: Optional[LossConfig] = None


class TargetCache:
    def __init__(self, grid: AnchorGrid, vocabulary: VerbVocabulary, cross_target_merge: bool = True):
        self.grid = grid
        self.vocabulary = vocabulary
        self.cross = cross_target_merge
        self._cache: dict = {}

    def get(self, scene: Scene, key) -> TrainingTargets:
        if key not in self._cache:
            a = assign_anchors(self.grid, scene.boxes)
            self._cache[key] = build_training_targets(scene, self.grid, a, self.vocabulary, self.cross)
        return self._cache[key]


def train(
    scenes: Sequence[Scene],
    vocabulary: VerbVocabulary,
    net_config: Optional[NetworkConfig] = None,
    train_config: TrainConfig = TrainConfig(),
    loss_config: Optional[LossConfig] = None,
    seed: int = 0,
    anchor_base_factor: float = 2.0,
    callback: Optional[Callable[[int, LossReport], None]] = None,
) -> TrainResult:
    """SGD with momentum over random mini-batches; deterministic for a given seed.

    When ``loss_config`` is omitted the defaults are used with usual targets
    counted from ``scenes``.
    """
    if not scenes:
        raise ValueError("training set is empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net_config = net_config or NetworkConfig(V=vocabulary.V)
    if net_config.V != vocabulary.V:
        raise ValueError(f"network V={net_config.V} but vocabulary has {vocabulary.V} verbs")
    if loss_config is None:
        loss_config = LossConfig(usual_targets=usual_targets_from_scenes(scenes, vocabulary.V))
    H, W = scenes[0].image.shape[:2]
    grid = build_anchor_grid((W, H), net_config.levels, base_factor=anchor_base_factor)
    cache = TargetCache(grid, vocabulary, train_config.cross_target_merge)
    flipped: dict[int, Scene] = {}

    model = CalipsoNet(net_config)
    model.train()
    opt = torch.optim.SGD(model.parameters(), lr=train_config.lr, momentum=train_config.momentum,
                          weight_decay=train_config.weight_decay)
    drop_step = int(train_config.lr_drop_at * train_config.steps)
    history = []
    for step in range(train_config.steps):
        lr = train_config.lr * (train_config.lr_drop if step >= drop_step else 1.0)
        if step < train_config.warmup_steps:
            lr *= (step + 1) / train_config.warmup_steps
        for g in opt.param_groups:
            g["lr"] = lr
        idx = rng.integers(0, len(scenes), size=train_config.batch_size)
        flips = rng.random(train_config.batch_size) < 0.5 if train_config.hflip else np.zeros(len(idx), bool)
        batch, targets = [], []
        for i, f in zip(idx, flips):
            i = int(i)
            if f:
                if i not in flipped:
                    flipped[i] = scenes[i].hflip()
                s = flipped[i]
            else:
                s = scenes[i]
            batch.append(s.image)
            targets.append(cache.get(s, (i, bool(f))))
        out = model(image_to_tensor(np.stack(batch)))
        loss, report = batch_loss(out, targets, net_config, loss_config, train_config.bce_reduction,
                                  train_config.background_negatives)
        if not math.isfinite(loss.item()):
            raise DivergenceError(f"non-finite loss at step {step}: {report.to_dict()}")
        opt.zero_grad()
        loss.backward()
        if train_config.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_config.grad_clip)
        opt.step()
        rec = {"step": step, "lr": lr, **report.to_dict()}
        history.append(rec)
        if callback is not None:
            callback(step, report)
        if train_config.log_every and step % train_config.log_every == 0:
            log.info("step %d total %.4f verb %.4f target %.4f emb %.4f", step, report.total,
                     report.verb_loss, report.target_loss, report.embedding_loss)
    model.eval()
    return TrainResult(model, history, loss_config)
