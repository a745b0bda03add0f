"""Anchor lattice, IoU-based anchor assignment and per-verb equivalence classes of anchors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .types import Box, InteractionTriplet, VerbVocabulary

log = logging.getLogger(__name__)

DEFAULT_SCALES = (1.0, 2 ** (1 / 3), 2 ** (2 / 3))
# height / width
DEFAULT_RATIOS = (0.5, 1.0, 2.0)
# anchor side at scale 1 is base_factor * stride
DEFAULT_BASE_FACTOR = 2.0


class AnchorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LevelSpec:
    level: int
    width: int
    height: int
    offset: int  # flat index of the first anchor of this level

    @property
    def stride(self) -> int:
        return 2**self.level


@dataclass(frozen=True, eq=False)
class AnchorGrid:
    image_size: tuple[int, int]
    levels: tuple[LevelSpec, ...]
    A: int
    boxes: np.ndarray  # (A_all, 4) x_min, y_min, x_max, y_max
    level_index: np.ndarray  # (A_all,) pyramid level of each anchor

    @property
    def num_anchors(self) -> int:
        return int(self.boxes.shape[0])

    def anchor_box(self, i: int) -> Box:
        x0, y0, x1, y1 = self.boxes[i]
        return Box(float(x0), float(y0), float(x1), float(y1), -1)

    def unravel(self, i: int) -> tuple[int, int, int, int]:
        """Flat index -> (level, x, y, a)."""
        for spec in self.levels:
            n = spec.width * spec.height * self.A
            if spec.offset <= i < spec.offset + n:
                x, y, a = np.unravel_index(i - spec.offset, (spec.width, spec.height, self.A))
                return spec.level, int(x), int(y), int(a)
        raise IndexError(i)


def build_anchor_grid(
    image_size: tuple[int, int],
    levels: tuple[int, int] = (3, 5),
    scales: Sequence[float] = DEFAULT_SCALES,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    base_factor: float = DEFAULT_BASE_FACTOR,
) -> AnchorGrid:
    """Enumerate anchors level by level, then x, then y, then shape.

    ``image_size`` is ``(W, H)``. The enumeration order matches the flattening of
    ``[W_l, H_l, A, ...]`` dense maps concatenated over levels.
    """
    W, H = image_size
    l_min, l_max = levels
    if l_min > l_max:
        raise AnchorConfigError(f"levels must satisfy l_min <= l_max, got {levels}")
    shapes = [(s, r) for s in scales for r in ratios]
    A = len(shapes)
    all_boxes, level_index, specs = [], [], []
    offset = 0
    for level in range(l_min, l_max + 1):
        stride = 2**level
        Wl, Hl = W // stride, H // stride
        if Wl == 0 or Hl == 0:
            raise AnchorConfigError(f"level {level} has an empty feature map ({Wl}x{Hl}) for image {W}x{H}")
        wh = []
        for s, r in shapes:
            size = base_factor * stride * s
            wh.append((size / np.sqrt(r), size * np.sqrt(r)))
        wh = np.asarray(wh)  # (A, 2)
        cx = (np.arange(Wl) + 0.5) * stride
        cy = (np.arange(Hl) + 0.5) * stride
        gx, gy = np.meshgrid(cx, cy, indexing="ij")  # (Wl, Hl)
        ctr = np.stack([gx, gy], axis=-1)[:, :, None, :]  # (Wl, Hl, 1, 2)
        half = wh[None, None] / 2.0
        b = np.concatenate([ctr - half, ctr + half], axis=-1).reshape(-1, 4)
        all_boxes.append(b)
        level_index.append(np.full(len(b), level, dtype=np.int64))
        specs.append(LevelSpec(level, Wl, Hl, offset))
        offset += len(b)
    return AnchorGrid(
        image_size=(W, H),
        levels=tuple(specs),
        A=A,
        boxes=np.concatenate(all_boxes),
        level_index=np.concatenate(level_index),
    )


def iou(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two ``(n, 4)`` / ``(m, 4)`` coordinate arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.stack([b.coords() for b in boxes])


@dataclass(frozen=True, eq=False)
class AnchorAssignment:
    box_of: np.ndarray  # (A_all,) assigned box index or -1
    max_iou: np.ndarray  # (A_all,)
    num_boxes: int

    @property
    def assigned(self) -> np.ndarray:
        """Flat indices of all assigned anchors, ascending."""
        return np.flatnonzero(self.box_of >= 0)

    def anchors_of(self, box_index: int) -> np.ndarray:
        return np.flatnonzero(self.box_of == box_index)


def assign_anchors(grid: AnchorGrid, boxes: Sequence[Box], threshold: float = 0.5) -> AnchorAssignment:
    """Assign each anchor to its best-overlapping box when that IoU is strictly above ``threshold``.

    Ties between boxes go to the lowest box index.
    """
    n = grid.num_anchors
    if len(boxes) == 0:
        return AnchorAssignment(np.full(n, -1, dtype=np.int64), np.zeros(n), 0)
    m = iou_matrix(grid.boxes, boxes_to_array(boxes))
    best = np.argmax(m, axis=1)
    best_iou = m[np.arange(n), best]
    box_of = np.where(best_iou > threshold, best, -1).astype(np.int64)
    return AnchorAssignment(box_of, best_iou, len(boxes))


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


@dataclass(frozen=True, eq=False)
class EquivalenceClasses:
    """Partition of the assigned anchors for one verb.

    ``members[i]`` holds flat anchor indices of class ``i``; ``boxes[i]`` the box
    indices whose anchors form it; ``interacting[i]`` is true when the class joins
    two boxes linked by a triplet of this verb.
    """

    verb_id: int
    members: tuple[np.ndarray, ...]
    boxes: tuple[tuple[int, ...], ...]
    interacting: np.ndarray

    @property
    def E(self) -> int:
        return len(self.members)

    def class_of(self) -> dict[int, int]:
        return {int(a): i for i, m in enumerate(self.members) for a in m}

    def local(self, anchor_order: np.ndarray) -> "EquivalenceClasses":
        """Re-index members as positions into ``anchor_order`` (e.g. the assigned-anchor list)."""
        pos = {int(a): k for k, a in enumerate(anchor_order)}
        return EquivalenceClasses(
            self.verb_id,
            tuple(np.array([pos[int(a)] for a in m], dtype=np.int64) for m in self.members),
            self.boxes,
            self.interacting,
        )


def build_equivalence_classes(
    assignment: AnchorAssignment,
    triplets: Iterable[InteractionTriplet],
    vocabulary: VerbVocabulary,
    cross_target_merge: bool = True,
) -> list[EquivalenceClasses]:
    """One partition of the assigned anchors per verb.

    Anchors of one box are always equivalent; anchors of two boxes are equivalent
    for verb ``v`` when a ``v`` triplet links the boxes (either direction), closed
    transitively. With ``cross_target_merge=False`` a subject only merges with its
    first target (lowest box index) of each verb, so one person with two targets
    does not fuse them.
    """
    triplets = list(triplets)
    B = assignment.num_boxes
    has_anchor = np.zeros(B, dtype=bool)
    if B:
        present = assignment.box_of[assignment.box_of >= 0]
        has_anchor[np.unique(present)] = True
    assigned = assignment.assigned
    anchor_box = assignment.box_of[assigned]

    out = []
    for v in range(vocabulary.V):
        links = []
        for t in triplets:
            if t.verb_id != v or t.target_index is None:
                continue
            s, o = t.subject_index, t.target_index
            if not (has_anchor[s] and has_anchor[o]):
                log.info("verb %d: triplet (%d, %d) has a box without assigned anchors; no merge", v, s, o)
                continue
            links.append((s, o))
        if not cross_target_merge:
            first_target: dict[int, int] = {}
            for s, o in sorted(links):
                first_target.setdefault(s, o)
            links = [(s, o) for s, o in links if first_target[s] == o]

        uf = UnionFind(B)
        for s, o in links:
            uf.union(s, o)
        groups: dict[int, list[int]] = {}
        for b in range(B):
            if has_anchor[b]:
                groups.setdefault(uf.find(b), []).append(b)
        ordered = sorted(groups.values(), key=lambda g: g[0])
        members, box_sets, flags = [], [], []
        for g in ordered:
            gset = set(g)
            members.append(assigned[np.isin(anchor_box, g)])
            box_sets.append(tuple(g))
            flags.append(any(s in gset and o in gset for s, o in links))
        out.append(EquivalenceClasses(v, tuple(members), tuple(box_sets), np.array(flags, dtype=bool)))
    return out


def map_box_to_anchor(box: Box, grid: AnchorGrid) -> tuple[int, float]:
    """Index of the anchor with maximal IoU with ``box`` and that IoU.

    Anchors are enumerated lowest level first, so ``argmax`` resolves ties to the
    lowest level and then the lowest flat index.
    """
    m = iou_matrix(grid.boxes, box.coords()[None])[:, 0]
    i = int(np.argmax(m))
    return i, float(m[i])


def map_boxes_to_anchors(boxes: Sequence[Box], grid: AnchorGrid) -> tuple[np.ndarray, np.ndarray]:
    if not boxes:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    m = iou_matrix(grid.boxes, boxes_to_array(boxes))
    idx = np.argmax(m, axis=0)
    return idx.astype(np.int64), m[idx, np.arange(len(boxes))]


def assignment_records(grid: AnchorGrid, assignment: AnchorAssignment) -> list[dict]:
    """Assigned anchors as plain records, for debug dumps."""
    recs = []
    for i in assignment.assigned:
        level, x, y, a = grid.unravel(int(i))
        recs.append({"anchor": int(i), "level": level, "x": x, "y": y, "shape": a,
                     "box": int(assignment.box_of[i]), "iou": round(float(assignment.max_iou[i]), 6)})
    return recs


def unassigned_boxes(assignment: AnchorAssignment) -> list[int]:
    present = set(np.unique(assignment.box_of[assignment.box_of >= 0]).tolist())
    return [b for b in range(assignment.num_boxes) if b not in present]


def anchors_for_level(grid: AnchorGrid, level: int) -> Optional[slice]:
    for spec in grid.levels:
        if spec.level == level:
            return slice(spec.offset, spec.offset + spec.width * spec.height * grid.A)
    return None
