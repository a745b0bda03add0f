"""Shared data model: boxes, scenes, interaction triplets and dense network outputs."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixel coordinates with an object class."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    def coords(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    def is_valid(self) -> bool:
        c = (self.x_min, self.y_min, self.x_max, self.y_max)
        return all(math.isfinite(v) for v in c) and self.x_min < self.x_max and self.y_min < self.y_max

    def hflip(self, image_width: float) -> "Box":
        return Box(image_width - self.x_max, self.y_min, image_width - self.x_min, self.y_max, self.class_id)


@dataclass(frozen=True)
class InteractionTriplet:
    subject_index: int
    verb_id: int
    target_index: Optional[int] = None


@dataclass(frozen=True)
class Verb:
    name: str
    targetless: bool = False
    # target-presence channel block (0 or 1) used for this verb's targets
    role: int = 0


@dataclass(frozen=True)
class VerbVocabulary:
    verbs: tuple[Verb, ...]

    def __post_init__(self):
        if len(self.verbs) < 1:
            raise ValueError("vocabulary needs at least one verb")
        names = [v.name for v in self.verbs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate verb names in vocabulary: {names}")
        for v in self.verbs:
            if v.role not in (0, 1):
                raise ValueError(f"verb {v.name!r}: role must be 0 or 1, got {v.role}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, bool]]) -> "VerbVocabulary":
        return cls(tuple(Verb(name, bool(tl)) for name, tl in pairs))

    @property
    def V(self) -> int:
        return len(self.verbs)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.verbs]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        return {"verbs": [{"name": v.name, "targetless": v.targetless, "role": v.role} for v in self.verbs]}

    @classmethod
    def from_dict(cls, d: dict) -> "VerbVocabulary":
        return cls(tuple(Verb(v["name"], bool(v["targetless"]), int(v.get("role", 0))) for v in d["verbs"]))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Scene:
    """One image sample.

    ``image`` is stored row-major as ``(H, W, C)``; ``width``/``height`` follow the
    image array.
    """

    image: np.ndarray
    boxes: tuple[Box, ...]
    triplets: tuple[InteractionTriplet, ...]
    human_class_id: int = 0
    scene_id: str = ""

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.human_class_id == other.human_class_id
            and self.boxes == other.boxes
            and self.triplets == other.triplets
            and self.image.shape == other.image.shape
            and self.image.dtype == other.image.dtype
            and np.array_equal(self.image, other.image)
        )

    def human_indices(self) -> list[int]:
        return [i for i, b in enumerate(self.boxes) if b.class_id == self.human_class_id]

    def hflip(self) -> "Scene":
        """Mirror image and boxes; triplets are unchanged."""
        W = self.width
        return Scene(
            image=np.ascontiguousarray(self.image[:, ::-1]),
            boxes=tuple(b.hflip(W) for b in self.boxes),
            triplets=self.triplets,
            human_class_id=self.human_class_id,
            scene_id=self.scene_id,
        )


def validate_scene(scene: Scene, vocabulary: Optional[VerbVocabulary] = None) -> list[str]:
    """Return a list of human-readable invariant violations (empty when the scene is well formed)."""
    problems: list[str] = []
    img = scene.image
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        problems.append(f"image: expected a (H, W, C) array, got shape {img.shape}")
    for i, b in enumerate(scene.boxes):
        if not b.is_valid():
            problems.append(f"boxes[{i}]: invalid geometry {b.coords().tolist()}")
    n = len(scene.boxes)
    for k, t in enumerate(scene.triplets):
        where = f"triplets[{k}]"
        if not 0 <= t.subject_index < n:
            problems.append(f"{where}.subject_index: {t.subject_index} out of range [0, {n})")
        elif scene.boxes[t.subject_index].class_id != scene.human_class_id:
            problems.append(f"{where}.subject_index: box {t.subject_index} is not of human class {scene.human_class_id}")
        if t.target_index is not None:
            if not 0 <= t.target_index < n:
                problems.append(f"{where}.target_index: {t.target_index} out of range [0, {n})")
            elif t.target_index == t.subject_index:
                problems.append(f"{where}.target_index: self-interaction (subject_index == target_index)")
            elif scene.boxes[t.target_index].class_id == scene.human_class_id:
                problems.append(f"{where}.target_index: humans cannot be interaction targets")
        if vocabulary is not None:
            if not 0 <= t.verb_id < vocabulary.V:
                problems.append(f"{where}.verb_id: {t.verb_id} out of range [0, {vocabulary.V})")
            elif vocabulary.verbs[t.verb_id].targetless and t.target_index is not None:
                problems.append(f"{where}.target_index: verb {vocabulary.verbs[t.verb_id].name!r} is targetless")
        elif t.verb_id < 0:
            problems.append(f"{where}.verb_id: negative verb id {t.verb_id}")
    return problems


@dataclass
class LevelOutputs:
    """Dense maps of one pyramid level, laid out ``[W_l, H_l, A, ...]``.

    ``verb_scores`` holds ``2V`` channels (active then passive), or ``V`` when the
    passive head is disabled; ``target_scores`` is ``None`` when the target head is
    disabled.
    """

    level: int
    verb_scores: np.ndarray
    target_scores: Optional[np.ndarray]
    embeddings: np.ndarray


@dataclass
class DenseOutputs:
    levels: list[LevelOutputs] = field(default_factory=list)

    def _flat(self, name: str) -> Optional[np.ndarray]:
        parts = [getattr(lv, name) for lv in self.levels]
        if any(p is None for p in parts):
            return None
        tail = parts[0].shape[3:]
        return np.concatenate([p.reshape((-1,) + tail) for p in parts], axis=0)

    def flat_verb_scores(self) -> np.ndarray:
        return self._flat("verb_scores")

    def flat_target_scores(self) -> Optional[np.ndarray]:
        return self._flat("target_scores")

    def flat_embeddings(self) -> np.ndarray:
        return self._flat("embeddings")


def expected_level_shape(width: int, height: int, level: int) -> tuple[int, int]:
    return width // 2**level, height // 2**level


@dataclass(frozen=True)
class ScoredTriplet:
    subject: Box
    verb_id: int
    target: Optional[Box]
    score: float

    @property
    def kind(self) -> str:
        return "pair" if self.target is None else "triplet"

    def to_dict(self) -> dict:
        def box(b: Optional[Box]):
            return None if b is None else [b.x_min, b.y_min, b.x_max, b.y_max, b.class_id]

        return {"subject": box(self.subject), "verb_id": self.verb_id, "target": box(self.target),
                "score": self.score, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoredTriplet":
        def box(v: Optional[Sequence]):
            return None if v is None else Box(float(v[0]), float(v[1]), float(v[2]), float(v[3]), int(v[4]))

        return cls(box(d["subject"]), int(d["verb_id"]), box(d["target"]), float(d["score"]))
