"""Synthetic geometric scenes with exactly known interactions.

People are drawn as a glyph whose pose (standing, walking with the rear arm
swung back, sitting), facing side and arm position are visible; objects are
coloured shapes. Every triplet of a
scene is the output of a geometric predicate evaluated on the final layout, so
the labels are exact by construction:

* ``hold``: a cup or ball touches the person's facing side at hand height.
* ``sit-on``: a sitting person rests directly on top of a chair.
* ``look-at``: the first object crossed by a horizontal ray leaving the head on the facing side.
* ``throw-to``: a person with a raised arm, and the nearest ball at least 24 px away on the facing side.
* ``stand`` / ``walk``: pose only, no target.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .anchors import DEFAULT_BASE_FACTOR, DEFAULT_RATIOS, DEFAULT_SCALES, assign_anchors, build_anchor_grid
from .types import Box, InteractionTriplet, Scene, Verb, VerbVocabulary

HUMAN, CUP, BALL, CHAIR, PLANT = range(5)
CLASS_NAMES = ("human", "cup", "ball", "chair", "plant")
OBJECT_CLASSES = (CUP, BALL, CHAIR, PLANT)
HOLDABLE = (CUP, BALL)
STAND, WALK, SIT = "stand", "walk", "sit"

# unscaled (width, height)
BASE_SIZE = {HUMAN: (18, 36), CUP: (14, 18), BALL: (18, 18), CHAIR: (30, 15), PLANT: (15, 28)}

DEFAULT_VOCABULARY = VerbVocabulary((
    Verb("hold"),
    Verb("sit-on"),
    Verb("look-at"),
    Verb("throw-to", role=1),
    Verb("stand", targetless=True),
    Verb("walk", targetless=True),
))
HOLD, SIT_ON, LOOK_AT, THROW_TO, STAND_V, WALK_V = range(6)

THROW_MIN_GAP = 24.0


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneGenConfig:
    image_size: tuple[int, int] = (128, 128)  # (W, H)
    humans: tuple[int, int] = (1, 3)
    pose_probs: tuple[float, float, float] = (0.35, 0.30, 0.35)  # stand, walk, sit
    hold_rate: float = 0.45
    chair_given_sit: float = 0.75
    arm_rate: float = 0.35
    throw_given_arm: float = 0.75
    look_rate: float = 0.25
    shared_hold_rate: float = 0.3
    distractor_rate: float = 0.35
    max_distractors: int = 3
    object_scale: tuple[float, float] = (1.0, 1.4)
    noise: float = 6.0
    anchor_levels: tuple[int, int] = (3, 5)
    anchor_base_factor: float = DEFAULT_BASE_FACTOR
    group_attempts: int = 100
    layout_attempts: int = 40
    scene_attempts: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.distractor_rate < 1.0:
            raise ValueError(f"distractor_rate must lie in [0, 1), got {self.distractor_rate}")
        if abs(sum(self.pose_probs) - 1.0) > 1e-9:
            raise ValueError(f"pose_probs must sum to 1, got {self.pose_probs}")
        if self.humans[0] < 0 or self.humans[0] > self.humans[1]:
            raise ValueError(f"bad humans range {self.humans}")

    @property
    def vocabulary(self) -> VerbVocabulary:
        return DEFAULT_VOCABULARY


def expected_verb_frequencies(config: SceneGenConfig) -> dict[str, float]:
    """Probability that a generated person performs each verb."""
    p_stand, p_walk, p_sit = config.pose_probs
    return {
        "hold": config.hold_rate,
        "sit-on": p_sit * config.chair_given_sit,
        "look-at": config.look_rate,
        "throw-to": config.arm_rate * config.throw_given_arm,
        "stand": p_stand,
        "walk": p_walk,
    }


@dataclass
class Thing:
    box: Box
    facing: int = 0  # +1 right, -1 left; people only
    pose: Optional[str] = None
    arm_raised: bool = False

    @property
    def is_human(self) -> bool:
        return self.box.class_id == HUMAN


@dataclass
class Layout:
    image_size: tuple[int, int]
    things: list[Thing] = field(default_factory=list)

    @property
    def boxes(self) -> list[Box]:
        return [t.box for t in self.things]


# -- predicates ---------------------------------------------------------------

def front_gap(person: Thing, obj: Box) -> float:
    """Horizontal gap from the person's facing edge to the object (negative when behind/overlapping)."""
    h = person.box
    return obj.x_min - h.x_max if person.facing > 0 else h.x_min - obj.x_max


def head_y(box: Box) -> float:
    return box.y_min + 0.2 * box.height


def holds(p: Thing, o: Box) -> bool:
    if o.class_id not in HOLDABLE:
        return False
    h = p.box
    cy = 0.5 * (o.y_min + o.y_max)
    return 0.0 <= front_gap(p, o) <= 3.0 and h.y_min + 0.3 * h.height <= cy <= h.y_min + 0.75 * h.height


def sits_on(p: Thing, o: Box) -> bool:
    if p.pose != SIT or o.class_id != CHAIR:
        return False
    h = p.box
    overlap = min(h.x_max, o.x_max) - max(h.x_min, o.x_min)
    return overlap >= 0.5 * h.width and 0.0 <= o.y_min - h.y_max <= 3.0


def _in_sight(p: Thing, o: Box) -> bool:
    y = head_y(p.box)
    return o.y_min <= y <= o.y_max and front_gap(p, o) >= 0.0


def _throwable(p: Thing, o: Box) -> bool:
    h = p.box
    cy = 0.5 * (o.y_min + o.y_max)
    return (p.arm_raised and o.class_id == BALL and front_gap(p, o) >= THROW_MIN_GAP
            and abs(cy - 0.5 * (h.y_min + h.y_max)) <= 0.75 * h.height)


def _nearest(p: Thing, boxes: Sequence[Box], candidates: Sequence[int]) -> Optional[int]:
    if not candidates:
        return None
    return min(candidates, key=lambda j: (front_gap(p, boxes[j]), j))


def evaluate_triplets(layout: Layout) -> list[InteractionTriplet]:
    """Ground-truth triplets of a layout, ordered by (subject, verb, target)."""
    things = layout.things
    boxes = layout.boxes
    objects = [j for j, t in enumerate(things) if not t.is_human]
    out = []
    for i, p in enumerate(things):
        if not p.is_human:
            continue
        for j in objects:
            if holds(p, boxes[j]):
                out.append(InteractionTriplet(i, HOLD, j))
        for j in objects:
            if sits_on(p, boxes[j]):
                out.append(InteractionTriplet(i, SIT_ON, j))
        j = _nearest(p, boxes, [j for j in objects if _in_sight(p, boxes[j])])
        if j is not None:
            out.append(InteractionTriplet(i, LOOK_AT, j))
        j = _nearest(p, boxes, [j for j in objects if _throwable(p, boxes[j])])
        if j is not None:
            out.append(InteractionTriplet(i, THROW_TO, j))
        if p.pose == STAND:
            out.append(InteractionTriplet(i, STAND_V, None))
        if p.pose == WALK:
            out.append(InteractionTriplet(i, WALK_V, None))
    return sorted(out, key=lambda t: (t.subject_index, t.verb_id, -1 if t.target_index is None else t.target_index))


# -- placement ----------------------------------------------------------------

@dataclass
class _Intent:
    pose: str
    facing: int
    arm_raised: bool
    hold: bool
    chair: bool
    throw: bool
    look: bool
    share_with: Optional[int] = None


@functools.lru_cache(maxsize=8)
def _grid(image_size, levels, base_factor):
    return build_anchor_grid(image_size, levels, DEFAULT_SCALES, DEFAULT_RATIOS, base_factor)


def _sized(rng, cls: int, cx: float, cy: float, scale: float) -> Box:
    w, h = BASE_SIZE[cls]
    w, h = w * scale, h * scale
    return Box(round(cx - w / 2), round(cy - h / 2), round(cx - w / 2) + round(w), round(cy - h / 2) + round(h), cls)


def _box_from_edge(cls: int, scale: float, x_edge: float, facing: int, cy: float) -> Box:
    """Box whose near edge sits at ``x_edge`` and extends in the facing direction."""
    w, h = BASE_SIZE[cls]
    w, h = round(w * scale), round(h * scale)
    y0 = round(cy - h / 2)
    if facing > 0:
        x0 = round(x_edge)
        return Box(x0, y0, x0 + w, y0 + h, cls)
    x1 = round(x_edge)
    return Box(x1 - w, y0, x1, y0 + h, cls)


def _draw_intents(config: SceneGenConfig, rng: np.random.Generator, n: int) -> list[_Intent]:
    intents = []
    for _ in range(n):
        pose = (STAND, WALK, SIT)[rng.choice(3, p=config.pose_probs)]
        facing = 1 if rng.random() < 0.5 else -1
        arm = bool(rng.random() < config.arm_rate)
        intents.append(_Intent(
            pose=pose,
            facing=facing,
            arm_raised=arm,
            hold=bool(rng.random() < config.hold_rate),
            chair=pose == SIT and bool(rng.random() < config.chair_given_sit),
            throw=arm and bool(rng.random() < config.throw_given_arm),
            look=bool(rng.random() < config.look_rate),
        ))
    holders = [i for i, it in enumerate(intents) if it.hold]
    if len(holders) >= 2 and rng.random() < config.shared_hold_rate:
        a, b = holders[0], holders[1]
        intents[b].share_with = a
    return intents


class _Placer:
    def __init__(self, config: SceneGenConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.grid = _grid(config.image_size, config.anchor_levels, config.anchor_base_factor)
        self.W, self.H = config.image_size

    def scale(self) -> float:
        lo, hi = self.config.object_scale
        return float(self.rng.uniform(lo, hi))

    def fits(self, new: Sequence[Box], existing: Sequence[Box]) -> bool:
        for b in new:
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.W or b.y_max > self.H:
                return False
        allb = list(existing) + list(new)
        for k, b in enumerate(new):
            for j, c in enumerate(allb):
                if c is b:
                    continue
                # strict overlap only; touching edges are allowed
                if min(b.x_max, c.x_max) > max(b.x_min, c.x_min) and min(b.y_max, c.y_max) > max(b.y_min, c.y_min):
                    return False
        if new:
            a = assign_anchors(self.grid, list(new))
            if len(set(a.box_of[a.box_of >= 0].tolist())) != len(new):
                return False
        return True

    def person(self, intent: _Intent) -> Thing:
        s = self.scale()
        w, h = BASE_SIZE[HUMAN]
        cx = self.rng.uniform(w * s / 2, self.W - w * s / 2)
        cy = self.rng.uniform(h * s / 2, self.H - h * s / 2)
        return Thing(_sized(self.rng, HUMAN, cx, cy, s), intent.facing, intent.pose, intent.arm_raised)

    def held(self, p: Thing, cls: int) -> Box:
        h = p.box
        edge = h.x_max if p.facing > 0 else h.x_min
        gap = self.rng.integers(0, 4)
        cy = h.y_min + self.rng.uniform(0.4, 0.65) * h.height
        return _box_from_edge(cls, self.scale(), edge + p.facing * gap, p.facing, cy)

    def chair_under(self, p: Thing) -> Box:
        h = p.box
        s = self.scale()
        w, ch = round(BASE_SIZE[CHAIR][0] * s), round(BASE_SIZE[CHAIR][1] * s)
        cx = 0.5 * (h.x_min + h.x_max) + self.rng.uniform(-0.15, 0.15) * w
        y0 = h.y_max + self.rng.integers(0, 4)
        x0 = round(cx - w / 2)
        return Box(x0, y0, x0 + w, y0 + ch, CHAIR)

    def ahead(self, p: Thing, cls: int, gap_range: tuple[float, float], cy: float) -> Box:
        h = p.box
        edge = h.x_max if p.facing > 0 else h.x_min
        gap = self.rng.uniform(*gap_range)
        return _box_from_edge(cls, self.scale(), edge + p.facing * gap, p.facing, cy)

    def group(self, intent: _Intent, partner: Optional[tuple[Thing, Box]] = None) -> list[Thing]:
        """A person plus the objects realising its intents."""
        if partner is not None:
            # stand on the far side of the partner's held object, facing it
            other, obj = partner
            facing = -other.facing
            s = self.scale()
            w, hh = BASE_SIZE[HUMAN]
            w, hh = round(w * s), round(hh * s)
            gap = self.rng.integers(0, 4)
            cy_obj = 0.5 * (obj.y_min + obj.y_max)
            y0 = round(cy_obj - self.rng.uniform(0.4, 0.65) * hh)
            if facing < 0:
                x0 = round(obj.x_max + gap)
            else:
                x0 = round(obj.x_min - gap - w)
            p = Thing(Box(x0, y0, x0 + w, y0 + hh, HUMAN), facing, intent.pose, intent.arm_raised)
            out = [p]
        else:
            p = self.person(intent)
            out = [p]
            if intent.hold:
                out.append(Thing(self.held(p, HOLDABLE[self.rng.integers(0, 2)])))
        if intent.chair:
            out.append(Thing(self.chair_under(p)))
        h = p.box
        if intent.throw:
            cy = 0.5 * (h.y_min + h.y_max) + self.rng.uniform(-0.5, 0.5) * h.height
            out.append(Thing(self.ahead(p, BALL, (THROW_MIN_GAP + 4, 72.0), cy)))
        if intent.look:
            cls = OBJECT_CLASSES[self.rng.integers(0, len(OBJECT_CLASSES))]
            oh = BASE_SIZE[cls][1]
            cy = head_y(h) + self.rng.uniform(-0.3, 0.3) * oh
            out.append(Thing(self.ahead(p, cls, (4.0, 36.0), cy)))
        return out


def _expected_triplets(things: list[Thing], intents_by_person: dict[int, _Intent],
                       held_by: dict[int, int], extras: dict[int, dict[str, int]]) -> list[InteractionTriplet]:
    out = []
    for i, it in intents_by_person.items():
        if i in held_by:
            out.append(InteractionTriplet(i, HOLD, held_by[i]))
        ex = extras.get(i, {})
        if "chair" in ex:
            out.append(InteractionTriplet(i, SIT_ON, ex["chair"]))
        if "look" in ex:
            out.append(InteractionTriplet(i, LOOK_AT, ex["look"]))
        if "throw" in ex:
            out.append(InteractionTriplet(i, THROW_TO, ex["throw"]))
        if it.pose == STAND:
            out.append(InteractionTriplet(i, STAND_V, None))
        if it.pose == WALK:
            out.append(InteractionTriplet(i, WALK_V, None))
    return sorted(out, key=lambda t: (t.subject_index, t.verb_id, -1 if t.target_index is None else t.target_index))


def generate_layout(config: SceneGenConfig, rng: np.random.Generator) -> Layout:
    """Place people, their interaction partners and distractors; raise ``PlacementError`` when the canvas is too crowded."""
    for _ in range(config.scene_attempts):
        n = int(rng.integers(config.humans[0], config.humans[1] + 1))
        intents = _draw_intents(config, rng, n)
        # re-place with the same intents first so crowded draws are not under-sampled
        for _ in range(config.layout_attempts):
            layout = _try_layout(config, rng, intents)
            if layout is not None:
                return layout
    raise PlacementError(f"could not place a scene after {config.scene_attempts} attempts; canvas too crowded")


def _try_layout(config, rng, intents) -> Optional[Layout]:
    placer = _Placer(config, rng)
    things: list[Thing] = []
    person_index: dict[int, int] = {}
    intents_by_person: dict[int, _Intent] = {}
    held_by: dict[int, int] = {}
    extras: dict[int, dict[str, int]] = {}
    for k, it in enumerate(intents):
        ok = False
        for _ in range(config.group_attempts):
            partner = None
            if it.share_with is not None:
                a = person_index[it.share_with]
                if a not in held_by:
                    return None
                partner = (things[a], things[held_by[a]].box)
            grp = placer.group(it, partner)
            if not placer.fits([g.box for g in grp], [t.box for t in things]):
                continue
            base = len(things)
            cand = things + grp
            hb, ex = dict(held_by), {kk: dict(vv) for kk, vv in extras.items()}
            ex[base] = {}
            pos = base + 1
            if partner is not None:
                hb[base] = held_by[person_index[it.share_with]]
            elif it.hold:
                hb[base] = pos
                pos += 1
            for key, flag in (("chair", it.chair), ("throw", it.throw), ("look", it.look)):
                if flag:
                    ex[base][key] = pos
                    pos += 1
            ibp = dict(intents_by_person)
            ibp[base] = it
            want = _expected_triplets(cand, ibp, hb, ex)
            if evaluate_triplets(Layout(config.image_size, cand)) != want:
                continue
            things, held_by, extras, intents_by_person = cand, hb, ex, ibp
            person_index[k] = base
            ok = True
            break
        if not ok:
            return None
    n_extra = 0
    while n_extra < config.max_distractors and rng.random() < config.distractor_rate:
        n_extra += 1
    want = evaluate_triplets(Layout(config.image_size, things))
    for _ in range(n_extra):
        for _ in range(config.group_attempts):
            cls = (CUP, BALL, CHAIR)[rng.integers(0, 3)]
            s = placer.scale()
            w, h = BASE_SIZE[cls]
            cx = rng.uniform(w * s / 2, config.image_size[0] - w * s / 2)
            cy = rng.uniform(h * s / 2, config.image_size[1] - h * s / 2)
            b = _sized(rng, cls, cx, cy, s)
            if not placer.fits([b], [t.box for t in things]):
                continue
            cand = things + [Thing(b)]
            if evaluate_triplets(Layout(config.image_size, cand)) != want:
                continue
            things = cand
            break
    return Layout(config.image_size, things)


# -- rendering ----------------------------------------------------------------

COLORS = {
    "skin": (232, 190, 150), "head": (245, 215, 175), "eye": (20, 20, 60), "legs": (70, 90, 200),
    "arm": (250, 250, 250),
    CUP: (210, 40, 40), BALL: (40, 210, 60), CHAIR: (150, 90, 40), PLANT: (220, 220, 40),
}


def _fill(img, x0, y0, x1, y1, color):
    H, W = img.shape[:2]
    x0, x1 = max(int(round(x0)), 0), min(int(round(x1)), W)
    y0, y1 = max(int(round(y0)), 0), min(int(round(y1)), H)
    if x1 > x0 and y1 > y0:
        img[y0:y1, x0:x1] = color


def _draw_person(img, t: Thing):
    b = t.box
    w, h = b.width, b.height
    f = t.facing
    # torso and head
    _fill(img, b.x_min + 0.2 * w, b.y_min + 0.25 * h, b.x_max - 0.2 * w, b.y_min + 0.72 * h, COLORS["skin"])
    _fill(img, b.x_min + 0.25 * w, b.y_min, b.x_max - 0.25 * w, b.y_min + 0.25 * h, COLORS["head"])
    ex = b.x_max - 0.25 * w - 3 if f > 0 else b.x_min + 0.25 * w
    _fill(img, ex, b.y_min + 0.12 * h - 1, ex + 3, b.y_min + 0.12 * h + 2, COLORS["eye"])
    # arm on the facing side
    ax0, ax1 = (b.x_max - 0.2 * w, b.x_max) if f > 0 else (b.x_min, b.x_min + 0.2 * w)
    if t.arm_raised:
        _fill(img, ax0, b.y_min, ax1, b.y_min + 0.4 * h, COLORS["arm"])
    else:
        _fill(img, ax0, b.y_min + 0.35 * h, ax1, b.y_min + 0.55 * h, COLORS["arm"])
    if t.pose == WALK:
        # rear arm swings back
        bx0, bx1 = (b.x_min, b.x_min + 0.2 * w) if f > 0 else (b.x_max - 0.2 * w, b.x_max)
        _fill(img, bx0, b.y_min + 0.45 * h, bx1, b.y_min + 0.68 * h, COLORS["arm"])
    # legs
    ly0 = b.y_min + 0.72 * h
    if t.pose == STAND:
        _fill(img, b.x_min + 0.25 * w, ly0, b.x_min + 0.42 * w, b.y_max, COLORS["legs"])
        _fill(img, b.x_max - 0.42 * w, ly0, b.x_max - 0.25 * w, b.y_max, COLORS["legs"])
    elif t.pose == WALK:
        n = max(int(round(b.y_max - ly0)), 1)
        for k in range(n):
            spread = 0.3 * w * (k + 1) / n
            y = ly0 + k
            _fill(img, b.x_min + 0.5 * w - spread - 2, y, b.x_min + 0.5 * w - spread + 1, y + 1, COLORS["legs"])
            _fill(img, b.x_min + 0.5 * w + spread - 1, y, b.x_min + 0.5 * w + spread + 2, y + 1, COLORS["legs"])
    else:
        # seated: thighs forward, shins down at the front
        mid = ly0 + 0.35 * (b.y_max - ly0)
        if f > 0:
            _fill(img, b.x_min + 0.3 * w, ly0, b.x_max, mid, COLORS["legs"])
            _fill(img, b.x_max - 0.2 * w, mid, b.x_max, b.y_max, COLORS["legs"])
        else:
            _fill(img, b.x_min, ly0, b.x_max - 0.3 * w, mid, COLORS["legs"])
            _fill(img, b.x_min, mid, b.x_min + 0.2 * w, b.y_max, COLORS["legs"])


def _draw_object(img, b: Box):
    c = COLORS[b.class_id]
    w, h = b.width, b.height
    if b.class_id == CUP:
        _fill(img, b.x_min, b.y_min, b.x_max - 0.25 * w, b.y_max, c)
        _fill(img, b.x_max - 0.25 * w, b.y_min + 0.3 * h, b.x_max, b.y_min + 0.6 * h, c)
    elif b.class_id == BALL:
        H, W = img.shape[:2]
        cx, cy = b.center
        r = 0.5 * min(w, h)
        yy, xx = np.mgrid[0:H, 0:W]
        mask = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
        img[mask] = c
    elif b.class_id == CHAIR:
        _fill(img, b.x_min, b.y_min, b.x_max, b.y_min + 0.4 * h, c)
        _fill(img, b.x_min, b.y_min, b.x_min + 0.15 * w, b.y_max, c)
        _fill(img, b.x_max - 0.15 * w, b.y_min, b.x_max, b.y_max, c)
    else:
        H, W = img.shape[:2]
        pot = b.y_min + 0.7 * h
        _fill(img, b.x_min + 0.2 * w, pot, b.x_max - 0.2 * w, b.y_max, (120, 70, 30))
        yy, xx = np.mgrid[0:H, 0:W]
        cx = 0.5 * (b.x_min + b.x_max)
        frac = (yy + 0.5 - b.y_min) / max(pot - b.y_min, 1)
        mask = (yy + 0.5 >= b.y_min) & (yy + 0.5 < pot) & (np.abs(xx + 0.5 - cx) <= 0.5 * w * frac)
        img[mask] = c


def render(layout: Layout, rng: np.random.Generator, noise: float = 6.0) -> np.ndarray:
    W, H = layout.image_size
    img = np.full((H, W, 3), 30.0)
    if noise > 0:
        img += rng.normal(0.0, noise, size=img.shape)
    for t in layout.things:
        if t.is_human:
            _draw_person(img, t)
        else:
            _draw_object(img, t.box)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def generate_scene(config: SceneGenConfig, rng: np.random.Generator, scene_id: str = "") -> Scene:
    layout = generate_layout(config, rng)
    return layout_to_scene(layout, rng, config.noise, scene_id)


def layout_to_scene(layout: Layout, rng: np.random.Generator, noise: float = 6.0, scene_id: str = "") -> Scene:
    return Scene(
        image=render(layout, rng, noise),
        boxes=tuple(layout.boxes),
        triplets=tuple(evaluate_triplets(layout)),
        human_class_id=HUMAN,
        scene_id=scene_id,
    )


def scene_rngs(seed: int, n: int, start: int = 0) -> list[np.random.Generator]:
    """Independent per-scene generators so scene ``k`` does not depend on how many precede it."""
    return [np.random.default_rng([seed, k]) for k in range(start, start + n)]


def generate_layouts(config: SceneGenConfig, n: int, seed: Optional[int] = None, start: int = 0) -> list[Layout]:
    seed = config.seed if seed is None else seed
    return [generate_layout(config, r) for r in scene_rngs(seed, n, start)]


def generate_dataset(config: SceneGenConfig, n: int, seed: Optional[int] = None, start: int = 0,
                     prefix: str = "scene") -> list[Scene]:
    seed = config.seed if seed is None else seed
    return [generate_scene(config, r, f"{prefix}-{seed}-{start + k:06d}")
            for k, r in enumerate(scene_rngs(seed, n, start))]


def crowd_layout(config: SceneGenConfig, rng: np.random.Generator, n_humans: int, n_objects: int) -> Layout:
    """Interaction-free layout with a prescribed number of people and objects (for cost sweeps)."""
    placer = _Placer(replace(config, object_scale=(1.0, 1.0)), rng)
    W, H = config.image_size
    for _ in range(config.scene_attempts):
        things: list[Thing] = []
        ok = True
        for k in range(n_humans + n_objects):
            cls = HUMAN if k < n_humans else OBJECT_CLASSES[k % len(OBJECT_CLASSES)]
            for _ in range(config.group_attempts):
                w, h = BASE_SIZE[cls]
                b = _sized(rng, cls, rng.uniform(w / 2, W - w / 2), rng.uniform(h / 2, H - h / 2), 1.0)
                if placer.fits([b], [t.box for t in things]):
                    if cls == HUMAN:
                        things.append(Thing(b, 1 if rng.random() < 0.5 else -1, STAND))
                    else:
                        things.append(Thing(b))
                    break
            else:
                ok = False
                break
        if ok:
            return Layout(config.image_size, things)
    raise PlacementError(f"cannot fit {n_humans} people and {n_objects} objects on a {W}x{H} canvas")
