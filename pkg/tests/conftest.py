import numpy as np
import pytest

from calipso.anchors import EquivalenceClasses
from calipso.types import Scene, Verb, VerbVocabulary


@pytest.fixture
def vocab():
    return VerbVocabulary((Verb("hold"), Verb("look"), Verb("stand", targetless=True)))


def make_scene(boxes, triplets, size=(64, 64)):
    W, H = size
    return Scene(np.zeros((H, W, 3), np.uint8), tuple(boxes), tuple(triplets), 0, "t")


def random_classes(rng, max_classes=5, max_size=4, T=None, verb_id=0):
    """Random partition of a small anchor set into equivalence classes."""
    E = int(rng.integers(1, max_classes + 1))
    sizes = rng.integers(1, max_size + 1, size=E)
    perm = rng.permutation(int(sizes.sum()))
    members, start = [], 0
    for s in sizes:
        members.append(np.sort(perm[start:start + s]))
        start += s
    flags = rng.random(E) < 0.5
    cls = EquivalenceClasses(verb_id, tuple(members), tuple((i,) for i in range(E)), flags)
    return cls, int(sizes.sum())
