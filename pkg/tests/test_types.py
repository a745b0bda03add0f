import numpy as np

from calipso.types import Box, InteractionTriplet, Scene, ScoredTriplet, VerbVocabulary, validate_scene
from conftest import make_scene

H0 = Box(0, 0, 10, 20, 0)
CUP = Box(12, 5, 20, 13, 1)


def test_well_formed_scene_has_no_violations(vocab):
    s = make_scene([H0, CUP], [InteractionTriplet(0, 0, 1)])
    assert validate_scene(s, vocab) == []


def test_self_interaction_is_reported(vocab):
    s = make_scene([H0, CUP], [InteractionTriplet(0, 0, 0)])
    problems = validate_scene(s, vocab)
    assert len(problems) == 1
    assert "self-interaction" in problems[0]


def test_targetless_verb_with_target_is_reported(vocab):
    s = make_scene([H0, CUP], [InteractionTriplet(0, 2, 1)])
    problems = validate_scene(s, vocab)
    assert len(problems) == 1 and "targetless" in problems[0]


def test_other_violations_are_named(vocab):
    s = make_scene([H0, CUP, Box(5, 5, 5, 9, 1)],
                   [InteractionTriplet(1, 0, 0), InteractionTriplet(0, 7, 1), InteractionTriplet(0, 0, 9)])
    text = "\n".join(validate_scene(s, vocab))
    assert "boxes[2]" in text
    assert "triplets[0].subject_index" in text
    assert "triplets[1].verb_id" in text
    assert "triplets[2].target_index" in text


def test_vocabulary_rejects_duplicates_and_hash_is_stable():
    import pytest

    with pytest.raises(ValueError):
        VerbVocabulary.from_pairs([("a", False), ("a", True)])
    v1 = VerbVocabulary.from_pairs([("a", False), ("b", True)])
    v2 = VerbVocabulary.from_dict(v1.to_dict())
    assert v1.hash() == v2.hash()
    assert VerbVocabulary.from_pairs([("b", True), ("a", False)]).hash() != v1.hash()


def test_hflip_is_an_involution():
    img = np.arange(2 * 4 * 3, dtype=np.uint8).reshape(2, 4, 3)
    s = Scene(img, (Box(0, 0, 1, 2, 0),), (), 0)
    assert s.hflip().boxes[0] == Box(3, 0, 4, 2, 0)
    assert s.hflip().hflip() == s


def test_scored_triplet_kind_and_roundtrip():
    p = ScoredTriplet(H0, 1, None, 0.25)
    assert p.kind == "pair"
    q = ScoredTriplet(H0, 0, CUP, 0.5)
    assert q.kind == "triplet"
    assert ScoredTriplet.from_dict(q.to_dict()) == q
