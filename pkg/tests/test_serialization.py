import json

import pytest

from calipso.serialization import DatasetError, read_dataset, write_dataset
from calipso.synthetic import DEFAULT_VOCABULARY, SceneGenConfig, generate_dataset
from calipso.types import VerbVocabulary


@pytest.fixture(scope="module")
def scenes():
    return generate_dataset(SceneGenConfig(), 10, seed=21)


def test_roundtrip(tmp_path, scenes):
    path = write_dataset(tmp_path / "d.jsonl", scenes, DEFAULT_VOCABULARY)
    back, vocab = read_dataset(path)
    assert back == scenes
    assert vocab == DEFAULT_VOCABULARY


def test_corrupt_line_is_named(tmp_path, scenes):
    path = write_dataset(tmp_path / "d.jsonl", scenes, DEFAULT_VOCABULARY)
    lines = path.read_text().splitlines()
    lines[3] = lines[3][: len(lines[3]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"d\.jsonl:4:"):
        read_dataset(path)


def test_hash_mismatch_is_named(tmp_path, scenes):
    path = write_dataset(tmp_path / "d.jsonl", scenes, DEFAULT_VOCABULARY)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[6])
    rec["vocab_hash"] = "0" * 16
    lines[6] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"d\.jsonl:7: vocabulary hash"):
        read_dataset(path)


def test_mixed_vocabulary_append_rejected(tmp_path, scenes):
    path = write_dataset(tmp_path / "d.jsonl", scenes[:5], DEFAULT_VOCABULARY)
    write_dataset(path, scenes[5:], DEFAULT_VOCABULARY, append=True)
    assert len(read_dataset(path)[0]) == 10
    other = VerbVocabulary.from_pairs([("hold", False), ("kick", False)])
    with pytest.raises(DatasetError, match="cannot append"):
        write_dataset(path, scenes[:1], other, append=True)


def test_writing_is_byte_identical(tmp_path, scenes):
    a = write_dataset(tmp_path / "a.jsonl", scenes, DEFAULT_VOCABULARY).read_bytes()
    b = write_dataset(tmp_path / "b.jsonl", generate_dataset(SceneGenConfig(), 10, seed=21), DEFAULT_VOCABULARY)
    assert a == b.read_bytes()
