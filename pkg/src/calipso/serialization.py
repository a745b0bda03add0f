"""Line-delimited JSON scene datasets with a vocabulary sidecar.

One scene per line::

    {"scene_id": ..., "vocab_hash": ..., "human_class_id": 0,
     "image": {"shape": [H, W, C], "dtype": "uint8", "zlib_b64": ...}  # or {"ref": "relative/path.npy"}
     "boxes": [[x_min, y_min, x_max, y_max, class_id], ...],
     "triplets": [[subject_index, verb_id, target_index_or_null], ...]}

The sidecar ``<dataset>.vocab.json`` lists the verbs; its hash is embedded in
every record and checked on read.
"""

from __future__ import annotations

import base64
import json
import zlib
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .types import Box, InteractionTriplet, Scene, VerbVocabulary

PathLike = Union[str, Path]


class DatasetError(ValueError):
    pass


def vocabulary_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".vocab.json") if path.suffix != ".jsonl" else path.with_suffix(".vocab.json")


def write_vocabulary(path: PathLike, vocabulary: VerbVocabulary) -> None:
    d = vocabulary.to_dict()
    d["hash"] = vocabulary.hash()
    Path(path).write_text(json.dumps(d, indent=2) + "\n")


def read_vocabulary(path: PathLike) -> VerbVocabulary:
    d = json.loads(Path(path).read_text())
    vocab = VerbVocabulary.from_dict(d)
    if "hash" in d and d["hash"] != vocab.hash():
        raise DatasetError(f"{path}: vocabulary hash {d['hash']} does not match its contents ({vocab.hash()})")
    return vocab


def encode_image(image: np.ndarray) -> dict:
    arr = np.ascontiguousarray(image)
    return {"shape": list(arr.shape), "dtype": str(arr.dtype),
            "zlib_b64": base64.b64encode(zlib.compress(arr.tobytes(), 6)).decode("ascii")}


def decode_image(d: dict, root: Path) -> np.ndarray:
    if "ref" in d:
        return np.load(root / d["ref"])
    raw = zlib.decompress(base64.b64decode(d["zlib_b64"]))
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def _num(x: float):
    return int(x) if float(x).is_integer() else float(x)


def scene_to_record(scene: Scene, vocab_hash: str) -> dict:
    return {
        "scene_id": scene.scene_id,
        "vocab_hash": vocab_hash,
        "human_class_id": scene.human_class_id,
        "image": encode_image(scene.image),
        "boxes": [[_num(b.x_min), _num(b.y_min), _num(b.x_max), _num(b.y_max), b.class_id] for b in scene.boxes],
        "triplets": [[t.subject_index, t.verb_id, t.target_index] for t in scene.triplets],
    }


def record_to_scene(rec: dict, root: Path) -> Scene:
    return Scene(
        image=decode_image(rec["image"], root),
        boxes=tuple(Box(float(b[0]), float(b[1]), float(b[2]), float(b[3]), int(b[4])) for b in rec["boxes"]),
        triplets=tuple(InteractionTriplet(int(t[0]), int(t[1]), None if t[2] is None else int(t[2]))
                       for t in rec["triplets"]),
        human_class_id=int(rec["human_class_id"]),
        scene_id=str(rec["scene_id"]),
    )


def write_dataset(path: PathLike, scenes: Iterable[Scene], vocabulary: VerbVocabulary, append: bool = False) -> Path:
    """Write scenes as JSON lines plus the vocabulary sidecar.

    Appending to a dataset written with another vocabulary raises ``DatasetError``.
    """
    path = Path(path)
    vpath = vocabulary_path(path)
    h = vocabulary.hash()
    if append and path.exists():
        if vpath.exists() and read_vocabulary(vpath).hash() != h:
            raise DatasetError(f"{path}: cannot append scenes with vocabulary {h}; "
                               f"dataset uses {read_vocabulary(vpath).hash()}")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_vocabulary(vpath, vocabulary)
    with path.open("a" if append else "w") as f:
        for s in scenes:
            f.write(json.dumps(scene_to_record(s, h), separators=(",", ":")) + "\n")
    return path


def read_dataset(path: PathLike, vocabulary: VerbVocabulary | None = None) -> tuple[list[Scene], VerbVocabulary]:
    path = Path(path)
    if vocabulary is None:
        vpath = vocabulary_path(path)
        if not vpath.exists():
            raise DatasetError(f"{path}: missing vocabulary sidecar {vpath}")
        vocabulary = read_vocabulary(vpath)
    h = vocabulary.hash()
    scenes = []
    with path.open() as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("vocab_hash") != h:
                    raise DatasetError(f"vocabulary hash {rec.get('vocab_hash')!r} != {h!r}")
                scenes.append(record_to_scene(rec, path.parent))
            except DatasetError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from None
            except (ValueError, KeyError, TypeError, IndexError, zlib.error) as e:
                raise DatasetError(f"{path}:{lineno}: malformed record ({type(e).__name__}: {e})") from None
    return scenes, vocabulary
