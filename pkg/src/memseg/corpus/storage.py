"""On-disk dataset layout.

Each sample lives in ``sample_XXXXX/`` with

* ``frames.bin``: ``FRM1`` + uint32 LE (T, H, W, C) + float32 LE pixels
* ``masks.bin``:  ``MSK1`` + uint32 LE (T, H, W) + row-major packed bits
* ``meta.json``:  expression words, role structure, event frame, provenance
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..encoders import Vocabulary
from .scenes import VOCAB, VideoSample

FRAMES_MAGIC = b"FRM1"
MASKS_MAGIC = b"MSK1"


def write_frames(path, frames: np.ndarray):
    frames = np.asarray(frames, dtype="<f4")
    header = FRAMES_MAGIC + np.asarray(frames.shape, dtype="<u4").tobytes()
    Path(path).write_bytes(header + frames.tobytes())


def read_frames(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FRAMES_MAGIC:
        raise ValueError(f"{path}: bad frames header")
    shape = tuple(np.frombuffer(data, dtype="<u4", count=4, offset=4))
    return np.frombuffer(data, dtype="<f4", offset=20).reshape(shape).astype(np.float32)


def write_masks(path, masks: np.ndarray):
    masks = np.asarray(masks, dtype=bool)
    header = MASKS_MAGIC + np.asarray(masks.shape, dtype="<u4").tobytes()
    Path(path).write_bytes(header + np.packbits(masks.reshape(-1)).tobytes())


def read_masks(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MASKS_MAGIC:
        raise ValueError(f"{path}: bad masks header")
    shape = tuple(int(s) for s in np.frombuffer(data, dtype="<u4", count=3, offset=4))
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=16), count=int(np.prod(shape)))
    return bits.reshape(shape).astype(bool)


def sample_dir(root, index: int) -> Path:
    return Path(root) / f"sample_{index:05d}"


def write_sample(directory, sample: VideoSample):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_frames(d / "frames.bin", sample.frames)
    write_masks(d / "masks.bin", sample.masks)
    meta = {
        "expression": sample.expression,
        "roles": [list(r) for r in sample.roles],
        "event_frame": sample.meta.get("event_frame"),
        "provenance": sample.meta.get("provenance", "single"),
        "meta": sample.meta,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_sample(directory) -> VideoSample:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    return VideoSample(
        read_frames(d / "frames.bin"),
        read_masks(d / "masks.bin"),
        list(meta["expression"]),
        [tuple(r) for r in meta["roles"]],
        meta.get("meta", {}),
    )


def write_dataset(root, samples, vocab: Vocabulary = VOCAB):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    vocab.save(root / "vocab.txt")
    for i, s in enumerate(samples):
        write_sample(sample_dir(root, i), s)


def list_samples(root) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if p.is_dir() and p.name.startswith("sample_"))


def read_dataset(root) -> list[VideoSample]:
    dirs = list_samples(root)
    if not dirs:
        raise FileNotFoundError(f"no sample_* directories under {root}")
    return [read_sample(d) for d in dirs]
