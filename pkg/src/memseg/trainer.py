"""Training, inference, augmentation and the checkpoint file format."""

from __future__ import annotations

import json
import logging
import math
import pickle
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus.scenes import VOCAB, VideoSample, flip_sample
from .decoder import SegmentationResult, binarize
from .encoders import pad_tokens
from .metrics import MetricReport, evaluate
from .model import MemorySegmenter, ModelConfig
from .numerics import NumericError

log = logging.getLogger(__name__)

MAGIC = "LCTR1"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 4
    weight_decay: float = 1e-4
    epochs: int = 30
    steps: int = 0  # >0 overrides epochs
    lam: float = 0.4
    seed: int = 0
    poly_power: float = 0.9
    flip_prob: float = 0.5
    dim: int = 32
    heads: int = 4
    n_modules: int = 3
    patch: int = 8
    height: int = 64
    width: int = 64
    n_words: int = 12
    global_ratio: float = 1.5
    local_ratio: float = 2.0
    interval: int = 10
    bptt_window: int = 4
    grad_clip: float = 1.0
    log_every: int = 50

    def __post_init__(self):
        for name in ("lr", "batch", "dim", "heads", "n_modules", "patch", "n_words", "interval", "bptt_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs <= 0 and self.steps <= 0:
            raise ValueError("either epochs or steps must be positive")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must lie in [0, 1]")
        if self.weight_decay < 0 or self.lam < 0 or self.poly_power < 0:
            raise ValueError("weight_decay, lam and poly_power must be non-negative")

    def model_config(self, vocab_size: int = len(VOCAB), channels: int = 3) -> ModelConfig:
        return ModelConfig(
            dim=self.dim, heads=self.heads, n_modules=self.n_modules, patch=self.patch,
            height=self.height, width=self.width, channels=channels, n_words=self.n_words,
            vocab_size=vocab_size, global_ratio=self.global_ratio, local_ratio=self.local_ratio,
            interval=self.interval,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def poly_lr(base: float, step: int, total: int, power: float) -> float:
    return base * (1 - min(step, total) / total) ** power


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    params: dict  # name -> tensor
    config: TrainConfig
    step: int = 0
    rng_state: bytes = b""
    model_config: ModelConfig | None = None

    def build_model(self) -> MemorySegmenter:
        model = MemorySegmenter(self.model_config or self.config.model_config())
        own = model.state_dict()
        missing = set(own) - set(self.params)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, v in own.items():
            if tuple(v.shape) != tuple(self.params[k].shape):
                raise CheckpointError(f"{k}: checkpoint shape {tuple(self.params[k].shape)} != model {tuple(v.shape)}")
        model.load_state_dict({k: self.params[k] for k in own})
        return model.eval()

    def save(self, path):
        entries, blobs, offset = [], [], 0
        for key, t in self.params.items():
            if any(c.isspace() for c in key):
                raise CheckpointError(f"parameter name {key!r} contains whitespace")
            arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
            shape = ",".join(map(str, arr.shape)) or "-"
            entries.append(f"tensor {key} {shape} {offset}")
            blobs.append(arr.tobytes())
            offset += arr.nbytes
        mcfg = asdict(self.model_config) if self.model_config else None
        header = [
            MAGIC,
            "config " + json.dumps(asdict(self.config), sort_keys=True),
            "model " + json.dumps(mcfg, sort_keys=True),
            f"step {self.step}",
            f"rng {self.rng_state.hex()}",
            *entries,
            "end",
        ]
        Path(path).write_bytes(("\n".join(header) + "\n").encode() + b"".join(blobs))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        data = Path(path).read_bytes()
        if not data.startswith(MAGIC.encode() + b"\n"):
            raise CheckpointError(f"{path}: missing {MAGIC} header")
        end = data.index(b"\nend\n") + len(b"\nend\n")
        lines = data[:end].decode().splitlines()[1:-1]
        payload = data[end:]
        params, config, mcfg, step, rng = {}, None, None, 0, b""
        for line in lines:
            kind, rest = line.split(" ", 1)
            if kind == "config":
                config = TrainConfig.from_dict(json.loads(rest))
            elif kind == "model":
                raw = json.loads(rest)
                mcfg = ModelConfig(**raw) if raw else None
            elif kind == "step":
                step = int(rest)
            elif kind == "rng":
                rng = bytes.fromhex(rest)
            elif kind == "tensor":
                key, shape, off = rest.split(" ")
                dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
                n = int(np.prod(dims)) if dims else 1
                arr = np.frombuffer(payload, dtype="<f4", count=n, offset=int(off))
                params[key] = torch.from_numpy(arr.astype(np.float32).reshape(dims))
            else:
                raise CheckpointError(f"{path}: unknown manifest line {kind!r}")
        if config is None:
            raise CheckpointError(f"{path}: no config line")
        return cls(params, config, step, rng, mcfg)


# ---------------------------------------------------------------- data plumbing


def flip_augment(sample: VideoSample, rng: np.random.Generator, prob: float = 0.5) -> VideoSample:
    """Horizontal flip with probability ``prob`` (left/right words swapped too)."""
    return flip_sample(sample) if rng.random() < prob else sample


def _to_model_size(frames: np.ndarray, masks: np.ndarray | None, h: int, w: int):
    if frames.shape[1:3] == (h, w):
        return frames, masks
    x = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2)
    frames = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False).permute(0, 2, 3, 1).numpy()
    if masks is not None:
        m = torch.from_numpy(masks.astype(np.float32))[:, None]
        masks = F.interpolate(m, size=(h, w), mode="nearest")[:, 0].numpy() > 0.5
    return frames, masks


def collate(samples: Sequence[VideoSample], cfg: ModelConfig):
    frames, masks, ids = [], [], []
    for s in samples:
        f, m = _to_model_size(s.frames, s.masks, cfg.height, cfg.width)
        frames.append(f)
        masks.append(m)
        ids.append(pad_tokens(VOCAB.encode(s.expression), cfg.n_words)[0])
    return (
        torch.from_numpy(np.stack(frames)).float(),
        torch.from_numpy(np.stack(masks)),
        torch.from_numpy(np.stack(ids)),
    )


def _batches(samples, batch, rng):
    """One epoch of index batches; every batch holds videos of equal length."""
    groups: dict[int, list[int]] = {}
    for i in rng.permutation(len(samples)):
        groups.setdefault(samples[i].n_frames, []).append(int(i))
    out = [g[i:i + batch] for g in groups.values() for i in range(0, len(g), batch)]
    return [out[i] for i in rng.permutation(len(out))]


# ---------------------------------------------------------------- training


def train(
    config: TrainConfig,
    corpus: Sequence[VideoSample],
    resume: Checkpoint | None = None,
    callback: Callable[[int, float, MemorySegmenter], bool | None] | None = None,
) -> Checkpoint:
    """Adam + polynomial decay with deep supervision.

    ``callback(step, loss, model)`` runs after each step; returning True stops early.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    mcfg = config.model_config(channels=corpus[0].frames.shape[-1])
    model = MemorySegmenter(mcfg)
    start = 0
    if resume is not None:
        model = resume.build_model()
        start = resume.step
        if resume.rng_state:
            np_state, torch_state = pickle.loads(resume.rng_state)
            rng.bit_generator.state = np_state
            torch.set_rng_state(torch_state)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)

    per_epoch = math.ceil(len(corpus) / config.batch)
    total = config.steps if config.steps > 0 else config.epochs * per_epoch
    queue: list = []
    step = start
    t0 = time.perf_counter()
    while step < total:
        if not queue:
            queue = _batches(corpus, config.batch, rng)
        ids = queue.pop(0)
        batch = [flip_augment(corpus[i], rng, config.flip_prob) for i in ids]
        frames, masks, tokens = collate(batch, mcfg)
        for group in opt.param_groups:
            group["lr"] = poly_lr(config.lr, step, total, config.poly_power)

        try:
            out = model(frames, tokens, bptt_window=config.bptt_window)
            loss = model.loss(out, masks, config.lam)
        except NumericError as exc:
            log.error("non-finite activations at step %d, batch sample ids %s", step, ids)
            raise TrainingError(f"{exc} at step {step} (batch samples {ids})") from exc
        if not torch.isfinite(loss):
            log.error("non-finite loss at step %d, batch sample ids %s", step, ids)
            raise TrainingError(f"loss became {loss.item()} at step {step} (batch samples {ids})")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        step += 1
        value = loss.item()
        if config.log_every and step % config.log_every == 0:
            log.info("step %d/%d loss %.4f (%.1fs)", step, total, value, time.perf_counter() - t0)
        if callback is not None and callback(step, value, model):
            break

    rng_state = pickle.dumps((rng.bit_generator.state, torch.get_rng_state()))
    params = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return Checkpoint(params, config, step, rng_state, mcfg)


# ---------------------------------------------------------------- inference


@torch.no_grad()
def predict(model: MemorySegmenter, samples: Sequence[VideoSample], batch: int = 16,
            interval: int | None = None) -> list[dict]:
    """Batched forward pass; returns per-sample dicts of patch/pixel/aux probabilities
    at the model resolution."""
    model.eval()
    cfg = model.cfg
    results: list = [None] * len(samples)
    order = sorted(range(len(samples)), key=lambda i: samples[i].n_frames)
    i = 0
    while i < len(order):
        t_len = samples[order[i]].n_frames
        chunk = [order[i]]
        while len(chunk) < batch and i + len(chunk) < len(order) and samples[order[i + len(chunk)]].n_frames == t_len:
            chunk.append(order[i + len(chunk)])
        frames, _, tokens = collate([samples[j] for j in chunk], cfg)
        out = model(frames, tokens, interval=interval)
        pix = model.pixel_probs(out["probs"])
        for b, j in enumerate(chunk):
            results[j] = {
                "probs": out["probs"][b].numpy(),
                "pixel": pix[b].numpy(),
                "aux": out["aux"][b].numpy(),
                "word_attn": out["word_attn"][b].numpy(),
                "context_vectors": out["context_vectors"],
            }
        i += len(chunk)
    return results


def _resize_probs(probs: np.ndarray, h: int, w: int) -> np.ndarray:
    if probs.shape[-2:] == (h, w):
        return probs
    x = torch.from_numpy(probs)[:, None]
    return F.interpolate(x, size=(h, w), mode="bilinear", align_corners=True)[:, 0].numpy()


def infer(video: VideoSample, model: MemorySegmenter | Checkpoint, threshold: float = 0.5,
          interval: int | None = None) -> list[SegmentationResult]:
    """Global memory once, then frame-by-frame read/decode/local-write.

    Frames are resized to the model resolution and predictions back to the input size.
    """
    if isinstance(model, Checkpoint):
        model = model.build_model()
    cfg = model.cfg
    out = predict(model, [video], interval=interval)[0]
    h, w = video.frames.shape[1:3]
    pixel = _resize_probs(out["pixel"], h, w)
    grid = (cfg.height // cfg.patch, cfg.width // cfg.patch)
    return [
        SegmentationResult(
            out["probs"][t].reshape(grid),
            pixel[t],
            np.asarray(binarize(pixel[t], threshold)),
            [a.reshape(grid) for a in out["aux"][t]],
        )
        for t in range(video.n_frames)
    ]


def evaluate_model(model: MemorySegmenter, samples: Sequence[VideoSample], threshold: float = 0.5,
                   interval: int | None = None, batch: int = 16) -> MetricReport:
    """Every frame of every video counts as one test sample."""
    preds, gts = [], []
    for s, out in zip(samples, predict(model, samples, batch=batch, interval=interval)):
        h, w = s.frames.shape[1:3]
        pixel = _resize_probs(out["pixel"], h, w)
        preds.extend(binarize(pixel, threshold))
        gts.extend(s.masks)
    return evaluate(preds, gts)
