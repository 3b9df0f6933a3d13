"""Query embedding, mask decoding, auxiliary readouts and the training loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .memory import average_pool

BCE_CLAMP = 1e-7
THRESHOLD = 0.5


@dataclass
class QueryVector:
    q: torch.Tensor  # (..., D)
    word_attn: torch.Tensor  # (..., N_w), zero on padded slots


@dataclass
class SegmentationResult:
    patch_probs: np.ndarray  # (rows, cols)
    pixel_probs: np.ndarray  # (H, W)
    binary: np.ndarray  # (H, W) bool
    aux_probs: list = field(default_factory=list)  # K patch grids


def summarize(features, g_cells, l_cells):
    """Average-pool the frame features and both memories into three D-vectors."""
    return average_pool(features), average_pool(g_cells), average_pool(l_cells)


class QueryEmbed(nn.Module):
    """Frame-specific word attention: a = softmax_w(([V~, m~g, m~l] W1)(E_w W2)^T)."""

    def __init__(self, dim: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.randn(3 * dim, dim) / (3 * dim) ** 0.5)
        self.w2 = nn.Parameter(torch.randn(dim, dim) / dim ** 0.5)

    def forward(self, words, pad_mask, summaries) -> QueryVector:
        if not pad_mask.any(-1).all():
            raise ValueError("query embedding needs at least one real word")
        ctx = torch.cat(summaries, -1) @ self.w1  # (..., D)
        scores = ((words @ self.w2) @ ctx.unsqueeze(-1)).squeeze(-1)
        scores = scores.masked_fill(~pad_mask, float("-inf"))
        a = torch.softmax(scores, -1)
        return QueryVector((a.unsqueeze(-1) * words).sum(-2), a)


def decode_mask(contextual: torch.Tensor, query: QueryVector | torch.Tensor) -> torch.Tensor:
    """Per-patch probability sigmoid(G_p . q)."""
    q = query.q if isinstance(query, QueryVector) else query
    return torch.sigmoid((contextual @ q.unsqueeze(-1)).squeeze(-1))


def upsample(patch_probs: torch.Tensor, patch: int, height: int, width: int) -> torch.Tensor:
    """Bilinear, corner-aligned resize of the (H/O, W/O) patch grid to (H, W)."""
    rows, cols = height // patch, width // patch
    if height % patch or width % patch or patch_probs.shape[-1] != rows * cols:
        raise ValueError(f"{patch_probs.shape[-1]} patches do not tile a {height}x{width} frame at O={patch}")
    lead = patch_probs.shape[:-1]
    grid = patch_probs.reshape(-1, 1, rows, cols)
    out = F.interpolate(grid, size=(height, width), mode="bilinear", align_corners=True)
    return out.reshape(*lead, height, width)


class AuxReadout(nn.Module):
    """Small per-patch MLP (D -> D/2 -> 1) with a sigmoid head."""

    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim // 2), nn.GELU(), nn.Linear(dim // 2, 1))

    def forward(self, tap):
        return torch.sigmoid(self.net(tap).squeeze(-1))


def bce(pred, gt):
    """Pixel-averaged binary cross-entropy with clamped probabilities."""
    p = pred.clamp(BCE_CLAMP, 1 - BCE_CLAMP)
    gt = gt.to(p.dtype)
    return -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p)).mean((-2, -1))


def loss(final, aux, gt, lam: float = 0.4):
    """BCE(final) + lam * sum_k BCE(aux_k); aux maps are already at gt resolution.

    Leading axes are preserved, so batched frames give per-frame losses.
    """
    if lam < 0:
        raise ValueError("deep-supervision weight must be non-negative")
    if final.shape[-2:] != gt.shape[-2:]:
        raise ValueError(f"prediction {tuple(final.shape[-2:])} vs ground truth {tuple(gt.shape[-2:])}")
    total = bce(final, gt)
    for a in aux:
        total = total + lam * bce(a, gt)
    return total


def binarize(probs, threshold: float = THRESHOLD):
    """Strict comparison: a probability exactly at the threshold is background."""
    return probs > threshold


def write_pgm(path, probs: np.ndarray):
    img = np.clip(np.rint(np.asarray(probs) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_pbm(path, mask: np.ndarray):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    Path(path).write_bytes(b"P4\n%d %d\n" % (w, h) + np.packbits(mask, axis=1).tobytes())


def _header(data: bytes, fields: int):
    tokens, pos = [], 0
    while len(tokens) < fields:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h), pos = _header(data, 3)
    if magic != b"P4":
        raise ValueError(f"{path}: not a binary PBM")
    w, h = int(w), int(h)
    rows = np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, -1)
    return np.unpackbits(rows, axis=1)[:, :w].astype(bool)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, _), pos = _header(data, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(int(h), int(w)) / 255.0
