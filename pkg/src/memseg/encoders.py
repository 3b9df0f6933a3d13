"""Patch, text and cross-modality encoders."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .numerics import ConfigError, EncoderBlock

PAD_ID = 0
UNK_ID = 1


class VocabularyError(KeyError):
    pass


class Vocabulary:
    """Token <-> id table. Ids 0 and 1 are reserved for ``<pad>`` and ``<unk>``."""

    def __init__(self, words: Sequence[str]):
        tokens = ["<pad>", "<unk>"] + [w for w in words if w not in ("<pad>", "<unk>")]
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {w: i for i, w in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def encode(self, text: str | Sequence[str]) -> list[int]:
        words = text.split() if isinstance(text, str) else text
        return [self.index.get(w, UNK_ID) for w in words]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids if i != PAD_ID)

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text().splitlines()
        if lines[:2] != ["<pad>", "<unk>"]:
            raise VocabularyError(f"{path}: first two lines must be <pad> and <unk>")
        return cls(lines[2:])


def pad_tokens(token_ids: Sequence[int], n_words: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncate or right-pad to ``n_words``; returns (ids, real-word mask)."""
    ids = np.full(n_words, PAD_ID, dtype=np.int64)
    real = list(token_ids)[:n_words]
    ids[: len(real)] = real
    return ids, ids != PAD_ID


@dataclass
class PatchEmbedding:
    tokens: torch.Tensor  # (..., N_v, D)
    grid: tuple[int, int]  # (rows, cols) of the patch grid
    patch: int


@dataclass
class TextEmbedding:
    tokens: torch.Tensor  # (..., N_w, D)
    pad_mask: torch.Tensor  # (..., N_w) bool, True = real word


@dataclass
class FusionOutput:
    visual: torch.Tensor  # V_t, (..., N_v, D)
    taps: list  # K tensors, taps[-1] is visual


def _sincos_2d(rows: int, cols: int, dim: int) -> torch.Tensor:
    # half the channels encode the row, half the column
    def axis(n, d):
        pos = torch.arange(n, dtype=torch.float64)[:, None]
        freq = torch.exp(-np.log(100.0) * torch.arange(0, d, 2, dtype=torch.float64) / d)
        out = torch.zeros(n, d, dtype=torch.float64)
        out[:, 0::2] = torch.sin(pos * freq)
        out[:, 1::2] = torch.cos(pos * freq)[:, : d // 2]
        return out

    half = dim // 2
    r, c = axis(rows, half), axis(cols, dim - half)
    table = torch.cat(
        [r[:, None, :].expand(rows, cols, half), c[None, :, :].expand(rows, cols, dim - half)], -1
    )
    return table.reshape(rows * cols, dim).to(torch.get_default_dtype())


class PatchEmbed(nn.Module):
    """Linear projection of non-overlapping O x O patches plus a learned position table.

    The position table starts from a 2-D sine/cosine layout and is trained freely.
    """

    def __init__(self, height: int, width: int, patch: int, channels: int, dim: int):
        super().__init__()
        if height % patch or width % patch:
            raise ConfigError(f"{height}x{width} frame is not divisible into {patch}px patches")
        self.patch = patch
        self.grid = (height // patch, width // patch)
        self.proj = nn.Linear(patch * patch * channels, dim)
        self.pos = nn.Parameter(_sincos_2d(*self.grid, dim))

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    def forward(self, frames: torch.Tensor) -> PatchEmbedding:
        """``frames`` is (..., H, W, C); patches are ordered row-major over the grid."""
        *lead, h, w, c = frames.shape
        o = self.patch
        if h % o or w % o:
            raise ConfigError(f"{h}x{w} frame is not divisible into {o}px patches")
        if (h // o, w // o) != self.grid:
            raise ConfigError(f"frame grid {(h // o, w // o)} != configured {self.grid}")
        x = frames.reshape(*lead, h // o, o, w // o, o, c)
        x = x.movedim(-4, -3).reshape(*lead, (h // o) * (w // o), o * o * c)
        return PatchEmbedding(self.proj(x) + self.pos, self.grid, o)


class TextEncoder(nn.Module):
    """Embedding table followed by one encoder block over the real words."""

    def __init__(self, vocab_size: int, dim: int, n_words: int, heads: int = 4):
        super().__init__()
        self.vocab_size, self.n_words = vocab_size, n_words
        self.embed = nn.Embedding(vocab_size, dim)
        self.pos = nn.Parameter(torch.randn(n_words, dim) * 0.02)
        self.block = EncoderBlock(dim, heads)

    def forward(self, ids: torch.Tensor) -> TextEmbedding:
        """``ids`` is (..., N_w) int64, already padded with ``PAD_ID``."""
        if ids.shape[-1] != self.n_words:
            raise ConfigError(f"expected {self.n_words} token slots, got {ids.shape[-1]}")
        if (ids < 0).any() or (ids >= self.vocab_size).any():
            raise VocabularyError("token id outside the vocabulary")
        mask = ids != PAD_ID
        if not mask.any(-1).all():
            raise VocabularyError("expression has no real words")
        x = self.embed(ids) + self.pos
        return TextEmbedding(self.block(x, mask), mask)

    def encode(self, token_ids: Sequence[int]) -> TextEmbedding:
        """Unbatched convenience: pad/truncate a raw id list and encode it."""
        bad = [i for i in token_ids if not 0 <= i < self.vocab_size]
        if bad:
            raise VocabularyError(f"unknown token ids {bad}")
        ids, _ = pad_tokens(token_ids, self.n_words)
        return self(torch.from_numpy(ids))


class CrossModalEncoder(nn.Module):
    """K stacked fusion modules.

    Module k runs one block over [F2^{k-1} + e_v, E + e_w] and keeps only the
    visual rows, then refines them with a second block.
    """

    def __init__(self, dim: int, n_modules: int = 3, heads: int = 4):
        super().__init__()
        if n_modules < 1:
            raise ConfigError("cross-modality encoder needs at least one module")
        self.type_visual = nn.Parameter(torch.randn(dim) * 0.02)
        self.type_word = nn.Parameter(torch.randn(dim) * 0.02)
        self.fuse = nn.ModuleList(EncoderBlock(dim, heads) for _ in range(n_modules))
        self.refine = nn.ModuleList(EncoderBlock(dim, heads) for _ in range(n_modules))

    def forward(self, patches: PatchEmbedding | torch.Tensor, text: TextEmbedding) -> FusionOutput:
        x = patches.tokens if isinstance(patches, PatchEmbedding) else patches
        words, mask = text.tokens, text.pad_mask
        if words.shape[-1] != x.shape[-1]:
            raise ConfigError("visual and text widths differ")
        lead, n_v = x.shape[:-2], x.shape[-2]
        words = words.expand(*lead, *words.shape[-2:])
        mask = mask.expand(*lead, mask.shape[-1])
        # visual tokens are always attendable
        key_mask = torch.cat([torch.ones(*lead, n_v, dtype=torch.bool), mask], -1)
        words = words + self.type_word
        taps = []
        for fuse, refine in zip(self.fuse, self.refine):
            joint = torch.cat([x + self.type_visual, words], -2)
            x = refine(fuse(joint, key_mask)[..., :n_v, :])
            taps.append(x)
        return FusionOutput(x, taps)
