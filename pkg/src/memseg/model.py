"""The full memory-augmented segmenter: encoders -> memory -> referring decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .decoder import AuxReadout, QueryEmbed, decode_mask, loss, summarize, upsample
from .encoders import CrossModalEncoder, PatchEmbed, TextEmbedding, TextEncoder
from .memory import (
    GlobalMemory,
    LocalMemory,
    MaskEmbed,
    WriteController,
    build_global_memory,
    context_vectors,
    local_write,
    read,
)
from .numerics import ConfigError


@dataclass
class ModelConfig:
    dim: int = 32
    heads: int = 4
    n_modules: int = 3
    patch: int = 8
    height: int = 64
    width: int = 64
    channels: int = 3
    n_words: int = 12
    vocab_size: int = 64
    global_ratio: float = 1.5  # N_g = ratio * N_v
    local_ratio: float = 2.0  # N_l = ratio * N_v
    interval: int = 10

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"{self.height}x{self.width} is not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.n_modules < 1 or self.interval < 1:
            raise ConfigError("n_modules and interval must be >= 1")
        if self.global_ratio < 0 or self.local_ratio < 0:
            raise ConfigError("memory ratios must be non-negative")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def n_global(self) -> int:
        return int(round(self.global_ratio * self.n_patches))

    @property
    def n_local(self) -> int:
        return int(round(self.local_ratio * self.n_patches))

    def to_dict(self):
        return asdict(self)


class MemorySegmenter(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.patch_embed = PatchEmbed(cfg.height, cfg.width, cfg.patch, cfg.channels, d)
        self.text = TextEncoder(cfg.vocab_size, d, cfg.n_words, cfg.heads)
        self.crossmodal = CrossModalEncoder(d, cfg.n_modules, cfg.heads)
        self.global_writer = WriteController(d, d, cfg.n_global)
        self.local_writer = WriteController(d, 2 * d, cfg.n_local)
        self.mask_embed = MaskEmbed(d, self.patch_embed.grid)
        self.query = QueryEmbed(d)
        self.aux = nn.ModuleList(AuxReadout(d) for _ in range(cfg.n_modules))

    def encode(self, frames, ids):
        """Per-frame language-enhanced features; frames are independent here.

        ``frames`` (B, T, H, W, C), ``ids`` (B, N_w). Returns text, fusion output.
        """
        text = self.text(ids)
        fused_text = TextEmbedding(text.tokens.unsqueeze(1), text.pad_mask.unsqueeze(1))
        fusion = self.crossmodal(self.patch_embed(frames), fused_text)
        return text, fusion

    def forward(self, frames, ids, interval: int | None = None, bptt_window: int | None = None):
        """Segment whole videos sequentially.

        Returns a dict with per-frame patch probabilities ``probs`` (B, T, N_v),
        auxiliary grids ``aux`` (B, T, K, N_v), word attention ``word_attn``
        (B, T, N_w) and the number of stored context vectors per video.
        ``bptt_window`` detaches the local-memory recurrence every that many frames.
        """
        interval = interval or self.cfg.interval
        text, fusion = self.encode(frames, ids)
        feats = fusion.visual  # (B, T, N_v, D)
        b, t_len = feats.shape[:2]
        aux = torch.stack([head(tap) for head, tap in zip(self.aux, fusion.taps)], 2)

        g = build_global_memory(feats, interval, self.global_writer)
        l = LocalMemory(self.local_writer.initial((b,)))
        probs, attn = [], []
        peak = context_vectors(g, l)
        for t in range(t_len):
            v = feats[:, t]
            contextual = read(v, g, l)
            qv = self.query(text.tokens, text.pad_mask, summarize(v, g.cells, l.cells))
            s = decode_mask(contextual, qv)
            probs.append(s)
            attn.append(qv.word_attn)
            if t + 1 < t_len and self.cfg.n_local:
                l = local_write(v, s, l, self.local_writer, self.mask_embed, frame=t)
                if bptt_window and (t + 1) % bptt_window == 0:
                    l = LocalMemory(l.cells.detach(), l.frame_index)
            elif t + 1 < t_len:
                l = LocalMemory(l.cells, l.frame_index + 1)
            peak = max(peak, context_vectors(g, l))
        return {
            "probs": torch.stack(probs, 1),
            "aux": aux,
            "word_attn": torch.stack(attn, 1),
            "global_cells": g.cells,
            "context_vectors": peak,
        }

    def pixel_probs(self, patch_probs):
        c = self.cfg
        return upsample(patch_probs, c.patch, c.height, c.width)

    def loss(self, out, masks, lam: float = 0.4):
        """Mean over frames of the deeply-supervised BCE; ``masks`` is (B, T, H, W)."""
        final = self.pixel_probs(out["probs"])
        aux = [self.pixel_probs(out["aux"][:, :, k]) for k in range(out["aux"].shape[2])]
        return loss(final, aux, masks, lam).mean()
