"""Attention kernels, transformer encoder blocks and a finite-difference gradient checker.

Everything here operates on ``torch.Tensor`` with arbitrary leading batch
dimensions; the last two axes are (tokens, channels).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

LN_EPS = 1e-5


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A kernel saw or produced NaN/Inf."""


class ConfigError(ValueError):
    """Invalid model or layer configuration."""


class DeterminismError(RuntimeError):
    """A supposedly pure loss returned different values for identical calls."""


def check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite values in {where}")
    return x


def attention(q, k, v, key_mask=None):
    """Single-head scaled dot-product attention.

    ``q`` is (..., Nq, Dk), ``k`` is (..., Nv, Dk), ``v`` is (..., Nv, Dv).
    ``key_mask`` (broadcastable to (..., Nv), True = attend) removes keys from
    the softmax; at least one key per row must survive.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    if k.shape[-2] < 1:
        raise DimensionError("attention needs at least one key")
    for name, t in (("query", q), ("key", k), ("value", v)):
        check_finite(t, f"attention {name}")

    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask.unsqueeze(-2), float("-inf"))
    return torch.softmax(scores, dim=-1) @ v


def chunked_attention(q, k, v, chunk: int = 2048):
    """Exact attention evaluated over blocks of query rows to bound peak memory."""
    if q.shape[-2] <= chunk:
        return attention(q, k, v)
    return torch.cat(
        [attention(q[..., i:i + chunk, :], k, v) for i in range(0, q.shape[-2], chunk)],
        dim=-2,
    )


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, chunk: int | None = None):
        super().__init__()
        if heads < 1 or dim % heads:
            raise ConfigError(f"dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads, self.chunk = dim, heads, chunk
        self.wq = nn.Linear(dim, dim)
        self.wk = nn.Linear(dim, dim)
        self.wv = nn.Linear(dim, dim)
        self.wo = nn.Linear(dim, dim)

    def _split(self, x):
        *lead, n, _ = x.shape
        return x.reshape(*lead, n, self.heads, self.dim // self.heads).transpose(-2, -3)

    def forward(self, x, key_mask=None):
        q, k, v = self._split(self.wq(x)), self._split(self.wk(x)), self._split(self.wv(x))
        if key_mask is not None:
            key_mask = key_mask.unsqueeze(-2)  # broadcast over heads
        if self.chunk is not None and key_mask is None:
            out = chunked_attention(q, k, v, self.chunk)
        else:
            out = attention(q, k, v, key_mask)
        out = out.transpose(-2, -3)
        return self.wo(out.reshape(*out.shape[:-2], self.dim))


class EncoderBlock(nn.Module):
    """Post-norm transformer block: X' = LN(X + MSA(X)); Y = LN(X' + MLP(X'))."""

    def __init__(self, dim: int, heads: int = 4, mlp_ratio: int = 4, chunk: int | None = None):
        super().__init__()
        self.msa = MultiHeadSelfAttention(dim, heads, chunk)
        self.ln1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim)
        )
        self.ln2 = nn.LayerNorm(dim, eps=LN_EPS)

    def forward(self, x, key_mask=None):
        x = self.ln1(x + self.msa(x, key_mask))
        return self.ln2(x + self.mlp(x))


def encoder_block(x, block: EncoderBlock, key_mask=None):
    """Functional entry point; validates the output is finite."""
    if x.shape[-1] != block.msa.dim:
        raise DimensionError(f"input width {x.shape[-1]} != block width {block.msa.dim}")
    return check_finite(block(x, key_mask), "encoder block output")


def layer_norm(x, eps: float = LN_EPS):
    """Affine-free layer normalisation over the last axis."""
    return F.layer_norm(x, x.shape[-1:], eps=eps)


ParamTree = Mapping[str, torch.Tensor]


def param_tree(module: nn.Module) -> dict[str, torch.Tensor]:
    """Hierarchical name -> parameter map (names are unique by construction)."""
    return dict(module.named_parameters())


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: ParamTree | Iterable[torch.Tensor],
    step: float = 1e-6,
    samples: int = 200,
    seed: int = 0,
) -> float:
    """Compare autograd gradients against central differences.

    ``loss_fn`` is a zero-argument closure over ``params`` returning a scalar
    tensor. Returns the max over ``samples`` coordinates (at least one per
    tensor while the budget allows, the rest uniform) of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    tensors = list(params.values()) if isinstance(params, Mapping) else list(params)
    if any(t.dtype != torch.float64 for t in tensors):
        raise ValueError("grad_check requires float64 parameters")

    for t in tensors:
        t.grad = None
    loss = loss_fn()
    again = loss_fn()
    if loss.item() != again.item():
        raise DeterminismError(f"loss changed between identical calls: {loss.item()!r} vs {again.item()!r}")
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    analytic = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, analytic)]

    sizes = np.array([t.numel() for t in tensors])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    # one coordinate from every non-empty tensor, the rest uniformly at random
    picked = {int(offsets[i] + rng.integers(n)) for i, n in enumerate(sizes) if n}
    rest = rng.permutation(total)
    flat_ids = list(picked)[:samples]
    for fid in rest:
        if len(flat_ids) >= min(samples, total):
            break
        if int(fid) not in picked:
            flat_ids.append(int(fid))

    worst = 0.0
    with torch.no_grad():
        for fid in flat_ids:
            ti = int(np.searchsorted(offsets, fid, side="right") - 1)
            j = int(fid - offsets[ti])
            flat = tensors[ti].view(-1)
            orig = flat[j].item()
            flat[j] = orig + step
            up = loss_fn().item()
            flat[j] = orig - step
            down = loss_fn().item()
            flat[j] = orig
            numeric = (up - down) / (2 * step)
            exact = analytic[ti].reshape(-1)[j].item()
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
