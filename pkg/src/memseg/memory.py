"""Fixed-capacity global and local memories with gated write controllers.

Cells are stored as (..., N, D) tensors. Writing folds one frame's N_v patch
features into every cell in parallel; reading is plain attention of the
frame's patches over the cells. Storage never grows with video length.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .numerics import attention


class SequencingError(RuntimeError):
    """Local memory was written out of frame order."""


@dataclass(frozen=True)
class GlobalMemory:
    cells: torch.Tensor  # (..., N_g, D)


@dataclass(frozen=True)
class LocalMemory:
    cells: torch.Tensor  # (..., N_l, D)
    frame_index: int = 0  # this state serves frame ``frame_index``


def average_pool(x: torch.Tensor) -> torch.Tensor:
    """Mean over the row axis; an empty set pools to the zero vector."""
    if x.shape[-2] == 0:
        return x.new_zeros(*x.shape[:-2], x.shape[-1])
    return x.mean(-2)


class WriteController(nn.Module):
    """Gated write: candidate c_p = W_c [x_p, AP(m)], gate o_np = sigmoid(c_p^T W_o m_n).

    ``force_gate`` (None, 0.0 or 1.0) pins every gate for identity tests.
    """

    def __init__(self, dim: int, in_dim: int, n_cells: int):
        super().__init__()
        self.dim, self.in_dim, self.n_cells = dim, in_dim, n_cells
        self.w_c = nn.Parameter(torch.randn(dim, in_dim + dim) / (in_dim + dim) ** 0.5)
        self.w_o = nn.Parameter(torch.randn(dim, dim) / dim)
        self.init_cells = nn.Parameter(torch.randn(n_cells, dim) * 0.1)
        self.force_gate: float | None = None

    def initial(self, lead: Sequence[int] = ()) -> torch.Tensor:
        return self.init_cells.expand(*lead, self.n_cells, self.dim)

    def gates(self, cand, cells):
        logits = cand @ self.w_o @ cells.transpose(-1, -2)  # (..., N_v, N)
        if self.force_gate is not None:
            return torch.full_like(logits, float(self.force_gate))
        return torch.sigmoid(logits)

    def forward(self, x: torch.Tensor, cells: torch.Tensor) -> torch.Tensor:
        """``x`` is (..., N_v, in_dim), ``cells`` (..., N, D); returns updated cells."""
        if cells.shape[-2] == 0:
            return cells
        pooled = average_pool(cells).unsqueeze(-2).expand(*x.shape[:-1], self.dim)
        cand = torch.cat([x, pooled], -1) @ self.w_c.T  # (..., N_v, D)
        o = self.gates(cand, cells)
        n_v = x.shape[-2]
        # AP_p(o_np c_p + (1 - o_np) m_n), evaluated as one matmul
        return o.transpose(-1, -2) @ cand / n_v + (1 - o.mean(-2)).unsqueeze(-1) * cells


def global_write(features: torch.Tensor, mem: GlobalMemory, controller: WriteController) -> GlobalMemory:
    return GlobalMemory(controller(features, mem.cells))


def sample_frames(n_frames: int, interval: int) -> list[int]:
    if interval < 1:
        raise ValueError("sampling interval must be >= 1")
    if n_frames < 1:
        raise ValueError("cannot build a global memory from an empty video")
    return list(range(0, n_frames, interval))


def build_global_memory(
    features: torch.Tensor | Sequence[torch.Tensor],
    interval: int,
    controller: WriteController,
) -> GlobalMemory:
    """Write frames 0, interval, 2*interval, ... in temporal order.

    ``features`` is a sequence (or a tensor with a frame axis at -3) of
    (..., N_v, D) language-enhanced frame features.
    """
    n_frames = features.shape[-3] if isinstance(features, torch.Tensor) else len(features)
    picks = sample_frames(n_frames, interval)
    first = features[..., 0, :, :] if isinstance(features, torch.Tensor) else features[0]
    mem = GlobalMemory(controller.initial(first.shape[:-2]))
    for t in picks:
        frame = features[..., t, :, :] if isinstance(features, torch.Tensor) else features[t]
        mem = global_write(frame, mem, controller)
    return mem


class MaskEmbed(nn.Module):
    """Two 3x3 convolutions over the patch-probability grid: 1 -> D/2 -> D channels."""

    def __init__(self, dim: int, grid: tuple[int, int]):
        super().__init__()
        self.grid = grid
        self.conv1 = nn.Conv2d(1, dim // 2, 3, padding=1)
        self.conv2 = nn.Conv2d(dim // 2, dim, 3, padding=1)

    def forward(self, probs: torch.Tensor, check: bool = True) -> torch.Tensor:
        """``probs`` is (..., N_v) in [0, 1]; returns (..., N_v, D)."""
        if check and ((probs < 0).any() or (probs > 1).any()):
            raise ValueError("mask probabilities must lie in [0, 1]")
        lead = probs.shape[:-1]
        x = probs.reshape(-1, 1, *self.grid)
        x = self.conv2(F.gelu(self.conv1(x)))
        return x.flatten(2).transpose(1, 2).reshape(*lead, -1, x.shape[1])


def local_write(
    prev_features: torch.Tensor,
    prev_mask: torch.Tensor,
    mem: LocalMemory,
    controller: WriteController,
    mask_embed: MaskEmbed,
    frame: int | None = None,
) -> LocalMemory:
    """Fold frame ``frame`` (features + predicted patch mask) into the local memory.

    ``frame`` defaults to ``mem.frame_index``; any other value is a sequencing error.
    """
    if frame is not None and frame != mem.frame_index:
        raise SequencingError(f"local memory is at frame {mem.frame_index}, got inputs from frame {frame}")
    x = torch.cat([prev_features, mask_embed(prev_mask)], -1)
    return replace(mem, cells=controller(x, mem.cells), frame_index=mem.frame_index + 1)


def read(features: torch.Tensor, g: GlobalMemory | torch.Tensor, l: LocalMemory | torch.Tensor) -> torch.Tensor:
    """G = V + ATT(V, M_g, M_g) + ATT(V, M_l, M_l); an empty memory contributes nothing."""
    out = features
    for mem in (g, l):
        cells = mem if isinstance(mem, torch.Tensor) else mem.cells
        if cells.shape[-2]:
            out = out + attention(features, cells, cells)
    return out


def context_vectors(g: GlobalMemory, l: LocalMemory) -> int:
    """Number of stored D-vectors across both memories (per video)."""
    return g.cells.shape[-2] + l.cells.shape[-2]
