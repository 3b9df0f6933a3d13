"""Per-frame cost of flattened full self-attention versus the fixed-size memory pipeline.

Both variants time a forward pass only. ``full`` runs one encoder block over
all ``n_frames * tokens`` tokens at once; ``memory`` encodes each frame on its
own and then reads from / writes to N_g + N_l fixed cells.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy import stats

from .decoder import decode_mask
from .memory import GlobalMemory, LocalMemory, MaskEmbed, WriteController, global_write, local_write, read
from .numerics import EncoderBlock

WARMUP = 5
TRIALS = 10
TRIM = 0.2
FIELDS = ("variant", "n_frames", "ms_per_frame", "peak_context_vectors")


class CalibrationError(RuntimeError):
    """The clock cannot resolve the workload reliably."""


@dataclass(frozen=True)
class BenchResult:
    variant: str
    n_frames: int
    ms_per_frame: float
    peak_context_vectors: int


def block_flops(n_tokens: int, dim: int, mlp_ratio: int = 4) -> int:
    """Multiply-add flops (2 per MAC) of the matmuls in one encoder block."""
    proj = 4 * 2 * n_tokens * dim * dim
    scores = 2 * n_tokens * n_tokens * dim
    mix = 2 * n_tokens * n_tokens * dim
    mlp = 2 * 2 * n_tokens * dim * mlp_ratio * dim
    return proj + scores + mix + mlp


def quadratic_flops(n_tokens: int, dim: int) -> int:
    """The part of :func:`block_flops` that comes from the attention matrix."""
    return 4 * n_tokens * n_tokens * dim


def counted_flops(fn) -> int:
    """Flops of ``fn()`` as seen by torch's dispatcher-level counter."""
    from torch.utils.flop_counter import FlopCounterMode

    with FlopCounterMode(display=False) as counter:
        fn()
    return counter.get_total_flops()


def _grid(tokens: int) -> tuple[int, int]:
    r = math.isqrt(tokens)
    while tokens % r:
        r -= 1
    return r, tokens // r


def _check_resolution(seconds: float):
    res = time.get_clock_info("perf_counter").resolution
    if seconds < 100 * res:
        raise CalibrationError(
            f"trial took {seconds:.3g}s, under 100x the {res:.3g}s clock resolution; enlarge the workload"
        )


def _time(fn, trials: int, warmup: int) -> float:
    """Trimmed-mean wall seconds of ``fn()`` on a single intra-op thread."""
    if trials < 3:
        raise ValueError("need at least 3 timed trials")
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        with torch.inference_mode():
            for _ in range(warmup):
                fn()
            times = []
            for _ in range(trials):
                t = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t)
    finally:
        torch.set_num_threads(threads)
    _check_resolution(min(times))
    return float(stats.trim_mean(times, TRIM))


def bench_full(n_frames: int, tokens_per_frame: int = 256, dim: int = 768, trials: int = TRIALS,
               warmup: int = WARMUP, heads: int | None = None, seed: int = 0) -> list[BenchResult]:
    """One block over the flattened video; every token is context for every other."""
    torch.manual_seed(seed)
    heads = heads or max(1, dim // 64)
    block = EncoderBlock(dim, heads, chunk=2048).eval()
    x = torch.randn(n_frames * tokens_per_frame, dim)
    sec = _time(lambda: block(x), trials, warmup)
    return [BenchResult("full", n_frames, 1e3 * sec / n_frames, n_frames * tokens_per_frame)]


class _MemoryPipeline(torch.nn.Module):
    def __init__(self, tokens: int, dim: int, heads: int, global_ratio: float, local_ratio: float):
        super().__init__()
        self.block = EncoderBlock(dim, heads)
        self.n_global = int(round(global_ratio * tokens))
        self.n_local = int(round(local_ratio * tokens))
        self.global_writer = WriteController(dim, dim, self.n_global)
        self.local_writer = WriteController(dim, 2 * dim, self.n_local)
        self.mask_embed = MaskEmbed(dim, _grid(tokens))
        self.query = torch.nn.Parameter(torch.randn(dim) / dim ** 0.5)

    def forward(self, frames: torch.Tensor, interval: int) -> int:
        g = GlobalMemory(self.global_writer.initial())
        for t in range(0, frames.shape[0], interval):
            g = global_write(self.block(frames[t]), g, self.global_writer)
        l = LocalMemory(self.local_writer.initial())
        peak = 0
        for t in range(frames.shape[0]):
            v = self.block(frames[t])
            s = decode_mask(read(v, g, l), self.query)
            l = local_write(v, s, l, self.local_writer, self.mask_embed)
            peak = max(peak, g.cells.shape[0] + l.cells.shape[0])
        return peak


def bench_memory(n_frames: int, tokens_per_frame: int = 256, dim: int = 768, trials: int = TRIALS,
                 warmup: int = WARMUP, heads: int | None = None, interval: int = 10,
                 global_ratio: float = 1.5, local_ratio: float = 2.0, seed: int = 0) -> list[BenchResult]:
    """Frame-by-frame encode, read, decode and local write, plus global writes every ``interval``."""
    torch.manual_seed(seed)
    heads = heads or max(1, dim // 64)
    pipe = _MemoryPipeline(tokens_per_frame, dim, heads, global_ratio, local_ratio).eval()
    x = torch.randn(n_frames, tokens_per_frame, dim)
    with torch.inference_mode():
        peak = pipe(x[:1], interval)
    sec = _time(lambda: pipe(x, interval), trials, warmup)
    return [BenchResult("memory", n_frames, 1e3 * sec / n_frames, peak)]


def run(frames_list: Sequence[int], tokens_per_frame: int = 256, dim: int = 768, trials: int = TRIALS,
        warmup: int = WARMUP, variants: Iterable[str] = ("full", "memory")) -> list[BenchResult]:
    rows = []
    for variant in variants:
        fn = {"full": bench_full, "memory": bench_memory}[variant]
        for n in frames_list:
            rows.extend(fn(n, tokens_per_frame, dim, trials, warmup))
    return rows


def growth_ratio(rows: Sequence[BenchResult], variant: str, lo: int, hi: int) -> float:
    ms = {r.n_frames: r.ms_per_frame for r in rows if r.variant == variant}
    return ms[hi] / ms[lo]


def fit_slope(rows: Sequence[BenchResult], variant: str, confidence: float = 0.95):
    """Least-squares ms/frame vs n_frames; returns (slope, (ci_low, ci_high))."""
    pts = sorted((r.n_frames, r.ms_per_frame) for r in rows if r.variant == variant)
    if len(pts) < 3:
        raise ValueError("a slope interval needs at least 3 lengths")
    x, y = np.array(pts, dtype=float).T
    fit = stats.linregress(x, y)
    half = stats.t.ppf(0.5 + confidence / 2, len(x) - 2) * fit.stderr
    return fit.slope, (fit.slope - half, fit.slope + half)


def to_csv(rows: Sequence[BenchResult], stream=None) -> str:
    buf = stream if stream is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in rows:
        w.writerow([r.variant, r.n_frames, f"{r.ms_per_frame:.4f}", r.peak_context_vectors])
    return buf.getvalue() if stream is None else ""
