"""Contrasting-pair sampling over role structures and spatial/temporal compositing."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .scenes import VideoSample, count_matches

log = logging.getLogger(__name__)


def eligible(query_roles, other_roles) -> bool:
    """The other description repeats at least one, but not all, of the query's role realisations."""
    q, o = set(map(tuple, query_roles)), set(map(tuple, other_roles))
    return 1 <= len(q & o) < len(q)


def ambiguous(query: VideoSample, partner: VideoSample) -> bool:
    """Would the query expression also pick out an object in the partner video?"""
    return count_matches(query.roles, partner.meta.get("objects", [])) > 0


def contrast_sample(samples: Sequence[VideoSample], seed: int = 0) -> list[tuple[int, int]]:
    """One partner per query sample, as (query index, partner index) pairs.

    Queries without an eligible, unambiguous partner are skipped with a warning.
    """
    if len(samples) < 2:
        raise ValueError("contrasting sampling needs at least two samples")
    rng = np.random.default_rng(seed)
    pairs = []
    for i, query in enumerate(samples):
        pool = [
            j for j, other in enumerate(samples)
            if j != i and eligible(query.roles, other.roles) and not ambiguous(query, other)
        ]
        if not pool:
            log.warning("no contrasting partner for sample %d (%s)", i, " ".join(query.expression))
            continue
        pairs.append((i, int(pool[rng.integers(len(pool))])))
    return pairs


def resize_frames(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of (T, H, W, C) frames."""
    if frames.shape[1:3] == (height, width):
        return frames.copy()
    x = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2)
    out = F.interpolate(x, size=(height, width), mode="bilinear", align_corners=False)
    return out.permute(0, 2, 3, 1).numpy().astype(frames.dtype)


def fit_duration(frames: np.ndarray, n_frames: int) -> np.ndarray:
    """Truncate, or pad by repeating the last frame."""
    if len(frames) >= n_frames:
        return frames[:n_frames]
    pad = np.repeat(frames[-1:], n_frames - len(frames), axis=0)
    return np.concatenate([frames, pad])


def _merged_meta(query, partner, provenance):
    meta = dict(query.meta)
    meta["provenance"] = provenance
    meta["n_objects"] = query.meta.get("n_objects", 1) + partner.meta.get("n_objects", 1)
    meta["partner"] = {k: partner.meta.get(k) for k in ("seed", "sample_id", "objects")}
    meta["partner_expression"] = list(partner.expression)
    return meta


def concat_spatial(query: VideoSample, partner: VideoSample) -> VideoSample:
    """Query on the left, partner (height-matched, duration-matched) on the right."""
    t_len, h, w_q = query.frames.shape[:3]
    hp, wp = partner.frames.shape[1:3]
    w_p = max(1, int(round(wp * h / hp)))
    right = fit_duration(resize_frames(partner.frames, h, w_p), t_len)
    frames = np.concatenate([query.frames, right], axis=2)
    masks = np.concatenate([query.masks, np.zeros((t_len, h, w_p), dtype=bool)], axis=2)
    meta = _merged_meta(query, partner, "spatial-concat")
    meta["query_width"] = int(w_q)
    return VideoSample(frames, masks, list(query.expression), list(query.roles), meta)


def concat_temporal(query: VideoSample, partner: VideoSample) -> VideoSample:
    """Query frames first, then N_t partner frames whose ground truth is empty."""
    t_len, h, w = query.frames.shape[:3]
    tail = fit_duration(resize_frames(partner.frames, h, w), t_len)
    frames = np.concatenate([query.frames, tail])
    masks = np.concatenate([query.masks, np.zeros((t_len, h, w), dtype=bool)])
    meta = _merged_meta(query, partner, "temporal-concat")
    meta["query_frames"] = int(t_len)
    return VideoSample(frames, masks, list(query.expression), list(query.roles), meta)
