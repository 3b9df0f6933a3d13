"""Deterministic moving-shape videos with referring expressions and role structures."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..encoders import Vocabulary

ROLES = ("ARG0", "Verb", "ARG1", "ARGM-LOC", "ARGM-TMP")

COLORS = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.20, 0.35, 0.95),
    "yellow": (0.95, 0.90, 0.20),
    "white": (0.95, 0.95, 0.95),
}
SHAPES = ("circle", "square", "triangle")
VERBS = ("rests", "moves left", "moves right", "falls")
BACKGROUND = (0.05, 0.05, 0.08)

VOCAB = Vocabulary(
    list(COLORS) + list(SHAPES) + ["rests", "moves", "falls", "left", "right", "on", "the", "suddenly"]
)


class GenerationError(RuntimeError):
    """The requested scene cannot be laid out on the canvas."""


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    channels: int = 3
    n_frames: int = 16
    min_objects: int = 2
    max_objects: int = 5
    min_radius: int = 6
    max_radius: int = 9
    speed: int = 2  # horizontal px/frame for moving objects
    fall_speed: int = 6  # px/frame after the event, until the object reaches the floor
    kind: str = "mixed"  # "mixed" or "event"
    supersample: int = 4
    max_tries: int = 500

    @property
    def event_frame(self) -> int:
        return self.n_frames // 2


@dataclass
class SceneObject:
    shape: str
    color: str
    radius: int
    verb: str
    track: np.ndarray  # (T, 2) integer centres (x, y)

    @property
    def side(self) -> str:
        return "left" if self.track[0, 0] < self._width / 2 else "right"

    _width: int = field(default=64, repr=False)

    def attrs(self) -> dict:
        return {"shape": self.shape, "color": self.color, "verb": self.verb, "side": self.side}


@dataclass
class VideoSample:
    frames: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    masks: np.ndarray  # (T, H, W) bool
    expression: list  # words
    roles: list  # [(phrase, role), ...]
    meta: dict = field(default_factory=dict)

    @property
    def token_ids(self) -> list[int]:
        return VOCAB.encode(self.expression)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def copy(self) -> "VideoSample":
        return VideoSample(self.frames.copy(), self.masks.copy(), list(self.expression),
                           list(self.roles), copy.deepcopy(self.meta))


def validate_roles(roles: Sequence[tuple[str, str]]):
    kinds = [r for _, r in roles]
    if any(r not in ROLES for r in kinds):
        raise ValueError(f"unknown role in {roles}")
    if kinds.count("ARG0") != 1 or "Verb" not in kinds:
        raise ValueError(f"role structure needs exactly one ARG0 and a Verb: {roles}")


def roles_for(attrs: dict, with_side: bool) -> list[tuple[str, str]]:
    roles = [(f"{attrs['color']} {attrs['shape']}", "ARG0")]
    if with_side:
        roles.append((f"on the {attrs['side']}", "ARGM-LOC"))
    if attrs["verb"] == "falls":
        roles.append(("suddenly", "ARGM-TMP"))
    roles.append((attrs["verb"], "Verb"))
    return roles


def expression_from_roles(roles) -> list[str]:
    return " ".join(phrase for phrase, _ in roles).split()


def matches(roles, attrs: dict) -> bool:
    """Does an object with ``attrs`` satisfy every role realisation in ``roles``?"""
    for phrase, role in roles:
        if role == "ARG0" and phrase != f"{attrs['color']} {attrs['shape']}":
            return False
        if role == "Verb" and phrase != attrs["verb"]:
            return False
        if role == "ARGM-LOC" and phrase != f"on the {attrs['side']}":
            return False
    return True


def count_matches(roles, objects: Sequence[dict]) -> int:
    return sum(matches(roles, o) for o in objects)


def _coverage(shape: str, radius: int, ss: int) -> np.ndarray:
    """Anti-aliased coverage stamp of size (2R+1, 2R+1) centred on a pixel."""
    size = 2 * radius + 1
    offs = (np.arange(size * ss) + 0.5) / ss - radius - 0.5
    yy, xx = np.meshgrid(offs, offs, indexing="ij")
    if shape == "circle":
        inside = xx ** 2 + yy ** 2 <= radius ** 2
    elif shape == "square":
        half = 0.85 * radius
        inside = (np.abs(xx) <= half) & (np.abs(yy) <= half)
    elif shape == "triangle":
        top, base = -radius, 0.8 * radius
        # apex at (0, top), base corners at (+-radius, base)
        frac = (yy - top) / (base - top)
        inside = (yy >= top) & (yy <= base) & (np.abs(xx) <= frac * radius)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return inside.reshape(size, ss, size, ss).mean((1, 3))


def render(objects: Sequence[SceneObject], cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Returns frames (T, H, W, C) and per-object masks (n_obj, T, H, W)."""
    t_len, h, w = cfg.n_frames, cfg.height, cfg.width
    frames = np.empty((t_len, h, w, cfg.channels), dtype=np.float32)
    frames[:] = np.asarray(BACKGROUND, dtype=np.float32)[: cfg.channels]
    masks = np.zeros((len(objects), t_len, h, w), dtype=bool)
    for i, obj in enumerate(objects):
        stamp = _coverage(obj.shape, obj.radius, cfg.supersample).astype(np.float32)
        color = np.asarray(COLORS[obj.color], dtype=np.float32)[: cfg.channels]
        r = obj.radius
        for t, (cx, cy) in enumerate(obj.track):
            ys, xs = slice(cy - r, cy + r + 1), slice(cx - r, cx + r + 1)
            a = stamp[..., None]
            frames[t, ys, xs] = frames[t, ys, xs] * (1 - a) + color * a
            masks[i, t, ys, xs] = stamp >= 0.5
    return frames, masks


def _track(x, y, verb, cfg: SceneConfig, radius: int = 0) -> np.ndarray:
    t = np.arange(cfg.n_frames)
    xs = np.full(cfg.n_frames, x)
    ys = np.full(cfg.n_frames, y)
    if verb == "moves left":
        xs = x - cfg.speed * t
    elif verb == "moves right":
        xs = x + cfg.speed * t
    elif verb == "falls":
        floor = max(y, cfg.height - radius - 2)
        ys = np.minimum(y + cfg.fall_speed * np.clip(t - cfg.event_frame, 0, None), floor)
    return np.stack([xs, ys], 1).astype(np.int64)


def _fits(track, r, cfg) -> bool:
    return (track.min() >= r + 1 and track[:, 0].max() <= cfg.width - r - 2
            and track[:, 1].max() <= cfg.height - r - 2)


def _separated(track, r, placed) -> bool:
    for other in placed:
        gap = np.hypot(*(track - other.track).T)
        if (gap < 1.25 * (r + other.radius) + 2).any():
            return False
    return True


def _place(rng, shape, color, verb, radius, cfg, placed, y=None):
    for _ in range(cfg.max_tries):
        x0 = int(rng.integers(radius + 1, cfg.width - radius - 1))
        y0 = int(rng.integers(radius + 1, cfg.height - radius - 1)) if y is None else y
        track = _track(x0, y0, verb, cfg, radius)
        if _fits(track, radius, cfg) and _separated(track, radius, placed):
            obj = SceneObject(shape, color, radius, verb, track)
            obj._width = cfg.width
            return obj
    return None


def _event_scene(rng, cfg: SceneConfig):
    """Referent and an identical twin rest side by side; only the referent falls."""
    shape, color = SHAPES[rng.integers(len(SHAPES))], list(COLORS)[rng.integers(len(COLORS))]
    r = int(rng.integers(cfg.min_radius, cfg.max_radius + 1))
    # the referent must land at least one diameter below its twin
    y_hi = cfg.height - r - 2 - 2 * r
    if y_hi <= r + 1 or cfg.fall_speed < 1:
        raise GenerationError("canvas too short for the fall event")
    y = int(rng.integers(r + 1, y_hi + 1))
    placed = []
    ref = _place(rng, shape, color, "falls", r, cfg, placed, y=y)
    if ref is None:
        return None
    placed.append(ref)
    twin = _place(rng, shape, color, "rests", r, cfg, placed, y=y)
    if twin is None:
        return None
    placed.append(twin)
    n_extra = int(rng.integers(max(cfg.min_objects - 2, 0), max(cfg.max_objects - 2, 0) + 1))
    for _ in range(n_extra):
        while True:
            s, c = SHAPES[rng.integers(len(SHAPES))], list(COLORS)[rng.integers(len(COLORS))]
            if (s, c) != (shape, color):
                break
        verb = ("rests", "moves left", "moves right")[rng.integers(3)]
        obj = _place(rng, s, c, verb, int(rng.integers(cfg.min_radius, cfg.max_radius + 1)), cfg, placed)
        if obj is None:
            return None
        placed.append(obj)
    order = rng.permutation(len(placed))
    objects = [placed[i] for i in order]
    return objects, int(np.flatnonzero(order == 0)[0])


def _mixed_scene(rng, cfg: SceneConfig):
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    placed = []
    for _ in range(n):
        obj = _place(
            rng,
            SHAPES[rng.integers(len(SHAPES))],
            list(COLORS)[rng.integers(len(COLORS))],
            VERBS[rng.integers(len(VERBS))],
            int(rng.integers(cfg.min_radius, cfg.max_radius + 1)),
            cfg,
            placed,
        )
        if obj is None:
            return None
        placed.append(obj)
    return placed, int(rng.integers(n))


def _describe(objects, ref: int, rng, cfg: SceneConfig):
    attrs = [o.attrs() for o in objects]
    options = [False, True] if cfg.kind == "event" else [bool(rng.integers(2)), True]
    for with_side in dict.fromkeys(options):
        roles = roles_for(attrs[ref], with_side)
        if count_matches(roles, attrs) == 1:
            return roles
    return None


def generate_one(sample_id: int, cfg: SceneConfig, seed: int) -> VideoSample:
    rng = np.random.default_rng([seed, sample_id])
    build = _event_scene if cfg.kind == "event" else _mixed_scene
    for _ in range(cfg.max_tries):
        scene = build(rng, cfg)
        if scene is None:
            continue
        objects, ref = scene
        roles = _describe(objects, ref, rng, cfg)
        if roles is None:
            continue
        frames, masks = render(objects, cfg)
        meta = {
            "n_objects": len(objects),
            "event_frame": cfg.event_frame if objects[ref].verb == "falls" else None,
            "provenance": "single",
            "referent": ref,
            "objects": [o.attrs() for o in objects],
            "seed": seed,
            "sample_id": sample_id,
            "kind": cfg.kind,
        }
        return VideoSample(frames, masks[ref], expression_from_roles(roles), roles, meta)
    raise GenerationError(
        f"could not lay out a {cfg.kind} scene with {cfg.min_objects}-{cfg.max_objects} objects "
        f"on a {cfg.width}x{cfg.height} canvas"
    )


def generate(count: int, cfg: SceneConfig | None = None, seed: int = 0) -> list[VideoSample]:
    """``count`` samples; sample i draws from its own stream seeded by (seed, i)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cfg = cfg or SceneConfig()
    return [generate_one(i, cfg, seed) for i in range(count)]


_MIRROR = {"left": "right", "right": "left"}


def _mirror_words(text: str) -> str:
    return " ".join(_MIRROR.get(w, w) for w in text.split())


def flip_sample(sample: VideoSample) -> VideoSample:
    """Mirror about the vertical axis and swap left/right in the language."""
    meta = copy.deepcopy(sample.meta)
    for obj in meta.get("objects", []):
        obj["side"] = _MIRROR[obj["side"]]
        obj["verb"] = _mirror_words(obj["verb"])
    return VideoSample(
        np.ascontiguousarray(sample.frames[:, :, ::-1]),
        np.ascontiguousarray(sample.masks[:, :, ::-1]),
        [_MIRROR.get(w, w) for w in sample.expression],
        [(_mirror_words(p), r) for p, r in sample.roles],
        meta,
    )
