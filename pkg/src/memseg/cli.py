"""Command-line entry point: ``memseg {gen,train,infer,eval,bench}``.

Every command accepts ``--config FILE`` (``key = value`` lines, ``#`` comments)
and ``--set key=value`` overrides. Values resolve as flag > file > default and
the resolved values are printed as ``# key = value`` lines before any output.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

log = logging.getLogger("memseg")


@dataclass
class PathConfig:
    corpus: str = "data"  # dataset root read by train
    checkpoint: str = "model.lctr"  # written by train, read by infer
    output: str = "out"  # written by gen and infer
    count: int = 100  # gen: base videos before contrasting
    contrast: str = "none"  # gen: none | spatial | temporal
    kind: str = "mixed"  # gen: mixed | event
    n_frames: int = 16  # gen: frames per video
    threshold: float = 0.5  # infer


def _run_config_types():
    from .trainer import TrainConfig

    types = {f.name: type(f.default) for f in fields(TrainConfig)}
    types.update({f.name: type(f.default) for f in fields(PathConfig)})
    return types


def _coerce(key: str, raw: str, types: dict):
    if key not in types:
        raise ValueError(f"unknown config key {key!r}")
    kind = types[key]
    if kind is bool:
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    try:
        return kind(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config_file(path) -> dict:
    """``key = value`` per line; blank lines and ``#`` comments ignored."""
    types = _run_config_types()
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value, types)
    return out


def resolve(args) -> tuple:
    """Merge defaults, the config file and flags into (TrainConfig, PathConfig)."""
    from .trainer import TrainConfig

    types = _run_config_types()
    values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), value.strip(), types)
    for key in types:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    train_keys = {f.name for f in fields(TrainConfig)}
    train = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    paths = PathConfig(**{k: v for k, v in values.items() if k not in train_keys})
    if paths.contrast not in ("none", "spatial", "temporal"):
        raise ValueError(f"contrast must be none, spatial or temporal, not {paths.contrast!r}")
    return train, paths


def print_header(command: str, values: dict, out=None):
    out = out or sys.stdout
    print(f"# memseg {command}", file=out)
    for k in sorted(values):
        print(f"# {k} = {values[k]}", file=out)
    out.flush()


# ---------------------------------------------------------------- commands


def cmd_gen(args):
    from .corpus import SceneConfig, concat_spatial, concat_temporal, contrast_sample, generate, write_dataset

    train, paths = resolve(args)
    keys = ("output", "count", "contrast", "kind", "n_frames", "seed")
    merged = {**asdict(paths), "seed": train.seed}
    print_header("gen", {k: merged[k] for k in keys})
    if paths.count < 1:
        raise ValueError("count must be >= 1")
    cfg = SceneConfig(kind=paths.kind, n_frames=paths.n_frames)
    samples = generate(paths.count, cfg, seed=train.seed)
    if paths.contrast != "none":
        compose = concat_spatial if paths.contrast == "spatial" else concat_temporal
        samples = [compose(samples[i], samples[j]) for i, j in contrast_sample(samples, seed=train.seed)]
    write_dataset(paths.output, samples)
    print(f"wrote {len(samples)} samples to {paths.output}")


def cmd_train(args):
    from .corpus import read_dataset
    from .trainer import Checkpoint, train

    cfg, paths = resolve(args)
    print_header("train", {**asdict(cfg), "corpus": paths.corpus, "checkpoint": paths.checkpoint,
                           "resume": args.resume})
    corpus = read_dataset(paths.corpus)
    resume = Checkpoint.load(args.resume) if args.resume else None
    ckpt = train(cfg, corpus, resume=resume)
    ckpt.save(paths.checkpoint)
    print(f"saved step {ckpt.step} to {paths.checkpoint}")


def _videos(path: Path):
    from .corpus.storage import list_samples, read_sample

    if (path / "frames.bin").exists():
        return [(None, read_sample(path))]
    dirs = list_samples(path) if path.is_dir() else []
    if not dirs:
        raise FileNotFoundError(f"{path}: neither a sample directory nor a dataset root")
    return [(d.name, read_sample(d)) for d in dirs]


def cmd_infer(args):
    from .decoder import write_pbm, write_pgm
    from .trainer import Checkpoint, infer

    _, paths = resolve(args)
    print_header("infer", {"checkpoint": paths.checkpoint, "video": args.video, "output": paths.output,
                           "threshold": paths.threshold, "interval": args.interval})
    if not 0 <= paths.threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    model = Checkpoint.load(paths.checkpoint).build_model()
    n = 0
    for name, video in _videos(Path(args.video)):
        out = Path(paths.output) / name if name else Path(paths.output)
        out.mkdir(parents=True, exist_ok=True)
        for t, res in enumerate(infer(video, model, paths.threshold, args.interval)):
            write_pgm(out / f"frame_{t:05d}.pgm", res.pixel_probs)
            write_pbm(out / f"frame_{t:05d}.pbm", res.binary)
        n += 1
    print(f"segmented {n} videos into {paths.output}")


def _load_masks(path: Path) -> np.ndarray:
    """Masks of one video: ``masks.bin`` or a directory of ``frame_*.pbm``."""
    from .corpus.storage import read_masks
    from .decoder import read_pbm

    if (path / "masks.bin").exists():
        return read_masks(path / "masks.bin")
    pbms = sorted(path.glob("frame_*.pbm"))
    if not pbms:
        raise FileNotFoundError(f"{path}: no masks.bin or frame_*.pbm files")
    return np.stack([read_pbm(p) for p in pbms])


def _mask_sets(path: Path) -> dict:
    if (path / "masks.bin").exists() or any(path.glob("frame_*.pbm")):
        return {"": _load_masks(path)}
    subs = sorted(p for p in path.iterdir() if p.is_dir()) if path.is_dir() else []
    if not subs:
        raise FileNotFoundError(f"{path}: no masks found")
    return {p.name: _load_masks(p) for p in subs}


def cmd_eval(args):
    from .metrics import evaluate

    print_header("eval", {"pred": args.pred, "gt": args.gt, "csv": args.csv})
    preds, gts = _mask_sets(Path(args.pred)), _mask_sets(Path(args.gt))
    if set(preds) != set(gts):
        missing = sorted(set(gts) ^ set(preds))
        raise ValueError(f"prediction and ground-truth videos differ: {missing[:5]}")
    p_all, g_all = [], []
    for key in sorted(gts):
        if preds[key].shape != gts[key].shape:
            raise ValueError(f"{key or args.pred}: prediction shape {preds[key].shape} != {gts[key].shape}")
        p_all.extend(preds[key])
        g_all.extend(gts[key])
    report = evaluate(p_all, g_all)
    print(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())


def cmd_bench(args):
    from . import bench

    frames = [int(s) for s in args.frames_list.split(",") if s.strip()]
    if not frames or min(frames) < 1:
        raise ValueError("--frames-list needs positive integers")
    variants = [v.strip() for v in args.variants.split(",")]
    for v in variants:
        if v not in ("full", "memory"):
            raise ValueError(f"unknown variant {v!r}")
    print_header("bench", {"frames_list": frames, "tokens": args.tokens, "dim": args.dim,
                           "trials": args.trials, "warmup": args.warmup, "variants": variants})
    rows = bench.run(frames, args.tokens, args.dim, args.trials, args.warmup, variants)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            bench.to_csv(rows, fh)
    sys.stdout.write(bench.to_csv(rows))


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="memseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    g = sub.add_parser("gen", help="write a synthetic dataset")
    common(g)
    g.add_argument("output", nargs="?", default=None)
    g.add_argument("--count", type=int)
    g.add_argument("--contrast", choices=("none", "spatial", "temporal"))
    g.add_argument("--kind", choices=("mixed", "event"))
    g.add_argument("--frames", dest="n_frames", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset")
    common(t)
    t.add_argument("--corpus")
    t.add_argument("--checkpoint", help="where to write the trained checkpoint")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="segment videos with a checkpoint")
    common(i)
    i.add_argument("checkpoint", nargs="?", default=None)
    i.add_argument("video", help="sample directory or dataset root")
    i.add_argument("--output", "-o")
    i.add_argument("--threshold", type=float)
    i.add_argument("--interval", type=int, default=None, help="global-memory sampling interval")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predicted masks against ground truth")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--csv", help="also write metric,value rows here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time full attention vs the memory pipeline")
    b.add_argument("--frames-list", default="15,30,50,80,100")
    b.add_argument("--tokens", type=int, default=256)
    b.add_argument("--dim", type=int, default=768)
    b.add_argument("--trials", type=int, default=10)
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--variants", default="full,memory")
    b.add_argument("--csv", help="write rows here as well as to stdout")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"memseg {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
