"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric
error. Options can come from a TOML file (``--config``) with one table per
stage (``[synth]``, ``[split]``, ``[augment]``, ``[train]``, ``[train.model]``,
``[eval]``); flags given on the command line override file values.

Every stage that writes files records itself in ``manifest.json`` inside its
output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .augment import AugmentConfig, augment_dataset
from .dataset import SplitSpec, atomic_write, load_dataset, save_dataset, split_by_match
from .errors import DataError, NumericError
from .evaluation import DEFAULT_THRESHOLD, evaluate, player_timeline, predict_logits
from .features import DEFAULT_SCHEMA
from .match import discover_matches, load_match, match_paths, save_match
from .nn import ModelConfig, sigmoid
from .synthgen import generate_corpus
from .train import TrainConfig, load_checkpoint, train
from .windowing import WindowSet, extract_all

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MANIFEST = "manifest.json"


class UsageError(Exception):
    def __init__(self, message: str, usage: str = "") -> None:
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: error: {message}", self.format_usage())


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    matches: int = 60
    cheater_fraction: float = 0.4
    players: int = 4


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def _build(cls, section: dict, overrides: dict):
    """``cls`` from defaults, then the config table, then non-None flag values."""
    data = dict(section)
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise UsageError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__}: {exc}") from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _describe(paths) -> list[dict]:
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.iterdir() if q.is_file()) if p.is_dir() else [p]
        for f in files:
            if f.name != MANIFEST:
                out.append({"path": str(f), "sha256": _sha256(f)})
    return out


def _write_manifest(out_dir: Path, key: str, command: str, config: dict, inputs, outputs,
                    seeds: dict, started: float) -> None:
    """Merge this stage's entry into ``out_dir/manifest.json``.

    Only the ``timing`` field differs between identical runs.
    """
    path = out_dir / MANIFEST
    manifest = {"tool": "tickguard", "version": __version__, "stages": {}}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            pass
    manifest["version"] = __version__
    manifest.setdefault("stages", {})[key] = {
        "command": command,
        "config": config,
        "inputs": _describe(inputs),
        "outputs": _describe(outputs),
        "seeds": seeds,
        "timing": {"started_unix": round(started, 3),
                   "elapsed_s": round(time.time() - started, 3)},
    }
    atomic_write(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


def _pool_map(fn, items, threads: int):
    """Ordered map; results do not depend on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _save_generated(job):
    match, out_dir = job
    save_match(match, Path(out_dir) / match.match_id)
    return match.match_id


def _extract_one(stem):
    return extract_all(load_match(stem)).windows


def cmd_synth(args, cfg: dict) -> int:
    started = time.time()
    sc = _build(SynthConfig, cfg.get("synth", {}), {
        "seed": args.seed, "matches": args.matches,
        "cheater_fraction": args.cheater_fraction, "players": args.players,
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(sc.seed, sc.matches, sc.cheater_fraction, players=sc.players)
    ids = _pool_map(_save_generated, [(m, str(out)) for m in corpus], args.threads)
    _write_manifest(out, "synth", "synth", asdict(sc), [], [out], {"seed": sc.seed}, started)
    print(f"wrote {len(ids)} matches to {out}")
    return 0


def cmd_extract(args, cfg: dict) -> int:
    started = time.time()
    src = Path(args.inp)
    stems = discover_matches(src) if src.is_dir() else [src]
    if not stems:
        raise DataError(f"no matches found in {src}")
    windows = [w for ws in _pool_map(_extract_one, stems, args.threads) for w in ws]
    out = Path(args.out)
    ws = WindowSet(windows, DEFAULT_SCHEMA.hash)
    save_dataset(ws, out)
    _write_manifest(out.parent, f"extract:{out.name}", "extract",
                    {"schema_hash": DEFAULT_SCHEMA.hash}, [src], [out], {}, started)
    print(f"{len(ws)} windows ({ws.counts[1]} cheater) from {len(stems)} matches -> {out}")
    return 0


def cmd_split(args, cfg: dict) -> int:
    started = time.time()
    spec = _build(SplitSpec, cfg.get("split", {}), {
        "train": args.train, "val": args.val, "test": args.test, "seed": args.seed,
    })
    windows = load_dataset(args.inp)
    parts = split_by_match(windows, spec)
    out = Path(args.out)
    paths = [out / f"{name}.acpt" for name in ("train", "val", "test")]
    for part, path in zip(parts, paths):
        save_dataset(part, path)
    _write_manifest(out, "split", "split", asdict(spec), [args.inp], paths,
                    {"seed": spec.seed}, started)
    for name, part in zip(("train", "val", "test"), parts):
        print(f"{name}: {len(part.match_ids())} matches, {len(part)} windows, {part.counts}")
    return 0


def cmd_augment(args, cfg: dict) -> int:
    started = time.time()
    ac = _build(AugmentConfig, cfg.get("augment", {}), {
        "sigma": args.sigma, "cheater_copies": args.cheater_copies,
        "noncheater_copies": args.noncheater_copies, "seed": args.seed,
    })
    windows = load_dataset(args.inp)
    if any(w.augmented for w in windows):
        raise DataError(f"{args.inp} already contains augmented windows")
    out_set = augment_dataset(windows, ac)
    out = Path(args.out)
    save_dataset(out_set, out)
    _write_manifest(out.parent, f"augment:{out.name}", "augment", asdict(ac), [args.inp], [out],
                    {"seed": ac.seed}, started)
    print(f"{len(windows)} -> {len(out_set)} windows {out_set.counts} -> {out}")
    return 0


def _train_config(args, cfg: dict) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    model = _build(ModelConfig, section.pop("model", {}), {})
    return _build(TrainConfig, section, {
        "seed": args.seed, "max_epochs": args.epochs, "patience": args.patience,
        "batch_size": args.batch_size, "base_lr": args.lr, "threshold": args.threshold,
        "model": model,
    })


def cmd_train(args, cfg: dict) -> int:
    started = time.time()
    tc = _train_config(args, cfg)
    train_set = load_dataset(args.train)
    val_set = load_dataset(args.val)
    out = Path(args.out)
    result = train(tc, train_set, val_set, out_dir=out,
                   log=lambda line: print(line, file=sys.stderr))
    _write_manifest(out, "train", "train", tc.to_dict(), [args.train, args.val],
                    [out / "best.ckpt", out / "last.ckpt", out / "history.csv"],
                    {"seed": tc.seed}, started)
    b = result.best
    print(f"best epoch {b.epoch}: val_loss {b.val_metrics['loss']:.6f} "
          f"val_acc {b.val_metrics['accuracy']:.4f} val_auc {b.val_metrics['auc']:.4f}")
    return 0


def cmd_eval(args, cfg: dict) -> int:
    started = time.time()
    threshold = args.threshold
    if threshold is None:
        threshold = cfg.get("eval", {}).get("threshold", DEFAULT_THRESHOLD)
    ckpt = load_checkpoint(args.checkpoint)
    windows = load_dataset(args.data)
    report = evaluate(ckpt.params, windows, threshold, schema_hash=ckpt.schema_hash)
    summary = {k: v for k, v in report.to_dict().items() if k != "roc"}
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out is not None:
        out = Path(args.out)
        atomic_write(out / "report.json", report.to_json().encode())
        atomic_write(out / "roc.csv", report.roc_csv().encode())
        _write_manifest(out, "eval", "eval", {"threshold": threshold},
                        [args.checkpoint, args.data], [out / "report.json", out / "roc.csv"],
                        {}, started)
    return 0


def cmd_infer(args, cfg: dict) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.data is not None:
        windows = load_dataset(args.data)
    else:
        windows = extract_all(load_match(args.match))
    if windows.schema_hash != ckpt.schema_hash:
        raise DataError("windows and checkpoint use different feature schemas")
    x, _ = windows.stack()
    logits = predict_logits(ckpt.params, x)
    probs = sigmoid(logits)
    print("match_id,kill_tick,attacker_id,logit,probability")
    for w, z, p in zip(windows, logits, probs):
        print(f"{w.match_id},{w.kill_tick},{w.attacker_id},{float(z)!r},{float(p)!r}")
    return 0


def cmd_timeline(args, cfg: dict) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.checkpoint)
    match = load_match(args.match)
    tl = player_timeline(ckpt.params, match, args.player)
    text = tl.to_csv()
    if args.out is None:
        sys.stdout.write(text)
    else:
        out = Path(args.out)
        atomic_write(out, text.encode())
        _write_manifest(out.parent, f"timeline:{out.name}", "timeline",
                        {"player": args.player}, [args.checkpoint, *match_paths(args.match)],
                        [out], {},
                        started)
    print(f"{args.player}: mean probability {tl.mean:.4f} over {len(tl.probability)} kills",
          file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tickguard", description="Kill-window cheat detection pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="TOML file with per-stage option tables")
        p.set_defaults(fn=fn)
        return p

    p = command("synth", cmd_synth, "generate a synthetic match corpus")
    p.add_argument("--out", required=True, help="output directory for match files")
    p.add_argument("--matches", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--cheater-fraction", type=float)
    p.add_argument("--players", type=int)
    p.add_argument("--threads", type=int, default=1)

    p = command("extract", cmd_extract, "turn match files into a window dataset")
    p.add_argument("--in", dest="inp", required=True, help="match directory or match stem")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--threads", type=int, default=1)

    p = command("split", cmd_split, "split a dataset by match into train/val/test")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="directory for train/val/test.acpt")
    p.add_argument("--train", type=float)
    p.add_argument("--val", type=float)
    p.add_argument("--test", type=float)
    p.add_argument("--seed", type=int)

    p = command("augment", cmd_augment, "append translated copies of each window")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--cheater-copies", type=int)
    p.add_argument("--noncheater-copies", type=int)
    p.add_argument("--seed", type=int)

    p = command("train", cmd_train, "train a model with early stopping")
    p.add_argument("--train", required=True, help="training dataset")
    p.add_argument("--val", required=True, help="validation dataset")
    p.add_argument("--out", required=True, help="directory for checkpoints and history")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="maximum number of epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--threshold", type=float)

    p = command("eval", cmd_eval, "score a held-out dataset and report metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", help="directory for report.json and roc.csv")

    p = command("infer", cmd_infer, "print logit and probability per window")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="window dataset file")
    src.add_argument("--match", help="match stem or file; every scorable kill is scored")

    p = command("timeline", cmd_timeline, "per-kill probabilities for one player")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--match", required=True)
    p.add_argument("--player", required=True)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        cfg = _read_config(args.config)
        return args.fn(args, cfg)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        if exc.usage:
            sys.stderr.write(exc.usage)
        print(exc, file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
