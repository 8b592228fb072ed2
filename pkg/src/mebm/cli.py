"""``mebm`` command line: synth, train, ablate, gradcheck."""

from __future__ import annotations

import argparse
import dataclasses
import gc
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checks import format_results, run_gradcheck
from .config import VARIANTS, AblationFlags, ModelConfig, from_dict
from .data import PHONEMES, DatasetManifest, PhonemeVocab, SynthSpec, synth_session, write_megb
from .sampling import WindowPool, build_validation_set
from .training import TrainConfig, fit, fit_pools, load_normalized_sessions

log = logging.getLogger("mebm")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    """Bad input on the command line or in a config file (exit code 2)."""


@dataclass
class RunConfig:
    manifest: str | None = None
    out_dir: str = "runs"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5)

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "RunConfig":
        known = {"manifest", "out_dir", "model", "train", "flags", "seeds"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        try:
            cfg = cls(
                manifest=doc.get("manifest"),
                out_dir=doc.get("out_dir", "runs"),
                model=from_dict(ModelConfig, doc.get("model", {})),
                train=from_dict(TrainConfig, doc.get("train", {})),
                flags=from_dict(AblationFlags, doc.get("flags", {})),
                seeds=tuple(int(s) for s in doc.get("seeds", (0, 1, 2, 3, 4, 5))),
            )
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from None
        if base is not None:
            # relative paths in a config file are relative to that file
            if cfg.manifest is not None and not Path(cfg.manifest).is_absolute():
                cfg.manifest = str(base / cfg.manifest)
            if not Path(cfg.out_dir).is_absolute():
                cfg.out_dir = str(base / cfg.out_dir)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: top level must be an object")
        return cls.from_dict(doc, base=path.parent)

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "out_dir": self.out_dir,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "flags": self.flags.to_dict(),
            "seeds": list(self.seeds),
        }


def parse_seeds(text: str) -> tuple[int, ...]:
    """``0..5`` (inclusive range) or a comma list like ``0,2,7``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = tuple(range(int(lo), int(hi) + 1))
        else:
            seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list '{text}'") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _limit_threads() -> None:
    value = os.environ.get("MEBM_THREADS")
    if not value:
        return
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"MEBM_THREADS must be an integer, got '{value}'") from None
    from threadpoolctl import threadpool_limits
    threadpool_limits(limits=max(1, n))


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "manifest", None):
        cfg.manifest = args.manifest
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if getattr(args, "seeds", None) is not None:
        cfg.seeds = args.seeds
    if not cfg.manifest:
        raise UsageError("no manifest given (set 'manifest' in the config or pass --manifest)")
    if not Path(cfg.manifest).is_file():
        raise UsageError(f"manifest not found: {cfg.manifest}")
    return cfg


# -- commands -----------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec(n_sessions=args.sessions + 2, events_per_class_per_session=args.events_per_class,
                     snr=args.snr, seed=args.seed, class_specificity=args.class_specificity)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    entries = []
    for s in range(spec.n_sessions):
        role = "train" if s < args.sessions else "validation"
        rec = synth_session(spec, s)
        name = f"{rec.session_id}.megb"
        write_megb(rec, out / name)
        entries.append((name, role))
        log.info("wrote %s (%s, %d events, %d samples)", name, role, len(rec.onsets), rec.n_samples)
        del rec
        gc.collect()
    PhonemeVocab().save(out / "vocab.txt")
    DatasetManifest(entries, vocab="vocab.txt").save(out / "manifest.json")
    print(f"{len(entries)} sessions, manifest at {out / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out_dir)
    res = fit(cfg.manifest, cfg.model, cfg.train, cfg.flags, out_dir=out)
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(res.report.table(PHONEMES))
    print(f"best epoch {res.best_epoch}; outputs in {out}")
    return 0


def format_cell(values) -> str:
    """Percent ``mean±std`` with two decimals; std is the sample (n-1) std."""
    v = 100.0 * np.asarray(values, dtype=np.float64)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return f"{v.mean():.2f}±{sd:.2f}"


def ablation_table(results: dict[str, dict[str, list[float]]]) -> str:
    head = f"{'Variant':<22}{'F1 macro (%)':>16}{'Top-3 macro (%)':>18}{'Top-5 macro (%)':>18}"
    lines = [head, "-" * len(head)]
    for name, metrics in results.items():
        lines.append(f"{name:<22}{format_cell(metrics['f1']):>16}{format_cell(metrics['top3']):>18}"
                     f"{format_cell(metrics['top5']):>18}")
    return "\n".join(lines)


def run_ablation(cfg: RunConfig, variants=None, out_dir: Path | None = None) -> dict[str, dict[str, list[float]]]:
    manifest = DatasetManifest.load(cfg.manifest)
    val_pool = WindowPool(load_normalized_sessions(manifest.paths("validation")), release=True)
    validations = {seed: build_validation_set(val_pool, seed) for seed in cfg.seeds}
    del val_pool
    gc.collect()
    pool = WindowPool(load_normalized_sessions(manifest.paths("train")), release=True)
    results: dict[str, dict[str, list[float]]] = {}
    for name in variants or VARIANTS:
        flags = VARIANTS[name]
        scores = {"f1": [], "top3": [], "top5": []}
        for seed in cfg.seeds:
            train_cfg = dataclasses.replace(cfg.train, seed=seed)
            run_dir = None if out_dir is None else out_dir / _slug(name) / f"seed{seed}"
            res = fit_pools(pool, validations[seed], cfg.model, train_cfg, flags, out_dir=run_dir)
            scores["f1"].append(res.report.f1_macro)
            scores["top3"].append(res.report.top3)
            scores["top5"].append(res.report.top5)
            log.info("%s seed %d: f1 %.4f", name, seed, res.report.f1_macro)
        results[name] = scores
    return results


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name.lower()).strip("_")


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation(cfg, out_dir=out if args.keep_runs else None)
    table = ablation_table(results)
    (out / "ablation.txt").write_text(table + "\n")
    (out / "ablation.json").write_text(json.dumps({"seeds": list(cfg.seeds), "results": results}, indent=2) + "\n")
    print(table)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(include_model=not args.skip_model)
    print(format_results(results))
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mebm", description="MEG phoneme decoder toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic MEGB sessions and a manifest")
    s.add_argument("--sessions", type=int, default=3, help="number of training sessions")
    s.add_argument("--events-per-class", type=int, default=20)
    s.add_argument("--snr", type=float, default=4.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--class-specificity", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config")
    t.add_argument("--manifest")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train every ablation variant across seeds")
    a.add_argument("--config")
    a.add_argument("--manifest")
    a.add_argument("--out")
    a.add_argument("--seeds", type=parse_seeds)
    a.add_argument("--keep-runs", action="store_true", help="keep per-run checkpoints and histories")
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op")
    g.add_argument("--skip-model", action="store_true")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        _limit_threads()
        return args.func(args)
    except UsageError as exc:
        print(f"mebm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"mebm: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
