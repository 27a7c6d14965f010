"""``dsrlab`` command line: generate | train | eval | ablate.

A run is described by a JSON experiment file (``--config``) whose keys are::

    seed         top-level seed, split per consumer
    out          output directory
    train        TrainConfig fields
    generator    GenSpec fields          } exactly one data source;
    files        {source, target, oracle} } generator is the fallback
    evaluations  subset of EVALUATIONS

Flags override the file. Every command writes ``resolved_config.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, GenSpec, generate, load_features, save_features, save_oracle
from .errors import ConfigError, DataError, DsrError, NumericError
from .evaluate import accuracy, export_embedding, latent_means, run_probes
from .seeding import seed_for
from .trainer import CHECKPOINT_NAME, MODES, TrainConfig, load_model, train, train_ablation

log = logging.getLogger("dsrlab")

EVALUATIONS = ("source_accuracy", "target_accuracy", "probes", "embedding")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
DATA_FILES = ("source.csv", "target.csv", "oracle.csv")


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: Optional[GenSpec] = None
    files: Optional[dict] = None
    evaluations: tuple = EVALUATIONS

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {self.seed!r}")
        if self.generator is not None and self.files is not None:
            raise ConfigError("generator/files: give exactly one data source, not both")
        if self.files is not None:
            for key in ("source", "target"):
                if not self.files.get(key):
                    raise ConfigError(f"files.{key}: path required")
            extra = set(self.files) - {"source", "target", "oracle"}
            if extra:
                raise ConfigError(f"files: unknown keys {sorted(extra)}")
        bad = [e for e in self.evaluations if e not in EVALUATIONS]
        if bad:
            raise ConfigError(f"evaluations: unknown {bad}; choose from {EVALUATIONS}")
        self.train.validate()
        if self.generator is not None:
            self.generator.validate()

    def spec(self) -> GenSpec:
        return self.generator if self.generator is not None else GenSpec()

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "out": self.out, "train": self.train.to_dict(),
             "evaluations": list(self.evaluations)}
        if self.files is not None:
            d["files"] = dict(self.files)
        else:
            d["generator"] = self.spec().to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"seed", "out", "train", "generator", "files", "evaluations"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for key in ("train", "generator", "files"):
            if key in d and d[key] is not None and not isinstance(d[key], dict):
                raise ConfigError(f"{key}: expected an object")
        try:
            tc = TrainConfig.from_dict(d.get("train") or {})
            gen = GenSpec.from_dict(d["generator"]) if d.get("generator") is not None else None
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        ev = d.get("evaluations", list(EVALUATIONS))
        if not isinstance(ev, list):
            raise ConfigError("evaluations: expected a list")
        return cls(seed=d.get("seed", 0), out=d.get("out", "runs/default"), train=tc,
                   generator=gen, files=d.get("files"), evaluations=tuple(ev))


# -- config resolution -----------------------------------------------------


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"config: {path} must hold a JSON object")
    return d


def resolve(args: argparse.Namespace) -> ExperimentConfig:
    raw = _read_json(args.config) if args.config else {}
    if not args.config and getattr(args, "checkpoint", None):
        # eval/ablate without --config: reuse the run that produced the checkpoint
        sibling = Path(args.checkpoint).parent / "resolved_config.json"
        if sibling.exists():
            raw = _read_json(sibling)
            raw.pop("out", None)
    train_raw = dict(raw.get("train") or {})
    for flag in ("mode", "delta", "omega", "epochs"):
        v = getattr(args, flag, None)
        if v is not None:
            train_raw[flag] = v
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    raw["train"] = train_raw
    cfg = ExperimentConfig.from_dict(raw)
    cfg.train.seed = cfg.seed  # one seed for everything
    cfg.validate()
    return cfg


def load_dataset(cfg: ExperimentConfig, with_target_labels: bool) -> Dataset:
    """Build or read the dataset. Target labels are dropped unless requested."""
    if cfg.files is not None:
        oracle = cfg.files.get("oracle") if with_target_labels else None
        if with_target_labels and not oracle:
            raise ConfigError("files.oracle: evaluation needs the oracle file (target labels)")
        ds = load_features(cfg.files["source"], cfg.files["target"], oracle_path=oracle)
    else:
        ds = generate(cfg.spec(), seed_for(cfg.seed, "data"))
    if not with_target_labels:
        ds = Dataset(ds.source_x, ds.source_y, ds.target_x, None, ds.n_classes)
    return ds


def _write_resolved(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands --------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, force: bool = False) -> dict:
    if cfg.files is not None:
        raise ConfigError("generator: generate needs a generator spec, not input files")
    out = Path(cfg.out)
    existing = [n for n in DATA_FILES if (out / n).exists()]
    if existing and not force:
        raise ConfigError(f"out: {out} already holds {existing}; pass --force to overwrite")
    ds = generate(cfg.spec(), seed_for(cfg.seed, "data"))
    _write_resolved(cfg, out)
    save_features(ds, out / "source.csv", out / "target.csv")
    save_oracle(ds, out / "oracle.csv")
    summary = {"n_source": ds.n_source, "n_target": ds.n_target, "d": ds.d,
               "n_classes": ds.n_classes,
               "source_class_counts": np.bincount(ds.source_y, minlength=ds.n_classes).tolist()}
    print(json.dumps(summary))
    return summary


def cmd_train(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    view = load_dataset(cfg, with_target_labels=False).training_view()
    _write_resolved(cfg, out)
    result = train(cfg.train, view, out_dir=out)
    last = result.history[-1]
    print(json.dumps({"epochs": len(result.history), "total": last.losses["total"],
                      "source_accuracy": last.source_accuracy,
                      "checkpoint": str(result.checkpoint)}))
    return result.checkpoint


def cmd_ablate(cfg: ExperimentConfig, checkpoint) -> Path:
    out = Path(cfg.out)
    view = load_dataset(cfg, with_target_labels=False).training_view()
    _write_resolved(cfg, out)
    result = train_ablation(cfg.train, view, checkpoint, out_dir=out)
    last = result.history[-1]
    print(json.dumps({"epochs": len(result.history), "total": last.losses["total"],
                      "source_accuracy": last.source_accuracy,
                      "checkpoint": str(result.checkpoint)}))
    return result.checkpoint


def cmd_eval(cfg: ExperimentConfig, checkpoint) -> dict:
    out = Path(cfg.out)
    checkpoint = Path(checkpoint) if checkpoint else out / CHECKPOINT_NAME
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint: {checkpoint} not found")
    ds = load_dataset(cfg, with_target_labels=True)
    if ds.target_y is None:
        raise DataError("evaluation needs target labels")
    model = load_model(cfg.train, ds.d, ds.n_classes, checkpoint)
    _write_resolved(cfg, out)
    # paths relative to the output directory keep reports comparable across runs
    report: dict = {"checkpoint": os.path.relpath(checkpoint, out)}
    if "source_accuracy" in cfg.evaluations:
        report["source_accuracy"] = accuracy(model, ds.source_x, ds.source_y)
    if "target_accuracy" in cfg.evaluations:
        report["target_accuracy"] = accuracy(model, ds.target_x, ds.target_y)
    if "probes" in cfg.evaluations:
        probes = run_probes(model, ds, seed_for(cfg.seed, "probe"))
        report["probes"] = {k: v.as_dict() for k, v in probes.items()}
        with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
            for v in probes.values():
                fh.write(json.dumps({"kind": "probe", **v.as_dict()}) + "\n")
    if "embedding" in cfg.evaluations:
        x = np.concatenate([ds.source_x, ds.target_x])
        labels = np.concatenate([ds.source_y, ds.target_y])
        mu_y, _ = latent_means(model, x)
        export_embedding(mu_y, labels, ds.domain_tags(), out / "embedding.csv")
        report["embedding"] = "embedding.csv"
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, sort_keys=True))
    return report


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment file")
    common.add_argument("--seed", type=int, help="top-level seed (u64)")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--delta", type=float)
    common.add_argument("--omega", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing dataset files")
    p = argparse.ArgumentParser(prog="dsrlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train a model")
    for name, text in (("eval", "evaluate a checkpoint"), ("ablate", "resume without L_dom")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--checkpoint", required=(name == "ablate"))
    return p


def _setup_logging() -> None:
    level = os.environ.get("DSR_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"DSR_LOG: expected one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are config errors
        return 0 if exc.code == 0 else ConfigError.exit_code
    try:
        _setup_logging()
        cfg = resolve(args)
        if args.command == "generate":
            cmd_generate(cfg, force=args.force)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        else:
            cmd_ablate(cfg, args.checkpoint)
    except NumericError as exc:
        print(f"dsrlab: numeric divergence: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except DsrError as exc:
        print(f"dsrlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
