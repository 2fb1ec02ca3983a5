"""``gpmvc`` command line: masks, single runs, sweeps, reports, sample dumps.

Exit codes: 0 success, 2 invalid input, 3 failure while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import report
from .dataio import PartialSplit, load_dataset, make_partial_split
from .errors import ConfigError, DatasetError, GPMVCError, ShapeError
from .trainer import ABLATION_MODES, TrainConfig, run_baseline, run_pipeline

log = logging.getLogger("gpmvc")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
SWEEP_MODES = ABLATION_MODES + ("baseline",)


class UsageError(Exception):
    """Bad command-line input; maps to exit code 2."""


@dataclass
class SweepSpec:
    data: str
    ratios: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    repeats: int = 10
    base_seed: int = 0
    modes: list[str] = field(default_factory=lambda: ["ALL"])
    out: str = "sweep"
    config: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if not self.ratios:
            raise ConfigError("ratios must not be empty")
        if any(not 0.0 <= r <= 1.0 for r in self.ratios):
            raise ConfigError("ratio must be in [0,1]")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        bad = [m for m in self.modes if m not in SWEEP_MODES]
        if bad or not self.modes:
            raise ConfigError(f"modes must be drawn from {SWEEP_MODES}, got {self.modes}")
        # fail early on a bad config rather than once per run
        TrainConfig.from_dict(self.config)

    @classmethod
    def load(cls, path) -> "SweepSpec":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"sweep spec not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"sweep spec {path} is not valid JSON: {exc}") from exc
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sweep spec keys: {sorted(unknown)}")
        if "data" not in raw:
            raise ConfigError("sweep spec needs a 'data' path")
        # relative paths are resolved against the spec's directory
        for key in ("data", "out"):
            if key in raw and not Path(raw[key]).is_absolute():
                raw[key] = str(path.parent / raw[key])
        if "out" not in raw:
            raw["out"] = str(path.parent / "sweep")
        return cls(**raw)

    def jobs(self) -> list[dict]:
        return [
            {"data": self.data, "ratio": float(r), "seed": self.base_seed + i, "mode": m,
             "config": self.config,
             "out": str(Path(self.out) / "runs" / _mode_dir(m) / f"r{r:g}" / f"s{self.base_seed + i}")}
            for m in self.modes for r in self.ratios for i in range(self.repeats)
        ]


def _mode_dir(mode: str) -> str:
    return mode.replace("+", "_")


# commands ------------------------------------------------------------------


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def cmd_mask(args) -> int:
    ds = load_dataset(_need_file(args.data, "dataset"))
    split = make_partial_split(ds, args.ratio, args.seed)
    out = Path(args.out)
    if out.exists():
        log.warning("overwriting %s", out)
    out.parent.mkdir(parents=True, exist_ok=True)
    split.save(out)
    print(f"wrote {out}: {len(split.paired_idx)} paired, unpaired per view {split.view_counts()}")
    return EXIT_OK


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = _need_file(path, "config file")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid config file {p}: {exc}") from exc
    TrainConfig.from_dict(cfg)
    return cfg


def cmd_run(args) -> int:
    data = _need_file(args.data, "dataset")
    split = PartialSplit.load(_need_file(args.mask, "mask file"))
    cfg = _load_config(args.config)
    ds = load_dataset(data)
    split.check_compatible(ds)
    # the mask seed drives training unless the config pins its own
    seed = int(cfg.get("seed", split.seed))
    config = TrainConfig.from_dict({**cfg, "seed": seed})
    result = run_pipeline(ds, split.impartial_ratio, seed, config, out_dir=args.out,
                          split=split, data_path=data)
    print(f"{result.mode} ratio={result.ratio:g} seed={seed} "
          f"acc={result.acc:.4f} nmi={result.nmi:.4f} purity={result.purity:.4f}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    data = _need_file(args.data, "dataset")
    split = PartialSplit.load(_need_file(args.mask, "mask file"))
    cfg = _load_config(args.config)
    ds = load_dataset(data)
    split.check_compatible(ds)
    config = TrainConfig.from_dict({**cfg, "seed": int(cfg.get("seed", split.seed))})
    result = run_baseline(ds, split, config)
    _write_baseline(Path(args.out), split, config, result)
    print(f"baseline ratio={result.ratio:g} acc={result.acc:.4f} nmi={result.nmi:.4f} "
          f"purity={result.purity:.4f}")
    return EXIT_OK


def _write_baseline(out: Path, split, config, result) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    split.save(out / "mask.json")
    (out / "metrics.json").write_text(json.dumps(result.metrics(), indent=2) + "\n")


def _sweep_job(job: dict) -> dict:
    """Run one (mode, ratio, seed) cell in isolation; never raises."""
    try:
        ds = load_dataset(job["data"])
        split = make_partial_split(ds, job["ratio"], job["seed"])
        if job["mode"] == "baseline":
            config = TrainConfig.from_dict({**job["config"], "seed": job["seed"]})
            result = run_baseline(ds, split, config)
            _write_baseline(Path(job["out"]), split, config, result)
        else:
            config = TrainConfig.from_dict(
                {**job["config"], "seed": job["seed"], "ablation_mode": job["mode"]})
            result = run_pipeline(ds, job["ratio"], job["seed"], config, out_dir=job["out"],
                                  split=split, data_path=job["data"])
        return {**job, "ok": True, "metrics": result.metrics()}
    except Exception as exc:  # recorded, the sweep carries on
        return {**job, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def cmd_sweep(args) -> int:
    spec = SweepSpec.load(args.spec)
    _need_file(spec.data, "dataset")
    if args.workers is not None:
        spec.workers = args.workers
    jobs = spec.jobs()
    print(f"sweep: {len(jobs)} runs, {spec.workers} worker(s), output {spec.out}")
    if spec.workers == 1:
        outcomes = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(_sweep_job, jobs))
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = [o for o in outcomes if not o["ok"]]
    (out / "failures.json").write_text(json.dumps(
        [{k: o[k] for k in ("mode", "ratio", "seed", "out", "error")} for o in failed],
        indent=2) + "\n")
    for o in failed:
        log.error("run %s ratio=%g seed=%d failed: %s", o["mode"], o["ratio"], o["seed"], o["error"])
    done = [o["metrics"] for o in outcomes if o["ok"]]
    if not done:
        print("sweep: every run failed, see failures.json", file=sys.stderr)
        return EXIT_RUNTIME
    cells = report.aggregate(done)
    (out / "summary.csv").write_text(report.summary_csv(cells))
    tables = "".join(f"### {m.upper()}\n\n{report.metric_table(cells, m, 'md')}\n"
                     for m in report.METRICS)
    (out / "summary.md").write_text(tables)
    print(tables, end="")
    print(f"{len(done)} of {len(jobs)} runs completed; summary in {out / 'summary.csv'}")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_report(args) -> int:
    records = report.collect_metrics(_need_file(args.runs, "run directory"))
    if not records:
        raise UsageError(f"no metrics.json files under {args.runs}")
    cells = report.aggregate(records)
    out = Path(args.out) if args.out else Path(args.runs)
    out.mkdir(parents=True, exist_ok=True)
    table = report.metric_table(cells, "acc", args.format)
    (out / f"acc_table.{args.format}").write_text(table)
    print(table, end="")
    if args.plots:
        for metric in ("nmi", "purity"):
            path = out / f"{metric}.png"
            modes = report.plot_curves(cells, metric, path)
            print(f"wrote {path} ({', '.join(modes)})")
    return EXIT_OK


def cmd_dump_generated(args) -> int:
    from .networks import load_checkpoint
    from .samples import dump_generated

    if args.count < 1:
        raise UsageError("count must be at least 1: nothing to dump")
    run = _need_file(args.run, "run directory")
    run_cfg = json.loads(_need_file(run / "config.json", "run config").read_text())
    data = args.data or run_cfg.get("dataset", {}).get("path")
    if data is None:
        raise UsageError("run does not record its dataset path; pass --data")
    ds = load_dataset(_need_file(data, "dataset"))
    if args.view not in range(ds.V):
        raise UsageError(f"view must be in 0..{ds.V - 1}")
    if args.view not in ds.image_shapes:
        raise UsageError(
            f"view {args.view} ({ds.dims[args.view]} features) has no image metadata; "
            "add image_shapes to the dataset manifest to dump sample grids")
    split = PartialSplit.load(_need_file(run / "mask.json", "mask file"))
    state, _ = load_checkpoint(_need_file(run / "checkpoint.bin", "checkpoint"))
    out = Path(args.out) if args.out else run / "generated_samples"
    png = dump_generated(state, ds, split, args.view, args.count, out, source=args.source)
    print(f"wrote {png}")
    return EXIT_OK


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpmvc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mask", help="draw a paired/unpaired mask for a dataset")
    m.add_argument("--data", required=True, help="dataset directory or manifest.json")
    m.add_argument("--ratio", type=float, required=True, help="fraction of paired samples")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="mask file to write")
    m.set_defaults(func=cmd_mask)

    r = sub.add_parser("run", help="train and evaluate one run")
    r.add_argument("--data", required=True)
    r.add_argument("--mask", required=True)
    r.add_argument("--config", default=None, help="JSON training config (optional)")
    r.add_argument("--out", required=True, help="run directory")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("baseline", help="mean-impute baseline for one mask")
    b.add_argument("--data", required=True)
    b.add_argument("--mask", required=True)
    b.add_argument("--config", default=None)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    s = sub.add_parser("sweep", help="ratios x repeats x modes, aggregated")
    s.add_argument("--spec", required=True, help="JSON sweep spec")
    s.add_argument("--workers", type=int, default=None, help="override the spec's worker count")
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="tables and curves from run directories")
    rep.add_argument("--runs", required=True, help="directory searched for metrics.json")
    rep.add_argument("--format", choices=["csv", "md"], default="md")
    rep.add_argument("--plots", action="store_true", help="also write nmi.png and purity.png")
    rep.add_argument("--out", default=None, help="output directory (default: --runs)")
    rep.set_defaults(func=cmd_report)

    d = sub.add_parser("dump-generated", help="real/generated/target image grid")
    d.add_argument("--run", required=True)
    d.add_argument("--view", type=int, required=True)
    d.add_argument("--count", type=int, default=8)
    d.add_argument("--source", type=int, default=None, help="view to translate from")
    d.add_argument("--data", default=None, help="dataset (default: path recorded in the run)")
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_dump_generated)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError, ShapeError, FileNotFoundError) as exc:
        print(f"gpmvc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (GPMVCError, RuntimeError, ValueError) as exc:
        print(f"gpmvc {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
