"""Command-line front end.

    mvlrr synth     write a synthetic multi-view dataset
    mvlrr cluster   fit the factorisation model and cluster the consensus affinity
    mvlrr baseline  concatenation or single-view spectral clustering
    mvlrr eval      ACC / NMI of a labeling against ground truth
    mvlrr heatmap   render an affinity CSV as an ASCII PGM image

Exit codes: 0 success, 2 usage or input error, 3 solver did not converge,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from .baselines import concat_baseline, single_view_baseline
from .data import (
    DataError,
    Partition,
    corrupt,
    load_views,
    read_labels,
    read_matrix_csv,
    save_views,
    synth_multiview,
    write_labels,
    write_matrix_csv,
)
from .graph import DegenerateViewError
from .solver import ConfigError, NumericalError, SolverConfig, parse_config_text, solve
from .spectral import EigenError, consensus_affinity, spectral_clustering, view_affinity, write_pgm

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_NUMERICAL = 4

SEED_ENV = "MVLRR_SEED"

log = logging.getLogger("mvlrr")


class UsageError(Exception):
    pass


@dataclass
class RunReport:
    command: str
    config: dict
    dataset: dict
    corruption: Optional[dict] = None
    consensus: Optional[dict] = None
    per_view: list = field(default_factory=list)
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    wall_time_s: Optional[float] = None
    trace: Optional[dict] = None
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(**json.loads(text))


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {value!r}") from None


# -- argument plumbing ---------------------------------------------------------------


def _config_type(f):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if kind == "int":
        return int
    if "float" in kind:
        return float
    return str


def _add_config_flags(parser):
    group = parser.add_argument_group("solver settings (override --config)")
    for f in dataclasses.fields(SolverConfig):
        kwargs = {"type": _config_type(f), "default": None, "dest": f"cfg_{f.name}"}
        if f.name == "u_update_mode":
            kwargs["choices"] = ["faithful", "gradient_consistent"]
        elif f.name == "e_init_mode":
            kwargs["choices"] = ["zero", "paper_sparse"]
        elif f.name == "indicator_norm":
            kwargs["choices"] = ["sqrt", "paper"]
        group.add_argument(f"--{f.name}", **kwargs)
    parser.add_argument("--config", type=Path, help="flat key=value settings file")


def resolve_config(args, fallback_d=None) -> SolverConfig:
    """CLI flag > config file > built-in default (the seed default honours MVLRR_SEED)."""
    values = {"seed": default_seed()}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc.strerror}") from None
        values.update(parse_config_text(text))
    for f in dataclasses.fields(SolverConfig):
        flag = getattr(args, f"cfg_{f.name}")
        if flag is not None:
            values[f.name] = flag
    if "d" not in values:
        if fallback_d is None:
            raise UsageError("the cluster count --d is required when no labels are given")
        values["d"] = fallback_d
    return SolverConfig.from_dict(values)


def _load(args):
    for p in args.views:
        if not Path(p).is_file():
            raise UsageError(f"view file not found: {p}")
    if args.labels is not None and not Path(args.labels).is_file():
        raise UsageError(f"labels file not found: {args.labels}")
    return load_views(args.views, orientation=args.orientation, labels_path=args.labels)


def _dataset_block(args, ds) -> dict:
    return {
        "views": [str(p) for p in args.views],
        "labels": None if args.labels is None else str(args.labels),
        "orientation": args.orientation,
        "n": ds.n,
        "dims": [v.feature_dim for v in ds.views],
    }


def _apply_corruption(args, ds, seed):
    if not args.corrupt:
        return ds, None
    block = {"fraction": args.corrupt, "low": -5.0, "high": 5.0, "seed": seed}
    return corrupt(ds, args.corrupt, -5.0, 5.0, seed=seed), block


def _score(pred, truth) -> Optional[dict]:
    return None if truth is None else metrics.report(pred, truth)


# -- commands ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        dims = [int(x) for x in args.dims.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--dims must be comma-separated integers, got {args.dims!r}") from None
    if not dims:
        raise UsageError("--dims must list at least one view dimension")
    seed = default_seed() if args.seed is None else args.seed
    ds = synth_multiview(args.n, args.clusters, dims, args.separation, args.noise, seed)
    out = Path(args.out)
    written = save_views(ds, out)
    manifest = {
        "generator": "synth_multiview",
        "n": args.n,
        "clusters": args.clusters,
        "dims": dims,
        "separation": args.separation,
        "noise_std": args.noise,
        "seed": seed,
        "orientation": "samples",
        "views": [p.name for p in written if p.name.startswith("view")],
        "labels": "labels.csv",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"written": [str(p) for p in written] + [str(out / "manifest.json")]}))
    return EXIT_OK


def cmd_cluster(args) -> int:
    started = time.perf_counter()
    ds = _load(args)
    truth = ds.ground_truth
    config = resolve_config(args, fallback_d=None if truth is None else truth.k)
    ds, corruption = _apply_corruption(args, ds, config.seed)

    states, trace = solve(ds, config)
    per_view_W = [view_affinity(s.U, config.tau) for s in states]
    W = consensus_affinity(per_view_W)
    labels = spectral_clustering(W, config.d, seed=[config.seed, 3])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.csv", labels.labels)
    write_matrix_csv(out / "affinity.csv", W)
    write_pgm(out / "affinity.pgm", W)
    for i, s in enumerate(states):
        write_matrix_csv(out / f"U_view{i}.csv", s.U)

    report = RunReport(
        command="cluster",
        config=config.to_dict(),
        dataset=_dataset_block(args, ds),
        corruption=corruption,
        consensus=_score(labels, truth),
        per_view=[_score(Partition(s.labels, config.d), truth) for s in states] if truth else [],
        iterations=trace.iterations,
        converged=trace.converged,
        wall_time_s=round(time.perf_counter() - started, 3) if args.timing else None,
        trace=trace.summary(),
        outputs={
            "labels": "labels.csv",
            "affinity_csv": "affinity.csv",
            "affinity_pgm": "affinity.pgm",
            "factors": [f"U_view{i}.csv" for i in range(len(states))],
        },
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.to_json())
    if not trace.converged:
        print(f"warning: {trace.warning}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_baseline(args) -> int:
    started = time.perf_counter()
    ds = _load(args)
    truth = ds.ground_truth
    k = args.d if args.d is not None else (None if truth is None else truth.k)
    if k is None:
        raise UsageError("the cluster count --d is required when no labels are given")
    seed = default_seed() if args.seed is None else args.seed
    ds, corruption = _apply_corruption(args, ds, seed)
    if args.method == "concat":
        labels = concat_baseline(ds, k, s=args.s, seed=seed)
    else:
        if not 0 <= args.view < ds.view_count:
            raise UsageError(f"--view {args.view} is out of range for {ds.view_count} views")
        labels = single_view_baseline(ds, args.view, k, s=args.s, seed=seed)
    report = RunReport(
        command="baseline",
        config={"method": args.method, "view": args.view, "d": k, "s": args.s, "seed": seed},
        dataset=_dataset_block(args, ds),
        corruption=corruption,
        consensus=_score(labels, truth),
        wall_time_s=round(time.perf_counter() - started, 3) if args.timing else None,
    )
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_labels(out / "labels.csv", labels.labels)
        report.outputs = {"labels": "labels.csv"}
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.to_json())
    return EXIT_OK


def cmd_eval(args) -> int:
    for p in (args.pred, args.truth):
        if not Path(p).is_file():
            raise UsageError(f"labels file not found: {p}")
    pred, truth = read_labels(args.pred), read_labels(args.truth)
    if pred.size != truth.size:
        raise UsageError(f"length mismatch: {pred.size} predicted vs {truth.size} true labels")
    print(json.dumps(metrics.report(pred, truth), sort_keys=True))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    if not Path(args.affinity).is_file():
        raise UsageError(f"affinity file not found: {args.affinity}")
    W = read_matrix_csv(args.affinity)
    if W.shape[0] != W.shape[1]:
        raise UsageError(f"affinity matrix must be square, got {W.shape[0]}x{W.shape[1]}")
    write_pgm(args.out, W)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvlrr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic multi-view dataset")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--dims", required=True, help="comma-separated view dimensions, e.g. 10,15")
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def data_flags(q):
        q.add_argument("--views", nargs="+", required=True, help="one CSV per view")
        q.add_argument("--labels", default=None, help="ground-truth labels, one integer per line")
        q.add_argument("--orientation", choices=["samples", "features"], default="samples")
        q.add_argument("--corrupt", type=float, default=0.0,
                       help="fraction of entries per view replaced with U[-5, 5] noise")
        q.add_argument("--timing", action="store_true", help="record wall time in the report")

    p = sub.add_parser("cluster", help="fit the model and cluster the consensus affinity")
    data_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("baseline", help="concatenation or single-view spectral clustering")
    data_flags(p)
    p.add_argument("--method", choices=["concat", "single"], required=True)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--s", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="ACC and NMI of predicted labels")
    p.add_argument("pred")
    p.add_argument("truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="render an affinity CSV as PGM")
    p.add_argument("--affinity", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DataError, ConfigError, DegenerateViewError, OSError) as exc:
        print(f"mvlrr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"mvlrr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, EigenError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"mvlrr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
