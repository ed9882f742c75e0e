"""``sdpmetric`` command line: train, eval, gen-triplets, bench-scaling, verify.

Exit codes: 0 success, 1 solver stall, 2 configuration or I/O error,
3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import DataFormatError, Dataset, generate_triplets, load_dense, load_libsvm, make_splits
from .datasets import BUILTIN, load_builtin
from .experiment import DEFAULT_C_GRID, preprocess, run_split, timed_train
from .loss import parse_loss
from .metric import LearnedMetric, error_rate, write_report
from .oracle import GridSpec, random_triplets, run_verification
from . import oracle
from .solver import HyperParams, load_model, save_model

logger = logging.getLogger("sdpmetric")

EXIT_OK, EXIT_STALL, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    format: str = "csv"
    label_column: str = "-1"
    header: str = "auto"
    pca_dim: int = 0
    standardize: bool = False
    triplet_m: int = 3
    loss: str = "squared_hinge"
    h: float = 0.5
    C: float = None
    c_grid: list = field(default_factory=lambda: list(DEFAULT_C_GRID))
    k: int = 3
    seed: int = 0
    repeats: int = 1
    fractions: list = field(default_factory=lambda: [0.70, 0.15, 0.15])
    out: str = "."
    deterministic: bool = False
    max_outer: int = 500
    max_inner: int = 100
    tol: float = 1e-5
    init: str = "ones"
    stopping: str = "gap"
    subgradient_unsafe: bool = False

    def hyperparams(self) -> HyperParams:
        return HyperParams(C=self.C or 1.0, loss=parse_loss(self.loss, self.h),
                           max_outer=self.max_outer, max_inner=self.max_inner, tol=self.tol,
                           init=self.init, stopping=self.stopping,
                           allow_nonsmooth=self.subgradient_unsafe)

    @property
    def seeds(self):
        return list(range(self.seed, self.seed + self.repeats))


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if value is None:
        return None
    if kind == "bool":
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "list":
        if isinstance(value, str):
            value = [v for v in value.replace(";", ",").split(",") if v.strip()]
        return [float(v) for v in value]
    return str(value)


def read_config_file(path) -> dict:
    """JSON object or flat ``key = value`` lines (``#`` starts a comment)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    else:
        raw = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{n}: expected key = value")
            raw[key.strip()] = value.strip()
    return raw


def build_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _FIELD_TYPES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    if cfg.repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if cfg.format not in ("csv", "libsvm"):
        raise ConfigError(f"unknown format {cfg.format!r}")
    return cfg


def load_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.dataset:
        raise ConfigError("no dataset given")
    if cfg.dataset.startswith("builtin:"):
        name = cfg.dataset.split(":", 1)[1]
        if name not in BUILTIN:
            raise ConfigError(f"unknown built-in dataset {name!r}; available: {', '.join(BUILTIN)}")
        return load_builtin(name)
    path = Path(cfg.dataset)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    if cfg.format == "libsvm":
        return load_libsvm(path)
    header = None if cfg.header == "auto" else _coerce("standardize", cfg.header)
    return load_dense(path, label_column=cfg.label_column, header=header)


def _thread_guard(cfg):
    if not cfg.deterministic:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(1)


def _model_extra(cfg, ds, run):
    return {"dataset": ds.name, "seed": run.seed, "fractions": list(cfg.fractions),
            "pca_dim": cfg.pca_dim, "standardize": cfg.standardize, "triplet_m": cfg.triplet_m,
            "n_triplets": run.n_triplets, "outer_iter": run.state.outer_iter,
            "inner_iter": run.state.inner_iter}


def cmd_train(cfg: RunConfig, out=print) -> int:
    ds = load_dataset(cfg)
    hp = cfg.hyperparams()
    grid = None if cfg.C is not None else cfg.c_grid
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary, stalled = [], False
    with _thread_guard(cfg):
        for seed in cfg.seeds:
            run = run_split(ds, seed, hp, grid, m=cfg.triplet_m, k=cfg.k,
                            fractions=cfg.fractions, pca_dim=cfg.pca_dim or None,
                            zscore=cfg.standardize)
            tag = f"seed{seed}"
            save_model(out_dir / f"model_{tag}.json", run.state, run.hp, _model_extra(cfg, ds, run))
            run.split.save(out_dir / f"split_{tag}.json")
            with (out_dir / f"trace_{tag}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", "objective"])
                w.writerows((i, repr(f)) for i, f in enumerate(run.state.history))
            summary.append({"seed": seed, "C": run.C, "status": run.state.status,
                            "outer_iter": run.state.outer_iter, "inner_iter": run.state.inner_iter,
                            "objective": run.state.objective, "validation_error": run.validation_error,
                            "test_error": run.test_error, "train_seconds": run.train_seconds})
            stalled |= run.state.status == "stalled"
            out(f"seed {seed}: C={run.C:g} status={run.state.status} "
                f"test error {run.test_error:.4f} (euclidean {run.euclidean_test_error:.4f}) "
                f"train {run.train_seconds:.2f}s")
    with (out_dir / "train_summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    return EXIT_STALL if stalled else EXIT_OK


def _training_seconds(model_paths):
    secs = {}
    for d in {Path(p).parent for p in model_paths}:
        f = d / "train_summary.csv"
        if f.exists():
            with f.open() as fh:
                for row in csv.DictReader(fh):
                    secs[(str(d), int(row["seed"]))] = float(row["train_seconds"])
    return secs


def cmd_eval(cfg: RunConfig, model_paths, report_path, out=print) -> int:
    ds_raw = load_dataset(cfg)
    seeds = cfg.seeds
    models = []
    for p in model_paths:
        p = Path(p)
        if not p.exists():
            raise ConfigError(f"model file not found: {p}")
        models.append((p, load_model(p)))
    if models:
        seeds = [int(mdl.get("seed", cfg.seed)) for _, mdl in models]
    secs = _training_seconds([p for p, _ in models])
    eu_errs, learned = [], {}
    for idx, seed in enumerate(seeds):
        mdl = models[idx][1] if models else {}
        fractions = mdl.get("fractions", cfg.fractions)
        split = make_splits(ds_raw, seed, fractions)
        ds = preprocess(ds_raw, split, mdl.get("pca_dim", cfg.pca_dim) or None,
                        mdl.get("standardize", cfg.standardize))
        train_set, test_set = ds.subset(split.train), ds.subset(split.test)
        eu_errs.append(error_rate(LearnedMetric.euclidean(ds.dim), train_set, test_set, cfg.k))
        if not models:
            continue
        path = models[idx][0]
        if mdl["dim"] != ds.dim:
            raise ConfigError(f"{path}: model dimension {mdl['dim']} does not match "
                              f"dataset dimension {ds.dim}")
        method = f"sdpmetric-{mdl['loss']}"
        err = error_rate(LearnedMetric.from_matrix(mdl["matrix"]), train_set, test_set, cfg.k)
        learned.setdefault(method, []).append((err, secs.get((str(path.parent), seed))))
    rows = [{"dataset": ds_raw.name, "split": "test", "method": "euclidean",
             "error_rate": float(np.mean(eu_errs)), "std": float(np.std(eu_errs)),
             "train_seconds": 0.0}]
    for method, vals in learned.items():
        errs = [e for e, _ in vals]
        times = [t for _, t in vals if t is not None]
        rows.append({"dataset": ds_raw.name, "split": "test", "method": method,
                     "error_rate": float(np.mean(errs)), "std": float(np.std(errs)),
                     "train_seconds": float(np.mean(times)) if times else ""})
    write_report(rows, report_path)
    for r in rows:
        out(f"{r['method']}: {100 * r['error_rate']:.2f}% ({100 * r['std']:.2f})")
    return EXIT_OK


def cmd_gen_triplets(cfg: RunConfig, path, out=print) -> int:
    ds = load_dataset(cfg)
    split = make_splits(ds, cfg.seed, cfg.fractions)
    ds = preprocess(ds, split, cfg.pca_dim or None, cfg.standardize)
    T = generate_triplets(ds, split.train, cfg.triplet_m)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "k"])
        w.writerows(T.index.tolist())
    out(f"{len(T)} triplets from {len(split.train)} training samples -> {path}")
    return EXIT_OK


def bench_scaling(dims, n_triplets, repeats=1, iterations=50, seed=0, C=0.01,
                  eig_method="auto"):
    """Time a fixed number of conditional-gradient steps per dimension.

    Returns rows ``(dimension, repeat, iterations, seconds_per_iteration,
    seconds_total)``.
    """
    if n_triplets < 1:
        raise ConfigError("n_triplets must be >= 1")
    if repeats < 1 or iterations < 1:
        raise ConfigError("repeats and iterations must be >= 1")
    rows = []
    for dim in dims:
        for rep in range(repeats):
            rng = np.random.default_rng([seed, dim, rep])
            T = random_triplets(rng, n_triplets, dim)
            hp = HyperParams(C=C, loss=parse_loss("huber", 0.5), max_outer=1,
                             max_inner=iterations, tol=1e-300, eig_method=eig_method)
            state, secs = timed_train(T, hp)
            n_it = max(state.inner_iter, 1)
            rows.append((dim, rep, state.inner_iter, secs / n_it, secs))
    return rows


def cmd_bench_scaling(dims, n_triplets, repeats, iterations, path, eig_method="auto",
                      out=print) -> int:
    rows = bench_scaling(dims, n_triplets, repeats, iterations, eig_method=eig_method)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "repeat", "iterations", "seconds_per_iteration", "seconds_total"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.6g}", f"{r[4]:.6g}"])
    for r in rows:
        out(f"D={r[0]:4d} repeat {r[1]}: {r[2]} iterations, {r[4]:.3f}s")
    return EXIT_OK


def cmd_verify(fault=None, resolution=401, out=print) -> int:
    checks = list(oracle.ALL_CHECKS)
    if resolution != 401:
        grid = GridSpec(resolution, resolution)
        checks[-1] = lambda: oracle.check_grid_equivalence(grid=grid)
    ok = run_verification(fault=fault, checks=checks, out=out)
    out("all checks passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def _add_run_options(p):
    p.add_argument("--config", help="JSON or key=value config file")
    p.add_argument("--dataset", help="data file, or builtin:{wine,balance,breast_cancer}")
    p.add_argument("--format", choices=("csv", "libsvm"))
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--header", choices=("auto", "yes", "no"))
    p.add_argument("--pca-dim", dest="pca_dim", type=int)
    p.add_argument("--standardize", action="store_const", const=True)
    p.add_argument("--triplet-m", dest="triplet_m", type=int)
    p.add_argument("--loss", choices=("squared_hinge", "huber", "hinge"))
    p.add_argument("--h", type=float)
    p.add_argument("--C", type=float, help="fixed C (skips validation search)")
    p.add_argument("--c-grid", dest="c_grid", help="comma separated C values")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--fractions", help="train,validation,test")
    p.add_argument("--out")
    p.add_argument("--deterministic", action="store_const", const=True)
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--max-inner", dest="max_inner", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--init", choices=("ones", "leading-constraint"))
    p.add_argument("--stopping", choices=("gap", "eigenvalue"))
    p.add_argument("--subgradient-unsafe", dest="subgradient_unsafe", action="store_const",
                   const=True, help="allow the non-differentiable hinge loss")


def make_parser():
    parser = argparse.ArgumentParser(prog="sdpmetric", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a metric on repeated random splits")
    _add_run_options(p)

    p = sub.add_parser("eval", help="k-NN test error of trained models and the Euclidean baseline")
    _add_run_options(p)
    p.add_argument("models", nargs="*", help="model JSON files")
    p.add_argument("--report", default="report.csv")

    p = sub.add_parser("gen-triplets", help="write training triplet indices as CSV")
    _add_run_options(p)
    p.add_argument("--triplets-out", dest="triplets_out", default="triplets.csv")

    p = sub.add_parser("bench-scaling", help="solver time against dimension")
    p.add_argument("--dims", default="20,40,60,80,100")
    p.add_argument("--n-triplets", dest="n_triplets", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--out", default="bench_scaling.csv")
    p.add_argument("--eig-method", dest="eig_method", default="auto",
                   choices=("auto", "dense", "lanczos", "power"))

    p = sub.add_parser("verify", help="run the oracle checks")
    p.add_argument("--inject-fault", dest="inject_fault", choices=("huber-sign",),
                   help="break a component on purpose; the run must then fail")
    p.add_argument("--grid-resolution", dest="grid_resolution", type=int, default=401)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bench-scaling":
            dims = [int(d) for d in args.dims.split(",") if d.strip()]
            return cmd_bench_scaling(dims, args.n_triplets, args.repeats, args.iterations, args.out,
                                     args.eig_method)
        if args.command == "verify":
            return cmd_verify(args.inject_fault, args.grid_resolution)
        cfg = build_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.models, args.report)
        return cmd_gen_triplets(cfg, args.triplets_out)
    except (ConfigError, DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
