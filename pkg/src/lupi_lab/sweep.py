"""Experiment sweep runner.

Runs a grid of (seed x sample size) cells for a set of training methods,
records test metrics at epoch checkpoints, and serializes the result rows
to CSV (`method,sample_size,seed,epoch,metric_kind,value`) or JSON (rows
plus the full config for provenance).

Every random stream in a cell derives from (master_seed, seed, sample
size) through the seed-derivation chain, so cells are independent and the
bundle is bit-identical whether cells run serially or in a process pool
(LUPILAB_THREADS caps the pool size; 1 or unset means serial).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import lupi, metrics, net, presets, rng
from .datasets import PartitionSpec, load_csv_partitioned, standardize_features
from .synthgen import (
    CorruptionRegime,
    TripleDataset,
    gen_experiment1,
    gen_experiment3,
    gen_tram_classification,
    gen_tram_regression,
    noise_free_target,
)

__all__ = [
    "METHODS",
    "GENERATORS",
    "ExperimentConfig",
    "ResultRow",
    "ResultsBundle",
    "run_experiment",
    "aggregate",
    "emit_results",
    "load_results",
    "config_hash",
]

METHODS = ("nopi", "teacher", "gen_distill", "tram", "tram_zeros")

# stream tags for the per-cell derivation chain
_TAG_CELL = 31
_TAG_DATA = 32
_TAG_SPLIT = 33
_TAG_INIT = 34
_TAG_SHUFFLE = 35

# per-method tag; tram and tram_zeros share one stream so the zeros
# ablation differs from the real run only in the privileged values
_METHOD_TAGS = {"nopi": 1, "teacher": 2, "gen_distill": 3, "tram": 4,
                "tram_zeros": 4}


def _make_experiment1(n, seed, d=50):
    return gen_experiment1(n, d=int(d), seed=seed)


def _make_experiment3(n, seed, d=50, j=3):
    return gen_experiment3(n, d=int(d), j=int(j), seed=seed)


def _make_tram_regression(n, seed, p_corrupt=0.3, noise_std=0.1):
    return gen_tram_regression(n, p_corrupt=float(p_corrupt),
                               noise_std=float(noise_std), seed=seed)


def _make_tram_classification(n, seed, kind="bernoulli", p_corrupt=0.3):
    regime = CorruptionRegime(kind=str(kind), p_corrupt=float(p_corrupt))
    return gen_tram_classification(n, regime, seed=seed)


GENERATORS: dict[str, Callable] = {
    "experiment1": _make_experiment1,
    "experiment3": _make_experiment3,
    "tram_regression": _make_tram_regression,
    "tram_classification": _make_tram_classification,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of a sweep; the bundle is a pure function of it."""

    preset: str
    methods: tuple
    metric: str
    seeds: tuple
    sample_sizes: tuple
    generator: Optional[str] = None
    generator_params: dict = field(default_factory=dict)
    dataset_path: Optional[str] = None
    partition: Optional[PartitionSpec] = None
    test_size: Optional[int] = None
    split_fraction: Optional[float] = None
    epochs: Optional[int] = None  # None -> the preset's default
    epoch_checkpoints: Optional[tuple] = None  # None -> final epoch only
    batch_size: Optional[int] = None  # None -> the preset's default
    master_seed: int = 0
    output_path: Optional[str] = None

    def __post_init__(self):
        presets.get_preset(self.preset)  # raises on unknown names
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "sample_sizes",
                           tuple(int(n) for n in self.sample_sizes))
        if self.epoch_checkpoints is not None:
            object.__setattr__(self, "epoch_checkpoints",
                               tuple(int(e) for e in self.epoch_checkpoints))
        if not self.methods:
            raise ValueError("methods must be non-empty")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; known: {METHODS}")
        if self.metric not in metrics.METRIC_KINDS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not self.seeds:
            raise ValueError("seed list must be non-empty")
        if not self.sample_sizes or any(n <= 0 for n in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        if (self.generator is None) == (self.dataset_path is None):
            raise ValueError("exactly one of generator / dataset_path required")
        if self.generator is not None:
            if self.generator not in GENERATORS:
                raise ValueError(f"unknown generator {self.generator!r}; "
                                 f"known: {tuple(GENERATORS)}")
            if self.test_size is None or self.test_size <= 0:
                raise ValueError("generator runs need a positive test_size")
        else:
            if self.partition is None:
                raise ValueError("dataset runs need a partition spec")
            if self.split_fraction is None or not 0 < self.split_fraction < 1:
                raise ValueError("split_fraction must lie in (0, 1)")
        ep = self.resolved_epochs
        if ep < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        cps = self.resolved_checkpoints
        if any(not 1 <= e <= ep for e in cps):
            raise ValueError(f"epoch checkpoints must lie in [1, {ep}]")
        if list(cps) != sorted(set(cps)):
            raise ValueError("epoch checkpoints must be strictly increasing")

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return int(self.epochs)
        return presets.get_preset(self.preset).epochs

    @property
    def resolved_checkpoints(self) -> tuple:
        if self.epoch_checkpoints is not None:
            return self.epoch_checkpoints
        return (self.resolved_epochs,)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "methods": list(self.methods),
            "metric": self.metric,
            "seeds": list(self.seeds),
            "sample_sizes": list(self.sample_sizes),
            "generator": self.generator,
            "generator_params": dict(self.generator_params),
            "dataset_path": self.dataset_path,
            "partition": None if self.partition is None else self.partition.to_dict(),
            "test_size": self.test_size,
            "split_fraction": self.split_fraction,
            "epochs": self.epochs,
            "epoch_checkpoints":
                None if self.epoch_checkpoints is None
                else list(self.epoch_checkpoints),
            "batch_size": self.batch_size,
            "master_seed": self.master_seed,
            "output_path": self.output_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        part = d.get("partition")
        return cls(
            preset=d["preset"],
            methods=tuple(d["methods"]),
            metric=d["metric"],
            seeds=tuple(d["seeds"]),
            sample_sizes=tuple(d["sample_sizes"]),
            generator=d.get("generator"),
            generator_params=dict(d.get("generator_params") or {}),
            dataset_path=d.get("dataset_path"),
            partition=None if part is None else PartitionSpec.from_dict(part),
            test_size=d.get("test_size"),
            split_fraction=d.get("split_fraction"),
            epochs=d.get("epochs"),
            epoch_checkpoints=(None if d.get("epoch_checkpoints") is None
                               else tuple(d["epoch_checkpoints"])),
            batch_size=(None if d.get("batch_size") is None
                        else int(d["batch_size"])),
            master_seed=int(d.get("master_seed", 0)),
            output_path=d.get("output_path"),
        )


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable SHA-256 over the canonical JSON form of the config."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


class ResultRow(NamedTuple):
    method: str
    sample_size: int
    seed: int
    epoch: int
    metric_kind: str
    value: float


@dataclass
class ResultsBundle:
    config: ExperimentConfig
    rows: list
    failures: list  # dicts: {method, sample_size, seed, error}

    def __eq__(self, other):
        return (isinstance(other, ResultsBundle)
                and self.config == other.config
                and self.rows == other.rows
                and self.failures == other.failures)


# ---------------------------------------------------------------------------
# cell execution
# ---------------------------------------------------------------------------


def _out_width(task: str, y: np.ndarray) -> int:
    if task == "regression":
        return 1
    if task == "binary":
        return 2
    return y.shape[1]


def _cell_data(cfg: ExperimentConfig, cell_seed: int, n: int):
    """Train/test split for one cell.

    Generators draw n + test_size rows in a single call so train and test
    share the cell's generating process (the same hyperplane or corruption
    pattern), then split by position.
    """
    if cfg.generator is not None:
        make = GENERATORS[cfg.generator]
        data_seed = rng.derive_seed(cell_seed, _TAG_DATA)
        full = make(n + cfg.test_size, data_seed, **cfg.generator_params)
        train = full.subset(np.arange(n))
        test = full.subset(np.arange(n, n + cfg.test_size))
        return train, test
    ds, report = load_csv_partitioned(cfg.dataset_path, cfg.partition)
    if report.time_values is not None:
        order = np.argsort(report.time_values, kind="stable")
    else:
        gen = rng.stream(cell_seed, _TAG_SPLIT)
        order = gen.permutation(ds.n)
    ds = ds.subset(order)
    n_train = int(round(cfg.split_fraction * ds.n))
    if not 0 < n_train < ds.n:
        raise ValueError("split leaves an empty train or test side")
    if n > n_train:
        raise ValueError(f"sample size {n} exceeds the train split ({n_train})")
    train = ds.subset(np.arange(n))
    test = ds.subset(np.arange(n_train, ds.n))
    if cfg.partition.standardize:
        tx, sx = standardize_features(train.X, test.X)
        if train.d_z:
            tz, sz = standardize_features(train.Z, test.Z)
        else:
            tz, sz = train.Z, test.Z
        train = TripleDataset(tx, tz, train.y, train.task, dict(train.meta))
        test = TripleDataset(sx, sz, test.y, test.task, dict(test.meta))
    return train, test


def _eval_setup(metric: str, test: TripleDataset):
    """(inputs-by-view, loss targets, metric closure) for the test side.

    The metric closure ignores its second argument so the same callable
    serves plain and blended-loss training runs.  The clean-target MSE
    metric evaluates on the fixed grid instead of the test rows.
    """
    if metric == "mse_to_noise_free":
        grid = metrics.noise_free_grid()[:, None]
        target = noise_free_target(grid[:, 0])[:, None]
        metric_fn = (lambda pred, _t:
                     float(np.mean((np.ravel(pred) - target[:, 0]) ** 2)))
        return grid, target, metric_fn
    eval_targets = lupi.hard_targets(test)
    y = test.y
    metric_fn = lambda pred, _t: metrics.metric_eval(metric, pred, y)
    return test.X, eval_targets, metric_fn


def _run_cell(cfg: ExperimentConfig, seed: int, n: int):
    """All configured methods for one (seed, sample size) cell."""
    preset = presets.get_preset(cfg.preset)
    cell_seed = rng.derive_seed(cfg.master_seed, _TAG_CELL, seed, n)
    rows, failures = [], []
    try:
        train_ds, test_ds = _cell_data(cfg, cell_seed, n)
    except Exception as err:  # data failure dooms every method in the cell
        for method in cfg.methods:
            failures.append({"method": method, "sample_size": n, "seed": seed,
                             "error": f"{type(err).__name__}: {err}"})
        return rows, failures

    out_w = _out_width(train_ds.task, train_ds.y)
    eval_X, eval_targets, metric_fn = _eval_setup(cfg.metric, test_ds)
    epochs = cfg.resolved_epochs
    checkpoints = cfg.resolved_checkpoints

    def cfg_for(method: str) -> net.TrainConfig:
        tag = _METHOD_TAGS[method]
        return presets.train_config(
            preset, epochs=epochs, batch_size=cfg.batch_size,
            shuffle_seed=rng.derive_seed(cell_seed, _TAG_SHUFFLE, tag))

    def init_for(method: str) -> int:
        return rng.derive_seed(cell_seed, _TAG_INIT, _METHOD_TAGS[method])

    teacher_model = None

    def get_teacher():
        nonlocal teacher_model
        if teacher_model is None:
            spec = presets.teacher_spec(preset, train_ds.d_x, train_ds.d_z,
                                        out_w, init_seed=init_for("teacher"))
            teacher_model, _ = lupi.train_teacher(
                train_ds, spec, cfg_for("teacher"),
                teacher_input=preset.teacher_input)
        return teacher_model

    def record(history: net.RunHistory, method: str):
        for e in checkpoints:
            rows.append(ResultRow(method, n, seed, e, cfg.metric,
                                  float(history.test_metric[e - 1])))

    for method in cfg.methods:
        try:
            if method == "nopi":
                spec = presets.model_spec(preset, train_ds.d_x, out_w,
                                          init_seed=init_for("nopi"))
                _, hist = lupi.train_nopi(
                    train_ds, spec, cfg_for("nopi"),
                    eval_hook=(eval_X, eval_targets, metric_fn))
                record(hist, method)
            elif method == "teacher":
                spec = presets.teacher_spec(preset, train_ds.d_x,
                                            train_ds.d_z, out_w,
                                            init_seed=init_for("teacher"))
                t_inputs = lupi.teacher_inputs(test_ds, preset.teacher_input)
                model, hist = lupi.train_teacher(
                    train_ds, spec, cfg_for("teacher"),
                    teacher_input=preset.teacher_input,
                    eval_hook=(t_inputs, eval_targets, metric_fn))
                record(hist, method)
                if teacher_model is None:
                    teacher_model = model  # hooks are pure; reuse for distill
            elif method == "gen_distill":
                dcfg = presets.distill_config(preset)
                soft = lupi.soft_labels(get_teacher(), train_ds.X, train_ds.Z,
                                        dcfg, teacher_input=preset.teacher_input)
                spec = presets.model_spec(preset, train_ds.d_x, out_w,
                                          init_seed=init_for("gen_distill"))
                _, hist = lupi.train_student(
                    train_ds, soft, dcfg, spec, cfg_for("gen_distill"),
                    eval_hook=(eval_X, (eval_targets, eval_targets), metric_fn))
                record(hist, method)
            elif method in ("tram", "tram_zeros"):
                ext, pi, nopi = presets.tram_specs(
                    preset, train_ds.d_x, train_ds.d_z, out_w,
                    init_seed=init_for(method))
                mode = "zeros" if method == "tram_zeros" else "real"
                _, hist = lupi.train_tram(
                    train_ds, ext, pi, nopi, cfg_for(method), pi_mode=mode,
                    eval_hook=(eval_X, eval_targets, metric_fn))
                record(hist, method)
        except Exception as err:
            failures.append({"method": method, "sample_size": n, "seed": seed,
                             "error": f"{type(err).__name__}: {err}"})
    return rows, failures


def _cell_worker(args):
    cfg_dict, seed, n = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return _run_cell(cfg, seed, n)


def _thread_cap() -> int:
    raw = os.environ.get("LUPILAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig) -> ResultsBundle:
    """Run every (seed x sample size) cell and collect the result rows.

    Cells run serially, or in a process pool when LUPILAB_THREADS > 1;
    both orders yield the identical bundle because each cell's streams
    derive only from (master_seed, seed, sample size).  More than 10%
    failed method-cells abort the run.
    """
    cells = [(seed, n) for n in cfg.sample_sizes for seed in cfg.seeds]
    workers = min(_thread_cap(), len(cells))
    if workers > 1:
        args = [(cfg.to_dict(), seed, n) for seed, n in cells]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_worker, args))
    else:
        outcomes = [_run_cell(cfg, seed, n) for seed, n in cells]

    rows, failures = [], []
    for cell_rows, cell_failures in outcomes:
        rows.extend(cell_rows)
        failures.extend(cell_failures)
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows.sort(key=lambda r: (order[r.method], r.sample_size, r.seed, r.epoch))

    total = len(cells) * len(cfg.methods)
    if total and len(failures) / total > 0.10:
        detail = "; ".join(f"{f['method']}/n={f['sample_size']}/seed={f['seed']}: "
                           f"{f['error']}" for f in failures[:5])
        raise RuntimeError(
            f"{len(failures)} of {total} method-cells failed (>10%): {detail}")
    return ResultsBundle(config=cfg, rows=rows, failures=failures)


# ---------------------------------------------------------------------------
# aggregation and serialization
# ---------------------------------------------------------------------------


def aggregate(bundle: ResultsBundle) -> dict:
    """Per-cell mean and sample standard deviation across seeds.

    Keys are (method, sample_size, epoch, metric_kind); values are
    (mean, std, count) with the (count-1)-denominator std, 0.0 for a
    single seed.
    """
    groups: dict = {}
    for r in bundle.rows:
        groups.setdefault((r.method, r.sample_size, r.epoch, r.metric_kind),
                          []).append(r.value)
    out = {}
    for key, values in groups.items():
        arr = np.asarray(values)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[key] = (float(arr.mean()), std, int(arr.size))
    return out


_CSV_HEADER = ["method", "sample_size", "seed", "epoch", "metric_kind", "value"]


def emit_results(bundle: ResultsBundle, path, fmt: str = "csv") -> None:
    """Write the bundle; CSV is plot-ready long format, JSON adds the
    config and failure log for provenance."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_HEADER)
            for r in bundle.rows:
                writer.writerow([r.method, r.sample_size, r.seed, r.epoch,
                                 r.metric_kind, f"{r.value:.17g}"])
    elif fmt == "json":
        payload = {
            "config": bundle.config.to_dict(),
            "config_hash": config_hash(bundle.config),
            "rows": [list(r) for r in bundle.rows],
            "failures": bundle.failures,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r} (csv or json)")


def load_results(path, fmt: str = "csv"):
    """Read results back; CSV yields the row list, JSON the full bundle."""
    if fmt == "csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != _CSV_HEADER:
                raise ValueError(f"unexpected results header: {header}")
            return [ResultRow(m, int(n), int(s), int(e), k, float(v))
                    for m, n, s, e, k, v in reader]
    if fmt == "json":
        with open(path) as fh:
            payload = json.load(fh)
        cfg = ExperimentConfig.from_dict(payload["config"])
        rows = [ResultRow(m, int(n), int(s), int(e), k, float(v))
                for m, n, s, e, k, v in payload["rows"]]
        return ResultsBundle(config=cfg, rows=rows,
                             failures=list(payload["failures"]))
    raise ValueError(f"unknown format {fmt!r} (csv or json)")
