"""Reproduction recipes.

A recipe is a versioned JSON file bundling one or more sweep configs (or
a linear-Gaussian risk config) with an expected-values block.  Running a
recipe executes the configs end-to-end, compares aggregate results to the
expectations, and reports one PASS/FAIL line per check plus the config
hash of every run, so a report is traceable to the exact inputs.

Recipes default to reduced seed counts for desk-scale runtime; full mode
uses the complete seed set with its tighter cell tolerance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from . import linear, sweep
from .synthgen import LinearPIConfig

__all__ = ["ReproRecipe", "ReproReport", "list_recipes", "load_recipe",
           "run_recipe"]

_CHECK_KINDS = ("cell", "gap", "band")


@dataclass(frozen=True)
class ReproRecipe:
    """A named, self-contained reproduction target."""

    name: str
    kind: str  # sweep | linear
    description: str
    seeds: dict = field(default_factory=dict)  # mode -> seed count
    cell_tolerance: dict = field(default_factory=dict)  # mode -> +/- tol
    runs: dict = field(default_factory=dict)  # run name -> sweep config dict
    expected: tuple = ()
    config: Optional[dict] = None  # linear kind only
    trials: dict = field(default_factory=dict)  # mode -> trial count
    rel_tol: float = 0.05

    def __post_init__(self):
        if self.kind not in ("sweep", "linear"):
            raise ValueError(f"unknown recipe kind {self.kind!r}")
        if self.kind == "sweep":
            for mode in ("reduced", "full"):
                if mode not in self.seeds or mode not in self.cell_tolerance:
                    raise ValueError(f"recipe {self.name}: missing {mode} "
                                     "seed count or tolerance")
            if not self.runs:
                raise ValueError(f"recipe {self.name}: no runs")
            if not self.expected:
                raise ValueError(f"recipe {self.name}: no expected block")
            for chk in self.expected:
                self._validate_check(chk)
        else:
            if self.config is None:
                raise ValueError(f"recipe {self.name}: linear kind needs a config")
            for mode in ("reduced", "full"):
                if mode not in self.trials:
                    raise ValueError(f"recipe {self.name}: missing {mode} trials")

    def _validate_check(self, chk: dict) -> None:
        kind = chk.get("check")
        if kind not in _CHECK_KINDS:
            raise ValueError(f"recipe {self.name}: unknown check {kind!r}")
        run = chk.get("run")
        if run not in self.runs:
            raise ValueError(f"recipe {self.name}: check references unknown "
                             f"run {run!r}")
        methods = self.runs[run]["methods"]
        sizes = self.runs[run]["sample_sizes"]
        wanted = ([chk["method"]] if kind in ("cell", "band")
                  else [chk["method_a"], chk["method_b"]])
        for m in wanted:
            if m not in methods:
                raise ValueError(f"recipe {self.name}: check uses method "
                                 f"{m!r} absent from run {run!r}")
        if chk["sample_size"] not in sizes:
            raise ValueError(f"recipe {self.name}: check uses sample size "
                             f"{chk['sample_size']} absent from run {run!r}")
        tail = chk.get("tail", 1)
        if not isinstance(tail, int) or isinstance(tail, bool) or tail < 1:
            raise ValueError(f"recipe {self.name}: tail must be an "
                             f"integer >= 1, got {tail!r}")


@dataclass
class ReproReport:
    recipe: str
    mode: str
    passed: bool
    lines: list
    config_hashes: dict
    bundles: dict = field(default_factory=dict)
    linear_report: Optional[linear.LinearRiskReport] = None

    def text(self) -> str:
        header = [f"recipe {self.recipe} ({self.mode} mode): "
                  f"{'PASS' if self.passed else 'FAIL'}"]
        hashes = [f"config {run}: sha256 {h}"
                  for run, h in sorted(self.config_hashes.items())]
        return "\n".join(header + self.lines + hashes)


def _recipe_root():
    return resources.files("lupi_lab") / "recipes"


def list_recipes() -> tuple:
    names = [p.name[:-5] for p in _recipe_root().iterdir()
             if p.name.endswith(".json")]
    return tuple(sorted(names))


def load_recipe(name: str) -> ReproRecipe:
    path = _recipe_root() / f"{name}.json"
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValueError(f"unknown recipe {name!r}; available: "
                         f"{', '.join(list_recipes())}") from None
    return ReproRecipe(
        name=raw["name"], kind=raw["kind"], description=raw["description"],
        seeds=dict(raw.get("seeds", {})),
        cell_tolerance=dict(raw.get("cell_tolerance", {})),
        runs=dict(raw.get("runs", {})),
        expected=tuple(raw.get("expected", ())),
        config=raw.get("config"),
        trials=dict(raw.get("trials", {})),
        rel_tol=float(raw.get("rel_tol", 0.05)),
    )


def _final_mean(agg: dict, cfg: sweep.ExperimentConfig, method: str,
                n: int, tail: int = 1) -> float:
    """Mean metric at the last checkpoint, or averaged over the last `tail`
    checkpoints.  Averaging trailing checkpoints damps the step-to-step
    oscillation of a converged constant-step-size optimizer without changing
    what is being estimated."""
    epochs = cfg.resolved_checkpoints
    if tail > len(epochs):
        raise ValueError(f"tail={tail} exceeds the {len(epochs)} recorded "
                         "checkpoints")
    vals = [agg[(method, n, e, cfg.metric)][0] for e in epochs[-tail:]]
    return sum(vals) / len(vals)


def _evaluate_checks(recipe: ReproRecipe, mode: str, configs: dict,
                     aggregates: dict) -> tuple:
    tol = recipe.cell_tolerance[mode]
    lines, ok_all = [], True
    for chk in recipe.expected:
        run = chk["run"]
        cfg, agg = configs[run], aggregates[run]
        n = chk["sample_size"]
        tail = int(chk.get("tail", 1))
        note = f" avg_last={tail}" if tail > 1 else ""
        if chk["check"] == "cell":
            mean = _final_mean(agg, cfg, chk["method"], n, tail)
            ok = abs(mean - chk["value"]) <= tol
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {run}/{chk['method']} "
                         f"n={n}: mean={mean:.4f} expected={chk['value']} "
                         f"tol={tol}{note}")
        elif chk["check"] == "gap":
            a = _final_mean(agg, cfg, chk["method_a"], n, tail)
            b = _final_mean(agg, cfg, chk["method_b"], n, tail)
            gap = abs(a - b)
            ok = gap <= chk["max_abs"]
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {run}/"
                         f"{chk['method_a']} vs {chk['method_b']} n={n}: "
                         f"|{a:.4f}-{b:.4f}|={gap:.4f} max={chk['max_abs']}"
                         f"{note}")
        else:
            mean = _final_mean(agg, cfg, chk["method"], n, tail)
            ok = chk["lo"] <= mean <= chk["hi"]
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {run}/{chk['method']} "
                         f"n={n}: mean={mean:.4f} in "
                         f"[{chk['lo']}, {chk['hi']}]{note}")
        ok_all = ok_all and ok
    return lines, ok_all


def _run_sweep_recipe(recipe: ReproRecipe, mode: str, out_dir,
                      emit_format: str, log) -> ReproReport:
    seed_list = list(range(recipe.seeds[mode]))
    configs, aggregates, bundles, hashes = {}, {}, {}, {}
    for run_name, run_cfg in recipe.runs.items():
        cfg = sweep.ExperimentConfig.from_dict({**run_cfg, "seeds": seed_list})
        if log:
            log(f"{recipe.name}/{run_name}: {len(cfg.seeds)} seeds x "
                f"{len(cfg.sample_sizes)} sizes, {cfg.resolved_epochs} epochs")
        bundle = sweep.run_experiment(cfg)
        configs[run_name] = cfg
        bundles[run_name] = bundle
        aggregates[run_name] = sweep.aggregate(bundle)
        hashes[run_name] = sweep.config_hash(cfg)
        if out_dir is not None:
            path = Path(out_dir) / f"{recipe.name}_{run_name}.{emit_format}"
            sweep.emit_results(bundle, path, emit_format)
    lines, passed = _evaluate_checks(recipe, mode, configs, aggregates)
    return ReproReport(recipe=recipe.name, mode=mode, passed=passed,
                       lines=lines, config_hashes=hashes, bundles=bundles)


def _run_linear_recipe(recipe: ReproRecipe, mode: str, out_dir, log) -> ReproReport:
    cfg = LinearPIConfig(**recipe.config)
    trials = recipe.trials[mode]
    if log:
        log(f"{recipe.name}: {trials} trials, d_x={cfg.d_x}, d_z={cfg.d_z}, "
            f"n={cfg.n}")
    report = linear.monte_carlo_risks(cfg, trials)
    passed, text = linear.verify_report(report, recipe.rel_tol)
    blob = json.dumps({"config": recipe.config, "trials": trials},
                      sort_keys=True).encode()
    hashes = {"main": hashlib.sha256(blob).hexdigest()}
    if out_dir is not None:
        path = Path(out_dir) / f"{recipe.name}_report.json"
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    return ReproReport(recipe=recipe.name, mode=mode, passed=passed,
                       lines=text.splitlines(), config_hashes=hashes,
                       linear_report=report)


def run_recipe(name, full: bool = False, out_dir=None,
               emit_format: str = "csv",
               log: Optional[Callable] = None) -> ReproReport:
    """Execute a recipe end-to-end and judge it against its expected block.

    `full` switches to the complete seed set (and its tolerance); `out_dir`
    additionally writes each run's results file there."""
    recipe = name if isinstance(name, ReproRecipe) else load_recipe(name)
    mode = "full" if full else "reduced"
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if recipe.kind == "sweep":
        return _run_sweep_recipe(recipe, mode, out_dir, emit_format, log)
    return _run_linear_recipe(recipe, mode, out_dir, log)
