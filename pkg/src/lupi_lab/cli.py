"""Command-line front end.

Subcommands: `gen` writes a synthetic dataset to .npz; `train` fits one
method on a saved dataset; `experiment` runs a sweep from a config file;
`verify-linear` checks the Monte-Carlo risks against their closed forms;
`gradcheck` finite-difference-checks a preset's architecture; `repro`
executes a shipped reproduction recipe.

Config files are JSON or flat `key=value` lines (dotted keys nest,
commas make lists, `a..b` is an inclusive integer range).  Every command
exits 0 on success/PASS and nonzero with a one-line reason otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import linear, lupi, metrics, net, presets, repro, rng, sweep
from .datasets import load_triples, save_triples
from .synthgen import LinearPIConfig

__all__ = ["main", "parse_flat_config", "load_config_file", "gradcheck_preset"]

# flat-config keys whose values are lists even when a single item is given
_LIST_KEYS = {"methods", "seeds", "sample_sizes", "epoch_checkpoints",
              "x_columns", "z_columns", "drop_columns", "w_star", "v_star"}

# which optional generator parameters each generator accepts
_GEN_PARAMS = {
    "experiment1": ("d",),
    "experiment3": ("d", "j"),
    "tram_regression": ("p_corrupt", "noise_std"),
    "tram_classification": ("kind", "p_corrupt"),
}

# (input width, output width) used by gradcheck per preset
_GRADCHECK_WIDTHS = {
    "exp1": (50, 2),
    "exp3": (50, 2),
    "mnist": (49, 10),
    "tram-synthetic": (1, 1),
    "real-world": (12, 2),
}


class CliError(Exception):
    """A user-facing failure; the message becomes the one-line reason."""


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def _coerce_scalar(raw: str):
    low = raw.lower()
    if low in ("null", "none"):
        return None
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _coerce_value(key: str, raw: str):
    raw = raw.strip()
    if ".." in raw and key in _LIST_KEYS:
        lo, hi = raw.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    if "," in raw:
        return [_coerce_scalar(part.strip()) for part in raw.split(",")]
    value = _coerce_scalar(raw)
    if key in _LIST_KEYS and not isinstance(value, list):
        return [value]
    return value


def parse_flat_config(text: str) -> dict:
    """`key=value` lines into a (possibly nested) dict.

    Dotted keys nest (`generator_params.d=50`), commas split into lists,
    `a..b` expands to an inclusive integer range, and bare values on
    list-valued keys become one-element lists.  Blank lines and `#`
    comments are ignored."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected key=value, "
                           f"got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        node = out
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise CliError(f"config line {lineno}: {part!r} is both a "
                               "value and a section")
        node[leaf] = _coerce_value(leaf, raw)
    return out


def load_config_file(path) -> dict:
    """JSON when the content starts with '{', flat key=value otherwise."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    return parse_flat_config(text)


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def _cmd_gen(args) -> int:
    if args.generator not in sweep.GENERATORS:
        raise CliError(f"unknown generator {args.generator!r}; known: "
                       f"{', '.join(sweep.GENERATORS)}")
    allowed = _GEN_PARAMS[args.generator]
    params = {}
    for name in ("d", "j", "p_corrupt", "noise_std", "kind"):
        value = getattr(args, name)
        if value is None:
            continue
        if name not in allowed:
            raise CliError(f"generator {args.generator!r} does not take "
                           f"--{name.replace('_', '-')}")
        params[name] = value
    ds = sweep.GENERATORS[args.generator](args.n, args.seed, **params)
    save_triples(ds, args.out)
    print(f"wrote {args.out}: n={ds.n} d_x={ds.d_x} d_z={ds.d_z} "
          f"task={ds.task}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _default_metric(task: str) -> str:
    return "mse_to_noise_free" if task == "regression" else "accuracy"


def _train_one(preset, method, train_ds, test_ds, metric, epochs,
               init_seed, shuffle_seed):
    """One method on an explicit split; returns the run history."""
    out_w = sweep._out_width(train_ds.task, train_ds.y)
    eval_X, eval_targets, metric_fn = sweep._eval_setup(metric, test_ds)
    cfg = presets.train_config(preset, epochs=epochs, shuffle_seed=shuffle_seed)
    if method == "nopi":
        spec = presets.model_spec(preset, train_ds.d_x, out_w, init_seed)
        return lupi.train_nopi(train_ds, spec, cfg,
                               eval_hook=(eval_X, eval_targets, metric_fn))[1]
    if method == "teacher":
        spec = presets.teacher_spec(preset, train_ds.d_x, train_ds.d_z,
                                    out_w, init_seed)
        hook_X = lupi.teacher_inputs(test_ds, preset.teacher_input)
        return lupi.train_teacher(train_ds, spec, cfg,
                                  teacher_input=preset.teacher_input,
                                  eval_hook=(hook_X, eval_targets, metric_fn))[1]
    if method == "gen_distill":
        t_spec = presets.teacher_spec(preset, train_ds.d_x, train_ds.d_z,
                                      out_w, init_seed)
        teacher, _ = lupi.train_teacher(train_ds, t_spec, cfg,
                                        teacher_input=preset.teacher_input)
        dcfg = presets.distill_config(preset)
        soft = lupi.soft_labels(teacher, train_ds.X, train_ds.Z, dcfg,
                                teacher_input=preset.teacher_input)
        spec = presets.model_spec(preset, train_ds.d_x, out_w, init_seed)
        return lupi.train_student(
            train_ds, soft, dcfg, spec, cfg,
            eval_hook=(eval_X, (eval_targets, eval_targets), metric_fn))[1]
    if method in ("tram", "tram_zeros"):
        ext, pi, nopi = presets.tram_specs(preset, train_ds.d_x,
                                           train_ds.d_z, out_w, init_seed)
        mode = "zeros" if method == "tram_zeros" else "real"
        return lupi.train_tram(train_ds, ext, pi, nopi, cfg, pi_mode=mode,
                               eval_hook=(eval_X, eval_targets, metric_fn))[1]
    raise CliError(f"unknown method {method!r}; known: "
                   f"{', '.join(sweep.METHODS)}")


def _cmd_train(args) -> int:
    preset = presets.get_preset(args.preset)
    ds = load_triples(args.data)
    n_test = int(round(args.test_fraction * ds.n))
    if not 0 < n_test < ds.n:
        raise CliError(f"--test-fraction {args.test_fraction} leaves an "
                       f"empty train or test side for n={ds.n}")
    train_ds = ds.subset(np.arange(ds.n - n_test))
    test_ds = ds.subset(np.arange(ds.n - n_test, ds.n))
    metric = args.metric or _default_metric(ds.task)
    if metric not in metrics.METRIC_KINDS:
        raise CliError(f"unknown metric {metric!r}; known: "
                       f"{', '.join(metrics.METRIC_KINDS)}")
    history = _train_one(preset, args.method, train_ds, test_ds, metric,
                         args.epochs, args.init_seed, args.shuffle_seed)
    epochs = len(history)
    print(f"{args.method} on {args.preset}: n_train={train_ds.n} "
          f"n_test={test_ds.n} epochs={epochs}")
    print(f"final train loss {history.train_loss[-1]:.6f}")
    print(f"final test {metric} {history.test_metric[-1]:.6f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "test_loss",
                            f"test_{metric}"])
            for i in range(epochs):
                writer.writerow([i + 1, f"{history.train_loss[i]:.17g}",
                                 f"{history.test_loss[i]:.17g}",
                                 f"{history.test_metric[i]:.17g}"])
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def _format_aggregates(cfg: sweep.ExperimentConfig, agg: dict) -> str:
    order = {m: i for i, m in enumerate(cfg.methods)}
    keys = sorted(agg, key=lambda k: (order[k[0]], k[1], k[2]))
    lines = [f"{'method':<12} {'n':>6} {'epoch':>6} {'mean':>10} "
             f"{'std':>10} {'seeds':>6}"]
    for method, n, epoch, _kind in keys:
        mean, std, count = agg[(method, n, epoch, _kind)]
        lines.append(f"{method:<12} {n:>6} {epoch:>6} {mean:>10.4f} "
                     f"{std:>10.4f} {count:>6}")
    return "\n".join(lines)


def _cmd_experiment(args) -> int:
    raw = load_config_file(args.config)
    if args.out:
        raw["output_path"] = str(args.out)
    cfg = sweep.ExperimentConfig.from_dict(raw)
    bundle = sweep.run_experiment(cfg)
    agg = sweep.aggregate(bundle)
    print(f"config sha256 {sweep.config_hash(cfg)}")
    print(f"{len(bundle.rows)} rows, {len(bundle.failures)} failed "
          f"method-cells")
    print(_format_aggregates(cfg, agg))
    if cfg.output_path:
        sweep.emit_results(bundle, cfg.output_path, args.format)
        print(f"wrote {cfg.output_path}")
    return 0


# ---------------------------------------------------------------------------
# verify-linear
# ---------------------------------------------------------------------------


def _cmd_verify_linear(args) -> int:
    raw = load_config_file(args.config)
    trials = args.trials or int(raw.pop("trials", 2000))
    rel_tol = args.rel_tol or float(raw.pop("rel_tol", 0.05))
    cfg = LinearPIConfig(**raw)
    report = linear.monte_carlo_risks(cfg, trials)
    passed, text = linear.verify_report(report, rel_tol)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    print(f"verify-linear: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def _gradcheck_losses(preset) -> tuple:
    """The preset's loss plus the other builtin when the output layer
    emits probabilities (cross-entropy needs a simplex output)."""
    if preset.output_activation == "softmax":
        return tuple(dict.fromkeys((preset.loss, "mse", "cross_entropy")))
    return (preset.loss,)


def gradcheck_preset(name: str, batches: int = 10, tol: float = 1e-4,
                     seed: int = 0, batch_size: int = 8):
    """Finite-difference check of a preset's architecture under each
    compatible loss; returns (worst relative error, report lines)."""
    preset = presets.get_preset(name)
    d_in, d_out = _GRADCHECK_WIDTHS[name]
    worst, lines = 0.0, []
    for loss in _gradcheck_losses(preset):
        loss_worst = 0.0
        for b in range(batches):
            gen = rng.stream(seed, 71, b)
            X = gen.standard_normal((batch_size, d_in))
            if preset.task == "regression":
                targets = gen.standard_normal((batch_size, d_out))
            else:
                labels = gen.integers(0, d_out, size=batch_size)
                targets = np.eye(d_out)[labels]
            spec = presets.model_spec(preset, d_in, d_out,
                                      init_seed=rng.derive_seed(seed, 72, b))
            model = net.init_model(spec)
            err = net.gradient_check(model, X, targets, loss)
            loss_worst = max(loss_worst, err)
        ok = loss_worst <= tol
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name} "
                     f"{preset.hidden or '(no hidden)'} loss={loss}: "
                     f"max rel err {loss_worst:.2e} over {batches} batches")
        worst = max(worst, loss_worst)
    return worst, lines


def _cmd_gradcheck(args) -> int:
    names = presets.PRESET_NAMES if args.preset == "all" else (args.preset,)
    worst = 0.0
    for name in names:
        if name not in presets.PRESET_NAMES:
            raise CliError(f"unknown preset {name!r}; known: "
                           f"{', '.join(presets.PRESET_NAMES)}, all")
        err, lines = gradcheck_preset(name, batches=args.batches,
                                      tol=args.tol, seed=args.seed)
        print("\n".join(lines))
        worst = max(worst, err)
    if worst > args.tol:
        print(f"gradcheck: FAIL (worst {worst:.2e} > tol {args.tol:g})")
        return 1
    print(f"gradcheck: PASS (worst {worst:.2e} <= tol {args.tol:g})")
    return 0


# ---------------------------------------------------------------------------
# repro
# ---------------------------------------------------------------------------


def _cmd_repro(args) -> int:
    report = repro.run_recipe(args.name, full=args.full, out_dir=args.out,
                              emit_format=args.format, log=print)
    print(report.text())
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lupi-lab",
        description="Deterministic benchmark harness for learning with "
                    "privileged information.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset to .npz")
    p.add_argument("generator", help=f"one of: {', '.join(sweep.GENERATORS)}")
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=None, help="feature width")
    p.add_argument("--j", type=int, default=None, help="privileged subset size")
    p.add_argument("--p-corrupt", dest="p_corrupt", type=float, default=None)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=None)
    p.add_argument("--kind", default=None,
                   help="corruption regime for tram_classification")
    p.add_argument("--out", required=True, help="output .npz path")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train one method on a saved dataset")
    p.add_argument("--preset", required=True)
    p.add_argument("--method", required=True,
                   help=f"one of: {', '.join(sweep.METHODS)}")
    p.add_argument("--data", required=True, help=".npz dataset path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--metric", default=None)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--out", default=None, help="per-epoch history CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("experiment", help="run a sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="results file (overrides "
                   "output_path in the config)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("verify-linear",
                       help="Monte-Carlo check of the closed-form risks")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--rel-tol", dest="rel_tol", type=float, default=None)
    p.add_argument("--out", default=None, help="risk report JSON")
    p.set_defaults(func=_cmd_verify_linear)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of a preset architecture")
    p.add_argument("--preset", required=True,
                   help=f"one of: {', '.join(presets.PRESET_NAMES)}, all")
    p.add_argument("--batches", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("repro", help="run a shipped reproduction recipe")
    p.add_argument("name", help=f"one of: {', '.join(repro.list_recipes())}")
    p.add_argument("--full", action="store_true",
                   help="full seed set instead of the reduced default")
    p.add_argument("--out", default=None, help="directory for result files")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_cmd_repro)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, RuntimeError, OSError, KeyError) as err:
        message = str(err) or type(err).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
