"""Knowledge-transfer procedures: distillation and the shared-extractor
transfer model, with their ablations.

Distillation: a teacher g_t sees the privileged features, its softened
predictions s_i = softmax(g_t / T) become soft targets, and a student g
minimizes (1 - lam) * loss(y, g(x)) + lam * loss(s, g(x)) from x alone.

Transfer model (three parts): a shared extractor phi(x), a PI head
g_t(phi(x), z) whose gradient trains the extractor, and a No-PI head
g_s(phi(x)) used at prediction time.  In the default joint mode the No-PI
head's loss is stop-gradiented at the extractor boundary; sequential mode
trains (phi, g_t) to completion first, then fits g_s on the frozen
representation.  The zeros ablation replaces Z with zero vectors
everywhere."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import net, rng
from .net import MlpModel, MlpSpec, RunHistory, TrainConfig
from .synthgen import TripleDataset

SCALING_MODES = ("logit_temperature", "posthoc_divide")
TEACHER_INPUTS = ("concat_xz", "z_only")
PI_MODES = ("real", "zeros")
TRAIN_MODES = ("joint_stopgrad", "sequential")


@dataclass(frozen=True)
class DistillConfig:
    """Soft-label construction: temperature, imitation weight, and whether
    temperature scales the logits (standard) or divides the post-softmax
    probabilities (the pathological variant)."""

    temperature: float = 1.0
    imitation: float = 1.0
    scaling_mode: str = "logit_temperature"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.imitation <= 1.0:
            raise ValueError(f"imitation must lie in [0, 1], got {self.imitation}")
        if self.scaling_mode not in SCALING_MODES:
            raise ValueError(f"unknown scaling mode {self.scaling_mode!r}")


@dataclass
class SoftLabelSet:
    """Row-aligned soft targets plus provenance (teacher identity, T, mode)."""

    values: np.ndarray  # (n, c)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("soft labels must be a 2-D (n, c) array")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class TramModel:
    """Shared extractor + PI head + No-PI head."""

    extractor: MlpModel
    pi_head: MlpModel
    nopi_head: MlpModel
    pi_mode: str = "real"
    train_mode: str = "joint_stopgrad"

    def __post_init__(self):
        if self.pi_mode not in PI_MODES:
            raise ValueError(f"unknown pi_mode {self.pi_mode!r}")
        if self.train_mode not in TRAIN_MODES:
            raise ValueError(f"unknown train_mode {self.train_mode!r}")
        rep = self.extractor.spec.out_width
        if self.nopi_head.spec.in_width != rep:
            raise net.ShapeError(
                f"nopi head expects width {self.nopi_head.spec.in_width}, "
                f"extractor produces {rep}")
        if self.pi_head.spec.in_width < rep:
            raise net.ShapeError("pi head narrower than the representation")

    @property
    def d_z(self) -> int:
        return self.pi_head.spec.in_width - self.extractor.spec.out_width


# ---------------------------------------------------------------------------
# targets and losses
# ---------------------------------------------------------------------------


def hard_targets(ds: TripleDataset) -> np.ndarray:
    """Training targets as a 2-D array: one-hot for classification (binary
    becomes the two-column [1-y, y]), a single column for regression."""
    if ds.task == "regression":
        return ds.y[:, None]
    if ds.task == "binary":
        return np.column_stack([1.0 - ds.y, ds.y])
    return ds.y  # multiclass already one-hot


def distill_loss(base: net.LossFn, lam: float) -> net.LossFn:
    """Blend (1-lam) * base(hard) + lam * base(soft) over tuple targets.

    lam = 0 and lam = 1 short-circuit to the single term so they are
    bitwise identical to an unblended run."""
    if lam == 0.0:
        def loss0(pred, targets):
            hard, _ = targets
            return base(pred, hard)
        return loss0
    if lam == 1.0:
        def loss1(pred, targets):
            _, soft = targets
            return base(pred, soft)
        return loss1

    def blended(pred, targets):
        hard, soft = targets
        v_h, g_h = base(pred, hard)
        v_s, g_s = base(pred, soft)
        return (1.0 - lam) * v_h + lam * v_s, (1.0 - lam) * g_h + lam * g_s

    return blended


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------


def teacher_inputs(ds: TripleDataset, teacher_input: str) -> np.ndarray:
    if teacher_input not in TEACHER_INPUTS:
        raise ValueError(f"unknown teacher input convention {teacher_input!r}")
    return np.hstack([ds.X, ds.Z]) if teacher_input == "concat_xz" else ds.Z


def train_teacher(ds: TripleDataset, spec: MlpSpec, cfg: TrainConfig,
                  teacher_input: str = "concat_xz",
                  eval_hook=None) -> tuple[MlpModel, RunHistory]:
    """Fit the privileged model g_t on (inputs per the convention, y)."""
    inputs = teacher_inputs(ds, teacher_input)
    if spec.in_width != inputs.shape[1]:
        raise net.ShapeError(
            f"teacher spec width {spec.in_width} does not match "
            f"{teacher_input} input width {inputs.shape[1]}")
    return net.train(net.init_model(spec), inputs, hard_targets(ds), cfg,
                     eval_hook=eval_hook)


def train_nopi(ds: TripleDataset, spec: MlpSpec, cfg: TrainConfig,
               eval_hook=None) -> tuple[MlpModel, RunHistory]:
    """The no-privileged-information baseline: fit on X alone."""
    if spec.in_width != ds.d_x:
        raise net.ShapeError(f"spec width {spec.in_width} != d_x {ds.d_x}")
    return net.train(net.init_model(spec), ds.X, hard_targets(ds), cfg,
                     eval_hook=eval_hook)


def soft_labels(teacher: MlpModel, X: np.ndarray, Z: np.ndarray,
                dcfg: DistillConfig, teacher_input: str = "concat_xz") -> SoftLabelSet:
    """Teacher soft targets for every row.

    Softmax-headed teacher: logit_temperature gives softmax(logits / T);
    posthoc_divide gives softmax(logits) / T (rows then sum to 1/T, the
    pathological variant).  Identity-headed teacher (regression mode)
    emits raw outputs, with posthoc_divide still dividing by T."""
    inputs = np.hstack([X, Z]) if teacher_input == "concat_xz" else Z
    if teacher.spec.output_activation == "softmax":
        logits = net.forward_logits(teacher, inputs)
        if dcfg.scaling_mode == "logit_temperature":
            values = net.softmax(logits, dcfg.temperature)
        else:
            values = net.softmax(logits) / dcfg.temperature
    else:
        out = net.forward(teacher, inputs)
        values = out / dcfg.temperature if dcfg.scaling_mode == "posthoc_divide" else out
    return SoftLabelSet(values, {
        "teacher": "mlp", "temperature": dcfg.temperature,
        "scaling_mode": dcfg.scaling_mode, "teacher_input": teacher_input,
    })


def constant_teacher(n: int, c: int, value_vector) -> SoftLabelSet:
    """n copies of a fixed target vector (off-simplex values permitted;
    the all-zeros vector reproduces the degenerate-teacher ablation)."""
    v = np.asarray(value_vector, dtype=np.float64)
    if v.shape != (c,):
        raise ValueError(f"value vector shape {v.shape} != ({c},)")
    return SoftLabelSet(np.tile(v, (n, 1)), {"teacher": "constant", "value": v.tolist()})


def train_student(ds: TripleDataset, soft: SoftLabelSet, dcfg: DistillConfig,
                  spec: MlpSpec, cfg: TrainConfig,
                  eval_hook=None) -> tuple[MlpModel, RunHistory]:
    """Distill: minimize (1-lam) loss(y, g(x)) + lam loss(s, g(x)) on X."""
    if soft.n != ds.n:
        raise ValueError(f"{soft.n} soft labels for {ds.n} rows")
    if spec.in_width != ds.d_x:
        raise net.ShapeError(f"student spec width {spec.in_width} != d_x {ds.d_x}")
    loss = distill_loss(net.get_loss(cfg.loss), dcfg.imitation)
    return net.train(net.init_model(spec), ds.X, (hard_targets(ds), soft.values),
                     cfg, loss=loss, eval_hook=eval_hook)


# ---------------------------------------------------------------------------
# transfer model
# ---------------------------------------------------------------------------


def _z_input(Z: np.ndarray, pi_mode: str) -> np.ndarray:
    return np.zeros_like(Z) if pi_mode == "zeros" else Z


def tram_gradients(extractor: MlpModel, pi_head: MlpModel, nopi_head: MlpModel,
                   X: np.ndarray, Z: np.ndarray, targets: np.ndarray,
                   loss_fn: net.LossFn, pi_mode: str = "real",
                   include_nopi: bool = True):
    """One joint-mode gradient evaluation.

    Returns (total_loss, grads) where grads maps each sub-model to its
    (weight_grads, bias_grads).  The extractor gradient flows only through
    the PI head: the No-PI head's representation gradient is dropped at the
    boundary (stop-gradient), so include_nopi toggles its parameter
    gradients without touching the extractor's."""
    rep_cache = net.forward_cache(extractor, X)
    rep = rep_cache.out
    pi_in = np.hstack([rep, _z_input(Z, pi_mode)])
    pi_cache = net.forward_cache(pi_head, pi_in)
    v_pi, d_pi = loss_fn(pi_cache.out, targets)
    pi_w, pi_b, d_pi_in = net.backprop(pi_head, pi_cache, d_pi)
    d_rep = d_pi_in[:, : rep.shape[1]]
    ext_w, ext_b, _ = net.backprop(extractor, rep_cache, d_rep)

    total = v_pi
    if include_nopi:
        nopi_cache = net.forward_cache(nopi_head, rep)
        v_no, d_no = loss_fn(nopi_cache.out, targets)
        nopi_w, nopi_b, _ = net.backprop(nopi_head, nopi_cache, d_no)
        total = v_pi + v_no
    else:
        nopi_w = [np.zeros_like(w) for w in nopi_head.weights]
        nopi_b = [np.zeros_like(b) for b in nopi_head.biases]
    return total, {"extractor": (ext_w, ext_b), "pi_head": (pi_w, pi_b),
                   "nopi_head": (nopi_w, nopi_b)}


def train_tram(ds: TripleDataset, extractor_spec: MlpSpec, pi_head_spec: MlpSpec,
               nopi_head_spec: MlpSpec, cfg: TrainConfig,
               pi_mode: str = "real", train_mode: str = "joint_stopgrad",
               eval_hook=None) -> tuple[TramModel, RunHistory]:
    """Train the three-part transfer model.

    joint_stopgrad: every step takes loss(y, pi_head(phi(x), z)) +
    loss(y, nopi_head(sg(phi(x)))) with the stop-gradient at the extractor
    boundary.  sequential: train (phi, pi_head) for cfg.epochs, freeze phi,
    then train nopi_head for cfg.epochs (the returned history covers the
    second stage; per-epoch eval always reports the No-PI path)."""
    if pi_mode not in PI_MODES:
        raise ValueError(f"unknown pi_mode {pi_mode!r}")
    if train_mode not in TRAIN_MODES:
        raise ValueError(f"unknown train_mode {train_mode!r}")
    if extractor_spec.in_width != ds.d_x:
        raise net.ShapeError(f"extractor width {extractor_spec.in_width} != d_x {ds.d_x}")
    rep_w = extractor_spec.out_width
    if pi_head_spec.in_width != rep_w + ds.d_z:
        raise net.ShapeError(
            f"pi head width {pi_head_spec.in_width} != representation {rep_w} + d_z {ds.d_z}")
    if nopi_head_spec.in_width != rep_w:
        raise net.ShapeError(
            f"nopi head width {nopi_head_spec.in_width} != representation {rep_w}")

    targets = hard_targets(ds)
    loss_fn = net.get_loss(cfg.loss)

    extractor = net.init_model(extractor_spec)
    pi_head = net.init_model(pi_head_spec)
    nopi_head = net.init_model(nopi_head_spec)
    model = TramModel(extractor, pi_head, nopi_head, pi_mode, train_mode)

    if train_mode == "sequential":
        return _train_tram_sequential(ds, model, cfg, targets, loss_fn, eval_hook)

    opt, params = net.make_optimizer(cfg, [extractor, pi_head, nopi_head])
    history = RunHistory()
    if eval_hook is not None:
        history.test_loss = []
        history.test_metric = []
    n = ds.n
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for b, idx in enumerate(net.batch_indices(n, cfg.batch_size, cfg.shuffle_seed, epoch)):
            value, grads = tram_gradients(extractor, pi_head, nopi_head,
                                          ds.X[idx], ds.Z[idx], targets[idx],
                                          loss_fn, pi_mode)
            if not np.isfinite(value):
                raise net.TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {b}")
            flat = []
            for name in ("extractor", "pi_head", "nopi_head"):
                gw, gb = grads[name]
                for w, bb in zip(gw, gb):
                    flat.extend([w, bb])
            opt.step(params, flat)
            total += value * len(idx)
        history.train_loss.append(total / n)
        _tram_eval_epoch(model, loss_fn, eval_hook, history)
    return model, history


def _tram_eval_epoch(model: TramModel, loss_fn, eval_hook, history: RunHistory):
    if eval_hook is None:
        return
    X_test, targets_test, metric_fn = eval_hook
    pred = tram_predict(model, X_test)
    history.test_loss.append(loss_fn(pred, targets_test)[0])
    history.test_metric.append(float(metric_fn(pred, targets_test)))


def _train_tram_sequential(ds, model, cfg, targets, loss_fn, eval_hook):
    """Stage 1: extractor + PI head end-to-end.  Stage 2: No-PI head on the
    frozen representation."""
    # stage 1: composite (extractor, pi_head) trained jointly
    opt, params = net.make_optimizer(cfg, [model.extractor, model.pi_head])
    n = ds.n
    for epoch in range(1, cfg.epochs + 1):
        for b, idx in enumerate(net.batch_indices(n, cfg.batch_size, cfg.shuffle_seed, epoch)):
            value, grads = tram_gradients(model.extractor, model.pi_head, model.nopi_head,
                                          ds.X[idx], ds.Z[idx], targets[idx],
                                          loss_fn, model.pi_mode, include_nopi=False)
            if not np.isfinite(value):
                raise net.TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {b}")
            flat = []
            for name in ("extractor", "pi_head"):
                gw, gb = grads[name]
                for w, bb in zip(gw, gb):
                    flat.extend([w, bb])
            opt.step(params, flat)
    # stage 2: frozen representation; a plain training run for the No-PI head
    rep = net.forward(model.extractor, ds.X)
    if eval_hook is not None:
        X_test, targets_test, metric_fn = eval_hook
        hook = (net.forward(model.extractor, X_test), targets_test, metric_fn)
    else:
        hook = None
    trained_head, history = net.train(model.nopi_head, rep, targets, cfg,
                                      eval_hook=hook)
    model.nopi_head = trained_head
    return model, history


def tram_predict(model: TramModel, X: np.ndarray) -> np.ndarray:
    """No-PI path: nopi_head(extractor(x)).  Z is never consulted."""
    return net.forward(model.nopi_head, net.forward(model.extractor, X))


def marginalize_mc(predict, x: np.ndarray, z_sampler: Callable, m: int,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo marginal prediction E_z[g_t(x, z)] at a single point.

    `predict` is an MlpModel or a callable mapping (m, d_x + d_z) rows to
    (m, c) outputs; `z_sampler(gen, m)` draws m rows of p(z|x) from the
    provided stream.  Returns (mean, standard error) per output column."""
    if m < 1:
        raise ValueError("need m >= 1 samples")
    x = np.asarray(x, dtype=np.float64).ravel()
    Zs = np.asarray(z_sampler(rng.stream(seed), m), dtype=np.float64)
    if Zs.ndim == 1:
        Zs = Zs[:, None]
    if Zs.shape[0] != m:
        raise ValueError(f"sampler returned {Zs.shape[0]} rows, wanted {m}")
    inputs = np.hstack([np.tile(x, (m, 1)), Zs])
    if isinstance(predict, MlpModel):
        out = net.forward(predict, inputs)
    else:
        out = np.asarray(predict(inputs), dtype=np.float64)
        if out.ndim == 1:
            out = out[:, None]
    mean = out.mean(axis=0)
    if m == 1:
        return mean, np.zeros_like(mean)
    stderr = out.std(axis=0, ddof=1) / np.sqrt(m)
    return mean, stderr


# ---------------------------------------------------------------------------
# soft-label serialization
# ---------------------------------------------------------------------------


def save_soft_labels(soft: SoftLabelSet, path) -> None:
    """CSV `s_0..s_{c-1}` row-aligned with the dataset dump, plus a
    provenance sidecar `<path>.meta.json`."""
    path = Path(path)
    c = soft.values.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"s_{i}" for i in range(c)])
        for row in soft.values:
            w.writerow([f"{v:.17g}" for v in row])
    with open(path.with_name(path.name + ".meta.json"), "w") as f:
        json.dump(soft.provenance, f, indent=2)


def load_soft_labels(path) -> SoftLabelSet:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if header != [f"s_{i}" for i in range(len(header))]:
        raise ValueError(f"unexpected soft-label header {header!r}")
    with open(path.with_name(path.name + ".meta.json")) as f:
        provenance = json.load(f)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return SoftLabelSet(values, provenance)
