"""Minimal deterministic dense-network training core.

Fixed menu: dense layers, {tanh, relu, gelu} hidden activations,
{identity, sigmoid, softmax, tanh} output activations, {mse, cross_entropy}
losses, {sgd, rmsprop, adam} optimizers with optional decoupled weight
decay.  Gradients are hand-written reverse mode and verified against
central differences by `gradient_check`.

Everything is float64 and fully deterministic given (init_seed,
shuffle_seed, config): weights are Glorot-uniform from per-layer Philox
streams, biases zero, and minibatch order comes from a per-epoch stream.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from . import rng

HIDDEN_ACTIVATIONS = ("tanh", "relu", "gelu")
# identity/sigmoid/softmax cover the loss heads; tanh is allowed so a
# shared-extractor model can end in its nonlinearity.
OUTPUT_ACTIVATIONS = ("identity", "sigmoid", "softmax", "tanh")
LOSSES = ("mse", "cross_entropy")
OPTIMIZERS = ("sgd", "rmsprop", "adam")

_PROB_CLAMP = 1e-12

# stream labels for derive_seed
_TAG_LAYER = 101
_TAG_EPOCH = 202


class ShapeError(ValueError):
    """Array dimensions do not match the model or data contract."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message carries epoch and batch."""


# ---------------------------------------------------------------------------
# specs and models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a dense network: widths input -> hidden... -> output.

    With `residual` set, the pre-activation of the first hidden layer is
    added to the activation of the last hidden layer (their widths must
    match)."""

    layer_widths: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    residual: bool = False
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("layer_widths needs at least input and output")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"all widths must be >= 1, got {self.layer_widths}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.residual:
            hidden = self.layer_widths[1:-1]
            if not hidden:
                raise ValueError("residual connection needs at least one hidden layer")
            if hidden[0] != hidden[-1]:
                raise ValueError(
                    f"residual skip needs equal first/last hidden widths, got {hidden}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "residual": self.residual,
            "init_seed": int(self.init_seed),
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(
            layer_widths=tuple(d["layer_widths"]),
            hidden_activation=d["hidden_activation"],
            output_activation=d["output_activation"],
            residual=bool(d["residual"]),
            init_seed=int(d["init_seed"]),
        )


class MlpModel:
    """Parameters for an MlpSpec.  Evaluation is pure; training copies first."""

    def __init__(self, spec: MlpSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != spec.n_layers or len(biases) != spec.n_layers:
            raise ShapeError("parameter count does not match spec")
        for i in range(spec.n_layers):
            want_w = (spec.layer_widths[i], spec.layer_widths[i + 1])
            if weights[i].shape != want_w:
                raise ShapeError(f"layer {i} weight shape {weights[i].shape}, expected {want_w}")
            if biases[i].shape != (spec.layer_widths[i + 1],):
                raise ShapeError(f"layer {i} bias shape {biases[i].shape}")
        self.spec = spec
        self.weights = weights
        self.biases = biases

    def copy(self) -> "MlpModel":
        return MlpModel(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def init_model(spec: MlpSpec) -> MlpModel:
    """Glorot-uniform weights, zero biases, one Philox stream per layer."""
    weights, biases = [], []
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        gen = rng.stream(spec.init_seed, _TAG_LAYER, i)
        w = (rng.uniform(gen, (fan_in, fan_out)) * 2.0 - 1.0) * limit
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpModel(spec, weights, biases)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "mse"
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    rms_decay: float = 0.9
    eps: float = 1e-7
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: Optional[int] = None  # None = full batch
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1, beta2 must lie in [0, 1)")
        if not (0.0 <= self.rms_decay < 1.0):
            raise ValueError("rms_decay must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None for full batch")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunHistory:
    """Per-epoch training record; epoch i is index i-1."""

    train_loss: list[float] = field(default_factory=list)
    test_loss: Optional[list[float]] = None
    test_metric: Optional[list[float]] = None

    def __len__(self) -> int:
        return len(self.train_loss)


# ---------------------------------------------------------------------------
# activations and losses
# ---------------------------------------------------------------------------


def softmax(q: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise exp-normalize of q / T with max subtraction for stability."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("softmax input must be finite")
    s = q / temperature
    s = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(s)
    return e / np.sum(e, axis=-1, keepdims=True)


def _act_forward(kind: str, q: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return q
    if kind == "tanh":
        return np.tanh(q)
    if kind == "relu":
        return np.maximum(q, 0.0)
    if kind == "gelu":
        return 0.5 * q * (1.0 + erf(q / np.sqrt(2.0)))
    if kind == "sigmoid":
        return expit(q)
    if kind == "softmax":
        return softmax(q)
    raise ValueError(f"unknown activation {kind!r}")


def _act_backward(kind: str, q: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    """dL/dq given dL/da, where a = act(q) (the pure activation value)."""
    if kind == "identity":
        return da
    if kind == "tanh":
        return da * (1.0 - a * a)
    if kind == "relu":
        return da * (q > 0.0)
    if kind == "gelu":
        pdf = np.exp(-0.5 * q * q) / np.sqrt(2.0 * np.pi)
        return da * (0.5 * (1.0 + erf(q / np.sqrt(2.0))) + q * pdf)
    if kind == "sigmoid":
        return da * a * (1.0 - a)
    if kind == "softmax":
        # row-wise Jacobian-vector product: a * (da - <da, a>)
        inner = np.sum(da * a, axis=-1, keepdims=True)
        return a * (da - inner)
    raise ValueError(f"unknown activation {kind!r}")


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries; returns (value, dL/dpred)."""
    diff = pred - target
    value = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return value, grad


def cross_entropy_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """-sum_k t_k log p_k averaged over rows, probabilities clamped to
    [1e-12, 1-1e-12].  For a single output column the binary form
    -(t log p + (1-t) log(1-p)) is used."""
    n = pred.shape[0]
    p = np.clip(pred, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    inside = (pred > _PROB_CLAMP) & (pred < 1.0 - _PROB_CLAMP)
    if pred.ndim == 2 and pred.shape[1] > 1:
        value = float(-np.sum(target * np.log(p)) / n)
        grad = np.where(inside, -target / p, 0.0) / n
    else:
        value = float(-np.sum(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)) / n)
        grad = np.where(inside, (-target / p + (1.0 - target) / (1.0 - p)), 0.0) / n
    return value, grad


LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]

_BUILTIN_LOSSES: dict[str, LossFn] = {"mse": mse_loss, "cross_entropy": cross_entropy_loss}


def get_loss(kind: str) -> LossFn:
    if kind not in _BUILTIN_LOSSES:
        raise ValueError(f"unknown loss {kind!r}")
    return _BUILTIN_LOSSES[kind]


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


class ForwardCache:
    """Forward-pass intermediates: layer inputs, pre-activations and pure
    activation values (before any residual addition)."""

    __slots__ = ("inputs", "pres", "hidden", "out")

    def __init__(self, inputs, pres, hidden, out):
        self.inputs = inputs  # inputs[i]: input to layer i (inputs[0] = X)
        self.pres = pres  # pres[i]: q_i = inputs[i] @ W_i + b_i
        self.hidden = hidden  # hidden[j]: act(q_j) before residual, j < L-1
        self.out = out  # network output (post output activation)


def forward_cache(model: MlpModel, X: np.ndarray) -> ForwardCache:
    spec = model.spec
    L = spec.n_layers
    inputs = [X]
    pres = []
    hidden = []
    a = X
    for i in range(L):
        q = a @ model.weights[i] + model.biases[i]
        pres.append(q)
        if i < L - 1:
            h = _act_forward(spec.hidden_activation, q)
            hidden.append(h)
            a = h + pres[0] if (spec.residual and i == L - 2) else h
            inputs.append(a)
        else:
            a = _act_forward(spec.output_activation, q)
    return ForwardCache(inputs, pres, hidden, a)


def _check_input(model: MlpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.in_width:
        raise ShapeError(f"input shape {X.shape} does not match in_width {model.spec.in_width}")
    return X


def forward(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Network output for a batch of rows."""
    return forward_cache(model, _check_input(model, X)).out


def forward_logits(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Final-layer pre-activation (the logits for a softmax-headed model)."""
    return forward_cache(model, _check_input(model, X)).pres[-1]


def backprop(model: MlpModel, cache: ForwardCache, d_out: np.ndarray):
    """Gradients of a scalar loss given dL/d(output).

    Returns (weight_grads, bias_grads, dX).  The residual skip routes part
    of the last-hidden gradient straight into the first pre-activation.
    """
    spec = model.spec
    L = spec.n_layers
    w_grads: list = [None] * L
    b_grads: list = [None] * L
    dq = _act_backward(spec.output_activation, cache.pres[-1], cache.out, d_out)
    d_skip = None
    for i in range(L - 1, -1, -1):
        w_grads[i] = cache.inputs[i].T @ dq
        b_grads[i] = dq.sum(axis=0)
        da = dq @ model.weights[i].T
        if i == 0:
            return w_grads, b_grads, da
        j = i - 1  # hidden layer whose (possibly residual-augmented) output feeds layer i
        if spec.residual and j == L - 2:
            d_skip = da
        dq = _act_backward(spec.hidden_activation, cache.pres[j], cache.hidden[j], da)
        if j == 0 and d_skip is not None:
            dq = dq + d_skip
            d_skip = None
    raise AssertionError("unreachable")


def loss_and_gradients(model: MlpModel, X: np.ndarray, targets, loss_fn: LossFn):
    """(loss value, weight grads, bias grads) for one batch."""
    cache = forward_cache(model, _check_input(model, X))
    value, d_out = loss_fn(cache.out, targets)
    w_grads, b_grads, _ = backprop(model, cache, d_out)
    return value, w_grads, b_grads


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class Optimizer:
    """sgd / rmsprop / adam with decoupled weight decay on weight matrices.

    Decay shrinks each weight matrix by lr * weight_decay * W (taken at the
    pre-update value), independent of the gradient path; biases are not
    decayed.  Adam is bias-corrected."""

    def __init__(self, cfg: TrainConfig, params: list[np.ndarray], decay_mask: list[bool]):
        self.cfg = cfg
        self.t = 0
        self.decay_mask = decay_mask
        if cfg.optimizer in ("rmsprop", "adam"):
            self.sq = [np.zeros_like(p) for p in params]
        if cfg.optimizer == "adam":
            self.m = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        lr = cfg.learning_rate
        self.t += 1
        for k, (p, g) in enumerate(zip(params, grads)):
            if cfg.weight_decay > 0.0 and self.decay_mask[k]:
                decay = lr * cfg.weight_decay * p
            else:
                decay = 0.0
            if cfg.optimizer == "sgd":
                update = lr * g
            elif cfg.optimizer == "rmsprop":
                s = self.sq[k]
                s *= cfg.rms_decay
                s += (1.0 - cfg.rms_decay) * g * g
                update = lr * g / (np.sqrt(s) + cfg.eps)
            else:  # adam
                m, v = self.m[k], self.sq[k]
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                mhat = m / (1.0 - cfg.beta1**self.t)
                vhat = v / (1.0 - cfg.beta2**self.t)
                update = lr * mhat / (np.sqrt(vhat) + cfg.eps)
            p -= update + decay


def make_optimizer(cfg: TrainConfig, models: Sequence[MlpModel]) -> tuple[Optimizer, list[np.ndarray]]:
    """One optimizer over the concatenated parameters of several models."""
    params: list[np.ndarray] = []
    mask: list[bool] = []
    for m in models:
        for w, b in zip(m.weights, m.biases):
            params.append(w)
            mask.append(True)
            params.append(b)
            mask.append(False)
    return Optimizer(cfg, params, mask), params


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _take(targets, idx):
    if isinstance(targets, tuple):
        return tuple(t[idx] for t in targets)
    return targets[idx]


def _target_rows(targets) -> int:
    if isinstance(targets, tuple):
        return targets[0].shape[0]
    return targets.shape[0]


def batch_indices(n: int, batch_size: Optional[int], shuffle_seed: int, epoch: int):
    """Index blocks for one epoch.  Full batch keeps natural order; minibatch
    order comes from a per-epoch Philox stream."""
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    gen = rng.stream(shuffle_seed, _TAG_EPOCH, epoch)
    perm = gen.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def train(
    model: MlpModel,
    X: np.ndarray,
    targets,
    cfg: TrainConfig,
    *,
    loss: Optional[LossFn] = None,
    eval_hook: Optional[tuple] = None,
    epoch_callback: Optional[Callable[[int, MlpModel], None]] = None,
) -> tuple[MlpModel, RunHistory]:
    """Run the configured optimizer for cfg.epochs over (X, targets).

    The input model is not mutated; a trained copy is returned.  `targets`
    may be an array or a tuple of row-aligned arrays consumed by `loss`
    (defaults to the cfg.loss builtin).  `eval_hook`, when given, is
    (X_test, targets_test, metric_fn) and fills per-epoch test loss and
    metric; `epoch_callback(epoch, model)` fires after each epoch and sees
    the live model.
    """
    X = _check_input(model, X)
    if _target_rows(targets) != X.shape[0]:
        raise ShapeError("targets are not row-aligned with inputs")
    loss_fn = loss if loss is not None else get_loss(cfg.loss)

    model = model.copy()
    opt, params = make_optimizer(cfg, [model])
    history = RunHistory()
    if eval_hook is not None:
        history.test_loss = []
        history.test_metric = []

    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for b, idx in enumerate(batch_indices(n, cfg.batch_size, cfg.shuffle_seed, epoch)):
            cache = forward_cache(model, X[idx])
            value, d_out = loss_fn(cache.out, _take(targets, idx))
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {b}"
                )
            w_grads, b_grads, _ = backprop(model, cache, d_out)
            grads = []
            for gw, gb in zip(w_grads, b_grads):
                grads.extend([gw, gb])
            opt.step(params, grads)
            total += value * len(idx)
        history.train_loss.append(total / n)
        if eval_hook is not None:
            X_test, targets_test, metric_fn = eval_hook
            pred = forward(model, X_test)
            history.test_loss.append(loss_fn(pred, targets_test)[0])
            history.test_metric.append(float(metric_fn(pred, targets_test)))
        if epoch_callback is not None:
            epoch_callback(epoch, model)
    return model, history


# ---------------------------------------------------------------------------
# verification and linear algebra
# ---------------------------------------------------------------------------


def gradient_check(model: MlpModel, X: np.ndarray, targets, loss: str, h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    Relative error per coordinate is |g_analytic - g_fd| / max(|g_analytic|,
    1e-8); the loss is evaluated at theta +/- h for every parameter entry.
    """
    if X.shape[0] == 0:
        raise ValueError("gradient_check needs a non-empty batch")
    if not h > 0:
        raise ValueError("step h must be > 0")
    loss_fn = get_loss(loss)
    _, w_grads, b_grads = loss_and_gradients(model, X, targets, loss_fn)
    analytic = []
    for gw, gb in zip(w_grads, b_grads):
        analytic.extend([gw, gb])
    if not all(np.all(np.isfinite(g)) for g in analytic):
        raise ValueError("analytic gradient is not finite")

    work = model.copy()
    worst = 0.0
    for p, g in zip(work.parameters(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn(forward(work, X), targets)[0]
            flat[j] = orig - h
            dn = loss_fn(forward(work, X), targets)[0]
            flat[j] = orig
            fd = (up - dn) / (2.0 * h)
            rel = abs(gflat[j] - fd) / max(abs(gflat[j]), 1e-8)
            worst = max(worst, rel)
    return worst


def least_squares(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution of A x ~ b.

    SVD-backed solve with singular values below 1e-10 of the largest
    treated as zero."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"A must be a non-empty matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ShapeError("b length does not match rows of A")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("least_squares requires finite entries")
    x, _, _, _ = np.linalg.lstsq(A, b, rcond=1e-10)
    return x


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "lupi-lab-model"
CHECKPOINT_VERSION = 1


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s: str, shape) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def model_to_dict(model: MlpModel) -> dict:
    """Versioned checkpoint document: spec plus per-layer base64 little-endian
    float64 arrays, layers in order, weight before bias."""
    layers = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        layers.append(
            {
                "layer": i,
                "weight_shape": list(w.shape),
                "weight": _encode(w),
                "bias_shape": list(b.shape),
                "bias": _encode(b),
            }
        )
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "layers": layers,
    }


def model_from_dict(doc: dict) -> MlpModel:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: format={doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    spec = MlpSpec.from_dict(doc["spec"])
    weights, biases = [], []
    for entry in sorted(doc["layers"], key=lambda e: e["layer"]):
        weights.append(_decode(entry["weight"], entry["weight_shape"]))
        biases.append(_decode(entry["bias"], entry["bias_shape"]))
    return MlpModel(spec, weights, biases)


def save_model(model: MlpModel, path) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path) -> MlpModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
