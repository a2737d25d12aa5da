"""Seeded synthetic data generators.

Each generator is a pure function of (parameters, seed): all draws come
from named sub-streams of the seed, so regenerating with the same seed is
bit-identical.  Privileged columns Z are always emitted separately from X.

Generators:
    gen_experiment1        clean decision scores as the privileged column
    gen_experiment3        the relevant feature subset as privileged columns
    gen_tram_regression    y = (1-z)*sin(2*pi*x) + z*v + eps, z ~ Ber(p)
    gen_tram_classification  Bernoulli labels from a corrupted score
    gen_linear_pi          linear-Gaussian model y = Xw* + Zv* + eps
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng

TASKS = ("regression", "binary", "multiclass")
REGIME_KINDS = ("deterministic", "bernoulli", "uniform", "cosine")

# sub-stream labels
_TAG_X = 1
_TAG_ALPHA = 2
_TAG_EPS = 3
_TAG_Z = 4
_TAG_V = 5
_TAG_J = 6
_TAG_Y = 7


@dataclass
class TripleDataset:
    """Rows of (x_i, z_i, y_i): features, privileged features, label."""

    X: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    task: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        n = self.X.shape[0]
        if self.Z.shape[0] != n or self.y.shape[0] != n:
            raise ValueError("X, Z, y must have equal row counts")
        for name, a in (("X", self.X), ("Z", self.Z), ("y", self.y)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
        if self.task == "binary" and not set(np.unique(self.y)) <= {0.0, 1.0}:
            raise ValueError("binary task requires y in {0, 1}")
        if self.task == "multiclass":
            if self.y.ndim != 2 or not np.allclose(self.y.sum(axis=1), 1.0):
                raise ValueError("multiclass task requires one-hot rows summing to 1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_z(self) -> int:
        return self.Z.shape[1]

    def subset(self, idx) -> "TripleDataset":
        """Row subset sharing meta (views the same generator identity)."""
        return TripleDataset(self.X[idx], self.Z[idx], self.y[idx], self.task, dict(self.meta))


@dataclass(frozen=True)
class CorruptionRegime:
    """How the corrupted value v is drawn when the annotator is corrupted."""

    kind: str = "uniform"
    p_corrupt: float = 0.3

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ValueError(f"unknown regime kind {self.kind!r}")
        if not 0.0 <= self.p_corrupt <= 1.0:
            raise ValueError(f"p_corrupt must lie in [0, 1], got {self.p_corrupt}")


@dataclass(frozen=True)
class LinearPIConfig:
    """Linear-Gaussian generating model y = x'w* + z'v* + eps."""

    d_x: int
    d_z: int
    n: int
    sigma: float
    w_star: tuple
    v_star: tuple
    seed: int = 0

    def __post_init__(self):
        if self.d_x < 1 or self.d_z < 0:
            raise ValueError("d_x must be >= 1 and d_z >= 0")
        if self.n <= self.d_x + self.d_z + 1:
            raise ValueError(
                f"need n > d_x + d_z + 1, got n={self.n}, d_x={self.d_x}, d_z={self.d_z}"
            )
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        object.__setattr__(self, "w_star", tuple(float(v) for v in self.w_star))
        object.__setattr__(self, "v_star", tuple(float(v) for v in self.v_star))
        if len(self.w_star) != self.d_x:
            raise ValueError("w_star length must equal d_x")
        if len(self.v_star) != self.d_z:
            raise ValueError("v_star length must equal d_z")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def exp1_label(score: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Label rule of the clean-score process: y = 1{score + eps > 0}.

    Exposed separately so labels can be recomputed from stored meta (or
    with the noise forced to zero)."""
    return (np.asarray(score) + np.asarray(eps) > 0.0).astype(np.float64)


def gen_experiment1(n: int, d: int = 50, seed: int = 0) -> TripleDataset:
    """Clean decision scores as privileged information.

    x ~ N(0, I_d); z = <alpha, x> for a per-seed alpha ~ N(0, I_d);
    y = 1{z + eps > 0} with eps ~ N(0, 1).  The clean score z is the
    privileged column; alpha is stored in meta."""
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    alpha = rng.normal(rng.stream(seed, _TAG_ALPHA), d)
    X = rng.normal(rng.stream(seed, _TAG_X), (n, d))
    eps = rng.normal(rng.stream(seed, _TAG_EPS), n)
    z = X @ alpha
    y = exp1_label(z, eps)
    meta = {"generator": "experiment1", "seed": int(seed), "n": int(n), "d": int(d),
            "alpha": alpha.tolist()}
    return TripleDataset(X, z[:, None], y, "binary", meta)


def gen_experiment3(n: int, d: int = 50, j: int = 3, seed: int = 0) -> TripleDataset:
    """The j relevant feature columns as privileged information.

    x ~ N(0, I_d); J is a j-subset of columns drawn once per dataset;
    z = x_J; y = 1{<alpha, z> > 0} with alpha ~ N(0, I_j).  J and alpha
    are stored in meta."""
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if not 1 <= j <= d:
        raise ValueError(f"need 1 <= j <= d, got j={j}, d={d}")
    J = rng.stream(seed, _TAG_J).permutation(d)[:j]
    alpha = rng.normal(rng.stream(seed, _TAG_ALPHA), j)
    X = rng.normal(rng.stream(seed, _TAG_X), (n, d))
    Z = X[:, J]
    y = (Z @ alpha > 0.0).astype(np.float64)
    meta = {"generator": "experiment3", "seed": int(seed), "n": int(n), "d": int(d),
            "j": int(j), "J": [int(c) for c in J], "alpha": alpha.tolist()}
    return TripleDataset(X, Z, y, "binary", meta)


def gen_tram_regression(n: int, p_corrupt: float = 0.3, noise_std: float = 0.1,
                        seed: int = 0) -> TripleDataset:
    """Noisy-annotator regression: y = (1-z)*sin(2*pi*x) + z*v + eps.

    x ~ Unif[0,1]; z ~ Ber(p_corrupt) is the privileged corruption flag;
    v ~ Unif(-1,1); eps ~ N(0, noise_std^2)."""
    if n < 1:
        raise ValueError("need n >= 1")
    if not 0.0 <= p_corrupt <= 1.0:
        raise ValueError("p_corrupt must lie in [0, 1]")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    x = rng.uniform(rng.stream(seed, _TAG_X), n)
    z = rng.bernoulli(rng.stream(seed, _TAG_Z), p_corrupt, n)
    v = rng.uniform(rng.stream(seed, _TAG_V), n) * 2.0 - 1.0
    eps = rng.normal(rng.stream(seed, _TAG_EPS), n) * noise_std
    y = (1.0 - z) * np.sin(2.0 * np.pi * x) + z * v + eps
    meta = {"generator": "tram_regression", "seed": int(seed), "n": int(n),
            "p_corrupt": float(p_corrupt), "noise_std": float(noise_std)}
    return TripleDataset(x[:, None], z[:, None], y, "regression", meta)


def gen_tram_classification(n: int, regime: CorruptionRegime, seed: int = 0) -> TripleDataset:
    """Bernoulli labels from a corrupted score.

    y_score = (1-z)*sin(2*pi*x) + z*v with v drawn per the regime
    (deterministic 1, Ber(0.7), Unif[-1,1], or cos(2*pi*x)); the score is
    clamped to [0,1] before sampling y ~ Ber(score)."""
    if n < 1:
        raise ValueError("need n >= 1")
    x = rng.uniform(rng.stream(seed, _TAG_X), n)
    z = rng.bernoulli(rng.stream(seed, _TAG_Z), regime.p_corrupt, n)
    if regime.kind == "deterministic":
        v = np.ones(n)
    elif regime.kind == "bernoulli":
        v = rng.bernoulli(rng.stream(seed, _TAG_V), 0.7, n)
    elif regime.kind == "uniform":
        v = rng.uniform(rng.stream(seed, _TAG_V), n) * 2.0 - 1.0
    else:  # cosine
        v = np.cos(2.0 * np.pi * x)
    score = np.clip((1.0 - z) * np.sin(2.0 * np.pi * x) + z * v, 0.0, 1.0)
    u = rng.uniform(rng.stream(seed, _TAG_Y), n)
    y = (u < score).astype(np.float64)
    meta = {"generator": "tram_classification", "seed": int(seed), "n": int(n),
            "regime": regime.kind, "p_corrupt": float(regime.p_corrupt)}
    return TripleDataset(x[:, None], z[:, None], y, "binary", meta)


def gen_linear_pi(cfg: LinearPIConfig) -> TripleDataset:
    """Linear-Gaussian triples: X, Z independent standard normal blocks,
    y = Xw* + Zv* + eps with eps ~ N(0, sigma^2)."""
    w = np.array(cfg.w_star)
    v = np.array(cfg.v_star)
    X = rng.normal(rng.stream(cfg.seed, _TAG_X), (cfg.n, cfg.d_x))
    Z = rng.normal(rng.stream(cfg.seed, _TAG_Z), (cfg.n, cfg.d_z)) if cfg.d_z else np.zeros((cfg.n, 0))
    eps = rng.normal(rng.stream(cfg.seed, _TAG_EPS), cfg.n) * cfg.sigma
    y = X @ w + (Z @ v if cfg.d_z else 0.0) + eps
    meta = {"generator": "linear_pi", "seed": int(cfg.seed), "n": int(cfg.n),
            "d_x": int(cfg.d_x), "d_z": int(cfg.d_z), "sigma": float(cfg.sigma),
            "w_star": list(cfg.w_star), "v_star": list(cfg.v_star)}
    return TripleDataset(X, Z, y, "regression", meta)


def noise_free_target(x):
    """The clean regression target sin(2*pi*x)."""
    return np.sin(2.0 * np.pi * np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# dump / load
# ---------------------------------------------------------------------------


def save_dataset(ds: TripleDataset, path) -> None:
    """Columnar CSV `x_0..x_{dx-1}, z_0..z_{dz-1}, y` plus a JSON sidecar
    `<path>.meta.json` with task and meta.  Floats are written with enough
    digits to round-trip float64 exactly."""
    if ds.y.ndim != 1:
        raise ValueError("CSV dump supports 1-column labels only")
    path = Path(path)
    header = [f"x_{i}" for i in range(ds.d_x)] + [f"z_{i}" for i in range(ds.d_z)] + ["y"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(ds.n):
            row = np.concatenate([ds.X[i], ds.Z[i], [ds.y[i]]])
            w.writerow([f"{v:.17g}" for v in row])
    sidecar = {"task": ds.task, "meta": ds.meta, "n": ds.n, "d_x": ds.d_x, "d_z": ds.d_z}
    with open(path.with_name(path.name + ".meta.json"), "w") as f:
        json.dump(sidecar, f, indent=2)


def load_dataset(path) -> TripleDataset:
    """Inverse of save_dataset; requires the sidecar for task/meta."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(c) for c in row] for row in reader if row]
    d_x = sum(1 for h in header if h.startswith("x_"))
    d_z = sum(1 for h in header if h.startswith("z_"))
    if header != [f"x_{i}" for i in range(d_x)] + [f"z_{i}" for i in range(d_z)] + ["y"]:
        raise ValueError(f"unexpected dataset header {header!r}")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    with open(path.with_name(path.name + ".meta.json")) as f:
        sidecar = json.load(f)
    return TripleDataset(
        data[:, :d_x], data[:, d_x : d_x + d_z], data[:, -1],
        sidecar["task"], sidecar["meta"],
    )
