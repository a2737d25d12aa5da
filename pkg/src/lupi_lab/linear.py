"""Closed-form risks for the linear-Gaussian setting, the two estimators,
and a Monte-Carlo verifier.

For y = Xw* + Zv* + eps with standard-normal design blocks, the expected
excess risks of the plain estimator (regress y on X) and the distilled
estimator (fit on [X|Z], then project the fitted values onto X) are

    risk_reg = d_x * (sigma^2 + ||v*||^2) / (n - d_x - 1)
    risk_pri = d_x * ||v*||^2 / (n - d_x - 1)
             + d_x * sigma^2   / (n - d_x - d_z - 1)

via the inverse-Wishart identity E[(X'X)^-1] = I / (n - d - 1).  The
distilled estimator is never better: risk_pri >= risk_reg, with equality
iff sigma = 0 or d_z = 0."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import net, rng
from .synthgen import LinearPIConfig, gen_linear_pi

_TAG_TRIAL = 17
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearRiskReport:
    """Closed-form and Monte-Carlo risks side by side."""

    closed_form_reg: float
    closed_form_pri: float
    empirical_reg: float
    empirical_pri: float
    stderr_reg: float
    stderr_pri: float
    trials: int
    failures: int
    config: LinearPIConfig

    def to_dict(self) -> dict:
        return {
            "closed_form_reg": self.closed_form_reg,
            "closed_form_pri": self.closed_form_pri,
            "empirical_reg": self.empirical_reg,
            "empirical_pri": self.empirical_pri,
            "stderr_reg": self.stderr_reg,
            "stderr_pri": self.stderr_pri,
            "trials": self.trials,
            "failures": self.failures,
            "config": {
                "d_x": self.config.d_x, "d_z": self.config.d_z, "n": self.config.n,
                "sigma": self.config.sigma, "w_star": list(self.config.w_star),
                "v_star": list(self.config.v_star), "seed": self.config.seed,
            },
        }


class RankDeficientError(ValueError):
    """A design block is numerically rank deficient; message names it."""


def _check_full_rank(A: np.ndarray, block: str) -> None:
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= _RANK_TOL * s[0]:
        raise RankDeficientError(f"design block {block} is rank deficient "
                                 f"(smallest/largest singular value = {s[-1]/s[0]:.2e})")


def ols_fit(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Plain least-squares coefficients of y on X."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n <= d:
        raise ValueError(f"need n > d_x for the plain fit, got n={n}, d_x={d}")
    return net.least_squares(X, y)


def distill_fit(X: np.ndarray, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Distilled coefficients: fit theta on the concatenated design [X|Z],
    then regress the fitted values [X|Z] theta back onto X alone.

    Z inside the column space of X is fine (fitted values are unique);
    a rank-deficient X block is not, since the projection is then
    ill-posed."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    n, d_x = X.shape
    d_z = Z.shape[1]
    if Z.shape[0] != n:
        raise net.ShapeError("X and Z must have equal row counts")
    if n <= d_x + d_z:
        raise ValueError(f"need n > d_x + d_z, got n={n}, d_x={d_x}, d_z={d_z}")
    _check_full_rank(X, "X")
    if d_z == 0:
        return ols_fit(X, y)
    W = np.hstack([X, Z])
    theta = net.least_squares(W, y)
    fitted = W @ theta
    return net.least_squares(X, fitted)


def closed_form_risks(cfg: LinearPIConfig) -> tuple[float, float]:
    """(risk_reg, risk_pri) per the inverse-Wishart closed forms."""
    den_reg = cfg.n - cfg.d_x - 1
    den_pri = cfg.n - cfg.d_x - cfg.d_z - 1
    if den_reg <= 0 or den_pri <= 0:
        raise ValueError(f"closed forms need n > d_x + d_z + 1, got n={cfg.n}")
    v2 = float(np.sum(np.square(cfg.v_star)))
    s2 = cfg.sigma**2
    risk_reg = cfg.d_x * (s2 + v2) / den_reg
    risk_pri = cfg.d_x * v2 / den_reg + cfg.d_x * s2 / den_pri
    return risk_reg, risk_pri


def monte_carlo_risks(cfg: LinearPIConfig, trials: int) -> LinearRiskReport:
    """Monte-Carlo estimate of both risks over independently seeded trials.

    Trial t regenerates the dataset with a sub-seed derived from
    (cfg.seed, t), so the report is a pure function of (cfg, trials).
    Trials failing the rank conditions are counted; more than 1% failures
    aborts.  Sums are compensated (math.fsum), so aggregation order cannot
    perturb the result."""
    if trials < 100:
        raise ValueError("need trials >= 100 for a meaningful estimate")
    w_star = np.array(cfg.w_star)
    sq_reg: list[float] = []
    sq_pri: list[float] = []
    failures = 0
    for t in range(trials):
        ds = gen_linear_pi(replace(cfg, seed=rng.derive_seed(cfg.seed, _TAG_TRIAL, t)))
        try:
            w_reg = ols_fit(ds.X, ds.y)
            w_pri = distill_fit(ds.X, ds.Z, ds.y)
        except (RankDeficientError, np.linalg.LinAlgError):
            failures += 1
            continue
        sq_reg.append(float(np.sum((w_reg - w_star) ** 2)))
        sq_pri.append(float(np.sum((w_pri - w_star) ** 2)))
    if failures > 0.01 * trials:
        raise RuntimeError(f"{failures}/{trials} trials failed rank conditions")
    m = len(sq_reg)
    mean_reg = math.fsum(sq_reg) / m
    mean_pri = math.fsum(sq_pri) / m
    var_reg = math.fsum((v - mean_reg) ** 2 for v in sq_reg) / (m - 1)
    var_pri = math.fsum((v - mean_pri) ** 2 for v in sq_pri) / (m - 1)
    cf_reg, cf_pri = closed_form_risks(cfg)
    return LinearRiskReport(
        closed_form_reg=cf_reg,
        closed_form_pri=cf_pri,
        empirical_reg=mean_reg,
        empirical_pri=mean_pri,
        stderr_reg=math.sqrt(var_reg / m),
        stderr_pri=math.sqrt(var_pri / m),
        trials=trials,
        failures=failures,
        config=cfg,
    )


def verify_report(report: LinearRiskReport, rel_tol: float = 0.05) -> tuple[bool, str]:
    """PASS/FAIL assessment of a Monte-Carlo report.

    PASS requires both empirical risks within rel_tol of their closed
    forms and the inequality empirical_pri >= empirical_reg - 2 combined
    standard errors."""
    checks = []
    for name, emp, cf in (
        ("reg", report.empirical_reg, report.closed_form_reg),
        ("pri", report.empirical_pri, report.closed_form_pri),
    ):
        rel = abs(emp - cf) / cf if cf else abs(emp - cf)
        checks.append((f"{name} within {rel_tol:.0%}", rel <= rel_tol,
                       f"empirical={emp:.6f} closed={cf:.6f} rel={rel:.3%}"))
    combined = math.hypot(report.stderr_reg, report.stderr_pri)
    ok_ineq = report.empirical_pri >= report.empirical_reg - 2 * combined
    checks.append(("pri >= reg - 2se", ok_ineq,
                   f"pri={report.empirical_pri:.6f} reg={report.empirical_reg:.6f} se={combined:.6f}"))
    ok = all(c[1] for c in checks)
    lines = [f"[{'PASS' if c[1] else 'FAIL'}] {c[0]}: {c[2]}" for c in checks]
    return ok, "\n".join(lines)
