"""Gaussian-process emulator with a single-lengthscale squared-exponential kernel.

Inputs live in the unit cube and targets are standardized, so the kernel is
used without an amplitude hyperparameter. Hyperparameters (log lengthscale,
log nugget) are fitted by minimizing the negative log marginal likelihood
with L-BFGS-B from Latin-hypercube restarts.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .space import lhd_unit

logger = logging.getLogger(__name__)

NUGGET_FLOOR = 1e-8
PREDICT_BLOCK = 256
ARTIFACT_FORMAT = "qotcal-gp"
ARTIFACT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelHyperparams:
    log_lengthscale: float
    log_nugget: float

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def nugget(self) -> float:
        return max(math.exp(self.log_nugget), NUGGET_FLOOR)


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray  # (n, m), unit cube
    targets: np.ndarray  # (n,), dB
    mean: float
    std: float

    @classmethod
    def from_arrays(cls, inputs, targets) -> "TrainingSet":
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("training inputs must lie in the unit cube")
        std = float(np.std(y))
        # A constant target set still standardizes cleanly with unit scale.
        return cls(x, y, float(np.mean(y)), std if std > 0 else 1.0)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def standardized(self) -> np.ndarray:
        return (self.targets - self.mean) / self.std


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, accumulated coordinate by coordinate.

    Elementwise on purpose: each entry depends only on its own pair of rows,
    so results are bit-identical however the queries are batched.
    """
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        diff = a[:, k, None] - b[None, :, k]
        d += diff * diff
    return d


def kernel_matrix(a, b, hp: KernelHyperparams, add_nugget: bool = False) -> np.ndarray:
    """Squared-exponential covariance; the nugget only ever touches K(A, A)'s diagonal."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    k = np.exp(-sq_dist(a, b) / (2.0 * hp.lengthscale ** 2))
    if add_nugget and a.shape == b.shape and np.array_equal(a, b):
        k[np.diag_indices_from(k)] += hp.nugget
    return k


def _nlml_and_grad(theta, d2: np.ndarray, y: np.ndarray):
    log_l, log_d = theta
    n = y.size
    l2 = math.exp(2.0 * log_l)
    delta = max(math.exp(log_d), NUGGET_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        kse = np.exp(-d2 / (2.0 * l2))
    if not np.all(np.isfinite(kse)):
        return math.inf, np.zeros(2)
    k = kse.copy()
    k[np.diag_indices(n)] += delta
    try:
        chol = cholesky(k, lower=True, check_finite=False)
    except LinAlgError:
        return math.inf, np.zeros(2)
    alpha = cho_solve((chol, True), y, check_finite=False)
    val = 0.5 * y @ alpha + np.log(np.diag(chol)).sum() + 0.5 * n * math.log(2.0 * math.pi)
    if not math.isfinite(val):
        return math.inf, np.zeros(2)
    kinv = cho_solve((chol, True), np.eye(n), check_finite=False)
    w = kinv - np.outer(alpha, alpha)
    dk_dl = kse * d2 / l2
    g_l = 0.5 * np.sum(w * dk_dl)
    # Below the floor the nugget is clamped and no longer moves with log_d.
    g_d = 0.5 * delta * np.trace(w) if math.exp(log_d) >= NUGGET_FLOOR else 0.0
    return float(val), np.array([g_l, g_d])


def nlml(hp: KernelHyperparams, data: TrainingSet) -> float:
    """Negative log marginal likelihood of the standardized targets (+inf if K is not PD)."""
    return _nlml_and_grad((hp.log_lengthscale, hp.log_nugget), sq_dist(data.inputs, data.inputs), data.standardized)[0]


def nlml_grad(hp: KernelHyperparams, data: TrainingSet) -> np.ndarray:
    """Analytic gradient w.r.t. (log_lengthscale, log_nugget)."""
    return _nlml_and_grad((hp.log_lengthscale, hp.log_nugget), sq_dist(data.inputs, data.inputs), data.standardized)[1]


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: np.ndarray | float
    variance: np.ndarray | float


@dataclass(frozen=True, eq=False)
class TrainedEmulator:
    data: TrainingSet
    hp: KernelHyperparams
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    chol_inv: np.ndarray = field(repr=False)
    nlml: float = math.nan

    @classmethod
    def fit(cls, data: TrainingSet, hp: KernelHyperparams) -> "TrainedEmulator":
        """Factorize at fixed hyperparameters."""
        k = kernel_matrix(data.inputs, data.inputs, hp, add_nugget=True)
        chol = cholesky(k, lower=True, check_finite=False)
        y = data.standardized
        w = cho_solve((chol, True), y, check_finite=False)
        val = 0.5 * y @ w + np.log(np.diag(chol)).sum() + 0.5 * data.n * math.log(2 * math.pi)
        chol_inv = solve_triangular(chol, np.eye(data.n), lower=True, check_finite=False)
        return cls(data, hp, chol, w, chol_inv, float(val))

    def _raw(self, xq: np.ndarray):
        # Fixed-shape blocks keep BLAS on one code path, so a row's result does
        # not depend on how many other rows are queried with it.
        q = xq.shape[0]
        mean = np.empty(q)
        var = np.empty(q)
        pad = np.zeros((PREDICT_BLOCK, xq.shape[1]))
        for start in range(0, q, PREDICT_BLOCK):
            blk = xq[start:start + PREDICT_BLOCK]
            m = blk.shape[0]
            if m < PREDICT_BLOCK:
                pad[:m] = blk
                blk = pad
            ks = kernel_matrix(blk, self.data.inputs, self.hp)  # no nugget on cross terms
            v = ks @ self.chol_inv.T
            mean[start:start + m] = (ks * self.weights).sum(1)[:m]
            var[start:start + m] = ((1.0 + self.hp.nugget) - (v * v).sum(1))[:m]
        return mean, var

    def predict_standardized_raw(self, xq) -> tuple[np.ndarray, np.ndarray]:
        """Standardized mean and variance without clamping (conditioning checks)."""
        return self._raw(np.atleast_2d(np.asarray(xq, dtype=float)))

    def predict(self, xq) -> PredictiveDistribution:
        """Predictive mean (dB) and variance (dB^2) at one point or rows of points."""
        xq = np.asarray(xq, dtype=float)
        single = xq.ndim == 1
        mean, var = self._raw(np.atleast_2d(xq))
        mean = self.data.mean + self.data.std * mean
        var = self.data.std ** 2 * np.maximum(var, 0.0)
        if single:
            return PredictiveDistribution(float(mean[0]), float(var[0]))
        return PredictiveDistribution(mean, var)

    def predict_mean(self, xq) -> np.ndarray:
        ks = kernel_matrix(xq, self.data.inputs, self.hp)
        return self.data.mean + self.data.std * (ks * self.weights).sum(1)

    # persistence ---------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "inputs": self.data.inputs.tolist(),
            "targets": self.data.targets.tolist(),
            "target_mean": self.data.mean,
            "target_std": self.data.std,
            "log_lengthscale": self.hp.log_lengthscale,
            "log_nugget": self.hp.log_nugget,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainedEmulator":
        d = json.loads(text)
        if d.get("format") != ARTIFACT_FORMAT or d.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"unsupported emulator artifact {d.get('format')!r} v{d.get('version')!r}")
        data = TrainingSet(np.asarray(d["inputs"], dtype=float), np.asarray(d["targets"], dtype=float),
                           float(d["target_mean"]), float(d["target_std"]))
        return cls.fit(data, KernelHyperparams(float(d["log_lengthscale"]), float(d["log_nugget"])))


def train(data: TrainingSet, restarts: int = 5, seed=0,
          lengthscale_bounds: tuple[float, float] = (0.01, 100.0),
          nugget_bounds: tuple[float, float] = (NUGGET_FLOOR, 1.0)) -> TrainedEmulator:
    """Multi-start L-BFGS-B maximum-likelihood fit; keeps the best restart.

    Starting points are a Latin hypercube over the log-hyperparameter box, so
    the result is reproducible for a fixed ``seed``.
    """
    if data.n < 2:
        raise ValueError("need at least 2 training points")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if not (0 < lengthscale_bounds[0] < lengthscale_bounds[1]):
        raise ValueError(f"bad lengthscale bounds {lengthscale_bounds}")
    if not (NUGGET_FLOOR <= nugget_bounds[0] < nugget_bounds[1]):
        raise ValueError(f"bad nugget bounds {nugget_bounds} (floor {NUGGET_FLOOR})")
    bounds = np.log(np.array([lengthscale_bounds, nugget_bounds], dtype=float))
    starts = bounds[:, 0] + lhd_unit(2, restarts, seed) * (bounds[:, 1] - bounds[:, 0])
    d2 = sq_dist(data.inputs, data.inputs)
    y = data.standardized

    def objective(theta):
        val, grad = _nlml_and_grad(theta, d2, y)
        if not math.isfinite(val):
            # L-BFGS-B cannot line-search through inf; a huge finite value makes it back off.
            return 1e300, np.zeros(2)
        return val, grad

    best = None
    for i, x0 in enumerate(starts):
        res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        val = _nlml_and_grad(res.x, d2, y)[0]
        logger.debug("restart %d: start=%s end=%s nlml=%s", i, x0, res.x, val)
        if math.isfinite(val) and (best is None or val < best[0]):
            best = (val, res.x)
    if best is None:
        raise TrainingError(
            "Cholesky failed for every restart; region explored: "
            f"lengthscale in {tuple(lengthscale_bounds)}, nugget in {tuple(nugget_bounds)}")
    hp = KernelHyperparams(float(best[1][0]), float(best[1][1]))
    return TrainedEmulator.fit(data, hp)


def validate(em, val_inputs, val_targets) -> tuple[float, float]:
    """Mean absolute and RMS prediction error over a validation set, dB.

    ``em`` only needs a ``predict_mean`` method taking unit-cube rows.
    """
    x = np.atleast_2d(np.asarray(val_inputs, dtype=float))
    y = np.asarray(val_targets, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty validation set")
    e = np.abs(em.predict_mean(x) - y)
    return float(e.mean()), float(np.sqrt(np.mean(e ** 2)))
