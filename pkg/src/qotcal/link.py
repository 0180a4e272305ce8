"""Closed-form SNR model of an amplified multi-span fiber link.

SNR versus launch power follows ``SNR = ((a + b P^3) / P + 1/SNR0)^-1`` with
``a`` the accumulated ASE power and ``b`` an incoherent Gaussian-noise-model
nonlinear coefficient. All functions broadcast over numpy arrays so whole
designs can be simulated in one call.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

PLANCK = 6.62607015e-34  # J s
GRID_STEP_DB = 0.1
OPT_WINDOW_DB = 5.0
MAX_WINDOW_DB = 15.0


class SearchWindowError(ValueError):
    """Requested SNR penalty is not reachable inside the power search window."""


@dataclass(frozen=True)
class PhysicalParams:
    alpha: float  # dB/km
    gamma: float  # 1/(W km)
    nf: float  # dB
    snr0: float  # dB

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be finite and > 0, got {v}")

    @classmethod
    def ground_truth(cls) -> "PhysicalParams":
        return cls(alpha=0.2, gamma=1.2, nf=4.5, snr0=14.8)

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicalParams":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinkConfig:
    n_spans: int = 10
    span_length: float = 100.0  # km
    amp_gain: float = 25.0  # dB, fixed-gain EDFA followed by a VOA
    bandwidth: float = 32e9  # Hz
    center_frequency: float = 193.4e12  # Hz
    beta2_abs: float = 21.7  # ps^2/km
    planck: float = PLANCK

    def __post_init__(self):
        if int(self.n_spans) != self.n_spans or self.n_spans < 1:
            raise ValueError(f"n_spans must be a positive integer, got {self.n_spans}")
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be finite and > 0, got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> "LinkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown link fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def check_gain_budget(self, max_alpha: float) -> None:
        """The attenuator can only absorb excess gain."""
        if self.amp_gain < max_alpha * self.span_length:
            raise ValueError(
                f"amp_gain {self.amp_gain} dB < span loss {max_alpha * self.span_length} dB")


@dataclass(frozen=True)
class NoiseCoefficients:
    a: float  # W
    b: float  # 1/W^2


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


def dbm2w(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def w2dbm(p_w):
    return 10.0 * np.log10(p_w) + 30.0


def ase_coefficient(alpha, nf, link: LinkConfig):
    """Total ASE power at the receiver, W.

    Each span is followed by a fixed-gain amplifier and an attenuator that
    removes the gain in excess of the span loss, so every amplifier's noise is
    scaled down by that attenuator before reaching the next span.
    """
    gain = db2lin(link.amp_gain)
    voa = db2lin(link.amp_gain - np.asarray(alpha, dtype=float) * link.span_length)
    h_nu_b = link.planck * link.center_frequency * link.bandwidth
    return link.n_spans * db2lin(nf) * h_nu_b * (gain - 1.0) / voa


def nli_coefficient(alpha, gamma, link: LinkConfig):
    """Incoherent GN-model nonlinear coefficient ``b``, 1/W^2."""
    alpha_lin = np.asarray(alpha, dtype=float) / (10.0 * math.log10(math.e))  # 1/km
    l_eff = -np.expm1(-alpha_lin * link.span_length) / alpha_lin
    l_eff_a = 1.0 / alpha_lin
    beta2 = link.beta2_abs * 1e-24  # s^2/km
    x = math.pi ** 2 / 2.0 * beta2 * l_eff_a * link.bandwidth ** 2
    eta = (8.0 / 27.0) * np.asarray(gamma, dtype=float) ** 2 * l_eff ** 2 * np.arcsinh(x) / (
        math.pi * beta2 * l_eff_a * link.bandwidth ** 2)
    return link.n_spans * eta


def noise_coefficients(p: PhysicalParams, link: LinkConfig) -> NoiseCoefficients:
    return NoiseCoefficients(float(ase_coefficient(p.alpha, p.nf, link)),
                             float(nli_coefficient(p.alpha, p.gamma, link)))


def snr_from_coefficients(a, b, snr0_db, power_dbm):
    """SNR in dB from explicit noise coefficients."""
    p = dbm2w(power_dbm)
    inv = (a + b * p ** 3) / p + 1.0 / db2lin(snr0_db)
    return -10.0 * np.log10(inv)


def snr_db(p: PhysicalParams, link: LinkConfig, power_dbm):
    c = noise_coefficients(p, link)
    return snr_from_coefficients(c.a, c.b, p.snr0, power_dbm)


def simulate(points: np.ndarray, names: Sequence[str], link: LinkConfig, power_dbm: float) -> np.ndarray:
    """Vectorized simulator over rows of a design whose columns are ``names``."""
    points = np.asarray(points, dtype=float)
    col = {n: points[:, i] for i, n in enumerate(names)}
    a = ase_coefficient(col["alpha"], col["nf"], link)
    b = nli_coefficient(col["alpha"], col["gamma"], link)
    return snr_from_coefficients(a, b, col["snr0"], power_dbm)


def analytic_optimal_power(c: NoiseCoefficients) -> float:
    """Stationary point of the link-noise term, W."""
    return (c.a / (2.0 * c.b)) ** (1.0 / 3.0)


def _grid(center: float, half_width: float) -> np.ndarray:
    # Anchored on multiples of the step so results print cleanly at 0.1 dBm.
    k0 = math.floor((center - half_width) / GRID_STEP_DB)
    k1 = math.ceil((center + half_width) / GRID_STEP_DB)
    return np.round(np.arange(k0, k1 + 1) * GRID_STEP_DB, 10)


def optimal_power(p: PhysicalParams, link: LinkConfig) -> float:
    """Grid argmax of SNR at 0.1 dBm precision, dBm."""
    ref = float(w2dbm(analytic_optimal_power(noise_coefficients(p, link))))
    grid = _grid(ref, OPT_WINDOW_DB)
    return float(grid[np.argmax(snr_db(p, link, grid))])


def powers_for_penalty(p: PhysicalParams, link: LinkConfig, penalty_db: float) -> tuple[float, float, float]:
    """Launch powers (linear side, optimum, nonlinear side) in dBm.

    Side powers are the grid points closest to the optimum whose penalty is at
    least ``penalty_db``. The window widens from +-5 to at most +-15 dBm.
    """
    if not (math.isfinite(penalty_db) and penalty_db >= 0):
        raise ValueError(f"penalty must be >= 0 dB, got {penalty_db}")
    p_opt = optimal_power(p, link)
    if penalty_db == 0:
        return p_opt, p_opt, p_opt
    snr_opt = float(snr_db(p, link, p_opt))
    half = OPT_WINDOW_DB
    while True:
        grid = _grid(p_opt, half)
        pen = snr_opt - snr_db(p, link, grid)
        ok = pen >= penalty_db
        below = grid[(grid < p_opt) & ok]
        above = grid[(grid > p_opt) & ok]
        if below.size and above.size:
            return float(below.max()), p_opt, float(above.min())
        if half >= MAX_WINDOW_DB:
            raise SearchWindowError(
                f"penalty {penalty_db} dB not reached within +-{MAX_WINDOW_DB} dBm of {p_opt} dBm")
        half = min(half + OPT_WINDOW_DB, MAX_WINDOW_DB)


@dataclass(frozen=True)
class DatasetPoint:
    power: float  # dBm
    snr: float  # dB
    penalty: float  # dB
    regime: str  # linear | optimal | nonlinear


def generate_dataset(p: PhysicalParams, link: LinkConfig, penalties: Iterable[float]) -> list[DatasetPoint]:
    """Two side points per penalty plus the optimum, sorted by power."""
    penalties = list(penalties)
    if not penalties:
        raise ValueError("at least one penalty is required")
    p_opt = optimal_power(p, link)
    snr_opt = float(snr_db(p, link, p_opt))
    powers = {p_opt: "optimal"}
    for pen in penalties:
        lo, _, hi = powers_for_penalty(p, link, pen)
        powers.setdefault(lo, "linear")
        powers.setdefault(hi, "nonlinear")
    out = []
    for pw in sorted(powers):
        snr = float(snr_db(p, link, pw))
        out.append(DatasetPoint(pw, snr, 0.0 if pw == p_opt else snr_opt - snr, powers[pw]))
    return out


def dataset_to_csv(points: Sequence[DatasetPoint], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["power_dbm", "snr_db", "penalty_db", "regime"])
    for d in points:
        w.writerow([f"{d.power:.1f}", repr(d.snr), repr(d.penalty), d.regime])
    return buf.getvalue()
