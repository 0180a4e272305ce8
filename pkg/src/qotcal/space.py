"""Bounded physical-layer parameter space, Latin hypercube sampling and
significant-figure rounding."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc


@dataclass(frozen=True)
class Parameter:
    name: str
    lower: float
    upper: float
    unit: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"{self.name}: bounds must be finite")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower ({self.lower}) must be < upper ({self.upper})")


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered box of named parameters.

    Point arrays handed to / returned from this class are laid out with one
    column per parameter, in ``names`` order.
    """

    params: tuple[Parameter, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        if not self.params:
            raise ValueError("parameter space needs at least one parameter")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names: {names}")

    @classmethod
    def default(cls) -> "ParameterSpace":
        """Bounds used throughout the calibration study."""
        return cls((
            Parameter("alpha", 0.19, 0.22, "dB/km"),
            Parameter("nf", 4.3, 4.8, "dB"),
            Parameter("gamma", 1.0, 1.5, "1/(W km)"),
            Parameter("snr0", 14.5, 15.2, "dB"),
        ))

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSpace":
        """Build from ``{name: {"lower": .., "upper": .., "unit": ..}}`` (insertion order kept)."""
        return cls(tuple(
            Parameter(name, float(v["lower"]), float(v["upper"]), str(v.get("unit", "")))
            for name, v in d.items()
        ))

    def to_dict(self) -> dict:
        return {p.name: {"lower": p.lower, "upper": p.upper, "unit": p.unit} for p in self.params}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.params])

    def index(self, name: str) -> int:
        return self.names.index(name)

    def contains(self, v, atol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - atol) and np.all(v <= self.upper + atol))

    def vector(self, values: dict) -> np.ndarray:
        """Order a name->value mapping into a point of this space."""
        missing = set(self.names) - set(values)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        return np.array([float(values[n]) for n in self.names])

    def as_dict(self, v) -> dict:
        return {n: float(x) for n, x in zip(self.names, v)}


def _check_shape(space: ParameterSpace, v: np.ndarray) -> None:
    if v.shape[-1] != space.dim:
        raise ValueError(f"expected {space.dim} coordinates, got {v.shape[-1]}")


def to_unit_cube(space: ParameterSpace, v) -> np.ndarray:
    """Affine map of a point (or rows of points) onto [0, 1]^m."""
    v = np.asarray(v, dtype=float)
    _check_shape(space, v)
    lo, hi = space.lower, space.upper
    if np.any(~np.isfinite(v)) or np.any(v < lo) or np.any(v > hi):
        raise ValueError(f"point outside parameter bounds: {v}")
    return (v - lo) / (hi - lo)


def from_unit_cube(space: ParameterSpace, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    _check_shape(space, u)
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError(f"point outside the unit cube: {u}")
    lo, hi = space.lower, space.upper
    return lo + u * (hi - lo)


def lhd_unit(dim: int, n: int, seed) -> np.ndarray:
    """Randomized Latin hypercube on [0, 1)^dim, shape (n, dim).

    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    sampler = qmc.LatinHypercube(d=dim, scramble=True, optimization=None,
                                 rng=np.random.default_rng(seed))
    return sampler.random(n)


def lhd_sample(space: ParameterSpace, n: int, seed) -> np.ndarray:
    """``n`` Latin hypercube points in physical units, shape (n, m).

    Each coordinate has exactly one point in each of the ``n`` equal strata of
    its range.
    """
    u = lhd_unit(space.dim, n, seed)
    return space.lower + u * (space.upper - space.lower)


def round_sig_figs(x: float, s: int = 3) -> float:
    """Round ``x`` to ``s`` significant figures, ties away from zero.

    Ties are decided on the shortest decimal representation of ``x``, so
    ``round_sig_figs(0.2005, 3) == 0.201`` even though the binary double is
    slightly below the tie.
    """
    if s < 1:
        raise ValueError(f"significant figures must be >= 1, got {s}")
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot round non-finite value {x}")
    if x == 0.0:
        return 0.0
    d = Decimal(repr(x))
    exponent = d.adjusted() - s + 1
    return float(d.quantize(Decimal(1).scaleb(exponent), rounding=ROUND_HALF_UP))


def round_point(v: Iterable[float], s: int = 3) -> tuple[float, ...]:
    """Canonical rounded tuple used for set membership."""
    return tuple(round_sig_figs(x, s) for x in v)


def round_rows(points: Sequence, s: int = 3) -> set[tuple[float, ...]]:
    return {round_point(row, s) for row in np.asarray(points, dtype=float)}
