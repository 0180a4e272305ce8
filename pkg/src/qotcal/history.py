"""History matching: implausibility screening of emulator sweeps, plausible
sets on the 3-significant-figure grid, and their intersection."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .space import ParameterSpace, lhd_sample, round_point

VARIANCE_FLOOR = 1e-12  # dB^2
SIG_FIGS = 3
CSV_COLUMNS = ("alpha", "gamma", "nf", "snr0")


class MemoryBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class HmConfig:
    n_sigma: float = 3.0
    n_hm: int = 2_000_000
    sampling_mode: str = "shared"  # or "independent"
    seed: int = 0
    batch_size: int = 20_000
    memory_budget_mb: float = 1024.0

    def __post_init__(self):
        if not self.n_sigma > 0:
            raise ValueError(f"n_sigma must be > 0, got {self.n_sigma}")
        if self.n_hm < 1:
            raise ValueError(f"n_hm must be >= 1, got {self.n_hm}")
        if self.sampling_mode not in ("shared", "independent"):
            raise ValueError(f"sampling_mode must be 'shared' or 'independent', got {self.sampling_mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class PlausibleSet:
    """Rounded parameter tuples (in ``names`` order) and the powers they satisfy."""

    names: tuple[str, ...]
    tuples: frozenset = field(default_factory=frozenset)
    powers: tuple[float, ...] = ()

    def __len__(self):
        return len(self.tuples)

    def __contains__(self, item):
        return tuple(item) in self.tuples

    def __iter__(self):
        return iter(self.sorted())

    def sorted(self) -> list[tuple[float, ...]]:
        return sorted(self.tuples)

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        cols = [c for c in CSV_COLUMNS if c in self.names] + [n for n in self.names if n not in CSV_COLUMNS]
        idx = [self.names.index(c) for c in cols]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for t in self.sorted():
            w.writerow([repr(t[i]) for i in idx])
        return buf.getvalue()


def implausibility(target, mean, variance):
    """Absolute residual in units of predictive standard deviation."""
    return np.abs(np.asarray(target) - np.asarray(mean)) / np.sqrt(np.asarray(variance) + VARIANCE_FLOOR)


def _bytes_per_sample(n_train: int, dim: int) -> int:
    # kernel row, triangular-solve row and a distance row, plus the sample itself
    return 8 * (3 * n_train + 2 * dim)


def draw_samples(space: ParameterSpace, cfg: HmConfig, power_index: int = 0) -> np.ndarray:
    """HM design: one shared draw, or a separate draw per launch power."""
    if cfg.sampling_mode == "shared":
        seq = np.random.SeedSequence([cfg.seed])
    else:
        seq = np.random.SeedSequence([cfg.seed, power_index + 1])
    return lhd_sample(space, cfg.n_hm, seq)


def hm_run(em, target: float, space: ParameterSpace, cfg: HmConfig,
           samples: np.ndarray | None = None, power_index: int = 0,
           power: float | None = None, workers: int = 1) -> PlausibleSet:
    """Screen ``cfg.n_hm`` samples through ``em`` and keep the plausible ones, rounded.

    ``em.predict`` must accept unit-cube rows and return mean/variance arrays.
    Batches are a fixed partition of the sample list, so the result does not
    depend on ``workers``.
    """
    if samples is None:
        samples = draw_samples(space, cfg, power_index)
    samples = np.asarray(samples, dtype=float)
    n_train = getattr(getattr(em, "data", None), "n", 1)
    batch_bytes = cfg.batch_size * _bytes_per_sample(n_train, space.dim)
    budget = cfg.memory_budget_mb * 2 ** 20
    if batch_bytes * max(workers, 1) > budget:
        per_batch = max(1, int(budget // (_bytes_per_sample(n_train, space.dim) * max(workers, 1))))
        needed = math.ceil(len(samples) / per_batch)
        raise MemoryBudgetError(
            f"batch of {cfg.batch_size} samples x {workers} workers needs {batch_bytes * workers / 2**20:.1f} MiB "
            f"> budget {cfg.memory_budget_mb} MiB; use at least {needed} batches (batch_size <= {per_batch})")
    lo, span = space.lower, space.upper - space.lower

    def screen(start: int) -> set:
        x = samples[start:start + cfg.batch_size]
        u = np.clip((x - lo) / span, 0.0, 1.0)
        pred = em.predict(u)
        keep = implausibility(target, pred.mean, pred.variance) <= cfg.n_sigma
        return {round_point(row, SIG_FIGS) for row in x[keep]}

    starts = range(0, len(samples), cfg.batch_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(screen, starts))
    else:
        parts = [screen(s) for s in starts]
    tuples = frozenset().union(*parts)
    return PlausibleSet(space.names, tuples, () if power is None else (float(power),))


def intersect(sets: Sequence[PlausibleSet]) -> PlausibleSet:
    if not sets:
        raise ValueError("need at least one plausible set")
    names = sets[0].names
    if any(s.names != names for s in sets):
        raise ValueError("plausible sets over different parameter orders")
    tuples = frozenset.intersection(*(s.tuples for s in sets))
    powers = tuple(p for s in sets for p in s.powers)
    return PlausibleSet(names, tuples, powers)
