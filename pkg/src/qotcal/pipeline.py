"""End-to-end parameter estimation: per-power emulators, history matching,
intersection and best-candidate selection."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .gp import TrainedEmulator, TrainingSet, train, validate
from .history import HmConfig, PlausibleSet, draw_samples, hm_run, intersect
from .link import LinkConfig, PhysicalParams, powers_for_penalty, simulate, snr_db
from .space import ParameterSpace, lhd_sample, to_unit_cube

logger = logging.getLogger(__name__)

DESIGN_FLAGS = {
    "simulator": "closed-form incoherent GN model (no SSFM)",
    "link_constants_assumed": ["bandwidth", "center_frequency", "beta2_abs"],
    "kernel": "squared exponential, single lengthscale, unit-cube inputs, standardized targets",
    "nugget_floor": 1e-8,
    "implausibility": "two-sided |y - mean| / sqrt(var + 1e-12)",
    "rounding": "3 significant figures, half away from zero",
    "lhd": "randomized Latin hypercube (no maximin)",
}


class CalibrationError(RuntimeError):
    pass


class EmptySolutionError(CalibrationError):
    def __init__(self, message: str, stages: Sequence["PowerStage"] = ()):
        super().__init__(message)
        self.stages = tuple(stages)


class ValidationGateError(CalibrationError):
    def __init__(self, power: float, l1: float, gate: float):
        super().__init__(f"emulator at {power:+.1f} dBm has mean L1 validation error {l1:.4g} dB > gate {gate} dB")
        self.power, self.l1, self.gate = power, l1, gate


@dataclass(frozen=True)
class Seeds:
    design: int = 1
    training: int = 2
    hm: int = 3


@dataclass(frozen=True)
class CalibrationConfig:
    space: ParameterSpace = field(default_factory=ParameterSpace.default)
    link: LinkConfig = field(default_factory=LinkConfig)
    ground_truth: PhysicalParams | None = field(default_factory=PhysicalParams.ground_truth)
    # measurement mode: ((power_dbm, snr_db), ...) replaces ground_truth
    observed: tuple[tuple[float, float], ...] | None = None
    penalty_db: float = 2.0
    n_sam: int = 200
    n_val: int = 20
    hm: HmConfig = field(default_factory=HmConfig)
    restarts: int = 5
    seeds: Seeds = field(default_factory=Seeds)
    validation_gate_db: float = 0.05
    extra_powers: tuple[float, ...] = ()
    lengthscale_bounds: tuple[float, float] = (0.01, 100.0)
    nugget_bounds: tuple[float, float] = (1e-8, 1.0)

    def __post_init__(self):
        if not (math.isfinite(self.penalty_db) and self.penalty_db >= 0):
            raise ValueError(f"penalty_db must be >= 0, got {self.penalty_db}")
        if self.n_sam < 2:
            raise ValueError("n_sam must be >= 2")
        if self.n_val < 1:
            raise ValueError("n_val must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.ground_truth is None and not self.observed:
            raise ValueError("need ground_truth (simulation study) or observed targets")
        if self.ground_truth is not None and self.observed is None:
            gt = self.ground_truth.to_dict()
            if not self.space.contains(self.space.vector(gt)):
                raise ValueError(f"ground truth {gt} lies outside the parameter space")
        idx = self.space.names.index("alpha") if "alpha" in self.space.names else None
        if idx is not None:
            self.link.check_gain_budget(self.space.upper[idx])

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "link": self.link.to_dict(),
            "ground_truth": None if self.ground_truth is None else self.ground_truth.to_dict(),
            "observed": None if self.observed is None else [list(o) for o in self.observed],
            "penalty_db": self.penalty_db,
            "n_sam": self.n_sam,
            "n_val": self.n_val,
            "hm": asdict(self.hm),
            "restarts": self.restarts,
            "seeds": asdict(self.seeds),
            "validation_gate_db": self.validation_gate_db,
            "extra_powers": list(self.extra_powers),
            "lengthscale_bounds": list(self.lengthscale_bounds),
            "nugget_bounds": list(self.nugget_bounds),
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PowerStage:
    power: float
    target: float
    emulator: TrainedEmulator
    l1_mean: float
    l2_rms: float
    plausible: PlausibleSet | None = None


@dataclass(frozen=True)
class CalibrationReport:
    config: CalibrationConfig
    stages: tuple[PowerStage, ...]
    solutions: PlausibleSet
    best_l1: tuple[float, ...]
    best_l2: tuple[float, ...]
    candidate_predictions: np.ndarray  # (|X_sol|, n_p), rows in solutions.sorted() order

    @property
    def powers(self) -> tuple[float, ...]:
        return tuple(s.power for s in self.stages)

    @property
    def targets(self) -> tuple[float, ...]:
        return tuple(s.target for s in self.stages)

    def estimate(self, norm: str = "l1") -> dict:
        best = self.best_l1 if norm == "l1" else self.best_l2
        return dict(zip(self.solutions.names, best))

    def manifest(self) -> dict:
        return {
            "package": "qotcal",
            "version": __version__,
            "config_hash": self.config.hash(),
            "seeds": asdict(self.config.seeds),
            "design_flags": DESIGN_FLAGS,
        }

    def to_dict(self) -> dict:
        names = self.solutions.names
        return {
            "manifest": self.manifest(),
            "config": self.config.to_dict(),
            "powers_dbm": list(self.powers),
            "targets_db": list(self.targets),
            "stages": [
                {
                    "power_dbm": s.power,
                    "target_db": s.target,
                    "l1_mean_db": s.l1_mean,
                    "l2_rms_db": s.l2_rms,
                    "lengthscale": s.emulator.hp.lengthscale,
                    "nugget": s.emulator.hp.nugget,
                    "nlml": s.emulator.nlml,
                    "n_plausible": len(s.plausible) if s.plausible is not None else None,
                }
                for s in self.stages
            ],
            "n_solutions": len(self.solutions),
            "best_l1": dict(zip(names, self.best_l1)),
            "best_l2": dict(zip(names, self.best_l2)),
            "candidates": [
                {"params": dict(zip(names, t)), "snr_db": [float(v) for v in row]}
                for t, row in zip(self.solutions.sorted(), self.candidate_predictions)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    def _header(self) -> str:
        return f"config_hash={self.config.hash()} seeds={json.dumps(asdict(self.config.seeds), sort_keys=True)}"

    def estimates_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self._header()}\n")
        w = csv.writer(buf, lineterminator="\n")
        cols = ["alpha", "gamma", "nf", "snr0"]
        w.writerow(["penalty_db", "selection", *cols, "n_solutions"])
        for label, best in (("L1", self.best_l1), ("L2", self.best_l2)):
            d = dict(zip(self.solutions.names, best))
            w.writerow([repr(self.config.penalty_db), label, *[repr(d[c]) for c in cols], len(self.solutions)])
        return buf.getvalue()

    def validation_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self._header()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["power_dbm", "l1_mean_db", "l2_rms_db"])
        for s in self.stages:
            w.writerow([f"{s.power:.1f}", repr(s.l1_mean), repr(s.l2_rms)])
        return buf.getvalue()

    def plausible_counts_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self._header()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["power_dbm", "n_plausible"])
        for s in self.stages:
            w.writerow([f"{s.power:.1f}", len(s.plausible)])
        w.writerow(["intersection", len(self.solutions)])
        return buf.getvalue()


def target_powers(cfg: CalibrationConfig) -> tuple[list[float], list[float]]:
    """Launch powers and the SNR targets observed (or simulated) at them."""
    if cfg.observed:
        powers = [float(p) for p, _ in cfg.observed]
        return powers, [float(s) for _, s in cfg.observed]
    lo, opt, hi = powers_for_penalty(cfg.ground_truth, cfg.link, cfg.penalty_db)
    powers = [lo, opt, hi] + [float(p) for p in cfg.extra_powers]
    return powers, [float(snr_db(cfg.ground_truth, cfg.link, p)) for p in powers]


def train_stage(cfg: CalibrationConfig, power: float, index: int) -> tuple[TrainedEmulator, float, float]:
    """Sample, simulate, train and validate the emulator for one launch power."""
    space = cfg.space
    x = lhd_sample(space, cfg.n_sam, np.random.SeedSequence([cfg.seeds.design, index, 0]))
    y = simulate(x, space.names, cfg.link, power)
    em = train(TrainingSet.from_arrays(to_unit_cube(space, x), y), cfg.restarts,
               np.random.SeedSequence([cfg.seeds.training, index]),
               cfg.lengthscale_bounds, cfg.nugget_bounds)
    xv = lhd_sample(space, cfg.n_val, np.random.SeedSequence([cfg.seeds.design, index, 1]))
    yv = simulate(xv, space.names, cfg.link, power)
    l1, l2 = validate(em, to_unit_cube(space, xv), yv)
    logger.info("power %+.1f dBm: lengthscale=%.4g nugget=%.3g L1=%.3g dB L2=%.3g dB",
                power, em.hp.lengthscale, em.hp.nugget, l1, l2)
    return em, l1, l2


def score_candidates(candidates: PlausibleSet, emulators: Sequence, targets: Sequence[float],
                     space: ParameterSpace) -> tuple[list[tuple], np.ndarray, np.ndarray, np.ndarray]:
    """Emulated SNR for each candidate at each power, plus L1 and squared-L2 errors."""
    rows = candidates.sorted()
    x = np.asarray(rows, dtype=float).reshape(len(rows), space.dim)
    u = np.clip((x - space.lower) / (space.upper - space.lower), 0.0, 1.0)
    pred = np.column_stack([em.predict_mean(u) for em in emulators]) if rows else np.zeros((0, len(emulators)))
    err = pred - np.asarray(targets, dtype=float)
    return rows, pred, np.abs(err).sum(1), (err ** 2).sum(1)


def select_best(candidates: PlausibleSet, emulators: Sequence, targets: Sequence[float],
                space: ParameterSpace) -> tuple[tuple, tuple]:
    """Candidates minimizing the L1 and L2 error norms; ties go to the smallest tuple."""
    if len(candidates) == 0:
        raise ValueError("no candidates to select from")
    rows, _, l1, l2 = score_candidates(candidates, emulators, targets, space)
    # rows are sorted, and argmin returns the first minimum
    return rows[int(np.argmin(l1))], rows[int(np.argmin(l2))]


def build_stages(cfg: CalibrationConfig, workers: int = 1) -> list[PowerStage]:
    powers, targets = target_powers(cfg)

    def one(j):
        em, l1, l2 = train_stage(cfg, powers[j], j)
        return PowerStage(powers[j], targets[j], em, l1, l2)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stages = list(pool.map(one, range(len(powers))))
    else:
        stages = [one(j) for j in range(len(powers))]
    for s in stages:
        if s.l1_mean > cfg.validation_gate_db:
            raise ValidationGateError(s.power, s.l1_mean, cfg.validation_gate_db)
    return stages


def match(cfg: CalibrationConfig, stages: Sequence[PowerStage], workers: int = 1) -> CalibrationReport:
    """History matching and selection on already-trained stages."""
    hm = replace(cfg.hm, seed=cfg.seeds.hm)
    shared = draw_samples(cfg.space, hm) if hm.sampling_mode == "shared" else None
    done = []
    for j, s in enumerate(stages):
        ps = hm_run(s.emulator, s.target, cfg.space, hm, samples=shared, power_index=j,
                    power=s.power, workers=workers)
        logger.info("power %+.1f dBm: %d plausible tuples", s.power, len(ps))
        done.append(replace(s, plausible=ps))
    solutions = intersect([s.plausible for s in done])
    logger.info("intersection: %d tuples", len(solutions))
    if len(solutions) == 0:
        raise EmptySolutionError(
            f"no parameter tuple is plausible at all {len(done)} powers "
            f"(per-power sizes {[len(s.plausible) for s in done]}); "
            "increase n_hm or the SNR penalty", stages=done)
    ems = [s.emulator for s in done]
    targets = [s.target for s in done]
    _, pred, _, _ = score_candidates(solutions, ems, targets, cfg.space)
    best_l1, best_l2 = select_best(solutions, ems, targets, cfg.space)
    return CalibrationReport(cfg, tuple(done), solutions, best_l1, best_l2, pred)


def calibrate(cfg: CalibrationConfig, workers: int = 1) -> CalibrationReport:
    return match(cfg, build_stages(cfg, workers), workers)
