import json
from dataclasses import replace

import numpy as np
import pytest

from qotcal.history import HmConfig, PlausibleSet
from qotcal.link import LinkConfig, PhysicalParams, simulate, snr_db
from qotcal.pipeline import (CalibrationConfig, EmptySolutionError, ValidationGateError, build_stages, calibrate,
                             match, score_candidates, select_best, target_powers)
from qotcal.space import ParameterSpace, from_unit_cube

SPACE = ParameterSpace.default()
NAMES = SPACE.names
SMALL = CalibrationConfig(n_sam=40, n_val=5, restarts=2, hm=HmConfig(n_hm=20_000, n_sigma=30))


class SimulatorStub:
    def __init__(self, power):
        self.power = power

    def predict_mean(self, u):
        return simulate(from_unit_cube(SPACE, np.atleast_2d(u)), NAMES, LinkConfig(), self.power)


class TableStub:
    """Returns fixed predictions per candidate row (looked up by position)."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def predict_mean(self, u):
        return self.values[: len(np.atleast_2d(u))]


def pset(*tuples):
    return PlausibleSet(NAMES, frozenset(tuples))


@pytest.fixture(scope="module")
def small_report():
    return calibrate(SMALL)


class TestSelectBest:
    def test_single_candidate(self):
        t = (0.2, 4.5, 1.2, 14.8)
        stubs = [SimulatorStub(p) for p in (-5.3, 1.5, 6.2)]
        assert select_best(pset(t), stubs, [10.0, 11.0, 12.0], SPACE) == (t, t)

    def test_exact_stub_finds_ground_truth(self):
        gt = PhysicalParams.ground_truth()
        powers = (-5.3, 1.5, 6.2)
        targets = [float(snr_db(gt, LinkConfig(), p)) for p in powers]
        cands = pset((0.2, 4.5, 1.2, 14.8), (0.201, 4.4, 1.21, 14.8), (0.199, 4.6, 1.19, 14.8), (0.2, 4.5, 1.2, 14.9))
        best_l1, best_l2 = select_best(cands, [SimulatorStub(p) for p in powers], targets, SPACE)
        assert best_l1 == best_l2 == (0.2, 4.5, 1.2, 14.8)

    def test_norms_disagree(self):
        # sorted order: first -> errors (0.3, 0.3, 0.3), second -> (0, 0, 0.8)
        first, second = (0.2, 4.5, 1.2, 14.8), (0.21, 4.5, 1.2, 14.8)
        stubs = [TableStub([0.3, 0.0]), TableStub([0.3, 0.0]), TableStub([0.3, 0.8])]
        best_l1, best_l2 = select_best(pset(first, second), stubs, [0.0, 0.0, 0.0], SPACE)
        assert best_l1 == second
        assert best_l2 == first

    def test_ties_go_to_smallest_tuple(self):
        a, b = (0.2, 4.5, 1.2, 14.8), (0.2, 4.4, 1.2, 14.8)
        stubs = [TableStub([0.1, 0.1])] * 3
        assert select_best(pset(a, b), stubs, [0.0] * 3, SPACE) == (b, b)

    def test_empty(self):
        with pytest.raises(ValueError):
            select_best(pset(), [SimulatorStub(0.0)], [0.0], SPACE)


class TestConfig:
    def test_ground_truth_outside_space(self):
        with pytest.raises(ValueError, match="outside"):
            CalibrationConfig(ground_truth=PhysicalParams(alpha=0.25, gamma=1.2, nf=4.5, snr0=14.8))

    def test_negative_penalty(self):
        with pytest.raises(ValueError):
            CalibrationConfig(penalty_db=-1)

    def test_needs_targets(self):
        with pytest.raises(ValueError):
            CalibrationConfig(ground_truth=None)

    def test_hash_tracks_content(self):
        assert SMALL.hash() == replace(SMALL).hash()
        assert SMALL.hash() != replace(SMALL, penalty_db=3.0).hash()

    def test_three_powers(self):
        powers, targets = target_powers(CalibrationConfig(penalty_db=2))
        assert powers == pytest.approx([-5.3, 1.5, 6.2])
        assert targets[1] == max(targets)


class TestCalibrate:
    def test_report_invariants(self, small_report):
        r = small_report
        assert len(r.stages) == 3
        assert r.best_l1 in r.solutions and r.best_l2 in r.solutions
        assert len(r.solutions) <= min(len(s.plausible) for s in r.stages)
        assert r.candidate_predictions.shape == (len(r.solutions), 3)

    def test_best_is_minimal(self, small_report):
        r = small_report
        ems = [s.emulator for s in r.stages]
        rows, pred, l1, l2 = score_candidates(r.solutions, ems, r.targets, SPACE)
        err = pred - np.array(r.targets)
        assert r.best_l1 == rows[int(np.argmin(np.abs(err).sum(1)))]
        assert np.abs(err).sum(1).min() == l1[rows.index(r.best_l1)]
        assert (err ** 2).sum(1).min() == l2[rows.index(r.best_l2)]

    def test_deterministic_report(self, small_report):
        assert calibrate(SMALL).to_json() == small_report.to_json()

    def test_report_serialization(self, small_report):
        doc = json.loads(small_report.to_json())
        assert doc["manifest"]["config_hash"] == SMALL.hash()
        assert doc["n_solutions"] == len(small_report.solutions)
        assert set(doc["best_l1"]) == {"alpha", "nf", "gamma", "snr0"}
        est = small_report.estimates_csv().splitlines()
        assert est[0].startswith("# config_hash=")
        assert est[1] == "penalty_db,selection,alpha,gamma,nf,snr0,n_solutions"
        assert len(small_report.validation_csv().splitlines()) == 5

    def test_worker_count_irrelevant(self, small_report):
        assert calibrate(SMALL, workers=3).to_json() == small_report.to_json()

    def test_measurement_mode(self, small_report):
        observed = tuple(zip(small_report.powers, small_report.targets))
        cfg = replace(SMALL, ground_truth=None, observed=observed)
        r = calibrate(cfg)
        assert r.solutions.tuples == small_report.solutions.tuples
        assert r.best_l1 == small_report.best_l1

    def test_empty_solution(self):
        cfg = replace(SMALL, hm=HmConfig(n_hm=2000, n_sigma=1e-3))
        with pytest.raises(EmptySolutionError, match="increase n_hm") as info:
            calibrate(cfg)
        assert len(info.value.stages) == 3

    def test_validation_gate(self):
        with pytest.raises(ValidationGateError, match="dBm"):
            build_stages(replace(SMALL, validation_gate_db=1e-9))

    def test_stages_reusable(self, small_report):
        stages = [replace(s, plausible=None) for s in small_report.stages]
        assert match(SMALL, stages).to_json() == small_report.to_json()
