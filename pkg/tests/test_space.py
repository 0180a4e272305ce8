import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qotcal.space import (Parameter, ParameterSpace, from_unit_cube, lhd_sample, round_point,
                          round_sig_figs, to_unit_cube)


@pytest.fixture
def space():
    return ParameterSpace.default()


class TestParameterSpace:
    def test_default_bounds(self, space):
        assert space.names == ("alpha", "nf", "gamma", "snr0")
        np.testing.assert_array_equal(space.lower, [0.19, 4.3, 1.0, 14.5])
        np.testing.assert_array_equal(space.upper, [0.22, 4.8, 1.5, 15.2])

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            Parameter("x", 1.0, 1.0)

    def test_rejects_duplicate_names(self):
        with pytest.raises(ValueError, match="duplicate"):
            ParameterSpace((Parameter("x", 0, 1), Parameter("x", 0, 2)))

    def test_dict_roundtrip(self, space):
        assert ParameterSpace.from_dict(space.to_dict()) == space


class TestLhd:
    @pytest.mark.parametrize("n", [1, 4, 16, 200])
    def test_one_point_per_stratum(self, space, n):
        x = lhd_sample(space, n, seed=7)
        assert x.shape == (n, 4)
        u = (x - space.lower) / (space.upper - space.lower)
        for j in range(space.dim):
            strata = np.floor(u[:, j] * n).astype(int)
            assert sorted(strata) == list(range(n))

    def test_single_point_inside_box(self, space):
        assert space.contains(lhd_sample(space, 1, seed=0)[0])

    def test_unit_interval_quarters(self):
        s = ParameterSpace((Parameter("x", 0.0, 1.0),))
        x = np.sort(lhd_sample(s, 4, seed=3)[:, 0])
        for k, v in enumerate(x):
            assert k / 4 <= v < (k + 1) / 4

    def test_deterministic(self, space):
        np.testing.assert_array_equal(lhd_sample(space, 50, 11), lhd_sample(space, 50, 11))

    def test_seed_matters(self, space):
        assert not np.array_equal(lhd_sample(space, 50, 1), lhd_sample(space, 50, 2))

    def test_unit_labels_are_metadata(self, space):
        relabeled = ParameterSpace(tuple(Parameter(p.name, p.lower, p.upper, "furlongs") for p in space.params))
        np.testing.assert_array_equal(lhd_sample(space, 30, 5), lhd_sample(relabeled, 30, 5))

    def test_zero_samples_rejected(self, space):
        with pytest.raises(ValueError):
            lhd_sample(space, 0, 1)


class TestUnitCube:
    def test_bounds_map_to_corners(self, space):
        np.testing.assert_array_equal(to_unit_cube(space, space.lower), np.zeros(4))
        np.testing.assert_array_equal(to_unit_cube(space, space.upper), np.ones(4))

    def test_ground_truth(self, space):
        u = to_unit_cube(space, [0.2, 4.5, 1.2, 14.8])
        expected = [(0.2 - 0.19) / 0.03, (4.5 - 4.3) / 0.5, (1.2 - 1.0) / 0.5, (14.8 - 14.5) / 0.7]
        np.testing.assert_allclose(u, expected, rtol=1e-12)
        np.testing.assert_allclose(u, [1 / 3, 0.4, 0.4, 3 / 7], rtol=1e-12)

    def test_roundtrip(self, space):
        x = lhd_sample(space, 100, 3)
        np.testing.assert_allclose(from_unit_cube(space, to_unit_cube(space, x)), x, rtol=1e-15, atol=1e-15)

    def test_out_of_bounds(self, space):
        with pytest.raises(ValueError):
            to_unit_cube(space, [0.3, 4.5, 1.2, 14.8])
        with pytest.raises(ValueError):
            from_unit_cube(space, [1.5, 0, 0, 0])


class TestRounding:
    @pytest.mark.parametrize("x, s, expected", [
        (0.200999, 3, 0.201),
        (14.7649, 3, 14.8),
        (0.0, 3, 0.0),
        (0.2005, 3, 0.201),
        (-0.2005, 3, -0.201),
        (14.75, 3, 14.8),
        (4.495, 3, 4.5),
        (123456.0, 2, 120000.0),
    ])
    def test_examples(self, x, s, expected):
        assert round_sig_figs(x, s) == expected

    def test_non_finite(self):
        with pytest.raises(ValueError):
            round_sig_figs(math.nan, 3)
        with pytest.raises(ValueError):
            round_sig_figs(math.inf, 3)

    def test_round_point(self):
        assert round_point([0.20049, 4.4951, 1.19999, 14.84]) == (0.2, 4.5, 1.2, 14.8)

    @settings(max_examples=300)
    @given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).filter(lambda v: v != 0),
           st.integers(min_value=1, max_value=6))
    def test_properties(self, x, s):
        r = round_sig_figs(x, s)
        assert round_sig_figs(r, s) == r
        assert math.copysign(1, r) == math.copysign(1, x) or r == 0
        unit = 10.0 ** (math.floor(math.log10(abs(x))) - s + 1)
        assert abs(r - x) <= 0.5 * unit * (1 + 1e-9)
