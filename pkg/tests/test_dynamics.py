import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trimlab.dynamics import (
    BitSource,
    Observable,
    cf_digit_stream,
    cf_digits,
    doubling_map,
    doubling_orbit_from_bits,
    exact_doubling_orbit,
    gauss_map,
    identity_map,
    make_map,
    make_observable,
    orbit_stream,
    sample_point,
    seeded_bits,
    validate_observable,
)
from trimlab.errors import NonTerminatingStreamError, UndefinedPointError


class TestMaps:
    def test_doubling_step(self):
        m = doubling_map()
        assert m.step(0.25) == 0.5
        assert m.step(0.75) == 0.5
        assert m.step(0.0) == 0.0

    def test_gauss_step(self):
        m = gauss_map()
        assert m.step(0.5) == pytest.approx(0.0)
        assert m.step(2 / 3) == pytest.approx(0.5)
        with pytest.raises(UndefinedPointError):
            m.step(0.0)

    def test_expansion_bounds(self):
        assert doubling_map().check_expansion() >= 2.0
        assert gauss_map().check_expansion() > 1.0

    def test_make_map_custom(self):
        m = make_map({"branches": [
            {"lo": 0.0, "hi": 1 / 3, "slope": 3.0},
            {"lo": 1 / 3, "hi": 2 / 3, "slope": 3.0, "intercept": -1.0},
            {"lo": 2 / 3, "hi": 1.0, "slope": 3.0, "intercept": -2.0},
        ]})
        assert m.step(0.5) == pytest.approx(0.5)
        assert m.expansion_bound == 3.0

    def test_invariant_samplers(self):
        rng = np.random.Generator(np.random.PCG64(0))
        xs = [sample_point(gauss_map(), rng) for _ in range(20000)]
        # invariant cdf: P(X <= t) = log2(1 + t)
        emp = np.mean(np.array(xs) <= 0.5)
        assert emp == pytest.approx(math.log2(1.5), abs=0.01)


class TestExactDoublingOrbits:
    def test_orbit_matches_bits(self):
        bits = seeded_bits((1, 2), 300)
        orbit = doubling_orbit_from_bits(bits, 100)
        # first binary digit of T^i x is bit i
        assert np.array_equal((orbit >= 0.5).astype(int), bits[:100])

    def test_orbit_agrees_with_float_iteration_briefly(self):
        # float iteration shifts in zero bits, so it tracks the exact
        # orbit for roughly 53 - 20 steps at 1e-6 resolution
        orbit = exact_doubling_orbit(5, 30)
        x = orbit[0]
        for i in range(30):
            assert orbit[i] == pytest.approx(x, abs=1e-6)
            x = (2 * x) % 1.0

    def test_deterministic(self):
        a = exact_doubling_orbit((3, 4), 1000)
        b = exact_doubling_orbit((3, 4), 1000)
        assert np.array_equal(a, b)

    def test_heavy_tail_realized(self):
        # chi = x^-2 over a uniform orbit has tail P(chi > t) = t^(-1/2)
        orbit = exact_doubling_orbit(11, 10**6)
        chi = orbit ** -2.0
        assert np.all(np.isfinite(chi))
        count = np.count_nonzero(chi > 1e6)
        assert abs(count - 1000) < 5 * math.sqrt(1000)

    def test_orbit_stream_modes(self):
        vals = list(orbit_stream(doubling_map(), 10, seed=9, mode="exactBits"))
        assert len(vals) == 10
        with pytest.raises(ValueError):
            list(orbit_stream(gauss_map(), 5, seed=1, mode="exactBits"))


class TestContinuedFractions:
    def test_known_expansions(self):
        # 3/8 = [0; 2, 1, 2], 1/2 = [0; 2]
        src = BitSource.from_fraction(3, 8)
        assert list(cf_digit_stream(src, 3)) == [2, 1, 2]
        src = BitSource.from_fraction(1, 2)
        assert list(cf_digit_stream(src, 1)) == [2]

    def test_golden_ratio_digits(self):
        # 1/phi = [0; 1, 1, 1, ...]; feed a high-precision prefix
        num = 6180339887498948482
        den = 10**19
        src = BitSource.from_fraction(num, den, pad=0)
        digits = list(cf_digit_stream(src, 20))
        assert digits[:15] == [1] * 15

    def test_rational_termination(self):
        # 13/32 = [0; 2, 2, 6]; asking for more digits than exist fails loudly
        src = BitSource.from_fraction(13, 32)
        assert list(cf_digit_stream(src, 3)) == [2, 2, 6]
        src = BitSource.from_fraction(13, 32)
        with pytest.raises(NonTerminatingStreamError):
            list(cf_digit_stream(src, 4))

    def test_gauss_kuzmin_digit_law(self):
        digits = cf_digits(123, 10**5)
        freq1 = np.mean(digits == 1)
        # P(digit = 1) = log2(4/3) = 0.415
        assert freq1 == pytest.approx(math.log2(4 / 3), abs=0.01)

    def test_deterministic(self):
        assert np.array_equal(cf_digits((7, 1), 5000), cf_digits((7, 1), 5000))

    @given(st.integers(min_value=1, max_value=(1 << 16) - 1))
    @settings(max_examples=60, deadline=None)
    def test_matches_euclid_on_dyadic_rationals(self, p):
        # from_fraction represents dyadic rationals exactly; their Gauss
        # digit sequence equals the Euclid quotient sequence
        q = 1 << 16
        if p % 2 == 0:
            p += 1
        expected = []
        a, b = p, q
        while a:
            expected.append(b // a)
            b, a = a, b % a
        src = BitSource.from_fraction(p, q)
        got = list(cf_digit_stream(src, len(expected)))
        assert got == expected


class TestObservables:
    def test_pareto_tail_realization(self):
        obs = make_observable({"kind": "pareto", "alpha": 0.5})
        assert obs(0.25) == 16.0
        assert obs.tail.alpha == 0.5

    def test_floor_reciprocal(self):
        obs = make_observable({"kind": "floorReciprocal"})
        assert obs(np.array([0.3, 0.7])).tolist() == [3.0, 1.0]

    def test_validator_monotone_analytic(self):
        rep = validate_observable(Observable("pareto", alpha=0.5), [10.0, 100.0])
        assert rep.passed and rep.k1 == 2.0 and rep.k2 == 1.0

    def test_validator_generic_bounded_variation(self):
        obs = Observable("userMonotone", func=lambda x: 1.0 / np.asarray(x))
        rep = validate_observable(obs, [10.0])
        assert rep.passed
        assert rep.k1 <= 2.5 and rep.k2 <= 1.5
