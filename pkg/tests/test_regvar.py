import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trimlab.errors import IllPosedConjugateError, InfiniteQuantileError
from trimlab.regvar import (
    CONSTANT_ONE,
    DeBruijnConjugate,
    SlowlyVarying,
    TailModel,
    asymptotic_inverse,
    de_bruijn_conjugate,
    karamata_truncated_moment,
)

PARETO_HALF = TailModel(alpha=0.5)


class TestTailModel:
    def test_tail_probability_pareto(self):
        assert PARETO_HALF.tail_probability(4.0) == 0.5
        assert PARETO_HALF.tail_probability(0.5) == 1.0
        assert PARETO_HALF.tail_probability(1e8) == 1e-4

    def test_cdf_complements_tail(self):
        for t in [1.0, 2.0, 100.0, 1e6]:
            assert PARETO_HALF.cdf(t) == pytest.approx(
                1.0 - PARETO_HALF.tail_probability(t), abs=0
            )

    def test_generalized_inverse_closed_form(self):
        # 1 - F(x) = x^(-1/2) = 0.01  =>  x = 1e4
        assert PARETO_HALF.generalized_inverse(0.99) == pytest.approx(1e4, abs=1e-6)

    def test_generalized_inverse_edges(self):
        assert PARETO_HALF.generalized_inverse(0.0) == 0.0
        with pytest.raises(InfiniteQuantileError):
            PARETO_HALF.generalized_inverse(1.0)

    def test_truncated_mean_closed_form(self):
        # int_1^u x dF = a/(1-a) (u^(1-a) - 1) = u^(1/2) - 1 at alpha=1/2
        assert PARETO_HALF.truncated_mean(100.0) == pytest.approx(9.0, abs=1e-9)
        assert PARETO_HALF.truncated_mean(1.0) == 0.0
        assert PARETO_HALF.truncated_mean(0.5) == 0.0

    def test_truncated_mean_quadrature_matches_closed_form(self):
        log_tail = TailModel(alpha=0.5, L=SlowlyVarying("constant", 1.0))
        slow = TailModel(alpha=0.5, L=SlowlyVarying("logPower", 0.0))
        for u in [10.0, 1e3, 1e6]:
            assert slow.truncated_mean(u) == pytest.approx(
                log_tail.truncated_mean(u), rel=1e-6
            )

    def test_monotone_tail_rejected(self):
        with pytest.raises(ValueError):
            TailModel(alpha=0.5, L=SlowlyVarying("logPower", 40.0))

    def test_json_round_trip(self):
        model = TailModel(alpha=0.3, L=SlowlyVarying("logPower", 1.0), support_low=500.0)
        again = TailModel.from_json(model.to_json())
        assert again.alpha == model.alpha
        assert again.support_low == model.support_low
        assert again.L.kind == "logPower"

    @given(st.floats(min_value=0.01, max_value=0.99))
    @settings(max_examples=50, deadline=None)
    def test_inverse_is_infimum(self, y):
        x = PARETO_HALF.generalized_inverse(y)
        assert PARETO_HALF.cdf(x) >= y
        if x > PARETO_HALF.support_low:
            # one float below x must not exceed y (up to float roundoff
            # in the cdf evaluation itself)
            assert PARETO_HALF.cdf(np.nextafter(x, -np.inf)) <= y * (1 + 1e-12)


class TestKaramata:
    def test_constant_l_exact(self):
        # exact truncated mean ~ Karamata as u grows
        exact = PARETO_HALF.truncated_mean(1e8)
        approx = karamata_truncated_moment(0.5, CONSTANT_ONE, 1e8)
        assert abs(exact / approx - 1.0) < 1e-3

    def test_log_l_converges(self):
        L = SlowlyVarying("logPower", 1.0)
        tail = TailModel(alpha=0.5, L=L, support_low=10.0)
        ratios = []
        for u in [1e8, 1e10, 1e12]:
            ratios.append(tail.truncated_mean(u) / karamata_truncated_moment(0.5, L, u))
        assert abs(ratios[-1] - 1.0) < abs(ratios[0] - 1.0)


class TestDeBruijn:
    def test_constant_closed_form(self):
        conj = de_bruijn_conjugate(SlowlyVarying("constant", 3.0))
        assert conj(10.0) == pytest.approx(1 / 3)
        assert conj.residual(50.0) < 1e-12

    def test_log_l_defining_limit(self):
        L = SlowlyVarying("logPower", 1.0)
        conj = de_bruijn_conjugate(L)
        # residual |L(x) L#(x L(x)) - 1| shrinks along x
        res = [conj.residual(x) for x in [1e4, 1e8, 1e12]]
        assert all(r < 0.05 for r in res)
        assert res[-1] < 1e-9

    def test_vector_evaluation(self):
        conj = de_bruijn_conjugate(SlowlyVarying("logPower", 1.0))
        ys = np.array([1e6, 1e8])
        out = conj(ys)
        assert out.shape == (2,)

    def test_ill_posed_rejected(self):
        bad = SlowlyVarying("tabulated", grid=((1.0, 1.0), (10.0, 0.01), (100.0, 1.0)))
        conj = DeBruijnConjugate(base=bad, method="numericFixedPoint",
                                 bracket=(1.0, 100.0))
        with pytest.raises(IllPosedConjugateError):
            conj(5.0)


class TestAsymptoticInverse:
    def test_power_law_inverts(self):
        # f(x) = x^2 with L = 1: inverse is sqrt
        g = asymptotic_inverse(2.0, 1.0, CONSTANT_ONE)
        assert g(1e8) == pytest.approx(1e4, rel=1e-12)

    def test_inverts_regularly_varying_function(self):
        gamma, delta = 2.0, 1.0
        L = SlowlyVarying("logPower", 1.0)

        def f(x):
            return x ** (gamma * delta) * float(L(x**delta)) ** gamma

        g = asymptotic_inverse(gamma, delta, L)
        for x in [1e5, 1e7]:
            assert g(f(x)) / x == pytest.approx(1.0, rel=0.02)

    def test_bad_exponents_rejected(self):
        with pytest.raises(ValueError):
            asymptotic_inverse(0.0, 1.0, CONSTANT_ONE)


class TestSlowlyVarying:
    def test_power_stays_in_catalog(self):
        L = SlowlyVarying("logPower", 2.0)
        assert L.power(0.5).param == 1.0
        assert SlowlyVarying("constant", 4.0).power(0.5).param == 2.0

    def test_slow_variation_property(self):
        # |L(cx)/L(x) - 1| shrinks along x for every catalog member
        for L in [SlowlyVarying("logPower", 2.0), SlowlyVarying("logLog")]:
            for c in [2.0, 10.0]:
                devs = [
                    abs(float(L(c * x)) / float(L(x)) - 1.0)
                    for x in [1e4, 1e8, 1e16]
                ]
                assert devs[2] < devs[1] < devs[0]
                assert devs[2] < 0.2
