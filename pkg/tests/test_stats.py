import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sandwich_unet.stats import betainc, format_p, paired_t_test, student_t_cdf, student_t_sf_two_sided


def t_density(x, dof):
    log_c = math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2) - 0.5 * math.log(dof * math.pi)
    return math.exp(log_c - (dof + 1) / 2 * math.log1p(x * x / dof))


def two_sided_by_quadrature(t, dof):
    # the density is symmetric: P(|T| >= t) = 1 - 2 * integral over [0, t]
    body, _ = integrate.quad(t_density, 0.0, abs(t), args=(dof,), epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - 2.0 * body


def test_known_t_example():
    res = paired_t_test([1.0, 2, 3, 4, 5], [0.0] * 5)
    assert res.t == pytest.approx(math.sqrt(18), abs=1e-12)
    assert abs(res.t - 4.2426) < 1e-4
    assert res.dof == 4
    assert abs(res.p_value - 0.0132) < 5e-4
    assert res.p_value == pytest.approx(two_sided_by_quadrature(res.t, 4), abs=1e-12)


def test_identical_inputs():
    res = paired_t_test([0.8, 0.7, 0.9], [0.8, 0.7, 0.9])
    assert res.t == 0.0 and res.p_value == 1.0


def test_degenerate_inputs():
    with pytest.raises(ValueError):
        paired_t_test([1.0], [0.0])
    with pytest.raises(ArithmeticError):
        paired_t_test([2.0, 3.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [0.0, 0.0], alternative="both")


def test_p_value_matches_quadrature_grid():
    ts = [0.05, 0.3, 1.0, 1.96, 2.5, 4.0, 6.0, 8.0, 10.0]
    worst = 0.0
    for dof in range(1, 61):
        for t in ts:
            worst = max(worst, abs(student_t_sf_two_sided(t, dof) - two_sided_by_quadrature(t, dof)))
    assert worst < 1e-6


def test_betainc_edges_and_symmetry():
    assert betainc(2.0, 3.0, 0.0) == 0.0 and betainc(2.0, 3.0, 1.0) == 1.0
    for a, b, x in [(0.5, 0.5, 0.3), (2.0, 5.0, 0.7), (30.0, 0.5, 0.95)]:
        assert betainc(a, b, x) + betainc(b, a, 1 - x) == pytest.approx(1.0, abs=1e-13)
    # I_x(1, 1) = x
    assert betainc(1.0, 1.0, 0.37) == pytest.approx(0.37, abs=1e-15)
    with pytest.raises(ValueError):
        betainc(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        betainc(1.0, 1.0, 1.5)


def test_one_sided_alternatives():
    a, b = [0.9, 0.85, 0.88, 0.91], [0.8, 0.82, 0.86, 0.84]
    two = paired_t_test(a, b).p_value
    greater = paired_t_test(a, b, "greater").p_value
    less = paired_t_test(a, b, "less").p_value
    assert greater == pytest.approx(two / 2, abs=1e-14)
    assert greater + less == pytest.approx(1.0, abs=1e-14)
    assert student_t_cdf(0.0, 5) == 0.5


def test_format_p():
    assert format_p(0.0004) == "< 0.001"
    assert format_p(0.0132) == "0.013"


scores = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=12)


@settings(max_examples=60, deadline=None)
@given(scores, st.data(), st.floats(-2.0, 2.0))
def test_antisymmetry_and_shift_invariance(a, data, c):
    b = data.draw(st.lists(st.floats(0.0, 1.0), min_size=len(a), max_size=len(a)))
    d = np.subtract(a, b)
    if np.ptp(d) < 1e-6:
        return
    ab, ba = paired_t_test(a, b), paired_t_test(b, a)
    assert ab.t == pytest.approx(-ba.t, rel=1e-12, abs=1e-12)
    assert ab.p_value == pytest.approx(ba.p_value, rel=1e-12, abs=1e-15)
    assert 0.0 <= ab.p_value <= 1.0
    assert np.sign(ab.t) == np.sign(ab.mean_diff)
    shifted = paired_t_test(np.add(a, c), np.add(b, c))
    assert shifted.t == pytest.approx(ab.t, rel=1e-6, abs=1e-9)
    assert shifted.p_value == pytest.approx(ab.p_value, rel=1e-6, abs=1e-9)
