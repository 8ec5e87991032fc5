import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplab import IntegerRangeError, PreconditionError, ResolutionError
from gplab.expsum import (
    ExpSumSpec,
    divisor_count,
    l4_plancherel,
    lift_applicable,
    lp_time_norm,
    max_nonzero_divisor_count,
    partial_sum,
    representation_counts,
    required_samples,
)

TWO_PI = 2 * math.pi


def _naive_sum(b, N, t, scale=1.0):
    return sum(complex(math.cos(scale * t * m * m), math.sin(scale * t * m * m)) for m in range(b, b + N))


@settings(max_examples=50, deadline=None)
@given(st.integers(-50, 50), st.integers(1, 20), st.floats(-10, 10))
def test_partial_sum_matches_naive(b, N, t):
    assert abs(partial_sum(ExpSumSpec(b, N), t) - _naive_sum(b, N, t)) <= 1e-11 * N


def test_partial_sum_trivial_cases():
    assert abs(partial_sum(ExpSumSpec(17, 1), 0.37)) == pytest.approx(1.0, rel=1e-15)
    assert partial_sum(ExpSumSpec(0, 2), 0.0) == pytest.approx(2.0)
    vals = partial_sum(ExpSumSpec(3, 5), np.linspace(0, 1, 7))
    assert vals.shape == (7,)


def test_spec_validation():
    with pytest.raises(PreconditionError):
        ExpSumSpec(0, 0)
    with pytest.raises(PreconditionError):
        ExpSumSpec(0, 3, scale=-1.0)
    with pytest.raises(PreconditionError):
        ExpSumSpec(0, 3, interval=(1.0, 1.0))


def test_lp_constant_modulus():
    assert lp_time_norm(ExpSumSpec(5, 1), 4) == pytest.approx(TWO_PI, rel=1e-12)


def test_l4_two_terms_closed_form():
    # |1 + e^{it}|^4 = 6 + 8 cos t + 2 cos 2t integrates to 12 pi
    assert lp_time_norm(ExpSumSpec(0, 2), 4) == pytest.approx(12 * math.pi, rel=1e-6)
    assert l4_plancherel(0, 2) == pytest.approx(12 * math.pi, rel=1e-15)
    assert l4_plancherel(9, 1) == pytest.approx(TWO_PI, rel=1e-15)


@pytest.mark.parametrize("b, N", [(0, 16), (0, 64), (-7, 33), (3, 40)])
def test_l4_matches_plancherel(b, N):
    got = lp_time_norm(ExpSumSpec(b, N), 4)
    assert got == pytest.approx(l4_plancherel(b, N), rel=1e-6)


def test_lifted_quadrature_matches_oracle():
    spec = ExpSumSpec(10**6, 24)
    assert lift_applicable(spec, 4)
    assert lp_time_norm(spec, 4, method="lift") == pytest.approx(l4_plancherel(10**6, 24), rel=1e-9)


def test_lift_and_direct_agree_for_p6():
    spec = ExpSumSpec(2000, 8)
    assert lift_applicable(spec, 6)
    a = lp_time_norm(spec, 6, method="lift")
    b = lp_time_norm(spec, 6, method="direct")
    assert a == pytest.approx(b, rel=1e-8)


def test_lift_not_applicable_near_resonance():
    assert not lift_applicable(ExpSumSpec(0, 8), 4)
    assert not lift_applicable(ExpSumSpec(10**6, 8), 5)
    with pytest.raises(PreconditionError):
        lp_time_norm(ExpSumSpec(0, 8), 4, method="lift")


def test_undersampling_is_refused():
    spec = ExpSumSpec(0, 32)
    need = required_samples(spec, 4)
    with pytest.raises(ResolutionError):
        lp_time_norm(spec, 4, samples=need - 1)
    assert lp_time_norm(spec, 4, samples=need) > 0


def test_scale_covariance():
    # substituting t -> s t maps the scaled sum on I to the unit-scale sum on s I
    s = 3.0
    a = lp_time_norm(ExpSumSpec(0, 6, scale=s, interval=(0.0, 1.0)), 4)
    b = lp_time_norm(ExpSumSpec(0, 6, scale=1.0, interval=(0.0, s)), 4)
    assert s * a == pytest.approx(b, rel=1e-9)


def test_p_below_one_rejected():
    with pytest.raises(PreconditionError):
        lp_time_norm(ExpSumSpec(0, 4), 0.5)


def _brute_r(b, N):
    out = {}
    for m1 in range(b, b + N):
        for m2 in range(b, b + N):
            l = m1 * m1 - m2 * m2
            out[l] = out.get(l, 0) + 1
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(-40, 40), st.integers(1, 12))
def test_representation_counts_brute(b, N):
    vals, counts = representation_counts(b, N)
    assert dict(zip(vals.tolist(), counts.tolist())) == _brute_r(b, N)


@settings(max_examples=40, deadline=None)
@given(st.integers(-30, 30), st.integers(1, 10), st.integers(-400, 400))
def test_divisor_count_brute(b, N, l):
    assert divisor_count(l, b, N) == _brute_r(b, N).get(l, 0)


def test_divisor_examples():
    assert divisor_count(0, 0, 10) == 10
    assert divisor_count(9, 0, 10) == 2
    assert divisor_count(1, 10 * 16**2 + 1, 16) <= 1


@pytest.mark.parametrize("N", [8, 16])
def test_case_two_uniqueness(N):
    assert max_nonzero_divisor_count(10 * N * N + 1, N) == 1


def test_integer_range_guard():
    with pytest.raises(IntegerRangeError):
        representation_counts(2**31, 4)
