import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplab import DimensionError, LatticeError, PreconditionError
from gplab.torus import (
    DyadicIndex,
    QuadraticForm,
    enumerate_ball,
    in_window,
    jp_bracket,
    q_bilinear,
    q_form,
    q_multi,
    rescale_freq,
    shell_index,
    shell_member,
    unscale_freq,
)

SQ2 = math.sqrt(2.0)
coord = st.integers(min_value=-(2**20), max_value=2**20)
vec2 = st.tuples(coord, coord)


def test_form_rejects_bad_theta():
    with pytest.raises(PreconditionError):
        QuadraticForm((1.0, 0.0))
    with pytest.raises(PreconditionError):
        QuadraticForm((1.0, -2.0))


@pytest.mark.parametrize(
    "theta, xi, eta, expected",
    [
        ((1, 1), (1, 0), (1, 0), 1.0),
        ((1, 1), (1, 0), (0, 1), 0.0),
        ((1, SQ2), (1, 1), (1, 1), 3.0),
    ],
)
def test_q_bilinear_examples(theta, xi, eta, expected):
    assert q_bilinear(QuadraticForm(theta), xi, eta) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize(
    "theta, xi, expected",
    [((1, 1), (0, 0), 0.0), ((2, 3), (1, 1), 13.0), ((1, SQ2, math.sqrt(3)), (1, 1, 1), 6.0)],
)
def test_q_form_examples(theta, xi, expected):
    assert q_form(QuadraticForm(theta), xi) == pytest.approx(expected, rel=1e-15)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        q_form(QuadraticForm((1, 1)), (1, 2, 3))


@settings(max_examples=200, deadline=None)
@given(vec2, vec2)
def test_q_expansion_and_polarization(xi, eta):
    form = QuadraticForm((1.0, SQ2))
    s = tuple(a + b for a, b in zip(xi, eta))
    d = tuple(a - b for a, b in zip(xi, eta))
    lhs = q_form(form, s)
    rhs = q_form(form, xi) + 2 * q_bilinear(form, xi, eta) + q_form(form, eta)
    scale = max(1.0, q_form(form, xi) + q_form(form, eta))
    assert abs(lhs - rhs) <= 8 * np.finfo(float).eps * scale
    assert q_bilinear(form, xi, eta) == q_bilinear(form, eta, xi)
    two_q = 2 * q_bilinear(form, xi, eta)
    assert abs(two_q - 0.5 * (q_form(form, s) - q_form(form, d))) <= 1e-12 * scale


def test_q_multi_sums_slots():
    form = QuadraticForm((2, 3))
    assert q_multi(form, [(1, 0), (0, 1)]) == pytest.approx(13.0)


@pytest.mark.parametrize("xi, expected", [((0, 0), 1.0), ((3, 4), math.sqrt(26)), ((0, 0, 1), SQ2)])
def test_jp_bracket(xi, expected):
    assert jp_bracket(xi) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize(
    "xi, j, expected",
    [((0, 0), 0, True), ((1, 0), 1, True), ((4, 0), 3, True), ((4, 0), 2, False), ((1, 0), 0, False)],
)
def test_shell_member(xi, j, expected):
    assert shell_member(xi, j) is expected


@settings(max_examples=200, deadline=None)
@given(vec2)
def test_shell_partition(xi):
    j = shell_index(xi)
    assert shell_member(xi, j)
    assert sum(shell_member(xi, k) for k in range(j + 3)) == 1


def test_dyadic_index_ordering():
    j = DyadicIndex(5, 1, 3)
    assert (j.j_min, j.j_med, j.j_max) == (1, 3, 5)
    with pytest.raises(PreconditionError):
        DyadicIndex(-1, 0, 0)


@pytest.mark.parametrize(
    "theta, xi, expected", [((1, 1), (5, -2), (5, -2)), ((2, 3), (4, -9), (2, -3))]
)
def test_rescale_freq(theta, xi, expected):
    form = QuadraticForm(theta)
    assert rescale_freq(form, xi) == expected


def test_rescale_freq_off_lattice():
    with pytest.raises(LatticeError):
        rescale_freq(QuadraticForm((2, 3)), (1, 0))


@settings(max_examples=100, deadline=None)
@given(vec2)
def test_rescale_round_trip_irrational(xi):
    form = QuadraticForm((1.0, SQ2))
    assert rescale_freq(form, unscale_freq(form, xi)) == xi


def test_enumerate_ball_counts():
    assert list(enumerate_ball((0, 0), 0, "euclidean")) == [(0, 0)]
    assert list(enumerate_ball((0, 0), 0, "sup")) == [(0, 0)]
    assert len(list(enumerate_ball((0, 0), 1, "euclidean"))) == 5
    assert len(list(enumerate_ball((0, 0), 1, "sup"))) == 9


def test_enumerate_ball_matches_brute_force():
    pts = set(enumerate_ball((2, -1), 3.5, "euclidean"))
    brute = {(x, y) for x in range(-5, 10) for y in range(-8, 7) if (x - 2) ** 2 + (y + 1) ** 2 <= 3.5**2}
    assert pts == brute


def test_in_window_closed_with_tolerance():
    assert in_window(0.0) and in_window(1.0)
    assert in_window(1.0 + 1e-12)
    assert not in_window(1.0 + 1e-6)
