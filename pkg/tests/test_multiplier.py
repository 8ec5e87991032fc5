import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplab import PreconditionError, ResolutionError
from gplab.counterexample import bump_zeta
from gplab.multiplier import (
    MultiplierQuery,
    check_forcing,
    dyadic_bound_report,
    dyadic_histogram,
    endpoint_slice_sum,
    enumerate_E,
    forcing_threshold,
    multiplier_sum,
    multiplier_sum_bruteforce,
    original_to_polarized,
    phase_count_direct,
    phase_count_fourier_bound,
    polarized_to_original,
    sample_tau_p,
    summand_original,
    summand_polarized,
    window_original,
    window_polarized,
)
from gplab.torus import DyadicIndex, QuadraticForm, q_bilinear, q_form, shell_index

SQ2 = math.sqrt(2.0)
G2 = QuadraticForm((1.0, SQ2))
G3 = QuadraticForm((1.0, SQ2, math.sqrt(3.0)))
ivec2 = st.tuples(st.integers(-40, 40), st.integers(-40, 40))


def test_query_validation():
    with pytest.raises(PreconditionError):
        MultiplierQuery(0.0, (1, 0, 0), 1.0, G2)
    with pytest.raises(PreconditionError):
        MultiplierQuery(0.0, (1, 0), 0.0, G2)
    assert MultiplierQuery(0.0, (1, 0), 1.0, G2).truncation == 2**10


def test_unreachable_window_is_zero():
    R = 3
    tau = 10 * (2 * R * 2.0 * 2) ** 2 + 10
    assert multiplier_sum(MultiplierQuery(tau, (0, 0), 1.0, G2, R)) == 0.0


def test_r1_matches_exhaustive_original():
    q = MultiplierQuery(0.0, (0, 0), 1.0, QuadraticForm((1, 1)), 1, "original")
    pts = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]
    terms = [summand_original(q.form, 0.0, (0, 0), m, n, 1.0) for m in pts for n in pts]
    assert len(terms) == 81
    assert multiplier_sum(q) == pytest.approx(math.fsum(terms), rel=1e-12)


@pytest.mark.parametrize("rep", ["original", "polarized"])
@pytest.mark.parametrize("tau, p", [(0.3, (2, -1)), (-5.7, (0, 3)), (4.1, (-3, -3))])
def test_multiplier_matches_bruteforce(rep, tau, p):
    q = MultiplierQuery(tau, p, 0.6, G2, 5, rep)
    assert multiplier_sum(q) == pytest.approx(multiplier_sum_bruteforce(q), rel=1e-12, abs=1e-300)


def test_multiplier_matches_bruteforce_3d():
    q = MultiplierQuery(1.25, (1, 0, -1), 1.1, G3, 2, "polarized")
    assert multiplier_sum(q) == pytest.approx(multiplier_sum_bruteforce(q), rel=1e-12)


def test_multiplier_dominates_endpoint_slice():
    kappa, R = 4, 8
    q = MultiplierQuery(-q_form(G2, (kappa, 0)), (kappa, 0), 0.5, G2, R, "original")
    assert multiplier_sum(q) >= endpoint_slice_sum(kappa, G2, R)


@settings(max_examples=200, deadline=None)
@given(ivec2, ivec2, ivec2, st.floats(-0.5, 1.5))
def test_bijection_maps_terms(p, m, n, u):
    m2, n2 = original_to_polarized(p, m, n)
    assert polarized_to_original(p, m2, n2) == (m, n)
    tau = 2 * q_bilinear(G2, n2, m2) - q_form(G2, p) + u
    w1 = window_original(G2, tau, p, m, n)
    w2 = window_polarized(G2, tau, p, m2, n2)
    assert abs(w1 - w2) <= 1e-9 * max(1.0, abs(tau))
    a = summand_original(G2, tau, p, m, n, 0.7)
    b = summand_polarized(G2, tau, p, m2, n2, 0.7)
    assert a == pytest.approx(b, rel=1e-12, abs=0.0)


def _naive_E(tau, p, j, form):
    """Second enumerator: scan a box that covers every shell, no shell-aware pruning."""
    r = 2 ** max(j.as_tuple()) + abs(max(p, key=abs)) + 1
    rng = range(-r, r + 1)
    pts = [(a, b) for a in rng for b in rng]
    out = set()
    for m in pts:
        if m == (0, 0) or shell_index((m[0] - p[0], m[1] - p[1])) != j.j1:
            continue
        for n in pts:
            if n == (0, 0) or shell_index((n[0] - p[0], n[1] - p[1])) != j.j2:
                continue
            if shell_index((p[0] - n[0] - m[0], p[1] - n[1] - m[1])) != j.j3:
                continue
            w = tau + q_form(form, p) - 2 * q_bilinear(form, n, m)
            if -1e-9 <= w <= 1 + 1e-9:
                out.add((m, n))
    return out


@pytest.mark.parametrize(
    "form, tau, p, j",
    [
        (QuadraticForm((1, 1)), 0.0, (0, 0), DyadicIndex(1, 1, 1)),
        (QuadraticForm((1, 1)), 0.0, (0, 0), DyadicIndex(2, 1, 2)),
        (G2, 3.4, (1, -2), DyadicIndex(2, 2, 3)),
    ],
)
def test_enumerate_E_matches_naive(form, tau, p, j):
    assert set(enumerate_E(tau, p, j, form)) == _naive_E(tau, p, j, form)


def test_enumerate_E_empty_for_huge_tau():
    assert enumerate_E(1e9, (0, 0), DyadicIndex(2, 2, 2), G2) == []


def test_histogram_matches_enumerator():
    tau, p = 2.6, (3, -1)
    hist = dyadic_histogram(tau, p, G2, 3)
    for j1 in range(4):
        for j2 in range(4):
            for j3 in range(4):
                assert hist[j1, j2, j3] == len(enumerate_E(tau, p, DyadicIndex(j1, j2, j3), G2))


def test_histogram_swap_symmetry():
    hist = dyadic_histogram(7.3, (5, 2), G2, 5)
    assert np.array_equal(hist, hist.transpose(1, 0, 2))


def test_bound_report_basics():
    recs = dyadic_bound_report(0.5, (0, 0), G2, 3, 0.5)
    assert len(recs) == 64
    zero = [r for r in recs if r.j.as_tuple() == (0, 0, 0)][0]
    assert zero.count <= 81
    assert all(r.ratio == 0 for r in recs if r.count == 0)
    assert all(math.isfinite(r.ratio) for r in recs)


def test_sampled_windows_are_nonempty():
    rng = np.random.Generator(np.random.Philox(7))
    for tau, p in sample_tau_p(rng, G2, 5, 64):
        assert max(abs(c) for c in p) <= 64
        assert dyadic_histogram(tau, p, G2, 5).sum() > 0


def _slice_direct(kappa, M, d):
    m = np.arange(-M, M + 1, dtype=np.float64)
    grids = np.meshgrid(*([m] * (d - 1)), indexing="ij")
    r2 = sum(g * g for g in grids)
    terms = float(kappa) ** (d - 1) / ((1 + kappa**2 + r2) * (1 + r2)) ** ((d - 1) / 2)
    return math.fsum(terms.ravel())


def test_endpoint_slice_2d_direct():
    assert endpoint_slice_sum(16, G2, 2**14) == pytest.approx(_slice_direct(16, 2**14, 2), rel=1e-12)


def test_endpoint_slice_3d_direct():
    assert endpoint_slice_sum(8, G3, 200) == pytest.approx(_slice_direct(8, 200, 3), rel=1e-10)


def test_endpoint_slice_monotone_in_M():
    vals = [endpoint_slice_sum(32, G2, M) for M in (32, 64, 256, 1024)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_endpoint_slice_grows_with_kappa():
    vals = [endpoint_slice_sum(k, G2, k * k) for k in (16, 64, 256)]
    assert vals[0] < vals[1] < vals[2]


def test_forcing_threshold_named():
    form = QuadraticForm((0.5, 1.0))
    assert forcing_threshold(form) == pytest.approx(8.0)
    with pytest.raises(PreconditionError, match="8"):
        check_forcing(8, form)
    check_forcing(9, form)


def test_slice_rejects_small_cutoff():
    with pytest.raises(PreconditionError):
        endpoint_slice_sum(16, G2, 8)


@pytest.fixture(scope="module")
def zeta():
    return bump_zeta(0.05)


def test_fourier_bound_empty_boxes(zeta):
    assert phase_count_fourier_bound(0.0, (100, 0), DyadicIndex(0, 0, 0), G2, zeta) == 0.0


@pytest.mark.parametrize("tau, p, j", [(0.5, (0, 0), DyadicIndex(0, 0, 0)), (1.7, (-4, -4), DyadicIndex(2, 1, 3))])
def test_fourier_bound_dominates_count(zeta, tau, p, j):
    bound = phase_count_fourier_bound(tau, p, j, G2, zeta)
    assert bound >= len(enumerate_E(tau, p, j, G2)) - 1e-4
    assert bound == pytest.approx(phase_count_direct(tau, p, j, G2, zeta), rel=1e-3)


def test_fourier_bound_single_term(zeta):
    # m = n = p puts both in the unit shell and p - n - m = -p in shell 2
    p = (3, 0)
    tau = q_form(G2, p) + 0.5
    j = DyadicIndex(0, 0, 2)
    assert enumerate_E(tau, p, j, G2) == [(p, p)]
    assert phase_count_fourier_bound(tau, p, j, G2, zeta) >= 1.0 - 1e-4


def test_fourier_bound_refuses_undersampling(zeta):
    with pytest.raises(ResolutionError):
        phase_count_fourier_bound(0.5, (0, 0), DyadicIndex(1, 1, 1), G2, zeta, samples=10)
