import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplab import DimensionError, LatticeError, PreconditionError, ResolutionError
from gplab.density import (
    FourierDensityMatrix,
    HierarchySequence,
    apply_S,
    collision,
    collision_sum,
    collision_terms,
    correspondence_residual,
    duhamel_residual,
    factorized,
    free_evolve,
    general_coeff,
    h_alpha_xi_norm,
    hk_alpha_norm,
    random_collision_density,
    random_sparse_density,
    rescale_density,
    spacetime_norm,
    spacetime_samples_required,
    symmetry_check,
)
from gplab.torus import QuadraticForm, unscale_freq

SQ2 = math.sqrt(2.0)
G2 = QuadraticForm((1.0, SQ2))


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def one(xi, xip, k=1, d=2, cutoff=8, value=1.0, **kw):
    return FourierDensityMatrix.from_dict({(xi, xip): value}, k, d, cutoff, **kw)


# container ---------------------------------------------------------------

def test_duplicates_are_merged_and_sorted():
    keys = np.array([[1, 0, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0]])
    g = FourierDensityMatrix(1, 2, 4, keys, np.array([1.0, 2.0, 3.0]))
    assert g.nnz == 2
    assert g.coeff([(1, 0)], [(0, 0)]) == 4.0
    assert g.keys[0].tolist() == [0, 0, 0, 0]


def test_cutoff_and_shape_checks():
    with pytest.raises(PreconditionError):
        one(((9, 0),), ((0, 0),))
    with pytest.raises(DimensionError):
        FourierDensityMatrix(1, 2, 4, np.zeros((2, 4)), np.zeros(3))


def test_text_round_trip_exact():
    g = random_sparse_density(rng(3), 2, 2, 16, 20)
    back = FourierDensityMatrix.from_text(g.to_text())
    assert np.array_equal(back.keys, g.keys)
    assert np.array_equal(back.values, g.values)


def test_adjoint_and_permutation():
    g = one(((1, 0), (2, 0)), ((0, 1), (0, 2)), k=2, value=1 + 2j)
    a = g.adjoint()
    assert a.coeff([(0, 1), (0, 2)], [(1, 0), (2, 0)]) == 1 - 2j
    p = g.permute_slots([1, 0])
    assert p.coeff([(2, 0), (1, 0)], [(0, 2), (0, 1)]) == 1 + 2j


# S and free flow ---------------------------------------------------------

def test_apply_S_examples():
    g = random_sparse_density(rng(1), 2, 2, 8, 10)
    assert apply_S(g, 0.0).allclose(g)
    s = apply_S(one(((1, 0),), ((0, 0),)), 2.0)
    assert s.coeff([(1, 0)], [(0, 0)]) == pytest.approx(2.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_apply_S_additive(a, b):
    g = random_sparse_density(rng(2), 2, 2, 8, 10)
    assert apply_S(apply_S(g, a), b).allclose(apply_S(g, a + b), rtol=1e-12)


def test_free_evolve_examples():
    g = random_sparse_density(rng(4), 1, 2, 8, 12)
    assert free_evolve(g, 0.0, G2).allclose(g)
    diag = one(((3, -1),), ((3, -1),), value=0.5)
    assert free_evolve(diag, 7.3, G2).allclose(diag)
    e = free_evolve(one(((1, 0),), ((0, 0),)), 1.0, G2)
    assert e.coeff([(1, 0)], [(0, 0)]) == pytest.approx(cmath.exp(-1j), rel=1e-15)


def test_free_evolve_group_law():
    g = random_sparse_density(rng(5), 2, 2, 8, 12)
    a = free_evolve(free_evolve(g, 0.3, G2), 0.9, G2)
    assert a.allclose(free_evolve(g, 1.2, G2), rtol=1e-12)


# collisions --------------------------------------------------------------

def _naive_plus(g):
    """B^+_{1,k+1} from the displayed convolution, via an explicit dict."""
    K = g.k
    out = {}
    for (xs, xps), v in g.to_dict().items():
        first = tuple(a + b - c for a, b, c in zip(xs[0], xs[K - 1], xps[K - 1]))
        key = ((first,) + xs[1 : K - 1], xps[: K - 1])
        out[key] = out.get(key, 0) + v
    return out


def test_collision_plus_matches_naive():
    g = random_sparse_density(rng(6), 3, 2, 6, 60)
    got = collision(g, 1, "plus").to_dict()
    want = _naive_plus(g)
    nonzero = lambda dct: {k for k, v in dct.items() if abs(v) > 1e-12}
    assert nonzero(got) == nonzero(want)
    for key, v in want.items():
        assert got.get(key, 0) == pytest.approx(v, abs=1e-12)


def test_collision_single_mode():
    c = 0.7 - 0.2j
    g = factorized([(0, 0)], [c], 2)
    b = collision(g, 1, "plus")
    assert b.nnz == 1
    assert b.coeff([(0, 0)], [(0, 0)]) == pytest.approx(abs(c) ** 2 * c * np.conj(c))


def test_collision_empty():
    assert collision(FourierDensityMatrix.empty(2, 2, 4), 1, "full").nnz == 0


def test_hermitian_adjoint_swaps_signs():
    for seed in range(5):
        g = random_sparse_density(rng(seed), 2, 2, 8, 25, hermitian=True)
        plus, minus = collision(g, 1, "plus"), collision(g, 1, "minus")
        assert plus.adjoint().allclose(minus, rtol=1e-12, atol=1e-15)


def test_collision_slot_j_by_transposition():
    g = random_sparse_density(rng(8), 3, 2, 6, 30)
    direct = collision(g, 2, "plus")
    via = collision(g.permute_slots([1, 0, 2]), 1, "plus").permute_slots([1, 0])
    assert direct.allclose(via, rtol=1e-12)


def test_collision_sum_and_sign_checks():
    g = random_sparse_density(rng(9), 3, 2, 6, 30)
    total = collision_sum(g)
    parts = collision(g, 1, "full") + collision(g, 2, "full")
    assert total.allclose(parts, rtol=1e-12, atol=1e-14)
    with pytest.raises(PreconditionError):
        collision(g, 3)
    with pytest.raises(PreconditionError):
        collision_terms(g, 1, "both")


# norms and factorized data -----------------------------------------------

def test_hk_norm_examples():
    assert hk_alpha_norm(FourierDensityMatrix.empty(1, 2, 4), 0.7) == 0.0
    assert hk_alpha_norm(one(((0, 0),), ((0, 0),)), 3.0) == pytest.approx(1.0)
    g = FourierDensityMatrix.from_dict({(((0, 0),), ((0, 0),)): 3.0, (((0, 0),), ((1, 0),)): 4.0}, 1, 2, 4)
    assert hk_alpha_norm(g, 0.0) == pytest.approx(5.0)


def test_h_alpha_xi_examples():
    e = HierarchySequence([FourierDensityMatrix.empty(1, 2, 4), FourierDensityMatrix.empty(2, 2, 4)], G2)
    assert h_alpha_xi_norm(e, 1.0, 0.5) == 0.0
    s = HierarchySequence([one(((0, 0),), ((1, 0),))], G2)
    assert h_alpha_xi_norm(s, 0.0, 0.5) == pytest.approx(0.5)
    amps = np.array([0.6, 0.8j])
    freqs = [(1, 0), (0, 2)]
    seq = HierarchySequence([factorized(freqs, amps, k) for k in (1, 2, 3)], G2)
    assert h_alpha_xi_norm(seq, 0.0, 0.3) == pytest.approx(0.3 + 0.09 + 0.027, rel=1e-12)
    with pytest.raises(PreconditionError):
        h_alpha_xi_norm(seq, 0.0, 0.0)


def test_factorized_properties():
    freqs = [(1, 0), (0, -2), (3, 1)]
    amps = np.array([0.3 + 0.1j, -0.5, 0.2j])
    single = factorized([(2, -1)], [0.4j], 1)
    assert single.nnz == 1
    g1 = factorized(freqs, amps, 1)
    for k in (2, 3):
        gk = factorized(freqs, amps, k)
        assert hk_alpha_norm(gk, 0.8) == pytest.approx(hk_alpha_norm(g1, 0.8) ** k, rel=1e-12)
        assert symmetry_check(gk)
        # free flow acts slotwise on the tensor power
        phased = amps * np.exp(-1j * 0.4 * G2.symbol(np.array(freqs)))
        assert free_evolve(gk, 0.4, G2).allclose(factorized(freqs, phased, k), rtol=1e-12)


def test_symmetry_check_examples():
    assert symmetry_check(random_sparse_density(rng(10), 1, 2, 4, 5))
    assert not symmetry_check(one(((1, 0), (0, 0)), ((0, 0), (0, 0)), k=2))


# rescaling ---------------------------------------------------------------

def test_rescale_examples():
    ident = QuadraticForm((1, 1))
    g = random_sparse_density(rng(11), 2, 2, 8, 10)
    assert np.array_equal(rescale_density(g, ident, "to_general").values, g.values)
    form = QuadraticForm((2, 3))
    u = rescale_density(one(((1, 1),), ((0, 0),)), form, "to_general")
    assert u.values[0] == pytest.approx(1 / 36)
    assert general_coeff(u, form, [(2.0, 3.0)], [(0.0, 0.0)]) == pytest.approx(1 / 36)
    assert unscale_freq(form, (1, 1)) == (2.0, 3.0)
    with pytest.raises(LatticeError):
        general_coeff(u, form, [(1.0, 3.0)], [(0.0, 0.0)])
    with pytest.raises(PreconditionError):
        rescale_density(g, form, "sideways")


@pytest.mark.parametrize("theta", [(1, 1), (2, 3), (1, SQ2)])
def test_correspondence_and_round_trip(theta):
    form = QuadraticForm(theta)
    r = rng(12)
    for _ in range(10):
        g = random_sparse_density(r, 2, 2, 16, 30)
        assert correspondence_residual(g, form, float(r.uniform(0, 1))) <= 1e-12
        back = rescale_density(rescale_density(g, form, "to_general"), form, "to_classical")
        assert np.max(np.abs(back.values - g.values)) <= 1e-12 * np.max(np.abs(g.values))


# space-time norm ---------------------------------------------------------

def test_spacetime_trivial_cases():
    assert spacetime_norm(FourierDensityMatrix.empty(2, 2, 4), 1, 0.6, G2, 1.0) == 0.0
    g = one(((1, 0), (0, 1)), ((1, 0), (0, 1)), k=2, value=2.0)
    inst = hk_alpha_norm(apply_S(collision(g, 1, "full"), 0.6), 0.0)
    assert spacetime_norm(g, 1, 0.6, G2, 0.25) == pytest.approx(math.sqrt(0.25) * inst, rel=1e-12)


def test_spacetime_trapezoid_matches_exact():
    for seed in range(3):
        g = random_collision_density(rng(seed), 2, 16, alpha=0.6)
        a = spacetime_norm(g, 1, 0.6, G2, 1.0)
        b = spacetime_norm(g, 1, 0.6, G2, 1.0, method="exact")
        assert a == pytest.approx(b, rel=1e-4)


def test_spacetime_refuses_undersampling():
    g = random_collision_density(rng(1), 2, 16, alpha=0.6)
    with pytest.raises(ResolutionError):
        spacetime_norm(g, 1, 0.6, G2, 1.0, time_samples=3)
    assert spacetime_samples_required(0.0, 1.0) == 16


def test_random_collision_density_is_unit_and_coherent():
    g = random_collision_density(rng(2), 3, 32, n_outputs=4, per_output=8, alpha=1.1)
    assert hk_alpha_norm(g, 1.1) == pytest.approx(1.0)
    assert collision(g, 1, "plus").nnz <= 4


# Duhamel residual --------------------------------------------------------

def _free_trajectory(g1, g2, times):
    return [HierarchySequence([free_evolve(g1, t, G2), free_evolve(g2, t, G2)], G2) for t in times]


def test_duhamel_trivial_cases():
    times = np.linspace(0, 0.5, 6)
    zero = [HierarchySequence([FourierDensityMatrix.empty(1, 2, 4), FourierDensityMatrix.empty(2, 2, 4)], G2)] * 6
    assert duhamel_residual(times, zero, 1.0, G2) == 0.0
    freqs, amps = [(1, 0), (0, 1)], np.array([0.5, 0.5])
    traj = _free_trajectory(factorized(freqs, amps, 1), factorized(freqs, amps, 2), times)
    assert duhamel_residual(times, traj, 0.0, G2) <= 1e-12
    assert duhamel_residual(times, traj, 0.0, G2, variant="verbatim") <= 1e-12


def test_duhamel_rejects_bad_times():
    e = HierarchySequence([FourierDensityMatrix.empty(1, 2, 4), FourierDensityMatrix.empty(2, 2, 4)], G2)
    with pytest.raises(PreconditionError):
        duhamel_residual([0.1, 0.2], [e, e], 1.0, G2)
    with pytest.raises(PreconditionError):
        duhamel_residual([0.0, 0.1], [e], 1.0, G2)
