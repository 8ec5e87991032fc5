"""Fourier-truncated density matrices and the operators of the hierarchy.

A density matrix of order ``k`` is stored through its Fourier coefficients

    gamma(x; x') = sum c(a_1..a_k; b_1..b_k) exp(i sum a_j.x_j - i sum b_j.x'_j)

with integer frequency indices.  On the general torus the physical frequency of
index ``a`` is ``theta * a``, so ``|theta * a|^2 = Q(a)`` and every phase below is
the same on both lattices.  Norms use normalisation constant 1 (plain weighted
l2 norms of coefficients).

Keys are an ``(n, 2 k d)`` int64 array laid out as ``[a_1 .. a_k, b_1 .. b_k]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, PreconditionError, ResolutionError
from .torus import QuadraticForm, rescale_freq, unscale_freq

FORMAT_HEADER = "# fourier-density-matrix v1"
OVERSAMPLE = 8
LATTICES = ("classical", "general")


def _canonical(keys: np.ndarray, values: np.ndarray) -> tuple:
    """Sort rows lexicographically and merge duplicates by summation."""
    if keys.shape[0] == 0:
        return keys, values
    order = np.lexsort(keys.T[::-1])
    keys = keys[order]
    values = values[order]
    new = np.ones(keys.shape[0], dtype=bool)
    new[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    if new.all():
        return keys, values
    starts = np.flatnonzero(new)
    return keys[starts], np.add.reduceat(values, starts)


@dataclass(frozen=True, eq=False)
class FourierDensityMatrix:
    k: int
    d: int
    cutoff: int
    keys: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    theta: tuple | None = None
    lattice: str = "classical"

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise PreconditionError("order and dimension must be positive")
        if self.cutoff < 0:
            raise PreconditionError("cutoff must be nonnegative")
        if self.lattice not in LATTICES:
            raise PreconditionError(f"lattice must be one of {LATTICES}")
        keys = np.asarray(self.keys, dtype=np.int64).reshape(-1, 2 * self.k * self.d)
        values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if keys.shape[0] != values.shape[0]:
            raise DimensionError("keys and values differ in length")
        if keys.size and np.abs(keys).max() > self.cutoff:
            raise PreconditionError(f"frequency component exceeds cutoff {self.cutoff}")
        keys, values = _canonical(keys, values)
        keys.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "values", values)
        if self.theta is not None:
            object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))

    # construction -------------------------------------------------------
    @classmethod
    def empty(cls, k: int, d: int, cutoff: int, **kw) -> "FourierDensityMatrix":
        return cls(k, d, cutoff, np.zeros((0, 2 * k * d), np.int64), np.zeros(0, complex), **kw)

    @classmethod
    def from_dict(cls, entries: dict, k: int, d: int, cutoff: int, **kw) -> "FourierDensityMatrix":
        """``entries`` maps ``(xi_vec, xi_vec')`` (tuples of d-tuples) to values."""
        rows, vals = [], []
        for (xs, xps), v in entries.items():
            if len(xs) != k or len(xps) != k:
                raise DimensionError(f"expected {k} slots per side")
            row = [int(c) for s in list(xs) + list(xps) for c in s]
            if len(row) != 2 * k * d:
                raise DimensionError(f"expected {d}-dimensional slot frequencies")
            rows.append(row)
            vals.append(v)
        keys = np.array(rows, dtype=np.int64).reshape(-1, 2 * k * d)
        return cls(k, d, cutoff, keys, np.array(vals, dtype=complex), **kw)

    def _like(self, keys, values, k=None, cutoff=None, **kw) -> "FourierDensityMatrix":
        params = dict(theta=self.theta, lattice=self.lattice)
        params.update(kw)
        return FourierDensityMatrix(
            self.k if k is None else k,
            self.d,
            self.cutoff if cutoff is None else cutoff,
            keys,
            values,
            **params,
        )

    # access -------------------------------------------------------------
    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def slots(self) -> np.ndarray:
        """Keys reshaped to ``(n, 2k, d)``; slots ``k..2k-1`` are the primed ones."""
        return self.keys.reshape(-1, 2 * self.k, self.d)

    def _row(self, xi, xip) -> np.ndarray:
        row = np.array([c for s in list(xi) + list(xip) for c in s], dtype=np.int64)
        if row.size != 2 * self.k * self.d:
            raise DimensionError("query has the wrong number of components")
        return row

    def coeff(self, xi, xip) -> complex:
        if self.nnz == 0:
            return 0j
        row = self._row(xi, xip)
        hit = np.flatnonzero(np.all(self.keys == row, axis=1))
        return complex(self.values[hit[0]]) if hit.size else 0j

    def to_dict(self) -> dict:
        out = {}
        for row, v in zip(self.slots(), self.values):
            xs = tuple(tuple(int(c) for c in s) for s in row[: self.k])
            xps = tuple(tuple(int(c) for c in s) for s in row[self.k :])
            out[(xs, xps)] = complex(v)
        return out

    # algebra ------------------------------------------------------------
    def _check_compatible(self, other: "FourierDensityMatrix") -> None:
        if (self.k, self.d) != (other.k, other.d):
            raise DimensionError("order or dimension mismatch")
        if self.lattice != other.lattice:
            raise PreconditionError("cannot combine matrices on different lattices")

    def __add__(self, other: "FourierDensityMatrix") -> "FourierDensityMatrix":
        self._check_compatible(other)
        return self._like(
            np.concatenate([self.keys, other.keys]),
            np.concatenate([self.values, other.values]),
            cutoff=max(self.cutoff, other.cutoff),
        )

    def __sub__(self, other: "FourierDensityMatrix") -> "FourierDensityMatrix":
        return self + other.scale(-1.0)

    def scale(self, c: complex) -> "FourierDensityMatrix":
        return self._like(self.keys, self.values * c)

    def adjoint(self) -> "FourierDensityMatrix":
        """Hermitian adjoint: ``c*(xi'; xi)``."""
        half = self.k * self.d
        keys = np.concatenate([self.keys[:, half:], self.keys[:, :half]], axis=1)
        return self._like(keys, np.conj(self.values))

    def permute_slots(self, perm: Sequence[int]) -> "FourierDensityMatrix":
        """Apply the same slot permutation to both arguments (0-based ``perm``)."""
        perm = list(perm)
        if sorted(perm) != list(range(self.k)):
            raise PreconditionError(f"not a permutation of {self.k} slots")
        s = self.slots()
        order = perm + [self.k + p for p in perm]
        return self._like(s[:, order, :].reshape(self.nnz, -1), self.values)

    def prune(self, tol: float = 0.0) -> "FourierDensityMatrix":
        keep = np.abs(self.values) > tol
        return self._like(self.keys[keep], self.values[keep])

    def allclose(self, other: "FourierDensityMatrix", rtol=1e-12, atol=0.0) -> bool:
        """Coefficientwise comparison; missing entries count as zero."""
        diff = (self - other).values
        scale = max(np.abs(self.values).max(initial=0.0), np.abs(other.values).max(initial=0.0))
        return bool(np.all(np.abs(diff) <= atol + rtol * scale))

    # serialisation ------------------------------------------------------
    def to_text(self) -> str:
        lines = [
            FORMAT_HEADER,
            f"d {self.d}",
            f"k {self.k}",
            f"cutoff {self.cutoff}",
            "theta " + (" ".join(repr(t) for t in self.theta) if self.theta else "none"),
            f"lattice {self.lattice}",
        ]
        half = self.k * self.d
        for row, v in zip(self.keys, self.values):
            a = " ".join(str(int(c)) for c in row[:half])
            b = " ".join(str(int(c)) for c in row[half:])
            lines.append(f"{a} ; {b} ; {float(v.real)!r} ; {float(v.imag)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FourierDensityMatrix":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != FORMAT_HEADER:
            raise PreconditionError("missing density-matrix header line")
        head = {}
        body = 1
        for ln in lines[1:]:
            if ";" in ln:
                break
            key, _, val = ln.partition(" ")
            head[key] = val.strip()
            body += 1
        try:
            d, k, cutoff = int(head["d"]), int(head["k"]), int(head["cutoff"])
        except KeyError as exc:
            raise PreconditionError(f"header field {exc.args[0]!r} missing") from None
        theta = None if head.get("theta", "none") == "none" else tuple(float(x) for x in head["theta"].split())
        rows, vals = [], []
        for lineno, ln in enumerate(lines[body:], start=body + 1):
            parts = [p.strip() for p in ln.split(";")]
            if len(parts) != 4:
                raise PreconditionError(f"line {lineno}: expected 4 ';'-separated fields")
            rows.append([int(c) for c in parts[0].split()] + [int(c) for c in parts[1].split()])
            vals.append(complex(float(parts[2]), float(parts[3])))
        keys = np.array(rows, dtype=np.int64).reshape(-1, 2 * k * d)
        return cls(k, d, cutoff, keys, np.array(vals, dtype=complex), theta=theta,
                   lattice=head.get("lattice", "classical"))


@dataclass
class HierarchySequence:
    """Entries ``gamma^(1) .. gamma^(K_max)`` sharing dimension and form."""

    entries: list
    form: QuadraticForm

    def __post_init__(self):
        for i, g in enumerate(self.entries, start=1):
            if g.k != i:
                raise DimensionError(f"entry {i} has order {g.k}")
            if g.d != self.form.d:
                raise DimensionError("entry dimension differs from the form")

    @property
    def k_max(self) -> int:
        return len(self.entries)


# operators ----------------------------------------------------------------

def _slot_q(form: QuadraticForm, slots: np.ndarray) -> np.ndarray:
    """``Q`` of every slot: ``(n, s, d) -> (n, s)``."""
    return (slots.astype(np.float64) ** 2) @ form.theta_sq


def phase_frequencies(gamma: FourierDensityMatrix, form: QuadraticForm) -> np.ndarray:
    """``Q(xi_vec) - Q(xi_vec')`` for every stored coefficient."""
    if form.d != gamma.d:
        raise DimensionError("form dimension differs from matrix dimension")
    q = _slot_q(form, gamma.slots())
    return q[:, : gamma.k].sum(axis=1) - q[:, gamma.k :].sum(axis=1)


def _key_weights(keys: np.ndarray, d: int, alpha: float) -> np.ndarray:
    if alpha == 0:
        return np.ones(keys.shape[0])
    sq = (keys.reshape(keys.shape[0], -1, d).astype(np.float64) ** 2).sum(axis=2)
    return np.prod(1.0 + sq, axis=1) ** (0.5 * alpha)


def bracket_weights(gamma: FourierDensityMatrix, alpha: float) -> np.ndarray:
    """``prod <xi_j>^alpha prod <xi'_j>^alpha`` for every stored coefficient."""
    return _key_weights(gamma.keys, gamma.d, alpha)


def apply_S(gamma: FourierDensityMatrix, alpha: float) -> FourierDensityMatrix:
    return gamma._like(gamma.keys, gamma.values * bracket_weights(gamma, alpha))


def free_evolve(gamma: FourierDensityMatrix, t: float, form: QuadraticForm) -> FourierDensityMatrix:
    omega = phase_frequencies(gamma, form)
    return gamma._like(gamma.keys, gamma.values * np.exp(-1j * t * omega))


SIGNS = ("plus", "minus", "full")


def collision_terms(gamma: FourierDensityMatrix, j: int = 1, sign: str = "plus") -> tuple:
    """Unaggregated contact terms of ``B^+_{j,k+1}`` or ``B^-_{j,k+1}``.

    Returns ``(out_keys, values, source)`` where ``source`` indexes the input
    coefficient each term comes from.  ``sign='full'`` concatenates the plus
    terms with the negated minus terms.
    """
    K = gamma.k
    if K < 2:
        raise PreconditionError("collision needs an input of order >= 2")
    k = K - 1
    if not 1 <= j <= k:
        raise PreconditionError(f"slot j must lie in 1..{k}")
    if sign == "full":
        kp, vp, sp_ = collision_terms(gamma, j, "plus")
        km, vm, sm = collision_terms(gamma, j, "minus")
        return np.concatenate([kp, km]), np.concatenate([vp, -vm]), np.concatenate([sp_, sm])
    if sign not in ("plus", "minus"):
        raise PreconditionError(f"sign must be one of {SIGNS}")
    s = gamma.slots()
    # conjugate by the transposition 1 <-> j so the contraction acts on slot 0
    tr = list(range(K))
    tr[0], tr[j - 1] = tr[j - 1], tr[0]
    a = s[:, tr, :][:, :K]
    b = s[:, [K + i for i in tr], :]
    a_out = a[:, :k].copy()
    b_out = b[:, :k].copy()
    if sign == "plus":
        a_out[:, 0] += a[:, k] - b[:, k]
    else:
        b_out[:, 0] += b[:, k] - a[:, k]
    back = list(range(k))
    back[0], back[j - 1] = back[j - 1], back[0]
    out = np.concatenate([a_out[:, back], b_out[:, back]], axis=1).reshape(gamma.nnz, 2 * k * gamma.d)
    return out, gamma.values.copy(), np.arange(gamma.nnz)


def collision(gamma: FourierDensityMatrix, j: int = 1, sign: str = "full") -> FourierDensityMatrix:
    """``B^+``, ``B^-`` or ``B = B^+ - B^-`` acting on slot ``j`` (1-based)."""
    keys, vals, _ = collision_terms(gamma, j, sign)
    return gamma._like(keys, vals, k=gamma.k - 1, cutoff=3 * gamma.cutoff)


def collision_sum(gamma: FourierDensityMatrix) -> FourierDensityMatrix:
    """``B^(k+1) = sum_j B_{j,k+1}``."""
    k = gamma.k - 1
    parts = [collision_terms(gamma, j, "full") for j in range(1, k + 1)]
    keys = np.concatenate([p[0] for p in parts])
    vals = np.concatenate([p[1] for p in parts])
    return gamma._like(keys, vals, k=k, cutoff=3 * gamma.cutoff)


def hk_alpha_norm(gamma: FourierDensityMatrix, alpha: float) -> float:
    if gamma.nnz == 0:
        return 0.0
    w = np.abs(gamma.values) * bracket_weights(gamma, alpha)
    return float(math.sqrt(math.fsum(w * w)))


def h_alpha_xi_norm(seq: HierarchySequence, alpha: float, xi: float) -> float:
    if xi <= 0:
        raise PreconditionError("xi must be positive")
    return math.fsum(xi**k * hk_alpha_norm(g, alpha) for k, g in enumerate(seq.entries, start=1))


def factorized(freqs, amps, k: int, cutoff: int | None = None, threshold: float = 0.0,
               max_terms: int = 2 * 10**7, **kw) -> FourierDensityMatrix:
    """``|phi><phi|^{tensor k}`` for ``phi = sum amps_i e^{i freqs_i . x}``.

    Product coefficients with modulus ``<= threshold`` are dropped.  Raises
    ``PreconditionError`` when more than ``max_terms`` products would be formed.
    """
    freqs = np.asarray(freqs, dtype=np.int64)
    amps = np.asarray(amps, dtype=np.complex128)
    if freqs.ndim != 2 or freqs.shape[0] != amps.shape[0]:
        raise DimensionError("freqs must be (n, d) matching amps")
    if k < 1:
        raise PreconditionError("k must be >= 1")
    n, d = freqs.shape
    if cutoff is None:
        cutoff = int(np.abs(freqs).max(initial=0))
    if threshold > 0 and n:
        # no product can exceed max|amp|^(2k-1) times the smallest factor
        big = np.abs(amps).max()
        keep = np.abs(amps) * big ** (2 * k - 1) > threshold
        freqs, amps = freqs[keep], amps[keep]
        n = freqs.shape[0]
    if n == 0:
        return FourierDensityMatrix.empty(k, d, cutoff, **kw)
    if n ** (2 * k) > max_terms:
        raise PreconditionError(f"{n} modes at order {k} exceed max_terms={max_terms}")
    idx = np.indices((n,) * (2 * k)).reshape(2 * k, -1).T
    vals = np.prod(amps[idx[:, :k]], axis=1) * np.prod(np.conj(amps[idx[:, k:]]), axis=1)
    keys = freqs[idx].reshape(idx.shape[0], -1)
    if threshold > 0:
        keep = np.abs(vals) > threshold
        keys, vals = keys[keep], vals[keep]
    return FourierDensityMatrix(k, d, cutoff, keys, vals, **kw)


def rescale_density(gamma: FourierDensityMatrix, form: QuadraticForm, direction: str) -> FourierDensityMatrix:
    """Move a matrix between ``Z^d`` indices and the ``theta Z^d`` lattice.

    Indices are unchanged (the physical frequency of a general-lattice index
    ``a`` is ``theta * a``); the value is multiplied by ``(prod theta)^(-2k)``
    going to the general lattice and by its inverse coming back.
    """
    if form.d != gamma.d:
        raise DimensionError("form dimension differs from matrix dimension")
    factor = float(np.prod(form.theta)) ** (2 * gamma.k)
    if direction == "to_general":
        if gamma.lattice != "classical":
            raise PreconditionError("input is not on the classical lattice")
        return gamma._like(gamma.keys, gamma.values / factor, theta=form.theta, lattice="general")
    if direction == "to_classical":
        if gamma.lattice != "general":
            raise PreconditionError("input is not on the general lattice")
        return gamma._like(gamma.keys, gamma.values * factor, theta=None, lattice="classical")
    raise PreconditionError("direction must be 'to_general' or 'to_classical'")


def physical_frequencies(gamma: FourierDensityMatrix, form: QuadraticForm) -> np.ndarray:
    """Real frequencies ``theta * a`` of a general-lattice matrix, shape ``(n, 2k, d)``."""
    return gamma.slots().astype(np.float64) * np.asarray(form.theta)


def general_coeff(gamma: FourierDensityMatrix, form: QuadraticForm, xi_real, xip_real) -> complex:
    """Coefficient of a general-lattice matrix at real frequencies on ``theta Z^d``."""
    xi = [rescale_freq(form, v) for v in xi_real]
    xip = [rescale_freq(form, v) for v in xip_real]
    return gamma.coeff(xi, xip)


def symmetry_check(gamma: FourierDensityMatrix, rng: np.random.Generator | None = None,
                   n_random: int = 100, rtol: float = 1e-12) -> bool:
    if gamma.k == 1:
        return True
    base = gamma.prune()
    if gamma.k <= 5:
        perms = itertools.permutations(range(gamma.k))
    else:
        rng = rng or np.random.Generator(np.random.Philox(0))
        perms = (rng.permutation(gamma.k) for _ in range(n_random))
    for p in perms:
        if not base.allclose(base.permute_slots(p), rtol=rtol):
            return False
    return True


def unscale_keys(gamma: FourierDensityMatrix, form: QuadraticForm) -> list:
    """Human-readable real frequencies of a general-lattice matrix."""
    return [[unscale_freq(form, s) for s in row] for row in gamma.slots()]


# space-time norm ----------------------------------------------------------

def _group_rows(keys: np.ndarray) -> tuple:
    if keys.shape[0] == 0:
        return np.zeros(0, np.int64), 0
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    return inv, int(inv.max()) + 1


@dataclass
class _TermSet:
    amp: np.ndarray  # S-weighted signed amplitudes
    rel: np.ndarray  # phase relative to the group reference
    group: np.ndarray
    n_groups: int
    spread: float


def _spacetime_terms(gamma0, j, alpha, form, sign) -> _TermSet:
    keys, vals, src = collision_terms(gamma0, j, sign)
    omega = phase_frequencies(gamma0, form)[src]
    group, n_groups = _group_rows(keys)
    w = _key_weights(keys, gamma0.d, alpha)
    ref = np.full(n_groups, np.inf)
    np.minimum.at(ref, group, omega)
    rel = omega - ref[group] if n_groups else omega
    spread = float(rel.max(initial=0.0))
    return _TermSet(vals * w, rel, group, n_groups, spread)


def spacetime_samples_required(spread: float, T: float) -> int:
    return max(16, int(math.ceil(OVERSAMPLE * spread * T / (2 * math.pi))) + 1)


def spacetime_norm(gamma0: FourierDensityMatrix, j: int, alpha: float, form: QuadraticForm,
                   window=1.0, time_samples: int | None = None, sign: str = "full",
                   method: str = "trapezoid") -> float:
    """``|| S^(k,alpha) B_{j,k+1} U(t) gamma0 ||_{L^2([0,T] x ...)}``.

    The trapezoid rule samples the squared norm with at least eight samples per
    period of the largest phase difference inside any output coefficient
    (phases common to a whole output cancel in the modulus).  ``method='exact'``
    integrates the trigonometric polynomial in closed form instead.
    """
    T = float(window[1] - window[0]) if isinstance(window, (tuple, list)) else float(window)
    if T <= 0:
        raise PreconditionError("time window must have positive length")
    if gamma0.nnz == 0:
        return 0.0
    terms = _spacetime_terms(gamma0, j, alpha, form, sign)
    if method == "exact":
        return math.sqrt(_exact_time_integral(terms, T))
    if method != "trapezoid":
        raise PreconditionError("method must be 'trapezoid' or 'exact'")
    # outputs whose terms share a phase contribute a constant
    gmax = np.zeros(terms.n_groups)
    np.maximum.at(gmax, terms.group, terms.rel)
    const_group = gmax == 0.0
    const_term = const_group[terms.group]
    sums = np.bincount(terms.group[const_term], weights=terms.amp[const_term].real, minlength=terms.n_groups) \
        + 1j * np.bincount(terms.group[const_term], weights=terms.amp[const_term].imag, minlength=terms.n_groups)
    const_part = math.fsum(np.abs(sums[const_group]) ** 2) * T
    var = ~const_term
    if not var.any():
        return math.sqrt(const_part)
    need = spacetime_samples_required(terms.spread, T)
    n = need if time_samples is None else int(time_samples)
    if n < need:
        raise ResolutionError(f"{n} time samples requested, at least {need} needed")
    amp, rel = terms.amp[var], terms.rel[var]
    _, grp = np.unique(terms.group[var], return_inverse=True)
    ngrp = int(grp.max()) + 1
    ind = sp.csr_matrix((np.ones(amp.size), (np.arange(amp.size), grp)), shape=(amp.size, ngrp))
    t = np.linspace(0.0, T, n)
    vals = np.empty(n)
    chunk = max(1, 2**22 // amp.size)
    for s in range(0, n, chunk):
        tt = t[s : s + chunk]
        e = np.exp(-1j * np.outer(tt, rel)) * amp
        per = (ind.T @ e.T).T
        vals[s : s + chunk] = np.sum(np.abs(per) ** 2, axis=1)
    h = T / (n - 1)
    integral = h * (math.fsum(vals) - 0.5 * (vals[0] + vals[-1]))
    return math.sqrt(const_part + integral)


def _exact_time_integral(terms: _TermSet, T: float) -> float:
    """``int_0^T sum_g |sum_{i in g} a_i e^{-i w_i t}|^2 dt`` in closed form."""
    total = []
    order = np.argsort(terms.group, kind="stable")
    g = terms.group[order]
    a = terms.amp[order]
    w = terms.rel[order]
    bounds = np.flatnonzero(np.diff(g)) + 1
    for ai, wi in zip(np.split(a, bounds), np.split(w, bounds)):
        dw = wi[:, None] - wi[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            ker = np.where(dw == 0, T, (1 - np.exp(-1j * dw * T)) / (1j * dw))
        total.append(float(np.real(np.conj(ai) @ ker.T @ ai)))
    return math.fsum(total)


# Duhamel residual ---------------------------------------------------------

def _stack(mats: list) -> tuple:
    """Align sparse matrices on the union of their supports."""
    keys = np.concatenate([m.keys for m in mats])
    if keys.shape[0] == 0:
        return keys, np.zeros((len(mats), 0), complex)
    union, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    dense = np.zeros((len(mats), union.shape[0]), dtype=complex)
    pos = 0
    for i, m in enumerate(mats):
        dense[i, inv[pos : pos + m.nnz]] = m.values
        pos += m.nnz
    return union, dense


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    if len(t) > 1:
        h = np.diff(t)[:, None]
        out[1:] = np.cumsum(0.5 * h * (y[1:] + y[:-1]), axis=0)
    return out


def duhamel_residual(times: Sequence[float], trajectory: Sequence[HierarchySequence], b0: float,
                     form: QuadraticForm, alpha: float = 0.0, xi: float = 1.0,
                     variant: str = "interaction", return_series: bool = False):
    """Sup over the sampled times of the ``H^alpha_xi`` norm of the Duhamel defect.

    For ``k < K_max``:

        r_k(t) = gamma_k(t) - U(t) gamma_k(0) + i b0 int_0^t P(t, s) B gamma_{k+1}(s) ds

    with ``P = U(t - s)`` (``variant='interaction'``) or ``P = U(t)``
    (``variant='verbatim'``).  Both are evaluated after the unitary change
    ``r -> U(-t) r``, so the integral becomes a trapezoid sum over the samples.
    """
    times = np.asarray(times, dtype=np.float64)
    if len(times) != len(trajectory) or len(times) == 0:
        raise PreconditionError("need one trajectory entry per time")
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise PreconditionError("times must ascend from 0")
    if variant not in ("interaction", "verbatim"):
        raise PreconditionError("variant must be 'interaction' or 'verbatim'")
    K = trajectory[0].k_max
    if K < 2:
        raise PreconditionError("need K_max >= 2")
    series = np.zeros(len(times))
    for k in range(1, K):
        back = [free_evolve(seq.entries[k - 1], -t, form) for seq, t in zip(trajectory, times)]
        coll = [collision_sum(seq.entries[k]) for seq in trajectory]
        if variant == "interaction":
            coll = [free_evolve(c, -t, form) for c, t in zip(coll, times)]
        mats = back + coll
        union, dense = _stack(mats)
        n = len(times)
        g_back, g_coll = dense[:n], dense[n:]
        # verbatim: U(-t) U(t) int B ds = int B ds, so no pull-back of B
        integral = _cumtrapz(g_coll, times)
        resid = g_back - g_back[0] + 1j * b0 * integral
        w = _key_weights(union, form.d, alpha)
        norms = np.sqrt(np.sum(np.abs(resid * w) ** 2, axis=1))
        series += xi**k * norms
    if return_series:
        return float(series.max()), series
    return float(series.max())


# random test matrices -----------------------------------------------------

def random_sparse_density(rng: np.random.Generator, k: int, d: int, cutoff: int, nnz: int,
                          hermitian: bool = False) -> FourierDensityMatrix:
    """Uniformly placed sparse matrix with complex normal coefficients."""
    keys = rng.integers(-cutoff, cutoff + 1, size=(nnz, 2 * k * d), dtype=np.int64)
    vals = rng.standard_normal(nnz) + 1j * rng.standard_normal(nnz)
    g = FourierDensityMatrix(k, d, cutoff, keys, vals)
    if hermitian:
        g = (g + g.adjoint()).scale(0.5)
    return g


def random_collision_density(rng: np.random.Generator, d: int, cutoff: int, n_outputs: int = 4,
                             per_output: int = 8, alpha: float = 0.0) -> FourierDensityMatrix:
    """Order-2 matrix whose ``B^+_{1,2}`` terms pile up on a few outputs.

    Each output ``(xi; xi')`` is uniform in the half-cutoff box and receives
    ``per_output`` inputs ``(xi - eta + eta', eta; xi', eta')`` with ``eta, eta'``
    uniform in the quarter-cutoff box, so the collision has coherent,
    time-dependent sums.  The result is normalised to unit ``hk_alpha_norm``.
    """
    if cutoff < 4:
        raise PreconditionError("cutoff must be >= 4")
    h, q = cutoff // 2, cutoff // 4
    xi = rng.integers(-h, h + 1, size=(n_outputs, 1, d))
    xip = rng.integers(-h, h + 1, size=(n_outputs, 1, d))
    eta = rng.integers(-q, q + 1, size=(n_outputs, per_output, d))
    etap = rng.integers(-q, q + 1, size=(n_outputs, per_output, d))
    shape = (n_outputs, per_output, d)
    rows = np.concatenate([np.broadcast_to(xi, shape) - eta + etap, eta,
                           np.broadcast_to(xip, shape), etap], axis=-1).reshape(-1, 4 * d)
    vals = rng.standard_normal(rows.shape[0]) + 1j * rng.standard_normal(rows.shape[0])
    g = FourierDensityMatrix(2, d, cutoff, rows, vals)
    return g.scale(1.0 / hk_alpha_norm(g, alpha))


# rescaling correspondence -------------------------------------------------

def _general_plus(gamma_g: FourierDensityMatrix, form: QuadraticForm, t: float) -> dict:
    """``B^+_{1,k+1} U(t)`` on the general lattice, computed on real frequencies.

    Independent of :func:`collision_terms`: each input coefficient is evolved with
    the Euclidean symbol of its real frequencies and contracted with real
    arithmetic; outputs are keyed by their integer index via :func:`rescale_freq`.
    """
    K, d = gamma_g.k, gamma_g.d
    real = physical_frequencies(gamma_g, form)
    out: dict = {}
    for row, v in zip(real, gamma_g.values):
        xi, xip = row[:K], row[K:]
        omega = float(np.sum(xi * xi) - np.sum(xip * xip))
        val = v * np.exp(-1j * t * omega)
        first = xi[0] + xi[K - 1] - xip[K - 1]
        slots = [first] + list(xi[1 : K - 1]) + list(xip[: K - 1])
        key = tuple(itertools.chain.from_iterable(rescale_freq(form, s) for s in slots))
        out[key] = out.get(key, 0.0) + val
    return out


def correspondence_residual(gamma: FourierDensityMatrix, form: QuadraticForm, t: float = 0.0) -> float:
    """Largest relative mismatch between the two sides of the rescaling identity.

    Left: ``B^+ U(t)`` applied on the general lattice to ``to_general(gamma)``.
    Right: ``(prod theta)^(-2K)`` times ``B^+ U_Q(t) gamma`` on ``Z^d``, ``K`` the
    input order.
    """
    if gamma.lattice != "classical":
        raise PreconditionError("input must live on the classical lattice")
    left = _general_plus(rescale_density(gamma, form, "to_general"), form, t)
    factor = float(np.prod(form.theta)) ** (-2 * gamma.k)
    b = collision(free_evolve(gamma, t, form), 1, "plus")
    right = {tuple(int(c) for c in row): v for row, v in zip(b.keys, b.values)}
    keys = set(left) | set(right)
    scale = max((abs(v) for v in right.values()), default=0.0) * factor
    if scale == 0.0:
        return 0.0
    return float(max(abs(left.get(q, 0.0) - factor * right.get(q, 0.0)) for q in keys) / scale)
