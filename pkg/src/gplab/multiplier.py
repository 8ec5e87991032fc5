"""The collision multiplier ``I(tau, p)``, dyadic counts and endpoint slice sums.

Both algebraic forms of ``I(tau, p)`` are linear in one summation variable once
the other is fixed:

* original form, fixed ``n``: ``tau + Q(p-n) + Q(n) - 2 Q(p-n, m)`` is affine in ``m``;
* polarized form, fixed ``m``: ``tau + Q(p) - 2 Q(n, m)`` is affine in ``n``.

The inner variable therefore ranges over a slab of width ``1/|L|`` in the
direction of the affine coefficient ``L``.  The kernels pick the coordinate
with the largest ``|L_i|`` as pivot, loop over the remaining coordinates and
solve for the admissible pivot interval, then re-check the window with the
un-linearised expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

from .errors import PreconditionError, ResolutionError
from .expsum import ExpSumSpec, partial_sum
from .torus import WINDOW_TOL, DyadicIndex, QuadraticForm, jp_bracket, q_bilinear, q_form

REPRESENTATIONS = ("original", "polarized")
DEFAULT_TRUNCATION = {2: 2**10, 3: 2**7}
_SLAB_SLACK = 1e-6


@dataclass(frozen=True)
class MultiplierQuery:
    tau: float
    p: tuple
    alpha: float
    form: QuadraticForm
    truncation: int | None = None
    representation: str = "polarized"

    def __post_init__(self):
        p = tuple(int(c) for c in self.p)
        if len(p) != self.form.d:
            raise PreconditionError("p has the wrong dimension")
        object.__setattr__(self, "p", p)
        if not self.alpha > 0:
            raise PreconditionError("alpha must be positive")
        if self.truncation is None:
            object.__setattr__(self, "truncation", DEFAULT_TRUNCATION.get(self.form.d, 2**5))
        if self.truncation < 1:
            raise PreconditionError("truncation must be >= 1")
        if self.representation not in REPRESENTATIONS:
            raise PreconditionError(f"representation must be one of {REPRESENTATIONS}")


@dataclass(frozen=True)
class CountRecord:
    j: DyadicIndex
    count: int
    bound: float
    ratio: float


# window values ------------------------------------------------------------

def window_original(form: QuadraticForm, tau: float, p, m, n) -> float:
    pnm = tuple(a - b - c for a, b, c in zip(p, n, m))
    return tau + q_form(form, pnm) + q_form(form, n) - q_form(form, m)


def window_polarized(form: QuadraticForm, tau: float, p, m, n) -> float:
    return tau + q_form(form, p) - 2.0 * q_bilinear(form, n, m)


def summand_original(form, tau, p, m, n, alpha) -> float:
    """Term of the original representation (0 outside the window)."""
    if not _in01(window_original(form, tau, p, m, n)):
        return 0.0
    pnm = tuple(a - b - c for a, b, c in zip(p, n, m))
    return (jp_bracket(p) / (jp_bracket(pnm) * jp_bracket(n) * jp_bracket(m))) ** (2 * alpha)


def summand_polarized(form, tau, p, m, n, alpha) -> float:
    if not _in01(window_polarized(form, tau, p, m, n)):
        return 0.0
    mp = tuple(a - b for a, b in zip(m, p))
    np_ = tuple(a - b for a, b in zip(n, p))
    pnm = tuple(a - b - c for a, b, c in zip(p, n, m))
    return (jp_bracket(p) / (jp_bracket(mp) * jp_bracket(np_) * jp_bracket(pnm))) ** (2 * alpha)


def original_to_polarized(p, m, n) -> tuple:
    """Bijection ``(m, n) -> (n + m, p - n)`` carrying original terms onto polarized ones."""
    return tuple(a + b for a, b in zip(n, m)), tuple(a - b for a, b in zip(p, n))


def polarized_to_original(p, m2, n2) -> tuple:
    n = tuple(a - b for a, b in zip(p, n2))
    m = tuple(a - b + c for a, b, c in zip(m2, p, n2))
    return m, n


def _in01(v: float) -> bool:
    return -WINDOW_TOL <= v <= 1.0 + WINDOW_TOL


# numba kernels ------------------------------------------------------------

@numba.njit(cache=True)
def _sqn(v):  # pragma: no cover - jit
    s = 0.0
    for x in v:
        s += float(x) * float(x)
    return s


@numba.njit(cache=True)
def _q(th2, v):  # pragma: no cover - jit
    s = 0.0
    for i in range(v.size):
        s += th2[i] * float(v[i]) * float(v[i])
    return s


@numba.njit(cache=True)
def _qb(th2, a, b):  # pragma: no cover - jit
    s = 0.0
    for i in range(a.size):
        s += th2[i] * float(a[i]) * float(b[i])
    return s


@numba.njit(cache=True)
def _slab_line(lcoef, const, lo_box, hi_box, pivot, fixed_dot):  # pragma: no cover - jit
    """Pivot range where ``0 <= const + fixed_dot + L_piv x <= 1`` (with slack)."""
    lp = lcoef[pivot]
    base = const + fixed_dot
    a = (-_SLAB_SLACK - base) / lp
    b = (1.0 + _SLAB_SLACK - base) / lp
    if a > b:
        a, b = b, a
    x0 = max(lo_box, int(math.ceil(a)))
    x1 = min(hi_box, int(math.floor(b)))
    return x0, x1


@numba.njit(cache=True)
def _multiplier_outer(outer, p, th2, tau, alpha, R, mode, tol):  # pragma: no cover - jit
    """Sum over the inner variable for one outer lattice point.

    mode 0: original form, outer = n, inner = m.
    mode 1: polarized form, outer = m, inner = n (n = 0 skipped).
    """
    d = p.size
    lcoef = np.empty(d)
    if mode == 0:
        pn = p - outer
        const = tau + _q(th2, pn) + _q(th2, outer)
        for i in range(d):
            lcoef[i] = -2.0 * th2[i] * pn[i]
    else:
        const = tau + _q(th2, p)
        for i in range(d):
            lcoef[i] = -2.0 * th2[i] * outer[i]
    pivot = 0
    best = -1.0
    for i in range(d):
        if abs(lcoef[i]) > best:
            best = abs(lcoef[i])
            pivot = i
    inner = np.empty(d, dtype=np.int64)
    free = np.empty(max(d - 1, 1), dtype=np.int64)
    nf = 0
    for i in range(d):
        if i != pivot:
            free[nf] = i
            nf += 1
    for i in range(d):
        inner[i] = -R
    wp = _sqn(p)
    total = 0.0
    while True:
        if best == 0.0:
            x0, x1 = -R, R
            if not (-tol <= const <= 1.0 + tol):
                x0, x1 = 1, 0
        else:
            fixed = 0.0
            for ii in range(nf):
                i = free[ii]
                fixed += lcoef[i] * inner[i]
            x0, x1 = _slab_line(lcoef, const, -R, R, pivot, fixed)
        for x in range(x0, x1 + 1):
            inner[pivot] = x
            if mode == 0:
                m = inner
                n = outer
                pnm = p - n - m
                w = tau + _q(th2, pnm) + _q(th2, n) - _q(th2, m)
                if w < -tol or w > 1.0 + tol:
                    continue
                den = (1.0 + _sqn(pnm)) * (1.0 + _sqn(n)) * (1.0 + _sqn(m))
            else:
                n = inner
                m = outer
                zero = True
                for i in range(d):
                    if n[i] != 0:
                        zero = False
                if zero:
                    continue
                w = tau + _q(th2, p) - 2.0 * _qb(th2, n, m)
                if w < -tol or w > 1.0 + tol:
                    continue
                den = (1.0 + _sqn(m - p)) * (1.0 + _sqn(n - p)) * (1.0 + _sqn(p - n - m))
            total += ((1.0 + wp) / den) ** alpha
        # advance the odometer over the free coordinates
        ii = 0
        while ii < nf:
            i = free[ii]
            if inner[i] < R:
                inner[i] += 1
                break
            inner[i] = -R
            ii += 1
        if ii == nf:
            break
    return total


@numba.njit(parallel=True, cache=True)
def _multiplier_all(outers, p, th2, tau, alpha, R, mode, tol):  # pragma: no cover - jit
    out = np.zeros(outers.shape[0])
    for i in numba.prange(outers.shape[0]):
        out[i] = _multiplier_outer(outers[i], p, th2, tau, alpha, R, mode, tol)
    return out


def _box(center, radius: int) -> np.ndarray:
    c = np.asarray(center, dtype=np.int64)
    axes = [np.arange(ci - radius, ci + radius + 1, dtype=np.int64) for ci in c]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(c))


def multiplier_sum(q: MultiplierQuery) -> float:
    """Truncated ``I(tau, p)`` over ``|m|_inf, |n|_inf <= R``."""
    R = int(q.truncation)
    outers = _box((0,) * q.form.d, R)
    mode = 0 if q.representation == "original" else 1
    if mode == 1:
        outers = outers[np.any(outers != 0, axis=1)]
    p = np.asarray(q.p, dtype=np.int64)
    parts = _multiplier_all(outers, p, q.form.theta_sq.copy(), float(q.tau), float(q.alpha), R, mode, WINDOW_TOL)
    return math.fsum(parts)


def multiplier_sum_bruteforce(q: MultiplierQuery) -> float:
    """Exhaustive oracle over the full truncation box (small ``R`` only)."""
    R = int(q.truncation)
    pts = [tuple(int(c) for c in v) for v in _box((0,) * q.form.d, R)]
    zero = (0,) * q.form.d
    terms = []
    for m in pts:
        for n in pts:
            if q.representation == "original":
                terms.append(summand_original(q.form, q.tau, q.p, m, n, q.alpha))
            elif m != zero and n != zero:
                terms.append(summand_polarized(q.form, q.tau, q.p, m, n, q.alpha))
    return math.fsum(terms)


# dyadic sets --------------------------------------------------------------

def _shell(v) -> int:
    s = int(sum(int(c) * int(c) for c in v))
    return 0 if s == 0 else (s.bit_length() + 1) // 2


@numba.njit(cache=True)
def _shell_nb(s):  # pragma: no cover - jit
    if s == 0:
        return 0
    # smallest j with s < 4^j
    j = 0
    t = 1
    while t <= s:
        t *= 4
        j += 1
    return j


@numba.njit(cache=True)
def _dyadic_hist(p, th2, tau, cap, tol):  # pragma: no cover - jit
    """Histogram of ``(shell(m-p), shell(n-p), shell(p-n-m))`` over the window set."""
    d = p.size
    r = (1 << cap) - 1
    hist = np.zeros((cap + 1, cap + 1, cap + 1), dtype=np.int64)
    m = np.empty(d, dtype=np.int64)
    n = np.empty(d, dtype=np.int64)
    for i in range(d):
        m[i] = p[i] - r
    lcoef = np.empty(d)
    const = tau + _q(th2, p)
    while True:
        mzero = True
        for i in range(d):
            if m[i] != 0:
                mzero = False
        sm = 0
        for i in range(d):
            sm += (m[i] - p[i]) * (m[i] - p[i])
        j1 = _shell_nb(sm)
        if not mzero and j1 <= cap:
            best = -1.0
            pivot = 0
            for i in range(d):
                lcoef[i] = -2.0 * th2[i] * m[i]
                if abs(lcoef[i]) > best:
                    best = abs(lcoef[i])
                    pivot = i
            for i in range(d):
                n[i] = p[i] - r
            while True:
                fixed = 0.0
                for i in range(d):
                    if i != pivot:
                        fixed += lcoef[i] * n[i]
                x0, x1 = _slab_line(lcoef, const, p[pivot] - r, p[pivot] + r, pivot, fixed)
                for x in range(x0, x1 + 1):
                    n[pivot] = x
                    nzero = True
                    for i in range(d):
                        if n[i] != 0:
                            nzero = False
                    if nzero:
                        continue
                    w = const - 2.0 * _qb(th2, n, m)
                    if w < -tol or w > 1.0 + tol:
                        continue
                    sn = 0
                    s3 = 0
                    for i in range(d):
                        sn += (n[i] - p[i]) * (n[i] - p[i])
                        e = p[i] - n[i] - m[i]
                        s3 += e * e
                    j2 = _shell_nb(sn)
                    j3 = _shell_nb(s3)
                    if j2 <= cap and j3 <= cap:
                        hist[j1, j2, j3] += 1
                k = 0
                while k < d:
                    if k == pivot:
                        k += 1
                        continue
                    if n[k] < p[k] + r:
                        n[k] += 1
                        break
                    n[k] = p[k] - r
                    k += 1
                if k >= d:
                    break
        k = 0
        while k < d:
            if m[k] < p[k] + r:
                m[k] += 1
                break
            m[k] = p[k] - r
            k += 1
        if k == d:
            break
    return hist


def dyadic_histogram(tau: float, p, form: QuadraticForm, cap: int) -> np.ndarray:
    """``hist[j1, j2, j3] = #E_{tau,p}(j)`` for all exponents ``<= cap``."""
    if cap < 0:
        raise PreconditionError("cap must be nonnegative")
    p = np.asarray(p, dtype=np.int64)
    return _dyadic_hist(p, form.theta_sq.copy(), float(tau), int(cap), WINDOW_TOL)


def enumerate_E(tau: float, p, j: DyadicIndex, form: QuadraticForm, R: int | None = None) -> list:
    """Sorted list of pairs ``(m, n)`` in ``E_{tau,p}(j)``.

    The search covers the boxes ``|m-p|_inf, |n-p|_inf < 2^j``; ``R`` further
    restricts ``|m|_inf, |n|_inf <= R`` when given.
    """
    p = tuple(int(c) for c in p)
    d = len(p)
    if d != form.d:
        raise PreconditionError("p has the wrong dimension")
    zero = (0,) * d
    ms = [tuple(int(c) for c in v) for v in _box(p, max(0, 2**j.j1 - 1))]
    out = []
    for m in ms:
        if m == zero or _shell(np.subtract(m, p)) != j.j1:
            continue
        if R is not None and max(abs(c) for c in m) > R:
            continue
        for n in _box(p, max(0, 2**j.j2 - 1)):
            n = tuple(int(c) for c in n)
            if n == zero or (R is not None and max(abs(c) for c in n) > R):
                continue
            if _shell(np.subtract(n, p)) != j.j2:
                continue
            if _shell([a - b - c for a, b, c in zip(p, n, m)]) != j.j3:
                continue
            if _in01(window_polarized(form, tau, p, m, n)):
                out.append((m, n))
    return sorted(out)


def count_exponent(d: int, epsilon: float) -> float:
    """``(d - 1) + epsilon``: the exponent applied to ``j_min + j_med``."""
    return (d - 1) + epsilon


def dyadic_bound_report(tau: float, p, form: QuadraticForm, j_max_cap: int, epsilon: float) -> list:
    hist = dyadic_histogram(tau, p, form, j_max_cap)
    c = count_exponent(form.d, epsilon)
    out = []
    for j1 in range(j_max_cap + 1):
        for j2 in range(j_max_cap + 1):
            for j3 in range(j_max_cap + 1):
                j = DyadicIndex(j1, j2, j3)
                count = int(hist[j1, j2, j3])
                bound = 2.0 ** (c * (j.j_min + j.j_med))
                out.append(CountRecord(j, count, bound, count / bound))
    return out


def sample_tau_p(rng: np.random.Generator, form: QuadraticForm, n_samples: int, p_max: int,
                 spread: int = 8) -> list:
    """Pairs ``(tau, p)`` with ``|p| <= p_max`` and a realisable window.

    ``|p|`` is log-uniform on ``[1, p_max]`` (every dyadic scale equally
    likely) with a uniform direction.  Then ``tau = 2 Q(n0, m0) - Q(p) + u``
    for random ``m0, n0`` within ``spread`` of ``p`` and ``u ~ U(0, 1)``, so
    ``(m0, n0)`` itself lies in the window.
    """
    out = []
    d = form.d
    while len(out) < n_samples:
        r = p_max ** float(rng.random())
        v = rng.standard_normal(d)
        p = np.rint(r * v / np.linalg.norm(v)).astype(np.int64)
        if float(np.dot(p, p)) > p_max**2:
            continue
        m0 = p + rng.integers(-spread, spread + 1, size=d)
        n0 = p + rng.integers(-spread, spread + 1, size=d)
        if not m0.any() or not n0.any():
            continue
        tau = 2 * q_bilinear(form, n0, m0) - q_form(form, p) + float(rng.random())
        out.append((tau, tuple(int(c) for c in p)))
    return out


# endpoint slices ----------------------------------------------------------

def forcing_threshold(form: QuadraticForm) -> float:
    """``kappa`` must exceed ``2 / theta_1^2`` to force ``m_1 = 0``."""
    return 2.0 / form.theta_sq[0]


def check_forcing(kappa: int, form: QuadraticForm) -> None:
    thr = forcing_threshold(form)
    if not kappa > thr:
        raise PreconditionError(f"kappa={kappa} must exceed the forcing threshold 2/theta_1^2 = {thr:.6g}")


@numba.njit(cache=True)
def _slice_2d(kappa, M, block):  # pragma: no cover - jit
    k2 = float(kappa) * float(kappa)
    nb = (M + block) // block
    part = np.zeros(nb)
    for b in range(nb):
        acc = 0.0
        for x in range(b * block, min(M + 1, (b + 1) * block)):
            s = float(x) * float(x)
            t = 1.0 / math.sqrt((1.0 + k2 + s) * (1.0 + s))
            acc += t if x == 0 else 2.0 * t
        part[b] = acc
    return part


def _row_sum(c2: np.ndarray, M: int) -> np.ndarray:
    """``sum_{|x| <= M} 1 / (c^2 + x^2)`` via the digamma tail formula."""
    c = np.sqrt(c2)
    full = np.pi / c / np.tanh(np.pi * c)
    tail = np.imag(special.psi(M + 1 + 1j * c)) / c
    return full - 2.0 * tail


def _slice_3d(kappa: int, M: int) -> float:
    a = 1.0 + float(kappa) ** 2
    x1 = np.arange(0, M + 1, dtype=np.float64)
    s1 = x1 * x1
    # kappa^2 / ((A + s)(1 + s)) = 1/(1+s) - 1/(A+s) with A = 1 + kappa^2
    rows = _row_sum(1.0 + s1, M) - _row_sum(a + s1, M)
    w = np.where(x1 == 0, 1.0, 2.0)
    return math.fsum(rows * w)


def _slice_brute(kappa: int, M: int, d: int) -> float:
    e = d - 1
    ax = np.arange(-M, M + 1, dtype=np.float64)
    grids = np.meshgrid(*([ax] * e), indexing="ij")
    s = sum(g * g for g in grids)
    k2 = float(kappa) ** 2
    terms = k2 ** (e / 2) / ((1 + k2 + s) * (1 + s)) ** (e / 2)
    return math.fsum(terms.ravel())


def endpoint_slice_sum(kappa: int, form: QuadraticForm, M: int, d: int | None = None,
                       method: str = "auto") -> float:
    """``sum_{m in [-M,M]^{d-1}} kappa^{d-1} / ((1+kappa^2+|m|^2)(1+|m|^2))^{(d-1)/2}``."""
    d = form.d if d is None else d
    if d != form.d:
        raise PreconditionError("d must match the form")
    if kappa < 2:
        raise PreconditionError("kappa must be >= 2")
    if M < kappa:
        raise PreconditionError("transverse cutoff M must be >= kappa")
    check_forcing(kappa, form)
    if method == "brute" or (method == "auto" and d >= 4):
        if (2 * M + 1) ** (d - 1) > 5 * 10**7:
            raise PreconditionError("brute-force slice too large; lower M")
        return _slice_brute(kappa, M, d)
    if d == 2:
        return float(kappa) * math.fsum(_slice_2d(int(kappa), int(M), 1 << 16))
    if d == 3:
        return _slice_3d(int(kappa), int(M))
    raise PreconditionError(f"no slice evaluator for d={d}")


# Fourier-side count bound -------------------------------------------------

def _box_bounds(centers_radii, d: int) -> list:
    """Per-axis integer interval of an intersection of closed sup-norm boxes."""
    out = []
    for i in range(d):
        lo = max(int(c[i]) - r for c, r in centers_radii)
        hi = min(int(c[i]) + r for c, r in centers_radii)
        out.append((lo, hi))
    return out


def fourier_boxes(p, j: DyadicIndex) -> tuple:
    """Axis intervals of the boxes containing ``eta = n - m`` and ``eta' = n + m``."""
    p = np.asarray(p, dtype=np.int64)
    d = p.size
    j1, j2, j3 = j.as_tuple()
    zero = np.zeros(d, np.int64)
    eta = _box_bounds([(zero, 2 ** (max(j1, j2) + 1)), (p, 2 ** (max(j2, j3) + 2)),
                       (-p, 2 ** (max(j1, j3) + 2))], d)
    etap = _box_bounds([(p, 2**j3), (2 * p, 2 ** (max(j1, j2) + 1))], d)
    return eta, etap


def phase_count_fourier_bound(tau: float, p, j: DyadicIndex, form: QuadraticForm, bump,
                              samples: int | None = None) -> float:
    """``int [sum_{eta, eta'} e^{i t (Q(eta') - Q(eta))/2}] e^{-i (tau + Q(p)) t} zeta(t) dt``.

    The box sum factorises into one-dimensional Weyl sums of scale
    ``theta_i^2 / 2``; the time integral runs over the support of ``zeta`` by
    trapezoid with eight samples per period of the fastest phase.
    """
    eta, etap = fourier_boxes(p, j)
    if any(lo > hi for lo, hi in eta + etap):
        return 0.0
    delta = bump.delta
    qp = q_form(form, p)
    # highest angular frequency of the integrand
    w_eta = sum(t2 * max(lo * lo, hi * hi) for t2, (lo, hi) in zip(form.theta_sq, eta)) / 2
    w_etap = sum(t2 * max(lo * lo, hi * hi) for t2, (lo, hi) in zip(form.theta_sq, etap)) / 2
    wmax = w_eta + w_etap + abs(tau + qp)
    need = max(257, int(math.ceil(8 * wmax * 2 * delta / (2 * math.pi))) + 1)
    n = need if samples is None else int(samples)
    if n < need:
        raise ResolutionError(f"{n} samples requested, at least {need} needed")
    t = np.linspace(-delta, delta, n)
    acc = np.ones(n, dtype=complex)
    for t2, (lo, hi) in zip(form.theta_sq, eta):
        acc *= np.conj(partial_sum(ExpSumSpec(lo, hi - lo + 1, t2 / 2, (-1.0, 1.0)), t))
    for t2, (lo, hi) in zip(form.theta_sq, etap):
        acc *= partial_sum(ExpSumSpec(lo, hi - lo + 1, t2 / 2, (-1.0, 1.0)), t)
    f = acc * np.exp(-1j * (tau + qp) * t) * bump(t)
    h = t[1] - t[0]
    val = h * (np.sum(f) - 0.5 * (f[0] + f[-1]))
    return float(val.real)


def phase_count_direct(tau: float, p, j: DyadicIndex, form: QuadraticForm, bump) -> float:
    """Same bound summed on the frequency side: ``sum zeta_hat(tau + Q(p) - (Q(eta') - Q(eta))/2)``."""
    eta, etap = fourier_boxes(p, j)
    if any(lo > hi for lo, hi in eta + etap):
        return 0.0

    def qbox(box):
        axes = [t2 * np.arange(lo, hi + 1, dtype=np.float64) ** 2 for t2, (lo, hi) in zip(form.theta_sq, box)]
        out = axes[0]
        for a in axes[1:]:
            out = np.add.outer(out, a)
        return out.ravel()

    qe = qbox(eta)
    qep = qbox(etap)
    arg = tau + q_form(form, p) - 0.5 * (qep[None, :] - qe[:, None])
    return math.fsum(bump.hat(arg).ravel())
