"""Quadratic Weyl sums, their L^p time integrals, and exact counting oracles.

The time integral ``int_I |sum_{m=b}^{b+N-1} exp(i s t m^2)|^p dt`` is computed
by composite trapezoid quadrature.  Two sampling strategies are available:

``direct``
    trapezoid on the interval itself, with at least eight samples per period
    of the integrand's highest frequency.

``lift``
    for even ``p`` on a whole number of periods and ``|b|`` beyond the
    resonance threshold ``p (N-1)^2 / 4``.  Writing ``m = b + r``, the
    integrand is ``F(s t, 2 b s t)`` for the 2-torus function
    ``F(x, u) = |sum_r exp(i x r^2 + i u r)|^p``; the closed line ``u = 2 b x``
    meets no non-zero Fourier mode of ``F`` once ``|b|`` exceeds the threshold,
    so its integral is the torus average of ``F``.  The torus average is again
    computed by trapezoid, now with ``O(N^2) x O(N)`` samples instead of the
    ``O(b N)`` a direct rule would need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import IntegerRangeError, PreconditionError, ResolutionError

TWO_PI = 2.0 * math.pi
OVERSAMPLE = 8
_INT64_SAFE = 2**62


@dataclass(frozen=True)
class ExpSumSpec:
    b: int
    N: int
    scale: float = 1.0
    interval: tuple = (0.0, TWO_PI)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise PreconditionError("N must be a positive integer")
        if int(self.b) != self.b:
            raise PreconditionError("b must be an integer")
        if not self.scale > 0:
            raise PreconditionError("scale must be positive")
        a, c = self.interval
        if not c > a:
            raise PreconditionError("interval must be nonempty")
        object.__setattr__(self, "b", int(self.b))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "interval", (float(a), float(c)))

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    @property
    def m_range(self) -> np.ndarray:
        return np.arange(self.b, self.b + self.N, dtype=np.int64)

    @property
    def square_spread(self) -> int:
        """``max m^2 - min m^2`` over the summation range."""
        lo, hi = self.b, self.b + self.N - 1
        sq_max = max(lo * lo, hi * hi)
        sq_min = 0 if lo <= 0 <= hi else min(lo * lo, hi * hi)
        return sq_max - sq_min


def partial_sum(spec: ExpSumSpec, t):
    """``sum_{m=b}^{b+N-1} exp(i * scale * t * m^2)`` for scalar or array ``t``."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    r = np.arange(spec.N, dtype=np.float64)
    # shift m = b + r so the large common phase t*b^2 is factored out
    local = r * r + 2.0 * spec.b * r
    out = np.empty(t_arr.shape, dtype=np.complex128)
    flat_t = t_arr.ravel()
    flat_out = out.ravel()
    chunk = max(1, 2**22 // spec.N)
    for s in range(0, flat_t.size, chunk):
        tt = flat_t[s : s + chunk]
        acc = np.exp(1j * spec.scale * np.outer(tt, local)).sum(axis=1)
        flat_out[s : s + chunk] = acc * np.exp(1j * spec.scale * tt * float(spec.b) ** 2)
    if np.ndim(t) == 0:
        return complex(out[0])
    return out


def _periods(spec: ExpSumSpec) -> float:
    return spec.length * spec.scale / TWO_PI


def _is_whole_periods(spec: ExpSumSpec) -> bool:
    n = _periods(spec)
    return n >= 1 - 1e-12 and abs(n - round(n)) <= 1e-12


def lift_applicable(spec: ExpSumSpec, p: float) -> bool:
    if not (float(p).is_integer() and int(p) % 2 == 0):
        return False
    return _is_whole_periods(spec) and abs(spec.b) > p * (spec.N - 1) ** 2 / 4.0


def required_samples(spec: ExpSumSpec, p: float, method: str = "direct") -> int | tuple:
    """Minimum admissible sample count for :func:`lp_time_norm`.

    ``direct``: ``8 * p * scale * spread * |I| / (2 pi)`` (at least 16), where
    ``spread = max m^2 - min m^2`` bounds the integrand's angular frequency by
    ``p/2 * scale * spread``.  ``lift``: a pair ``(n_x, n_u)`` covering the
    trigonometric degrees ``p/2 (N-1)^2`` and ``p/2 (N-1)`` with two-fold margin.
    """
    if method == "direct":
        n = OVERSAMPLE * p * spec.scale * max(spec.square_spread, 1) * spec.length / TWO_PI
        return max(16, int(math.ceil(n)) + 1)
    if method == "lift":
        half = p / 2.0
        n_x = int(2 * math.ceil(half * (spec.N - 1) ** 2) + 2)
        n_u = int(2 * math.ceil(half * (spec.N - 1)) + 2)
        n_u = 1 << max(3, (n_u - 1).bit_length())
        return n_x, n_u
    raise PreconditionError(f"unknown quadrature method {method!r}")


@numba.njit(cache=True)
def _direct_kernel(t0, h, n, local, scale, p, block):  # pragma: no cover - jit
    """Trapezoid weights applied to |S|^p, accumulated per block of samples."""
    nterm = local.size
    nblocks = (n + block - 1) // block
    partial = np.zeros(nblocks)
    z = np.empty(nterm, dtype=np.complex128)
    w = np.empty(nterm, dtype=np.complex128)
    for j in range(nterm):
        w[j] = np.exp(1j * scale * h * local[j])
    for bi in range(nblocks):
        start = bi * block
        stop = min(n, start + block)
        t = t0 + start * h
        # reseed the phasors exactly at every block start to bound drift
        for j in range(nterm):
            z[j] = np.exp(1j * scale * t * local[j])
        acc = 0.0
        for i in range(start, stop):
            sr = 0.0
            si = 0.0
            for j in range(nterm):
                sr += z[j].real
                si += z[j].imag
                z[j] = z[j] * w[j]
            val = (sr * sr + si * si) ** (0.5 * p)
            if i == 0 or i == n - 1:
                val *= 0.5
            acc += val
        partial[bi] = acc
    return partial


def _lp_direct(spec: ExpSumSpec, p: float, samples: int) -> float:
    a, c = spec.interval
    h = (c - a) / (samples - 1)
    r = np.arange(spec.N, dtype=np.float64)
    local = r * r + 2.0 * spec.b * r
    partial = _direct_kernel(a, h, samples, local, spec.scale, float(p), 4096)
    return math.fsum(partial) * h


def _lp_lift(spec: ExpSumSpec, p: float, n_x: int, n_u: int) -> float:
    r = np.arange(spec.N, dtype=np.float64)
    x = TWO_PI * np.arange(n_x) / n_x
    total = []
    chunk = max(1, 2**20 // n_u)
    for s in range(0, n_x, chunk):
        xs = x[s : s + chunk]
        coeff = np.zeros((xs.size, n_u), dtype=np.complex128)
        coeff[:, : spec.N] = np.exp(1j * np.outer(xs, r * r))
        # S(x, u_k) = sum_r coeff_r exp(i u_k r), u_k = 2 pi k / n_u
        vals = np.fft.ifft(coeff, axis=1) * n_u
        total.append(np.sum(np.abs(vals) ** p, axis=1))
    mean = math.fsum(np.concatenate(total)) / (n_x * n_u)
    return spec.length * mean


def lp_time_norm(spec: ExpSumSpec, p: float, samples=None, method: str = "auto") -> float:
    """``int_I |partial_sum(t)|^p dt`` by trapezoid quadrature.

    ``samples`` is an int for the direct rule or an ``(n_x, n_u)`` pair for the
    lifted rule; ``None`` selects the minimum admissible resolution.
    """
    if p < 1:
        raise PreconditionError("p must be >= 1")
    if method == "auto":
        method = "lift" if lift_applicable(spec, p) else "direct"
    need = required_samples(spec, p, method)
    if method == "direct":
        n = need if samples is None else int(samples)
        if n < need:
            raise ResolutionError(
                f"{n} samples requested, at least {need} needed for N={spec.N}, b={spec.b}, p={p}"
            )
        return _lp_direct(spec, p, n)
    if not lift_applicable(spec, p):
        raise PreconditionError(
            "lifted quadrature needs even p, whole periods and |b| > p (N-1)^2 / 4"
        )
    n_x, n_u = need if samples is None else samples
    if n_x < need[0] or n_u < need[1]:
        raise ResolutionError(f"lifted grid {n_x}x{n_u} below required {need[0]}x{need[1]}")
    return _lp_lift(spec, p, n_x, n_u)


def _check_int_range(b: int, N: int) -> None:
    big = max(abs(b), abs(b + N)) + 1
    if 2 * big * big >= _INT64_SAFE:
        raise IntegerRangeError(f"squares of |m| ~ {big} overflow 64-bit arithmetic")


def representation_counts(b: int, N: int) -> tuple:
    """Values ``l = m1^2 - m2^2`` over ``[b, b+N)^2`` and their multiplicities."""
    _check_int_range(b, N)
    m = np.arange(b, b + N, dtype=np.int64)
    sq = m * m
    diffs = (sq[:, None] - sq[None, :]).ravel()
    return np.unique(diffs, return_counts=True)


def l4_plancherel(b: int, N: int) -> float:
    """``2 pi * sum_l r(l)^2`` with ``r(l) = #{m1^2 - m2^2 = l}`` counted exactly."""
    if N < 1:
        raise PreconditionError("N must be >= 1")
    _, counts = representation_counts(int(b), int(N))
    total = sum(int(c) * int(c) for c in counts)
    return TWO_PI * total


def divisor_count(l: int, b: int, N: int) -> int:
    """``#{(m1, m2) in [b, b+N)^2 : m1^2 - m2^2 = l}`` via the substituted box.

    With ``k1 = m1 - m2`` and ``k2 = m1 + m2 - 2b`` every solution satisfies
    ``k1 (k2 + 2b) = l`` with ``(k1, k2)`` in ``[-N, N) x [0, 2N)``; candidates
    from the box are mapped back and kept when they give a valid pair.
    """
    if N < 1:
        raise PreconditionError("N must be >= 1")
    l, b, N = int(l), int(b), int(N)
    _check_int_range(b, 2 * N)
    k1 = np.arange(-N, N, dtype=np.int64)[:, None]
    k2 = np.arange(0, 2 * N, dtype=np.int64)[None, :]
    hit = k1 * (k2 + 2 * b) == l
    hit &= ((k1 + k2) % 2) == 0
    m1 = (k1 + k2) // 2 + b
    m2 = (k2 - k1) // 2 + b
    hit &= (m1 >= b) & (m1 < b + N) & (m2 >= b) & (m2 < b + N)
    return int(np.count_nonzero(hit))


def max_nonzero_divisor_count(b: int, N: int) -> int:
    """``max_{l != 0} S_{l,b}(N)`` over every ``l`` that has a solution."""
    values, _ = representation_counts(b, N)
    return max((divisor_count(int(l), b, N) for l in values if l != 0), default=0)
