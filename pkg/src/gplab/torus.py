"""Quadratic forms, lattice geometry and dyadic shells on rectangular tori.

Frequencies on the classical torus are integer vectors.  A general torus with
parameters ``theta`` has frequencies on ``theta_1 Z x ... x theta_d Z``; the
rescaling maps translate between the two pictures.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, LatticeError, PreconditionError

#: closed-interval membership tolerance used by every window test
WINDOW_TOL = 1e-9
#: relative tolerance for recognising a real frequency as a lattice point
LATTICE_TOL = 1e-9

LatticePoint = tuple  # tuple[int, ...]


@dataclass(frozen=True)
class QuadraticForm:
    """Diagonal form ``Q(xi, eta) = sum_j theta_j^2 xi_j eta_j``."""

    theta: tuple
    theta_sq: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        if not theta:
            raise PreconditionError("theta must have at least one component")
        for t in theta:
            if not (math.isfinite(t) and t > 0):
                raise PreconditionError(f"theta components must be positive and finite, got {t!r}")
        object.__setattr__(self, "theta", theta)
        sq = np.array([t * t for t in theta], dtype=np.float64)
        sq.setflags(write=False)
        object.__setattr__(self, "theta_sq", sq)

    @property
    def d(self) -> int:
        return len(self.theta)

    @classmethod
    def identity(cls, d: int) -> "QuadraticForm":
        return cls((1.0,) * d)

    def symbol(self, xi) -> np.ndarray:
        """Vectorised ``Q`` over the last axis of an integer array."""
        xi = np.asarray(xi, dtype=np.float64)
        if xi.shape[-1] != self.d:
            raise DimensionError(f"expected last axis {self.d}, got {xi.shape[-1]}")
        return (xi * xi) @ self.theta_sq


def _vec(xi, d: int | None = None) -> tuple:
    v = tuple(int(c) for c in xi)
    if d is not None and len(v) != d:
        raise DimensionError(f"expected a {d}-vector, got length {len(v)}")
    return v


def q_bilinear(form: QuadraticForm, xi, eta) -> float:
    x = _vec(xi, form.d)
    y = _vec(eta, form.d)
    # integer product first keeps the form exactly symmetric
    return float(sum(t2 * (a * b) for t2, a, b in zip(form.theta_sq, x, y)))


def q_form(form: QuadraticForm, xi) -> float:
    return q_bilinear(form, xi, xi)


def q_multi(form: QuadraticForm, slots) -> float:
    """``Q(xi_1, ..., xi_k) = sum_j Q(xi_j)`` over particle slots."""
    return float(sum(q_form(form, s) for s in slots))


def jp_bracket(xi) -> float:
    """Japanese bracket ``sqrt(1 + |xi|^2)``; accepts real or integer vectors."""
    return math.sqrt(1.0 + sum(float(c) * float(c) for c in xi))


def norm_sq(xi) -> int:
    return sum(int(c) * int(c) for c in xi)


def shell_index(xi) -> int:
    """The unique ``j`` with ``xi`` in dyadic shell ``j`` (exact integer test)."""
    s = norm_sq(xi)
    if s == 0:
        return 0
    # 4^(j-1) <= s < 4^j
    return (s.bit_length() + 1) // 2


def shell_member(xi, j: int) -> bool:
    if j < 0:
        raise PreconditionError("shell index must be nonnegative")
    s = norm_sq(xi)
    if j == 0:
        return s == 0
    return 4 ** (j - 1) <= s < 4**j


@dataclass(frozen=True)
class DyadicIndex:
    j1: int
    j2: int
    j3: int

    def __post_init__(self):
        for j in (self.j1, self.j2, self.j3):
            if int(j) != j or j < 0:
                raise PreconditionError("dyadic exponents must be nonnegative integers")

    @property
    def ordered(self) -> tuple:
        return tuple(sorted((self.j1, self.j2, self.j3)))

    @property
    def j_min(self) -> int:
        return self.ordered[0]

    @property
    def j_med(self) -> int:
        return self.ordered[1]

    @property
    def j_max(self) -> int:
        return self.ordered[2]

    def as_tuple(self) -> tuple:
        return (self.j1, self.j2, self.j3)


def rescale_freq(form: QuadraticForm, xi_general) -> tuple:
    """Map a frequency on ``theta * Z^d`` to its integer index on ``Z^d``."""
    x = tuple(float(c) for c in xi_general)
    if len(x) != form.d:
        raise DimensionError(f"expected a {form.d}-vector, got length {len(x)}")
    out = []
    for c, t in zip(x, form.theta):
        k = round(c / t)
        if abs(c - k * t) > LATTICE_TOL * max(1.0, abs(c)):
            raise LatticeError(f"component {c!r} is not on the {t!r}*Z lattice")
        out.append(int(k))
    return tuple(out)


def unscale_freq(form: QuadraticForm, xi) -> tuple:
    """Inverse of :func:`rescale_freq`: integer index to ``theta * Z^d``."""
    v = _vec(xi, form.d)
    return tuple(t * c for t, c in zip(form.theta, v))


def enumerate_ball(center, radius: float, norm: str = "euclidean") -> Iterator[tuple]:
    """Yield every lattice point in the closed ball, lexicographically."""
    if radius < 0:
        raise PreconditionError("radius must be nonnegative")
    if norm not in ("euclidean", "sup"):
        raise PreconditionError(f"unknown norm {norm!r}")
    c = _vec(center)
    r = int(math.floor(radius + WINDOW_TOL))
    r2 = radius * radius + WINDOW_TOL
    ranges = [range(ci - r, ci + r + 1) for ci in c]
    for pt in itertools.product(*ranges):
        if norm == "euclidean" and sum((a - b) ** 2 for a, b in zip(pt, c)) > r2:
            continue
        yield pt


def in_window(value: float, lo: float = 0.0, hi: float = 1.0) -> bool:
    return lo - WINDOW_TOL <= value <= hi + WINDOW_TOL


def check_dim(vecs: Sequence, d: int) -> None:
    for v in vecs:
        if len(v) != d:
            raise DimensionError(f"expected dimension {d}, got {len(v)}")
