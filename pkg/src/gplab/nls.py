"""Strang split-step solver for ``i u_t + Delta_Q u = b0 |u|^2 u`` on the classical torus.

The state is the array of Fourier coefficients ``c`` (FFT ordering) with
``u(x) = sum_xi c(xi) e^{i xi.x}``, so that ``u = N^d * ifftn(c)`` on the
collocation grid and ``mass = sum |c|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .density import HierarchySequence, factorized
from .errors import DimensionError, PreconditionError
from .torus import QuadraticForm


def grid_frequencies(n: int, d: int) -> np.ndarray:
    """Integer frequencies of every grid mode, shape ``(n,)*d + (d,)``."""
    k = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
    return np.stack(np.meshgrid(*([k] * d), indexing="ij"), axis=-1)


@dataclass(frozen=True, eq=False)
class SpectralField:
    form: QuadraticForm
    b0: float
    coeffs: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != self.form.d or len(set(c.shape)) != 1:
            raise DimensionError(f"coeffs must be a cube of dimension {self.form.d}")
        n = c.shape[0]
        if n < 2 or n & (n - 1):
            raise PreconditionError("grid size must be a power of two")
        if not np.all(np.isfinite(c)):
            raise PreconditionError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def d(self) -> int:
        return self.form.d

    @classmethod
    def from_modes(cls, form: QuadraticForm, b0: float, n: int, modes: dict) -> "SpectralField":
        """Field with the given ``{frequency: amplitude}`` modes."""
        c = np.zeros((n,) * form.d, dtype=np.complex128)
        for xi, a in modes.items():
            if len(xi) != form.d:
                raise DimensionError("mode dimension mismatch")
            if any(not -n // 2 <= v < n // 2 for v in xi):
                raise PreconditionError(f"mode {xi} outside the grid band")
            c[tuple(v % n for v in xi)] += a
        return cls(form, b0, c)

    def symbol(self) -> np.ndarray:
        return self.form.symbol(grid_frequencies(self.n, self.d))

    def physical(self) -> np.ndarray:
        return np.fft.ifftn(self.coeffs) * self.n**self.d

    def sparse(self, threshold: float = 0.0) -> tuple:
        """``(freqs, amps)`` of the modes with modulus above ``threshold``."""
        mask = np.abs(self.coeffs) > threshold
        return grid_frequencies(self.n, self.d)[mask], self.coeffs[mask]


def mass(field: SpectralField) -> float:
    return math.fsum(np.abs(field.coeffs).ravel() ** 2)


def energy(field: SpectralField) -> float:
    """``sum Q |c|^2 + (b0/2) mean_x |u|^4`` (cell volume normalised to ``1/N^d``)."""
    kin = math.fsum((field.symbol() * np.abs(field.coeffs) ** 2).ravel())
    if field.b0 == 0:
        return kin
    u = field.physical()
    return kin + 0.5 * field.b0 * float(np.mean(np.abs(u) ** 4))


def alias_fraction(field: SpectralField) -> float:
    """Share of the mass carried by modes with some ``|xi_j| > N/3``."""
    m = mass(field)
    if m == 0:
        return 0.0
    high = np.any(np.abs(grid_frequencies(field.n, field.d)) > field.n / 3, axis=-1)
    return math.fsum(np.abs(field.coeffs[high]) ** 2) / m


def _nonlinear(c: np.ndarray, b0: float, tau: float) -> np.ndarray:
    scale = c.shape[0] ** c.ndim
    u = np.fft.ifftn(c) * scale
    u *= np.exp(-1j * b0 * tau * np.abs(u) ** 2)
    return np.fft.fftn(u) / scale


def step_strang(field: SpectralField, dt: float, symbol: np.ndarray | None = None) -> SpectralField:
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    q = field.symbol() if symbol is None else symbol
    c = field.coeffs
    if field.b0 != 0:
        c = _nonlinear(c, field.b0, 0.5 * dt)
    c = c * np.exp(-1j * q * dt)
    if field.b0 != 0:
        c = _nonlinear(c, field.b0, 0.5 * dt)
    return replace(field, coeffs=c, t=field.t + dt)


class Trajectory(list):
    """Recorded fields plus the per-record aliasing diagnostic."""

    def __init__(self, items=(), alias=()):
        super().__init__(items)
        self.alias_fraction = list(alias)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self])


def _n_steps(T: float, dt: float) -> int:
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise PreconditionError(f"dt={dt} does not divide T={T}")
    return int(n)


def evolve(field: SpectralField, T: float, dt: float, record_stride: int = 1) -> Trajectory:
    if not T > 0:
        raise PreconditionError("T must be positive")
    if record_stride < 1:
        raise PreconditionError("record_stride must be >= 1")
    n = _n_steps(T, dt)
    q = field.symbol()
    t0 = field.t
    out = Trajectory([field], [alias_fraction(field)])
    cur = field
    for i in range(1, n + 1):
        cur = step_strang(cur, dt, q)
        # pin the clock to the exact multiple of dt
        cur = replace(cur, t=t0 + i * dt)
        if i % record_stride == 0 or i == n:
            out.append(cur)
            out.alias_fraction.append(alias_fraction(cur))
    return out


def plane_wave_exact(form: QuadraticForm, b0: float, n: int, xi, amp: complex, t: float) -> SpectralField:
    """Exact plane-wave solution ``A e^{i xi.x - i (Q(xi) + b0 |A|^2) t}``."""
    q = float(form.symbol(np.asarray(xi)))
    a = amp * np.exp(-1j * (q + b0 * abs(amp) ** 2) * t)
    f = SpectralField.from_modes(form, b0, n, {tuple(xi): a})
    return replace(f, t=t)


def observed_order(errors) -> list:
    """``log2(e_i / e_{i+1})`` for a dt-halving sequence of errors."""
    e = np.asarray(errors, dtype=float)
    return [float(np.log2(e[i] / e[i + 1])) for i in range(len(e) - 1)]


def self_convergence_order(field: SpectralField, T: float, dts) -> tuple:
    """Order from successive differences of terminal states at halving ``dt``."""
    finals = [evolve(field, T, dt, record_stride=_n_steps(T, dt))[-1].coeffs for dt in dts]
    diffs = [float(np.sqrt(np.sum(np.abs(finals[i] - finals[i + 1]) ** 2))) for i in range(len(finals) - 1)]
    return diffs, observed_order(diffs)


def factorized_trajectory(field0: SpectralField, T: float, dt: float, k_max: int, stride: int = 1,
                          threshold: float = 1e-14) -> tuple:
    """``(times, [HierarchySequence])`` with ``gamma^(k)(t) = |u_t><u_t|^{tensor k}``."""
    if k_max < 1:
        raise PreconditionError("k_max must be >= 1")
    traj = evolve(field0, T, dt, stride)
    cutoff = field0.n // 2
    seqs = []
    for f in traj:
        freqs, amps = f.sparse()
        entries = [factorized(freqs, amps, k, cutoff=cutoff, threshold=threshold) for k in range(1, k_max + 1)]
        seqs.append(HierarchySequence(entries, field0.form))
    return traj.times, seqs, traj
