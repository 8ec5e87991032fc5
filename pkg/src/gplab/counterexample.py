"""Endpoint extremizers, the auxiliary bump functions and the ratio experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal, stats

from .density import FourierDensityMatrix, hk_alpha_norm, spacetime_norm
from .errors import PreconditionError, ThresholdError
from .multiplier import check_forcing
from .torus import QuadraticForm

#: largest extremizer support built without an explicit override
SUPPORT_BUDGET = 2_000_000


@dataclass(frozen=True)
class ExtremizerSpec:
    kappa: int
    M: int
    d: int
    form: QuadraticForm

    def __post_init__(self):
        if self.d < 2 or self.d != self.form.d:
            raise PreconditionError("d must be >= 2 and match the form")
        if int(self.kappa) != self.kappa or int(self.M) != self.M:
            raise PreconditionError("kappa and M must be integers")
        check_forcing(self.kappa, self.form)
        if self.M < self.kappa:
            raise PreconditionError(f"transverse cutoff M={self.M} must be >= kappa={self.kappa}")

    @property
    def exponent(self) -> float:
        """Endpoint Sobolev exponent ``(d - 1) / 2``."""
        return (self.d - 1) / 2

    @property
    def support_size(self) -> int:
        return (2 * self.M + 1) ** (self.d - 1)


def _transverse(spec: ExtremizerSpec) -> np.ndarray:
    ax = np.arange(-spec.M, spec.M + 1, dtype=np.int64)
    grids = np.meshgrid(*([ax] * (spec.d - 1)), indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, spec.d - 1)


def dual_sequence(spec: ExtremizerSpec) -> tuple:
    """``(m_perp, c)`` with ``c = kappa^{e} / ((1+kappa^2+|m|^2)(1+|m|^2))^{e/2}``, ``e = (d-1)/2``."""
    m = _transverse(spec)
    s = np.sum(m.astype(np.float64) ** 2, axis=1)
    k2 = float(spec.kappa) ** 2
    e = spec.exponent
    c = k2 ** (e / 2) / ((1 + k2 + s) ** (e / 2) * (1 + s) ** (e / 2))
    return m, c


def extremizer_gamma(spec: ExtremizerSpec, budget: int = SUPPORT_BUDGET) -> FourierDensityMatrix:
    """Order-2 matrix supported on ``((kappa, -m), 0; 0, (0, -m))``.

    The value there is ``c_m / (<(kappa,-m)> <(0,-m)>)^{(d-1)/2}`` so that the
    weighted norm at the endpoint exponent is exactly ``(sum c^2)^{1/2}``.
    """
    if spec.support_size > budget:
        raise PreconditionError(
            f"extremizer support {spec.support_size} exceeds the budget {budget}; lower M"
        )
    m, c = dual_sequence(spec)
    n = m.shape[0]
    d = spec.d
    s = np.sum(m.astype(np.float64) ** 2, axis=1)
    k2 = float(spec.kappa) ** 2
    e = spec.exponent
    vals = c / ((1 + k2 + s) * (1 + s)) ** (e / 2)
    keys = np.zeros((n, 4 * d), dtype=np.int64)
    keys[:, 0] = spec.kappa
    keys[:, 1:d] = -m
    # slots: a_1 = (kappa, -m), a_2 = 0, b_1 = 0, b_2 = (0, -m)
    keys[:, 3 * d + 1 : 4 * d] = -m
    cutoff = max(spec.kappa, spec.M)
    return FourierDensityMatrix(2, d, cutoff, keys, vals)


# bump functions -----------------------------------------------------------

MOLLIFIER_WIDTH = 0.1
GRID_STEP = 1e-3
HALF_WIDTH = 2 * math.pi  # phi_1 = 1/2 on [-2 pi, 2 pi]
SUPPORT_L = 2 * HALF_WIDTH + MOLLIFIER_WIDTH  # supp phi_3 = [-L, L]


def _mollifier(x: np.ndarray, a: float) -> np.ndarray:
    out = np.zeros_like(x, dtype=np.float64)
    inside = np.abs(x) < a
    out[inside] = np.exp(-1.0 / (1.0 - (x[inside] / a) ** 2))
    return out


class _Mollifier:
    """Unit-mass ``C^infty`` bump on ``[-a, a]`` and its (real, even) transform."""

    def __init__(self, width: float = MOLLIFIER_WIDTH, n: int = 4001):
        self.a = width / 2
        self.x = np.linspace(-self.a, self.a, n)
        h = self.x[1] - self.x[0]
        raw = _mollifier(self.x, self.a)
        self.mass = raw.sum() * h
        self.w = raw / self.mass * h  # trapezoid weights (endpoints vanish)

    def __call__(self, x) -> np.ndarray:
        return _mollifier(np.asarray(x, dtype=np.float64), self.a) / self.mass

    def hat(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        out = np.empty(u.shape)
        flat = u.ravel()
        res = out.ravel()
        chunk = max(1, 2**22 // self.x.size)
        for s in range(0, flat.size, chunk):
            res[s : s + chunk] = np.cos(np.outer(flat[s : s + chunk], self.x)) @ self.w
        return res.reshape(u.shape)


def phi1_hat(u) -> np.ndarray:
    """``sin(2 pi u) / u`` with the limit ``2 pi`` at 0."""
    u = np.asarray(u, dtype=np.float64)
    return 2 * np.pi * np.sinc(2 * u)


def lower_bound_radius() -> float:
    """``C = sup{c : sin(2 pi u)/u >= 2 on [0, c]}``."""
    return float(optimize.brentq(lambda u: phi1_hat(u) - 2.0, 1e-9, 0.5, xtol=1e-15))


@dataclass
class BumpZeta:
    """``zeta = phi_3(x / (m delta)) / (m delta)`` with ``supp zeta = [-delta, delta]``."""

    delta: float
    C: float
    m: float
    grid: np.ndarray = field(repr=False)
    phi3: np.ndarray = field(repr=False)
    l1_mollify_error: float = 0.0
    _rho: _Mollifier = field(default=None, repr=False)

    @property
    def scale(self) -> float:
        return self.m * self.delta

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        x = t / self.scale
        out = np.interp(x, self.grid, self.phi3, left=0.0, right=0.0) / self.scale
        return np.where(np.abs(t) <= self.delta, out, 0.0)

    def hat(self, xi) -> np.ndarray:
        """``zeta_hat(xi) = (phi1_hat(u) rho_hat(u))^2`` at ``u = m delta xi``."""
        u = self.scale * np.asarray(xi, dtype=np.float64)
        out = (phi1_hat(u) * self._rho.hat(u)) ** 2
        return out.reshape(u.shape)

    def hat_quadrature(self, xi) -> np.ndarray:
        """Transform of the sampled ``zeta`` by trapezoid (diagnostic cross-check)."""
        t = self.grid * self.scale
        z = self.phi3 / self.scale
        h = t[1] - t[0]
        xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
        out = np.empty(xi.shape)
        chunk = max(1, 2**22 // t.size)
        for s in range(0, xi.size, chunk):
            out[s : s + chunk] = np.cos(np.outer(xi[s : s + chunk], t)) @ z * h
        return out


def delta_max() -> float:
    """Largest support half-width for which the transform stays >= 1 on ``[-1, 1]``."""
    return lower_bound_radius() * SUPPORT_L


def bump_zeta(delta: float) -> BumpZeta:
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    C = lower_bound_radius()
    m = 1.0 / SUPPORT_L
    if delta > delta_max():
        raise ThresholdError(f"delta={delta} exceeds the admissible maximum {delta_max():.6g}")
    rho = _Mollifier()
    # phi_2 = phi_1 * rho must stay >= 1 on the transform side over [-C, C]
    u = np.linspace(0, C, 2001)
    if np.min(phi1_hat(u) * rho.hat(u)) < 1.0:
        raise ThresholdError("mollified transform drops below 1 on [-C, C]")
    h = GRID_STEP
    half2 = HALF_WIDTH + rho.a
    n2 = int(round(half2 / h))
    x2 = np.arange(-n2, n2 + 1) * h
    phi1 = np.where(np.abs(x2) <= HALF_WIDTH, 0.5, 0.0)
    nr = int(round(rho.a / h))
    xr = np.arange(-nr, nr + 1) * h
    kr = rho(xr)
    kr = kr / (kr.sum() * h)
    phi2 = signal.fftconvolve(phi1, kr, mode="same") * h
    l1 = float(np.sum(np.abs(phi2 - phi1)) * h)
    phi3 = signal.fftconvolve(phi2, phi2[::-1], mode="full") * h
    x3 = np.arange(-2 * n2, 2 * n2 + 1) * h
    phi3 = np.clip(phi3, 0.0, None)
    return BumpZeta(delta, C, m, x3, phi3, l1, rho)


def verify_bump(z: BumpZeta, n_hat: int = 10_000, hat_range: float = 50.0, n_support: int = 10_000) -> dict:
    """Check support, transform nonnegativity and the lower bound on ``[-1, 1]``."""
    outside = np.concatenate([
        np.linspace(z.delta * (1 + 1e-9), 10 * z.delta + 1, n_support // 2),
        -np.linspace(z.delta * (1 + 1e-9), 10 * z.delta + 1, n_support // 2),
    ])
    support_ok = bool(np.all(z(outside) == 0.0))
    xi = np.linspace(-hat_range, hat_range, n_hat)
    zh = z.hat(xi)
    nonneg_ok = bool(np.min(zh) >= -1e-9)
    inner = np.linspace(-1.0, 1.0, 2001)
    lower = float(np.min(z.hat(inner)))
    sample = np.linspace(-hat_range, hat_range, 401)
    quad_dev = float(np.max(np.abs(z.hat_quadrature(sample) - z.hat(sample))))
    return {
        "support": support_ok,
        "nonnegative": nonneg_ok,
        "lower_bound": lower >= 1.0,
        "min_hat": float(np.min(zh)),
        "min_hat_on_unit": lower,
        "quadrature_deviation": quad_dev,
        "l1_mollify_error": z.l1_mollify_error,
        "C": z.C,
        "delta_max": z.C / z.m,
    }


@dataclass(frozen=True)
class BumpPsi:
    """``psi(t) = e * exp(-t^2)``: at least 1 on ``[0, 1]``."""

    c: float = math.e

    def __call__(self, t) -> np.ndarray:
        return self.c * np.exp(-np.asarray(t, dtype=np.float64) ** 2)

    def hat(self, xi) -> np.ndarray:
        return self.c * math.sqrt(math.pi) * np.exp(-np.asarray(xi, dtype=np.float64) ** 2 / 4)


def bump_psi() -> BumpPsi:
    return BumpPsi()


# ratio experiment ---------------------------------------------------------

@dataclass
class Regression:
    slope: float
    intercept: float
    r2: float

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2}


def linear_fit(x, y) -> Regression:
    res = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return Regression(float(res.slope), float(res.intercept), float(res.rvalue**2))


def default_transverse_cutoff(kappa: int) -> int:
    return kappa * kappa


def ratio_experiment(kappa_list, alpha: float, delta: float, form: QuadraticForm, d: int | None = None,
                     M=None, time_samples: int | None = None, budget: int = SUPPORT_BUDGET) -> dict:
    """Sweep ``kappa`` and regress ``r(kappa)^2`` against ``ln kappa``.

    ``M`` is an int, a callable ``kappa -> M`` or ``None`` for ``kappa^2``.
    Each row reports the full ratio together with the ``B^+`` and ``B^-``
    parts, all normalised by the data norm.
    """
    d = form.d if d is None else d
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    rows = []
    for kappa in kappa_list:
        kappa = int(kappa)
        if M is None:
            mk = default_transverse_cutoff(kappa)
        elif callable(M):
            mk = int(M(kappa))
        else:
            mk = int(M)
        spec = ExtremizerSpec(kappa, mk, d, form)
        gamma = extremizer_gamma(spec, budget=budget)
        data = hk_alpha_norm(gamma, alpha)
        full = spacetime_norm(gamma, 1, alpha, form, delta, time_samples)
        plus = spacetime_norm(gamma, 1, alpha, form, delta, time_samples, sign="plus")
        minus = spacetime_norm(gamma, 1, alpha, form, delta, time_samples, sign="minus")
        r = full / data
        rows.append({
            "kappa": kappa,
            "M": mk,
            "ratio": r,
            "ratio_sq": r * r,
            "b_plus_part": plus / data,
            "b_minus_part": minus / data,
            "ln_kappa": math.log(kappa),
        })
    fit = linear_fit([r["ln_kappa"] for r in rows], [r["ratio_sq"] for r in rows])
    bm = np.array([r["b_minus_part"] for r in rows])
    variation = float((bm.max() - bm.min()) / bm.mean()) if bm.size else 0.0
    return {"rows": rows, "fit": fit, "b_minus_variation": variation}
