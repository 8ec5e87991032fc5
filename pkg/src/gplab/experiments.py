"""The experiment catalogue behind the ``lab`` command.

Each experiment takes a resolved :class:`ExperimentConfig` and returns
``(rows, fit, checks, extra, files)``; :func:`run` wraps that in a report.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from . import counterexample as cx
from . import density as dm
from . import expsum as es
from . import multiplier as mp
from . import nls
from .errors import ConfigError, PreconditionError
from .report import ExperimentConfig, ExperimentReport, Param, build_id, nonnegative, one_of, parse_config, positive
from .torus import QuadraticForm, q_bilinear, q_form


@dataclass(frozen=True)
class Experiment:
    name: str
    func: Callable
    params: tuple
    doc: str
    validate: Callable | None = None  # extra cross-parameter checks


REGISTRY: dict[str, Experiment] = {}


def experiment(name: str, params, doc: str, validate=None):
    def deco(func):
        REGISTRY[name] = Experiment(name, func, tuple(params), doc, validate)
        return func
    return deco


def _rng(cfg: ExperimentConfig) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(cfg.seed))


def _fit_loglog(x, y) -> dict:
    return cx.linear_fit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float))).as_dict()


def _parse_modes(text: str, d: int) -> dict:
    """``"1,0:0.5; 0,1:0.5"`` -> ``{(1, 0): 0.5, (0, 1): 0.5}``."""
    modes = {}
    for item in (s.strip() for s in text.split(";")):
        if not item:
            continue
        xi, _, amp = item.partition(":")
        key = tuple(int(c) for c in xi.split(","))
        if len(key) != d:
            raise ConfigError(f"mode {item!r} has dimension {len(key)}, expected {d}")
        modes[key] = complex(amp) if amp else 1.0
    if not modes:
        raise ConfigError("modes must list at least one mode")
    return modes


def _modes_check(text):
    try:
        _parse_modes(text, len(text.split(";")[0].partition(":")[0].split(",")))
    except (ValueError, ConfigError) as exc:
        return f"is malformed ({exc})"
    return None


# exponential sums ---------------------------------------------------------

LP_PARAMS = (
    Param("b", "int", 0, "start of the summation range"),
    Param("n_list", "ints", (16, 32, 64, 128, 256), "lengths N", positive),
    Param("scale", "float", 1.0, "phase scale s in exp(i s t m^2)", positive),
    Param("method", "str", "auto", "quadrature: auto, direct or lift", one_of("auto", "direct", "lift")),
    Param("samples", "optint", None, "override the quadrature sample count (direct rule)"),
    Param("check_slope", "bool", True, "apply the growth-exponent check"),
)


def _lp_rows(cfg: ExperimentConfig, p: float, oracle: bool) -> list:
    rows = []
    for n in cfg["n_list"]:
        spec = es.ExpSumSpec(cfg["b"], n, cfg["scale"])
        val = es.lp_time_norm(spec, p, cfg["samples"], cfg["method"])
        row = {"N": n, "b": cfg["b"], "p": p, "value": val}
        if oracle:
            exact = es.l4_plancherel(cfg["b"], n)
            row["oracle"] = exact
            row["rel_error"] = abs(val - exact) / exact
        rows.append(row)
    return rows


def _slope_fit(rows) -> dict | None:
    use = [r for r in rows if r["N"] >= 2]
    if len(use) < 2:
        return None
    return _fit_loglog([r["N"] for r in use], [r["value"] for r in use])


def _scale_guard(cfg):
    if cfg["scale"] != 1.0:
        raise ConfigError("the Plancherel oracle needs scale = 1 on [0, 2 pi]")


@experiment("expsum-l4", LP_PARAMS + (
    Param("tol", "float", 1e-6, "relative tolerance against the divisor-count oracle", positive),
    Param("slope_lo", "float", 1.5, "exclusive lower end of the accepted slope"),
    Param("slope_hi", "float", 2.2, "inclusive upper end of the accepted slope"),
), "L^4 time norm of quadratic Weyl sums, checked against exact representation counts.", _scale_guard)
def run_expsum_l4(cfg):
    rows = _lp_rows(cfg, 4, oracle=True)
    fit = _slope_fit(rows)
    checks = {"oracle_agreement": max(r["rel_error"] for r in rows) <= cfg["tol"]}
    if cfg["check_slope"] and fit is not None:
        checks["slope_in_range"] = cfg["slope_lo"] < fit["slope"] <= cfg["slope_hi"]
    return rows, fit, checks, {"max_rel_error": max(r["rel_error"] for r in rows)}, {}


@experiment("expsum-lp", LP_PARAMS + (
    Param("p", "float", 6.0, "exponent p >= 1", lambda v: None if v >= 1 else "must be >= 1"),
    Param("slope_slack", "float", 0.2, "accepted excess of the slope over p - 2", nonnegative),
), "L^p time norm growth in N.")
def run_expsum_lp(cfg):
    rows = _lp_rows(cfg, cfg["p"], oracle=False)
    fit = _slope_fit(rows)
    checks = {}
    if cfg["check_slope"] and fit is not None:
        checks["slope_bound"] = fit["slope"] <= cfg["p"] - 2 + cfg["slope_slack"]
    return rows, fit, checks, {}, {}


@experiment("divisor", (
    Param("l", "optint", None, "target value; omitted: sweep every attained l"),
    Param("b", "int", 0, "start of the range"),
    Param("N", "int", 10, "length of the range", positive),
), "Solutions of m1^2 - m2^2 = l in [b, b+N)^2 by brute force.")
def run_divisor(cfg):
    b, n = cfg["b"], cfg["N"]
    if cfg["l"] is not None:
        c = es.divisor_count(cfg["l"], b, n)
        return [{"l": cfg["l"], "b": b, "N": n, "count": c}], None, {}, {}, {}
    values, counts = es.representation_counts(b, n)
    rows = []
    for l, c in zip(values.tolist(), counts.tolist()):
        direct = es.divisor_count(l, b, n)
        rows.append({"l": l, "b": b, "N": n, "count": direct, "count_oracle": c})
    checks = {"counts_match": all(r["count"] == r["count_oracle"] for r in rows)}
    nonzero = [r["count"] for r in rows if r["l"] != 0]
    mx = max(nonzero, default=0)
    # with b > N^2 a second factorisation k1' (k2' + 2b) would need |k1'/k1 - 1| < N / b < 1/N
    if abs(b) > n * n:
        checks["unique_nonzero"] = mx <= 1
    return rows, None, checks, {"max_nonzero_count": mx}, {}


# multiplier ---------------------------------------------------------------

@experiment("multiplier-scan", (
    Param("tau", "float", 0.5, "window offset tau"),
    Param("p", "ints", (1, 0), "frequency p (d entries)"),
    Param("alpha", "float", 0.6, "regularity alpha", positive),
    Param("truncations", "ints", (4, 8, 16), "truncation radii R of I(tau, p)", positive),
    Param("n_tuples", "int", 1000, "random tuples for the term-wise form equivalence", nonnegative),
    Param("n_matrices", "int", 100, "random order-2 matrices for the boundedness witness", nonnegative),
    Param("cutoff", "int", 256, "frequency cutoff of the random matrices", lambda v: None if v >= 4 else "must be >= 4"),
    Param("witness_factor", "float", 10.0, "allowed max / median of the witness ratio", positive),
    Param("equiv_tol", "float", 1e-12, "relative tolerance of the form equivalence", positive),
), "Truncated collision multiplier, form equivalence and the space-time boundedness witness.")
def run_multiplier_scan(cfg):
    form, d = cfg.form, cfg.d
    if len(cfg["p"]) != d:
        raise ConfigError(f"p has {len(cfg['p'])} entries, expected {d}")
    rows = []
    for R in cfg["truncations"]:
        vals = {}
        for rep in ("original", "polarized"):
            q = mp.MultiplierQuery(cfg["tau"], cfg["p"], cfg["alpha"], form, R, rep)
            vals[rep] = mp.multiplier_sum(q)
        rows.append({"part": "multiplier", "index": R, "value": vals["polarized"], "aux": vals["original"]})
    rng = _rng(cfg)
    worst, hits = form_equivalence(rng, form, cfg["n_tuples"], cfg["alpha"])
    ratios = []
    for i in range(cfg["n_matrices"]):
        g = dm.random_collision_density(rng, d, cfg["cutoff"], alpha=cfg["alpha"])
        r = dm.spacetime_norm(g, 1, cfg["alpha"], form, method="exact") / dm.hk_alpha_norm(g, cfg["alpha"])
        ratios.append(r)
        rows.append({"part": "witness", "index": i, "value": r})
    checks = {
        "multiplier_finite": all(math.isfinite(r["value"]) for r in rows if r["part"] == "multiplier"),
        "form_equivalence": worst <= cfg["equiv_tol"],
    }
    extra = {"equivalence_max_rel_error": worst, "equivalence_nonzero_terms": hits}
    if ratios:
        med = float(np.median(ratios))
        extra.update(witness_median=med, witness_max=max(ratios), witness_max_over_median=max(ratios) / med)
        checks["witness_bounded"] = max(ratios) <= cfg["witness_factor"] * med
    return rows, None, checks, extra, {}


def form_equivalence(rng: np.random.Generator, form: QuadraticForm, n: int, alpha: float,
                     box: int = 24) -> tuple:
    """Worst relative mismatch of original vs polarized summands under the bijection.

    ``tau`` is drawn so that most tuples land inside the window, keeping the
    comparison away from the trivial ``0 == 0`` case.
    """
    d = form.d
    worst, hits = 0.0, 0
    for _ in range(n):
        p, m, nn = (tuple(int(c) for c in rng.integers(-box, box + 1, size=d)) for _ in range(3))
        m2, n2 = mp.original_to_polarized(p, m, nn)
        base = 2 * q_bilinear(form, n2, m2) - q_form(form, p)
        tau = base + float(rng.uniform(-0.25, 1.25))
        a = mp.summand_original(form, tau, p, m, nn, alpha)
        b = mp.summand_polarized(form, tau, p, m2, n2, alpha) if any(m2) and any(n2) else 0.0
        if a == 0.0 and b == 0.0:
            continue
        hits += 1
        worst = max(worst, abs(a - b) / max(abs(a), abs(b)))
    return worst, hits


@experiment("dyadic-count", (
    Param("n_samples", "int", 20, "number of sampled (tau, p)", positive),
    Param("p_max", "int", 64, "bound on |p|", positive),
    Param("caps", "ints", (4, 5, 6), "j_max caps, ascending", nonnegative),
    Param("epsilon", "float", 0.5, "epsilon in the exponent (d - 1) + epsilon", positive),
    Param("spread", "int", 8, "offset of the seed pair used to place tau", positive),
    Param("stability", "float", 2.0, "allowed factor between the max ratios of different caps", positive),
), "Dyadic lattice counts #E_{tau,p}(j) against 2^{c (j_min + j_med)}.")
def run_dyadic_count(cfg):
    form = cfg.form
    caps = sorted(cfg["caps"])
    c = mp.count_exponent(cfg.d, cfg["epsilon"])
    samples = mp.sample_tau_p(_rng(cfg), form, cfg["n_samples"], cfg["p_max"], cfg["spread"])
    rows = []
    per_cap = {cap: 0.0 for cap in caps}
    for s, (tau, p) in enumerate(samples):
        hist = mp.dyadic_histogram(tau, p, form, caps[-1])
        for cap in caps:
            h = hist[: cap + 1, : cap + 1, : cap + 1]
            idx = np.indices(h.shape).reshape(3, -1).T
            srt = np.sort(idx, axis=1)
            ratio = h.ravel() / 2.0 ** (c * (srt[:, 0] + srt[:, 1]))
            k = int(np.argmax(ratio))
            rows.append({"sample": s, "tau": tau, "p": p, "cap": cap, "max_ratio": float(ratio[k]),
                         "argmax_j": tuple(int(v) for v in idx[k]), "total_count": int(h.sum())})
            per_cap[cap] = max(per_cap[cap], float(ratio[k]))
    vals = list(per_cap.values())
    checks = {
        "finite": all(math.isfinite(v) for v in vals),
        "stable": min(vals) > 0 and max(vals) / min(vals) <= cfg["stability"],
    }
    return rows, None, checks, {"max_ratio_by_cap": {str(k): v for k, v in per_cap.items()}}, {}


def _m_rule(rule: str):
    if rule == "square":
        return lambda k: k * k
    if rule == "linear":
        return lambda k: k
    try:
        m = int(rule)
    except ValueError:
        raise ConfigError(f"M must be 'square', 'linear' or an integer, got {rule!r}") from None
    return lambda k: m


def _kappa_guard(cfg):
    mp.check_forcing(min(cfg["kappas"]), cfg.form)
    _m_rule(cfg["M"])


@experiment("endpoint-slice", (
    Param("kappas", "ints", (16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384), "values of kappa", positive),
    Param("M", "str", "square", "transverse cutoff: square (kappa^2), linear (kappa) or an integer"),
    Param("min_r2", "float", 0.99, "required R^2 of the fit against ln kappa"),
), "Endpoint slice of the multiplier, regressed against ln kappa.", _kappa_guard)
def run_endpoint_slice(cfg):
    form, rule = cfg.form, _m_rule(cfg["M"])
    rows = []
    for k in cfg["kappas"]:
        m = rule(k)
        rows.append({"kappa": k, "M": m, "ln_kappa": math.log(k), "value": mp.endpoint_slice_sum(k, form, m)})
    fit = cx.linear_fit([r["ln_kappa"] for r in rows], [r["value"] for r in rows]).as_dict()
    checks = {"slope_positive": fit["slope"] > 0, "r2": fit["r2"] >= cfg["min_r2"]}
    return rows, fit, checks, {}, {}


# NLS and hierarchy --------------------------------------------------------

NLS_PARAMS = (
    Param("grid", "int", 64, "grid points per axis (power of two)", lambda v: None if v >= 2 and v & (v - 1) == 0 else "must be a power of two"),
    Param("b0", "float", 1.0, "coupling b0"),
    Param("T", "float", 1.0, "final time", positive),
    Param("dts", "floats", (2e-3, 1e-3, 5e-4), "time steps of the halving study", positive),
)


@experiment("nls-converge", NLS_PARAMS + (
    Param("dt", "float", 1e-3, "time step of the plane-wave test", positive),
    Param("xi", "ints", (1, 0), "plane-wave frequency"),
    Param("amp", "float", 0.5, "plane-wave amplitude", positive),
    Param("modes", "str", "1,0:0.5;0,1:0.5", "datum of the halving study, 'xi:amp;...'", _modes_check),
    Param("err_tol", "float", 1e-5, "plane-wave terminal error bound", positive),
    Param("mass_tol", "float", 1e-10, "mass drift bound", positive),
    Param("order_lo", "float", 1.8, "lower end of accepted order"),
    Param("order_hi", "float", 2.2, "upper end of accepted order"),
), "Strang splitting: plane-wave accuracy, mass conservation, observed order.")
def run_nls_converge(cfg):
    form, n, b0, T = cfg.form, cfg["grid"], cfg["b0"], cfg["T"]
    if len(cfg["xi"]) != cfg.d:
        raise ConfigError(f"xi has {len(cfg['xi'])} entries, expected {cfg.d}")
    f0 = nls.plane_wave_exact(form, b0, n, cfg["xi"], cfg["amp"], 0.0)
    traj = nls.evolve(f0, T, cfg["dt"], record_stride=10**9)
    exact = nls.plane_wave_exact(form, b0, n, cfg["xi"], cfg["amp"], T)
    err = float(np.sqrt(np.sum(np.abs(traj[-1].coeffs - exact.coeffs) ** 2)))
    drift = abs(nls.mass(traj[-1]) - nls.mass(f0))
    rows = [{"study": "plane-wave", "dt": cfg["dt"], "error": err, "mass_drift": drift,
             "alias_fraction": traj.alias_fraction[-1]}]
    g0 = nls.SpectralField.from_modes(form, b0, n, _parse_modes(cfg["modes"], cfg.d))
    diffs, orders = nls.self_convergence_order(g0, T, cfg["dts"])
    for i, dd in enumerate(diffs):
        rows.append({"study": "self-convergence", "dt": cfg["dts"][i], "error": dd,
                     "order": orders[i - 1] if i else None})
    checks = {
        "plane_wave_error": err <= cfg["err_tol"],
        "mass_drift": drift <= cfg["mass_tol"],
        "order": bool(orders) and all(cfg["order_lo"] <= o <= cfg["order_hi"] for o in orders),
    }
    return rows, None, checks, {"orders": orders}, {}


@experiment("hierarchy-residual", (
    Param("grid", "int", 32, "grid points per axis (power of two)", lambda v: None if v >= 2 and v & (v - 1) == 0 else "must be a power of two"),
    Param("b0", "float", 1.0, "coupling b0"),
    Param("T", "float", 0.1, "final time", positive),
    Param("dts", "floats", (2e-3, 1e-3, 5e-4), "time steps of the halving study", positive),
    Param("stride", "int", 2, "record every stride-th step", positive),
    Param("k_max", "int", 2, "highest order kept", lambda v: None if v >= 2 else "must be >= 2"),
    Param("modes", "str", "1,0:0.5;0,1:0.5", "initial datum, 'xi:amp;...'", _modes_check),
    Param("alpha", "float", 0.0, "regularity in the residual norm", nonnegative),
    Param("xi_weight", "float", 1.0, "weight xi of the H^alpha_xi norm", positive),
    Param("variant", "str", "interaction", "interaction or verbatim Duhamel form", one_of("interaction", "verbatim")),
    Param("free_tol", "float", 1e-10, "residual bound for the b0 = 0 run", positive),
    Param("order_lo", "float", 1.8, "lower end of accepted order"),
    Param("order_hi", "float", 2.2, "upper end of accepted order"),
    Param("checkpoint", "bool", False, "also write the terminal gamma^(1) in text form"),
), "Duhamel residual of factorized trajectories under dt halving.")
def run_hierarchy_residual(cfg):
    form = cfg.form
    modes = _parse_modes(cfg["modes"], cfg.d)
    dts = cfg["dts"]

    def residual(b0, dt, stride):
        f0 = nls.SpectralField.from_modes(form, b0, cfg["grid"], modes)
        times, seqs, _ = nls.factorized_trajectory(f0, cfg["T"], dt, cfg["k_max"], stride)
        r = dm.duhamel_residual(times, seqs, b0, form, cfg["alpha"], cfg["xi_weight"], cfg["variant"])
        return r, seqs

    rows, res = [], []
    last = None
    for dt in dts:
        # records every `stride` steps: the quadrature of the Duhamel integral refines with dt
        r, last = residual(cfg["b0"], dt, cfg["stride"])
        res.append(r)
        rows.append({"b0": cfg["b0"], "dt": dt, "residual": r})
    orders = nls.observed_order(res)
    for row, o in zip(rows[1:], orders):
        row["order"] = o
    free, _ = residual(0.0, dts[0], cfg["stride"])
    rows.append({"b0": 0.0, "dt": dts[0], "residual": free})
    checks = {
        "order": bool(orders) and all(cfg["order_lo"] <= o <= cfg["order_hi"] for o in orders),
        "free_residual": free <= cfg["free_tol"],
    }
    files = {"gamma1.txt": last[-1].entries[0].to_text()} if cfg["checkpoint"] else {}
    return rows, None, checks, {"orders": orders, "free_residual": free}, files


# rescaling, extremizers, bump --------------------------------------------

@experiment("rescale-check", (
    Param("n_matrices", "int", 100, "random order-2 matrices", positive),
    Param("cutoff", "int", 16, "frequency cutoff", positive),
    Param("nnz", "int", 30, "nonzero coefficients per matrix", positive),
    Param("t_max", "float", 1.0, "evolution times are drawn from [0, t_max]", nonnegative),
    Param("tol", "float", 1e-12, "tolerance of both identities", positive),
), "Collision and free flow commute with the lattice rescaling; round trip is exact.")
def run_rescale_check(cfg):
    form, rng = cfg.form, _rng(cfg)
    rows = []
    for i in range(cfg["n_matrices"]):
        g = dm.random_sparse_density(rng, 2, cfg.d, cfg["cutoff"], cfg["nnz"])
        t = float(rng.uniform(0.0, cfg["t_max"]))
        back = dm.rescale_density(dm.rescale_density(g, form, "to_general"), form, "to_classical")
        rt = float(np.max(np.abs(back.values - g.values)) / np.max(np.abs(g.values)))
        rows.append({"index": i, "t": t, "residual": dm.correspondence_residual(g, form, t), "round_trip": rt})
    worst = max(r["residual"] for r in rows)
    worst_rt = max(r["round_trip"] for r in rows)
    checks = {"correspondence": worst <= cfg["tol"], "round_trip": worst_rt <= cfg["tol"]}
    return rows, None, checks, {"max_residual": worst, "max_round_trip": worst_rt}, {}


def _extremizer_guard(cfg):
    mp.check_forcing(min(cfg["kappas"]), cfg.form)
    if cfg["delta"] > cx.delta_max():
        raise PreconditionError(f"delta must not exceed {cx.delta_max():.6g}")
    _m_rule(cfg["M"])


@experiment("extremizer-sweep", (
    Param("kappas", "ints", (16, 32, 64, 128, 256, 512, 1024, 2048, 4096), "values of kappa", positive),
    Param("alpha", "float", 0.5, "regularity alpha", positive),
    Param("delta", "float", 0.05, "time window length", positive),
    Param("M", "str", "linear", "transverse cutoff: square (kappa^2), linear (kappa) or an integer"),
    Param("time_samples", "optint", None, "trapezoid samples (default: minimum admissible)"),
    Param("budget", "int", cx.SUPPORT_BUDGET, "largest allowed support", positive),
    Param("min_r2", "float", 0.95, "required R^2 of ratio^2 against ln kappa"),
    Param("max_variation", "float", 0.1, "allowed relative spread of the B^- part", positive),
), "Space-time ratio of the extremizing sequence as kappa grows.", _extremizer_guard)
def run_extremizer_sweep(cfg):
    out = cx.ratio_experiment(cfg["kappas"], cfg["alpha"], cfg["delta"], cfg.form, M=_m_rule(cfg["M"]),
                              time_samples=cfg["time_samples"], budget=cfg["budget"])
    fit = out["fit"].as_dict()
    checks = {
        "slope_positive": fit["slope"] > 0,
        "r2": fit["r2"] >= cfg["min_r2"],
        "b_minus_stable": out["b_minus_variation"] < cfg["max_variation"],
    }
    return out["rows"], fit, checks, {"b_minus_variation": out["b_minus_variation"]}, {}


@experiment("bump-verify", (
    Param("delta", "float", 0.05, "support half-width", positive),
    Param("n_hat", "int", 10_000, "transform samples", positive),
    Param("hat_range", "float", 50.0, "transform sampled on [-hat_range, hat_range]", positive),
), "Compactly supported bump with nonnegative transform bounded below on [-1, 1].")
def run_bump_verify(cfg):
    z = cx.bump_zeta(cfg["delta"])
    info = cx.verify_bump(z, n_hat=cfg["n_hat"], hat_range=cfg["hat_range"])
    rows = [{"property": k, "value": float(v) if not isinstance(v, bool) else v} for k, v in info.items()]
    checks = {k: bool(info[k]) for k in ("support", "nonnegative", "lower_bound")}
    return rows, None, checks, {}, {}


# dispatch -----------------------------------------------------------------

def get(name: str) -> Experiment:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(sorted(REGISTRY))}") from None


def configure(name: str, path=None, overrides: dict | None = None) -> ExperimentConfig:
    exp = get(name)
    cfg = parse_config(name, exp.params, path, overrides)
    if exp.validate is not None:
        exp.validate(cfg)
    return cfg


def run(cfg: ExperimentConfig) -> ExperimentReport:
    exp = get(cfg.experiment)
    numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
    start = time.perf_counter()
    rows, fit, checks, extra, files = exp.func(cfg)
    checks = {k: bool(v) for k, v in checks.items()}
    wall = time.perf_counter() - start
    return ExperimentReport(cfg, build_id(), rows, checks, fit, extra, files, wall)
