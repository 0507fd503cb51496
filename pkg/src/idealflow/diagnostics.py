"""Verification drivers: identity suites, decay-rate fits, the length-bound
check, basin and gradient-inequality sweeps, and report writers."""

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from . import curve, energy, flow
from .errors import IdealFlowError, InsufficientData
from .records import CheckResult, DiagnosticsRecord
from .spectral import PeriodicField, derivative

__all__ = [
    "CheckResult",
    "DiagnosticsRecord",
    "identity_suite",
    "fit_decay_rate",
    "kosc_bound_check",
    "kosc_bound_from_series",
    "basin_sweep",
    "gradient_inequality_sweep",
    "spectrum_checks",
    "rate_check",
    "write_summary_json",
]

# identity tolerances (measured values are already normalised by their scale)
TOL_FIRST_VARIATION = 1e-5
TOL_QS = 1e-8
TOL_MEAN_N = 1e-10
TOL_BINOMIAL = 1e-8
TOL_HQ = 1e-8
TOL_MINKOWSKI = 1e-8
CMP_MAX_M = 12
RATE_TOLERANCE = 0.05
MIN_R_SQUARED = 0.999


def sample_seed(*keys):
    """Deterministic 63-bit seed for one sample of a sweep."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint64)[0] >> 1)


def worker_count():
    env = os.environ.get("IDEALFLOW_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _map(func, items, serial):
    items = list(items)
    workers = worker_count()
    if serial or workers == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


# -- identities ---------------------------------------------------------------------


def _random_phi(rng, n_modes, bandwidth=8):
    a = np.zeros(n_modes + 1, dtype=complex)
    n = np.arange(1, bandwidth + 1)
    a[1 : bandwidth + 1] = (rng.standard_normal(bandwidth) + 1j * rng.standard_normal(bandwidth)) / n**2
    a[0] = rng.standard_normal()
    return PeriodicField(a)


def _draw_state(rng, omega, lo=1e-4, hi=0.5, bandwidth=curve.DEFAULT_BANDWIDTH):
    target = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return curve.random_closed_state(omega, target, seed=int(rng.integers(2**63)), bandwidth=bandwidth)


def identity_residuals(state, m, phi):
    """Normalised residuals of every identity for one closed state."""
    k = state.k
    out = {}
    pc = curve.reconstruct(state).to_parametric()
    fd = energy.first_variation_fd_oracle(pc, phi, m, richardson=True)
    exact = -float(np.mean(energy.euler_lagrange(k, m).fine_values() * phi.fine_values()))
    out["first_variation"] = abs(fd - exact) / (1 + abs(exact))
    out["q_derivative"] = energy.q_derivative_residual(k, m) / (1 + energy.ck_norm(k, 2 * m + 2) ** 2)
    out["mean_N"] = energy.mean_n_relative_error(k, m)
    u = state.u
    out["binomial_identity"] = energy.check_binomial_diff_identity(u, m) / (1 + energy.ck_norm(u, 2 * m) ** 2)
    rc = curve.reconstruct(state)
    hs = derivative(rc.h, 1).fine_values() + (k * rc.q).fine_values()
    qs = derivative(rc.q, 1).fine_values() - 1.0 - (k * rc.h).fine_values()
    out["hq_identities"] = float(max(np.max(np.abs(hs)), np.max(np.abs(qs))))
    out["minkowski"] = abs((k * rc.h).mean + 1.0)
    return out


IDENTITY_TOLERANCES = {
    "first_variation": TOL_FIRST_VARIATION,
    "q_derivative": TOL_QS,
    "mean_N": TOL_MEAN_N,
    "binomial_identity": TOL_BINOMIAL,
    "hq_identities": TOL_HQ,
    "minkowski": TOL_MINKOWSKI,
}


def cmp_check(max_m=CMP_MAX_M):
    bad = [(m, p) for m in range(1, max_m + 1) for p in range(m)
           if energy.binomial_coefficient_Cmp(m, p) != (-1) ** p]
    return CheckResult("C_mp", not bad, float(len(bad)), 0.0, 0.0,
                       f"m <= {max_m}" + (f"; failures {bad}" if bad else ""))


def identity_suite(m_list=(1, 2), omega_list=(1, 2), n_samples=20, seed=0):
    """One :class:`CheckResult` per identity per ``(m, omega)`` class, plus the
    integer check of ``C_{m,p}``; empty when ``n_samples`` is 0."""
    if n_samples <= 0:
        return []
    results = []
    for m in m_list:
        for omega in omega_list:
            worst = {name: (0.0, None) for name in IDENTITY_TOLERANCES}
            for i in range(n_samples):
                rng = np.random.default_rng(sample_seed(seed, m, omega + 1000, i))
                state = _draw_state(rng, omega)
                phi = _random_phi(rng, state.n_modes)
                for name, value in identity_residuals(state, m, phi).items():
                    if not value <= worst[name][0]:  # larger, or NaN
                        worst[name] = (value, (i, state))
            for name, tol in IDENTITY_TOLERANCES.items():
                value, where = worst[name]
                passed = bool(value <= tol)
                ctx = f"m={m} omega={omega} samples={n_samples}"
                if not passed and where is not None:
                    ctx += f" worst sample {where[0]}: " + json.dumps(curve.state_to_dict(where[1]))
                results.append(CheckResult(f"{name}[m={m},omega={omega}]", passed, float(value), tol, 0.0, ctx))
    results.append(cmp_check())
    return results


# -- rates and bounds --------------------------------------------------------------------


def fit_decay_rate(series, tail_fraction=0.25):
    """Least-squares decay rate of ``log(value)`` against ``tau`` over the tail.

    Returns ``(rate, r_squared)``; ``rate`` is minus the fitted slope.
    """
    data = np.asarray(series, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise InsufficientData("series must be a sequence of (tau, value) pairs")
    n_tail = int(math.ceil(tail_fraction * len(data)))
    tail = data[len(data) - n_tail:]
    tail = tail[tail[:, 1] > 1e-300]
    if len(tail) < 10:
        raise InsufficientData(f"only {len(tail)} usable points in the tail")
    x, y = tail[:, 0], np.log(tail[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - fit) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(-slope), r2


def kosc_bound_from_series(m, t, length, kosc_values, energy0):
    """Ratio of ``K_osc(t)`` to the length bound at every record (unnormalised data)."""
    t = np.asarray(t, dtype=float)
    length = np.asarray(length, dtype=float)
    lhs = np.asarray(kosc_values, dtype=float)
    L_star = float(np.max(length))
    if energy0 <= 0:
        rhs = np.zeros_like(lhs)
    else:
        rhs = 2 * (2 * np.pi) ** (-2 * m) * L_star ** (2 * m + 1) / (
            1.0 / energy0 + (2 * m + 1) ** 2 * L_star ** (-3) * t)
    return lhs, rhs


def kosc_bound_check(traj, L0=1.0, rel_tol=1e-9):
    """Check the length bound on ``K_osc`` at every record of a trajectory."""
    m = traj.config.m
    samples = flow.unnormalised_series(traj, L0)
    lhs, rhs = kosc_bound_from_series(
        m, [s.t for s in samples], [s.length for s in samples], [s.kosc for s in samples], samples[0].energy)
    return _bound_result("kosc_length_bound", lhs, rhs, rel_tol)


def _bound_result(name, lhs, rhs, rel_tol):
    ok = lhs <= rhs * (1 + rel_tol) + 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    worst = int(np.argmax(ratios))
    return CheckResult(name, bool(np.all(ok)), float(ratios[worst]), 1.0, rel_tol,
                       f"{int(np.sum(~ok))} of {len(lhs)} records violate; worst record {worst}")


def spectrum_checks(m_list=(1, 2), omega_list=(1, 2), n_max=8, rel_tol=1e-3):
    results = []
    for m in m_list:
        for omega in omega_list:
            rates = flow.linear_rates(m, omega)
            lam_min = float(np.min(rates[rates > 0]))
            worst, worst_null = 0.0, 0.0
            for n, rate in flow.linearized_spectrum_numeric(m, omega, n_max):
                if rates[n] == 0:
                    worst_null = max(worst_null, abs(rate) / lam_min)
                else:
                    worst = max(worst, abs(rate / rates[n] - 1))
            ctx = f"m={m} omega={omega} n<={n_max}"
            results.append(CheckResult(f"linear_rates[m={m},omega={omega}]", worst <= rel_tol, worst, rel_tol, 0.0, ctx))
            results.append(CheckResult(f"resonant_null[m={m},omega={omega}]", worst_null <= rel_tol, worst_null,
                                       rel_tol, 0.0, ctx))
    return results


def rate_check(m=1, omega=1, kosc0=1e-4, seed=0, cfg=None):
    """Fitted tail decay rate of ``kosc`` against ``2 mu`` for one run."""
    cfg = cfg or flow.FlowConfig(m=m, omega=omega)
    state = curve.random_closed_state(omega, kosc0, seed=sample_seed(seed, m, omega))
    traj = flow.evolve(state, cfg)
    rate, r2 = fit_decay_rate(list(zip(traj.series("tau"), traj.series("kosc"))))
    target = 2 * flow.mu(m, omega)[0]
    rel = abs(rate / target - 1)
    ctx = f"m={m} omega={omega} kosc0={kosc0:g} rate={rate!r} 2mu={target!r} r2={r2!r}"
    return CheckResult(f"kosc_rate[m={m},omega={omega}]", bool(rel <= RATE_TOLERANCE and r2 >= MIN_R_SQUARED),
                       rel, 0.0, RATE_TOLERANCE, ctx), traj


# -- sweeps ----------------------------------------------------------------------------


def wilson_interval(successes, n, confidence=0.95):
    if n == 0:
        return float("nan"), float("nan")
    ci = binomtest(int(successes), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class SweepTable:
    columns: tuple
    rows: list
    summary: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_fmt(row[c]) for c in self.columns])


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


BASIN_COLUMNS = ("level", "kosc0", "runs", "converged", "fraction", "wilson_low", "wilson_high",
                 "mean_rate", "mean_length_ratio")


def _basin_run(job):
    m, omega, level, run_seed, cfg_kwargs = job
    cfg = flow.FlowConfig(m=m, omega=omega, **cfg_kwargs)
    try:
        state = curve.random_closed_state(omega, level, seed=run_seed, n_modes=cfg.n_modes)
        traj = flow.evolve(state, cfg)
    except IdealFlowError:
        return False, float("nan"), float("nan")
    final = traj.records[-1]
    converged = bool(traj.converged and final.kosc <= 1e-10)
    try:
        rate = fit_decay_rate(list(zip(traj.series("tau"), traj.series("kosc"))))[0]
    except InsufficientData:
        rate = float("nan")
    return converged, rate, final.length / traj.records[0].length


def basin_sweep(m, omega, kosc_grid, samples_per_level, seed=0, serial=True, **cfg_kwargs):
    """Convergence statistics of the flow per initial ``kosc`` level."""
    grid = [float(x) for x in kosc_grid]
    if not grid:
        raise ValueError("empty kosc grid")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("kosc grid must be ascending")
    jobs = [(m, omega, level, sample_seed(seed, li, i), cfg_kwargs)
            for li, level in enumerate(grid) for i in range(samples_per_level)]
    outcomes = _map(_basin_run, jobs, serial)
    rows = []
    for li, level in enumerate(grid):
        chunk = outcomes[li * samples_per_level:(li + 1) * samples_per_level]
        conv = [o for o in chunk if o[0]]
        lo, hi = wilson_interval(len(conv), len(chunk))
        rates = [o[1] for o in conv if np.isfinite(o[1])]
        ratios = [o[2] for o in conv if np.isfinite(o[2])]
        rows.append({
            "level": li,
            "kosc0": level,
            "runs": len(chunk),
            "converged": len(conv),
            "fraction": len(conv) / len(chunk) if chunk else float("nan"),
            "wilson_low": lo,
            "wilson_high": hi,
            "mean_rate": float(np.mean(rates)) if rates else float("nan"),
            "mean_length_ratio": float(np.mean(ratios)) if ratios else float("nan"),
        })
    return SweepTable(BASIN_COLUMNS, rows, {"m": m, "omega": omega, "seed": seed})


GRADIENT_COLUMNS = energy.SWEEP_COLUMNS + ("degenerate",)


def _gradient_sample(job):
    m, omega, sample_id, run_seed, lo, hi, bandwidth = job
    rng = np.random.default_rng(run_seed)
    if sample_id == 0:
        state = curve.CurvatureState.circle(omega)
    else:
        state = _draw_state(rng, omega, lo, hi, bandwidth)
    k = state.k
    _, _, weak = energy.weak_gradient_check(k, m)
    ratio, degenerate = energy.gradient_ratio(k, m, omega)
    rep = energy.energy_report(k, m)
    row = {
        "sample_id": sample_id, "m": m, "omega": omega, "kosc": curve.kosc(state),
        "E_m": rep.E_m, "grad_norm_sq": rep.grad_norm_sq, "weak_ratio": weak,
        "gradient_ratio": ratio, "degenerate": degenerate,
    }
    return row, curve.state_to_dict(state)


def gradient_inequality_sweep(m, omega, n_samples, seed=0, kosc_range=(1e-6, 0.5),
                              bandwidth=curve.DEFAULT_BANDWIDTH, serial=True):
    """Weak ratio and gradient ratio per sample; sample 0 is the circle.

    The summary holds the largest weak ratio and the smallest non-degenerate
    gradient ratio together with the state attaining it.
    """
    jobs = [(m, omega, i, sample_seed(seed, m, omega, i), kosc_range[0], kosc_range[1], bandwidth)
            for i in range(n_samples)]
    out = _map(_gradient_sample, jobs, serial)
    out.sort(key=lambda item: item[0]["sample_id"])
    rows = [r for r, _ in out]
    live = [(r["gradient_ratio"], r["sample_id"], s) for r, s in out if not r["degenerate"]]
    summary = {
        "m": m, "omega": omega, "seed": seed, "n_samples": n_samples,
        "max_weak_ratio": max((r["weak_ratio"] for r in rows), default=0.0),
        "weak_violations": sum(1 for r in rows if r["weak_ratio"] > 1),
    }
    if live:
        best = min(live, key=lambda t: t[0])
        summary.update(min_gradient_ratio=best[0], argmin_sample=best[1], argmin_state=best[2])
    return SweepTable(GRADIENT_COLUMNS, rows, summary)


def inequality_checks(m_list=(1, 2), omega_list=(1,), n_samples=200, seed=0, serial=True):
    results = []
    for m in m_list:
        for omega in omega_list:
            table = gradient_inequality_sweep(m, omega, n_samples, seed, serial=serial)
            s = table.summary
            ctx = f"m={m} omega={omega} samples={n_samples}"
            results.append(CheckResult(f"weak_gradient[m={m},omega={omega}]", s["weak_violations"] == 0,
                                       float(s["max_weak_ratio"]), 1.0, 0.0, ctx))
            cmin = float(s.get("min_gradient_ratio", float("nan")))
            results.append(CheckResult(f"gradient_constant[m={m},omega={omega}]", bool(cmin > 0), cmin, 0.0, 0.0,
                                       ctx + f" argmin sample {s.get('argmin_sample')}"))
    return results


# -- reports ---------------------------------------------------------------------------


def write_summary_json(path, suite, results):
    passed = [r.name for r in results if r.passed]
    failed = [r.name for r in results if not r.passed]
    summary = {
        "suite": suite,
        "passed": passed,
        "failed": failed,
        "worst_residuals": {r.name: r.measured for r in results},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def write_checks_csv(path, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "passed", "measured", "bound", "tolerance", "context"])
        for r in results:
            writer.writerow([r.name, str(r.passed), repr(float(r.measured)), repr(float(r.bound)),
                             repr(float(r.tolerance)), r.context])
