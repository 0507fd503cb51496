"""Gauge-fixed, length-normalised m-ideal flow in curvature coordinates.

The curvature fluctuation ``u`` of the unit-length representative evolves by

    du/dtau = (F_s + beta k)_s,    F = K_m + Lambda h,    beta_s = k F,

with ``Lambda = int k K_m ds`` and ``beta`` of zero mean.  Alongside ``u`` the
integrator carries the phase (``dphase/dtau = int beta k ds``), the log-length
of the unnormalised curve (``dlogL/dtau = -Lambda``) and physical time
(``dt/dtau = L^(2m+4)``).  The stiff linear part is the linearisation at the
circle, ``-lambda_n`` on mode ``n``, integrated exactly by exponential time
differencing.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .curve import (
    CLOSURE_TOL,
    ClosureChart,
    CurvatureState,
    closure_residual,
    kosc,
    project_to_closure,
    reconstruct,
    reconstruct_fine,
    resonant_mode_norm,
)
from .energy import energy, euler_lagrange
from .errors import NewtonDiverged, NotClosed, NotConverged, StepRejected, UnderResolved
from .records import RECORD_COLUMNS, DiagnosticsRecord
from .spectral import (
    DEFAULT_MODES,
    PeriodicField,
    derivative,
    fine_to_field,
    is_resolved,
    mean_zero_primitive,
    sobolev_seminorm_sq,
)

INTEGRATORS = ("ETD-RK4", "ETD-Euler")
CONTOUR_POINTS = 32
ENERGY_SLACK = 1e-8


# -- linear theory ----------------------------------------------------------------


def linear_rates(m, omega, n_modes=DEFAULT_MODES):
    """Decay rates ``lambda_n`` of curvature mode ``n`` at the ``omega``-circle, ``n = 0..n_modes``."""
    n = np.arange(n_modes + 1, dtype=float)
    rates = (2 * np.pi) ** (2 * m + 4) * n ** (2 * m) * (n**2 - float(omega) ** 2) ** 2
    rates[0] = 0.0
    if abs(omega) <= n_modes:
        rates[abs(omega)] = 0.0
    return rates


def linear_rate(m, omega, n):
    n = abs(int(n))
    if n == 0 or n == abs(omega):
        return 0.0
    return (2 * np.pi) ** (2 * m + 4) * n ** (2 * m) * (n * n - omega * omega) ** 2


def mu(m, omega, n_modes=None):
    """Smallest non-resonant rate and the mode attaining it.

    Rates grow monotonically for ``|n| > |omega|``, so scanning ``|n| <= 2|omega| + 2``
    suffices; ``n_modes`` caps the scan when given.
    """
    if omega == 0:
        raise ValueError("turning number must be nonzero")
    top = 2 * abs(omega) + 2
    if n_modes is not None:
        top = min(top, n_modes)
    best = None
    for n in range(1, top + 1):
        if n == abs(omega):
            continue
        rate = linear_rate(m, omega, n)
        if best is None or rate < best[0]:
            best = (rate, n)
    return best


# -- the vector field -------------------------------------------------------------


@dataclass(frozen=True)
class FieldEvaluation:
    """Everything the flow needs from one evaluation at a curvature fluctuation."""

    rhs: PeriodicField
    K: PeriodicField
    F: PeriodicField
    beta: PeriodicField
    h: PeriodicField
    Lambda: float
    Omega: float
    E_m: float
    grad_norm_sq: float


def evaluate_field(u, m, omega):
    """Evaluate the normalised flow at ``u`` without checking closure.

    The centred curve is rebuilt from ``T`` minus its mean, so slightly open
    intermediate stages of a time step remain well defined.
    """
    n = u.n_modes
    k = u + 2 * np.pi * omega
    _, T, eta = reconstruct_fine(u, omega)
    h = fine_to_field(np.real(eta * np.conj(1j * T)), n)
    K = euler_lagrange(k, m)
    Lambda = (k * K).mean
    F = K + Lambda * h
    kF = k * F
    beta = mean_zero_primitive(kF.without_mean())
    bk = beta * k
    rhs = derivative(derivative(F, 1) + bk, 1)
    return FieldEvaluation(
        rhs=rhs,
        K=K,
        F=F,
        beta=beta,
        h=h,
        Lambda=float(Lambda),
        Omega=float(bk.mean),
        E_m=energy(k, m),
        grad_norm_sq=sobolev_seminorm_sq(K, 0),
    )


def _require_closed(state, closure_tol):
    res = abs(closure_residual(state.u, state.omega))
    if res > closure_tol:
        raise NotClosed(f"closure residual {res:.3e} > {closure_tol:.1e}")


def normal_speed(state, m, closure_tol=CLOSURE_TOL):
    """Return ``(F, Lambda)`` with ``F = K_m + Lambda h`` and ``Lambda = int k K_m ds``."""
    _require_closed(state, closure_tol)
    ev = evaluate_field(state.u, m, state.omega)
    return ev.F, ev.Lambda


def curvature_rhs(state, m, closure_tol=CLOSURE_TOL):
    """``du/dtau = (F_s + beta k)_s`` for a closed state."""
    _require_closed(state, closure_tol)
    return evaluate_field(state.u, m, state.omega).rhs


def rotation_rate(state, m, closure_tol=CLOSURE_TOL):
    """Angular velocity ``Omega = int beta k ds`` of the phase."""
    _require_closed(state, closure_tol)
    return evaluate_field(state.u, m, state.omega).Omega


def initial_phase(theta, omega):
    """Phase of a lifted tangent angle sampled on a uniform arclength grid."""
    theta = np.asarray(theta, dtype=float)
    s = np.arange(theta.size) / theta.size
    return float(np.mean(theta - 2 * np.pi * omega * s)) % (2 * np.pi)


# -- configuration and state --------------------------------------------------------


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings.

    ``dt`` is a normalised-time step or ``"auto"``; in auto mode the step is
    ``dt_safety / r`` where ``r`` is the largest of ``2 mu``, the logarithmic
    energy decay rate ``(int K_m^2 + (2m+1) Lambda E_m) / E_m`` and twice the
    third-moment rate of the spectrum (see ``_auto_dt``).
    ``t_end = "auto"`` allows ``80 / (2 mu)`` of normalised time.
    """

    m: int = 1
    omega: int = 1
    n_modes: int = DEFAULT_MODES
    dt: object = "auto"
    t_end: object = "auto"
    integrator: str = "ETD-RK4"
    reproject_every: int = 1
    closure_tol: float = CLOSURE_TOL
    record_every: int = 1
    dt_safety: float = 0.02
    converged_kosc: float = 1e-20
    max_steps: int = 200_000
    max_halvings: int = 6
    check_energy: bool = True
    monitor: bool = True

    def __post_init__(self):
        if int(self.omega) == 0:
            raise ValueError("turning number must be nonzero")
        if int(self.m) < 1:
            raise ValueError("the flow requires m >= 1")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.dt != "auto" and not float(self.dt) > 0:
            raise ValueError("dt must be positive or 'auto'")
        if self.t_end != "auto" and not float(self.t_end) > 0:
            raise ValueError("t_end must be positive or 'auto'")
        for name in ("reproject_every", "record_every", "max_steps", "n_modes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if abs(int(self.omega)) > int(self.n_modes):
            raise ValueError("resonant mode outside the retained band")
        if not self.dt_safety > 0:
            raise ValueError("dt_safety must be positive")

    @property
    def mu(self):
        return mu(self.m, self.omega, self.n_modes)[0]

    @property
    def lambda_max(self):
        return float(np.max(linear_rates(self.m, self.omega, self.n_modes)))

    def end_time(self):
        return 80.0 / (2 * self.mu) if self.t_end == "auto" else float(self.t_end)

    def as_dict(self):
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class FlowState:
    state: CurvatureState
    v: PeriodicField
    correction: PeriodicField
    log_length: float = 0.0
    physical_time: float = 0.0
    tau: float = 0.0

    @classmethod
    def from_state(cls, state, chart, log_length=0.0, physical_time=0.0, tau=0.0):
        v = chart.project_x(state.u)
        return cls(state, v, state.u - v, float(log_length), float(physical_time), float(tau))

    @property
    def length(self):
        return math.exp(self.log_length)


@dataclass
class Trajectory:
    config: FlowConfig
    taus: list = field(default_factory=list)
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    converged: bool = False
    steps: int = 0

    def append(self, fs, record):
        if self.taus and not fs.tau > self.taus[-1]:
            raise ValueError("trajectory times must increase")
        self.taus.append(fs.tau)
        self.states.append(fs)
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def final(self):
        return self.states[-1]

    def series(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(RECORD_COLUMNS)
            for rec in self.records:
                writer.writerow([repr(float(v)) for v in rec.as_row()])


def make_record(fs, m, evaluation=None):
    st = fs.state
    ev = evaluation if evaluation is not None else evaluate_field(st.u, m, st.omega)
    return DiagnosticsRecord(
        tau=fs.tau,
        E_m=ev.E_m,
        kosc=kosc(st),
        Lambda=ev.Lambda,
        grad_norm_sq=ev.grad_norm_sq,
        closure_residual=abs(closure_residual(st.u, st.omega)),
        length=fs.length,
        physical_time=fs.physical_time,
        resonant_norm=resonant_mode_norm(st),
    )


# -- exponential time differencing --------------------------------------------------


def etd_coefficients(rates, dt, contour_points=CONTOUR_POINTS):
    """Exponentials and ETD-RK4 weights for the diagonal operator ``-rates``.

    Small ``rates * dt`` is handled by averaging over a circle of radius one in
    the complex plane around each eigenvalue, which avoids cancellation.
    """
    L = -np.asarray(rates, dtype=float) * dt
    r = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    LR = L[:, None] + r[None, :]
    E = np.exp(L)
    E2 = np.exp(L / 2)
    Q = dt * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
    eLR = np.exp(LR)
    f1 = dt * np.real(np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=1))
    f2 = dt * np.real(np.mean((2 + LR + eLR * (-2 + LR)) / LR**3, axis=1))
    f3 = dt * np.real(np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=1))
    phi1 = dt * np.real(np.mean((eLR - 1) / LR, axis=1))
    return {"E": E, "E2": E2, "Q": Q, "f1": f1, "f2": f2, "f3": f3, "phi1": phi1}


def _nonlinear(ev, u, rates):
    # remainder after removing the circle linearisation
    return ev.rhs.coeffs + rates * u.coeffs


def _advance(u, ev0, m, omega, rates, dt, integrator):
    coef = etd_coefficients(rates, dt)
    a0 = u.coeffs
    N0 = _nonlinear(ev0, u, rates)
    if integrator == "ETD-Euler":
        return PeriodicField(coef["E"] * a0 + coef["phi1"] * N0)
    E2, Q = coef["E2"], coef["Q"]
    a = PeriodicField(E2 * a0 + Q * N0)
    Na = _nonlinear(evaluate_field(a, m, omega), a, rates)
    b = PeriodicField(E2 * a0 + Q * Na)
    Nb = _nonlinear(evaluate_field(b, m, omega), b, rates)
    c = PeriodicField(E2 * a.coeffs + Q * (2 * Nb - N0))
    Nc = _nonlinear(evaluate_field(c, m, omega), c, rates)
    return PeriodicField(coef["E"] * a0 + coef["f1"] * N0 + 2 * coef["f2"] * (Na + Nb) + coef["f3"] * Nc)


def step(fs, dt, cfg, chart=None, evaluation=None, step_index=0):
    """Advance one step of size ``dt``; returns ``(new_state, new_evaluation)``.

    ``evaluation`` may carry the field evaluation at ``fs`` to avoid
    recomputing it.  Raises :class:`StepRejected` when ``E_m`` rises beyond what
    the dilation term ``-(2m+1) Lambda E_m`` allows.
    """
    m, omega = cfg.m, cfg.omega
    if not dt > 0:
        raise ValueError("dt must be positive")
    chart = ClosureChart(omega, cfg.n_modes) if chart is None else chart
    rates = linear_rates(m, omega, cfg.n_modes)
    u = fs.state.u
    ev0 = evaluation if evaluation is not None else evaluate_field(u, m, omega)
    new = _advance(u, ev0, m, omega, rates, dt, cfg.integrator)
    a = new.coeffs.copy()
    a[0] = 0.0
    new = PeriodicField(a)
    if (step_index + 1) % cfg.reproject_every == 0:
        new = project_to_closure(new, omega, chart)
    if cfg.monitor and not is_resolved(new):
        raise UnderResolved("curvature fluctuation is not spectrally resolved")
    ev1 = evaluate_field(new, m, omega)
    if cfg.check_energy:
        dilation = (2 * m + 1) * 0.5 * dt * (ev0.Lambda * ev0.E_m + ev1.Lambda * ev1.E_m)
        excess = ev1.E_m - ev0.E_m + dilation
        if excess > ENERGY_SLACK * (1 + ev0.E_m):
            raise StepRejected(f"energy rose by {excess:.3e} beyond the dilation term")
    phase = fs.state.phase + 0.5 * dt * (ev0.Omega + ev1.Omega)
    log_length = fs.log_length - 0.5 * dt * (ev0.Lambda + ev1.Lambda)
    p = 2 * m + 4
    physical_time = fs.physical_time + 0.5 * dt * (math.exp(p * fs.log_length) + math.exp(p * log_length))
    state = CurvatureState(omega, new, phase)
    out = FlowState.from_state(state, chart, log_length, physical_time, fs.tau + dt)
    return out, ev1


def _auto_dt(cfg, u, ev, rates, two_mu):
    # two controls: the logarithmic decay rate of E_m, and the third-moment rate
    # sqrt(sum |a_n|^2 lambda_n^3 / sum |a_n|^2 lambda_n) that bounds the error of
    # differencing E_m along the recorded series
    rate = two_mu
    if ev.E_m > 0:
        r = (ev.grad_norm_sq + (2 * cfg.m + 1) * ev.Lambda * ev.E_m) / ev.E_m
        if np.isfinite(r):
            rate = max(rate, abs(r))
    w = np.abs(u.coeffs) ** 2
    first = float(np.sum(w * rates))
    if first > 0:
        rate = max(rate, 2 * math.sqrt(float(np.sum(w * rates**3)) / first))
    return cfg.dt_safety / rate


def evolve(initial, cfg, log_length=0.0):
    """Integrate from a closed state until ``tau >= t_end`` or ``kosc < converged_kosc``."""
    if initial.omega != cfg.omega:
        raise ValueError("initial turning number differs from the configuration")
    if initial.n_modes != cfg.n_modes:
        raise ValueError("initial band differs from the configuration")
    _require_closed(initial, cfg.closure_tol)
    chart = ClosureChart(cfg.omega, cfg.n_modes)
    fs = FlowState.from_state(initial, chart, log_length)
    ev = evaluate_field(fs.state.u, cfg.m, cfg.omega)
    traj = Trajectory(cfg)
    traj.append(fs, make_record(fs, cfg.m, ev))
    t_end = cfg.end_time()
    two_mu = 2 * cfg.mu
    rates = linear_rates(cfg.m, cfg.omega, cfg.n_modes)
    n = 0
    while True:
        if kosc(fs.state) < cfg.converged_kosc:
            traj.converged = True
            break
        if fs.tau >= t_end * (1 - 1e-12) or n >= cfg.max_steps:
            break
        dt = _auto_dt(cfg, fs.state.u, ev, rates, two_mu) if cfg.dt == "auto" else float(cfg.dt)
        dt = min(dt, t_end - fs.tau)
        for attempt in range(cfg.max_halvings + 1):
            try:
                fs_new, ev_new = step(fs, dt, cfg, chart, ev, n)
                break
            except StepRejected:
                if attempt == cfg.max_halvings:
                    raise
                dt *= 0.5
        fs, ev = fs_new, ev_new
        n += 1
        if n % cfg.record_every == 0:
            traj.append(fs, make_record(fs, cfg.m, ev))
    if traj.taus[-1] != fs.tau:
        traj.append(fs, make_record(fs, cfg.m, ev))
    traj.steps = n
    return traj


# -- unnormalised reconstruction ----------------------------------------------------


@dataclass(frozen=True)
class UnnormalisedSample:
    t: float
    length: float
    energy: float
    kosc: float


def unnormalised_series(traj, L0=1.0):
    """Physical time, length, ``E_m`` and ``K_osc`` of the unnormalised flow."""
    m = traj.config.m
    ll0 = traj.states[0].log_length
    p = 2 * m + 4
    scale_t = L0**p * math.exp(-p * ll0)
    out = []
    for fs, rec in zip(traj.states, traj.records):
        L = L0 * math.exp(fs.log_length - ll0)
        out.append(UnnormalisedSample(scale_t * fs.physical_time, L, L ** (-(2 * m + 1)) * rec.E_m, rec.kosc))
    return out


def unnormalised_trajectory(traj, L0=1.0):
    """List of ``(t, L, points)`` with ``points = L * eta`` (barycentre at the origin)."""
    out = []
    for sample, fs in zip(unnormalised_series(traj, L0), traj.states):
        curve = reconstruct(fs.state, closure_tol=max(traj.config.closure_tol, 1e-10))
        out.append((sample.t, sample.length, sample.length * curve.eta))
    return out


# -- linearised spectrum and critical points ------------------------------------------


def linearized_spectrum_numeric(m, omega, n_max, eps=1e-6, n_modes=DEFAULT_MODES):
    """Numerical decay rates of modes ``1..n_max`` at the ``omega``-circle.

    The rate of mode ``n`` is the Rayleigh quotient of the centred difference of
    the vector field along ``cos(2 pi n s)``; off resonance the perturbations are
    projected to closure first.  Positive numbers are decay rates, so they
    compare directly with :func:`linear_rates`.
    """
    if n_max > n_modes // 4:
        raise ValueError("n_max must not exceed n_modes / 4")
    chart = ClosureChart(omega, n_modes)
    out = []
    for n in range(1, n_max + 1):
        mode = PeriodicField.fourier_mode(n, 1.0, "cos", n_modes)
        plus, minus = mode * eps, mode * (-eps)
        if n != abs(omega):
            plus = project_to_closure(plus, omega, chart)
            minus = project_to_closure(minus, omega, chart)
        dr = (evaluate_field(plus, m, omega).rhs - evaluate_field(minus, m, omega).rhs) / (2 * eps)
        rate = -float(np.real(dr.coeffs[n] / mode.coeffs[n]))
        out.append((n, rate))
    return out


@dataclass(frozen=True)
class CriticalPointResult:
    state: CurvatureState
    grad_norm: float
    iterations: int
    is_circle: bool


def critical_point_search(m, omega, seed_state, bandwidth=None, max_iter=60, tol=1e-10,
                          circle_kosc=1e-12):
    """Damped Gauss-Newton search for a zero of ``K_m`` on the closed curves.

    The unknowns are the chart coordinates ``v`` (non-resonant modes up to
    ``bandwidth``); closure is imposed through the chart.  The residual is the
    full spectrum of ``K_m`` weighted by ``1 / (1 + (2 pi n)^(2m+2))``.
    """
    if seed_state.omega != omega:
        raise ValueError("seed turning number differs from omega")
    n_modes = seed_state.n_modes
    chart = ClosureChart(omega, n_modes)
    if bandwidth is None:
        nz = np.nonzero(np.abs(seed_state.u.coeffs) > 0)[0]
        bandwidth = int(nz.max()) if nz.size else 1
    bandwidth = max(1, min(bandwidth, n_modes))
    idx = np.array([n for n in range(1, bandwidth + 1) if n != abs(omega)], dtype=int)
    weights = 1.0 / (1.0 + (2 * np.pi * np.arange(n_modes + 1)) ** (2 * m + 2))
    kappa = 2 * np.pi * omega

    def to_field(x):
        a = np.zeros(n_modes + 1, dtype=complex)
        a[idx] = x[: idx.size] + 1j * x[idx.size:]
        return project_to_closure(PeriodicField(a), omega, chart)

    def residual(x):
        u = to_field(x)
        K = euler_lagrange(u + kappa, m)
        w = K.coeffs * weights
        return np.concatenate([w.real, w.imag[1:]]), K

    a0 = chart.project_x(seed_state.u).coeffs
    x = np.concatenate([a0[idx].real, a0[idx].imag])
    r, K = residual(x)
    for it in range(max_iter + 1):
        gnorm = float(np.sqrt(sobolev_seminorm_sq(K, 0)))
        if gnorm <= tol:
            state = CurvatureState(omega, to_field(x), seed_state.phase)
            return CriticalPointResult(state, gnorm, it, kosc(state) <= circle_kosc)
        if it == max_iter:
            break
        scale = max(float(np.linalg.norm(x)), 1e-300)
        h = 1e-7 * scale
        J = np.empty((r.size, x.size))
        for j in range(x.size):
            xp = x.copy()
            xp[j] += h
            J[:, j] = (residual(xp)[0] - r) / h
        delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        rn = float(np.linalg.norm(r))
        for _ in range(30):
            try:
                r_new, K_new = residual(x + t * delta)
            except NewtonDiverged:
                t *= 0.5
                continue
            if np.linalg.norm(r_new) < rn:
                break
            t *= 0.5
        else:
            break
        x = x + t * delta
        r, K = r_new, K_new
    raise NotConverged(f"|K_m| = {gnorm:.3e} after {it} iterations")
