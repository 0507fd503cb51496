"""Closed unit-length plane curves described by turning number, curvature
fluctuation and phase, with the closure constraint, its chart, and
reconstruction of the centred embedded representative.

Conventions: ``kappa = 2 pi omega``, ``k = kappa + u`` with ``mean(u) = 0``,
tangent angle ``theta(s) = phase + kappa s + P u(s)`` where ``P`` is the
mean-zero primitive, ``T = (cos theta, sin theta)`` and ``N`` is ``T`` turned
by +pi/2.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartSingular, MeanNotZero, NewtonDiverged, NotClosed, NotInteger
from .spectral import (
    DEFAULT_MODES,
    OVERSAMPLE,
    PeriodicField,
    fine_to_field,
    mean_zero_primitive,
    sobolev_seminorm_sq,
)

CLOSURE_TOL = 1e-10
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
CHART_RADIUS = 1.0
DEFAULT_BANDWIDTH = 32


def _check_omega(omega):
    omega = int(omega)
    if omega == 0:
        raise ValueError("turning number must be nonzero")
    return omega


@dataclass(frozen=True)
class CurvatureState:
    """Intrinsic description of a closed unit-length curve."""

    omega: int
    u: PeriodicField
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "omega", _check_omega(self.omega))
        object.__setattr__(self, "phase", float(self.phase) % (2 * np.pi))

    @property
    def kappa(self):
        return 2 * np.pi * self.omega

    @property
    def k(self):
        return self.u + self.kappa

    @property
    def n_modes(self):
        return self.u.n_modes

    def with_u(self, u):
        return CurvatureState(self.omega, u, self.phase)

    def with_phase(self, phase):
        return CurvatureState(self.omega, self.u, phase)

    @classmethod
    def circle(cls, omega, n_modes=DEFAULT_MODES, phase=0.0):
        return cls(omega, PeriodicField.zeros(n_modes), phase)


# -- closure map --------------------------------------------------------------


def _fine_grid(n_modes):
    size = OVERSAMPLE * 2 * (n_modes + 1)
    return np.arange(size) / size


def _primitive_fine(u):
    return mean_zero_primitive(u).fine_values()


def tangent_angle_fine(u, omega, phase=0.0):
    """Tangent angle ``phase + kappa s + P u`` on the oversampled grid."""
    s = _fine_grid(u.n_modes)
    return phase + 2 * np.pi * omega * s + _primitive_fine(u)


def closure_residual(u, omega):
    """``C(u) = int_0^1 exp(i (kappa s + P u)) ds`` (complex)."""
    omega = _check_omega(omega)
    return complex(np.mean(np.exp(1j * tangent_angle_fine(u, omega))))


def closure_jacobian(u, omega, w):
    """Directional derivative ``DC(u)[w] = i int T P w ds``."""
    omega = _check_omega(omega)
    T = np.exp(1j * tangent_angle_fine(u, omega))
    return complex(1j * np.mean(T * _primitive_fine(w)))


class ClosureChart:
    """Splitting ``L^2_0 = X + E`` with ``E`` the two resonant Fourier modes.

    ``reference`` is an optional closed curvature fluctuation the chart is
    centred at; by default the chart is centred at the circle.
    """

    def __init__(self, omega, n_modes=DEFAULT_MODES, reference=None):
        self.omega = _check_omega(omega)
        self.n_modes = n_modes
        self.resonant = abs(self.omega)
        if self.resonant > n_modes:
            raise ValueError("resonant mode lies outside the retained band")
        self.reference = PeriodicField.zeros(n_modes) if reference is None else reference
        s = _fine_grid(n_modes)
        w = 2 * np.pi * self.resonant
        # fine-grid primitives of cos(w s) and sin(w s)
        self._prim_basis = (np.sin(w * s) / w, -np.cos(w * s) / w)
        self._s = s
        J = self.jacobian_matrix(self.reference)
        self.determinant = float(np.linalg.det(J))
        self.condition_number = float(np.linalg.cond(J))
        if abs(self.determinant) < 1e-6:
            raise ChartSingular(f"closure Jacobian determinant {self.determinant:.3e} at the reference")

    def basis(self):
        n = self.resonant
        return (
            PeriodicField.fourier_mode(n, 1.0, "cos", self.n_modes),
            PeriodicField.fourier_mode(n, 1.0, "sin", self.n_modes),
        )

    def coordinates(self, u):
        """E-coordinates ``(c1, c2)`` of ``u``: its resonant part is ``c1 cos + c2 sin``."""
        a = u.coeffs[self.resonant]
        return np.array([2 * a.real, -2 * a.imag])

    def embed(self, c):
        a = np.zeros(self.n_modes + 1, dtype=complex)
        a[self.resonant] = 0.5 * (c[0] - 1j * c[1])
        return PeriodicField(a)

    def project_x(self, u):
        """Orthogonal projection onto ``X``: drop the mean and the resonant modes."""
        a = u.coeffs.copy()
        a[0] = 0.0
        a[self.resonant] = 0.0
        return PeriodicField(a)

    def split(self, u):
        """Return ``(v, c)`` with ``u = reference + v + embed(c)``."""
        zeta = u - self.reference
        return self.project_x(zeta), self.coordinates(zeta)

    def jacobian_matrix(self, u):
        """Real 2x2 matrix of ``DC(u)`` restricted to ``E``."""
        theta = 2 * np.pi * self.omega * self._s + _primitive_fine(u)
        T = np.exp(1j * theta)
        cols = [1j * np.mean(T * p) for p in self._prim_basis]
        return np.array([[cols[0].real, cols[1].real], [cols[0].imag, cols[1].imag]])

    def solve(self, v, c0=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
        """Newton iteration for ``c`` with ``C(reference + v + embed(c)) = 0``.

        Returns ``(c, residual, iterations)``.
        """
        base = self.reference + v
        if abs(base.mean) > 1e-12 * max(base.max_abs(), 1.0):
            raise MeanNotZero("chart input must have zero mean")
        base_theta = 2 * np.pi * self.omega * self._s + _primitive_fine(base)
        p1, p2 = self._prim_basis
        # E-coordinates of the reference are part of ``base``; c is relative to it
        c = np.zeros(2) if c0 is None else np.array(c0, dtype=float)

        def evaluate(c):
            T = np.exp(1j * (base_theta + c[0] * p1 + c[1] * p2))
            r = np.mean(T)
            j1 = 1j * np.mean(T * p1)
            j2 = 1j * np.mean(T * p2)
            return r, np.array([[j1.real, j2.real], [j1.imag, j2.imag]])

        r, J = evaluate(c)
        for it in range(max_iter + 1):
            if abs(r) <= tol:
                return c, abs(r), it
            if it == max_iter:
                break
            det = np.linalg.det(J)
            if abs(det) < 1e-10:
                raise ChartSingular(f"closure Jacobian determinant {det:.3e}")
            delta = -np.linalg.solve(J, np.array([r.real, r.imag]))
            step = 1.0
            for _ in range(30):
                r_new, J_new = evaluate(c + step * delta)
                if abs(r_new) < abs(r):
                    break
                step *= 0.5
            else:
                break
            c = c + step * delta
            r, J = r_new, J_new
        raise NewtonDiverged(f"closure residual {abs(r):.3e} after {max_iter} Newton iterations")


def project_to_closure(u, omega, chart=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER,
                       chart_radius=CHART_RADIUS):
    """Return ``v + Phi(v)`` where ``v`` is the X-part of ``u`` and ``Phi(v)`` in E
    restores closure, ``|C| <= tol``."""
    omega = _check_omega(omega)
    if chart is None:
        chart = ClosureChart(omega, u.n_modes)
    elif chart.omega != omega or chart.n_modes != u.n_modes:
        raise ValueError("chart does not match turning number or band")
    if abs(u.mean) > 1e-12 * max(u.max_abs(), 1e-300):
        raise MeanNotZero(f"mean {u.mean:.3e} is not zero")
    v, c0 = chart.split(u)
    if (u - chart.reference).l2_norm() > chart_radius:
        raise NewtonDiverged(f"input L2 distance exceeds chart radius {chart_radius}")
    try:
        c, _, _ = chart.solve(v, c0, tol, max_iter)
    except NewtonDiverged:
        # warm start failed; Phi(0) = 0 makes the origin a safe fallback
        c, _, _ = chart.solve(v, None, tol, max_iter)
    return chart.reference + v + chart.embed(c)


# -- reconstruction -----------------------------------------------------------


@dataclass(frozen=True)
class ReconstructedCurve:
    """Centred unit-length representative sampled on the base grid."""

    s: np.ndarray
    eta: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    k: PeriodicField
    h: PeriodicField
    q: PeriodicField
    length: float = 1.0

    def to_parametric(self, scale=1.0):
        return ParametricCurve(scale * self.eta)


def _complex_primitive_fine(T):
    """Mean-zero primitive of complex samples on the unit period (mean dropped)."""
    size = T.size
    c = np.fft.fft(T) / size
    n = np.fft.fftfreq(size, d=1.0 / size)
    c[0] = 0.0
    c[1:] = c[1:] / (2j * np.pi * n[1:])
    c[size // 2] = 0.0
    return np.fft.ifft(c) * size


def reconstruct_fine(u, omega, phase=0.0):
    """Return ``(theta, T, eta)`` on the oversampled grid; ``T``, ``eta`` complex.

    The mean of ``T`` (the closure residual) is discarded before integration,
    so this also gives the nearest closed curve for slightly open states.
    """
    theta = tangent_angle_fine(u, omega, phase)
    T = np.exp(1j * theta)
    eta = _complex_primitive_fine(T)
    return theta, T, eta


def support_functions_fine(u, omega):
    """``h = eta . N`` and ``q = eta . T`` on the oversampled grid (phase-free)."""
    _, T, eta = reconstruct_fine(u, omega)
    h = np.real(eta * np.conj(1j * T))
    q = np.real(eta * np.conj(T))
    return h, q


def reconstruct(state, closure_tol=CLOSURE_TOL):
    """Centred unit-length curve for a closed curvature state."""
    u, omega = state.u, state.omega
    res = closure_residual(u, omega)
    if abs(res) > closure_tol:
        raise NotClosed(f"closure residual {abs(res):.3e} > {closure_tol:.1e}")
    _, T, eta = reconstruct_fine(u, omega, state.phase)
    N = 1j * T
    h = fine_to_field(np.real(eta * np.conj(N)), u.n_modes)
    q = fine_to_field(np.real(eta * np.conj(T)), u.n_modes)
    step = OVERSAMPLE
    as_xy = lambda z: np.column_stack([z.real, z.imag])[::step].copy()
    return ReconstructedCurve(
        s=u.grid,
        eta=as_xy(eta),
        tangent=as_xy(T),
        normal=as_xy(N),
        k=state.k,
        h=h,
        q=q,
    )


# -- general parametrised curves ------------------------------------------------


class ParametricCurve:
    """Closed plane curve sampled at ``x_j = j / M`` with arbitrary (nonzero) speed.

    Derivatives in ``x`` are spectral; the arclength derivative is
    ``|gamma'|^-1 d/dx``.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must have shape (M, 2)")
        self.points = pts
        self.size = pts.shape[0]
        self._n = np.fft.rfftfreq(self.size, d=1.0 / self.size)
        self._n_odd = self._n.copy()
        if self.size % 2 == 0:
            self._n_odd[-1] = 0.0
        d1 = self.dx(pts, 1)
        d2 = self.dx(pts, 2)
        self.speed = np.hypot(d1[:, 0], d1[:, 1])
        if np.min(self.speed) <= 0:
            raise ValueError("curve is not immersed (zero speed)")
        self.tangent = d1 / self.speed[:, None]
        self.normal = np.column_stack([-self.tangent[:, 1], self.tangent[:, 0]])
        self.curvature = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / self.speed**3

    @property
    def x(self):
        return np.arange(self.size) / self.size

    def dx(self, f, order=1):
        """Spectral ``d^order/dx^order`` of real samples (along axis 0)."""
        if order == 0:
            return f
        n = self._n_odd if order % 2 else self._n
        symbol = (2j * np.pi * n) ** order
        fcoef = np.fft.rfft(f, axis=0)
        if fcoef.ndim == 2:
            symbol = symbol[:, None]
        return np.fft.irfft(fcoef * symbol, n=self.size, axis=0)

    def ds(self, f, order=1):
        """Arclength derivative ``D^order f``."""
        for _ in range(order):
            f = self.dx(f, 1) / (self.speed if f.ndim == 1 else self.speed[:, None])
        return f

    def integrate(self, f):
        """``int f ds`` over the closed curve."""
        return float(np.mean(f * self.speed))

    @property
    def length(self):
        return float(np.mean(self.speed))

    def perturbed(self, phi, eps):
        """Normal variation ``gamma + eps * phi * N``."""
        return ParametricCurve(self.points + eps * np.asarray(phi)[:, None] * self.normal)

    def reparametrised(self, warp):
        """Resample at parameters ``x + warp(x)`` by spectral interpolation."""
        x = self.x
        targets = (x + warp(x)) % 1.0
        fcoef = np.fft.fft(self.points[:, 0] + 1j * self.points[:, 1]) / self.size
        n = np.fft.fftfreq(self.size, d=1.0 / self.size)
        if self.size % 2 == 0:
            fcoef[self.size // 2] = 0.0
        z = np.exp(2j * np.pi * np.outer(targets, n)) @ fcoef
        return ParametricCurve(np.column_stack([z.real, z.imag]))

    def curvature_field(self, n_modes=None):
        """Curvature as a :class:`PeriodicField` in the curve parameter."""
        return PeriodicField.from_values(self.curvature, n_modes=n_modes)

    @classmethod
    def circle(cls, omega=1, radius=None, size=256):
        radius = 1.0 / (2 * np.pi * abs(omega)) if radius is None else radius
        x = np.arange(size) / size
        a = 2 * np.pi * omega * x
        return cls(radius * np.column_stack([np.sin(a), -np.cos(a)]))

    @classmethod
    def from_state(cls, state, scale=1.0, closure_tol=CLOSURE_TOL):
        return reconstruct(state, closure_tol).to_parametric(scale)


def turning_number(curve, tol=1e-6):
    """``(1/2 pi) int k ds`` rounded; raises if it is not within ``tol`` of an integer."""
    total = curve.integrate(curve.curvature) / (2 * np.pi)
    nearest = int(round(total))
    if abs(total - nearest) > tol:
        raise NotInteger(f"total curvature / 2 pi = {total:.9f}")
    return nearest


# -- scalar quantities ------------------------------------------------------------


def kosc(state):
    """Curvature oscillation of the unit-length curve, ``int u^2 ds``."""
    return sobolev_seminorm_sq(state.u.without_mean(), 0)


def resonant_mode_norm(state):
    """``|a_omega| + |a_-omega|`` of the curvature fluctuation."""
    return 2.0 * float(abs(state.u.coeffs[abs(state.omega)]))


def random_closed_state(omega, target_kosc, decay_exponent=3.0, seed=None,
                        n_modes=DEFAULT_MODES, bandwidth=DEFAULT_BANDWIDTH, chart=None,
                        rel_tol=0.01, max_rescale=50):
    """Random closed state with ``kosc`` within ``rel_tol`` of ``target_kosc``.

    Coefficients of modes ``1 <= n <= bandwidth`` are complex Gaussians scaled
    by ``n**-decay_exponent``.
    """
    omega = _check_omega(omega)
    if target_kosc < 0:
        raise ValueError("target_kosc must be nonnegative")
    rng = np.random.default_rng(seed)
    bandwidth = min(bandwidth, n_modes)
    n = np.arange(1, bandwidth + 1)
    draws = rng.standard_normal((2, bandwidth))
    phase = rng.uniform(0.0, 2 * np.pi)
    if target_kosc == 0:
        return CurvatureState(omega, PeriodicField.zeros(n_modes), phase)
    a = np.zeros(n_modes + 1, dtype=complex)
    a[1 : bandwidth + 1] = (draws[0] + 1j * draws[1]) * n ** (-float(decay_exponent))
    chart = ClosureChart(omega, n_modes) if chart is None else chart
    v = chart.project_x(PeriodicField(a))
    if v.l2_norm() == 0:
        raise ValueError("bandwidth leaves no non-resonant modes")
    scale = np.sqrt(target_kosc) / v.l2_norm()
    for _ in range(max_rescale):
        u = project_to_closure(v * scale, omega, chart)
        value = sobolev_seminorm_sq(u, 0)
        if abs(value - target_kosc) <= rel_tol * target_kosc:
            return CurvatureState(omega, u, phase)
        scale *= np.sqrt(target_kosc / value)
    raise NewtonDiverged(f"could not reach kosc={target_kosc:g} (last {value:g})")


# -- serialisation ----------------------------------------------------------------


def state_to_dict(state):
    n = np.arange(state.n_modes + 1)
    a = state.u.coeffs
    return {
        "omega": state.omega,
        "phase": state.phase,
        "n_modes": state.n_modes,
        "spectrum": [[int(i), float(c.real), float(c.imag)] for i, c in zip(n, a)],
    }


def state_from_dict(data):
    entries = data["spectrum"]
    n_modes = int(data.get("n_modes", max(abs(int(e[0])) for e in entries)))
    a = np.zeros(n_modes + 1, dtype=complex)
    for n, re, im in entries:
        n = int(n)
        if abs(n) > n_modes:
            continue
        a[abs(n)] = complex(re, im) if n >= 0 else complex(re, -im)
    return CurvatureState(int(data["omega"]), PeriodicField(a), float(data.get("phase", 0.0)))


def write_state_json(path, state):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_dict(state), fh, indent=1)
        fh.write("\n")


def read_state_json(path):
    with open(path, encoding="utf-8") as fh:
        return state_from_dict(json.load(fh))


def write_curve_csv(path, curve):
    """Sample dump with columns ``s, eta_x, eta_y, k, h, q``."""
    k, h, q = curve.k.values, curve.h.values, curve.q.values
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "eta_x", "eta_y", "k", "h", "q"])
        for j in range(curve.s.size):
            writer.writerow([repr(float(v)) for v in
                             (curve.s[j], curve.eta[j, 0], curve.eta[j, 1], k[j], h[j], q[j])])
