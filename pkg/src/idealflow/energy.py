"""The m-ideal energy, its Euler-Lagrange operator, the rigidity quantities
``M_m, N_m, Q_m`` and evaluators for the associated identities and gradient
inequalities.

Curvature fields are functions of arclength on the unit-length
representative unless stated otherwise.  Physical quantities for a curve of
length ``L`` follow from the scalings ``E_m ~ L^-(2m+1)`` and
``K_m ~ L^-(2m+3)``.
"""

import csv
from dataclasses import dataclass
from math import comb

import numpy as np

from .curve import ParametricCurve, closure_residual
from .errors import NotClosed, UnderResolved
from .spectral import (
    MONITOR_FLOOR,
    PeriodicField,
    derivative,
    fine_to_field,
    is_resolved,
    sobolev_seminorm_sq,
)

CLOSURE_TOL = 1e-10
# energies at or below this are treated as the circle in ratio evaluations
DEGENERATE_ENERGY = 1e-30
SWEEP_COLUMNS = ("sample_id", "m", "omega", "kosc", "E_m", "grad_norm_sq", "weak_ratio", "gradient_ratio")


def _check_m(m):
    m = int(m)
    if m < 0:
        raise ValueError("m must be a nonnegative integer")
    return m


def energy(k, m):
    """``E_m = 1/2 int (D^m k)^2 ds``."""
    return 0.5 * sobolev_seminorm_sq(k, _check_m(m))


def _derivatives_fine(k, order):
    """Oversampled values of ``D^j k`` for ``j = 0..order``."""
    return [derivative(k, j).fine_values() for j in range(order + 1)]


def _el_from_derivatives(d, m):
    """Assemble ``K_m`` from arrays ``d[j] = D^j k`` (any common grid)."""
    k = d[0]
    out = (-1) ** (m + 1) * d[2 * m + 2] - 0.5 * k * d[m] ** 2
    acc = np.zeros_like(k)
    for j in range(1, m + 1):
        acc += (-1) ** (j + 1) * d[m - j] * d[m + j]
    return out + k * acc


def euler_lagrange(k, m):
    """``K_m``, the ``L^2(ds)`` gradient of ``E_m`` (first variation is ``-int K_m phi``)."""
    m = _check_m(m)
    d = _derivatives_fine(k, 2 * m + 2)
    return fine_to_field(_el_from_derivatives(d, m), k.n_modes)


@dataclass(frozen=True)
class EnergyReport:
    m: int
    E_m: float
    grad_norm_sq: float
    length: float
    scale_invariant_energy: float


def energy_report(k, m, length=1.0):
    """Energy data of the curve of length ``length`` whose unit-length curvature is ``k``."""
    m = _check_m(m)
    L = float(length)
    e_unit = energy(k, m)
    K = euler_lagrange(k, m)
    e_phys = L ** (-(2 * m + 1)) * e_unit
    g_phys = L ** (-(4 * m + 5)) * sobolev_seminorm_sq(K, 0)
    return EnergyReport(m, e_phys, g_phys, L, L ** (2 * m + 1) * e_phys)


# -- general parametrisations ---------------------------------------------------


def parametric_energy(curve, m):
    """``E_m`` of a sampled curve, using arclength derivatives of its curvature."""
    m = _check_m(m)
    dk = curve.ds(curve.curvature, m)
    return 0.5 * curve.integrate(dk**2)


def parametric_euler_lagrange(curve, m):
    """Samples of ``K_m`` on a sampled curve (not necessarily arclength)."""
    m = _check_m(m)
    d = [curve.curvature]
    for _ in range(2 * m + 2):
        d.append(curve.ds(d[-1], 1))
    return _el_from_derivatives(d, m)


def _check_curve_resolution(curve):
    field = PeriodicField.from_values(curve.curvature)
    # curvature from sampled points carries roundoff of order eps * size^2 * |k| per mode
    noise = np.finfo(float).eps * curve.size**2 * np.max(np.abs(curve.curvature))
    if not is_resolved(field, floor=max(MONITOR_FLOOR, field.n_modes * noise**2)):
        raise UnderResolved("curvature of the perturbed curve is not spectrally resolved")


def _phi_samples(phi, size):
    if isinstance(phi, PeriodicField):
        return phi.sample(size)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (size,):
        raise ValueError("phi samples must match the curve")
    return phi


def first_variation_fd_oracle(curve, phi, m, eps=1e-5, richardson=False):
    """Central difference ``(E_m[g + eps phi N] - E_m[g - eps phi N]) / (2 eps)``.

    With ``richardson`` the steps ``eps`` and ``eps/2`` are combined to cancel
    the ``eps^2`` error term.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    p = _phi_samples(phi, curve.size)

    def central(h):
        plus, minus = curve.perturbed(p, h), curve.perturbed(p, -h)
        _check_curve_resolution(plus)
        _check_curve_resolution(minus)
        return (parametric_energy(plus, m) - parametric_energy(minus, m)) / (2 * h)

    d1 = central(eps)
    if not richardson:
        return d1
    d2 = central(eps / 2)
    return (4 * d2 - d1) / 3


def first_variation_exact(curve, phi, m):
    """``-int K_m phi ds`` on a sampled curve."""
    p = _phi_samples(phi, curve.size)
    return -curve.integrate(parametric_euler_lagrange(curve, m) * p)


# -- rigidity quantities ----------------------------------------------------------


def auxiliary_quantities(k, m):
    """Return ``(M_m, N_m, Q_m)`` for ``m >= 1``."""
    m = _check_m(m)
    if m < 1:
        raise ValueError("auxiliary quantities need m >= 1")
    d = _derivatives_fine(k, 2 * m + 1)
    M = d[2 * m + 1]
    N = 0.5 * (-1) ** m * d[m] ** 2
    for j in range(m):
        N = N + (-1) ** j * d[j] * d[2 * m - j]
    n = k.n_modes
    return fine_to_field(M, n), fine_to_field(N, n), fine_to_field(M**2 + N**2, n)


def q_derivative_residual(k, m):
    """``max |D Q_m - 2 (-1)^(m+1) M_m K_m|`` over the oversampled grid."""
    M, _, Q = auxiliary_quantities(k, m)
    K = euler_lagrange(k, m)
    lhs = derivative(Q, 1).fine_values()
    rhs = 2 * (-1) ** (m + 1) * M.fine_values() * K.fine_values()
    return float(np.max(np.abs(lhs - rhs)))


def mean_n_relative_error(k, m):
    """Relative gap between ``int N_m`` and ``(m + 1/2)(-1)^m int (D^m k)^2``."""
    _, N, _ = auxiliary_quantities(k, m)
    expected = (m + 0.5) * (-1) ** m * sobolev_seminorm_sq(k, m)
    if expected == 0:
        return abs(N.mean)
    return abs(N.mean - expected) / abs(expected)


def ck_norm(k, order):
    """``max_{j <= order} sup |D^j k|`` on the oversampled grid."""
    return max(float(np.max(np.abs(derivative(k, j).fine_values()))) for j in range(order + 1))


def binomial_coefficient_Cmp(m, p):
    """``sum_{j=p}^{m-1} (-1)^j C(m, j+1) C(j, p)`` in integer arithmetic."""
    m, p = int(m), int(p)
    if not 0 <= p <= m - 1:
        raise ValueError("need 0 <= p <= m - 1")
    return sum((-1) ** j * comb(m, j + 1) * comb(j, p) for j in range(p, m))


def check_binomial_diff_identity(f, m):
    """Maximum pointwise residual of the binomial differential identity.

    With ``u = D^m f`` the identity reads
    ``sum_j (-1)^j C(m, j+1) D^j(u D^(m-j) f) = u^2 + sum_r (-1)^r D^(m-r) f D^(m+r) f``.
    """
    m = _check_m(m)
    if m < 1:
        raise ValueError("identity needs m >= 1")
    n = f.n_modes
    d = _derivatives_fine(f, 2 * m - 1)
    u = d[m]
    lhs = np.zeros_like(u)
    for j in range(m):
        prod = fine_to_field(u * d[m - j], n)
        lhs += (-1) ** j * comb(m, j + 1) * derivative(prod, j).fine_values()
    rhs = u**2
    for r in range(1, m):
        rhs = rhs + (-1) ** r * d[m - r] * d[m + r]
    return float(np.max(np.abs(lhs - rhs)))


def variation_commutator_terms(curve, phi, f, m, eps=1e-5, richardson=False):
    """Both sides of the variation formula for ``D^m f`` as sample arrays.

    ``f`` is either a callable mapping a :class:`ParametricCurve` to samples
    (a geometric quantity such as ``lambda c: c.curvature``) or fixed samples
    in the curve parameter.  Returns ``(fd, formula)`` where ``fd`` is the
    central difference of ``D^m f`` (optionally Richardson-extrapolated from
    ``eps`` and ``eps/2``) and ``formula`` is
    ``D^m (d/deps f) + sum_j C(m, j+1) D^j(k phi) D^(m-j) f`` with ``d/deps f``
    taken by the same difference scheme.
    """
    m = _check_m(m)
    p = _phi_samples(phi, curve.size)
    if not callable(f):
        fixed = _phi_samples(f, curve.size)
        f = lambda c: fixed

    def central(h):
        plus, minus = curve.perturbed(p, h), curve.perturbed(p, -h)
        _check_curve_resolution(plus)
        _check_curve_resolution(minus)
        fd_dm = (plus.ds(f(plus), m) - minus.ds(f(minus), m)) / (2 * h)
        df = (f(plus) - f(minus)) / (2 * h)
        return fd_dm, df

    fd_dm, df = central(eps)
    if richardson:
        half_dm, half_df = central(eps / 2)
        fd_dm = (4 * half_dm - fd_dm) / 3
        df = (4 * half_df - df) / 3
    base = f(curve)
    kphi = curve.curvature * p
    formula = curve.ds(df, m)
    for j in range(m):
        formula = formula + comb(m, j + 1) * curve.ds(kphi, j) * curve.ds(base, m - j)
    return fd_dm, formula


def check_variation_commutator(curve, phi, f, m, eps=1e-5, richardson=False):
    """Largest pointwise discrepancy in the variation formula for ``D^m f``."""
    fd, formula = variation_commutator_terms(curve, phi, f, m, eps, richardson)
    return float(np.max(np.abs(fd - formula)))


# -- gradient inequalities --------------------------------------------------------


def _require_closed(k, omega=None):
    if omega is None:
        omega = int(round(k.mean / (2 * np.pi)))
    res = abs(closure_residual(k - 2 * np.pi * omega, omega))
    if res > CLOSURE_TOL:
        raise NotClosed(f"closure residual {res:.3e}")
    return omega


def weak_gradient_check(k, m, L=1.0):
    """Return ``(lhs, rhs, ratio)`` for ``E_m <= L^(3/2) ||K_m|| / (2m + 1)``.

    ``k`` is the curvature of the unit-length representative; both sides are
    reported for the curve of length ``L``.  A vanishing right-hand side gives
    ratio 0.
    """
    m = _check_m(m)
    _require_closed(k)
    L = float(L)
    e = energy(k, m)
    g = sobolev_seminorm_sq(euler_lagrange(k, m), 0)
    lhs = L ** (-(2 * m + 1)) * e
    rhs = L ** (-(2 * m + 1)) * np.sqrt(g) / (2 * m + 1)
    ratio = 0.0 if rhs == 0 else lhs / rhs
    return lhs, rhs, ratio


def gradient_ratio(k, m, omega, L=1.0):
    """``int K_m^2 ds / (L^-(2m+4) E_m)`` and a degeneracy flag.

    The ratio is scale invariant.  For the circle (``E_m`` numerically zero)
    the result is ``(inf, True)``.
    """
    m = _check_m(m)
    _require_closed(k, int(omega))
    e = energy(k, m)
    if e <= DEGENERATE_ENERGY:
        return float("inf"), True
    g = sobolev_seminorm_sq(euler_lagrange(k, m), 0)
    return g / e, False


def write_sweep_csv(path, rows):
    """Write sweep rows (mappings keyed by ``SWEEP_COLUMNS``) sorted by ``sample_id``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in sorted(rows, key=lambda r: r["sample_id"]):
            writer.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))
