import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idealflow import energy as E
from idealflow.curve import CurvatureState, ParametricCurve, random_closed_state, reconstruct
from idealflow.errors import NotClosed
from idealflow.spectral import PeriodicField, derivative, sobolev_seminorm_sq

import oracles

TWO_PI = 2 * np.pi


def closed_k(omega, level, seed, bandwidth=16):
    state = random_closed_state(omega, level, seed=seed, bandwidth=bandwidth)
    return state, state.k


def band_limited(seed, band=10, n_modes=255, mean=0.0):
    rng = np.random.default_rng(seed)
    a = np.zeros(n_modes + 1, dtype=complex)
    n = np.arange(1, band + 1)
    a[1 : band + 1] = (rng.standard_normal(band) + 1j * rng.standard_normal(band)) / n**3
    a[0] = mean
    return PeriodicField(a)


# -- energy ---------------------------------------------------------------------------


def test_energy_of_constant_is_zero():
    k = PeriodicField.constant(TWO_PI)
    for m in (1, 2, 3):
        assert E.energy(k, m) == 0.0


@pytest.mark.parametrize("m,n", [(1, 2), (2, 5), (3, 4)])
def test_energy_of_single_mode(m, n):
    eps = 0.01
    k = TWO_PI + PeriodicField.fourier_mode(n, eps, "cos")
    assert E.energy(k, m) == pytest.approx(0.25 * eps**2 * (TWO_PI * n) ** (2 * m), rel=1e-12)


def test_energy_of_unit_circle_m0():
    assert E.energy(PeriodicField.constant(TWO_PI), 0) == pytest.approx(2 * np.pi**2, rel=1e-15)
    k = TWO_PI + PeriodicField.fourier_mode(3, 0.01, "cos")
    assert E.energy(k, 0) == pytest.approx(2 * np.pi**2 + 0.25e-4, rel=1e-14)


def test_energy_rejects_negative_m():
    with pytest.raises(ValueError):
        E.energy(PeriodicField.zeros(), -1)


def test_energy_report_scaling():
    _, k = closed_k(1, 0.1, 1)
    L = 2.5
    rep = E.energy_report(k, 2, L)
    assert rep.E_m == pytest.approx(E.energy(k, 2) * L**-5, rel=1e-14)
    assert rep.scale_invariant_energy == L**5 * rep.E_m
    assert rep.grad_norm_sq == pytest.approx(sobolev_seminorm_sq(E.euler_lagrange(k, 2), 0) * L**-13, rel=1e-14)


# -- Euler-Lagrange operator --------------------------------------------------------------


@pytest.mark.parametrize("m", [1, 2, 3])
@pytest.mark.parametrize("omega", [1, -1, 2, -2, 3])
def test_circles_are_critical(m, omega):
    K = E.euler_lagrange(CurvatureState.circle(omega).k, m)
    assert np.max(np.abs(K.fine_values())) <= 1e-8


def test_m0_circle_is_not_critical():
    K = E.euler_lagrange(PeriodicField.constant(TWO_PI), 0)
    assert np.allclose(K.values, oracles.K0_UNIT_CIRCLE, rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_euler_lagrange_matches_hand_written_m1(seed):
    k = TWO_PI + band_limited(seed)
    s = oracles.grid(512)
    ref = oracles.euler_lagrange_m1(lambda j: oracles.trig_derivative(k.coeffs, s, j))
    got = E.euler_lagrange(k, 1).sample(512)
    assert np.max(np.abs(got - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


@pytest.mark.parametrize("seed", range(5))
def test_euler_lagrange_matches_hand_written_m2(seed):
    k = 2 * TWO_PI + band_limited(seed, band=8)
    s = oracles.grid(512)
    ref = oracles.euler_lagrange_m2(lambda j: oracles.trig_derivative(k.coeffs, s, j))
    got = E.euler_lagrange(k, 2).sample(512)
    assert np.max(np.abs(got - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_random_closed_states_are_not_critical():
    for seed in range(5):
        _, k = closed_k(1, 1e-2, seed)
        for m in (1, 2):
            assert sobolev_seminorm_sq(E.euler_lagrange(k, m), 0) > 0


# -- first variation ------------------------------------------------------------------


def arclength_curve(omega, level, seed):
    state = random_closed_state(omega, level, seed=seed, bandwidth=8)
    return reconstruct(state).to_parametric()


def test_first_variation_circle():
    pc = ParametricCurve(oracles.circle_points(1, 256))
    phi = PeriodicField.fourier_mode(1, 1.0, "cos", 127)
    fd = E.first_variation_fd_oracle(pc, phi, 1)
    assert abs(fd - E.first_variation_exact(pc, phi, 1)) <= 1e-6
    assert abs(fd) <= 1e-6


def test_first_variation_of_zero_direction():
    pc = arclength_curve(1, 0.1, 0)
    assert E.first_variation_fd_oracle(pc, np.zeros(pc.size), 1) == 0.0


def test_first_variation_rejects_bad_step():
    pc = ParametricCurve(oracles.circle_points(1, 64))
    with pytest.raises(ValueError):
        E.first_variation_fd_oracle(pc, np.ones(64), 1, eps=1e-2)


@pytest.mark.parametrize("m", [1, 2])
@pytest.mark.parametrize("seed", range(4))
def test_first_variation_matches_operator(m, seed):
    pc = arclength_curve(1 + seed % 2, 0.05, seed)
    rng = np.random.default_rng(seed)
    a = np.zeros(pc.size // 2, dtype=complex)
    a[:6] = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    phi = PeriodicField(a)
    fd = E.first_variation_fd_oracle(pc, phi, m, richardson=True)
    exact = E.first_variation_exact(pc, phi, m)
    assert abs(fd - exact) <= 1e-5 * (1 + abs(exact))


def test_parametric_energy_is_parametrisation_invariant():
    pc = arclength_curve(1, 0.1, 3)
    warped = pc.reparametrised(lambda x: 0.05 * np.sin(2 * np.pi * x))
    for m in (1, 2):
        assert E.parametric_energy(warped, m) == pytest.approx(E.parametric_energy(pc, m), rel=1e-9)


# -- rigidity quantities --------------------------------------------------------------


def test_auxiliary_quantities_vanish_on_constants():
    for m in (1, 2, 3):
        for q in E.auxiliary_quantities(PeriodicField.constant(TWO_PI), m):
            assert np.all(q.coeffs == 0)
    with pytest.raises(ValueError):
        E.auxiliary_quantities(PeriodicField.zeros(), 0)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_q_derivative_identity(m):
    for seed in range(4):
        _, k = closed_k(1, 0.1, seed, bandwidth=10)
        scale = 1 + E.ck_norm(k, 2 * m + 2) ** 2
        assert E.q_derivative_residual(k, m) <= 1e-8 * scale


@pytest.mark.parametrize("m", [1, 2, 3])
def test_mean_n_identity(m):
    for seed in range(4):
        k = TWO_PI + band_limited(seed)
        assert E.mean_n_relative_error(k, m) <= 1e-10


def test_mean_n_by_direct_quadrature():
    k = TWO_PI + band_limited(7)
    _, N, _ = E.auxiliary_quantities(k, 2)
    dk2 = derivative(k, 2).fine_values()
    assert np.mean(N.fine_values()) == pytest.approx(2.5 * np.mean(dk2**2), rel=1e-10)


def test_cmp_examples():
    assert [E.binomial_coefficient_Cmp(3, p) for p in range(3)] == [1, -1, 1]
    assert E.binomial_coefficient_Cmp(1, 0) == 1
    for m in range(1, 13):
        for p in range(m):
            assert E.binomial_coefficient_Cmp(m, p) == (-1) ** p
    with pytest.raises(ValueError):
        E.binomial_coefficient_Cmp(3, 3)


def test_binomial_identity_examples():
    assert E.check_binomial_diff_identity(PeriodicField.constant(1.0), 2) == 0.0
    f = PeriodicField.fourier_mode(1, 1.0, "cos")
    scale = np.max(np.abs(derivative(f, 2).fine_values())) ** 2
    assert E.check_binomial_diff_identity(f, 2) <= 1e-9 * scale


@pytest.mark.parametrize("m", [1, 2, 3])
def test_binomial_identity_random(m):
    f = band_limited(m, band=8)
    scale = 1 + E.ck_norm(f, 2 * m) ** 2
    assert E.check_binomial_diff_identity(f, m) <= 1e-8 * scale


def test_commutator_zero_direction():
    pc = arclength_curve(1, 0.1, 1)
    assert E.check_variation_commutator(pc, np.zeros(pc.size), lambda c: c.curvature, 2) == 0.0


def test_commutator_on_circle_m1():
    pc = ParametricCurve(oracles.circle_points(1, 256))
    phi = PeriodicField.fourier_mode(2, 1.0, "cos", 127)
    fd, formula = E.variation_commutator_terms(pc, phi, lambda c: c.curvature, 1)
    scale = max(1.0, np.max(np.abs(formula)))
    assert np.max(np.abs(fd - formula)) <= 1e-5 * scale


@pytest.mark.parametrize("seed", range(3))
def test_commutator_random_m2(seed):
    pc = arclength_curve(1, 0.05, seed)
    rng = np.random.default_rng(seed)
    a = np.zeros(pc.size // 2, dtype=complex)
    a[1:5] = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    fd, formula = E.variation_commutator_terms(pc, PeriodicField(a), lambda c: c.curvature, 2,
                                               eps=1e-4, richardson=True)
    scale = max(1.0, np.max(np.abs(formula)))
    assert np.max(np.abs(fd - formula)) <= 1e-4 * scale


def test_commutator_on_warped_parametrisation():
    pc = arclength_curve(2, 0.05, 4).reparametrised(lambda x: 0.04 * np.sin(2 * np.pi * x))
    phi = np.cos(2 * np.pi * pc.x)
    fd, formula = E.variation_commutator_terms(pc, phi, lambda c: c.curvature, 1, richardson=True)
    assert np.max(np.abs(fd - formula)) <= 1e-5 * max(1.0, np.max(np.abs(formula)))


# -- gradient inequalities ----------------------------------------------------------------


def test_weak_check_on_circle():
    assert E.weak_gradient_check(CurvatureState.circle(2).k, 1) == (0.0, 0.0, 0.0)


def test_gradient_ratio_on_circle_is_flagged():
    value, degenerate = E.gradient_ratio(CurvatureState.circle(1).k, 1, 1)
    assert degenerate and value == float("inf")


def test_inequality_evaluators_require_closure():
    k = TWO_PI + PeriodicField.fourier_mode(1, 0.3, "cos")
    with pytest.raises(NotClosed):
        E.weak_gradient_check(k, 1)
    with pytest.raises(NotClosed):
        E.gradient_ratio(k, 1, 1)


def test_weak_check_scaling():
    _, k = closed_k(1, 0.1, 2)
    lhs1, rhs1, r1 = E.weak_gradient_check(k, 2, 1.0)
    lhs2, rhs2, r2 = E.weak_gradient_check(k, 2, 3.0)
    assert r1 == pytest.approx(r2, rel=1e-14)
    assert lhs2 == pytest.approx(lhs1 * 3.0**-5, rel=1e-14)


@pytest.mark.parametrize("m,omega", [(1, 1), (2, 1), (1, 2)])
def test_weak_inequality_on_random_states(m, omega):
    for seed in range(10):
        _, k = closed_k(omega, 0.3, seed)
        assert E.weak_gradient_check(k, m)[2] <= 1


def test_gradient_ratio_small_oscillation_limit():
    # the slowest non-resonant mode for m = omega = 1 is n = 2; a single such
    # mode is closed and its ratio tends to twice the linearised rate
    k = TWO_PI + PeriodicField.fourier_mode(2, 1e-6, "cos")
    value, degenerate = E.gradient_ratio(k, 1, 1)
    assert not degenerate
    assert value == pytest.approx(oracles.TWO_MU_1_1, rel=1e-6)


def test_gradient_ratio_is_scale_invariant():
    _, k = closed_k(1, 0.2, 6)
    assert E.gradient_ratio(k, 1, 1, L=5.0)[0] == E.gradient_ratio(k, 1, 1)[0]


def test_sweep_csv(tmp_path):
    rows = [dict(sample_id=i, m=1, omega=1, kosc=0.1, E_m=1.0, grad_norm_sq=2.0, weak_ratio=0.5,
                 gradient_ratio=3.0) for i in (2, 0, 1)]
    path = tmp_path / "sweep.csv"
    E.write_sweep_csv(path, rows)
    with open(path) as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == E.SWEEP_COLUMNS
    assert [r[0] for r in data[1:]] == ["0", "1", "2"]


# -- properties -------------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.floats(0.5, 4.0))
def test_energy_scaling_and_nonnegativity(seed, m, c):
    k = TWO_PI + band_limited(seed)
    e = E.energy(k, m)
    assert e >= 0
    # E_m is quadratic in the oscillation and ignores the mean
    assert E.energy(c * (k - TWO_PI) + 3.0, m) == pytest.approx(c**2 * e, rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_k_is_gradient_along_mean_zero_variations(seed, m):
    # along a mean-free variation of k alone the energy changes by int D^m k D^m v,
    # which equals (-1)^m int D^2m k v; compare with the leading part of K_m
    k = TWO_PI + band_limited(seed, band=6)
    v = band_limited(seed + 1, band=6)
    eps = 1e-6
    fd = (E.energy(k + eps * v, m) - E.energy(k - eps * v, m)) / (2 * eps)
    lead = (-1) ** m * np.mean(derivative(k, 2 * m).fine_values() * v.fine_values())
    assert fd == pytest.approx(lead, rel=1e-6, abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]))
def test_operator_vanishes_on_constants(seed, m):
    c = np.random.default_rng(seed).uniform(-20, 20)
    K = E.euler_lagrange(PeriodicField.constant(c), m)
    assert np.all(K.coeffs == 0)
