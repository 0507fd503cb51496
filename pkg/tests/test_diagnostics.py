import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from idealflow import diagnostics as D
from idealflow import flow
from idealflow.curve import CurvatureState, state_from_dict
from idealflow.errors import InsufficientData
from idealflow.records import CheckResult, DiagnosticsRecord


# -- rate fitting -------------------------------------------------------------------


def test_fit_exact_exponential():
    tau = np.linspace(0, 5, 200)
    rate, r2 = D.fit_decay_rate(list(zip(tau, np.exp(-3 * tau))))
    assert rate == pytest.approx(3.0, abs=1e-9)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_constant_series():
    tau = np.linspace(0, 1, 50)
    rate, r2 = D.fit_decay_rate(list(zip(tau, np.full(50, 0.2))))
    assert rate == pytest.approx(0.0, abs=1e-12)
    assert r2 == 1.0


def test_fit_uses_tail_only():
    tau = np.linspace(0, 4, 400)
    values = np.where(tau < 1, np.exp(-10 * tau), np.exp(-10) * np.exp(-2 * (tau - 1)))
    assert D.fit_decay_rate(list(zip(tau, values)))[0] == pytest.approx(2.0, rel=1e-9)


def test_fit_needs_enough_points():
    tau = np.linspace(0, 1, 20)
    with pytest.raises(InsufficientData):
        D.fit_decay_rate(list(zip(tau, np.exp(-tau))))
    with pytest.raises(InsufficientData):
        D.fit_decay_rate(list(zip(np.linspace(0, 1, 100), np.zeros(100))))
    with pytest.raises(InsufficientData):
        D.fit_decay_rate([1.0, 2.0])


# -- length bound ---------------------------------------------------------------------


def test_bound_on_circle_trajectory():
    cfg = flow.FlowConfig(n_modes=63, dt=1e-7, t_end=3e-7, converged_kosc=-1.0)
    traj = flow.evolve(CurvatureState.circle(1, n_modes=63), cfg)
    res = D.kosc_bound_check(traj)
    assert res.passed and res.measured == 0.0


def test_bound_formula():
    lhs, rhs = D.kosc_bound_from_series(1, [0.0, 2.0], [1.0, 2.0], [0.0, 0.0], 0.5)
    L_star = 2.0
    assert rhs[0] == pytest.approx(2 * (2 * np.pi) ** -2 * L_star**3 / 2.0)
    assert rhs[1] == pytest.approx(2 * (2 * np.pi) ** -2 * L_star**3 / (2.0 + 9 * L_star**-3 * 2.0))


@pytest.fixture(scope="module")
def small_run():
    from idealflow.curve import random_closed_state

    cfg = flow.FlowConfig(n_modes=63, t_end=3.0 / (2 * flow.mu(1, 1)[0]))
    return flow.evolve(random_closed_state(1, 1e-2, seed=2, n_modes=63, bandwidth=10), cfg)


def test_bound_holds_on_run_and_detects_tampering(small_run):
    assert D.kosc_bound_check(small_run).passed
    tampered = flow.Trajectory(small_run.config)
    for i, (fs, rec) in enumerate(zip(small_run.states, small_run.records)):
        if i == len(small_run.records) // 2:
            rec = replace(rec, kosc=1e3)
        tampered.append(fs, rec)
    res = D.kosc_bound_check(tampered)
    assert not res.passed
    assert res.measured > 1
    assert "1 of" in res.context


# -- identity suite ----------------------------------------------------------------------


def test_identity_suite_empty():
    assert D.identity_suite(n_samples=0) == []


def test_identity_suite_passes_and_is_deterministic():
    a = D.identity_suite((1,), (1, 2), n_samples=2, seed=5)
    b = D.identity_suite((1,), (1, 2), n_samples=2, seed=5)
    assert a == b
    assert all(r.passed for r in a), [r for r in a if not r.passed]
    names = {r.name for r in a}
    assert "C_mp" in names
    assert "minkowski[m=1,omega=2]" in names
    assert len(a) == 2 * len(D.IDENTITY_TOLERANCES) + 1


def test_identity_suite_reports_failing_state(monkeypatch):
    orig = D.identity_residuals

    def broken(state, m, phi):
        out = orig(state, m, phi)
        out["minkowski"] = 1.0
        return out

    monkeypatch.setattr(D, "identity_residuals", broken)
    res = D.identity_suite((1,), (1,), n_samples=1, seed=0)
    bad = [r for r in res if not r.passed]
    assert [r.name for r in bad] == ["minkowski[m=1,omega=1]"]
    payload = bad[0].context.split(": ", 1)[1]
    assert state_from_dict(json.loads(payload)).omega == 1


def test_cmp_check():
    assert D.cmp_check().passed


def test_sample_seed_is_stable():
    assert D.sample_seed(1, 2, 3) == D.sample_seed(1, 2, 3)
    assert D.sample_seed(1, 2, 3) != D.sample_seed(1, 2, 4)
    assert 0 <= D.sample_seed(0) < 2**63


# -- spectrum and sweeps -------------------------------------------------------------------


def test_spectrum_checks_pass():
    res = D.spectrum_checks((1,), (1, 2), n_max=4)
    assert len(res) == 4 and all(r.passed for r in res)


def test_wilson_interval():
    lo, hi = D.wilson_interval(10, 10)
    assert hi == pytest.approx(1.0) and lo == pytest.approx(0.7224672, abs=1e-6)
    lo, hi = D.wilson_interval(5, 10)
    assert lo < 0.5 < hi
    assert lo == pytest.approx(1 - hi)
    assert all(np.isnan(D.wilson_interval(0, 0)))


def test_basin_sweep_small(tmp_path):
    table = D.basin_sweep(1, 1, [0.0, 1e-6], 2, seed=3, n_modes=63)
    assert [r["level"] for r in table.rows] == [0, 1]
    assert all(r["converged"] == r["runs"] == 2 for r in table.rows)
    assert table.rows[1]["mean_length_ratio"] == pytest.approx(1.0, abs=1e-4)
    path = tmp_path / "basin.csv"
    table.write_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == D.BASIN_COLUMNS and len(rows) == 3


def test_basin_sweep_rejects_bad_grid():
    with pytest.raises(ValueError):
        D.basin_sweep(1, 1, [], 1)
    with pytest.raises(ValueError):
        D.basin_sweep(1, 1, [1e-3, 1e-6], 1)


def test_gradient_sweep():
    table = D.gradient_inequality_sweep(1, 1, 12, seed=4, bandwidth=16)
    rows = table.rows
    assert [r["sample_id"] for r in rows] == list(range(12))
    assert rows[0]["degenerate"] and rows[0]["weak_ratio"] == 0.0
    assert not any(r["degenerate"] for r in rows[1:])
    s = table.summary
    assert s["weak_violations"] == 0 and s["max_weak_ratio"] <= 1
    assert s["min_gradient_ratio"] > 0
    assert s["argmin_sample"] != 0
    again = state_from_dict(s["argmin_state"])
    from idealflow.energy import gradient_ratio

    assert gradient_ratio(again.k, 1, 1)[0] == s["min_gradient_ratio"]


def test_gradient_sweep_parallel_matches_serial(monkeypatch):
    monkeypatch.setenv("IDEALFLOW_THREADS", "2")
    a = D.gradient_inequality_sweep(2, 1, 6, seed=1, bandwidth=12, serial=True)
    b = D.gradient_inequality_sweep(2, 1, 6, seed=1, bandwidth=12, serial=False)
    assert a.rows == b.rows


# -- reports ---------------------------------------------------------------------------


def test_summary_and_checks_files(tmp_path):
    results = [CheckResult("a", True, 1e-12, 1e-8, 0.0, "ok"), CheckResult("b", False, 2.0, 1.0, 0.0, "bad")]
    summary = D.write_summary_json(tmp_path / "s.json", "demo", results)
    data = json.loads((tmp_path / "s.json").read_text())
    assert data == summary
    assert set(data) == {"suite", "passed", "failed", "worst_residuals"}
    assert data["failed"] == ["b"] and data["worst_residuals"]["a"] == 1e-12
    D.write_checks_csv(tmp_path / "c.csv", results)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["name", "passed", "measured", "bound", "tolerance", "context"]
    assert rows[2][:2] == ["b", "False"]


def test_records_row_order():
    rec = DiagnosticsRecord(*[float(i) for i in range(9)])
    assert rec.as_row() == [float(i) for i in range(9)]
