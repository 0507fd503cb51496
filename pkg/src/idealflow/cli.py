"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 invalid input, 3 numerical
breakdown.  Configuration files are flat ``key = value`` text; ``#`` starts a
comment.
"""

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__, curve, diagnostics, flow
from .errors import IdealFlowError, NewtonDiverged, StepRejected, UnderResolved

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_BREAKDOWN = 0, 1, 2, 3
SUITES = ("identities", "inequalities", "spectrum", "rates", "all")

EVOLVE_KEYS = {
    "m", "omega", "kosc", "n_modes", "dt", "t_end", "integrator", "reproject_every", "closure_tol",
    "record_every", "dt_safety", "converged_kosc", "max_steps", "max_halvings", "bandwidth",
    "decay_exponent", "seed", "L0", "initial_state",
}
FLOW_KEYS = {
    "n_modes", "dt", "t_end", "integrator", "reproject_every", "closure_tol", "record_every",
    "dt_safety", "converged_kosc", "max_steps", "max_halvings",
}
SWEEP_KEYS = {
    "sweep", "m", "omega", "kosc_grid", "samples_per_level", "n_samples", "kosc_min", "kosc_max",
    "bandwidth", "seed",
} | FLOW_KEYS
SEARCH_KEYS = {"m", "omega", "n_seeds", "kosc_max", "bandwidth", "max_iter", "seed", "n_modes"}


class ConfigError(ValueError):
    pass


def _parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in text:
        return [_parse_value(part) for part in text.split(",") if part.strip()]
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_config(text):
    """Parse flat ``key = value`` lines; values become int, float, bool, list or str."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def load_config(path, allowed):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def _as_list(value):
    if value is None or value == "":
        return []
    return value if isinstance(value, list) else [value]


# -- manifests and output ---------------------------------------------------------


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class Manifest:
    """Run manifest written before computation and completed afterwards."""

    def __init__(self, out_dir, command, config, seed):
        self.path = os.path.join(out_dir, "manifest.json")
        self.data = {
            "command": command,
            "config": _jsonable(config),
            "seed": seed,
            "version": __version__,
            "start": _now(),
            "end": None,
            "outputs": [],
            "exit_code": None,
        }
        self._write()

    def add(self, path):
        self.data["outputs"].append(os.path.basename(path))

    def finish(self, code):
        self.data["end"] = _now()
        self.data["exit_code"] = code
        self._write()
        return code

    def _write(self):
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _print_checks(results):
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: measured={r.measured:.3e} bound={r.bound:.3e} tol={r.tolerance:.1e}")
        if not r.passed:
            print(f"     {r.context}")


# -- commands ------------------------------------------------------------------------


def _flow_config(cfg, m, omega):
    kwargs = {k: cfg[k] for k in FLOW_KEYS if k in cfg}
    return flow.FlowConfig(m=m, omega=omega, **kwargs)


def cmd_evolve(args):
    cfg = load_config(args.config, EVOLVE_KEYS)
    m = int(cfg.get("m", 1))
    omega = int(cfg.get("omega", 1))
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    fcfg = _flow_config(cfg, m, omega)
    if "initial_state" in cfg:
        state = curve.read_state_json(cfg["initial_state"])
        if state.omega != omega or state.n_modes != fcfg.n_modes:
            raise ConfigError("initial state does not match omega / n_modes")
    else:
        kosc0 = float(cfg.get("kosc", 0.1))
        if kosc0 < 0:
            raise ConfigError("kosc must be nonnegative")
        state = None
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args.out, "evolve", {"flow": fcfg.as_dict(), **cfg}, seed)
    try:
        if state is None:
            state = curve.random_closed_state(
                omega, kosc0, decay_exponent=float(cfg.get("decay_exponent", 3.0)), seed=seed,
                n_modes=fcfg.n_modes, bandwidth=int(cfg.get("bandwidth", curve.DEFAULT_BANDWIDTH)))
        traj = flow.evolve(state, fcfg)
    except (StepRejected, NewtonDiverged, UnderResolved) as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return manifest.finish(EXIT_BREAKDOWN)
    paths = {
        "trajectory": os.path.join(args.out, "trajectory.csv"),
        "initial": os.path.join(args.out, "initial_state.json"),
        "final": os.path.join(args.out, "final_state.json"),
    }
    traj.write_csv(paths["trajectory"])
    curve.write_state_json(paths["initial"], traj.states[0].state)
    curve.write_state_json(paths["final"], traj.final.state)
    for p in paths.values():
        manifest.add(p)
    final = traj.records[-1]
    u = traj.final.state.u
    L0 = float(cfg.get("L0", 1.0))
    print(f"steps={traj.steps} converged={traj.converged} tau={final.tau:.6e}")
    print(f"kosc={final.kosc:.3e} sup|k-kappa|={np.max(np.abs(u.fine_values())):.3e} "
          f"resonant={final.resonant_norm:.3e} L_end/L0={final.length / traj.records[0].length:.9f}")
    bound = diagnostics.kosc_bound_check(traj, L0)
    print(f"{'PASS' if bound.passed else 'FAIL'} kosc length bound (worst ratio {bound.measured:.3e})")
    return manifest.finish(EXIT_OK)


def _run_suite(name, seed, serial, cfg):
    if name == "identities":
        return diagnostics.identity_suite(
            cfg.get("m_list", (1, 2)), cfg.get("omega_list", (1, 2)), int(cfg.get("n_samples", 20)), seed)
    if name == "inequalities":
        return diagnostics.inequality_checks(
            cfg.get("m_list", (1, 2)), cfg.get("omega_list", (1,)), int(cfg.get("n_samples", 200)), seed, serial)
    if name == "spectrum":
        return diagnostics.spectrum_checks(
            cfg.get("m_list", (1, 2)), cfg.get("omega_list", (1, 2)), int(cfg.get("n_max", 8)))
    if name == "rates":
        check, traj = diagnostics.rate_check(1, 1, float(cfg.get("kosc0", 1e-4)), seed)
        return [check, diagnostics.kosc_bound_check(traj)]
    raise ValueError(name)


VERIFY_KEYS = {"m_list", "omega_list", "n_samples", "n_max", "kosc0"}


def cmd_verify(args):
    cfg = load_config(args.config, VERIFY_KEYS)
    for key in ("m_list", "omega_list"):
        if key in cfg:
            cfg[key] = [int(v) for v in _as_list(cfg[key])]
    seed = int(args.seed if args.seed is not None else 0)
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args.out, f"verify {args.suite}", {**cfg, "serial": args.serial}, seed)
    names = SUITES[:-1] if args.suite == "all" else (args.suite,)
    everything = []
    for name in names:
        try:
            results = _run_suite(name, seed, args.serial, cfg)
        except (StepRejected, NewtonDiverged, UnderResolved) as exc:
            print(f"numerical breakdown in {name}: {exc}", file=sys.stderr)
            return manifest.finish(EXIT_BREAKDOWN)
        _print_checks(results)
        csv_path = os.path.join(args.out, f"checks_{name}.csv")
        json_path = os.path.join(args.out, f"summary_{name}.json")
        diagnostics.write_checks_csv(csv_path, results)
        diagnostics.write_summary_json(json_path, name, results)
        manifest.add(csv_path)
        manifest.add(json_path)
        everything.extend(results)
    if args.suite == "all":
        path = os.path.join(args.out, "summary_all.json")
        diagnostics.write_summary_json(path, "all", everything)
        manifest.add(path)
    failed = [r for r in everything if not r.passed]
    print(f"{len(everything) - len(failed)} passed, {len(failed)} failed")
    return manifest.finish(EXIT_FAILED if failed else EXIT_OK)


def cmd_sweep(args):
    cfg = load_config(args.config, SWEEP_KEYS)
    kind = cfg.get("sweep", "basin")
    m = int(cfg.get("m", 1))
    omega = int(cfg.get("omega", 1))
    if omega == 0:
        raise ConfigError("turning number must be nonzero")
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    os.makedirs(args.out, exist_ok=True)
    if kind == "basin":
        grid = [float(v) for v in _as_list(cfg.get("kosc_grid"))]
        if not grid:
            raise ConfigError("kosc_grid is empty")
        flow_kwargs = {k: cfg[k] for k in FLOW_KEYS if k in cfg}
        flow.FlowConfig(m=m, omega=omega, **flow_kwargs)
        manifest = Manifest(args.out, "sweep basin", cfg, seed)
        table = diagnostics.basin_sweep(m, omega, grid, int(cfg.get("samples_per_level", 4)), seed,
                                        serial=args.serial, **flow_kwargs)
        path = os.path.join(args.out, "basin.csv")
    elif kind == "gradient":
        n = int(cfg.get("n_samples", 100))
        if n <= 0:
            raise ConfigError("n_samples must be positive")
        manifest = Manifest(args.out, "sweep gradient", cfg, seed)
        table = diagnostics.gradient_inequality_sweep(
            m, omega, n, seed, (float(cfg.get("kosc_min", 1e-6)), float(cfg.get("kosc_max", 0.5))),
            int(cfg.get("bandwidth", curve.DEFAULT_BANDWIDTH)), serial=args.serial)
        path = os.path.join(args.out, "gradient.csv")
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    table.write_csv(path)
    manifest.add(path)
    summary_path = os.path.join(args.out, "sweep_summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(table.summary), fh, indent=1, sort_keys=True)
        fh.write("\n")
    manifest.add(summary_path)
    print(f"wrote {len(table.rows)} rows to {path}")
    failed = kind == "gradient" and table.summary["weak_violations"] > 0
    return manifest.finish(EXIT_FAILED if failed else EXIT_OK)


def cmd_spectrum(args):
    if args.omega == 0:
        raise ConfigError("turning number must be nonzero")
    if args.m < 1:
        raise ConfigError("the flow requires m >= 1")
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args.out, "spectrum", {"m": args.m, "omega": args.omega, "n_max": args.n_max}, None)
    rates = flow.linear_rates(args.m, args.omega)
    lam_min = float(np.min(rates[rates > 0]))
    path = os.path.join(args.out, "spectrum.csv")
    worst = 0.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "numeric_rate", "linear_rate", "relative_error"])
        for n, rate in flow.linearized_spectrum_numeric(args.m, args.omega, args.n_max):
            err = abs(rate) / lam_min if rates[n] == 0 else abs(rate / rates[n] - 1)
            worst = max(worst, err)
            writer.writerow([n, repr(rate), repr(float(rates[n])), repr(err)])
            print(f"n={n:3d} numeric={rate: .9e} linear={rates[n]: .9e} rel.err={err:.2e}")
    manifest.add(path)
    mu_value, n_min = flow.mu(args.m, args.omega)
    print(f"mu={mu_value:.9e} at n={n_min}")
    return manifest.finish(EXIT_OK if worst <= 1e-3 else EXIT_FAILED)


def cmd_search_critical(args):
    cfg = load_config(args.config, SEARCH_KEYS)
    m = int(cfg.get("m", 1))
    omega = int(cfg.get("omega", 1))
    if omega == 0:
        raise ConfigError("turning number must be nonzero")
    if m < 1:
        raise ConfigError("critical point search requires m >= 1")
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    n_seeds = int(cfg.get("n_seeds", 10))
    kosc_max = float(cfg.get("kosc_max", 0.5))
    bandwidth = int(cfg.get("bandwidth", 16))
    n_modes = int(cfg.get("n_modes", curve.DEFAULT_MODES))
    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args.out, "search-critical", cfg, seed)
    path = os.path.join(args.out, "critical_points.csv")
    non_circles = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed_id", "kosc_seed", "converged", "iterations", "grad_norm", "kosc_final", "is_circle"])
        for i in range(n_seeds):
            rng = np.random.default_rng(diagnostics.sample_seed(seed, m, omega, i))
            target = float(rng.uniform(0.0, kosc_max))
            st = curve.random_closed_state(omega, target, seed=int(rng.integers(2**63)), n_modes=n_modes,
                                           bandwidth=bandwidth)
            try:
                res = flow.critical_point_search(m, omega, st, bandwidth=bandwidth,
                                                 max_iter=int(cfg.get("max_iter", 60)))
                row = [i, repr(curve.kosc(st)), True, res.iterations, repr(res.grad_norm),
                       repr(curve.kosc(res.state)), res.is_circle]
                non_circles += not res.is_circle
            except IdealFlowError:
                row = [i, repr(curve.kosc(st)), False, "", "", "", ""]
            writer.writerow(row)
    manifest.add(path)
    print(f"{n_seeds} seeds searched; non-circular critical points found: {non_circles}")
    return manifest.finish(EXIT_FAILED if non_circles else EXIT_OK)


# -- entry point ---------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="idealflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--serial", action="store_true", help="run sweeps in one process")
        p.add_argument("--out", default="idealflow_out", metavar="DIR")

    common(sub.add_parser("evolve", help="integrate the normalised flow"))
    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=SUITES)
    common(p)
    common(sub.add_parser("sweep", help="basin or gradient-inequality sweep"))
    p = sub.add_parser("spectrum", help="numerical linearised spectrum at the circle")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--omega", type=int, default=1)
    p.add_argument("--n-max", type=int, default=8)
    common(p, config=False)
    common(sub.add_parser("search-critical", help="search for critical points from random seeds"))
    return parser


COMMANDS = {
    "evolve": cmd_evolve,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "spectrum": cmd_spectrum,
    "search-critical": cmd_search_critical,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IdealFlowError as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN


if __name__ == "__main__":
    sys.exit(main())
