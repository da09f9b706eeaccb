"""Command-line front end.

Six subcommands mirror the library layers::

    qlqg build         --scenario S [--out DIR]
    qlqg riccati       --scenario S [--out DIR] [--dual]
    qlqg simulate      --scenario S [--seed N] [--n-traj N] [--out DIR]
    qlqg sme           --scenario S [--seed N] [--n-traj N] [--out DIR]
    qlqg free-particle [--n-traj N]
    qlqg validate

A scenario is a JSON object.  The keys each subcommand reads:

``model``
    Inline phase-space model (the ``model_from_json`` schema), a path to
    such a file (relative paths resolve against the scenario file), or
    ``{"preset": "free-particle", "mass": .., "hbar": .., "feedback":
    true|false}``.  With ``feedback`` the actuation column is doubled to
    the tracking-loop convention; without it the bare model is used.
``cost``
    ``{"F": .., "G": .., "Omega_T": ..}`` or ``{"preset":
    "position-tracking", "beta": .., "Omega_T": ..}``.
``grid``
    ``{"t0": .., "t1": .., "n_steps": ..}``.
``sim``
    ``n_traj``, ``seed``, optional ``record_stride`` (default: endpoint
    only), ``initial_mean``, ``initial_cov``, and optional
    ``record_trajectories`` (how many per-trajectory CSVs to write).
``direction``
    ``riccati`` only: ``"filter"``, ``"control"`` or ``"both"`` (default).
``initial_cov``
    ``riccati`` only: start of the forward covariance flow.  Falls back
    to ``sim.initial_cov`` so one scenario can serve both commands.
``finite_model``, ``rho0``, ``control``
    ``sme`` only: a finite-dimensional model (inline or path), the
    initial state as a ``{"re": .., "im": ..}`` pair, and an optional
    constant control vector.
``out``
    Output directory, overridden by ``--out``; default is the working
    directory.

Exit codes: 0 on success, 2 when input is rejected, 3 when a
computation fails numerically.  File outputs are byte-deterministic
given the same scenario and seed.  ``QLQG_THREADS`` caps simulation
parallelism; everything else is single-threaded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import free_particle as fp
from .closed_loop import (
    SimConfig,
    monte_carlo_expected_cost,
    simulate_closed_loop,
    trajectory_to_csv,
)
from .control import ControlProblem, control_gain_path, control_path_via_duality, gain_path_to_csv
from .errors import ConfigError, NumericalError, ValidationError
from .phase_space import (
    GaussianBelief,
    build_coefficients,
    free_particle_model,
    model_from_json,
)
from .riccati import (
    CostSpec,
    TimeGrid,
    integrate_control_riccati,
    integrate_filter_riccati,
    matrix_path_to_csv,
    total_minimal_cost,
)
from .sme import (
    DensityMatrix,
    evolve_master,
    finite_model_from_json,
    simulate_sme_ensemble,
    trace_distance,
)
from .validate import FREE_PARTICLE_SUITES, render_report, run_suites


def _load_scenario(path_str: str) -> tuple[dict, Path]:
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"scenario file '{path}' does not exist")
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario '{path}' is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"scenario '{path}' must be a JSON object")
    return data, path.parent


def _require(scenario: dict, key: str):
    if key not in scenario:
        raise ConfigError(f"scenario is missing key '{key}'")
    return scenario[key]


def _load_model(entry, base_dir: Path):
    """Resolve the ``model`` entry to (coefficients, phase-space model)."""
    if isinstance(entry, str):
        path = base_dir / entry
        if not path.is_file():
            raise ConfigError(f"model file '{path}' does not exist")
        model = model_from_json(path)
        return build_coefficients(model), model
    if not isinstance(entry, dict):
        raise ConfigError("key 'model' must be an object or a file path")
    if "preset" in entry:
        name = entry["preset"]
        if name != "free-particle":
            raise ConfigError(f"unknown model preset '{name}'")
        mass = float(entry.get("mass", 1.0))
        hbar = float(entry.get("hbar", 1.0))
        model = free_particle_model(mass, hbar)
        if entry.get("feedback", False):
            return fp.feedback_coefficients(mass, hbar), model
        return build_coefficients(model), model
    model = model_from_json(entry)
    return build_coefficients(model), model


def _parse_cost(entry) -> CostSpec:
    if not isinstance(entry, dict):
        raise ConfigError("key 'cost' must be an object")
    if "preset" in entry:
        name = entry["preset"]
        if name != "position-tracking":
            raise ConfigError(f"unknown cost preset '{name}'")
        return fp.position_tracking_cost(
            beta=float(entry.get("beta", 1.0)),
            Omega_T=entry.get("Omega_T"),
        )
    for key in ("F", "G", "Omega_T"):
        if key not in entry:
            raise ConfigError(f"key 'cost' is missing '{key}'")
    return CostSpec(F=entry["F"], G=entry["G"], Omega_T=entry["Omega_T"])


def _parse_grid(entry) -> TimeGrid:
    if not isinstance(entry, dict):
        raise ConfigError("key 'grid' must be an object")
    for key in ("t0", "t1", "n_steps"):
        if key not in entry:
            raise ConfigError(f"key 'grid' is missing '{key}'")
    return TimeGrid(float(entry["t0"]), float(entry["t1"]), int(entry["n_steps"]))


def _parse_sim(scenario: dict, grid: TimeGrid, args) -> SimConfig:
    sim = scenario.get("sim", {})
    if not isinstance(sim, dict):
        raise ConfigError("key 'sim' must be an object")
    n_traj = args.n_traj if args.n_traj is not None else sim.get("n_traj")
    if n_traj is None:
        raise ConfigError("key 'sim' is missing 'n_traj' (or pass --n-traj)")
    seed = args.seed if args.seed is not None else sim.get("seed")
    if seed is None:
        raise ConfigError("key 'sim' is missing 'seed' (or pass --seed)")
    stride = int(sim.get("record_stride", grid.n_steps))
    return SimConfig(grid=grid, n_traj=int(n_traj), seed=int(seed), record_stride=stride)


def _out_dir(args, scenario: dict | None) -> Path:
    out = args.out or (scenario or {}).get("out") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump_json(obj, path: Path | None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        path.write_text(text, encoding="utf-8")
    return text


def _finite_or_none(x: float):
    x = float(x)
    return x if np.isfinite(x) else None


def cmd_build(args) -> int:
    scenario, base_dir = _load_scenario(args.scenario)
    coeffs, _ = _load_model(_require(scenario, "model"), base_dir)
    report = {
        name: getattr(coeffs, name).tolist() for name in ("A", "B", "C", "N", "M")
    }
    text = _dump_json(report, _out_dir(args, scenario) / "coefficients.json")
    sys.stdout.write(text)
    return 0


def cmd_riccati(args) -> int:
    scenario, base_dir = _load_scenario(args.scenario)
    coeffs, model = _load_model(_require(scenario, "model"), base_dir)
    grid = _parse_grid(_require(scenario, "grid"))
    direction = scenario.get("direction", "both")
    if direction not in ("filter", "control", "both"):
        raise ConfigError(f"key 'direction' must be filter|control|both, got '{direction}'")
    out = _out_dir(args, scenario)
    written = []

    if direction in ("filter", "both"):
        raw = scenario.get("initial_cov")
        if raw is None:
            raw = scenario.get("sim", {}).get("initial_cov")
        if raw is None:
            raise ConfigError(
                "scenario is missing key 'initial_cov' (top level or under 'sim')"
            )
        Sigma0 = np.asarray(raw, dtype=float)
        sigma = integrate_filter_riccati(
            coeffs, Sigma0, grid, uncertainty=(model.J, model.hbar)
        )
        target = out / "sigma_path.csv"
        with open(target, "w", encoding="utf-8", newline="") as fh:
            matrix_path_to_csv(sigma, fh, prefix="sigma")
        written.append(target)

    if direction in ("control", "both"):
        cost = _parse_cost(_require(scenario, "cost"))
        if args.dual:
            problem = ControlProblem(
                A=coeffs.A, B=coeffs.B, F=cost.F, G=cost.G,
                horizon=grid.t1 - grid.t0,
            )
            omega = control_path_via_duality(problem, cost.Omega_T, grid)
        else:
            omega = integrate_control_riccati(coeffs, cost, grid)
        target = out / "omega_path.csv"
        with open(target, "w", encoding="utf-8", newline="") as fh:
            matrix_path_to_csv(omega, fh, prefix="omega")
        written.append(target)
        gains = control_gain_path(omega, coeffs, cost)
        target = out / "gains.csv"
        with open(target, "w", encoding="utf-8", newline="") as fh:
            gain_path_to_csv(gains, fh)
        written.append(target)

    for path in written:
        print(path)
    return 0


def cmd_simulate(args) -> int:
    scenario, base_dir = _load_scenario(args.scenario)
    coeffs, _ = _load_model(_require(scenario, "model"), base_dir)
    cost = _parse_cost(_require(scenario, "cost"))
    grid = _parse_grid(_require(scenario, "grid"))
    config = _parse_sim(scenario, grid, args)
    sim = scenario.get("sim", {})
    for key in ("initial_mean", "initial_cov"):
        if key not in sim:
            raise ConfigError(f"key 'sim' is missing '{key}'")
    initial = GaussianBelief(mean=sim["initial_mean"], cov=sim["initial_cov"])

    Omega = integrate_control_riccati(coeffs, cost, grid)
    Sigma = integrate_filter_riccati(coeffs, initial.cov, grid)
    analytic = total_minimal_cost(
        initial.mean, initial.cov, Omega, Sigma, coeffs, cost
    )
    ensemble = simulate_closed_loop(coeffs, cost, config, initial)
    mean, stderr = monte_carlo_expected_cost(ensemble)
    z = (mean - analytic) / stderr if stderr and np.isfinite(stderr) else float("nan")

    out = _out_dir(args, scenario)
    summary = {
        "analytic_cost": analytic,
        "mean_cost": mean,
        "stderr": _finite_or_none(stderr),
        "z": _finite_or_none(z),
        "n_traj": config.n_traj,
        "seed": config.seed,
    }
    text = _dump_json(summary, out / "summary.json")
    sys.stdout.write(text)

    n_record = int(sim.get("record_trajectories", 0))
    for i in range(min(n_record, config.n_traj)):
        with open(out / f"trajectory_{i:03d}.csv", "w", encoding="utf-8", newline="") as fh:
            trajectory_to_csv(ensemble[i], fh)
    return 0


def _load_finite_model(entry, base_dir: Path):
    if isinstance(entry, str):
        path = base_dir / entry
        if not path.is_file():
            raise ConfigError(f"finite model file '{path}' does not exist")
        return finite_model_from_json(path)
    if not isinstance(entry, dict):
        raise ConfigError("key 'finite_model' must be an object or a file path")
    return finite_model_from_json(entry)


def _parse_rho0(entry) -> DensityMatrix:
    if not isinstance(entry, dict) or "re" not in entry or "im" not in entry:
        raise ConfigError("key 'rho0' must be a {re, im} pair")
    return DensityMatrix(
        np.asarray(entry["re"], dtype=float) + 1j * np.asarray(entry["im"], dtype=float)
    )


def _mean_path_csv(times, mean_states, fh) -> None:
    n = mean_states.shape[-1]
    header = ["t"]
    for i in range(n):
        for j in range(n):
            header.append(f"rho_re_{i}{j}")
    for i in range(n):
        for j in range(n):
            header.append(f"rho_im_{i}{j}")
    fh.write(",".join(header) + "\n")
    flat = mean_states.reshape(len(times), n * n)
    for k, t in enumerate(times):
        row = [f"{t:.17g}"]
        row += [f"{v:.17g}" for v in flat[k].real]
        row += [f"{v:.17g}" for v in flat[k].imag]
        fh.write(",".join(row) + "\n")


def cmd_sme(args) -> int:
    scenario, base_dir = _load_scenario(args.scenario)
    model = _load_finite_model(_require(scenario, "finite_model"), base_dir)
    rho0 = _parse_rho0(_require(scenario, "rho0"))
    grid = _parse_grid(_require(scenario, "grid"))
    config = _parse_sim(scenario, grid, args)
    u = scenario.get("control")
    if u is not None:
        u = np.asarray(u, dtype=float)

    ensemble = simulate_sme_ensemble(rho0, model, config, u=u)
    _, master = evolve_master(
        rho0, model, grid, u=u, record_stride=config.record_stride
    )
    distance = trace_distance(ensemble.mean_states[-1], master[-1])

    out = _out_dir(args, scenario)
    summary = {
        "master_distance": distance,
        "max_trace_deviation": ensemble.max_trace_deviation,
        "min_eigenvalue": ensemble.min_eigenvalue,
        "n_traj": config.n_traj,
        "seed": config.seed,
    }
    text = _dump_json(summary, out / "summary.json")
    sys.stdout.write(text)
    with open(out / "mean_path.csv", "w", encoding="utf-8", newline="") as fh:
        _mean_path_csv(ensemble.times, ensemble.mean_states, fh)
    return 0


def _report_exit(results) -> int:
    print(render_report(results))
    return 0 if all(r.passed for r in results) else 3


def cmd_free_particle(args) -> int:
    overrides = {}
    if args.n_traj is not None:
        overrides["n_traj"] = args.n_traj
    else:
        overrides["n_traj"] = 500  # the reproduction run favours speed
    return _report_exit(run_suites(overrides, names=FREE_PARTICLE_SUITES))


def cmd_validate(args) -> int:
    return _report_exit(run_suites())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlqg",
        description="Optimal filtering and LQG control for linear quantum systems.",
    )
    parser.add_argument("--version", action="version", version=f"qlqg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, scenario=True, seed=False, out=False, dual=False, n_traj=False):
        p = sub.add_parser(name)
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario JSON file")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        if n_traj:
            p.add_argument(
                "--n-traj", type=int, default=None, help="override sim.n_traj"
            )
        if out:
            p.add_argument("--out", default=None, help="output directory")
        if dual:
            p.add_argument(
                "--dual", action="store_true",
                help="solve the backward flow through its forward dual",
            )
        p.set_defaults(func=func)
        return p

    add("build", cmd_build, out=True)
    add("riccati", cmd_riccati, out=True, dual=True)
    add("simulate", cmd_simulate, seed=True, out=True, n_traj=True)
    add("sme", cmd_sme, seed=True, out=True, n_traj=True)
    add("free-particle", cmd_free_particle, scenario=False, n_traj=True)
    add("validate", cmd_validate, scenario=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
