"""Desk-scale self-checks behind ``qlqg validate``.

Each suite re-derives one analytic fact or invariant with the library's
own solvers and fails loudly when it no longer holds.  The whole run is
sized for a laptop: seconds, not minutes.  ``run_suites`` accepts an
``overrides`` mapping so tests can inject broken fixtures (a coarse SME
grid, a detuned feedback gain) and confirm that the corresponding suite
actually trips.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import free_particle as fp
from .closed_loop import SimConfig, monte_carlo_expected_cost, simulate_closed_loop
from .errors import InvalidParameter
from .control import (
    ControlProblem,
    control_gain_path,
    control_path_via_duality,
    hjb_residual,
)
from .phase_space import GaussianBelief, build_coefficients, free_particle_model
from .riccati import (
    CostSpec,
    TimeGrid,
    integrate_alpha,
    integrate_control_riccati,
    integrate_filter_riccati,
    lyapunov_unconditional,
    stationary_filter_covariance,
    total_minimal_cost,
)
from .sme import (
    DensityMatrix,
    FiniteModel,
    ancilla_quadrature_projectors,
    discrete_conditioning,
    evolve_master,
    master_step,
    simulate_sme_ensemble,
    sme_step,
    trace_distance,
    weak_measurement_unitary,
)

SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    seconds: float
    detail: str


def _suite_coefficients(overrides: dict) -> str:
    preset = fp.feedback_coefficients()
    derived = build_coefficients(free_particle_model())
    assert np.array_equal(preset.A, derived.A)
    assert np.array_equal(preset.C, derived.C)
    assert np.array_equal(preset.N, derived.N)
    assert np.array_equal(preset.B, 2.0 * derived.B)
    S = fp.stationary_dispersions()
    gain = S @ preset.C.T + preset.M
    residual = preset.A @ S + S @ preset.A.T + preset.N - gain @ gain.T
    assert np.abs(residual).max() < 1e-13
    return "preset matrices match the derived model"


def _suite_filter_relaxation(overrides: dict) -> str:
    coeffs = fp.feedback_coefficients()
    model = free_particle_model()
    grid = TimeGrid(0.0, 20.0, 20000)
    path = integrate_filter_riccati(
        coeffs, np.diag([2.0, 2.0]), grid, uncertainty=(model.J, model.hbar)
    )
    end = path.at(-1)
    target = fp.stationary_dispersions()
    err = np.abs(end - target).max()
    assert err < 1e-6, f"endpoint off by {err:.2e}"
    bound = path.values + 0.5j * model.hbar * model.J
    min_eig = float(np.linalg.eigvalsh(bound).min())
    assert min_eig >= -1e-8, f"Heisenberg margin {min_eig:.2e}"
    for mass, hbar in [(1.0, 2.0), (2.0, 1.0)]:
        c = build_coefficients(free_particle_model(mass, hbar))
        S = stationary_filter_covariance(c, tol=1e-12)
        gap = np.abs(S - fp.stationary_dispersions(mass, hbar)).max()
        assert gap < 1e-6, f"stationary point off by {gap:.2e} at ({mass}, {hbar})"
    return f"relaxed to within {err:.1e}, Heisenberg margin {min_eig:+.1e}"


def _suite_spreading(overrides: dict) -> str:
    coeffs = build_coefficients(free_particle_model())
    Sigma0 = np.diag([0.7, 0.7])
    grid = TimeGrid(0.0, 5.0, 500)
    path = lyapunov_unconditional(coeffs, Sigma0, grid)
    exact = fp.spread_covariance(Sigma0, 5.0)
    err = np.abs(path.at(-1) - exact).max()
    assert err < 1e-8, f"cubic law off by {err:.2e}"
    return f"cubic spreading reproduced to {err:.1e}"


def _suite_duality(overrides: dict) -> str:
    coeffs = fp.feedback_coefficients()
    cost = fp.position_tracking_cost()
    grid = TimeGrid(0.0, 5.0, 500)
    direct = integrate_control_riccati(coeffs, cost, grid)
    problem = ControlProblem(A=coeffs.A, B=coeffs.B, F=cost.F, G=cost.G, horizon=5.0)
    dual = control_path_via_duality(problem, cost.Omega_T, grid, permutation=[1, 0])
    worst = np.abs(direct.values - dual.values).max()
    rng = np.random.default_rng(314)
    for _ in range(5):
        A = rng.standard_normal((4, 4)) * 0.5
        B = rng.standard_normal((4, 2))
        Fh = rng.standard_normal((4, 4))
        F = Fh @ Fh.T
        G = rng.standard_normal((2, 4)) * 0.3
        Wh = rng.standard_normal((4, 4))
        Omega_T = Wh @ Wh.T + 0.1 * np.eye(4)
        c = CostSpec(F=F, G=G, Omega_T=Omega_T)
        lc = type(coeffs)(A=A, B=B, C=np.zeros((1, 4)), N=np.eye(4), M=np.zeros((4, 1)))
        d = integrate_control_riccati(lc, c, TimeGrid(0.0, 1.0, 400))
        p = ControlProblem(A=A, B=B, F=F, G=G, horizon=1.0)
        v = control_path_via_duality(p, Omega_T, TimeGrid(0.0, 1.0, 400))
        worst = max(worst, float(np.abs(d.values - v.values).max()))
    assert worst < 1e-8, f"duality mismatch {worst:.2e}"
    return f"direct and dual value paths agree to {worst:.1e}"


def _suite_hjb(overrides: dict) -> str:
    coeffs = fp.feedback_coefficients()
    # terminal weight near the stationary value matrix keeps the
    # finite-difference stencil inside its accuracy budget
    cost = fp.position_tracking_cost(Omega_T=np.array([[1.05, 0.5], [0.5, 0.55]]))
    grid = TimeGrid(0.0, 5.0, 5000)
    Om = integrate_control_riccati(coeffs, cost, grid)
    Si = integrate_filter_riccati(coeffs, [[0.6, 0.5], [0.5, 1.1]], grid)
    al = integrate_alpha(Om, Si, coeffs, cost)
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(2, grid.n_steps - 1))
        X = rng.uniform(-2.0, 2.0, size=2)
        worst = max(worst, abs(hjb_residual(Om, al, k, X, Si.at(k), coeffs, cost)))
    assert worst < 1e-6, f"worst residual {worst:.2e}"
    return f"worst Bellman residual {worst:.1e} over 20 samples"


def _suite_optimality_probe(overrides: dict) -> str:
    coeffs = fp.feedback_coefficients()
    cost = fp.position_tracking_cost(Omega_T=np.eye(2))
    grid = TimeGrid(0.0, 5.0, 5000)
    n_traj = int(overrides.get("n_traj", 2000))
    config = SimConfig(grid=grid, n_traj=n_traj, seed=20240, record_stride=5000)
    initial = GaussianBelief(mean=[1.0, 0.0], cov=np.diag([0.5, 0.5]))

    Om = integrate_control_riccati(coeffs, cost, grid)
    Si = integrate_filter_riccati(coeffs, initial.cov, grid)
    analytic = total_minimal_cost(initial.mean, initial.cov, Om, Si, coeffs, cost)

    offset = np.asarray(overrides.get("gain_offset", [[0.2, 0.2]]), dtype=float)
    optimal = simulate_closed_loop(coeffs, cost, config, initial)
    detuned = simulate_closed_loop(coeffs, cost, config, initial, gain_offset=offset)
    mean, stderr = monte_carlo_expected_cost(optimal)
    z = (mean - analytic) / stderr
    assert abs(z) <= 3.0, f"optimal-cost z-score {z:.2f}"

    # same seed, same innovations: the cost difference is paired
    diff = detuned.total_costs - optimal.total_costs
    d_mean = float(diff.mean())
    d_se = float(diff.std(ddof=1) / np.sqrt(n_traj))
    assert d_mean > 3.0 * d_se, (
        f"perturbed gain not flagged (diff {d_mean:.4f}, se {d_se:.4f})"
    )
    return (
        f"z = {z:+.2f} against the analytic cost; "
        f"perturbed gain raises cost by {d_mean:.3f} ({d_mean / d_se:.0f} se)"
    )


def _suite_sme_consistency(overrides: dict) -> str:
    model = FiniteModel(H0=np.zeros((2, 2), dtype=complex), L_list=[SIGMA_Z])
    rho0 = DensityMatrix(0.5 * np.array([[1.0, 0.75], [0.75, 1.0]], dtype=complex))
    grid = overrides.get("sme_grid", TimeGrid(0.0, 0.2, 2000))
    config = SimConfig(grid=grid, n_traj=256, seed=4242, record_stride=grid.n_steps)
    ensemble = simulate_sme_ensemble(rho0, model, config)
    assert ensemble.max_trace_deviation <= 1e-9, (
        f"trace drifted by {ensemble.max_trace_deviation:.2e}"
    )
    assert ensemble.min_eigenvalue >= -1e-8, (
        f"eigenvalue floor {ensemble.min_eigenvalue:.2e}"
    )
    _, states = evolve_master(rho0, model, grid, record_stride=grid.n_steps)
    dist = trace_distance(ensemble.mean_states[-1], states[-1])
    assert dist <= 0.05, f"ensemble mean {dist:.3f} away from the master flow"
    return (
        f"min eigenvalue {ensemble.min_eigenvalue:+.1e}, "
        f"mean state within {dist:.4f} of the master flow"
    )


def _suite_weak_measurement(overrides: dict) -> str:
    L = SIGMA_Z + 0.3 * np.array([[0.0, -1.0j], [1.0j, 0.0]])
    H = 0.4 * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    model = FiniteModel(H0=H, L_list=[L])
    rho = DensityMatrix(
        np.array([[0.6, 0.15 - 0.05j], [0.15 + 0.05j, 0.4]], dtype=complex)
    )
    plus, minus = ancilla_quadrature_projectors()
    errors = []
    steps = [1e-2, 1e-3, 1e-4]
    for dt in steps:
        U = weak_measurement_unitary(L, dt, H=H)
        outcomes = discrete_conditioning(rho, U, [plus, minus])
        sqrt_dt = np.sqrt(dt)
        worst = 0.0
        for (prob, post), dY in zip(outcomes, [sqrt_dt, -sqrt_dt]):
            assert prob > 0
            euler = sme_step(rho, model, np.zeros(0), np.array([dY]), dt)
            worst = max(worst, trace_distance(post, euler))
        errors.append(worst)
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert slope >= 1.4, f"conditioning error slope {slope:.2f}"
    return f"ancilla step matches the diffusive step at order {slope:.2f}"


def _suite_rk4_order(overrides: dict) -> str:
    coeffs = fp.feedback_coefficients()
    horizon = 1.0
    reference = integrate_filter_riccati(
        coeffs, np.diag([2.0, 2.0]), TimeGrid(0.0, horizon, 1600)
    ).at(-1)
    errors = []
    steps = [1e-2, 5e-3, 2.5e-3]
    for dt in steps:
        path = integrate_filter_riccati(
            coeffs, np.diag([2.0, 2.0]), TimeGrid(0.0, horizon, round(horizon / dt))
        )
        errors.append(np.abs(path.at(-1) - reference).max())
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert slope >= 3.5, f"endpoint error slope {slope:.2f}"
    return f"endpoint error scales at order {slope:.2f}"


# the suites that reproduce the free-particle closed forms end to end,
# in the order the results read best
FREE_PARTICLE_SUITES = [
    "coefficients",
    "filter-relaxation",
    "spreading",
    "duality",
    "hjb-residual",
    "optimality-probe",
]

_SUITES = [
    ("coefficients", _suite_coefficients),
    ("filter-relaxation", _suite_filter_relaxation),
    ("spreading", _suite_spreading),
    ("duality", _suite_duality),
    ("hjb-residual", _suite_hjb),
    ("optimality-probe", _suite_optimality_probe),
    ("sme-consistency", _suite_sme_consistency),
    ("weak-measurement", _suite_weak_measurement),
    ("rk4-order", _suite_rk4_order),
]


def run_suites(
    overrides: dict | None = None,
    names: list[str] | None = None,
) -> list[SuiteResult]:
    """Run the named suites (all of them by default), catching failures.

    ``overrides`` feeds fixture substitutions to individual suites;
    unknown keys are ignored by suites that do not read them.
    """
    overrides = dict(overrides or {})
    if names is None:
        selected = _SUITES
    else:
        known = dict(_SUITES)
        unknown = [n for n in names if n not in known]
        if unknown:
            raise InvalidParameter(f"unknown suite names {unknown}")
        selected = [(n, known[n]) for n in names]
    results = []
    for name, check in selected:
        start = time.perf_counter()
        try:
            detail = check(overrides)
            passed = True
        except AssertionError as exc:
            detail, passed = str(exc), False
        except Exception as exc:  # noqa: BLE001 - report, do not mask siblings
            detail, passed = f"{type(exc).__name__}: {exc}", False
        results.append(
            SuiteResult(name, passed, time.perf_counter() - start, detail)
        )
    return results


def render_report(results: list[SuiteResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<18} {r.seconds:7.2f}s  {r.detail}")
    n_failed = sum(not r.passed for r in results)
    if n_failed:
        lines.append(f"{n_failed} of {len(results)} suites FAILED")
    else:
        lines.append(f"all {len(results)} suites passed")
    return "\n".join(lines)
