"""Covariance and value flows: Riccati, Lyapunov and scalar cost terms.

Everything here integrates with a fixed-step classical Runge-Kutta
scheme.  Fixed steps keep runs bit-reproducible, make the convergence
order testable and let filter and control paths share one grid, which
the cost assembly relies on.  Paths are dense: one matrix per grid
point, symmetrized at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import (
    DimensionMismatch,
    GridMismatch,
    InvalidParameter,
    NoConvergence,
    NonFinite,
    UncertaintyViolation,
    ValidationError,
)
from .phase_space import (
    LinearCoefficients,
    check_uncertainty,
    _asarray,
    _frozen,
    _symmetrize,
)

__all__ = [
    "TimeGrid",
    "CostSpec",
    "MatrixPath",
    "ScalarPath",
    "integrate_filter_riccati",
    "integrate_control_riccati",
    "integrate_alpha",
    "stationary_filter_covariance",
    "lyapunov_unconditional",
    "total_minimal_cost",
    "matrix_path_to_csv",
    "scalar_path_to_csv",
]

#: entries beyond this magnitude abort integration (finite-time escape)
ESCAPE_LIMIT = 1e12

_PSD_TOL = -1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_steps + 1`` points on ``[t0, t1]``."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self) -> None:
        if not self.t1 > self.t0:
            raise InvalidParameter(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if self.n_steps < 1:
            raise InvalidParameter(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    def times(self) -> NDArray[np.float64]:
        """All grid points, endpoints included."""
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    @property
    def n_points(self) -> int:
        return self.n_steps + 1


@dataclass(frozen=True)
class CostSpec:
    """Quadratic running cost and terminal weight.

    The running cost of a control ``u`` at state ``x`` is
    ``x' F x + 2 u' G x + u' u``; the terminal cost is
    ``x' Omega_T x``.  ``F`` and ``Omega_T`` must be symmetric positive
    semidefinite.
    """

    F: NDArray[np.float64]
    G: NDArray[np.float64]
    Omega_T: NDArray[np.float64]

    def __post_init__(self) -> None:
        F = np.array(self.F, dtype=float)
        if F.ndim != 2 or F.shape[0] != F.shape[1]:
            raise ValidationError(f"F must be square, got shape {F.shape}")
        m = F.shape[0]
        F = _symmetrize(F, "F")
        G = np.array(self.G, dtype=float)
        if G.ndim != 2 or G.shape[1] != m:
            raise ValidationError(f"G must have shape (k, {m}), got {G.shape}")
        Omega_T = _symmetrize(_asarray(self.Omega_T, float, (m, m), "Omega_T"), "Omega_T")
        for name, arr in (("F", F), ("Omega_T", Omega_T)):
            if float(np.min(np.linalg.eigvalsh(arr))) < _PSD_TOL:
                raise ValidationError(f"{name} must be positive semidefinite")
        object.__setattr__(self, "F", _frozen(F))
        object.__setattr__(self, "G", _frozen(G))
        object.__setattr__(self, "Omega_T", _frozen(Omega_T))

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def k(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True)
class MatrixPath:
    """Dense symmetric-matrix path on a :class:`TimeGrid`."""

    grid: TimeGrid
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3 or vals.shape[1] != vals.shape[2]:
            raise ValidationError(
                f"values must have shape (n_points, m, m), got {vals.shape}"
            )
        if vals.shape[0] != self.grid.n_points:
            raise GridMismatch(
                f"path has {vals.shape[0]} entries for a grid of "
                f"{self.grid.n_points} points"
            )
        object.__setattr__(self, "values", _frozen(vals))

    def at(self, index: int) -> NDArray[np.float64]:
        """Matrix at grid point ``index``."""
        return self.values[index]

    @property
    def final(self) -> NDArray[np.float64]:
        return self.values[-1]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ScalarPath:
    """Dense scalar path on a :class:`TimeGrid`."""

    grid: TimeGrid
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValidationError(f"values must be a vector, got shape {vals.shape}")
        if vals.shape[0] != self.grid.n_points:
            raise GridMismatch(
                f"path has {vals.shape[0]} entries for a grid of "
                f"{self.grid.n_points} points"
            )
        object.__setattr__(self, "values", _frozen(vals))


def _require_same_grid(*grids: TimeGrid) -> TimeGrid:
    first = grids[0]
    for other in grids[1:]:
        if (other.t0, other.t1, other.n_steps) != (first.t0, first.t1, first.n_steps):
            raise GridMismatch(f"grids differ: {first} vs {other}")
    return first


def _filter_rhs_factory(coeffs: LinearCoefficients):
    """Right-hand side S -> A S + S A' + N - (S C' + M)(S C' + M)'."""
    A = coeffs.A
    Ct = np.ascontiguousarray(coeffs.C.T)
    N = coeffs.N
    M = coeffs.M
    m, d = M.shape
    AS = np.empty((m, m))
    gain = np.empty((m, d))
    quad = np.empty((m, m))

    def rhs(S: np.ndarray, out: np.ndarray) -> None:
        np.matmul(A, S, out=AS)
        np.matmul(S, Ct, out=gain)
        np.add(gain, M, out=gain)
        np.matmul(gain, gain.T, out=quad)
        np.subtract(N, quad, out=out)
        out += AS
        out += AS.T

    return rhs


def _control_rhs_factory(coeffs: LinearCoefficients, cost: CostSpec):
    """Right-hand side (in reversed time) of the control Riccati flow."""
    A = coeffs.A
    Bt = np.ascontiguousarray(coeffs.B.T)
    F = cost.F
    G = cost.G
    m = A.shape[0]
    k = Bt.shape[0]
    OA = np.empty((m, m))
    gain = np.empty((k, m))
    quad = np.empty((m, m))

    def rhs(S: np.ndarray, out: np.ndarray) -> None:
        np.matmul(S, A, out=OA)
        np.matmul(Bt, S, out=gain)
        np.add(gain, G, out=gain)
        np.matmul(gain.T, gain, out=quad)
        np.subtract(F, quad, out=out)
        out += OA
        out += OA.T

    return rhs


def _lyapunov_rhs_factory(coeffs: LinearCoefficients):
    """Right-hand side S -> A S + S A' + N (no measurement update)."""
    A = coeffs.A
    N = coeffs.N
    m = A.shape[0]
    AS = np.empty((m, m))

    def rhs(S: np.ndarray, out: np.ndarray) -> None:
        np.matmul(A, S, out=AS)
        np.add(AS, AS.T, out=out)
        out += N
    return rhs


def _rk4_symmetric_path(rhs, S0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Integrate a symmetric-matrix ODE, storing every grid point.

    Raises NonFinite as soon as any entry passes ``ESCAPE_LIMIT`` (NaN
    counts as non-finite too).
    """
    m = S0.shape[0]
    path = np.empty((n_steps + 1, m, m))
    path[0] = S0
    S = S0.copy()
    k1 = np.empty((m, m))
    k2 = np.empty((m, m))
    k3 = np.empty((m, m))
    k4 = np.empty((m, m))
    stage = np.empty((m, m))
    half = 0.5 * dt
    sixth = dt / 6.0
    for i in range(1, n_steps + 1):
        rhs(S, k1)
        np.multiply(k1, half, out=stage)
        stage += S
        rhs(stage, k2)
        np.multiply(k2, half, out=stage)
        stage += S
        rhs(stage, k3)
        np.multiply(k3, dt, out=stage)
        stage += S
        rhs(stage, k4)
        k1 += k4
        k2 += k3
        k1 += k2
        k1 += k2
        np.multiply(k1, sixth, out=k1)
        S += k1
        np.add(S, S.T, out=stage)
        np.multiply(stage, 0.5, out=S)
        if not np.abs(S).max() <= ESCAPE_LIMIT:
            raise NonFinite(
                f"matrix entry passed {ESCAPE_LIMIT:.0e} at step {i} "
                f"(finite-time escape)"
            )
        path[i] = S
    return path


def integrate_filter_riccati(
    coeffs: LinearCoefficients,
    Sigma0: NDArray[np.float64],
    grid: TimeGrid,
    uncertainty: tuple[NDArray[np.float64], float] | None = None,
) -> MatrixPath:
    """Propagate the posterior covariance forward in time.

    Parameters
    ----------
    coeffs : LinearCoefficients
    Sigma0 : (m, m) array
        Symmetric initial covariance.
    grid : TimeGrid
    uncertainty : (J, hbar) or None
        When given, ``Sigma0`` and every point of the computed path are
        checked against the Heisenberg bound and
        :class:`UncertaintyViolation` is raised on the first failure.
        Without it the flow is treated as a classical Riccati equation
        and no bound is enforced.

    Returns
    -------
    MatrixPath
        Covariance at every grid point, ``Sigma0`` included.
    """
    Sigma0 = _symmetrize(_asarray(Sigma0, float, (coeffs.m, coeffs.m), "Sigma0"), "Sigma0")
    if uncertainty is not None:
        J, hbar = uncertainty
        report = check_uncertainty(Sigma0, J, hbar)
        if not report.passed:
            raise UncertaintyViolation(
                f"Sigma0 violates the Heisenberg bound "
                f"(min eigenvalue {report.min_eigenvalue:.3e})"
            )
    rhs = _filter_rhs_factory(coeffs)
    values = _rk4_symmetric_path(rhs, Sigma0, grid.dt, grid.n_steps)
    if uncertainty is not None:
        _check_path_uncertainty(values, grid, J, hbar)
    return MatrixPath(grid=grid, values=values)


def _check_path_uncertainty(
    values: np.ndarray, grid: TimeGrid, J: np.ndarray, hbar: float
) -> None:
    """Batched Heisenberg-bound check over a whole stored path."""
    from .phase_space import UNCERTAINTY_TOL

    herm = values.astype(complex)
    herm += 0.5j * hbar * np.asarray(J, dtype=float)
    eigs = np.linalg.eigvalsh(herm)
    worst = eigs[:, 0]
    bad = np.nonzero(worst < UNCERTAINTY_TOL)[0]
    if bad.size:
        k = int(bad[0])
        raise UncertaintyViolation(
            f"covariance broke the Heisenberg bound at t={grid.times()[k]:.6g} "
            f"(min eigenvalue {worst[k]:.3e})"
        )


def integrate_control_riccati(
    coeffs: LinearCoefficients,
    cost: CostSpec,
    grid: TimeGrid,
) -> MatrixPath:
    """Propagate the value matrix backward from its terminal weight.

    The flow runs backward from ``cost.Omega_T`` at ``grid.t1``; the
    returned path is indexed by forward time, so ``path.at(k)`` is the
    value matrix at ``grid.times()[k]`` and ``path.final`` equals
    ``Omega_T``.
    """
    if cost.m != coeffs.m:
        raise DimensionMismatch(
            f"cost is for dimension {cost.m}, coefficients for {coeffs.m}"
        )
    if cost.k != coeffs.k:
        raise ValidationError(
            f"cost expects {cost.k} controls, coefficients have {coeffs.k}"
        )
    rhs = _control_rhs_factory(coeffs, cost)
    reversed_path = _rk4_symmetric_path(rhs, cost.Omega_T.copy(), grid.dt, grid.n_steps)
    return MatrixPath(grid=grid, values=np.ascontiguousarray(reversed_path[::-1]))


def lyapunov_unconditional(
    coeffs: LinearCoefficients,
    Sigma0: NDArray[np.float64],
    grid: TimeGrid,
) -> MatrixPath:
    """Second moments without measurement conditioning (linear flow)."""
    Sigma0 = _symmetrize(_asarray(Sigma0, float, (coeffs.m, coeffs.m), "Sigma0"), "Sigma0")
    rhs = _lyapunov_rhs_factory(coeffs)
    values = _rk4_symmetric_path(rhs, Sigma0, grid.dt, grid.n_steps)
    return MatrixPath(grid=grid, values=values)


def stationary_filter_covariance(
    coeffs: LinearCoefficients,
    Sigma0: NDArray[np.float64] | None = None,
    tol: float = 1e-10,
    dt: float = 1e-2,
    t_max: float = 1e3,
) -> NDArray[np.float64]:
    """Long-time limit of the filter covariance.

    Integrates forward until the flow derivative satisfies
    ``max|dSigma/dt| < tol``, then verifies the algebraic fixed-point
    residual is below 1e-8.  Starts from the identity when ``Sigma0`` is
    not given.

    Raises
    ------
    NoConvergence
        If the derivative has not dropped below ``tol`` by ``t_max``.
    """
    m = coeffs.m
    if Sigma0 is None:
        Sigma0 = np.eye(m)
    S = _symmetrize(_asarray(Sigma0, float, (m, m), "Sigma0"), "Sigma0").copy()
    rhs = _filter_rhs_factory(coeffs)
    k1 = np.empty((m, m))
    k2 = np.empty((m, m))
    k3 = np.empty((m, m))
    k4 = np.empty((m, m))
    stage = np.empty((m, m))
    half = 0.5 * dt
    sixth = dt / 6.0
    n_max = int(np.ceil(t_max / dt))
    for _ in range(n_max):
        rhs(S, k1)
        if np.abs(k1).max() < tol:
            break
        np.multiply(k1, half, out=stage)
        stage += S
        rhs(stage, k2)
        np.multiply(k2, half, out=stage)
        stage += S
        rhs(stage, k3)
        np.multiply(k3, dt, out=stage)
        stage += S
        rhs(stage, k4)
        k1 += k4
        k2 += k3
        k1 += k2
        k1 += k2
        np.multiply(k1, sixth, out=k1)
        S += k1
        np.add(S, S.T, out=stage)
        np.multiply(stage, 0.5, out=S)
        if not np.abs(S).max() <= ESCAPE_LIMIT:
            raise NonFinite("covariance passed the escape limit; no stationary point")
    else:
        raise NoConvergence(
            f"flow derivative still above {tol:.1e} after t={t_max:g}"
        )
    rhs(S, k1)
    residual = float(np.abs(k1).max())
    if residual >= 1e-8:
        raise NoConvergence(
            f"stationary residual {residual:.3e} exceeds 1e-8"
        )
    return S


def integrate_alpha(
    Omega_path: MatrixPath,
    Sigma_path: MatrixPath,
    coeffs: LinearCoefficients,
    cost: CostSpec,
) -> ScalarPath:
    """Scalar value term, integrated backward from zero at the horizon.

    The integrand is ``tr[gain' gain Sigma] + tr[Omega N]`` with the
    feedback gain ``B' Omega + G``; quadrature is trapezoidal on the
    shared grid, matching the convention used by the cost assembly.
    """
    grid = _require_same_grid(Omega_path.grid, Sigma_path.grid)
    if Omega_path.m != coeffs.m or Sigma_path.m != coeffs.m:
        raise DimensionMismatch("paths and coefficients disagree on dimension")
    f = _cost_integrands(Omega_path.values, Sigma_path.values, coeffs, cost)
    increments = 0.5 * grid.dt * (f[:-1] + f[1:])
    forward = np.concatenate(([0.0], np.cumsum(increments)))
    return ScalarPath(grid=grid, values=forward[-1] - forward)


def _cost_integrands(
    Omega: np.ndarray, Sigma: np.ndarray, coeffs: LinearCoefficients, cost: CostSpec
) -> np.ndarray:
    """Pointwise ``tr[gain' gain Sigma] + tr[Omega N]`` along the paths."""
    gains = np.matmul(coeffs.B.T, Omega) + cost.G
    noise_term = np.einsum("tab,ba->t", Omega, coeffs.N)
    control_term = np.einsum("tka,tkb,tab->t", gains, gains, Sigma)
    return control_term + noise_term


def total_minimal_cost(
    Xbar: NDArray[np.float64],
    Sigma0: NDArray[np.float64],
    Omega_path: MatrixPath,
    Sigma_path: MatrixPath,
    coeffs: LinearCoefficients,
    cost: CostSpec,
) -> float:
    """Expected optimal cost from initial mean ``Xbar`` and covariance ``Sigma0``.

    Four terms: the quadratic form of the initial value matrix at
    ``Xbar``, its trace against ``Sigma0``, the accumulated noise term
    and the accumulated feedback term.  The last two are cross-checked
    against the scalar value term from :func:`integrate_alpha`; a
    disagreement beyond 1e-9 (relative to the total's scale) means the
    two quadratures diverged and is reported as a numerical error.
    """
    grid = _require_same_grid(Omega_path.grid, Sigma_path.grid)
    m = coeffs.m
    Xbar = _asarray(Xbar, float, (m,), "Xbar")
    Sigma0 = _symmetrize(_asarray(Sigma0, float, (m, m), "Sigma0"), "Sigma0")
    if not np.allclose(Sigma_path.at(0), Sigma0, atol=1e-12):
        raise ValidationError("Sigma_path does not start from Sigma0")

    Omega0 = Omega_path.at(0)
    static = float(Xbar @ Omega0 @ Xbar + np.trace(Omega0 @ Sigma0))

    f = _cost_integrands(Omega_path.values, Sigma_path.values, coeffs, cost)
    integral = float(np.trapezoid(f, dx=grid.dt))
    total = static + integral

    alpha0 = float(
        integrate_alpha(Omega_path, Sigma_path, coeffs, cost).values[0]
    )
    scale = max(1.0, abs(total))
    if abs(integral - alpha0) > 1e-9 * scale:
        raise NonFinite(
            f"cost quadratures disagree: {integral!r} vs alpha {alpha0!r}"
        )
    return total


def matrix_path_to_csv(path: MatrixPath, file, prefix: str) -> None:
    """Write ``t`` plus row-major matrix entries as CSV.

    Column headers are ``t`` followed by ``{prefix}_ij`` with 0-based
    row-major indices, e.g. ``S_00,S_01,S_10,S_11``.
    """
    m = path.m
    header = ",".join(
        ["t"] + [f"{prefix}_{i}{j}" for i in range(m) for j in range(m)]
    )
    flat = path.values.reshape(path.grid.n_points, m * m)
    data = np.column_stack([path.grid.times(), flat])
    np.savetxt(file, data, delimiter=",", header=header, comments="", fmt="%.17g")


def scalar_path_to_csv(path: ScalarPath, file, name: str = "alpha") -> None:
    """Write a scalar path as two-column CSV."""
    data = np.column_stack([path.grid.times(), path.values])
    np.savetxt(file, data, delimiter=",", header=f"t,{name}", comments="", fmt="%.17g")
