"""Finite-dimensional density-matrix engine.

Lindblad master flow, diffusive filtering of measurement records, and a
discrete conditioning oracle built from an explicit system-ancilla
unitary.  The filtering step integrates the unnormalized equation and
renormalizes by the trace: the fluctuation term is traceless exactly, so
the correction is second order in the step while the trace invariant
holds by construction.  Positivity is monitored, never projected;
eigenvalue clipping would silently mask integration error, so a state
drifting past the floor raises :class:`PositivityLoss` instead.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from .closed_loop import _CHUNK, _trajectory_rng, SimConfig
from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NotAProjectorFamily,
    NotUnitary,
    PositivityLoss,
)
from .phase_space import _frozen

__all__ = [
    "DensityMatrix",
    "FiniteModel",
    "SmeTrajectory",
    "SmeEnsemble",
    "lindblad_heisenberg",
    "lindblad_schrodinger",
    "master_step",
    "evolve_master",
    "sme_step",
    "simulate_sme_trajectory",
    "simulate_sme_ensemble",
    "discrete_conditioning",
    "weak_measurement_unitary",
    "ancilla_quadrature_projectors",
    "trace_norm",
    "trace_distance",
    "finite_model_from_json",
    "sme_trajectory_to_csv",
]

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9

#: eigenvalue floor; below this the step size was too coarse
POSITIVITY_FLOOR = -1e-6


def _dagger(X: np.ndarray) -> np.ndarray:
    return X.conj().swapaxes(-1, -2)


def trace_norm(X: NDArray[np.complex128]) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    return float(np.abs(np.linalg.eigvalsh(X)).sum())


def trace_distance(a, b) -> float:
    """Half the trace norm of the difference of two states."""
    if isinstance(a, DensityMatrix):
        a = a.entries
    if isinstance(b, DensityMatrix):
        b = b.entries
    return 0.5 * trace_norm(a - b)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian unit-trace state with a bounded negativity allowance.

    The eigenvalue floor is the coarse-step failure threshold rather
    than a strict zero, so that integration error surfaces as a
    :class:`PositivityLoss` instead of being hidden by clipping.
    """

    entries: NDArray[np.complex128]

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionMismatch(
                f"state must be square, got shape {entries.shape}"
            )
        if np.abs(entries - entries.conj().T).max() > HERMITICITY_TOL:
            raise InvalidParameter("state is not Hermitian")
        trace = complex(np.trace(entries))
        if abs(trace - 1.0) > TRACE_TOL:
            raise InvalidParameter(f"state trace {trace} is not 1")
        low = float(np.linalg.eigvalsh(entries).min())
        if low < POSITIVITY_FLOOR:
            raise PositivityLoss(f"state eigenvalue {low:.3e} below floor")
        object.__setattr__(self, "entries", _frozen(entries))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def expectation(self, X: NDArray[np.complex128]) -> complex:
        """Tr[rho X]."""
        X = np.asarray(X, dtype=complex)
        if X.shape != self.entries.shape:
            raise DimensionMismatch(
                f"observable shape {X.shape} does not match dim {self.dim}"
            )
        return complex(np.einsum("ij,ji->", self.entries, X))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries).min())

    @classmethod
    def pure(cls, amplitudes) -> "DensityMatrix":
        """Rank-one state from a ket, normalized."""
        psi = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise InvalidParameter("zero vector has no direction")
        psi = psi / norm
        return cls(np.outer(psi, psi.conj()))


def _stack_operators(ops, n: int, what: str) -> np.ndarray:
    arr = np.asarray(ops, dtype=complex)
    if arr.size == 0:
        return np.zeros((0, n, n), dtype=complex)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (n, n):
        raise DimensionMismatch(
            f"{what} must be a sequence of {n}x{n} matrices, got {arr.shape}"
        )
    return arr


@dataclass(frozen=True)
class FiniteModel:
    """Hamiltonian family H0 + sum_k u_k H_k and coupling operators.

    Every Hamiltonian term must be Hermitian so H(u) is Hermitian for
    any real control.  Couplings are unrestricted complex matrices, one
    per output channel.
    """

    H0: NDArray[np.complex128]
    L_list: NDArray[np.complex128]
    H_controls: NDArray[np.complex128] = ()
    hbar: float = 1.0

    def __post_init__(self) -> None:
        H0 = np.asarray(self.H0, dtype=complex)
        if H0.ndim != 2 or H0.shape[0] != H0.shape[1]:
            raise DimensionMismatch(f"H0 must be square, got {H0.shape}")
        n = H0.shape[0]
        Ls = _stack_operators(self.L_list, n, "L_list")
        Hs = _stack_operators(self.H_controls, n, "H_controls")
        for name, term in [("H0", H0)] + [
            (f"H_controls[{i}]", Hs[i]) for i in range(Hs.shape[0])
        ]:
            if np.abs(term - term.conj().T).max() > 1e-12:
                raise InvalidParameter(f"{name} is not Hermitian")
        if not self.hbar > 0:
            raise InvalidParameter(f"hbar must be positive, got {self.hbar}")
        object.__setattr__(self, "H0", _frozen(H0))
        object.__setattr__(self, "L_list", _frozen(Ls))
        object.__setattr__(self, "H_controls", _frozen(Hs))

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def n_channels(self) -> int:
        return self.L_list.shape[0]

    @property
    def n_controls(self) -> int:
        return self.H_controls.shape[0]

    def hamiltonian(self, u=None) -> NDArray[np.complex128]:
        """H0 + sum_k u_k H_k; ``u=None`` means all controls off."""
        if u is None:
            return self.H0
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape[0] != self.n_controls:
            raise DimensionMismatch(
                f"control has {u.shape[0]} entries, model has "
                f"{self.n_controls} control Hamiltonians"
            )
        return self.H0 + np.einsum("k,kij->ij", u, self.H_controls)


def lindblad_heisenberg(
    X: NDArray[np.complex128], model: FiniteModel, u=None
) -> NDArray[np.complex128]:
    """Heisenberg-picture generator on an observable.

    (i/hbar)[H,X] + sum_i (Li' X Li - (Li'Li X + X Li'Li)/2); the output
    is Hermitized, and pairing with any state matches the state-picture
    generator (adjoint identity).
    """
    n = model.dim
    X = np.asarray(X, dtype=complex)
    if X.shape != (n, n):
        raise DimensionMismatch(f"observable shape {X.shape}, model dim {n}")
    if np.abs(X - X.conj().T).max() > HERMITICITY_TOL:
        raise InvalidParameter("observable is not Hermitian")
    H = model.hamiltonian(u)
    out = (1j / model.hbar) * (H @ X - X @ H)
    for L in model.L_list:
        Ld = L.conj().T
        LdL = Ld @ L
        out = out + Ld @ X @ L - 0.5 * (LdL @ X + X @ LdL)
    return 0.5 * (out + out.conj().T)


def lindblad_schrodinger(
    rho: NDArray[np.complex128], model: FiniteModel, u=None
) -> NDArray[np.complex128]:
    """State-picture generator, the adjoint of :func:`lindblad_heisenberg`.

    -(i/hbar)[H,rho] + sum_i (Li rho Li' - (Li'Li rho + rho Li'Li)/2).
    Operates on raw arrays so flows can stay unnormalized mid-scheme.
    """
    n = model.dim
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (n, n):
        raise DimensionMismatch(f"state shape {rho.shape}, model dim {n}")
    H = model.hamiltonian(u)
    out = (-1j / model.hbar) * (H @ rho - rho @ H)
    for L in model.L_list:
        Ld = L.conj().T
        LdL = Ld @ L
        out = out + L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def master_step(
    rho: DensityMatrix, model: FiniteModel, u, dt: float
) -> DensityMatrix:
    """One RK4 step of the unconditional flow.

    The generator is trace-free, so the trace survives to roundoff; the
    result is Hermitized and revalidated, surfacing a coarse step as
    :class:`PositivityLoss`.
    """
    if not dt > 0:
        raise InvalidParameter(f"dt must be positive, got {dt}")
    y = rho.entries
    k1 = lindblad_schrodinger(y, model, u)
    k2 = lindblad_schrodinger(y + 0.5 * dt * k1, model, u)
    k3 = lindblad_schrodinger(y + 0.5 * dt * k2, model, u)
    k4 = lindblad_schrodinger(y + dt * k3, model, u)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return DensityMatrix(0.5 * (out + out.conj().T))


def evolve_master(
    rho0: DensityMatrix,
    model: FiniteModel,
    grid,
    u=None,
    record_stride: int = 1,
) -> tuple[NDArray[np.float64], NDArray[np.complex128]]:
    """March the master equation over a grid, thinning the record.

    Returns the recorded times and a stacked array of states, initial
    state included.
    """
    if grid.n_steps % record_stride != 0:
        raise InvalidParameter(
            f"record_stride {record_stride} does not divide {grid.n_steps}"
        )
    n_rec = grid.n_steps // record_stride + 1
    states = np.empty((n_rec, model.dim, model.dim), dtype=complex)
    states[0] = rho0.entries
    current = rho0
    row = 1
    dt = grid.dt
    for step in range(grid.n_steps):
        current = master_step(current, model, u, dt)
        if (step + 1) % record_stride == 0:
            states[row] = current.entries
            row += 1
    return _frozen(grid.times()[::record_stride].copy()), _frozen(states)


def sme_step(
    rho: DensityMatrix, model: FiniteModel, u, dY, dt: float
) -> DensityMatrix:
    """One Euler step of the diffusive filtering equation.

    The record enters through the innovation dY_i - <Li+Li'> dt with
    fluctuation coefficient rho Li' + Li rho - <Li+Li'> rho; afterwards
    the state is Hermitized and renormalized by its trace.
    """
    if not dt > 0:
        raise InvalidParameter(f"dt must be positive, got {dt}")
    dY = np.asarray(dY, dtype=float).reshape(-1)
    if dY.shape[0] != model.n_channels:
        raise DimensionMismatch(
            f"record has {dY.shape[0]} channels, model has {model.n_channels}"
        )
    y = rho.entries
    out = y + dt * lindblad_schrodinger(y, model, u)
    for i, L in enumerate(model.L_list):
        Ld = L.conj().T
        e = float(np.einsum("ij,ji->", y, L + Ld).real)
        fluct = y @ Ld + L @ y - e * y
        out = out + fluct * (dY[i] - e * dt)
    out = 0.5 * (out + out.conj().T)
    out = out / float(np.trace(out).real)
    return DensityMatrix(out)


@dataclass(frozen=True)
class SmeTrajectory:
    """One filtered path at the recorded times.

    ``outputs`` holds measurement-record increments accumulated over the
    interval ending at each row (first row zero).  Indexing yields
    ``(t, DensityMatrix, dY, u)`` tuples.
    """

    times: NDArray[np.float64]
    states: NDArray[np.complex128]
    outputs: NDArray[np.float64]
    controls: NDArray[np.float64]

    def __len__(self) -> int:
        return self.times.shape[0]

    def __getitem__(self, i: int):
        return (
            float(self.times[i]),
            DensityMatrix(self.states[i]),
            self.outputs[i],
            self.controls[i],
        )

    def expectation_path(self, X) -> NDArray[np.complex128]:
        """Tr[rho_t X] at every recorded time."""
        X = np.asarray(X, dtype=complex)
        return np.einsum("tij,ji->t", self.states, X)


def simulate_sme_trajectory(
    rho0: DensityMatrix,
    model: FiniteModel,
    control_policy,
    config: SimConfig,
) -> SmeTrajectory:
    """Drive the filtering equation with simulated innovations.

    ``control_policy`` maps ``(t, DensityMatrix)`` to a control vector
    (``None`` keeps every control off); feedback through the filter
    state is exactly the admissible dependence on the output record.
    The record is reconstructed as dY = <L+L'> dt + dW from the
    trajectory's own noise stream, so runs are reproducible from
    ``config.seed``.
    """
    if config.n_traj != 1:
        raise InvalidParameter(
            "single-trajectory simulation requires n_traj=1; "
            "use simulate_sme_ensemble for ensembles"
        )
    if rho0.dim != model.dim:
        raise DimensionMismatch(
            f"state dim {rho0.dim} does not match model dim {model.dim}"
        )
    n, d = model.dim, model.n_channels
    grid = config.grid
    dt = grid.dt
    sqrt_dt = math.sqrt(dt)
    n_rec = config.n_records
    k = model.n_controls

    rng = _trajectory_rng(config.seed, 0)
    times = grid.times()
    states = np.empty((n_rec, n, n), dtype=complex)
    outputs = np.zeros((n_rec, d))
    controls = np.zeros((n_rec, k))

    current = rho0
    u = None if control_policy is None else control_policy(times[0], rho0)
    states[0] = rho0.entries
    if u is not None:
        controls[0] = np.asarray(u, dtype=float).reshape(-1)
    block = np.zeros(d)
    row = 1
    Lsum = model.L_list + _dagger(model.L_list)
    for step in range(grid.n_steps):
        expect = np.einsum("ij,cji->c", current.entries, Lsum).real
        dY = expect * dt + rng.standard_normal(d) * sqrt_dt
        current = sme_step(current, model, u, dY, dt)
        block += dY
        if control_policy is not None:
            u = control_policy(times[step + 1], current)
        if (step + 1) % config.record_stride == 0:
            states[row] = current.entries
            outputs[row] = block
            if u is not None:
                controls[row] = np.asarray(u, dtype=float).reshape(-1)
            block = np.zeros(d)
            row += 1
    for arr in (states, outputs, controls):
        _frozen(arr)
    return SmeTrajectory(
        times=_frozen(times[:: config.record_stride].copy()),
        states=states, outputs=outputs, controls=controls,
    )


@dataclass(frozen=True)
class SmeEnsemble:
    """Ensemble summary: mean state path plus per-trajectory endpoints.

    ``min_eigenvalue`` is the most negative eigenvalue seen at any step
    of any trajectory; ``max_trace_deviation`` the largest |Tr-1| after
    renormalization.
    """

    config: SimConfig
    times: NDArray[np.float64]
    mean_states: NDArray[np.complex128]
    final_states: NDArray[np.complex128]
    min_eigenvalue: float
    max_trace_deviation: float

    def __len__(self) -> int:
        return self.final_states.shape[0]


def _batched_min_eig(states: np.ndarray) -> float:
    """Smallest eigenvalue across a batch of Hermitian matrices."""
    n = states.shape[-1]
    if n == 2:
        half_tr = 0.5 * (states[:, 0, 0] + states[:, 1, 1]).real
        det = (
            states[:, 0, 0] * states[:, 1, 1]
            - states[:, 0, 1] * states[:, 1, 0]
        ).real
        gap = np.sqrt(np.maximum(half_tr * half_tr - det, 0.0))
        return float((half_tr - gap).min())
    return float(np.linalg.eigvalsh(states).min())


def simulate_sme_ensemble(
    rho0: DensityMatrix,
    model: FiniteModel,
    config: SimConfig,
    u=None,
) -> SmeEnsemble:
    """Many filtering trajectories under a constant control.

    Trajectories run in fixed-size batches with one counter-based noise
    stream per trajectory, so results are independent of batch layout
    and of the ``QLQG_THREADS`` worker count.  Positivity and the trace
    are checked after every step of every trajectory; the worst values
    are reported on the ensemble.  Feedback policies need the
    single-trajectory entry point.
    """
    if rho0.dim != model.dim:
        raise DimensionMismatch(
            f"state dim {rho0.dim} does not match model dim {model.dim}"
        )
    n, d = model.dim, model.n_channels
    grid = config.grid
    dt, sqrt_dt = grid.dt, math.sqrt(grid.dt)
    n_steps = grid.n_steps
    stride = config.record_stride
    n_rec = config.n_records
    n_traj = config.n_traj

    H = model.hamiltonian(u)
    apply_h = bool(np.any(H))
    Ls = np.asarray(model.L_list)
    Lds = _dagger(Ls)
    LdLs = np.matmul(Lds, Ls)
    Lsums = Ls + Lds

    starts = list(range(0, n_traj, _CHUNK))
    sums = np.zeros((len(starts), n_rec, n, n), dtype=complex)
    finals = np.empty((n_traj, n, n), dtype=complex)
    worst_eig = np.full(len(starts), np.inf)
    worst_trace = np.zeros(len(starts))

    def run_chunk(ci: int) -> None:
        start = starts[ci]
        stop = min(start + _CHUNK, n_traj)
        B = stop - start
        noise = np.empty((B, n_steps, d))
        for i in range(B):
            rng = _trajectory_rng(config.seed, start + i)
            noise[i] = rng.standard_normal((n_steps, d)) * sqrt_dt
        states = np.tile(rho0.entries, (B, 1, 1))
        sums[ci, 0] = states.sum(axis=0)
        low = _batched_min_eig(states)
        trace_dev = 0.0
        row = 1
        for step in range(n_steps):
            dW = noise[:, step]
            if apply_h:
                HR = np.matmul(H, states)
                drift = (-1j / model.hbar) * (HR - _dagger(HR))
            else:
                drift = np.zeros_like(states)
            stoch = np.zeros_like(states)
            for c in range(d):
                LR = np.matmul(Ls[c], states)
                drift += np.matmul(LR, Lds[c]) - 0.5 * (
                    np.matmul(LdLs[c], states) + np.matmul(states, LdLs[c])
                )
                fluct = LR + np.matmul(states, Lds[c])
                e = np.einsum("bij,ji->b", states, Lsums[c]).real
                fluct -= e[:, None, None] * states
                stoch += fluct * dW[:, c][:, None, None]
            states = states + drift * dt + stoch
            states = 0.5 * (states + _dagger(states))
            tr = np.einsum("bii->b", states).real
            states /= tr[:, None, None]
            trace_dev = max(
                trace_dev,
                float(np.abs(np.einsum("bii->b", states).real - 1.0).max()),
            )
            step_low = _batched_min_eig(states)
            low = min(low, step_low)
            if step_low < POSITIVITY_FLOOR:
                raise PositivityLoss(
                    f"eigenvalue {step_low:.3e} below floor at "
                    f"t={grid.t0 + (step + 1) * dt:.6g}"
                )
            if (step + 1) % stride == 0:
                sums[ci, row] += states.sum(axis=0)
                row += 1
        finals[start:stop] = states
        worst_eig[ci] = low
        worst_trace[ci] = trace_dev

    workers = int(os.environ.get("QLQG_THREADS", "1") or "1")
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, range(len(starts))))
    else:
        for ci in range(len(starts)):
            run_chunk(ci)

    mean_states = sums.sum(axis=0) / n_traj
    return SmeEnsemble(
        config=config,
        times=_frozen(grid.times()[::stride].copy()),
        mean_states=_frozen(mean_states),
        final_states=_frozen(finals),
        min_eigenvalue=float(worst_eig.min()),
        max_trace_deviation=float(worst_trace.max()),
    )


def _check_projector_family(projectors, dim: int) -> np.ndarray:
    arr = _stack_operators(projectors, dim, "projectors")
    if arr.shape[0] == 0:
        raise NotAProjectorFamily("family is empty")
    for i, P in enumerate(arr):
        if np.abs(P - P.conj().T).max() > 1e-10:
            raise NotAProjectorFamily(f"projector {i} is not Hermitian")
        if np.abs(P @ P - P).max() > 1e-10:
            raise NotAProjectorFamily(f"projector {i} is not idempotent")
    for i in range(arr.shape[0]):
        for j in range(i + 1, arr.shape[0]):
            if np.abs(arr[i] @ arr[j]).max() > 1e-10:
                raise NotAProjectorFamily(
                    f"projectors {i} and {j} are not orthogonal"
                )
    if np.abs(arr.sum(axis=0) - np.eye(dim)).max() > 1e-10:
        raise NotAProjectorFamily("family does not resolve the identity")
    return arr


def discrete_conditioning(
    rho: DensityMatrix,
    U: NDArray[np.complex128],
    projectors,
    ancilla_state=None,
) -> list[tuple[float, DensityMatrix | None]]:
    """Bayes conditioning through an entangling unitary.

    Couples the system to a fresh ancilla, applies ``U``, and reads the
    ancilla with the given projective family.  Returns one
    ``(probability, posterior)`` pair per projector; an outcome of zero
    probability carries ``None`` for the posterior.  Probabilities sum
    to one because the family resolves the ancilla identity.
    """
    n = rho.dim
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] % n != 0:
        raise DimensionMismatch(
            f"unitary shape {U.shape} is not a multiple of system dim {n}"
        )
    a = U.shape[0] // n
    if np.abs(U.conj().T @ U - np.eye(n * a)).max() > 1e-10:
        raise NotUnitary("U'U deviates from the identity")
    family = _check_projector_family(projectors, a)

    if ancilla_state is None:
        phi = np.zeros(a, dtype=complex)
        phi[0] = 1.0
    else:
        phi = np.asarray(ancilla_state, dtype=complex).reshape(-1)
        if phi.shape[0] != a:
            raise DimensionMismatch(
                f"ancilla state has dim {phi.shape[0]}, expected {a}"
            )
        if abs(np.linalg.norm(phi) - 1.0) > 1e-12:
            raise InvalidParameter("ancilla state is not normalized")

    joint = U @ np.kron(rho.entries, np.outer(phi, phi.conj())) @ U.conj().T
    joint4 = joint.reshape(n, a, n, a)
    results: list[tuple[float, DensityMatrix | None]] = []
    for P in family:
        reduced = np.einsum("iajc,ca->ij", joint4, P)
        prob = float(np.trace(reduced).real)
        if prob <= 1e-14:
            results.append((0.0, None))
            continue
        post = reduced / prob
        results.append((prob, DensityMatrix(0.5 * (post + post.conj().T))))
    return results


def weak_measurement_unitary(
    L: NDArray[np.complex128],
    dt: float,
    H: NDArray[np.complex128] | None = None,
    hbar: float = 1.0,
) -> NDArray[np.complex128]:
    """Repeated-interaction unitary for one weak step of one channel.

    exp(sqrt(dt)(L (x) a' - L' (x) a) - (i/hbar) H (x) I dt) on
    system (x) two-level ancilla; reading the ancilla quadrature
    reproduces the diffusive filtering step to O(dt^(3/2)).
    """
    if not dt > 0:
        raise InvalidParameter(f"dt must be positive, got {dt}")
    L = np.asarray(L, dtype=complex)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionMismatch(f"coupling must be square, got {L.shape}")
    lower = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    raise_op = lower.conj().T
    gen = math.sqrt(dt) * (np.kron(L, raise_op) - np.kron(L.conj().T, lower))
    if H is not None:
        H = np.asarray(H, dtype=complex)
        if H.shape != L.shape:
            raise DimensionMismatch(
                f"H shape {H.shape} does not match coupling {L.shape}"
            )
        gen = gen + (-1j * dt / hbar) * np.kron(H, np.eye(2))
    return expm(gen)


def ancilla_quadrature_projectors() -> tuple[np.ndarray, np.ndarray]:
    """Projectors onto the ancilla quadrature eigenstates (|0>+-|1>)/sqrt(2).

    The two outcomes correspond to record increments +-sqrt(dt).
    """
    plus = 0.5 * np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex)
    minus = 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=complex)
    return plus, minus


def finite_model_from_json(source: str | Path | dict) -> FiniteModel:
    """Load a :class:`FiniteModel` from a JSON file or parsed dict.

    Expected keys: ``dim``, ``hbar``, ``H0``, ``H_controls`` (list),
    ``L_list`` (list); complex matrices are ``{"re": ..., "im": ...}``
    pairs of nested row-major lists.
    """
    if isinstance(source, dict):
        data = source
    else:
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)

    for key in ["dim", "hbar", "H0", "H_controls", "L_list"]:
        if key not in data:
            raise InvalidParameter(f"finite model JSON is missing key '{key}'")
    n = int(data["dim"])
    if n <= 0:
        raise InvalidParameter(f"'dim' must be positive, got {n}")

    def grab(obj, key: str) -> np.ndarray:
        if not isinstance(obj, dict) or "re" not in obj or "im" not in obj:
            raise InvalidParameter(f"key '{key}' must be a {{re, im}} pair")
        try:
            re = np.array(obj["re"], dtype=float)
            im = np.array(obj["im"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidParameter(f"key '{key}' is not numeric") from exc
        if re.shape != (n, n) or im.shape != (n, n):
            raise DimensionMismatch(
                f"key '{key}' must have shape ({n}, {n}), got "
                f"{re.shape} and {im.shape}"
            )
        return re + 1j * im

    H0 = grab(data["H0"], "H0")
    Hs = [grab(o, f"H_controls[{i}]") for i, o in enumerate(data["H_controls"])]
    Ls = [grab(o, f"L_list[{i}]") for i, o in enumerate(data["L_list"])]
    return FiniteModel(
        H0=H0, L_list=Ls, H_controls=Hs, hbar=float(data["hbar"])
    )


def sme_trajectory_to_csv(
    traj: SmeTrajectory, file, observables=None, include_state: bool = False
) -> None:
    """Write a trajectory as CSV: time, expectation values, record and
    control columns, optionally the flattened state entries."""
    names: list[str] = ["t"]
    columns: list[np.ndarray] = [traj.times]
    if observables:
        for name, X in observables.items():
            X = np.asarray(X, dtype=complex)
            if np.abs(X - X.conj().T).max() > HERMITICITY_TOL:
                raise InvalidParameter(f"observable '{name}' is not Hermitian")
            names.append(f"exp_{name}")
            columns.append(traj.expectation_path(X).real)
    d = traj.outputs.shape[1]
    k = traj.controls.shape[1]
    names += [f"dY_{i}" for i in range(d)]
    columns += [traj.outputs[:, i] for i in range(d)]
    names += [f"u_{i}" for i in range(k)]
    columns += [traj.controls[:, i] for i in range(k)]
    if include_state:
        dim = traj.states.shape[1]
        for i in range(dim):
            for j in range(dim):
                names += [f"rho_re_{i}{j}", f"rho_im_{i}{j}"]
                columns += [traj.states[:, i, j].real, traj.states[:, i, j].imag]
    data = np.column_stack(columns)
    np.savetxt(
        file, data, delimiter=",", header=",".join(names), comments="",
        fmt="%.17g",
    )
