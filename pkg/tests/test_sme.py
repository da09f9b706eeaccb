import io
import json
import math

import numpy as np
import pytest
from scipy.linalg import expm

from qlqg.closed_loop import SimConfig, running_posterior_cost
from qlqg.errors import (
    DimensionMismatch,
    InvalidParameter,
    NotAProjectorFamily,
    NotUnitary,
    PositivityLoss,
)
from qlqg.phase_space import build_coefficients, free_particle_model
from qlqg.riccati import CostSpec, TimeGrid, lyapunov_unconditional
from qlqg.sme import (
    DensityMatrix,
    FiniteModel,
    ancilla_quadrature_projectors,
    discrete_conditioning,
    evolve_master,
    finite_model_from_json,
    lindblad_heisenberg,
    lindblad_schrodinger,
    master_step,
    simulate_sme_ensemble,
    simulate_sme_trajectory,
    sme_step,
    sme_trajectory_to_csv,
    trace_distance,
    trace_norm,
    weak_measurement_unitary,
)

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, -1.0j], [1.0j, 0.0]])
SZ = np.diag([1.0, -1.0]).astype(complex)


def dephasing_model():
    return FiniteModel(H0=np.zeros((2, 2)), L_list=[SZ])


def plus_state():
    return DensityMatrix.pure([1.0, 1.0])


def mixed_state():
    # enough mixedness that Euler steps cannot push an eigenvalue negative
    return DensityMatrix(0.5 * np.array([[1.0, 0.75], [0.75, 1.0]], dtype=complex))


def random_state(rng, n):
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    rho = G @ G.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


def random_model(rng, n, channels=2):
    H = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    Ls = [
        rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        for _ in range(channels)
    ]
    return FiniteModel(H0=H + H.conj().T, L_list=Ls)


class TestDensityMatrix:
    def test_rejects_non_hermitian(self):
        with pytest.raises(InvalidParameter, match="Hermitian"):
            DensityMatrix(np.array([[0.5, 0.5], [0.0, 0.5]]))

    def test_rejects_wrong_trace(self):
        with pytest.raises(InvalidParameter, match="trace"):
            DensityMatrix(np.eye(2))

    def test_rejects_negative_state(self):
        with pytest.raises(PositivityLoss):
            DensityMatrix(np.diag([1.5, -0.5]))

    def test_tolerates_tiny_negativity(self):
        eps = 5e-7
        rho = DensityMatrix(np.diag([1.0 + eps, -eps]))
        assert rho.min_eigenvalue() == pytest.approx(-eps, rel=1e-6)

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatch):
            DensityMatrix(np.zeros((2, 3)))

    def test_pure_state_normalizes(self):
        rho = DensityMatrix.pure([2.0, 2.0])
        np.testing.assert_allclose(rho.entries, 0.5 * np.ones((2, 2)), atol=1e-15)

    def test_pure_rejects_zero_vector(self):
        with pytest.raises(InvalidParameter):
            DensityMatrix.pure([0.0, 0.0])

    def test_expectation(self):
        assert plus_state().expectation(SX).real == pytest.approx(1.0)
        with pytest.raises(DimensionMismatch):
            plus_state().expectation(np.eye(3))

    def test_entries_frozen(self):
        rho = plus_state()
        with pytest.raises(ValueError):
            rho.entries[0, 0] = 2.0


class TestFiniteModel:
    def test_hamiltonian_combination(self):
        model = FiniteModel(H0=SZ, L_list=[], H_controls=[SX, SY])
        H = model.hamiltonian([0.5, -1.0])
        np.testing.assert_allclose(H, SZ + 0.5 * SX - 1.0 * SY, atol=1e-15)
        np.testing.assert_allclose(model.hamiltonian(), SZ, atol=1e-15)

    def test_rejects_non_hermitian_h0(self):
        with pytest.raises(InvalidParameter, match="H0"):
            FiniteModel(H0=np.array([[0.0, 1.0], [0.0, 0.0]]), L_list=[])

    def test_rejects_non_hermitian_control(self):
        bad = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(InvalidParameter, match="H_controls"):
            FiniteModel(H0=SZ, L_list=[], H_controls=[bad])

    def test_rejects_wrong_control_length(self):
        model = FiniteModel(H0=SZ, L_list=[], H_controls=[SX])
        with pytest.raises(DimensionMismatch):
            model.hamiltonian([1.0, 2.0])

    def test_rejects_bad_hbar(self):
        with pytest.raises(InvalidParameter, match="hbar"):
            FiniteModel(H0=SZ, L_list=[], hbar=0.0)

    def test_rejects_mismatched_coupling(self):
        with pytest.raises(DimensionMismatch):
            FiniteModel(H0=SZ, L_list=[np.zeros((3, 3))])

    def test_counts(self):
        model = FiniteModel(H0=SZ, L_list=[SX, SY], H_controls=[SZ])
        assert (model.dim, model.n_channels, model.n_controls) == (2, 2, 1)


class TestLindblad:
    def test_identity_is_fixed(self):
        rng = np.random.default_rng(5)
        model = random_model(rng, 3)
        out = lindblad_heisenberg(np.eye(3, dtype=complex), model)
        assert np.abs(out).max() < 1e-12

    def test_dephasing_shrinks_sigma_x(self):
        out = lindblad_heisenberg(SX, dephasing_model())
        np.testing.assert_allclose(out, -2.0 * SX, atol=1e-14)

    def test_rejects_non_hermitian_observable(self):
        with pytest.raises(InvalidParameter):
            lindblad_heisenberg(np.array([[0, 1], [0, 0]]), dephasing_model())

    def test_adjoint_identity(self):
        # pairing either generator against the other side must agree
        rng = np.random.default_rng(31)
        for n in (2, 3, 4):
            for _ in range(20):
                model = random_model(rng, n)
                rho = random_state(rng, n)
                X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
                X = X + X.conj().T
                lhs = np.einsum(
                    "ij,ji->", lindblad_schrodinger(rho.entries, model), X
                )
                rhs = np.einsum(
                    "ij,ji->", rho.entries, lindblad_heisenberg(X, model)
                )
                assert abs(lhs - rhs) < 1e-10

    def test_state_generator_is_traceless(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            model = random_model(rng, 3)
            rho = random_state(rng, 3)
            assert abs(np.trace(lindblad_schrodinger(rho.entries, model))) < 1e-12

    def test_flow_derivative_oracle(self):
        # <L[X]> against a finite difference of the master flow at t=0
        rng = np.random.default_rng(44)
        model = random_model(rng, 3)
        rho = random_state(rng, 3)
        X = rng.standard_normal((3, 3))
        X = (X + X.T).astype(complex)
        h = 1e-8
        stepped = master_step(rho, model, None, h)
        fd = (stepped.expectation(X).real - rho.expectation(X).real) / h
        direct = np.einsum(
            "ij,ji->", rho.entries, lindblad_heisenberg(X, model)
        ).real
        assert abs(fd - direct) < 1e-6

    def test_hbar_scales_hamiltonian_part(self):
        fast = FiniteModel(H0=SZ, L_list=[])
        slow = FiniteModel(H0=SZ, L_list=[], hbar=2.0)
        out_fast = lindblad_heisenberg(SX, fast)
        out_slow = lindblad_heisenberg(SX, slow)
        np.testing.assert_allclose(out_slow, 0.5 * out_fast, atol=1e-14)


class TestMasterStep:
    def test_free_evolution_is_identity(self):
        model = FiniteModel(H0=np.zeros((2, 2)), L_list=[])
        rho = plus_state()
        out = master_step(rho, model, None, 0.1)
        np.testing.assert_array_equal(out.entries, rho.entries)

    def test_decoherence_closed_form(self):
        grid = TimeGrid(0.0, 1.0, 1000)
        times, states = evolve_master(plus_state(), dephasing_model(), grid,
                                      record_stride=100)
        expected = 0.5 * np.exp(-2.0 * times)
        np.testing.assert_allclose(states[:, 0, 1].real, expected, atol=1e-10)
        assert np.abs(states[:, 0, 1].imag).max() < 1e-14

    def test_trace_pinned_along_flow(self):
        model = random_model(np.random.default_rng(3), 3)
        rho = random_state(np.random.default_rng(4), 3)
        for _ in range(200):
            rho = master_step(rho, model, None, 1e-3)
            assert abs(np.trace(rho.entries) - 1.0) < 1e-12

    def test_coarse_step_loses_positivity(self):
        lower = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        model = FiniteModel(H0=np.zeros((2, 2)), L_list=[lower])
        excited = DensityMatrix(np.diag([0.0, 1.0]).astype(complex))
        with pytest.raises(PositivityLoss):
            master_step(excited, model, None, 3.0)

    def test_rejects_bad_dt(self):
        with pytest.raises(InvalidParameter):
            master_step(plus_state(), dephasing_model(), None, 0.0)

    def test_evolve_master_rejects_bad_stride(self):
        with pytest.raises(InvalidParameter):
            evolve_master(plus_state(), dephasing_model(),
                          TimeGrid(0.0, 1.0, 10), record_stride=3)

    def test_truncated_oscillator_matches_moment_flow(self):
        # position-coupled free mass in a 40-level ladder basis: second
        # moments of the master flow track the unconditional Gaussian flow
        n = 40
        a = np.diag(np.sqrt(np.arange(1.0, n)), 1)
        Q = (a + a.conj().T) / math.sqrt(2.0)
        P = 1j * (a.conj().T - a) / math.sqrt(2.0)
        model = FiniteModel(H0=P @ P / 2.0, L_list=[Q])
        vac = np.zeros((n, n), dtype=complex)
        vac[0, 0] = 1.0
        grid = TimeGrid(0.0, 0.5, 500)
        times, states = evolve_master(DensityMatrix(vac), model, grid,
                                      record_stride=100)

        coeffs = build_coefficients(free_particle_model())
        ref = lyapunov_unconditional(coeffs, np.diag([0.5, 0.5]), grid)

        def sym_expect(rho, A, B):
            return float(np.trace(rho @ (A @ B + B @ A)).real / 2.0)

        for row, t in enumerate(times):
            rho = states[row]
            mq = float(np.trace(rho @ Q).real)
            mp = float(np.trace(rho @ P).real)
            got = np.array([
                [sym_expect(rho, Q, Q) - mq * mq,
                 sym_expect(rho, Q, P) - mq * mp],
                [sym_expect(rho, Q, P) - mq * mp,
                 sym_expect(rho, P, P) - mp * mp],
            ])
            want = ref.values[int(round(t / grid.dt))]
            assert np.abs(got - want).max() <= 0.01 * np.abs(want).max()


class TestSmeStep:
    def test_no_coupling_ignores_record(self):
        model = FiniteModel(H0=0.3 * SX, L_list=[np.zeros((2, 2))])
        rho = plus_state()
        a = sme_step(rho, model, None, [0.4], 1e-3)
        b = sme_step(rho, model, None, [-2.0], 1e-3)
        np.testing.assert_array_equal(a.entries, b.entries)
        euler = rho.entries + 1e-3 * lindblad_schrodinger(rho.entries, model)
        euler /= np.trace(euler).real
        np.testing.assert_allclose(a.entries, euler, atol=1e-15)

    def test_fluctuation_coefficient_is_traceless(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            rho = random_state(rng, 3).entries
            L = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            e = np.trace(rho @ (L + L.conj().T)).real
            fluct = rho @ L.conj().T + L @ rho - e * rho
            assert abs(np.trace(fluct)) < 1e-12

    def test_trace_renormalized(self):
        rng = np.random.default_rng(2)
        model = random_model(rng, 2)
        rho = random_state(rng, 2)
        out = sme_step(rho, model, None, rng.standard_normal(2) * 0.03, 1e-3)
        assert abs(np.trace(out.entries) - 1.0) < 1e-14

    def test_conditional_mean_is_martingale_one_step(self):
        # averaging the two records +-dW returns the dephasing-invariant
        # <sigma_z> exactly
        rho = DensityMatrix(0.5 * np.array([[1.2, 0.5], [0.5, 0.8]]))
        model = dephasing_model()
        dt, dw = 1e-3, 0.02
        e = 2.0 * rho.expectation(SZ).real
        up = sme_step(rho, model, None, [e * dt + dw], dt)
        dn = sme_step(rho, model, None, [e * dt - dw], dt)
        avg = 0.5 * (up.expectation(SZ).real + dn.expectation(SZ).real)
        assert avg == pytest.approx(rho.expectation(SZ).real, abs=1e-12)

    def test_rejects_channel_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sme_step(plus_state(), dephasing_model(), None, [0.1, 0.2], 1e-3)

    def test_rejects_bad_dt(self):
        with pytest.raises(InvalidParameter):
            sme_step(plus_state(), dephasing_model(), None, [0.1], -1e-3)


class TestTrajectory:
    def test_requires_single_trajectory_config(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.1, 100), n_traj=2, seed=0)
        with pytest.raises(InvalidParameter, match="n_traj=1"):
            simulate_sme_trajectory(plus_state(), dephasing_model(), None, cfg)

    def test_deterministic_given_seed(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.2, 200), n_traj=1, seed=42)
        a = simulate_sme_trajectory(mixed_state(), dephasing_model(), None, cfg)
        b = simulate_sme_trajectory(mixed_state(), dephasing_model(), None, cfg)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.outputs, b.outputs)

    def test_zero_coupling_gives_schroedinger_flow(self):
        # L=0 keeps the record pure noise and the state unitary
        model = FiniteModel(H0=0.7 * SX, L_list=[np.zeros((2, 2))])
        cfg = SimConfig(grid=TimeGrid(0.0, 1.0, 1000), n_traj=1, seed=9,
                        record_stride=100)
        traj = simulate_sme_trajectory(
            DensityMatrix(np.diag([0.95, 0.05]).astype(complex)), model, None,
            cfg)
        z = traj.expectation_path(SZ).real
        np.testing.assert_allclose(z, 0.9 * np.cos(1.4 * traj.times), atol=5e-3)

    def test_record_contains_signal_plus_noise(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.5, 500), n_traj=1, seed=3,
                        record_stride=500)
        rho0 = DensityMatrix(np.diag([0.9, 0.1]).astype(complex))
        traj = simulate_sme_trajectory(rho0, dephasing_model(), None, cfg)
        # <L+L'> = 2<sigma_z> near 1.6-2.0 for this start; one block sum
        assert traj.outputs[-1, 0] == pytest.approx(
            2.0 * 0.8 * 0.5, abs=4.0 * math.sqrt(0.5) + 0.35
        )

    def test_feedback_policy_recorded(self):
        model = FiniteModel(H0=np.zeros((2, 2)), L_list=[SZ],
                            H_controls=[SY])
        cfg = SimConfig(grid=TimeGrid(0.0, 0.1, 100), n_traj=1, seed=7,
                        record_stride=10)
        policy = lambda t, rho: [-0.5 * rho.expectation(SZ).real]
        traj = simulate_sme_trajectory(mixed_state(), model, policy, cfg)
        assert traj.controls.shape == (11, 1)
        final_z = DensityMatrix(traj.states[-1]).expectation(SZ).real
        assert traj.controls[-1, 0] == pytest.approx(-0.5 * final_z, abs=1e-12)

    def test_indexing_yields_tuples(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.1, 100), n_traj=1, seed=1,
                        record_stride=50)
        traj = simulate_sme_trajectory(mixed_state(), dephasing_model(), None,
                                       cfg)
        assert len(traj) == 3
        t, rho, dY, u = traj[1]
        assert t == pytest.approx(0.05)
        assert isinstance(rho, DensityMatrix)
        assert dY.shape == (1,)

    def test_rejects_dim_mismatch(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.1, 10), n_traj=1, seed=0)
        rho3 = DensityMatrix(np.diag([0.5, 0.3, 0.2]).astype(complex))
        with pytest.raises(DimensionMismatch):
            simulate_sme_trajectory(rho3, dephasing_model(), None, cfg)

    def test_posterior_cost_matches_gaussian_bookkeeping(self):
        # sigma_z^2 = I makes <z>^2 + Var(z) exactly 1, the same split the
        # Gaussian running cost uses
        cfg = SimConfig(grid=TimeGrid(0.0, 0.3, 300), n_traj=1, seed=23,
                        record_stride=100)
        traj = simulate_sme_trajectory(mixed_state(), dephasing_model(), None,
                                       cfg)
        cost = CostSpec(F=np.array([[1.0]]), G=np.array([[0.0]]),
                        Omega_T=np.array([[1.0]]))
        for i in range(len(traj)):
            _, rho, _, _ = traj[i]
            z = rho.expectation(SZ).real
            var = rho.expectation(SZ @ SZ).real - z * z
            value = running_posterior_cost(
                np.array([z]), np.array([[var]]), np.array([0.0]), cost)
            assert value == pytest.approx(
                rho.expectation(SZ @ SZ).real, abs=1e-12)


class TestEnsemble:
    def test_matches_single_trajectory_stream(self):
        cfg1 = SimConfig(grid=TimeGrid(0.0, 0.1, 100), n_traj=1, seed=77,
                         record_stride=100)
        traj = simulate_sme_trajectory(mixed_state(), dephasing_model(), None,
                                       cfg1)
        ens = simulate_sme_ensemble(mixed_state(), dephasing_model(), cfg1)
        np.testing.assert_allclose(
            ens.final_states[0], traj.states[-1], atol=1e-12)

    def test_thread_count_does_not_change_results(self, monkeypatch):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.05, 50), n_traj=1300, seed=15)
        monkeypatch.setenv("QLQG_THREADS", "1")
        a = simulate_sme_ensemble(mixed_state(), dephasing_model(), cfg)
        monkeypatch.setenv("QLQG_THREADS", "4")
        b = simulate_sme_ensemble(mixed_state(), dephasing_model(), cfg)
        np.testing.assert_array_equal(a.final_states, b.final_states)
        np.testing.assert_array_equal(a.mean_states, b.mean_states)

    def test_unraveling_mean_matches_master_diagonal(self):
        # incoherent start: the master flow is constant and the ensemble
        # mean must stay on it
        rho0 = DensityMatrix(np.diag([0.7, 0.3]).astype(complex))
        grid = TimeGrid(0.0, 1.0, 1000)
        cfg = SimConfig(grid=grid, n_traj=2048, seed=101, record_stride=1000)
        ens = simulate_sme_ensemble(rho0, dephasing_model(), cfg)
        assert trace_distance(ens.mean_states[-1], rho0.entries) <= 0.02
        assert ens.min_eigenvalue >= -1e-8
        assert ens.max_trace_deviation <= 1e-9

    def test_unraveling_mean_matches_master_coherent(self):
        # coherent mixed start at the fine step the scheme needs there
        rho0 = DensityMatrix(
            0.5 * np.array([[1.0, 0.75], [0.75, 1.0]], dtype=complex))
        grid = TimeGrid(0.0, 0.2, 2000)
        _, master = evolve_master(rho0, dephasing_model(), grid,
                                  record_stride=2000)
        cfg = SimConfig(grid=grid, n_traj=512, seed=29, record_stride=2000)
        ens = simulate_sme_ensemble(rho0, dephasing_model(), cfg)
        assert trace_distance(ens.mean_states[-1], master[-1]) <= 0.05
        assert ens.min_eigenvalue >= -1e-8
        assert ens.max_trace_deviation <= 1e-9

    def test_purification_martingale(self):
        # <sigma_z> is a bounded martingale, so trajectories settle into
        # eigenstates with frequencies given by the initial populations
        rho0 = DensityMatrix(np.diag([0.7, 0.3]).astype(complex))
        grid = TimeGrid(0.0, 3.0, 3000)
        cfg = SimConfig(grid=grid, n_traj=2048, seed=55, record_stride=3000)
        ens = simulate_sme_ensemble(rho0, dephasing_model(), cfg)
        z = np.einsum("bij,ji->b", ens.final_states, SZ).real
        n = z.shape[0]
        assert (np.abs(z) > 0.9).mean() > 0.98
        sigma = math.sqrt(0.7 * 0.3 / n)
        assert abs((z > 0.0).mean() - 0.7) <= 3.0 * sigma
        stderr = z.std(ddof=1) / math.sqrt(n)
        assert abs(z.mean() - 0.4) <= 3.0 * stderr
        assert ens.min_eigenvalue >= -1e-8

    def test_coarse_step_raises(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 1.0, 2), n_traj=64, seed=1)
        with pytest.raises(PositivityLoss):
            simulate_sme_ensemble(plus_state(), dephasing_model(), cfg)

    def test_mean_path_starts_at_initial_state(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.01, 10), n_traj=33, seed=4)
        ens = simulate_sme_ensemble(mixed_state(), dephasing_model(), cfg)
        np.testing.assert_allclose(ens.mean_states[0], mixed_state().entries,
                                   atol=1e-15)
        assert len(ens) == 33
        assert ens.final_states.shape == (33, 2, 2)


class TestDiscreteConditioning:
    def test_identity_unitary_is_transparent(self):
        rho = plus_state()
        P0 = np.diag([1.0, 0.0]).astype(complex)
        P1 = np.diag([0.0, 1.0]).astype(complex)
        results = discrete_conditioning(rho, np.eye(4, dtype=complex),
                                        [P0, P1])
        assert results[0][0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(results[0][1].entries, rho.entries,
                                   atol=1e-12)
        assert results[1] == (0.0, None)

    def test_cnot_reads_out_plus_state(self):
        cnot = np.eye(4, dtype=complex)[[0, 1, 3, 2]]
        P0 = np.diag([1.0, 0.0]).astype(complex)
        P1 = np.diag([0.0, 1.0]).astype(complex)
        results = discrete_conditioning(plus_state(), cnot, [P0, P1])
        for (prob, post), target in zip(results, ([1.0, 0.0], [0.0, 1.0])):
            assert prob == pytest.approx(0.5, abs=1e-12)
            np.testing.assert_allclose(post.entries, np.diag(target),
                                       atol=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(66)
        rho = random_state(rng, 2)
        G = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        U = expm(1j * (G + G.conj().T))
        basis = [np.diag([1.0 if j == i else 0.0 for j in range(3)])
                 .astype(complex) for i in range(3)]
        results = discrete_conditioning(rho, U, basis)
        total = sum(p for p, _ in results)
        assert total == pytest.approx(1.0, abs=1e-12)
        for p, post in results:
            assert p >= 0.0
            if post is not None:
                assert abs(np.trace(post.entries) - 1.0) < 1e-12

    def test_rejects_non_unitary(self):
        with pytest.raises(NotUnitary):
            discrete_conditioning(plus_state(), 1.01 * np.eye(4),
                                  [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])

    def test_rejects_non_idempotent_family(self):
        with pytest.raises(NotAProjectorFamily, match="idempotent"):
            discrete_conditioning(plus_state(), np.eye(4),
                                  [0.5 * np.eye(2), 0.5 * np.eye(2)])

    def test_rejects_non_orthogonal_family(self):
        Pp, _ = ancilla_quadrature_projectors()
        P0 = np.diag([1.0, 0.0]).astype(complex)
        with pytest.raises(NotAProjectorFamily, match="orthogonal"):
            discrete_conditioning(plus_state(), np.eye(4), [Pp, P0])

    def test_rejects_incomplete_family(self):
        with pytest.raises(NotAProjectorFamily, match="identity"):
            discrete_conditioning(plus_state(), np.eye(4),
                                  [np.diag([1.0, 0.0])])

    def test_rejects_bad_ancilla_state(self):
        P0 = np.diag([1.0, 0.0]).astype(complex)
        P1 = np.diag([0.0, 1.0]).astype(complex)
        with pytest.raises(InvalidParameter, match="normalized"):
            discrete_conditioning(plus_state(), np.eye(4), [P0, P1],
                                  ancilla_state=[1.0, 1.0])
        with pytest.raises(DimensionMismatch):
            discrete_conditioning(plus_state(), np.eye(4), [P0, P1],
                                  ancilla_state=[1.0, 0.0, 0.0])

    def test_zero_probability_outcome_flagged(self):
        ground = DensityMatrix(np.diag([1.0, 0.0]).astype(complex))
        cnot = np.eye(4, dtype=complex)[[0, 1, 3, 2]]
        P0 = np.diag([1.0, 0.0]).astype(complex)
        P1 = np.diag([0.0, 1.0]).astype(complex)
        results = discrete_conditioning(ground, cnot, [P0, P1])
        assert results[0][0] == pytest.approx(1.0, abs=1e-12)
        assert results[1] == (0.0, None)


class TestWeakMeasurement:
    def setup_method(self):
        self.L = SZ + 0.3 * SY
        self.model = FiniteModel(H0=0.4 * SX, L_list=[self.L])
        self.rho = DensityMatrix(
            np.array([[0.6, 0.15 - 0.05j], [0.15 + 0.05j, 0.4]]))

    def test_unitary_is_unitary(self):
        U = weak_measurement_unitary(self.L, 1e-3, H=self.model.H0)
        assert np.abs(U.conj().T @ U - np.eye(4)).max() < 1e-12

    def test_matches_filter_step_at_three_halves_order(self):
        dts = [1e-2, 1e-3, 1e-4, 1e-5]
        errs = []
        Pp, Pm = ancilla_quadrature_projectors()
        for dt in dts:
            U = weak_measurement_unitary(self.L, dt, H=self.model.H0)
            outcomes = discrete_conditioning(self.rho, U, [Pp, Pm])
            worst = 0.0
            for (prob, post), sign in zip(outcomes, (1.0, -1.0)):
                ref = sme_step(self.rho, self.model, None,
                               [sign * math.sqrt(dt)], dt)
                worst = max(worst, trace_norm(post.entries - ref.entries))
            errs.append(worst)
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope >= 1.4

    def test_outcome_average_matches_master_step(self):
        Pp, Pm = ancilla_quadrature_projectors()
        for dt in (1e-2, 1e-3):
            U = weak_measurement_unitary(self.L, dt, H=self.model.H0)
            outcomes = discrete_conditioning(self.rho, U, [Pp, Pm])
            avg = sum(p * post.entries for p, post in outcomes)
            ref = master_step(self.rho, self.model, None, dt)
            assert trace_norm(avg - ref.entries) <= 2.0 * dt * dt

    def test_rejects_bad_inputs(self):
        with pytest.raises(InvalidParameter):
            weak_measurement_unitary(self.L, 0.0)
        with pytest.raises(DimensionMismatch):
            weak_measurement_unitary(np.zeros((2, 3)), 1e-3)
        with pytest.raises(DimensionMismatch):
            weak_measurement_unitary(self.L, 1e-3, H=np.zeros((3, 3)))


class TestModelJson:
    def payload(self):
        return {
            "dim": 2,
            "hbar": 1.0,
            "H0": {"re": [[0.0, 0.4], [0.4, 0.0]], "im": [[0.0, 0.0], [0.0, 0.0]]},
            "H_controls": [
                {"re": [[1.0, 0.0], [0.0, -1.0]],
                 "im": [[0.0, 0.0], [0.0, 0.0]]},
            ],
            "L_list": [
                {"re": [[1.0, 0.0], [0.0, -1.0]],
                 "im": [[0.0, 0.0], [0.0, 0.0]]},
            ],
        }

    def test_round_trip_dict(self):
        model = finite_model_from_json(self.payload())
        np.testing.assert_allclose(model.H0, 0.4 * SX, atol=1e-15)
        np.testing.assert_allclose(model.L_list[0], SZ, atol=1e-15)
        assert model.n_controls == 1

    def test_round_trip_file(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps(self.payload()))
        model = finite_model_from_json(path)
        assert model.dim == 2

    def test_missing_key(self):
        data = self.payload()
        del data["L_list"]
        with pytest.raises(InvalidParameter, match="L_list"):
            finite_model_from_json(data)

    def test_malformed_pair(self):
        data = self.payload()
        data["H0"] = [[0.0, 0.4], [0.4, 0.0]]
        with pytest.raises(InvalidParameter, match="re, im"):
            finite_model_from_json(data)

    def test_wrong_shape(self):
        data = self.payload()
        data["H0"] = {"re": [[0.0]], "im": [[0.0]]}
        with pytest.raises(DimensionMismatch, match="H0"):
            finite_model_from_json(data)


class TestCsv:
    def test_round_trip_with_observables(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.1, 100), n_traj=1, seed=13,
                        record_stride=50)
        traj = simulate_sme_trajectory(mixed_state(), dephasing_model(), None,
                                       cfg)
        buf = io.StringIO()
        sme_trajectory_to_csv(traj, buf, observables={"z": SZ, "x": SX},
                              include_state=True)
        buf.seek(0)
        header = buf.readline().strip().split(",")
        assert header[:4] == ["t", "exp_z", "exp_x", "dY_0"]
        assert "rho_re_01" in header and "rho_im_10" in header
        data = np.loadtxt(buf, delimiter=",")
        assert data.shape == (3, len(header))
        np.testing.assert_allclose(data[:, 1],
                                   traj.expectation_path(SZ).real, atol=1e-15)

    def test_rejects_non_hermitian_observable(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 0.1, 10), n_traj=1, seed=0)
        traj = simulate_sme_trajectory(plus_state(), dephasing_model(), None,
                                       cfg)
        with pytest.raises(InvalidParameter, match="Hermitian"):
            sme_trajectory_to_csv(traj, io.StringIO(),
                                  observables={"bad": np.array([[0, 1],
                                                                [0, 0]])})
