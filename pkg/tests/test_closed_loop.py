import io
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from qlqg.closed_loop import (
    ClosedLoopEnsemble,
    SimConfig,
    monte_carlo_expected_cost,
    running_posterior_cost,
    simulate_closed_loop,
    trajectory_to_csv,
)
from qlqg.control import control_gain_path
from qlqg.errors import ConfigError, EmptyEnsemble, NonFinite
from qlqg.phase_space import GaussianBelief, LinearCoefficients
from qlqg.riccati import CostSpec, TimeGrid, integrate_control_riccati


def feedback_coefficients():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [2.0]])
    C = np.array([[2.0, 0.0]])
    N = np.diag([0.0, 1.0])
    M = np.zeros((2, 1))
    return LinearCoefficients(A=A, B=B, C=C, N=N, M=M)


def tracking_cost(beta=1.0, Omega_T=None):
    if Omega_T is None:
        Omega_T = np.eye(2)
    return CostSpec(F=np.diag([beta, 0.0]), G=np.zeros((1, 2)), Omega_T=Omega_T)


def small_config(n_traj=1, seed=11, n_steps=200, t1=2.0, stride=1):
    return SimConfig(
        grid=TimeGrid(0.0, t1, n_steps), n_traj=n_traj, seed=seed,
        record_stride=stride,
    )


def default_belief():
    return GaussianBelief(
        mean=np.array([1.0, 0.0]), cov=np.diag([0.5, 0.5])
    )


class TestConfig:
    def test_stride_must_divide_steps(self):
        with pytest.raises(ConfigError, match="does not divide"):
            SimConfig(grid=TimeGrid(0.0, 1.0, 10), n_traj=1, seed=0,
                      record_stride=3)

    def test_rejects_empty_ensemble_request(self):
        with pytest.raises(ConfigError, match="n_traj"):
            SimConfig(grid=TimeGrid(0.0, 1.0, 10), n_traj=0, seed=0)

    def test_rejects_negative_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            SimConfig(grid=TimeGrid(0.0, 1.0, 10), n_traj=1, seed=-1)

    def test_record_count(self):
        cfg = SimConfig(grid=TimeGrid(0.0, 1.0, 10), n_traj=1, seed=0,
                        record_stride=5)
        assert cfg.n_records == 3


class TestRunningCost:
    def test_zero_mean_zero_control_leaves_trace_term(self):
        cost = tracking_cost()
        Sigma = np.array([[0.7, 0.2], [0.2, 1.3]])
        value = running_posterior_cost(np.zeros(2), Sigma, np.zeros(1), cost)
        assert value == pytest.approx(np.trace(cost.F @ Sigma), abs=1e-15)

    def test_hand_computed_value(self):
        cost = CostSpec(F=np.eye(2), G=np.zeros((1, 2)), Omega_T=np.eye(2))
        value = running_posterior_cost(
            np.array([1.0, 2.0]), np.zeros((2, 2)), np.array([3.0]), cost
        )
        assert value == pytest.approx(14.0, abs=1e-15)

    def test_cross_term(self):
        cost = CostSpec(
            F=np.eye(2), G=np.array([[0.5, 0.0]]), Omega_T=np.eye(2)
        )
        value = running_posterior_cost(
            np.array([1.0, 0.0]), np.zeros((2, 2)), np.array([2.0]), cost
        )
        # 1 + 2*2*0.5*1 + 4
        assert value == pytest.approx(7.0, abs=1e-15)


class TestZeroNoise:
    def test_mean_follows_euler_recursion(self):
        coeffs = feedback_coefficients()
        cost = tracking_cost()
        cfg = small_config()
        ens = simulate_closed_loop(coeffs, cost, cfg, default_belief(),
                                   zero_noise=True)
        gains = control_gain_path(
            integrate_control_riccati(coeffs, cost, cfg.grid), coeffs, cost
        ).gains
        x = np.array([1.0, 0.0])
        dt = cfg.grid.dt
        for step in range(cfg.grid.n_steps):
            u = -gains[step] @ x
            x = x + (coeffs.A @ x + coeffs.B @ u) * dt
            np.testing.assert_allclose(ens.means[0, step + 1], x, atol=1e-12)

    def test_mean_tracks_closed_loop_flow(self):
        # continuous limit: dX/dt = (A - B Ltilde_t) X
        coeffs = feedback_coefficients()
        cost = tracking_cost()
        cfg = small_config(n_steps=2000)
        ens = simulate_closed_loop(coeffs, cost, cfg, default_belief(),
                                   zero_noise=True)
        gain_path = control_gain_path(
            integrate_control_riccati(coeffs, cost, cfg.grid), coeffs, cost
        )
        times = cfg.grid.times()

        def rhs(t, x):
            k = min(int(round((t - cfg.grid.t0) / cfg.grid.dt)),
                    cfg.grid.n_steps)
            return (coeffs.A - coeffs.B @ gain_path.gains[k]) @ x

        sol = solve_ivp(rhs, (times[0], times[-1]), [1.0, 0.0],
                        t_eval=[times[-1]], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(ens.means[0, -1], sol.y[:, -1], atol=2e-3)

    def test_zero_noise_ensemble_is_degenerate(self):
        coeffs = feedback_coefficients()
        cfg = small_config(n_traj=3, n_steps=50, t1=0.5)
        ens = simulate_closed_loop(coeffs, tracking_cost(), cfg,
                                   default_belief(), zero_noise=True)
        assert np.array_equal(ens.means[0], ens.means[1])
        assert np.array_equal(ens.total_costs[0], ens.total_costs[2])
        mean, stderr = monte_carlo_expected_cost(ens)
        assert stderr == pytest.approx(0.0, abs=1e-14)


class TestDeterminism:
    def test_bit_identical_repeat(self):
        coeffs = feedback_coefficients()
        cfg = small_config(n_traj=7, seed=123, n_steps=100, t1=1.0)
        a = simulate_closed_loop(coeffs, tracking_cost(), cfg, default_belief())
        b = simulate_closed_loop(coeffs, tracking_cost(), cfg, default_belief())
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.innovations, b.innovations)
        assert np.array_equal(a.total_costs, b.total_costs)

    def test_thread_count_does_not_change_results(self, monkeypatch):
        coeffs = feedback_coefficients()
        cfg = small_config(n_traj=2080, seed=5, n_steps=40, t1=0.4, stride=40)
        monkeypatch.setenv("QLQG_THREADS", "1")
        a = simulate_closed_loop(coeffs, tracking_cost(), cfg, default_belief())
        monkeypatch.setenv("QLQG_THREADS", "3")
        b = simulate_closed_loop(coeffs, tracking_cost(), cfg, default_belief())
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.total_costs, b.total_costs)

    def test_different_seeds_differ(self):
        coeffs = feedback_coefficients()
        ens_a = simulate_closed_loop(
            coeffs, tracking_cost(), small_config(seed=1, n_steps=50, t1=0.5),
            default_belief())
        ens_b = simulate_closed_loop(
            coeffs, tracking_cost(), small_config(seed=2, n_steps=50, t1=0.5),
            default_belief())
        assert not np.array_equal(ens_a.means, ens_b.means)

    def test_stride_only_thins_the_record(self):
        coeffs = feedback_coefficients()
        fine = simulate_closed_loop(
            coeffs, tracking_cost(),
            small_config(n_traj=4, seed=9, n_steps=60, t1=0.6, stride=1),
            default_belief())
        coarse = simulate_closed_loop(
            coeffs, tracking_cost(),
            small_config(n_traj=4, seed=9, n_steps=60, t1=0.6, stride=20),
            default_belief())
        assert np.array_equal(coarse.means[:, 1], fine.means[:, 20])
        assert np.array_equal(coarse.means[:, -1], fine.means[:, -1])
        # thinned increments accumulate the skipped steps
        np.testing.assert_allclose(
            coarse.innovations[:, 1],
            fine.innovations[:, 1:21].sum(axis=1), atol=1e-15,
        )
        assert np.array_equal(coarse.running_costs[:, -1],
                              fine.running_costs[:, -1])


class TestStatistics:
    def test_ensemble_mean_matches_deterministic_recursion(self):
        # innovations are zero-mean, so E[Xhat_t] obeys the noiseless loop
        coeffs = feedback_coefficients()
        cost = tracking_cost()
        cfg = small_config(n_traj=4000, seed=21, n_steps=200, t1=2.0,
                           stride=50)
        ens = simulate_closed_loop(coeffs, cost, cfg, default_belief())
        ref = simulate_closed_loop(coeffs, cost, small_config(
            n_traj=1, seed=0, n_steps=200, t1=2.0, stride=50),
            default_belief(), zero_noise=True)
        n = cfg.n_traj
        for row in range(1, cfg.n_records):
            sample = ens.means[:, row]
            stderr = sample.std(axis=0, ddof=1) / math.sqrt(n)
            err = np.abs(sample.mean(axis=0) - ref.means[0, row])
            assert np.all(err <= 4.0 * stderr + 1e-12)

    def test_ensemble_covariance_matches_lyapunov_flow(self):
        coeffs = feedback_coefficients()
        cost = tracking_cost()
        cfg = small_config(n_traj=4000, seed=33, n_steps=200, t1=2.0,
                           stride=200)
        ens = simulate_closed_loop(coeffs, cost, cfg, default_belief())

        gains = control_gain_path(
            integrate_control_riccati(coeffs, cost, cfg.grid), coeffs, cost
        ).gains
        from qlqg.riccati import integrate_filter_riccati
        kgains = np.matmul(
            integrate_filter_riccati(coeffs, default_belief().cov,
                                     cfg.grid).values,
            coeffs.C.T) + coeffs.M
        dt = cfg.grid.dt
        P = np.zeros((2, 2))
        eye = np.eye(2)
        for step in range(cfg.grid.n_steps):
            T = eye + dt * (coeffs.A - coeffs.B @ gains[step])
            P = T @ P @ T.T + dt * (kgains[step] @ kgains[step].T)
        sample = np.cov(ens.means[:, -1].T)
        assert np.linalg.norm(sample - P) <= 0.05 * np.linalg.norm(P)

    def test_innovation_increment_statistics(self):
        # a million recorded increments: mean and variance of the draws
        coeffs = feedback_coefficients()
        cfg = SimConfig(grid=TimeGrid(0.0, 5.0, 5000), n_traj=200, seed=71,
                        record_stride=1)
        ens = simulate_closed_loop(coeffs, tracking_cost(), cfg,
                                   default_belief())
        draws = ens.innovations[:, 1:, 0].ravel()
        n = draws.size
        assert n == 10**6
        dt = cfg.grid.dt
        assert abs(draws.mean()) / math.sqrt(dt) <= 4.0 / math.sqrt(n)
        assert abs(draws.var() - dt) <= 0.02 * dt

    def test_output_increments_contain_signal(self):
        # dY - dYtilde telescopes to the integral of C Xhat dt
        coeffs = feedback_coefficients()
        cfg = small_config(n_traj=2, seed=3, n_steps=100, t1=1.0, stride=100)
        ens = simulate_closed_loop(coeffs, tracking_cost(), cfg,
                                   default_belief())
        fine = simulate_closed_loop(coeffs, tracking_cost(), small_config(
            n_traj=2, seed=3, n_steps=100, t1=1.0, stride=1),
            default_belief())
        dt = cfg.grid.dt
        signal = (fine.means[:, :-1] @ coeffs.C.T * dt).sum(axis=1)
        np.testing.assert_allclose(
            ens.outputs[:, -1] - ens.innovations[:, -1], signal, atol=1e-12)


class TestCostEstimates:
    def test_single_trajectory_has_nan_stderr(self):
        coeffs = feedback_coefficients()
        ens = simulate_closed_loop(
            coeffs, tracking_cost(), small_config(n_steps=50, t1=0.5),
            default_belief())
        mean, stderr = monte_carlo_expected_cost(ens)
        assert mean == pytest.approx(float(ens.total_costs[0]))
        assert math.isnan(stderr)

    def test_empty_ensemble_rejected(self):
        coeffs = feedback_coefficients()
        cfg = small_config(n_steps=10, t1=0.1)
        ens = simulate_closed_loop(coeffs, tracking_cost(), cfg,
                                   default_belief())
        hollow = ClosedLoopEnsemble(
            config=ens.config, cost=ens.cost, times=ens.times,
            means=ens.means[:0], controls=ens.controls[:0],
            outputs=ens.outputs[:0], innovations=ens.innovations[:0],
            running_costs=ens.running_costs[:0],
            total_costs=ens.total_costs[:0],
        )
        with pytest.raises(EmptyEnsemble):
            monte_carlo_expected_cost(hollow)

    def test_welford_agrees_with_two_pass(self):
        coeffs = feedback_coefficients()
        ens = simulate_closed_loop(
            coeffs, tracking_cost(),
            small_config(n_traj=500, seed=17, n_steps=50, t1=0.5, stride=50),
            default_belief())
        mean, stderr = monte_carlo_expected_cost(ens)
        totals = ens.total_costs
        assert mean == pytest.approx(float(totals.mean()), rel=1e-12)
        expect = totals.std(ddof=1) / math.sqrt(totals.size)
        assert stderr == pytest.approx(expect, rel=1e-12)

    def test_foreign_cost_spec_rejected(self):
        coeffs = feedback_coefficients()
        ens = simulate_closed_loop(
            coeffs, tracking_cost(), small_config(n_steps=10, t1=0.1),
            default_belief())
        with pytest.raises(ConfigError, match="cost"):
            monte_carlo_expected_cost(ens, tracking_cost(beta=2.0))

    def test_matching_cost_spec_accepted(self):
        coeffs = feedback_coefficients()
        ens = simulate_closed_loop(
            coeffs, tracking_cost(), small_config(n_steps=10, t1=0.1),
            default_belief())
        mean, _ = monte_carlo_expected_cost(ens, tracking_cost())
        assert math.isfinite(mean)

    def test_detuned_gain_costs_more(self):
        coeffs = feedback_coefficients()
        cost = tracking_cost()
        cfg = small_config(n_traj=2000, seed=41, n_steps=400, t1=2.0,
                           stride=400)
        base = simulate_closed_loop(coeffs, cost, cfg, default_belief())
        detuned = simulate_closed_loop(
            coeffs, cost, cfg, default_belief(),
            gain_offset=np.array([[0.2, 0.2]]))
        m0, s0 = monte_carlo_expected_cost(base)
        m1, s1 = monte_carlo_expected_cost(detuned)
        assert m1 >= m0 - 3.0 * (s0 + s1)

    def test_diverging_loop_raises(self):
        coeffs = feedback_coefficients()
        cfg = small_config(n_steps=1000, t1=1.0)
        with pytest.raises(NonFinite, match="at step"):
            simulate_closed_loop(
                coeffs, tracking_cost(), cfg, default_belief(),
                gain_offset=np.array([[0.0, -50.0]]))


class TestCsv:
    def test_round_trip(self):
        coeffs = feedback_coefficients()
        ens = simulate_closed_loop(
            coeffs, tracking_cost(),
            small_config(n_traj=2, seed=8, n_steps=20, t1=0.2, stride=10),
            default_belief())
        buf = io.StringIO()
        trajectory_to_csv(ens[1], buf)
        buf.seek(0)
        header = buf.readline().strip()
        assert header == "t,Xhat_0,Xhat_1,u_0,dY_0,dYtilde_0"
        data = np.loadtxt(buf, delimiter=",")
        assert data.shape == (3, 6)
        np.testing.assert_array_equal(data[:, 0], ens.times)
        np.testing.assert_array_equal(data[:, 1:3], ens.means[1])
        np.testing.assert_array_equal(data[:, 5:6], ens.innovations[1])
