"""Training loop machinery: estimators, direction solve, updates, full runs."""

import numpy as np
import pytest

from gailnet.driver import (
    ConfigError,
    FisherEstimate,
    GailConfig,
    MixedPolicy,
    actor_step,
    estimate_fisher,
    estimate_policy_grad,
    estimate_reward_grad,
    exact_policy_gradient,
    exact_reward_gradient,
    fisher_population,
    initial_state,
    metrics_to_csv,
    mixed_policy_value,
    policy_grad_population,
    reward_step,
    run_gail,
    solve_npg_direction,
)
from gailnet.critic import TdConfig
from gailnet.mdp import (
    FiniteEmbeddedMDP,
    generate_expert_trajectory,
    random_mdp,
    random_policy,
    sample_visitation_batch,
    uniform_policy,
)
from gailnet.network import BallConstraint, init_net, project_ball
from gailnet.oracle import exact_j, exact_q
from gailnet.policy import (
    CriticNet,
    EnergyPolicy,
    critic_table,
    make_reward,
    policy_as_table,
    reward_table,
)


@pytest.fixture
def small_setup():
    mdp = random_mdp(3, 2, 4, 0.9, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    net = init_net(8, 4, "standard", rng)
    net = net.with_weights(net.w0 + 0.3 * rng.standard_normal((8, 4)))
    pol = EnergyPolicy(net, 1.5)
    return mdp, net, pol, rng


def kink_margin(net, mdp):
    """Smallest |pre-activation| across blocks and embedded inputs."""
    flat = mdp.embedding.reshape(-1, net.d)
    return float(np.abs(flat @ net.w.T).min())


class TestFisher:
    def test_zero_temperature_gives_zero_matrix(self, small_setup):
        mdp, net, _, rng = small_setup
        pol = EnergyPolicy(net, 0.0)
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 16, rng)
        fisher = estimate_fisher(pol, mdp, batch)
        assert np.all(fisher.dense() == 0.0)

    def test_single_sample_is_rank_one(self, small_setup):
        mdp, net, pol, rng = small_setup
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 1, rng)
        dense = estimate_fisher(pol, mdp, batch).dense()
        assert np.linalg.matrix_rank(dense, tol=1e-12) <= 1

    def test_estimates_are_positive_semidefinite(self, small_setup):
        mdp, net, pol, rng = small_setup
        for n in (1, 4, 32):
            batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), n, rng)
            eigs = np.linalg.eigvalsh(estimate_fisher(pol, mdp, batch).dense())
            assert eigs.min() > -1e-12

    def test_matvec_matches_dense(self, small_setup):
        mdp, net, pol, rng = small_setup
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 20, rng)
        fisher = estimate_fisher(pol, mdp, batch)
        dense = fisher.dense()
        for _ in range(5):
            v = rng.standard_normal((net.m, net.d))
            lhs = fisher.matvec(v).ravel()
            np.testing.assert_allclose(lhs, dense @ v.ravel(), atol=1e-12)

    def test_large_sample_matches_population(self, small_setup):
        mdp, net, pol, _ = small_setup
        rng = np.random.default_rng(2)
        table = policy_as_table(pol, mdp)
        batch = sample_visitation_batch(mdp, table, 10**5, rng)
        est = estimate_fisher(pol, mdp, batch).dense()
        pop = fisher_population(pol, mdp)
        rel = np.linalg.norm(est - pop, 2) / np.linalg.norm(pop, 2)
        assert rel < 0.05

    def test_dense_refuses_large_width(self):
        scores = np.zeros((4, 100, 30))
        with pytest.raises(ValueError):
            FisherEstimate(scores=scores, tau=1.0).dense()


class TestPolicyGrad:
    def test_zero_critic_gives_zero(self, small_setup):
        mdp, net, pol, rng = small_setup
        net0 = init_net(8, 4, "symmetric", np.random.default_rng(3))
        critic = CriticNet(net0)
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 16, rng)
        g = estimate_policy_grad(pol, critic, mdp, batch)
        assert np.abs(g).max() < 1e-14

    def test_zero_temperature_gives_zero(self, small_setup):
        mdp, net, _, rng = small_setup
        pol = EnergyPolicy(net, 0.0)
        critic = CriticNet(net)
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 16, rng)
        assert np.all(estimate_policy_grad(pol, critic, mdp, batch) == 0.0)

    def test_population_gradient_matches_finite_differences(self, small_setup):
        mdp, net, pol, _ = small_setup
        r = np.random.default_rng(4).uniform(size=(3, 2))
        assert kink_margin(net, mdp) > 1e-4
        analytic = exact_policy_gradient(pol, mdp, r)
        eps = 1e-5
        rng = np.random.default_rng(5)
        for _ in range(12):
            l = int(rng.integers(0, net.m))
            j = int(rng.integers(0, net.d))
            wp, wm = net.w.copy(), net.w.copy()
            wp[l, j] += eps
            wm[l, j] -= eps
            jp = exact_j(mdp, policy_as_table(EnergyPolicy(net.with_weights(wp), pol.tau), mdp), r)
            jm = exact_j(mdp, policy_as_table(EnergyPolicy(net.with_weights(wm), pol.tau), mdp), r)
            fd = (jp - jm) / (2 * eps)
            ref = max(abs(fd), abs(analytic[l, j]), 1e-10)
            assert abs(fd - analytic[l, j]) / ref < 1e-3

    def test_population_mean_is_horizon_scaled_gradient(self, small_setup):
        mdp, net, pol, _ = small_setup
        r = np.random.default_rng(6).uniform(size=(3, 2))
        q = exact_q(mdp, policy_as_table(pol, mdp), r)
        pop = policy_grad_population(pol, mdp, q)
        grad = exact_policy_gradient(pol, mdp, r)
        np.testing.assert_allclose(pop, -(1.0 - mdp.gamma) * grad, atol=1e-12)

    def test_estimator_mean_approaches_population(self, small_setup):
        mdp, net, pol, _ = small_setup
        rng = np.random.default_rng(8)
        crit_net = net.with_weights(net.w0 + 0.5 * rng.standard_normal((8, 4)))
        critic = CriticNet(crit_net)
        table = policy_as_table(pol, mdp)
        n_batches, batch_size = 400, 64
        total = np.zeros((net.m, net.d))
        for _ in range(n_batches):
            batch = sample_visitation_batch(mdp, table, batch_size, rng)
            total += estimate_policy_grad(pol, critic, mdp, batch)
        mean = total / n_batches
        pop = policy_grad_population(pol, mdp, critic_table(critic, mdp))
        assert np.linalg.norm(mean - pop) / np.linalg.norm(pop) < 0.05


class TestRewardGrad:
    def test_identical_batches_cancel(self, small_setup):
        mdp, net, pol, rng = small_setup
        rew = make_reward(net, mdp.gamma)
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 12, rng)
        g = estimate_reward_grad(rew, mdp, batch, batch, 0.0)
        assert np.all(g == 0.0)

    def test_single_shared_pair_cancels(self, small_setup):
        mdp, net, _, _ = small_setup
        rew = make_reward(net, mdp.gamma)
        batch = (np.array([1]), np.array([0]))
        g = estimate_reward_grad(rew, mdp, batch, batch, 0.0)
        assert np.all(g == 0.0)

    def test_exact_gradient_matches_finite_differences(self, small_setup):
        mdp, net, pol, _ = small_setup
        expert = random_policy(3, 2, np.random.default_rng(9))
        table = policy_as_table(pol, mdp)
        assert kink_margin(net, mdp) > 1e-4
        eps = 1e-5

        def objective(w, lam):
            r_tab = reward_table(make_reward(net.with_weights(w), mdp.gamma), mdp)
            gap = exact_j(mdp, expert, r_tab) - exact_j(mdp, table, r_tab)
            return gap - 0.5 * lam * float(np.sum((w - net.w0) ** 2))

        for lam in (0.0, 0.3):
            rew = make_reward(net, mdp.gamma)
            analytic = exact_reward_gradient(rew, mdp, expert, table, lam)
            rng = np.random.default_rng(10)
            for _ in range(10):
                l = int(rng.integers(0, net.m))
                j = int(rng.integers(0, net.d))
                wp, wm = net.w.copy(), net.w.copy()
                wp[l, j] += eps
                wm[l, j] -= eps
                fd = (objective(wp, lam) - objective(wm, lam)) / (2 * eps)
                ref = max(abs(fd), abs(analytic[l, j]), 1e-10)
                assert abs(fd - analytic[l, j]) / ref < 1e-3


class TestNpgSolve:
    def test_zero_rhs_returns_feasible_no_worse_than_start(self, small_setup):
        mdp, net, pol, rng = small_setup
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 16, rng)
        fisher = estimate_fisher(pol, mdp, batch)
        ball = BallConstraint(net.w0, 2.0)
        sol = solve_npg_direction(fisher, np.zeros((net.m, net.d)), ball)
        assert ball.contains(sol.delta, atol=1e-12)
        assert sol.residual <= sol.initial_residual + 1e-15

    def test_recovers_in_ball_solution(self, small_setup):
        mdp, net, pol, rng = small_setup
        batch = sample_visitation_batch(mdp, policy_as_table(pol, mdp), 64, rng)
        fisher = estimate_fisher(pol, mdp, batch)
        ball = BallConstraint(net.w0, 5.0)
        target = net.w0 + 0.5 * rng.standard_normal((net.m, net.d))
        g = fisher.matvec(target)
        sol = solve_npg_direction(fisher, g, ball)
        # g is in the range of the operator and a preimage is interior
        assert sol.residual <= 1e-6 * max(1.0, float(np.linalg.norm(g)))
        assert ball.contains(sol.delta, atol=1e-12)

    def test_matches_long_projected_gradient_oracle(self):
        # synthetic 50-dimensional instance, oracle = very long projected descent
        rng = np.random.default_rng(30)
        fisher = FisherEstimate(scores=rng.standard_normal((60, 10, 5)), tau=1.3)
        dense = fisher.dense()
        g = rng.standard_normal((10, 5))
        ball = BallConstraint(0.3 * rng.standard_normal((10, 5)), 0.5)
        sol = solve_npg_direction(fisher, g, ball)

        lam = float(np.linalg.eigvalsh(dense).max())
        x = project_ball(np.zeros_like(g), ball)
        best = float(np.linalg.norm(fisher.matvec(x) - g))
        for _ in range(10**5):
            resid = fisher.matvec(x) - g
            best = min(best, float(np.linalg.norm(resid)))
            x = project_ball(x - (2.0 / lam**2) * fisher.matvec(resid), ball)
        best = min(best, float(np.linalg.norm(fisher.matvec(x) - g)))
        assert sol.residual <= 1.01 * best


class TestSteps:
    def test_temperature_sequence_is_exact(self, small_setup):
        mdp, _, _, _ = small_setup
        cfg = GailConfig(T=5, eta=0.1, N=8, m=8, td=TdConfig(T_TD=20, burn_in=5))
        rng = np.random.default_rng(11)
        expert = random_policy(3, 2, np.random.default_rng(12))
        data = generate_expert_trajectory(mdp, expert, 50, rng)
        res = run_gail(mdp, data, expert, cfg, rng)
        taus = [row.tau for row in res.metrics]
        # the float contract is tau_k == k * eta, bit for bit
        assert taus == [k * 0.1 for k in range(5)]
        assert res.final_state.tau == 5 * 0.1

    def test_first_step_moves_opposite_direction(self, small_setup):
        mdp, _, _, _ = small_setup
        rng = np.random.default_rng(13)
        net0 = init_net(8, 4, "symmetric", rng)
        cfg = GailConfig(T=4, eta=0.25, N=8, m=8, td=TdConfig(T_TD=10, burn_in=5))
        state = initial_state(net0)
        critic = CriticNet(net0)
        batch = sample_visitation_batch(mdp, uniform_policy(3, 2), 8, rng)
        nxt = actor_step(state, mdp, critic, batch, cfg)
        # tau_0 = 0 makes theta_1 - W0 = -(direction); with a symmetric anchor
        # the kick is proportional to W0, so the policy stays uniform
        rel = nxt.theta - net0.w0
        cos = float(np.sum(rel * net0.w0)) / (
            np.linalg.norm(rel) * np.linalg.norm(net0.w0)
        )
        assert abs(abs(cos) - 1.0) < 1e-9
        table = policy_as_table(EnergyPolicy(net0.with_weights(nxt.theta), nxt.tau), mdp)
        np.testing.assert_allclose(table.probs, 0.5, atol=1e-12)

    def test_policy_iterates_stay_in_ball(self, small_setup):
        mdp, _, _, _ = small_setup
        cfg = GailConfig(T=12, N=16, m=16, B_theta=1.0, td=TdConfig(T_TD=50, burn_in=10))
        rng = np.random.default_rng(14)
        expert = random_policy(3, 2, np.random.default_rng(15))
        data = generate_expert_trajectory(mdp, expert, 100, rng)
        res = run_gail(mdp, data, expert, cfg, rng)
        w0 = res.final_state.net0.w0
        for theta, _ in res.final_state.policy_history:
            assert np.linalg.norm(theta - w0) <= 1.0 + 1e-9
        assert res.final_state.ball_violations == 0

    def test_reward_step_zero_gradient_is_identity(self, small_setup):
        mdp, _, _, _ = small_setup
        net0 = init_net(8, 4, "standard", np.random.default_rng(16))
        state = initial_state(net0)
        cfg = GailConfig(T=4, eta=0.1, N=8, m=8)
        out = reward_step(state, np.zeros((8, 4)), cfg)
        np.testing.assert_array_equal(out.beta, state.beta)

    def test_reward_step_interior_is_plain_ascent(self, small_setup):
        mdp, _, _, _ = small_setup
        net0 = init_net(8, 4, "standard", np.random.default_rng(17))
        state = initial_state(net0)
        cfg = GailConfig(T=4, eta=0.1, N=8, m=8, B_beta=10.0)
        g = np.full((8, 4), 0.3)
        out = reward_step(state, g, cfg)
        np.testing.assert_allclose(out.beta, state.beta + 0.1 * g, atol=1e-15)

    def test_reward_step_large_gradient_lands_on_boundary(self, small_setup):
        mdp, _, _, _ = small_setup
        net0 = init_net(8, 4, "standard", np.random.default_rng(18))
        state = initial_state(net0)
        cfg = GailConfig(T=4, eta=1.0, N=8, m=8, B_beta=0.5)
        g = np.random.default_rng(19).standard_normal((8, 4)) * 100.0
        out = reward_step(state, g, cfg)
        assert abs(np.linalg.norm(out.beta - net0.w0) - 0.5) < 1e-10


class TestRunGail:
    def test_single_iteration_mixture_is_uniform(self, small_setup):
        mdp, _, _, _ = small_setup
        cfg = GailConfig(T=1, N=8, m=8, td=TdConfig(T_TD=10, burn_in=5))
        rng = np.random.default_rng(20)
        expert = random_policy(3, 2, np.random.default_rng(21))
        data = generate_expert_trajectory(mdp, expert, 50, rng)
        res = run_gail(mdp, data, expert, cfg, rng)
        assert len(res.mixed_policy.components) == 1
        table = policy_as_table(res.mixed_policy.components[0], mdp)
        np.testing.assert_allclose(table.probs, 0.5, atol=1e-15)

    def test_strong_regularizer_pins_reward_to_anchor(self, small_setup):
        mdp, _, _, _ = small_setup
        # eta * lam = 0.1 keeps the ascent a contraction toward the anchor;
        # the stationary drift is bounded by ||feature gap|| / lam
        cfg = GailConfig(
            T=10, eta=1e-6, N=16, m=16, lam=1e5, td=TdConfig(T_TD=50, burn_in=10)
        )
        rng = np.random.default_rng(22)
        expert = random_policy(3, 2, np.random.default_rng(23))
        data = generate_expert_trajectory(mdp, expert, 100, rng)
        res = run_gail(mdp, data, expert, cfg, rng)
        drift = np.linalg.norm(res.final_state.beta - res.final_state.net0.w0)
        assert drift < 1e-3

    def test_fixed_seed_reproduces_csv_bytes(self, small_setup):
        mdp, _, _, _ = small_setup
        cfg = GailConfig(T=6, N=16, m=16, td=TdConfig(T_TD=50, burn_in=10))
        expert = random_policy(3, 2, np.random.default_rng(24))
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(25)
            data = generate_expert_trajectory(mdp, expert, 100, rng)
            res = run_gail(mdp, data, expert, cfg, rng)
            outs.append(metrics_to_csv(res.metrics).encode())
        assert outs[0] == outs[1]

    def test_config_validation_errors(self):
        with pytest.raises(ConfigError):
            GailConfig(T=0).validate()
        with pytest.raises(ConfigError):
            GailConfig(eta=-0.5).validate()
        with pytest.raises(ConfigError):
            GailConfig(N=0).validate()
        with pytest.raises(ConfigError):
            GailConfig(m=7, init_scheme="symmetric").validate()
        with pytest.raises(ConfigError):
            GailConfig(lam=-1.0).validate()
        with pytest.raises(ConfigError):
            GailConfig(B_beta=-0.1).validate()
        with pytest.raises(ConfigError):
            GailConfig(delta_ball_center="elsewhere").validate()


class TestMixedPolicyValue:
    def test_single_component(self, small_setup):
        mdp, net, pol, _ = small_setup
        r = np.random.default_rng(26).uniform(size=(3, 2))
        mp = MixedPolicy([pol])
        expected = exact_j(mdp, policy_as_table(pol, mdp), r)
        assert mixed_policy_value(mp, mdp, r) == pytest.approx(expected, abs=1e-15)

    def test_identical_components_collapse(self, small_setup):
        mdp, net, pol, _ = small_setup
        r = np.random.default_rng(27).uniform(size=(3, 2))
        mp = MixedPolicy([pol, pol, pol])
        expected = exact_j(mdp, policy_as_table(pol, mdp), r)
        assert mixed_policy_value(mp, mdp, r) == pytest.approx(expected, abs=1e-12)

    def test_two_components_average(self):
        P = np.ones((1, 2, 1))
        emb = np.zeros((1, 2, 3))
        emb[0, 0, 0] = 0.9
        emb[0, 1, 1] = 0.9
        mdp = FiniteEmbeddedMDP(1, 2, emb, P, np.ones(1), 0.9)
        rng = np.random.default_rng(28)
        net = init_net(16, 3, "standard", rng)
        hot = net.with_weights(net.w0 + rng.standard_normal((16, 3)))
        r = np.array([[0.0, 1.0]])
        p_low = EnergyPolicy(hot, 60.0)
        j_low = exact_j(mdp, policy_as_table(p_low, mdp), r)
        p_uni = EnergyPolicy(net, 0.0)
        j_uni = exact_j(mdp, policy_as_table(p_uni, mdp), r)
        mp = MixedPolicy([p_low, p_uni])
        got = mixed_policy_value(mp, mdp, r)
        assert got == pytest.approx(0.5 * (j_low + j_uni), abs=1e-12)

    def test_rejects_empty_mixture(self):
        with pytest.raises(ValueError):
            MixedPolicy([])
