import numpy as np
import pytest

from nudgesim.dynamics import simulate
from nudgesim.equilibrium import build_prediction_model, mean_step, steady_state
from nudgesim.graph import SocialNetwork, generate_modular_graph, row_normalize
from nudgesim.policies import (
    MpcInfeasibleError,
    MpcPolicy,
    PolicyWeights,
    check_inactive_conditions,
    condensed_predict,
    diagonal_weights,
    input_upper_bound,
    mbccp,
    mbccp_policy,
    mbccp_terms,
    mfccp,
    mfccp_policy,
    mpc_setup,
    mpc_step,
    zero_policy,
)
from nudgesim.qpsolve import QpProblem, solve_qp_bruteforce


def random_net(seed, n=8, alpha=0.5, sigma=0.05, lam_hi=0.9):
    rng = np.random.default_rng(seed)
    adjacency, _ = generate_modular_graph(n, 2, 0.25, 0.7, seed=seed)
    return SocialNetwork(
        n=n,
        P=row_normalize(adjacency),
        lam=rng.uniform(0, lam_hi, n),
        alpha=alpha,
        eta0=rng.uniform(0, 0.6, n),
        sigma=np.full(n, sigma),
    )


def lam_zero_net(n=5, r_eta=0.3):
    P = row_normalize(np.ones((n, n)) - np.eye(n))
    return SocialNetwork(
        n=n,
        P=P,
        lam=np.zeros(n),
        alpha=0.5,
        eta0=np.full(n, r_eta),
        sigma=np.zeros(n),
    )


class TestMfccp:
    def test_uniform_split(self):
        net = random_net(0, n=10)
        net = SocialNetwork(
            n=10, P=net.P, lam=net.lam, alpha=net.alpha,
            eta0=np.full(10, 0.3), sigma=np.zeros(10),
        )
        u = mfccp(net, beta=1.0)  # beta/n = 0.1 < 1 - 0.3
        np.testing.assert_allclose(u, 0.1)

    def test_cap_binds(self):
        net = random_net(0, n=10)
        net = SocialNetwork(
            n=10, P=net.P, lam=net.lam, alpha=net.alpha,
            eta0=np.full(10, 0.95), sigma=np.zeros(10),
        )
        u = mfccp(net, beta=1.0)
        np.testing.assert_allclose(u, 0.05)

    def test_floor_at_zero(self):
        net = random_net(0, n=10)
        net = SocialNetwork(
            n=10, P=net.P, lam=net.lam, alpha=net.alpha,
            eta0=np.full(10, 0.9), sigma=np.full(10, 0.1),
        )
        u = mfccp(net, beta=1.0)  # eta0 + 2 sigma = 1.1 >= 1
        np.testing.assert_allclose(u, 0.0)


def steady_loss_direct(net, model, weights, u):
    """Independent evaluation of the asymptotic loss: conditional-variance
    identity E||1-y||^2_Q = ||1-xs||^2_Q + <xs, 1-xs>_diag(Q) at xs = V(eta0+u)."""
    xs = model.V @ (net.eta0 + u)
    ones = np.ones(net.n)
    Qd = np.diag(np.diag(weights.Q))
    return float(
        (ones - xs) @ weights.Q @ (ones - xs)
        + xs @ Qd @ (ones - xs)
        + u @ weights.R @ u
    )


class TestMbccpTerms:
    def test_diagonal_Q_collapses(self):
        net = random_net(1)
        model = build_prediction_model(net)
        w = diagonal_weights(net.n, r=2.0, beta=1.0)
        terms = mbccp_terms(net, w, model=model)
        np.testing.assert_allclose(terms.W, 2.0 * np.eye(net.n), atol=1e-12)
        np.testing.assert_allclose(terms.c, -model.V.T @ np.ones(net.n), atol=1e-12)

    def test_lam_zero_composition(self):
        net = lam_zero_net()
        w = diagonal_weights(net.n, r=3.0, beta=1.0)
        terms = mbccp_terms(net, w)
        np.testing.assert_allclose(terms.W, 3.0 * np.eye(net.n), atol=1e-12)
        np.testing.assert_allclose(terms.c, -np.ones(net.n), atol=1e-12)

    def test_quadratic_form_matches_direct_evaluation(self):
        rng = np.random.default_rng(2)
        for seed in range(10):
            net = random_net(seed, n=6)
            model = build_prediction_model(net)
            M = rng.normal(size=(6, 6))
            Q = M @ M.T + np.eye(6)
            w = PolicyWeights(Q=Q, R=np.eye(6) * (0.5 + rng.random()), beta=1.0)
            terms = mbccp_terms(net, w, model=model)
            for _ in range(5):
                u = rng.uniform(0, 0.3, 6)
                via_terms = float(u @ terms.W @ u + terms.c @ u + terms.gamma_const)
                direct = steady_loss_direct(net, model, w, u)
                assert via_terms == pytest.approx(direct, abs=1e-10)


class TestMbccp:
    def test_lam_zero_closed_form(self):
        net = lam_zero_net(r_eta=0.2)
        r = 4.0
        w = diagonal_weights(net.n, r=r, beta=100.0)
        u, diag = mbccp(net, w)
        np.testing.assert_allclose(u, 1.0 / (2 * r), atol=1e-9)
        assert diag["constraints_inactive"]
        assert diag["closed_form_gap"] <= 1e-8

    def test_budget_zero(self):
        net = random_net(3)
        w = diagonal_weights(net.n, r=1.0, beta=0.0)
        u, diag = mbccp(net, w)
        np.testing.assert_allclose(u, 0.0, atol=1e-10)
        assert not diag["constraints_inactive"]

    def test_binding_budget_matches_bruteforce(self):
        # 3-node line graph so the problem stays brute-forceable
        P = row_normalize(np.array([[0, 1, 0], [1, 0, 0], [0, 1, 0]], dtype=float))
        net = SocialNetwork(
            n=3, P=P, lam=np.array([0.6, 0.4, 0.5]), alpha=0.75,
            eta0=np.array([0.2, 0.1, 0.3]), sigma=np.zeros(3),
        )
        w = diagonal_weights(3, r=0.4, beta=0.3)
        u, diag = mbccp(net, w)
        terms = mbccp_terms(net, w)
        p = QpProblem(
            H=terms.W, c=terms.c, lo=np.zeros(3), hi=terms.u_bound,
            budget_groups=((np.arange(3), 0.3),),
        )
        zb = solve_qp_bruteforce(p, grid=60)
        assert np.linalg.norm(u - zb, np.inf) <= np.sqrt(3) / 59
        assert diag["budget_active"] and diag["nu1"] > 0

    def test_feasibility_of_output(self):
        for seed in range(10):
            net = random_net(seed)
            w = diagonal_weights(net.n, r=0.2, beta=0.5)
            u, _ = mbccp(net, w)
            assert np.all(u >= -1e-10)
            assert np.all(u <= input_upper_bound(net) + 1e-9)
            assert u.sum() <= 0.5 + 1e-9


class TestInactiveConditions:
    def test_large_r_inactive(self):
        net = lam_zero_net()
        w = diagonal_weights(net.n, r=50.0, beta=10.0)
        terms = mbccp_terms(net, w)
        assert check_inactive_conditions(terms, 10.0)

    def test_budget_zero_active(self):
        net = lam_zero_net()
        terms = mbccp_terms(net, diagonal_weights(net.n, r=1.0, beta=0.0))
        assert not check_inactive_conditions(terms, 0.0)

    def test_agrees_with_qp_active_set(self):
        hits = 0
        for seed in range(200):
            rng = np.random.default_rng(1000 + seed)
            net = random_net(seed, n=5)
            w = diagonal_weights(5, r=float(rng.uniform(0.2, 30)),
                                 beta=float(rng.uniform(0.05, 3)))
            terms = mbccp_terms(net, w)
            u, diag = mbccp(net, w)
            probe = check_inactive_conditions(terms, w.beta)
            empty_active = (
                not diag["budget_active"]
                and diag["active_lower"].size == 0
                and diag["active_upper"].size == 0
            )
            assert probe == empty_active, f"seed {seed}"
            hits += probe
        assert 0 < hits < 200  # both branches exercised


class TestMpcSetup:
    def test_condensation_matches_mean_iteration(self):
        net = random_net(4, n=6)
        w = diagonal_weights(6, r=1.0, beta=0.6)
        ctrl = mpc_setup(net, w, T=4)
        rng = np.random.default_rng(3)
        model = ctrl.model
        for _ in range(10):
            mu0 = rng.uniform(0, 1, 6)
            U = rng.uniform(0, 0.2, 6 * 4)
            stacked = condensed_predict(ctrl, mu0, U)
            mu = mu0
            for k in range(4):
                mu = mean_step(mu, model, net.eta0, U[k * 6 : (k + 1) * 6])
                np.testing.assert_allclose(
                    stacked[k * 6 : (k + 1) * 6], mu, atol=1e-12
                )

    def test_terminal_target_is_mbccp_steady_state(self):
        net = random_net(5, n=6)
        w = diagonal_weights(6, r=1.0, beta=0.6)
        ctrl = mpc_setup(net, w, T=3)
        u_mb, _ = mbccp(net, w)
        np.testing.assert_allclose(ctrl.u_mb, u_mb, atol=1e-10)
        np.testing.assert_allclose(
            ctrl.mu_mb, steady_state(ctrl.model, net.eta0, u_mb), atol=1e-10
        )
        # stationarity of the terminal pair
        nxt = mean_step(ctrl.mu_mb, ctrl.model, net.eta0, ctrl.u_mb)
        np.testing.assert_allclose(nxt, ctrl.mu_mb, atol=1e-10)

    def test_rejects_horizon_one(self):
        net = random_net(6)
        with pytest.raises(ValueError):
            mpc_setup(net, diagonal_weights(net.n, 1.0, 1.0), T=1)


class TestMpcStep:
    def test_stationary_at_terminal_state(self):
        net = random_net(7, n=6)
        w = diagonal_weights(6, r=1.0, beta=0.8)
        ctrl = mpc_setup(net, w, T=4)
        u = mpc_step(ctrl, ctrl.mu_mb, 0)
        # from the steady state, staying is optimal: next cost not larger
        mu = mean_step(ctrl.mu_mb, ctrl.model, net.eta0, u)
        u2 = mpc_step(ctrl, mu, 1)
        assert ctrl.cost_history[1] <= ctrl.cost_history[0] + 1e-7

    def test_budget_zero_soft_gives_zero_input(self):
        net = random_net(8, n=5)
        w = diagonal_weights(5, r=1.0, beta=0.0)
        ctrl = mpc_setup(net, w, T=3, terminal_mode="soft")
        u = mpc_step(ctrl, net.eta0, 0)
        np.testing.assert_allclose(u, 0.0, atol=1e-9)

    def test_single_node_matches_bruteforce(self):
        # effectively scalar: padded nodes have eta0 = 1, so their input
        # upper bound is 0 and only node 0's two inputs remain free
        P = np.eye(3)
        net = SocialNetwork(
            n=3, P=P, lam=np.array([0.5, 0.0, 0.0]), alpha=1.0,
            eta0=np.array([0.2, 1.0, 1.0]), sigma=np.zeros(3),
        )
        w = diagonal_weights(3, r=0.7, beta=0.4)
        ctrl = mpc_setup(net, w, T=2, terminal_mode="soft", soft_rho=50.0)
        mu0 = np.array([0.1, 1.0, 1.0])
        u = mpc_step(ctrl, mu0, 0)
        np.testing.assert_allclose(u[1:], 0.0, atol=1e-12)
        # reduced 2-variable problem over node 0's inputs (others pinned 0)
        keep = [0, 3]
        c = ctrl.G_c @ mu0 + ctrl.c0
        resid = ctrl.mu_mb - ctrl.A_T @ mu0 - ctrl.E_N0
        c = c - 2.0 * ctrl.soft_rho * (ctrl.E.T @ resid)
        p = QpProblem(
            H=ctrl.H[np.ix_(keep, keep)], c=c[keep],
            lo=np.zeros(2), hi=ctrl.hi[keep],
            budget_groups=((np.array([0]), 0.4), (np.array([1]), 0.4)),
        )
        zb = solve_qp_bruteforce(p, grid=200)
        assert abs(u[0] - zb[0]) <= ctrl.hi[0] / 199 + 1e-9

    def test_infeasible_terminal_raises(self):
        net = random_net(9, n=5, lam_hi=0.85)
        w = diagonal_weights(5, r=1.0, beta=0.0)
        ctrl = mpc_setup(net, w, T=2, terminal_mode="hard")
        # with beta = 0 the only input is 0; a far-away mean cannot hit the
        # terminal equality in 2 steps
        mu_far = np.ones(5)
        with pytest.raises(MpcInfeasibleError):
            mpc_step(ctrl, mu_far, 0)
        assert ctrl.infeasible_steps == 1


class TestOracleTheorem:
    def _closed_loop(self, net, w, T, steps, **kwargs):
        ctrl = mpc_setup(net, w, T=T, mode="oracle", **kwargs)
        mu = net.eta0.copy()
        for t in range(steps):
            u = mpc_step(ctrl, mu, t)
            mu = mean_step(mu, ctrl.model, net.eta0, u)
        return ctrl, mu

    def test_recursive_feasibility_and_descending_cost(self):
        # after a feasible start the loop never loses feasibility and the
        # optimal cost descends to its limit; brief undershoot-and-recover
        # bumps of the optimal cost are genuine for this cost family (see
        # the strict monotonicity criterion in the acceptance suite), so
        # only their size is bounded here
        done = 0
        seed = 0
        while done < 8:
            seed += 1
            net = random_net(seed, n=6, lam_hi=0.85)
            w = diagonal_weights(6, r=1.0, beta=1.0)
            try:
                ctrl, mu = self._closed_loop(net, w, T=4, steps=60)
            except MpcInfeasibleError:
                continue  # infeasible start: premise not met
            costs = np.array(ctrl.cost_history)
            assert ctrl.infeasible_steps == 0
            assert costs[-1] <= costs[0] + 1e-9
            rises = np.diff(costs)
            assert rises.max(initial=0.0) <= 1e-3 * max(1.0, costs[0])
            done += 1

    def test_mean_converges_to_terminal_target(self):
        net = random_net(17, n=6, lam_hi=0.8)
        w = diagonal_weights(6, r=1.0, beta=1.0)
        ctrl, mu = self._closed_loop(net, w, T=4, steps=300)
        assert np.max(np.abs(mu - ctrl.mu_mb)) <= 1e-3

    def test_surrogate_cost_leaves_offset(self):
        # with the purely quadratic stage cost the optimal equilibrium
        # differs from the terminal target, so the receding-horizon loop
        # parks away from it; this documents why "exact" is the default
        net = random_net(17, n=6, lam_hi=0.8)
        w = diagonal_weights(6, r=1.0, beta=1.0)
        ctrl, mu = self._closed_loop(
            net, w, T=4, steps=300, stage_cost="surrogate"
        )
        assert np.max(np.abs(mu - ctrl.mu_mb)) > 1e-2


class TestCostIdentities:
    def test_acceptance_loss_matches_bernoulli_expectation(self):
        # Monte Carlo average of ||1-y||^2_Q against the closed form in the
        # mean: ||1-mu||^2_Q + <mu, 1-mu>_diag(Q)
        net = random_net(21, n=6, alpha=0.5, sigma=0.05)
        rng = np.random.default_rng(0)
        Q = np.diag(rng.uniform(0.5, 2.0, 6))
        model = build_prediction_model(net)
        u = rng.uniform(0, 0.1, 6)
        M, T = 3000, 6
        mu = net.eta0.copy()
        ones = np.ones(6)
        policy = mfccp_policy(net, beta=10.0)
        policy.u = u
        sums = np.zeros(T)
        sq_sums = np.zeros(T)
        for seed in range(M):
            traj = simulate(net, policy, T=T, seed=seed, x0=net.eta0)
            vals = ((1 - traj.ys) ** 2 @ np.diag(Q)).astype(float)
            sums += vals
            sq_sums += vals**2
        for t in range(T):
            expected = float(
                (ones - mu) @ Q @ (ones - mu) + mu @ np.diag(np.diag(Q)) @ (ones - mu)
            )
            mc_mean = sums[t] / M
            mc_se = np.sqrt(max(sq_sums[t] / M - mc_mean**2, 1e-12) / M)
            assert abs(mc_mean - expected) <= 4 * mc_se + 1e-9
            mu = mean_step(mu, model, net.eta0, u)

    def test_infinite_horizon_cost_bounds(self):
        # partial sums of the exact per-step loss stay between the loss with
        # the cross term replaced by -|1|^2_diag(Q) and +|1|^2_diag(Q)
        rng = np.random.default_rng(5)
        for trial in range(100):
            net = random_net(trial % 20, n=6)
            model = build_prediction_model(net)
            Q = np.diag(rng.uniform(0.2, 2.0, 6))
            R = np.eye(6) * rng.uniform(0.1, 2.0)
            Qd = np.diag(np.diag(Q))
            ones = np.ones(6)
            cap = float(ones @ Qd @ ones)
            mu = rng.uniform(0, 1, 6)
            exact = lower = upper = 0.0
            for t in range(8):
                u = rng.uniform(0, 0.15, 6)
                quad = float((ones - mu) @ Q @ (ones - mu) + u @ R @ u)
                cross = float(mu @ Qd @ (ones - mu))
                exact += quad + cross
                lower += quad - cap
                upper += quad + cap
                assert lower <= exact <= upper
                mu = mean_step(mu, model, net.eta0, u)


class TestPolicyHandles:
    def test_constant_policies_run_in_simulator(self):
        net = random_net(11)
        for policy in (
            zero_policy(net.n),
            mfccp_policy(net, 0.5),
            mbccp_policy(net, diagonal_weights(net.n, 1.0, 0.5)),
        ):
            traj = simulate(net, policy, T=10, seed=0)
            assert traj.us.shape == (10, net.n)
            assert np.all(traj.us.sum(axis=1) <= 0.5 + 1e-9)

    def test_oracle_mpc_runs_in_simulator(self):
        net = random_net(12, n=6, lam_hi=0.8)
        w = diagonal_weights(6, r=1.0, beta=1.0)
        ctrl = mpc_setup(net, w, T=3, mode="oracle", terminal_mode="soft")
        traj = simulate(net, MpcPolicy(ctrl), T=15, seed=3)
        assert len(traj.mpc_costs) == 15
        assert np.all(traj.us.sum(axis=1) <= 1.0 + 1e-9)

    def test_estimated_mpc_runs_in_simulator(self):
        net = random_net(13, n=6, lam_hi=0.8)
        w = diagonal_weights(6, r=1.0, beta=1.0)
        ctrl = mpc_setup(net, w, T=3, mode="estimated", terminal_mode="soft")
        traj = simulate(net, MpcPolicy(ctrl), T=15, seed=4)
        assert traj.us.shape == (15, 6)
