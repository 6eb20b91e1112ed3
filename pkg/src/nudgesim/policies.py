"""Nudging policies: uniform budget split, the steady-state optimal constant
policy (a box/budget QP over the influence matrix), and receding-horizon
control with a terminal constraint at the constant policy's equilibrium."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nudgesim.equilibrium import build_prediction_model, steady_state
from nudgesim.qpsolve import QpFactorCache, QpProblem, solve_qp


class MpcInfeasibleError(RuntimeError):
    """The finite-horizon problem has no feasible input sequence."""


@dataclass(frozen=True)
class PolicyWeights:
    """Acceptance-shortfall weight Q, effort weight R, budget beta."""

    Q: np.ndarray
    R: np.ndarray
    beta: float

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        for name, M in (("Q", Q), ("R", R)):
            if np.max(np.abs(M - M.T)) > 1e-12:
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        if self.beta < 0:
            raise ValueError("budget must be nonnegative")


def diagonal_weights(n, r, beta):
    """The common choice Q = I, R = r*I."""
    return PolicyWeights(Q=np.eye(n), R=r * np.eye(n), beta=beta)


def input_upper_bound(net):
    """Conservative per-node input cap 1 - (eta0 + 2 sigma), floored at 0.

    Keeps the external term inside [0, 1] with two-sigma headroom for the
    disturbance; nodes whose bias plus headroom already exceeds 1 get no
    input at all.
    """
    return np.maximum(0.0, 1.0 - net.eta0 - 2.0 * net.sigma)


def mfccp(net, beta):
    """Uniform budget split, capped per node by the conservative bound."""
    if beta < 0:
        raise ValueError("budget must be nonnegative")
    return np.maximum(0.0, np.minimum(1.0 - net.eta0 - 2.0 * net.sigma, beta / net.n))


@dataclass(frozen=True)
class MbccpTerms:
    """Quadratic reformulation of the asymptotic acceptance/effort loss:
    J(u) = u' W u + c' u + gamma_const over the feasible input box."""

    W: np.ndarray
    c: np.ndarray
    gamma_const: float
    u_bound: np.ndarray


def mbccp_terms(net, weights, model=None):
    """Coefficients of the steady-state loss as a QP in the constant input.

    With V the steady-state influence matrix and D = Q - diag(Q):
    W = R + V'DV, c = V'(diag(Q) - 2Q) 1 + 2 V'DV eta0.
    """
    if model is None:
        model = build_prediction_model(net)
    V = model.V
    Q, R = weights.Q, weights.R
    Qd = np.diag(np.diag(Q))
    D = Q - Qd
    VDV = V.T @ D @ V
    W = R + VDV
    ones = np.ones(net.n)
    c = V.T @ ((Qd - 2 * Q) @ ones) + 2 * VDV @ net.eta0
    gamma_const = float(
        ones @ Q @ ones + net.eta0 @ VDV @ net.eta0 + ones @ (Qd - 2 * Q) @ V @ net.eta0
    )
    return MbccpTerms(W=W, c=c, gamma_const=gamma_const, u_bound=input_upper_bound(net))


def check_inactive_conditions(terms, beta):
    """True iff the unconstrained minimizer -W^{-1}c/2 strictly satisfies the
    budget, nonnegativity and the upper bounds; the policymaker-facing probe
    for whether any constraint shapes the constant policy."""
    u0 = -0.5 * np.linalg.solve(terms.W, terms.c)
    raw_hi = terms.u_bound  # already floored at 0
    return bool(
        u0.sum() < beta and np.all(u0 > 0.0) and np.all(u0 < raw_hi)
    )


def mbccp(net, weights, model=None):
    """Steady-state optimal constant policy.

    Returns (u, diagnostics); diagnostics carry the QP active sets, KKT
    residuals, and the closed-form cross-check when no constraint is active.
    """
    terms = mbccp_terms(net, weights, model=model)
    n = net.n
    problem = QpProblem(
        H=terms.W,
        c=terms.c,
        lo=np.zeros(n),
        hi=terms.u_bound,
        budget_groups=((np.arange(n), weights.beta),),
    )
    sol = solve_qp(problem)
    if sol.status != "optimal":
        raise RuntimeError(
            f"constant-policy QP failed ({sol.status}): {sol.infeasibility_reason}"
        )
    inactive = check_inactive_conditions(terms, weights.beta)
    diagnostics = {
        "terms": terms,
        "kkt_residuals": sol.kkt_residuals,
        "active_lower": sol.active_lower,
        "active_upper": sol.active_upper,
        "budget_active": bool(sol.active_budget.size),
        "nu1": float(sol.nu1[0]) if sol.nu1.size else 0.0,
        "constraints_inactive": inactive,
        "value": sol.value + terms.gamma_const,
    }
    if inactive:
        closed_form = -0.5 * np.linalg.solve(terms.W, terms.c)
        diagnostics["closed_form_gap"] = float(
            np.max(np.abs(closed_form - sol.z_star))
        )
    return sol.z_star, diagnostics


# -- receding-horizon controller -----------------------------------------


@dataclass
class MpcController:
    """Condensed finite-horizon controller state.

    The per-step decision variable stacks T input blocks; the prediction
    operator maps (mu(0), stacked inputs) to the stacked future means. The
    terminal constraint pins mu(T) at the constant policy's steady state
    (hard mode) or penalizes the distance to it (soft mode).
    """

    model: object
    weights: PolicyWeights
    T: int
    u_mb: np.ndarray
    mu_mb: np.ndarray
    mode: str
    terminal_mode: str
    soft_rho: float
    stage_cost: str = "exact"
    # condensed pieces
    H: np.ndarray = field(repr=False, default=None)
    G_c: np.ndarray = field(repr=False, default=None)
    c0: np.ndarray = field(repr=False, default=None)
    E: np.ndarray = field(repr=False, default=None)
    A_T: np.ndarray = field(repr=False, default=None)
    E_N0: np.ndarray = field(repr=False, default=None)
    calA: np.ndarray = field(repr=False, default=None)
    calB: np.ndarray = field(repr=False, default=None)
    stage_A: np.ndarray = field(repr=False, default=None)
    stage_B: np.ndarray = field(repr=False, default=None)
    Qsel: np.ndarray = field(repr=False, default=None)
    q_stack: np.ndarray = field(repr=False, default=None)
    lo: np.ndarray = field(repr=False, default=None)
    hi: np.ndarray = field(repr=False, default=None)
    budget_groups: tuple = ()
    eta0: np.ndarray = None
    cache: QpFactorCache = field(repr=False, default=None)
    soft_H: np.ndarray = field(repr=False, default=None)
    soft_cache: QpFactorCache = field(repr=False, default=None)
    warm: list | None = None
    cost_history: list = field(default_factory=list)
    infeasible_steps: int = 0
    fallback_steps: list = field(default_factory=list)
    active_counts: list = field(default_factory=list)
    skip_hard: bool = False
    memo: dict = field(repr=False, default_factory=dict)

    @property
    def n(self):
        return self.model.n

    def reset(self, keep_skip_hard=False):
        """Clear per-run state so the controller can drive a fresh closed
        loop; the precomputed problem pieces are shared across runs.

        keep_skip_hard carries a detected structural terminal-infeasibility
        over to the next run (the first solve of every matched-seed run is
        identical, so the detection would only repeat)."""
        self.warm = None
        self.cost_history = []
        self.infeasible_steps = 0
        self.fallback_steps = []
        self.active_counts = []
        if not keep_skip_hard:
            self.skip_hard = False


def mpc_setup(
    net,
    weights,
    T,
    mode="oracle",
    terminal_mode="hard",
    soft_rho=1e3,
    stage_cost="exact",
    soft_fallback=False,
):
    """Precompute the condensed finite-horizon problem for a network.

    mode selects what the controller is fed at each step: the exact mean
    ("oracle") or the running estimate from observations ("estimated").

    stage_cost picks the per-step acceptance loss. "exact" uses the
    Bernoulli-equivalent form ||1-mu||^2_Q + <mu, 1-mu>_diag(Q), whose
    optimal steady state coincides with the constant policy's equilibrium,
    so the terminal constraint and the running cost pull toward the same
    point and the closed-loop mean converges there. "surrogate" keeps only
    the quadratic term ||1-mu||^2_Q; its optimal equilibrium differs from
    the terminal one, which leaves a persistent receding-horizon offset.

    With soft_fallback=True a hard-terminal controller retries any step
    whose equality constraint is unreachable as a penalized (soft) solve,
    counting the event instead of failing; large networks with nodes whose
    social weight is close to 1 routinely need this at early steps.
    """
    if T <= 1:
        raise ValueError("prediction horizon must exceed 1")
    if mode not in ("oracle", "estimated"):
        raise ValueError(f"unknown mode {mode!r}")
    if terminal_mode not in ("hard", "soft"):
        raise ValueError(f"unknown terminal mode {terminal_mode!r}")
    if stage_cost not in ("exact", "surrogate"):
        raise ValueError(f"unknown stage cost {stage_cost!r}")
    model = build_prediction_model(net)
    u_mb, _ = mbccp(net, weights, model=model)
    mu_mb = steady_state(model, net.eta0, u_mb)
    n = net.n
    m = n * T

    A, B = model.A, model.B
    # powers A^k B fill the block lower triangle of the input map
    powB = [B]
    powA = [A]
    for _ in range(T - 1):
        powB.append(A @ powB[-1])
        powA.append(A @ powA[-1])
    calA = np.vstack(powA)  # rows: A^1 .. A^T
    calB = np.zeros((n * T, m))
    for i in range(T):
        for j in range(i + 1):
            calB[i * n : (i + 1) * n, j * n : (j + 1) * n] = powB[i - j]

    stage_rows = n * (T - 1)  # means mu(1) .. mu(T-1) carry stage cost
    stage_A = calA[:stage_rows]
    stage_B = calB[:stage_rows]
    E = calB[(T - 1) * n :]  # terminal block row: mu(T) as a function of U
    A_T = powA[-1]

    N0 = np.tile(net.eta0, T)
    E_N0 = E @ N0
    calR = np.kron(np.eye(T), weights.R)
    Q = weights.Q
    if stage_cost == "exact":
        Qtilde = Q - np.diag(np.diag(Q))
        q_lin = (np.diag(np.diag(Q)) - 2.0 * Q) @ np.ones(n)
        Qsel = np.kron(np.eye(T - 1), Qtilde)
        q_stack = np.tile(q_lin, T - 1)
        H = calR + stage_B.T @ Qsel @ stage_B
        G_c = 2.0 * stage_B.T @ Qsel @ stage_A
        c0 = 2.0 * stage_B.T @ (Qsel @ (stage_B @ N0)) + stage_B.T @ q_stack
    else:
        Qsel = np.kron(np.eye(T - 1), Q)
        q_stack = None
        H = calR + stage_B.T @ Qsel @ stage_B
        ones_stage = np.ones(stage_rows)
        G_c = 2.0 * stage_B.T @ Qsel @ stage_A
        c0 = -2.0 * stage_B.T @ Qsel @ (ones_stage - stage_B @ N0)

    u_hi = input_upper_bound(net)
    lo = np.zeros(m)
    hi = np.tile(u_hi, T)
    groups = tuple((np.arange(k * n, (k + 1) * n), weights.beta) for k in range(T))

    equality_E = E if terminal_mode == "hard" else None
    soft_H = None
    soft_cache = None
    if terminal_mode == "soft":
        H = H + soft_rho * (E.T @ E)
    try:
        cache = QpFactorCache(H, groups, equality_E)
        if terminal_mode == "hard" and soft_fallback:
            soft_H = H + soft_rho * (E.T @ E)
            soft_cache = QpFactorCache(soft_H, groups)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "stage cost is not positive definite over the horizon; increase "
            "the effort weight R or use stage_cost='surrogate'"
        ) from exc

    return MpcController(
        model=model,
        weights=weights,
        T=T,
        u_mb=u_mb,
        mu_mb=mu_mb,
        mode=mode,
        terminal_mode=terminal_mode,
        soft_rho=soft_rho,
        stage_cost=stage_cost,
        H=H,
        G_c=G_c,
        c0=c0,
        E=E,
        A_T=A_T,
        E_N0=E_N0,
        calA=calA,
        calB=calB,
        stage_A=stage_A,
        stage_B=stage_B,
        Qsel=Qsel,
        q_stack=q_stack,
        lo=lo,
        hi=hi,
        budget_groups=groups,
        eta0=net.eta0,
        cache=cache,
        soft_H=soft_H,
        soft_cache=soft_cache,
    )


def condensed_predict(ctrl, mu0, U):
    """Stacked means mu(1..T) for a stacked input sequence; the condensation
    must agree with step-by-step mean propagation."""
    return ctrl.calA @ mu0 + ctrl.calB @ (np.tile(ctrl.eta0, ctrl.T) + U)


def _stage_constant(ctrl, mu0):
    """Input-independent part of the horizon cost at the given initial mean,
    so reported optima are the full objective values."""
    ones = np.ones(ctrl.n)
    Q = ctrl.weights.Q
    base = ctrl.stage_A @ mu0 + ctrl.stage_B @ np.tile(ctrl.eta0, ctrl.T)
    if ctrl.stage_cost == "exact":
        ones_q = float(ones @ Q @ ones)
        q_lin = ctrl.q_stack[: ctrl.n]
        stage0 = float(mu0 @ (ctrl.Qsel[: ctrl.n, : ctrl.n] @ mu0)) + float(
            q_lin @ mu0
        ) + ones_q
        rest = float(base @ (ctrl.Qsel @ base) + ctrl.q_stack @ base) + (
            ctrl.T - 1
        ) * ones_q
        return stage0 + rest
    e0 = ones - mu0
    resid = np.ones(ctrl.n * (ctrl.T - 1)) - base
    return float(e0 @ Q @ e0 + resid @ ctrl.Qsel @ resid)


def mpc_step(ctrl, mu_input, t):
    """Solve the finite-horizon problem at the given mean and apply the first
    input block (receding horizon). Warm-starts from the previous active set
    shifted one step forward. An unreachable hard terminal either raises or,
    with the fallback enabled, is re-solved as a penalized step."""
    mu0 = np.asarray(mu_input, dtype=float)
    # identical queries recur (the first step of every matched-seed run in a
    # sweep cell sees the same estimator prior): replay the cached answer
    key = (mu0.tobytes(), ctrl.skip_hard)
    hit = ctrl.memo.get(key)
    if hit is not None:
        u, warm, cost, used_fallback, n_active = hit
        ctrl.warm = list(warm)
        ctrl.cost_history.append(cost)
        ctrl.fallback_steps.append(used_fallback)
        ctrl.active_counts.append(n_active)
        if used_fallback:
            ctrl.infeasible_steps += 1
            ctrl.skip_hard = True
        return u.copy()
    c = ctrl.G_c @ mu0 + ctrl.c0
    terminal_resid = ctrl.mu_mb - ctrl.A_T @ mu0 - ctrl.E_N0
    used_fallback = False
    if ctrl.terminal_mode == "hard" and not ctrl.skip_hard:
        problem = QpProblem(
            H=ctrl.H,
            c=c,
            lo=ctrl.lo,
            hi=ctrl.hi,
            budget_groups=ctrl.budget_groups,
            equalities=(ctrl.E, terminal_resid),
        )
        sol = solve_qp(problem, cache=ctrl.cache, warm=ctrl.warm)
        if sol.status != "optimal":
            ctrl.infeasible_steps += 1
            if ctrl.soft_cache is None:
                gap = float(np.max(np.abs(terminal_resid)))
                raise MpcInfeasibleError(
                    f"finite-horizon problem {sol.status} at t={t}: "
                    f"{sol.infeasibility_reason or 'no optimum found'}; "
                    f"terminal gap {gap:.3g} not reachable in {ctrl.T} steps "
                    "under the budget"
                )
            # unreachable terminals are structural, not transient: stay on
            # the penalized path for the rest of this run
            ctrl.skip_hard = True
            used_fallback = True
            sol = _solve_soft(
                ctrl, ctrl.soft_H, ctrl.soft_cache, c, terminal_resid, t
            )
    elif ctrl.terminal_mode == "hard":
        ctrl.infeasible_steps += 1
        used_fallback = True
        sol = _solve_soft(ctrl, ctrl.soft_H, ctrl.soft_cache, c, terminal_resid, t)
    else:
        sol = _solve_soft(ctrl, ctrl.H, ctrl.cache, c, terminal_resid, t)
    n = ctrl.n
    # warm start for the next solve: the receding-horizon shift (block k+1
    # of the plan becomes block k) plus the final block kept in place, since
    # the tail of the new plan usually repeats the old one
    last = n * (ctrl.T - 1)
    warm = set()
    for i in sol.active_lower:
        if i >= n:
            warm.add(("lo", int(i - n)))
        if i >= last:
            warm.add(("lo", int(i)))
    for i in sol.active_upper:
        if i >= n:
            warm.add(("hi", int(i - n)))
        if i >= last:
            warm.add(("hi", int(i)))
    for g in sol.active_budget:
        if g >= 1:
            warm.add(("bg", int(g - 1)))
        if g == ctrl.T - 1:
            warm.add(("bg", int(g)))
    warm = sorted(warm)
    ctrl.warm = warm
    stage_const = _stage_constant(ctrl, mu0)
    soft_const = 0.0
    if used_fallback or ctrl.terminal_mode == "soft":
        soft_const = ctrl.soft_rho * float(terminal_resid @ terminal_resid)
    cost = sol.value + stage_const + soft_const
    ctrl.cost_history.append(cost)
    ctrl.fallback_steps.append(used_fallback)
    n_active = len(sol.active_lower) + len(sol.active_upper) + len(sol.active_budget)
    ctrl.active_counts.append(n_active)
    u = sol.z_star[:n]
    if len(ctrl.memo) >= 8:
        ctrl.memo.pop(next(iter(ctrl.memo)))
    ctrl.memo[key] = (u.copy(), list(warm), cost, used_fallback, n_active)
    return u


def _solve_soft(ctrl, H, cache, c, terminal_resid, t):
    c = c - 2.0 * ctrl.soft_rho * (ctrl.E.T @ terminal_resid)
    problem = QpProblem(
        H=H,
        c=c,
        lo=ctrl.lo,
        hi=ctrl.hi,
        budget_groups=ctrl.budget_groups,
    )
    sol = solve_qp(problem, cache=cache, warm=ctrl.warm)
    if sol.status != "optimal":
        raise MpcInfeasibleError(
            f"penalized finite-horizon problem {sol.status} at t={t}: "
            f"{sol.infeasibility_reason or 'no optimum found'}"
        )
    return sol


# -- policy handles for the simulator ------------------------------------


class ConstantPolicy:
    """Applies a fixed input vector every step."""

    info_kind = "none"

    def __init__(self, u, beta=None, u_max=None):
        self.u = np.asarray(u, dtype=float)
        self.beta = beta
        self.u_max = u_max

    def __call__(self, t, info):
        return self.u


def zero_policy(n):
    return ConstantPolicy(np.zeros(n), beta=0.0)


def mfccp_policy(net, beta):
    return ConstantPolicy(mfccp(net, beta), beta=beta, u_max=input_upper_bound(net))


def mbccp_policy(net, weights, model=None):
    u, diagnostics = mbccp(net, weights, model=model)
    policy = ConstantPolicy(u, beta=weights.beta, u_max=input_upper_bound(net))
    policy.diagnostics = diagnostics
    return policy


class MpcPolicy:
    """Receding-horizon policy handle around an MpcController."""

    def __init__(self, ctrl):
        self.ctrl = ctrl
        self.info_kind = "oracle" if ctrl.mode == "oracle" else "estimate"
        self.beta = ctrl.weights.beta
        self.u_max = ctrl.hi[: ctrl.n]
        self.model = ctrl.model

    @property
    def cost_history(self):
        return self.ctrl.cost_history

    @property
    def infeasible_steps(self):
        return self.ctrl.infeasible_steps

    def __call__(self, t, info):
        return mpc_step(self.ctrl, info, t)
