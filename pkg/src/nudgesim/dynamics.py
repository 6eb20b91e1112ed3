"""Stochastic hidden-inclination recursion with two-timescale switching,
exogenous Gaussian noise, control injection and Bernoulli acceptance
observations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BUDGET_TOL = 1e-9

# The three random ingredients of a run draw from independent substreams so
# that swapping the policy never perturbs the noise or imitation sequence
# (matched-seed comparisons rely on this).
_STREAM_NOISE = 0
_STREAM_IMITATION = 1
_STREAM_ACCEPTANCE = 2

_BLOCK = 1024  # steps of randomness generated per keyed block


class _KeyedStream:
    """Deterministic per-(seed, t) random values.

    Values are produced in blocks keyed by (seed, stream, t // block), so a
    query at any t gives the same numbers regardless of call order.
    """

    def __init__(self, seed, stream, width):
        self.seed = seed
        self.stream = stream
        self.width = width
        self._bidx = -1
        self._block = None

    def _row(self, t, kind):
        b, r = divmod(t, _BLOCK)
        if b != self._bidx:
            rng = np.random.default_rng(
                np.random.SeedSequence(self.seed, spawn_key=(self.stream, b))
            )
            if kind == "normal":
                self._block = rng.standard_normal((_BLOCK, self.width))
            else:
                self._block = rng.random((_BLOCK, self.width))
            self._bidx = b
        return self._block[r]

    def normal(self, t):
        return self._row(t, "normal")

    def uniform(self, t):
        return self._row(t, "uniform")


@dataclass
class HiddenState:
    """Hidden inclinations at one time index; every entry lies in [0, 1]."""

    x: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if np.any(self.x < 0) or np.any(self.x > 1):
            raise ValueError("hidden inclinations must lie in [0, 1]")


class NoiseModel:
    """Zero-mean i.i.d. Gaussian disturbance stream, one std dev per node.

    sample(t) is deterministic given (seed, t): same time index, same draw.
    """

    kind = "gaussian"

    def __init__(self, sigma, seed):
        self.sigma = np.asarray(sigma, dtype=float)
        if np.any(self.sigma < 0):
            raise ValueError("sigma entries must be nonnegative")
        self.seed = seed
        self._stream = _KeyedStream(seed, _STREAM_NOISE, self.sigma.size)

    def sample(self, t):
        return self.sigma * self._stream.normal(t)


def sample_noise(noise, t):
    """Draw the disturbance vector for time t from a NoiseModel."""
    return noise.sample(t)


class ImitationStream:
    """Bernoulli(alpha) switch deciding whether social mixing happens."""

    def __init__(self, alpha, seed):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.alpha = alpha
        self._stream = _KeyedStream(seed, _STREAM_IMITATION, 1)

    def sample(self, t):
        return bool(self._stream.uniform(t)[0] < self.alpha)


def sample_imitation(stream, t):
    return stream.sample(t)


class AcceptanceStream:
    """Per-node Bernoulli observations with success probability x_v."""

    def __init__(self, n, seed):
        self._stream = _KeyedStream(seed, _STREAM_ACCEPTANCE, n)

    def sample(self, x, t):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x > 1):
            raise ValueError("acceptance probabilities must lie in [0, 1]")
        return (self._stream.uniform(t) < x).astype(np.int8)


def sample_acceptance(stream, x, t):
    return stream.sample(x, t)


def step(state, net, u, eta_nc, imitate):
    """One update of the hidden inclinations.

    The external term eta0 + eta_nc + u is clamped entrywise to [0, 1] (the
    Gaussian tail would otherwise leave the unit box); the new state is
    lam * (P x) + (1 - lam) * eta when imitating, with P replaced by the
    identity otherwise. Returns (next_state, n_clipped).
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("control inputs must be nonnegative")
    eta_raw = net.eta0 + eta_nc + u
    eta = np.clip(eta_raw, 0.0, 1.0)
    n_clipped = int(np.count_nonzero(eta != eta_raw))
    mixed = net.P @ state.x if imitate else state.x
    x_next = net.lam * mixed + (1.0 - net.lam) * eta
    # exact arithmetic keeps x in [0,1]; clip float dust only
    np.clip(x_next, 0.0, 1.0, out=x_next)
    return HiddenState(x=x_next, t=state.t + 1), n_clipped


@dataclass
class Trajectory:
    """Realized run: xs has T+1 states, ys/us/imitation_flags have T rows."""

    xs: np.ndarray
    ys: np.ndarray
    us: np.ndarray
    imitation_flags: np.ndarray
    clip_events: int
    seed: int
    infeasible_steps: int = 0
    mpc_costs: list = field(default_factory=list)

    @property
    def T(self):
        return self.ys.shape[0]


class PolicyInfeasibleError(RuntimeError):
    """A policy could not produce a feasible input at some step."""


def simulate(net, policy, T, seed, x0=None, estimator_prior=None):
    """Run the closed loop for T steps under a policy.

    The policy is called as policy(t, info) and must return a nonnegative
    input vector within its declared budget/bounds. `info` depends on the
    policy's declared `info_kind` attribute:

      - "none": info is None (constant and zero policies),
      - "oracle": the exact expected inclinations, propagated alongside the
        simulation through the mean dynamics,
      - "estimate": the running average of past observations (the estimator
        prior seeds it before the first observation arrives).

    Reproducible: the noise, imitation and acceptance substreams are all
    derived from `seed` and are independent of the policy.
    """
    if T < 1:
        raise ValueError("need T >= 1")
    n = net.n
    x0 = net.eta0 if x0 is None else np.asarray(x0, dtype=float)

    noise = NoiseModel(net.sigma, seed)
    imitation = ImitationStream(net.alpha, seed)
    acceptance = AcceptanceStream(n, seed)

    info_kind = getattr(policy, "info_kind", "none")
    beta = getattr(policy, "beta", None)
    u_max = getattr(policy, "u_max", None)

    mu = None
    model = None
    if info_kind == "oracle":
        from nudgesim.equilibrium import build_prediction_model

        model = getattr(policy, "model", None) or build_prediction_model(net)
        mu = x0.copy()
    est_sum = np.zeros(n)
    est_count = 0
    prior = net.eta0 if estimator_prior is None else np.asarray(estimator_prior)

    xs = np.empty((T + 1, n))
    ys = np.empty((T, n), dtype=np.int8)
    us = np.empty((T, n))
    flags = np.empty(T, dtype=bool)
    xs[0] = x0
    state = HiddenState(x=x0, t=0)
    clip_events = 0

    for t in range(T):
        if info_kind == "oracle":
            info = mu
        elif info_kind == "estimate":
            info = est_sum / est_count if est_count else prior
        else:
            info = None
        u = np.asarray(policy(t, info), dtype=float)
        if np.any(u < -BUDGET_TOL):
            raise PolicyInfeasibleError(f"negative input at t={t}")
        u = np.maximum(u, 0.0)
        if beta is not None and u.sum() > beta + BUDGET_TOL:
            raise PolicyInfeasibleError(
                f"budget violated at t={t}: {u.sum():.12g} > {beta:.12g}"
            )
        if u_max is not None and np.any(u > u_max + BUDGET_TOL):
            raise PolicyInfeasibleError(f"input bound violated at t={t}")

        y = acceptance.sample(state.x, t)
        eta_nc = noise.sample(t)
        imitate = imitation.sample(t)
        state, clipped = step(state, net, u, eta_nc, imitate)
        clip_events += clipped

        xs[t + 1] = state.x
        ys[t] = y
        us[t] = u
        flags[t] = imitate
        est_sum += y
        est_count += 1
        if info_kind == "oracle":
            mu = model.A @ mu + model.B @ (net.eta0 + u)

    return Trajectory(
        xs=xs,
        ys=ys,
        us=us,
        imitation_flags=flags,
        clip_events=clip_events,
        seed=seed,
        infeasible_steps=int(getattr(policy, "infeasible_steps", 0)),
        mpc_costs=list(getattr(policy, "cost_history", [])),
    )


def save_trajectory_csv(traj, path):
    """Write one run as CSV rows (t, node, x, y, u, imitation_flag)."""
    n = traj.xs.shape[1]
    with open(path, "w") as fh:
        fh.write("t,node,x,y,u,imitation_flag\n")
        for t in range(traj.T):
            flag = int(traj.imitation_flags[t])
            for v in range(n):
                fh.write(
                    "%d,%d,%.17g,%d,%.17g,%d\n"
                    % (t, v, traj.xs[t, v], traj.ys[t, v], traj.us[t, v], flag)
                )
