"""Deterministic analysis layer: expected dynamics, steady states, spectral
stability, Cesaro averaging and the observation-based mean estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nudgesim.graph import check_influence_reachability

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITER = 10_000


class UnstableNetworkError(RuntimeError):
    """The influence-reachability condition fails, so the mean dynamics has
    no well-defined steady state."""


@dataclass
class MeanState:
    mu: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class PredictionModel:
    """Mean-dynamics operators for a network.

    A = Lam * Pbar drives the expected inclinations, B = I - Lam injects the
    external term, and V = (I - Lam Pbar)^-1 (I - Lam) maps constant external
    terms to steady-state means.
    """

    A: np.ndarray
    B: np.ndarray
    Pbar: np.ndarray
    V: np.ndarray
    spectral_radius: float
    reachable: bool

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def stable(self):
        return self.reachable and self.spectral_radius < 1.0


def spectral_radius(A, tol=SPECTRAL_TOL, max_iter=SPECTRAL_MAX_ITER):
    """Dominant-eigenvalue (power) iteration for a nonnegative matrix.

    Iterates on A + I (the shift makes every diagonal positive, killing
    periodic oscillation) from the normalized all-ones vector, and returns
    the Rayleigh estimate minus one.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = A + np.eye(n)
    x = np.full(n, 1.0 / np.sqrt(n))
    y = B @ x
    lam = 1.0
    for _ in range(max_iter):
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
        y = B @ x
        lam = float(x @ y)
        # residual-based stop: |Bx - lam x| small certifies the estimate
        if np.linalg.norm(y - lam * x) <= tol * max(1.0, abs(lam)):
            break
    return max(lam - 1.0, 0.0)


def build_prediction_model(net):
    """Assemble the mean-dynamics operators for a network.

    Raises UnstableNetworkError when the reachability condition fails (every
    node must have a path to some node with lam < 1); in that case the mean
    transition has spectral radius 1 and V does not exist.
    """
    n = net.n
    Pbar = (1.0 - net.alpha) * np.eye(n) + net.alpha * net.P
    A = net.lam[:, None] * Pbar
    B = np.eye(n) - np.diag(net.lam)
    reachable = check_influence_reachability(net.P, net.lam)
    rho = spectral_radius(A)
    if not reachable:
        raise UnstableNetworkError(
            "influence reachability fails: some agents have no path to an "
            "agent with lam < 1; expected dynamics are not stable"
        )
    try:
        V = np.linalg.solve(np.eye(n) - A, B)
    except np.linalg.LinAlgError as exc:
        raise UnstableNetworkError(f"I - Lam*Pbar is singular: {exc}") from exc
    return PredictionModel(
        A=A, B=B, Pbar=Pbar, V=V, spectral_radius=rho, reachable=reachable
    )


def mean_step(mu, model, eta0, u):
    """One step of the expected dynamics: A mu + B (eta0 + u)."""
    if isinstance(mu, MeanState):
        return MeanState(
            mu=model.A @ mu.mu + model.B @ (eta0 + u), t=mu.t + 1
        )
    return model.A @ mu + model.B @ (eta0 + u)


def steady_state(model, eta0, u=None):
    """Fixed point of the expected dynamics under a constant input."""
    if not model.stable:
        raise UnstableNetworkError(
            "no steady state: mean transition is not Schur stable"
        )
    ext = eta0 if u is None else eta0 + u
    return model.V @ ext


def cesaro_update(avg, t, sample):
    """Incremental running average: ((t * avg) + sample) / (t + 1)."""
    if t < 0:
        raise ValueError("count must be nonnegative")
    return avg + (np.asarray(sample, dtype=float) - avg) / (t + 1)


@dataclass(frozen=True)
class EstimatorState:
    """Running average of binary observations, with a prior before the first
    one arrives. Optionally keeps only the last `window` observations."""

    running_sum: np.ndarray
    count: int
    prior: np.ndarray
    window: int | None = None
    history: tuple = ()

    @property
    def mu_hat(self):
        if self.count == 0:
            return np.asarray(self.prior, dtype=float)
        return self.running_sum / self.count


def make_estimator(n, prior, window=None):
    return EstimatorState(
        running_sum=np.zeros(n),
        count=0,
        prior=np.asarray(prior, dtype=float),
        window=window,
    )


def estimator_update(est, y):
    """Fold one observation vector into the estimator."""
    y = np.asarray(y, dtype=float)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("observations must be binary")
    if est.window is None:
        return EstimatorState(
            running_sum=est.running_sum + y,
            count=est.count + 1,
            prior=est.prior,
        )
    history = est.history + (y,)
    dropped = 0.0
    if len(history) > est.window:
        dropped = history[0]
        history = history[1:]
    return EstimatorState(
        running_sum=est.running_sum + y - dropped,
        count=len(history),
        prior=est.prior,
        window=est.window,
        history=history,
    )
