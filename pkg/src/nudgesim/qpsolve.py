"""Dense convex QP solver for the recurring constraint pattern: entrywise
box bounds, scalar budget inequalities over index groups, and an optional
linear equality block. Solutions carry exact multipliers and certified
KKT residuals.

Cost convention: minimize z' H z + c' z (H symmetric positive definite),
so the stationarity condition reads 2 H z + c + (constraint normals) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@_njit(cache=True)
def _tri_solves(R, k, s, w, r):
    """w = R[:k,:k]' \\ s, then r = R[:k,:k] \\ w, on the preallocated
    factor buffer (R upper triangular)."""
    for i in range(k):
        acc = s[i]
        for j in range(i):
            acc -= R[j, i] * w[j]
        w[i] = acc / R[i, i]
    for i in range(k - 1, -1, -1):
        acc = w[i]
        for j in range(i + 1, k):
            acc -= R[i, j] * r[j]
        r[i] = acc / R[i, i]


@_njit(cache=True)
def _retriangularize(R, j, k):
    """Restore upper-triangularity after deleting column j (columns already
    shifted left), using Givens rotations on rows (col, col+1)."""
    for col in range(j, k):
        a = R[col, col]
        b = R[col + 1, col]
        hyp = (a * a + b * b) ** 0.5
        if hyp == 0.0:
            continue
        c = a / hyp
        s = b / hyp
        for q in range(col, k):
            t1 = R[col, q]
            t2 = R[col + 1, q]
            R[col, q] = c * t1 + s * t2
            R[col + 1, q] = -s * t1 + c * t2
        R[col + 1, col] = 0.0


FEAS_TOL = 1e-9  # constraint satisfaction
KKT_TOL = 1e-8  # certified residual bound for status == "optimal"
_ADD_TOL = 1e-10  # violation below this is treated as satisfied
_DEP_TOL = 1e-12  # dependent-constraint threshold on the curvature kappa
MAX_ITER = 10_000


@dataclass(frozen=True)
class QpProblem:
    """min z'Hz + c'z subject to lo <= z <= hi, sum_{i in S_g} z_i <= beta_g
    for each budget group, and optionally E z = f."""

    H: np.ndarray
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    budget_groups: tuple = ()
    equalities: tuple | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12:
            raise ValueError("H must be symmetric within 1e-12")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if np.any(self.lo > self.hi):
            raise ValueError("box bounds must satisfy lo <= hi")
        groups = tuple(
            (np.asarray(idx, dtype=int), float(b)) for idx, b in self.budget_groups
        )
        object.__setattr__(self, "budget_groups", groups)
        if self.equalities is not None:
            E, f = self.equalities
            E = np.atleast_2d(np.asarray(E, dtype=float))
            f = np.atleast_1d(np.asarray(f, dtype=float))
            object.__setattr__(self, "equalities", (E, f))

    @property
    def m(self):
        return self.c.size


@dataclass
class QpSolution:
    z_star: np.ndarray
    nu1: np.ndarray  # budget multipliers, one per group
    nu2: np.ndarray  # lower-bound multipliers
    nu3: np.ndarray  # upper-bound multipliers
    xi: np.ndarray | None  # equality multipliers
    kkt_residuals: tuple
    status: str  # optimal | infeasible | max_iter
    iterations: int = 0
    value: float = np.nan
    active_lower: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    active_upper: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    active_budget: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    infeasibility_reason: str = ""


class QpFactorCache:
    """Factorizations reused across solves that share everything but the
    linear term and the equality right-hand side (receding-horizon use)."""

    def __init__(self, H, budget_groups, E=None):
        H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
        m = H.shape[0]
        self.m = m
        G = 2.0 * H
        self.cho = cho_factor(G, lower=True)
        self.K = cho_solve(self.cho, np.eye(m))
        self.K = 0.5 * (self.K + self.K.T)
        self.Kdiag = np.diag(self.K).copy()
        self.groups = [np.asarray(idx, dtype=int) for idx, _ in budget_groups]
        self.Ka = [self.K[:, idx].sum(axis=1) for idx in self.groups]
        self.sigma_g = [float(ka[idx].sum()) for ka, idx in zip(self.Ka, self.groups)]
        self.E = None
        if E is not None and len(E):
            E = np.atleast_2d(np.asarray(E, dtype=float))
            self.E = E
            self.KEt = self.K @ E.T  # m x k_eq
            S_eq = E @ self.KEt
            self.R_eq = cholesky(0.5 * (S_eq + S_eq.T), lower=False)
            self.EKa = [E @ ka for ka in self.Ka]


def _group_sums(z, groups):
    return np.array([z[idx].sum() for idx in groups])


def kkt_residual(p, s):
    """Stationarity, primal and complementarity residuals of a candidate
    solution. Pure function of (problem, solution), independent of how the
    solution was obtained."""
    z = s.z_star
    grad = 2.0 * p.H @ z + p.c - s.nu2 + s.nu3
    for (idx, _), nu in zip(p.budget_groups, s.nu1):
        grad[idx] += nu
    primal = 0.0
    comp = 0.0
    if p.equalities is not None:
        E, f = p.equalities
        grad += E.T @ s.xi
        primal = max(primal, float(np.max(np.abs(E @ z - f), initial=0.0)))
    stationarity = float(np.max(np.abs(grad), initial=0.0))
    primal = max(primal, float(np.max(p.lo - z, initial=0.0)))
    primal = max(primal, float(np.max(z - p.hi, initial=0.0)))
    for (idx, beta), nu in zip(p.budget_groups, s.nu1):
        slack = beta - z[idx].sum()
        primal = max(primal, -slack)
        comp = max(comp, abs(nu * slack))
    comp = max(comp, float(np.max(np.abs(s.nu2 * (z - p.lo)), initial=0.0)))
    comp = max(comp, float(np.max(np.abs(s.nu3 * (p.hi - z)), initial=0.0)))
    return stationarity, max(primal, 0.0), comp


def _infeasible(reason, iterations=0):
    return QpSolution(
        z_star=np.array([]),
        nu1=np.array([]),
        nu2=np.array([]),
        nu3=np.array([]),
        xi=None,
        kkt_residuals=(np.inf, np.inf, np.inf),
        status="infeasible",
        iterations=iterations,
        infeasibility_reason=reason,
    )


_KIND_LO, _KIND_HI, _KIND_BG = 0, 1, 2
_KIND_NAME = {"lo": _KIND_LO, "hi": _KIND_HI, "bg": _KIND_BG}
_NAME_KIND = {v: k for k, v in _KIND_NAME.items()}


class _ActiveSet:
    """Incrementally maintained working set.

    Keeps U = K N' (one column per active constraint) and the upper Cholesky
    factor R of S = N K N', where N stacks the active constraint normals
    (equality rows first, then one row per active inequality). Inequalities
    are described by parallel arrays: a kind code, the variable or group
    index, and the sign the variable carries in the normal (0 for budgets).
    """

    def __init__(self, cache, n_groups):
        m = cache.m
        k_eq = 0 if cache.E is None else cache.E.shape[0]
        cap = k_eq + 2 * m + n_groups + 1
        self.cache = cache
        self.k_eq = k_eq
        self.k = k_eq
        self.U = np.zeros((m, cap))
        self.R = np.zeros((cap, cap))
        self.lam = np.zeros(cap)
        self.kind = np.zeros(cap, dtype=np.int8)
        self.pos = np.zeros(cap, dtype=np.int64)
        self.sign = np.zeros(cap)  # -1 lower, +1 upper, 0 budget
        if k_eq:
            self.U[:, :k_eq] = cache.KEt
            self.R[:k_eq, :k_eq] = cache.R_eq

    def names(self):
        return [
            (_NAME_KIND[int(self.kind[j])], int(self.pos[j]))
            for j in range(self.k_eq, self.k)
        ]

    def ineq_rows_dot(self, vec):
        """n_j' vec for every active inequality in one vectorized pass."""
        k_eq, k = self.k_eq, self.k
        out = self.sign[k_eq:k] * vec[self.pos[k_eq:k]]
        bg = np.flatnonzero(self.kind[k_eq:k] == _KIND_BG)
        for j in bg:
            out[j] = vec[self.cache.groups[self.pos[k_eq + j]]].sum()
        return out

    def assemble_s(self, u_p, eq_part):
        s = np.empty(self.k)
        s[: self.k_eq] = eq_part
        s[self.k_eq :] = self.ineq_rows_dot(u_p)
        return s

    def add(self, kind, pos, u_p, w, rho, lam_new):
        k = self.k
        self.U[:, k] = u_p
        self.R[:k, k] = w
        self.R[k, k] = rho
        self.lam[k] = lam_new
        code = _KIND_NAME[kind]
        self.kind[k] = code
        self.pos[k] = pos
        self.sign[k] = -1.0 if code == _KIND_LO else (1.0 if code == _KIND_HI else 0.0)
        self.k += 1

    def set_block(self, kinds, poss, signs, N_u, R, lam):
        """Install a whole working set at once (warm starts)."""
        k_eq = self.k_eq
        k = k_eq + len(poss)
        self.U[:, k_eq:k] = N_u
        self.R[:k, :k] = R
        self.lam[:k] = lam
        self.kind[k_eq:k] = kinds
        self.pos[k_eq:k] = poss
        self.sign[k_eq:k] = signs
        self.k = k

    def drop(self, j):
        """Remove active constraint j (absolute index, >= k_eq) and restore
        the triangularity of R with Givens rotations."""
        k = self.k
        self.U[:, j : k - 1] = self.U[:, j + 1 : k]
        self.R[:, j : k - 1] = self.R[:, j + 1 : k]
        self.lam[j : k - 1] = self.lam[j + 1 : k]
        self.kind[j : k - 1] = self.kind[j + 1 : k]
        self.pos[j : k - 1] = self.pos[j + 1 : k]
        self.sign[j : k - 1] = self.sign[j + 1 : k]
        self.k = k - 1
        _retriangularize(self.R, j, self.k)


def _prepare(p, cache):
    if cache is None:
        E = p.equalities[0] if p.equalities is not None else None
        cache = QpFactorCache(p.H, p.budget_groups, E)
    return cache


def solve_qp(p, cache=None, warm=None, max_iter=MAX_ITER):
    """Solve the QP, returning a solution with certified KKT residuals.

    `cache` may carry factorizations from a previous problem with identical
    H, budget groups and equality matrix. `warm` is an optional list of
    (kind, pos) pairs naming inequality constraints to seed the working set
    with (previous solve's active set in receding-horizon loops).
    """
    m = p.m
    # closed-form infeasibility checks for the box/budget pattern
    if np.any(p.lo > p.hi + FEAS_TOL):
        return _infeasible("box bounds conflict: lo > hi")
    for gi, (idx, beta) in enumerate(p.budget_groups):
        lo_sum = p.lo[idx].sum()
        if lo_sum > beta + FEAS_TOL:
            return _infeasible(
                f"budget group {gi} infeasible: lower bounds sum to "
                f"{lo_sum:.6g} > beta = {beta:.6g}"
            )
    cache = _prepare(p, cache)
    groups = cache.groups
    n_groups = len(groups)
    betas = np.array([b for _, b in p.budget_groups])

    act = _ActiveSet(cache, n_groups)
    k_eq = act.k_eq

    # unconstrained minimum, then equality block in one shot
    Kc = cache.K @ p.c
    z = -Kc
    if k_eq:
        _, f = p.equalities
        resid = cache.E @ z - f
        w_eq = solve_triangular(cache.R_eq.T, resid, lower=True, check_finite=False)
        xi = solve_triangular(cache.R_eq, w_eq, lower=False, check_finite=False)
        z = z - cache.KEt @ xi
        act.lam[:k_eq] = xi

    lower_active = np.zeros(m, dtype=bool)
    upper_active = np.zeros(m, dtype=bool)
    budget_active = np.zeros(max(n_groups, 1), dtype=bool)

    def seed_names():
        if warm is None:
            return []
        valid = []
        for kind, pos in warm:
            if kind in ("lo", "hi") and 0 <= pos < m:
                valid.append((kind, pos))
            elif kind == "bg" and 0 <= pos < n_groups:
                valid.append((kind, pos))
        return valid

    def u_of(kind, pos):
        if kind == "lo":
            return -cache.K[:, pos]
        if kind == "hi":
            return cache.K[:, pos].copy()
        return cache.Ka[pos]

    def eq_part_of(kind, pos):
        if k_eq == 0:
            return np.empty(0)
        if kind == "lo":
            return -cache.KEt[pos]
        if kind == "hi":
            return cache.KEt[pos]
        return cache.EKa[pos]

    def sigma_of(kind, pos):
        if kind == "bg":
            return cache.sigma_g[pos]
        return cache.Kdiag[pos]

    def mark(kind, pos, value):
        if kind == "lo":
            lower_active[pos] = value
        elif kind == "hi":
            upper_active[pos] = value
        else:
            budget_active[pos] = value

    def batch_refresh(names):
        """Rebuild z, multipliers and factors for a given working set in one
        shot (warm starts). Returns None if the set is degenerate."""
        act.k = k_eq
        lower_active[:] = upper_active[:] = False
        budget_active[:] = False
        n_act = len(names)
        kinds = np.array([_KIND_NAME[kind] for kind, _ in names], dtype=np.int8)
        poss = np.array([pos for _, pos in names], dtype=np.int64)
        signs = np.where(kinds == _KIND_LO, -1.0, 1.0)
        signs[kinds == _KIND_BG] = 0.0
        k = k_eq + n_act
        N_u = np.empty((m, n_act))
        box = kinds != _KIND_BG
        if box.any():
            N_u[:, box] = cache.K[:, poss[box]] * signs[box]
        for j in np.flatnonzero(~box):
            N_u[:, j] = cache.Ka[poss[j]]
        S = np.empty((k, k))
        b = np.empty(k)
        nKc = np.empty(k)
        if k_eq:
            _, f = p.equalities
            S[:k_eq, :k_eq] = cache.E @ cache.KEt
            S[:k_eq, k_eq:] = cache.E @ N_u
            S[k_eq:, :k_eq] = S[:k_eq, k_eq:].T
            b[:k_eq] = f
            nKc[:k_eq] = cache.E @ Kc
        # inequality-vs-inequality block: n_i' u_j by row kind
        Sii = np.empty((n_act, n_act))
        if box.any():
            Sii[box] = signs[box, None] * N_u[poss[box], :]
        for j in np.flatnonzero(~box):
            Sii[j] = N_u[groups[poss[j]], :].sum(axis=0)
        S[k_eq:, k_eq:] = Sii
        b_ineq = np.where(signs < 0, -p.lo[poss], p.hi[poss])
        nKc_ineq = signs * Kc[poss]
        for j in np.flatnonzero(~box):
            b_ineq[j] = betas[poss[j]]
            nKc_ineq[j] = Kc[groups[poss[j]]].sum()
        b[k_eq:] = b_ineq
        nKc[k_eq:] = nKc_ineq
        try:
            R = cholesky(0.5 * (S + S.T), lower=False)
        except np.linalg.LinAlgError:
            return None
        lam = cho_solve((R, False), -(nKc + b))
        z_new = -(Kc + (cache.KEt @ lam[:k_eq] if k_eq else 0.0))
        if n_act:
            z_new = z_new - N_u @ lam[k_eq:]
        act.set_block(kinds, poss, signs, N_u, R, lam)
        for kind, pos in names:
            mark(kind, pos, True)
        return z_new

    warm_names = seed_names()
    if warm_names:
        z_try = batch_refresh(warm_names)
        rounds = 0
        while z_try is not None and rounds < 4:
            lam_ineq = act.lam[k_eq : act.k]
            if lam_ineq.size == 0 or lam_ineq.min() >= 0.0:
                break
            keep = [
                name
                for name, lam_j in zip(warm_names, lam_ineq)
                if lam_j >= 0.0
            ]
            warm_names = keep
            z_try = batch_refresh(warm_names)
            rounds += 1
        if z_try is None or (
            act.k > k_eq and act.lam[k_eq : act.k].min() < 0.0
        ):
            # degenerate warm set: fall back to a cold start
            z_try = batch_refresh([])
            if z_try is None:
                return _infeasible("equality block is degenerate")
        z = z_try

    iterations = 0
    while iterations < max_iter:
        iterations += 1
        # most violated inactive constraint
        viol_lo = p.lo - z
        viol_lo[lower_active] = -np.inf
        viol_hi = z - p.hi
        viol_hi[upper_active] = -np.inf
        best_kind, best_pos, best_v = None, -1, _ADD_TOL
        i = int(np.argmax(viol_lo))
        if viol_lo[i] > best_v:
            best_kind, best_pos, best_v = "lo", i, viol_lo[i]
        i = int(np.argmax(viol_hi))
        if viol_hi[i] > best_v:
            best_kind, best_pos, best_v = "hi", i, viol_hi[i]
        for gi in range(n_groups):
            if budget_active[gi]:
                continue
            v = z[groups[gi]].sum() - betas[gi]
            if v > best_v:
                best_kind, best_pos, best_v = "bg", gi, v
        if best_kind is None:
            break  # primal feasible and dual feasible: optimal

        kind, pos = best_kind, best_pos
        u_p = u_of(kind, pos)
        eq_part = eq_part_of(kind, pos)
        sigma_pp = sigma_of(kind, pos)
        nu_acc = 0.0

        while True:
            iterations += 1
            if iterations >= max_iter:
                break
            k = act.k
            if k:
                s = act.assemble_s(u_p, eq_part)
                w = np.empty(k)
                r = np.empty(k)
                _tri_solves(act.R, k, s, w, r)
                kappa = sigma_pp - float(w @ w)
                z_dir = u_p - act.U[:, :k] @ r
            else:
                s = w = r = np.empty(0)
                kappa = sigma_pp
                z_dir = u_p

            if kind == "lo":
                v_p = p.lo[pos] - z[pos]
            elif kind == "hi":
                v_p = z[pos] - p.hi[pos]
            else:
                v_p = z[groups[pos]].sum() - betas[pos]
            if v_p <= _ADD_TOL:
                break  # became satisfied through dual steps

            kappa_ok = kappa > _DEP_TOL * max(1.0, sigma_pp)
            t2 = v_p / kappa if kappa_ok else np.inf
            t1 = np.inf
            j_block = -1
            if k > k_eq:
                r_ineq = r[k_eq:]
                lam_ineq = act.lam[k_eq:k]
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratios = np.where(r_ineq > 1e-13, lam_ineq / r_ineq, np.inf)
                j_rel = int(np.argmin(ratios))
                if ratios[j_rel] < np.inf:
                    t1 = float(ratios[j_rel])
                    j_block = k_eq + j_rel
            if not np.isfinite(t1) and not np.isfinite(t2):
                return _infeasible(
                    f"constraint ({kind}, {pos}) cannot be satisfied together "
                    "with the current working set (box/budget/equality conflict)",
                    iterations,
                )
            t = min(t1, t2)
            if t > 0.0:
                z = z - t * z_dir
                act.lam[:k] -= t * r
                nu_acc += t
            if t2 <= t1:
                rho = float(np.sqrt(max(kappa, 0.0)))
                act.add(kind, pos, u_p, w, rho, nu_acc)
                mark(kind, pos, True)
                break
            dropped = (_NAME_KIND[int(act.kind[j_block])], int(act.pos[j_block]))
            act.drop(j_block)
            mark(*dropped, False)

    status = "optimal" if iterations < max_iter else "max_iter"

    nu1 = np.zeros(n_groups)
    nu2 = np.zeros(m)
    nu3 = np.zeros(m)
    for j in range(k_eq, act.k):
        lam_j = max(act.lam[j], 0.0)
        code, pos = int(act.kind[j]), int(act.pos[j])
        if code == _KIND_LO:
            nu2[pos] = lam_j
        elif code == _KIND_HI:
            nu3[pos] = lam_j
        else:
            nu1[pos] = lam_j
    xi = act.lam[:k_eq].copy() if k_eq else None

    sol = QpSolution(
        z_star=z,
        nu1=nu1,
        nu2=nu2,
        nu3=nu3,
        xi=xi,
        kkt_residuals=(np.inf, np.inf, np.inf),
        status=status,
        iterations=iterations,
        active_lower=np.flatnonzero(lower_active),
        active_upper=np.flatnonzero(upper_active),
        active_budget=np.flatnonzero(budget_active),
    )
    sol.kkt_residuals = kkt_residual(p, sol)
    if status == "optimal" and max(sol.kkt_residuals) > KKT_TOL:
        _polish(p, cache, act, sol)
    sol.value = float(sol.z_star @ (p.H @ sol.z_star) + p.c @ sol.z_star)
    if status == "optimal" and max(sol.kkt_residuals) > KKT_TOL:
        sol.status = "max_iter"
    return sol


def _polish(p, cache, act, sol):
    """Recompute (z, multipliers) from the final working set with one fresh
    factorization, removing drift from the incremental updates. Updates the
    solution in place when the polished point is at least as clean."""
    k, k_eq = act.k, act.k_eq
    Kc = cache.K @ p.c
    if k == 0:
        z = -Kc
        resid = kkt_residual(
            p,
            QpSolution(
                z_star=z,
                nu1=sol.nu1 * 0,
                nu2=sol.nu2 * 0,
                nu3=sol.nu3 * 0,
                xi=None,
                kkt_residuals=(0, 0, 0),
                status="optimal",
            ),
        )
        if max(resid) <= max(sol.kkt_residuals):
            sol.z_star = z
            sol.kkt_residuals = resid
        return
    U = act.U[:, :k]
    # S = N K N' = N U, assembled row kind by row kind
    S = np.empty((k, k))
    b = np.empty(k)
    nKc = np.empty(k)
    if k_eq:
        _, f = p.equalities
        S[:k_eq] = cache.E @ U
        b[:k_eq] = f
        nKc[:k_eq] = cache.E @ Kc
    kinds = act.kind[k_eq:k]
    poss = act.pos[k_eq:k]
    signs = act.sign[k_eq:k]
    box = kinds != _KIND_BG
    rows = np.arange(k_eq, k)
    if box.any():
        S[rows[box]] = signs[box, None] * U[poss[box], :]
        b[rows[box]] = np.where(signs[box] < 0, -p.lo[poss[box]], p.hi[poss[box]])
        nKc[rows[box]] = signs[box] * Kc[poss[box]]
    for j in np.flatnonzero(~box):
        idx = cache.groups[poss[j]]
        S[k_eq + j] = U[idx].sum(axis=0)
        b[k_eq + j] = p.budget_groups[poss[j]][1]
        nKc[k_eq + j] = Kc[idx].sum()
    try:
        fac = cho_factor(0.5 * (S + S.T), lower=True)
    except np.linalg.LinAlgError:
        return
    lam = cho_solve(fac, -(nKc + b))
    z = -Kc - U @ lam
    nu1 = np.zeros_like(sol.nu1)
    nu2 = np.zeros_like(sol.nu2)
    nu3 = np.zeros_like(sol.nu3)
    for j in range(k - k_eq):
        lam_j = max(lam[k_eq + j], 0.0)
        code, pos = int(kinds[j]), int(poss[j])
        if code == _KIND_LO:
            nu2[pos] = lam_j
        elif code == _KIND_HI:
            nu3[pos] = lam_j
        else:
            nu1[pos] = lam_j
    candidate = QpSolution(
        z_star=z,
        nu1=nu1,
        nu2=nu2,
        nu3=nu3,
        xi=lam[:k_eq].copy() if k_eq else None,
        kkt_residuals=(0, 0, 0),
        status="optimal",
    )
    resid = kkt_residual(p, candidate)
    if max(resid) <= max(sol.kkt_residuals):
        sol.z_star = z
        sol.nu1, sol.nu2, sol.nu3, sol.xi = nu1, nu2, nu3, candidate.xi
        sol.kkt_residuals = resid


def solve_qp_bruteforce(p, grid):
    """Best feasible point of the objective on a per-axis grid.

    Test oracle for m <= 4 variables: exhaustively scans the box grid,
    filters by budget/equality feasibility and returns the best feasible
    point, or None when no grid point is feasible.
    """
    m = p.m
    if m > 4:
        raise ValueError("brute force limited to m <= 4")
    if grid > 200:
        raise ValueError("grid limited to 200 points per axis")
    axes = [np.linspace(p.lo[i], p.hi[i], grid) for i in range(m)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([g.ravel() for g in mesh], axis=1)
    feasible = np.ones(Z.shape[0], dtype=bool)
    for idx, beta in p.budget_groups:
        feasible &= Z[:, idx].sum(axis=1) <= beta + FEAS_TOL
    if p.equalities is not None:
        E, f = p.equalities
        # a grid step of slack on each equality row, else nothing matches
        step = np.array(
            [(p.hi[i] - p.lo[i]) / max(grid - 1, 1) for i in range(m)]
        )
        slack = np.abs(E) @ step + FEAS_TOL
        feasible &= np.all(np.abs(Z @ E.T - f) <= slack, axis=1)
    if not feasible.any():
        return None
    Zf = Z[feasible]
    vals = np.einsum("ij,jk,ik->i", Zf, p.H, Zf) + Zf @ p.c
    return Zf[int(np.argmin(vals))]
