"""Social-network substrate: clustered random digraphs, row-stochastic
influence matrices, and the influence-reachability condition required for
stable expected dynamics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SocialNetwork:
    """Immutable network plus model parameters.

    P is the row-stochastic influence matrix, lam the per-node weight of the
    social term versus the external one, alpha the per-step probability that
    social imitation (rather than an identity update) drives the step, eta0
    the constant individual biases and sigma the noise standard deviations.
    """

    n: int
    P: np.ndarray
    lam: np.ndarray
    alpha: float
    eta0: np.ndarray
    sigma: np.ndarray
    clusters: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        eta0 = np.asarray(self.eta0, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "eta0", eta0)
        object.__setattr__(self, "sigma", sigma)
        if self.n < 3:
            raise ValueError("network needs at least 3 nodes")
        if P.shape != (self.n, self.n):
            raise ValueError(f"P must be {self.n}x{self.n}, got {P.shape}")
        if np.any(P < 0):
            raise ValueError("P entries must be nonnegative")
        row_err = np.max(np.abs(P.sum(axis=1) - 1.0))
        if row_err > ROW_SUM_TOL:
            raise ValueError(f"P rows must sum to 1 (error {row_err:.3e})")
        for name, vec in (("lam", lam), ("eta0", eta0)):
            if vec.shape != (self.n,):
                raise ValueError(f"{name} must have length {self.n}")
            if np.any(vec < 0) or np.any(vec > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if sigma.shape != (self.n,) or np.any(sigma < 0):
            raise ValueError("sigma must be a nonnegative length-n vector")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.clusters is not None:
            clusters = np.asarray(self.clusters, dtype=int)
            if clusters.shape != (self.n,):
                raise ValueError("clusters must have length n")
            object.__setattr__(self, "clusters", clusters)


def cluster_sizes(n, n_clusters):
    """Equal-sized clusters with the remainder spread over the first ones."""
    base = n // n_clusters
    sizes = np.full(n_clusters, base, dtype=int)
    sizes[: n % n_clusters] += 1
    return sizes


def generate_modular_graph(n, n_clusters, density, gamma, seed):
    """Sample a clustered random digraph.

    The target edge count is density*n^2 (capped at n*(n-1): no self-loops).
    gamma is the inter-cluster connectivity: each edge lands across clusters
    with probability gamma and inside a cluster otherwise, so small gamma
    means strongly clustered graphs and large gamma well-mixed ones.

    Returns (adjacency, labels) where adjacency is an n x n boolean matrix
    and labels assigns each node a contiguous cluster id.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    if not 1 <= n_clusters <= n:
        raise ValueError("need 1 <= n_clusters <= n")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")

    sizes = cluster_sizes(n, n_clusters)
    labels = np.repeat(np.arange(n_clusters), sizes)
    rng = np.random.default_rng(seed)

    rows, cols = np.divmod(np.arange(n * n), n)
    off_diag = rows != cols
    same = labels[rows] == labels[cols]
    intra_pool = np.flatnonzero(off_diag & same)
    inter_pool = np.flatnonzero(off_diag & ~same)

    m_total = min(int(round(density * n * n)), n * (n - 1))
    if n_clusters == 1:
        k_intra, k_inter = m_total, 0
    else:
        k_inter = int(rng.binomial(m_total, gamma))
        k_intra = m_total - k_inter
        if k_intra > intra_pool.size:
            raise ValueError(
                f"cluster capacity exceeded: {k_intra} intra-cluster edges "
                f"requested but only {intra_pool.size} slots exist"
            )
        if k_inter > inter_pool.size:
            raise ValueError(
                f"inter-cluster capacity exceeded: {k_inter} edges requested "
                f"but only {inter_pool.size} slots exist"
            )

    adjacency = np.zeros((n, n), dtype=bool)
    chosen = []
    if k_intra:
        chosen.append(rng.choice(intra_pool, size=k_intra, replace=False))
    if k_inter:
        chosen.append(rng.choice(inter_pool, size=k_inter, replace=False))
    if chosen:
        flat = np.concatenate(chosen)
        adjacency[flat // n, flat % n] = True
    return adjacency, labels


def row_normalize(adjacency):
    """Turn a nonnegative matrix into a row-stochastic one.

    Rows with positive sum are divided by it; all-zero rows fall back to a
    unit self-loop so the result is always row-stochastic.
    """
    A = np.asarray(adjacency, dtype=float)
    if np.any(A < 0):
        raise ValueError("adjacency entries must be nonnegative")
    sums = A.sum(axis=1)
    P = np.array(A, dtype=float)
    zero = sums == 0
    P[~zero] /= sums[~zero, None]
    for v in np.flatnonzero(zero):
        P[v, v] = 1.0
    return P


def check_influence_reachability(P, lam):
    """True iff every node has a directed path (along positive P entries) to
    some node whose lam is strictly below 1.

    Computed as reverse reachability from the seed set {s: lam_s < 1}.
    """
    P = np.asarray(P, dtype=float)
    lam = np.asarray(lam, dtype=float)
    n = P.shape[0]
    reached = lam < 1.0
    if not reached.any():
        return False
    adj = P > 0
    frontier = np.flatnonzero(reached)
    while frontier.size:
        # predecessors of the frontier: v with an edge v -> w, w reached
        preds = np.flatnonzero(adj[:, frontier].any(axis=1) & ~reached)
        reached[preds] = True
        frontier = preds
    return bool(reached.all())


# -- network file format ------------------------------------------------
#
# Plain text, one section per field:
#   n <int> / alpha <float> / P (n rows) / lambda / eta0 / sigma / clusters
# Floats use 17 significant digits so save -> load -> save is byte-exact.

_FMT = "%.17g"


def _fmt_row(values):
    return " ".join(_FMT % v for v in values)


def save_network(net, path):
    """Write a network to a structured text file (17 significant digits)."""
    lines = [f"n {net.n}", "alpha " + (_FMT % net.alpha), "P"]
    lines.extend(_fmt_row(row) for row in net.P)
    lines.append("lambda")
    lines.append(_fmt_row(net.lam))
    lines.append("eta0")
    lines.append(_fmt_row(net.eta0))
    lines.append("sigma")
    lines.append(_fmt_row(net.sigma))
    lines.append("clusters")
    if net.clusters is None:
        lines.append("none")
    else:
        lines.append(" ".join(str(c) for c in net.clusters))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path):
    """Load a network written by save_network."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("n "):
        raise ValueError(f"{path}: not a network file")
    n = int(lines[0].split()[1])
    alpha = float(lines[1].split()[1])
    idx = 2
    if lines[idx] != "P":
        raise ValueError(f"{path}: expected P section")
    idx += 1
    P = np.array([[float(x) for x in lines[idx + v].split()] for v in range(n)])
    idx += n

    def section(name):
        nonlocal idx
        if lines[idx] != name:
            raise ValueError(f"{path}: expected {name} section")
        idx += 1
        row = lines[idx]
        idx += 1
        return row

    lam = np.array([float(x) for x in section("lambda").split()])
    eta0 = np.array([float(x) for x in section("eta0").split()])
    sigma = np.array([float(x) for x in section("sigma").split()])
    raw = section("clusters")
    clusters = None if raw == "none" else np.array([int(x) for x in raw.split()])
    return SocialNetwork(
        n=n, P=P, lam=lam, alpha=alpha, eta0=eta0, sigma=sigma, clusters=clusters
    )
