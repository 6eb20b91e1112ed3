"""Monte Carlo experiment orchestration: matched-seed policy comparisons,
cost-benefit KPIs, parameter sweeps over the effort weight and the imitation
probability, and the topology study over the clustering parameter."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from nudgesim.dynamics import NoiseModel, simulate
from nudgesim.equilibrium import build_prediction_model, steady_state
from nudgesim.graph import (
    SocialNetwork,
    generate_modular_graph,
    load_network,
    row_normalize,
    save_network,
)
from nudgesim.policies import (
    MpcPolicy,
    check_inactive_conditions,
    diagonal_weights,
    mbccp_policy,
    mbccp_terms,
    mfccp_policy,
    mpc_setup,
    zero_policy,
)

POLICY_NAMES = ("none", "mfccp", "mbccp", "mpc")

# substream labels for deriving child seeds from the root seed
_SS_GRAPH, _SS_LAMBDA, _SS_INIT, _SS_RUN, _SS_TOPO = 0, 1, 2, 3, 4


@dataclass
class ExperimentConfig:
    """Flat experiment description; defaults reproduce the reference
    protocol (100 nodes, 7 clusters, budget 10, 20-step horizon)."""

    # network generation (ignored when net_file is set)
    n: int = 100
    clusters: int = 7
    density: float = 0.05
    gamma: float = 0.9
    lam: str | float = "uniform"
    sigma: float = 0.1
    alpha: float = 0.25
    net_file: str | None = None
    # initial condition; the bias vector doubles as the initial state
    favorable_count: int = 10
    favorable_level: float = 0.7
    unfavorable_low: float = 0.0
    unfavorable_high: float = 0.1
    # policy parameters
    beta: float = 10.0
    r: float = 1.0
    horizon: int = 5
    mode: str = "estimated"
    terminal: str = "hard"
    soft_rho: float = 1e3
    # sweep grid
    alphas: tuple = (0.25, 0.5, 0.75, 1.0)
    r_grid: tuple = (0.1, 0.25, 1.0, 2.5, 5.0)
    policies: tuple = POLICY_NAMES
    monte_carlo: int = 20
    t_sim: int = 20
    max_infeasible_rate: float = 1.0
    # topology study
    topo_gammas: tuple = (0.1, 0.5, 0.9)
    topo_graphs: int = 50
    topo_alphas: tuple = (0.25, 0.75)
    topo_lambda: float = 0.9
    topo_x0: float = 0.1
    topo_r: float = 1.0
    seed: int = 0

    _KEYMAP = {
        "net.n": ("n", int),
        "net.clusters": ("clusters", int),
        "net.density": ("density", float),
        "net.gamma": ("gamma", float),
        "net.lambda": ("lam", "lam"),
        "net.sigma": ("sigma", float),
        "net.alpha": ("alpha", float),
        "net.file": ("net_file", str),
        "init.favorable_count": ("favorable_count", int),
        "init.favorable_level": ("favorable_level", float),
        "init.unfavorable_low": ("unfavorable_low", float),
        "init.unfavorable_high": ("unfavorable_high", float),
        "policy.beta": ("beta", float),
        "policy.r": ("r", float),
        "policy.horizon": ("horizon", int),
        "policy.mode": ("mode", str),
        "policy.terminal": ("terminal", str),
        "policy.soft_rho": ("soft_rho", float),
        "sweep.alphas": ("alphas", "floats"),
        "sweep.r_grid": ("r_grid", "floats"),
        "sweep.policies": ("policies", "strs"),
        "sweep.monte_carlo": ("monte_carlo", int),
        "sweep.t_sim": ("t_sim", int),
        "sweep.max_infeasible_rate": ("max_infeasible_rate", float),
        "topology.gammas": ("topo_gammas", "floats"),
        "topology.graphs_per_gamma": ("topo_graphs", int),
        "topology.alphas": ("topo_alphas", "floats"),
        "topology.lambda": ("topo_lambda", float),
        "topology.x0": ("topo_x0", float),
        "topology.r": ("topo_r", float),
        "seed": ("seed", int),
    }

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in cls._KEYMAP:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                attr, kind = cls._KEYMAP[key]
                if kind == "floats":
                    parsed = tuple(float(v) for v in value.split(","))
                elif kind == "strs":
                    parsed = tuple(v.strip() for v in value.split(","))
                elif kind == "lam":
                    parsed = value if value == "uniform" else float(value)
                else:
                    parsed = kind(value)
                setattr(cfg, attr, parsed)
        cfg.validate()
        return cfg

    def validate(self):
        if self.t_sim < 1:
            raise ValueError("sweep.t_sim must be at least 1")
        if any(r <= 0 for r in self.r_grid) or self.r <= 0:
            raise ValueError("effort weights r must be positive")
        if self.monte_carlo < 1:
            raise ValueError("sweep.monte_carlo must be at least 1")
        if self.favorable_count > self.n:
            raise ValueError("init.favorable_count exceeds the node count")
        unknown = set(self.policies) - set(POLICY_NAMES)
        if unknown:
            raise ValueError(f"unknown policies: {sorted(unknown)}")
        if self.mode not in ("oracle", "estimated"):
            raise ValueError("policy.mode must be oracle or estimated")
        if self.terminal not in ("hard", "soft"):
            raise ValueError("policy.terminal must be hard or soft")


def _child_seed(root, *key):
    ss = np.random.SeedSequence(root, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


def init_population(n, favorable_count, favorable_level, low, high, seed):
    """Initial inclinations: a favorably inclined subset at a fixed level,
    everyone else uniform on the unfavorable interval."""
    if favorable_count > n:
        raise ValueError("favorable subset larger than the population")
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(low, high, n)
    favorable = rng.choice(n, favorable_count, replace=False)
    x0[favorable] = favorable_level
    return x0


def build_network(cfg):
    """Generate (or load) the experiment network. The initial-condition
    vector doubles as the bias vector, following the anchoring-to-initial-
    opinion convention of this model family."""
    if cfg.net_file:
        return load_network(cfg.net_file)
    adjacency, labels = generate_modular_graph(
        cfg.n, cfg.clusters, cfg.density, cfg.gamma,
        seed=_child_seed(cfg.seed, _SS_GRAPH),
    )
    P = row_normalize(adjacency)
    if cfg.lam == "uniform":
        lam = np.random.default_rng(
            _child_seed(cfg.seed, _SS_LAMBDA)
        ).uniform(0, 1, cfg.n)
    else:
        lam = np.full(cfg.n, float(cfg.lam))
    eta0 = init_population(
        cfg.n,
        cfg.favorable_count,
        cfg.favorable_level,
        cfg.unfavorable_low,
        cfg.unfavorable_high,
        seed=_child_seed(cfg.seed, _SS_INIT),
    )
    return SocialNetwork(
        n=cfg.n,
        P=P,
        lam=lam,
        alpha=cfg.alpha,
        eta0=eta0,
        sigma=np.full(cfg.n, cfg.sigma),
        clusters=labels,
    )


def social_cost(trajectories, t_sim=None):
    """Cumulative squared acceptance shortfall, averaged over runs."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    vals = []
    for traj in trajectories:
        T = traj.T if t_sim is None else min(t_sim, traj.T)
        vals.append(float(((1 - traj.ys[:T]) ** 2).sum()))
    return float(np.mean(vals))


def control_cost(trajectory, t_sim=None):
    """Cumulative squared input effort of one run."""
    T = trajectory.T if t_sim is None else min(t_sim, trajectory.T)
    return float((trajectory.us[:T] ** 2).sum())


def relative_improvement(gamma_policy, gamma_open_loop):
    """|Gamma_policy - Gamma_open_loop| / Gamma_open_loop."""
    if gamma_open_loop == 0:
        raise ValueError("open-loop social cost is zero")
    return abs(gamma_policy - gamma_open_loop) / gamma_open_loop


def stream_checksum(sigma, seed, T):
    """Fingerprint of the noise and imitation substreams of a run seed;
    equal checksums certify matched randomness across policy runs."""
    noise = NoiseModel(sigma, seed)
    from nudgesim.dynamics import ImitationStream

    imit = ImitationStream(0.5, seed)
    h = hashlib.sha256()
    for t in range(T):
        h.update(noise.sample(t).tobytes())
        h.update(b"\x01" if imit.sample(t) else b"\x00")
    return h.hexdigest()


@dataclass
class KpiReport:
    """Aggregated sweep results: one cell per (policy, alpha, r)."""

    cells: list = field(default_factory=list)
    runs: list = field(default_factory=list)
    out_dir: str | None = None

    def cell(self, policy, alpha, r):
        for row in self.cells:
            if (
                row["policy"] == policy
                and row["alpha"] == alpha
                and row["r"] == r
            ):
                return row
        raise KeyError((policy, alpha, r))


def _run_cell(net, cfg, alpha, a_idx, r, r_idx, trajectories_dir=None):
    """All Monte Carlo runs of every policy for one (alpha, r) cell."""
    net_a = replace(net, alpha=alpha)
    weights = diagonal_weights(net.n, r=r, beta=cfg.beta)
    x0 = net.eta0
    handles = {}
    if "none" in cfg.policies:
        handles["none"] = zero_policy(net.n)
    if "mfccp" in cfg.policies:
        handles["mfccp"] = mfccp_policy(net_a, cfg.beta)
    if "mbccp" in cfg.policies:
        handles["mbccp"] = mbccp_policy(net_a, weights)
    ctrl = None
    if "mpc" in cfg.policies:
        ctrl = mpc_setup(
            net_a,
            weights,
            T=cfg.horizon,
            mode=cfg.mode,
            terminal_mode=cfg.terminal,
            soft_rho=cfg.soft_rho,
            soft_fallback=cfg.terminal == "hard",
        )
    rows = []
    gammas = {name: [] for name in handles}
    if ctrl is not None:
        gammas["mpc"] = []
    for j in range(cfg.monte_carlo):
        seed = _child_seed(cfg.seed, _SS_RUN, a_idx, r_idx, j)
        for name, policy in handles.items():
            traj = simulate(net_a, policy, T=cfg.t_sim, seed=seed, x0=x0)
            rows.append(_run_row(name, alpha, r, seed, traj, cfg, trajectories_dir))
            gammas[name].append(rows[-1]["gamma_social"])
        if ctrl is not None:
            ctrl.reset(keep_skip_hard=True)
            traj = simulate(net_a, MpcPolicy(ctrl), T=cfg.t_sim, seed=seed, x0=x0)
            rows.append(_run_row("mpc", alpha, r, seed, traj, cfg, trajectories_dir))
            gammas["mpc"].append(rows[-1]["gamma_social"])
            if trajectories_dir is not None:
                _write_controller_diag(ctrl, alpha, r, seed, trajectories_dir)
    cells = []
    for name, vals in gammas.items():
        vals = np.array(vals)
        du = np.array(
            [row["delta_u"] for row in rows if row["policy"] == name]
        )
        infeasible = sum(
            row["infeasible_steps"] for row in rows if row["policy"] == name
        )
        clip = np.mean([row["clip_rate"] for row in rows if row["policy"] == name])
        welch_p = np.nan
        if name != "none" and "none" in gammas and len(gammas["none"]) >= 2:
            baseline = np.array(gammas["none"])
            if baseline.std() > 0 or vals.std() > 0:
                welch_p = float(
                    stats.ttest_ind(
                        baseline, vals, equal_var=False, alternative="greater"
                    ).pvalue
                )
        rate = infeasible / max(cfg.monte_carlo * cfg.t_sim, 1)
        cells.append(
            {
                "policy": name,
                "alpha": alpha,
                "r": r,
                "n_runs": len(vals),
                "gamma_mean": float(vals.mean()),
                "gamma_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                "du_mean": float(du.mean()),
                "du_std": float(du.std(ddof=1)) if len(du) > 1 else 0.0,
                "clip_rate_mean": float(clip),
                "infeasible_steps_total": int(infeasible),
                "welch_p_vs_none": welch_p,
                "status": "aborted"
                if name == "mpc" and rate > cfg.max_infeasible_rate
                else "ok",
            }
        )
    return rows, cells


def _write_controller_diag(ctrl, alpha, r, seed, out_dir):
    """Per-run controller report: optimal cost sequence, active-set sizes
    and terminal-fallback flags, one row per step."""
    path = os.path.join(out_dir, f"run_mpc_a{alpha:g}_r{r:g}_s{seed}_diag.csv")
    with open(path, "w") as fh:
        fh.write("t,j_star,n_active,fallback\n")
        for t, (cost, n_act, fb) in enumerate(
            zip(ctrl.cost_history, ctrl.active_counts, ctrl.fallback_steps)
        ):
            fh.write("%d,%.17g,%d,%d\n" % (t, cost, n_act, int(fb)))


def _run_row(policy, alpha, r, seed, traj, cfg, trajectories_dir):
    if trajectories_dir is not None:
        from nudgesim.dynamics import save_trajectory_csv

        fname = f"run_{policy}_a{alpha:g}_r{r:g}_s{seed}.csv"
        save_trajectory_csv(traj, os.path.join(trajectories_dir, fname))
    return {
        "policy": policy,
        "alpha": alpha,
        "r": r,
        "seed": seed,
        "gamma_social": float(((1 - traj.ys) ** 2).sum()),
        "delta_u": float((traj.us**2).sum()),
        "clip_rate": traj.clip_events / (traj.T * traj.xs.shape[1]),
        "infeasible_steps": traj.infeasible_steps,
    }


_RUNS_COLUMNS = (
    "policy",
    "alpha",
    "r",
    "seed",
    "gamma_social",
    "delta_u",
    "clip_rate",
    "infeasible_steps",
)
_AGG_COLUMNS = (
    "policy",
    "alpha",
    "r",
    "n_runs",
    "gamma_mean",
    "gamma_std",
    "du_mean",
    "du_std",
    "clip_rate_mean",
    "infeasible_steps_total",
    "welch_p_vs_none",
    "status",
)


def _write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for col in columns:
                v = row[col]
                if isinstance(v, float):
                    cells.append("%.17g" % v)
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def run_sweep(cfg, out_dir, jobs=1, trajectories=False):
    """Matched-seed policy comparison over the (alpha, r) grid.

    Writes runs.csv (one row per run), aggregate.csv (cell statistics),
    network.txt and diagnostics.txt into out_dir; returns the KpiReport.
    """
    os.makedirs(out_dir, exist_ok=True)
    net = build_network(cfg)
    save_network(net, os.path.join(out_dir, "network.txt"))
    trajectories_dir = None
    if trajectories:
        trajectories_dir = os.path.join(out_dir, "trajectories")
        os.makedirs(trajectories_dir, exist_ok=True)

    cell_args = [
        (alpha, a_idx, r, r_idx)
        for a_idx, alpha in enumerate(cfg.alphas)
        for r_idx, r in enumerate(cfg.r_grid)
    ]
    report = KpiReport(out_dir=out_dir)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_cell, net, cfg, alpha, a_idx, r, r_idx,
                            trajectories_dir)
                for alpha, a_idx, r, r_idx in cell_args
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _run_cell(net, cfg, alpha, a_idx, r, r_idx, trajectories_dir)
            for alpha, a_idx, r, r_idx in cell_args
        ]
    for rows, cells in results:
        report.runs.extend(rows)
        report.cells.extend(cells)

    _write_csv(os.path.join(out_dir, "runs.csv"), _RUNS_COLUMNS, report.runs)
    _write_csv(os.path.join(out_dir, "aggregate.csv"), _AGG_COLUMNS, report.cells)
    _write_diagnostics(cfg, net, os.path.join(out_dir, "diagnostics.txt"))
    return report


def _write_diagnostics(cfg, net, path):
    lines = [f"root_seed {cfg.seed}"]
    for alpha in cfg.alphas:
        net_a = replace(net, alpha=alpha)
        try:
            model = build_prediction_model(net_a)
        except Exception as exc:  # noqa: BLE001 - diagnostic report
            lines.append(f"alpha {alpha:g}: model unavailable ({exc})")
            continue
        x_star = steady_state(model, net.eta0)
        weights = diagonal_weights(net.n, r=cfg.r, beta=cfg.beta)
        terms = mbccp_terms(net_a, weights, model=model)
        inactive = check_inactive_conditions(terms, cfg.beta)
        lines.append(
            f"alpha {alpha:g}: spectral_radius {model.spectral_radius:.6f} "
            f"x_star_mean {x_star.mean():.6f} constraints_inactive {inactive}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


_TOPO_COLUMNS = (
    "gamma",
    "alpha",
    "graph_index",
    "seed",
    "gamma_social_ol",
    "gamma_social_mpc",
    "delta_gamma",
)


def run_topology_study(cfg, out_dir, jobs=1):
    """Relative social-cost improvement of the receding-horizon policy over
    free evolution, across inter-cluster connectivity levels.

    Homogeneous population (common social weight, common initial level) so
    topology is the only varying factor; one matched-seed pair of runs per
    sampled graph. Writes topology.csv; returns the row list.
    """
    os.makedirs(out_dir, exist_ok=True)
    tasks = [
        (g_idx, gamma, graph_idx)
        for g_idx, gamma in enumerate(cfg.topo_gammas)
        for graph_idx in range(cfg.topo_graphs)
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_topology_graph, cfg, g_idx, gamma, graph_idx)
                for g_idx, gamma, graph_idx in tasks
            ]
            rows = [row for f in futures for row in f.result()]
    else:
        rows = [
            row
            for g_idx, gamma, graph_idx in tasks
            for row in _topology_graph(cfg, g_idx, gamma, graph_idx)
        ]
    _write_csv(os.path.join(out_dir, "topology.csv"), _TOPO_COLUMNS, rows)
    return rows


def _topology_graph(cfg, g_idx, gamma, graph_idx):
    graph_seed = _child_seed(cfg.seed, _SS_TOPO, g_idx, graph_idx)
    adjacency, labels = generate_modular_graph(
        cfg.n, cfg.clusters, cfg.density, gamma, seed=graph_seed
    )
    P = row_normalize(adjacency)
    eta0 = np.full(cfg.n, cfg.topo_x0)
    rows = []
    for a_idx, alpha in enumerate(cfg.topo_alphas):
        net = SocialNetwork(
            n=cfg.n,
            P=P,
            lam=np.full(cfg.n, cfg.topo_lambda),
            alpha=alpha,
            eta0=eta0,
            sigma=np.full(cfg.n, cfg.sigma),
            clusters=labels,
        )
        weights = diagonal_weights(cfg.n, r=cfg.topo_r, beta=cfg.beta)
        ctrl = mpc_setup(
            net,
            weights,
            T=cfg.horizon,
            mode=cfg.mode,
            terminal_mode=cfg.terminal,
            soft_rho=cfg.soft_rho,
            soft_fallback=cfg.terminal == "hard",
        )
        run_seed = _child_seed(cfg.seed, _SS_TOPO, g_idx, graph_idx, a_idx, 99)
        t_ol = simulate(net, zero_policy(cfg.n), T=cfg.t_sim, seed=run_seed, x0=eta0)
        t_mpc = simulate(net, MpcPolicy(ctrl), T=cfg.t_sim, seed=run_seed, x0=eta0)
        g_ol = float(((1 - t_ol.ys) ** 2).sum())
        g_mpc = float(((1 - t_mpc.ys) ** 2).sum())
        rows.append(
            {
                "gamma": gamma,
                "alpha": alpha,
                "graph_index": graph_idx,
                "seed": run_seed,
                "gamma_social_ol": g_ol,
                "gamma_social_mpc": g_mpc,
                "delta_gamma": relative_improvement(g_mpc, g_ol),
            }
        )
    return rows
