"""Command-line entry point: generate networks, run simulations, compute
policies, execute sweeps and the topology study, and validate networks."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _error_line(code, message):
    print(json.dumps({"error": message, "code": code}), file=sys.stderr)


def _load_config(args):
    from nudgesim.harness import ExperimentConfig

    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.config)
        else:
            cfg = ExperimentConfig()
            cfg.validate()
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from exc
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "soft_terminal", None) is not None:
        cfg.terminal = "soft"
        cfg.soft_rho = args.soft_terminal
    return cfg


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_gen_net(args):
    from nudgesim.graph import save_network
    from nudgesim.harness import build_network

    cfg = _load_config(args)
    net = build_network(cfg)
    path = os.path.join(_outdir(args), "network.txt")
    save_network(net, path)
    print(f"wrote {path} (n={net.n}, seed={cfg.seed})")
    return EXIT_OK


def cmd_simulate(args):
    from nudgesim.dynamics import save_trajectory_csv, simulate
    from nudgesim.harness import build_network, control_cost, social_cost
    from nudgesim.policies import (
        MpcPolicy,
        diagonal_weights,
        mbccp_policy,
        mfccp_policy,
        mpc_setup,
        zero_policy,
    )

    cfg = _load_config(args)
    net = build_network(cfg)
    weights = diagonal_weights(net.n, r=cfg.r, beta=cfg.beta)
    try:
        if args.policy == "none":
            policy = zero_policy(net.n)
        elif args.policy == "mfccp":
            policy = mfccp_policy(net, cfg.beta)
        elif args.policy == "mbccp":
            policy = mbccp_policy(net, weights)
        else:
            ctrl = mpc_setup(
                net,
                weights,
                T=cfg.horizon,
                mode=cfg.mode,
                terminal_mode=cfg.terminal,
                soft_rho=cfg.soft_rho,
                soft_fallback=cfg.terminal == "hard",
            )
            policy = MpcPolicy(ctrl)
        traj = simulate(net, policy, T=cfg.t_sim, seed=cfg.seed, x0=net.eta0)
    except Exception as exc:  # infeasibility or instability
        raise CliError(EXIT_INFEASIBLE, str(exc)) from exc
    out = _outdir(args)
    path = os.path.join(out, f"trajectory_{args.policy}.csv")
    save_trajectory_csv(traj, path)
    summary = {
        "policy": args.policy,
        "seed": cfg.seed,
        "t_sim": cfg.t_sim,
        "gamma_social": social_cost([traj]),
        "delta_u": control_cost(traj),
        "clip_events": traj.clip_events,
        "infeasible_steps": traj.infeasible_steps,
    }
    with open(os.path.join(out, f"summary_{args.policy}.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"wrote {path}")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_policy(args):
    from nudgesim.harness import build_network
    from nudgesim.policies import (
        check_inactive_conditions,
        diagonal_weights,
        mbccp,
        mbccp_terms,
        mfccp,
    )

    cfg = _load_config(args)
    net = build_network(cfg)
    out = _outdir(args)
    if args.kind == "mfccp":
        u = mfccp(net, cfg.beta)
        info = {"kind": "mfccp", "budget_used": float(u.sum())}
    else:
        weights = diagonal_weights(net.n, r=cfg.r, beta=cfg.beta)
        try:
            u, diag = mbccp(net, weights)
            terms = mbccp_terms(net, weights)
        except Exception as exc:
            raise CliError(EXIT_NUMERICAL, str(exc)) from exc
        info = {
            "kind": "mbccp",
            "budget_used": float(u.sum()),
            "budget_active": diag["budget_active"],
            "constraints_inactive": bool(
                check_inactive_conditions(terms, cfg.beta)
            ),
            "kkt_residuals": [float(x) for x in diag["kkt_residuals"]],
        }
    path = os.path.join(out, f"policy_{args.kind}.csv")
    with open(path, "w") as fh:
        fh.write("node,u\n")
        for v, val in enumerate(u):
            fh.write("%d,%.17g\n" % (v, val))
    print(f"wrote {path}")
    print(json.dumps(info))
    if args.kind == "mbccp":
        print(f"constraints inactive: {info['constraints_inactive']}")
    return EXIT_OK


def cmd_sweep(args):
    from nudgesim.harness import run_sweep

    cfg = _load_config(args)
    try:
        report = run_sweep(
            cfg, _outdir(args), jobs=args.jobs, trajectories=args.trajectories
        )
    except Exception as exc:
        raise CliError(EXIT_NUMERICAL, str(exc)) from exc
    print(
        f"wrote {os.path.join(args.out, 'runs.csv')} "
        f"({len(report.runs)} runs, {len(report.cells)} cells)"
    )
    return EXIT_OK


def cmd_topology_study(args):
    from nudgesim.harness import run_topology_study

    cfg = _load_config(args)
    try:
        rows = run_topology_study(cfg, _outdir(args), jobs=args.jobs)
    except Exception as exc:
        raise CliError(EXIT_NUMERICAL, str(exc)) from exc
    print(f"wrote {os.path.join(args.out, 'topology.csv')} ({len(rows)} rows)")
    return EXIT_OK


def cmd_validate(args):
    from nudgesim.equilibrium import UnstableNetworkError, build_prediction_model
    from nudgesim.graph import check_influence_reachability
    from nudgesim.harness import build_network
    from nudgesim.policies import (
        check_inactive_conditions,
        diagonal_weights,
        mbccp_terms,
    )

    cfg = _load_config(args)
    net = build_network(cfg)
    reachable = check_influence_reachability(net.P, net.lam)
    if not reachable:
        raise CliError(
            EXIT_INFEASIBLE,
            "influence reachability violated: some agents have no path to "
            "an agent with social weight below 1, so expected inclinations "
            "do not stabilize",
        )
    try:
        model = build_prediction_model(net)
        weights = diagonal_weights(net.n, r=cfg.r, beta=cfg.beta)
        terms = mbccp_terms(net, weights, model=model)
        inactive = check_inactive_conditions(terms, cfg.beta)
    except UnstableNetworkError as exc:
        raise CliError(EXIT_INFEASIBLE, str(exc)) from exc
    except np.linalg.LinAlgError as exc:
        raise CliError(EXIT_NUMERICAL, f"linear algebra failure: {exc}") from exc
    report = {
        "reachable": True,
        "spectral_radius": model.spectral_radius,
        "stable": model.stable,
        "constant_policy_constraints_inactive": bool(inactive),
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nudgesim",
        description=(
            "Simulate opinion dynamics with hidden inclinations and design "
            "budget-constrained nudging policies."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", help="experiment config file (key = value)")
        p.add_argument("--seed", type=int, help="override the root seed")
        p.add_argument("--out", default="out", help="output directory")
        if jobs:
            p.add_argument(
                "--jobs",
                type=int,
                default=os.cpu_count() or 1,
                help="parallel worker count",
            )

    p = sub.add_parser("gen-net", help="generate and save a network file")
    common(p)
    p.set_defaults(func=cmd_gen_net)

    p = sub.add_parser("simulate", help="run one closed-loop simulation")
    common(p)
    p.add_argument(
        "--policy",
        default="none",
        choices=["none", "mfccp", "mbccp", "mpc"],
    )
    p.add_argument("--soft-terminal", type=float, default=None,
                   help="use a soft terminal penalty with this weight")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("policy", help="compute a constant policy")
    common(p)
    p.add_argument("--kind", default="mbccp", choices=["mfccp", "mbccp"])
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("sweep", help="matched-seed policy comparison sweep")
    common(p, jobs=True)
    p.add_argument("--trajectories", action="store_true",
                   help="write per-run trajectory CSVs")
    p.add_argument("--soft-terminal", type=float, default=None,
                   help="use a soft terminal penalty with this weight")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("topology-study", help="clustering-level study")
    common(p, jobs=True)
    p.add_argument("--soft-terminal", type=float, default=None,
                   help="use a soft terminal penalty with this weight")
    p.set_defaults(func=cmd_topology_study)

    p = sub.add_parser("validate", help="check stability and feasibility")
    common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _error_line(exc.code, str(exc))
        return exc.code
    except Exception as exc:  # noqa: BLE001 - last-resort CLI guard
        _error_line(EXIT_NUMERICAL, f"unexpected failure: {exc}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
