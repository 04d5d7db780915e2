"""Experiment runner: configuration loading, seeded simulation, and CSV
emission for every bundled reproduction."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, experiments, lineargraph, policies, sim
from .model import ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

POLICY_CHOICES = ("myopic", "social", "hiding", "deterministic-rec", "char")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("ROUTELAB_OUT", ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _build_policy(name: str, config, args):
    if name == "myopic":
        return policies.MyopicPolicy(config)
    if name == "hiding":
        return policies.HidingPolicy(config)
    if name == "deterministic-rec":
        return policies.DeterministicRecommendationPolicy(config)
    if name == "char":
        if config.char is None:
            raise ConfigError("config has no char section; cannot run the char policy")
        mass = config.hazard.xbar_prior.cdf(config.char.x_th)
        params = policies.CharParams(
            config.char.x_th, config.char.p_low, config.char.p_high, mass
        )
        return policies.CharPolicy(config, params)
    # social: exact value function at desk scale, else receding horizon
    if config.num_stochastic == 1:
        mdp = policies.MdpConfig(
            rho=args.rho if args.rho is not None else config.rho,
            belief_points=args.grid_beliefs,
            max_iterations=args.max_iterations,
            tolerance=args.tol,
        )
        vf = policies.solve_social_mdp(config, mdp)
        return policies.SocialValuePolicy(config, vf)
    return policies.RecedingHorizonPolicy(config, depth=2)


def cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.config}: valid ({config.num_stochastic} stochastic path(s))")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rho = args.rho if args.rho is not None else config.rho
    try:
        policy = _build_policy(args.policy, config, args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = sim.monte_carlo(
        policy, config, args.runs, args.horizon, rho, args.seed
    )
    out = _out_dir(args)
    ledger = sim.run_episode(policy, config, args.horizon, rho, args.seed)
    sim.write_episode_csv(ledger, out / f"episode_{args.policy}.csv")
    sim.write_summary_csv([summary], out / f"summary_{args.policy}.csv")
    sim.write_belief_trace_csv(
        [summary], out / f"beliefs_{args.policy}.csv", xbar=config.hazard.xbar_true
    )
    print(
        f"policy={args.policy} runs={args.runs} horizon={args.horizon} "
        f"rho={rho} mean_cost={summary.mean_discounted_cost:.4f} "
        f"std={summary.std:.4f} final_mean_belief="
        + ",".join(_fmt(b) for b in summary.mean_belief_trace[-1])
    )
    return EXIT_OK


def cmd_solve_mdp(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    mdp = policies.MdpConfig(
        rho=args.rho if args.rho is not None else config.rho,
        belief_points=args.grid_beliefs,
        max_iterations=args.max_iterations,
        tolerance=args.tol,
    )
    vf = policies.solve_social_mdp(config, mdp)
    out = _out_dir(args)
    path = out / f"valuefn_{vf.fingerprint}.npz"
    vf.save(path)
    print(
        f"solved in {vf.iterations} sweeps, final gap {vf.gap_history[-1]:.6g}, "
        f"saved {path}"
    )
    return EXIT_OK


def cmd_poa(args) -> int:
    kind = args.scenario.replace("-", "_")
    try:
        scenario = analysis.build_scenario(kind, m_paths=args.M) if kind == "char_worst" else analysis.build_scenario(kind)
        policy, reference = analysis.scenario_policies(scenario)
        report = analysis.empirical_poa(
            policy,
            reference,
            scenario,
            runs=args.runs,
            horizon=args.horizon,
            rho=args.rho,
            base_seed=args.seed,
        )
    except analysis.ConstructionInfeasibleError as exc:
        print(f"infeasible construction: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = _out_dir(args)
    analysis.write_poa_reports_csv([report], out / f"poa_{args.scenario}.csv")
    print(
        f"scenario={args.scenario} empirical_ratio={report.empirical_ratio:.4f}"
        + (f" psi={report.psi:.4f}" if report.psi is not None else "")
        + (
            f" closed_form={report.closed_form_bound:.4f}"
            if report.closed_form_bound is not None
            else ""
        )
    )
    return EXIT_OK


def cmd_threshold(args) -> int:
    try:
        config = load_config(args.config) if args.config else experiments.fig3_config()
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    mdp = policies.MdpConfig(
        rho=args.rho if args.rho is not None else config.rho,
        belief_points=args.grid_beliefs,
        max_iterations=args.max_iterations,
        tolerance=args.tol,
    )
    vf = policies.solve_social_mdp(config, mdp)
    report = analysis.find_threshold_xth(config, vf, grid_step=args.grid_step)
    out = _out_dir(args)
    with open(out / "threshold.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "n_myopic", "n_social"])
        for x, n_m, n_s in report.grid:
            writer.writerow([_fmt(x), _fmt(n_m), _fmt(n_s)])
    print(
        f"x_th={report.x_th:.4f} sign_change_verified={report.sign_change_verified} "
        f"monotone={report.monotone_verified}"
    )
    return EXIT_OK


def _reproduce_fig3(args, out: Path) -> None:
    config = experiments.fig3_config()
    mdp = policies.MdpConfig(rho=config.rho, belief_points=args.grid_beliefs,
                             max_iterations=args.max_iterations, tolerance=args.tol)
    vf = policies.solve_social_mdp(config, mdp)
    report = analysis.find_threshold_xth(config, vf, grid_step=0.05)
    with open(out / "fig3.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "n_myopic", "n_social", "x_th"])
        for x, n_m, n_s in report.grid:
            writer.writerow([_fmt(x), _fmt(n_m), _fmt(n_s), _fmt(report.x_th)])
    print(f"fig3: x_th={report.x_th:.3f} verified={report.sign_change_verified}")


def _reproduce_fig5(args, out: Path) -> None:
    config = experiments.fig5_config()
    mdp = policies.MdpConfig(rho=config.rho, belief_points=args.grid_beliefs,
                             max_iterations=args.max_iterations, tolerance=args.tol)
    vf = policies.solve_social_mdp(config, mdp)
    myopic = sim.monte_carlo(policies.MyopicPolicy(config), config, args.runs,
                             args.horizon, config.rho, args.seed)
    social = sim.monte_carlo(policies.SocialValuePolicy(config, vf), config,
                             args.runs, args.horizon, config.rho, args.seed)
    sim.write_belief_trace_csv(
        [myopic, social], out / "fig5.csv", xbar=config.hazard.xbar_true
    )
    print(
        f"fig5: myopic final belief {myopic.mean_belief_trace[-1,0]:.4f}, "
        f"social final belief {social.mean_belief_trace[-1,0]:.4f}"
    )


def _hybrid_costs_by_horizon(summaries: dict, horizon: int, rho: float) -> dict:
    """Mean discounted cumulative cost at each horizon per policy."""
    curves = {}
    for name, ledgers in summaries.items():
        cum = np.zeros((len(ledgers), horizon))
        for i, ledger in enumerate(ledgers):
            c = 0.0
            for t, rec in enumerate(ledger.records):
                c += rho**t * rec.social_cost
                cum[i, t] = c
        curves[name] = cum.mean(axis=0)
    return curves


def _run_hybrid_policies(cfg, runs: int, horizon: int, rho: float, seed: int) -> dict:
    pols = lineargraph.hybrid_policy_set(cfg)
    out = {}
    for name, policy in pols.items():
        ledgers = [
            lineargraph.run_hybrid_episode(policy, cfg, horizon, rho, s)
            for s in sim.episode_seeds(seed, runs)
        ]
        out[name] = ledgers
    return out


def _reproduce_fig7(args, out: Path) -> None:
    cfg = lineargraph.beijing_hybrid_config()
    rho = cfg.rho
    ledgers = _run_hybrid_policies(cfg, args.runs, args.horizon, rho, args.seed)
    curves = _hybrid_costs_by_horizon(ledgers, args.horizon, rho)
    with open(out / "fig7.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "myopic", "hiding", "social", "char"])
        for t in range(args.horizon):
            writer.writerow(
                [str(t)]
                + [_fmt(curves[name][t]) for name in ("myopic", "hiding", "social", "char")]
            )
    final = {name: curves[name][-1] for name in curves}
    print(
        "fig7 final costs: "
        + " ".join(f"{k}={v:.0f}" for k, v in final.items())
        + f" | ratios vs social: char {final['char']/final['social']:.3f}"
        f" myopic {final['myopic']/final['social']:.3f}"
        f" hiding {final['hiding']/final['social']:.3f}"
    )


def _reproduce_fig8(args, out: Path) -> None:
    sweep = (0.0, 0.2, 0.4, 0.6, 0.8, 0.999)
    rows = []
    for rho in sweep:
        cfg = lineargraph.beijing_hybrid_config()
        cfg = replace(cfg, rho=max(rho, 1e-9))
        ledgers = _run_hybrid_policies(cfg, args.runs, args.horizon, rho, args.seed)
        means = {
            name: float(np.mean([l.discounted_cost for l in ls]))
            for name, ls in ledgers.items()
        }
        rows.append(
            (
                rho,
                means["myopic"] / means["social"],
                means["hiding"] / means["social"],
                means["char"] / means["social"],
            )
        )
        print(
            f"fig8 rho={rho:g}: IR_myopic={rows[-1][1]:.4f} "
            f"IR_hiding={rows[-1][2]:.4f} IR_char={rows[-1][3]:.4f}"
        )
    with open(out / "fig8.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "ir_myopic", "ir_hiding", "ir_char"])
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _reproduce_poa_theorem1(args, out: Path) -> None:
    scenario = analysis.build_scenario("theorem1_worst")
    policy, reference = analysis.scenario_policies(scenario)
    report = analysis.empirical_poa(
        policy, reference, scenario, runs=3, horizon=300, rho=0.99, base_seed=args.seed
    )
    analysis.write_poa_reports_csv([report], out / "poa_theorem1.csv")
    print(
        f"poa-theorem1: ratio={report.empirical_ratio:.3f} "
        f"bound={report.closed_form_bound:.4f} psi={report.psi:.3f}"
    )


def _reproduce_poa_char(args, out: Path) -> None:
    from .model import VarianceCostModel

    reports = []
    for m, v in ((1, VarianceCostModel.zero()), (2, VarianceCostModel.capped_reciprocal(100.0, 200.0))):
        scenario = analysis.build_scenario("char_worst", m_paths=m, n_mean=10.0, v=v)
        policy, reference = analysis.scenario_policies(scenario)
        report = analysis.empirical_poa(
            policy, reference, scenario, runs=1, horizon=400, rho=0.99, base_seed=args.seed
        )
        reports.append(report)
        print(
            f"poa-char M={m}: empirical={report.empirical_ratio:.4f} "
            f"closed_form={scenario.target_ratio:.4f}"
        )
    analysis.write_poa_reports_csv(reports, out / "poa_char.csv")


def _reproduce_hiding_divergence(args, out: Path) -> None:
    rows = []
    ratio_prev = None
    for scale in (256.0, 512.0, 1024.0, 2048.0):
        scenario = analysis.build_scenario("hiding_over", latency_scale=scale)
        policy, reference = analysis.scenario_policies(scenario)
        report = analysis.empirical_poa(
            policy, reference, scenario, runs=1, horizon=300, rho=0.99, base_seed=args.seed
        )
        mult = None if ratio_prev is None else report.empirical_ratio / ratio_prev
        ratio_prev = report.empirical_ratio
        rows.append((scale, report.empirical_ratio, mult))
        print(
            f"hiding-divergence scale={scale:g}: ratio={report.empirical_ratio:.2f}"
            + (f" multiplier={mult:.3f}" if mult else "")
        )
    with open(out / "hiding_divergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["latency_scale", "empirical_ratio", "doubling_multiplier"])
        for scale, ratio, mult in rows:
            writer.writerow([_fmt(scale), _fmt(ratio), "" if mult is None else _fmt(mult)])


def cmd_reproduce(args) -> int:
    out = _out_dir(args)
    runners = {
        "fig3": _reproduce_fig3,
        "fig5": _reproduce_fig5,
        "fig7": _reproduce_fig7,
        "fig8": _reproduce_fig8,
        "poa-theorem1": _reproduce_poa_theorem1,
        "poa-char": _reproduce_poa_char,
        "hiding-divergence": _reproduce_hiding_divergence,
    }
    if args.name not in runners:
        print(f"unknown experiment {args.name!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        runners[args.name](args, out)
    except analysis.ConstructionInfeasibleError as exc:
        print(f"infeasible construction: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routelab",
        description="Dynamic congestion game simulations and efficiency reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="JSON network config")
        else:
            p.add_argument("--config", help="JSON network config")
        p.add_argument("--runs", type=int, default=50)
        p.add_argument("--horizon", type=int, default=30)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--grid-beliefs", type=int, default=51)
        p.add_argument("--tol", type=float, default=1e-3)
        p.add_argument("--max-iterations", type=int, default=1200)
        p.add_argument("--out", default=None, help="output dir (or $ROUTELAB_OUT)")

    p = sub.add_parser("simulate", help="run seeded episodes under one policy")
    common(p)
    p.add_argument("--policy", choices=POLICY_CHOICES, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve-mdp", help="solve and persist the planner value function")
    common(p)
    p.set_defaults(func=cmd_solve_mdp)

    p = sub.add_parser("poa", help="empirical cost ratio on a worst-case construction")
    p.add_argument(
        "--scenario",
        required=True,
        choices=["theorem1-worst", "hiding-over", "hiding-under", "char-worst"],
    )
    p.add_argument("--M", type=int, default=1)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_poa)

    p = sub.add_parser("threshold", help="exploration threshold sweep over beliefs")
    common(p, config_required=False)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("reproduce", help="run a bundled experiment end to end")
    p.add_argument("name", choices=list(experiments.NAMED_EXPERIMENTS))
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--grid-beliefs", type=int, default=51)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iterations", type=int, default=1200)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("validate", help="check a config file against all invariants")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
