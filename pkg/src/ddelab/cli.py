"""Command-line harness: dataset generation, distorted policy evaluation,
tabular actor-critic training, theorem verification, and the paired
non-uniform-versus-uniform pessimism comparison.

Artifacts land under ``<out>/<config-hash>/<seed>/``; a fixed (config, seed)
pair reproduces every output byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from multiprocessing import Pool
from pathlib import Path

import numpy as np
from scipy import stats as _sps

from .benchmarks import chain_mdp, gridworld_mdp, random_mdp, skewed_behavior_weights
from .config import Config, apply_overrides, config_hash, dump_config, load_config
from .control import DdacConfig, evaluate_policy, train_ddac_tabular
from .distortion import (
    DatasetSource,
    DistortionTable,
    dde_step,
    default_max_iter,
    iterate_fixed_point,
)
from .ensemble import ensemble_stats
from .mdp import (
    FiniteMdp,
    IidFromWeights,
    Policy,
    Trajectories,
    generate_offline_dataset,
    load_dataset,
    save_dataset,
    uniform_policy,
)
from .quantiles import QuantileTable
from .seeding import rng_for
from . import theory
from .theory import (
    TheoremReport,
    asymptotic_variance,
    certify_target_density,
    clt_experiment,
    concentration_experiment,
    reference_setup,
    sandwich_check,
    target_density,
    target_quantile,
    variance_lower_bound,
)


def build_mdp(cfg: Config) -> FiniteMdp:
    if cfg.kind == "skewed_chain":
        return chain_mdp(
            n_states=cfg.n_states,
            gamma=cfg.gamma,
            safe_low=cfg.safe_low,
            safe_high=cfg.safe_high,
            risky_base=cfg.risky_base,
            tail_value=cfg.tail_value,
            tail_prob=cfg.tail_prob,
        )
    if cfg.kind == "gridworld":
        return gridworld_mdp(cfg.grid_width, cfg.grid_height, cfg.cliff, cfg.gamma)
    if cfg.kind == "random":
        return random_mdp(cfg.n_states, cfg.n_actions, rng_for(cfg.mdp_seed, "mdp"), cfg.gamma)
    if cfg.kind == "reference":
        return theory.reference_mdp()
    raise ValueError(f"unknown mdp kind: {cfg.kind!r}")


def behavior_policy(cfg: Config, mdp: FiniteMdp) -> Policy:
    probs = np.empty((mdp.n_states, mdp.n_actions))
    probs[:, 0] = cfg.skew
    if mdp.n_actions > 1:
        probs[:, 1:] = (1.0 - cfg.skew) / (mdp.n_actions - 1)
    else:
        probs[:, 0] = 1.0
    return Policy(probs)


def make_dataset(cfg: Config, mdp: FiniteMdp, seed: int):
    rng = rng_for(seed, "dataset")
    behavior = behavior_policy(cfg, mdp)
    if cfg.scheme == "iid":
        weights = skewed_behavior_weights(mdp, cfg.skew)
        scheme = IidFromWeights(weights)
    elif cfg.scheme == "trajectories":
        scheme = Trajectories(cfg.traj_horizon)
    else:
        raise ValueError(f"unknown dataset scheme: {cfg.scheme!r}")
    return generate_offline_dataset(mdp, behavior, cfg.n_samples, scheme, rng)


def _run_dir(cfg: Config, out: str, seed: int) -> Path:
    path = Path(out) / config_hash(cfg) / str(seed)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _metrics_rows(metrics: list[dict]) -> list[list]:
    return [
        [
            row["step"],
            repr(float(row["mean_return"])),
            repr(float(row["cvar10"])),
            repr(float(row["mean_q"])),
            repr(float(row["mean_sigma"])),
        ]
        for row in metrics
    ]


def _ddac_config(cfg: Config) -> DdacConfig:
    init_scheme = (
        ("constant", cfg.init_constant)
        if cfg.init == "constant"
        else ("uniform_random", cfg.init_lo, cfg.init_hi)
    )
    policy_mode = "mean" if cfg.policy_mode == "mean" else ("cvar", cfg.cvar_alpha)
    return DdacConfig(
        n_members=cfg.L,
        n_atoms=cfg.M,
        beta=cfg.beta,
        gamma=cfg.gamma,
        learning_rate=cfg.learning_rate,
        kappa_huber=cfg.kappa_huber,
        kappa_polyak=cfg.kappa_polyak,
        epsilon=cfg.epsilon,
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        eval_every=cfg.eval_every,
        init_scheme=init_scheme,
        policy_mode=policy_mode,
        penalty_shape=cfg.penalty_shape,
        enumerate_next_actions=cfg.enumerate_actions,
        bootstrap=cfg.bootstrap,
        eval_episodes=cfg.eval_episodes,
        eval_horizon=cfg.eval_horizon,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: Config, seed: int, out: str, jobs: int) -> int:
    mdp = build_mdp(cfg)
    ds = make_dataset(cfg, mdp, seed)
    run_dir = _run_dir(cfg, out, seed)
    save_dataset(ds, run_dir / "dataset.csv", seed, mdp.content_hash())
    (run_dir / "config.txt").write_text(dump_config(cfg))
    print(f"wrote {run_dir / 'dataset.csv'} ({len(ds)} tuples)")
    return 0


def _load_or_make_dataset(cfg: Config, mdp: FiniteMdp, seed: int, run_dir: Path):
    path = run_dir / "dataset.csv"
    if path.exists():
        ds, meta = load_dataset(path, mdp.n_states, mdp.n_actions)
        if meta.get("mdp_hash") not in (None, mdp.content_hash()):
            raise ValueError(f"dataset at {path} was generated for a different MDP")
        return ds
    return make_dataset(cfg, mdp, seed)


def cmd_evaluate(cfg: Config, seed: int, out: str, jobs: int) -> int:
    mdp = build_mdp(cfg)
    run_dir = _run_dir(cfg, out, seed)
    ds = _load_or_make_dataset(cfg, mdp, seed, run_dir)
    pi = uniform_policy(mdp.n_states, mdp.n_actions) if cfg.eval_policy == "uniform" \
        else behavior_policy(cfg, mdp)
    shape = (mdp.n_states, mdp.n_actions, cfg.M)
    phi = (
        DistortionTable.zeros(shape)
        if cfg.eval_phi == "none"
        else DistortionTable.constant(shape, cfg.eval_phi_constant)
    )
    source = DatasetSource.for_mdp(ds, mdp)
    lo, hi = mdp.return_range()
    eta0 = QuantileTable.constant(shape, 0.5 * (lo + hi))
    eta, report = iterate_fixed_point(
        lambda eta: dde_step(source, pi, eta, phi),
        eta0,
        cfg.fp_tol,
        default_max_iter(mdp.gamma, cfg.fp_tol),
    )
    eta.save_csv(run_dir / "quantiles.csv")
    (run_dir / "fixed_point_report.json").write_text(report.to_json() + "\n")
    print(f"evaluate: converged={report.converged} iterations={report.iterations} "
          f"final_delta={report.final_delta:.3g}")
    return 0 if report.converged else 1


def cmd_train(cfg: Config, seed: int, out: str, jobs: int) -> int:
    mdp = build_mdp(cfg)
    run_dir = _run_dir(cfg, out, seed)
    ds = _load_or_make_dataset(cfg, mdp, seed, run_dir)
    ens, policy, metrics = train_ddac_tabular(ds, _ddac_config(cfg), rng_for(seed, "train"), mdp)
    _write_csv(
        run_dir / "metrics.csv",
        ["step", "mean_return", "cvar10", "mean_q", "mean_sigma"],
        _metrics_rows(metrics),
    )
    ckpt = run_dir / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    for idx, member in enumerate(ens.online):
        member.save_csv(ckpt / f"member_{idx:02d}.csv")
    for idx, member in enumerate(ens.targets):
        member.save_csv(ckpt / f"target_{idx:02d}.csv")
    manifest = {
        "beta": ens.beta,
        "gamma": ens.gamma,
        "kappa_polyak": ens.kappa_polyak,
        "kappa_huber": ens.kappa_huber,
        "learning_rate": ens.learning_rate,
        "steps": cfg.steps,
        "n_members": ens.n_members,
        "penalty_shape": ens.penalty_shape,
        "seed": seed,
    }
    (ckpt / "manifest.json").write_text(json.dumps(manifest, sort_keys=True) + "\n")
    np.savetxt(run_dir / "policy.csv", policy.probs, delimiter=",", fmt="%.17g")
    final = metrics[-1]
    print(f"train: steps={cfg.steps} mean_q={final['mean_q']:.4g} "
          f"mean_return={final['mean_return']:.4g}")
    return 0


def theory_reports(cfg: Config, seed: int) -> list[TheoremReport]:
    """The default theorem-check battery on the reference setup plus random
    sandwich instances."""
    mdp, pi, eta = reference_setup(cfg.theory_m)
    rng = rng_for(seed, "theory")
    reports = [certify_target_density(mdp, pi, eta)]
    for tau in cfg.tau_list():
        sigma2 = asymptotic_variance(mdp, pi, eta, 0, 0, tau)
        z_tau = target_quantile(mdp, pi, eta, 0, 0, tau)
        f = target_density(mdp, pi, eta, 0, 0, z_tau)
        eps_prime, lower = variance_lower_bound(mdp, pi, eta, tau, 0, 0)
        upper = tau * (1.0 - tau) / f**2
        reports.append(
            TheoremReport(
                name=f"asymptotic_variance_bounds_tau={tau:g}",
                statistic=sigma2,
                bound_or_target=upper,
                tolerance=0.0,
                replicates=1,
                passed=lower <= sigma2 <= upper,
                details={"lower_bound": lower, "eps_prime": eps_prime},
            )
        )
    for tau in cfg.tau_list():
        reports.append(
            clt_experiment(mdp, pi, eta, 0, 0, tau, cfg.clt_n, cfg.clt_replicates, rng)
        )
    for tau in cfg.tau_list():
        reports.append(
            concentration_experiment(
                mdp, pi, eta, tau, cfg.conc_n, cfg.delta, cfg.conc_replicates, rng
            )
        )
    worst = None
    for _ in range(cfg.sandwich_instances):
        inst = random_mdp(4, 2, rng, gamma=0.9, reward_kind="mixture")
        pi_inst = uniform_policy(4, 2)
        shape = (4, 2, cfg.sandwich_m)
        phi = DistortionTable(rng.uniform(0.0, 0.2, size=shape))
        rep = sandwich_check(inst, pi_inst, phi, cfg.sandwich_m, cfg.sandwich_tol)
        if worst is None or rep.statistic > worst.statistic:
            worst = rep
    worst.name = f"sandwich_random_x{cfg.sandwich_instances}"
    worst.replicates = cfg.sandwich_instances
    reports.append(worst)
    ref_shape = (mdp.n_states, mdp.n_actions, cfg.sandwich_m)
    const = sandwich_check(
        mdp, pi, DistortionTable.constant(ref_shape, 0.1), cfg.sandwich_m, cfg.sandwich_tol
    )
    const.name = "sandwich_constant_phi"
    reports.append(const)
    zero = sandwich_check(mdp, pi, DistortionTable.zeros(ref_shape), cfg.sandwich_m, cfg.sandwich_tol)
    zero.name = "sandwich_zero_phi"
    reports.append(zero)
    return reports


def cmd_verify_theory(cfg: Config, seed: int, out: str, jobs: int) -> int:
    run_dir = _run_dir(cfg, out, seed)
    reports = theory_reports(cfg, seed)
    _write_csv(
        run_dir / "reports.csv",
        TheoremReport.CSV_HEADER.split(","),
        [rep.to_csv_row() for rep in reports],
    )
    for rep in reports:
        print(f"{'PASS' if rep.passed else 'FAIL'} {rep.name}: statistic={rep.statistic:.6g}")
    print(f"wrote {run_dir / 'reports.csv'}")
    return 0 if all(rep.passed for rep in reports) else 1


def _compare_one_seed(args: tuple) -> dict:
    cfg, seed = args
    mdp = build_mdp(cfg)
    ds = make_dataset(cfg, mdp, seed)
    results = {"seed": seed}
    for arm, shape in (("dde", "per_tau"), ("uniform", "uniform")):
        ddac = _ddac_config(cfg)
        ddac.penalty_shape = shape
        ens, policy, _ = train_ddac_tabular(ds, ddac, rng_for(seed, "train"))
        outcome = evaluate_policy(
            mdp, policy, cfg.eval_episodes, cfg.eval_horizon, rng_for(seed, "eval")
        )
        results[f"mean_{arm}"] = outcome["mean"]
        results[f"cvar10_{arm}"] = outcome["cvar10"]
    return results


def run_compare(cfg: Config, base_seed: int, jobs: int = 1) -> dict:
    """Paired study across n_seeds: identical data and initialization per
    seed; only the penalty shape differs between arms."""
    seeds = [base_seed + i for i in range(cfg.n_seeds)]
    work = [(cfg, seed) for seed in seeds]
    if jobs > 1:
        with Pool(jobs) as pool:
            rows = pool.map(_compare_one_seed, work)
    else:
        rows = [_compare_one_seed(item) for item in work]
    diffs = [row["mean_dde"] - row["mean_uniform"] for row in rows]
    wins = sum(1 for d in diffs if d > 0)
    losses = sum(1 for d in diffs if d < 0)
    ties = len(diffs) - wins - losses
    at_least = wins + ties
    if wins + losses > 0:
        p_value = float(_sps.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)
    else:
        p_value = 1.0
    return {
        "rows": rows,
        "wins": wins,
        "losses": losses,
        "ties": ties,
        "non_losses": at_least,
        "mean_of_means_dde": float(np.mean([row["mean_dde"] for row in rows])),
        "mean_of_means_uniform": float(np.mean([row["mean_uniform"] for row in rows])),
        "mean_diff": float(np.mean(diffs)),
        "sign_test_p": p_value,
    }


def cmd_compare(cfg: Config, seed: int, out: str, jobs: int) -> int:
    run_dir = _run_dir(cfg, out, seed)
    summary = run_compare(cfg, seed, jobs)
    rows = [
        [
            row["seed"],
            repr(row["mean_dde"]),
            repr(row["cvar10_dde"]),
            repr(row["mean_uniform"]),
            repr(row["cvar10_uniform"]),
            repr(row["mean_dde"] - row["mean_uniform"]),
        ]
        for row in summary["rows"]
    ]
    _write_csv(
        run_dir / "compare.csv",
        ["seed", "mean_dde", "cvar10_dde", "mean_uniform", "cvar10_uniform", "mean_diff"],
        rows,
    )
    aggregate = {k: v for k, v in summary.items() if k != "rows"}
    (run_dir / "compare_summary.json").write_text(json.dumps(aggregate, sort_keys=True) + "\n")
    print(
        f"compare: dde wins {summary['wins']}, ties {summary['ties']}, "
        f"losses {summary['losses']}; mean diff {summary['mean_diff']:.4g}; "
        f"sign-test p={summary['sign_test_p']:.3g}"
    )
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "evaluate": cmd_evaluate,
    "train": cmd_train,
    "verify-theory": cmd_verify_theory,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ddelab",
        description="Offline distributional policy evaluation lab",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="path to a key=value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    apply_overrides(cfg, args.overrides)
    return COMMANDS[args.command](cfg, args.seed, args.out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
