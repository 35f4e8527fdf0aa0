"""Command line experiment runner.

Every subcommand reads one YAML experiment config and writes CSV files
whose first line records the package version and the config hash.
Exit codes: 0 success, 1 invalid input, 2 failure while running.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, experiments as ex, ipms, qnet
from .mrrc import format_action

log = logging.getLogger("robosched")


def _checkpoint_path(out: Path, arm: str, seed: int) -> Path:
    return out / f"ckpt_{arm}_seed{seed}.npz"


def cmd_train(cfg: ex.ExperimentConfig, args) -> int:
    out = cfg.output_path()
    for seed in cfg.seeds:
        res = ex.train_run(cfg, seed, "full", checkpoint_dir=out)
        qnet.save_checkpoint(res.params, _checkpoint_path(out, "full", seed))
        ex.write_csv(out / f"train_log_seed{seed}.csv", list(ex.trainer.LOG_FIELDS), res.log, cfg.hash())
        log.info("seed %d done: %s", seed, _checkpoint_path(out, "full", seed))
    return 0


def _evaluate(cfg, params, size=None, select="auction"):
    env = ex.make_env(cfg, size)
    states = ex.eval_states(cfg, env)
    trained = ex.policy_returns(env, states, params, select)
    sga, optimal = ex.reference_returns(cfg, env, states, cfg.output_path() / "oracle_cache.json")
    if optimal is None and cfg.eval.oracle and cfg.problem == "mrrc-det":
        log.warning("oracle guard exceeded at %dR/%dT; pct_optimal left blank", env.n_robots, env.n_tasks)
    return states, trained, sga, optimal


def cmd_eval(cfg, args) -> int:
    if cfg.problem == "ipms":
        raise ex.ConfigError("use the ipms subcommand for scheduling problems")
    params = qnet.load_checkpoint(args.checkpoint)
    states, trained, sga, optimal = _evaluate(cfg, params)
    out = cfg.output_path()
    rows = [{"instance": k, "seed": cfg.eval.seed + k, "trained": t, "sga": s,
             "optimal": None if optimal is None else optimal[k]}
            for k, (t, s) in enumerate(zip(trained, sga))]
    ex.write_csv(out / "eval_instances.csv", ex.INSTANCE_HEADER, rows, cfg.hash())
    summary = [ex.summary_row("trained", trained, optimal, sga), ex.summary_row("sga", sga, optimal, sga)]
    if optimal is not None:
        summary.append(ex.summary_row("optimal", optimal, optimal, sga))
    ex.write_csv(out / "eval_summary.csv", ex.SUMMARY_HEADER, summary, cfg.hash())
    for row in summary:
        print(f"{row['method']:8s} {row['mean']:10.2f} +- {row['std']:8.2f}  "
              f"pct_optimal={ex.fmt(row['pct_optimal']) or '-'}  pct_sga={ex.fmt(row['pct_sga'])}")
    return 0


def _parse_sizes(text: str):
    sizes = []
    for part in text.split(","):
        try:
            r, t = part.lower().split("x")
            sizes.append((int(r), int(t)))
        except ValueError:
            raise ex.ConfigError(f"bad size {part!r}; expected ROBOTSxTASKS") from None
    return sizes


def cmd_transfer(cfg, args) -> int:
    params = qnet.load_checkpoint(args.checkpoint)
    refs = {}
    for item in args.reference or []:
        size, _, path = item.partition("=")
        refs[_parse_sizes(size)[0]] = qnet.load_checkpoint(path)
    rows = []
    for size in _parse_sizes(args.sizes) if args.sizes else list(cfg.sizes):
        _, trained, sga, optimal = _evaluate(cfg, params, size)
        row = {"robots": size[0], "tasks": size[1], "mean": float(np.mean(trained)),
               "std": float(np.std(trained)), "sga_mean": float(np.mean(sga)),
               "pct_sga": ex.pct(trained, sga), "pct_optimal": ex.pct(trained, optimal)}
        if size in refs:
            env = ex.make_env(cfg, size)
            ref = ex.policy_returns(env, ex.eval_states(cfg, env), refs[size])
            row["reference_mean"] = float(np.mean(ref))
            row["ratio"] = None if np.sum(ref) == 0 else float(np.sum(trained) / np.sum(ref))
        rows.append(row)
        print(f"{size[0]}R/{size[1]}T mean={row['mean']:.2f} pct_sga={ex.fmt(row['pct_sga'])} "
              f"ratio={ex.fmt(row.get('ratio')) or '-'}")
    ex.write_csv(cfg.output_path() / "transfer.csv", ex.TRANSFER_HEADER, rows, cfg.hash())
    return 0


def cmd_ablate(cfg, args) -> int:
    if cfg.problem == "ipms":
        raise ex.ConfigError("ablation runs on MRRC problems")
    out = cfg.output_path()
    env = ex.make_env(cfg)
    states = ex.eval_states(cfg, env)
    sga, optimal = ex.reference_returns(cfg, env, states, out / "oracle_cache.json")
    curves, finals = [], []
    for arm in args.arms or ex.ARMS:
        if arm == "max_op" and not _max_op_allowed(env):
            print(f"skipping max_op: {cfg.size} exceeds the enumeration guard")
            continue
        for seed in cfg.seeds:
            res = ex.train_run(cfg, seed, arm)
            qnet.save_checkpoint(res.params, _checkpoint_path(out, arm, seed))
            for row in res.log:
                curves.append(dict(row, arm=arm, seed=seed))
            select = "max" if arm == "max_op" else "auction"
            final = ex.policy_returns(env, states, res.params, select)
            finals.append(dict(ex.summary_row(arm, final, optimal, sga), seed=seed))
            print(f"{arm:12s} seed {seed}: {np.mean(final):.2f}")
    ex.write_csv(out / "ablation_curves.csv", ex.CURVE_HEADER, curves, cfg.hash())
    ex.write_csv(out / "ablation_final.csv", ["seed"] + ex.SUMMARY_HEADER, finals, cfg.hash())
    return 0


def _max_op_allowed(env) -> bool:
    from .mrrc import ENUMERATION_GUARD
    return env.n_robots * env.n_tasks <= ENUMERATION_GUARD


def cmd_ipms(cfg, args) -> int:
    if cfg.problem != "ipms":
        raise ex.ConfigError("the ipms subcommand needs problem: ipms")
    out = cfg.output_path()
    if args.checkpoint:
        params = qnet.load_checkpoint(args.checkpoint)
    else:
        params = ex.train_run(cfg, cfg.seeds[0], checkpoint_dir=out).params
        qnet.save_checkpoint(params, _checkpoint_path(out, "ipms", cfg.seeds[0]))
    rows = ipms_rows(cfg, params, args.restarts)
    ex.write_csv(out / "ipms.csv", ex.IPMS_HEADER, rows, cfg.hash())
    ratio = sum(r["trained_makespan"] for r in rows) / sum(r["local_search_makespan"] for r in rows)
    print(f"trained / local search make-span: {100 * ratio:.2f}%")
    if args.gantt is not None:
        inst = ex.make_env(cfg).initial(cfg.eval.seed + args.gantt).instance
        span, gantt = ipms.run_policy(inst, ex.trainer.greedy_policy(params, np.random.default_rng(0)))
        (out / f"gantt_{args.gantt}.csv").write_text(ipms.gantt_csv(gantt))
    return 0


def ipms_rows(cfg, params, restarts: int = 10) -> list[dict]:
    env = ex.make_env(cfg)
    rows = []
    for k, state in enumerate(ex.eval_states(cfg, env)):
        trained = -ex.policy_returns(env, [state], params, seed=k)[0]
        _, ls = baselines.ipms_local_search(state.instance, restarts=restarts, seed=k)
        lb1, lb2 = ipms.lower_bounds(state.instance)
        rows.append({"instance": k, "seed": cfg.eval.seed + k, "trained_makespan": trained,
                     "local_search_makespan": ls, "ratio": trained / ls, "lb_max_proc": lb1,
                     "lb_mean_load": lb2})
    return rows


def cmd_gradcheck(cfg, args) -> int:
    from .gradcheck import gradient_check
    rows = [gradient_check(seed) for seed in range(args.instances)]
    worst = max(r["max_rel_error"] for r in rows)
    ex.write_csv(cfg.output_path() / "gradcheck.csv", ["seed", "n_tasks", "max_rel_error", "worst_block"],
                 rows, cfg.hash())
    ok = worst < args.tol
    print(f"gradcheck: {len(rows)} instances, max relative error {worst:.3e} ({'pass' if ok else 'FAIL'})")
    return 0 if ok else 2


def cmd_oracle(cfg, args) -> int:
    if cfg.problem != "mrrc-det":
        raise ex.ConfigError("the oracle needs deterministic MRRC (problem: mrrc-det)")
    env = ex.make_env(cfg)
    rows = []
    for k, state in enumerate(ex.eval_states(cfg, env)):
        try:
            res = baselines.exact_optimal(state)
        except ValueError as exc:
            raise ex.ConfigError(str(exc)) from None
        sga = ex.sga_returns(env, [state])[0]
        rows.append({"instance": k, "seed": cfg.eval.seed + k, "optimal": res.value, "sga": sga,
                     "nodes": res.nodes, "first_action": format_action(res.first_action)})
    ex.write_csv(cfg.output_path() / "oracle.csv", ["instance", "seed", "optimal", "sga", "nodes", "first_action"],
                 rows, cfg.hash())
    print(f"oracle mean {np.mean([r['optimal'] for r in rows]):.2f} over {len(rows)} instances")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "transfer": cmd_transfer, "ablate": cmd_ablate,
            "ipms": cmd_ipms, "gradcheck": cmd_gradcheck, "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robosched", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"robosched {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, checkpoint=False, config_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="YAML experiment config")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        return p

    add("train", "train a policy for each configured seed")
    add("eval", "evaluate a checkpoint against SGA and the exact oracle", checkpoint=True)
    p = add("transfer", "evaluate one checkpoint at several problem sizes", checkpoint=True)
    p.add_argument("--sizes", help="comma list like 2x8,3x12 (default: config sizes)")
    p.add_argument("--reference", action="append", help="SIZE=CHECKPOINT trained directly at SIZE")
    p = add("ablate", "train and compare the ablation arms")
    p.add_argument("--arms", nargs="+", choices=ex.ARMS)
    p = add("ipms", "train or load a scheduling policy and compare with local search")
    p.add_argument("--checkpoint")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--gantt", type=int, help="also write the Gantt chart of this eval instance")
    p = add("gradcheck", "finite-difference check of the Q-network gradients", config_required=False)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    add("oracle", "exact optimum of every evaluation instance")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
        return COMMANDS[args.command](cfg, args)
    except (ex.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any runtime failure with exit code 2
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
