"""Seeded experiment configuration and the building blocks behind the CLI.

A config is a nested YAML mapping; every field has a default, unknown keys
are rejected.  The config hash is taken over the normalized mapping, so two
files that differ only in layout or in omitted defaults hash identically.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, baselines, ipms, qnet, trainer
from .gridworld import MotionModel, generate_maze
from .mrrc import MRRCEnv, RewardRule, make_world, run_episode

PROBLEMS = ("mrrc-det", "mrrc-stoch", "ipms")
ARMS = ("full", "single_layer", "uniform_p", "max_op")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MazeConfig:
    width: int = 11
    height: int = 11
    seed: int = 0
    dot_density: float = 0.3
    route_samples: int = 100


@dataclass(frozen=True)
class ModelConfig:
    d: int = 16
    T1: int = 3
    T2: int = 3
    M: int = 20
    N: int = 8
    tau: float = 1.0
    time_scale: float = 10.0
    bias: bool = True


@dataclass(frozen=True)
class EvalConfig:
    instances: int = 50
    seed: int = 100_000
    oracle: bool = True
    # held-out instances scored during training; "best" keeps the parameters
    # with the highest validation return, "last" keeps the final ones
    validation: int = 20
    validation_seed: int = 200_000
    keep: str = "best"

    def __post_init__(self):
        if self.keep not in ("best", "last"):
            raise ValueError(f"keep must be best or last, got {self.keep!r}")
        if self.instances < 1 or self.validation < 0:
            raise ValueError("instances must be >= 1 and validation >= 0")
        if abs(self.seed - self.validation_seed) < max(self.instances, self.validation):
            raise ValueError("evaluation and validation seed ranges overlap")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "mrrc-det"
    reward: str = "linear"
    sizes: tuple = ((2, 8),)
    maze: MazeConfig = MazeConfig()
    model: ModelConfig = ModelConfig()
    train: trainer.TrainConfig = trainer.TrainConfig()
    eval: EvalConfig = EvalConfig()
    seeds: tuple = (0,)
    output_dir: str = "runs"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.reward not in ("linear", "nonlinear"):
            raise ConfigError(f"reward must be linear or nonlinear, got {self.reward!r}")
        if not self.sizes or any(len(s) != 2 or min(s) < 1 for s in self.sizes):
            raise ConfigError("sizes must be a non-empty list of [robots, tasks] pairs")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    @property
    def size(self) -> tuple[int, int]:
        return tuple(self.sizes[0])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sizes"] = [list(s) for s in self.sizes]
        d["seeds"] = list(self.seeds)
        return d

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")  # where results go does not change them
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def output_path(self) -> Path:
        return Path(os.environ.get("ROBOSCHED_OUTPUT_DIR", self.output_dir))


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = dict(data)
    nested = {"maze": MazeConfig, "model": ModelConfig, "train": trainer.TrainConfig, "eval": EvalConfig}
    for key, cls in nested.items():
        data[key] = _build(cls, data.get(key), key)
    if "sizes" in data:
        data["sizes"] = tuple(tuple(int(v) for v in s) for s in data["sizes"])
    if "seeds" in data:
        data["seeds"] = tuple(int(s) for s in data["seeds"])
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data or {})


def with_overrides(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """Copy of ``cfg`` with nested fields replaced, e.g. ``train={"episodes": 0}``."""
    changes = {}
    for key, value in sections.items():
        current = getattr(cfg, key)
        changes[key] = dataclasses.replace(current, **value) if dataclasses.is_dataclass(current) else value
    return dataclasses.replace(cfg, **changes)


# ---------------------------------------------------------------------------
# environments

@functools.lru_cache(maxsize=8)
def _world(problem, reward, maze_cfg: MazeConfig):
    maze = generate_maze(maze_cfg.seed, maze_cfg.width, maze_cfg.height, maze_cfg.dot_density)
    motion = MotionModel.deterministic() if problem == "mrrc-det" else MotionModel.stochastic()
    return make_world(maze, motion, RewardRule(reward), maze_cfg.route_samples, maze_cfg.seed)


def make_env(cfg: ExperimentConfig, size=None):
    robots, tasks = size or cfg.size
    if cfg.problem == "ipms":
        return ipms.IPMSEnv(robots, tasks)
    scale = 100.0 if cfg.reward == "linear" else 1.0
    return MRRCEnv(_world(cfg.problem, cfg.reward, cfg.maze), robots, tasks, reward_scale=scale)


def eval_states(cfg: ExperimentConfig, env) -> list:
    return [env.initial(cfg.eval.seed + k) for k in range(cfg.eval.instances)]


def init_model(cfg: ExperimentConfig, seed: int, arm: str = "full") -> qnet.QNetParams:
    if arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}")
    m = cfg.model
    return qnet.init_params(np.random.default_rng([seed, 1]), d=m.d, in_dim=2 if cfg.problem == "ipms" else 1,
                            tau=m.tau, T1=m.T1, T2=m.T2, M=m.M, N=m.N, time_scale=m.time_scale,
                            bias=m.bias, two_step=arm != "single_layer", uniform_presence=arm == "uniform_p")


def arm_train_config(cfg: ExperimentConfig, seed: int, arm: str = "full") -> trainer.TrainConfig:
    return dataclasses.replace(cfg.train, seed=seed, select="max" if arm == "max_op" else cfg.train.select)


def workers() -> int:
    try:
        return max(1, int(os.environ.get("ROBOSCHED_WORKERS", "1")))
    except ValueError:
        raise ConfigError("ROBOSCHED_WORKERS must be an integer") from None


def _pool_map(fn, items):
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(fn, items))  # results come back in input order


# ---------------------------------------------------------------------------
# evaluation

def policy_returns(env, states, params, select: str = "auction", seed: int = 0) -> list[float]:
    return trainer.evaluate(env, states, params, seed, select)


def sga_returns(env, states) -> list[float]:
    return [run_episode(env, s, baselines.sga_policy, np.random.default_rng([0, k]))[0]
            for k, s in enumerate(states)]


def _oracle(state):
    try:
        return baselines.exact_optimal(state).value
    except ValueError:
        return None


def oracle_values(states, cache: baselines.OracleCache | None = None) -> list[float | None]:
    """Exact optimum per state, ``None`` where the guard or stochastic motion rules it out."""
    if cache is not None:
        out = []
        for s in states:
            try:
                out.append(cache.value(s))
            except ValueError:
                out.append(None)
        return out
    return _pool_map(_oracle, list(states))


def pct(values, reference) -> float | None:
    if reference is None or any(r is None for r in reference) or float(np.sum(reference)) == 0:
        return None
    return 100.0 * float(np.sum(values)) / float(np.sum(reference))


@dataclass
class RunResult:
    params: qnet.QNetParams
    log: list[dict]
    arm: str = "full"
    seed: int = 0


def validation_states(cfg: ExperimentConfig, env) -> list:
    return [env.initial(cfg.eval.validation_seed + k) for k in range(cfg.eval.validation)]


def reference_returns(cfg: ExperimentConfig, env, states, cache_path=None):
    """``(sga, optimal)`` per state; either is ``None`` when it does not apply."""
    if cfg.problem == "ipms" or not states:
        return None, None
    sga = sga_returns(env, states)
    optimal = None
    if cfg.eval.oracle and cfg.problem == "mrrc-det":
        cache = baselines.OracleCache(cache_path) if cache_path else None
        optimal = oracle_values(states, cache)
        if any(v is None for v in optimal):
            optimal = None
    return sga, optimal


def train_run(cfg: ExperimentConfig, seed: int, arm: str = "full", size=None,
              checkpoint_dir: Path | None = None) -> RunResult:
    """Train one arm with one seed; progress is scored on the validation instances."""
    env = make_env(cfg, size)
    tcfg = arm_train_config(cfg, seed, arm)
    params = init_model(cfg, seed, arm)
    states = validation_states(cfg, env)
    cache = None if checkpoint_dir is None else Path(checkpoint_dir) / "oracle_cache.json"
    sga, optimal = reference_returns(cfg, env, states, cache)
    checkpoint = None
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        path = checkpoint_dir / f"ckpt_{arm}_seed{seed}.npz"
        checkpoint = lambda p, ep: qnet.save_checkpoint(p, path)
    res = trainer.train(tcfg, env, params, states, optimal, sga, checkpoint=checkpoint)
    keep = res.best_params if cfg.eval.keep == "best" and res.best_params is not None else res.params
    return RunResult(keep, res.log, arm, seed)


# ---------------------------------------------------------------------------
# CSV output

def fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(round(float(value), 6))
    return str(value)


def write_csv(path, header, rows, cfg_hash: str) -> Path:
    """CSV with a leading ``# robosched <version> config=<hash>`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# robosched {__version__} config={cfg_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row.get(h)) for h in header])
    return path


def read_csv(path) -> tuple[str, list[dict]]:
    """Returns ``(comment_line, rows)``."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        return first, list(csv.DictReader(fh))


def summary_row(method: str, returns, optimal=None, sga=None) -> dict:
    return {"method": method, "n": len(returns), "mean": float(np.mean(returns)),
            "std": float(np.std(returns)), "pct_optimal": pct(returns, optimal), "pct_sga": pct(returns, sga)}


SUMMARY_HEADER = ["method", "n", "mean", "std", "pct_optimal", "pct_sga"]
INSTANCE_HEADER = ["instance", "seed", "trained", "sga", "optimal"]
CURVE_HEADER = ["arm", "seed", "episode", "loss", "eval_mean_return", "eval_pct_optimal", "eval_pct_sga",
                "explore_prob"]
TRANSFER_HEADER = ["robots", "tasks", "mean", "std", "sga_mean", "pct_sga", "pct_optimal", "reference_mean",
                   "ratio"]
IPMS_HEADER = ["instance", "seed", "trained_makespan", "local_search_makespan", "ratio", "lb_max_proc",
               "lb_mean_load"]
