"""Experiment driver: seeds, CSV logging, probe evaluation, aggregation.

One CSV row per (seed, iteration) with the pinned header

    seed,iteration,env_steps,reward_evals,mean_total_reward,wce_sq

env_steps and reward_evals are cumulative training-budget counters; the
probe reward comes from 8 held-out episodes per iteration whose reward
evaluations go to a separate meter and never touch the budget columns.
Floats are written with repr so identical configs reproduce byte-identical
files.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .episodes import RewardMeter, evaluate_rewards, make_env, rollout_batch
from .errors import ConfigError
from .training import (AlgoVariant, TrainParams, init_train_state,
                       parse_algo, train_iteration)

CSV_HEADER = "seed,iteration,env_steps,reward_evals,mean_total_reward,wce_sq"
SUMMARY_HEADER = ("iteration,env_steps,reward_evals,"
                  "reward_mean,reward_se,wce_sq_mean")


@dataclass
class ExperimentConfig:
    env_id: str
    algo: str
    big_batch: int = 64
    small_batch: int = 8
    iterations: int = 500
    seeds: int = 10
    gamma: float = 0.995
    lr: float = 3e-4
    ppo_clip: float = 0.2
    gp_minibatch: int = 256
    kernel_loss_form: str = "nlml"
    advantage_kind: str = "default"
    seed_base: int = 0
    probe_episodes: int = 8
    out: str = ""

    def validate(self) -> "ExperimentConfig":
        if self.iterations < 1 or self.seeds < 1 or self.probe_episodes < 1:
            raise ConfigError("iterations, seeds and probe size must be >= 1")
        if not self.out:
            raise ConfigError("an output path is required")
        self.variant()  # raises on a bad algo name
        self.train_params()  # raises on bad batch sizes / rates
        make_env(self.env_id)
        return self

    def variant(self) -> AlgoVariant:
        v = parse_algo(self.algo)
        v.clip_eps = self.ppo_clip
        v.advantage_kind = self.advantage_kind
        return v

    def train_params(self) -> TrainParams:
        return TrainParams(big_batch=self.big_batch,
                           small_batch=self.small_batch,
                           gamma=self.gamma, lr=self.lr,
                           gp_minibatch=self.gp_minibatch,
                           kernel_loss_form=self.kernel_loss_form)


def probe_reward(env, policy, count: int, rng) -> float:
    """Mean total reward over `count` fresh episodes, charged to a
    throwaway meter so the training budget is untouched."""
    meter = RewardMeter()
    eps = rollout_batch(env, policy, count, rng)
    return float(np.mean([evaluate_rewards(env, ep, meter).total_reward()
                          for ep in eps]))


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def run_seed(config: ExperimentConfig, seed: int) -> list:
    """All iteration records for one seed. Seeds are independent streams,
    so they can run as separate processes and concatenate."""
    env = make_env(config.env_id)
    variant = config.variant()
    params = config.train_params()
    master = np.random.default_rng(seed)
    train_rng, probe_rng = master.spawn(2)
    state = init_train_state(env, variant, params, train_rng)
    records = []
    for _ in range(config.iterations):
        rec = train_iteration(variant, params, state, env, train_rng)
        rec.seed = seed
        rec.mean_total_reward = probe_reward(env, state.policy,
                                             config.probe_episodes, probe_rng)
        records.append(rec)
    return records


def run_experiment(config: ExperimentConfig) -> str:
    """Run all seeds and write the CSV; returns the output path."""
    config.validate()
    with open(config.out, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for s in range(config.seeds):
            for rec in run_seed(config, config.seed_base + s):
                fh.write(f"{rec.seed},{rec.iteration},{rec.env_steps},"
                         f"{rec.reward_evals},{_fmt(rec.mean_total_reward)},"
                         f"{_fmt(rec.wce_sq)}\n")
    return config.out


def read_rows(path: str) -> list[dict]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {header!r}")
        rows = []
        for ln, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 6:
                raise ConfigError(f"{path}:{ln}: bad row")
            rows.append({
                "seed": int(parts[0]), "iteration": int(parts[1]),
                "env_steps": int(parts[2]), "reward_evals": int(parts[3]),
                "mean_total_reward": float(parts[4]),
                "wce_sq": float(parts[5]) if parts[5] else None})
    return rows


def summarize(paths, out: str) -> str:
    """Pool per-seed CSVs from one experiment into mean and standard-error
    columns per iteration. The inputs must cover every iteration with the
    same set of distinct seeds; mixing incompatible runs is an error."""
    rows = []
    for p in paths:
        rows.extend(read_rows(p))
    if not rows:
        raise ConfigError("no rows to summarize")
    seen = set()
    for r in rows:
        key = (r["seed"], r["iteration"])
        if key in seen:
            raise ConfigError(f"duplicate seed/iteration pair {key}")
        seen.add(key)
    iters = sorted({r["iteration"] for r in rows})
    seeds = sorted({r["seed"] for r in rows})
    want = {(s, i) for s in seeds for i in iters}
    if seen != want:
        raise ConfigError("inputs do not form a full seed x iteration grid")
    has_wce = {r["wce_sq"] is not None for r in rows}
    if len(has_wce) > 1:
        raise ConfigError("inputs mix quadrature and plain runs")
    by_iter = {i: [] for i in iters}
    for r in rows:
        by_iter[r["iteration"]].append(r)
    with open(out, "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for i in iters:
            grp = by_iter[i]
            rew = np.array([r["mean_total_reward"] for r in grp])
            se = float(rew.std(ddof=1) / np.sqrt(len(rew))) if len(rew) > 1 \
                else 0.0
            wce = ""
            if has_wce == {True}:
                wce = repr(float(np.mean([r["wce_sq"] for r in grp])))
            fh.write(f"{i},{_fmt(np.mean([r['env_steps'] for r in grp]))},"
                     f"{_fmt(np.mean([r['reward_evals'] for r in grp]))},"
                     f"{repr(float(rew.mean()))},{repr(se)},{wce}\n")
    return out


def parse_config_file(path: str) -> dict:
    """Flat `key = value` lines, '#' comments; keys mirror the CLI flags
    (underscores or dashes both accepted)."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    casts = {"env_id": str, "algo": str, "kernel_loss_form": str,
             "advantage_kind": str, "out": str,
             "gamma": float, "lr": float, "ppo_clip": float}
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            val = val.strip()
            if key not in types:
                raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
            cast = casts.get(key, int)
            try:
                out[key] = cast(val)
            except ValueError:
                raise ConfigError(f"{path}:{ln}: bad value for {key!r}")
    return out


def config_from(file_values: dict, flag_values: dict) -> ExperimentConfig:
    """Flags override file values."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        return ExperimentConfig(**merged).validate()
    except TypeError as exc:
        raise ConfigError(str(exc))
