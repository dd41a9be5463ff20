"""Training loop, evaluation protocol and curve export.

A run directory holds ``config.txt`` (the verbatim config), ``metrics.csv``
(one row per update, headed by the config hash), ``timing.csv`` (wall-clock
per update, kept apart so metrics are reproducible byte for byte) and
``checkpoints/update_NNNNNN.bin``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .agent import Agent
from .checkpoint import load_module, save_module
from .config import ConfigError, RunConfig, config_hash
from .envs import EnvStream, RandomPolicy, eval_seed, make_env, make_vector_env
from .nn import Adam
from .ppo import NonFiniteLossError, RolloutBuffer, act, ppo_update
from .world import reset_world

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
CONFIG_FILE = "config.txt"
CURVES_FILE = "curves.csv"
HASH_PREFIX = "# config_sha256="


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class MetricsRow:
    global_step: int
    update: int
    episodes: int
    mean_score: float | None
    max_score: float | None
    mean_length: float | None
    mean_r_int: float
    world_loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    unique_states: int | None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def cells(self) -> list[str]:
        return ["" if v is None else repr(float(v)) if isinstance(v, float) else str(v) for v in asdict(self).values()]


def _scores(infos) -> tuple[int, float | None, float | None, float | None]:
    if not infos:
        return 0, None, None, None
    scores = np.array([i.score for i in infos])
    lengths = np.array([i.length for i in infos])
    return len(infos), float(scores.mean()), float(scores.max()), float(lengths.mean())


def checkpoint_path(run_dir, update: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"update_{update:06d}.bin"


def latest_checkpoint(run_dir) -> Path | None:
    found = sorted((Path(run_dir) / "checkpoints").glob("update_*.bin"))
    return found[-1] if found else None


class Collector:
    """Steps the vector env with the agent, carrying the world state across rollouts."""

    def __init__(self, agent: Agent, venv, rng: np.random.Generator, cfg: RunConfig):
        self.agent, self.venv, self.rng, self.cfg = agent, venv, rng, cfg
        self.obs = venv.reset()
        self.state = agent.initial_state(venv.n)
        self.current, self.after = agent.observe(self.state, self.obs)

    def collect(self, buf: RolloutBuffer) -> list:
        infos_all = []
        buf.init_state = self.state
        for t in range(buf.horizon):
            actions, logp, values = act(self.agent.policy, self.current.h_p, self.rng)
            next_obs, r_ext, dones, infos = self.venv.step(actions)
            infos_all.extend(infos)
            state = reset_world(self.after, dones)
            nxt, after = self.agent.observe(state, next_obs)
            r_int = np.where(dones, 0.0, nxt.r_int)
            buf.add(t, self.obs, actions, logp, values, r_int, r_ext, dones, self.cfg.intrinsic_coef, self.cfg.extrinsic_coef)
            self.obs, self.state, self.current, self.after = next_obs, state, nxt, after
        _, _, last_value = act(self.agent.policy, self.current.h_p, self.rng, greedy=True)
        buf.finish(last_value, self.cfg.gamma, self.cfg.lam)
        return infos_all


def train(cfg: RunConfig, out_dir) -> Path:
    """Run the full collect/update loop; returns the run directory."""
    run = Path(out_dir)
    (run / "checkpoints").mkdir(parents=True, exist_ok=True)
    digest = cfg.save(run / CONFIG_FILE)

    venv = make_vector_env(cfg.env, cfg.n_envs, cfg.seed, cfg.frameskip, cfg.frame_stack, cfg.frame_size, cfg.episode_cap, cfg.env_workers)
    agent = Agent.from_config(cfg, venv.action_count)
    optimizer = Adam(agent.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5A17]))
    hyper = cfg.ppo_hyper()
    collector = Collector(agent, venv, rng, cfg)
    obs_shape = (cfg.frame_stack, cfg.frame_size, cfg.frame_size)
    last_good: Path | None = None

    with open(run / METRICS_FILE, "w", newline="") as mf, open(run / TIMING_FILE, "w", newline="") as tf:
        metrics = csv.writer(mf, lineterminator="\r\n")
        timing = csv.writer(tf, lineterminator="\r\n")
        mf.write(f"{HASH_PREFIX}{digest}\r\n")
        metrics.writerow(MetricsRow.columns())
        timing.writerow(["update", "seconds"])
        start = time.perf_counter()
        try:
            for update in range(1, cfg.n_updates + 1):
                buf = RolloutBuffer(cfg.rollout, cfg.n_envs, obs_shape, cfg.dtype)
                infos = collector.collect(buf)
                stats = ppo_update(agent, optimizer, buf, hyper, rng)
                episodes, mean_score, max_score, mean_len = _scores(infos)
                row = MetricsRow(
                    global_step=update * cfg.steps_per_update,
                    update=update,
                    episodes=episodes,
                    mean_score=mean_score,
                    max_score=max_score,
                    mean_length=mean_len,
                    mean_r_int=float(buf.r_int.mean()),
                    world_loss=stats["world_loss"],
                    policy_loss=stats["policy_loss"],
                    value_loss=stats["value_loss"],
                    entropy=stats["entropy"],
                    grad_norm=stats["grad_norm"],
                    unique_states=venv.unique_states,
                )
                metrics.writerow(row.cells())
                mf.flush()
                timing.writerow([update, f"{time.perf_counter() - start:.3f}"])
                tf.flush()
                log.info(
                    "update %d/%d step %d  L_W %.3g  r_int %.3g  episodes %d  unique %s",
                    update, cfg.n_updates, row.global_step, row.world_loss, row.mean_r_int, episodes, row.unique_states,
                )
                if update % cfg.checkpoint_every == 0 or update == cfg.n_updates:
                    last_good = checkpoint_path(run, update)
                    save_module(last_good, agent)
        except NonFiniteLossError as e:
            raise TrainingAborted(f"{e}; last good checkpoint: {last_good}", last_good) from e
        finally:
            venv.close()
    return run


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    mean: float
    std: float
    scores: list[float]
    lengths: list[int]

    def __str__(self) -> str:
        return f"{self.mean:.4f} ± {self.std:.4f} over {len(self.scores)} episodes"


def score_summary(scores) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single score)."""
    scores = np.asarray(scores, dtype=np.float64)
    std = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
    return float(scores.mean()), std


def load_agent(checkpoint, cfg: RunConfig, n_actions: int) -> Agent:
    agent = Agent.from_config(cfg, n_actions)
    try:
        load_module(checkpoint, agent)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"checkpoint {checkpoint} does not fit this configuration: {e}") from e
    return agent


def config_for_checkpoint(checkpoint) -> RunConfig:
    path = Path(checkpoint).resolve().parent.parent / CONFIG_FILE
    if not path.exists():
        raise ConfigError(f"no {CONFIG_FILE} next to {checkpoint}; pass the run config explicitly")
    return RunConfig.load(path)


def evaluate(
    checkpoint,
    env: str | None = None,
    episodes: int = 10,
    cfg: RunConfig | None = None,
    greedy: bool = True,
    agent: Agent | None = None,
) -> EvalResult:
    """Play ``episodes`` games on evaluation-only seeds; extrinsic score mean ± sample std."""
    cfg = cfg or config_for_checkpoint(checkpoint)
    env = env or cfg.env
    streams = [
        EnvStream(make_env(env), i, cfg.seed, cfg.frameskip, cfg.frame_stack, cfg.frame_size, cfg.episode_cap, seed_fn=lambda ep, i=i: eval_seed(cfg.seed, i))
        for i in range(episodes)
    ]
    n_actions = streams[0].action_count
    if agent is None:
        state_file = _checkpoint_actions(checkpoint)
        if state_file != n_actions:
            raise ConfigError(f"checkpoint was trained with {state_file} actions but {env} has {n_actions}")
        agent = load_agent(checkpoint, cfg, n_actions)
    elif agent.n_actions != n_actions:
        raise ConfigError(f"agent has {agent.n_actions} actions but {env} has {n_actions}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE7A1]))
    obs = np.stack([s.reset() for s in streams])
    state = agent.initial_state(episodes)
    live = np.ones(episodes, dtype=bool)
    scores = np.zeros(episodes)
    lengths = np.zeros(episodes, dtype=np.int64)
    while live.any():
        step, state = agent.observe(state, obs)
        actions, _, _ = act(agent.policy, step.h_p, rng, greedy=greedy)
        for i in np.flatnonzero(live):
            s = streams[i]
            o, _, done, info = s.step(int(actions[i]))
            if done:
                live[i] = False
                scores[i], lengths[i] = info.score, info.length
            else:
                obs[i] = o
    for s in streams:
        s.env.close()
    mean, std = score_summary(scores)
    return EvalResult(mean, std, scores.tolist(), lengths.tolist())


def _checkpoint_actions(checkpoint) -> int:
    from .checkpoint import load_arrays

    arrays = load_arrays(checkpoint)
    try:
        return int(arrays["policy.actor_out.bias"].shape[0])
    except KeyError:
        raise ConfigError(f"{checkpoint} holds no policy head") from None


# ---------------------------------------------------------------- baselines


@dataclass
class BaselineResult:
    steps: int
    episodes: int
    mean_length: float
    mean_score: float
    unique_states: int | None


def random_baseline(env: str, n_envs: int, steps: int, seed: int = 0, frameskip: int = 4, cap: int = 4500) -> BaselineResult:
    """Uniform-random actions through the same vector pipeline as training."""
    venv = make_vector_env(env, n_envs, seed, frameskip=frameskip, cap=cap)
    policy = RandomPolicy(venv.action_count, seed)
    venv.reset()
    scores, lengths = [], []
    for _ in range(-(-steps // n_envs)):
        _, _, _, infos = venv.step(policy(n_envs))
        scores += [i.score for i in infos]
        lengths += [i.length for i in infos]
    venv.close()
    return BaselineResult(
        steps=-(-steps // n_envs) * n_envs,
        episodes=len(lengths),
        mean_length=float(np.mean(lengths)) if lengths else math.nan,
        mean_score=float(np.mean(scores)) if scores else math.nan,
        unique_states=venv.unique_states,
    )


# ---------------------------------------------------------------- metrics files


def read_metrics(run_dir) -> tuple[str | None, list[dict], int]:
    """Parse metrics.csv; returns (config hash, valid rows, number of skipped rows)."""
    text = (Path(run_dir) / METRICS_FILE).read_text()
    digest = None
    body = []
    for line in text.splitlines():
        if line.startswith(HASH_PREFIX):
            digest = line[len(HASH_PREFIX) :].strip()
        elif not line.startswith("#"):
            body.append(line)
    rows, skipped = [], 0
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    required = ("global_step", "mean_r_int", "world_loss")
    for raw in reader:
        try:
            row = {
                "global_step": int(raw["global_step"]),
                "episodes": int(raw["episodes"]) if raw.get("episodes") else 0,
                "max_score": float(raw["max_score"]) if raw.get("max_score") else None,
                "mean_r_int": float(raw["mean_r_int"]),
                "world_loss": float(raw["world_loss"]),
                "mean_length": float(raw["mean_length"]) if raw.get("mean_length") else None,
                "unique_states": int(raw["unique_states"]) if raw.get("unique_states") else None,
            }
            if any(raw.get(k) in (None, "") for k in required) or None in raw:
                raise ValueError("missing fields")
            if not all(math.isfinite(row[k]) for k in ("mean_r_int", "world_loss")):
                raise ValueError("non-finite")
        except (TypeError, ValueError, KeyError):
            skipped += 1
            continue
        rows.append(row)
    return digest, rows, skipped


@dataclass
class ReportResult:
    path: Path
    rows: int
    warnings: int


def report(run_dir) -> ReportResult:
    """Write curves.csv: step, best-so-far episode score, mean r_int, L_W."""
    run = Path(run_dir)
    _, rows, skipped = read_metrics(run)
    warnings = skipped
    if skipped:
        log.warning("%s: skipped %d corrupt metrics rows", run / METRICS_FILE, skipped)
    if not rows:
        warnings += 1
        log.warning("%s: no usable metrics rows", run / METRICS_FILE)
    out = run / CURVES_FILE
    best = None
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(["step", "best_score", "mean_r_int", "world_loss"])
        for row in rows:
            if row["max_score"] is not None:
                best = row["max_score"] if best is None else max(best, row["max_score"])
            w.writerow([row["global_step"], "" if best is None else repr(best), repr(row["mean_r_int"]), repr(row["world_loss"])])
    return ReportResult(out, len(rows), warnings)


def verify_config_hash(run_dir) -> bool:
    digest, _, _ = read_metrics(run_dir)
    return digest == config_hash((Path(run_dir) / CONFIG_FILE).read_text())
