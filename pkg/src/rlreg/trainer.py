"""Asynchronous advantage actor-critic training and the greedy-teacher
supervised variant.

Workers are threads.  Each owns an environment, an episode and a private rng;
they share one :class:`~rlreg.nn.optim.SharedParameters` store.  With a single
worker everything runs on the calling thread and is bit-reproducible.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import EnvConfig, EpisodeState, greedy_optimal_action, reset, step
from .nn import losses
from .nn.checkpoint import save_checkpoint
from .nn.network import ForwardTape, LstmState, NetworkParams, backward, forward
from .nn.optim import SharedParameters
from .synthdata import ImagePair, PerturbationRange, sample_perturbation

log = logging.getLogger(__name__)

__all__ = ["A3CConfig", "EpisodeStats", "TrainReport", "TrajectoryWindow", "TrainingError",
           "a3c_gradients", "compute_returns", "greedy_optimal_action", "run_a3c", "run_sl"]


@dataclass
class A3CConfig:
    workers: int = 8
    lr: float = 1e-4
    gamma: float = 0.99
    beta: float = 0.1
    t_max: int = 30
    max_episodes: int = 20000
    env: EnvConfig = field(default_factory=EnvConfig)
    perturbation: PerturbationRange = field(default_factory=PerturbationRange)
    pair_every: int = 2
    seed: int = 0
    max_grad_norm: float | None = None
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class EpisodeStats:
    episode: int
    worker: int
    steps: int
    cum_reward: float
    terminal: bool          # reached the distance terminal (not truncated)
    final_distance: float


@dataclass
class TrainReport:
    episodes: list[EpisodeStats] = field(default_factory=list)
    wall_time: float = 0.0
    updates: int = 0
    error: str | None = None

    @property
    def episodes_completed(self) -> int:
        return len(self.episodes)

    def terminal_rate(self, last: int | None = None) -> float:
        eps = self.episodes[-last:] if last else self.episodes
        return float(np.mean([e.terminal for e in eps])) if eps else 0.0


class TrainingError(RuntimeError):
    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


@dataclass
class TrajectoryWindow:
    tape: ForwardTape
    logits: np.ndarray
    values: np.ndarray
    actions: list[int]
    rewards: list[float]
    bootstrap: float
    start_state: LstmState


def compute_returns(rewards: Sequence[float], bootstrap: float, gamma: float) -> list[float]:
    """``R_t = r_t + gamma * R_{t+1}`` seeded with ``bootstrap`` after the last step."""
    out = [0.0] * len(rewards)
    acc = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def a3c_gradients(window: TrajectoryWindow, params: NetworkParams, gamma: float,
                  beta: float) -> dict[str, np.ndarray]:
    returns = compute_returns(window.rewards, window.bootstrap, gamma)
    _, d_logits, d_values = losses.actor_critic_loss(window.logits, window.values,
                                                     window.actions, returns, beta)
    return backward(params, window.tape, d_logits, d_values)


def sl_gradients(window: TrajectoryWindow, params: NetworkParams,
                 gamma: float) -> dict[str, np.ndarray]:
    returns = compute_returns(window.rewards, window.bootstrap, gamma)
    _, d_logits, d_values = losses.supervised_loss(window.logits, window.values,
                                                   window.actions, returns)
    return backward(params, window.tape, d_logits, d_values)


def sample_action(logits: np.ndarray, rng: np.random.Generator) -> int:
    z = np.asarray(logits, dtype=np.float64)
    p = np.exp(z - z.max())
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(p) - 1))


class _Coordinator:
    """Episode accounting, logging and checkpointing shared by all workers."""

    def __init__(self, cfg: A3CConfig, shared: SharedParameters,
                 on_episode: Callable[[EpisodeStats], None] | None):
        self.cfg = cfg
        self.shared = shared
        self.report = TrainReport()
        self.stop = threading.Event()
        self._lock = threading.Lock()
        self._claimed = 0
        self._on_episode = on_episode
        self._log = None
        if cfg.log_path:
            Path(cfg.log_path).parent.mkdir(parents=True, exist_ok=True)
            self._log = open(cfg.log_path, "a")

    def claim(self) -> int | None:
        with self._lock:
            if self.stop.is_set() or self._claimed >= self.cfg.max_episodes:
                return None
            self._claimed += 1
            return self._claimed - 1

    def finish(self, stats: EpisodeStats) -> None:
        with self._lock:
            self.report.episodes.append(stats)
            if self._log:
                self._log.write(json.dumps({k: v for k, v in asdict(stats).items()
                                            if k != "final_distance"}) + "\n")
                self._log.flush()
            done = len(self.report.episodes)
            every = self.cfg.checkpoint_every
            if every and self.cfg.checkpoint_dir and done % every == 0:
                self.save(Path(self.cfg.checkpoint_dir) / f"ckpt_{done:06d}.rgnn")
        if self._on_episode:
            self._on_episode(stats)

    def save(self, path: Path) -> None:
        save_checkpoint(self.shared.snapshot(), self.shared.adam.copy(), path)

    def close(self) -> None:
        if self._log:
            self._log.close()


def _worker(worker_id: int, coord: _Coordinator, dataset: Sequence[ImagePair], teacher: bool) -> None:
    cfg = coord.cfg
    env_cfg = cfg.env
    shared = coord.shared
    rng = np.random.default_rng([cfg.seed, worker_id])
    pair: ImagePair | None = None
    local_episodes = 0
    while True:
        index = coord.claim()
        if index is None:
            return
        if pair is None or local_episodes % cfg.pair_every == 0:
            pair = dataset[int(rng.integers(len(dataset)))]
        local_episodes += 1
        perturb = sample_perturbation(rng, cfg.perturbation)
        env_state, obs = reset(pair, perturb, env_cfg, rng)
        lstm = LstmState.zeros(shared.config)
        cum_reward, terminal, truncated, last_distance = 0.0, False, False, float("nan")
        while not terminal:
            if coord.stop.is_set():
                return
            params = shared.snapshot()
            window = _run_window(params, env_state, obs, lstm, env_cfg, cfg.t_max, rng, teacher)
            obs, lstm = window.pop("obs"), window.pop("lstm")
            result = window.pop("result")
            cum_reward += sum(window["rewards"])
            terminal, truncated, last_distance = result.terminal, result.truncated, result.distance
            if terminal and not truncated:
                bootstrap = 0.0
            else:
                _, bootstrap, _, _ = forward(params, obs, lstm)
            traj = TrajectoryWindow(bootstrap=bootstrap, **window)
            if teacher:
                grads = sl_gradients(traj, params, cfg.gamma)
            else:
                grads = a3c_gradients(traj, params, cfg.gamma, cfg.beta)
            shared.apply(grads)
            with coord._lock:
                coord.report.updates += 1
        coord.finish(EpisodeStats(index, worker_id, env_state.step, cum_reward,
                                  not truncated, last_distance))


def _run_window(params: NetworkParams, env_state: EpisodeState, obs: np.ndarray, lstm: LstmState,
                env_cfg: EnvConfig, t_max: int, rng: np.random.Generator, teacher: bool) -> dict:
    start_state = lstm.copy()
    tape = ForwardTape()
    logits, values, actions, rewards = [], [], [], []
    result = None
    for _ in range(t_max):
        lg, v, lstm, cache = forward(params, obs, lstm)
        a = greedy_optimal_action(env_state, env_cfg) if teacher else sample_action(lg, rng)
        result = step(env_state, a, env_cfg)
        tape.append(cache)
        logits.append(lg)
        values.append(v)
        actions.append(a)
        rewards.append(result.reward)
        obs = result.obs
        if result.terminal:
            break
    return dict(tape=tape, logits=np.array(logits), values=np.array(values), actions=actions,
                rewards=rewards, start_state=start_state, obs=obs, lstm=lstm, result=result)


def _train(cfg: A3CConfig, dataset: Sequence[ImagePair], shared: SharedParameters, teacher: bool,
           on_episode: Callable[[EpisodeStats], None] | None) -> TrainReport:
    if not dataset:
        raise ValueError("dataset is empty")
    shared.lr = cfg.lr
    shared.max_grad_norm = cfg.max_grad_norm
    coord = _Coordinator(cfg, shared, on_episode)
    failures: list[BaseException] = []
    t0 = time.perf_counter()

    def run(wid: int) -> None:
        try:
            _worker(wid, coord, dataset, teacher)
        except BaseException as exc:  # surfaced after join
            failures.append(exc)
            coord.stop.set()

    try:
        if cfg.workers == 1:
            run(0)
        else:
            threads = [threading.Thread(target=run, args=(w,), name=f"worker-{w}", daemon=True)
                       for w in range(cfg.workers)]
            for th in threads:
                th.start()
            try:
                for th in threads:
                    while th.is_alive():
                        th.join(timeout=0.5)
            except KeyboardInterrupt:
                coord.stop.set()
                for th in threads:
                    th.join()
                raise
    finally:
        coord.report.wall_time = time.perf_counter() - t0
        coord.report.episodes.sort(key=lambda e: e.episode)
        coord.close()
    if failures:
        exc = failures[0]
        if isinstance(exc, KeyboardInterrupt):
            raise exc
        coord.report.error = f"{type(exc).__name__}: {exc}"
        raise TrainingError(f"worker failed: {coord.report.error}", coord.report) from exc
    return coord.report


def run_a3c(cfg: A3CConfig, dataset: Sequence[ImagePair], shared: SharedParameters,
            on_episode: Callable[[EpisodeStats], None] | None = None) -> TrainReport:
    """Train ``shared`` in place with asynchronous advantage actor-critic."""
    return _train(cfg, dataset, shared, teacher=False, on_episode=on_episode)


def run_sl(cfg: A3CConfig, dataset: Sequence[ImagePair], shared: SharedParameters,
           on_episode: Callable[[EpisodeStats], None] | None = None) -> TrainReport:
    """Train ``shared`` in place by imitating the greedy teacher, which also
    drives the episodes."""
    return _train(cfg, dataset, shared, teacher=True, on_episode=on_episode)
