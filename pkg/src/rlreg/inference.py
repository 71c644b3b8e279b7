"""Applying a trained agent: greedy rollout with value-threshold stopping and
Monte Carlo lookahead with value-weighted pose averaging."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (IDENTITY, N_ACTIONS, SimilarityTransform, apply_action, compose,
                       resize_image, warp_image)
from .nn.network import LstmState, NetworkParams, forward
from .synthdata import ImagePair, perturbation_warp
from .trainer import sample_action

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceConfig:
    trs: float = 10.0
    n_mc: int = 20
    d_mc: int = 10
    max_steps: int = 500
    mode: str = "greedy"          # "greedy" | "mc"
    seed: int = 0

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if self.d_mc < 0:
            raise ValueError("d_mc must be >= 0")
        if self.mode not in ("greedy", "mc"):
            raise ValueError(f"mode must be 'greedy' or 'mc', got {self.mode!r}")


class Scene:
    """Renders network observations for a candidate pose.

    Holds only images: the fixed image and a moving-image source.  The
    synthetic source keeps the full field of view by re-rendering from the
    aligned moving image under ``pose . P``.
    """

    def __init__(self, fixed: np.ndarray, moving: np.ndarray, obs_size: int,
                 pre_warp: SimilarityTransform = IDENTITY):
        self._fixed_obs = resize_image(fixed, obs_size)
        self._moving = moving
        self._pre = pre_warp
        self.obs_size = obs_size

    @classmethod
    def from_pair(cls, pair: ImagePair, perturb: SimilarityTransform, obs_size: int) -> "Scene":
        return cls(pair.fixed, pair.moving_aligned, obs_size, perturbation_warp(perturb))

    def observe(self, pose: SimilarityTransform) -> np.ndarray:
        moving = warp_image(self._moving, compose(pose, self._pre),
                            out_shape=(self.obs_size, self.obs_size))
        return np.stack([self._fixed_obs, moving])


@dataclass
class TraceStep:
    action: int | None
    value: float
    pose: SimilarityTransform


@dataclass
class TrajectoryResult:
    pose: SimilarityTransform
    path_value: float
    step_values: list[float] = field(default_factory=list)


@dataclass
class RegistrationResult:
    transform: SimilarityTransform
    steps: int
    stop_reason: str               # "value_threshold" | "mc_aggregated" | "max_steps"
    trace: list[TraceStep] = field(default_factory=list)

    def to_dict(self) -> dict:
        pose = self.transform
        return {
            "pose": {"tx": pose.tx, "ty": pose.ty, "scale": pose.scale, "angle": pose.angle},
            "steps": self.steps,
            "stop_reason": self.stop_reason,
            "trace": [{"action": s.action, "value": s.value,
                       "pose": [s.pose.tx, s.pose.ty, s.pose.scale, s.pose.angle]}
                      for s in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def aggregate_trajectories(results: list[TrajectoryResult]) -> SimilarityTransform:
    """Path-value-weighted mean of ``[tx, ty, s, cos a, sin a]``.

    Falls back to the unweighted mean when any path value is non-positive.
    """
    if not results:
        raise ValueError("no trajectories to aggregate")
    v = np.array([r.path_value for r in results], dtype=np.float64)
    if np.any(v <= 0):
        log.debug("non-positive path values %s; using unweighted mean", v)
        w = np.full(len(results), 1.0 / len(results))
    else:
        w = v / v.sum()
    rows = np.array([[r.pose.tx, r.pose.ty, r.pose.scale,
                      math.cos(math.radians(r.pose.angle)), math.sin(math.radians(r.pose.angle))]
                     for r in results])
    tx, ty, s, c, sn = w @ rows
    return SimilarityTransform(float(tx), float(ty), float(s), math.degrees(math.atan2(sn, c)))


def mc_rollout(params: NetworkParams, scene: Scene, pose: SimilarityTransform, value: float,
               state: LstmState, cfg: InferenceConfig, rng: np.random.Generator) -> SimilarityTransform:
    """Simulate ``n_mc`` trajectories of ``d_mc`` actions from a triggered state.

    ``value`` and ``state`` are the value estimate and recurrent state produced
    at the trigger pose.  The first action of each trajectory is uniform, the
    rest are sampled from the policy.
    """
    results = []
    for _ in range(cfg.n_mc):
        lstm = state.copy()
        p = pose
        vals: list[float] = []
        a = int(rng.integers(N_ACTIONS))
        for depth in range(cfg.d_mc):
            p = apply_action(p, a)
            logits, v, lstm, _ = forward(params, scene.observe(p), lstm)
            vals.append(v)
            if depth + 1 < cfg.d_mc:
                a = sample_action(logits, rng)
        results.append(TrajectoryResult(p, value + sum(vals), vals))
    return aggregate_trajectories(results)


def register(params: NetworkParams, scene: Scene, cfg: InferenceConfig,
             rng: np.random.Generator | None = None) -> RegistrationResult:
    """Greedy policy rollout from identity; MC lookahead at the trigger in ``mc`` mode."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    pose = IDENTITY
    lstm = LstmState.zeros(params.config, params.dtype)
    trace: list[TraceStep] = []
    for _ in range(cfg.max_steps):
        logits, value, lstm, _ = forward(params, scene.observe(pose), lstm)
        if value >= cfg.trs:
            trace.append(TraceStep(None, value, pose))
            if cfg.mode == "mc":
                final = mc_rollout(params, scene, pose, value, lstm, cfg, rng)
                return RegistrationResult(final, len(trace), "mc_aggregated", trace)
            return RegistrationResult(pose, len(trace), "value_threshold", trace)
        a = int(np.argmax(logits))
        trace.append(TraceStep(a, value, pose))
        pose = apply_action(pose, a)
    return RegistrationResult(pose, len(trace), "max_steps", trace)


def register_greedy(params: NetworkParams, pair: ImagePair, perturb: SimilarityTransform,
                    cfg: InferenceConfig, obs_size: int | None = None,
                    rng: np.random.Generator | None = None) -> RegistrationResult:
    """Register a synthetic test case.  Only images reach the rollout loop."""
    scene = Scene.from_pair(pair, perturb, obs_size or params.config.input_size)
    return register(params, scene, cfg, rng)
