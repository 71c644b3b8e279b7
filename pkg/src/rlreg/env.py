"""The registration MDP.

The agent edits a pose ``T`` on the action lattice.  The moving image shown to
the network is always re-rendered from the aligned moving image under the
composed warp ``T . P`` (``P`` the perturbation warp), and the landmark error
is ``mean ||p - T . P . p||``.  Both vanish exactly when ``T`` reaches the
ground-truth recovery transform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (IDENTITY, N_ACTIONS, SimilarityTransform, apply_action, apply_points,
                       compose, image_center, resize_image, to_matrix, warp_image)
from .landmarks import LandmarkSet, landmarks_for, mean_landmark_distance
from .synthdata import ImagePair, perturbation_warp, recovery_transform


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    terminal_threshold: float = 1.0
    terminal_bonus: float = 10.0
    max_steps: int = 500
    reward_kind: str = "lme"          # "lme" | "matrix"
    landmarks: str = "detected"       # "detected" | "grid"
    n_landmarks: int = 16
    obs_size: int = 84

    def __post_init__(self):
        if self.terminal_threshold <= 0:
            raise ValueError("terminal_threshold must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.reward_kind not in ("lme", "matrix"):
            raise ValueError(f"reward_kind must be 'lme' or 'matrix', got {self.reward_kind!r}")
        if self.landmarks not in ("detected", "grid"):
            raise ValueError(f"landmarks must be 'detected' or 'grid', got {self.landmarks!r}")


@dataclass
class EpisodeState:
    pair: ImagePair
    perturbation: SimilarityTransform
    pose: SimilarityTransform             # T_t
    landmarks: LandmarkSet                # p_G
    warped_landmarks: np.ndarray          # P . p_G
    fixed_obs: np.ndarray
    obs_size: int
    step: int = 0
    done: bool = False
    center: tuple[float, float] = field(default=(0.0, 0.0))

    @property
    def target(self) -> SimilarityTransform:
        return recovery_transform(self.perturbation)

    def clone(self) -> "EpisodeState":
        # images and landmark arrays are never mutated, so sharing them is safe
        return replace(self)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminal: bool
    distance: float
    truncated: bool = False


def reward_matrix(pose: SimilarityTransform, target: SimilarityTransform) -> float:
    """Negative Frobenius distance between the two 2x3 matrices."""
    return -float(np.linalg.norm(to_matrix(pose) - to_matrix(target)))


def _pair_landmarks(pair: ImagePair, cfg: EnvConfig) -> LandmarkSet:
    key = ("landmarks", cfg.landmarks, cfg.n_landmarks)
    if key not in pair._cache:
        pair._cache[key] = landmarks_for(pair.moving_aligned, cfg.landmarks, cfg.n_landmarks)
    return pair._cache[key]


def _fixed_obs(pair: ImagePair, size: int) -> np.ndarray:
    key = ("fixed_obs", size)
    if key not in pair._cache:
        pair._cache[key] = resize_image(pair.fixed, size)
    return pair._cache[key]


def distance(state: EpisodeState, pose: SimilarityTransform, cfg: EnvConfig) -> float:
    """Alignment error of ``pose`` under the configured reward kind."""
    if cfg.reward_kind == "matrix":
        return -reward_matrix(pose, state.target)
    return mean_landmark_distance(state.landmarks.points, state.warped_landmarks, pose, state.center)


def observation(state: EpisodeState) -> np.ndarray:
    """``(2, n, n)`` stack of the fixed image and the current moving image."""
    warp = compose(state.pose, perturbation_warp(state.perturbation))
    moving = warp_image(state.pair.moving_aligned, warp, out_shape=(state.obs_size, state.obs_size))
    return np.stack([state.fixed_obs, moving])


def reset(pair: ImagePair, perturb: SimilarityTransform, cfg: EnvConfig = EnvConfig(),
          rng: np.random.Generator | None = None) -> tuple[EpisodeState, np.ndarray]:
    # rng is accepted for interface symmetry; reset itself is deterministic
    center = image_center(pair.shape)
    marks = _pair_landmarks(pair, cfg)
    warped = apply_points(perturbation_warp(perturb), marks.points, center)
    state = EpisodeState(pair=pair, perturbation=perturb, pose=IDENTITY, landmarks=marks,
                         warped_landmarks=warped, fixed_obs=_fixed_obs(pair, cfg.obs_size),
                         obs_size=cfg.obs_size, center=center)
    return state, observation(state)


def step(state: EpisodeState, action: int, cfg: EnvConfig = EnvConfig()) -> StepResult:
    """Apply one action.  Mutates ``state``."""
    if state.done:
        raise EpisodeFinishedError("step called on a finished episode")
    if not 0 <= int(action) < N_ACTIONS:
        raise ValueError(f"invalid action {action}")
    state.pose = apply_action(state.pose, action)
    state.step += 1
    d = distance(state, state.pose, cfg)
    obs = observation(state)
    if d < cfg.terminal_threshold:
        state.done = True
        return StepResult(obs, cfg.terminal_bonus, True, d)
    if state.step >= cfg.max_steps:
        state.done = True
        return StepResult(obs, -d, True, d, truncated=True)
    return StepResult(obs, -d, False, d)


def greedy_optimal_action(state: EpisodeState, cfg: EnvConfig = EnvConfig()) -> int:
    """Action whose successor pose has the smallest distance; ties go to the lowest id."""
    best, best_d = 0, math.inf
    for a in range(N_ACTIONS):
        d = distance(state, apply_action(state.pose, a), cfg)
        if d < best_d:
            best, best_d = a, d
    return best
