"""Target registration error, threshold calibration and benchmark sweeps."""
from __future__ import annotations

import csv
import json
import math
import os
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .env import EnvConfig, distance, reset
from .geometry import IDENTITY, SimilarityTransform, apply_action, apply_points, image_center
from .inference import InferenceConfig, RegistrationResult, Scene, register
from .landmarks import LandmarkSet
from .nn.network import LstmState, NetworkParams, forward
from .synthdata import (ImagePair, PerturbationRange, perturbation_warp, recovery_transform,
                        sample_perturbation)

CSV_COLUMNS = ("variant", "range", "n", "mean", "std", "median", "p90", "initial_mean")


@dataclass(frozen=True)
class MethodVariant:
    trainer: str = "rl"        # "rl" | "sl"
    reward: str = "lme"        # "lme" | "matrix"
    inference: str = "greedy"  # "greedy" | "mc"

    def __post_init__(self):
        if self.trainer not in ("rl", "sl") or self.reward not in ("lme", "matrix") \
                or self.inference not in ("greedy", "mc"):
            raise ValueError(f"invalid variant {self}")

    @property
    def name(self) -> str:
        reward = "LME" if self.reward == "lme" else "matrix"
        return f"{self.trainer.upper()}-{reward}" + ("-MC" if self.inference == "mc" else "")

    @classmethod
    def parse(cls, name: str) -> "MethodVariant":
        parts = name.split("-")
        if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2].upper() != "MC"):
            raise ValueError(f"cannot parse variant name {name!r}")
        return cls(parts[0].lower(), parts[1].lower(), "mc" if len(parts) == 3 else "greedy")

    @classmethod
    def all(cls) -> list["MethodVariant"]:
        return [cls(t, r, i) for t in ("rl", "sl") for r in ("lme", "matrix") for i in ("greedy", "mc")]


@dataclass
class BenchmarkStats:
    n: int
    mean: float
    std: float
    median: float
    p90: float
    initial_mean: float

    @classmethod
    def from_errors(cls, errors: Sequence[float], initial: Sequence[float]) -> "BenchmarkStats":
        e = np.sort(np.asarray(errors, dtype=np.float64))
        if e.size == 0:
            raise ValueError("no registrations to summarise")
        rank = max(1, math.ceil(0.9 * e.size))
        return cls(int(e.size), float(e.mean()), float(e.std()), float(np.median(e)),
                   float(e[rank - 1]), float(np.mean(initial)))


@dataclass
class CellResult:
    variant: str
    range: str
    stats: BenchmarkStats | None
    error: str | None = None
    initial_median: float = float("nan")


def tre(pred: SimilarityTransform, truth: SimilarityTransform, points: LandmarkSet | np.ndarray,
        center: tuple[float, float] = (0.0, 0.0)) -> float:
    """Mean distance between evaluation points mapped by ``truth`` and by ``pred``."""
    pts = points.points if isinstance(points, LandmarkSet) else np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty evaluation point set")
    d = apply_points(truth, pts, center) - apply_points(pred, pts, center)
    return float(np.mean(np.hypot(d[:, 0], d[:, 1])))


def eval_points(pair: ImagePair, perturb: SimilarityTransform) -> np.ndarray:
    """A 4x4 interior grid in fixed-image coordinates, carried into the moving
    frame.  Its 20%-80% span keeps it apart from the reward's 10%-90% grid."""
    h, w = pair.shape
    gx, gy = np.meshgrid(np.linspace(0.2 * w, 0.8 * w, 4), np.linspace(0.2 * h, 0.8 * h, 4))
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return apply_points(perturbation_warp(perturb), grid, image_center(pair.shape))


def registration_tre(pair: ImagePair, perturb: SimilarityTransform,
                     pred: SimilarityTransform) -> float:
    return tre(pred, recovery_transform(perturb), eval_points(pair, perturb),
               image_center(pair.shape))


Agent = Callable[[ImagePair, SimilarityTransform], "RegistrationResult | SimilarityTransform"]


def policy_agent(params: NetworkParams, cfg: InferenceConfig) -> Agent:
    """Wrap trained parameters as a benchmark agent.  Each call gets its own
    rng derived from the inference seed and the case, so results do not
    depend on evaluation order."""
    def agent(pair: ImagePair, perturb: SimilarityTransform) -> RegistrationResult:
        key = zlib.crc32(f"{pair.id}|{perturb}".encode())
        rng = np.random.default_rng([cfg.seed, key])
        return register(params, Scene.from_pair(pair, perturb, params.config.input_size), cfg, rng)
    return agent


def oracle_agent(pair: ImagePair, perturb: SimilarityTransform) -> SimilarityTransform:
    return recovery_transform(perturb)


def identity_agent(pair: ImagePair, perturb: SimilarityTransform) -> SimilarityTransform:
    return IDENTITY


def calibrate_trs(params: NetworkParams, pairs: Sequence[ImagePair], env_cfg: EnvConfig,
                  prange: PerturbationRange, n_runs: int = 32, max_steps: int = 100,
                  seed: int = 0, percentile: float = 25.0) -> float:
    """Value threshold from greedy rollouts on fresh training perturbations.

    Each run records the value estimate at the step where the true distance
    was smallest; the threshold is the 25th percentile of those readings.
    """
    rng = np.random.default_rng([seed, 0x7125])
    readings = []
    for i in range(n_runs):
        pair = pairs[i % len(pairs)]
        perturb = sample_perturbation(rng, prange)
        state, _ = reset(pair, perturb, env_cfg)
        scene = Scene.from_pair(pair, perturb, params.config.input_size)
        lstm = LstmState.zeros(params.config, params.dtype)
        pose = IDENTITY
        best_d, best_v = math.inf, None
        for _ in range(max_steps):
            logits, value, lstm, _ = forward(params, scene.observe(pose), lstm)
            d = distance(state, pose, env_cfg)
            if d < best_d:
                best_d, best_v = d, value
            pose = apply_action(pose, int(np.argmax(logits)))
        readings.append(best_v)
    return float(np.percentile(readings, percentile))


def sample_cases(pairs: Sequence[ImagePair], prange: PerturbationRange, n_per_pair: int,
                 seed: int, range_name: str = "") -> list[tuple[ImagePair, SimilarityTransform]]:
    rng = np.random.default_rng([seed, zlib.crc32(range_name.encode())])
    return [(p, sample_perturbation(rng, prange)) for p in pairs for _ in range(n_per_pair)]


def evaluate_cases(agent: Agent, cases) -> tuple[list[float], list[float]]:
    errors, initial = [], []
    for pair, perturb in cases:
        out = agent(pair, perturb)
        pose = out.transform if isinstance(out, RegistrationResult) else out
        errors.append(registration_tre(pair, perturb, pose))
        initial.append(registration_tre(pair, perturb, IDENTITY))
    return errors, initial


def run_benchmark(agents: Mapping[str, Agent | Exception], pairs: Sequence[ImagePair],
                  ranges: Mapping[str, PerturbationRange], n_perturb_per_pair: int = 64,
                  seed: int = 0) -> list[CellResult]:
    """Every agent on every range.  Cases depend only on (seed, range), so all
    variants see identical perturbations.  An agent given as an exception (e.g.
    a checkpoint that failed to load), or one that raises, yields a failed cell
    and the sweep carries on."""
    cells = []
    for name, agent in agents.items():
        for rname, prange in ranges.items():
            if isinstance(agent, Exception):
                cells.append(CellResult(name, rname, None, f"{type(agent).__name__}: {agent}"))
                continue
            cases = sample_cases(pairs, prange, n_perturb_per_pair, seed, rname)
            try:
                errors, initial = evaluate_cases(agent, cases)
            except Exception as exc:
                cells.append(CellResult(name, rname, None, f"{type(exc).__name__}: {exc}"))
                continue
            cells.append(CellResult(name, rname, BenchmarkStats.from_errors(errors, initial),
                                    initial_median=float(np.median(initial))))
    return cells


def _row(cell: CellResult) -> dict:
    if cell.stats is None:
        nan = float("nan")
        return {"variant": cell.variant, "range": cell.range, "n": 0, "mean": nan, "std": nan,
                "median": nan, "p90": nan, "initial_mean": nan}
    return {"variant": cell.variant, "range": cell.range, **asdict(cell.stats)}


def export_report(cells: Sequence[CellResult], path: str | os.PathLike, fmt: str = "csv") -> Path:
    """CSV (fixed header, 6-decimal fixed point) or JSON lines, sorted by
    variant then range.  Failed cells carry ``n == 0`` and NaN statistics; the
    JSON form also records the error."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(cells, key=lambda c: (c.variant, c.range))
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for cell in ordered:
                row = _row(cell)
                writer.writerow([row["variant"], row["range"], row["n"]]
                                + [f"{row[k]:.6f}" for k in CSV_COLUMNS[3:]])
    elif fmt == "json-lines":
        with open(path, "w") as fh:
            for cell in ordered:
                row = _row(cell)
                for k in CSV_COLUMNS[3:]:
                    row[k] = None if math.isnan(row[k]) else round(row[k], 6)
                if cell.error:
                    row["error"] = cell.error
                fh.write(json.dumps(row) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report(path: str | os.PathLike) -> list[dict]:
    """Parse either report format back into rows of floats."""
    path = Path(path)
    text = path.read_text()
    rows = []
    if path.suffix == ".csv" or text.startswith(",".join(CSV_COLUMNS)):
        for rec in csv.DictReader(text.splitlines()):
            rows.append({"variant": rec["variant"], "range": rec["range"], "n": int(rec["n"]),
                         **{k: float(rec[k]) for k in CSV_COLUMNS[3:]}})
    else:
        for line in text.splitlines():
            rec = json.loads(line)
            rows.append({k: (float("nan") if rec[k] is None else rec[k]) if k in CSV_COLUMNS[3:]
                         else rec[k] for k in CSV_COLUMNS})
    return rows
