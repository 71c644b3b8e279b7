"""Flat run configuration.

Every setting is a dotted key (``train.lr``, ``env.max_steps``, ...) with a
documented default.  A YAML file may set any subset of keys, either flat
(``train.lr: 0.001``) or nested one level (``train: {lr: 0.001}``); command
line flags override the file.  Unknown keys are rejected by name.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .env import EnvConfig
from .inference import InferenceConfig
from .nn.network import NetworkConfig
from .synthdata import RANGES, PerturbationRange
from .trainer import A3CConfig


class ConfigError(ValueError):
    pass


def _parse_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _optional_float(v: Any) -> float | None:
    if v is None or str(v).strip().lower() in ("", "none", "null"):
        return None
    return float(v)


def _parse_conv(v: Any) -> tuple[tuple[int, int, int], ...]:
    """``"16:8:4,16:4:2,32:4:2"`` or a list of ``[channels, kernel, stride]``."""
    if isinstance(v, str):
        layers = [tuple(int(x) for x in part.split(":")) for part in v.split(",") if part.strip()]
    else:
        layers = [tuple(int(x) for x in layer) for layer in v]
    if not layers or any(len(layer) != 3 for layer in layers):
        raise ValueError(f"conv layers must be channels:kernel:stride triples, got {v!r}")
    return tuple(layers)


def _format_conv(conv) -> str:
    return ",".join(":".join(str(x) for x in layer) for layer in conv)


def _choice(*options: str) -> Callable[[Any], str]:
    def parse(v: Any) -> str:
        s = str(v)
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    parse.__name__ = "|".join(options)
    return parse


@dataclass(frozen=True)
class ConfigKey:
    name: str
    default: Any
    parse: Callable[[Any], Any]
    help: str


_NET, _ENV, _A3C, _INF = NetworkConfig(), EnvConfig(), A3CConfig(), InferenceConfig()

KEYS: tuple[ConfigKey, ...] = (
    ConfigKey("seed", 0, int, "master seed for data, training and inference"),
    ConfigKey("out", "runs", str, "output directory"),
    ConfigKey("data.dir", "", str, "dataset directory (default: <out>/data)"),
    ConfigKey("data.pairs", 8, int, "number of synthetic pairs"),
    ConfigKey("data.size", 84, int, "image side length in pixels"),
    ConfigKey("net.input_size", _NET.input_size, int, "observation side length"),
    ConfigKey("net.conv", _format_conv(_NET.conv), _parse_conv,
              "conv layers as channels:kernel:stride, comma separated"),
    ConfigKey("net.fc_width", _NET.fc_width, int, "dense layer width"),
    ConfigKey("net.recurrent", _NET.recurrent, _choice("lstm", "fc"), "recurrent block"),
    ConfigKey("net.recurrent_width", _NET.recurrent_width, int, "recurrent block width"),
    ConfigKey("env.reward", _ENV.reward_kind, _choice("lme", "matrix"), "reward kind"),
    ConfigKey("env.terminal_threshold", _ENV.terminal_threshold, float, "terminal distance"),
    ConfigKey("env.terminal_bonus", _ENV.terminal_bonus, float, "reward on reaching the terminal"),
    ConfigKey("env.max_steps", _ENV.max_steps, int, "episode step cap"),
    ConfigKey("env.landmarks", _ENV.landmarks, _choice("detected", "grid"), "reward landmarks"),
    ConfigKey("env.n_landmarks", _ENV.n_landmarks, int, "landmarks per image"),
    ConfigKey("train.algo", "a3c", _choice("a3c", "sl"), "training algorithm"),
    ConfigKey("train.workers", _A3C.workers, int, "parallel workers"),
    ConfigKey("train.lr", _A3C.lr, float, "Adam learning rate"),
    ConfigKey("train.gamma", _A3C.gamma, float, "discount factor"),
    ConfigKey("train.beta", _A3C.beta, float, "entropy weight"),
    ConfigKey("train.t_max", _A3C.t_max, int, "steps per update window"),
    ConfigKey("train.episodes", _A3C.max_episodes, int, "total training episodes"),
    ConfigKey("train.pair_every", _A3C.pair_every, int, "episodes per training pair"),
    ConfigKey("train.max_grad_norm", _A3C.max_grad_norm, _optional_float,
              "global gradient-norm clip (none to disable)"),
    ConfigKey("train.range", "E1", _choice(*RANGES), "training perturbation range"),
    ConfigKey("train.checkpoint_every", 1000, int, "episodes between checkpoints (0 disables)"),
    ConfigKey("infer.trs", _INF.trs, float, "value threshold that stops the rollout"),
    ConfigKey("infer.calibrate", False, _parse_bool,
              "derive trs from rollouts on the training pairs"),
    ConfigKey("infer.mode", _INF.mode, _choice("greedy", "mc"), "inference mode"),
    ConfigKey("infer.n_mc", _INF.n_mc, int, "Monte Carlo trajectories"),
    ConfigKey("infer.d_mc", _INF.d_mc, int, "Monte Carlo trajectory depth"),
    ConfigKey("infer.max_steps", _INF.max_steps, int, "inference step cap"),
    ConfigKey("bench.ranges", "E1,E2", str, "comma-separated ranges to sweep"),
    ConfigKey("bench.n_perturb", 64, int, "perturbations per pair per range"),
    ConfigKey("bench.format", "csv", _choice("csv", "json-lines"), "report format"),
)
KEY_INDEX = {k.name: k for k in KEYS}


def _flatten(raw: Mapping, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for k, v in raw.items():
        name = f"{prefix}{k}"
        if isinstance(v, Mapping):
            flat.update(_flatten(v, name + "."))
        else:
            flat[name] = v
    return flat


class RunConfig:
    """Validated values for every key in :data:`KEYS`."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self._values = {k.name: k.parse(k.default) if k.default is not None else None for k in KEYS}
        if values:
            self.update(values)

    def update(self, values: Mapping[str, Any]) -> None:
        for name, raw in values.items():
            key = KEY_INDEX.get(name)
            if key is None:
                raise ConfigError(f"unknown config key {name!r}")
            try:
                self._values[name] = key.parse(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid value for {name}: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike | None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        cfg = cls()
        if path:
            try:
                raw = yaml.safe_load(Path(path).read_text()) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            except yaml.YAMLError as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from None
            if not isinstance(raw, Mapping):
                raise ConfigError(f"config {path} must be a mapping")
            cfg.update(_flatten(raw))
        if overrides:
            cfg.update(overrides)
        return cfg

    def __getitem__(self, name: str) -> Any:
        return self._values[name]

    def as_dict(self) -> dict[str, Any]:
        out = dict(self._values)
        out["net.conv"] = _format_conv(out["net.conv"])
        return out

    def dump(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.as_dict(), sort_keys=False))
        return path

    # -- section views -------------------------------------------------

    @property
    def out_dir(self) -> Path:
        return Path(self["out"])

    @property
    def data_dir(self) -> Path:
        return Path(self["data.dir"]) if self["data.dir"] else self.out_dir / "data"

    def network(self) -> NetworkConfig:
        return NetworkConfig(input_size=self["net.input_size"], conv=self["net.conv"],
                             fc_width=self["net.fc_width"], recurrent=self["net.recurrent"],
                             recurrent_width=self["net.recurrent_width"])

    def env(self) -> EnvConfig:
        return EnvConfig(terminal_threshold=self["env.terminal_threshold"],
                         terminal_bonus=self["env.terminal_bonus"], max_steps=self["env.max_steps"],
                         reward_kind=self["env.reward"], landmarks=self["env.landmarks"],
                         n_landmarks=self["env.n_landmarks"], obs_size=self["net.input_size"])

    def train_range(self) -> PerturbationRange:
        return RANGES[self["train.range"]]

    def a3c(self) -> A3CConfig:
        return A3CConfig(workers=self["train.workers"], lr=self["train.lr"], gamma=self["train.gamma"],
                         beta=self["train.beta"], t_max=self["train.t_max"],
                         max_episodes=self["train.episodes"], env=self.env(),
                         perturbation=self.train_range(), pair_every=self["train.pair_every"],
                         seed=self["seed"], max_grad_norm=self["train.max_grad_norm"],
                         checkpoint_every=self["train.checkpoint_every"])

    def inference(self, **changes) -> InferenceConfig:
        kw = dict(trs=self["infer.trs"], n_mc=self["infer.n_mc"], d_mc=self["infer.d_mc"],
                  max_steps=self["infer.max_steps"], mode=self["infer.mode"], seed=self["seed"])
        kw.update(changes)
        return InferenceConfig(**kw)

    def bench_ranges(self) -> dict[str, PerturbationRange]:
        names = [n.strip() for n in self["bench.ranges"].split(",") if n.strip()]
        unknown = [n for n in names if n not in RANGES]
        if unknown or not names:
            raise ConfigError(f"bench.ranges: unknown range(s) {unknown}; known: {sorted(RANGES)}")
        return {n: RANGES[n] for n in names}
