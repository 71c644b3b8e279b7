"""``rlreg`` command line: gen-data, train, register, benchmark, gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 benchmark finished with at least one failed cell, 130 interrupted.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

import numpy as np

from .config import KEYS, ConfigError, RunConfig
from .evaluation import (MethodVariant, calibrate_trs, export_report, identity_agent,
                         oracle_agent, policy_agent, registration_tre, run_benchmark)
from .geometry import IDENTITY, SimilarityTransform
from .inference import Scene, register
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn.gradcheck import run_all
from .nn.network import init_network
from .nn.optim import SharedParameters
from .synthdata import DatasetError, generate_dataset, load_dataset, save_dataset
from .trainer import TrainingError, run_a3c, run_sl

log = logging.getLogger("rlreg")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PARTIAL, EXIT_INTERRUPTED = 0, 1, 2, 3, 130
STUB_AGENTS = {"@oracle": oracle_agent, "@identity": identity_agent}

# short flags that alias a config key, per subcommand
ALIASES = {
    "gen-data": {"--pairs": "data.pairs", "--size": "data.size"},
    "train": {"--algo": "train.algo", "--workers": "train.workers", "--episodes": "train.episodes"},
    "register": {"--mode": "infer.mode"},
    "benchmark": {"--format": "bench.format"},
    "gradcheck": {},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser, command: str) -> None:
    g = p.add_argument_group("global")
    g.add_argument("--config", metavar="PATH", help="YAML config file")
    g.add_argument("--seed", dest="cfg:seed", default=argparse.SUPPRESS, metavar="N",
                   help="master seed (default: 0)")
    g.add_argument("--out", dest="cfg:out", default=argparse.SUPPRESS, metavar="DIR",
                   help="output directory (default: runs)")
    for flag, key in ALIASES[command].items():
        k = next(k for k in KEYS if k.name == key)
        p.add_argument(flag, dest=f"cfg:{key}", default=argparse.SUPPRESS, metavar="VALUE",
                       help=f"alias for --{key} (default: {k.default})")
    keys = p.add_argument_group("config keys (flags override the config file)")
    for k in KEYS:
        if k.name in ("seed", "out"):
            continue
        keys.add_argument(f"--{k.name}", dest=f"cfg:{k.name}", default=argparse.SUPPRESS,
                          metavar="VALUE", help=f"{k.help} (default: {k.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rlreg", description="Agent-based 2D similarity registration.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    _add_config_flags(p, "gen-data")

    p = sub.add_parser("train", help="train an agent")
    _add_config_flags(p, "train")

    p = sub.add_parser("register", help="register one perturbed pair")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--pair-id", required=True)
    p.add_argument("--perturb", required=True, metavar="TX,TY,S,DEG",
                   help="perturbation as tx,ty,scale,degrees")
    _add_config_flags(p, "register")

    p = sub.add_parser("benchmark", help="sweep variants over perturbation ranges")
    p.add_argument("--checkpoint", action="append", default=[], metavar="VARIANT=PATH",
                   help="variant name (e.g. RL-LME-MC) and checkpoint; PATH may be "
                        "@oracle or @identity for reference agents; repeatable")
    _add_config_flags(p, "benchmark")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _add_config_flags(p, "gradcheck")
    return parser


def parse_perturb(text: str) -> SimilarityTransform:
    fields = ("tx", "ty", "scale", "angle")
    parts = [s.strip() for s in text.split(",")]
    if len(parts) != 4:
        raise UsageError(f"--perturb needs 4 comma-separated fields (tx,ty,s,deg), got {len(parts)}")
    values = []
    for name, part in zip(fields, parts):
        try:
            values.append(float(part))
        except ValueError:
            raise UsageError(f"--perturb field {name}: not a number: {part!r}") from None
    try:
        return SimilarityTransform(*values)
    except ValueError as exc:
        raise UsageError(f"--perturb: {exc}") from None


def _load_pairs(cfg: RunConfig):
    manifest = cfg.data_dir / "manifest.json"
    _, pairs = load_dataset(manifest)
    return pairs


def _echo_config(cfg: RunConfig) -> None:
    cfg.dump(cfg.out_dir / "config.yaml")


def cmd_gen_data(cfg: RunConfig) -> int:
    pairs = generate_dataset(cfg["data.pairs"], cfg["data.size"], cfg["seed"])
    try:
        path = save_dataset(pairs, cfg.data_dir / "manifest.json", cfg["seed"])
        _echo_config(cfg)
    except OSError as exc:
        log.error("cannot write dataset: %s", exc)
        return EXIT_RUNTIME
    size = cfg["data.size"]
    print(f"wrote {len(pairs)} pairs ({size}x{size}) to {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    pairs = _load_pairs(cfg)
    _echo_config(cfg)
    ckpt_dir = cfg.out_dir / "checkpoints"
    a3c = cfg.a3c()
    a3c.checkpoint_dir = str(ckpt_dir)
    a3c.log_path = str(cfg.out_dir / "train_log.jsonl")
    shared = SharedParameters(init_network(cfg.network(), cfg["seed"]))
    trainer = run_sl if cfg["train.algo"] == "sl" else run_a3c
    try:
        report = trainer(a3c, pairs, shared)
    except KeyboardInterrupt:
        path = save_checkpoint(shared.snapshot(), shared.adam.copy(), ckpt_dir / "interrupted.rgnn")
        print(f"interrupted; checkpoint written to {path}", file=sys.stderr)
        return EXIT_INTERRUPTED
    except TrainingError as exc:
        save_checkpoint(shared.snapshot(), shared.adam.copy(), ckpt_dir / "failed.rgnn")
        log.error("%s (%d episodes completed)", exc, exc.report.episodes_completed)
        return EXIT_RUNTIME
    path = save_checkpoint(shared.params, shared.adam, ckpt_dir / "final.rgnn")
    summary = {"episodes": report.episodes_completed, "updates": report.updates,
               "wall_time": round(report.wall_time, 3),
               "terminal_rate_last_100": report.terminal_rate(100), "checkpoint": str(path)}
    (cfg.out_dir / "train_report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def _inference_cfg(cfg: RunConfig, params, pairs, **changes):
    if cfg["infer.calibrate"]:
        changes["trs"] = calibrate_trs(params, pairs, cfg.env(), cfg.train_range(), seed=cfg["seed"])
        log.info("calibrated trs = %.4f", changes["trs"])
    return cfg.inference(**changes)


def cmd_register(cfg: RunConfig, checkpoint: str, pair_id: str, perturb_text: str) -> int:
    perturb = parse_perturb(perturb_text)
    pairs = _load_pairs(cfg)
    by_id = {p.id: p for p in pairs}
    if pair_id not in by_id:
        raise UsageError(f"unknown pair id {pair_id!r}; dataset has {', '.join(sorted(by_id))}")
    params, _ = load_checkpoint(checkpoint)
    pair = by_id[pair_id]
    icfg = _inference_cfg(cfg, params, pairs)
    scene = Scene.from_pair(pair, perturb, params.config.input_size)
    result = register(params, scene, icfg, np.random.default_rng(icfg.seed))
    out = result.to_dict()
    out.update(pair_id=pair_id, mode=icfg.mode, trs=icfg.trs,
               initial_tre=registration_tre(pair, perturb, IDENTITY),
               tre=registration_tre(pair, perturb, result.transform))
    print(json.dumps(out))
    return EXIT_OK


def _parse_checkpoint_args(items: Sequence[str]) -> dict[str, str]:
    mapping = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--checkpoint expects VARIANT=PATH, got {item!r}")
        if name in mapping:
            raise UsageError(f"variant {name!r} given twice")
        mapping[name] = path
    return mapping


def cmd_benchmark(cfg: RunConfig, checkpoint_args: Sequence[str]) -> int:
    mapping = _parse_checkpoint_args(checkpoint_args)
    if not mapping:
        raise UsageError("benchmark needs at least one --checkpoint VARIANT=PATH")
    ranges = cfg.bench_ranges()
    pairs = _load_pairs(cfg)
    agents = {}
    for name, path in mapping.items():
        if path in STUB_AGENTS:
            agents[name] = STUB_AGENTS[path]
            continue
        try:
            mode = MethodVariant.parse(name).inference
        except ValueError:
            mode = cfg["infer.mode"]
        try:
            params, _ = load_checkpoint(path)
            agents[name] = policy_agent(params, _inference_cfg(cfg, params, pairs, mode=mode))
        except (CheckpointError, OSError) as exc:
            log.error("variant %s: %s", name, exc)
            agents[name] = exc
    cells = run_benchmark(agents, pairs, ranges, cfg["bench.n_perturb"], cfg["seed"])
    fmt = cfg["bench.format"]
    path = export_report(cells, cfg.out_dir / ("benchmark.csv" if fmt == "csv" else "benchmark.jsonl"), fmt)
    _echo_config(cfg)
    failed = [c for c in cells if c.stats is None]
    for c in failed:
        log.error("cell %s/%s failed: %s", c.variant, c.range, c.error)
    print(f"wrote {len(cells)} cells to {path} ({len(failed)} failed)")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = run_all(cfg["seed"])
    for r in results:
        print(r)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_RUNTIME if failed else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "register":
            return cmd_register(cfg, args.checkpoint, args.pair_id, args.perturb)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, args.checkpoint)
        return cmd_gradcheck(cfg)
    except (ConfigError, UsageError) as exc:
        print(f"rlreg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, ValueError, OSError) as exc:
        print(f"rlreg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
