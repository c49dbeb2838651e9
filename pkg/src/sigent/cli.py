"""Command-line entry point: ``sigent record-demo | train | eval | diagnose``.

Exit codes: 0 success, 1 expert failure, 2 configuration or validation
error, 3 divergence abort, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from sigent import diagnostics
from sigent.config import config_hash, dump_config, file_hash, flatten, load_config, parse_sweep
from sigent.envs import make_env
from sigent.errors import (
    CheckpointFormatError,
    ConfigError,
    DemoFormatError,
    ValidationError,
)
from sigent.netstack import load_params
from sigent.policy import EntropyConfig, Policy
from sigent.replay import load_demo, save_demo
from sigent.trainer import DivergenceError, TrainConfig, evaluate, normalize_config, record_expert_episode, train

EXIT_OK = 0
EXIT_EXPERT = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

log = logging.getLogger("sigent")


class ExpertFailure(Exception):
    pass


def runs_root(explicit: str | None = None) -> Path:
    return Path(explicit or os.environ.get("SIGENT_RUNS_DIR", "runs"))


# -- record-demo ---------------------------------------------------------


def cmd_record_demo(args) -> int:
    env = make_env(args.env, seed=args.seed)
    episode = record_expert_episode(env, np.random.default_rng(args.seed))
    success = bool(episode[-1].done)
    print(f"episode_steps={len(episode)} success={str(success).lower()}")
    if not success:
        raise ExpertFailure(f"scripted expert failed on {args.env} with seed {args.seed}")
    save_demo(episode, args.out, gamma=args.gamma)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- train ---------------------------------------------------------------


def _write_manifest(path: Path, manifest: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def run_one(cfg: TrainConfig, demo: str | None, root: Path, run_id: str | None = None, notes: list | None = None) -> Path:
    """Resolve, record and execute one run; returns its directory."""
    cfg, overrides = normalize_config(cfg)
    run_id = run_id or f"{time.strftime('%Y%m%d-%H%M%S')}-seed{cfg.seed}"
    run_dir = root / run_id
    run_dir.mkdir(parents=True, exist_ok=False)
    extras = {"demo": str(demo)} if demo else {}
    (run_dir / "config.txt").write_text(dump_config(cfg, extras))
    manifest = {
        "run_id": run_id,
        "config_hash": config_hash(cfg),
        "demo_path": str(demo) if demo else None,
        "demo_hash": file_hash(demo) if demo else None,
        "config": dict(sorted({**flatten(cfg), **extras}.items())),
        "overrides_applied": overrides + (notes or []),
        "paths": {
            "config": "config.txt",
            "metrics": "metrics.csv",
            "checkpoints": "checkpoints",
            "final": "final",
            "landscape": None,
        },
        "status": "running",
    }
    manifest_path = run_dir / "manifest.json"
    _write_manifest(manifest_path, manifest)
    try:
        result = train(cfg, demo_path=demo, run_dir=run_dir)
        manifest["status"] = "completed"
        manifest["steps"] = result.steps
        manifest["updates"] = result.updates
        if result.reports:
            last = result.reports[-1]
            manifest["final_success_rate"] = last.success_rate
    except DivergenceError:
        manifest["status"] = "diverged"
        manifest["paths"]["divergence"] = "divergence.json"
        raise
    except BaseException:
        manifest["status"] = "failed"
        raise
    finally:
        _write_manifest(manifest_path, manifest)
    return run_dir


def cmd_train(args) -> int:
    cfg, extras = load_config(args.config, args.set or [])
    demo = args.demo or extras.get("demo")
    if demo is not None and not Path(demo).is_file():
        raise ConfigError(f"demo file not found: {demo}")
    needs_demo = cfg.gbc.lambda_bc > 0 or cfg.expert_to_buffer or cfg.arm == "sac-with-prior"
    if demo is None and needs_demo:
        raise ConfigError("no demonstration given: pass --demo or set demo = <path> in the config")
    root = runs_root(args.runs_dir)
    cells = parse_sweep(args.sweep) if args.sweep else [{}]
    for i, cell in enumerate(cells):
        cell_cfg, _ = load_config(args.config, [*(args.set or []), *(f"{k}={v}" for k, v in cell.items())])
        run_id = args.run_id
        if args.sweep:
            tag = "_".join(f"{k}={v}" for k, v in cell.items())
            run_id = f"{args.run_id or time.strftime('%Y%m%d-%H%M%S')}-cell{i:02d}-{tag}"
        run_dir = run_one(cell_cfg, demo, root, run_id)
        print(f"run_dir={run_dir}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------


def _load_policy(checkpoint: str) -> Policy:
    path = Path(checkpoint)
    if path.is_dir():
        path = path / "policy.sgnt"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return Policy(load_params(path))


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise ValidationError("episodes must be >= 1")
    env = make_env(args.env, seed=args.seed)
    policy = _load_policy(args.checkpoint)
    if policy.state_dim != env.state_dim or policy.action_dim != env.action_dim:
        raise ValidationError(
            f"checkpoint dims ({policy.state_dim}, {policy.action_dim}) do not fit {args.env} "
            f"({env.state_dim}, {env.action_dim})"
        )
    report = evaluate(policy, env, args.episodes, np.random.default_rng(args.seed))
    print(f"success_rate={report.success_rate} mean_episode_steps={report.mean_episode_steps}")
    if args.out:
        row = {k: None for k in diagnostics.METRICS_HEADER}
        row.update(step=report.step, success_rate=report.success_rate, mean_episode_steps=report.mean_episode_steps)
        with diagnostics.MetricsSink(args.out) as sink:
            sink.write(row)
    return EXIT_OK


# -- diagnose ------------------------------------------------------------


def cmd_diagnose(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ent = EntropyConfig(h_max=args.h_max, m=args.m, t=args.t)
    radius = None if args.sample_radius <= 0 else args.sample_radius
    if args.mode == "analytic":
        grid = diagnostics.entropy_landscape(
            sigma_pi=args.sigma_pi,
            cfg=ent,
            alpha=args.alpha,
            q_fn=args.q_const,
            grid_size=args.grid_size,
            sample_radius=radius,
        )
        path = out / "landscape.csv"
        diagnostics.write_landscape(grid, path)
        print(f"wrote {path}")
        return EXIT_OK
    if not args.checkpoint:
        raise ConfigError("checkpoint mode needs --checkpoint")
    policy = _load_policy(args.checkpoint)
    if not args.demo:
        raise ConfigError("checkpoint mode needs --demo for the ood ratio")
    expert = load_demo(args.demo, policy.state_dim, policy.action_dim)
    ratio = diagnostics.ood_ratio(policy, expert, args.threshold, args.gate_mode)
    path = out / "ood_ratio.csv"
    path.write_text(f"checkpoint,threshold,gate_mode,ood_ratio\n{args.checkpoint},{args.threshold!r},{args.gate_mode},{ratio!r}\n")
    print(f"ood_ratio={ratio} threshold={args.threshold}")
    ckpt = Path(args.checkpoint)
    ckpt_dir = ckpt if ckpt.is_dir() else ckpt.parent
    if (ckpt_dir / "q1.sgnt").is_file():
        from sigent.critic import q_predict

        q1 = load_params(ckpt_dir / "q1.sgnt")
        state = expert.all().states[0]
        mu = policy.mean_action(state)

        def q_fn(actions):
            a = np.repeat(mu[None, :], len(actions), axis=0)
            a[:, 0] = np.asarray(actions).reshape(len(actions), -1)[:, 0]
            return q_predict(q1, state, a)

        grid = diagnostics.entropy_landscape(
            sigma_pi=args.sigma_pi,
            cfg=ent,
            alpha=args.alpha,
            q_fn=q_fn,
            grid_size=args.grid_size,
            reference_action=float(np.clip(mu[0], -0.999, 0.999)),
            sample_radius=radius,
        )
        diagnostics.write_landscape(grid, out / "landscape.csv")
        print(f"wrote {out / 'landscape.csv'}")
    return EXIT_OK


# -- wiring --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sigent", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("record-demo", help="roll the scripted expert once and save the episode")
    r.add_argument("--env", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--gamma", type=float, default=0.99)
    r.set_defaults(func=cmd_record_demo)

    t = sub.add_parser("train", help="train one run (or one run per sweep cell)")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--demo", help="demonstration file (overrides the config's demo key)")
    t.add_argument("--sweep", help="file of key = v1, v2, ... grids")
    t.add_argument("--runs-dir", help="run root (default $SIGENT_RUNS_DIR or ./runs)")
    t.add_argument("--run-id")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved policy with its mean action")
    e.add_argument("--checkpoint", required=True, help="checkpoint directory or policy.sgnt")
    e.add_argument("--env", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="write the report as a metrics row")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="export entropy landscapes and ood ratios")
    d.add_argument("--mode", choices=("analytic", "checkpoint"), default="analytic")
    d.add_argument("--checkpoint")
    d.add_argument("--demo")
    d.add_argument("--out-dir", default="diagnose")
    d.add_argument("--threshold", type=float, default=0.3)
    d.add_argument("--gate-mode", choices=("l2_norm", "per_dim_mse"), default="per_dim_mse")
    d.add_argument("--q-const", type=float, default=0.0)
    d.add_argument("--alpha", type=float, default=1.0)
    d.add_argument("--sigma-pi", type=float, default=diagnostics.DEFAULT_SIGMA_PI)
    d.add_argument("--sample-radius", type=float, default=diagnostics.DEFAULT_SAMPLE_RADIUS,
                   help="support half-width in policy stds; <= 0 applies the entropy everywhere")
    d.add_argument("--grid-size", type=int, default=201)
    d.add_argument("--h-max", type=float, default=1.0)
    d.add_argument("--m", type=float, default=0.0)
    d.add_argument("--t", type=float, default=1.0)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ExpertFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXPERT
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CheckpointFormatError, DemoFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
