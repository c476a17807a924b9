"""Command-line interface: train, eval, trace, gradcheck, sweep, serve."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .runio import (CheckpointError, ConfigError, LockError, MetricsWriter,
                    RunConfig, RunLock, gradcheck_battery, load_checkpoint,
                    load_config, make_checkpoint, save_checkpoint,
                    save_config, export_trace)
from .training import TrainingError, evaluate, run_training

GRADCHECK_TOL = 1e-4


def parse_intervene(text: str) -> dict[int, float]:
    """Parse "k=v,k=v" into an index->probability mapping."""
    out: dict[int, float] = {}
    if not text:
        return out
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"--intervene: expected k=v, got {part!r}")
        k_s, v_s = part.split("=", 1)
        try:
            k, v = int(k_s), float(v_s)
        except ValueError:
            raise ConfigError(f"--intervene: expected int=float, got {part!r}") from None
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"--intervene: value {v} for concept {k} outside [0, 1]")
        out[k] = v
    return out


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "mixer", None):
        cfg = dataclasses.replace(cfg, mixer_kind=args.mixer)
    if getattr(args, "concepts", None):
        cfg = dataclasses.replace(cfg, concepts=args.concepts)
    if getattr(args, "steps", None):
        cfg = dataclasses.replace(
            cfg, training=dataclasses.replace(cfg.training, total_steps=args.steps))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    return cfg


def _train_one(cfg: RunConfig, seed: int, out_dir: str) -> dict:
    env = cfg.build_env()
    mixer_cfg = cfg.build_mixer_cfg(env)
    metrics_path = os.path.join(out_dir, f"metrics_seed{seed}.csv")
    with MetricsWriter(metrics_path) as sink:
        result = run_training(env, mixer_cfg, cfg.mixer_kind, cfg.training,
                              seed, metrics_cb=sink)
    ckpt_path = os.path.join(out_dir, f"checkpoint_seed{seed}.npz")
    save_checkpoint(ckpt_path, make_checkpoint(cfg, result))
    final = result.metrics[-1]["mean_test_return"] if result.metrics else None
    return {"seed": seed, "env_steps": result.env_steps,
            "episodes": result.episodes, "final_return": final,
            "metrics": metrics_path, "checkpoint": ckpt_path}


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    os.makedirs(args.out, exist_ok=True)
    with RunLock(args.out):
        save_config(os.path.join(args.out, "config.yaml"), cfg)
        for seed in cfg.seeds:
            summary = _train_one(cfg, seed, args.out)
            print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    env = ckpt.config.build_env()
    state = ckpt.state
    interventions = parse_intervene(args.intervene)
    if interventions:
        if state.mixer_kind != "cmq":
            raise ConfigError("--intervene requires a cmq checkpoint")
        from .mixer import InterventionMask
        InterventionMask(interventions).validate(state.mixer_cfg.concepts)
    master = np.random.default_rng(args.seed)
    seeds = [int(master.integers(2**63)) for _ in range(args.episodes)]
    stats = evaluate(env, state.params, state.agent_spec, state.mixer_cfg,
                     state.mixer_kind, seeds)
    out = {"mean_return": stats["mean_test_return"],
           "episodes": args.episodes, "seed": args.seed,
           "mixer": state.mixer_kind}
    if "concept_accuracy" in stats:
        out["concept_accuracy"] = stats["concept_accuracy"]
        p_hat = np.asarray(stats["p_hat_mean"])
        out["p_hat_mean"] = [float(v) for v in p_hat]
        if interventions:
            from .mixer import InterventionMask
            keep, forced = InterventionMask(interventions).as_arrays(
                state.mixer_cfg.concepts)
            out["p_used_mean"] = [float(v) for v in p_hat * keep + forced]
            out["interventions"] = {str(k): v for k, v in interventions.items()}
    print(json.dumps(out))
    return 0


def cmd_trace(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    env = ckpt.config.build_env()
    interventions = parse_intervene(args.intervene)
    header = export_trace(args.out, env, ckpt.state, args.seed, interventions)
    print(json.dumps({"trace": args.out,
                      "records": header["episode_length"],
                      "embeddings": header["embeddings"]}))
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck_battery(n_configs=args.configs)
    worst = 0.0
    for r in results:
        print(f"config {r['config']:2d}: {r['n_params']:4d} params, "
              f"max_rel_err={r['max_rel_err']:.3e}")
        worst = max(worst, r["max_rel_err"])
    ok = worst <= GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} "
          f"(tolerance {GRADCHECK_TOL:.0e}) over {len(results)} configs")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    try:
        k_values = [int(k) for k in args.concepts.split(",") if k]
    except ValueError:
        raise ConfigError(f"--concepts: expected comma-separated ints, "
                          f"got {args.concepts!r}") from None
    if not k_values or any(k < 1 for k in k_values):
        raise ConfigError(f"--concepts: need positive ints, got {args.concepts!r}")
    os.makedirs(args.out, exist_ok=True)
    summary_rows = []
    with RunLock(args.out):
        for k in k_values:
            k_cfg = dataclasses.replace(cfg, mixer_kind="cmq", concepts=k)
            save_config(os.path.join(args.out, f"config_K{k}.yaml"), k_cfg)
            for seed in cfg.seeds:
                env = k_cfg.build_env()
                path = os.path.join(args.out, f"metrics_K{k}_seed{seed}.csv")
                with MetricsWriter(path) as sink:
                    result = run_training(env, k_cfg.build_mixer_cfg(env),
                                          "cmq", k_cfg.training, seed,
                                          metrics_cb=sink)
                steps = [row["env_steps"] for row in result.metrics]
                returns = [row["mean_test_return"] for row in result.metrics]
                aulc = (float(np.trapezoid(returns, steps) / (steps[-1] - steps[0]))
                        if len(steps) > 1 else returns[0])
                row = {"concepts": k, "seed": seed,
                       "final_return": returns[-1], "aulc": aulc,
                       "metrics": path}
                summary_rows.append(row)
                print(json.dumps(row))
        with MetricsWriter(os.path.join(args.out, "sweep_summary.csv")) as sink:
            for row in summary_rows:
                sink(row)
    return 0


def cmd_serve(args) -> int:
    from .bridge import serve
    ckpt = load_checkpoint(args.checkpoint)
    serve(ckpt, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmq",
        description="Concept-bottleneck value decomposition for cooperative "
                    "multi-agent Q-learning")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one run per configured seed")
    train.add_argument("--config", help="YAML run configuration")
    train.add_argument("--out", required=True, help="run directory")
    train.add_argument("--seed", type=int, help="override the seed list")
    train.add_argument("--steps", type=int, help="override total env steps")
    train.add_argument("--mixer", choices=("cmq", "vdn"))
    train.add_argument("--concepts", type=int, help="override concept count")
    train.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=32)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--intervene", default="",
                    help='forced concept probabilities, e.g. "0=1.0,2=0.0"')
    ev.set_defaults(fn=cmd_eval)

    tr = sub.add_parser("trace", help="export one greedy episode as JSON lines")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--out", required=True, help="trace file path (.jsonl)")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--intervene", default="")
    tr.set_defaults(fn=cmd_trace)

    gc = sub.add_parser("gradcheck",
                        help="finite-difference check of the full pipeline")
    gc.add_argument("--configs", type=int, default=20)
    gc.set_defaults(fn=cmd_gradcheck)

    sw = sub.add_parser("sweep", help="concept-count ablation")
    sw.add_argument("--config", help="YAML run configuration")
    sw.add_argument("--out", required=True)
    sw.add_argument("--concepts", default="4,8,16",
                    help="comma-separated concept counts")
    sw.add_argument("--seed", type=int, help="override the seed list")
    sw.add_argument("--steps", type=int, help="override total env steps")
    sw.set_defaults(fn=cmd_sweep)

    sv = sub.add_parser("serve", help="live intervention session over a socket")
    sv.add_argument("--checkpoint", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8765)
    sv.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, LockError, TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
