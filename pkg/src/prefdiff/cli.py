"""Command-line interface.

Subcommands cover the whole pipeline: dataset generation, teacher labeling,
behavior cloning, alignment, evaluation, report rendering, the one-shot toy
comparison, and the gradient self-check. Train-style commands require an
explicit --seed; on failure the process exits nonzero with a one-line JSON
error on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time

import numpy as np

from .data import TeacherConfig, build_pref_dataset, export_pref_jsonl, load_offline_dataset, save_offline_dataset, save_pref_dataset
from .diffusion import load_checkpoint, save_checkpoint
from .envs import PointMassEnv, default_toy_mixture, make_pointmass_dataset, make_toy_dataset
from .errors import PrefdiffError, ValidationError
from .gradcheck import run_gradient_suite
from .losses import improvement_factor
from .report import report as render_report
from .training import (
    BcResult,
    ExperimentConfig,
    TrainTrace,
    default_config,
    env_from_dataset,
    evaluate,
    evaluation_rng,
    train_align,
    train_bc,
)


def _load_config(args, task: str | None = None) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = ExperimentConfig.load(args.config)
    else:
        if task is None:
            raise ValidationError("either --config or --task is required")
        config = default_config(task)
    return config


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    updates = {"seed": args.seed}
    if getattr(args, "offline", None):
        updates["offline_path"] = args.offline
    if getattr(args, "pref", None):
        updates["pref_path"] = args.pref
    if getattr(args, "steps", None) is not None:
        updates["bc_steps" if args.command == "train-bc" else "align_steps"] = args.steps
    config = dataclasses.replace(config, **updates)
    align_updates = {
        name: getattr(args, name)
        for name in ("rho", "mu", "b", "variant")
        if getattr(args, name, None) is not None
    }
    if align_updates:
        config = dataclasses.replace(config, align=dataclasses.replace(config.align, **align_updates))
    return config


def cmd_gen_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.task == "toy":
        dataset = make_toy_dataset(default_toy_mixture(), args.n_samples, rng)
    else:
        env = PointMassEnv(arena=args.arena, start_rim=args.start_rim, horizon=args.horizon)
        dataset = make_pointmass_dataset(
            env, args.episodes, rng,
            noise_std=args.noise_std, random_prob=args.random_prob, burst_len=args.burst_len,
        )
    save_offline_dataset(args.out, dataset, meta={"seed": args.seed})
    print(json.dumps({"out": args.out, "episodes": len(dataset.episodes), "state_dim": dataset.state_dim}))
    return 0


def cmd_label(args) -> int:
    dataset = load_offline_dataset(args.infile)
    teacher = TeacherConfig(noise_temp=args.noise_temp, drop_ties=args.drop_ties)
    rng = np.random.default_rng(args.seed)
    pairs = build_pref_dataset(dataset, args.k, args.n_pairs, teacher, rng)
    meta = {"seed": args.seed, "teacher": dataclasses.asdict(teacher), "source": args.infile}
    save_pref_dataset(args.out, pairs, dataset.state_dim, dataset.action_dim, args.k, meta=meta)
    if args.jsonl:
        export_pref_jsonl(args.jsonl, pairs)
    print(json.dumps({"out": args.out, "n_pairs": len(pairs), "ties": sum(p.tie for p in pairs)}))
    return 0


def cmd_train_bc(args) -> int:
    config = _apply_overrides(_load_config(args, args.task), args)
    dataset = load_offline_dataset(config.offline_path)
    result = train_bc(config, dataset)
    extra = {
        "phase": "bc",
        "reference_dmse": result.reference_dmse,
        "final_loss": float(result.losses[-1]) if result.losses.size else None,
        "seed": config.seed,
    }
    save_checkpoint(result.model, args.out, extra=extra)
    print(json.dumps({"out": args.out, "reference_dmse": result.reference_dmse, "steps": int(result.losses.size)}))
    return 0


def cmd_align(args) -> int:
    config = _apply_overrides(_load_config(args, args.task), args)
    dataset = load_offline_dataset(config.offline_path)
    model, extra = load_checkpoint(args.bc_checkpoint)
    if "reference_dmse" not in extra:
        raise ValidationError("checkpoint lacks reference_dmse; was it produced by train-bc?")
    bc = BcResult(model=model, losses=np.zeros(0), reference_dmse=float(extra["reference_dmse"]))
    result = train_align(config, bc, dataset=dataset)
    save_checkpoint(
        result.model,
        args.out,
        extra={"phase": "align", "variant": config.align.variant, "seed": config.seed, "b_used": result.b_used},
    )
    if args.trace_out:
        result.trace.save(args.trace_out)
    print(
        json.dumps(
            {
                "out": args.out,
                "variant": config.align.variant,
                "u0": result.u0,
                "u1": result.u1,
                "improvement_factor": improvement_factor(result.u0, result.u1) if result.u0 != 0.0 else None,
            }
        )
    )
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset = load_offline_dataset(args.data)
    task, env = env_from_dataset(dataset)
    result = evaluate(model, task, env, args.n, np.random.default_rng(args.seed))
    payload = {"u": result.u, "n": args.n, "task": task, **result.extra}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")
    print(json.dumps(payload))
    return 0


def cmd_report(args) -> int:
    trace = TrainTrace.load(args.trace)
    written = render_report(trace, args.out)
    print(json.dumps({"out": args.out, "files": written}))
    return 0


def cmd_gradcheck(args) -> int:
    results, ok = run_gradient_suite(seeds=tuple(args.seeds))
    for r in results:
        status = "ok" if r.rel_err <= 1e-4 else "FAIL"
        print(f"{r.name} seed={r.seed} params={r.n_params} rel_err={r.rel_err:.3e} [{status}]")
    return 0 if ok else 1


def cmd_toy_demo(args) -> int:
    """One-shot mixture comparison: clone, align three ways, evaluate, plot."""
    import os

    start = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    mixture = default_toy_mixture()
    rng = np.random.default_rng(args.seed)
    dataset = make_toy_dataset(mixture, args.n_samples, rng)
    offline_path = os.path.join(args.out, "toy_offline.bin")
    save_offline_dataset(offline_path, dataset, meta={"seed": args.seed})
    pairs = build_pref_dataset(dataset, 1, args.n_pairs, TeacherConfig(), rng)
    pref_path = os.path.join(args.out, "toy_pref.bin")
    save_pref_dataset(pref_path, pairs, dataset.state_dim, dataset.action_dim, 1, meta={"seed": args.seed})

    config = default_config("toy", seed=args.seed)
    config = dataclasses.replace(config, offline_path=offline_path, pref_path=pref_path)
    bc = train_bc(config, dataset)
    save_checkpoint(bc.model, os.path.join(args.out, "bc.ckpt"), extra={"reference_dmse": bc.reference_dmse})
    bc_eval = evaluate(bc.model, "toy", mixture, config.eval_episodes, evaluation_rng(config.seed, 0))
    summary = {
        "seed": args.seed,
        "reference_dmse": bc.reference_dmse,
        "bc": {"u": bc_eval.u, **bc_eval.extra},
    }
    for variant in ("fkpd", "rkpd", "nrpd"):
        vcfg = dataclasses.replace(config, align=dataclasses.replace(config.align, variant=variant))
        result = train_align(vcfg, bc, dataset=dataset, pairs=pairs)
        final = evaluate(result.model, "toy", mixture, config.eval_episodes, evaluation_rng(config.seed, config.align_steps))
        out_dir = os.path.join(args.out, variant)
        render_report(result.trace, out_dir, samples=final.records["samples"], mixture=mixture)
        result.trace.save(os.path.join(out_dir, "trace.json"))
        save_checkpoint(result.model, os.path.join(args.out, f"{variant}.ckpt"), extra={"variant": variant})
        summary[variant] = {
            "u0": result.u0,
            "u1": result.u1,
            "u": final.u,
            **final.extra,
        }
    summary["runtime_seconds"] = time.perf_counter() - start
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an offline dataset with the scripted behavior policy")
    p.add_argument("--task", choices=("toy", "pointmass"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-samples", type=int, default=20000, help="toy mixture draws")
    p.add_argument("--episodes", type=int, default=2000, help="point-mass episodes")
    p.add_argument("--arena", type=float, default=1.0, help="point-mass arena half-width")
    p.add_argument("--start-rim", type=float, default=0.7, help="start band inner edge, fraction of arena")
    p.add_argument("--horizon", type=int, default=32)
    p.add_argument("--noise-std", type=float, default=0.06, help="behavior policy Gaussian noise")
    p.add_argument("--random-prob", type=float, default=0.45, help="behavior policy random-action rate")
    p.add_argument("--burst-len", type=int, default=1, help="hold each random action this many steps")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("label", help="build a preference dataset with the script teacher")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n-pairs", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise-temp", type=float, default=0.0)
    p.add_argument("--drop-ties", action="store_true")
    p.add_argument("--jsonl", help="also export a lossless JSON-lines copy")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train-bc", help="behavior-clone a diffusion policy on offline data")
    p.add_argument("--task", choices=("toy", "pointmass"))
    p.add_argument("--config", help="JSON experiment config; overrides --task defaults")
    p.add_argument("--offline", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_bc)

    p = sub.add_parser("align", help="align a cloned policy to preferences")
    p.add_argument("--variant", choices=("fkpd", "rkpd", "nrpd"), required=True)
    p.add_argument("--task", choices=("toy", "pointmass"))
    p.add_argument("--config")
    p.add_argument("--bc-checkpoint", required=True)
    p.add_argument("--offline", required=True)
    p.add_argument("--pref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--trace-out", help="write the diagnostic trace as JSON")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its dataset's environment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="offline dataset whose header defines the environment")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render CSVs and SVG plots from a saved trace")
    p.add_argument("--trace", required=True, help="trace JSON written by align --trace-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("toy-demo", help="one-shot mixture comparison of all three variants")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=20000)
    p.add_argument("--n-pairs", type=int, default=2500)
    p.set_defaults(func=cmd_toy_demo)

    p = sub.add_parser("gradcheck", help="compare analytic loss gradients against finite differences")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PrefdiffError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
