"""Command-line entry point: ``cdrb <command> [options]``.

Commands: gen-demos, train, plan, eval, ablate, selftest. Every command reads an
optional JSON config (``--config``) whose fields flags override. Exit codes:
0 success, 2 config error, 3 I/O or format error, 4 numeric failure,
5 a gated metric below its threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("cdrb")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config; flags override its fields")
    p.add_argument("--maze", help="preset name (maze, maze_tight, empty) or maze JSON path")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, help="training steps")
    p.add_argument("--schedule", choices=("linear", "log"))
    p.add_argument("--t", type=int, help="number of diffusion steps")
    p.add_argument("--d-max", type=float, help="override the maximum degradation radius")
    p.add_argument("--sampler", choices=("alg2", "eq5"))
    p.add_argument("--pin", type=_bool, help="pin start and goal (default true)")
    p.add_argument("--include-actions", type=_bool, help="diffuse state-action vectors")
    p.add_argument("--kmeans", type=int, help="compress the buffer to this many points (0 = off)")
    p.add_argument("--lr-decay", choices=("none", "cosine"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdrb", description="Cold diffusion on the replay buffer: maze planning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="generate an expert demonstration dataset")
    _common(p)
    p.add_argument("--n", type=int, help="number of demonstrations")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("train", help="train a CDRB or Gaussian-baseline model")
    _common(p)
    _model_flags(p)
    p.add_argument("--method", choices=("cdrb", "gaussian"))
    p.add_argument("--dataset", type=Path, help="dataset file; generated from the config when absent")

    p = sub.add_parser("plan", help="plan one trajectory with a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--start", type=float, nargs="+", required=True, metavar="X", help="x y [vx vy]")
    p.add_argument("--goal", type=float, nargs=2, required=True, metavar="X")
    p.add_argument("--sampler", choices=("alg2", "eq5"))
    p.add_argument("--pin", type=_bool)
    p.add_argument("--svg", type=Path, help="also draw the plan over the maze")

    p = sub.add_parser("eval", help="benchmark checkpoints and baselines on shared episodes")
    _common(p)
    p.add_argument("checkpoints", type=Path, nargs="*")
    p.add_argument("--baselines", nargs="*", default=[], choices=("projection", "expert", "blind"))
    p.add_argument("--episodes", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--sampler", choices=("alg2", "eq5"))
    p.add_argument("--min-success", type=float, help="exit 5 if the first method's success rate is lower")
    p.add_argument("--svg", action="store_true", help="write one SVG of first-episode plans")

    p = sub.add_parser("ablate", help="train and evaluate CDRB over a parameter grid")
    _common(p)
    _model_flags(p)
    p.add_argument("--kind", required=True, choices=("kmeans_size", "schedule", "steps_t", "action_inclusion"))
    p.add_argument("--grid", nargs="+", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seeds", type=int, nargs="+")

    p = sub.add_parser("selftest", help="gradient, index, k-means and schedule checks")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args):
    from .config import RunConfig

    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    over = {
        "maze": getattr(args, "maze", None),
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "n_demos": getattr(args, "n", None),
        "horizon": getattr(args, "horizon", None),
        "steps": getattr(args, "steps", None),
        "schedule": getattr(args, "schedule", None),
        "t": getattr(args, "t", None),
        "d_max": getattr(args, "d_max", None),
        "sampler": getattr(args, "sampler", None),
        "pin": getattr(args, "pin", None),
        "include_actions": getattr(args, "include_actions", None),
        "kmeans_k": getattr(args, "kmeans", None),
        "lr_decay": getattr(args, "lr_decay", None),
        "method": getattr(args, "method", None),
        "episodes": getattr(args, "episodes", None),
        "seeds": getattr(args, "seeds", None),
    }
    return cfg.replace(**over)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_demos(args) -> int:
    from .expert import save_dataset
    from .pipeline import dataset_for

    cfg = _config(args)
    ds = dataset_for(cfg)
    out = args.out or Path(cfg.out_dir) / "demos.jsonl"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} demos (H={ds.horizon}, maze {ds.maze_id}) to {out}")
    return 0


def cmd_train(args) -> int:
    from .expert import load_dataset
    from .pipeline import save_model, train_model

    cfg = _config(args)
    ds = load_dataset(args.dataset) if args.dataset else None
    every = max(1, cfg.steps // 20)

    def progress(i, loss):
        if (i + 1) % every == 0:
            log.info("step %d/%d loss %.5f", i + 1, cfg.steps, loss)

    model = train_model(cfg, ds, callback=progress)
    out = args.out or Path(cfg.out_dir) / f"{cfg.method}.ckpt"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    tail = model.losses[-100:].mean() if len(model.losses) else float("nan")
    print(f"trained {cfg.method} for {cfg.steps} steps (final loss {tail:.5f}); checkpoint {out}")
    return 0


def cmd_plan(args) -> int:
    import numpy as np

    from .config import stream
    from .env import point_feasible
    from .errors import ConfigError
    from .pipeline import load_model
    from .plotting import write_svg

    model = load_model(args.checkpoint)
    maze = model.maze
    start = list(args.start)
    if len(start) == 2:
        start += [0.0, 0.0]
    if len(start) != 4:
        raise ConfigError("--start takes x y or x y vx vy")
    if not point_feasible(np.array(start[:2]), maze):
        raise ConfigError(f"start {start[:2]} is not feasible in maze {maze.name}")
    planner = model.planner(args.sampler or "alg2", True if args.pin is None else args.pin)
    seed = 0 if args.seed is None else args.seed
    plan = planner.plan_batch(np.array([start]), np.array([args.goal]), stream(seed, "plan"))[0]
    out = args.out or Path("plan.json")
    Path(out).write_text(json.dumps({"maze": maze.name, "states": plan.tolist()}) + "\n")
    print(f"wrote plan with {len(plan)} states to {out}")
    if args.svg:
        write_svg(args.svg, maze, [plan], labels=[planner.name], title=f"{planner.name} plan")
        print(f"wrote {args.svg}")
    return 0


def cmd_eval(args) -> int:
    from .env import load_maze
    from .errors import ConfigError, ThresholdError
    from .evaluation import format_table, make_episodes, save_reports
    from .pipeline import baseline_planners, benchmark, load_model
    from .plotting import write_svg

    cfg = _config(args)
    models = [load_model(p) for p in args.checkpoints]
    if not models and not args.baselines:
        raise ConfigError("nothing to evaluate: pass checkpoints and/or --baselines")
    maze = models[0].maze if models else load_maze(cfg.maze)
    planners = []
    for path, m in zip(args.checkpoints, models):
        planners.append(m.planner(cfg.sampler, cfg.pin, name=f"{m.method}:{path.stem}" if len(models) > 1 else m.method))
    cdrb = next((m for m in models if m.method == "cdrb"), None)
    planners += baseline_planners(args.baselines, cfg, cdrb, maze)
    reports = benchmark(cfg, planners, maze)
    print(format_table(reports))
    out = _out_dir(args, cfg)
    save_reports(reports, out / "eval_reports.json")
    print(f"reports written to {out / 'eval_reports.json'}")
    if args.svg:
        import numpy as np

        from .config import stream

        s, g = make_episodes(maze, cfg.seeds[0], 1)[0]
        plans = [p.plan_batch(s[None], g[None], stream(cfg.seeds[0], "svg"))[0] for p in planners]
        write_svg(out / "eval_plans.svg", maze, [np.asarray(p) for p in plans], labels=[p.name for p in planners])
    if args.min_success is not None and reports[0].success_rate < args.min_success:
        raise ThresholdError(
            f"{reports[0].method} success {reports[0].success_rate:.3f} below required {args.min_success:.3f}"
        )
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import format_table, save_reports
    from .pipeline import ablate

    cfg = _config(args)
    reports, curves = ablate(args.kind, args.grid, cfg)
    print(format_table(reports, label=args.kind))
    out = _out_dir(args, cfg)
    save_reports(reports, out / f"ablate_{args.kind}.json")
    (out / f"ablate_{args.kind}_losses.json").write_text(json.dumps({k: v.tolist() for k, v in curves.items()}) + "\n")
    print(f"ablation written to {out}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<40} {r.detail} ({r.seconds:.2f}s)")
    return 0 if all(r.passed for r in results) else 4


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = getattr(args, "threads", None)
    if threads:
        # only effective before numpy loads its BLAS, i.e. when run as a fresh process
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)
    from .errors import CDRBError

    try:
        return COMMANDS[args.command](args)
    except CDRBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
