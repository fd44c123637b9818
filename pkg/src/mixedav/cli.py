"""Command-line entry point: ``mixedav {simulate,train,eval,compare}``.

Exit codes: 0 success, 2 configuration error, 3 numerical integrity error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .env import TrafficEnv
from .errors import CheckpointError, ConfigError, DomainError, IntegrityError
from .metrics import (evaluate, export_time_space, format_keyvalue, format_table,
                      learning_curve_summary, metrics_from_trace)
from .ppo import PPO, Hyperparams, load_checkpoint, save_checkpoint, train
from .scenario import ScenarioConfig, benchmark, build, load_config
from .solver import run

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRITY, EXIT_IO = 0, 2, 3, 4


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else benchmark()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.write_text(text)


# -- schedules -------------------------------------------------------------------------

def load_schedule(path):
    """Piecewise-constant schedule from a two-column ``t,V`` file."""
    times, speeds = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                times.append(float(row[0]))
                speeds.append(float(row[1]))
            except (ValueError, IndexError):
                if times:
                    raise ConfigError(f"{path}: malformed schedule row {row}")
    if not times:
        raise ConfigError(f"{path}: empty schedule")
    order = np.argsort(times, kind="stable")
    times, speeds = np.asarray(times)[order], np.asarray(speeds)[order]

    def schedule(t):
        i = max(int(np.searchsorted(times, t, side="right")) - 1, 0)
        return float(speeds[i])
    return schedule


# -- commands -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load(args)
    state, av, grid, p = build(cfg)
    if args.schedule:
        schedule = load_schedule(args.schedule)
    else:
        schedule = p.v_max if args.speed is None else args.speed
    trace = run(state, av, grid, p, cfg.horizon, schedule, stride=1, cfl=cfg.cfl)
    if len(trace) < 2:
        raise ConfigError("simulation produced an empty trace")
    out = _outdir(args.out)
    stride = max(1, args.stride)
    keep = list(range(0, len(trace), stride))
    if keep[-1] != len(trace) - 1:
        keep.append(len(trace) - 1)
    thin = type(trace)(*[[getattr(trace, f)[k] for k in keep]
                         for f in ("times", "densities", "y", "y_dot", "v_cmd")])
    export_time_space(thin, out / "time_space.csv")
    m = metrics_from_trace(trace, p, commands=None)
    _write(out / "metrics.txt", format_keyvalue(m))
    print(format_table([("open loop", m)], label="run"), end="")
    return EXIT_OK


def _hyper(args) -> Hyperparams:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    try:
        hyper = Hyperparams.from_dict({**asdict(Hyperparams()), **overrides})
    except (DomainError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.sequential:
        hyper.workers = 1
    elif args.workers is not None:
        hyper.workers = args.workers
    return hyper


def cmd_train(args) -> int:
    cfg = _load(args)
    hyper = _hyper(args)
    out = _outdir(args.out)
    existing = sorted(out.glob("checkpoint*.npz"))
    if existing and not args.force:
        raise FileExistsError(f"{out}: refusing to overwrite {existing[0].name} (use --force)")
    extra = {"config": cfg.to_dict()}

    env_factory = lambda: TrafficEnv(cfg)
    agent = PPO(cfg.n_obs + 2, hyper, cfg.seed)
    save_checkpoint(out / "checkpoint_0000.npz", agent, {**extra, "iteration": 0})

    curve_path = out / "curve.csv"
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["iteration", "mean_return", "policy_loss", "value_loss",
                "ratio_mean", "clip_fraction", "approx_kl"]
        w.writerow(cols)

        def on_iteration(it, agent, mean_return, stats):
            w.writerow([it + 1] + [format(stats[c], ".9g") for c in cols[1:]])
            fh.flush()
            save_checkpoint(out / "checkpoint.npz", agent, {**extra, "iteration": it + 1})
            if not args.quiet:
                print(f"iter {it + 1:4d}  return {mean_return:10.4f}", flush=True)

        result = train(env_factory, hyper, cfg.seed, on_iteration, agent)

    lines = [f"iterations={len(result.curve)}"]
    if len(result.curve) >= 10:
        first, best, impr = learning_curve_summary(result.curve)
        lines += [f"baseline_return={first:.9g}", f"best_smoothed_return={best:.9g}",
                  f"improvement_fraction={impr:.9g}"]
    if result.curve:
        lines.append(f"final10_mean_return={np.mean(result.curve[-10:]):.9g}")
    _write(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _modes(args):
    if args.mode == "both":
        return ["stochastic", "deterministic"]
    return ["deterministic" if args.deterministic else args.mode]


def cmd_eval(args) -> int:
    cfg = _load(args)
    agent, _ = load_checkpoint(args.checkpoint)
    out = _outdir(args.out)
    rows = []
    for mode in _modes(args):
        summary = evaluate(agent.policy, cfg, args.episodes, mode, cfg.seed)
        _write(out / f"metrics_{mode}.txt", format_keyvalue(summary.mean)
               + format_keyvalue(summary.std, prefix="std_"))
        rows.append((mode, summary.mean))
    table = format_table(rows, label="mode")
    table += "\ncommand TV: " + ", ".join(f"{n}={m.command_tv:.6g}" for n, m in rows) + "\n"
    _write(out / "eval_table.txt", table)
    print(table, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _outdir(args.out)
    mode = "deterministic" if args.deterministic else args.mode
    rows = [("No Control", evaluate(None, cfg, 1, mode, cfg.seed).mean)]
    for path in args.checkpoints:
        agent, extra = load_checkpoint(path)
        label = Path(path).stem
        if "config" in extra and "reward" in extra["config"]:
            w = extra["config"]["reward"]
            label = "[" + ", ".join(f"{w[k]:g}" for k in ("w1", "w2", "w3")) + "]"
        rows.append((label, evaluate(agent.policy, cfg, args.episodes, mode, cfg.seed).mean))
    table = format_table(rows)
    _write(out / "compare.txt", table)
    _write(out / "compare_metrics.txt", "".join(
        format_keyvalue(m, prefix=f"row{i}.") for i, (_, m) in enumerate(rows)))
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario JSON file (default: stop-and-go benchmark)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--sequential", action="store_true", help="single-threaded reproducibility mode")

    p = sub.add_parser("simulate", help="open-loop simulation")
    common(p)
    p.add_argument("--speed", type=float, help="constant commanded AV speed")
    p.add_argument("--schedule", help="piecewise-constant t,V schedule file")
    p.add_argument("--stride", type=int, default=1, help="keep every k-th snapshot in the export")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a PPO speed controller")
    common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="hyperparameter override")
    p.add_argument("--force", action="store_true", help="overwrite existing checkpoints")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "evaluate one checkpoint"),
                              ("compare", cmd_compare, "baseline vs checkpoints metrics table")):
        p = sub.add_parser(name, help=help_)
        common(p)
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
        else:
            p.add_argument("--checkpoints", nargs="*", default=[])
        p.add_argument("--deterministic", action="store_true", help="use the policy mean")
        modes = ("stochastic", "deterministic") + (("both",) if name == "eval" else ())
        p.add_argument("--mode", choices=modes,
                       default="deterministic" if name == "compare" else "stochastic")
        p.add_argument("--episodes", type=int, default=1)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"numerical integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
