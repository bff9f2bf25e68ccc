"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (a run aborted or nothing to do),
2 configuration error. Run directories live under
``<engine.output_dir>/<experiment name>/runs/<run_id>``, where the
experiment name is the YAML file's stem.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import hpo as hpomod
from .engine import RunResult, load_checkpoint, resume_run, train_run
from .errors import BenchmarkError, ConfigError
from .evaluation import run_evaluation


def _expand_file(experiment_file: str) -> tuple[str, list[dict]]:
    text = Path(experiment_file).read_text(encoding="utf-8")
    spec = cfgmod.parse_experiment(text)
    merged = cfgmod.merge_defaults(spec)
    configs = cfgmod.expand_grid(merged)
    return Path(experiment_file).stem, configs


def _experiment_dir(configs: list[dict], name: str) -> Path:
    return Path(configs[0]["engine"].get("output_dir", "output")) / name


def _run_workdir(exp_dir: Path, cfg: dict) -> Path:
    return exp_dir / "runs" / cfgmod.run_id(cfg)


def _varying_paths(configs: list[dict]) -> list[str]:
    flat = [cfgmod.flatten(cfgmod.identity_view(c)) for c in configs]
    paths = sorted({p for f in flat for p in f})
    return [p for p in paths if len({repr(f.get(p)) for f in flat}) > 1]


def _print_run_table(configs: list[dict]) -> None:
    varying = _varying_paths(configs)
    header = ["index", "run_id"] + varying
    rows = [
        [str(i), cfgmod.run_id(c)] + [str(cfgmod.get_path(c, p)) for p in varying]
        for i, c in enumerate(configs)
    ]
    widths = [max(len(h), *(len(r[j]) for r in rows)) if rows else len(h) for j, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)))


def _train_one(cfg: dict, workdir: str) -> dict:
    return train_run(cfg, workdir).to_dict()


def cmd_run(args) -> int:
    name, configs = _expand_file(args.experiment_file)

    if args.dry_run:
        _print_run_table(configs)
        return 0

    index = args.run_index
    if index is None and "SLURM_ARRAY_TASK_ID" in os.environ:
        index = int(os.environ["SLURM_ARRAY_TASK_ID"])
    if index is not None:
        if not 0 <= index < len(configs):
            raise ConfigError(f"run index {index} outside 0..{len(configs) - 1}")
        configs_to_run = [configs[index]]
    else:
        configs_to_run = configs

    exp_dir = _experiment_dir(configs, name)
    jobs = [(cfg, _run_workdir(exp_dir, cfg)) for cfg in configs_to_run]
    results: list[RunResult] = []
    if args.workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_train_one, cfg, str(wd)) for cfg, wd in jobs]
            results = [RunResult.from_dict(f.result()) for f in futures]
    else:
        for cfg, wd in jobs:
            results.append(train_run(cfg, wd))

    for cfg, result in zip(configs_to_run, results):
        print(f"{result.run_id}  {result.status}  epochs={len(result.history)}")

    failed = any(r.status != "completed" for r in results)
    if index is None and not failed:
        paths = run_evaluation(list(zip(configs, results)), configs[0]["evaluation"], exp_dir)
        for p in paths:
            print(f"wrote {p}")
    return 1 if failed else 0


def cmd_resume(args) -> int:
    name, configs = _expand_file(args.experiment_file)
    exp_dir = _experiment_dir(configs, name)
    resumed = 0
    failed = False
    for cfg in configs:
        workdir = _run_workdir(exp_dir, cfg)
        result_path = workdir / "result.json"
        if result_path.exists() and RunResult.load(result_path).status == "completed":
            continue
        if not (workdir / "checkpoints" / "last.ckpt").exists():
            continue
        result = resume_run(cfg, workdir)
        resumed += 1
        print(f"{result.run_id}  {result.status}  epochs={len(result.history)}")
        failed = failed or result.status != "completed"
    print(f"resumed {resumed} run(s)")
    return 1 if failed else 0


def cmd_plot(args) -> int:
    target = Path(args.target)
    if target.is_dir():
        exp_dir = target
        run_dirs = sorted(exp_dir.glob("runs/*"))
        evaluation_cfg = None
    else:
        name, configs = _expand_file(str(target))
        exp_dir = _experiment_dir(configs, name)
        run_dirs = [_run_workdir(exp_dir, cfg) for cfg in configs]
        evaluation_cfg = configs[0]["evaluation"]

    pairs = []
    for rd in run_dirs:
        result_path = rd / "result.json"
        config_path = rd / "config.resolved.yaml"
        if not result_path.exists() or not config_path.exists():
            continue
        result = RunResult.load(result_path)
        if result.status != "completed":
            continue
        cfg = cfgmod.load_config(config_path.read_text(encoding="utf-8"))
        if evaluation_cfg is None:
            evaluation_cfg = cfg.get("evaluation", {})
        pairs.append((cfg, result))
    if not pairs:
        print("no completed runs found", file=sys.stderr)
        return 1
    paths = run_evaluation(pairs, evaluation_cfg or {}, exp_dir)
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_list(args) -> int:
    out_dir = Path(args.output_dir)
    rows = []
    for result_path in sorted(out_dir.glob("*/runs/*/")):
        rid = result_path.name
        rj = result_path / "result.json"
        last = result_path / "checkpoints" / "last.ckpt"
        if rj.exists():
            result = RunResult.load(rj)
            best = result.best_val["value"] if result.best_val else None
            rows.append((rid, result.status, len(result.history), best))
        elif last.exists():
            ckpt = load_checkpoint(last)
            best = ckpt.best_val["value"] if ckpt.best_val else None
            rows.append((rid, "incomplete", ckpt.epoch, best))
    print(f"{'run_id':<18}{'status':<12}{'epoch':<7}best_val")
    for rid, status, epoch, best in rows:
        best_s = "-" if best is None else f"{best:.6g}"
        print(f"{rid:<18}{status:<12}{epoch:<7}{best_s}")
    return 0


def cmd_hpo(args) -> int:
    raw = hpomod.load_hpo_file(args.hpo_file)
    spec = cfgmod.parse_experiment(raw["experiment_text"])
    configs = cfgmod.expand_grid(cfgmod.merge_defaults(spec))
    if len(configs) != 1:
        raise ConfigError("hpo base experiment must resolve to a single run")
    base = configs[0]
    space = hpomod.parse_space(raw["space"])
    workdir = Path(base["engine"].get("output_dir", "output")) / (
        Path(args.hpo_file).stem + "_hpo"
    )
    outcome = hpomod.run_hpo(
        base_config=base,
        space=space,
        n_trials=int(raw.get("n_trials", 10)),
        init_fraction=float(raw.get("init_fraction", 0.1)),
        R=raw.get("R"),
        eta=int(raw.get("eta", 3)),
        seed=int(raw.get("seed", 0)),
        workdir=workdir,
    )
    print(f"trials: {len(outcome.trials)}  log: {workdir / 'trials.jsonl'}")
    print(f"best trial {outcome.best.trial_id}: objective={outcome.best.objective:.6g}")
    for path, value in sorted(outcome.best.overlay.items()):
        print(f"  {path} = {value}")
    if raw.get("retrain_seeds"):
        cells = hpomod.retrain_best(outcome.best.config, raw["retrain_seeds"], workdir)
        for cell in cells:
            print(
                f"retrained n={cell.n}: best={cell.mean_best:.6g}±{cell.std_best:.3g} "
                f"last={cell.mean_last:.6g}±{cell.std_last:.3g}"
            )
    return 0


def cmd_slurm_script(args) -> int:
    name, configs = _expand_file(args.experiment_file)
    lines = [
        "#!/bin/bash",
        f"#SBATCH --job-name={name}",
        f"#SBATCH --array=0-{len(configs) - 1}",
    ]
    if args.partition:
        lines.append(f"#SBATCH --partition={args.partition}")
    if args.time:
        lines.append(f"#SBATCH --time={args.time}")
    lines += [
        "",
        f'optbench run "{args.experiment_file}" --run-index "$SLURM_ARRAY_TASK_ID"',
        "",
    ]
    print("\n".join(lines), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optbench", description="Optimizer benchmark harness."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="expand an experiment file and train its runs")
    p_run.add_argument("experiment_file")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--run-index", type=int, default=None)
    p_run.add_argument("--dry-run", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="resume incomplete runs of an experiment")
    p_resume.add_argument("experiment_file")
    p_resume.set_defaults(func=cmd_resume)

    p_plot = sub.add_parser("plot", help="regenerate tables and heatmaps from results")
    p_plot.add_argument("target", help="experiment file or experiment output directory")
    p_plot.set_defaults(func=cmd_plot)

    p_list = sub.add_parser("list", help="tabulate run status under an output directory")
    p_list.add_argument("output_dir")
    p_list.set_defaults(func=cmd_list)

    p_hpo = sub.add_parser("hpo", help="multi-fidelity search driven by an hpo file")
    p_hpo.add_argument("hpo_file")
    p_hpo.set_defaults(func=cmd_hpo)

    p_slurm = sub.add_parser("slurm-script", help="emit a batch array script")
    p_slurm.add_argument("experiment_file")
    p_slurm.add_argument("--partition", default=None)
    p_slurm.add_argument("--time", default=None)
    p_slurm.set_defaults(func=cmd_slurm_script)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (BenchmarkError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
