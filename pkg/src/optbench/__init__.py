"""Desk-scale optimizer benchmark harness.

Typical library usage::

    from optbench import parse_experiment, merge_defaults, expand_grid, train_run

    spec = parse_experiment(open("experiment.yaml").read())
    for cfg in expand_grid(merge_defaults(spec)):
        result = train_run(cfg, f"output/runs/{run_id(cfg)}")
"""

from .config import (
    expand_grid,
    merge_defaults,
    parse_experiment,
    register_optimizer_defaults,
    register_task_defaults,
    run_id,
)
from .engine import (
    RunResult,
    derive_seeds,
    extend_budget,
    load_checkpoint,
    resume_run,
    save_checkpoint,
    train_run,
)
from .evaluation import AggregateCell, HeatmapSpec, aggregate, export_table, render_heatmap
from .hpo import hyperband_schedule, run_hpo, retrain_best
from .optim import OptimizerConfig, configure_optimizer, register_optimizer
from .sched import ScheduleSpec, lr_at
from .tasks import build_task, evaluate, forward_backward, parameter_groups, register_task

__version__ = "0.1.0"

__all__ = [
    "AggregateCell",
    "HeatmapSpec",
    "OptimizerConfig",
    "RunResult",
    "ScheduleSpec",
    "aggregate",
    "build_task",
    "configure_optimizer",
    "derive_seeds",
    "evaluate",
    "expand_grid",
    "export_table",
    "extend_budget",
    "forward_backward",
    "hyperband_schedule",
    "load_checkpoint",
    "lr_at",
    "merge_defaults",
    "parameter_groups",
    "parse_experiment",
    "register_optimizer",
    "register_optimizer_defaults",
    "register_task",
    "register_task_defaults",
    "render_heatmap",
    "resume_run",
    "retrain_best",
    "run_hpo",
    "run_id",
    "save_checkpoint",
    "train_run",
]
