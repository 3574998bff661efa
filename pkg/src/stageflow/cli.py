"""Command-line harness: ``stageflow <command> [options]``.

Commands: train, sample, profile, boundaries, sweep, report.  Settings come
from ``--config`` (YAML); command-line flags override file values, which
override built-in defaults.  Errors print one line
``stageflow-error[<kind>]: <message>`` on stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analysis.boundaries import (
    choose_boundaries,
    lsl_schedule,
    write_boundary_report,
    write_early_curve_csv,
    write_late_sweep_csv,
)
from .analysis.divergence import velocity_divergence_profile, write_divergence_csv
from .analysis.sweep import evaluate_schedules, schedule_sweep, sweep_pareto, write_sweep_csv
from .config import ExperimentConfig, config_from_dict, load_config
from .errors import NotFoundError, StageflowError
from .models import ModelRegistry, VelocityModel
from .report import MANIFEST_FILE, TABLE_FILE, emit_report, sha256_file, write_table_csv
from .sampling import SamplerConfig, batch_sample, write_manifest, write_trajectory_csv
from .schedules import Schedule, parse_schedule
from .training import load_checkpoint, save_checkpoint, train, write_loss_trace

log = logging.getLogger("stageflow")

COMMANDS = ("train", "sample", "profile", "boundaries", "sweep", "report")


def checkpoint_path(cfg: ExperimentConfig, model_id: str) -> Path:
    return Path(cfg.output_dir) / "checkpoints" / f"{model_id}.ckpt"


def build_registry(cfg: ExperimentConfig) -> ModelRegistry:
    """Analytic models from the config, learned ones from their checkpoints."""
    registry = ModelRegistry()
    for mid, entry in cfg.model_specs.items():
        if entry.kind == "analytic_gaussian":
            registry = registry.register(VelocityModel.analytic_gaussian(mid, entry.mu, entry.sigma))
            continue
        path = checkpoint_path(cfg, mid)
        if not path.exists():
            raise NotFoundError(f"missing artifact {path}; run 'stageflow train' first")
        registry = registry.register(load_checkpoint(path).to_model(mid))
    return registry


def pricing(cfg: ExperimentConfig, registry: ModelRegistry) -> dict:
    return dict(cfg.per_step_flops_override) if cfg.per_step_flops_override else registry.pricing()


def _write_run_manifest(cfg: ExperimentConfig, command: str, files: Sequence[Path], started: float) -> Path:
    out = Path(cfg.output_dir) / MANIFEST_FILE
    doc = json.loads(out.read_text()) if out.exists() else {"runs": []}
    doc["tool_version"] = __version__
    doc["config"] = cfg.to_dict()
    doc["runs"].append({
        "command": command,
        "started": started,
        "wall_clock_s": round(time.time() - started, 3),
        "files": {p.relative_to(cfg.output_dir).as_posix(): sha256_file(p) for p in files},
    })
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out


def cmd_train(cfg: ExperimentConfig, args) -> list[Path]:
    ids = args.ids.split(",") if args.ids else cfg.learned_ids
    files = []
    ckpt_dir = Path(cfg.output_dir) / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for mid in ids:
        entry = cfg.model_specs.get(mid)
        if entry is None or entry.kind != "mlp":
            raise NotFoundError(f"no trainable model {mid!r} in model_specs")
        from .models import MlpSpec

        spec = MlpSpec.for_latent(2, entry.hidden_widths, cfg.dataset.num_classes)
        log.info("training %s %s for %d steps", mid, list(entry.hidden_widths), cfg.train[mid].steps)
        ckpt = train(spec, cfg.dataset, cfg.train[mid])
        files.append(save_checkpoint(ckpt, checkpoint_path(cfg, mid)))
        files.append(write_loss_trace(ckpt.loss_trace, Path(cfg.output_dir) / f"loss_{mid}.csv"))
    return files


def cmd_sample(cfg: ExperimentConfig, args) -> list[Path]:
    registry = build_registry(cfg)
    schedule = parse_schedule(cfg.schedule_text, registry.keys())
    n = args.n or 1
    batch = batch_sample(registry, schedule, cfg.sampler, cfg.seed, n, cfg.workers)
    out = Path(cfg.output_dir)
    files = [write_trajectory_csv(batch[0], out / "trajectory.csv")]
    ends = out / "endpoints.csv"
    lines = ["index,z_x,z_y"] + [f"{i},{float(t.endpoint[0])!r},{float(t.endpoint[1])!r}" for i, t in enumerate(batch)]
    ends.write_text("\n".join(lines) + "\n")
    files.append(ends)
    files.append(write_manifest(out / "sample_manifest.json", schedule.text(), cfg.sampler, cfg.seed,
                                batch[0].total_flops, n=n, schedule_input=cfg.schedule_text,
                                evals_per_step=cfg.sampler.evals_per_step,
                                flops_single_eval=batch[0].total_flops / cfg.sampler.evals_per_step))
    return files


def cmd_profile(cfg: ExperimentConfig, args) -> list[Path]:
    registry = build_registry(cfg)
    branches = ["cond", "uncond"] if args.branch == "both" else [args.branch]
    curves = [
        velocity_divergence_profile(registry, args.mainstream, args.other, cfg.sampler, cfg.n_seeds, b, cfg.seed)
        for b in branches
    ]
    return [write_divergence_csv(curves, Path(cfg.output_dir) / "divergence.csv")]


def table_schedules(cfg: ExperimentConfig, early: float, late: float) -> list[tuple[str, Schedule]]:
    """Large-only, configured, early-large and small-only rows plus the chosen LSL boundaries."""
    configured = parse_schedule(cfg.schedule_text, cfg.model_specs.keys())
    lead = configured.segments[0].fraction if len(configured.segments) > 1 else 0.4
    rows = [
        ("LLL", parse_schedule("LLL")),
        (cfg.schedule_text, configured),
        (f"LSS:{lead:.12g}", parse_schedule(f"LSS:{lead:.12g}")),
        ("SSS", parse_schedule("SSS")),
    ]
    chosen = lsl_schedule(early, late)
    if all(chosen != s for _, s in rows):
        rows.append((f"chosen:{chosen.text()}", chosen))
    return rows


def cmd_boundaries(cfg: ExperimentConfig, args) -> list[Path]:
    registry = build_registry(cfg)
    out = Path(cfg.output_dir)
    report, sweep = choose_boundaries(registry, cfg.sampler, cfg.early_grid, cfg.late_grid, cfg.dataset,
                                      cfg.n_seeds, cfg.alpha, cfg.tau, cfg.seed, cfg.workers)
    files = [
        write_early_curve_csv(report.curve, out / "early_curve.csv"),
        write_late_sweep_csv(sweep, out / "late_sweep.csv"),
        write_boundary_report(report, out / "boundary_report.json"),
    ]
    rows = evaluate_schedules(registry, cfg.sampler, table_schedules(cfg, report.early_fraction, report.late_fraction),
                              cfg.dataset, cfg.n_seeds, parse_schedule("LLL"), pricing(cfg, registry), cfg.seed,
                              cfg.workers)
    files.append(write_table_csv(rows, out / TABLE_FILE))
    return files


def cmd_sweep(cfg: ExperimentConfig, args) -> list[Path]:
    registry = build_registry(cfg)
    out = Path(cfg.output_dir)
    reports = schedule_sweep(registry, cfg.sampler, cfg.segments, cfg.dataset, cfg.n_seeds, ("L", "S"),
                             pricing(cfg, registry), cfg.seed, cfg.workers)
    front = sweep_pareto(reports)
    pareto = out / "pareto.json"
    # sweep.csv FLOPs include guidance/solver evaluations; divide by evals_per_step for the single-eval count
    pareto.write_text(json.dumps({"metric": "frechet", "indices": front, "evals_per_step": cfg.sampler.evals_per_step,
                                  "schedules": [reports[i].schedule_text for i in front]}, indent=2) + "\n")
    return [write_sweep_csv(reports, out / "sweep.csv"), pareto]


def cmd_report(cfg: ExperimentConfig, args) -> list[Path]:
    emit_report(cfg.output_dir)
    return [Path(cfg.output_dir) / "summary.json"]


HANDLERS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "profile": cmd_profile,
    "boundaries": cmd_boundaries,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (flags > file > defaults)")
    common.add_argument("--output-dir", help="artifact directory")
    common.add_argument("--seed", type=int, help="base seed for sampling streams")
    common.add_argument("--workers", type=int, help="parallel workers for batch sampling")
    common.add_argument("--n-seeds", type=int, help="trajectories per batch")
    common.add_argument("--steps", type=int, help="sampling steps (sampler.total_steps)")
    common.add_argument("--solver", choices=["euler", "heun"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stageflow", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"stageflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train learned models, write checkpoints and loss CSVs")
    p.add_argument("--ids", help="comma-separated model ids (default: every mlp model)")
    p = sub.add_parser("sample", parents=[common], help="sample with one schedule")
    p.add_argument("--schedule", help="schedule text, e.g. LSL:0.4:0.2 or L@0.4,S@0.4,L@0.2")
    p.add_argument("--n", type=int, help="number of trajectories (default 1)")
    p = sub.add_parser("profile", parents=[common], help="velocity divergence along the mainstream trajectory")
    p.add_argument("--mainstream", default="L")
    p.add_argument("--other", default="S")
    p.add_argument("--branch", choices=["cond", "uncond", "both"], default="uncond")
    sub.add_parser("boundaries", parents=[common], help="early/late boundary search and the schedule comparison table")
    p = sub.add_parser("sweep", parents=[common], help="score every equal-segment L/S schedule")
    p.add_argument("--segments", type=int)
    sub.add_parser("report", parents=[common], help="join artifacts into summary.json")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    raw = cfg.to_dict()
    flag_map = {
        "output_dir": ("output_dir",),
        "seed": ("seed",),
        "workers": ("workers",),
        "n_seeds": ("n_seeds",),
        "steps": ("sampler", "total_steps"),
        "solver": ("sampler", "solver"),
        "schedule": ("schedule",),
        "segments": ("segments",),
    }
    for flag, path in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        target = raw
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = value
    return config_from_dict(raw)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        started = time.time()
        files = HANDLERS[args.command](cfg, args)
        _write_run_manifest(cfg, args.command, files, started)
        for f in files:
            print(f)
    except StageflowError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"stageflow-error[{exc.kind}]: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
