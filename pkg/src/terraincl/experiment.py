"""Run orchestration: the train/validate loop, sweeps, and reporting.

One run executes a scenario end to end: per iteration it collects a rollout
on the current phase's terrain, computes restart-aware advantages, applies
the PPO update, then steps the frozen-snapshot validation pool across all
terrains and logs both splits. Every random stream derives from the run seed
under a distinct label (terrain/<phase>, policy-init, train/action-sample,
train/minibatch-shuffle, train/commands, validation/commands,
validation/obs-noise), so streams never interact: enabling validation cannot
perturb training.
"""

from __future__ import annotations

import csv
import logging
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, save_config
from .curriculum import Scenario, build_scenario, on_phase_change, phase_at
from .env import ACT_DIM, OBS_DIM, TerrainPatch, VecEnv
from .evaluation import (
    MOVING_AVERAGE_WINDOW,
    ValidationMatrix,
    ValidationPool,
    moving_average,
    transfer_metrics,
)
from .policy import ActorCritic, CheckpointMeta, save_checkpoint
from .ppo import Adam, RolloutBuffer, collect_rollout, compute_gae, update
from .rng import derive_seed, substream

log = logging.getLogger(__name__)

TRAINING_LOG_COLUMNS = [
    "iteration",
    "phase",
    "terrain",
    "split",
    "reward_ma",
    "episodes_terminated",
    "loss_actor",
    "loss_value",
    "entropy",
    "clip_fraction",
    "approx_kl",
]


@dataclass
class RunArtifacts:
    out_dir: Path
    config_path: Path
    manifest_path: Path
    training_log_path: Path
    validation_path: Path | None
    phases_path: Path
    transfer_csv_path: Path | None
    transfer_text_path: Path | None
    final_checkpoint: Path | None
    completed: bool
    failure_iteration: int | None = None


def build_patches(scenario: Scenario, cfg: RunConfig) -> list[TerrainPatch]:
    """One terrain patch per phase; duplicate kinds get distinct patch seeds."""
    patches = []
    for index, phase in enumerate(scenario.phases):
        seed = derive_seed(cfg.seed, "terrain", phase.label, index)
        patches.append(
            TerrainPatch.build(
                phase.kind,
                cfg.terrain,
                seed,
                rough=phase.rough,
                label=f"{index}_{phase.label}",
            )
        )
    return patches


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _write_manifest(path: Path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            fh.write(f"{key} = {value}\n")


def read_manifest(path: Path) -> dict[str, str]:
    entries = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def run(cfg: RunConfig, out_dir, scenario: Scenario | None = None) -> RunArtifacts:
    """Execute one seeded run and persist all artifacts under `out_dir`."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    if scenario is None:
        scenario = build_scenario(cfg.scenario, cfg.phase_length)

    config_path = out / "config.txt"
    save_config(cfg, config_path)
    manifest_path = out / "manifest.txt"
    manifest = {
        "status": "running",
        "scenario": scenario.name,
        "seed": cfg.seed,
        "backend": cfg.backend,
        "code_version": __version__,
        "iterations_total": scenario.total_iterations,
        "started_unix": f"{time.time():.3f}",
    }
    _write_manifest(manifest_path, manifest)

    patches = build_patches(scenario, cfg)
    train_env = VecEnv(
        cfg.env,
        patches,
        np.zeros(cfg.num_train_agents, dtype=np.int64),
        cfg.seed,
        "train",
    )
    train_env.reset_all()
    policy = ActorCritic(OBS_DIM, ACT_DIM).initialize(substream(cfg.seed, "policy-init"))
    adam = Adam(policy.parameters())
    action_rng = substream(cfg.seed, "train", "action-sample")
    shuffle_rng = substream(cfg.seed, "train", "minibatch-shuffle")
    buffer = RolloutBuffer(cfg.ppo.steps_per_iteration, cfg.num_train_agents)

    pool = None
    matrix = None
    if cfg.validation_enabled:
        pool = ValidationPool(cfg.env, patches, cfg.agents_per_terrain_val, cfg.seed)
        matrix = ValidationMatrix(
            patch_labels=[p.label for p in patches],
            patch_identities=[p.identity for p in patches],
            phase_boundaries=list(scenario.change_points),
        )
    prev_snapshot = policy.copy()

    train_ring: deque = deque(maxlen=MOVING_AVERAGE_WINDOW)
    training_rows: list[list] = []
    current_phase = -1
    failure_iteration = None
    started = time.perf_counter()

    for iteration in range(scenario.total_iterations):
        phase_index, phase = phase_at(scenario, iteration)
        if phase_index != current_phase:
            if current_phase >= 0:
                save_checkpoint(
                    ckpt_dir / f"phase_{current_phase:02d}.ckpt",
                    policy,
                    CheckpointMeta(iteration, cfg.seed, scenario.name),
                )
                on_phase_change(train_env, phase_index)
                log.info(
                    "iteration %d: phase %d begins on %s",
                    iteration,
                    phase_index,
                    phase.label,
                )
            current_phase = phase_index

        episode_returns = collect_rollout(policy, train_env, buffer, action_rng)
        train_ring.extend(episode_returns)
        advantages, returns = compute_gae(buffer, cfg.ppo)
        stats = update(policy, adam, buffer, advantages, returns, cfg.ppo, shuffle_rng)
        if stats.fault:
            failure_iteration = iteration
            log.error("non-finite loss at iteration %d; aborting run", iteration)
            break

        if pool is not None:
            pool.run(prev_snapshot, cfg.ppo.steps_per_iteration)
            means, counts = pool.snapshot_row()
            matrix.append(means, counts)
        prev_snapshot = policy.copy()

        training_rows.append(
            [
                iteration,
                phase_index,
                phase.label,
                "train",
                _fmt(moving_average(train_ring)),
                len(episode_returns),
                _fmt(stats.loss_actor),
                _fmt(stats.loss_value),
                _fmt(stats.entropy),
                _fmt(stats.clip_fraction),
                _fmt(stats.approx_kl),
            ]
        )

    wall = time.perf_counter() - started
    iterations_done = (
        failure_iteration if failure_iteration is not None else scenario.total_iterations
    )

    training_log_path = out / "training_log.csv"
    with open(training_log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_COLUMNS)
        writer.writerows(training_rows)

    phases_path = out / "phases.csv"
    with open(phases_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "start_iteration", "end_iteration", "terrain"])
        start = 0
        for index, phase in enumerate(scenario.phases):
            writer.writerow([index, start, start + phase.length_iters - 1, phase.label])
            start += phase.length_iters

    validation_path = None
    transfer_csv_path = None
    transfer_text_path = None
    if matrix is not None:
        validation_path = out / "validation.csv"
        matrix.write_csv(validation_path)
        if failure_iteration is None:
            report = transfer_metrics(matrix, scenario)
            transfer_csv_path = out / "transfer_report.csv"
            transfer_text_path = out / "transfer_report.txt"
            report.write_csv(transfer_csv_path)
            report.write_text(transfer_text_path)

    final_checkpoint = None
    if failure_iteration is None:
        final_checkpoint = ckpt_dir / "final.ckpt"
        save_checkpoint(
            final_checkpoint,
            policy,
            CheckpointMeta(scenario.total_iterations, cfg.seed, scenario.name),
        )

    manifest.update(
        {
            "status": "failed" if failure_iteration is not None else "completed",
            "iterations_done": iterations_done,
            "wall_seconds": f"{wall:.3f}",
            "mean_iteration_seconds": f"{wall / max(iterations_done, 1):.6f}",
            "env_faults": train_env.fault_count,
            "finished_unix": f"{time.time():.3f}",
        }
    )
    if failure_iteration is not None:
        manifest["failure_iteration"] = failure_iteration
    _write_manifest(manifest_path, manifest)

    return RunArtifacts(
        out_dir=out,
        config_path=config_path,
        manifest_path=manifest_path,
        training_log_path=training_log_path,
        validation_path=validation_path,
        phases_path=phases_path,
        transfer_csv_path=transfer_csv_path,
        transfer_text_path=transfer_text_path,
        final_checkpoint=final_checkpoint,
        completed=failure_iteration is None,
        failure_iteration=failure_iteration,
    )


# -- sweeps -------------------------------------------------------------------


def sweep(cfg: RunConfig, seeds: list[int], out_dir) -> Path:
    """Run each seed, then aggregate validation traces (mean and min-max).

    A failed run is recorded in the sweep manifest; aggregation proceeds over
    the completed runs.
    """
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_dirs = []
    statuses = {}
    for seed in seeds:
        run_cfg = cfg.copy()
        run_cfg.seed = seed
        artifacts = run(run_cfg, out / f"run_seed{seed}")
        statuses[seed] = "completed" if artifacts.completed else "failed"
        if artifacts.completed and artifacts.validation_path is not None:
            run_dirs.append(artifacts.out_dir)
    aggregate_path = out / "aggregate_validation.csv"
    if run_dirs:
        aggregate_validation([d / "validation.csv" for d in run_dirs], aggregate_path)
    manifest = {"seeds": ",".join(str(s) for s in seeds)}
    manifest.update({f"run_seed{seed}": status for seed, status in statuses.items()})
    _write_manifest(out / "sweep_manifest.txt", manifest)
    return aggregate_path


def aggregate_validation(csv_paths: list[Path], out_path: Path) -> None:
    """Merge per-run validation traces into mean/min/max per (iteration, terrain)."""
    matrices = [ValidationMatrix.read_csv(p) for p in csv_paths]
    labels = matrices[0].patch_labels
    iterations = min(m.num_iterations for m in matrices)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "terrain", "reward_mean", "reward_min", "reward_max", "runs"])
        for it in range(iterations):
            for p, label in enumerate(labels):
                values = [
                    m.rows[it][p] for m in matrices if m.rows[it][p] is not None
                ]
                if values:
                    writer.writerow(
                        [
                            it,
                            label,
                            repr(float(np.mean(values))),
                            repr(float(np.min(values))),
                            repr(float(np.max(values))),
                            len(values),
                        ]
                    )
                else:
                    writer.writerow([it, label, "", "", "", 0])


# -- reporting ----------------------------------------------------------------


def _find_runs(runs_dir: Path) -> list[Path]:
    runs = []
    for manifest in sorted(runs_dir.glob("manifest.txt")):
        runs.append(manifest.parent)
    for manifest in sorted(runs_dir.glob("*/manifest.txt")):
        runs.append(manifest.parent)
    for manifest in sorted(runs_dir.glob("*/*/manifest.txt")):
        runs.append(manifest.parent)
    return runs


def report(runs_dir) -> str:
    """Markdown summary: transfer metrics per terrain per scenario.

    Metrics are recomputed from each run's raw validation CSV, then
    aggregated over seeds as mean (min..max).
    """
    runs_dir = Path(runs_dir)
    run_paths = _find_runs(runs_dir)
    if not run_paths:
        raise FileNotFoundError(
            f"no runs found under {runs_dir} (looked for manifest.txt up to two levels deep)"
        )

    per_scenario: dict[str, list] = {}
    csv_pointers: list[str] = []
    for path in run_paths:
        manifest = read_manifest(path / "manifest.txt")
        if manifest.get("status") != "completed":
            continue
        validation = path / "validation.csv"
        if not validation.exists():
            continue
        cfg = load_config(path / "config.txt")
        scenario = build_scenario(manifest["scenario"], cfg.phase_length)
        matrix = ValidationMatrix.read_csv(validation)
        rep = transfer_metrics(matrix, scenario)
        per_scenario.setdefault(scenario.name, []).append(rep)
        csv_pointers.append(str(validation))
    for agg in sorted(runs_dir.rglob("aggregate_validation.csv")):
        csv_pointers.append(str(agg))

    if not per_scenario:
        raise FileNotFoundError(
            f"runs under {runs_dir} exist but none completed with validation traces"
        )

    def cell(values: list[float | None]) -> str:
        present = [v for v in values if v is not None]
        if not present:
            return "n/a"
        mean = float(np.mean(present))
        if len(present) == 1:
            return f"{mean:.3f}"
        return f"{mean:.3f} ({min(present):.3f}..{max(present):.3f})"

    scenario_names = sorted(per_scenario)
    lines = ["# Transfer report", ""]
    lines.append(
        "Aggregates over "
        + ", ".join(f"{len(per_scenario[s])} {s} run(s)" for s in scenario_names)
        + "."
    )
    lines.append("")
    for formula in per_scenario[scenario_names[0]][0].formulas:
        lines.append(f"- {formula}")
    lines.append("")
    header = ["terrain"]
    for name in scenario_names:
        header += [f"{name} F", f"{name} BWT", f"{name} FWT"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    terrains: list[str] = []
    for name in scenario_names:
        for rep in per_scenario[name]:
            for entry in rep.entries:
                if entry.identity not in terrains:
                    terrains.append(entry.identity)
    for terrain in terrains:
        row = [terrain]
        for name in scenario_names:
            reps = per_scenario[name]
            for metric in ("forgetting", "bwt", "fwt"):
                values = []
                for rep in reps:
                    try:
                        values.append(getattr(rep.entry(terrain), metric))
                    except KeyError:
                        values.append(None)
                row.append(cell(values))
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    lines.append("Plot-ready CSVs:")
    for pointer in csv_pointers:
        lines.append(f"- {pointer}")
    return "\n".join(lines) + "\n"
