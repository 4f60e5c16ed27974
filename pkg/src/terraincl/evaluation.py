"""Frozen-policy validation and continual-learning transfer metrics.

A validation pool keeps agents on every terrain of the scenario permanently,
steps them with the policy snapshot saved at the previous iteration (actions
are the distribution mean so no gradients and no sampling noise exist), and
tracks a moving average over the last 100 terminated-episode total rewards
per terrain. Forgetting, backward transfer, and forward transfer are derived
from the resulting time-by-terrain reward matrix.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .curriculum import Scenario
from .env import EnvConfig, TerrainPatch, VecEnv
from .policy import ActorCritic

MOVING_AVERAGE_WINDOW = 100

# Formula strings pinned into every report so results are self-describing.
FORGETTING_FORMULA = "forgetting = max_t V[t] - V[T]"
BWT_FORMULA = "bwt = V[T] - V[end of last phase trained on terrain]"
FWT_FORMULA = "fwt = V[end of phase before first training on terrain] - V[0]"


def moving_average(values) -> float | None:
    """Mean of up to the most recent 100 entries; None when empty."""
    if len(values) == 0:
        return None
    window = list(values)[-MOVING_AVERAGE_WINDOW:]
    return float(np.mean(window))


class ValidationPool:
    """Validation agents for every scenario terrain, learning switched off."""

    def __init__(
        self,
        cfg: EnvConfig,
        patches: list[TerrainPatch],
        agents_per_terrain: int,
        run_seed: int,
    ):
        if agents_per_terrain <= 0:
            raise ValueError("agents_per_terrain must be positive")
        self.patches = list(patches)
        self.agents_per_terrain = agents_per_terrain
        terrain_of_agent = np.repeat(
            np.arange(len(self.patches)), agents_per_terrain
        )
        self.env = VecEnv(cfg, self.patches, terrain_of_agent, run_seed, "validation")
        self.env.reset_all()
        self.rings = [
            deque(maxlen=MOVING_AVERAGE_WINDOW) for _ in self.patches
        ]
        self._slices = [
            slice(p * agents_per_terrain, (p + 1) * agents_per_terrain)
            for p in range(len(self.patches))
        ]

    @property
    def num_agents(self) -> int:
        return self.env.num_agents

    def run(self, snapshot: ActorCritic, steps: int) -> None:
        """Step the pool with deterministic (mean) actions from the snapshot.

        Terminated or timed-out episode totals are pushed into their
        terrain's ring buffer; agents auto-reset in place.
        """
        if snapshot is None:
            raise ValueError("validation requires a policy snapshot")
        for _ in range(steps):
            actions = snapshot.actor_mean(self.env.current_obs)
            result = self.env.step(actions)
            if result.done_indices.size:
                patch_ids = self.env.terrain_of_agent[result.done_indices]
                totals = result.episode_return[result.done_indices]
                for pid, total in zip(patch_ids, totals):
                    self.rings[pid].append(float(total))

    def snapshot_row(self) -> tuple[list[float | None], list[int]]:
        """Current per-patch moving averages and window sizes."""
        means = [moving_average(ring) for ring in self.rings]
        counts = [len(ring) for ring in self.rings]
        return means, counts


@dataclass
class ValidationMatrix:
    """Per-iteration, per-patch moving-average reward traces."""

    patch_labels: list[str]
    patch_identities: list[str]
    rows: list[list[float | None]] = field(default_factory=list)
    episode_counts: list[list[int]] = field(default_factory=list)
    phase_boundaries: list[int] = field(default_factory=list)

    @property
    def num_iterations(self) -> int:
        return len(self.rows)

    def append(self, means, counts) -> None:
        if len(means) != len(self.patch_labels):
            raise ValueError("row width does not match patch count")
        self.rows.append(list(means))
        self.episode_counts.append(list(counts))

    def column(self, patch: int) -> list[float | None]:
        return [row[patch] for row in self.rows]

    def identity_trace(self, identity: str) -> list[float | None]:
        """Merged trace for a terrain identity: mean over its patch columns."""
        cols = [
            p for p, ident in enumerate(self.patch_identities) if ident == identity
        ]
        trace: list[float | None] = []
        for row in self.rows:
            vals = [row[p] for p in cols if row[p] is not None]
            trace.append(float(np.mean(vals)) if vals else None)
        return trace

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "terrain", "reward_ma", "episodes_in_window"])
            for it, (row, counts) in enumerate(zip(self.rows, self.episode_counts)):
                for label, value, count in zip(self.patch_labels, row, counts):
                    cell = "" if value is None else repr(float(value))
                    writer.writerow([it, label, cell, count])

    @classmethod
    def read_csv(cls, path, patch_identities=None) -> "ValidationMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["iteration", "terrain"]:
                raise ValueError(f"unexpected validation CSV header in {path}")
            labels: list[str] = []
            rows: dict[int, dict[str, float | None]] = {}
            counts: dict[int, dict[str, int]] = {}
            for record in reader:
                it = int(record[0])
                label = record[1]
                if label not in labels:
                    labels.append(label)
                value = None if record[2] == "" else float(record[2])
                rows.setdefault(it, {})[label] = value
                counts.setdefault(it, {})[label] = int(record[3])
        if patch_identities is None:
            # Labels are formatted "<phase>_<identity>".
            patch_identities = [lbl.split("_", 1)[1] for lbl in labels]
        matrix = cls(patch_labels=labels, patch_identities=list(patch_identities))
        for it in sorted(rows):
            matrix.append(
                [rows[it].get(lbl) for lbl in labels],
                [counts[it].get(lbl, 0) for lbl in labels],
            )
        return matrix


@dataclass
class TerrainTransfer:
    identity: str
    forgetting: float | None
    bwt: float | None
    fwt: float | None


@dataclass
class TransferReport:
    scenario: str
    entries: list[TerrainTransfer]
    formulas: tuple[str, str, str] = (
        FORGETTING_FORMULA,
        BWT_FORMULA,
        FWT_FORMULA,
    )

    def entry(self, identity: str) -> TerrainTransfer:
        for e in self.entries:
            if e.identity == identity:
                return e
        raise KeyError(identity)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["terrain", "forgetting", "bwt", "fwt"])
            for e in self.entries:
                writer.writerow(
                    [
                        e.identity,
                        "" if e.forgetting is None else repr(e.forgetting),
                        "" if e.bwt is None else repr(e.bwt),
                        "" if e.fwt is None else repr(e.fwt),
                    ]
                )

    def write_text(self, path) -> None:
        lines = [f"scenario = {self.scenario}"]
        for formula in self.formulas:
            lines.append(f"# {formula}")
        for e in self.entries:
            for metric in ("forgetting", "bwt", "fwt"):
                value = getattr(e, metric)
                cell = "unavailable" if value is None else repr(value)
                lines.append(f"{e.identity}.{metric} = {cell}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def _last_finite_index(trace) -> int | None:
    for idx in range(len(trace) - 1, -1, -1):
        if trace[idx] is not None:
            return idx
    return None


def transfer_metrics(matrix: ValidationMatrix, scenario: Scenario) -> TransferReport:
    """Forgetting / BWT / FWT per terrain identity from a validation matrix.

    With e_p the last iteration of phase p and T the final iteration:
    forgetting(k) = max_t V[t][k] - V[T][k]; bwt(k) = V[T][k] - V[e_p*][k]
    for p* the last phase trained on k; fwt(k) = V[e_{p-1}][k] - V[0][k] for
    p the first phase trained on k (identically 0 when k opens the scenario).
    Any metric whose required entries are absent is reported unavailable.
    """
    phase_ends = []
    acc = 0
    for phase in scenario.phases:
        acc += phase.length_iters
        phase_ends.append(acc - 1)

    identities: list[str] = []
    for phase in scenario.phases:
        if phase.label not in identities:
            identities.append(phase.label)

    entries = []
    for identity in identities:
        trace = matrix.identity_trace(identity)
        phases_on = [
            p for p, phase in enumerate(scenario.phases) if phase.label == identity
        ]
        t_final = _last_finite_index(trace)
        if t_final is None:
            entries.append(TerrainTransfer(identity, None, None, None))
            continue
        final = trace[t_final]
        finite = [v for v in trace if v is not None]
        forgetting = max(finite) - final

        last_end = phase_ends[phases_on[-1]]
        if last_end < len(trace) and trace[last_end] is not None:
            bwt = final - trace[last_end]
        else:
            bwt = None

        first_phase = phases_on[0]
        baseline = trace[0]
        if baseline is None:
            fwt = None
        elif first_phase == 0:
            fwt = 0.0
        else:
            pre = phase_ends[first_phase - 1]
            fwt = (
                trace[pre] - baseline
                if pre < len(trace) and trace[pre] is not None
                else None
            )
        entries.append(TerrainTransfer(identity, forgetting, bwt, fwt))
    return TransferReport(scenario=scenario.name, entries=entries)
