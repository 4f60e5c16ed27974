"""Scenario construction and phase scheduling.

A scenario is an ordered list of terrain phases; all training agents occupy
one terrain per phase and are relocated (administratively, without emitting
episode statistics) whenever the phase changes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .terrain import TerrainKind, terrain_label

DEFAULT_PHASE_LENGTH = 500

# Progression of increasing difficulty; the hard-to-easy scenario is its
# exact reverse.
EASY2HARD_ORDER: tuple[tuple[TerrainKind, bool], ...] = (
    (TerrainKind.FLAT, False),
    (TerrainKind.SLOPE_DOWN, False),
    (TerrainKind.STAIRS_DOWN, False),
    (TerrainKind.TILES, False),
    (TerrainKind.FLAT, False),
    (TerrainKind.SLOPE_UP, True),
    (TerrainKind.STAIRS_UP, False),
    (TerrainKind.TILES, False),
)

SCENARIO_NAMES = ("easy2hard", "hard2easy")


@dataclass(frozen=True)
class Phase:
    kind: TerrainKind
    rough: bool
    length_iters: int

    def __post_init__(self):
        if self.length_iters <= 0:
            raise ValueError(f"phase length must be > 0, got {self.length_iters}")

    @property
    def label(self) -> str:
        return terrain_label(self.kind, self.rough)


@dataclass(frozen=True)
class Scenario:
    name: str
    phases: tuple[Phase, ...]

    @property
    def total_iterations(self) -> int:
        return sum(p.length_iters for p in self.phases)

    @property
    def change_points(self) -> tuple[int, ...]:
        """Iterations at which a new phase begins (excluding iteration 0)."""
        points = []
        acc = 0
        for phase in self.phases[:-1]:
            acc += phase.length_iters
            points.append(acc)
        return tuple(points)

    def reversed(self) -> "Scenario":
        return Scenario(name=self.name + "-reversed", phases=self.phases[::-1])


def build_scenario(name: str, phase_length: int = DEFAULT_PHASE_LENGTH) -> Scenario:
    """The two named eight-phase scenarios."""
    if name not in SCENARIO_NAMES:
        raise ValueError(
            f"unknown scenario {name!r}; expected one of {SCENARIO_NAMES}"
        )
    order = EASY2HARD_ORDER if name == "easy2hard" else EASY2HARD_ORDER[::-1]
    phases = tuple(Phase(kind, rough, phase_length) for kind, rough in order)
    return Scenario(name=name, phases=phases)


def phase_at(scenario: Scenario, iteration: int) -> tuple[int, Phase]:
    """Map a global training iteration to (phase index, phase)."""
    if not 0 <= iteration < scenario.total_iterations:
        raise ValueError(
            f"iteration {iteration} outside [0, {scenario.total_iterations})"
        )
    acc = 0
    for index, phase in enumerate(scenario.phases):
        acc += phase.length_iters
        if iteration < acc:
            return index, phase
    raise AssertionError("unreachable")  # pragma: no cover


def on_phase_change(env, patch_id: int) -> None:
    """Relocate every training agent onto the new phase's terrain patch.

    The reset is administrative: episodes in progress end without entering
    any terminated-episode statistic.
    """
    env.relocate_all(patch_id)
