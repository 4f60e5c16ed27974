import numpy as np
import pytest

from terraincl.curriculum import (
    EASY2HARD_ORDER,
    Phase,
    Scenario,
    build_scenario,
    on_phase_change,
    phase_at,
)
from terraincl.terrain import TerrainKind

from test_env import make_env


def test_easy2hard_order_is_the_published_progression():
    scenario = build_scenario("easy2hard")
    labels = [p.label for p in scenario.phases]
    assert labels == [
        "flat",
        "slope_down",
        "stairs_down",
        "tiles",
        "flat",
        "slope_up+rough",
        "stairs_up",
        "tiles",
    ]
    assert scenario.phases[0].kind is TerrainKind.FLAT
    assert scenario.phases[-1].kind is TerrainKind.TILES


def test_hard2easy_is_exact_reverse():
    easy = build_scenario("easy2hard")
    hard = build_scenario("hard2easy")
    assert hard.phases == easy.phases[::-1]
    assert easy.reversed().phases == hard.phases
    assert easy.reversed().reversed().phases == easy.phases


def test_default_totals():
    scenario = build_scenario("easy2hard")
    assert all(p.length_iters == 500 for p in scenario.phases)
    assert scenario.total_iterations == 4000


def test_unknown_scenario_rejected():
    with pytest.raises(ValueError, match="unknown scenario"):
        build_scenario("medium2hard")


def test_phase_at_examples():
    scenario = build_scenario("easy2hard")
    assert phase_at(scenario, 0)[1].kind is TerrainKind.FLAT
    # Flat is presented again at iteration 2000 (second occurrence).
    index, phase = phase_at(scenario, 2000)
    assert index == 4
    assert phase.kind is TerrainKind.FLAT
    assert phase_at(scenario, 3999)[1].kind is TerrainKind.TILES
    assert phase_at(scenario, 499)[0] == 0
    assert phase_at(scenario, 500)[0] == 1


def test_phase_at_out_of_range():
    scenario = build_scenario("easy2hard")
    with pytest.raises(ValueError, match="outside"):
        phase_at(scenario, 4000)
    with pytest.raises(ValueError, match="outside"):
        phase_at(scenario, -1)


def test_change_points_at_multiples_of_phase_length():
    scenario = build_scenario("easy2hard", phase_length=500)
    assert scenario.change_points == (500, 1000, 1500, 2000, 2500, 3000, 3500)
    # phase_at is piecewise-constant with changes exactly there.
    previous = phase_at(scenario, 0)[0]
    changes = []
    for it in range(1, 4000):
        current = phase_at(scenario, it)[0]
        if current != previous:
            changes.append(it)
            previous = current
    assert changes == list(scenario.change_points)


def test_phase_rejects_nonpositive_length():
    with pytest.raises(ValueError, match="phase length"):
        Phase(TerrainKind.FLAT, False, 0)


def test_on_phase_change_relocates_every_agent():
    env = make_env(n=6, kinds=(TerrainKind.FLAT, TerrainKind.STAIRS_UP))
    env.step(np.tile(env.cfg.default_joint_pos, (6, 1)))
    mid_episode_steps = env.episode_steps.copy()
    assert np.all(mid_episode_steps > 0)
    on_phase_change(env, 1)
    assert np.all(env.terrain_of_agent == 1)
    # Administrative reset: clocks cleared, no episode totals were produced
    # (relocation does not pass through step()).
    assert np.all(env.episode_steps == 0)
    assert np.all(env.cum_reward == 0.0)


def test_custom_scenario_totals():
    phases = (
        Phase(TerrainKind.FLAT, False, 3),
        Phase(TerrainKind.TILES, False, 7),
    )
    scenario = Scenario(name="two", phases=phases)
    assert scenario.total_iterations == 10
    assert scenario.change_points == (3,)
    assert phase_at(scenario, 2)[0] == 0
    assert phase_at(scenario, 3)[0] == 1
