import numpy as np
import pytest

from terraincl.env import ACT_DIM, EnvConfig, TerrainPatch, VecEnv
from terraincl.rng import substream
from terraincl.terrain import TerrainKind, TerrainParams
from terraincl.walker import advance, default_clearance, foot_positions_base, hip_mounts

from test_env import default_actions, make_env


def test_fk_matches_two_link_oracle_at_zero_abduction():
    cfg = EnvConfig()
    q = np.zeros((1, ACT_DIM))
    th1, th2 = 0.7, -1.2
    q[0, 1::3] = th1
    q[0, 2::3] = th2
    feet = foot_positions_base(q, cfg)
    x = cfg.leg_l1_m * np.sin(th1) + cfg.leg_l2_m * np.sin(th1 + th2)
    z = -(cfg.leg_l1_m * np.cos(th1) + cfg.leg_l2_m * np.cos(th1 + th2))
    mounts = hip_mounts(cfg)
    for leg in range(4):
        assert feet[0, leg, 0] == pytest.approx(mounts[leg, 0] + x, abs=1e-12)
        assert feet[0, leg, 1] == pytest.approx(mounts[leg, 1], abs=1e-12)
        assert feet[0, leg, 2] == pytest.approx(mounts[leg, 2] + z, abs=1e-12)


def test_fk_matches_rotation_matrix_oracle():
    # Independent oracle: chain position via explicit Rx(abd) matrix product.
    cfg = EnvConfig()
    rng = substream(1, "fk")
    q = rng.uniform(-1.0, 1.0, (5, ACT_DIM))
    feet = foot_positions_base(q, cfg)
    mounts = hip_mounts(cfg)
    for n in range(5):
        for leg in range(4):
            abd, th1, th2 = q[n, 3 * leg : 3 * leg + 3]
            sag = np.array(
                [
                    cfg.leg_l1_m * np.sin(th1) + cfg.leg_l2_m * np.sin(th1 + th2),
                    0.0,
                    -(cfg.leg_l1_m * np.cos(th1) + cfg.leg_l2_m * np.cos(th1 + th2)),
                ]
            )
            rx = np.array(
                [
                    [1.0, 0.0, 0.0],
                    [0.0, np.cos(abd), -np.sin(abd)],
                    [0.0, np.sin(abd), np.cos(abd)],
                ]
            )
            want = mounts[leg] + rx @ sag
            assert np.allclose(feet[n, leg], want, atol=1e-12)


def test_default_pose_feet_touch_flat_ground():
    cfg = EnvConfig()
    # Nominal clearance keeps default feet within the contact tolerance.
    assert abs(cfg.nominal_clearance_m - default_clearance(cfg)) < cfg.contact_eps_m


def test_holding_current_joints_gives_zero_displacement():
    env = make_env(n=3)
    pos_before = env.base_pos.copy()
    yaw_before = env.base_yaw.copy()
    fell = advance(env, env.joint_pos.copy())
    assert not fell.any()
    assert np.allclose(env.base_pos[:, :2], pos_before[:, :2], atol=1e-12)
    assert np.allclose(env.base_yaw, yaw_before, atol=1e-12)


def test_traction_sign_feet_back_base_forward():
    env = make_env(n=1)
    # Increase hip flexion on all legs: feet sweep forward (+x), so the base
    # must move backward, and vice versa.
    q = env.joint_pos.copy()
    feet_before = foot_positions_base(q, env.cfg)[0]
    q_target = q.copy()
    q_target[0, 1::3] += 0.05
    x_before = env.base_pos[0, 0]
    advance(env, q_target)
    feet_after = foot_positions_base(env.joint_pos, env.cfg)[0]
    foot_dx = (feet_after[:, 0] - feet_before[:, 0]).mean()
    assert foot_dx > 0
    assert env.base_pos[0, 0] == pytest.approx(x_before - foot_dx, abs=1e-9)


def test_airborne_base_falls_and_terminates():
    env = make_env(n=1)
    # Swing all legs up (hip hyperextended, shank raised): feet end above the
    # base, contact becomes impossible, and the base sinks until it fails the
    # minimum-clearance check.
    q_target = np.zeros((1, ACT_DIM))
    q_target[0, 1::3] = env.cfg.hip_max_rad
    q_target[0, 2::3] = env.cfg.knee_max_rad
    fell_any = False
    for _ in range(60):
        result = env.step(np.tile(q_target[0], (1, 1)))
        if result.terminated[0]:
            fell_any = True
            break
    assert fell_any
    assert env.fault_count == 0


def test_walker_on_flat_never_terminates_before_timeout():
    env = make_env(n=4, episode_cap_s=2.0, dt_s=0.02)  # 100 steps
    acts = default_actions(env)
    for i in range(99):
        result = env.step(acts)
        assert not result.terminated.any(), f"fell at step {i}"
        assert not result.timed_out.any()
    result = env.step(acts)
    assert result.timed_out.all()


def test_velocity_reflects_base_motion():
    env = make_env(n=1)
    q_target = env.joint_pos.copy()
    q_target[0, 1::3] -= 0.04
    x0 = env.base_pos[0, 0]
    env.step(q_target)
    dx = env.base_pos[0, 0] - x0
    assert env.base_lin_vel[0, 0] == pytest.approx(dx / env.cfg.dt_s, rel=1e-9)
    assert dx > 0  # feet moved backward, base forward


def test_slope_following_base_height():
    env = make_env(n=1, kinds=(TerrainKind.SLOPE_UP,))
    # March forward by sweeping hips; base z should track terrain + clearance.
    for _ in range(200):
        q = env.joint_pos.copy()
        q[0, 1::3] -= 0.08
        env.step(q)
        q[0, 1::3] += 0.08
        env.step(q)
    from terraincl.terrain import height_at

    ground = height_at(env.patches[0].field, env.base_pos[0, 0], env.base_pos[0, 1])
    assert env.base_pos[0, 2] == pytest.approx(
        ground + env.cfg.nominal_clearance_m, abs=0.15
    )


def test_dynamics_fuzz_stays_finite():
    # Random extreme actions for many steps never produce non-finite state.
    env = make_env(n=64, kinds=(TerrainKind.TILES,), episode_cap_s=0.5, dt_s=0.02)
    rng = substream(13, "fuzz")
    for _ in range(300):
        acts = rng.uniform(-50, 50, (64, ACT_DIM))
        # Sprinkle some non-finite values to exercise the fault path.
        if rng.random() < 0.05:
            acts[rng.integers(0, 64), rng.integers(0, ACT_DIM)] = np.inf
        result = env.step(acts)
        assert np.isfinite(result.obs).all()
    for arr in (
        env.base_pos,
        env.base_yaw,
        env.base_lin_vel,
        env.base_yaw_rate,
        env.joint_pos,
        env.joint_vel,
        env.cum_reward,
    ):
        assert np.isfinite(arr).all()


def test_advance_fuzz_100k_agent_steps_finite():
    env = make_env(n=128, kinds=(TerrainKind.STAIRS_DOWN,))
    rng = substream(14, "fuzz2")
    low, high = env.cfg.joint_limits
    for _ in range(800):  # 128 * 800 > 1e5 agent-steps
        acts = np.clip(rng.normal(0, 5, (128, ACT_DIM)), low, high)
        advance(env, acts)
        env.episode_steps += 1
    assert np.isfinite(env.base_pos).all()
    assert np.isfinite(env.joint_pos).all()
