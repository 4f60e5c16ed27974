"""Kinematic walker backend.

A desk-scale stand-in for rigid-body quadruped simulation. Legs are two-link
chains on hip mounts; locomotion emerges from kinematic traction: feet in
contact act as anchors, so sweeping stance feet backward pulls the base
forward. The model keeps the terrain-skill coupling (foot clearance on
stairs, pitch compensation on slopes) without contact dynamics.
"""

from __future__ import annotations

import numpy as np

from .env import ACT_DIM, NUM_LEGS, EnvConfig, VecEnv


def hip_mounts(cfg: EnvConfig) -> np.ndarray:
    """Base-frame hip positions, leg order FL, FR, RL, RR."""
    hx, hy = cfg.hip_x_m, cfg.hip_y_m
    return np.array(
        [
            [hx, hy, 0.0],
            [hx, -hy, 0.0],
            [-hx, hy, 0.0],
            [-hx, -hy, 0.0],
        ]
    )


def foot_positions_base(joint_pos: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Forward kinematics: (N, 12) joint angles -> (N, 4, 3) feet, base frame.

    Per leg: the planar two-link chain (thigh L1, shank L2) lies in the leg's
    sagittal plane; hip abduction then rotates that plane about the leg's
    x-axis; the result is offset by the hip mount.
    """
    q = joint_pos.reshape(-1, NUM_LEGS, 3)
    abd, hip, knee = q[..., 0], q[..., 1], q[..., 2]
    x_sag = cfg.leg_l1_m * np.sin(hip) + cfg.leg_l2_m * np.sin(hip + knee)
    z_sag = -(cfg.leg_l1_m * np.cos(hip) + cfg.leg_l2_m * np.cos(hip + knee))
    feet = np.stack(
        [x_sag, -z_sag * np.sin(abd), z_sag * np.cos(abd)], axis=-1
    )
    return feet + hip_mounts(cfg)


def default_clearance(cfg: EnvConfig) -> float:
    """Foot depth below the base at the default joint angles (abduction 0)."""
    th1, th2 = cfg.default_hip_rad, cfg.default_knee_rad
    return cfg.leg_l1_m * np.cos(th1) + cfg.leg_l2_m * np.cos(th1 + th2)


def advance(env: VecEnv, actions: np.ndarray) -> np.ndarray:
    """One dt of walker dynamics, in place; returns the per-agent fall flags.

    Order: joints rate-limit toward targets; feet FK before/after at the old
    base pose; contact from foot height vs terrain; with >= 2 stance feet the
    base counter-moves the mean stance-foot displacement (translation and
    yaw) and its height relaxes toward the stance terrain plus nominal
    clearance; with < 2 the base falls at a fixed rate and air time grows.
    """
    cfg = env.cfg
    dt = cfg.dt_s
    assert actions.shape == (env.num_agents, ACT_DIM)

    q_old = env.joint_pos
    dq = np.clip(actions - q_old, -cfg.joint_rate_max * dt, cfg.joint_rate_max * dt)
    q_new = q_old + dq
    env.joint_vel = dq / dt
    env.joint_pos = q_new

    feet_old = foot_positions_base(q_old, cfg)
    feet_new = foot_positions_base(q_new, cfg)
    cy = np.cos(env.base_yaw)[:, None]
    sy = np.sin(env.base_yaw)[:, None]
    bx = env.base_pos[:, 0]
    by = env.base_pos[:, 1]
    bz = env.base_pos[:, 2]

    def world_xy(feet):
        fx = bx[:, None] + cy * feet[:, :, 0] - sy * feet[:, :, 1]
        fy = by[:, None] + sy * feet[:, :, 0] + cy * feet[:, :, 1]
        return fx, fy

    ox, oy = world_xy(feet_old)
    nx, ny = world_xy(feet_new)
    nz = bz[:, None] + feet_new[:, :, 2]

    terrain = env.terrain_height_at(nx, ny)
    stance = nz <= terrain + cfg.contact_eps_m
    n_stance = stance.sum(axis=1)
    traction = n_stance >= 2
    denom = np.maximum(n_stance, 1)

    disp_x = np.where(stance, nx - ox, 0.0).sum(axis=1) / denom
    disp_y = np.where(stance, ny - oy, 0.0).sum(axis=1) / denom
    rx = ox - bx[:, None]
    ry = oy - by[:, None]
    r2 = np.maximum(rx * rx + ry * ry, 1e-8)
    sweep = (rx * (ny - oy) - ry * (nx - ox)) / r2
    dyaw = -np.where(stance, sweep, 0.0).sum(axis=1) / denom
    stance_terrain = np.where(stance, terrain, 0.0).sum(axis=1) / denom
    z_target = stance_terrain + cfg.nominal_clearance_m
    alpha = 1.0 - np.exp(-dt / cfg.base_z_tau_s)

    new_x = np.where(traction, bx - disp_x, bx)
    new_y = np.where(traction, by - disp_y, by)
    new_z = np.where(traction, bz + (z_target - bz) * alpha, bz - cfg.fall_rate_mps * dt)
    dyaw = np.where(traction, dyaw, 0.0)
    env.air_steps = np.where(traction, 0, env.air_steps + 1)

    env.base_lin_vel = np.stack(
        [(new_x - bx) / dt, (new_y - by) / dt, (new_z - bz) / dt], axis=1
    )
    env.base_yaw_rate = dyaw / dt
    env.base_pos = np.stack([new_x, new_y, new_z], axis=1)
    env.base_yaw = env.base_yaw + dyaw

    under_base = env.terrain_height_at(new_x, new_y)
    fell = (env.air_steps * dt > cfg.air_time_limit_s) | (
        new_z < under_base + cfg.min_base_clearance_m
    )
    return fell
