"""Vectorized multi-agent locomotion environment.

Agent state is stored as struct-of-arrays on the environment; all operations
are batched over agents. Two interchangeable dynamics backends exist: a
kinematic walker (the real task) and an analytic surrogate (fast diagnostic
with a known optimal action per terrain).

Observation layout (235 values, fixed block order):
    base_lin_vel (3), base_ang_vel (3), projected_gravity (3), command (3),
    joint_pos - defaults (12), joint_vel (12), prev_action (12),
    height_samples (187)
The first 48 values form the proprioceptive/command/previous-action block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import substream
from .terrain import (
    HEIGHT_GRID_SIZE,
    HeightField,
    TerrainKind,
    TerrainParams,
    generate,
    grid_offsets,
    height_at,
    sample_height_grid,
    terrain_label,
)

OBS_DIM = 48 + HEIGHT_GRID_SIZE  # 235
ACT_DIM = 12
NUM_LEGS = 4

# Uniform observation noise added to the surrogate's height signature.
SURROGATE_OBS_NOISE = 0.01


@dataclass
class EnvConfig:
    """Environment knobs; every field is a flat config key."""

    backend: str = "walker"  # walker | surrogate
    dt_s: float = 0.02
    episode_cap_s: float = 20.0

    # Command ranges (uniform sampling on reset).
    cmd_vx_min: float = -1.0
    cmd_vx_max: float = 1.0
    cmd_vy_min: float = -0.5
    cmd_vy_max: float = 0.5
    cmd_yaw_min: float = -1.0
    cmd_yaw_max: float = 1.0

    # Reward weights.
    w_lin: float = 1.0
    w_ang: float = 0.5
    sigma_lin: float = 0.25
    sigma_ang: float = 0.25
    c_action: float = 0.01
    c_jvel: float = 0.0005
    c_fall: float = 10.0

    # Walker geometry: two-link legs on hip mounts, 3 joints per leg
    # (hip abduction, hip flexion, knee), leg order FL, FR, RL, RR.
    leg_l1_m: float = 0.2
    leg_l2_m: float = 0.2
    hip_x_m: float = 0.18
    hip_y_m: float = 0.13
    default_abduction_rad: float = 0.0
    default_hip_rad: float = 0.8
    default_knee_rad: float = -1.6
    abd_limit_rad: float = 0.8
    hip_min_rad: float = -1.0
    hip_max_rad: float = 2.0
    knee_min_rad: float = -2.7
    knee_max_rad: float = -0.2
    joint_rate_max: float = 8.0  # rad/s

    # Contact / fall model.
    contact_eps_m: float = 0.03
    nominal_clearance_m: float = 0.28
    base_z_tau_s: float = 0.1
    fall_rate_mps: float = 2.0
    air_time_limit_s: float = 0.5
    min_base_clearance_m: float = 0.05

    # Observation normalization.
    scale_lin_vel: float = 0.5
    scale_ang_vel: float = 0.5
    scale_cmd: float = 0.5
    scale_joint_pos: float = 1.0
    scale_joint_vel: float = 0.05
    clip_height_m: float = 1.0
    grid_spacing_m: float = 0.1

    # Surrogate backend.
    surrogate_episode_len: int = 24
    surrogate_action_clip: float = 4.0

    def validate(self) -> None:
        if self.backend not in ("walker", "surrogate"):
            raise ValueError(f"backend must be walker or surrogate, got {self.backend!r}")
        if not self.dt_s > 0:
            raise ValueError(f"dt_s must be > 0, got {self.dt_s}")
        steps = self.episode_cap_s / self.dt_s
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(
                f"episode_cap_s={self.episode_cap_s} must be an integer multiple "
                f"of dt_s={self.dt_s}"
            )
        if self.surrogate_episode_len <= 0:
            raise ValueError("surrogate_episode_len must be positive")

    @property
    def cap_steps(self) -> int:
        return round(self.episode_cap_s / self.dt_s)

    @property
    def default_joint_pos(self) -> np.ndarray:
        return np.tile(
            np.array(
                [self.default_abduction_rad, self.default_hip_rad, self.default_knee_rad]
            ),
            NUM_LEGS,
        )

    @property
    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        low = np.tile(
            np.array([-self.abd_limit_rad, self.hip_min_rad, self.knee_min_rad]),
            NUM_LEGS,
        )
        high = np.tile(
            np.array([self.abd_limit_rad, self.hip_max_rad, self.knee_max_rad]),
            NUM_LEGS,
        )
        return low, high

    @property
    def command_ranges(self) -> np.ndarray:
        return np.array(
            [
                [self.cmd_vx_min, self.cmd_vx_max],
                [self.cmd_vy_min, self.cmd_vy_max],
                [self.cmd_yaw_min, self.cmd_yaw_max],
            ]
        )


@dataclass(frozen=True)
class TerrainPatch:
    """A generated terrain instance agents can be assigned to."""

    kind: TerrainKind
    rough: bool
    params: TerrainParams
    seed: int
    field: HeightField
    label: str

    @classmethod
    def build(cls, kind, params, seed, *, rough=False, label=None) -> "TerrainPatch":
        field_ = generate(kind, params, seed, rough=rough)
        if label is None:
            label = terrain_label(kind, rough)
        return cls(kind=kind, rough=rough, params=params, seed=seed, field=field_, label=label)

    @property
    def identity(self) -> str:
        """Terrain identity shared by patches of the same kind+modifier."""
        return terrain_label(self.kind, self.rough)


class _TerrainSampler:
    """Batched float32 height queries against stacked patch grids.

    Owns preallocated workspaces; one instance serves one VecEnv. Heights
    feed float32 observations and contact checks, so the reduced precision
    (relative error ~1e-7) is immaterial, while the fused in-place pipeline
    avoids per-step temporary allocation.
    """

    def __init__(self, table: np.ndarray, origin, cell, num_agents, grid_points):
        self.flat = np.ascontiguousarray(table, dtype=np.float32).reshape(-1)
        self.rows = table.shape[1]
        self.cols = table.shape[2]
        self.patch_stride = self.rows * self.cols
        self.ox = np.float32(origin[0])
        self.oy = np.float32(origin[1])
        self.cell = np.float32(cell)
        size = num_agents * grid_points
        names_f = ("px", "py", "fx", "fy", "ta", "ha", "hb")
        names_i = ("i0", "j0", "si", "sj", "ibase")
        self._f = {name: np.empty(size, dtype=np.float32) for name in names_f}
        self._i = {name: np.empty(size, dtype=np.int32) for name in names_i}

    def _buf(self, kind, name, n):
        return (self._f if kind == "f" else self._i)[name][:n]

    def _bilinear_into(self, out, n):
        """Interpolate at grid coords staged in px/py (cell units), with the
        per-point patch offsets staged in ibase; writes into `out`."""
        rows, cols = self.rows, self.cols
        flat = self.flat
        px, py = self._buf("f", "px", n), self._buf("f", "py", n)
        fx, fy = self._buf("f", "fx", n), self._buf("f", "fy", n)
        ta = self._buf("f", "ta", n)
        ha, hb = self._buf("f", "ha", n), self._buf("f", "hb", n)
        i0, j0 = self._buf("i", "i0", n), self._buf("i", "j0", n)
        si, sj = self._buf("i", "si", n), self._buf("i", "sj", n)
        ibase = self._buf("i", "ibase", n)

        np.clip(px, 0.0, rows - 1, out=px)
        np.clip(py, 0.0, cols - 1, out=py)
        np.floor(px, out=ta)
        np.subtract(px, ta, out=fx)
        i0[:] = ta
        np.floor(py, out=ta)
        np.subtract(py, ta, out=fy)
        j0[:] = ta
        # Neighbor steps are zero on the clamped border.
        np.less(i0, rows - 1, out=si, casting="unsafe")
        si *= cols
        np.less(j0, cols - 1, out=sj, casting="unsafe")
        i0 *= cols
        ibase += i0
        ibase += j0
        np.take(flat, ibase, out=ha, mode="clip")  # h00
        ibase += si
        np.take(flat, ibase, out=hb, mode="clip")  # h10
        hb -= ha
        hb *= fx
        hb += ha  # top edge
        ibase += sj
        np.take(flat, ibase, out=ha, mode="clip")  # h11
        ibase -= si
        np.take(flat, ibase, out=ta, mode="clip")  # h01
        ha -= ta
        ha *= fx
        ha += ta  # bottom edge
        ha -= hb
        ha *= fy
        hb += ha
        out[...] = hb.reshape(out.shape)

    def grid_into(self, out, offsets, x, y, yaw, base_z, tid, clip):
        """Yaw-aligned height grid minus base height, clipped, into `out`.

        `out` is (K, M); `offsets` is the (M, 2) body-frame grid.
        """
        k, m = out.shape
        n = k * m
        px = self._buf("f", "px", n).reshape(k, m)
        py = self._buf("f", "py", n).reshape(k, m)
        ta = self._buf("f", "ta", n).reshape(k, m)
        ibase = self._buf("i", "ibase", n).reshape(k, m)
        c = np.cos(yaw).astype(np.float32)[:, None]
        s = np.sin(yaw).astype(np.float32)[:, None]
        off_x = offsets[:, 0].astype(np.float32)
        off_y = offsets[:, 1].astype(np.float32)
        np.multiply(c, off_x, out=px)
        np.multiply(s, off_y, out=ta)
        px -= ta
        px += x.astype(np.float32)[:, None]
        np.multiply(s, off_x, out=py)
        np.multiply(c, off_y, out=ta)
        py += ta
        py += y.astype(np.float32)[:, None]
        px -= self.ox
        px /= self.cell
        py -= self.oy
        py /= self.cell
        ibase[:] = (tid * self.patch_stride)[:, None]
        self._bilinear_into(out, n)
        out -= base_z.astype(np.float32)[:, None]
        np.clip(out, -clip, clip, out=out)

    def points(self, x, y, tid) -> np.ndarray:
        """Heights at world points; x, y, tid share a shape. Returns float32."""
        n = x.size
        px = self._buf("f", "px", n)
        py = self._buf("f", "py", n)
        ibase = self._buf("i", "ibase", n)
        px[:] = x.reshape(-1)
        px -= self.ox
        px /= self.cell
        py[:] = y.reshape(-1)
        py -= self.oy
        py /= self.cell
        np.multiply(
            tid.reshape(-1), self.patch_stride, out=ibase, casting="unsafe"
        )
        out = np.empty(x.shape, dtype=np.float32)
        self._bilinear_into(out, n)
        return out


@dataclass
class StepResult:
    """Batched step outcome; `final_obs` rows align with `done_indices`."""

    obs: np.ndarray  # (N, 235) float32, post-reset for done agents
    reward: np.ndarray  # (N,) float32
    terminated: np.ndarray  # (N,) bool
    timed_out: np.ndarray  # (N,) bool
    episode_return: np.ndarray  # (N,) float64, NaN unless done this step
    done_indices: np.ndarray  # (K,) int
    final_obs: np.ndarray  # (K, 235) float32, pre-reset observation


def sample_command(rng: np.random.Generator, ranges: np.ndarray, n: int) -> np.ndarray:
    """Uniform (vx, vy, yaw_rate) commands, one row per agent."""
    lo = ranges[:, 0]
    hi = ranges[:, 1]
    return lo + (hi - lo) * rng.random((n, 3))


def compute_reward(
    cfg: EnvConfig,
    command: np.ndarray,
    lin_vel: np.ndarray,
    yaw: np.ndarray,
    yaw_rate: np.ndarray,
    action: np.ndarray,
    prev_action: np.ndarray,
    joint_vel: np.ndarray,
    fell: np.ndarray,
) -> np.ndarray:
    """Per-step walker reward.

    Velocity tracking is measured in the heading frame (commands are given
    there); smoothness terms penalize action change and joint speed; a flat
    penalty applies on the step an agent falls.
    """
    cy = np.cos(yaw)
    sy = np.sin(yaw)
    vx_h = cy * lin_vel[:, 0] + sy * lin_vel[:, 1]
    vy_h = -sy * lin_vel[:, 0] + cy * lin_vel[:, 1]
    err_lin = (command[:, 0] - vx_h) ** 2 + (command[:, 1] - vy_h) ** 2
    err_ang = (command[:, 2] - yaw_rate) ** 2
    r = cfg.w_lin * np.exp(-err_lin / cfg.sigma_lin)
    r += cfg.w_ang * np.exp(-err_ang / cfg.sigma_ang)
    r -= cfg.c_action * ((action - prev_action) ** 2).sum(axis=1)
    r -= cfg.c_jvel * (joint_vel**2).sum(axis=1)
    r -= cfg.c_fall * fell
    return r


class VecEnv:
    """N agents stepped in lockstep, each assigned to one terrain patch.

    `stream_label` isolates this environment's random streams (commands,
    surrogate observation noise) from any other consumer of the same run
    seed, so e.g. a validation environment cannot perturb training.
    """

    def __init__(
        self,
        cfg: EnvConfig,
        patches: list[TerrainPatch],
        terrain_of_agent: np.ndarray,
        run_seed: int,
        stream_label: str,
    ):
        cfg.validate()
        self.cfg = cfg
        self.patches = list(patches)
        self.terrain_of_agent = np.asarray(terrain_of_agent, dtype=np.int64).copy()
        if self.terrain_of_agent.ndim != 1:
            raise ValueError("terrain_of_agent must be 1-D")
        if np.any(self.terrain_of_agent < 0) or np.any(
            self.terrain_of_agent >= len(self.patches)
        ):
            raise ValueError("terrain assignment references an unknown patch id")
        self.num_agents = self.terrain_of_agent.size
        self._command_rng = substream(run_seed, stream_label, "commands")
        self._noise_rng = substream(run_seed, stream_label, "obs-noise")

        n = self.num_agents
        self.base_pos = np.zeros((n, 3))
        self.base_yaw = np.zeros(n)
        self.base_lin_vel = np.zeros((n, 3))
        self.base_yaw_rate = np.zeros(n)
        self.joint_pos = np.tile(cfg.default_joint_pos, (n, 1))
        self.joint_vel = np.zeros((n, ACT_DIM))
        self.prev_action = np.zeros((n, ACT_DIM))
        self.command = np.zeros((n, 3))
        self.episode_steps = np.zeros(n, dtype=np.int64)
        self.air_steps = np.zeros(n, dtype=np.int64)
        self.cum_reward = np.zeros(n)
        self.fault_count = 0
        self.current_obs: np.ndarray | None = None

        self._joint_low, self._joint_high = cfg.joint_limits
        self._default_joints = cfg.default_joint_pos
        self._rebuild_groups()

        # All patches of a run share grid geometry, so their height arrays
        # stack into one table and every agent's queries resolve in a single
        # buffered gather. Mixed geometries fall back to per-patch queries.
        geometries = {
            (p.field.rows, p.field.cols, p.field.cell_size_m, p.field.origin)
            for p in self.patches
        }
        if len(geometries) == 1:
            first = self.patches[0].field
            self._sampler = _TerrainSampler(
                np.stack([p.field.heights for p in self.patches]),
                first.origin,
                first.cell_size_m,
                self.num_agents,
                HEIGHT_GRID_SIZE,
            )
            self._offsets32 = grid_offsets(cfg.grid_spacing_m).astype(np.float32)
        else:
            self._sampler = None

        if cfg.backend == "surrogate":
            from .surrogate import patch_signature, surrogate_target

            self._signatures = np.stack(
                [patch_signature(p, cfg) for p in self.patches]
            )
            self._targets = np.stack(
                [surrogate_target(p.kind, p.rough) for p in self.patches]
            )

    # -- terrain assignment -------------------------------------------------

    def _rebuild_groups(self):
        self._groups = []
        for pid in range(len(self.patches)):
            idx = np.flatnonzero(self.terrain_of_agent == pid)
            if idx.size:
                self._groups.append((pid, idx))

    def relocate_all(self, patch_id: int) -> np.ndarray:
        """Move every agent to `patch_id` and force-reset (administrative).

        Episodes in progress end silently: no episode totals are emitted, so
        phase changes never pollute terminated-episode statistics.
        """
        if not 0 <= patch_id < len(self.patches):
            raise ValueError(f"unknown terrain patch id {patch_id}")
        self.terrain_of_agent[:] = patch_id
        self._rebuild_groups()
        return self.reset_all()

    def terrain_height_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Heights under per-agent world points, shape-preserving over (N, ...)."""
        x = np.asarray(x, dtype=np.float64)
        if self._sampler is not None:
            tid = self.terrain_of_agent.reshape((-1,) + (1,) * (x.ndim - 1))
            return self._sampler.points(x, y, np.broadcast_to(tid, x.shape))
        out = np.empty_like(x)
        for pid, idx in self._groups:
            out[idx] = height_at(self.patches[pid].field, x[idx], y[idx])
        return out

    # -- reset / observe ----------------------------------------------------

    def reset_all(self) -> np.ndarray:
        return self.reset_agents(np.arange(self.num_agents))

    def reset_agents(self, idx: np.ndarray) -> np.ndarray:
        """Respawn agents at their patch origin with a fresh command."""
        idx = np.asarray(idx, dtype=np.int64)
        self.base_pos[idx, 0] = 0.0
        self.base_pos[idx, 1] = 0.0
        ground = self.terrain_height_at(self.base_pos[:, 0], self.base_pos[:, 1])
        self.base_pos[idx, 2] = ground[idx] + self.cfg.nominal_clearance_m
        self.base_yaw[idx] = 0.0
        self.base_lin_vel[idx] = 0.0
        self.base_yaw_rate[idx] = 0.0
        self.joint_pos[idx] = self._default_joints
        self.joint_vel[idx] = 0.0
        self.prev_action[idx] = 0.0
        self.command[idx] = sample_command(
            self._command_rng, self.cfg.command_ranges, idx.size
        )
        self.episode_steps[idx] = 0
        self.air_steps[idx] = 0
        self.cum_reward[idx] = 0.0
        obs = self._observe(idx)
        if idx.size == self.num_agents:
            self.current_obs = obs.copy()
        elif self.current_obs is not None:
            self.current_obs[idx] = obs
        return obs

    def _observe(self, idx: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        obs = np.empty((idx.size, OBS_DIM), dtype=np.float32)
        if cfg.backend == "surrogate":
            obs[:, :48] = 0.0
            sig = self._signatures[self.terrain_of_agent[idx]]
            noise = self._noise_rng.uniform(
                -SURROGATE_OBS_NOISE, SURROGATE_OBS_NOISE, size=sig.shape
            )
            obs[:, 48:] = sig + noise
            return obs
        obs[:, 0:3] = cfg.scale_lin_vel * self.base_lin_vel[idx]
        obs[:, 3:5] = 0.0
        obs[:, 5] = cfg.scale_ang_vel * self.base_yaw_rate[idx]
        obs[:, 6:8] = 0.0
        obs[:, 8] = -1.0  # gravity projected into the (roll/pitch-free) base frame
        obs[:, 9:12] = cfg.scale_cmd * self.command[idx]
        obs[:, 12:24] = cfg.scale_joint_pos * (self.joint_pos[idx] - self._default_joints)
        obs[:, 24:36] = cfg.scale_joint_vel * self.joint_vel[idx]
        obs[:, 36:48] = self.prev_action[idx]
        if self._sampler is not None:
            self._sampler.grid_into(
                obs[:, 48:],
                self._offsets32,
                self.base_pos[idx, 0],
                self.base_pos[idx, 1],
                self.base_yaw[idx],
                self.base_pos[idx, 2],
                self.terrain_of_agent[idx],
                cfg.clip_height_m,
            )
        else:
            obs[:, 48:] = self._height_grid_slow(idx)
        return obs

    def _height_grid_slow(self, idx: np.ndarray) -> np.ndarray:
        """Per-patch height grid; fallback for mixed patch geometries."""
        cfg = self.cfg
        heights = np.empty((self.num_agents, HEIGHT_GRID_SIZE))
        mask = np.zeros(self.num_agents, dtype=bool)
        mask[idx] = True
        for pid, gidx in self._groups:
            sel = gidx[mask[gidx]]
            if sel.size == 0:
                continue
            heights[sel] = sample_height_grid(
                self.patches[pid].field,
                self.base_pos[sel, 0],
                self.base_pos[sel, 1],
                self.base_yaw[sel],
                self.base_pos[sel, 2],
                spacing_m=cfg.grid_spacing_m,
                clip_m=cfg.clip_height_m,
            )
        return heights[idx]

    # -- stepping -----------------------------------------------------------

    def step(self, actions: np.ndarray) -> StepResult:
        """Advance every agent by one control step.

        Done agents are auto-reset in place on their own terrain; their
        pre-reset observation is reported for bootstrap computations and
        their episode total for evaluation streams. Non-finite actions fault
        the offending agent (terminated with the fall penalty) instead of
        propagating.
        """
        cfg = self.cfg
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.num_agents, ACT_DIM):
            raise ValueError(
                f"expected actions of shape {(self.num_agents, ACT_DIM)}, "
                f"got {actions.shape}"
            )
        fault = ~np.isfinite(actions).all(axis=1)
        if fault.any():
            self.fault_count += int(fault.sum())
            actions = np.where(fault[:, None], self.prev_action, actions)

        if cfg.backend == "surrogate":
            clamped = np.clip(
                actions, -cfg.surrogate_action_clip, cfg.surrogate_action_clip
            )
            targets = self._targets[self.terrain_of_agent]
            reward = -((clamped - targets) ** 2).sum(axis=1)
            terminated = fault.copy()
            cap = cfg.surrogate_episode_len
        else:
            from . import walker

            clamped = np.clip(actions, self._joint_low, self._joint_high)
            fell = walker.advance(self, clamped)
            reward = compute_reward(
                cfg,
                self.command,
                self.base_lin_vel,
                self.base_yaw,
                self.base_yaw_rate,
                clamped,
                self.prev_action,
                self.joint_vel,
                fell,
            )
            terminated = fell | fault
            cap = cfg.cap_steps

        reward = np.where(fault, -cfg.c_fall, reward)
        self.prev_action = clamped
        self.episode_steps += 1
        self.cum_reward += reward
        timed_out = (self.episode_steps >= cap) & ~terminated
        done = terminated | timed_out

        obs = self._observe(np.arange(self.num_agents))
        episode_return = np.where(done, self.cum_reward, np.nan)
        done_indices = np.flatnonzero(done)
        final_obs = obs[done_indices].copy()
        if done_indices.size:
            obs[done_indices] = self.reset_agents(done_indices)
        self.current_obs = obs
        return StepResult(
            obs=obs,
            reward=reward.astype(np.float32),
            terminated=terminated,
            timed_out=timed_out,
            episode_return=episode_return,
            done_indices=done_indices,
            final_obs=final_obs,
        )
