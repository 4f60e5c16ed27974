"""Procedural heightfield terrain: generation and height queries.

A terrain patch is a regular grid of node heights centered on the origin.
Generation is a pure function of (kind, params, seed); all randomness comes
from labeled Philox streams so regenerating a patch is bit-identical.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

from .rng import substream

# Height-sample grid under the agent: 17 points along heading x 11 lateral.
HEIGHT_GRID_SHAPE = (17, 11)
HEIGHT_GRID_SIZE = HEIGHT_GRID_SHAPE[0] * HEIGHT_GRID_SHAPE[1]

# Queries within this fraction of a cell from a lattice line are snapped onto
# it, so querying at a node coordinate returns the stored node height exactly
# despite float rounding in (x - origin) / cell_size.
_LATTICE_SNAP = 1e-9


class TerrainKind(enum.Enum):
    """The five terrain families; roughness is an orthogonal modifier."""

    FLAT = "flat"
    SLOPE_UP = "slope_up"
    SLOPE_DOWN = "slope_down"
    STAIRS_UP = "stairs_up"
    STAIRS_DOWN = "stairs_down"
    TILES = "tiles"

    @classmethod
    def from_name(cls, name: str) -> "TerrainKind":
        key = name.strip().lower().replace("-", "_")
        for kind in cls:
            if kind.value == key:
                return kind
        valid = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown terrain kind {name!r}; expected one of: {valid}")


def terrain_label(kind: TerrainKind, rough: bool) -> str:
    return kind.value + ("+rough" if rough else "")


@dataclass(frozen=True)
class TerrainParams:
    """Difficulty knobs for patch generation. All lengths in meters."""

    patch_length_m: float = 16.0
    patch_width_m: float = 8.0
    cell_size_m: float = 0.05
    slope_grade: float = 0.25
    step_run_m: float = 0.30
    step_height_m: float = 0.10
    tile_cell_m: float = 0.25
    tile_height_max_m: float = 0.08
    rough_amplitude_m: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if not self.cell_size_m > 0:
            raise ValueError(f"cell_size_m must be > 0, got {self.cell_size_m}")
        for name in ("patch_length_m", "patch_width_m"):
            extent = getattr(self, name)
            cells = extent / self.cell_size_m
            if extent <= 0 or abs(cells - round(cells)) > 1e-9:
                raise ValueError(
                    f"{name}={extent} must be a positive integer multiple of "
                    f"cell_size_m={self.cell_size_m}"
                )
        if self.step_run_m < 2 * self.cell_size_m:
            raise ValueError(
                f"step_run_m={self.step_run_m} must be >= 2 * cell_size_m="
                f"{self.cell_size_m} so stairs resolve on the grid"
            )
        if self.tile_cell_m <= 0:
            raise ValueError(f"tile_cell_m must be > 0, got {self.tile_cell_m}")
        for name in (
            "slope_grade",
            "step_height_m",
            "tile_height_max_m",
            "rough_amplitude_m",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class HeightField:
    """Immutable grid of node heights; rows index x, columns index y."""

    heights: np.ndarray  # (rows, cols) float64, meters
    cell_size_m: float
    origin: tuple[float, float]  # world (x, y) of node [0, 0]

    def __post_init__(self):
        self.heights.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @property
    def max_abs_height(self) -> float:
        return float(np.abs(self.heights).max())


def generate(
    kind: TerrainKind,
    params: TerrainParams,
    seed: int | None = None,
    *,
    rough: bool = False,
) -> HeightField:
    """Build the heightfield for one patch.

    `seed` defaults to `params.seed`. Two calls with identical arguments
    produce bit-identical arrays.
    """
    params.validate()
    if seed is None:
        seed = params.seed
    cell = params.cell_size_m
    nx = round(params.patch_length_m / cell)
    ny = round(params.patch_width_m / cell)
    origin = (-params.patch_length_m / 2.0, -params.patch_width_m / 2.0)
    x = origin[0] + np.arange(nx + 1, dtype=np.float64) * cell
    y = origin[1] + np.arange(ny + 1, dtype=np.float64) * cell

    label = terrain_label(kind, rough)
    if kind is TerrainKind.FLAT:
        heights = np.zeros((nx + 1, ny + 1), dtype=np.float64)
    elif kind in (TerrainKind.SLOPE_UP, TerrainKind.SLOPE_DOWN):
        sign = 1.0 if kind is TerrainKind.SLOPE_UP else -1.0
        heights = np.broadcast_to(
            sign * params.slope_grade * x[:, None], (nx + 1, ny + 1)
        ).copy()
    elif kind in (TerrainKind.STAIRS_UP, TerrainKind.STAIRS_DOWN):
        sign = 1.0 if kind is TerrainKind.STAIRS_UP else -1.0
        steps = np.floor(x / params.step_run_m)
        heights = np.broadcast_to(
            sign * params.step_height_m * steps[:, None], (nx + 1, ny + 1)
        ).copy()
    elif kind is TerrainKind.TILES:
        tx = np.floor(x / params.tile_cell_m).astype(np.int64)
        ty = np.floor(y / params.tile_cell_m).astype(np.int64)
        rng = substream(seed, "terrain", label, "tiles")
        table = rng.uniform(
            -params.tile_height_max_m,
            params.tile_height_max_m,
            size=(tx.max() - tx.min() + 1, ty.max() - ty.min() + 1),
        )
        heights = table[np.ix_(tx - tx.min(), ty - ty.min())]
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unhandled terrain kind {kind}")

    if rough and params.rough_amplitude_m > 0:
        rng = substream(seed, "terrain", label, "rough")
        heights = heights + rng.uniform(
            -params.rough_amplitude_m, params.rough_amplitude_m, size=heights.shape
        )

    return HeightField(heights=heights, cell_size_m=cell, origin=origin)


def _lattice_coords(values, origin, cell, count):
    """Clamped grid index, snapped onto the lattice near node coordinates."""
    g = (values - origin) / cell
    np.clip(g, 0.0, count - 1, out=g)
    # floor(g + snap) pulls coordinates just below a node onto it; the
    # remaining fraction is then snapped to zero when just above one, so node
    # queries return stored node heights exactly despite float rounding.
    i0 = np.floor(g + _LATTICE_SNAP)
    f = g - i0
    f[f < _LATTICE_SNAP] = 0.0
    return i0.astype(np.int64), f


def interpolate_heights(heights: np.ndarray, origin, cell, x, y, table_index=None):
    """Bilinear interpolation on one (rows, cols) grid or a stack of them.

    With `table_index` given, `heights` is (tables, rows, cols) and each query
    reads the grid selected by its index. Out-of-bounds clamps to the border.
    Inputs broadcast; the result has the broadcast shape (0-d for scalars).
    """
    if table_index is None:
        rows, cols = heights.shape
    else:
        _, rows, cols = heights.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    shape = np.broadcast_shapes(x.shape, y.shape)
    scalar = shape == ()
    if scalar:
        shape = (1,)
    x = np.ascontiguousarray(np.broadcast_to(x, shape))
    y = np.ascontiguousarray(np.broadcast_to(y, shape))
    i0, fx = _lattice_coords(x, origin[0], cell, rows)
    j0, fy = _lattice_coords(y, origin[1], cell, cols)
    flat = heights.reshape(-1)
    base = i0 * cols + j0
    if table_index is not None:
        base += np.broadcast_to(np.asarray(table_index, dtype=np.int64), shape) * (
            rows * cols
        )
    step_i = np.where(i0 < rows - 1, cols, 0)
    step_j = np.where(j0 < cols - 1, 1, 0)
    h00 = flat.take(base)
    h10 = flat.take(base + step_i)
    h01 = flat.take(base + step_j)
    step_i += step_j
    h11 = flat.take(base + step_i)
    top = h00 + (h10 - h00) * fx
    bot = h01 + (h11 - h01) * fx
    bot -= top
    bot *= fy
    top += bot
    return top[0] if scalar else top


def height_at(field: HeightField, x, y):
    """Bilinear height at world (x, y); out-of-bounds clamps to the border.

    Accepts scalars or broadcastable arrays and returns float64 of the
    broadcast shape.
    """
    out = interpolate_heights(
        field.heights, field.origin, field.cell_size_m, x, y
    )
    if np.isscalar(x) and np.isscalar(y):
        return float(out)
    return out


@functools.lru_cache(maxsize=8)
def grid_offsets(spacing_m: float) -> np.ndarray:
    """Body-frame (x, y) offsets of the height-sample grid, row-major.

    Rows run along the heading axis (17), columns lateral (11), both centered
    on the base. The returned array is shared and read-only.
    """
    n_fwd, n_lat = HEIGHT_GRID_SHAPE
    ox = (np.arange(n_fwd, dtype=np.float64) - (n_fwd - 1) / 2.0) * spacing_m
    oy = (np.arange(n_lat, dtype=np.float64) - (n_lat - 1) / 2.0) * spacing_m
    xx, yy = np.meshgrid(ox, oy, indexing="ij")
    offsets = np.stack([xx.ravel(), yy.ravel()], axis=-1)  # (187, 2)
    offsets.setflags(write=False)
    return offsets


def sample_height_grid(
    field: HeightField,
    x,
    y,
    yaw,
    base_z,
    *,
    spacing_m: float = 0.1,
    clip_m: float = 1.0,
) -> np.ndarray:
    """Heights under the base on a yaw-aligned 17x11 grid, row-major.

    Each value is terrain height minus `base_z`, clipped to +/- `clip_m`.
    Scalar pose gives shape (187,); arrays of shape (N,) give (N, 187).
    """
    offsets = grid_offsets(spacing_m)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    base_z = np.asarray(base_z, dtype=np.float64)
    scalar = x.ndim == 0
    c = np.cos(yaw)[..., None]
    s = np.sin(yaw)[..., None]
    px = x[..., None] + offsets[:, 0] * c - offsets[:, 1] * s
    py = y[..., None] + offsets[:, 0] * s + offsets[:, 1] * c
    samples = height_at(field, px, py) - base_z[..., None]
    samples = np.clip(samples, -clip_m, clip_m)
    return samples[0] if scalar and samples.ndim > 1 else samples


def to_csv(field: HeightField, path) -> None:
    """Write the field as CSV: a comment header, then rows x cols of meters."""
    header = (
        f"# rows={field.rows} cols={field.cols} cell_size_m={field.cell_size_m!r} "
        f"origin_x={field.origin[0]!r} origin_y={field.origin[1]!r}"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in field.heights:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
