import numpy as np
import pytest

from terraincl.terrain import (
    HEIGHT_GRID_SIZE,
    HeightField,
    TerrainKind,
    TerrainParams,
    generate,
    height_at,
    sample_height_grid,
    terrain_label,
    to_csv,
)

ALL_KINDS = list(TerrainKind)


def test_flat_is_all_zeros():
    field = generate(TerrainKind.FLAT, TerrainParams(), seed=7)
    assert np.all(field.heights == 0.0)


def test_slope_up_closed_form():
    params = TerrainParams(slope_grade=0.2)
    field = generate(TerrainKind.SLOPE_UP, params, seed=1)
    assert height_at(field, 2.0, 0.0) == pytest.approx(0.4, abs=1e-12)


def test_stairs_up_closed_form():
    params = TerrainParams(step_run_m=0.3, step_height_m=0.1)
    field = generate(TerrainKind.STAIRS_UP, params, seed=1)
    # floor(0.95 / 0.3) = 3 steps
    assert height_at(field, 0.95, 0.0) == pytest.approx(0.3, abs=1e-12)


def test_tiles_bounded_and_bit_identical():
    params = TerrainParams(tile_height_max_m=0.1)
    a = generate(TerrainKind.TILES, params, seed=3)
    b = generate(TerrainKind.TILES, params, seed=3)
    assert np.all(np.abs(a.heights) <= 0.1)
    assert np.array_equal(a.heights, b.heights)
    c = generate(TerrainKind.TILES, params, seed=4)
    assert not np.array_equal(a.heights, c.heights)


@pytest.mark.parametrize("kind", ALL_KINDS)
@pytest.mark.parametrize("rough", [False, True])
def test_generation_deterministic(kind, rough):
    params = TerrainParams()
    a = generate(kind, params, seed=11, rough=rough)
    b = generate(kind, params, seed=11, rough=rough)
    assert np.array_equal(a.heights, b.heights)
    assert np.all(np.isfinite(a.heights))


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_amplitude_bounds(kind):
    params = TerrainParams()
    field = generate(kind, params, seed=5, rough=True)
    if kind in (TerrainKind.SLOPE_UP, TerrainKind.SLOPE_DOWN):
        cap = params.slope_grade * params.patch_length_m / 2
    elif kind in (TerrainKind.STAIRS_UP, TerrainKind.STAIRS_DOWN):
        cap = params.step_height_m * np.ceil(
            params.patch_length_m / 2 / params.step_run_m
        )
    elif kind is TerrainKind.TILES:
        cap = params.tile_height_max_m
    else:
        cap = 0.0
    assert field.max_abs_height <= cap + params.rough_amplitude_m + 1e-12


def test_closed_forms_exact_at_random_nodes():
    params = TerrainParams()
    rng = np.random.default_rng(0)
    for kind in (
        TerrainKind.FLAT,
        TerrainKind.SLOPE_UP,
        TerrainKind.SLOPE_DOWN,
        TerrainKind.STAIRS_UP,
        TerrainKind.STAIRS_DOWN,
    ):
        field = generate(kind, params, seed=2)
        ii = rng.integers(0, field.rows, size=500)
        jj = rng.integers(0, field.cols, size=500)
        xs = field.origin[0] + ii * params.cell_size_m
        ys = field.origin[1] + jj * params.cell_size_m
        got = height_at(field, xs, ys)
        if kind is TerrainKind.FLAT:
            want = np.zeros_like(xs)
        elif kind is TerrainKind.SLOPE_UP:
            want = params.slope_grade * xs
        elif kind is TerrainKind.SLOPE_DOWN:
            want = -params.slope_grade * xs
        elif kind is TerrainKind.STAIRS_UP:
            want = params.step_height_m * np.floor(xs / params.step_run_m)
        else:
            want = -params.step_height_m * np.floor(xs / params.step_run_m)
        assert np.array_equal(got, want), kind


def test_height_at_node_identity_and_midpoint():
    heights = np.array([[0.0, 0.0], [0.1, 0.1]])
    field = HeightField(heights=heights, cell_size_m=1.0, origin=(0.0, 0.0))
    assert height_at(field, 1.0, 0.0) == 0.1
    assert height_at(field, 0.0, 1.0) == 0.0
    # Midpoint between rows of 0.0 and 0.1, flat in y.
    assert height_at(field, 0.5, 0.5) == pytest.approx(0.05, abs=1e-15)


def test_height_at_clamps_to_border():
    heights = np.arange(12, dtype=np.float64).reshape(3, 4)
    field = HeightField(heights=heights, cell_size_m=0.5, origin=(-0.5, -1.0))
    assert height_at(field, -1e6, -1e6) == heights[0, 0]
    assert height_at(field, 1e6, 1e6) == heights[-1, -1]


@pytest.mark.parametrize(
    "kwargs, fragment",
    [
        (dict(cell_size_m=0.0), "cell_size_m"),
        (dict(patch_length_m=16.03), "patch_length_m"),
        (dict(step_run_m=0.05), "step_run_m"),
        (dict(slope_grade=-0.1), "slope_grade"),
        (dict(rough_amplitude_m=-1.0), "rough_amplitude_m"),
    ],
)
def test_invalid_params_name_the_constraint(kwargs, fragment):
    with pytest.raises(ValueError, match=fragment):
        generate(TerrainKind.FLAT, TerrainParams(**kwargs), seed=0)


def test_sample_grid_is_187_values():
    # 17 x 11 = 187 = 235 - 48.
    assert HEIGHT_GRID_SIZE == 187
    field = generate(TerrainKind.FLAT, TerrainParams(), seed=0)
    samples = sample_height_grid(field, 0.0, 0.0, 0.0, 0.5)
    assert samples.shape == (187,)
    assert np.all(samples == -0.5)


def test_sample_grid_clips():
    field = generate(TerrainKind.FLAT, TerrainParams(), seed=0)
    samples = sample_height_grid(field, 0.0, 0.0, 0.0, 5.0, clip_m=1.0)
    assert np.all(samples == -1.0)


def test_sample_grid_yaw_pi_reverses_grid():
    field = generate(TerrainKind.SLOPE_UP, TerrainParams(), seed=0)
    fwd = sample_height_grid(field, 1.0, 0.5, 0.0, 0.0).reshape(17, 11)
    rev = sample_height_grid(field, 1.0, 0.5, np.pi, 0.0).reshape(17, 11)
    # Rotating the grid by pi visits the same points in reversed order.
    assert np.allclose(rev, fwd[::-1, ::-1], atol=1e-9)


def test_sample_grid_batched_matches_scalar():
    field = generate(TerrainKind.STAIRS_UP, TerrainParams(), seed=9)
    rng = np.random.default_rng(1)
    xs = rng.uniform(-2, 2, size=5)
    ys = rng.uniform(-1, 1, size=5)
    yaws = rng.uniform(-np.pi, np.pi, size=5)
    zs = rng.uniform(0, 1, size=5)
    batched = sample_height_grid(field, xs, ys, yaws, zs)
    assert batched.shape == (5, 187)
    for i in range(5):
        single = sample_height_grid(field, xs[i], ys[i], yaws[i], zs[i])
        assert np.array_equal(batched[i], single)


def test_terrain_label():
    assert terrain_label(TerrainKind.SLOPE_UP, True) == "slope_up+rough"
    assert terrain_label(TerrainKind.TILES, False) == "tiles"
    assert TerrainKind.from_name("stairs-down") is TerrainKind.STAIRS_DOWN
    with pytest.raises(ValueError, match="unknown terrain kind"):
        TerrainKind.from_name("lava")


def test_csv_round_trip(tmp_path):
    field = generate(TerrainKind.TILES, TerrainParams(), seed=6)
    path = tmp_path / "field.csv"
    to_csv(field, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# rows=")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(data, field.heights)
