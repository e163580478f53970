import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestinv.cloud import PointCloud
from forestinv.errors import EmptyCloud, NoGroundPoints
from forestinv.terrain import (
    ClothParams,
    DigitalTerrainModel,
    build_dtm,
    cloth_filter,
    normalize_heights,
)


def grid_points(n_side, spacing, z=0.0):
    g = np.arange(n_side) * spacing
    x, y = np.meshgrid(g, g)
    return np.column_stack([x.ravel(), y.ravel(), np.full(x.size, z)])


def test_flat_cloud_all_ground(rng):
    xy = rng.uniform(0, 10, size=(1000, 2))
    cloud = PointCloud(np.column_stack([xy, np.zeros(1000)]))
    result = cloth_filter(cloud)
    assert result.ground_mask.all()
    assert result.converged


def test_single_outlier_is_the_only_non_ground(rng):
    xy = rng.uniform(0, 10, size=(1000, 2))
    xyz = np.vstack([np.column_stack([xy, np.zeros(1000)]), [[5.0, 5.0, 5.0]]])
    result = cloth_filter(PointCloud(xyz), ClothParams(classification_threshold=0.1))
    assert np.flatnonzero(~result.ground_mask).tolist() == [1000]


def test_empty_cloud_rejected():
    with pytest.raises(EmptyCloud):
        cloth_filter(PointCloud(np.empty((0, 3))))


def test_undulating_forest_ground_classification(small_plot):
    cloud, truth = small_plot
    mask = cloth_filter(cloud).ground_mask
    gt = truth.ground_mask
    tp = np.sum(mask & gt)
    assert tp / gt.sum() >= 0.98
    assert tp / mask.sum() >= 0.98
    assert mask.shape == (len(cloud),)


def test_threshold_monotonicity(small_plot):
    cloud, _ = small_plot
    sizes = []
    previous = None
    for t in (0.02, 0.05, 0.1, 0.2, 0.5):
        mask = cloth_filter(cloud, ClothParams(classification_threshold=t)).ground_mask
        if previous is not None:
            assert not np.any(previous & ~mask)
        previous = mask
        sizes.append(mask.sum())
    assert sizes == sorted(sizes)


@pytest.mark.parametrize("shift", [(8.0, -4.0, 3.25), (-16.5, 2.0, -100.0)])
def test_cloth_translation_equivariance(shift):
    # Dyadic coordinates keep the shifted arithmetic exact.
    rng = np.random.default_rng(7)
    xy = rng.integers(0, 640, size=(3000, 2)) / 64.0
    z = np.round(0.3 * np.sin(xy[:, 0] / 2) * 64) / 64
    z[:40] += 2.0  # some vegetation
    xyz = np.column_stack([xy, z])
    a = cloth_filter(PointCloud(xyz))
    b = cloth_filter(PointCloud(xyz + np.array(shift)))
    assert np.array_equal(a.ground_mask, b.ground_mask)
    assert np.allclose(b.surface.heights, a.surface.heights + shift[2], atol=1e-9)
    assert b.surface.origin == (a.surface.origin[0] + shift[0], a.surface.origin[1] + shift[1])


def test_dtm_flat_exact():
    cloud = PointCloud(grid_points(50, 0.02, z=2.0))
    dtm = build_dtm(cloud, np.ones(len(cloud), bool), resolution=0.04)
    assert not np.isnan(dtm.heights).any()
    assert np.all(dtm.heights == 2.0)


def test_dtm_single_point_and_fill_radius():
    xyz = np.array([[0.0, 0.0, 1.5], [1.0, 1.0, 7.0]])
    dtm = build_dtm(PointCloud(xyz), np.array([True, False]), resolution=0.04, fill_radius=0.25)
    assert dtm.heights[0, 0] == 1.5
    cx, cy = np.meshgrid(*dtm.cell_centers())
    d = np.hypot(cx - cx[0, 0], cy - cy[0, 0])
    filled = ~np.isnan(dtm.heights)
    assert np.all(dtm.heights[filled] == 1.5)
    # Every cell within the fill radius is filled; cells far beyond are no-data.
    assert filled[d <= 0.25 - 1e-9].all()
    assert not filled[d > 0.25 + 1e-9].any()


def test_dtm_sloped_plane_within_half_cell_bound():
    rng = np.random.default_rng(1)
    xy = rng.uniform(0, 4, size=(400_000, 2))  # ~25 points per cell
    cloud = PointCloud(np.column_stack([xy, 0.1 * xy[:, 0]]))
    res = 0.04
    dtm = build_dtm(cloud, np.ones(len(cloud), bool), resolution=res, fill_radius=0.0)
    cx, _ = np.meshgrid(*dtm.cell_centers())
    assert not np.isnan(dtm.heights).any()
    err = np.abs(dtm.heights - 0.1 * cx)
    assert err.max() <= 0.1 * res / 2 + 1e-12


def test_height_at_is_exact_on_planes():
    # Bilinear interpolation between cell centres reproduces any plane.
    dtm = DigitalTerrainModel((0.0, 0.0), 0.04, np.zeros((100, 100)))
    cx, cy = np.meshgrid(*dtm.cell_centers())
    dtm.heights[:] = 0.3 * cx - 0.2 * cy + 1.0
    q = np.random.default_rng(2).uniform(0.02, 3.98, size=(500, 2))
    assert np.allclose(dtm.height_at(q), 0.3 * q[:, 0] - 0.2 * q[:, 1] + 1.0, atol=1e-12)


def test_height_at_renormalizes_over_nodata():
    heights = np.array([[1.0, np.nan], [1.0, 1.0]])
    dtm = DigitalTerrainModel((0.0, 0.0), 1.0, heights)
    assert dtm.height_at(np.array([[0.9, 0.9]]))[0] == 1.0
    assert np.isnan(dtm.height_at(np.array([[1.5, 0.5], [-1.0, 0.5]]))).all()


def test_dtm_needs_ground():
    with pytest.raises(NoGroundPoints):
        build_dtm(PointCloud(np.zeros((3, 3))), np.zeros(3, bool))


def test_lower_index_cell_owns_shared_edge():
    dtm = DigitalTerrainModel((0.0, 0.0), 1.0, np.zeros((3, 3)))
    row, col, inside = dtm.cell_of(np.array([[1.0, 2.0], [0.0, 0.0], [3.0, 3.0], [3.5, 0.0]]))
    assert col[:3].tolist() == [0, 0, 2]
    assert row[:3].tolist() == [1, 0, 2]
    assert inside.tolist() == [True, True, True, False]


def test_normalize_flat_examples():
    ground = grid_points(30, 0.02, z=2.0)
    xyz = np.vstack([ground, [[0.3, 0.3, 3.3]]])
    mask = np.r_[np.ones(len(ground), bool), False]
    cloud = PointCloud(xyz)
    dtm = build_dtm(cloud, mask)
    norm, excluded = normalize_heights(cloud, dtm)
    assert len(excluded) == 0
    assert np.isclose(norm.xyz[-1, 2], 1.3, atol=1e-12)
    assert np.all(norm.xyz[:-1, 2] == 0.0)


def test_normalize_excludes_nodata():
    xyz = np.array([[0.0, 0.0, 0.0], [5.0, 5.0, 1.0]])
    cloud = PointCloud(xyz)
    dtm = build_dtm(cloud, np.array([True, False]))
    norm, excluded = normalize_heights(cloud, dtm)
    assert excluded.tolist() == [1]
    assert len(norm) == 1


def test_normalized_trunk_heights_match_generator(small_plot):
    # Terrain from the generator's ground labels isolates normalization from
    # classification errors at the trunk base.
    cloud, truth = small_plot
    dtm = build_dtm(cloud, truth.ground_mask)
    norm, excluded = normalize_heights(cloud, dtm)
    trunk = np.flatnonzero(truth.semantic == 2)
    kept = np.setdiff1d(trunk, excluded)
    assert len(kept) > 0.99 * len(trunk)
    pos = np.searchsorted(norm.source_index, kept)
    assert np.all(np.abs(norm.xyz[pos, 2] - truth.height[kept]) <= 0.05)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 30)),
                min_size=1, max_size=50))
def test_normalize_with_zero_dtm_is_identity(rows):
    xyz = np.array(rows, dtype=float)
    cloud = PointCloud(xyz)
    dtm = DigitalTerrainModel.covering(xyz[:, :2], 0.5)
    dtm.heights[:] = 0.0
    norm, excluded = normalize_heights(cloud, dtm)
    assert len(excluded) == 0
    assert np.array_equal(norm.xyz, xyz)


def test_ascii_grid_roundtrip(tmp_path):
    heights = np.arange(12, dtype=float).reshape(3, 4) / 7.0
    heights[1, 2] = np.nan
    dtm = DigitalTerrainModel((10.5, -3.0), 0.04, heights)
    path = tmp_path / "dtm.asc"
    dtm.write_ascii_grid(path)
    text = path.read_text().splitlines()
    assert [line.split()[0] for line in text[:6]] == [
        "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"]
    back = DigitalTerrainModel.read_ascii_grid(path)
    assert back.origin == dtm.origin and back.resolution == dtm.resolution
    assert np.array_equal(back.heights, heights, equal_nan=True)
