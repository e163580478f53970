import numpy as np
import pytest

from forestinv.cloud import SemanticLabel
from forestinv.errors import PlacementFailure
from forestinv.synth import SynthConfig, synth_forest


def test_no_trees_is_ground_only():
    cloud, truth = synth_forest(SynthConfig(n_trees=0, area=(10.0, 10.0), shrub_density=0.0))
    assert len(truth.trees) == 0
    assert truth.tree_table() == []
    assert np.all(cloud.semantic == SemanticLabel.GROUND)
    assert np.allclose(cloud.xyz[:, 2], truth.config.ground_height(cloud.xyz[:, 0], cloud.xyz[:, 1]))


def test_same_seed_is_bit_identical():
    cfg = SynthConfig(seed=11, n_trees=5, area=(20.0, 20.0))
    a, ta = synth_forest(cfg)
    b, tb = synth_forest(cfg)
    assert a.xyz.tobytes() == b.xyz.tobytes()
    assert a.equals(b)
    assert np.array_equal(ta.trees, tb.trees) and np.array_equal(ta.offsets, tb.offsets)
    c, _ = synth_forest(SynthConfig(seed=12, n_trees=5, area=(20.0, 20.0)))
    assert not np.array_equal(a.xyz[:100], c.xyz[:100])


def test_fifty_trees_respect_spacing():
    cfg = SynthConfig(n_trees=50, area=(100.0, 100.0), min_spacing=2.0, points_per_tree=10,
                      canopy_points=10, ground_density=0.1)
    _, truth = synth_forest(cfg)
    assert len(truth.trees) == 50
    xy = truth.trees[:, 1:3]
    for i in range(50):
        for j in range(i + 1, 50):
            assert np.hypot(*(xy[i] - xy[j])) >= 2.0
    assert np.all((truth.trees[:, 3] >= 10.0) & (truth.trees[:, 3] <= 80.0))


def test_truth_consistent_with_cloud(small_plot):
    cloud, truth = small_plot
    cloud.validate()
    stem = truth.semantic == SemanticLabel.STEM
    for tid, x, y, dbh in truth.tree_table():
        pts = cloud.xyz[stem & (truth.instance == tid)]
        r = np.hypot(pts[:, 0] - x, pts[:, 1] - y)
        assert abs(np.mean(r) - dbh / 200.0) < 0.002
    center = cloud.xyz + truth.offsets
    tree = truth.instance > 0
    for tid, x, y, _ in truth.tree_table():
        c = center[truth.instance == tid]
        assert np.allclose(c[:, :2], (x, y))
    assert np.all(truth.offsets[~tree] == 0)
    ground_z = truth.config.ground_height(cloud.xyz[:, 0], cloud.xyz[:, 1])
    assert np.allclose(cloud.xyz[:, 2] - ground_z, truth.height)


def test_occluded_trunks_cover_limited_arc():
    cfg = SynthConfig(seed=2, n_trees=6, area=(30.0, 30.0), occluded_fraction=0.5,
                      canopy=False, shrub_density=0.0)
    cloud, truth = synth_forest(cfg)
    assert truth.occluded.sum() == 3
    for k, (tid, x, y, _) in enumerate(truth.tree_table()):
        pts = cloud.xyz[truth.instance == tid]
        ang = np.sort(np.arctan2(pts[:, 1] - y, pts[:, 0] - x))
        gaps = np.diff(np.r_[ang, ang[0] + 2 * np.pi])
        coverage = 360 - np.degrees(gaps.max())
        assert (coverage <= 60.0) == bool(truth.occluded[k])


@pytest.mark.parametrize("kwargs", [
    dict(dbh_range=(4.0, 50.0)),
    dict(dbh_range=(10.0, 250.0)),
    dict(min_spacing=0.5),
    dict(occluded_fraction=1.5),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)


def test_placement_failure():
    with pytest.raises(PlacementFailure):
        synth_forest(SynthConfig(n_trees=200, area=(10.0, 10.0), min_spacing=2.0))
