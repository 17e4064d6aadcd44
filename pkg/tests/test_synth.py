from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from utils.bev import bev_project, gather_foreground, shift_points
from utils.errors import PackingError
from utils.range_view import project_labels, spherical_project
from utils.scan_io import load_taxonomy, read_label_file, read_scan_file
from utils.synth import (
    SceneSpec,
    generate_scene,
    instance_centroids,
    oracle_offsets,
    scene_rng,
    taxonomy_classes,
    write_scene,
)

NUSCENES_TAXONOMY = Path(__file__).resolve().parents[1] / "config" / "nuscenes.yaml"


def test_same_seed_same_scene(small_spec):
    a_cloud, a_labels, a_centroids = generate_scene(small_spec(seed=11))
    b_cloud, b_labels, b_centroids = generate_scene(small_spec(seed=11))
    assert a_cloud.points.tobytes() == b_cloud.points.tobytes()
    np.testing.assert_array_equal(a_labels.semantic, b_labels.semantic)
    np.testing.assert_array_equal(a_labels.instance, b_labels.instance)
    assert a_centroids.keys() == b_centroids.keys()


def test_different_seeds_differ(small_spec):
    a_cloud, _, _ = generate_scene(small_spec(seed=1))
    b_cloud, _, _ = generate_scene(small_spec(seed=2))
    assert a_cloud.points.tobytes() != b_cloud.points.tobytes()


def test_stuff_only_scene(small_spec):
    cloud, labels, centroids = generate_scene(small_spec(num_instances=0))
    assert centroids == {}
    assert not labels.instance.any()
    assert set(labels.semantic.tolist()) == {9}
    assert cloud.count > 0


def test_minimum_separation_holds():
    for seed in range(5):
        spec = SceneSpec(seed=seed, num_instances=10, min_separation=5.0, ground_points=100)
        _, _, centroids = generate_scene(spec)
        assert len(centroids) == 10
        pairs = list(combinations(centroids.values(), 2))
        assert len(pairs) == 45
        assert min(np.linalg.norm(a - b) for a, b in pairs) >= 5.0


def test_instances_stay_within_radius(small_spec):
    spec = small_spec(seed=4, num_instances=8)
    cloud, labels, centroids = generate_scene(spec)
    xy = cloud.xyz[:, :2].astype(np.float64)
    for inst, centroid in centroids.items():
        spread = np.linalg.norm(xy[labels.instance == inst] - centroid, axis=1)
        assert spread.max() <= spec.radius_range[1]


def test_centroids_are_point_means(small_spec):
    cloud, labels, centroids = generate_scene(small_spec(seed=5))
    assert centroids.keys() == instance_centroids(cloud, labels).keys()
    xy = cloud.xyz[:, :2].astype(np.float64)
    for inst, centroid in centroids.items():
        np.testing.assert_allclose(centroid, xy[labels.instance == inst].mean(axis=0), atol=1e-9)


def test_every_point_owns_a_pixel(small_spec):
    spec = small_spec(seed=6)
    cloud, _, _ = generate_scene(spec)
    pixels = spherical_project(cloud, spec.height, spec.width, spec.fov_up, spec.fov_down).pixel_index()
    assert (pixels >= 0).all()
    assert np.unique(pixels).size == cloud.count


def test_impossible_packing_raises():
    spec = SceneSpec(num_instances=40, min_separation=30.0, max_retries=50)
    with pytest.raises(PackingError):
        generate_scene(spec)


@pytest.mark.parametrize("kwargs", [
    {"num_instances": -1},
    {"points_per_instance": (10, 5)},
    {"radius_range": (0.0, 1.0)},
    {"min_separation": -1.0},
    {"thing_classes": ()},
    {"extent": (10.0, -10.0, -5.0, 5.0)},
])
def test_invalid_scene_spec(kwargs):
    with pytest.raises(ValueError):
        SceneSpec(**kwargs)


def _collapsed_grid(spec, sigma=0.0):
    cloud, labels, centroids = generate_scene(spec)
    image = spherical_project(cloud, spec.height, spec.width, spec.fov_up, spec.fov_down)
    offsets = oracle_offsets(cloud, labels, centroids, image, sigma, scene_rng(99))
    instance_map = project_labels(image, labels.instance)
    fg = shift_points(gather_foreground(image, instance_map > 0), offsets)
    return fg, bev_project(fg, 0.5), centroids


def test_zero_noise_collapses_instances(small_spec):
    for seed in range(5):
        fg, grid, centroids = _collapsed_grid(small_spec(seed=seed, num_instances=12))
        owners = [min(centroids, key=lambda i: np.linalg.norm(centroids[i] - p)) for p in fg.shifted]
        expected = np.stack([centroids[i] for i in owners])
        np.testing.assert_allclose(fg.shifted, expected, atol=1e-9)
        assert grid.num_occupied <= len(centroids)


def test_noise_spreads_instances(small_spec):
    fg, _, _ = _collapsed_grid(small_spec(seed=1), sigma=0.5)
    assert len(np.unique(fg.shifted, axis=0)) == len(fg)


def test_offsets_zero_on_ground(small_spec):
    spec = small_spec(seed=2)
    cloud, labels, centroids = generate_scene(spec)
    image = spherical_project(cloud, spec.height, spec.width, spec.fov_up, spec.fov_down)
    offsets = oracle_offsets(cloud, labels, centroids, image)
    ground = project_labels(image, labels.instance) == 0
    assert not offsets[ground].any()
    with pytest.raises(ValueError):
        oracle_offsets(cloud, labels, centroids, image, sigma=-1.0)


def test_taxonomy_classes(kitti):
    things, ground = taxonomy_classes(kitti)
    assert things == (1, 2, 3, 4, 5, 6, 7, 8)
    assert ground == 9
    things, ground = taxonomy_classes(load_taxonomy(NUSCENES_TAXONOMY))
    assert things == (2, 3, 4, 5, 6, 7, 9, 10)
    assert ground == 11


def test_write_scene(tmp_path, small_spec):
    cloud, labels, _ = generate_scene(small_spec(seed=8))
    scan_path, label_path = write_scene(tmp_path, "000008", cloud, labels)
    assert scan_path == tmp_path / "velodyne" / "000008.bin"
    assert label_path == tmp_path / "labels" / "000008.label"
    np.testing.assert_array_equal(read_scan_file(scan_path).points, cloud.points)
    loaded = read_label_file(label_path, cloud.count)
    np.testing.assert_array_equal(loaded.instance, labels.instance)
    np.testing.assert_array_equal(loaded.semantic, labels.semantic)
