import time

import numpy as np
import pytest
from sklearn.metrics import pairwise_distances

from utils.bev import bev_project, gather_foreground
from utils.clustering import backmap, bfs_cluster, fuse_majority, partition_signature
from utils.range_view import spherical_project
from utils.scan_io import PointCloud
from utils.sma import ShiftedBev, identity_shift


def shifted_of(positions, cell_size=0.5) -> ShiftedBev:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(positions)
    cells = np.stack([np.arange(n) // 50, np.arange(n) % 50], axis=1).astype(np.int64)
    return ShiftedBev(cells=cells, positions=positions, cell_size=cell_size, origin=(-50.0, -50.0))


def union_find_partition(positions: np.ndarray, radius: float) -> np.ndarray:
    parent = list(range(len(positions)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    close = pairwise_distances(positions) <= radius
    for a, b in zip(*np.nonzero(close)):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return partition_signature(np.array([find(i) + 1 for i in range(len(positions))]))


def test_partition_signature():
    assert partition_signature(np.array([5, 5, 0, 2, 5, 2])).tolist() == [1, 1, 0, 2, 1, 2]


def test_far_cells_form_two_clusters():
    ids = bfs_cluster(shifted_of([[0.0, 0.0], [3.6, 0.0]]), radius=1.2)
    assert ids.tolist() == [1, 2]


def test_chain_forms_one_cluster():
    ids = bfs_cluster(shifted_of([[float(k), 0.0] for k in range(12)]), radius=1.2)
    assert set(ids.tolist()) == {1}


def test_radius_is_inclusive():
    ids = bfs_cluster(shifted_of([[0.0, 0.0], [1.0, 0.0]], cell_size=1.0), radius=1.0)
    assert ids.tolist() == [1, 1]


def test_empty_and_invalid_radius():
    assert bfs_cluster(shifted_of(np.zeros((0, 2)))).shape == (0,)
    with pytest.raises(ValueError):
        bfs_cluster(shifted_of([[0.0, 0.0]]), radius=0.0)


@pytest.mark.parametrize("cell_size, radius", [(0.5, 1.2), (0.3, 0.5), (1.0, 2.5), (0.5, 0.2)])
def test_matches_union_find(rng, cell_size, radius):
    for _ in range(50):
        positions = rng.uniform(-10, 10, size=(200, 2))
        ids = bfs_cluster(shifted_of(positions, cell_size), radius)
        np.testing.assert_array_equal(partition_signature(ids), union_find_partition(positions, radius))
        assert ids.min() == 1
        assert set(ids.tolist()) == set(range(1, ids.max() + 1))


def test_ids_follow_row_major_cell_order():
    shifted = ShiftedBev(
        cells=np.array([[5, 0], [0, 3], [0, 1]]),
        positions=np.array([[10.0, 0.0], [0.0, 0.0], [20.0, 0.0]]),
        cell_size=0.5,
        origin=(-50.0, -50.0),
    )
    assert bfs_cluster(shifted, 1.2).tolist() == [3, 2, 1]


def _five_point_image():
    points = np.array([[10.0, 0.05 * k, 0.0, 0.5] for k in range(5)], dtype=np.float32)
    return spherical_project(PointCloud(points), 64, 2048, 3.0, -25.0)


def test_backmap_single_cell():
    image = _five_point_image()
    grid = bev_project(gather_foreground(image, image.mask), 0.5)
    assert grid.num_occupied == 1
    assert grid.cell_members[0].size == 5
    ids = backmap(bfs_cluster(identity_shift(grid)), grid, image)
    assert ids.tolist() == [1] * 5


def test_backmap_without_foreground():
    image = _five_point_image()
    grid = bev_project(gather_foreground(image, np.zeros(image.shape, dtype=bool)), 0.5)
    ids = backmap(bfs_cluster(identity_shift(grid)), grid, image)
    assert ids.tolist() == [0] * 5


def test_backmap_length_check():
    image = _five_point_image()
    grid = bev_project(gather_foreground(image, image.mask), 0.5)
    with pytest.raises(ValueError):
        backmap(np.array([1, 2]), grid, image)


def test_majority_relabels_minority(toy_taxonomy):
    semantic = np.array([1] * 9 + [2] + [5, 5])
    instance = np.array([1] * 10 + [0, 0])
    sem, inst = fuse_majority(semantic, instance, toy_taxonomy)
    assert sem.tolist() == [1] * 10 + [5, 5]
    np.testing.assert_array_equal(inst, instance)


def test_uniform_instance_unchanged(toy_taxonomy):
    semantic = np.array([3, 3, 3, 1, 1])
    instance = np.array([2, 2, 2, 7, 7])
    sem, inst = fuse_majority(semantic, instance, toy_taxonomy)
    np.testing.assert_array_equal(sem, semantic)
    np.testing.assert_array_equal(inst, instance)


def test_majority_tie_prefers_lower_class(toy_taxonomy):
    semantic = np.array([4] * 5 + [2] * 5)
    sem, _ = fuse_majority(semantic, np.ones(10, dtype=np.int64), toy_taxonomy)
    assert set(sem.tolist()) == {2}


def test_stuff_majority_dissolves_instance(toy_taxonomy):
    semantic = np.array([5] * 6 + [1] * 4)
    sem, inst = fuse_majority(semantic, np.full(10, 3), toy_taxonomy)
    np.testing.assert_array_equal(sem, semantic)
    assert not inst.any()


def test_fuse_length_mismatch(toy_taxonomy):
    with pytest.raises(ValueError):
        fuse_majority(np.zeros(3, dtype=np.int64), np.zeros(4, dtype=np.int64), toy_taxonomy)


def fuse_per_instance(semantic, instance, taxonomy):
    """instance 하나씩 최빈 클래스를 세는 기준 구현"""
    semantic, instance = semantic.copy(), instance.copy()
    for inst_id in np.unique(instance[instance > 0]):
        members = instance == inst_id
        majority = int(np.argmax(np.bincount(semantic[members])))
        if taxonomy.is_thing(majority):
            semantic[members] = majority
        else:
            instance[members] = 0
    return semantic, instance


def test_fuse_matches_per_instance_voting(toy_taxonomy, rng):
    for _ in range(50):
        n = int(rng.integers(1, 400))
        semantic = rng.integers(0, 7, size=n)
        instance = rng.choice([0, 3, 8, 41, 1000], size=n)
        sem, inst = fuse_majority(semantic, instance, toy_taxonomy)
        ref_sem, ref_inst = fuse_per_instance(semantic, instance, toy_taxonomy)
        np.testing.assert_array_equal(sem, ref_sem)
        np.testing.assert_array_equal(inst, ref_inst)


def test_fuse_without_instances_is_identity(toy_taxonomy):
    semantic = np.array([1, 5, 6])
    sem, inst = fuse_majority(semantic, np.zeros(3, dtype=np.int64), toy_taxonomy)
    np.testing.assert_array_equal(sem, semantic)
    assert not inst.any()


@pytest.mark.slow
def test_bfs_under_50ms_per_scene():
    rng = np.random.Generator(np.random.PCG64(7))
    bfs_cluster(shifted_of(rng.uniform(-40, 40, size=(500, 2))), radius=1.2)
    for _ in range(200):
        n_blobs = int(rng.integers(3, 12))
        centers = rng.uniform(-40, 40, size=(n_blobs, 2))
        sizes = rng.multinomial(int(rng.integers(300, 501)), np.full(n_blobs, 1 / n_blobs))
        positions = np.concatenate([c + rng.normal(0, 1.0, size=(k, 2)) for c, k in zip(centers, sizes)])
        shifted = shifted_of(positions)
        elapsed = []
        for _ in range(3):
            start = time.perf_counter()
            bfs_cluster(shifted, radius=1.2)
            elapsed.append(time.perf_counter() - start)
        assert min(elapsed) < 0.05, f"{len(positions)} cells took {min(elapsed) * 1e3:.1f} ms"
