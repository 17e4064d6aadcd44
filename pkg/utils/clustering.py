"""
BFS radius clustering, instance id back-mapping, majority voting.

C_f 를 격자 크기로 다시 binning 한 해시 테이블에서 ⌈r/cell⌉+1 ring 안의 셀만
후보로 보므로, 점유 셀 수에 거의 선형으로 동작합니다.
"""
import logging
from collections import defaultdict, deque

import numpy as np

from utils.bev import BevGrid
from utils.range_view import RangeImage, unproject_labels
from utils.scan_io import ClassTaxonomy
from utils.sma import ShiftedBev

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 1.2


def _neighbor_lists(positions: np.ndarray, bins: np.ndarray, rings: int, radius: float) -> list[np.ndarray]:
    """bin 단위로 후보를 모아 셀별 radius 이웃 목록을 만듭니다."""
    members: dict[tuple[int, int], list[int]] = defaultdict(list)
    for idx, (bx, by) in enumerate(bins.tolist()):
        members[(bx, by)].append(idx)
    members_arr = {key: np.array(v, dtype=np.int64) for key, v in members.items()}
    keys = np.array(list(members_arr), dtype=np.int64)
    # ring 이 점유 bin 수보다 넓으면 점유 bin 을 직접 훑습니다
    scan_occupied = (2 * rings + 1) ** 2 > len(keys)

    ring = range(-rings, rings + 1)
    neighbors: list[np.ndarray] = [None] * len(positions)
    for (bx, by), own in members_arr.items():
        if scan_occupied:
            near = np.all(np.abs(keys - (bx, by)) <= rings, axis=1)
            parts = [members_arr[(int(kx), int(ky))] for kx, ky in keys[near]]
        else:
            parts = [
                members_arr[(bx + dx, by + dy)]
                for dx in ring
                for dy in ring
                if (bx + dx, by + dy) in members_arr
            ]
        candidates = np.concatenate(parts)
        diff = positions[own][:, None, :] - positions[candidates][None, :, :]
        close = np.einsum("ijk,ijk->ij", diff, diff) <= radius * radius
        for row, idx in enumerate(own):
            neighbors[idx] = candidates[close[row]]
    return neighbors


def bfs_cluster(shifted: ShiftedBev, radius: float = DEFAULT_RADIUS) -> np.ndarray:
    """
    ‖C_f[a] − C_f[b]‖₂ ≤ r 인 셀을 잇는 그래프의 connected component 를 구합니다.

    seed 는 점유 셀 row-major 순서로 방문하므로 각 cluster id 는
    cluster 에 포함된 가장 앞선 셀 순서로 정해집니다 (방문 순서와 무관하게 결정적).

    Parameters:
        shifted (ShiftedBev): 점유 셀별 C_f
        radius (float): 클러스터링 반경 r (m)

    Returns:
        np.ndarray: (n,) int64 cluster id, 1..num_clusters

    Raises:
        ValueError: radius <= 0
    """
    if not radius > 0:
        raise ValueError(f"clustering radius must be positive, got {radius}")
    n = len(shifted)
    labels = np.zeros(n, dtype=np.int64)
    if n == 0:
        return labels

    # C_f 를 다시 binning (격자 크기 단위)
    origin = np.asarray(shifted.origin, dtype=np.float64)
    bins = np.floor((shifted.positions - origin) / shifted.cell_size).astype(np.int64)
    rings = int(np.ceil(radius / shifted.cell_size)) + 1
    neighbors = _neighbor_lists(shifted.positions, bins, rings, radius)

    order = np.lexsort((shifted.cells[:, 1], shifted.cells[:, 0]))
    next_id = 0
    for seed in order.tolist():
        if labels[seed]:
            continue
        next_id += 1
        labels[seed] = next_id
        queue = deque([seed])
        while queue:
            current = queue.popleft()
            for nb in neighbors[current].tolist():
                if not labels[nb]:
                    labels[nb] = next_id
                    queue.append(nb)
    return labels


def partition_signature(labels: np.ndarray) -> np.ndarray:
    """id 이름과 무관한 비교용 정규화: 첫 등장 순서대로 1부터 다시 번호를 매깁니다 (0 은 유지)."""
    out = np.zeros_like(labels)
    mapping: dict[int, int] = {}
    for i, value in enumerate(labels.tolist()):
        if value == 0:
            continue
        if value not in mapping:
            mapping[value] = len(mapping) + 1
        out[i] = mapping[value]
    return out


def backmap(cluster_ids: np.ndarray, grid: BevGrid, image: RangeImage) -> np.ndarray:
    """
    셀 cluster id 를 H_i 로 range image 에 되돌린 뒤 원래 포인트로 옮깁니다.

    Parameters:
        cluster_ids (np.ndarray): (n,) 점유 셀별 id
        grid (BevGrid): H_i 를 가진 BEV grid
        image (RangeImage): 포인트↔픽셀 대응

    Returns:
        np.ndarray: (N,) 포인트별 instance id, foreground 가 아닌 포인트는 0
    """
    if cluster_ids.shape[0] != grid.num_occupied:
        raise ValueError(f"{cluster_ids.shape[0]} cluster ids for {grid.num_occupied} occupied cells")
    pixel_ids = np.zeros(image.height * image.width, dtype=np.int64)
    for cid, members in zip(cluster_ids.tolist(), grid.cell_members):
        pixel_ids[members] = cid
    return unproject_labels(image, pixel_ids.reshape(image.shape))


def fuse_majority(
    semantic: np.ndarray, instance: np.ndarray, taxonomy: ClassTaxonomy
) -> tuple[np.ndarray, np.ndarray]:
    """
    instance 내부 semantic 을 최빈 클래스로 통일합니다 (majority voting).

    최빈 클래스 동률은 작은 class id 로 정하고, 최빈 클래스가 thing 이 아니면
    해당 instance 를 해체합니다 (id 0, semantic 유지).

    Parameters:
        semantic (np.ndarray): (N,) 예측 semantic
        instance (np.ndarray): (N,) instance id
        taxonomy (ClassTaxonomy): thing 정의

    Returns:
        tuple[np.ndarray, np.ndarray]: (semantic, instance) 새 배열
    """
    if semantic.shape != instance.shape:
        raise ValueError(f"semantic {semantic.shape} and instance {instance.shape} lengths differ")
    semantic = semantic.astype(np.int64, copy=True)
    instance = instance.astype(np.int64, copy=True)

    grouped = np.flatnonzero(instance > 0)
    if not grouped.size:
        return semantic, instance
    ids, inverse = np.unique(instance[grouped], return_inverse=True)
    sem = semantic[grouped]
    n_cls = int(sem.max()) + 1
    counts = np.bincount(inverse * n_cls + sem, minlength=ids.size * n_cls).reshape(ids.size, n_cls)
    # argmax 는 동률에서 작은 class id
    majority = counts.argmax(axis=1)
    keep = taxonomy.thing_mask(majority)

    semantic[grouped] = np.where(keep[inverse], majority[inverse], sem)
    instance[grouped] = np.where(keep[inverse], instance[grouped], 0)
    dissolved = int((~keep).sum())
    if dissolved:
        logger.debug("dissolved %d instances with non-thing majority", dissolved)
    return semantic, instance
