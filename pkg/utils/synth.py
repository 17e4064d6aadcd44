"""
시드 고정 합성 장면 생성기.

지면(stuff) 위에 원판 모양 thing instance 를 최소 간격을 지키며 배치하고,
GT centroid 와 oracle offset 을 함께 제공합니다. 난수 생성기는 플랫폼 기본값이 아닌
numpy PCG64 로 고정합니다.
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from utils.errors import PackingError
from utils.range_view import RangeImage, spherical_project
from utils.scan_io import ClassTaxonomy, PointCloud, PointLabels, write_label_file, write_scan_file

logger = logging.getLogger(__name__)

# 고정 RNG 알고리즘 (numpy.random.PCG64, seed 는 SceneSpec.seed)
RNG_ALGORITHM = "PCG64"
# SemanticKITTI 학습 id 기준 기본 클래스
DEFAULT_THING_CLASSES = (1, 2, 3, 4, 5, 6, 7, 8)
ROAD_CLASS = 9
# 지면으로 쓸 stuff 클래스 이름 (우선순위 순)
GROUND_NAMES = ("road", "driveable_surface")


def scene_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def taxonomy_classes(taxonomy: ClassTaxonomy) -> tuple[tuple[int, ...], int]:
    """taxonomy 에서 (thing 클래스, 지면 클래스) 를 고릅니다. 지면은 이름으로 찾고 없으면 가장 작은 stuff id."""
    ground = next(
        (taxonomy.class_names.index(name) for name in GROUND_NAMES if name in taxonomy.class_names),
        min(taxonomy.stuff, default=0),
    )
    return tuple(sorted(taxonomy.things)), ground


@dataclass(frozen=True)
class SceneSpec:
    """
    합성 장면 설정.

    Attributes:
        seed (int): RNG seed
        num_instances (int): thing instance 수
        points_per_instance (tuple[int, int]): instance 별 포인트 수 범위 (양 끝 포함)
        radius_range (tuple[float, float]): instance 반경 ρ 범위 (m)
        min_separation (float): centroid 간 최소 거리 (m)
        ground_points (int): 지면 포인트 수
        extent (tuple[float, float, float, float]): 배치 범위 (x_min, x_max, y_min, y_max)
        min_range (float): 센서로부터 instance 중심의 최소 거리 (m)
        thing_classes (tuple[int, ...]): instance 에 부여할 semantic id 후보
        ground_class (int): 지면 semantic id
        sensor_height (float): 센서 높이 (지면 z = -sensor_height)
        height, width (int): 중복 픽셀 제거에 쓰는 range image 크기
        fov_up, fov_down (float): 수직 FOV (degree)
        max_retries (int): instance 하나를 배치하는 최대 시도 횟수
    """
    seed: int = 0
    num_instances: int = 10
    points_per_instance: tuple[int, int] = (30, 120)
    radius_range: tuple[float, float] = (0.5, 1.5)
    min_separation: float = 4.0
    ground_points: int = 2000
    extent: tuple[float, float, float, float] = (-30.0, 30.0, -30.0, 30.0)
    min_range: float = 5.0
    thing_classes: tuple[int, ...] = DEFAULT_THING_CLASSES
    ground_class: int = ROAD_CLASS
    sensor_height: float = 1.73
    height: int = 64
    width: int = 2048
    fov_up: float = 3.0
    fov_down: float = -25.0
    max_retries: int = 1000

    def __post_init__(self):
        lo, hi = self.points_per_instance
        if self.num_instances < 0 or self.ground_points < 0 or lo < 1 or hi < lo:
            raise ValueError(
                f"invalid counts: instances={self.num_instances}, ground={self.ground_points}, "
                f"points_per_instance={self.points_per_instance}"
            )
        r_lo, r_hi = self.radius_range
        if not 0 < r_lo <= r_hi:
            raise ValueError(f"invalid radius range {self.radius_range}")
        if self.min_separation < 0:
            raise ValueError(f"min_separation must be >= 0, got {self.min_separation}")
        if self.num_instances and not self.thing_classes:
            raise ValueError("thing_classes must not be empty when instances are requested")
        if self.extent[0] >= self.extent[1] or self.extent[2] >= self.extent[3]:
            raise ValueError(f"invalid extent {self.extent}")


def _place_centers(spec: SceneSpec, radii: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    배치 중심 c0 를 rejection sampling 으로 뽑습니다.

    ‖c0_a − c0_b‖ ≥ min_separation + (ρ_a + ρ_b)/2 를 요구하므로, 포인트를 c0 기준
    반경 ρ/2 원판에서 뽑으면 최종 centroid 간 거리도 min_separation 이상이 됩니다.
    """
    x_min, x_max, y_min, y_max = spec.extent
    centers = np.zeros((len(radii), 2))
    for k, rho in enumerate(radii):
        for _ in range(spec.max_retries):
            candidate = rng.uniform([x_min, y_min], [x_max, y_max])
            if np.hypot(*candidate) < spec.min_range:
                continue
            gaps = np.linalg.norm(centers[:k] - candidate, axis=1)
            if np.all(gaps >= spec.min_separation + (radii[:k] + rho) / 2.0):
                centers[k] = candidate
                break
        else:
            raise PackingError(
                f"could not place instance {k + 1}/{len(radii)} at separation {spec.min_separation} m "
                f"within extent {spec.extent} after {spec.max_retries} attempts"
            )
    return centers


def _sample_disk(center: np.ndarray, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return center + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def instance_centroids(cloud: PointCloud, labels: PointLabels) -> dict[int, np.ndarray]:
    """
    instance id → 포인트 xy 평균 (float64).

    Parameters:
        cloud (PointCloud): 스캔
        labels (PointLabels): instance 라벨 (0 제외)

    Returns:
        dict[int, np.ndarray]: instance id 오름차순
    """
    xy = cloud.xyz[:, :2].astype(np.float64)
    return {
        int(inst): xy[labels.instance == inst].mean(axis=0)
        for inst in np.unique(labels.instance[labels.instance > 0])
    }


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, PointLabels, dict[int, np.ndarray]]:
    """
    합성 장면을 생성합니다.

    instance 포인트를 먼저, 지면 포인트를 나중에 두고 range image 에서 같은 픽셀에
    떨어지는 포인트는 처음 것만 남깁니다. 따라서 모든 포인트가 자기 픽셀을 가지며
    range view 로 GT 를 손실 없이 표현할 수 있습니다.

    Parameters:
        spec (SceneSpec): 장면 설정

    Returns:
        tuple: (PointCloud, PointLabels, instance id → centroid xy)

    Raises:
        PackingError: 최소 간격으로 instance 를 배치하지 못한 경우
    """
    rng = scene_rng(spec.seed)
    n_inst = spec.num_instances
    radii = rng.uniform(*spec.radius_range, size=n_inst)
    counts = rng.integers(spec.points_per_instance[0], spec.points_per_instance[1] + 1, size=n_inst)
    classes = rng.choice(np.asarray(spec.thing_classes, dtype=np.int64), size=n_inst) if n_inst else []
    centers = _place_centers(spec, radii, rng)

    ground_z = -spec.sensor_height
    blocks, semantic, instance = [], [], []
    for k in range(n_inst):
        xy = _sample_disk(centers[k], radii[k] / 2.0, int(counts[k]), rng)
        z = ground_z + rng.uniform(0.2, 1.6, size=len(xy))
        blocks.append(np.column_stack([xy, z, rng.random(len(xy))]))
        semantic.append(np.full(len(xy), classes[k], dtype=np.int64))
        instance.append(np.full(len(xy), k + 1, dtype=np.int64))

    x_min, x_max, y_min, y_max = spec.extent
    ground_xy = rng.uniform([x_min, y_min], [x_max, y_max], size=(spec.ground_points, 2))
    blocks.append(np.column_stack([
        ground_xy, np.full(spec.ground_points, ground_z), rng.random(spec.ground_points),
    ]))
    semantic.append(np.full(spec.ground_points, spec.ground_class, dtype=np.int64))
    instance.append(np.zeros(spec.ground_points, dtype=np.int64))

    points = np.concatenate(blocks).astype(np.float32)
    semantic = np.concatenate(semantic)
    instance = np.concatenate(instance)

    # 픽셀 중복 제거 (앞선 포인트 우선)
    pixels = spherical_project(PointCloud(points), spec.height, spec.width, spec.fov_up, spec.fov_down).pixel_index()
    valid = np.flatnonzero(pixels >= 0)
    _, first = np.unique(pixels[valid], return_index=True)
    keep = np.sort(valid[first])
    dropped = len(points) - keep.size
    if dropped:
        logger.debug("seed %d: dropped %d points sharing a range-image pixel", spec.seed, dropped)

    cloud = PointCloud(points[keep])
    labels = PointLabels(semantic[keep], instance[keep])
    return cloud, labels, instance_centroids(cloud, labels)


def oracle_offsets(
    cloud: PointCloud,
    labels: PointLabels,
    centroids: dict[int, np.ndarray],
    image: RangeImage,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """
    이상적인 instance decoder 출력: foreground 픽셀 offset = centroid − 포인트 xy.

    Parameters:
        cloud (PointCloud): 투영한 스캔
        labels (PointLabels): GT 라벨
        centroids (dict[int, np.ndarray]): instance id → centroid
        image (RangeImage): cloud 의 투영 결과
        sigma (float): 등방성 Gaussian noise 표준편차 (m)
        rng (np.random.Generator | None): noise 용 RNG (None 이면 PCG64(0))

    Returns:
        np.ndarray: (H, W, 2) float64 offset, instance 가 없는 픽셀은 0
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if len(labels) != cloud.count or image.num_points != cloud.count:
        raise ValueError("cloud, labels and image must describe the same points")

    offsets = np.zeros((image.height, image.width, 2), dtype=np.float64)
    rows, cols = np.nonzero(image.mask)
    winners = image.winner[rows, cols]
    inst = labels.instance[winners]
    known = np.array([i in centroids for i in inst.tolist()], dtype=bool) & (inst > 0)
    rows, cols, winners, inst = rows[known], cols[known], winners[known], inst[known]
    if not inst.size:
        return offsets

    target = np.stack([centroids[i] for i in inst.tolist()])
    offsets[rows, cols] = target - cloud.xyz[winners, :2].astype(np.float64)
    if sigma > 0:
        rng = rng if rng is not None else scene_rng(0)
        offsets[rows, cols] += rng.normal(0.0, sigma, size=(inst.size, 2))
    return offsets


def write_scene(root: str | os.PathLike, name: str, cloud: PointCloud, labels: PointLabels) -> tuple[Path, Path]:
    """
    장면을 `<root>/velodyne/<name>.bin`, `<root>/labels/<name>.label` 로 저장합니다.

    Returns:
        tuple[Path, Path]: (scan 경로, label 경로)
    """
    root = Path(root)
    scan_path = root / "velodyne" / f"{name}.bin"
    label_path = root / "labels" / f"{name}.label"
    write_scan_file(scan_path, cloud)
    write_label_file(label_path, labels)
    return scan_path, label_path
