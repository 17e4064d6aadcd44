"""
구면 투영 기반 range image 생성과 포인트↔픽셀 대응 관리.

열(column)은 azimuth atan2(y, x), 행(row)은 elevation asin(z / depth)을
수직 FOV 안에서 선형으로 스케일해 결정합니다. 한 픽셀에 여러 포인트가 들어오면
depth 가 가장 작은 포인트(동률이면 작은 인덱스)가 픽셀을 차지합니다.
"""
import logging
from dataclasses import dataclass

import numpy as np

from utils.errors import DimensionError
from utils.scan_io import PointCloud

logger = logging.getLogger(__name__)

# 특징 채널 순서 (C_i = 5)
FEATURE_CHANNELS = ("x", "y", "z", "remission", "depth")
# CLSA 좌표 특징 채널 순서 c_u
COORD_CHANNELS = ("x", "y", "z", "depth", "occupancy")

# 해상도 프리셋 (H, W)
RESOLUTION_PRESETS = {
    "semantic-kitti": (64, 2048),
    "nuscenes": (32, 1024),
}


@dataclass(frozen=True, eq=False)
class RangeImage:
    """
    투영된 range image P_RV 와 포인트↔픽셀 대응.

    Attributes:
        features (np.ndarray): (H, W, 5) float64, 채널 x, y, z, remission, depth; 빈 픽셀은 0
        mask (np.ndarray): (H, W) bool, 포인트가 1개 이상 들어온 픽셀
        winner (np.ndarray): (H, W) int64, 픽셀을 차지한 포인트 인덱스 (빈 픽셀 -1)
        point_rows (np.ndarray): (N,) int64, 각 포인트의 행
        point_cols (np.ndarray): (N,) int64, 각 포인트의 열
        point_valid (np.ndarray): (N,) bool, 투영된 포인트 여부 (zero-range 포인트는 False)
        skipped (int): zero-range 로 건너뛴 포인트 수
    """
    features: np.ndarray
    mask: np.ndarray
    winner: np.ndarray
    point_rows: np.ndarray
    point_cols: np.ndarray
    point_valid: np.ndarray
    skipped: int = 0

    @property
    def height(self) -> int:
        return int(self.mask.shape[0])

    @property
    def width(self) -> int:
        return int(self.mask.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def num_points(self) -> int:
        return int(self.point_rows.shape[0])

    def pixel_index(self) -> np.ndarray:
        """포인트별 평탄화된 픽셀 인덱스 (row * W + col), 건너뛴 포인트는 -1"""
        flat = self.point_rows * self.width + self.point_cols
        return np.where(self.point_valid, flat, -1)


def spherical_project(
    cloud: PointCloud,
    height: int,
    width: int,
    fov_up: float,
    fov_down: float,
) -> RangeImage:
    """
    포인트 클라우드를 H×W range image 로 구면 투영합니다.

    Parameters:
        cloud (PointCloud): 입력 스캔
        height (int): 행 수 H
        width (int): 열 수 W
        fov_up (float): 수직 FOV 상한 (degree)
        fov_down (float): 수직 FOV 하한 (degree)

    Returns:
        RangeImage: 투영 결과

    Raises:
        ValueError: H, W < 1 이거나 fov_down >= fov_up 인 경우
    """
    if height < 1 or width < 1:
        raise ValueError(f"range image size must be positive, got {height}x{width}")
    if not fov_down < fov_up:
        raise ValueError(f"fov_down ({fov_down}) must be below fov_up ({fov_up})")

    xyz = cloud.xyz.astype(np.float64)
    n = xyz.shape[0]
    depth = np.linalg.norm(xyz, axis=1)
    valid = depth > 0
    skipped = int(n - valid.sum())
    if skipped:
        logger.debug("skipped %d zero-range points", skipped)

    fov_up_rad = np.deg2rad(fov_up)
    fov_down_rad = np.deg2rad(fov_down)
    fov = fov_up_rad - fov_down_rad

    safe_depth = np.where(valid, depth, 1.0)
    yaw = np.arctan2(xyz[:, 1], xyz[:, 0])
    pitch = np.arcsin(np.clip(xyz[:, 2] / safe_depth, -1.0, 1.0))

    # azimuth → 열, elevation → 행 (위쪽이 0행)
    cols = np.floor(width * (1.0 - (yaw / np.pi + 1.0) / 2.0)).astype(np.int64) % width
    rows = np.floor(height * (1.0 - (pitch - fov_down_rad) / fov)).astype(np.int64)
    rows = np.clip(rows, 0, height - 1)
    rows = np.where(valid, rows, 0)
    cols = np.where(valid, cols, 0)

    features = np.zeros((height, width, len(FEATURE_CHANNELS)), dtype=np.float64)
    winner = np.full((height, width), -1, dtype=np.int64)

    idx = np.flatnonzero(valid)
    if idx.size:
        # depth 오름차순, 동률이면 인덱스 오름차순으로 정렬 후 픽셀별 첫 포인트 선택
        order = idx[np.lexsort((idx, depth[idx]))]
        flat = rows[order] * width + cols[order]
        _, first = np.unique(flat, return_index=True)
        chosen = order[first]
        r, c = rows[chosen], cols[chosen]
        winner[r, c] = chosen
        features[r, c, :3] = xyz[chosen]
        features[r, c, 3] = cloud.remission[chosen]
        features[r, c, 4] = depth[chosen]

    return RangeImage(
        features=features,
        mask=winner >= 0,
        winner=winner,
        point_rows=rows,
        point_cols=cols,
        point_valid=valid,
        skipped=skipped,
    )


def coord_features(image: RangeImage) -> np.ndarray:
    """
    CLSA 입력 좌표 특징 c_u = (x, y, z, depth, occupancy) 를 만듭니다.

    Returns:
        np.ndarray: (H, W, 5) float64, 빈 픽셀은 모두 0
    """
    coords = np.zeros(image.shape + (len(COORD_CHANNELS),), dtype=np.float64)
    coords[..., :3] = image.features[..., :3]
    coords[..., 3] = image.features[..., 4]
    coords[..., 4] = image.mask.astype(np.float64)
    return coords


def project_labels(image: RangeImage, labels: np.ndarray, fill: int = 0) -> np.ndarray:
    """
    포인트별 라벨을 픽셀 라벨 맵으로 옮깁니다 (픽셀을 차지한 포인트의 라벨).

    Parameters:
        image (RangeImage): 투영 결과
        labels (np.ndarray): (N,) 포인트별 라벨
        fill (int): 빈 픽셀 값

    Returns:
        np.ndarray: (H, W) 라벨 맵
    """
    if labels.shape[0] != image.num_points:
        raise DimensionError(f"expected {image.num_points} labels, got {labels.shape[0]}")
    label_map = np.full(image.shape, fill, dtype=labels.dtype)
    label_map[image.mask] = labels[image.winner[image.mask]]
    return label_map


def unproject_labels(image: RangeImage, label_map: np.ndarray, fill: int = 0) -> np.ndarray:
    """
    픽셀 라벨 맵을 원래 포인트로 되돌립니다.

    가려진(픽셀을 차지하지 못한) 포인트도 자신의 픽셀 라벨을 받고,
    투영에서 건너뛴 포인트는 fill 값을 받습니다.

    Parameters:
        image (RangeImage): 투영 결과
        label_map (np.ndarray): (H, W) 픽셀 라벨
        fill (int): 건너뛴 포인트에 줄 값 (unlabeled)

    Returns:
        np.ndarray: (N,) 포인트별 라벨

    Raises:
        DimensionError: label_map shape 이 (H, W) 가 아닌 경우
    """
    if label_map.shape[:2] != image.shape or label_map.ndim != 2:
        raise DimensionError(f"label map shape {label_map.shape} does not match image {image.shape}")
    out = label_map[image.point_rows, image.point_cols].copy()
    out[~image.point_valid] = fill
    return out
