"""
Foreground 마스킹, center offset 이동, sparse BEV grid 투영.

range image 에서 thing 픽셀만 남기고 (P_th), 예측 offset 으로 객체 중심 쪽으로 옮긴 뒤 (P_s),
이동된 x, y 를 격자로 이산화해 occupancy O, 평균 좌표 C_bev,
특징 테이블 H_f, range image 인덱스 테이블 H_i 를 만듭니다.
"""
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from utils.errors import DimensionError
from utils.range_view import RangeImage
from utils.scan_io import ClassTaxonomy

logger = logging.getLogger(__name__)

# 기본 BEV 범위 ±50 m
DEFAULT_EXTENT = (-50.0, 50.0, -50.0, 50.0)
OFFSET_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class ForegroundSet:
    """
    foreground 픽셀 M 개 (row-major 순서).

    Attributes:
        original (np.ndarray): (M, 2) 원래 x, y (m)
        shifted (np.ndarray): (M, 2) offset 적용 후 x, y (m)
        pixels (np.ndarray): (M, 2) int64 (row, col)
        features (np.ndarray): (M, C_i) 원본 range image 특징
        image_width (int): 평탄화 인덱스 계산용 W
    """
    original: np.ndarray
    shifted: np.ndarray
    pixels: np.ndarray
    features: np.ndarray
    image_width: int

    def __len__(self) -> int:
        return int(self.original.shape[0])

    @property
    def flat_index(self) -> np.ndarray:
        """range image 평탄화 인덱스 (row * W + col)"""
        return self.pixels[:, 0] * self.image_width + self.pixels[:, 1]


@dataclass(frozen=True, eq=False)
class BevGrid:
    """
    sparse BEV grid. 행은 x, 열은 y 축을 이산화합니다.

    Attributes:
        cell_size (float): 격자 크기 (m)
        extent (tuple[float, float, float, float]): (x_min, x_max, y_min, y_max)
        occupancy (np.ndarray): (h, w) bool, O
        coords (np.ndarray): (h, w, 2) 점유 셀의 평균 shifted 좌표 C_bev (비점유 셀 0)
        cells (np.ndarray): (n, 2) int64 점유 셀 (row, col), row-major 정렬
        cell_features (np.ndarray): (n, C) 점유 셀별 평균 특징
        cell_members (tuple[np.ndarray, ...]): 점유 셀별 기여 range image 인덱스 (오름차순)
        clamped (int): 범위를 벗어나 경계 셀로 clamp 된 포인트 수
    """
    cell_size: float
    extent: tuple[float, float, float, float]
    occupancy: np.ndarray
    coords: np.ndarray
    cells: np.ndarray
    cell_features: np.ndarray
    cell_members: tuple[np.ndarray, ...]
    clamped: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.occupancy.shape[0]), int(self.occupancy.shape[1]))

    @property
    def num_occupied(self) -> int:
        return int(self.cells.shape[0])

    @property
    def cell_coords(self) -> np.ndarray:
        """(n, 2) 점유 셀 순서의 C_bev"""
        return self.coords[self.cells[:, 0], self.cells[:, 1]]

    @property
    def feature_table(self) -> dict[tuple[int, int], np.ndarray]:
        """H_f: 점유 셀 → 평균 특징"""
        return {(int(r), int(c)): f for (r, c), f in zip(self.cells, self.cell_features)}

    @property
    def index_table(self) -> dict[tuple[int, int], np.ndarray]:
        """H_i: 점유 셀 → 기여 range image 인덱스"""
        return {(int(r), int(c)): m for (r, c), m in zip(self.cells, self.cell_members)}


def grid_shape(cell_size: float, extent: tuple[float, float, float, float]) -> tuple[int, int]:
    """범위와 격자 크기로 (h, w) 를 계산합니다."""
    x_min, x_max, y_min, y_max = extent
    h = max(1, int(np.ceil((x_max - x_min) / cell_size - 1e-9)))
    w = max(1, int(np.ceil((y_max - y_min) / cell_size - 1e-9)))
    return h, w


def foreground_mask(semantic_map: np.ndarray, taxonomy: ClassTaxonomy) -> np.ndarray:
    """
    thing 클래스 픽셀 마스크.

    학습 시에는 GT semantic, 테스트 시에는 예측 semantic 을 넣습니다 (출처 무관).

    Parameters:
        semantic_map (np.ndarray): (H, W) semantic id
        taxonomy (ClassTaxonomy): thing/stuff 정의

    Returns:
        np.ndarray: (H, W) bool
    """
    return taxonomy.thing_mask(semantic_map)


def gather_foreground(image: RangeImage, mask: np.ndarray) -> ForegroundSet:
    """유효하면서 mask 가 True 인 픽셀을 row-major 순서로 모읍니다 (shifted = original)."""
    if mask.shape != image.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match image {image.shape}")
    rows, cols = np.nonzero(mask & image.mask)
    original = image.features[rows, cols, :2].copy()
    return ForegroundSet(
        original=original,
        shifted=original.copy(),
        pixels=np.stack([rows, cols], axis=1).astype(np.int64),
        features=image.features[rows, cols].copy(),
        image_width=image.width,
    )


def shift_points(foreground: ForegroundSet, offsets: np.ndarray) -> ForegroundSet:
    """
    shifted = original + offset[source pixel].

    Parameters:
        foreground (ForegroundSet): 이동 전 foreground
        offsets (np.ndarray): (H, W, 2) 예측 (Δx, Δy)

    Returns:
        ForegroundSet: shifted 가 갱신된 새 ForegroundSet
    """
    if offsets.ndim != 3 or offsets.shape[2] != 2:
        raise DimensionError(f"offset map must be (H, W, 2), got {offsets.shape}")
    rows, cols = foreground.pixels[:, 0], foreground.pixels[:, 1]
    if len(foreground) and (rows.max() >= offsets.shape[0] or cols.max() >= offsets.shape[1]):
        raise DimensionError(f"foreground pixels fall outside offset map {offsets.shape[:2]}")
    shifted = foreground.original + offsets[rows, cols].astype(np.float64)
    return replace(foreground, shifted=shifted)


def bev_project(
    foreground: ForegroundSet,
    cell_size: float,
    extent: tuple[float, float, float, float] = DEFAULT_EXTENT,
) -> BevGrid:
    """
    이동된 foreground 를 sparse BEV grid 로 투영합니다.

    같은 셀에 여러 포인트가 들어오면 좌표와 특징을 산술 평균하고,
    범위를 벗어난 포인트는 버리지 않고 경계 셀로 clamp 합니다.

    Parameters:
        foreground (ForegroundSet): 이동된 foreground
        cell_size (float): 격자 크기 (m)
        extent (tuple): (x_min, x_max, y_min, y_max)

    Returns:
        BevGrid: occupancy, C_bev, H_f, H_i

    Raises:
        ValueError: cell_size <= 0 또는 유한하지 않은 extent
    """
    if not cell_size > 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    if not np.isfinite(extent).all() or extent[0] >= extent[1] or extent[2] >= extent[3]:
        raise ValueError(f"invalid BEV extent {extent}")

    h, w = grid_shape(cell_size, extent)
    n_feat = foreground.features.shape[1] if foreground.features.ndim == 2 else 0
    occupancy = np.zeros((h, w), dtype=bool)
    coords = np.zeros((h, w, 2), dtype=np.float64)

    if len(foreground) == 0:
        return BevGrid(
            cell_size=cell_size,
            extent=tuple(extent),
            occupancy=occupancy,
            coords=coords,
            cells=np.zeros((0, 2), dtype=np.int64),
            cell_features=np.zeros((0, n_feat)),
            cell_members=(),
        )

    origin = np.array([extent[0], extent[2]])
    raw = np.floor((foreground.shifted - origin) / cell_size).astype(np.int64)
    index = np.clip(raw, 0, [h - 1, w - 1])
    clamped = int((raw != index).any(axis=1).sum())
    if clamped:
        logger.debug("clamped %d foreground points into border BEV cells", clamped)

    flat = index[:, 0] * w + index[:, 1]
    occupied, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    n = occupied.size

    mean_xy = np.stack(
        [np.bincount(inverse, weights=foreground.shifted[:, k], minlength=n) for k in range(2)], axis=1
    ) / counts[:, None]
    mean_feat = np.stack(
        [np.bincount(inverse, weights=foreground.features[:, k], minlength=n) for k in range(n_feat)],
        axis=1,
    ).reshape(n, n_feat) / counts[:, None]

    cells = np.stack([occupied // w, occupied % w], axis=1).astype(np.int64)
    occupancy[cells[:, 0], cells[:, 1]] = True
    coords[cells[:, 0], cells[:, 1]] = mean_xy

    # H_i: 셀별 기여 인덱스 (range image 평탄화 인덱스, 오름차순)
    source = foreground.flat_index
    order = np.lexsort((source, inverse))
    splits = np.cumsum(counts)[:-1]
    members = tuple(np.split(source[order], splits))

    return BevGrid(
        cell_size=cell_size,
        extent=tuple(extent),
        occupancy=occupancy,
        coords=coords,
        cells=cells,
        cell_features=mean_feat,
        cell_members=members,
        clamped=clamped,
    )


def load_offsets(file_path: str | os.PathLike, height: int, width: int) -> np.ndarray:
    """
    instance decoder 출력을 대신하는 (H, W, 2) float32 row-major offset 파일을 로드합니다.

    Raises:
        FileNotFoundError: 파일이 없는 경우
        DimensionError: 크기가 H·W·2 float32 와 다른 경우
    """
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"Offset file not found: {path}")
    data = path.read_bytes()
    expected = height * width * 2 * OFFSET_DTYPE.itemsize
    if len(data) != expected:
        raise DimensionError(f"{path}: expected {expected} bytes for {height}x{width}x2, got {len(data)}")
    return np.frombuffer(data, dtype=OFFSET_DTYPE).reshape(height, width, 2).astype(np.float64)


def save_offsets(file_path: str | os.PathLike, offsets: np.ndarray) -> None:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(offsets, dtype=OFFSET_DTYPE).tobytes())
