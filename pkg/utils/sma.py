"""
Sparse Multi-directional Attention (SMA).

점유 셀마다 W/E/N/S/C 다섯 방향 window 의 center of mass 를 구하고,
셀 특징 H_f 에서 나온 softmax attention 으로 섞어 최종 위치 C_f 를 만듭니다.
"""
from dataclasses import dataclass

import numpy as np

from utils.bev import BevGrid
from utils.errors import DimensionError
from utils.mlp import Mlp, softmax

DIRECTIONS = ("W", "E", "N", "S", "C")
DEFAULT_KERNEL = 7


def direction_windows(k: int) -> dict[str, list[tuple[int, int]]]:
    """방향별 sampling window Ω (행 offset, 열 offset). Ω_C 는 자기 자신만 포함합니다."""
    if k < 1:
        raise ValueError(f"SMA kernel size must be >= 1, got {k}")
    return {
        "W": [(0, i) for i in range(-k, 1)],
        "E": [(0, i) for i in range(0, k + 1)],
        "N": [(i, 0) for i in range(-k, 1)],
        "S": [(i, 0) for i in range(0, k + 1)],
        "C": [(0, 0)],
    }


@dataclass(frozen=True, eq=False)
class DirectionalComs:
    """
    점유 셀별 방향 center of mass.

    Attributes:
        cells (np.ndarray): (n, 2) 점유 셀 (BevGrid.cells 와 같은 순서)
        coms (np.ndarray): (n, 5, 2) DIRECTIONS 순서의 COM, C_all 의 전치
        counts (np.ndarray): (n, 5) 정규화 계수 n_u
        kernel (int): window 크기 K
    """
    cells: np.ndarray
    coms: np.ndarray
    counts: np.ndarray
    kernel: int

    def direction(self, name: str) -> np.ndarray:
        return self.coms[:, DIRECTIONS.index(name)]


@dataclass(frozen=True, eq=False)
class SmaMlp:
    """H_f 특징 → 5개 logit 을 만드는 2-layer MLP"""
    mlp: Mlp

    def __post_init__(self):
        if self.mlp.out_dim != len(DIRECTIONS):
            raise DimensionError(f"SMA MLP must output {len(DIRECTIONS)} logits, got {self.mlp.out_dim}")

    @staticmethod
    def dims(n_features: int, hidden: int = 16) -> tuple[int, ...]:
        return (n_features, hidden, len(DIRECTIONS))

    @classmethod
    def zeros(cls, n_features: int, hidden: int = 16) -> "SmaMlp":
        return cls(Mlp.zeros(cls.dims(n_features, hidden)))

    @classmethod
    def random(cls, n_features: int, rng: np.random.Generator, hidden: int = 16) -> "SmaMlp":
        return cls(Mlp.random(cls.dims(n_features, hidden), rng))

    def attention(self, features: np.ndarray) -> np.ndarray:
        """(n, C) 특징 → (n, 5) softmax attention π"""
        if features.shape[0] == 0:
            return np.zeros((0, len(DIRECTIONS)))
        return softmax(self.mlp(features), axis=1)


@dataclass(frozen=True, eq=False)
class ShiftedBev:
    """
    점유 셀별 최종 위치 C_f.

    Attributes:
        cells (np.ndarray): (n, 2) 점유 셀, BevGrid.cells 와 같은 순서
        positions (np.ndarray): (n, 2) C_f (m)
        cell_size (float): BEV 격자 크기 (재-binning 에 사용)
        origin (tuple[float, float]): BEV grid 원점 (x_min, y_min)
        attention (np.ndarray | None): (n, 5) SMA attention, identity_shift 이면 None
    """
    cells: np.ndarray
    positions: np.ndarray
    cell_size: float
    origin: tuple[float, float]
    attention: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.cells.shape[0])


def directional_coms(grid: BevGrid, k: int = DEFAULT_KERNEL) -> DirectionalComs:
    """
    점유 셀마다 다섯 방향 window 의 center of mass 를 계산합니다.

    C_dir[u] = (1/n_u) Σ_{i∈Ω_dir} C_bev[u+i]·O[u+i]. grid 밖 offset 은 무시합니다.

    Parameters:
        grid (BevGrid): BEV grid
        k (int): window 크기 K

    Returns:
        DirectionalComs: (n, 5, 2) COM 과 (n, 5) 정규화 계수
    """
    windows = direction_windows(k)
    h, w = grid.shape
    rows, cols = grid.cells[:, 0], grid.cells[:, 1]
    n = grid.num_occupied
    sums = np.zeros((n, len(DIRECTIONS), 2))
    counts = np.zeros((n, len(DIRECTIONS)))

    for d, name in enumerate(DIRECTIONS):
        for di, dj in windows[name]:
            r, c = rows + di, cols + dj
            inside = (r >= 0) & (r < h) & (c >= 0) & (c < w)
            r, c = np.where(inside, r, 0), np.where(inside, c, 0)
            weight = (grid.occupancy[r, c] & inside).astype(np.float64)
            sums[:, d] += grid.coords[r, c] * weight[:, None]
            counts[:, d] += weight

    # 셀 자신이 모든 window 에 포함되므로 counts >= 1
    coms = sums / np.maximum(counts, 1.0)[..., None]
    return DirectionalComs(cells=grid.cells.copy(), coms=coms, counts=counts, kernel=k)


def sma_apply(grid: BevGrid, coms: DirectionalComs, sma_mlp: SmaMlp) -> ShiftedBev:
    """
    C_f[u] = C_all[u] · softmax(MLP(H_f[u])).

    Parameters:
        grid (BevGrid): H_f 를 제공하는 BEV grid
        coms (DirectionalComs): 같은 grid 에서 계산한 COM
        sma_mlp (SmaMlp): attention MLP

    Returns:
        ShiftedBev: 다섯 COM 의 볼록 결합

    Raises:
        DimensionError: COM 이 다른 grid 에서 계산된 경우
        NumericError: logit 이 유한하지 않은 경우
    """
    if not np.array_equal(coms.cells, grid.cells):
        raise DimensionError("directional COMs were computed on a different grid")
    attention = sma_mlp.attention(grid.cell_features)
    positions = np.einsum("nd,ndk->nk", attention, coms.coms)
    return ShiftedBev(
        cells=grid.cells.copy(),
        positions=positions,
        cell_size=grid.cell_size,
        origin=(grid.extent[0], grid.extent[2]),
        attention=attention,
    )


def identity_shift(grid: BevGrid) -> ShiftedBev:
    """SMA 없이 C_f = C_bev (BFS 단독 baseline)"""
    return ShiftedBev(
        cells=grid.cells.copy(),
        positions=grid.cell_coords.copy(),
        cell_size=grid.cell_size,
        origin=(grid.extent[0], grid.extent[2]),
    )
