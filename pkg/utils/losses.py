"""
SMAC 학습용 loss 와 gradient 검증 도구.

- centroid-aware repel loss: 다른 instance 의 가장 가까운 이동 포인트가
  GT centroid 간 최소 거리보다 가까우면 벌점
- attract loss: instance 평균 위치까지의 평균 거리
- offset L2, weighted cross-entropy, 가중합 total loss
- central difference numeric_gradient

모든 loss 는 (값, gradient) 를 함께 반환하며 gradient 는 직접 유도한 식으로 계산합니다.
"""
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np
from sklearn.neighbors import NearestNeighbors

from utils.errors import DimensionError, InvalidLabelError, NumericError


@dataclass(frozen=True, eq=False)
class InstanceGroups:
    """
    instance 별 이동 포인트와 GT centroid.

    Attributes:
        positions (np.ndarray): (P, 2) C_f (m)
        membership (np.ndarray): (P,) instance 인덱스 0..I-1
        centroids (np.ndarray): (I, 2) GT 2D centroid (m)
    """
    positions: np.ndarray
    membership: np.ndarray
    centroids: np.ndarray

    def __post_init__(self):
        if self.positions.shape[0] != self.membership.shape[0]:
            raise DimensionError(
                f"{self.positions.shape[0]} positions but {self.membership.shape[0]} memberships"
            )
        if not np.isfinite(self.centroids).all():
            raise NumericError("instance centroids must be finite")
        if self.membership.size and (self.membership.min() < 0 or self.membership.max() >= self.num_instances):
            raise DimensionError("membership index outside 0..I-1")
        if (self.sizes < 1).any():
            raise DimensionError("every instance needs at least one point")

    @property
    def num_instances(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.membership, minlength=self.num_instances)

    def with_positions(self, positions: np.ndarray) -> "InstanceGroups":
        return InstanceGroups(positions, self.membership, self.centroids)

    @classmethod
    def from_lists(cls, points: list[np.ndarray], centroids: np.ndarray) -> "InstanceGroups":
        """instance 별 (P_i, 2) 배열 목록으로 만듭니다."""
        if not points:
            return cls(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros((0, 2)))
        positions = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in points])
        membership = np.concatenate([np.full(len(p), i, dtype=np.int64) for i, p in enumerate(points)])
        return cls(positions, membership, np.asarray(centroids, dtype=np.float64).reshape(-1, 2))


@dataclass(frozen=True, eq=False)
class LossResult:
    """loss 값과 입력에 대한 (sub)gradient"""
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    """total loss 가중치 β (기본값은 학습 설정 1.0, 1.0, 5.0, 0.1, 0.1, 0.1)"""
    wce: float = 1.0
    ls: float = 1.0
    tv: float = 5.0
    l2: float = 0.1
    repel: float = 0.1
    attract: float = 0.1

    def __post_init__(self):
        negative = [f.name for f in fields(self) if getattr(self, f.name) < 0]
        if negative:
            raise ValueError(f"loss weights must be non-negative: {negative}")


@dataclass(frozen=True)
class LossComponents:
    """total loss 구성 요소. ls, tv 는 외부에서 계산된 스칼라로 받습니다."""
    wce: float = 0.0
    ls: float = 0.0
    tv: float = 0.0
    l2: float = 0.0
    repel: float = 0.0
    attract: float = 0.0


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # 차분을 직접 계산 (dot-product 전개는 gradient 검증에 쓰기엔 정밀도가 부족)
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def nearest_other_instance(positions: np.ndarray, membership: np.ndarray, num_instances: int) -> np.ndarray:
    """
    포인트마다 다른 instance 에 속한 가장 가까운 포인트의 인덱스를 찾습니다.

    instance 별로 나머지 포인트에 KD-tree 를 만들어 질의하므로 메모리는 O(P) 입니다.
    """
    nearest = np.zeros(len(positions), dtype=np.int64)
    for inst in range(num_instances):
        own = membership == inst
        others = np.flatnonzero(~own)
        if not own.any() or not others.size:
            continue
        tree = NearestNeighbors(n_neighbors=1).fit(positions[others])
        nearest[own] = others[tree.kneighbors(positions[own], return_distance=False)[:, 0]]
    return nearest


def repel_loss(groups: InstanceGroups) -> LossResult:
    """
    centroid-aware repel loss 와 C_f 에 대한 subgradient.

    L = (1/I) Σ_i (1/P_i) Σ_p max{0, d_i − d̂_{i,p}},
    d_i 는 다른 GT centroid 까지 최소 거리, d̂_{i,p} 는 다른 instance 의 이동 포인트까지 최소 거리.
    I ≤ 1 이면 0. d̂ 최근접이 여러 개면 그중 하나로 subgradient 를 정합니다.

    Parameters:
        groups (InstanceGroups): instance 별 C_f 와 GT centroid

    Returns:
        LossResult: 스칼라 loss 와 (P, 2) gradient
    """
    positions = groups.positions
    grad = np.zeros_like(positions, dtype=np.float64)
    n_inst = groups.num_instances
    if n_inst <= 1:
        return LossResult(0.0, grad)

    gt = _pairwise(groups.centroids, groups.centroids)
    np.fill_diagonal(gt, np.inf)
    d = gt.min(axis=1)

    nearest = nearest_other_instance(positions, groups.membership, n_inst)
    d_hat = np.linalg.norm(positions - positions[nearest], axis=1)

    weight = 1.0 / (n_inst * groups.sizes[groups.membership])
    term = np.maximum(0.0, d[groups.membership] - d_hat)
    value = float(np.sum(weight * term))

    active = (term > 0) & (d_hat > 0)
    if active.any():
        p = np.flatnonzero(active)
        q = nearest[p]
        unit = (positions[p] - positions[q]) / d_hat[p][:, None]
        step = weight[p][:, None] * unit
        # −d̂ 의 미분: p 는 q 에서 멀어지는 방향의 반대, q 는 그 반대
        np.add.at(grad, p, -step)
        np.add.at(grad, q, step)
    return LossResult(value, grad)


def attract_loss(groups: InstanceGroups) -> LossResult:
    """
    attract loss: L = (1/I) Σ_i (1/P_i) Σ_p ‖C_f,(i,p) − C̄_f,i‖₂.

    평균과 일치하는 포인트의 gradient 는 0 으로 정의합니다.
    """
    positions = groups.positions
    grad = np.zeros_like(positions, dtype=np.float64)
    n_inst = groups.num_instances
    if n_inst == 0:
        return LossResult(0.0, grad)

    sizes = groups.sizes
    members = groups.membership
    means = np.stack(
        [np.bincount(members, weights=positions[:, k], minlength=n_inst) for k in range(2)], axis=1
    ) / sizes[:, None]
    diff = positions - means[members]
    dist = np.linalg.norm(diff, axis=1)
    weight = 1.0 / (n_inst * sizes[members])
    value = float(np.sum(weight * dist))

    unit = np.divide(diff, dist[:, None], out=np.zeros_like(diff), where=dist[:, None] > 0)
    unit_mean = np.stack(
        [np.bincount(members, weights=unit[:, k], minlength=n_inst) for k in range(2)], axis=1
    ) / sizes[:, None]
    grad = weight[:, None] * (unit - unit_mean[members])
    return LossResult(value, grad)


def offset_l2_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> LossResult:
    """
    mask 픽셀의 ‖pred − target‖² 평균 (mask 가 비면 0).

    Raises:
        DimensionError: shape 불일치
    """
    if pred.shape != target.shape or pred.shape[:-1] != mask.shape:
        raise DimensionError(f"pred {pred.shape}, target {target.shape}, mask {mask.shape} do not agree")
    grad = np.zeros_like(pred, dtype=np.float64)
    count = int(mask.sum())
    if count == 0:
        return LossResult(0.0, grad)
    diff = (pred - target)[mask]
    value = float(np.sum(diff * diff) / count)
    grad[mask] = 2.0 * diff / count
    return LossResult(value, grad)


def weighted_ce(
    logits: np.ndarray,
    labels: np.ndarray,
    class_weights: np.ndarray,
    ignore_index: int | None = 0,
) -> LossResult:
    """
    클래스 가중 cross-entropy (가중치 정규화 평균).

    L = Σ_p w_{y_p}·(−log softmax(z_p)[y_p]) / Σ_p w_{y_p}, ignore 픽셀 제외.

    Parameters:
        logits (np.ndarray): (..., C) 클래스 logit
        labels (np.ndarray): (...) 정답 클래스
        class_weights (np.ndarray): (C,) 양수 가중치
        ignore_index (int | None): 제외할 라벨

    Returns:
        LossResult: loss 와 logits gradient

    Raises:
        InvalidLabelError: 범위 밖 라벨
        NumericError: 유한하지 않은 logit
    """
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1] or class_weights.shape != (n_cls,):
        raise DimensionError(
            f"logits {logits.shape}, labels {labels.shape}, weights {class_weights.shape} do not agree"
        )
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits")
    if (class_weights <= 0).any():
        raise ValueError("class weights must be positive")

    flat_logits = logits.reshape(-1, n_cls).astype(np.float64)
    flat_labels = labels.reshape(-1).astype(np.int64)
    keep = np.ones(flat_labels.shape, dtype=bool) if ignore_index is None else flat_labels != ignore_index
    bad = keep & ((flat_labels < 0) | (flat_labels >= n_cls))
    if bad.any():
        raise InvalidLabelError(f"labels outside [0, {n_cls}): {np.unique(flat_labels[bad]).tolist()}")

    grad = np.zeros_like(flat_logits)
    if not keep.any():
        return LossResult(0.0, grad.reshape(logits.shape))

    z = flat_logits[keep]
    y = flat_labels[keep]
    shifted = z - z.max(axis=1, keepdims=True)
    log_prob = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    w = class_weights[y]
    total = w.sum()
    rows = np.arange(len(y))
    value = float(np.sum(-w * log_prob[rows, y]) / total)

    g = np.exp(log_prob)
    g[rows, y] -= 1.0
    grad[keep] = g * (w / total)[:, None]
    return LossResult(value, grad.reshape(logits.shape))


def total_loss(components: LossComponents, weights: LossWeights = LossWeights()) -> float:
    """β 가중합 total loss"""
    return float(sum(getattr(weights, f.name) * getattr(components, f.name) for f in fields(LossComponents)))


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """
    central difference gradient (f(x+he_k) − f(x−he_k)) / 2h.

    Parameters:
        fn: 스칼라 함수 (re-entrant 해야 함)
        x (np.ndarray): 평가 지점 (임의 shape)
        step (float): h > 0

    Returns:
        np.ndarray: x 와 같은 shape 의 gradient 추정치

    Raises:
        NumericError: 함수 값이 유한하지 않은 경우
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    shifted = x.copy()
    flat_x = shifted.reshape(-1)
    flat_grad = grad.reshape(-1)
    for k in range(flat_x.size):
        original = flat_x[k]
        flat_x[k] = original + step
        upper = fn(shifted)
        flat_x[k] = original - step
        lower = fn(shifted)
        flat_x[k] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericError(f"non-finite function value at coordinate {k}")
        flat_grad[k] = (upper - lower) / (2.0 * step)
    return grad


def instance_groups_from_cells(
    positions: np.ndarray, cell_instance: np.ndarray, centroids: dict[int, np.ndarray]
) -> InstanceGroups:
    """
    셀별 GT instance 배정으로 InstanceGroups 를 만듭니다 (instance 0 셀 제외).

    Parameters:
        positions (np.ndarray): (n, 2) 셀별 C_f
        cell_instance (np.ndarray): (n,) 셀에 기여한 포인트의 최빈 GT instance id
        centroids (dict[int, np.ndarray]): GT instance id → centroid
    """
    ids = sorted(i for i in np.unique(cell_instance).tolist() if i > 0 and i in centroids)
    index = {inst: k for k, inst in enumerate(ids)}
    keep = np.isin(cell_instance, ids)
    membership = np.array([index[i] for i in cell_instance[keep].tolist()], dtype=np.int64)
    centroid_arr = np.array([centroids[i] for i in ids], dtype=np.float64).reshape(-1, 2)
    return InstanceGroups(positions[keep].astype(np.float64), membership, centroid_arr)
