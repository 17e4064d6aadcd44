"""
CLSA/SMA 에서 공유하는 소형 MLP (affine + ReLU) 와 파라미터 fixture 포맷.

fixture 파일은 little-endian float32 를 W1, b1, W2, b2, ... 순서로 이어 붙인 것이며
W 는 (out, in) row-major 로 저장됩니다.
"""
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from utils.errors import DimensionError, NumericError

PARAM_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class Mlp:
    """
    affine 레이어 열. 마지막 레이어를 제외한 모든 레이어 뒤에 ReLU 를 적용합니다.

    Attributes:
        weights (tuple[np.ndarray, ...]): 레이어별 (out, in) 가중치
        biases (tuple[np.ndarray, ...]): 레이어별 (out,) bias
    """
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("weights and biases must be non-empty and of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not agree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer gives {self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"layer {i} has non-finite parameters")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """
        (B, in) 입력을 통과시켜 출력과 backward 용 캐시(각 레이어 입력)를 반환합니다.
        """
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"MLP expects {self.in_dim} inputs, got {x.shape[-1]}")
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(
        self, cache: list[np.ndarray], grad_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        출력 gradient 를 역전파합니다.

        Parameters:
            cache: forward 가 반환한 레이어 입력 목록
            grad_out (np.ndarray): (B, out) 출력 gradient

        Returns:
            tuple[np.ndarray, np.ndarray]: (flat 파라미터 gradient, (B, in) 입력 gradient)
        """
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            grads_w[i] = g.T @ h_in
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                # 이전 레이어 ReLU 미분 (ReLU 출력 = 현재 레이어 입력)
                g = g * (h_in > 0)
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)])
        return flat, g

    def to_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    @classmethod
    def from_flat(cls, flat: np.ndarray, dims: tuple[int, ...]) -> "Mlp":
        """flat 파라미터 벡터와 레이어 차원 (in, h1, ..., out) 으로 MLP 를 만듭니다."""
        expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != expected:
            raise DimensionError(f"dims {dims} need {expected} parameters, got {flat.size}")
        weights, biases = [], []
        pos = 0
        for i, o in zip(dims[:-1], dims[1:]):
            weights.append(flat[pos:pos + o * i].reshape(o, i).copy())
            pos += o * i
            biases.append(flat[pos:pos + o].copy())
            pos += o
        return cls(tuple(weights), tuple(biases))

    @classmethod
    def zeros(cls, dims: tuple[int, ...]) -> "Mlp":
        return cls.from_flat(np.zeros(sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))), dims)

    @classmethod
    def random(cls, dims: tuple[int, ...], rng: np.random.Generator, scale: float = 1.0) -> "Mlp":
        """He 스타일 정규분포 초기화 (bias 도 작은 난수로 채워 ReLU 경계를 피합니다)"""
        weights, biases = [], []
        for i, o in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, scale * np.sqrt(2.0 / i), size=(o, i)))
            biases.append(rng.normal(0.0, 0.1 * scale, size=o))
        return cls(tuple(weights), tuple(biases))


def load_mlp_bytes(data: bytes, dims: tuple[int, ...]) -> Mlp:
    """fixture 바이트(float32 little-endian)에서 MLP 를 만듭니다."""
    if len(data) % PARAM_DTYPE.itemsize:
        raise DimensionError(f"parameter file length {len(data)} is not a multiple of 4")
    flat = np.frombuffer(data, dtype=PARAM_DTYPE).astype(np.float64)
    return Mlp.from_flat(flat, dims)


def load_mlp(file_path: str | os.PathLike, dims: tuple[int, ...]) -> Mlp:
    """
    MLP 파라미터 fixture 파일을 로드합니다.

    Parameters:
        file_path: fixture 경로
        dims (tuple[int, ...]): (in, hidden..., out)

    Returns:
        Mlp: 로드된 MLP

    Raises:
        FileNotFoundError: 파일이 없는 경우
        DimensionError: 파라미터 수가 dims 와 맞지 않는 경우
    """
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"MLP parameter file not found: {path}")
    return load_mlp_bytes(path.read_bytes(), dims)


def save_mlp(file_path: str | os.PathLike, mlp: Mlp) -> None:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(mlp.to_flat().astype(PARAM_DTYPE).tobytes())


def softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    """수치 안정 softmax. 유한하지 않은 logit 이 있으면 NumericError."""
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits before softmax")
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)
