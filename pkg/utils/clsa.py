"""
Cross Local Spatial Attention (CLSA) convolution.

이웃 포인트의 상대 좌표 Δc 를 3-layer MLP 에 넣어 위치별 커널 가중치 W̃ 를 만들고,
offset 축으로 softmax 를 취한 뒤 이웃 특징을 가중합합니다.
gradient 는 프레임워크 없이 직접 역전파합니다.
"""
from dataclasses import dataclass

import numpy as np

from utils.errors import DimensionError, InvalidKernelError
from utils.mlp import Mlp, softmax

KERNEL_SHAPES = ("cross", "diamond", "square_dense", "square_dilated")
# Δc 채널 수 (x, y, z, depth, occupancy)
COORD_DIM = 5


def kernel_offsets(shape: str, size: int) -> list[tuple[int, int]]:
    """
    커널 모양별 offset 목록을 row-major 순서로 반환합니다.

    Parameters:
        shape (str): 'cross' | 'diamond' | 'square_dense' | 'square_dilated'
        size (int): 커널 크기 K (홀수, 1 이상)

    Returns:
        list[tuple[int, int]]: (행 offset, 열 offset) 목록, (0, 0) 항상 포함

    Raises:
        InvalidKernelError: 짝수/0 이하 K 또는 알 수 없는 shape
    """
    if shape not in KERNEL_SHAPES:
        raise InvalidKernelError(f"unknown kernel shape '{shape}', expected one of {KERNEL_SHAPES}")
    if size < 1 or size % 2 == 0:
        raise InvalidKernelError(f"kernel size must be odd and >= 1, got {size}")

    half = size // 2
    span = range(-half, half + 1)
    return [(di, dj) for di in span for dj in span if _in_kernel(shape, di, dj, half)]


def _in_kernel(shape: str, di: int, dj: int, half: int) -> bool:
    if shape == "cross":
        return di == 0 or dj == 0
    if shape == "diamond":
        return abs(di) + abs(dj) <= half
    if shape == "square_dense":
        return True
    # square_dilated: 3×3 격자를 ⌊K/2⌋ 만큼 dilation
    return di in (-half, 0, half) and dj in (-half, 0, half)


@dataclass(frozen=True)
class KernelSpec:
    """커널 모양과 크기. offsets 는 생성 시 검증됩니다."""
    shape: str = "cross"
    size: int = 3

    def __post_init__(self):
        kernel_offsets(self.shape, self.size)

    @property
    def offsets(self) -> list[tuple[int, int]]:
        return kernel_offsets(self.shape, self.size)

    def __len__(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True, eq=False)
class ClsaMlp:
    """
    Δc → W̃ 를 만드는 3-layer MLP.

    입력 차원은 |offsets|·5, 출력 차원은 |offsets|·N_out·N_in 이며
    출력은 (offset, out, in) 순서로 reshape 됩니다.
    """
    mlp: Mlp
    n_in: int
    n_out: int

    def __post_init__(self):
        if len(self.mlp.weights) != 3:
            raise DimensionError(f"CLSA MLP must have 3 layers, got {len(self.mlp.weights)}")
        if self.mlp.out_dim % (self.n_in * self.n_out):
            raise DimensionError(
                f"MLP output {self.mlp.out_dim} is not a multiple of N_out*N_in={self.n_out * self.n_in}"
            )

    def check(self, spec: KernelSpec) -> None:
        n_off = len(spec)
        if self.mlp.in_dim != n_off * COORD_DIM:
            raise DimensionError(f"MLP input {self.mlp.in_dim} != |offsets|*5 = {n_off * COORD_DIM}")
        if self.mlp.out_dim != n_off * self.n_out * self.n_in:
            raise DimensionError(
                f"MLP output {self.mlp.out_dim} != |offsets|*N_out*N_in = {n_off * self.n_out * self.n_in}"
            )

    @staticmethod
    def dims(spec: KernelSpec, n_in: int, n_out: int, hidden: int = 16) -> tuple[int, ...]:
        n_off = len(spec)
        return (n_off * COORD_DIM, hidden, hidden, n_off * n_out * n_in)

    @classmethod
    def zeros(cls, spec: KernelSpec, n_in: int, n_out: int, hidden: int = 16) -> "ClsaMlp":
        return cls(Mlp.zeros(cls.dims(spec, n_in, n_out, hidden)), n_in, n_out)

    @classmethod
    def random(
        cls, spec: KernelSpec, n_in: int, n_out: int, rng: np.random.Generator, hidden: int = 16
    ) -> "ClsaMlp":
        return cls(Mlp.random(cls.dims(spec, n_in, n_out, hidden), rng), n_in, n_out)


@dataclass(frozen=True, eq=False)
class ClsaGradients:
    """clsa_backward 결과"""
    params: np.ndarray
    features: np.ndarray
    coords: np.ndarray


def _pad_width(offsets: list[tuple[int, int]]) -> int:
    return max(max(abs(di), abs(dj)) for di, dj in offsets)


def gather_neighbors(arr: np.ndarray, offsets: list[tuple[int, int]]) -> np.ndarray:
    """(H, W, C) → (H, W, |offsets|, C). 경계 밖은 0."""
    h, w, c = arr.shape
    p = _pad_width(offsets)
    padded = np.pad(arr, ((p, p), (p, p), (0, 0)))
    out = np.empty((h, w, len(offsets), c), dtype=np.result_type(arr, np.float64))
    for k, (di, dj) in enumerate(offsets):
        out[:, :, k] = padded[p + di:p + di + h, p + dj:p + dj + w]
    return out


def scatter_neighbors(grad: np.ndarray, offsets: list[tuple[int, int]]) -> np.ndarray:
    """gather_neighbors 의 adjoint: (H, W, |offsets|, C) → (H, W, C)"""
    h, w, _, c = grad.shape
    p = _pad_width(offsets)
    padded = np.zeros((h + 2 * p, w + 2 * p, c), dtype=grad.dtype)
    for k, (di, dj) in enumerate(offsets):
        padded[p + di:p + di + h, p + dj:p + dj + w] += grad[:, :, k]
    return padded[p:p + h, p:p + w]


def _inbounds(h: int, w: int, offsets: list[tuple[int, int]]) -> np.ndarray:
    ones = np.ones((h, w, 1))
    return gather_neighbors(ones, offsets)[..., 0]


def conv2d(x: np.ndarray, weight: np.ndarray, size: int) -> np.ndarray:
    """
    zero padding 2D convolution: x_out[u] = Σ_i W_i · x_in[u+i].

    Parameters:
        x (np.ndarray): (H, W, N_in) 입력
        weight (np.ndarray): (K, K, N_out, N_in) 커널, 탭 (a, b) 는 offset (a-K//2, b-K//2)
        size (int): K

    Returns:
        np.ndarray: (H, W, N_out)

    Raises:
        DimensionError: 채널 수 또는 커널 크기 불일치
    """
    offsets = kernel_offsets("square_dense", size)
    if weight.shape[:2] != (size, size) or weight.ndim != 4:
        raise DimensionError(f"kernel shape {weight.shape} does not match K={size}")
    if x.ndim != 3 or x.shape[2] != weight.shape[3]:
        raise DimensionError(f"input channels {x.shape[-1]} != kernel N_in {weight.shape[3]}")
    neighbors = gather_neighbors(x, offsets)
    taps = weight.reshape(size * size, weight.shape[2], weight.shape[3])
    return np.einsum("hwkc,koc->hwo", neighbors, taps)


def _relative_coords(coords: np.ndarray, spec: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    offsets = spec.offsets
    h, w, _ = coords.shape
    inside = _inbounds(h, w, offsets)[..., None]
    delta = (gather_neighbors(coords, offsets) - coords[:, :, None, :]) * inside
    return delta, inside


def _attention_with_cache(coords: np.ndarray, clsa_mlp: ClsaMlp, spec: KernelSpec):
    if coords.ndim != 3 or coords.shape[2] != COORD_DIM:
        raise DimensionError(f"coordinate map must be (H, W, {COORD_DIM}), got {coords.shape}")
    clsa_mlp.check(spec)
    h, w, _ = coords.shape
    n_off = len(spec)
    delta, inside = _relative_coords(coords, spec)
    logits, cache = clsa_mlp.mlp.forward(delta.reshape(h * w, n_off * COORD_DIM))
    logits = logits.reshape(h, w, n_off, clsa_mlp.n_out, clsa_mlp.n_in)
    attention = softmax(logits, axis=2)
    return attention, (cache, inside)


def clsa_attention(coords: np.ndarray, clsa_mlp: ClsaMlp, spec: KernelSpec) -> np.ndarray:
    """
    위치별 attention W̃ = softmax_offset(w(Δc_u)) 를 계산합니다.

    Parameters:
        coords (np.ndarray): (H, W, 5) 좌표 특징 c_u
        clsa_mlp (ClsaMlp): 3-layer MLP
        spec (KernelSpec): 이웃 모양

    Returns:
        np.ndarray: (H, W, |offsets|, N_out, N_in), offset 축 합 = 1

    Raises:
        DimensionError: 차원 불일치
        NumericError: MLP 출력이 유한하지 않은 경우
    """
    return _attention_with_cache(coords, clsa_mlp, spec)[0]


def apply_attention(x: np.ndarray, attention: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """x_out[u, o] = Σ_i Σ_c W̃[u, i, o, c] · x[u+i, c]"""
    if attention.shape[:3] != x.shape[:2] + (len(spec),) or attention.shape[4] != x.shape[2]:
        raise DimensionError(f"attention {attention.shape} does not fit features {x.shape}")
    neighbors = gather_neighbors(x, spec.offsets)
    return np.einsum("hwkoc,hwkc->hwo", attention, neighbors)


def clsa_forward(
    x: np.ndarray, coords: np.ndarray, clsa_mlp: ClsaMlp, spec: KernelSpec
) -> np.ndarray:
    """
    CLSA convolution 출력 (H, W, N_out).

    Raises:
        DimensionError: 특징/좌표 맵 크기 또는 채널 불일치
    """
    if x.shape[:2] != coords.shape[:2]:
        raise DimensionError(f"feature map {x.shape[:2]} and coordinate map {coords.shape[:2]} differ")
    if x.shape[2] != clsa_mlp.n_in:
        raise DimensionError(f"input channels {x.shape[2]} != N_in {clsa_mlp.n_in}")
    return apply_attention(x, clsa_attention(coords, clsa_mlp, spec), spec)


def clsa_backward(
    x: np.ndarray,
    coords: np.ndarray,
    clsa_mlp: ClsaMlp,
    spec: KernelSpec,
    grad_out: np.ndarray,
) -> ClsaGradients:
    """
    출력 gradient 를 MLP 파라미터, 입력 특징, 좌표 특징으로 역전파합니다.

    Parameters:
        x (np.ndarray): (H, W, N_in)
        coords (np.ndarray): (H, W, 5)
        clsa_mlp (ClsaMlp): forward 에 쓴 MLP
        spec (KernelSpec): 커널
        grad_out (np.ndarray): (H, W, N_out) 출력 gradient

    Returns:
        ClsaGradients: flat 파라미터 gradient 와 특징/좌표 gradient
    """
    offsets = spec.offsets
    h, w, _ = x.shape
    attention, (cache, inside) = _attention_with_cache(coords, clsa_mlp, spec)
    neighbors = gather_neighbors(x, offsets)

    grad_attention = np.einsum("hwo,hwkc->hwkoc", grad_out, neighbors)
    grad_neighbors = np.einsum("hwo,hwkoc->hwkc", grad_out, attention)
    grad_x = scatter_neighbors(grad_neighbors, offsets)

    # offset 축 softmax backward
    grad_logits = attention * (grad_attention - (attention * grad_attention).sum(axis=2, keepdims=True))
    grad_params, grad_in = clsa_mlp.mlp.backward(cache, grad_logits.reshape(h * w, -1))

    grad_delta = grad_in.reshape(h, w, len(offsets), COORD_DIM) * inside
    grad_coords = scatter_neighbors(grad_delta, offsets) - grad_delta.sum(axis=2)
    return ClsaGradients(params=grad_params, features=grad_x, coords=grad_coords)
