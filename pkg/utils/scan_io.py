"""
SemanticKITTI 호환 스캔/라벨 입출력 및 클래스 taxonomy.

- `.bin`: 포인트당 little-endian float32 4개 (x, y, z, remission)
- `.label`: 포인트당 little-endian uint32 1개 (하위 16비트 semantic, 상위 16비트 instance)
- taxonomy: YAML 파일 (`labels:`, `things:`, 선택적으로 `ignore:`, `learning_map:`)
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from utils.errors import (
    EncodingOverflowError,
    InvalidPointError,
    LabelCountError,
    MalformedScanError,
)

logger = logging.getLogger(__name__)

# 포인트 레코드 크기 (float32 × 4)
POINT_RECORD_BYTES = 16
SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
FIELD_LIMIT = 1 << 16


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    LiDAR 스캔 P.

    Attributes:
        points (np.ndarray): (N, 4) float32 배열, 열 순서 x, y, z, remission
    """
    points: np.ndarray

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def remission(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return bool(np.array_equal(self.points, other.points))


@dataclass(frozen=True, eq=False)
class PointLabels:
    """
    포인트별 panoptic 라벨.

    Attributes:
        semantic (np.ndarray): (N,) int64, 0 = unlabeled
        instance (np.ndarray): (N,) int64, 0 = instance 없음
    """
    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        if self.semantic.shape != self.instance.shape:
            raise LabelCountError(
                f"semantic/instance length mismatch: {self.semantic.shape} vs {self.instance.shape}"
            )

    def __len__(self) -> int:
        return int(self.semantic.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointLabels):
            return NotImplemented
        return bool(
            np.array_equal(self.semantic, other.semantic)
            and np.array_equal(self.instance, other.instance)
        )

    @classmethod
    def empty(cls, n: int = 0) -> "PointLabels":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))


@dataclass(frozen=True)
class ClassTaxonomy:
    """
    클래스 이름과 thing/stuff 분할.

    Attributes:
        name (str): taxonomy 이름 (예: 'semantic-kitti')
        class_names (tuple[str, ...]): 인덱스 0..C_cls-1 의 클래스 이름
        things (frozenset[int]): thing 클래스 id
        stuff (frozenset[int]): stuff 클래스 id (thing/ignore 를 제외한 나머지)
        ignore (frozenset[int]): 평가/클러스터링에서 제외되는 id (기본 {0})
        learning_map (dict[int, int]): 원본 라벨 id → 학습 id 매핑 (없으면 항등)
    """
    name: str
    class_names: tuple[str, ...]
    things: frozenset[int]
    stuff: frozenset[int]
    ignore: frozenset[int] = frozenset({0})
    learning_map: dict[int, int] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.things & self.stuff:
            raise ValueError(f"thing/stuff sets overlap: {sorted(self.things & self.stuff)}")
        if self.things & self.ignore:
            raise ValueError(f"thing classes cannot be ignored: {sorted(self.things & self.ignore)}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def evaluated(self) -> list[int]:
        """평가 대상 클래스 id (오름차순)"""
        return sorted(self.things | self.stuff)

    def is_thing(self, class_id: int) -> bool:
        return int(class_id) in self.things

    def thing_mask(self, semantic: np.ndarray) -> np.ndarray:
        """semantic 배열과 같은 shape 의 thing 여부 boolean 배열"""
        return np.isin(semantic, np.fromiter(self.things, dtype=np.int64, count=len(self.things)))

    def remap(self, semantic: np.ndarray) -> np.ndarray:
        """learning_map 을 적용해 원본 라벨 id 를 학습 id 로 변환"""
        if not self.learning_map:
            return semantic.astype(np.int64, copy=True)
        size = max(max(self.learning_map), int(semantic.max(initial=0))) + 1
        lut = np.zeros(size, dtype=np.int64)
        for raw, train in self.learning_map.items():
            lut[raw] = train
        return lut[semantic]


def load_scan(data: bytes) -> PointCloud:
    """
    `.bin` 바이트를 PointCloud 로 디코딩합니다.

    Parameters:
        data (bytes): float32 x,y,z,r 레코드가 이어진 바이트열

    Returns:
        PointCloud: 파일 순서 그대로의 포인트

    Raises:
        MalformedScanError: 길이가 16의 배수가 아닌 경우
        InvalidPointError: 유한하지 않은 값이 포함된 경우
    """
    if len(data) % POINT_RECORD_BYTES != 0:
        raise MalformedScanError(
            f"scan byte length {len(data)} is not a multiple of {POINT_RECORD_BYTES}"
        )
    points = np.frombuffer(data, dtype=SCAN_DTYPE).reshape(-1, 4).astype(np.float32)
    bad = ~np.isfinite(points).all(axis=1)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise InvalidPointError(f"non-finite value in point {first} ({int(bad.sum())} bad points)")
    return PointCloud(points)


def write_scan(cloud: PointCloud) -> bytes:
    """PointCloud 를 `.bin` 바이트로 인코딩합니다."""
    return np.ascontiguousarray(cloud.points, dtype=SCAN_DTYPE).tobytes()


def load_labels(data: bytes, n: int) -> PointLabels:
    """
    `.label` 바이트를 PointLabels 로 디코딩합니다.

    Parameters:
        data (bytes): uint32 레코드 바이트열
        n (int): 대응하는 PointCloud 의 포인트 수

    Returns:
        PointLabels: 파일 순서의 semantic/instance 라벨

    Raises:
        LabelCountError: 바이트 길이가 4·n 이 아닌 경우
    """
    if len(data) != LABEL_DTYPE.itemsize * n:
        raise LabelCountError(
            f"label byte length {len(data)} does not match {n} points ({LABEL_DTYPE.itemsize * n} expected)"
        )
    words = np.frombuffer(data, dtype=LABEL_DTYPE)
    semantic = (words & 0xFFFF).astype(np.int64)
    instance = (words >> 16).astype(np.int64)
    return PointLabels(semantic, instance)


def write_predictions(labels: PointLabels) -> bytes:
    """
    PointLabels 를 `.label` 바이트로 인코딩합니다.

    Raises:
        EncodingOverflowError: id 가 음수이거나 2^16 이상인 경우
    """
    for name, values in (("semantic", labels.semantic), ("instance", labels.instance)):
        if values.size and (values.min() < 0 or values.max() >= FIELD_LIMIT):
            raise EncodingOverflowError(
                f"{name} id out of 16-bit range [0, {FIELD_LIMIT}): "
                f"min={int(values.min())}, max={int(values.max())}"
            )
    words = (labels.instance.astype(np.uint32) << 16) | labels.semantic.astype(np.uint32)
    return words.astype(LABEL_DTYPE).tobytes()


def read_scan_file(file_path: str | os.PathLike) -> PointCloud:
    """`.bin` 파일을 읽어 PointCloud 로 반환합니다."""
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"Scan file not found: {path}")
    return load_scan(path.read_bytes())


def read_label_file(file_path: str | os.PathLike, n: int) -> PointLabels:
    """`.label` 파일을 읽어 PointLabels 로 반환합니다."""
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"Label file not found: {path}")
    return load_labels(path.read_bytes(), n)


def write_label_file(file_path: str | os.PathLike, labels: PointLabels) -> None:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_predictions(labels))


def write_scan_file(file_path: str | os.PathLike, cloud: PointCloud) -> None:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_scan(cloud))


def load_taxonomy(file_path: str | os.PathLike) -> ClassTaxonomy:
    """
    YAML taxonomy 파일을 로드합니다.

    파일 형식::

        name: semantic-kitti
        labels:
          0: unlabeled
          1: car
        things: [1, 2, 3]
        ignore: [0]            # 선택, 기본 [0]
        learning_map: {10: 1}  # 선택

    Parameters:
        file_path: taxonomy 파일 경로

    Returns:
        ClassTaxonomy: 로드된 taxonomy

    Raises:
        FileNotFoundError: 파일이 없는 경우
        ValueError: labels 가 0..C-1 연속 인덱스가 아니거나 thing id 가 범위를 벗어난 경우
    """
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"Taxonomy file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}

    labels = {int(k): str(v) for k, v in (raw.get("labels") or {}).items()}
    if sorted(labels) != list(range(len(labels))):
        raise ValueError(f"{path}: class ids must be contiguous 0..C-1, got {sorted(labels)}")
    class_names = tuple(labels[i] for i in range(len(labels)))

    things = frozenset(int(t) for t in raw.get("things") or [])
    ignore = frozenset(int(t) for t in raw.get("ignore", [0]))
    out_of_range = [t for t in things | ignore if not 0 <= t < len(class_names)]
    if out_of_range:
        raise ValueError(f"{path}: class ids out of range: {sorted(out_of_range)}")
    stuff = frozenset(range(len(class_names))) - things - ignore
    learning_map = {int(k): int(v) for k, v in (raw.get("learning_map") or {}).items()}

    return ClassTaxonomy(
        name=str(raw.get("name", path.stem)),
        class_names=class_names,
        things=things,
        stuff=stuff,
        ignore=ignore,
        learning_map=learning_map,
    )
