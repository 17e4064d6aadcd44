"""
파이프라인 설정 로드.

`KEY=value` 형식의 평문 설정 파일을 python-dotenv 로 읽고,
`SMACSEG_<KEY>` 환경 변수와 CLI 인자 순서로 덮어쓴 뒤 검증합니다.
"""
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable

from dotenv import dotenv_values

from utils.errors import ConfigError
from utils.losses import LossWeights

logger = logging.getLogger(__name__)

ENV_PREFIX = "SMACSEG_"
OFFSET_MODES = ("oracle", "file", "none")
CLUSTERERS = ("smac", "bfs")
SEMANTIC_SOURCES = ("oracle", "file")


@dataclass(frozen=True)
class PipelineConfig:
    """
    파이프라인 설정 (기본값은 SemanticKITTI 프리셋).

    Attributes:
        height, width (int): range image 크기
        fov_up, fov_down (float): 수직 FOV (degree)
        taxonomy (str): taxonomy YAML 경로
        remap_labels (bool): GT 라벨에 learning_map 적용 여부
        cell_size (float): BEV 격자 크기 (m)
        extent (tuple): BEV 범위 (x_min, x_max, y_min, y_max)
        kernel (int): SMA window 크기 K
        radius (float): BFS 클러스터링 반경 r (m)
        clusterer (str): 'smac' (SMA + BFS) 또는 'bfs' (SMA 없음)
        sma_weights (str): SMA MLP 가중치 파일 (빈 문자열이면 zero MLP)
        loss_weights (LossWeights): 손실 가중치 β
        offsets (str): 'oracle', 'none', 'file:<dir>'
        offset_noise (float): oracle offset noise σ (m)
        noise_seed (int): noise RNG seed
        semantics (str): 'oracle' (GT) 또는 'file:<dir>' (예측 semantic `.label`)
        min_points (int): 작은 instance 필터 기준
        scan_dir (str): 입력 디렉터리 (velodyne/, labels/), 빈 문자열이면 합성 장면 사용
        synth_scenes, synth_seed, synth_instances (int): 합성 장면 수, 첫 seed, instance 수
        synth_separation (float): 합성 instance 최소 간격 (m)
        out_dir (str): 출력 디렉터리
        workers (int): 병렬 worker 수
    """
    height: int = 64
    width: int = 2048
    fov_up: float = 3.0
    fov_down: float = -25.0
    taxonomy: str = "config/semantic-kitti.yaml"
    remap_labels: bool = False
    cell_size: float = 0.5
    extent: tuple[float, float, float, float] = (-50.0, 50.0, -50.0, 50.0)
    kernel: int = 7
    radius: float = 1.2
    clusterer: str = "smac"
    sma_weights: str = ""
    loss_weights: LossWeights = LossWeights()
    offsets: str = "oracle"
    offset_noise: float = 0.0
    noise_seed: int = 0
    semantics: str = "oracle"
    min_points: int = 20
    scan_dir: str = ""
    synth_scenes: int = 10
    synth_seed: int = 0
    synth_instances: int = 20
    synth_separation: float = 4.0
    out_dir: str = "output"
    workers: int = 1

    def __post_init__(self):
        errors = []
        if self.height < 1 or self.width < 1:
            errors.append(f"range image size must be positive, got {self.height}x{self.width}")
        if not self.fov_down < self.fov_up:
            errors.append(f"FOV_DOWN ({self.fov_down}) must be below FOV_UP ({self.fov_up})")
        if not self.cell_size > 0:
            errors.append(f"CELL_SIZE must be positive, got {self.cell_size}")
        if len(self.extent) != 4 or self.extent[0] >= self.extent[1] or self.extent[2] >= self.extent[3]:
            errors.append(f"BEV_EXTENT must be x_min,x_max,y_min,y_max, got {self.extent}")
        if self.kernel < 1:
            errors.append(f"KERNEL must be >= 1, got {self.kernel}")
        if not self.radius > 0:
            errors.append(f"RADIUS must be positive, got {self.radius}")
        if self.clusterer not in CLUSTERERS:
            errors.append(f"CLUSTERER must be one of {CLUSTERERS}, got {self.clusterer!r}")
        if self.offset_mode not in OFFSET_MODES or (self.offset_mode == "file" and not self.offset_dir):
            errors.append(f"OFFSETS must be oracle, none or file:<dir>, got {self.offsets!r}")
        if self.semantic_mode not in SEMANTIC_SOURCES or (self.semantic_mode == "file" and not self.semantic_dir):
            errors.append(f"SEMANTICS must be oracle or file:<dir>, got {self.semantics!r}")
        if self.offset_noise < 0:
            errors.append(f"OFFSET_NOISE must be >= 0, got {self.offset_noise}")
        if self.min_points < 0:
            errors.append(f"MIN_POINTS must be >= 0, got {self.min_points}")
        if self.synth_scenes < 0 or self.synth_instances < 0 or self.synth_separation < 0:
            errors.append("SYNTH_SCENES, SYNTH_INSTANCES and SYNTH_SEPARATION must be >= 0")
        if self.workers < 1:
            errors.append(f"WORKERS must be >= 1, got {self.workers}")
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def offset_mode(self) -> str:
        return self.offsets.split(":", 1)[0]

    @property
    def offset_dir(self) -> str:
        return self.offsets.split(":", 1)[1] if ":" in self.offsets else ""

    @property
    def semantic_mode(self) -> str:
        return self.semantics.split(":", 1)[0]

    @property
    def semantic_dir(self) -> str:
        return self.semantics.split(":", 1)[1] if ":" in self.semantics else ""

    def to_dict(self) -> dict[str, Any]:
        """보고서 기록용 평탄화 dict"""
        data = asdict(self)
        data["extent"] = list(self.extent)
        return data


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_extent(value: str) -> tuple[float, float, float, float]:
    parts = [float(p) for p in value.replace(" ", "").split(",") if p]
    if len(parts) != 4:
        raise ValueError(f"expected 4 comma-separated numbers, got {value!r}")
    return tuple(parts)


_LOSS_KEYS = {f"LOSS_{f.name.upper()}": f.name for f in fields(LossWeights)}

# 설정 키 → (필드 이름, 변환 함수)
_KEYS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "HEIGHT": ("height", int),
    "WIDTH": ("width", int),
    "FOV_UP": ("fov_up", float),
    "FOV_DOWN": ("fov_down", float),
    "TAXONOMY": ("taxonomy", str),
    "REMAP_LABELS": ("remap_labels", _parse_bool),
    "CELL_SIZE": ("cell_size", float),
    "BEV_EXTENT": ("extent", _parse_extent),
    "KERNEL": ("kernel", int),
    "RADIUS": ("radius", float),
    "CLUSTERER": ("clusterer", str),
    "SMA_WEIGHTS": ("sma_weights", str),
    "OFFSETS": ("offsets", str),
    "OFFSET_NOISE": ("offset_noise", float),
    "NOISE_SEED": ("noise_seed", int),
    "SEMANTICS": ("semantics", str),
    "MIN_POINTS": ("min_points", int),
    "SCAN_DIR": ("scan_dir", str),
    "SYNTH_SCENES": ("synth_scenes", int),
    "SYNTH_SEED": ("synth_seed", int),
    "SYNTH_INSTANCES": ("synth_instances", int),
    "SYNTH_SEPARATION": ("synth_separation", float),
    "OUT_DIR": ("out_dir", str),
    "WORKERS": ("workers", int),
}


def _resolve_path(value: str, base: Path | None) -> str:
    """상대 경로가 현재 디렉터리에 없고 설정 파일 기준으로 있으면 그 경로를 씁니다."""
    if not value or base is None or Path(value).is_absolute() or Path(value).exists():
        return value
    candidate = base / value
    return str(candidate) if candidate.exists() else value


def load_config(
    file_path: str | os.PathLike | None = None,
    overrides: dict[str, Any] | None = None,
    environ: dict[str, str] | None = None,
) -> PipelineConfig:
    """
    설정 파일 → `SMACSEG_*` 환경 변수 → overrides 순서로 병합해 PipelineConfig 를 만듭니다.

    Parameters:
        file_path: `KEY=value` 설정 파일 (None 이면 기본값에서 시작)
        overrides (dict | None): CLI 등에서 온 최종 덮어쓰기 (키는 설정 키 이름)
        environ (dict | None): 환경 변수 (None 이면 os.environ)

    Returns:
        PipelineConfig: 검증된 설정

    Raises:
        ConfigError: 파일이 없거나, 모르는 키, 변환 실패, 검증 실패
    """
    raw: dict[str, Any] = {}
    base = None
    if file_path is not None:
        path = Path(file_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        base = path.parent
        raw.update({k.upper(): v for k, v in dotenv_values(path).items() if v is not None})

    env = os.environ if environ is None else environ
    for key, value in env.items():
        if key.startswith(ENV_PREFIX):
            raw[key[len(ENV_PREFIX):]] = value
    raw.update({k.upper(): v for k, v in (overrides or {}).items() if v is not None})

    values: dict[str, Any] = {}
    loss: dict[str, float] = {}
    for key, value in raw.items():
        if key not in _LOSS_KEYS and key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key in _LOSS_KEYS:
                loss[_LOSS_KEYS[key]] = float(value)
            else:
                name, parse = _KEYS[key]
                values[name] = parse(value) if isinstance(value, str) else value
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for {key}: {value!r} ({e})") from e

    for name in ("taxonomy", "scan_dir", "sma_weights"):
        if name in values:
            values[name] = _resolve_path(values[name], base)

    try:
        weights = replace(LossWeights(), **loss)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    config = PipelineConfig(**values, loss_weights=weights)
    logger.debug("loaded config: %s", config)
    return config
