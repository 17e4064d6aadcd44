"""
LiDAR panoptic 배치 파이프라인.

스캔 로드(또는 합성) → 구면 투영 → foreground 마스킹 → offset 이동 → BEV 투영
→ SMA → BFS 클러스터링 → majority voting → 평가 순서로 스캔을 처리하고,
`.label` 예측, report.json, scans.csv, timings.csv 를 출력합니다.

스캔은 서로 독립이므로 ProcessPoolExecutor 로 나눠 처리하고, 결과는 입력 순서대로
PanopticStats 덧셈으로 합칩니다.
"""
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial, reduce
from itertools import product
from operator import add
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from utils.bev import BevGrid, bev_project, foreground_mask, gather_foreground, load_offsets, shift_points
from utils.clustering import backmap, bfs_cluster, fuse_majority
from utils.config import PipelineConfig
from utils.errors import SmacSegError
from utils.losses import (
    LossComponents,
    attract_loss,
    instance_groups_from_cells,
    offset_l2_loss,
    repel_loss,
    total_loss,
)
from utils.metrics import PanopticScores, PanopticStats, accumulate, compute_scores
from utils.mlp import load_mlp
from utils.range_view import FEATURE_CHANNELS, project_labels, spherical_project
from utils.scan_io import (
    ClassTaxonomy,
    PointLabels,
    load_taxonomy,
    read_label_file,
    read_scan_file,
    write_label_file,
)
from utils.sma import ShiftedBev, SmaMlp, directional_coms, identity_shift, sma_apply
from utils.synth import SceneSpec, generate_scene, instance_centroids, oracle_offsets, taxonomy_classes

logger = logging.getLogger(__name__)

STAGES = ("load", "project", "bev", "sma", "cluster", "fuse", "evaluate")
SCAN_COLUMNS = [
    "scan", "status", "error", "num_points", "num_foreground", "num_cells", "num_instances",
    "pq", "pq_th", "rq_th", "sq_th", "miou", "repel", "attract", "l2", "total_loss",
]
LABEL_EXT = ".label"
SCAN_EXT = ".bin"
# 결과에 영향이 없어 report.json 에서 빼는 설정
RUN_ONLY_KEYS = ("out_dir", "workers")


@dataclass(frozen=True)
class ScanInput:
    """
    처리할 스캔 하나.

    Attributes:
        name (str): 출력 파일 이름 (확장자 제외)
        scan_path (Path | None): `.bin` 경로 (합성 장면이면 None)
        label_path (Path | None): GT `.label` 경로 (없으면 None)
        synth_seed (int | None): 합성 장면 seed
    """
    name: str
    scan_path: Path | None = None
    label_path: Path | None = None
    synth_seed: int | None = None


@dataclass
class ScanResult:
    """스캔 하나의 처리 결과 (예측 라벨은 파일로만 남깁니다)"""
    name: str
    status: str = "ok"
    error: str | None = None
    num_points: int = 0
    num_foreground: int = 0
    num_cells: int = 0
    num_instances: int = 0
    stats: PanopticStats | None = None
    losses: dict[str, float] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PipelineReport:
    """
    run_pipeline 결과.

    Attributes:
        results (list[ScanResult]): 입력 순서의 스캔별 결과
        scores (PanopticScores | None): 전체 누적 점수 (평가 가능한 스캔이 없으면 None)
        table (pd.DataFrame): 스캔별 행 (scans.csv)
        timings (pd.DataFrame): 스캔별 단계 시간 (timings.csv, 초)
    """
    results: list[ScanResult]
    scores: PanopticScores | None
    table: pd.DataFrame
    timings: pd.DataFrame

    @property
    def num_failed(self) -> int:
        return sum(r.status != "ok" for r in self.results)

    def to_dict(self, config: PipelineConfig | None = None) -> dict[str, Any]:
        """report.json 내용 (시간 정보 제외, 결정적)"""
        table = self.table.astype(object)
        scans = table.where(table.notna(), None).to_dict(orient="records")
        settings = None
        if config is not None:
            settings = {k: v for k, v in config.to_dict().items() if k not in RUN_ONLY_KEYS}
        return {
            "config": settings,
            "num_scans": len(self.results),
            "num_failed": self.num_failed,
            "metrics": self.scores.to_dict() if self.scores else None,
            "scans": scans,
        }


def scene_spec(config: PipelineConfig, seed: int, taxonomy: ClassTaxonomy) -> SceneSpec:
    """설정의 센서 모델, 합성 파라미터, taxonomy 의 thing/지면 클래스로 SceneSpec 을 만듭니다."""
    things, ground = taxonomy_classes(taxonomy)
    return SceneSpec(
        seed=seed,
        thing_classes=things,
        ground_class=ground,
        num_instances=config.synth_instances,
        min_separation=config.synth_separation,
        height=config.height,
        width=config.width,
        fov_up=config.fov_up,
        fov_down=config.fov_down,
    )


def collect_scans(config: PipelineConfig) -> list[ScanInput]:
    """
    SCAN_DIR 의 `velodyne/*.bin` (+ `labels/*.label`) 을 이름 순으로 모으고,
    SCAN_DIR 가 비어 있으면 합성 장면 목록을 만듭니다.

    Raises:
        FileNotFoundError: SCAN_DIR 가 존재하지 않는 경우
    """
    if not config.scan_dir:
        return [
            ScanInput(name=f"synth_{seed:06d}", synth_seed=seed)
            for seed in range(config.synth_seed, config.synth_seed + config.synth_scenes)
        ]
    root = Path(config.scan_dir)
    if not root.exists():
        raise FileNotFoundError(f"Scan directory not found: {root}")
    scan_dir = root / "velodyne" if (root / "velodyne").is_dir() else root
    label_dir = root / "labels"
    scans = []
    for scan_path in sorted(scan_dir.glob(f"*{SCAN_EXT}")):
        label_path = label_dir / f"{scan_path.stem}{LABEL_EXT}"
        scans.append(ScanInput(scan_path.stem, scan_path, label_path if label_path.exists() else None))
    return scans


def load_sma_mlp(config: PipelineConfig) -> SmaMlp:
    """SMA_WEIGHTS 가 비어 있으면 zero MLP (균등 attention) 를 씁니다."""
    dims = SmaMlp.dims(len(FEATURE_CHANNELS))
    if not config.sma_weights:
        return SmaMlp.zeros(len(FEATURE_CHANNELS))
    return SmaMlp(load_mlp(config.sma_weights, dims))


def _noise_rng(config: PipelineConfig, name: str) -> np.random.Generator:
    # 스캔 이름으로 seed 를 파생해 worker 배치와 무관하게 만듭니다
    return np.random.Generator(np.random.PCG64([config.noise_seed, zlib.crc32(name.encode("utf-8"))]))


def _load_input(scan: ScanInput, config: PipelineConfig, taxonomy: ClassTaxonomy):
    if scan.synth_seed is not None:
        return generate_scene(scene_spec(config, scan.synth_seed, taxonomy))
    cloud = read_scan_file(scan.scan_path)
    if scan.label_path is None:
        return cloud, None, {}
    gt = read_label_file(scan.label_path, cloud.count)
    if config.remap_labels:
        gt = PointLabels(taxonomy.remap(gt.semantic), gt.instance)
    return cloud, gt, instance_centroids(cloud, gt)


def _cell_instances(grid, image, gt: PointLabels) -> np.ndarray:
    """셀에 기여한 포인트의 최빈 GT instance (동률은 작은 id)"""
    winners = image.winner.reshape(-1)
    out = np.zeros(grid.num_occupied, dtype=np.int64)
    for k, members in enumerate(grid.cell_members):
        out[k] = int(np.argmax(np.bincount(gt.instance[winners[members]])))
    return out


def _semantic_and_offsets(scan: ScanInput, config: PipelineConfig, cloud, gt, centroids, image):
    """SEMANTIC_MODE / OFFSET_MODE 에 따라 포인트 semantic 과 (H, W, 2) offset 을 준비합니다."""
    if config.semantic_mode == "oracle":
        if gt is None:
            raise SmacSegError(f"{scan.name}: oracle semantics need ground-truth labels")
        semantic = gt.semantic
    else:
        semantic = read_label_file(Path(config.semantic_dir) / f"{scan.name}{LABEL_EXT}", cloud.count).semantic

    if config.offset_mode == "oracle":
        if gt is None:
            raise SmacSegError(f"{scan.name}: oracle offsets need ground-truth labels")
        offsets = oracle_offsets(cloud, gt, centroids, image, config.offset_noise, _noise_rng(config, scan.name))
    elif config.offset_mode == "file":
        offsets = load_offsets(Path(config.offset_dir) / f"{scan.name}{SCAN_EXT}", image.height, image.width)
    else:
        offsets = np.zeros((image.height, image.width, 2))
    return semantic, offsets


def _shift_cells(grid: BevGrid, config: PipelineConfig, sma_mlp: SmaMlp) -> ShiftedBev:
    if config.clusterer == "smac":
        return sma_apply(grid, directional_coms(grid, config.kernel), sma_mlp)
    return identity_shift(grid)


def bev_layout(
    scan: ScanInput, config: PipelineConfig, taxonomy: ClassTaxonomy, sma_mlp: SmaMlp
) -> tuple[np.ndarray, np.ndarray]:
    """
    스캔 하나의 클러스터링 직전 셀 위치 C_f 와 BFS cluster id 를 계산합니다 (`run --plot` 용).

    process_scan 과 같은 단계를 거치지만 파일을 쓰지 않고 예외도 그대로 올립니다.

    Returns:
        tuple[np.ndarray, np.ndarray]: (n, 2) 셀 위치, (n,) cluster id
    """
    cloud, gt, centroids = _load_input(scan, config, taxonomy)
    image = spherical_project(cloud, config.height, config.width, config.fov_up, config.fov_down)
    semantic, offsets = _semantic_and_offsets(scan, config, cloud, gt, centroids, image)
    mask = foreground_mask(project_labels(image, semantic), taxonomy)
    grid = bev_project(shift_points(gather_foreground(image, mask), offsets), config.cell_size, config.extent)
    shifted = _shift_cells(grid, config, sma_mlp)
    return shifted.positions, bfs_cluster(shifted, config.radius)


def process_scan(
    scan: ScanInput,
    config: PipelineConfig,
    taxonomy: ClassTaxonomy,
    sma_mlp: SmaMlp,
) -> ScanResult:
    """
    스캔 하나를 처리하고 `<out_dir>/predictions/<name>.label` 을 씁니다.

    실패는 예외로 올리지 않고 status='failed' 결과로 돌려줍니다.

    Parameters:
        scan (ScanInput): 입력 스캔
        config (PipelineConfig): 설정
        taxonomy (ClassTaxonomy): thing/stuff 정의
        sma_mlp (SmaMlp): SMA attention MLP

    Returns:
        ScanResult: 통계, loss, 단계별 시간
    """
    result = ScanResult(name=scan.name)
    clock = time.perf_counter()

    def lap(stage: str) -> None:
        nonlocal clock
        now = time.perf_counter()
        result.timings[stage] = now - clock
        clock = now

    try:
        cloud, gt, centroids = _load_input(scan, config, taxonomy)
        result.num_points = cloud.count
        lap("load")

        image = spherical_project(cloud, config.height, config.width, config.fov_up, config.fov_down)
        semantic, offsets = _semantic_and_offsets(scan, config, cloud, gt, centroids, image)
        lap("project")

        mask = foreground_mask(project_labels(image, semantic), taxonomy)
        foreground = shift_points(gather_foreground(image, mask), offsets)
        grid = bev_project(foreground, config.cell_size, config.extent)
        result.num_foreground = len(foreground)
        result.num_cells = grid.num_occupied
        lap("bev")

        shifted = _shift_cells(grid, config, sma_mlp)
        lap("sma")

        cluster_ids = bfs_cluster(shifted, config.radius)
        instance = backmap(cluster_ids, grid, image)
        lap("cluster")

        pred_semantic, pred_instance = fuse_majority(semantic, instance, taxonomy)
        pred = PointLabels(pred_semantic, pred_instance)
        result.num_instances = int(np.unique(pred_instance[pred_instance > 0]).size)
        write_label_file(Path(config.out_dir) / "predictions" / f"{scan.name}{LABEL_EXT}", pred)
        lap("fuse")

        if gt is not None:
            result.stats = accumulate(gt, pred, taxonomy, config.min_points)
            target = oracle_offsets(cloud, gt, centroids, image)
            groups = instance_groups_from_cells(shifted.positions, _cell_instances(grid, image, gt), centroids)
            components = LossComponents(
                l2=offset_l2_loss(offsets, target, mask & image.mask).value,
                repel=repel_loss(groups).value,
                attract=attract_loss(groups).value,
            )
            result.losses = {
                "repel": components.repel,
                "attract": components.attract,
                "l2": components.l2,
                "total_loss": total_loss(components, config.loss_weights),
            }
        lap("evaluate")
    except (SmacSegError, OSError, ValueError) as e:
        result.status, result.error = "failed", str(e)
        logger.warning("scan %s failed: %s", scan.name, e)
    except Exception as e:
        result.status, result.error = "failed", f"unexpected error: {e}"
        logger.exception("scan %s failed unexpectedly", scan.name)
    return result


def _scan_row(result: ScanResult, taxonomy: ClassTaxonomy) -> dict[str, Any]:
    row: dict[str, Any] = {
        "scan": result.name,
        "status": result.status,
        "error": result.error,
        "num_points": result.num_points,
        "num_foreground": result.num_foreground,
        "num_cells": result.num_cells,
        "num_instances": result.num_instances,
    }
    if result.stats is not None:
        scores = compute_scores(result.stats, taxonomy)
        row.update({k: scores.aggregates()[k] for k in ("pq", "pq_th", "rq_th", "sq_th", "miou")})
    row.update(result.losses)
    return row


def run_pipeline(
    config: PipelineConfig,
    scans: list[ScanInput] | None = None,
    progress: bool = False,
    write_outputs: bool = True,
) -> PipelineReport:
    """
    스캔 목록을 처리하고 점수를 누적합니다.

    Parameters:
        config (PipelineConfig): 설정
        scans (list[ScanInput] | None): 처리할 스캔 (None 이면 collect_scans(config))
        progress (bool): tqdm 진행 표시 여부
        write_outputs (bool): report.json, scans.csv, timings.csv 저장 여부

    Returns:
        PipelineReport: 스캔별 결과와 누적 점수

    Raises:
        FileNotFoundError: taxonomy 또는 SMA 가중치 파일이 없는 경우
    """
    taxonomy = load_taxonomy(config.taxonomy)
    sma_mlp = load_sma_mlp(config)
    scans = collect_scans(config) if scans is None else scans
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("processing %d scans with %d worker(s)", len(scans), config.workers)

    worker = partial(process_scan, config=config, taxonomy=taxonomy, sma_mlp=sma_mlp)
    if config.workers > 1 and len(scans) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(tqdm(pool.map(worker, scans), total=len(scans), disable=not progress, desc="scans"))
    else:
        results = [worker(scan) for scan in tqdm(scans, disable=not progress, desc="scans")]

    evaluated = [r.stats for r in results if r.stats is not None]
    scores = compute_scores(reduce(add, evaluated), taxonomy) if evaluated else None

    table = pd.DataFrame([_scan_row(r, taxonomy) for r in results])
    table = table.reindex(columns=SCAN_COLUMNS)
    timings = pd.DataFrame([{"scan": r.name, **r.timings} for r in results]).reindex(columns=["scan", *STAGES])
    report = PipelineReport(results=results, scores=scores, table=table, timings=timings)

    if report.num_failed:
        logger.warning("%d of %d scans failed", report.num_failed, len(results))
    if write_outputs:
        write_report(report, config)
    return report


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_report(report: PipelineReport, config: PipelineConfig) -> None:
    """report.json (결정적), scans.csv, timings.csv 를 OUT_DIR 에 저장합니다."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(report.to_dict(config), f, indent=2, sort_keys=True, ensure_ascii=False, default=_to_builtin)
    report.table.to_csv(out_dir / "scans.csv", index=False)
    report.timings.to_csv(out_dir / "timings.csv", index=False)


def sweep(base: PipelineConfig, grid: dict[str, list[Any]], progress: bool = False) -> pd.DataFrame:
    """
    파라미터 조합마다 run_pipeline 을 한 번씩 실행합니다.

    Parameters:
        base (PipelineConfig): 기본 설정
        grid (dict[str, list]): PipelineConfig 필드 이름 → 후보 값 (예: {"cell_size": [0.3, 0.5], "kernel": [3, 7]})
        progress (bool): 조합 진행 표시 여부

    Returns:
        pd.DataFrame: 조합 열 + status/error + 집계 metric 열 (조합당 한 행)

    Raises:
        ValueError: grid 가 비었거나 후보 목록이 빈 경우
    """
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise ValueError("sweep grid must have at least one value per parameter")
    names = list(grid)
    scans = collect_scans(base)
    rows = []
    for combo in tqdm(list(product(*grid.values())), disable=not progress, desc="sweep"):
        params = dict(zip(names, combo))
        tag = "_".join(f"{k}={v}" for k, v in params.items())
        row: dict[str, Any] = {**params, "status": "ok", "error": None}
        try:
            config = replace(base, **params, out_dir=str(Path(base.out_dir) / tag))
            report = run_pipeline(config, scans)
            row["num_failed"] = report.num_failed
            if report.scores is not None:
                row.update(report.scores.aggregates())
        except (SmacSegError, OSError, ValueError, TypeError) as e:
            row.update(status="failed", error=str(e))
            logger.warning("sweep cell %s failed: %s", tag, e)
        rows.append(row)

    table = pd.DataFrame(rows)
    metric_columns = [c for c in PanopticScores.AGGREGATES if c not in table.columns]
    return table.reindex(columns=[*table.columns, *metric_columns])


def _label_dir(root: Path, sub: str) -> Path:
    return root / sub if (root / sub).is_dir() else root


def evaluate_dirs(
    gt_dir: str | Path,
    pred_dir: str | Path,
    taxonomy: ClassTaxonomy,
    min_points: int = 20,
    remap_labels: bool = False,
) -> tuple[PanopticScores | None, pd.DataFrame]:
    """
    GT 와 예측 `.label` 디렉터리를 이름으로 짝지어 평가합니다.

    GT 는 `<gt_dir>/labels/*.label` (없으면 `<gt_dir>/*.label`),
    예측은 `<pred_dir>/predictions/*.label` (없으면 `<pred_dir>/*.label`) 에서 찾습니다.

    Returns:
        tuple: (누적 점수 또는 None, 스캔별 status/error/pq 표)
    """
    gt_root, pred_root = _label_dir(Path(gt_dir), "labels"), _label_dir(Path(pred_dir), "predictions")
    if not gt_root.exists():
        raise FileNotFoundError(f"Ground-truth directory not found: {gt_root}")
    rows, stats = [], []
    for gt_path in sorted(gt_root.glob(f"*{LABEL_EXT}")):
        row: dict[str, Any] = {"scan": gt_path.stem, "status": "ok", "error": None}
        try:
            n = gt_path.stat().st_size // 4
            gt = read_label_file(gt_path, n)
            if remap_labels:
                gt = PointLabels(taxonomy.remap(gt.semantic), gt.instance)
            pred = read_label_file(pred_root / gt_path.name, n)
            scan_stats = accumulate(gt, pred, taxonomy, min_points)
            stats.append(scan_stats)
            scores = compute_scores(scan_stats, taxonomy)
            row.update(pq=scores.pq, pq_th=scores.pq_th, miou=scores.miou)
        except (SmacSegError, OSError, ValueError) as e:
            row.update(status="failed", error=str(e))
            logger.warning("evaluation of %s failed: %s", gt_path.stem, e)
        rows.append(row)
    scores = compute_scores(reduce(add, stats), taxonomy) if stats else None
    return scores, pd.DataFrame(rows, columns=["scan", "status", "error", "pq", "pq_th", "miou"])


def sweep_parameters(table: pd.DataFrame) -> list[str]:
    """sweep 표에서 파라미터 열 이름 (입력 순서)"""
    meta = {"status", "error", "num_failed", *PanopticScores.AGGREGATES}
    return [c for c in table.columns if c not in meta]
