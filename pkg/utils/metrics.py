"""
Panoptic Quality (PQ, PQ†, RQ, SQ) 와 mIoU 계산.

스캔별 통계를 PanopticStats 로 누적하고 (덧셈으로 병합 가능),
마지막에 compute_scores 로 클래스별/thing/stuff 평균을 계산합니다.
"""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from utils.errors import InvalidLabelError
from utils.scan_io import ClassTaxonomy, PointLabels

# 작은 instance 필터 기준 (포인트 수)
MIN_INSTANCE_POINTS = 20
# TP 매칭 IoU 기준 (초과)
MATCH_IOU = 0.5


def filter_small_instances(labels: PointLabels, min_points: int = MIN_INSTANCE_POINTS) -> PointLabels:
    """
    포인트 수가 min_points 미만인 instance id 를 0 으로 만듭니다 (semantic 유지).

    Parameters:
        labels (PointLabels): GT 라벨
        min_points (int): 최소 포인트 수 (이상이면 유지)

    Returns:
        PointLabels: 필터링된 새 라벨
    """
    if min_points < 0:
        raise ValueError(f"min_points must be >= 0, got {min_points}")
    instance = labels.instance.copy()
    ids, counts = np.unique(instance[instance > 0], return_counts=True)
    small = ids[counts < min_points]
    if small.size:
        instance[np.isin(instance, small)] = 0
    return PointLabels(labels.semantic.copy(), instance)


@dataclass
class ClassMatches:
    """클래스 하나의 매칭 결과"""
    tp_ious: list[float] = field(default_factory=list)
    fp: int = 0
    fn: int = 0

    @property
    def tp(self) -> int:
        return len(self.tp_ious)


def _segments(semantic: np.ndarray, instance: np.ndarray, class_id: int, is_thing: bool) -> dict[int, np.ndarray]:
    """클래스의 segment id → 포인트 인덱스. stuff 는 클래스 전체가 segment 하나."""
    in_class = semantic == class_id
    if not is_thing:
        idx = np.flatnonzero(in_class)
        return {1: idx} if idx.size else {}
    idx = np.flatnonzero(in_class & (instance > 0))
    if not idx.size:
        return {}
    ids = instance[idx]
    order = np.argsort(ids, kind="stable")
    unique, starts = np.unique(ids[order], return_index=True)
    return {int(u): s for u, s in zip(unique, np.split(idx[order], starts[1:]))}


def match_instances(
    gt: PointLabels,
    pred: PointLabels,
    taxonomy: ClassTaxonomy,
    min_points: int = 0,
) -> dict[int, ClassMatches]:
    """
    클래스별로 GT/예측 segment 를 IoU > 0.5 로 1:1 매칭합니다.

    ignore 클래스 GT 포인트는 양쪽에서 제거하고, IoU 는 해당 클래스 포인트 집합 위에서 계산합니다.
    매칭되지 않은 예측 segment 중 min_points 미만인 것은 FP 로 세지 않습니다.

    Parameters:
        gt (PointLabels): GT (작은 instance 필터 적용 후)
        pred (PointLabels): 예측
        taxonomy (ClassTaxonomy): thing/stuff 정의
        min_points (int): FP 로 셀 예측 segment 의 최소 크기

    Returns:
        dict[int, ClassMatches]: 평가 클래스별 TP IoU 목록, FP, FN
    """
    if len(gt) != len(pred):
        raise ValueError(f"gt has {len(gt)} points, prediction has {len(pred)}")
    keep = ~np.isin(gt.semantic, list(taxonomy.ignore))
    gt_sem, gt_inst = gt.semantic[keep], gt.instance[keep]
    pr_sem, pr_inst = pred.semantic[keep], pred.instance[keep]

    results: dict[int, ClassMatches] = {}
    for class_id in taxonomy.evaluated:
        is_thing = taxonomy.is_thing(class_id)
        gt_segs = _segments(gt_sem, gt_inst, class_id, is_thing)
        pr_segs = _segments(pr_sem, pr_inst, class_id, is_thing)
        matches = ClassMatches()
        matched_gt: set[int] = set()
        matched_pr: set[int] = set()
        for g_id, g_idx in gt_segs.items():
            for p_id, p_idx in pr_segs.items():
                if p_id in matched_pr:
                    continue
                inter = np.intersect1d(g_idx, p_idx, assume_unique=True).size
                if not inter:
                    continue
                iou = inter / (g_idx.size + p_idx.size - inter)
                if iou > MATCH_IOU:
                    matches.tp_ious.append(float(iou))
                    matched_gt.add(g_id)
                    matched_pr.add(p_id)
                    break
        matches.fn = len(gt_segs) - len(matched_gt)
        matches.fp = sum(
            1 for p_id, p_idx in pr_segs.items() if p_id not in matched_pr and p_idx.size >= min_points
        )
        results[class_id] = matches
    return results


@dataclass
class PanopticStats:
    """
    병합 가능한 누적 통계. `a + b` 는 결합/교환 법칙을 만족합니다.

    Attributes:
        num_classes (int): 클래스 수 (ignore 포함)
        tp (np.ndarray): 클래스별 TP 수
        iou_sum (np.ndarray): 클래스별 TP IoU 합
        fp (np.ndarray): 클래스별 FP 수
        fn (np.ndarray): 클래스별 FN 수
        confusion (np.ndarray): (C, C) 포인트 confusion matrix (행 GT, 열 예측)
    """
    num_classes: int
    tp: np.ndarray = None
    iou_sum: np.ndarray = None
    fp: np.ndarray = None
    fn: np.ndarray = None
    confusion: np.ndarray = None

    def __post_init__(self):
        c = self.num_classes
        self.tp = np.zeros(c, dtype=np.int64) if self.tp is None else self.tp
        self.iou_sum = np.zeros(c) if self.iou_sum is None else self.iou_sum
        self.fp = np.zeros(c, dtype=np.int64) if self.fp is None else self.fp
        self.fn = np.zeros(c, dtype=np.int64) if self.fn is None else self.fn
        self.confusion = np.zeros((c, c), dtype=np.int64) if self.confusion is None else self.confusion

    def __add__(self, other: "PanopticStats") -> "PanopticStats":
        if self.num_classes != other.num_classes:
            raise ValueError("cannot merge statistics of different taxonomies")
        return PanopticStats(
            self.num_classes,
            self.tp + other.tp,
            self.iou_sum + other.iou_sum,
            self.fp + other.fp,
            self.fn + other.fn,
            self.confusion + other.confusion,
        )


def accumulate(
    gt: PointLabels,
    pred: PointLabels,
    taxonomy: ClassTaxonomy,
    min_points: int = MIN_INSTANCE_POINTS,
) -> PanopticStats:
    """
    스캔 하나의 통계를 만듭니다 (GT 작은 instance 필터 → 매칭 → confusion matrix).
    """
    gt = filter_small_instances(gt, min_points)
    stats = PanopticStats(taxonomy.num_classes)
    for class_id, m in match_instances(gt, pred, taxonomy, min_points).items():
        stats.tp[class_id] = m.tp
        stats.iou_sum[class_id] = sum(m.tp_ious)
        stats.fp[class_id] = m.fp
        stats.fn[class_id] = m.fn
    stats.confusion = semantic_confusion(gt.semantic, pred.semantic, taxonomy)
    return stats


def semantic_confusion(gt_sem: np.ndarray, pred_sem: np.ndarray, taxonomy: ClassTaxonomy) -> np.ndarray:
    """
    ignore GT 포인트를 제외한 (C, C) confusion matrix.

    Raises:
        InvalidLabelError: 남은 GT 나 예측 id 가 [0, C) 밖일 때
    """
    n_cls = taxonomy.num_classes
    keep = ~np.isin(gt_sem, list(taxonomy.ignore))
    if not keep.any():
        return np.zeros((n_cls, n_cls), dtype=np.int64)
    gt, pred = gt_sem[keep], pred_sem[keep]
    for name, ids in (("ground truth", gt), ("prediction", pred)):
        bad = (ids < 0) | (ids >= n_cls)
        if bad.any():
            raise InvalidLabelError(f"{name} semantic ids outside [0, {n_cls}): {np.unique(ids[bad]).tolist()}")
    return confusion_matrix(gt, pred, labels=np.arange(n_cls)).astype(np.int64)


def _iou_from_confusion(confusion: np.ndarray) -> np.ndarray:
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def miou(gt_sem: np.ndarray, pred_sem: np.ndarray, taxonomy: ClassTaxonomy) -> tuple[np.ndarray, float]:
    """
    클래스별 IoU 와 GT 에 등장한 평가 클래스의 평균.

    Returns:
        tuple[np.ndarray, float]: (C,) 클래스별 IoU, mIoU
    """
    if gt_sem.shape != pred_sem.shape:
        raise ValueError(f"gt {gt_sem.shape} and prediction {pred_sem.shape} lengths differ")
    confusion = semantic_confusion(gt_sem, pred_sem, taxonomy)
    iou = _iou_from_confusion(confusion)
    present = [c for c in taxonomy.evaluated if confusion[c].sum() > 0]
    return iou, float(np.mean(iou[present])) if present else 0.0


@dataclass(frozen=True, eq=False)
class PanopticScores:
    """
    평가 결과.

    Attributes:
        per_class (pd.DataFrame): 클래스별 pq, sq, rq, iou, tp, fp, fn, kind
        pq, pq_dagger, rq, sq (float): 전체 평균
        pq_th, rq_th, sq_th (float): thing 평균
        pq_st, rq_st, sq_st (float): stuff 평균
        miou (float): 평균 IoU
    """
    per_class: pd.DataFrame
    pq: float
    pq_dagger: float
    rq: float
    sq: float
    pq_th: float
    rq_th: float
    sq_th: float
    pq_st: float
    rq_st: float
    sq_st: float
    miou: float

    AGGREGATES = ("pq", "pq_dagger", "rq", "sq", "pq_th", "rq_th", "sq_th", "pq_st", "rq_st", "sq_st", "miou")

    def aggregates(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in self.AGGREGATES}

    def to_dict(self) -> dict:
        """JSON 보고서용 dict"""
        return {
            **self.aggregates(),
            "per_class": self.per_class.to_dict(orient="records"),
        }


def _mean(values: pd.Series) -> float:
    return float(values.mean()) if len(values) else 0.0


def compute_scores(stats: PanopticStats, taxonomy: ClassTaxonomy) -> PanopticScores:
    """
    누적 통계에서 PQ/RQ/SQ, PQ†, mIoU 를 계산합니다.

    클래스별 SQ = TP IoU 평균, RQ = TP/(TP + ½FP + ½FN), PQ = SQ·RQ.
    GT 와 예측 모두에 없는 클래스는 평균에서 제외하고,
    PQ† 는 stuff 클래스의 PQ 를 semantic IoU 로 바꿔 평균합니다.

    Parameters:
        stats (PanopticStats): 누적 통계
        taxonomy (ClassTaxonomy): thing/stuff 정의

    Returns:
        PanopticScores: 클래스별 표와 집계값
    """
    iou = _iou_from_confusion(stats.confusion)
    rows = []
    for class_id in taxonomy.evaluated:
        tp, fp, fn = int(stats.tp[class_id]), int(stats.fp[class_id]), int(stats.fn[class_id])
        gt_points = int(stats.confusion[class_id].sum())
        pred_points = int(stats.confusion[:, class_id].sum())
        denom = tp + 0.5 * fp + 0.5 * fn
        present = (gt_points + pred_points > 0) and denom > 0
        sq = float(stats.iou_sum[class_id] / tp) if tp else 0.0
        rq = float(tp / denom) if denom else 0.0
        rows.append({
            "class_id": class_id,
            "name": taxonomy.class_names[class_id],
            "kind": "thing" if taxonomy.is_thing(class_id) else "stuff",
            "pq": sq * rq,
            "sq": sq,
            "rq": rq,
            "iou": float(iou[class_id]),
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "present": present,
            "in_gt": gt_points > 0,
        })
    table = pd.DataFrame(rows, columns=[
        "class_id", "name", "kind", "pq", "sq", "rq", "iou", "tp", "fp", "fn", "present", "in_gt",
    ])

    present = table[table["present"]]
    things = present[present["kind"] == "thing"]
    stuff = present[present["kind"] == "stuff"]
    dagger = pd.concat([things["pq"], stuff["iou"]])

    return PanopticScores(
        per_class=table,
        pq=_mean(present["pq"]),
        pq_dagger=_mean(dagger),
        rq=_mean(present["rq"]),
        sq=_mean(present["sq"]),
        pq_th=_mean(things["pq"]),
        rq_th=_mean(things["rq"]),
        sq_th=_mean(things["sq"]),
        pq_st=_mean(stuff["pq"]),
        rq_st=_mean(stuff["rq"]),
        sq_st=_mean(stuff["sq"]),
        miou=_mean(table.loc[table["in_gt"], "iou"]),
    )


def evaluate(
    gt: PointLabels, pred: PointLabels, taxonomy: ClassTaxonomy, min_points: int = MIN_INSTANCE_POINTS
) -> PanopticScores:
    """스캔 하나를 바로 평가합니다."""
    return compute_scores(accumulate(gt, pred, taxonomy, min_points), taxonomy)
