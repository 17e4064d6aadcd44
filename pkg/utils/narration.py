"""
Natural language summaries of panoptic scores, runs and sweeps.
"""
import pandas as pd

from utils.metrics import PanopticScores
from utils.pipeline import sweep_parameters


def _grade(pq: float) -> tuple[str, str]:
    """PQ 수준별 표현"""
    if pq >= 0.95:
        return "거의 완벽한", "GT 분할을 사실상 그대로 복원했습니다"
    elif pq >= 0.7:
        return "높은", "대부분의 instance 가 올바르게 분리되었습니다"
    elif pq >= 0.4:
        return "중간 수준의", "일부 instance 가 합쳐지거나 쪼개졌습니다"
    return "낮은", "많은 instance 가 잘못 묶였습니다"


def summarize_scores(scores: PanopticScores | None) -> str:
    """
    평가 결과를 한 문단으로 요약합니다.

    Parameters:
        scores (PanopticScores | None): 누적 점수

    Returns:
        str: 요약 문단
    """
    if scores is None:
        return "평가할 수 있는 스캔이 없습니다."

    level, description = _grade(scores.pq)
    summary = (
        f"전체 PQ 는 {scores.pq:.3f} 로 {level} 성능이며, {description}. "
        f"thing 클래스는 PQ {scores.pq_th:.3f} (RQ {scores.rq_th:.3f}, SQ {scores.sq_th:.3f}), "
        f"stuff 클래스는 PQ {scores.pq_st:.3f} 입니다. "
        f"PQ† 는 {scores.pq_dagger:.3f}, mIoU 는 {scores.miou:.3f} 입니다."
    )

    table = scores.per_class[scores.per_class["present"] & (scores.per_class["kind"] == "thing")]
    if len(table) > 1:
        worst = table.sort_values(["pq", "class_id"]).iloc[0]
        summary += f" 가장 낮은 thing 클래스는 '{worst['name']}' (PQ {worst['pq']:.3f}) 입니다."
    return summary


def summarize_run(table: pd.DataFrame) -> str:
    """스캔별 표 (scans.csv) 로 실행 결과를 요약합니다."""
    if table.empty:
        return "처리한 스캔이 없습니다."
    failed = table[table["status"] != "ok"]
    summary = f"{len(table)}개 스캔 중 {len(table) - len(failed)}개를 처리했습니다."
    if len(failed):
        summary += f" 실패한 스캔 {len(failed)}개: " + ", ".join(failed["scan"].astype(str).head(5))
        if len(failed) > 5:
            summary += " 외"
        summary += "."
    ok = table[table["status"] == "ok"]
    if len(ok):
        summary += f" 스캔당 평균 {ok['num_instances'].mean():.1f}개의 instance 를 찾았습니다."
    return summary


def summarize_sweep(table: pd.DataFrame, metric: str = "pq_th") -> str:
    """
    sweep 표에서 가장 좋은 조합과 최악의 조합을 설명합니다.

    Parameters:
        table (pd.DataFrame): sweep() 결과
        metric (str): 비교할 metric 열

    Returns:
        str: 요약 문장
    """
    if table.empty or metric not in table.columns:
        return f"'{metric}' 결과가 없어 sweep 을 요약할 수 없습니다."

    ok = table[(table["status"] == "ok") & table[metric].notna()]
    failed = len(table) - len(ok)
    if ok.empty:
        return f"{len(table)}개 조합이 모두 실패했습니다."

    params = sweep_parameters(table)

    def describe(row: pd.Series) -> str:
        return ", ".join(f"{p}={row[p]}" for p in params)

    best = ok.loc[ok[metric].idxmax()]
    worst = ok.loc[ok[metric].idxmin()]
    summary = (
        f"{len(table)}개 조합 중 {describe(best)} 에서 {metric} 가 {best[metric]:.3f} 로 가장 높고, "
        f"{describe(worst)} 에서 {worst[metric]:.3f} 로 가장 낮습니다."
    )
    if failed:
        summary += f" {failed}개 조합은 실패했습니다."
    return summary
