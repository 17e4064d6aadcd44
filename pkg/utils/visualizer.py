"""
Plotly charts for sweep tables, per-class scores and BEV cluster layouts.
"""
import os
from pathlib import Path

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from utils.metrics import PanopticScores
from utils.pipeline import sweep_parameters

# Color palette for consistent styling
PLOT_COLORS = {
    'thing': '#636EFA',
    'stuff': '#00CC96',
    'failed': '#EF553B',
}


def plot_sweep(table: pd.DataFrame, metric: str = "pq_th", title: str | None = None) -> go.Figure:
    """
    sweep 결과를 막대 그래프로 그립니다.

    첫 번째 파라미터 열이 x 축, 두 번째 파라미터 열이 막대 색 그룹이 됩니다.

    Parameters:
        table (pd.DataFrame): sweep() 결과
        metric (str): y 축 metric 열
        title (str | None): 차트 제목 (기본: 자동 생성)

    Returns:
        plotly.graph_objects.Figure: grouped bar chart
    """
    params = sweep_parameters(table)
    if not params:
        raise ValueError("sweep table has no parameter columns")
    if title is None:
        title = f"{metric} by {' × '.join(params)}"

    data = table.copy()
    data[metric] = data[metric].fillna(0.0)
    data[params[0]] = data[params[0]].astype(str)
    color = None
    if len(params) > 1:
        color = params[1]
        data[color] = data[color].astype(str)

    fig = px.bar(
        data,
        x=params[0],
        y=metric,
        color=color,
        barmode='group',
        title=title,
        hover_data=[p for p in params[2:]] + ["status"],
    )
    fig.update_layout(yaxis_range=[0, 1], hovermode='closest')
    return fig


def plot_per_class(scores: PanopticScores, metric: str = "pq", title: str | None = None) -> go.Figure:
    """
    클래스별 점수 막대 그래프 (등장한 클래스만, thing/stuff 색 구분).
    """
    table = scores.per_class[scores.per_class["present"]]
    fig = px.bar(
        table,
        x="name",
        y=metric,
        color="kind",
        color_discrete_map={'thing': PLOT_COLORS['thing'], 'stuff': PLOT_COLORS['stuff']},
        title=title or f"Per-class {metric.upper()}",
        hover_data=["tp", "fp", "fn", "iou"],
    )
    fig.update_layout(yaxis_range=[0, 1], xaxis_title=None)
    return fig


def plot_bev_clusters(positions: np.ndarray, cluster_ids: np.ndarray, title: str = "BEV clusters") -> go.Figure:
    """
    점유 셀의 C_f 를 cluster id 로 색칠한 산점도.

    Parameters:
        positions (np.ndarray): (n, 2) 셀 위치 (m)
        cluster_ids (np.ndarray): (n,) cluster id

    Returns:
        plotly.graph_objects.Figure: 동일 축척 scatter plot
    """
    data = pd.DataFrame({
        "x": positions[:, 0],
        "y": positions[:, 1],
        "cluster": cluster_ids.astype(str),
    })
    fig = px.scatter(data, x="x", y="y", color="cluster", title=title, opacity=0.8)
    fig.update_yaxes(scaleanchor="x", scaleratio=1)
    fig.update_layout(showlegend=False)
    return fig


def save_figure(fig: go.Figure, file_path: str | os.PathLike) -> Path:
    """figure 를 독립 실행형 HTML 로 저장합니다."""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(path, include_plotlyjs="cdn")
    return path
