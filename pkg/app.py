"""
LiDAR panoptic clustering batch command-line front end.

LiDAR 스캔(또는 시드 고정 합성 장면)을 range view 로 투영하고, thing 포인트를
center offset 으로 이동시켜 BEV grid 에서 SMA + BFS 로 instance 를 묶은 뒤
PQ / RQ / SQ / mIoU 로 평가합니다.

사용 예:
    python app.py run --config config/pipeline.env --grid 0.5 --kernel 7
    python app.py sweep --config config/pipeline.env --grid-list 0.3 0.5 1.0 --kernel-list 3 7
    python app.py eval --gt data/08 --pred output/run
    python app.py generate --config config/pipeline.env --out data/synthetic --count 20
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from utils.bev import save_offsets
from utils.config import load_config
from utils.errors import ConfigError
from utils.narration import summarize_run, summarize_scores, summarize_sweep
from utils.pipeline import (
    bev_layout,
    collect_scans,
    evaluate_dirs,
    load_sma_mlp,
    run_pipeline,
    scene_spec,
    sweep,
)
from utils.range_view import spherical_project
from utils.scan_io import load_taxonomy
from utils.synth import generate_scene, oracle_offsets, scene_rng, write_scene
from utils.visualizer import plot_bev_clusters, plot_per_class, plot_sweep, save_figure

logger = logging.getLogger("smacseg")

DEFAULT_CONFIG = "config/pipeline.env"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# 종료 코드
EXIT_OK = 0
EXIT_SCAN_FAILURES = 1
EXIT_CONFIG_ERROR = 2

# CLI 인자 → 설정 키
RUN_OVERRIDES = {
    "radius": "RADIUS",
    "grid": "CELL_SIZE",
    "kernel": "KERNEL",
    "offsets": "OFFSETS",
    "noise": "OFFSET_NOISE",
    "out": "OUT_DIR",
    "workers": "WORKERS",
    "scan_dir": "SCAN_DIR",
    "clusterer": "CLUSTERER",
}

# .env 파일 로드 (존재하는 경우, SMACSEG_* 환경 변수 제공)
load_dotenv()


def _overrides(args: argparse.Namespace) -> dict:
    return {key: getattr(args, name) for name, key in RUN_OVERRIDES.items() if getattr(args, name, None) is not None}


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False, default=str)


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    scans = collect_scans(config)
    report = run_pipeline(config, scans, progress=not args.quiet)

    print(summarize_run(report.table))
    print(summarize_scores(report.scores))
    if args.plot:
        if report.scores is not None:
            path = save_figure(plot_per_class(report.scores), Path(config.out_dir) / "per_class.html")
            print(f"클래스별 차트: {path}")
        first = next((scan for scan, r in zip(scans, report.results) if r.status == "ok"), None)
        if first is not None:
            positions, cluster_ids = bev_layout(first, config, load_taxonomy(config.taxonomy), load_sma_mlp(config))
            fig = plot_bev_clusters(positions, cluster_ids, title=f"BEV clusters: {first.name}")
            path = save_figure(fig, Path(config.out_dir) / "bev_clusters.html")
            print(f"BEV cluster 그림: {path}")
    print(f"결과 저장 위치: {config.out_dir}")
    return EXIT_SCAN_FAILURES if report.num_failed else EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    grid = {"cell_size": args.grid_list, "kernel": args.kernel_list}
    if args.radius_list:
        grid["radius"] = args.radius_list
    table = sweep(config, grid, progress=not args.quiet)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "sweep.csv", index=False)
    save_figure(plot_sweep(table, args.metric), out_dir / "sweep.html")

    print(table.to_string(index=False))
    print(summarize_sweep(table, args.metric))
    return EXIT_SCAN_FAILURES if (table["status"] != "ok").any() else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    scores, table = evaluate_dirs(args.gt, args.pred, taxonomy, args.min_points, args.remap)
    print(summarize_scores(scores))
    if args.out:
        _write_json(Path(args.out), {
            "metrics": scores.to_dict() if scores else None,
            "scans": table.astype(object).where(table.notna(), None).to_dict(orient="records"),
        })
    return EXIT_SCAN_FAILURES if (table["status"] != "ok").any() else EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    config = load_config(args.config, {k: v for k, v in {
        "SYNTH_INSTANCES": args.instances,
        "SYNTH_SEPARATION": args.separation,
    }.items() if v is not None})
    taxonomy = load_taxonomy(config.taxonomy)
    out = Path(args.out)
    for seed in range(args.seed, args.seed + args.count):
        spec = scene_spec(config, seed, taxonomy)
        cloud, labels, centroids = generate_scene(spec)
        name = f"{seed:06d}"
        write_scene(out, name, cloud, labels)
        if args.offsets:
            image = spherical_project(cloud, spec.height, spec.width, spec.fov_up, spec.fov_down)
            offsets = oracle_offsets(cloud, labels, centroids, image, args.noise, scene_rng(seed))
            save_offsets(out / "offsets" / f"{name}.bin", offsets)
        logger.info("scene %s: %d points, %d instances", name, cloud.count, len(centroids))
    print(f"{args.count}개 합성 장면 저장 위치: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smacseg", description="LiDAR panoptic clustering pipeline")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=DEFAULT_CONFIG, help="KEY=value 설정 파일")
        p.add_argument("--out", help="출력 디렉터리 (OUT_DIR)")
        p.add_argument("--offsets", help="oracle | none | file:<dir>")
        p.add_argument("--noise", type=float, help="oracle offset noise σ (m)")
        p.add_argument("--workers", type=int, help="병렬 worker 수")
        p.add_argument("--scan-dir", help="velodyne/ 와 labels/ 를 가진 입력 디렉터리")
        p.add_argument("--clusterer", choices=["smac", "bfs"])
        p.add_argument("--quiet", action="store_true", help="진행 표시 끄기")

    run = sub.add_parser("run", help="파이프라인 1회 실행")
    add_common(run)
    run.add_argument("--radius", type=float, help="클러스터링 반경 r (m)")
    run.add_argument("--grid", type=float, help="BEV 격자 크기 (m)")
    run.add_argument("--kernel", type=int, help="SMA window 크기 K")
    run.add_argument("--plot", action="store_true", help="클래스별 PQ 차트와 첫 스캔의 BEV cluster 그림을 HTML 로 저장")
    run.set_defaults(handler=cmd_run)

    sw = sub.add_parser("sweep", help="격자 크기 × kernel 크기 sweep")
    add_common(sw)
    sw.add_argument("--radius", type=float, help="클러스터링 반경 r (m)")
    sw.add_argument("--grid-list", type=float, nargs="+", default=[0.3, 0.5, 1.0])
    sw.add_argument("--kernel-list", type=int, nargs="+", default=[3, 7])
    sw.add_argument("--radius-list", type=float, nargs="+")
    sw.add_argument("--metric", default="pq_th", help="차트/요약에 쓸 metric 열")
    sw.set_defaults(handler=cmd_sweep, grid=None, kernel=None)

    ev = sub.add_parser("eval", help="GT / 예측 .label 디렉터리 평가")
    ev.add_argument("--gt", required=True, help="GT 디렉터리 (labels/ 또는 *.label)")
    ev.add_argument("--pred", required=True, help="예측 디렉터리 (predictions/ 또는 *.label)")
    ev.add_argument("--taxonomy", default="config/semantic-kitti.yaml")
    ev.add_argument("--min-points", type=int, default=20)
    ev.add_argument("--remap", action="store_true", help="GT 에 learning_map 적용")
    ev.add_argument("--out", help="JSON 보고서 경로")
    ev.set_defaults(handler=cmd_eval)

    gen = sub.add_parser("generate", help="합성 장면을 .bin/.label 로 저장")
    gen.add_argument("--config", default=DEFAULT_CONFIG)
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--instances", type=int)
    gen.add_argument("--separation", type=float)
    gen.add_argument("--offsets", action="store_true", help="oracle offset 파일도 저장 (offsets/<name>.bin)")
    gen.add_argument("--noise", type=float, default=0.0)
    gen.set_defaults(handler=cmd_generate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return args.handler(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"설정 오류: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
