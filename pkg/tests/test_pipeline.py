import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import app
from utils.mlp import save_mlp
from utils.pipeline import (
    SCAN_COLUMNS,
    ScanInput,
    bev_layout,
    collect_scans,
    evaluate_dirs,
    process_scan,
    run_pipeline,
    scene_spec,
    sweep,
    sweep_parameters,
)
from utils.scan_io import load_taxonomy, read_label_file
from utils.sma import SmaMlp
from utils.synth import generate_scene, write_scene

KITTI_TAXONOMY = Path(__file__).resolve().parents[1] / "config" / "semantic-kitti.yaml"


def write_dataset(root: Path, config, seeds) -> Path:
    taxonomy = load_taxonomy(config.taxonomy)
    for seed in seeds:
        cloud, labels, _ = generate_scene(scene_spec(config, seed, taxonomy))
        write_scene(root, f"{seed:06d}", cloud, labels)
    return root


def test_ideal_offsets_recover_partition(synth_config):
    report = run_pipeline(synth_config(synth_instances=12))
    assert report.num_failed == 0
    assert report.scores.pq_th == 1.0
    assert report.scores.pq == 1.0
    assert (report.table["pq_th"] == 1.0).all()


def test_bfs_baseline_also_recovers_ideal_input(synth_config):
    report = run_pipeline(synth_config(clusterer="bfs", synth_scenes=2))
    assert report.scores.pq_th == 1.0


@pytest.mark.slow
@pytest.mark.parametrize("instances", [10, 25, 40])
def test_small_noise_recovers_partition(synth_config, instances):
    config = synth_config(
        synth_scenes=17, synth_instances=instances, synth_seed=100 * instances,
        synth_separation=5.0, offset_noise=0.2,
    )
    report = run_pipeline(config)
    assert report.num_failed == 0
    assert report.scores.pq_th == 1.0


def test_large_noise_degrades(synth_config):
    clean = run_pipeline(synth_config(synth_scenes=20, out_dir=str(Path(synth_config().out_dir) / "clean")))
    noisy = run_pipeline(synth_config(synth_scenes=20, offset_noise=2.0))
    assert noisy.scores.pq_th < clean.scores.pq_th


def test_empty_scan_list(synth_config):
    config = synth_config(synth_scenes=0)
    report = run_pipeline(config)
    assert report.results == []
    assert report.scores is None
    assert list(report.table.columns) == SCAN_COLUMNS
    data = json.loads((Path(config.out_dir) / "report.json").read_text(encoding="utf-8"))
    assert data["num_scans"] == 0
    assert data["metrics"] is None


def test_outputs_written(synth_config):
    config = synth_config(synth_scenes=2, synth_instances=5)
    report = run_pipeline(config)
    out = Path(config.out_dir)
    assert sorted(p.name for p in (out / "predictions").iterdir()) == ["synth_000000.label", "synth_000001.label"]
    assert (out / "scans.csv").exists()
    assert (out / "timings.csv").exists()
    data = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert "out_dir" not in data["config"]
    assert data["metrics"]["pq_th"] == report.scores.pq_th
    result = report.results[0]
    pred = read_label_file(out / "predictions" / "synth_000000.label", result.num_points)
    assert np.unique(pred.instance[pred.instance > 0]).size == result.num_instances
    assert result.losses["l2"] == 0.0
    assert result.losses["total_loss"] >= 0.0


def test_radius_growth_never_splits(synth_config):
    counts = []
    for radius in (0.3, 1.2, 5.0, 20.0, 100.0):
        report = run_pipeline(synth_config(synth_scenes=2, radius=radius, offset_noise=0.5), write_outputs=False)
        counts.append(int(report.table["num_instances"].sum()))
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == 2


def test_worker_count_does_not_change_outputs(synth_config, tmp_path):
    base = synth_config(synth_scenes=4, synth_instances=6, offset_noise=0.3)
    serial = replace(base, out_dir=str(tmp_path / "serial"))
    parallel = replace(base, out_dir=str(tmp_path / "parallel"), workers=2)
    run_pipeline(serial)
    run_pipeline(parallel)
    assert (tmp_path / "serial" / "report.json").read_bytes() == (tmp_path / "parallel" / "report.json").read_bytes()
    for path in sorted((tmp_path / "serial" / "predictions").iterdir()):
        assert path.read_bytes() == (tmp_path / "parallel" / "predictions" / path.name).read_bytes()


def test_failed_scans_are_recorded(synth_config, tmp_path):
    config = synth_config(synth_instances=5)
    root = write_dataset(tmp_path / "data", config, [0])
    (root / "velodyne" / "000001.bin").write_bytes(b"\x00" * 17)
    (root / "velodyne" / "000002.bin").write_bytes((root / "velodyne" / "000000.bin").read_bytes())

    report = run_pipeline(replace(config, scan_dir=str(root)))
    status = dict(zip(report.table["scan"], report.table["status"]))
    assert status == {"000000": "ok", "000001": "failed", "000002": "failed"}
    assert report.num_failed == 2
    assert "16" in report.table.set_index("scan").loc["000001", "error"]
    assert report.scores.pq_th == 1.0


def test_collect_scans_from_directory(synth_config, tmp_path):
    config = synth_config(synth_instances=3)
    root = write_dataset(tmp_path / "data", config, [3, 1])
    scans = collect_scans(replace(config, scan_dir=str(root)))
    assert [s.name for s in scans] == ["000001", "000003"]
    assert all(s.label_path is not None for s in scans)
    with pytest.raises(FileNotFoundError):
        collect_scans(replace(config, scan_dir=str(tmp_path / "missing")))


def test_process_scan_reports_missing_file(synth_config, kitti):
    config = synth_config()
    result = process_scan(ScanInput("ghost", Path(config.out_dir) / "ghost.bin"), config, kitti, SmaMlp.zeros(5))
    assert result.status == "failed"
    assert result.stats is None


def test_bev_layout_matches_processed_scan(synth_config, kitti):
    config = synth_config(synth_scenes=1, offset_noise=0.3)
    scan = collect_scans(config)[0]
    result = process_scan(scan, config, kitti, SmaMlp.zeros(5))
    positions, cluster_ids = bev_layout(scan, config, kitti, SmaMlp.zeros(5))
    assert positions.shape == (result.num_cells, 2)
    assert sorted(set(cluster_ids.tolist())) == list(range(1, cluster_ids.max() + 1))

    with pytest.raises(OSError):
        bev_layout(ScanInput("ghost", Path(config.out_dir) / "ghost.bin"), config, kitti, SmaMlp.zeros(5))


def test_learned_sma_weights(synth_config, tmp_path, rng):
    weights = tmp_path / "sma.bin"
    save_mlp(weights, SmaMlp.random(5, rng).mlp)
    report = run_pipeline(synth_config(synth_scenes=2, sma_weights=str(weights)))
    assert report.num_failed == 0
    assert report.scores.pq_th == 1.0


def test_sweep_grid(synth_config):
    base = synth_config(synth_scenes=2, synth_instances=6)
    table = sweep(base, {"cell_size": [0.3, 0.5, 1.0], "kernel": [3, 7]})
    assert len(table) == 6
    assert sweep_parameters(table) == ["cell_size", "kernel"]
    assert (table["status"] == "ok").all()
    assert table[["cell_size", "kernel"]].drop_duplicates().shape[0] == 6
    assert table["pq_th"].between(0, 1).all()
    assert (Path(base.out_dir) / "cell_size=0.3_kernel=7" / "report.json").exists()


def test_single_cell_sweep_matches_run(synth_config):
    base = synth_config(synth_scenes=2, synth_instances=6, offset_noise=0.4)
    table = sweep(base, {"radius": [0.8]})
    report = run_pipeline(replace(base, radius=0.8), write_outputs=False)
    assert table.loc[0, "pq"] == pytest.approx(report.scores.pq)
    assert table.loc[0, "miou"] == pytest.approx(report.scores.miou)


def test_sweep_marks_invalid_cells(synth_config):
    table = sweep(synth_config(synth_scenes=1, synth_instances=3), {"kernel": [3, 0]})
    assert table["status"].tolist() == ["ok", "failed"]
    assert np.isnan(table.loc[1, "pq"])


def test_sweep_rejects_empty_grid(synth_config):
    with pytest.raises(ValueError):
        sweep(synth_config(), {"kernel": []})


def test_evaluate_dirs_matches_run(synth_config, tmp_path, kitti):
    config = synth_config(synth_instances=6)
    root = write_dataset(tmp_path / "data", config, [0, 1])
    run_config = replace(config, scan_dir=str(root), offset_noise=0.5)
    report = run_pipeline(run_config)
    scores, table = evaluate_dirs(root, run_config.out_dir, kitti)
    assert (table["status"] == "ok").all()
    assert scores.aggregates() == pytest.approx(report.scores.aggregates())

    (Path(run_config.out_dir) / "predictions" / "000001.label").unlink()
    scores, table = evaluate_dirs(root, run_config.out_dir, kitti)
    assert table["status"].tolist() == ["ok", "failed"]
    assert scores is not None


def write_env(path: Path, **values) -> Path:
    settings = {"TAXONOMY": KITTI_TAXONOMY, "SYNTH_SCENES": 2, "SYNTH_INSTANCES": 5, **values}
    lines = [f"{k}={v}" for k, v in settings.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_cli_run(tmp_path):
    env = write_env(tmp_path / "run.env")
    out = tmp_path / "cli"
    assert app.main(["run", "--config", str(env), "--out", str(out), "--quiet", "--plot"]) == app.EXIT_OK
    assert (out / "report.json").exists()
    assert (out / "per_class.html").exists()
    assert "synth_000000" in (out / "bev_clusters.html").read_text(encoding="utf-8")


def test_cli_config_errors(tmp_path):
    assert app.main(["run", "--config", str(tmp_path / "missing.env"), "--quiet"]) == app.EXIT_CONFIG_ERROR
    env = write_env(tmp_path / "bad.env", KERNEL=0)
    assert app.main(["run", "--config", str(env), "--quiet"]) == app.EXIT_CONFIG_ERROR
    env = write_env(tmp_path / "run.env")
    missing = tmp_path / "nowhere"
    assert app.main(["run", "--config", str(env), "--scan-dir", str(missing), "--quiet"]) == app.EXIT_CONFIG_ERROR


def test_cli_reports_scan_failures(tmp_path):
    data = tmp_path / "data"
    (data / "velodyne").mkdir(parents=True)
    (data / "velodyne" / "000000.bin").write_bytes(b"\x01" * 17)
    env = write_env(tmp_path / "run.env")
    code = app.main(["run", "--config", str(env), "--scan-dir", str(data), "--out", str(tmp_path / "o"), "--quiet"])
    assert code == app.EXIT_SCAN_FAILURES


def test_cli_generate_then_run_with_offset_files(tmp_path):
    env = write_env(tmp_path / "run.env")
    data = tmp_path / "data"
    assert app.main(["generate", "--config", str(env), "--out", str(data), "--count", "2", "--offsets"]) == 0
    assert sorted(p.name for p in (data / "offsets").iterdir()) == ["000000.bin", "000001.bin"]
    out = tmp_path / "out"
    code = app.main([
        "run", "--config", str(env), "--scan-dir", str(data), "--offsets", f"file:{data / 'offsets'}",
        "--out", str(out), "--quiet",
    ])
    assert code == app.EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["metrics"]["pq_th"] == 1.0

    eval_json = tmp_path / "eval.json"
    code = app.main(["eval", "--gt", str(data), "--pred", str(out), "--taxonomy", str(KITTI_TAXONOMY),
                     "--out", str(eval_json)])
    assert code == app.EXIT_OK
    assert json.loads(eval_json.read_text(encoding="utf-8"))["metrics"]["pq_th"] == 1.0


def test_cli_sweep(tmp_path):
    env = write_env(tmp_path / "run.env", SYNTH_SCENES=1)
    out = tmp_path / "sweep"
    code = app.main(["sweep", "--config", str(env), "--out", str(out), "--grid-list", "0.5", "1.0",
                     "--kernel-list", "3", "--quiet"])
    assert code == app.EXIT_OK
    assert (out / "sweep.csv").exists()
    assert (out / "sweep.html").exists()
