"""공용 pytest fixture: taxonomy, 고정 seed RNG, 소형 합성 장면."""
from pathlib import Path

import numpy as np
import pytest

from utils.config import PipelineConfig
from utils.scan_io import ClassTaxonomy, load_taxonomy
from utils.synth import SceneSpec

ROOT = Path(__file__).resolve().parents[1]
KITTI_TAXONOMY = ROOT / "config" / "semantic-kitti.yaml"
NUSCENES_TAXONOMY = ROOT / "config" / "nuscenes.yaml"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(20240601))


@pytest.fixture(scope="session")
def kitti() -> ClassTaxonomy:
    return load_taxonomy(KITTI_TAXONOMY)


@pytest.fixture
def toy_taxonomy() -> ClassTaxonomy:
    """0 unlabeled, 1 car, 2 bicycle, 3 person(thing), 4 truck(thing), 5 road, 6 building"""
    return ClassTaxonomy(
        name="toy",
        class_names=("unlabeled", "car", "bicycle", "person", "truck", "road", "building"),
        things=frozenset({1, 2, 3, 4}),
        stuff=frozenset({5, 6}),
    )


@pytest.fixture
def small_spec():
    """작은 센서 모델의 SceneSpec factory"""
    def make(seed: int = 0, **kwargs) -> SceneSpec:
        params = dict(seed=seed, num_instances=5, ground_points=300, height=64, width=2048)
        params.update(kwargs)
        return SceneSpec(**params)
    return make


@pytest.fixture
def synth_config(tmp_path):
    """합성 장면을 쓰는 PipelineConfig factory (출력은 tmp_path 아래)"""
    def make(**kwargs) -> PipelineConfig:
        params = dict(
            taxonomy=str(KITTI_TAXONOMY),
            synth_scenes=3,
            synth_instances=8,
            out_dir=str(tmp_path / "out"),
        )
        params.update(kwargs)
        return PipelineConfig(**params)
    return make
