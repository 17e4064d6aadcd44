"""
Utility modules for the LiDAR panoptic segmentation pipeline.

Modules:
- scan_io: SemanticKITTI-style .bin/.label codecs and class taxonomies
- range_view: spherical projection and point <-> pixel maps
- mlp: small fully connected networks shared by CLSA and SMA
- clsa: cross local spatial attention convolution (forward and backward)
- bev: foreground gathering, offset shifting and sparse BEV projection
- sma: sparse multi-directional attention
- clustering: BFS radius clustering, back-mapping and majority voting
- losses: repel / attract / L2 / weighted CE losses and gradient checks
- metrics: PQ, PQ†, RQ, SQ and mIoU
- synth: seeded synthetic scenes and oracle offsets
- config: pipeline configuration loading
- pipeline: batch run, sweep and directory evaluation
- narration / visualizer: text summaries and plotly figures
"""
from utils.errors import (
    SmacSegError,
    MalformedScanError,
    InvalidPointError,
    LabelCountError,
    EncodingOverflowError,
    DimensionError,
    InvalidKernelError,
    NumericError,
    InvalidLabelError,
    PackingError,
    ConfigError,
)
from utils.scan_io import (
    PointCloud,
    PointLabels,
    ClassTaxonomy,
    load_scan,
    write_scan,
    load_labels,
    write_predictions,
    read_scan_file,
    read_label_file,
    write_label_file,
    write_scan_file,
    load_taxonomy,
)
from utils.range_view import (
    RangeImage,
    spherical_project,
    coord_features,
    project_labels,
    unproject_labels,
)
from utils.mlp import Mlp, load_mlp, save_mlp, softmax
from utils.clsa import (
    KernelSpec,
    ClsaMlp,
    kernel_offsets,
    clsa_attention,
    apply_attention,
    clsa_forward,
    clsa_backward,
    conv2d,
)
from utils.bev import (
    ForegroundSet,
    BevGrid,
    foreground_mask,
    gather_foreground,
    shift_points,
    bev_project,
    load_offsets,
    save_offsets,
)
from utils.sma import (
    DirectionalComs,
    SmaMlp,
    ShiftedBev,
    direction_windows,
    directional_coms,
    sma_apply,
    identity_shift,
)
from utils.clustering import (
    bfs_cluster,
    partition_signature,
    backmap,
    fuse_majority,
)
from utils.losses import (
    InstanceGroups,
    LossResult,
    LossWeights,
    LossComponents,
    repel_loss,
    attract_loss,
    offset_l2_loss,
    weighted_ce,
    total_loss,
    numeric_gradient,
    instance_groups_from_cells,
)
from utils.metrics import (
    PanopticStats,
    PanopticScores,
    filter_small_instances,
    match_instances,
    accumulate,
    compute_scores,
    miou,
    evaluate,
)
from utils.synth import (
    SceneSpec,
    generate_scene,
    instance_centroids,
    oracle_offsets,
    write_scene,
)
from utils.config import PipelineConfig, load_config
from utils.pipeline import (
    ScanInput,
    ScanResult,
    PipelineReport,
    collect_scans,
    process_scan,
    bev_layout,
    run_pipeline,
    sweep,
    evaluate_dirs,
)
from utils.narration import summarize_scores, summarize_run, summarize_sweep
from utils.visualizer import plot_sweep, plot_per_class, plot_bev_clusters, save_figure

__all__ = [
    # Errors
    'SmacSegError',
    'MalformedScanError',
    'InvalidPointError',
    'LabelCountError',
    'EncodingOverflowError',
    'DimensionError',
    'InvalidKernelError',
    'NumericError',
    'InvalidLabelError',
    'PackingError',
    'ConfigError',
    # Scan IO
    'PointCloud',
    'PointLabels',
    'ClassTaxonomy',
    'load_scan',
    'write_scan',
    'load_labels',
    'write_predictions',
    'read_scan_file',
    'read_label_file',
    'write_label_file',
    'write_scan_file',
    'load_taxonomy',
    # Range view
    'RangeImage',
    'spherical_project',
    'coord_features',
    'project_labels',
    'unproject_labels',
    # MLP / CLSA
    'Mlp',
    'load_mlp',
    'save_mlp',
    'softmax',
    'KernelSpec',
    'ClsaMlp',
    'kernel_offsets',
    'clsa_attention',
    'apply_attention',
    'clsa_forward',
    'clsa_backward',
    'conv2d',
    # BEV / SMA / clustering
    'ForegroundSet',
    'BevGrid',
    'foreground_mask',
    'gather_foreground',
    'shift_points',
    'bev_project',
    'load_offsets',
    'save_offsets',
    'DirectionalComs',
    'SmaMlp',
    'ShiftedBev',
    'direction_windows',
    'directional_coms',
    'sma_apply',
    'identity_shift',
    'bfs_cluster',
    'partition_signature',
    'backmap',
    'fuse_majority',
    # Losses
    'InstanceGroups',
    'LossResult',
    'LossWeights',
    'LossComponents',
    'repel_loss',
    'attract_loss',
    'offset_l2_loss',
    'weighted_ce',
    'total_loss',
    'numeric_gradient',
    'instance_groups_from_cells',
    # Metrics
    'PanopticStats',
    'PanopticScores',
    'filter_small_instances',
    'match_instances',
    'accumulate',
    'compute_scores',
    'miou',
    'evaluate',
    # Synthetic scenes
    'SceneSpec',
    'generate_scene',
    'instance_centroids',
    'oracle_offsets',
    'write_scene',
    # Pipeline
    'PipelineConfig',
    'load_config',
    'ScanInput',
    'ScanResult',
    'PipelineReport',
    'collect_scans',
    'process_scan',
    'bev_layout',
    'run_pipeline',
    'sweep',
    'evaluate_dirs',
    'summarize_scores',
    'summarize_run',
    'summarize_sweep',
    'plot_sweep',
    'plot_per_class',
    'plot_bev_clusters',
    'save_figure',
]
