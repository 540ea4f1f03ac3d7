"""Multimodal (RGB + point cloud) anomaly detection by crossmodal feature
mapping: preprocessing, lightweight mapping networks, discrepancy scoring,
and threshold-free evaluation."""

from .anomaly import AnomalyMap, aggregate, discrepancy, gaussian_smooth, l2_normalize, score_sample
from .features import ExtractorConfig, align, upsample_bilinear
from .mapping import (
    AdamState,
    MappingNetwork,
    MlpSpec,
    TrainConfig,
    adam_step,
    cosine_loss,
    gelu,
    loss_at_pixel,
    map_features,
    train,
)
from .metrics import EvalReport, ProCurve, aupro_at, connected_components, evaluate, pro_curve, roc_auc
from .preprocess import (
    Grouping,
    PlaneModel,
    farthest_point_sampling,
    fit_plane_ransac,
    group_points,
    interpolate_features,
    project_to_image,
    remove_background,
    smooth3x3,
)
from .synth import SyntheticSceneSpec, few_shot_subset, generate_scene
from .types import FeatureMap, MultimodalSample, PointFeatureSet, PointSet, make_sample, sample_to_pointset

__version__ = "0.1.0"
