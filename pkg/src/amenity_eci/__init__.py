"""Amenity-decay clusters, economic complexity and heat-wave mobility regressions."""

from .clusters import Cluster, ClusterDetector, ClusterParams, detect_clusters
from .complexity import (
    ComplexityScores,
    EconomicComplexity,
    complexity_table,
    eci_eigen,
    eci_reflections,
)
from .econometrics import (
    ModelSpec,
    RegressionResult,
    RobustOLS,
    build_panel,
    fit_ols,
    model_eq3,
    model_eq4,
    render_table,
)
from .model import ClusterAttribute, MobilityCount, StorePoint, WeatherRecord
from .spatial import AmenityField, AmenityFieldTransformer, DecayParams, amenity_field

__version__ = "0.1.0"

__all__ = [
    "AmenityField",
    "AmenityFieldTransformer",
    "Cluster",
    "ClusterAttribute",
    "ClusterDetector",
    "ClusterParams",
    "ComplexityScores",
    "DecayParams",
    "EconomicComplexity",
    "MobilityCount",
    "ModelSpec",
    "RegressionResult",
    "RobustOLS",
    "StorePoint",
    "WeatherRecord",
    "amenity_field",
    "build_panel",
    "complexity_table",
    "detect_clusters",
    "eci_eigen",
    "eci_reflections",
    "fit_ols",
    "model_eq3",
    "model_eq4",
    "render_table",
]
