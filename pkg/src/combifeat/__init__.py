"""Automatic combinatorial feature engineering for categorical log data."""

__version__ = "0.1.0"

from .dataset import Dataset, Schema, from_frame, load, sample, split_holdout
from .construct import (
    FeatureMatrix,
    FeatureSpec,
    FeatureTemplate,
    apply_template,
    parse_feature_name,
)
from .estimator import CombinatorialFeatureMiner
from .pipeline import RunConfig, load_config, plan_tasks, run

__all__ = [
    "CombinatorialFeatureMiner",
    "Dataset",
    "FeatureMatrix",
    "FeatureSpec",
    "FeatureTemplate",
    "RunConfig",
    "Schema",
    "apply_template",
    "from_frame",
    "load",
    "load_config",
    "parse_feature_name",
    "plan_tasks",
    "run",
    "sample",
    "split_holdout",
    "__version__",
]
