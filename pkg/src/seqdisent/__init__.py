"""Sequential VAE that separates static and dynamic factors with contrastive views."""

from .data import LabeledDataset, ShapeMotionSpec, TimeSeriesSpec, gen_shape_motion, gen_timeseries, load_dataset, \
    save_dataset
from .distributions import DiagonalGaussian, GaussianSequence, kl_diag_gaussian, kl_sequence, pairwise_kl_matrix
from .model import ModelConfig, SequenceVAE
from .objective import LossWeights, info_nce, mi_mws_static_dynamic, total_objective
from .trainer import TrainConfig, load_model, resume, train
from .views import NegativeMode, ViewConfig, ViewTrick, partition_thirds

__version__ = "0.1.0"

__all__ = [
    "DiagonalGaussian", "GaussianSequence", "LabeledDataset", "LossWeights", "ModelConfig", "NegativeMode",
    "SequenceVAE", "ShapeMotionSpec", "TimeSeriesSpec", "TrainConfig", "ViewConfig", "ViewTrick",
    "gen_shape_motion", "gen_timeseries", "info_nce", "kl_diag_gaussian", "kl_sequence", "load_dataset",
    "load_model", "mi_mws_static_dynamic", "pairwise_kl_matrix", "partition_thirds", "resume", "save_dataset",
    "total_objective", "train",
]
