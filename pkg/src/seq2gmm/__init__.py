"""Unsupervised group anomaly detection for quasi-periodic time series.

The pipeline segments every series with piecewise-linear regression,
compresses each segment with a recurrent encoder and an attentive decoder,
fits a Gaussian mixture to the latent codes and scores segments by their
mixture energy (negative log density). Series scores aggregate segment
energies; high-energy segments are reported as anomaly shapelets.
"""
from .dataio import ANOMALY, NORMAL, Dataset, SynthConfig, TimeSeries, load_ucr_dataset, synthesize_dataset
from .errors import ConfigError, MetricError, NumericalError, ParseError, Seq2GMMError
from .metrics import auc, aupr
from .mixture import GmmParams, em_refine, kmeans, sample_energy
from .scoring import localize_shapelets, score_dataset, score_segments, score_series
from .segmentation import SegmentationModel, optimize_breakpoints, select_num_segments
from .trainer import TrainedModel, TrainingConfig, TrainingTrace, surrogate_train

__version__ = "0.1.0"

__all__ = [
    "ANOMALY", "NORMAL", "Dataset", "SynthConfig", "TimeSeries", "load_ucr_dataset", "synthesize_dataset",
    "ConfigError", "MetricError", "NumericalError", "ParseError", "Seq2GMMError",
    "auc", "aupr",
    "GmmParams", "em_refine", "kmeans", "sample_energy",
    "localize_shapelets", "score_dataset", "score_segments", "score_series",
    "SegmentationModel", "optimize_breakpoints", "select_num_segments",
    "TrainedModel", "TrainingConfig", "TrainingTrace", "surrogate_train",
]
