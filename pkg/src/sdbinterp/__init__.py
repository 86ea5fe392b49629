"""Spatial interpolation with neighbour covariates, a fuzzy-graph embedding
and an adaptive neuro-fuzzy regressor, plus IDW, Kriging and GP baselines."""

from .errors import (ConfigError, DataError, DegenerateDimensionError, ExportError,
                     InsufficientDataError, NumericalError, ParseError, RejectionError, SdbError)
from .observations import ObservationSet, load_observations
from .pipeline import FieldGrid, GridSpec, HybridModel, PipelineConfig, fit_pipeline, predict_grid

__version__ = "0.1.0"
