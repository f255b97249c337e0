"""Fair post-processing of score models with finite-sample fairness certificates."""
from .core import (
    DataError,
    Dataset,
    EmptyCellError,
    FairnessSpec,
    FairpostError,
    FittedFairClassifier,
    InfeasibleCalibrationError,
    Notion,
    Sample,
    Scenario,
    predict,
)

__version__ = "0.1.0"
