from .forest import (
    EncodedMatrix,
    ForestModel,
    HyperParams,
    PredictionError,
    TrainingError,
    fit_encoded,
    fit_forest,
    predict_proba,
)
from .search import (
    FAST_SPACE,
    SearchSpace,
    cross_val_auroc,
    random_search,
    stratified_folds,
)

__all__ = [
    "EncodedMatrix", "ForestModel", "HyperParams", "PredictionError", "TrainingError",
    "fit_encoded", "fit_forest", "predict_proba", "FAST_SPACE", "SearchSpace",
    "cross_val_auroc", "random_search", "stratified_folds",
]
