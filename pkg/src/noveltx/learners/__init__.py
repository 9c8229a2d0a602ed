from .forest import ForestModel, ForestParams, RegressionTree, rf_predict, rf_train, select_features
from .logistic import LogisticFit, logistic_fit
from .metrics import mse

__all__ = [
    "ForestModel", "ForestParams", "RegressionTree", "rf_predict", "rf_train",
    "select_features", "LogisticFit", "logistic_fit", "mse",
]
