"""Boosted regression trees for takeover time, with exact Shapley explanations."""

from .booster import Ensemble, Hyperparams, predict, predict_many, train
from .dataset import DEFAULT_SCHEMA, Dataset, GeneratorSpec, VariableSpec, parse_table, preprocess, summarize, synthesize
from .errors import TakeoverError
from .explain import brute_shap, force_data, global_importance, interactions, tree_shap
from .metrics import MetricsReport, report

__all__ = [
    "Dataset", "Ensemble", "GeneratorSpec", "Hyperparams", "MetricsReport", "DEFAULT_SCHEMA", "TakeoverError",
    "VariableSpec", "brute_shap", "force_data", "global_importance", "interactions", "parse_table",
    "predict", "predict_many", "preprocess", "report", "summarize", "synthesize", "train", "tree_shap",
]
__version__ = "0.1.0"
