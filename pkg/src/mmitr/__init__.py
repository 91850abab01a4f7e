"""Matching-based individualized treatment rules for multi-arm observational data."""

from .data import Dataset, DataError, Rule, Schema, Standardizer, load_dataset, save_dataset
from .gps import GpsModel, fit_multinomial, predict_gps
from .matching import MatchedSets, build_matched_sets
from .labeling import Instances, WeightingFunction, build_instances, evaluate_weight
from .ramsvm import KernelSpec, RamsvmModel, SolverError, fit, fit_path, simplex_vertices
from .survival import SurvivalForest, fit_survival_forest, impute_dataset, mean_residual_impute
from .pipeline import METHODS, PipelineConfig, fit_rule
from .evaluation import cross_validate_lambda, empirical_value, matched_value, misclassification

__version__ = "0.1.0"
