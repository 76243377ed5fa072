"""Initializes typegram, n-gram type recovery for decompiled code."""

from .calibrate import CalibrationMap, fit_isotonic
from .config import RunConfig, load_config
from .corpus.loader import load_corpus
from .engine.inference import Prediction, infer_function, infer_variable
from .engine.scoring import ScoringConfig
from .ngramdb.builder import build_ensemble
from .ngramdb.ensemble import DatabaseEnsemble, load_ensemble, save_ensemble

__all__ = [
    "CalibrationMap",
    "DatabaseEnsemble",
    "Prediction",
    "RunConfig",
    "ScoringConfig",
    "build_ensemble",
    "fit_isotonic",
    "infer_function",
    "infer_variable",
    "load_config",
    "load_corpus",
    "load_ensemble",
    "save_ensemble",
]
