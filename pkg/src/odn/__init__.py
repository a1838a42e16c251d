"""Open-set recognition on feature vectors.

Unknown categories are detected with per-category triplet thresholds, labeled
by a teacher oracle, and added to a linear softmax layer one at a time using
blended column initialisation and per-column learning rates.
"""
from .classifier import (
    ClassifierState,
    TrainConfig,
    activations,
    allometry_factors,
    emphasis_init,
    expand,
    predict,
    sgd_step_allometric,
    softmax,
    train_initial,
)
from .config import SessionConfig
from .dataset import Dataset, FeatureSample, OpenSplit, balanced_subset, load_csv, make_open_split, save_csv, synth_blobs
from .evaluation import MetricsReport, evaluate_closed, evaluate_open
from .openworld import SessionLog, TeacherOracle, run_open_world
from .thresholds import DetectionOutcome, Rule, TripletThresholds, calibrate, detect, second_max

__version__ = "0.1.0"
