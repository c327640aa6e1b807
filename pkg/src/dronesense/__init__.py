"""Ternary drone-detection simulator: no drone / authorized / unauthorized.

Energy-statistic detectors (genie-aided and GLRT) calibrated under two
false-alarm constraints, multi-sensor fusion, a CUSUM onset monitor and a
Monte Carlo evaluation harness.
"""

__version__ = "0.1.0"

from .detectors import (
    CalibratedDetector,
    ConstraintPair,
    InfeasibleConstraints,
    Method,
    Scheme,
    calibrate,
    decide,
    genie_log_likelihoods,
    glrt_profile,
)
from .eval import ConfusionMatrix, SweepResult, run_trials, sweep_sensors_samples, sweep_tradeoff
from .fusion import FusionKind, FusionRule, GlobalDecision, fuse_hard, fuse_soft
from .quickest import CusumState, cusum_step, run_length_metrics
from .signal import (
    DrawRule,
    Hypothesis,
    SampleBlock,
    ScenarioTruth,
    SensorNetwork,
    SignalModel,
    energy_statistic,
    generate_block,
)
