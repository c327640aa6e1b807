"""Monte Carlo harness: confusion matrices and the detection-vs-constraint sweeps.

Thresholds are always calibrated on one key branch and evaluated on another,
so every reported rate is out-of-sample. Trials are generated from
counter-based streams, so results do not depend on chunking or threads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .detectors import (
    PURPOSE_CALIBRATION,
    PURPOSE_EVALUATION,
    CalibrationError,
    ConstraintPair,
    DiscreteSurrogate,
    InfeasibleConstraints,
    Method,
    Scheme,
    _binomial_half_width,
)
from .fusion import FusionRule, calibrate_fusion, fusion_label
from .signal import DrawRule, Hypothesis, ScenarioTruth, SensorNetwork, draw_statistics

log = logging.getLogger(__name__)

CHUNK_TRIALS = 65_536


@dataclass(frozen=True)
class ConfusionMatrix:
    """``entries[i][j] = Pr(decide Hj | true Hi)``; rows never simulated are None."""

    counts: tuple[tuple[int, int, int], ...]
    trial_counts: tuple[int, int, int]

    @property
    def entries(self):
        return tuple(
            None if n == 0 else tuple(c / n for c in row) for row, n in zip(self.counts, self.trial_counts)
        )

    @property
    def half_widths(self):
        return tuple(
            None if n == 0 else tuple(_binomial_half_width(c / n, n) for c in row)
            for row, n in zip(self.counts, self.trial_counts)
        )

    def row(self, hypothesis):
        return self.entries[int(hypothesis)]

    def as_array(self):
        """3x3 array with NaN for rows that were not simulated."""
        return np.array([[math.nan] * 3 if r is None else list(r) for r in self.entries])

    def _miss(self, i):
        n = self.trial_counts[i]
        if n == 0:
            return None
        return (n - self.counts[i][i]) / n

    @property
    def fa_h0(self):
        """1 - Pr(H0|H0) = Pr(H1|H0) + Pr(H2|H0)."""
        return self._miss(0)

    @property
    def fa_h1(self):
        return self._miss(1)

    @property
    def p_h2(self):
        n = self.trial_counts[2]
        return None if n == 0 else self.counts[2][2] / n

    def half_width(self, i, j):
        n = self.trial_counts[i]
        return None if n == 0 else _binomial_half_width(self.counts[i][j] / n, n)

    def fa_half_width(self, i):
        n = self.trial_counts[i]
        return None if n == 0 else _binomial_half_width(self._miss(i), n)


def _truth_for(hyp, model, truth):
    if hyp is Hypothesis.UNAUTHORIZED:
        return truth if truth is not None else ScenarioTruth.for_hypothesis(hyp, model)
    return ScenarioTruth(hyp)


def _normalise_mix(truth_mix):
    if isinstance(truth_mix, dict):
        mix = [int(truth_mix.get(h, truth_mix.get(int(h), 0))) for h in Hypothesis]
    elif isinstance(truth_mix, int):
        mix = [truth_mix] * 3
    else:
        mix = [int(x) for x in truth_mix]
    if len(mix) != 3 or any(n < 0 for n in mix) or not any(n > 0 for n in mix):
        raise ValueError("truth_mix needs three non-negative trial counts, at least one positive")
    return mix


def evaluate(model, network, detectors, truth_mix, seed, truth=None, point=()):
    """Confusion matrices of several detectors on the same simulated trials."""
    mix = _normalise_mix(truth_mix)
    counts = np.zeros((len(detectors), 3, 3), dtype=np.int64)
    for hyp in Hypothesis:
        n = mix[int(hyp)]
        key = rng.derive_key(seed, PURPOSE_EVALUATION, *point, int(hyp))
        t = None if isinstance(model, DiscreteSurrogate) else _truth_for(hyp, model, truth)
        for start in range(0, n, CHUNK_TRIALS):
            size = min(CHUNK_TRIALS, n - start)
            if isinstance(model, DiscreteSurrogate):
                stats = model.draw_levels(hyp, key, size, trial0=start)
            else:
                stats, _ = draw_statistics(model, network, t, key, size, trial0=start)
            for d, det in enumerate(detectors):
                counts[d, int(hyp)] += np.bincount(det.decide_batch(stats), minlength=3)
    return [
        ConfusionMatrix(tuple(tuple(int(x) for x in row) for row in c), tuple(mix)) for c in counts
    ]


def run_trials(model, network, detector, truth_mix, seed, truth=None) -> ConfusionMatrix:
    """Simulate ``truth_mix`` trials per hypothesis and tabulate the decisions.

    ``model`` may also be a :class:`DiscreteSurrogate` (network is then ignored).
    """
    return evaluate(model, network, [detector], truth_mix, seed, truth)[0]


@dataclass(frozen=True)
class SweepPoint:
    scheme: str
    alpha_beta: float
    n_samples: int
    m_sensors: int
    fusion_rule: str
    p_h2: float
    half_width: float
    fa_h0: float
    fa_h1: float
    fa_h0_half_width: float
    fa_h1_half_width: float
    trials: int
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    axes: tuple[str, ...]
    points: tuple[SweepPoint, ...]
    seed: int
    trials: int
    schemes: tuple[str, ...]
    fusion_rule: str
    meta: dict = field(default_factory=dict, compare=False)

    def series(self, **fixed):
        return [p for p in self.points if all(getattr(p, k) == v for k, v in fixed.items())]


def _point(scheme, ab, n, m, rule, cm=None, error=None, trials=0):
    if cm is None:
        nan = math.nan
        return SweepPoint(scheme, ab, n, m, rule, nan, nan, nan, nan, nan, nan, trials, error)
    return SweepPoint(
        scheme, ab, n, m, rule, cm.p_h2, cm.half_width(2, 2), cm.fa_h0, cm.fa_h1,
        cm.fa_half_width(0), cm.fa_half_width(1), trials,
    )


def _check_grid(values, name, lo=None, hi=None):
    values = list(values)
    if not values:
        raise ValueError(f"{name} grid is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} grid must be strictly increasing")
    if lo is not None and values[0] <= lo:
        raise ValueError(f"{name} grid values must exceed {lo}")
    if hi is not None and values[-1] > hi:
        raise ValueError(f"{name} grid values must be <= {hi}")
    return values


def _network_of_size(template, m):
    g = template.per_sensor_gain
    return SensorNetwork(tuple(g[i % len(g)] for i in range(m)), template.coverage_radius_m)


def sweep_tradeoff(model, network, schemes, grid, n_samples, trials, seed, truth=None,
                   method=Method.ANALYTIC_GAMMA, rule=None) -> SweepResult:
    """Pr(H2|H2) against alpha = beta for each scheme and block length.

    ``n_samples`` may be a single N or a list of them. All schemes and grid
    points at a given N are evaluated on the same simulated trials.
    """
    grid = _check_grid(grid, "alpha=beta", lo=0.0, hi=1.0)
    n_values = _check_grid([n_samples] if isinstance(n_samples, int) else n_samples, "N")
    schemes = [Scheme(s) for s in schemes]
    rule = FusionRule() if rule is None else rule
    m = network.sensor_count
    points = []
    for scheme in schemes:
        for n in n_values:
            mod = model.with_samples(n)
            dets, slots = [], []
            for ab in grid:
                try:
                    det = calibrate_fusion(mod, network, scheme, ConstraintPair(ab, ab), rule, method,
                                           seed=rng.derive_key(seed, PURPOSE_CALIBRATION, n, m), truth=truth)
                except (InfeasibleConstraints, CalibrationError) as exc:
                    log.warning("N=%d alpha=beta=%g %s: %s", n, ab, scheme.value, exc)
                    slots.append(_point(scheme.value, ab, n, m, rule.label, error=str(exc), trials=trials))
                    continue
                dets.append(det)
                slots.append((ab, det))
            cms = iter(evaluate(mod, network, dets, trials, seed, truth, point=(n, m)) if dets else [])
            for s in slots:
                if isinstance(s, SweepPoint):
                    points.append(s)
                else:
                    ab, det = s
                    points.append(_point(scheme.value, ab, n, m, fusion_label(det), next(cms), trials=trials))
    return SweepResult(("alpha_beta", "n_samples"), tuple(points), seed, trials,
                       tuple(s.value for s in schemes), rule.label)


def sweep_sensors_samples(model, network, m_grid, n_grid, constraints, scheme, rule, trials, seed,
                          truth=None, method=Method.ANALYTIC_GAMMA) -> SweepResult:
    """Global Pr(H2|H2) over the sensors x samples lattice, recalibrated per point.

    Networks of size M repeat the template's gains cyclically.
    """
    m_grid = _check_grid(m_grid, "M", lo=0)
    n_grid = _check_grid(n_grid, "N", lo=0)
    scheme = Scheme(scheme)
    rule = FusionRule() if rule is None else rule
    ab = constraints.alpha if constraints.alpha == constraints.beta else math.nan
    points = []
    for m in m_grid:
        net = _network_of_size(network, m)
        for n in n_grid:
            mod = model.with_samples(n)
            try:
                det = calibrate_fusion(mod, net, scheme, constraints, rule, method,
                                       seed=rng.derive_key(seed, PURPOSE_CALIBRATION, n, m), truth=truth)
            except (InfeasibleConstraints, CalibrationError, ValueError) as exc:
                log.warning("M=%d N=%d: %s", m, n, exc)
                points.append(_point(scheme.value, ab, n, m, rule.label, error=str(exc), trials=trials))
                continue
            cm = evaluate(mod, net, [det], trials, seed, truth, point=(n, m))[0]
            points.append(_point(scheme.value, ab, n, m, fusion_label(det), cm, trials=trials))
    return SweepResult(("m_sensors", "n_samples"), tuple(points), seed, trials, (scheme.value,), rule.label,
                       {"alpha": constraints.alpha, "beta": constraints.beta})


def default_truth_for(model, draw_rule=DrawRule.FIXED, p2=None):
    return ScenarioTruth.for_hypothesis(Hypothesis.UNAUTHORIZED, model, draw_rule, p2)
