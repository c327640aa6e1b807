"""Fusion-center layer: one global decision from M sensors.

Soft fusion sums per-sensor log-likelihoods (the unauthorized power is shared
by all sensors, one drone). Hard fusion combines local votes with a counting
rule; ties at the fusion center go to the larger hypothesis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .detectors import (
    CalibratedDetector,
    CalibrationReport,
    InfeasibleConstraints,
    Method,
    Scheme,
    StatisticLikelihood,
    _genie_prior,
    argmax_decision,
    calibrate,
    default_truth,
    log_likelihoods,
    region_probabilities,
    solve_offsets,
    truth_nodes,
)
from .signal import Hypothesis, SampleBlock, energy_statistic


class FusionKind(enum.Enum):
    SOFT_LIKELIHOOD_SUM = "soft"
    HARD_MAJORITY_H2_PRIORITY = "hard_majority"
    HARD_K_OUT_OF_M = "hard_k_out_of_m"


@dataclass(frozen=True)
class FusionRule:
    kind: FusionKind = FusionKind.SOFT_LIKELIHOOD_SUM
    k: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FusionKind(self.kind))
        if self.kind is FusionKind.HARD_K_OUT_OF_M:
            if self.k is not None and self.k < 1:
                raise ValueError(f"k must be >= 1, got {self.k}")
        elif self.k is not None:
            raise ValueError("k only applies to HARD_K_OUT_OF_M")

    @property
    def is_hard(self) -> bool:
        return self.kind is not FusionKind.SOFT_LIKELIHOOD_SUM

    @property
    def label(self) -> str:
        if self.kind is FusionKind.HARD_K_OUT_OF_M and self.k is not None:
            return f"{self.kind.value}:{self.k}"
        return self.kind.value

    def check(self, m):
        if self.kind is FusionKind.HARD_K_OUT_OF_M and not (self.k is not None and 1 <= self.k <= m):
            raise ValueError(f"k={self.k} out of range for {m} sensors")


@dataclass(frozen=True)
class GlobalDecision:
    hypothesis: Hypothesis
    fused_statistic: float | None = None
    local_votes: tuple[Hypothesis, ...] | None = None


def rule_outcome(counts, rule):
    """Global decision from vote counts ``(..., 3)`` (columns H0, H1, H2)."""
    counts = np.asarray(counts)
    c0, c1, c2 = counts[..., 0], counts[..., 1], counts[..., 2]
    if rule.kind is FusionKind.HARD_MAJORITY_H2_PRIORITY:
        # plurality, ties towards the larger hypothesis
        return 2 - np.argmax(counts[..., ::-1], axis=-1)
    if rule.kind is FusionKind.HARD_K_OUT_OF_M:
        return np.where(c2 >= rule.k, 2, np.where(c1 >= c0, 1, 0))
    raise ValueError("soft fusion has no vote rule")


def vote_counts(votes):
    votes = np.asarray(votes)
    return np.stack([(votes == h).sum(axis=-1) for h in range(3)], axis=-1)


def fuse_hard(votes, rule: FusionRule) -> GlobalDecision:
    """Global decision from a list of local votes."""
    if not rule.is_hard:
        raise ValueError("fuse_hard needs a HARD fusion rule")
    votes = tuple(Hypothesis(v) for v in votes)
    if not votes:
        raise ValueError("no votes")
    rule.check(len(votes))
    out = rule_outcome(vote_counts([int(v) for v in votes]), rule)
    return GlobalDecision(Hypothesis(int(out)), None, votes)


def _ordered_statistics(blocks, m):
    if len(blocks) != m:
        raise ValueError(f"expected {m} blocks, got {len(blocks)}")
    by_index = sorted(blocks, key=lambda b: b.sensor_index)
    if [b.sensor_index for b in by_index] != list(range(m)):
        raise ValueError("blocks must cover sensors 0..M-1 exactly once")
    return np.array([b.energy if isinstance(b, SampleBlock) else energy_statistic(b) for b in by_index])


def fuse_soft(blocks, model, network, detector: CalibratedDetector, genie_p2=None) -> GlobalDecision:
    """Global decision from the sum of per-sensor log-likelihoods."""
    if not any(g > 0 for g in network.per_sensor_gain):
        raise ValueError("all sensor gains are zero")
    if tuple(network.per_sensor_gain) != tuple(detector.gains):
        raise ValueError("detector was calibrated for a different network")
    if detector.scheme is Scheme.GENIE and genie_p2 is None:
        raise ValueError("genie scheme requires genie_p2")
    if detector.scheme is Scheme.GLRT and genie_p2 is not None:
        raise ValueError("GLRT scheme forbids genie_p2")
    t = _ordered_statistics(blocks, network.sensor_count)
    ll = log_likelihoods(t[None, :], model, network.per_sensor_gain, detector.scheme, genie_p2)
    h = int(argmax_decision(ll, detector.offset_h0, detector.offset_h1)[0])
    return GlobalDecision(Hypothesis(h), float(t.mean()), None)


@dataclass(frozen=True)
class HardFusionDetector:
    """Identical local detectors (one offset pair, per-sensor gains) plus a vote rule."""

    scheme: Scheme
    model: object
    gains: tuple[float, ...]
    offset_h0: float
    offset_h1: float
    rule: FusionRule
    genie_p2: float | str | None = None
    report: CalibrationReport | None = field(default=None, compare=False)

    def local_votes(self, stats):
        stats = np.asarray(stats, dtype=float)
        votes = np.empty(stats.shape, dtype=np.int64)
        for k, g in enumerate(self.gains):
            ll = log_likelihoods(stats[:, k:k + 1], self.model, (g,), self.scheme, self.genie_p2)
            votes[:, k] = argmax_decision(ll, self.offset_h0, self.offset_h1)
        return votes

    def decide_batch(self, stats):
        return rule_outcome(vote_counts(self.local_votes(stats)), self.rule)


def _count_distribution(vote_probs):
    """DP over sensors: probability of each (c0, c1) vote count, c2 implied."""
    m = len(vote_probs)
    dist = np.zeros((m + 1, m + 1))
    dist[0, 0] = 1.0
    for p0, p1, p2 in vote_probs:
        new = dist * p2
        new[1:, :] += dist[:-1, :] * p0
        new[:, 1:] += dist[:, :-1] * p1
        dist = new
    return dist


def global_row(vote_probs, rule):
    """``Pr(global decision = j)`` given each sensor's local decision law."""
    m = len(vote_probs)
    dist = _count_distribution(vote_probs)
    c0, c1 = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    c2 = m - c0 - c1
    valid = c2 >= 0
    counts = np.stack([c0, c1, np.where(valid, c2, 0)], axis=-1)
    out = rule_outcome(counts, rule)
    return np.array([dist[valid & (out == j)].sum() for j in range(3)])


class _HardRates:
    def __init__(self, model, gains, scheme, genie_p2, truth, rule):
        self.model = model
        self.gains = tuple(gains)
        self.rule = rule
        self.liks = {g: StatisticLikelihood(model, g, scheme, genie_p2) for g in set(self.gains)}
        self.nodes, self.weights = truth_nodes(model, truth)

    def confusion(self, l0, l1, l2=0.0):
        n = self.model.samples_per_block
        s2 = self.model.noise_power
        regs = {g: lik.regions(l0, l1, l2) for g, lik in self.liks.items()}
        rows = [
            global_row([region_probabilities(regs[g], n, s2) for g in self.gains], self.rule),
            global_row(
                [region_probabilities(regs[g], n, s2 + g * self.model.authorized_power) for g in self.gains],
                self.rule,
            ),
        ]
        h2 = np.zeros(3)
        for p, w in zip(self.nodes, self.weights):
            h2 += w * global_row([region_probabilities(regs[g], n, s2 + g * p) for g in self.gains], self.rule)
        rows.append(h2)
        return np.array(rows)

    def rates(self, l0, l1, l2=0.0):
        c = self.confusion(l0, l1, l2)
        return c[0, 0], c[1, 1]


def calibrate_hard(model, network, scheme, constraints, rule, truth=None, max_iter=100):
    """Local offsets (and k, if unset) meeting the constraints on the global decision.

    Global rates are exact: local region probabilities from the Gamma CDF,
    combined by a DP over vote counts. With ``k=None`` every k is tried and
    the best feasible one kept.
    """
    scheme = Scheme(scheme)
    truth = default_truth(model) if truth is None else truth
    genie_p2 = _genie_prior(truth) if scheme is Scheme.GENIE else None
    m = network.sensor_count
    candidates = [rule]
    if rule.kind is FusionKind.HARD_K_OUT_OF_M and rule.k is None:
        candidates = [FusionRule(FusionKind.HARD_K_OUT_OF_M, k) for k in range(1, m + 1)]
    best = None
    last_error = None
    for cand in candidates:
        cand.check(m)
        hr = _HardRates(model, network.per_sensor_gain, scheme, genie_p2, truth, cand)
        try:
            l0, l1, it, solver = solve_offsets(hr.rates, constraints.alpha, constraints.beta, max_iter=max_iter)
        except InfeasibleConstraints as exc:
            last_error = exc
            continue
        conf = hr.confusion(l0, l1)
        report = CalibrationReport(
            Method.ANALYTIC_GAMMA.value, 1 - conf[0, 0], 1 - conf[1, 1], conf[2, 2], iterations=it, solver=solver
        )
        det = HardFusionDetector(scheme, model, network.per_sensor_gain, l0, l1, cand, genie_p2, report)
        if best is None or report.p_h2 > best.report.p_h2 + 1e-12:
            best = det
    if best is None:
        raise InfeasibleConstraints(f"no {rule.label} configuration meets the constraints: {last_error}")
    return best


def calibrate_fusion(model, network, scheme, constraints, rule, method=Method.ANALYTIC_GAMMA, seed=0,
                     truth=None, trials=100_000):
    """Calibrate the global decision for any fusion rule."""
    if rule.is_hard:
        return calibrate_hard(model, network, scheme, constraints, rule, truth)
    if not network.is_homogeneous and Method(method) is Method.ANALYTIC_GAMMA:
        method = Method.MONTE_CARLO
    return calibrate(model, network, scheme, constraints, method, seed=seed, truth=truth, trials=trials,
                     tolerance=1e-9 if Method(method) is Method.ANALYTIC_GAMMA else 1e-3)


def fusion_label(detector) -> str:
    if isinstance(detector, HardFusionDetector):
        return detector.rule.label
    return FusionKind.SOFT_LIKELIHOOD_SUM.value
