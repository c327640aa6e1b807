"""Statistical world of the surveillance scenario: hypotheses, powers, sensors.

Received samples are i.i.d. circularly-symmetric complex Gaussian with
per-sample power ``noise_power + gain * P`` where ``P`` is 0 (no drone), the
authorized drone power, or the unauthorized drone power. The block energy
``T = mean(|y|^2)`` is then Gamma(N, mu/N) distributed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng


class Hypothesis(enum.IntEnum):
    NO_DRONE = 0
    AUTHORIZED = 1
    UNAUTHORIZED = 2

    @property
    def short(self) -> str:
        return f"H{int(self)}"


class DrawRule(enum.Enum):
    FIXED = "fixed"
    UNIFORM_OVER_RANGE = "uniform"


@dataclass(frozen=True)
class SignalModel:
    noise_power: float
    authorized_power: float
    unauthorized_power_range: tuple[float, float]
    samples_per_block: int

    def __post_init__(self):
        lo, hi = (float(x) for x in self.unauthorized_power_range)
        object.__setattr__(self, "unauthorized_power_range", (lo, hi))
        if not self.noise_power > 0 or not math.isfinite(self.noise_power):
            raise ValueError(f"noise_power must be a positive finite power, got {self.noise_power}")
        if not self.authorized_power >= 0 or not math.isfinite(self.authorized_power):
            raise ValueError(f"authorized_power must be >= 0, got {self.authorized_power}")
        if not (0 <= lo <= hi) or not math.isfinite(hi):
            raise ValueError(f"unauthorized power range must satisfy 0 <= min <= max, got {(lo, hi)}")
        if int(self.samples_per_block) != self.samples_per_block or self.samples_per_block < 1:
            raise ValueError(f"samples_per_block must be an integer >= 1, got {self.samples_per_block}")
        object.__setattr__(self, "samples_per_block", int(self.samples_per_block))

    @property
    def p2_min(self) -> float:
        return self.unauthorized_power_range[0]

    @property
    def p2_max(self) -> float:
        return self.unauthorized_power_range[1]

    @property
    def p2_mid(self) -> float:
        return 0.5 * (self.p2_min + self.p2_max)

    def total_power(self, hypothesis, gain=1.0, p2=None):
        """Per-sample power mu under ``hypothesis`` at a sensor with ``gain``."""
        hypothesis = Hypothesis(hypothesis)
        if hypothesis is Hypothesis.NO_DRONE:
            return self.noise_power
        if hypothesis is Hypothesis.AUTHORIZED:
            return self.noise_power + gain * self.authorized_power
        if p2 is None:
            raise ValueError("unauthorized power required under UNAUTHORIZED")
        return self.noise_power + gain * p2

    def scaled(self, c):
        """All powers multiplied by ``c``."""
        return SignalModel(
            self.noise_power * c,
            self.authorized_power * c,
            (self.p2_min * c, self.p2_max * c),
            self.samples_per_block,
        )

    def with_samples(self, n):
        return SignalModel(self.noise_power, self.authorized_power, self.unauthorized_power_range, n)


@dataclass(frozen=True)
class SensorNetwork:
    per_sensor_gain: tuple[float, ...]
    coverage_radius_m: float = 10_000.0

    def __post_init__(self):
        gains = tuple(float(g) for g in self.per_sensor_gain)
        object.__setattr__(self, "per_sensor_gain", gains)
        if not gains:
            raise ValueError("a sensor network needs at least one sensor")
        if any(not (g >= 0) or not math.isfinite(g) for g in gains):
            raise ValueError(f"sensor gains must be finite and >= 0, got {gains}")
        if not any(g > 0 for g in gains):
            raise ValueError("at least one sensor gain must be positive")

    @classmethod
    def homogeneous(cls, sensor_count, gain=1.0, coverage_radius_m=10_000.0):
        return cls((gain,) * int(sensor_count), coverage_radius_m)

    @property
    def sensor_count(self) -> int:
        return len(self.per_sensor_gain)

    @property
    def is_homogeneous(self) -> bool:
        return len(set(self.per_sensor_gain)) == 1

    @property
    def gains(self) -> np.ndarray:
        return np.asarray(self.per_sensor_gain)


@dataclass(frozen=True)
class ScenarioTruth:
    """Ground truth for one experiment row.

    Under UNAUTHORIZED with ``FIXED`` the power is ``true_unauthorized_power``;
    with ``UNIFORM_OVER_RANGE`` a fresh power is drawn per trial and shared by
    every sensor of that trial.
    """

    hypothesis: Hypothesis
    true_unauthorized_power: float | None = None
    draw_rule: DrawRule = DrawRule.FIXED

    def __post_init__(self):
        object.__setattr__(self, "hypothesis", Hypothesis(self.hypothesis))
        object.__setattr__(self, "draw_rule", DrawRule(self.draw_rule))
        if self.hypothesis is not Hypothesis.UNAUTHORIZED:
            if self.true_unauthorized_power is not None:
                raise ValueError("an unauthorized power only exists under UNAUTHORIZED")
        elif self.draw_rule is DrawRule.FIXED and self.true_unauthorized_power is None:
            raise ValueError("FIXED draw rule needs true_unauthorized_power under UNAUTHORIZED")
        elif self.draw_rule is DrawRule.UNIFORM_OVER_RANGE and self.true_unauthorized_power is not None:
            raise ValueError("UNIFORM_OVER_RANGE draws the power per trial; do not fix it")

    @classmethod
    def for_hypothesis(cls, hypothesis, model, draw_rule=DrawRule.FIXED, p2=None):
        hypothesis = Hypothesis(hypothesis)
        draw_rule = DrawRule(draw_rule)
        if hypothesis is not Hypothesis.UNAUTHORIZED:
            return cls(hypothesis)
        if draw_rule is DrawRule.UNIFORM_OVER_RANGE:
            return cls(hypothesis, None, draw_rule)
        return cls(hypothesis, model.p2_mid if p2 is None else float(p2), draw_rule)

    def validate(self, model: SignalModel):
        p = self.true_unauthorized_power
        if p is not None and not (model.p2_min <= p <= model.p2_max):
            raise ValueError(f"unauthorized power {p} outside range {model.unauthorized_power_range}")


@dataclass(frozen=True)
class SampleBlock:
    sensor_index: int
    samples: np.ndarray = field(repr=False)
    energy: float

    @property
    def n_samples(self) -> int:
        return len(self.samples)


def energy_statistic(block_or_samples) -> float:
    """Average sample energy (1/N) * sum |y_n|^2."""
    y = block_or_samples.samples if isinstance(block_or_samples, SampleBlock) else block_or_samples
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty block")
    return float(np.mean(y.real * y.real + y.imag * y.imag))


def trial_powers(model, truth, key, n_trials, trial0=0):
    """Unauthorized power for each trial (None outside UNAUTHORIZED)."""
    if truth.hypothesis is not Hypothesis.UNAUTHORIZED:
        return None
    if truth.draw_rule is DrawRule.FIXED:
        return np.full(n_trials, truth.true_unauthorized_power)
    u = rng.trial_uniforms(key, n_trials, trial0, tag=rng.TAG_POWER)
    return model.p2_min + u * (model.p2_max - model.p2_min)


def generate_block(model, network, truth, sensor_index, seed, trial_index) -> SampleBlock:
    """One sensor's block of complex baseband samples for trial ``trial_index``.

    Bit-identical for identical ``(seed, trial_index, sensor_index)``.
    """
    if not 0 <= sensor_index < network.sensor_count:
        raise IndexError(f"sensor_index {sensor_index} out of range for {network.sensor_count} sensors")
    truth.validate(model)
    p2 = trial_powers(model, truth, seed, 1, trial0=trial_index)
    mu = model.total_power(truth.hypothesis, network.per_sensor_gain[sensor_index],
                           None if p2 is None else float(p2[0]))
    u1, u2 = rng.block_uniforms(seed, trial_index, sensor_index, model.samples_per_block)
    radius = np.sqrt(-mu * np.log(u1))
    samples = radius * np.exp(2j * np.pi * u2)
    return SampleBlock(sensor_index, samples, energy_statistic(samples))


def draw_statistics(model, network, truth, key, n_trials, trial0=0):
    """Energy statistics for ``n_trials`` trials, shape ``(n_trials, M)``.

    Same counters as :func:`generate_block`, without materialising the samples.
    Also returns the per-trial unauthorized powers (or None).
    """
    truth.validate(model)
    g = network.gains
    e = rng.exp_means(key, n_trials, network.sensor_count, model.samples_per_block, trial0=trial0)
    p2 = trial_powers(model, truth, key, n_trials, trial0)
    if p2 is None:
        mu = model.total_power(truth.hypothesis, g)
        return mu * e, None
    mu = model.noise_power + g[None, :] * p2[:, None]
    return mu * e, p2
