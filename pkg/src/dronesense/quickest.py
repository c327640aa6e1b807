"""CUSUM monitor for the onset of a drone on a stream of per-sample energies.

Per-sample energies ``|y_n|^2`` are exponential with mean ``mu0`` before the
change and ``mu1`` after it, so the log-likelihood-ratio increment is
``log(mu0/mu1) + x * (1/mu0 - 1/mu1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit, prange

from . import rng
from .rng import _philox, _unit

NEVER = None
_TAG = np.uint64(rng.TAG_CUSUM)


@dataclass(frozen=True)
class CusumState:
    threshold_h: float
    pre_change_power: float
    post_change_power: float
    statistic: float = 0.0
    time_index: int = 0
    alarm_time: int | None = None

    def __post_init__(self):
        if not self.threshold_h > 0:
            raise ValueError(f"threshold_h must be > 0, got {self.threshold_h}")
        if not self.pre_change_power > 0:
            raise ValueError("pre-change power must be positive")
        if not self.post_change_power > self.pre_change_power:
            raise ValueError("post-change power must exceed pre-change power")
        if self.statistic < 0:
            raise ValueError("CUSUM statistic is non-negative")

    @property
    def drift_constant(self) -> float:
        return math.log(self.pre_change_power / self.post_change_power)

    @property
    def energy_weight(self) -> float:
        return 1.0 / self.pre_change_power - 1.0 / self.post_change_power

    def increment(self, sample_energy) -> float:
        return self.drift_constant + sample_energy * self.energy_weight


def cusum_step(state: CusumState, sample_energy: float) -> CusumState:
    """Advance one sample; identity once an alarm has been raised."""
    if sample_energy < 0:
        raise ValueError("sample energy must be >= 0")
    if state.alarm_time is not None:
        return state
    s = max(0.0, state.statistic + state.increment(sample_energy))
    t = state.time_index + 1
    return replace(state, statistic=s, time_index=t, alarm_time=t if s >= state.threshold_h else None)


def kl_exponential(mu1, mu0):
    """KL divergence of Exp(mean mu1) from Exp(mean mu0)."""
    r = mu1 / mu0
    return r - 1.0 - math.log(r)


def wald_delay(h, mu0, mu1):
    """First-order detection delay approximation h / KL."""
    return h / kl_exponential(mu1, mu0)


@njit(cache=True)
def _stream_energies(k0, k1, stream, n, mu_pre, mu_post, change_time):
    out = np.empty(n)
    for i in range(n):
        t = i + 1
        w0, w1, w2, w3 = _philox(np.uint64(t), stream, np.uint64(0), _TAG, k0, k1)
        mu = mu_pre if t < change_time else mu_post
        out[i] = -mu * np.log(_unit(w0, w1))
    return out


def stream_energies(key, stream, n_steps, pre_power, post_power, change_time=None):
    """The per-sample energies the run-length kernel sees for one stream."""
    k0, k1 = rng.split_key(key)
    ct = n_steps + 1 if change_time is None else int(change_time)
    return _stream_energies(np.uint64(k0), np.uint64(k1), np.uint64(stream), int(n_steps),
                            float(pre_power), float(post_power), ct)


@njit(parallel=True, cache=True)
def _run_lengths(k0, k1, n_streams, mu_pre, mu_post, change_time, drift, weight, h, max_steps):
    out = np.empty(n_streams, dtype=np.int64)
    for i in prange(n_streams):
        s = 0.0
        t = 0
        alarm = -1
        while t < max_steps:
            t += 1
            w0, w1, w2, w3 = _philox(np.uint64(t), np.uint64(i), np.uint64(0), _TAG, k0, k1)
            mu = mu_pre if t < change_time else mu_post
            x = -mu * np.log(_unit(w0, w1))
            s = max(0.0, s + drift + x * weight)
            if s >= h:
                alarm = t
                break
        out[i] = alarm
    return out


def run_lengths(key, n_streams, h, design_pre, design_post, actual_pre=None, actual_post=None,
                change_time=None, max_steps=10**8):
    """Alarm time of each stream (-1 if no alarm within ``max_steps``)."""
    actual_pre = design_pre if actual_pre is None else actual_pre
    actual_post = design_post if actual_post is None else actual_post
    state = CusumState(h, design_pre, design_post)
    ct = max_steps + 1 if change_time is None else int(change_time)
    k0, k1 = rng.split_key(key)
    return _run_lengths(np.uint64(k0), np.uint64(k1), int(n_streams), float(actual_pre), float(actual_post),
                        ct, state.drift_constant, state.energy_weight, float(h), int(max_steps))


@dataclass(frozen=True)
class RunLengthMetrics:
    threshold_h: float
    average_run_length: float
    arl_half_width: float
    average_detection_delay: float | None
    delay_half_width: float | None
    trials: int
    censored: int = 0
    false_alarms_before_change: int = 0


def _mean_hw(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else math.nan, math.nan
    return float(x.mean()), float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


def run_length_metrics(model, h, change_time=NEVER, trials=10_000, seed=0, gain=1.0,
                       post_change_power=None, max_steps=10**8) -> RunLengthMetrics:
    """ARL on change-free streams and mean detection delay on changing streams.

    The monitor is designed for pre-change power ``noise_power`` and
    post-change power ``noise_power + gain * P2_min`` unless
    ``post_change_power`` is given. The delay counts samples from the first
    post-change sample up to and including the alarm, over streams without a
    false alarm before the change.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    mu0 = model.noise_power
    mu1 = mu0 + gain * model.p2_min if post_change_power is None else float(post_change_power)
    if not mu1 > mu0:
        raise ValueError("post-change power must exceed the noise power")

    rl = run_lengths(rng.derive_key(seed, 1), trials, h, mu0, mu1, max_steps=max_steps)
    censored = int(np.sum(rl < 0))
    arl, arl_hw = _mean_hw(np.where(rl < 0, max_steps, rl))

    delay = delay_hw = None
    early = 0
    if change_time is not None:
        if change_time < 1:
            raise ValueError("change_time counts samples from 1")
        tau = run_lengths(rng.derive_key(seed, 2), trials, h, mu0, mu1, change_time=change_time,
                          max_steps=max_steps)
        ok = tau >= change_time
        early = int(np.sum((tau >= 0) & ~ok))
        delay, delay_hw = _mean_hw(tau[ok] - change_time + 1)
    return RunLengthMetrics(float(h), arl, arl_hw, delay, delay_hw, int(trials), censored, early)
