"""Counter-based random streams (Philox4x32-10).

Every random number in the package is a pure function of a 64-bit key and a
four-word counter ``(sample, trial, sensor, tag)``. Nothing is stateful, so
trials can be generated in any order, chunking or thread count and the output
is bit-identical.

Key hierarchy: an experiment seed is turned into sub-keys with
:func:`derive_key` (seed -> purpose -> hypothesis row -> sweep point ...);
the trial and sensor indices then live in the counter.

The block cipher follows Salmon et al., "Parallel random numbers: as easy as
1, 2, 3" (SC'11), Philox4x32 with 10 rounds.
"""

from __future__ import annotations

import numba

numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

import numpy as np
from numba import njit, prange

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_M53 = 1.0 / 9007199254740992.0

# counter tags (fourth counter word)
TAG_SAMPLES = 0
TAG_POWER = 1
TAG_LEVEL = 2
TAG_CUSUM = 3

MAX_INDEX = 0xFFFFFFFF


@njit(inline="always")
def _philox(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(inline="always")
def _unit(a, b):
    # 53 random bits -> open interval (0, 1); never 0, so -log is finite
    x = ((a >> np.uint64(5)) << np.uint64(26)) | (b >> np.uint64(6))
    return (np.float64(x) + 0.5) * _TWO_M53


@njit(cache=True)
def _philox_py(c0, c1, c2, c3, k0, k1):
    return _philox(
        np.uint64(c0), np.uint64(c1), np.uint64(c2), np.uint64(c3), np.uint64(k0), np.uint64(k1)
    )


def philox4x32(counter, key):
    """Raw Philox4x32-10 output words for a 4-word counter and 2-word key."""
    out = _philox_py(*[int(c) & MAX_INDEX for c in counter], *[int(k) & MAX_INDEX for k in key])
    return tuple(int(w) for w in out)


def _split(key):
    key = int(key) & 0xFFFFFFFFFFFFFFFF
    return key & MAX_INDEX, key >> 32


def derive_key(seed, *labels):
    """Walk the key hierarchy: each integer label yields a fresh 64-bit key."""
    key = int(seed) & 0xFFFFFFFFFFFFFFFF
    for depth, label in enumerate(labels):
        label = int(label)
        if label < 0:
            raise ValueError("key labels must be non-negative")
        lo, hi = _split(key)
        w = philox4x32((label & MAX_INDEX, (label >> 32) & MAX_INDEX, depth, MAX_INDEX), (lo, hi))
        key = w[0] | (w[1] << 32)
    return key


@njit(cache=True)
def _block_uniforms(k0, k1, tag, trial, sensor, n):
    u1 = np.empty(n)
    u2 = np.empty(n)
    for i in range(n):
        w0, w1, w2, w3 = _philox(np.uint64(i), trial, sensor, tag, k0, k1)
        u1[i] = _unit(w0, w1)
        u2[i] = _unit(w2, w3)
    return u1, u2


def block_uniforms(key, trial, sensor, n, tag=TAG_SAMPLES):
    """Two uniform streams (radius, phase) for one sensor block of ``n`` samples."""
    _check_index(trial, sensor)
    k0, k1 = _split(key)
    return _block_uniforms(
        np.uint64(k0), np.uint64(k1), np.uint64(tag), np.uint64(trial), np.uint64(sensor), int(n)
    )


@njit(parallel=True, cache=True)
def _exp_means(k0, k1, tag, trial0, n_trials, n_sensors, n_samples):
    out = np.empty((n_trials, n_sensors))
    for t in prange(n_trials):
        trial = np.uint64(trial0 + t)
        for s in range(n_sensors):
            acc = 0.0
            for i in range(n_samples):
                w0, w1, w2, w3 = _philox(np.uint64(i), trial, np.uint64(s), tag, k0, k1)
                acc += -np.log(_unit(w0, w1))
            out[t, s] = acc / n_samples
    return out


def exp_means(key, n_trials, n_sensors, n_samples, trial0=0, tag=TAG_SAMPLES):
    """Per (trial, sensor) mean of ``n_samples`` unit exponentials.

    Uses exactly the radius draws of :func:`block_uniforms`, so a block built
    from the same counters has ``energy == power * exp_means``.
    """
    _check_index(trial0 + max(n_trials - 1, 0), max(n_sensors - 1, 0))
    k0, k1 = _split(key)
    return _exp_means(
        np.uint64(k0), np.uint64(k1), np.uint64(tag), np.uint64(trial0),
        int(n_trials), int(n_sensors), int(n_samples),
    )


@njit(parallel=True, cache=True)
def _trial_uniforms(k0, k1, tag, trial0, n):
    out = np.empty(n)
    for t in prange(n):
        w0, w1, w2, w3 = _philox(np.uint64(0), np.uint64(trial0 + t), np.uint64(0), tag, k0, k1)
        out[t] = _unit(w0, w1)
    return out


def trial_uniforms(key, n_trials, trial0=0, tag=TAG_POWER):
    """One uniform per trial, e.g. for per-trial power draws."""
    _check_index(trial0 + max(n_trials - 1, 0), 0)
    k0, k1 = _split(key)
    return _trial_uniforms(np.uint64(k0), np.uint64(k1), np.uint64(tag), np.uint64(trial0), int(n_trials))


def _check_index(trial, sensor):
    if trial < 0 or trial > MAX_INDEX or sensor < 0 or sensor > MAX_INDEX:
        raise ValueError("trial and sensor indices must fit in 32 bits")


def set_threads(n):
    """Set the worker count for the parallel kernels (``None`` leaves it alone)."""
    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


split_key = _split
