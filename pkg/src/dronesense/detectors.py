"""Ternary detectors (genie-aided and GLRT) and their constrained calibration.

Decisions are ``argmax {l0 + offset_h0, l1 + offset_h1, l2}`` over the
log-likelihoods of the energy statistic. ``l2`` is the exact density when the
unauthorized power (or its law) is known, or the profile likelihood over the
power range for the GLRT. Ties go to the smaller hypothesis.

Calibration picks the two offsets so that ``1 - Pr(H0|H0) <= alpha`` and
``1 - Pr(H1|H1) <= beta`` hold with equality, which maximises
``Pr(H2|H2)`` within this family.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import rng
from .signal import (
    DrawRule,
    Hypothesis,
    ScenarioTruth,
    SensorNetwork,
    SignalModel,
    draw_statistics,
)

log = logging.getLogger(__name__)

UNIFORM_PRIOR = "uniform"
QUADRATURE_POINTS = 64
BOUNDARY_XTOL = 1e-10
_FLOOR = -1e300
_GRID_POINTS = 1024
_TAIL = 1e-16
_CHUNK = 4096

PURPOSE_CALIBRATION = 1
PURPOSE_EVALUATION = 2


class Scheme(enum.Enum):
    GENIE = "genie"
    GLRT = "glrt"


class Method(enum.Enum):
    ANALYTIC_GAMMA = "analytic"
    MONTE_CARLO = "monte_carlo"


class InfeasibleConstraints(ValueError):
    """No decision rule can meet both false-alarm constraints."""


class CalibrationError(RuntimeError):
    """The threshold search did not converge."""


@dataclass(frozen=True)
class ConstraintPair:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability in [0, 1], got {v}")


@dataclass(frozen=True)
class Region:
    lower: float
    upper: float
    hypothesis: Hypothesis


@dataclass(frozen=True)
class CalibrationReport:
    method: str
    fa_h0: float
    fa_h1: float
    p_h2: float
    half_width_h0: float = 0.0
    half_width_h1: float = 0.0
    half_width_h2: float = 0.0
    iterations: int = 0
    solver: str = "alternating"
    trials: int = 0


@dataclass(frozen=True)
class CalibratedDetector:
    """Offsets plus everything needed to evaluate the decision rule.

    ``gains`` has one entry per fused sensor; for a single sensor it is a
    1-tuple. ``regions`` are over the (pooled) energy statistic and are only
    available when all gains are equal.
    """

    scheme: Scheme
    model: SignalModel
    gains: tuple[float, ...]
    offset_h0: float
    offset_h1: float
    genie_p2: float | str | None = None
    regions: tuple[Region, ...] = ()
    report: CalibrationReport | None = field(default=None, compare=False)

    @property
    def is_homogeneous(self) -> bool:
        return len(set(self.gains)) == 1

    def log_likelihoods(self, stats):
        return log_likelihoods(stats, self.model, self.gains, self.scheme, self.genie_p2)

    def decide_batch(self, stats):
        """Decisions for an array of per-sensor statistics, shape ``(n, M)``."""
        stats = np.asarray(stats, dtype=float)
        if stats.ndim == 1:
            stats = stats[:, None]
        return argmax_decision(self.log_likelihoods(stats), self.offset_h0, self.offset_h1)

    def region_of(self, statistic) -> Hypothesis:
        for r in self.regions:
            if r.lower <= statistic < r.upper:
                return r.hypothesis
        return self.regions[-1].hypothesis


# ----------------------------------------------------------------------------
# likelihoods


def gamma_logpdf(t, n, mu):
    """Log density of the block energy: Gamma(shape n, scale mu/n) at ``t``."""
    t = np.asarray(t, dtype=float)
    return special.xlogy(n - 1, t) - n * t / mu - n * np.log(mu / n) - special.gammaln(n)


def _check_gain(gain):
    if not gain > 0:
        raise ValueError("the designated sensor has zero gain; drone power is unobservable")


def _quadrature(model):
    """Gauss-Legendre nodes over the unauthorized power range and log weights."""
    if model.p2_max == model.p2_min:
        return np.array([model.p2_min]), np.array([0.0])
    x, w = np.polynomial.legendre.leggauss(QUADRATURE_POINTS)
    half = 0.5 * (model.p2_max - model.p2_min)
    return model.p2_min + half * (x + 1.0), np.log(w / 2.0)


def genie_log_likelihoods(statistic, model, true_p2, gain=1.0):
    """``(l0, l1, l2)`` for one statistic when the genie knows ``true_p2``."""
    if statistic < 0:
        raise ValueError("energy statistic must be >= 0")
    if true_p2 != UNIFORM_PRIOR and not model.p2_min <= true_p2 <= model.p2_max:
        raise ValueError(f"true_p2={true_p2} outside the unauthorized range")
    ll = log_likelihoods(np.array([[statistic]]), model, (gain,), Scheme.GENIE, true_p2)[0]
    return float(ll[0]), float(ll[1]), float(ll[2])


def glrt_profile(statistic, model, gain=1.0):
    """Maximum-likelihood unauthorized power and the profile log-likelihood."""
    if statistic < 0:
        raise ValueError("energy statistic must be >= 0")
    _check_gain(gain)
    p2 = min(max((statistic - model.noise_power) / gain, model.p2_min), model.p2_max)
    mu = model.noise_power + gain * p2
    return p2, float(gamma_logpdf(statistic, model.samples_per_block, mu))


def _shared_profile(stats, model, gains):
    """Profile of sum_k l(T_k; sigma^2 + g_k P) over P in the range, vectorised."""
    n = model.samples_per_block
    s2 = model.noise_power
    lo, hi = model.p2_min, model.p2_max
    if len(set(gains.tolist())) == 1:
        _check_gain(gains[0])
        p = np.clip((stats.mean(axis=-1) - s2) / gains[0], lo, hi)
    else:
        if not np.any(gains > 0):
            raise ValueError("all sensor gains are zero")

        def f(p):
            return gamma_logpdf(stats, n, s2 + gains * p[..., None]).sum(axis=-1)

        # golden section; each term is unimodal in P
        shape = stats.shape[:-1]
        a = np.full(shape, lo)
        b = np.full(shape, hi)
        r = (math.sqrt(5.0) - 1.0) / 2.0
        c = b - r * (b - a)
        d = a + r * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(90):
            left = fc >= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            d_new = np.where(left, c, a + r * (b - a))
            c_new = np.where(left, b - r * (b - a), d)
            c, d = c_new, d_new
            fc, fd = f(c), f(d)
        cand = np.stack([a, b, 0.5 * (a + b), np.full(shape, lo), np.full(shape, hi)])
        vals = np.stack([f(x) for x in cand])
        p = np.take_along_axis(cand, vals.argmax(axis=0)[None], axis=0)[0]
    return p, gamma_logpdf(stats, n, s2 + gains * p[..., None]).sum(axis=-1)


def log_likelihoods(stats, model, gains, scheme, genie_p2=None):
    """Fused log-likelihoods ``(..., 3)`` for statistics of shape ``(..., M)``.

    Sensors are independent given the hypothesis; under UNAUTHORIZED they share
    one unknown power.
    """
    scheme = Scheme(scheme)
    t = np.asarray(stats, dtype=float)
    g = np.asarray(gains, dtype=float)
    if t.shape[-1] != g.size:
        raise ValueError(f"statistics carry {t.shape[-1]} sensors, network has {g.size}")
    if np.any(t < 0):
        raise ValueError("energy statistics must be >= 0")
    n = model.samples_per_block
    s2 = model.noise_power
    l0 = gamma_logpdf(t, n, s2).sum(axis=-1)
    l1 = gamma_logpdf(t, n, s2 + g * model.authorized_power).sum(axis=-1)
    if scheme is Scheme.GLRT:
        if genie_p2 is not None:
            raise ValueError("the GLRT does not take a genie power")
        _, l2 = _shared_profile(t, model, g)
    elif genie_p2 is None:
        raise ValueError("the genie scheme needs the unauthorized power (or UNIFORM_PRIOR)")
    elif genie_p2 == UNIFORM_PRIOR:
        nodes, logw = _quadrature(model)
        flat = t.reshape(-1, t.shape[-1])
        mu = s2 + g[None, None, :] * nodes[None, :, None]
        l2 = np.empty(flat.shape[0])
        for start in range(0, flat.shape[0], _CHUNK):
            blk = flat[start:start + _CHUNK]
            terms = gamma_logpdf(blk[:, None, :], n, mu).sum(axis=-1) + logw
            l2[start:start + _CHUNK] = special.logsumexp(terms, axis=1)
        l2 = l2.reshape(t.shape[:-1])
    else:
        l2 = gamma_logpdf(t, n, s2 + g * float(genie_p2)).sum(axis=-1)
    return np.stack([l0, l1, l2], axis=-1)


def _offset_scores(ll, offset_h0, offset_h1, offset_h2=0.0):
    s = np.maximum(np.asarray(ll, dtype=float), _FLOOR)
    out = np.empty_like(s)
    for i, off in enumerate((offset_h0, offset_h1, offset_h2)):
        out[..., i] = off if math.isinf(off) else s[..., i] + off
    return out


def argmax_decision(ll, offset_h0, offset_h1, offset_h2=0.0):
    """Index of the winning hypothesis; first (smallest) on ties."""
    return np.argmax(_offset_scores(ll, offset_h0, offset_h1, offset_h2), axis=-1)


def _pooled(detector):
    if not detector.is_homogeneous:
        raise ValueError("single-statistic decisions need a homogeneous network; use fuse_soft")
    m = len(detector.gains)
    return detector.model.with_samples(detector.model.samples_per_block * m), detector.gains[0]


def decide(statistic, detector, genie_p2=None) -> Hypothesis:
    """Decision for one (pooled) energy statistic.

    The genie scheme must be told the unauthorized power (a float, or
    ``UNIFORM_PRIOR`` for the uniform law); the GLRT must not be.
    """
    if detector.scheme is Scheme.GENIE and genie_p2 is None:
        raise ValueError("genie scheme requires genie_p2")
    if detector.scheme is Scheme.GLRT and genie_p2 is not None:
        raise ValueError("GLRT scheme forbids genie_p2")
    model, gain = _pooled(detector)
    ll = log_likelihoods(np.array([[float(statistic)]]), model, (gain,), detector.scheme, genie_p2)
    return Hypothesis(int(argmax_decision(ll, detector.offset_h0, detector.offset_h1)[0]))


# ----------------------------------------------------------------------------
# decision regions and their exact probabilities


def _grid_bounds(model, gain):
    n = model.samples_per_block
    mus = [
        model.noise_power,
        model.noise_power + gain * model.authorized_power,
        model.noise_power + gain * model.p2_min,
        model.noise_power + gain * model.p2_max,
    ]
    lo = special.gammaincinv(n, _TAIL) / n * min(mus)
    hi = special.gammainccinv(n, _TAIL) / n * max(mus)
    return max(lo, 1e-300), hi


class StatisticLikelihood:
    """Log-likelihoods of one (pooled) energy statistic, with a cached grid."""

    def __init__(self, model, gain, scheme, genie_p2):
        self.model = model
        self.gain = gain
        self.scheme = Scheme(scheme)
        self.genie_p2 = genie_p2
        lo, hi = _grid_bounds(model, gain)
        self.grid = np.geomspace(lo, hi, _GRID_POINTS)
        self.grid_ll = self(self.grid)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return log_likelihoods(t[..., None], self.model, (self.gain,), self.scheme, self.genie_p2)

    def regions(self, offset_h0, offset_h1, offset_h2=0.0):
        """Partition of ``[0, inf)`` into labelled intervals.

        Label changes are located on the log grid and refined by bracketing
        the score difference of the two adjacent winners.
        """
        offsets = (offset_h0, offset_h1, offset_h2)
        labels = argmax_decision(self.grid_ll, *offsets)
        change = np.flatnonzero(labels[1:] != labels[:-1])

        def diff(t, a, b):
            v = np.maximum(self(t), _FLOOR)
            return (v[a] + offsets[a]) - (v[b] + offsets[b])

        edges = [0.0]
        labs = [int(labels[0])]
        for c in change:
            a, b = int(labels[c]), int(labels[c + 1])
            root = optimize.brentq(
                diff, self.grid[c], self.grid[c + 1], args=(a, b),
                xtol=BOUNDARY_XTOL, rtol=4 * np.finfo(float).eps,
            )
            edges.append(root)
            labs.append(b)
        edges.append(math.inf)
        return tuple(Region(edges[i], edges[i + 1], Hypothesis(labs[i])) for i in range(len(labs)))


def compute_regions(model, gain, scheme, genie_p2, offset_h0, offset_h1, offset_h2=0.0):
    """Decision regions over the energy statistic of ``model`` (see StatisticLikelihood)."""
    return StatisticLikelihood(model, gain, scheme, genie_p2).regions(offset_h0, offset_h1, offset_h2)


def _interval_prob(n, mu, a, b):
    x_a = n * a / mu
    x_b = n * b / mu if math.isfinite(b) else math.inf
    if x_a > n:  # upper tail: subtract complements for accuracy
        return special.gammaincc(n, x_a) - (special.gammaincc(n, x_b) if math.isfinite(x_b) else 0.0)
    lower_b = special.gammainc(n, x_b) if math.isfinite(x_b) else 1.0
    return lower_b - special.gammainc(n, x_a)


def region_probabilities(regions, n, mu):
    """``Pr(decide Hj)`` for a Gamma(n, mu/n) statistic, as a length-3 array."""
    p = np.zeros(3)
    for r in regions:
        p[int(r.hypothesis)] += _interval_prob(n, mu, r.lower, r.upper)
    return p


def truth_nodes(model, truth):
    """Unauthorized powers and probability weights representing the truth law."""
    if truth.draw_rule is DrawRule.FIXED:
        return np.array([truth.true_unauthorized_power]), np.array([1.0])
    nodes, logw = _quadrature(model)
    return nodes, np.exp(logw)


def analytic_confusion(model, gain, regions, truth):
    """Exact 3x3 confusion matrix of a single (pooled) detector."""
    n = model.samples_per_block
    rows = [
        region_probabilities(regions, n, model.noise_power),
        region_probabilities(regions, n, model.noise_power + gain * model.authorized_power),
    ]
    nodes, w = truth_nodes(model, truth)
    rows.append(sum(wi * region_probabilities(regions, n, model.noise_power + gain * p) for p, wi in zip(nodes, w)))
    return np.array(rows)


# ----------------------------------------------------------------------------
# offset search


def _solve_increasing(fn, target, start=0.0):
    """Smallest finite x with fn(x) ~= target for continuous increasing fn in [0, 1]."""
    lo, hi = start - 1.0, start + 1.0
    step = 1.0
    while fn(lo) > target:
        step *= 2.0
        lo = start - step
        if step > 1e12:
            return -math.inf
    step = 1.0
    while fn(hi) < target:
        step *= 2.0
        hi = start + step
        if step > 1e12:
            return math.inf
    if fn(lo) == target:
        return lo
    return optimize.brentq(lambda x: fn(x) - target, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)


def _alternate(rates, t0, t1, tol, max_iter):
    """Gauss-Seidel on the two offsets, starting from an excluded H0.

    Both updates are monotone, so the iterates increase towards the least
    fixed point, which is the one with the largest H2 region.
    """
    lam1 = _solve_increasing(lambda x: rates(-math.inf, x)[1], t1)
    lam0 = -math.inf
    for it in range(1, max_iter + 1):
        lam0 = _solve_increasing(lambda x: rates(x, lam1)[0], t0, 0.0 if math.isinf(lam0) else lam0)
        lam1 = _solve_increasing(lambda x: rates(lam0, x)[1], t1, 0.0 if math.isinf(lam1) else lam1)
        p0, p1 = rates(lam0, lam1)
        if abs(p0 - t0) <= tol and abs(p1 - t1) <= tol:
            return lam0, lam1, it, "alternating"
    return None, None, max_iter, "alternating"


def _nested(rates, t0, t1):
    """Fallback: outer solve on offset_h1 with offset_h0 re-solved inside."""

    def inner(lam1):
        return _solve_increasing(lambda x: rates(x, lam1)[0], t0)

    lam1 = _solve_increasing(lambda x: rates(inner(x), x)[1], t1)
    return inner(lam1), lam1


def _special_offsets(alpha, beta):
    """Offsets for boundary constraints, or None for the general case."""
    if alpha == 1.0 and beta == 1.0:
        return -math.inf, -math.inf
    if alpha == 0.0:
        if beta < 1.0:
            raise InfeasibleConstraints(
                "alpha = 0 forces every statistic into the H0 region, so Pr(H1|H1) = 0 < 1 - beta"
            )
        return math.inf, -math.inf
    if beta == 0.0:
        if alpha < 1.0:
            raise InfeasibleConstraints(
                "beta = 0 forces every statistic into the H1 region, so Pr(H0|H0) = 0 < 1 - alpha"
            )
        return -math.inf, math.inf
    return None


def solve_offsets(rates, alpha, beta, tol=1e-9, max_iter=100):
    """Offsets meeting ``rates(l0, l1) == (1 - alpha, 1 - beta)``.

    ``rates`` returns ``(Pr(H0|H0), Pr(H1|H1))`` and must be continuous and
    monotone (increasing in its own offset, decreasing in the other).
    Returns ``(offset_h0, offset_h1, iterations, solver)``.
    """
    special_case = _special_offsets(alpha, beta)
    if special_case is not None:
        return (*special_case, 0, "sentinel")
    t0, t1 = 1.0 - alpha, 1.0 - beta
    if alpha == 1.0:
        return -math.inf, _solve_increasing(lambda x: rates(-math.inf, x)[1], t1), 1, "sentinel"
    if beta == 1.0:
        return _solve_increasing(lambda x: rates(x, -math.inf)[0], t0), -math.inf, 1, "sentinel"

    # best possible Pr(H1|H1) under the H0 constraint: H2 switched off
    lam0 = _solve_increasing(lambda x: rates(x, 0.0, -math.inf)[0], t0)
    best = rates(lam0, 0.0, -math.inf)[1]
    if best < t1 - tol:
        raise InfeasibleConstraints(
            f"with Pr(H0|H0) >= {t0:.6g} the best achievable Pr(H1|H1) is {best:.6g} < {t1:.6g}"
        )

    lam0, lam1, it, solver = _alternate(rates, t0, t1, tol, max_iter)
    if lam0 is None:
        log.info("alternating search hit %d iterations; switching to nested solve", max_iter)
        lam0, lam1 = _nested(rates, t0, t1)
        solver = "nested"
    p0, p1 = rates(lam0, lam1)
    if abs(p0 - t0) > tol or abs(p1 - t1) > tol:
        raise CalibrationError(f"threshold search did not converge: rates {(p0, p1)} vs {(t0, t1)}")
    return lam0, lam1, it, solver


def _gap_point(values, weights, target):
    """A value v separating the sorted ``values`` so that W(values <= v) >= target.

    v sits halfway into the gap above the qualifying order statistic, so that
    rounding in the decision comparison cannot move a point across.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    k = int(np.searchsorted(cw, target - 1e-12, side="left"))
    k = min(k, len(v) - 1)
    x = v[k]
    above = v[v > x]
    if above.size:
        return x + 0.5 * (above[0] - x)
    return x + max(1.0, abs(x) * 1e-6)


def solve_offsets_weighted(ll0, w0, ll1, w1, alpha, beta, max_iter=100):
    """Offset search on weighted samples (Monte Carlo draws or discrete atoms).

    ``ll0``/``ll1`` are ``(n, 3)`` log-likelihood tables of draws under H0 and
    H1 with probability weights ``w0``/``w1``. Each update is the exact
    weighted quantile, so iterates stay feasible by construction.
    """
    special_case = _special_offsets(alpha, beta)
    if special_case is not None:
        return (*special_case, 0, "sentinel")
    t0, t1 = 1.0 - alpha, 1.0 - beta
    a0 = np.maximum(ll0, _FLOOR)
    a1 = np.maximum(ll1, _FLOOR)

    def step0(lam1):
        # H0 wins iff lam0 >= max(l1 + lam1, l2) - l0
        other = a0[:, 2] if lam1 == -math.inf else np.maximum(a0[:, 1] + lam1, a0[:, 2])
        return _gap_point(other - a0[:, 0], w0, t0)

    def step1(lam0):
        # H1 wins iff lam1 > l0 + lam0 - l1 and lam1 >= l2 - l1
        need = a1[:, 2] - a1[:, 1]
        if lam0 != -math.inf:
            need = np.maximum(need, a1[:, 0] + lam0 - a1[:, 1])
        return _gap_point(need, w1, t1)

    if alpha == 1.0:
        return -math.inf, step1(-math.inf), 1, "sentinel"
    if beta == 1.0:
        return step0(-math.inf), -math.inf, 1, "sentinel"

    # feasibility: H2 off, H0 at its constraint, then H1 takes the rest
    lam0 = _gap_point(a0[:, 1] - a0[:, 0], w0, t0)
    d1 = argmax_decision(a1, lam0, 0.0, -math.inf)
    best = float(np.sum(w1[d1 == 1]))
    if best < t1 - 1e-12:
        raise InfeasibleConstraints(
            f"with Pr(H0|H0) >= {t0:.6g} the best achievable Pr(H1|H1) is {best:.6g} < {t1:.6g}"
        )

    lam1 = step1(-math.inf)
    lam0 = -math.inf
    for it in range(1, max_iter + 1):
        new0 = step0(lam1)
        new1 = step1(new0)
        if new0 == lam0 and new1 == lam1:
            return lam0, lam1, it, "alternating"
        lam0, lam1 = new0, new1
    # nested fallback: bisection on offset_h1 with offset_h0 re-solved inside
    def p11(l1):
        l0 = step0(l1)
        d = argmax_decision(a1, l0, l1)
        return float(np.sum(w1[d == 1]))

    lo, hi = lam1 - 1.0, lam1 + 1.0
    while p11(hi) < t1 - 1e-12:
        hi += 2.0 * (hi - lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if p11(mid) >= t1 - 1e-12:
            hi = mid
        else:
            lo = mid
    return step0(hi), hi, max_iter, "nested"


# ----------------------------------------------------------------------------
# calibration


def _binomial_half_width(p, n, z=1.96):
    if n <= 0:
        return math.nan
    q = min(max(p, 0.5 / n), 1.0 - 0.5 / n)
    return z * math.sqrt(q * (1.0 - q) / n)


def _genie_prior(truth):
    return UNIFORM_PRIOR if truth.draw_rule is DrawRule.UNIFORM_OVER_RANGE else truth.true_unauthorized_power


def default_truth(model):
    return ScenarioTruth(Hypothesis.UNAUTHORIZED, model.p2_mid, DrawRule.FIXED)


def calibrate(
    model: SignalModel,
    network: SensorNetwork,
    scheme,
    constraints: ConstraintPair,
    method=Method.ANALYTIC_GAMMA,
    seed: int = 0,
    tolerance: float = 1e-3,
    truth: ScenarioTruth | None = None,
    trials: int = 100_000,
    max_iter: int = 100,
) -> CalibratedDetector:
    """Offsets that meet both false-alarm constraints with the largest Pr(H2|H2).

    For several sensors the constraints apply to the fused (soft) decision.
    ``truth`` is the UNAUTHORIZED ground truth: it sets the genie's knowledge
    and the law used to report Pr(H2|H2).
    """
    scheme = Scheme(scheme)
    method = Method(method)
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    truth = default_truth(model) if truth is None else truth
    truth.validate(model)
    genie_p2 = _genie_prior(truth) if scheme is Scheme.GENIE else None
    gains = network.per_sensor_gain
    alpha, beta = constraints.alpha, constraints.beta

    if method is Method.ANALYTIC_GAMMA:
        if not network.is_homogeneous:
            raise ValueError("analytic calibration needs equal sensor gains; use MONTE_CARLO")
        pooled = model.with_samples(model.samples_per_block * network.sensor_count)
        g = gains[0]
        _check_gain(g)
        n = pooled.samples_per_block
        mu0 = model.noise_power
        mu1 = model.noise_power + g * model.authorized_power

        lik = StatisticLikelihood(pooled, g, scheme, genie_p2)

        def rates(l0, l1, l2=0.0):
            regs = lik.regions(l0, l1, l2)
            return region_probabilities(regs, n, mu0)[0], region_probabilities(regs, n, mu1)[1]

        lam0, lam1, it, solver = solve_offsets(rates, alpha, beta, tol=min(tolerance, 1e-9), max_iter=max_iter)
        regions = lik.regions(lam0, lam1)
        conf = analytic_confusion(pooled, g, regions, truth)
        report = CalibrationReport(
            method.value, 1.0 - conf[0, 0], 1.0 - conf[1, 1], conf[2, 2], iterations=it, solver=solver
        )
        return CalibratedDetector(scheme, model, gains, lam0, lam1, genie_p2, regions, report)

    trials = max(int(trials), 100_000)
    tables = []
    for hyp in Hypothesis:
        t = truth if hyp is Hypothesis.UNAUTHORIZED else ScenarioTruth(hyp)
        key = rng.derive_key(seed, PURPOSE_CALIBRATION, int(hyp))
        stats, _ = draw_statistics(model, network, t, key, trials)
        tables.append(log_likelihoods(stats, model, gains, scheme, genie_p2))
    w = np.full(trials, 1.0 / trials)
    lam0, lam1, it, solver = solve_offsets_weighted(tables[0], w, tables[1], w, alpha, beta, max_iter)
    correct = [float(np.mean(argmax_decision(tab, lam0, lam1) == i)) for i, tab in enumerate(tables)]
    report = CalibrationReport(
        method.value,
        1.0 - correct[0],
        1.0 - correct[1],
        correct[2],
        _binomial_half_width(correct[0], trials),
        _binomial_half_width(correct[1], trials),
        _binomial_half_width(correct[2], trials),
        iterations=it,
        solver=solver,
        trials=trials,
    )
    regions = ()
    if network.is_homogeneous:
        pooled = model.with_samples(model.samples_per_block * network.sensor_count)
        regions = compute_regions(pooled, gains[0], scheme, genie_p2, lam0, lam1)
    return CalibratedDetector(scheme, model, gains, lam0, lam1, genie_p2, regions, report)


def detector_from_offsets(model, network, scheme, offset_h0, offset_h1, truth=None):
    """Rebuild a detector from known offsets (no search)."""
    scheme = Scheme(scheme)
    truth = default_truth(model) if truth is None else truth
    genie_p2 = _genie_prior(truth) if scheme is Scheme.GENIE else None
    gains = network.per_sensor_gain
    regions = ()
    report = None
    if network.is_homogeneous:
        pooled = model.with_samples(model.samples_per_block * network.sensor_count)
        regions = compute_regions(pooled, gains[0], scheme, genie_p2, offset_h0, offset_h1)
        conf = analytic_confusion(pooled, gains[0], regions, truth)
        report = CalibrationReport("given", 1.0 - conf[0, 0], 1.0 - conf[1, 1], conf[2, 2], solver="none")
    return CalibratedDetector(scheme, model, gains, offset_h0, offset_h1, genie_p2, regions, report)


def exact_rates(detector, truth=None):
    """Exact confusion matrix of a homogeneous detector via the Gamma CDF."""
    truth = default_truth(detector.model) if truth is None else truth
    pooled, g = _pooled(detector)
    regions = detector.regions or compute_regions(
        pooled, g, detector.scheme, detector.genie_p2, detector.offset_h0, detector.offset_h1
    )
    return analytic_confusion(pooled, g, regions, truth)


# ----------------------------------------------------------------------------
# 8-level discrete surrogate


@dataclass(frozen=True)
class DiscreteSurrogate:
    """Quantised energy statistic: ``pmf[i, k] = Pr(level k | Hi)``."""

    pmf: np.ndarray = field(repr=False)

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 2 or pmf.shape[0] != 3:
            raise ValueError("pmf must have shape (3, levels)")
        if np.any(pmf < 0) or not np.allclose(pmf.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("each pmf row must be a probability vector")
        object.__setattr__(self, "pmf", pmf)

    @property
    def levels(self) -> int:
        return self.pmf.shape[1]

    @property
    def log_pmf(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pmf)

    @classmethod
    def from_model(cls, model, levels=8, gain=1.0, p2=None):
        """Bin the energy statistic of ``model`` into ``levels`` cells."""
        p2 = model.p2_mid if p2 is None else p2
        n = model.samples_per_block
        mus = [model.total_power(h, gain, p2) for h in Hypothesis]
        lo = special.gammaincinv(n, 0.02) / n * min(mus)
        hi = special.gammainccinv(n, 0.02) / n * max(mus)
        edges = np.concatenate([[0.0], np.geomspace(lo, hi, levels - 1), [math.inf]])
        pmf = np.array([[_interval_prob(n, mu, edges[k], edges[k + 1]) for k in range(levels)] for mu in mus])
        return cls(pmf / pmf.sum(axis=1, keepdims=True))

    def draw_levels(self, hypothesis, key, n_trials, trial0=0):
        u = rng.trial_uniforms(key, n_trials, trial0, tag=rng.TAG_LEVEL)
        cdf = np.cumsum(self.pmf[int(hypothesis)])
        return np.minimum(np.searchsorted(cdf, u, side="right"), self.levels - 1)


@dataclass(frozen=True)
class SurrogateDetector:
    surrogate: DiscreteSurrogate
    offset_h0: float
    offset_h1: float
    report: CalibrationReport | None = field(default=None, compare=False)

    def decide_batch(self, levels):
        ll = self.surrogate.log_pmf.T[np.asarray(levels).reshape(-1)]
        return argmax_decision(ll, self.offset_h0, self.offset_h1)

    def confusion(self):
        d = self.decide_batch(np.arange(self.surrogate.levels))
        out = np.zeros((3, 3))
        for j in range(3):
            out[:, j] = self.surrogate.pmf[:, d == j].sum(axis=1)
        return out


def calibrate_surrogate(surrogate, constraints, max_iter=100):
    """Exact calibration on the discrete surrogate (atoms weighted by their pmf)."""
    table = surrogate.log_pmf.T
    lam0, lam1, it, solver = solve_offsets_weighted(
        table, surrogate.pmf[0], table, surrogate.pmf[1], constraints.alpha, constraints.beta, max_iter
    )
    det = SurrogateDetector(surrogate, lam0, lam1)
    conf = det.confusion()
    report = CalibrationReport("exact", 1 - conf[0, 0], 1 - conf[1, 1], conf[2, 2], iterations=it, solver=solver)
    return SurrogateDetector(surrogate, lam0, lam1, report)
