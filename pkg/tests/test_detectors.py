import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from dronesense import rng
from dronesense.detectors import (
    UNIFORM_PRIOR,
    CalibratedDetector,
    ConstraintPair,
    DiscreteSurrogate,
    InfeasibleConstraints,
    Method,
    Scheme,
    argmax_decision,
    calibrate,
    calibrate_surrogate,
    decide,
    detector_from_offsets,
    exact_rates,
    gamma_logpdf,
    genie_log_likelihoods,
    glrt_profile,
    log_likelihoods,
)
from dronesense.eval import run_trials
from dronesense.signal import (
    DrawRule,
    Hypothesis,
    ScenarioTruth,
    SensorNetwork,
    SignalModel,
    draw_statistics,
    generate_block,
)

stat = st.floats(1e-3, 30.0)


def mp_gamma_logpdf(t, n, mu):
    t, scale = mpmath.mpf(t), mpmath.mpf(mu) / n
    return float(mpmath.log(t ** (n - 1) * mpmath.exp(-t / scale) / (mpmath.gamma(n) * scale**n)))


def exhaustive_surrogate_optimum(s, alpha, beta):
    """Best Pr(H2|H2) over every offset cell of the surrogate's decision plane."""
    L = s.log_pmf
    a, b, c = L[2] - L[0], L[2] - L[1], L[1] - L[0]

    def mids(v):
        v = np.unique(v)
        return np.concatenate([[v[0] - 1], (v[:-1] + v[1:]) / 2, [v[-1] + 1]])

    best = None
    for l1 in mids(np.concatenate([b, (a[:, None] - c[None, :]).ravel()])):
        for l0 in mids(np.concatenate([a, l1 + c])):
            d = np.argmax(np.stack([L[0] + l0, L[1] + l1, L[2]]), axis=0)
            conf = np.array([[s.pmf[i, d == j].sum() for j in range(3)] for i in range(3)])
            if conf[0, 0] >= 1 - alpha - 1e-12 and conf[1, 1] >= 1 - beta - 1e-12:
                best = conf[2, 2] if best is None else max(best, conf[2, 2])
    return best


# ----------------------------------------------------------------------------
# likelihoods


@given(stat)
def test_genie_identical_distributions(t):
    m = SignalModel(1.0, 1.0, (0.5, 2.0), 16)
    l0, l1, l2 = genie_log_likelihoods(t, m, 1.0)
    assert l1 == l2


@given(stat)
def test_h0_mode_is_maximal(t):
    n = 16
    m = SignalModel(1.0, 1.0, (0.5, 2.0), n)
    mode = (n - 1) / n
    assert genie_log_likelihoods(mode, m, 1.0)[0] >= genie_log_likelihoods(t, m, 1.0)[0]


@pytest.mark.parametrize("t", [0.01, 0.3, 1.0, 2.5, 7.0])
def test_gamma_logdensity_high_precision_oracle(t):
    m = SignalModel(1.0, 2.0, (0.5, 6.5), 4)
    l0, l1, l2 = genie_log_likelihoods(t, m, 3.0)
    assert l0 == pytest.approx(mp_gamma_logpdf(t, 4, 1.0), abs=1e-9)
    assert l1 == pytest.approx(mp_gamma_logpdf(t, 4, 3.0), abs=1e-9)
    assert l2 == pytest.approx(mp_gamma_logpdf(t, 4, 4.0), abs=1e-9)


def test_likelihood_input_checks(model):
    with pytest.raises(ValueError):
        genie_log_likelihoods(-1.0, model, 3.0)
    with pytest.raises(ValueError):
        genie_log_likelihoods(1.0, model, 100.0)
    with pytest.raises(ValueError):
        glrt_profile(-0.5, model)
    with pytest.raises(ValueError):
        glrt_profile(1.0, model, gain=0.0)
    with pytest.raises(ValueError):
        log_likelihoods(np.ones((2, 2)), model, (1.0,), Scheme.GLRT)


def test_glrt_collapses_to_h0_below_noise():
    m = SignalModel(1.0, 2.0, (0.0, 6.0), 16)
    for t in (0.2, 0.9, 1.0):
        p2, l2 = glrt_profile(t, m)
        assert p2 == 0.0
        assert l2 == pytest.approx(genie_log_likelihoods(t, m, 0.0)[0], abs=1e-12)


def test_glrt_passes_through_h1():
    m = SignalModel(1.0, 2.0, (0.5, 6.5), 16)
    p2, l2 = glrt_profile(3.0, m)
    assert p2 == 2.0
    assert l2 == pytest.approx(genie_log_likelihoods(3.0, m, 2.0)[1], abs=1e-12)


@given(st.floats(0.05, 12.0), st.floats(0.25, 3.0))
def test_glrt_profile_grid_search_oracle(t, g):
    m = SignalModel(1.0, 2.0, (0.5, 6.5), 16)
    grid = np.linspace(0.5, 6.5, 10_000)
    best = max(stats.gamma.logpdf(t, 16, scale=(1.0 + g * grid) / 16))
    p2, l2 = glrt_profile(t, m, gain=g)
    assert 0.5 <= p2 <= 6.5
    assert l2 >= best - 1e-9
    assert l2 == pytest.approx(best, abs=1e-6)


def test_uniform_genie_is_mixture():
    m = SignalModel(1.0, 2.0, (0.5, 6.5), 8)
    t = 3.0
    ref, _ = integrate.quad(lambda p: stats.gamma.pdf(t, 8, scale=(1 + p) / 8) / 6.0, 0.5, 6.5)
    l2 = log_likelihoods(np.array([[t]]), m, (1.0,), Scheme.GENIE, UNIFORM_PRIOR)[0, 2]
    assert l2 == pytest.approx(math.log(ref), abs=1e-9)


# ----------------------------------------------------------------------------
# decisions


def test_argmax_ties_go_to_smaller():
    ll = np.array([[1.0, 1.0, 1.0], [0.0, 2.0, 2.0], [-1.0, -1.0, 0.0]])
    assert argmax_decision(ll, 0.0, 0.0).tolist() == [0, 1, 2]


@given(st.lists(stat, min_size=1, max_size=50))
def test_sentinel_offsets(ts):
    m = SignalModel(1.0, 2.0, (0.5, 6.5), 16)
    x = np.array(ts)[:, None]
    never = detector_from_offsets(m, SensorNetwork.homogeneous(1), "glrt", math.inf, math.inf)
    always = detector_from_offsets(m, SensorNetwork.homogeneous(1), "glrt", -math.inf, -math.inf)
    assert np.all(never.decide_batch(x) != 2)
    assert np.all(always.decide_batch(x) == 2)
    assert all(decide(t, always) is Hypothesis.UNAUTHORIZED for t in ts)


def test_decide_scheme_mismatch(model, single):
    glrt = detector_from_offsets(model, single, "glrt", 0.0, 0.0)
    genie = detector_from_offsets(model, single, "genie", 0.0, 0.0)
    with pytest.raises(ValueError):
        decide(1.0, glrt, genie_p2=3.5)
    with pytest.raises(ValueError):
        decide(1.0, genie)
    assert decide(1.0, genie, genie_p2=3.5) in list(Hypothesis)


@pytest.mark.parametrize("scheme", ["genie", "glrt"])
def test_region_consistency(model, single, scheme):
    det = calibrate(model, single, scheme, ConstraintPair(0.1, 0.1))
    ts = np.random.default_rng(1).uniform(0, 8, 10_000)
    bounds = np.array([r.upper for r in det.regions[:-1]])
    ts = ts[np.min(np.abs(ts[:, None] - bounds[None, :]), axis=1) > 1e-8]
    by_region = np.array([det.region_of(t) for t in ts])
    by_argmax = det.decide_batch(ts)
    assert np.array_equal(by_region, by_argmax)
    # regions partition [0, inf) in order
    assert det.regions[0].lower == 0.0 and det.regions[-1].upper == math.inf
    assert all(a.upper == b.lower for a, b in zip(det.regions, det.regions[1:]))
    # the direct decide() agrees too
    p2 = 3.5 if scheme == "genie" else None
    assert all(decide(t, det, p2) == h for t, h in zip(ts[:200], by_argmax[:200]))


def test_surrogate_decisions_match_enumeration():
    s = DiscreteSurrogate.from_model(SignalModel(1.0, 2.0, (0.5, 6.5), 16))
    det = calibrate_surrogate(s, ConstraintPair(0.2, 0.2))
    levels = np.arange(8)
    expected = []
    for k in levels:
        scores = [s.log_pmf[0, k] + det.offset_h0, s.log_pmf[1, k] + det.offset_h1, s.log_pmf[2, k]]
        best = max(scores)
        expected.append(next(i for i, v in enumerate(scores) if v == best))
    assert det.decide_batch(levels).tolist() == expected


# ----------------------------------------------------------------------------
# calibration


@pytest.mark.parametrize("scheme", ["genie", "glrt"])
def test_unconstrained_endpoint(model, single, scheme):
    det = calibrate(model, single, scheme, ConstraintPair(1.0, 1.0))
    assert det.offset_h0 == -math.inf and det.offset_h1 == -math.inf
    assert det.report.p_h2 == 1.0
    assert [r.hypothesis for r in det.regions] == [Hypothesis.UNAUTHORIZED]


@pytest.mark.parametrize("scheme", ["genie", "glrt"])
@pytest.mark.parametrize("ab", [(0.05, 0.1), (0.2, 0.02), (0.1, 0.1)])
def test_analytic_equality_checked_by_quadrature(model, single, scheme, ab):
    det = calibrate(model, single, scheme, ConstraintPair(*ab))

    def prob(mu, h):
        dist = stats.gamma(16, scale=mu / 16)
        total = 0.0
        for r in det.regions:
            if r.hypothesis == h:
                hi = min(r.upper, dist.ppf(1 - 1e-15))
                if hi > r.lower:
                    total += integrate.quad(dist.pdf, r.lower, hi, epsabs=1e-13)[0]
        return total

    assert 1 - prob(1.0, 0) == pytest.approx(ab[0], abs=1e-7)
    assert 1 - prob(3.0, 1) == pytest.approx(ab[1], abs=1e-7)
    assert det.report.p_h2 == pytest.approx(prob(4.5, 2), abs=1e-7)


def test_glrt_fresh_seed_validation(model, single):
    det = calibrate(model, single, "glrt", ConstraintPair(0.1, 0.1))
    n = 100_000
    cm = run_trials(model, single, det, n, seed=123456)
    sigma = math.sqrt(0.1 * 0.9 / n)
    assert cm.fa_h0 <= 0.1 + 3 * sigma
    assert cm.fa_h1 <= 0.1 + 3 * sigma


@pytest.mark.parametrize("n", [4, 8, 16])
@pytest.mark.parametrize("p2", [None, 1.0, 5.0])
@pytest.mark.parametrize("ab", [0.05, 0.1, 0.2, 0.3])
def test_surrogate_calibration_matches_exhaustive_search(n, p2, ab):
    s = DiscreteSurrogate.from_model(SignalModel(1.0, 2.0, (0.5, 6.5), n), p2=p2)
    best = exhaustive_surrogate_optimum(s, ab, ab)
    if best is None:
        with pytest.raises(InfeasibleConstraints):
            calibrate_surrogate(s, ConstraintPair(ab, ab))
    else:
        det = calibrate_surrogate(s, ConstraintPair(ab, ab))
        assert det.report.p_h2 == pytest.approx(best, abs=1e-12)
        assert det.report.fa_h0 <= ab + 1e-12 and det.report.fa_h1 <= ab + 1e-12


def test_infeasible_constraints(model, single):
    with pytest.raises(InfeasibleConstraints):
        calibrate(model, single, "glrt", ConstraintPair(0.0, 0.5))
    with pytest.raises(InfeasibleConstraints):
        calibrate(model.with_samples(2), single, "glrt", ConstraintPair(0.01, 0.01))
    with pytest.raises(ValueError):
        calibrate(model, single, "glrt", ConstraintPair(0.1, 0.1), tolerance=0)


def test_boundary_constraints(model, single):
    det = calibrate(model, single, "glrt", ConstraintPair(0.0, 1.0))
    assert det.offset_h0 == math.inf
    assert det.report.fa_h0 == 0.0
    det = calibrate(model, single, "glrt", ConstraintPair(1.0, 0.1))
    assert det.offset_h0 == -math.inf
    assert det.report.fa_h1 == pytest.approx(0.1, abs=1e-9)


def test_heterogeneous_analytic_rejected(model):
    with pytest.raises(ValueError):
        calibrate(model, SensorNetwork((1.0, 2.0)), "glrt", ConstraintPair(0.1, 0.1))


@pytest.mark.parametrize("scheme", ["genie", "glrt"])
def test_monotone_in_samples(model, single, scheme):
    p = [calibrate(model.with_samples(n), single, scheme, ConstraintPair(0.1, 0.1)).report.p_h2
         for n in (8, 16, 32, 64)]
    assert all(b >= a - 1e-9 for a, b in zip(p, p[1:]))


@pytest.mark.parametrize("scheme", ["genie", "glrt"])
def test_monotone_in_alpha_beta(model, single, scheme):
    p = [calibrate(model, single, scheme, ConstraintPair(a, a)).report.p_h2 for a in (0.02, 0.05, 0.1, 0.2)]
    assert all(b >= a - 1e-9 for a, b in zip(p, p[1:]))


@pytest.mark.parametrize("ab", [0.02, 0.05, 0.1, 0.2])
def test_genie_dominates_glrt(model, single, ab):
    c = ConstraintPair(ab, ab)
    assert calibrate(model, single, "genie", c).report.p_h2 >= calibrate(model, single, "glrt", c).report.p_h2 - 1e-9


def test_genie_uniform_truth_calibrates(model, single):
    truth = ScenarioTruth(2, None, DrawRule.UNIFORM_OVER_RANGE)
    det = calibrate(model, single, "genie", ConstraintPair(0.1, 0.1), truth=truth)
    assert det.genie_p2 == UNIFORM_PRIOR
    assert det.report.fa_h0 == pytest.approx(0.1, abs=1e-9)
    cm = run_trials(model, single, det, 20_000, seed=5, truth=truth)
    assert cm.p_h2 == pytest.approx(det.report.p_h2, abs=3 * cm.half_width(2, 2))


@given(st.floats(0.05, 20.0))
def test_decisions_scale_invariant(c):
    m = SignalModel(1.0, 2.0, (0.5, 6.5), 16)
    net = SensorNetwork.homogeneous(1)
    a = calibrate(m, net, "glrt", ConstraintPair(0.1, 0.1))
    b = calibrate(m.scaled(c), net, "glrt", ConstraintPair(0.1, 0.1))
    for ra, rb in zip(a.regions, b.regions):
        assert rb.hypothesis == ra.hypothesis
        assert rb.upper == pytest.approx(c * ra.upper, rel=1e-7)
    blocks = [generate_block(m, net, ScenarioTruth(h, 3.5 if h == 2 else None), 0, 1, k)
              for h in range(3) for k in range(30)]
    scaled = [generate_block(m.scaled(c), net, ScenarioTruth(h, 3.5 * c if h == 2 else None), 0, 1, k)
              for h in range(3) for k in range(30)]
    ta = np.array([x.energy for x in blocks])
    tb = np.array([x.energy for x in scaled])
    assert np.array_equal(a.decide_batch(ta), b.decide_batch(tb))


@pytest.mark.parametrize("scheme", ["genie", "glrt"])
def test_monte_carlo_agrees_with_analytic(model, single, scheme):
    c = ConstraintPair(0.1, 0.1)
    ana = calibrate(model, single, scheme, c)
    mc = calibrate(model, single, scheme, c, method=Method.MONTE_CARLO, seed=3)
    assert mc.report.trials >= 100_000
    se = math.sqrt(0.1 * 0.9 / mc.report.trials)
    exact = exact_rates(mc)
    assert abs((1 - exact[0, 0]) - ana.report.fa_h0) <= 3 * se
    assert abs((1 - exact[1, 1]) - ana.report.fa_h1) <= 3 * se
    assert mc.report.fa_h0 <= 0.1 + 1e-12 and mc.report.fa_h1 <= 0.1 + 1e-12


def test_monte_carlo_heterogeneous_sensors(model):
    net = SensorNetwork((1.0, 0.5, 2.0))
    det = calibrate(model, net, "glrt", ConstraintPair(0.1, 0.1), method="monte_carlo", seed=1)
    assert isinstance(det, CalibratedDetector) and det.regions == ()
    cm = run_trials(model, net, det, 50_000, seed=77)
    assert cm.fa_h0 <= 0.1 + 3 * cm.fa_half_width(0)
    assert cm.fa_h1 <= 0.1 + 3 * cm.fa_half_width(1)


def test_gamma_logpdf_matches_scipy():
    t = np.linspace(0.01, 10, 50)
    assert np.allclose(gamma_logpdf(t, 16, 2.0), stats.gamma.logpdf(t, 16, scale=2.0 / 16), atol=1e-10)


def test_draws_land_in_their_regions(model, single):
    det = calibrate(model, single, "glrt", ConstraintPair(0.1, 0.1))
    t, _ = draw_statistics(model, single, ScenarioTruth(1), rng.derive_key(2), 1000)
    assert [det.region_of(x) for x in t[:, 0]] == det.decide_batch(t).tolist()
