import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_draw
from svar_signs.analysis import impulse_responses, ma_coefficients, structural_shocks
from svar_signs.core_data import DesignMatrices
from svar_signs.identification import (
    NarrativeRestriction,
    NoAcceptedDrawsError,
    RestrictionError,
    RestrictionSet,
    StructuralDraw,
    WeightedStructuralSample,
    check_sign,
    ess,
    haar_sample,
    identify,
    narrative_satisfied,
    narrative_weight,
    resample,
    zero_restricted_q,
)
from svar_signs.posterior_sampler import NumericalError, ReducedFormDraw, sample_niw

nan = np.nan


def optimism_pattern(N=5):
    s = np.full((N, N), nan)
    s[0, 0] = 0
    s[1, 0] = 1
    return RestrictionSet(s)


# restriction encoding ---------------------------------------------------------

def test_codes_validated():
    with pytest.raises(RestrictionError, match="code 2"):
        RestrictionSet(np.array([[2.0, nan], [nan, nan]]))
    with pytest.raises(RestrictionError):
        RestrictionSet(np.full((2, 2), nan), sign_B=np.array([[0.0, nan], [nan, nan]]))
    with pytest.raises(RestrictionError):
        RestrictionSet(np.full((2, 3), nan))


def test_promotion_and_queries():
    r = optimism_pattern()
    assert r.sign_irf.shape == (5, 5, 1)
    assert r.has_zeros and r.has_signs
    assert r.zeros_by_shock()[0] == [(0, 0)]
    assert r.zero_order()[0] == 0
    assert not RestrictionSet.unrestricted(3).has_signs


def test_feasibility():
    s = np.full((2, 2), nan)
    s[:, 0] = 0
    with pytest.raises(RestrictionError, match="infeasible"):
        RestrictionSet(s).check_feasible()
    s = np.full((3, 3, 2), nan)
    s[0, 0, 0] = s[1, 0, 0] = 0
    s[0, 1, 1] = 0
    RestrictionSet(s).check_feasible()
    s[1, 1, 1] = 0
    with pytest.raises(RestrictionError):
        RestrictionSet(s).check_feasible()


def test_narrative_restriction_validation():
    with pytest.raises(RestrictionError):
        NarrativeRestriction(kind="hd-largest")
    with pytest.raises(RestrictionError):
        NarrativeRestriction(sign=0)
    with pytest.raises(RestrictionError):
        NarrativeRestriction(start=0)
    r = NarrativeRestriction(start=10, length=3)
    assert list(r.periods) == [9, 10, 11]
    with pytest.raises(RestrictionError, match="effective sample"):
        r.validate(2, 11)
    with pytest.raises(RestrictionError):
        NarrativeRestriction(shock=3).validate(2, 20)


# Haar and zero-restricted rotations -------------------------------------------

def test_haar_one_dimensional():
    rng = np.random.default_rng(0)
    signs = np.array([haar_sample(1, rng)[0, 0] for _ in range(10000)])
    assert set(np.unique(signs)) == {-1.0, 1.0}
    assert abs(np.mean(signs > 0) - 0.5) < 0.02


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_haar_orthogonal(N, seed):
    Q = haar_sample(N, seed)
    assert np.abs(Q.T @ Q - np.eye(N)).max() < 1e-10


def test_zero_q_without_zeros_matches_haar():
    rng = np.random.default_rng(1)
    d = random_draw(3, 1, rng, with_q=False)
    r = RestrictionSet(np.full((3, 3), nan))
    a = np.array([zero_restricted_q(d.A, d.Sigma, r, rng)[0, 0] ** 2 for _ in range(20000)])
    b = np.array([haar_sample(3, rng)[0, 0] ** 2 for _ in range(20000)])
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 4 * se
    assert abs(a.mean() - 1 / 3) < 0.01


def test_zero_q_optimism_pattern():
    rng = np.random.default_rng(2)
    r = optimism_pattern()
    for _ in range(200):
        d = random_draw(5, 4, rng, with_q=False, coef_scale=0.1)
        Q = zero_restricted_q(d.A, d.Sigma, r, rng)
        assert np.abs(Q.T @ Q - np.eye(5)).max() < 1e-10
        irf0 = np.linalg.cholesky(d.Sigma) @ Q
        assert abs(irf0[0, 0]) < 1e-8


def test_zero_q_two_dim_angle_oracle():
    rng = np.random.default_rng(3)
    d = random_draw(2, 1, rng, with_q=False)
    s = np.full((2, 2, 2), nan)
    s[0, 0, 1] = 0  # response of variable 1 to shock 1 at horizon 1
    r = RestrictionSet(s)
    P = np.linalg.cholesky(d.Sigma)
    row = ma_coefficients(d.A, 1)[1][0] @ P
    theta = np.arctan2(row[0], -row[1])  # direction perpendicular to row
    target = np.array([np.cos(theta), np.sin(theta)])
    for _ in range(20):
        Q = zero_restricted_q(d.A, d.Sigma, r, rng)
        assert_allclose(abs(Q[:, 0] @ target), 1.0, atol=1e-12)
        assert abs(row @ Q[:, 0]) < 1e-12


def test_zero_q_impact_two_dim():
    rng = np.random.default_rng(4)
    d = random_draw(2, 1, rng, with_q=False)
    s = np.full((2, 2), nan)
    s[0, 0] = 0
    Q = zero_restricted_q(d.A, d.Sigma, RestrictionSet(s), rng)
    # first row of lower-triangular P is (p11, 0), so q1 = +-e2
    assert_allclose(np.abs(Q[:, 0]), [0, 1], atol=1e-14)


def test_zero_q_rank_deficient():
    N = 2
    A = np.vstack([np.eye(N), np.zeros((1, N))])  # Psi_1 = I, so rows at h=0 and h=1 coincide
    s = np.full((N, N, 2), nan)
    s[0, 0, 0] = s[0, 0, 1] = 0
    s2 = np.full((3, 3, 2), nan)
    s2[0, 0, 0] = s2[0, 0, 1] = 0
    A3 = np.vstack([np.eye(3), np.zeros((1, 3))])
    with pytest.raises(NumericalError, match="rank deficient"):
        zero_restricted_q(A3, np.eye(3), RestrictionSet(s2), 0)
    with pytest.raises(RestrictionError):
        zero_restricted_q(A, np.eye(N), RestrictionSet(s), 0)


# sign checks --------------------------------------------------------------------

def _draw_with_irf0(values):
    B = np.asarray(values, dtype=float)
    N = B.shape[0]
    return StructuralDraw(np.zeros((N + 1, N)), np.eye(N), np.eye(N)), B[:, :, None]


def test_check_sign_pass():
    d, irf = _draw_with_irf0([[3.2, 0.0], [0.0, 1.0]])
    r = RestrictionSet(np.array([[1.0, nan], [nan, nan]]))
    passed, out = check_sign(d, irf, r)
    assert passed.all() and out is d


def test_check_sign_flip():
    d, irf = _draw_with_irf0([[-3.2, 0.0], [0.0, 1.0]])
    r = RestrictionSet(np.array([[1.0, nan], [nan, nan]]))
    passed, out = check_sign(d, irf, r)
    assert passed.all()
    assert_array_equal(out.Q[:, 0], -d.Q[:, 0])
    assert_array_equal(out.Q[:, 1], d.Q[:, 1])


def test_check_sign_flip_cannot_fix_both():
    d, irf = _draw_with_irf0([[-3.2, 0.0], [-0.5, 1.0]])
    r = RestrictionSet(np.array([[1.0, nan], [-1.0, nan]]))
    passed, _ = check_sign(d, irf, r)
    assert list(passed) == [False, True]


def test_check_sign_structural_matrix():
    Sigma = np.array([[1.0, 0.5], [0.5, 2.0]])
    d = StructuralDraw(np.zeros((3, 2)), Sigma, np.eye(2))
    S = d.structural_matrix  # row j = equation of shock j
    assert_allclose(S @ np.linalg.cholesky(Sigma) @ d.Q, np.eye(2), atol=1e-14)
    code = -np.sign(S[1, 0])
    r = RestrictionSet(np.full((2, 2), nan), sign_B=np.array([[nan, nan], [code, nan]]))
    passed, out = check_sign(d, impulse_responses(d, 0), r)
    assert passed.all()
    assert np.sign(out.structural_matrix[1, 0]) == code
    assert_array_equal(out.Q[:, 1], -d.Q[:, 1])


# narrative -----------------------------------------------------------------------

def test_shock_sign_predicate():
    eps = np.array([[0.3, 1.0], [-0.7, 0.2]])
    r = NarrativeRestriction("shock-sign", shock=1, start=2, sign=-1)
    assert narrative_satisfied(None, eps, None, r)
    assert not narrative_satisfied(None, eps, None, NarrativeRestriction("shock-sign", shock=1, start=1, sign=-1))
    with pytest.raises(RestrictionError):
        narrative_satisfied(None, eps, None, NarrativeRestriction(start=2, length=2))


def _hd(contrib):
    c = np.asarray(contrib, dtype=float)
    hd = np.zeros((1, c.size, 1))
    hd[0, :, 0] = c
    return np.zeros((1, c.size)), hd


def test_hd_predicates():
    eps, hd = _hd([5, 1, 1, 1, 1])
    assert narrative_satisfied(None, eps, hd, NarrativeRestriction("hd-overwhelming", 1, 1))
    assert not narrative_satisfied(None, eps, hd, NarrativeRestriction("hd-negligible", 1, 1))
    eps, hd = _hd([2, 3, 1])
    assert not narrative_satisfied(None, eps, hd, NarrativeRestriction("hd-most-important", 1, 1))
    assert narrative_satisfied(None, eps, hd, NarrativeRestriction("hd-most-important", 2, 1))
    assert narrative_satisfied(None, eps, hd, NarrativeRestriction("hd-least-important", 3, 1))
    assert narrative_satisfied(None, eps, hd, NarrativeRestriction("hd-negligible", 3, 1))
    eps, hd = _hd([-3, 2.5, -0.4])
    assert narrative_satisfied(None, eps, hd, NarrativeRestriction("hd-overwhelming", 1, 1))


def _white_noise_design(N, T, seed):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((T + 1, N))
    return DesignMatrices(y[1:], np.hstack([y[:-1], np.ones((T, 1))]), 1, last_obs=y[-1:])


def _satisfying_draw(design, restrictions, seed):
    rng = np.random.default_rng(seed)
    N = design.N
    while True:
        d = StructuralDraw(np.zeros((N + 1, N)), np.eye(N), haar_sample(N, rng))
        eps = structural_shocks(d, design)
        if all(narrative_satisfied(d, eps, None, r) for r in restrictions.narrative):
            return d


def test_narrative_weight_single_restriction():
    design = _white_noise_design(3, 20, 0)
    r = RestrictionSet(np.full((3, 3), nan), narrative=[NarrativeRestriction("shock-sign", 1, 5, sign=-1)])
    d = _satisfying_draw(design, r, 1)
    w = narrative_weight(d, design, r, M=10000, seed=2)
    assert abs(w - 2) < 0.1


def test_narrative_weight_two_restrictions():
    design = _white_noise_design(3, 20, 0)
    r = RestrictionSet(
        np.full((3, 3), nan),
        narrative=[NarrativeRestriction("shock-sign", 1, 5, sign=-1), NarrativeRestriction("shock-sign", 2, 9, sign=1)],
    )
    d = _satisfying_draw(design, r, 1)
    w = narrative_weight(d, design, r, M=10000, seed=3)
    assert abs(w - 4) < 0.4


def test_narrative_weight_trivia():
    design = _white_noise_design(2, 10, 0)
    d = StructuralDraw(np.zeros((3, 2)), np.eye(2), np.eye(2))
    assert narrative_weight(d, design, RestrictionSet.unrestricted(2), M=5) == 1.0
    rare = RestrictionSet(np.full((2, 2), nan), narrative=[NarrativeRestriction("shock-sign", 1, 1, length=10)])
    w = narrative_weight(d, design, rare, M=4, seed=0)
    assert w <= 4
    with pytest.raises(ValueError):
        narrative_weight(d, design, rare, M=0)


def test_narrative_weight_hd_kind_is_bounded_probability():
    design = _white_noise_design(2, 15, 4)
    r = RestrictionSet(np.full((2, 2), nan), narrative=[NarrativeRestriction("hd-most-important", 1, 6, variable=1)])
    rng = np.random.default_rng(0)
    A = np.vstack([0.4 * np.eye(2), np.zeros((1, 2))])
    w = narrative_weight(StructuralDraw(A, np.eye(2), haar_sample(2, rng)), design, r, M=4000, seed=1)
    assert 1.0 <= w <= 4000


# ess and resampling ----------------------------------------------------------

def test_ess_examples():
    assert_allclose(ess(np.ones(50)), 50)
    assert_allclose(ess([0, 0, 3.0, 0]), 1)
    with pytest.raises(ValueError):
        ess([0.0, 0.0])
    with pytest.raises(ValueError):
        ess([1.0, -1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=40).filter(lambda w: max(w) > 1e-3), st.floats(1e-6, 1e6))
def test_ess_scale_invariant_and_bounded(w, c):
    e = ess(w)
    assert 1 - 1e-9 <= e <= len(w) + 1e-9
    assert_allclose(ess(np.asarray(w) * c), e, rtol=1e-9)


def _toy_sample(n, rng):
    draws = [StructuralDraw(np.full((2, 1), float(i)), np.eye(1), np.eye(1), source=i) for i in range(n)]
    w = rng.exponential(size=n)
    return WeightedStructuralSample(draws, w, ess(w))


@pytest.mark.parametrize("method", ["stratified", "multinomial"])
def test_resample_preserves_weighted_mean(method):
    rng = np.random.default_rng(5)
    s = _toy_sample(400, rng)
    x = np.array([d.A[0, 0] for d in s.draws])
    out = resample(s, 20000, seed=1, method=method)
    y = np.array([d.A[0, 0] for d in out.draws])
    wm = np.sum(s.weights * x) / s.weights.sum()
    assert abs(y.mean() - wm) < 3 * y.std() / np.sqrt(y.size)
    assert_array_equal(out.weights, 1.0)
    assert out.ess == 20000


def test_resample_errors():
    s = _toy_sample(3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        resample(WeightedStructuralSample(s.draws, np.zeros(3), 0.0), 5)
    with pytest.raises(ValueError):
        resample(s, 5, method="systematic")


def test_resample_stratified_counts():
    draws = [StructuralDraw(np.zeros((2, 1)), np.eye(1), np.eye(1), source=i) for i in range(4)]
    s = WeightedStructuralSample(draws, np.array([1.0, 1.0, 2.0, 0.0]), 0.0)
    out = resample(s, 8, seed=0)
    counts = np.bincount([d.source for d in out.draws], minlength=4)
    assert_array_equal(counts, [2, 2, 4, 0])


# identify ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def rf_draws(var3):
    from svar_signs.posterior_sampler import niw_update
    from svar_signs.priors import MinnesotaHyper, minnesota_niw

    ts, design, *_ = var3
    post = niw_update(minnesota_niw(MinnesotaHyper(psi=np.ones(3)), design.p, 3), design)
    return design, sample_niw(post, 300, seed=8)


def test_identify_unrestricted(rf_draws):
    design, rf = rf_draws
    out = identify(rf, RestrictionSet.unrestricted(3), design, seed=1)
    assert len(out.draws) == 300
    assert_array_equal(out.weights, 1.0)
    assert out.ess == 300
    assert out.stats["rotations_tried"] == 300


def test_identify_single_sign_always_accepted(rf_draws):
    design, rf = rf_draws
    s = np.full((3, 3), nan)
    s[0, 1] = 1
    out = identify(rf, RestrictionSet(s), design, seed=2)
    assert out.stats["acceptance_rate"] == 1 and out.stats["rotations_tried"] == 300
    assert_array_equal(out.weights, 1.0)
    for d in out.draws:
        assert d.B[0, 1] > 0


def test_identify_all_invariants(rf_draws):
    design, rf = rf_draws
    s = np.full((3, 3, 2), nan)
    s[0, 0, 0] = 0
    s[1, 0, 0] = 1
    s[2, 1, 1] = -1
    r = RestrictionSet(s, narrative=[NarrativeRestriction("shock-sign", 1, 30, sign=-1)])
    out = identify(rf, r, design, M=200, seed=3)
    assert len(out.draws) > 100
    assert np.all(out.weights > 0)
    for d in out.draws:
        assert np.abs(d.Q.T @ d.Q - np.eye(3)).max() < 1e-10
        assert_allclose(d.B @ d.B.T, d.Sigma, atol=1e-8)
        irf = impulse_responses(d, 1)
        assert abs(irf[0, 0, 0]) < 1e-8
        assert irf[1, 0, 0] > 0 and irf[2, 1, 1] < 0
        assert structural_shocks(d, design)[29, 0] < 0


def test_identify_deterministic_across_workers(rf_draws):
    design, rf = rf_draws
    r = optimism_pattern(3)
    r = RestrictionSet(r.sign_irf, narrative=[NarrativeRestriction("shock-sign", 2, 12)])
    a = identify(rf[:120], r, design, M=100, seed=4, workers=1)
    b = identify(rf[:120], r, design, M=100, seed=4, workers=4)
    assert_array_equal(a.weights, b.weights)
    for x, y in zip(a.draws, b.draws):
        assert_array_equal(x.Q, y.Q)


def test_identify_no_accepted(rf_draws):
    design, _ = rf_draws
    # Psi_1 = -I: a response cannot be positive at horizon 0 and 1
    A = np.vstack([-np.eye(3), np.zeros((3, 3)), np.zeros((1, 3))])
    rf = [ReducedFormDraw(A, np.eye(3))] * 5
    s = np.full((3, 3, 2), nan)
    s[0, 0, 0] = s[0, 0, 1] = 1
    with pytest.raises(NoAcceptedDrawsError) as e:
        identify(rf, RestrictionSet(s), design, max_tries=3)
    assert e.value.stats["rotations_tried"] == 15


def test_identify_stops_at_target(rf_draws):
    design, rf = rf_draws
    out = identify(rf, RestrictionSet.unrestricted(3), design, S_target=50, seed=1)
    assert len(out.draws) == 50
