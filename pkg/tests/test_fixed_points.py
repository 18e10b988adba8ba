import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regap.fixed_points import (
    ProblemParams,
    effective_noises,
    phase_classify,
    ridge_tau_sq,
    snr_gap_bounds,
    state_evolution,
)
from regap.priors import (
    ChannelCurve,
    DomainError,
    Prior,
    default_tau_grid,
    mmse,
    sparse_sign_prior,
    three_point_prior,
)

GOLDEN = (1 + math.sqrt(5)) / 2
SIGN = Prior.discrete([(-1, 0.5), (1, 0.5)])


def test_params_validation():
    with pytest.raises(DomainError):
        ProblemParams(0.0, 1.0)
    with pytest.raises(DomainError):
        ProblemParams(1.0, -1.0)
    assert ProblemParams(2.0, 1.0).risk(1.0) == pytest.approx(1.0)


def test_se_point_mass():
    tr = state_evolution(Prior.point_mass(0.3), ProblemParams(0.5, 1.0), max_t=5)
    assert tr.tau_sq[0] == pytest.approx((1.0 + 0.09) / 0.5)
    assert np.allclose(tr.tau_sq[1:], 2.0)


def test_se_gaussian_golden_ratio():
    tr = state_evolution(Prior.gaussian(1.0), ProblemParams(1.0, 1.0))
    assert tr.converged
    assert tr.limit == pytest.approx(GOLDEN, abs=1e-9)


@pytest.mark.parametrize("prior", [three_point_prior(), SIGN, sparse_sign_prior(0.2)])
def test_se_initial_value_exact(prior):
    params = ProblemParams(0.6, 0.3)
    tr = state_evolution(prior, params, max_t=3)
    assert tr.tau_sq[0] == (params.sigma**2 + prior.second_moment) / params.delta


def test_se_monotone_and_limit_matches_alg_star():
    prior = sparse_sign_prior(0.2)
    params = ProblemParams(0.5, 0.2)
    tr = state_evolution(prior, params)
    seq = np.asarray(tr.tau_sq)
    assert np.all(np.diff(seq) <= 1e-15)
    assert tr.limit >= params.sigma**2 / params.delta
    rep = effective_noises(prior, params, convex=False)
    assert tr.limit == pytest.approx(rep.tau_alg_star_sq, abs=1e-6)


def test_noises_point_mass_all_zero():
    rep = effective_noises(Prior.point_mass(0.0), ProblemParams(0.37, 0.0))
    assert rep.tau_stat_sq == rep.tau_alg_sq == rep.tau_alg_star_sq == rep.tau_cvx_sq == 0.0


def test_noises_gaussian_coincide():
    rep = effective_noises(Prior.gaussian(1.0), ProblemParams(1.0, 1.0))
    for v in (rep.tau_stat_sq, rep.tau_alg_sq, rep.tau_alg_star_sq, rep.tau_cvx_sq):
        assert v == pytest.approx(GOLDEN, abs=1e-6)
    assert rep.unique_stat_min
    assert rep.risks["stat"] == pytest.approx(GOLDEN - 1, abs=1e-6)


def test_stationarity_identities():
    prior = sparse_sign_prior(0.2)
    params = ProblemParams(0.5, 0.2)
    rep = effective_noises(prior, params, convex=False)
    for t2 in (rep.tau_alg_star_sq, rep.tau_stat_sq):
        g = params.delta * t2 - params.sigma**2 - mmse(prior, math.sqrt(t2))
        assert abs(g) <= 1e-8


@pytest.mark.parametrize("delta,sigma", [(0.3, 0.1), (0.5, 0.3), (0.8, 0.05), (1.2, 0.5)])
def test_ordering_with_convex_noise(delta, sigma):
    rep = effective_noises(sparse_sign_prior(0.2), ProblemParams(delta, sigma))
    assert rep.tau_cvx_sq >= rep.tau_alg_sq - 1e-6
    assert rep.tau_alg_sq >= rep.tau_stat_sq - 1e-6
    assert rep.tau_alg_star_sq >= rep.tau_alg_sq - 1e-6


@settings(max_examples=10, deadline=None)
@given(st.floats(0.15, 2.0), st.floats(0.01, 1.0), st.floats(0.05, 0.6))
def test_stat_noise_bounds_and_order(delta, sigma, eps):
    prior = sparse_sign_prior(eps)
    params = ProblemParams(delta, sigma)
    rep = effective_noises(prior, params, convex=False)
    lo, hi = sigma**2 / delta, (sigma**2 + prior.second_moment) / delta
    assert lo - 1e-9 <= rep.tau_stat_sq <= hi + 1e-9
    assert rep.tau_alg_sq >= rep.tau_stat_sq - 1e-6
    assert rep.tau_alg_star_sq >= rep.tau_alg_sq - 1e-6


def test_noises_non_increasing_in_delta():
    prior = sparse_sign_prior(0.2)
    curve = ChannelCurve.build(prior, default_tau_grid(prior, 0.2, 0.1))
    stat, alg = [], []
    for d in np.linspace(0.2, 1.5, 14):
        rep = effective_noises(prior, ProblemParams(float(d), 0.1), convex=False, curve=curve)
        stat.append(rep.tau_stat_sq)
        alg.append(rep.tau_alg_sq)
    assert np.all(np.diff(stat) <= 1e-9)
    assert np.all(np.diff(alg) <= 1e-9)


def test_three_point_noiseless_values():
    rep = effective_noises(three_point_prior(), ProblemParams(0.37, 0.0))
    assert rep.tau_alg_star_sq == pytest.approx(0.0, abs=1e-12)
    assert 0.37 * rep.tau_cvx_sq / three_point_prior().var == pytest.approx(0.18, abs=0.01)


def test_phase_gaussian_always_stat():
    rep = phase_classify(Prior.gaussian(1.0), 0.5, [0.2, 0.5, 1.0, 2.0])
    assert all(r.cvx_equals_stat and r.cvx_equals_alg for r in rep.rows)
    assert rep.delta_stat == math.inf


def test_phase_sign_prior_flips_and_is_monotone():
    deltas = np.linspace(0.2, 4.0, 20)
    rep = phase_classify(SIGN, 0.5, deltas)
    stat = [r.cvx_equals_stat for r in rep.rows]
    alg = [r.cvx_equals_alg for r in rep.rows]
    assert stat[0] and not stat[-1]
    assert math.isfinite(rep.delta_stat) and rep.delta_stat <= rep.delta_alg
    # true below the threshold, false above
    for labels in (stat, alg):
        first_false = labels.index(False) if False in labels else len(labels)
        assert all(labels[:first_false]) and not any(labels[first_false:])
    csv = rep.to_csv()
    assert csv.splitlines()[0].startswith("delta")
    with pytest.raises(DomainError):
        phase_classify(SIGN, 0.0, deltas)


def test_ridge_tau_solves_quadratic():
    params = ProblemParams(0.7, 0.4)
    u = ridge_tau_sq(1.3, params)
    assert params.delta * u - params.sigma**2 == pytest.approx(1.3 * u / (1.3 + u), abs=1e-14)


def test_gap_gaussian_zero():
    rep = snr_gap_bounds(Prior.gaussian(1.0), ProblemParams(1.0, 1.0))
    assert abs(rep.gap_estimate) <= 1e-6
    with pytest.raises(DomainError):
        snr_gap_bounds(Prior.gaussian(1.0), ProblemParams(1.0, 0.0))


def test_gap_symmetric_prior_uses_cubic_term():
    rep = snr_gap_bounds(sparse_sign_prior(0.3), ProblemParams(1.0, 5.0))
    assert rep.low_snr_bound == 0.0
    assert rep.zero_s3_bound != 0.0


def test_gap_asymmetric_low_snr_direction():
    prior = Prior.discrete([(-1.0, 0.2), (0.0, 0.7), (2.0, 0.1)])
    s2, s3 = prior.moment(2), prior.moment(3)
    delta = 1.0
    sigma = math.sqrt(s2 / 0.01)
    rep = snr_gap_bounds(prior, ProblemParams(delta, sigma))
    coef = delta**2 * s3**2 / (2 * s2**2)
    assert rep.snr == pytest.approx(0.01)
    assert rep.gap_estimate / rep.snr**2 <= 1.2 * coef
    assert rep.low_snr_bound == pytest.approx(coef * rep.snr**2)
