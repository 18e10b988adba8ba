"""Scalar fixed-point systems of the linear model.

With ``g(tau) = delta tau^2 - sigma^2 - mmse(tau^2)`` the effective noises are

* ``tau_alg``: sup of ``{g < 0}``, ``tau_alg_star``: sup of ``{g <= 0}``
  (the limit of state evolution),
* ``tau_stat``: global minimizer of the replica-symmetric potential, whose
  stationary points are the roots of ``g``,
* ``tau_cvx``: sup of ``{delta tau^2 - sigma^2 < R_opt(tau)}`` with ``R_opt``
  the separable-optimal convex risk.

The asymptotic loss attached to an effective noise ``tau`` is
``delta tau^2 - sigma^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .optimal_prox import ROptCurve, solve_optimal_prox
from .priors import (
    ChannelCurve,
    DomainError,
    Prior,
    default_tau_grid,
    logconcavity_certificate,
    mmse,
    potential_from_mi,
)

UNIQUE_GAP = 1e-6


@dataclass(frozen=True)
class ProblemParams:
    delta: float
    sigma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise DomainError("delta must be positive and finite")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise DomainError("sigma must be non-negative and finite")

    def risk(self, tau_sq):
        """Asymptotic loss ``delta tau^2 - sigma^2`` of effective noise ``tau``."""
        return self.delta * np.asarray(tau_sq) - self.sigma**2


@dataclass(frozen=True)
class StateEvolutionTrace:
    tau_sq: list
    converged: bool
    limit: float


def state_evolution(prior: Prior, params: ProblemParams, max_t: int = 1000,
                    tol: float = 1e-12) -> StateEvolutionTrace:
    """``tau_{t+1}^2 = (sigma^2 + mmse(tau_t^2)) / delta`` from ``(sigma^2 + s2) / delta``."""
    if max_t < 1:
        raise DomainError("max_t must be at least 1")
    d, s2 = params.delta, params.sigma**2
    seq = [(s2 + prior.second_moment) / d]
    converged = False
    for _ in range(max_t):
        t2 = seq[-1]
        nxt = (s2 + mmse(prior, math.sqrt(t2))) / d
        # the map is monotone, so the sequence never increases past its start
        nxt = min(nxt, t2)
        seq.append(nxt)
        if abs(nxt - t2) < tol:
            converged = True
            break
    return StateEvolutionTrace(seq, converged, seq[-1])


@dataclass(frozen=True)
class EffectiveNoiseReport:
    delta: float
    sigma: float
    tau_stat_sq: float
    tau_alg_sq: float
    tau_alg_star_sq: float
    tau_cvx_sq: float
    unique_stat_min: bool
    stationary_points: tuple = field(default=())

    @property
    def risks(self) -> dict:
        p = ProblemParams(self.delta, self.sigma)
        out = {}
        for name in ("stat", "alg", "alg_star", "cvx"):
            t2 = getattr(self, f"tau_{name}_sq")
            out[name] = float(max(p.risk(t2), 0.0)) if math.isfinite(t2) else math.nan
        return out


def _g(prior, params, tau):
    return params.delta * tau * tau - params.sigma**2 - mmse(prior, tau)


def _refine(fn, lo: float, hi: float) -> float:
    """Boundary between ``lo`` (fn < 0) and ``hi`` (fn >= 0)."""
    flo, fhi = fn(lo), fn(hi)
    if flo >= 0:
        return lo
    if fhi < 0:
        return hi
    return brentq(fn, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def _sup_negative(values: np.ndarray, taus: np.ndarray, fn, strict: bool) -> float:
    mask = values < 0 if strict else values <= 0
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return 0.0
    i = int(idx[-1])
    if i == taus.size - 1:
        return float(taus[-1])
    return float(_refine(fn, float(taus[i]), float(taus[i + 1])))


def effective_noises(prior: Prior, params: ProblemParams, r_opt: ROptCurve | None = None,
                     curve: ChannelCurve | None = None, convex: bool = True,
                     grid=None) -> EffectiveNoiseReport:
    """Evaluate the four effective noises on a noise grid with root refinement.

    ``curve`` supplies the Bayes risk and mutual information on the grid; it
    defaults to the standard grid for ``(prior, delta, sigma)``. The convex
    noise comes from ``r_opt`` when given; otherwise, if ``convex`` is set,
    the optimal-prox problem is solved only at the grid points scanned
    downward from ``sqrt((sigma^2 + s2) / delta)``, which yields the same
    grid supremum. With ``convex=False`` it is reported as ``nan``.
    """
    d, sigma = params.delta, params.sigma
    if prior.is_point_mass:
        t2 = sigma**2 / d
        return EffectiveNoiseReport(d, sigma, t2, t2, t2, t2, True, (math.sqrt(t2),))
    if curve is None:
        curve = ChannelCurve.build(prior, default_tau_grid(prior, d, sigma))
    taus = curve.taus
    g_grid = d * taus**2 - sigma**2 - curve.mmse

    def g(t):
        return _g(prior, params, t)

    tau_alg = _sup_negative(g_grid, taus, g, strict=True)
    tau_alg_star = max(_sup_negative(g_grid, taus, g, strict=False), tau_alg)

    # stationary points: sign changes of g; local minima of phi where g goes - to +
    roots, minima = [], []
    sgn = np.sign(g_grid)
    for i in np.flatnonzero(sgn[:-1] != sgn[1:]):
        if sgn[i] == 0:
            continue
        r = brentq(g, taus[i], taus[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps) \
            if sgn[i + 1] != 0 else float(taus[i + 1])
        roots.append(r)
        if sgn[i] < 0:
            minima.append(r)
    if sigma == 0 and (prior.is_discrete or d >= 1):
        # phi -> -inf as tau -> 0: the infimum sits at zero noise
        cands = [(-math.inf, 0.0)]
        cands += [(float(potential_from_mi(curve.mutual_info_at(r), r, d, sigma)), r) for r in minima]
    else:
        if g_grid[0] > 0:
            minima.append(float(taus[0]))
        cands = [(float(potential_from_mi(curve.mutual_info_at(r), r, d, sigma)), r) for r in minima]
    if not cands:
        # g never crosses upward: the potential is minimized at the right-most stationary point
        cands = [(0.0, tau_alg_star)]
    cands.sort()
    unique = len(cands) == 1 or (cands[1][0] - cands[0][0] > UNIQUE_GAP)
    tau_stat = min(cands[0][1], tau_alg)  # ordering tau_stat <= tau_alg

    if r_opt is None:
        tau_cvx = _lazy_convex_noise(prior, params, taus, tau_alg, grid) if convex else math.nan
    else:
        def h(t):
            return d * t * t - sigma**2 - float(r_opt.risk_at(t))

        rt = r_opt.taus
        h_grid = d * rt**2 - sigma**2 - r_opt.risk_at(rt)
        tau_cvx = max(_sup_negative(h_grid, rt, h, strict=True), tau_alg)

    return EffectiveNoiseReport(
        d, sigma, tau_stat**2, tau_alg**2, tau_alg_star**2,
        tau_cvx**2 if math.isfinite(tau_cvx) else math.nan, unique, tuple(roots),
    )


def _lazy_convex_noise(prior: Prior, params: ProblemParams, taus: np.ndarray,
                       tau_alg: float, grid) -> float:
    d, sigma = params.delta, params.sigma
    if not prior.is_discrete:
        # the Bayes rule of a Gaussian prior is linear with slope < 1, so R_opt = mmse
        return tau_alg

    def h(t):
        r = max(solve_optimal_prox(prior, t, grid).risk, mmse(prior, t))
        return d * t * t - sigma**2 - r

    top = math.sqrt((sigma**2 + prior.second_moment) / d)
    above = taus[(taus > tau_alg) & (taus <= top)][::-1]
    prev = None
    for t in above:
        if h(float(t)) < 0:
            return float(_refine(h, float(t), float(prev))) if prev is not None else float(t)
        prev = t
    return tau_alg


@dataclass(frozen=True)
class PhaseRow:
    delta: float
    cvx_equals_alg: bool
    cvx_equals_stat: bool


@dataclass(frozen=True)
class PhaseReport:
    rows: list
    delta_alg: float
    delta_stat: float

    def to_csv(self) -> str:
        body = "".join(f"{r.delta!r},{int(r.cvx_equals_alg)},{int(r.cvx_equals_stat)}\n" for r in self.rows)
        return "delta,label_alg,label_stat\n" + body


def phase_classify(prior: Prior, sigma: float, delta_grid) -> PhaseReport:
    """Label each ``delta`` by the log-concavity of the noisy density at ``tau_alg`` and ``tau_stat``.

    Thresholds are the first grid ``delta`` where a label is false (``inf`` if
    never), with ``delta_stat <= delta_alg`` enforced.
    """
    if not sigma > 0:
        raise DomainError("phase classification needs sigma > 0")
    deltas = np.asarray(sorted(delta_grid), dtype=float)
    if deltas.size == 0:
        raise DomainError("delta grid is empty")
    cap_grid = default_tau_grid(prior, float(deltas.min()), sigma)
    curve = None if not prior.is_discrete and not prior.is_point_mass else ChannelCurve.build(prior, cap_grid)
    rows = []
    for d in deltas:
        params = ProblemParams(float(d), sigma)
        c = curve if curve is not None else ChannelCurve.build(prior, cap_grid)
        rep = effective_noises(prior, params, curve=c)
        lab_alg = _certified(prior, rep.tau_alg_sq)
        lab_stat = _certified(prior, rep.tau_stat_sq)
        rows.append(PhaseRow(float(d), lab_alg, lab_stat))
    d_alg = next((r.delta for r in rows if not r.cvx_equals_alg), math.inf)
    d_stat = next((r.delta for r in rows if not r.cvx_equals_stat), math.inf)
    return PhaseReport(rows, d_alg, min(d_stat, d_alg))


def _certified(prior: Prior, tau_sq: float) -> bool:
    if tau_sq <= 0:
        return not prior.is_discrete or prior.is_point_mass
    return logconcavity_certificate(prior, math.sqrt(tau_sq)).log_concave


@dataclass(frozen=True)
class SnrGapReport:
    snr: float
    ridge_tau_sq: float
    stat_tau_sq: float
    gap_estimate: float
    low_snr_bound: float
    zero_s3_bound: float


def ridge_tau_sq(s2: float, params: ProblemParams) -> float:
    """Positive root of ``(delta u - sigma^2)(s2 + u) = s2 u``."""
    d, v = params.delta, params.sigma**2
    b = d * s2 - v - s2
    return float((-b + math.sqrt(b * b + 4 * d * v * s2)) / (2 * d))


def snr_gap_bounds(prior: Prior, params: ProblemParams) -> SnrGapReport:
    """Ridge-versus-Bayes gap and its low-SNR expansion coefficients.

    The gap is ``mmse_{N(0, s2)}(tau_ridge^2) - mmse_pi(tau_stat^2)``; the
    bounds are ``s2 delta^2 s3^2 / (2 s2^3) snr^2`` and the cubic coefficient
    ``s2 delta^3 (3/2 - s4/s2^2 + s4^2 / (6 s2^4)) snr^3`` used when ``s3 = 0``.
    """
    if not params.sigma > 0:
        raise DomainError("SNR gap needs sigma > 0")
    s2, s3, s4 = prior.moment(2), prior.moment(3), prior.moment(4)
    snr = s2 / params.sigma**2
    tr = ridge_tau_sq(s2, params)
    ridge_loss = s2 * tr / (s2 + tr)
    rep = effective_noises(prior, params)
    gap = ridge_loss - mmse(prior, math.sqrt(rep.tau_stat_sq))
    low = s2 * params.delta**2 * s3**2 / (2 * s2**3) * snr**2
    cubic = s2 * params.delta**3 * (1.5 - s4 / s2**2 + s4**2 / (6 * s2**4)) * snr**3
    return SnrGapReport(snr, tr, rep.tau_stat_sq, float(gap), float(low), float(cubic))
