"""Separable-optimal proximal operators for a discrete prior.

For the channel ``y = b + tau z`` we look for the non-decreasing 1-Lipschitz
scalar map ``eta`` minimizing ``E (eta(y) - b)^2``. Every such map is the
proximal operator of some convex symmetric-in-law penalty, so the minimum is
the best risk a convex separable penalty can reach at noise ``tau``.

Discretization: ``y`` lives on a uniform grid ``x_0 < ... < x_N`` covering the
bulk of the noisy law; ``eta`` is constant on the cell around each ``x_j``
(end cells extend to infinity) and the cell probabilities are exact normal
masses. The objective collapses to ``sum_j W_j (eta_j - m_j)^2 + const`` with
``W_j`` the cell mass and ``m_j`` the conditional mean of ``b`` on the cell.

The chain-constrained weighted least squares is solved exactly by dynamic
programming on the derivative of the value function, which stays a
continuous piecewise-linear non-decreasing function of the last variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from scipy.special import ndtr

from .priors import ChannelGrid, ConfigurationError, DomainError, Prior, mmse

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class SolverError(RuntimeError):
    """Raised when the discretized problem could not be solved to tolerance."""

    def __init__(self, message: str, best=None, residual: float = math.nan):
        super().__init__(message)
        self.best = best
        self.residual = residual


class CalibrationError(ValueError):
    """The width of the map is not below ``delta``; no finite ``lambda`` exists."""


@dataclass(frozen=True)
class TabulatedMonotoneFn:
    """Piecewise-linear non-decreasing 1-Lipschitz map on a uniform grid.

    Outside the grid the map continues linearly with the end-segment slopes,
    clamped to ``[0, 1]``.
    """

    x_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 2:
            raise ConfigurationError("tabulated map needs matching 1-d grids with >= 2 points")
        dx = np.diff(x)
        if np.any(dx <= 0):
            raise ConfigurationError("tabulated grid must be strictly increasing")
        if np.ptp(dx) > 1e-9 * dx[0] * x.size:
            raise ConfigurationError("tabulated grid must be uniform")
        object.__setattr__(self, "x_grid", x)
        object.__setattr__(self, "values", v)

    @property
    def step(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    def chain_violation(self) -> float:
        """Largest violation of ``0 <= v_j - v_{j-1} <= dx_j``."""
        d = np.diff(self.values)
        dx = np.diff(self.x_grid)
        return float(max(np.max(-d, initial=0.0), np.max(d - dx, initial=0.0)))

    def end_slopes(self) -> tuple[float, float]:
        x, v = self.x_grid, self.values
        lo = (v[1] - v[0]) / (x[1] - x[0])
        hi = (v[-1] - v[-2]) / (x[-1] - x[-2])
        return float(np.clip(lo, 0.0, 1.0)), float(np.clip(hi, 0.0, 1.0))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        x, v = self.x_grid, self.values
        out = np.interp(u, x, v)
        s_lo, s_hi = self.end_slopes()
        out = np.where(u < x[0], v[0] + (u - x[0]) * s_lo, out)
        out = np.where(u > x[-1], v[-1] + (u - x[-1]) * s_hi, out)
        return out

    def to_csv(self) -> str:
        rows = "".join(f"{a!r},{b!r}\n" for a, b in zip(self.x_grid, self.values))
        return "x,value\n" + rows


@dataclass(frozen=True)
class TabulatedFn:
    """Scalar function known at strictly increasing nodes, linear in between."""

    x: np.ndarray
    values: np.ndarray

    def __call__(self, u):
        return np.interp(np.asarray(u, dtype=float), self.x, self.values)

    def second_differences(self) -> np.ndarray:
        """Differences of consecutive secant slopes (non-negative iff convex)."""
        slopes = np.diff(self.values) / np.diff(self.x)
        return np.diff(slopes)

    def to_csv(self) -> str:
        rows = "".join(f"{a!r},{b!r}\n" for a, b in zip(self.x, self.values))
        return "x,value\n" + rows


@dataclass(frozen=True)
class OptimalProx:
    fn: TabulatedMonotoneFn
    risk: float
    tau: float
    grid_tolerance: float


@dataclass(frozen=True)
class PenaltyCalibration:
    lam: float
    width: float
    risk: float
    tau: float


@dataclass(frozen=True)
class CellWeights:
    x: np.ndarray
    weight: np.ndarray
    target: np.ndarray
    const: float  # sum_j sum_b P(b) mass_jb b^2 - W_j m_j^2


def _atom_cell_masses(prior: Prior, tau: float, x: np.ndarray) -> np.ndarray:
    """``mass[j, i] = P(y in cell j | b = atom i)`` with cells split at midpoints."""
    edges = 0.5 * (x[1:] + x[:-1])
    locs = np.asarray(prior.locations)
    a = (edges[:, None] - locs[None, :]) / tau
    # differences of the lower cdf below the atom and of the upper tail above it
    # keep both ends of the normal accurate
    low = ndtr(a)
    up = ndtr(-a)
    cdf = np.vstack([np.zeros_like(locs), low, np.ones_like(locs)])
    sf = np.vstack([np.ones_like(locs), up, np.zeros_like(locs)])
    mass_cdf = np.diff(cdf, axis=0)
    mass_sf = -np.diff(sf, axis=0)
    mid = 0.5 * (np.concatenate([[-np.inf], edges])[:, None] + np.concatenate([edges, [np.inf]])[:, None])
    use_sf = mid > locs[None, :]
    return np.where(use_sf, mass_sf, mass_cdf)


def cell_weights(prior: Prior, tau: float, x: np.ndarray) -> CellWeights:
    if not prior.is_discrete:
        raise DomainError("optimal prox discretization needs a discrete prior")
    locs = np.asarray(prior.locations)
    P = np.asarray(prior.masses)
    mass = _atom_cell_masses(prior, tau, x) * P[None, :]
    W = mass.sum(axis=1)
    bm = mass @ locs
    target = np.where(W > 0, bm / np.where(W > 0, W, 1.0), x)
    const = float(np.sum(mass @ (locs**2)) - np.sum(W * target**2))
    return CellWeights(x, W, target, max(const, 0.0))


@numba.njit(cache=True)
def _lipschitz_isotonic(w, m, step):
    """Exact minimizer of sum w_j (e_j - m_j)^2 s.t. 0 <= e_j - e_{j-1} <= step.

    Weights must be strictly positive. The derivative of the value function
    is kept as breakpoints ``bp`` with values ``dv`` plus tail slopes.
    """
    n = w.size
    cap = 2 * n + 2
    bp = np.empty(cap)
    dv = np.empty(cap)
    ustar = np.empty(n)
    k = 1
    bp[0] = m[0]
    dv[0] = 0.0
    s_left = 2.0 * w[0]
    s_right = 2.0 * w[0]
    for j in range(n):
        if j > 0:
            # shift the part right of the minimizer by step and insert a flat zero piece
            u = ustar[j - 1]
            pos = 0
            while pos < k and bp[pos] <= u:
                pos += 1
            for i in range(k - 1, pos - 1, -1):
                bp[i + 2] = bp[i] + step
                dv[i + 2] = dv[i]
            bp[pos] = u
            dv[pos] = 0.0
            bp[pos + 1] = u + step
            dv[pos + 1] = 0.0
            k += 2
            for i in range(k):
                dv[i] += 2.0 * w[j] * (bp[i] - m[j])
            s_left += 2.0 * w[j]
            s_right += 2.0 * w[j]
        # zero of the non-decreasing derivative
        if dv[0] >= 0.0:
            u = bp[0] - dv[0] / s_left
        elif dv[k - 1] <= 0.0:
            u = bp[k - 1] - dv[k - 1] / s_right
        else:
            i = 1
            while dv[i] < 0.0:
                i += 1
            d0 = dv[i - 1]
            d1 = dv[i]
            u = bp[i - 1] + (bp[i] - bp[i - 1]) * (-d0) / (d1 - d0)
        ustar[j] = u
    eta = np.empty(n)
    eta[n - 1] = ustar[n - 1]
    for j in range(n - 1, 0, -1):
        v = ustar[j - 1]
        lo = eta[j] - step
        if v < lo:
            v = lo
        if v > eta[j]:
            v = eta[j]
        eta[j - 1] = v
    return eta


def kkt_residual(w: np.ndarray, m: np.ndarray, eta: np.ndarray, step: float) -> float:
    """Scaled violation of the optimality conditions of the chain problem.

    With ``S_k = sum_{j >= k} 2 w_j (eta_j - m_j)`` the conditions are
    ``S_0 = 0``, and for each increment ``d_k = eta_k - eta_{k-1}``:
    ``S_k = 0`` if ``0 < d_k < step``, ``S_k >= 0`` if ``d_k = 0`` and
    ``S_k <= 0`` if ``d_k = step``.
    """
    g = 2.0 * w * (eta - m)
    S = np.cumsum(g[::-1])[::-1]
    d = np.diff(eta)
    tol = 1e-9 * step
    at_lo = d <= tol
    at_hi = d >= step - tol
    r = np.where(at_lo & at_hi, 0.0, np.where(at_lo, np.maximum(-S[1:], 0.0),
                 np.where(at_hi, np.maximum(S[1:], 0.0), np.abs(S[1:]))))
    return float(max(abs(S[0]), np.max(r, initial=0.0)))


def grid_tolerance(prior: Prior, tau: float, x: np.ndarray) -> float:
    """Bound on the discretization excess over a 1-Lipschitz Bayes rule.

    Replacing ``y`` by its cell centre moves a 1-Lipschitz rule by at most
    half a cell inside the window; beyond the end centres the displacement is
    bounded through the Gaussian second-moment tail
    ``E[(Z - a)^2; Z > a] = (1 + a^2) Q(a) - a phi(a)``.
    """
    step = float(x[1] - x[0])
    locs = np.asarray(prior.locations)
    P = np.asarray(prior.masses)

    def tail(a):
        return (1 + a * a) * ndtr(-a) - a * np.exp(-0.5 * a * a) / _SQRT_2PI

    a_hi = (x[-1] - locs) / tau
    a_lo = (locs - x[0]) / tau
    return float(step * step / 4.0 + tau * tau * np.sum(P * (tail(a_hi) + tail(a_lo))))


def solve_optimal_prox(prior: Prior, tau: float, grid: ChannelGrid | None = None) -> OptimalProx:
    """Best non-decreasing 1-Lipschitz denoiser for ``pi`` at noise ``tau``.

    Returns the tabulated map, its discretized risk and the grid tolerance
    ``eps`` for which ``mmse - eps <= risk`` and, when the Bayes rule is itself
    admissible, ``risk <= mmse + eps``.
    """
    if not tau > 0 or not math.isfinite(tau):
        raise DomainError("tau must be positive and finite")
    if not prior.is_discrete:
        raise DomainError("optimal prox discretization needs a discrete prior")
    grid = grid or ChannelGrid()
    x = grid.points(prior, tau)
    if prior.is_point_mass:
        c = float(prior.locations[0])
        return OptimalProx(TabulatedMonotoneFn(x, np.full_like(x, c)), 0.0, tau, 0.0)
    cw = cell_weights(prior, tau, x)
    step = float(x[1] - x[0])
    # cells with vanishing mass get a tiny weight so the value function stays strictly convex
    w = np.maximum(cw.weight, 1e-300 + 1e-14 * cw.weight.max())
    eta = _lipschitz_isotonic(w, cw.target, step)
    # remove rounding drift from the chain constraints
    d = np.clip(np.diff(eta), 0.0, step)
    eta = eta[0] + np.concatenate([[0.0], np.cumsum(d)])
    risk = float(np.sum(cw.weight * (eta - cw.target) ** 2) + cw.const)
    scale = float(np.sum(cw.weight * cw.target**2)) + 1.0
    res = kkt_residual(w, cw.target, eta, step)
    if not math.isfinite(risk) or res > 1e-8 * scale:
        raise SolverError(f"chain solver residual {res:.3g} at tau={tau:g}", eta, res)
    return OptimalProx(TabulatedMonotoneFn(x, eta), risk, tau, grid_tolerance(prior, tau, x))


def _segment_moments(lo, hi):
    """``int z phi`` and ``int z^2 phi`` over ``[lo, hi]`` (standard normal)."""
    phi_lo = np.exp(-0.5 * lo * lo) / _SQRT_2PI
    phi_hi = np.exp(-0.5 * hi * hi) / _SQRT_2PI
    with np.errstate(invalid="ignore"):  # inf * 0 at the open ends
        z_lo = np.where(np.isfinite(lo), lo * phi_lo, 0.0)
        z_hi = np.where(np.isfinite(hi), hi * phi_hi, 0.0)
    m0 = ndtr(hi) - ndtr(lo)
    m1 = phi_lo - phi_hi
    m2 = m0 + z_lo - z_hi
    return m1, m2


def map_width(fn: TabulatedMonotoneFn, prior: Prior, tau: float) -> float:
    """``(1/tau) E[z eta(b + tau z)]`` for the piecewise-linear ``eta``.

    Each linear piece ``eta = c + s y`` contributes
    ``c E[z; piece] + s (b E[z; piece] + tau E[z^2; piece])`` in closed form,
    so the value is exact for the tabulated map including its linear tails.
    """
    if not tau > 0:
        raise DomainError("tau must be positive")
    x, v = fn.x_grid, fn.values
    s_lo, s_hi = fn.end_slopes()
    slopes = np.concatenate([[s_lo], np.diff(v) / np.diff(x), [s_hi]])
    knots = np.concatenate([[-np.inf], x, [np.inf]])
    anchor_x = np.concatenate([[x[0]], x])
    anchor_v = np.concatenate([[v[0]], v])
    intercept = anchor_v - slopes * anchor_x
    if prior.is_discrete:
        locs, P = np.asarray(prior.locations), np.asarray(prior.masses)
    else:
        raise DomainError("map width needs a discrete prior")
    total = 0.0
    for b, pb in zip(locs, P):
        lo = (knots[:-1] - b) / tau
        hi = (knots[1:] - b) / tau
        m1, m2 = _segment_moments(lo, hi)
        total += pb * float(np.sum(intercept * m1 + slopes * (b * m1 + tau * m2)))
    return total / tau


def compute_lambda(fn: TabulatedMonotoneFn, prior: Prior, tau: float, delta: float,
                   risk: float = math.nan) -> PenaltyCalibration:
    """Scale ``lambda = 1 / (2 (1 - width / delta))`` making ``fn`` a calibrated prox."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    if prior.is_point_mass:
        width = float(np.clip(fn.end_slopes()[0], 0.0, 1.0))
    else:
        width = map_width(fn, prior, tau)
    width = float(np.clip(width, 0.0, 1.0))
    if width >= delta:
        raise CalibrationError(f"width {width:.6g} is not below delta={delta:g} at tau={tau:g}")
    return PenaltyCalibration(0.5 / (1.0 - width / delta), width, risk, tau)


def reconstruct_penalty(fn: TabulatedMonotoneFn, lam: float) -> TabulatedFn:
    """Penalty ``rho`` with ``prox[lam rho] = fn`` on the range of ``fn``.

    Uses ``rho'(eta(y)) = (y - eta(y)) / lam`` integrated by the trapezoid
    rule in ``eta``, with ``rho = 0`` at the left end of the range.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    y, eta = fn.x_grid, fn.values
    deriv = (y - eta) / lam
    d_eta = np.diff(eta)
    rho = np.concatenate([[0.0], np.cumsum(0.5 * (deriv[1:] + deriv[:-1]) * d_eta)])
    keep = np.concatenate([[True], d_eta > 0])
    return TabulatedFn(eta[keep], rho[keep])


@dataclass(frozen=True)
class ROptCurve:
    """Separable-optimal convex risk on a grid of noise levels."""

    taus: np.ndarray
    risks: np.ndarray
    mmse: np.ndarray
    tolerance: np.ndarray

    def __iter__(self):
        return iter(zip(self.taus.tolist(), self.risks.tolist()))

    def __len__(self):
        return self.taus.size

    def risk_at(self, tau):
        """Linear interpolation in ``tau``, floored at the Bayes risk."""
        r = np.interp(tau, self.taus, self.risks)
        m = np.interp(tau, self.taus, self.mmse)
        return np.maximum(r, m)

    def to_csv(self, widths=None, lams=None) -> str:
        head = "tau,risk,mmse"
        cols = [self.taus, self.risks, self.mmse]
        if widths is not None:
            head += ",width,lambda"
            cols += [np.asarray(widths), np.asarray(lams)]
        rows = "".join(",".join(repr(float(c)) for c in row) + "\n" for row in zip(*cols))
        return head + "\n" + rows


def r_opt_curve(prior: Prior, tau_grid: Sequence[float], grid: ChannelGrid | None = None) -> ROptCurve:
    """Solve the optimal-prox problem at each ``tau`` of an increasing grid."""
    taus = np.asarray(tau_grid, dtype=float)
    if taus.ndim != 1 or taus.size == 0 or np.any(taus <= 0) or np.any(np.diff(taus) <= 0):
        raise ConfigurationError("tau grid must be positive and strictly increasing")
    bayes = np.array([mmse(prior, t) for t in taus])
    if not prior.is_discrete:
        # the Gaussian posterior mean is linear with slope < 1, hence admissible
        return ROptCurve(taus, bayes.copy(), bayes, np.zeros_like(taus))
    grid = grid or ChannelGrid()
    risks = np.empty_like(taus)
    tol = np.empty_like(taus)
    for i, t in enumerate(taus):
        try:
            sol = solve_optimal_prox(prior, float(t), grid)
        except SolverError as err:
            raise SolverError(f"{err} (grid index {i})", err.best, err.residual) from err
        risks[i] = sol.risk
        tol[i] = sol.grid_tolerance
    return ROptCurve(taus, risks, bayes, tol)
