"""Proximal operators for symmetric convex penalties.

A :class:`ProxRule` pairs a penalty with a scale ``lam`` and evaluates
``prox[lam * rho](y) = argmin_b 1/2 ||y - b||^2 + lam * rho(b)``.

Penalties: zero, weighted l1, ridge ``a ||b||^2``, sorted-l1 (SLOPE / OWL),
the indicator of the permutation hull of a three-level vector, a tabulated
separable penalty given through its proximal map, and the oracle
perturbation ``rho(b) + gamma/2 ||b - anchor||^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .priors import ConfigurationError, Prior


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Zero:
    def prox(self, y: np.ndarray, lam: float) -> np.ndarray:
        return y.copy()

    def value(self, b: np.ndarray) -> float:
        return 0.0

    def modulus(self, lam: float) -> float:
        return 0.0


@dataclass(frozen=True)
class L1:
    weight: float = 1.0

    def prox(self, y, lam):
        t = lam * self.weight
        return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)

    def value(self, b):
        return self.weight * float(np.sum(np.abs(b)))

    def modulus(self, lam):
        return 0.0


@dataclass(frozen=True)
class Ridge:
    """``rho(b) = weight * ||b||^2``."""

    weight: float = 1.0

    def prox(self, y, lam):
        return y / (1.0 + 2.0 * lam * self.weight)

    def value(self, b):
        return self.weight * float(b @ b)

    def modulus(self, lam):
        return 2.0 * lam * self.weight


def _pool_nonincreasing(z: np.ndarray) -> np.ndarray:
    """Least-squares non-increasing fit of ``z`` (pool adjacent violators, one pass)."""
    n = z.size
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    top = -1
    for v in z:
        top += 1
        sums[top], counts[top] = v, 1
        while top > 0 and sums[top - 1] * counts[top] <= sums[top] * counts[top - 1]:
            sums[top - 1] += sums[top]
            counts[top - 1] += counts[top]
            top -= 1
    return np.repeat(sums[: top + 1] / counts[: top + 1], counts[: top + 1])


@dataclass(frozen=True)
class Slope:
    """Sorted-l1 norm ``sum_j kappa_j |b|_(j)`` with non-increasing ``kappa >= 0``."""

    kappa: tuple[float, ...]

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float)
        if k.ndim != 1 or np.any(k < 0) or np.any(np.diff(k) > 0):
            raise ConfigurationError("SLOPE weights must be non-negative and non-increasing")

    def prox(self, y, lam):
        k = np.asarray(self.kappa, dtype=float)
        if k.size != y.size:
            raise DimensionError(f"SLOPE has {k.size} weights but input has {y.size} entries")
        order = np.argsort(-np.abs(y), kind="stable")
        fitted = np.maximum(_pool_nonincreasing(np.abs(y)[order] - lam * k), 0.0)
        out = np.empty_like(y)
        out[order] = fitted
        return np.sign(y) * out

    def value(self, b):
        return float(np.sort(np.abs(b))[::-1] @ np.asarray(self.kappa))

    def modulus(self, lam):
        return 0.0


@dataclass(frozen=True)
class HullSpec:
    """Reference vector with ``counts[i]`` coordinates equal to ``support[i]``.

    ``support`` is strictly decreasing. Zero counts are allowed (the level is
    dropped) as long as one level remains.
    """

    support: tuple[float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self):
        if len(self.support) != len(self.counts) or not self.support:
            raise ConfigurationError("hull spec needs one count per support point")
        if any(b >= a for a, b in zip(self.support, self.support[1:])):
            raise ConfigurationError("hull support must be strictly decreasing")
        if any(int(c) != c or c < 0 for c in self.counts) or sum(self.counts) < 1:
            raise ConfigurationError("hull counts must be non-negative integers, not all zero")

    @property
    def p(self) -> int:
        return int(sum(self.counts))

    def levels(self) -> list[tuple[float, int]]:
        return [(float(x), int(k)) for x, k in zip(self.support, self.counts) if k > 0]

    def reference(self) -> np.ndarray:
        """The sorted (decreasing) reference vector."""
        return np.repeat(np.asarray(self.support, dtype=float), np.asarray(self.counts))

    @classmethod
    def from_prior(cls, prior: Prior, counts: tuple[int, ...], p: int) -> "HullSpec":
        support = np.asarray(prior.locations, dtype=float)[::-1] / math.sqrt(p)
        return cls(tuple(float(x) for x in support), tuple(int(k) for k in counts[::-1]))

    def to_text(self) -> str:
        return "".join(f"level {float(x)!r} {int(k)}\n" for x, k in zip(self.support, self.counts))

    @classmethod
    def from_text(cls, text: str) -> "HullSpec":
        pairs = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] != "level" or len(parts) != 3:
                raise ConfigurationError(f"bad hull record {raw!r}")
            pairs.append((float(parts[1]), int(parts[2])))
        pairs.sort(key=lambda t: -t[0])
        return cls(tuple(x for x, _ in pairs), tuple(k for _, k in pairs))


def solve_clipped_sum(y: np.ndarray, lo: float, hi: float, target: float) -> float:
    """Find ``t`` with ``sum_j clip(y_j - t, lo, hi) = target``.

    The left side is piecewise linear and non-increasing in ``t``; the root is
    located exactly among the breakpoints ``y_j - hi`` and ``y_j - lo`` and
    interpolated. If the level set is an interval the midpoint is returned.
    """
    m = y.size
    if not m * lo - 1e-12 * (1 + abs(target)) <= target <= m * hi + 1e-12 * (1 + abs(target)):
        raise ConfigurationError("clipped-sum target outside attainable range")
    ys = np.sort(y)
    csum = np.concatenate(([0.0], np.cumsum(ys)))
    cand = np.unique(np.concatenate((ys - hi, ys - lo)))

    def total(t: np.ndarray) -> np.ndarray:
        n_low = np.searchsorted(ys, t + lo, side="right")  # y - t <= lo
        n_high = m - np.searchsorted(ys, t + hi, side="left")  # y - t >= hi
        mid = m - n_low - n_high
        mid_sum = csum[m - n_high] - csum[n_low]
        return n_low * lo + n_high * hi + mid_sum - mid * t

    h = total(cand)  # non-increasing along cand
    # first candidate with h <= target
    k = int(np.searchsorted(-h, -target, side="left"))
    if k == 0:
        return float(cand[0])
    if k == cand.size:
        return float(cand[-1])
    if h[k] == target:
        j = k
        while j + 1 < cand.size and h[j + 1] == target:
            j += 1
        return float(0.5 * (cand[k] + cand[j]))
    t0, t1, h0, h1 = cand[k - 1], cand[k], h[k - 1], h[k]
    return float(t0 + (h0 - target) * (t1 - t0) / (h0 - h1))


def project_sorted_hull(spec: HullSpec, ys: np.ndarray) -> np.ndarray:
    """Project a non-increasing vector onto the permutation hull of ``spec``."""
    levels = spec.levels()
    if len(levels) == 1:
        return np.full_like(ys, levels[0][0])
    if len(levels) == 2:
        (xa, ka), (xb, kb) = levels
        t = solve_clipped_sum(ys, xb, xa, ka * xa + kb * xb)
        return np.clip(ys - t, xb, xa)
    if len(levels) != 3:
        raise ConfigurationError("fast hull projection supports at most three levels")
    (x1, k1), (x2, k2), (x3, k3) = levels
    t1 = solve_clipped_sum(ys[: k1 + k2], x2, x1, k1 * x1 + k2 * x2)
    t2 = solve_clipped_sum(ys[k1:], x3, x2, k2 * x2 + k3 * x3)
    if t1 >= t2:
        # five-case form: upper block clamps to [x2, x1], lower block to [x3, x2]
        return np.minimum(np.clip(ys - t1, x2, x1), np.maximum(ys - t2, x3))
    t = solve_clipped_sum(ys, x3, x1, k1 * x1 + k2 * x2 + k3 * x3)
    return np.clip(ys - t, x3, x1)


def project_hull(spec: HullSpec, y) -> np.ndarray:
    """Euclidean projection of ``y`` onto the convex hull of all permutations of the reference."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size != spec.p:
        raise DimensionError(f"hull spec has p={spec.p}, input has shape {y.shape}")
    order = np.argsort(-y, kind="stable")
    out = np.empty_like(y)
    out[order] = project_sorted_hull(spec, y[order])
    return out


@dataclass(frozen=True)
class HullIndicator:
    spec: HullSpec

    def prox(self, y, lam):
        return project_hull(self.spec, y)

    def value(self, b):
        return 0.0 if hull_violation(self.spec, b) <= 1e-9 * (1 + float(np.max(np.abs(b)))) else math.inf

    def modulus(self, lam):
        return 0.0


def hull_violation(spec: HullSpec, b: np.ndarray) -> float:
    """Largest violation of the sorted prefix-sum description of the hull."""
    ref = np.cumsum(spec.reference())
    pref = np.cumsum(np.sort(b)[::-1])
    return float(max(np.max(pref[:-1] - ref[:-1], initial=0.0), abs(pref[-1] - ref[-1])))


@dataclass(frozen=True)
class Tabulated:
    """Separable penalty ``(1/p) sum_j rho1(sqrt(p) b_j)`` given by ``prox[rho1] = fn``.

    ``prox[lam rho1]`` for other scales is exact for the piecewise-linear
    ``fn``: its graph is ``{(eta, (1 - lam) eta + lam u)}`` over grid points
    ``(u, eta = fn(u))``.
    """

    fn: "TabulatedMonotoneFn"  # noqa: F821 - defined in optimal_prox
    penalty: object = field(default=None, compare=False)

    def scalar_prox(self, u: np.ndarray, lam: float) -> np.ndarray:
        if lam == 1.0:
            return self.fn(u)
        eta = self.fn.values
        grid = self.fn.x_grid
        ys = (1.0 - lam) * eta + lam * grid
        s_lo, s_hi = self.fn.end_slopes()
        out = np.interp(u, ys, eta)
        lo, hi = u < ys[0], u > ys[-1]
        out[lo] = eta[0] + (u[lo] - ys[0]) * _scaled_slope(s_lo, lam)
        out[hi] = eta[-1] + (u[hi] - ys[-1]) * _scaled_slope(s_hi, lam)
        return out

    def prox(self, y, lam):
        rp = math.sqrt(y.size)
        return self.scalar_prox(np.asarray(y, dtype=float) * rp, lam) / rp

    def value(self, b):
        if self.penalty is None:
            return math.nan
        rp = math.sqrt(b.size)
        return float(np.mean(self.penalty(b * rp)))

    def modulus(self, lam):
        return 0.0


def _scaled_slope(s: float, lam: float) -> float:
    # slope of prox[lam rho] where prox[rho] has slope s
    return 0.0 if s == 0 else s / ((1.0 - lam) * s + lam)


@dataclass(frozen=True)
class OracleWrapped:
    """``base(b) + gamma/2 ||b - anchor||^2``."""

    base: object
    gamma: float
    anchor: np.ndarray = field(compare=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError("oracle gamma must be positive")

    def prox(self, y, lam):
        a = np.asarray(self.anchor, dtype=float)
        if a.shape != y.shape:
            raise DimensionError("oracle anchor does not match the input dimension")
        lg = lam * self.gamma
        return self.base.prox((y + lg * a) / (1.0 + lg), lam / (1.0 + lg))

    def value(self, b):
        d = b - np.asarray(self.anchor)
        return self.base.value(b) + 0.5 * self.gamma * float(d @ d)

    def modulus(self, lam):
        return lam * self.gamma + self.base.modulus(lam)


Penalty = Union[Zero, L1, Ridge, Slope, HullIndicator, Tabulated, OracleWrapped]


@dataclass(frozen=True)
class ProxRule:
    """A penalty and its scale; ``rule(y)`` is ``prox[lam * penalty](y)``."""

    penalty: Penalty
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError("prox scale lambda must be positive")

    def __call__(self, y) -> np.ndarray:
        return prox_eval(self, y)

    def scaled(self, factor: float) -> "ProxRule":
        return ProxRule(self.penalty, self.lam * factor)

    @property
    def strong_convexity(self) -> float:
        """Strong-convexity modulus of ``lam * penalty``."""
        return self.penalty.modulus(self.lam)

    def value(self, b) -> float:
        """``lam * penalty(b)``."""
        return self.lam * self.penalty.value(np.asarray(b, dtype=float))


def prox_eval(rule: ProxRule, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionError("prox input must be a vector")
    if not np.all(np.isfinite(y)):
        raise ValueError("prox input must be finite")
    return rule.penalty.prox(y, rule.lam)


@dataclass(frozen=True)
class WidthEstimate:
    mean: float
    std_err: float


def width_estimate(
    rule: ProxRule, prior: Prior, tau: float, p: int, n_mc: int, seed: int = 0
) -> WidthEstimate:
    """Monte-Carlo estimate of ``(1/tau) E <z, prox(b0 + tau z)>``.

    ``b0`` has i.i.d. ``pi / sqrt(p)`` entries and ``z ~ N(0, I/p)``. The
    centred form ``<z, prox(b0 + tau z) - prox(b0)>`` has the same mean and
    smaller variance. Replicate ``i`` draws from its own spawned stream.
    """
    if p < 1 or n_mc < 2:
        raise ConfigurationError("width estimate needs p >= 1 and n_mc >= 2")
    if not tau > 0:
        raise ValueError("tau must be positive")
    if isinstance(rule.penalty, Zero):
        return WidthEstimate(1.0, 0.0)
    streams = np.random.SeedSequence(seed).spawn(n_mc)
    vals = np.empty(n_mc)
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        b0 = prior.sample(p, rng) / math.sqrt(p)
        z = rng.standard_normal(p) / math.sqrt(p)
        vals[i] = float(z @ (prox_eval(rule, b0 + tau * z) - prox_eval(rule, b0))) / tau
    return WidthEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_mc)))
