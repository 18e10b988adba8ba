"""Scalar priors and the scalar Gaussian channel ``y = b + tau * z``.

Everything here is a function of a :class:`Prior` and a noise level ``tau``:
the posterior mean (Tweedie / Bayes denoiser), the minimum mean-square error,
the mutual information, the replica-symmetric potential and a numerical
log-concavity certificate for the noisy density ``pi * N(0, tau^2)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp, ndtri

# Below this the squared noise level underflows in the Gaussian exponent.
TAU_FLOOR = 1e-100


class DomainError(ValueError):
    """An argument lies outside the domain of the requested quantity."""


class ConfigurationError(ValueError):
    """A grid or object was configured with unusable parameters."""


class GridRangeError(ValueError):
    """A tabulated quantity was queried outside its tabulated range."""


@dataclass(frozen=True)
class Prior:
    """A scalar law: finitely many atoms, or a centred Gaussian.

    Use :meth:`discrete`, :meth:`gaussian` or :meth:`point_mass` to build one.
    """

    kind: str
    locations: tuple[float, ...] = ()
    masses: tuple[float, ...] = ()
    variance: float = 0.0
    moments: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.kind == "discrete":
            loc = np.asarray(self.locations, dtype=float)
            mass = np.asarray(self.masses, dtype=float)
            if loc.size == 0 or loc.shape != mass.shape:
                raise ConfigurationError("discrete prior needs matching, non-empty atoms")
            if np.any(np.diff(loc) <= 0):
                raise ConfigurationError("atom locations must be strictly increasing")
            if np.any(mass <= 0) or np.any(mass > 1):
                raise ConfigurationError("atom masses must lie in (0, 1]")
            if abs(mass.sum() - 1.0) > 1e-12:
                raise ConfigurationError(f"atom masses sum to {float(mass.sum())!r}, not 1")
            mom = tuple(float(np.sum(mass * loc**k)) for k in range(7))
        elif self.kind == "gaussian":
            if not self.variance > 0:
                raise ConfigurationError("gaussian prior needs variance > 0")
            v = self.variance
            mom = (1.0, 0.0, v, 0.0, 3 * v**2, 0.0, 15 * v**3)
        else:
            raise ConfigurationError(f"unknown prior kind {self.kind!r}")
        object.__setattr__(self, "moments", mom)

    @classmethod
    def discrete(cls, atoms: Iterable[tuple[float, float]]) -> "Prior":
        """Build from ``(location, mass)`` pairs in any order; equal locations merge."""
        merged: dict[float, float] = {}
        for loc, mass in atoms:
            merged[float(loc)] = merged.get(float(loc), 0.0) + float(mass)
        locs = sorted(merged)
        return cls("discrete", tuple(locs), tuple(merged[x] for x in locs))

    @classmethod
    def point_mass(cls, c: float = 0.0) -> "Prior":
        return cls.discrete([(c, 1.0)])

    @classmethod
    def gaussian(cls, variance: float) -> "Prior":
        return cls("gaussian", variance=float(variance))

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def is_point_mass(self) -> bool:
        return self.is_discrete and len(self.locations) == 1

    def moment(self, k: int) -> float:
        """``s_k = E[b^k]`` for ``k <= 6``."""
        return self.moments[k]

    @property
    def mean(self) -> float:
        return self.moments[1]

    @property
    def second_moment(self) -> float:
        return self.moments[2]

    @property
    def var(self) -> float:
        return max(self.moments[2] - self.moments[1] ** 2, 0.0)

    def support_bounds(self) -> tuple[float, float]:
        if self.is_discrete:
            return self.locations[0], self.locations[-1]
        return -math.inf, math.inf

    def scale(self) -> float:
        """A positive length scale of the prior (largest |atom| or the std)."""
        if self.is_discrete:
            return max(max(abs(x) for x in self.locations), 1e-12)
        return math.sqrt(self.variance)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.is_discrete:
            return rng.choice(np.asarray(self.locations), size=size, p=np.asarray(self.masses))
        return rng.normal(0.0, math.sqrt(self.variance), size=size)

    # plain-text records: ``atom <location> <mass>`` / ``gaussian <variance>``
    def to_text(self) -> str:
        if self.is_discrete:
            return "".join(f"atom {x!r} {m!r}\n" for x, m in zip(self.locations, self.masses))
        return f"gaussian {self.variance!r}\n"

    @classmethod
    def from_text(cls, text: str) -> "Prior":
        atoms, gauss = [], None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "atom" and len(parts) == 3:
                    atoms.append((float(parts[1]), float(parts[2])))
                elif parts[0] == "gaussian" and len(parts) == 2:
                    gauss = float(parts[1])
                else:
                    raise ValueError
            except ValueError:
                raise ConfigurationError(f"bad prior record on line {lineno}: {raw!r}") from None
        if gauss is not None and atoms:
            raise ConfigurationError("prior mixes atom and gaussian records")
        if gauss is not None:
            return cls.gaussian(gauss)
        if not atoms:
            raise ConfigurationError("empty prior")
        return cls.discrete(atoms)

    @classmethod
    def load(cls, path: str | Path) -> "Prior":
        return cls.from_text(Path(path).read_text())


def three_point_prior(eps: float = 0.3, low: float = 0.2, high: float = 1.0) -> Prior:
    """``(1 - eps) d_0 + eps/2 d_low + eps/2 d_high`` (noiseless recovery design)."""
    return Prior.discrete([(0.0, 1 - eps), (low, eps / 2), (high, eps / 2)])


def sparse_sign_prior(eps: float = 0.2) -> Prior:
    """``eps/2 d_-1 + (1 - eps) d_0 + eps/2 d_1`` (noisy sparse design)."""
    return Prior.discrete([(-1.0, eps / 2), (0.0, 1 - eps), (1.0, eps / 2)])


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0 or not math.isfinite(tau):
        raise DomainError(f"noise level must be positive and finite, got {tau!r}")
    return max(tau, TAU_FLOOR)


def _posterior_logits(prior: Prior, tau: float, y: np.ndarray) -> np.ndarray:
    loc = np.asarray(prior.locations)
    logw = np.log(np.asarray(prior.masses))
    return logw - (y[..., None] - loc) ** 2 / (2 * tau * tau)


def posterior_weights(prior: Prior, tau: float, y) -> np.ndarray:
    """Posterior atom probabilities given ``y`` (discrete priors only)."""
    tau = _check_tau(tau)
    logits = _posterior_logits(prior, tau, np.asarray(y, dtype=float))
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


def posterior_mean(prior: Prior, tau: float, y):
    """Bayes denoiser ``E[b | b + tau z = y]``.

    Evaluated in log-space with max subtraction, so extreme ``y`` returns the
    nearest-atom limit instead of ``0/0``.
    """
    tau = _check_tau(tau)
    y_arr = np.asarray(y, dtype=float)
    if not prior.is_discrete:
        out = prior.variance * y_arr / (prior.variance + tau * tau)
    else:
        w = posterior_weights(prior, tau, y_arr)
        out = w @ np.asarray(prior.locations)
        out = np.clip(out, prior.locations[0], prior.locations[-1])
    return float(out) if np.ndim(out) == 0 else out


def posterior_variance(prior: Prior, tau: float, y):
    """``Var(b | b + tau z = y)``; its ratio to ``tau^2`` is the denoiser slope."""
    tau = _check_tau(tau)
    y_arr = np.asarray(y, dtype=float)
    if not prior.is_discrete:
        v = prior.variance
        out = np.full_like(y_arr, v * tau * tau / (v + tau * tau))
    else:
        loc = np.asarray(prior.locations)
        w = posterior_weights(prior, tau, y_arr)
        m = w @ loc
        out = np.maximum(w @ loc**2 - m**2, 0.0)
        # cancellation guard when one atom dominates
        out = np.minimum(out, np.sum(w * (loc - m[..., None]) ** 2, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def _z_nodes(n_points: int, z_max: float = 9.0) -> tuple[np.ndarray, np.ndarray]:
    if n_points < 2:
        raise ConfigurationError("quadrature needs at least 2 points")
    z = np.linspace(-z_max, z_max, n_points)
    w = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) * (z[1] - z[0])
    return z, w


def channel_expectation(prior: Prior, tau: float, fn, n_points: int = 2001) -> float:
    """``E[fn(b, b + tau z)]`` by a Riemann sum in the standardized noise.

    Each atom gets its own uniform grid over ``z`` in [-9, 9], which stays
    accurate for every ``tau`` because the integrand is resolved in units of
    ``tau`` around each atom.
    """
    z, w = _z_nodes(n_points)
    if prior.is_discrete:
        total = 0.0
        for b, pb in zip(prior.locations, prior.masses):
            total += pb * float(np.dot(w, fn(b, b + tau * z)))
        return total
    # gaussian prior: outer grid over b as well
    zb, wb = _z_nodes(max(n_points // 4, 201))
    bs = math.sqrt(prior.variance) * zb
    vals = fn(bs[:, None], bs[:, None] + tau * z[None, :])
    return float(wb @ vals @ w)


def mmse(prior: Prior, tau: float, n_points: int = 2001) -> float:
    """Minimum mean-square error ``E[(E[b|y] - b)^2]`` of the scalar channel."""
    tau = float(tau)
    if tau < 0:
        raise DomainError("tau must be non-negative")
    if n_points < 2:
        raise ConfigurationError("mmse needs n_points >= 2")
    if tau == 0 or prior.is_point_mass:
        return 0.0
    if not prior.is_discrete:
        v = prior.variance
        return v * tau * tau / (v + tau * tau)
    tau = max(tau, TAU_FLOOR)
    val = channel_expectation(
        prior, tau, lambda b, y: (posterior_mean(prior, tau, y) - b) ** 2, n_points
    )
    return min(max(val, 0.0), prior.var)


def denoiser_divergence(prior: Prior, tau: float, n_points: int = 2001) -> float:
    """``E[eta'(b + tau z)]`` for the Bayes denoiser (equals ``mmse / tau^2``)."""
    tau = _check_tau(tau)
    if prior.is_point_mass:
        return 0.0
    if not prior.is_discrete:
        return prior.variance / (prior.variance + tau * tau)
    return channel_expectation(
        prior, tau, lambda b, y: posterior_variance(prior, tau, y) / (tau * tau), n_points
    )


@dataclass(frozen=True)
class ChannelGrid:
    """Uniform evaluation grid over the bulk of ``pi * N(0, tau^2)``.

    ``n_intervals`` cells span ``[min support + tau Phi^-1(tail),
    max support + tau Phi^-1(1 - tail)]`` so at least ``1 - 2 tail`` of the
    mass is covered.
    """

    n_intervals: int = 1000
    tail: float = 0.001

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ConfigurationError("grid needs at least 2 points")
        if not 0 < self.tail < 0.5:
            raise ConfigurationError("tail mass must lie in (0, 1/2)")

    @property
    def n_points(self) -> int:
        return self.n_intervals + 1

    def window(self, prior: Prior, tau: float) -> tuple[float, float]:
        tau = _check_tau(tau)
        q = float(ndtri(1 - self.tail))
        if prior.is_discrete:
            lo, hi = prior.support_bounds()
            return lo - tau * q, hi + tau * q
        s = math.sqrt(prior.variance + tau * tau)
        return -s * q, s * q

    def points(self, prior: Prior, tau: float) -> np.ndarray:
        lo, hi = self.window(prior, tau)
        return np.linspace(lo, hi, self.n_points)


def log_noisy_density(prior: Prior, tau: float, y) -> np.ndarray:
    """``log`` of the density of ``b + tau z``."""
    tau = _check_tau(tau)
    y = np.asarray(y, dtype=float)
    if not prior.is_discrete:
        s2 = prior.variance + tau * tau
        return -0.5 * y * y / s2 - 0.5 * math.log(2 * math.pi * s2)
    logits = _posterior_logits(prior, tau, y)
    return logsumexp(logits, axis=-1) - math.log(tau) - 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class LogConcavityCertificate:
    log_concave: bool
    max_second_derivative: float


def logconcavity_certificate(
    prior: Prior, tau: float, grid: ChannelGrid | None = None
) -> LogConcavityCertificate:
    """Check ``(log p_Y)'' <= 0`` on the channel grid by central differences.

    The tolerance is ``1e-8 / tau^2``, the natural curvature scale.
    """
    tau = _check_tau(tau)
    if not prior.is_discrete:
        return LogConcavityCertificate(True, -1.0 / (prior.variance + tau * tau))
    if prior.is_point_mass:
        return LogConcavityCertificate(True, -1.0 / (tau * tau))
    grid = grid or ChannelGrid()
    x = grid.points(prior, tau)
    h = x[1] - x[0]
    f = log_noisy_density(prior, tau, np.concatenate(([x[0] - h], x, [x[-1] + h])))
    second = (f[2:] - 2 * f[1:-1] + f[:-2]) / (h * h)
    worst = float(np.max(second))
    return LogConcavityCertificate(worst <= 1e-8 / (tau * tau), worst)


def default_tau_grid(
    prior: Prior, delta: float = 1.0, sigma: float = 0.0, n: int = 2000, tau_min: float = 1e-4
) -> np.ndarray:
    """Log-spaced noise levels from ``tau_min`` to ``sqrt(max(1, 10 (sigma^2 + s2) / delta))``.

    Every fixed point of the scalar systems satisfies
    ``tau^2 <= (sigma^2 + s2) / delta``, so the cap leaves a wide margin.
    """
    cap = math.sqrt(max(1.0, 10 * (sigma * sigma + prior.second_moment) / delta))
    return np.geomspace(tau_min, cap, n)


@dataclass(frozen=True)
class ChannelCurve:
    """``mmse`` and mutual information tabulated on an increasing ``tau`` grid.

    The mutual information integrates ``d i / d(tau^-2) = mmse / 2`` by the
    trapezoid rule from the largest ``tau``, where it is anchored at the
    Gaussian value ``1/2 log(1 + Var / tau_max^2)``.
    """

    prior: Prior
    taus: np.ndarray
    mmse: np.ndarray
    mutual_info: np.ndarray

    @classmethod
    def build(cls, prior: Prior, taus: Sequence[float], n_points: int = 2001) -> "ChannelCurve":
        taus = np.asarray(taus, dtype=float)
        if taus.ndim != 1 or taus.size < 2 or np.any(taus <= 0) or np.any(np.diff(taus) <= 0):
            raise ConfigurationError("tau grid must be strictly increasing, positive, size >= 2")
        mm = np.array([mmse(prior, t, n_points) for t in taus])
        # enforce the monotone envelope the exact function has
        mm = np.maximum.accumulate(mm)
        u = 1.0 / taus**2  # decreasing in index
        anchor = 0.5 * math.log1p(prior.var * u[-1])
        inc = 0.25 * (mm[:-1] + mm[1:]) * (u[:-1] - u[1:])
        mi = anchor + np.concatenate((np.cumsum(inc[::-1])[::-1], [0.0]))
        return cls(prior, taus, mm, mi)

    def _interp(self, tau, values: np.ndarray):
        t = np.asarray(tau, dtype=float)
        if np.any(t < self.taus[0] * (1 - 1e-12)) or np.any(t > self.taus[-1] * (1 + 1e-12)):
            raise GridRangeError(
                f"tau outside tabulated range [{self.taus[0]:g}, {self.taus[-1]:g}]"
            )
        # interpolate in u = tau^-2, the natural variable of the integral
        u = 1.0 / self.taus[::-1] ** 2
        out = np.interp(1.0 / t**2, u, values[::-1])
        return float(out) if out.ndim == 0 else out

    def mmse_at(self, tau):
        return self._interp(tau, self.mmse)

    def mutual_info_at(self, tau):
        return self._interp(tau, self.mutual_info)

    def potential(self, delta: float, sigma: float) -> np.ndarray:
        return potential_from_mi(self.mutual_info, self.taus, delta, sigma)

    def to_csv(self, delta: float | None = None, sigma: float | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "mmse", "mi", "phi"])
        phi = self.potential(delta, sigma) if delta is not None else np.full(self.taus.size, np.nan)
        for row in zip(self.taus, self.mmse, self.mutual_info, phi):
            w.writerow([f"{v:.12g}" for v in row])
        return buf.getvalue()


def potential_from_mi(mi, taus, delta: float, sigma: float):
    """Replica-symmetric potential given ``i(tau^2)``.

    With ``sigma = 0`` the additive constant ``-(delta/2) log sigma^2`` is
    dropped, which leaves the minimizer unchanged.
    """
    taus = np.asarray(taus, dtype=float)
    t2 = taus * taus
    if sigma > 0:
        s2 = sigma * sigma
        return s2 / (2 * t2) - 0.5 * delta * np.log(s2 / t2) + mi
    return 0.5 * delta * np.log(t2) + mi


def mutual_info(prior: Prior, tau: float, curve: ChannelCurve | None = None) -> float:
    """Base-e mutual information ``i(tau^2)`` between ``b`` and ``b + tau z``."""
    tau = _check_tau(tau)
    if prior.is_point_mass:
        return 0.0
    if curve is None:
        cap = max(math.sqrt(max(1.0, 10 * prior.second_moment)), 50 * prior.scale(), 2 * tau)
        curve = ChannelCurve.build(prior, np.geomspace(min(1e-4, tau), cap, 2000))
    return curve.mutual_info_at(tau)


def potential(
    prior: Prior, delta: float, sigma: float, tau: float, curve: ChannelCurve | None = None
) -> float:
    """``phi(tau^2) = sigma^2 / (2 tau^2) - (delta/2) log(sigma^2 / tau^2) + i(tau^2)``."""
    if not (delta > 0 and sigma >= 0):
        raise DomainError("potential needs delta > 0 and sigma >= 0")
    i = mutual_info(prior, tau, curve)
    return float(potential_from_mi(i, tau, delta, sigma))
