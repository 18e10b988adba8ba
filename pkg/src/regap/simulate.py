"""Finite-size simulations of the linear model ``y = X beta0 + w``.

Scaling: ``X`` has i.i.d. N(0, 1) entries and ``sqrt(p) beta0`` has empirical
law ``pi``, so ``||beta0||^2`` is of order ``s2(pi)`` and a scalar denoiser
``eta`` acts on a vector ``x`` as ``eta(sqrt(p) x) / sqrt(p)``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .fixed_points import ProblemParams
from .priors import (
    ConfigurationError,
    DomainError,
    Prior,
    channel_expectation,
    mmse,
    posterior_mean,
    posterior_variance,
)
from .prox import ProxRule, prox_eval

NOISE_MODES = ("sphere", "gaussian", "zero")
RECOVERY_TOL = 1e-10


class SimulationError(RuntimeError):
    """A solver diverged or an iteration produced an invalid state."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class LinearInstance:
    X: np.ndarray
    beta0: np.ndarray
    w: np.ndarray
    y: np.ndarray
    params: ProblemParams
    prior: Prior
    seed: int

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def atom_counts(prior: Prior, p: int) -> np.ndarray:
    """Largest-remainder rounding of ``p * masses``; ties go to the lower atom index."""
    raw = np.asarray(prior.masses) * p
    counts = np.floor(raw).astype(np.int64)
    short = p - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def generate_instance(prior: Prior, params: ProblemParams, p: int, noise_mode: str = "sphere",
                      seed: int = 0) -> LinearInstance:
    """Draw ``(X, beta0, w)`` with ``n = round(delta p)``.

    For a discrete prior ``sqrt(p) beta0`` holds exactly ``atom_counts`` copies
    of each atom in random order. A Gaussian prior is sampled i.i.d.
    ``sphere`` noise has ``||w||^2 = n sigma^2`` exactly.
    """
    if p < 2:
        raise ConfigurationError("p must be at least 2")
    n = int(round(params.delta * p))
    if n < 1:
        raise ConfigurationError(f"n = round(delta p) = {n} must be positive")
    if noise_mode not in NOISE_MODES:
        raise ConfigurationError(f"unknown noise mode {noise_mode!r}")
    rng = np.random.default_rng(seed)
    if prior.is_discrete:
        counts = atom_counts(prior, p)
        if np.count_nonzero(counts) == 0:
            raise ConfigurationError("no atom receives a coordinate")
        coords = np.repeat(np.asarray(prior.locations, dtype=float), counts)
        coords = rng.permutation(coords)
    else:
        coords = prior.sample(p, rng)
    beta0 = coords / math.sqrt(p)
    X = rng.standard_normal((n, p))
    sigma = params.sigma
    if noise_mode == "zero" or sigma == 0:
        w = np.zeros(n)
    elif noise_mode == "gaussian":
        w = sigma * rng.standard_normal(n)
    else:
        g = rng.standard_normal(n)
        w = g * (math.sqrt(n) * sigma / np.linalg.norm(g))
    y = X @ beta0 + w
    return LinearInstance(X, beta0, w, y, params, prior, seed)


@dataclass
class SimTrace:
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    tau_hat_sq: list = field(default_factory=list)
    onsager: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    monotone: bool = True
    wall_time: float = 0.0


@dataclass(frozen=True)
class SolveResult:
    beta_hat: np.ndarray
    trace: SimTrace


def _power_norm_sq(X: np.ndarray, iters: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of ``X^T X`` by power iteration."""
    v = np.random.default_rng(seed).standard_normal(X.shape[1])
    lam = 0.0
    for _ in range(iters):
        v = X.T @ (X @ v)
        nv = np.linalg.norm(v)
        if nv == 0:
            return 0.0
        v /= nv
        lam_new = float(np.linalg.norm(X @ v) ** 2)
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            return lam_new
        lam = lam_new
    return lam


def default_step(instance: LinearInstance) -> float:
    """``0.99 / L`` with ``L = 2 ||X||^2 / n`` the gradient Lipschitz constant."""
    L = 2.0 * _power_norm_sq(instance.X) / instance.n
    # a 1e-3 safety margin covers the power-iteration underestimate
    return 0.99 / (L * (1 + 1e-3))


def acceleration_weight(k: int, cutoff: int = 1500) -> float:
    return k / (k + 3.0) if k <= cutoff else 0.0


def prox_grad_solve(instance: LinearInstance, rule: ProxRule, step: float | None = None,
                    accel: bool = False, grad_norm_tol: float = 1e-10,
                    max_iter: int = 20000, record_every: int = 1) -> SolveResult:
    """Minimize ``(1/n) ||y - X b||^2 + rule.value(b)`` by proximal gradient.

    Iterates ``b^t = prox[c rule](v - c grad f(v))`` with ``v = b^{t-1}``, or an
    extrapolated point when ``accel`` is set (weights ``k / (k + 3)`` up to
    iteration 1500, zero afterwards). Stops at the first iterate whose
    subgradient ``grad f(b^t) + (v - c grad f(v) - b^t) / c`` has norm below
    ``grad_norm_tol``.
    """
    X, y, n = instance.X, instance.y, instance.n
    c = default_step(instance) if step is None else float(step)
    if not c > 0:
        raise DomainError("step size must be positive")
    prox_c = rule.scaled(c)
    trace = SimTrace()
    start = time.perf_counter()

    def grad(b, resid):
        return (2.0 / n) * (X.T @ resid)

    def objective(b, resid):
        pen = rule.value(b)
        return float(resid @ resid) / n + (pen if math.isfinite(pen) else 0.0)

    beta = np.zeros(instance.p)
    beta_prev = beta
    resid = X @ beta - y
    obj0 = max(objective(beta, resid), np.finfo(float).tiny)
    last_obj = obj0
    best = (math.inf, beta, None)
    for k in range(1, max_iter + 1):
        if accel:
            v = beta + acceleration_weight(k - 1) * (beta - beta_prev)
            resid_v = X @ v - y
        else:
            v, resid_v = beta, resid
        gv = grad(v, resid_v)
        new = prox_eval(prox_c, v - c * gv)
        resid_new = X @ new - y
        sub = grad(new, resid_new) + (v - c * gv - new) / c
        gnorm = float(np.linalg.norm(sub))
        obj = objective(new, resid_new)
        if not accel and obj > last_obj * (1 + 1e-12) + 1e-300:
            trace.monotone = False
        if not math.isfinite(obj) or obj > 1e3 * obj0:
            trace.iterations = k
            trace.wall_time = time.perf_counter() - start
            raise SimulationError(f"proximal gradient diverged at iteration {k}", trace)
        record = (obj, gnorm, float(np.sum((new - instance.beta0) ** 2)))
        if k % record_every == 0:
            _append(trace, record)
        beta_prev, beta, resid, last_obj = beta, new, resid_new, obj
        if gnorm < best[0]:
            best = (gnorm, new, record)
        if gnorm < grad_norm_tol:
            trace.converged = True
            break
    trace.iterations = k
    trace.wall_time = time.perf_counter() - start
    out, final = (beta, record) if trace.converged else (best[1], best[2])
    # the last trace entry always describes the returned iterate
    if k % record_every != 0 or out is not beta:
        _append(trace, final)
    return SolveResult(out, trace)


def _append(trace: SimTrace, record: tuple) -> None:
    trace.objective.append(record[0])
    trace.grad_norm.append(record[1])
    trace.loss.append(record[2])


def bayes_denoiser(prior: Prior, tau: float, x: np.ndarray, clip: float | None = None) -> np.ndarray:
    """Coordinatewise posterior mean on the ``sqrt(p)`` scale, optionally clamped to ``[-M, M]``."""
    rp = math.sqrt(x.size)
    out = np.asarray(posterior_mean(prior, tau, rp * x), dtype=float)
    if clip is not None:
        out = np.clip(out, -clip, clip)
    return out / rp


def truncated_state_evolution(prior: Prior, params: ProblemParams, M: float, t_max: int):
    """Noise levels and Onsager coefficients of AMP with the Bayes rule clamped to ``[-M, M]``."""
    d, s2 = params.delta, params.sigma**2
    taus_sq = [(s2 + prior.second_moment) / d]
    onsager = [0.0]
    for _ in range(t_max):
        tau = math.sqrt(taus_sq[-1])

        def sq_err(b, y):
            return (np.clip(posterior_mean(prior, tau, y), -M, M) - b) ** 2

        def deriv(b, y):
            inside = np.abs(posterior_mean(prior, tau, y)) < M
            return np.where(inside, posterior_variance(prior, tau, y) / (tau * tau), 0.0)

        taus_sq.append((s2 + channel_expectation(prior, tau, sq_err)) / d)
        onsager.append(channel_expectation(prior, tau, deriv) / d)
    return taus_sq, onsager


def amp_run(instance: LinearInstance, mode: str = "empirical", t_max: int = 100,
            M: float | None = None) -> SolveResult:
    """Bayes-AMP from ``b^0 = 0``, ``r^{-1} = 0``.

    ``r^t = (y - X b^t) / n + b_t r^{t-1}`` and ``b^{t+1} = eta_t(b^t + X^T r^t)``.
    In ``empirical`` mode ``eta_t`` is the Bayes rule at ``tau_t^2 = p ||r^t||^2``
    and ``b_t = mmse(tau_{t-1}^2) / (delta tau_{t-1}^2)``; in ``truncated`` mode
    both come from the truncated state evolution with clamp ``M``
    (default ten times the largest atom magnitude). ``trace.loss[t]`` is the
    loss of ``b^{t+1}``. A residual that vanishes exactly means the data are
    interpolated; the iteration then stops.
    """
    if t_max < 1:
        raise ConfigurationError("t_max must be at least 1")
    if mode not in ("empirical", "truncated"):
        raise ConfigurationError(f"unknown AMP mode {mode!r}")
    prior, X, y, n, p = instance.prior, instance.X, instance.y, instance.n, instance.p
    delta = n / p
    lo, hi = prior.support_bounds() if prior.is_discrete else (-1.0, 1.0)
    if M is None:
        M = 10.0 * max(abs(lo), abs(hi), 1e-12)
    if mode == "truncated":
        se_taus, se_onsager = truncated_state_evolution(prior, instance.params, M, t_max)
    trace = SimTrace()
    start = time.perf_counter()
    beta = np.zeros(p)
    r_prev = np.zeros(n)
    b_t = 0.0
    for t in range(t_max):
        r = (y - X @ beta) / n + b_t * r_prev
        if mode == "empirical":
            tau_sq = p * float(r @ r)
        else:
            tau_sq = se_taus[t]
        if not math.isfinite(tau_sq) or tau_sq < 0:
            trace.iterations = t
            raise SimulationError(f"invalid effective noise {tau_sq!r} at iteration {t}", trace)
        if tau_sq == 0.0:
            trace.converged = True
            break
        tau = math.sqrt(tau_sq)
        clip = M if mode == "truncated" else None
        beta = bayes_denoiser(prior, tau, beta + X.T @ r, clip)
        if mode == "empirical":
            b_t = mmse(prior, tau) / (delta * tau_sq)
        else:
            b_t = se_onsager[t + 1]
        r_prev = r
        trace.tau_hat_sq.append(tau_sq)
        trace.onsager.append(b_t)
        trace.loss.append(float(np.sum((beta - instance.beta0) ** 2)))
        trace.iterations = t + 1
    trace.wall_time = time.perf_counter() - start
    return SolveResult(beta, trace)


def post_process(instance: LinearInstance, beta_tilde: np.ndarray, tau_tilde: float,
                 rule: ProxRule, tau: float, lam: float | None = None, seed: int = 0) -> np.ndarray:
    """``rule(b + (2 lam / n) X^T (y - X b) + sqrt(tau^2 - tau_tilde^2) z)``, ``z ~ N(0, I/p)``.

    ``rule`` evaluates ``prox[lam rho]``; ``lam`` defaults to ``rule.lam``.
    """
    if tau < tau_tilde:
        raise DomainError("target noise must be at least the base noise")
    lam = rule.lam if lam is None else lam
    X, y, n, p = instance.X, instance.y, instance.n, instance.p
    point = beta_tilde + (2.0 * lam / n) * (X.T @ (y - X @ beta_tilde))
    extra = math.sqrt(tau * tau - tau_tilde * tau_tilde)
    if extra > 0:
        z = np.random.default_rng(seed).standard_normal(p) / math.sqrt(p)
        point = point + extra * z
    return prox_eval(rule, point)


@dataclass(frozen=True)
class SummaryRow:
    loss: float
    relative_loss: float
    recovered: bool
    iterations: int
    wall_time: float


def evaluate(beta_hat: np.ndarray, instance: LinearInstance, trace: SimTrace | None = None,
             recovery_tol: float = RECOVERY_TOL) -> SummaryRow:
    loss = float(np.sum((np.asarray(beta_hat) - instance.beta0) ** 2))
    rel = loss / instance.prior.var if instance.prior.var > 0 else (0.0 if loss == 0 else math.inf)
    its = trace.iterations if trace is not None else 0
    wall = trace.wall_time if trace is not None else 0.0
    return SummaryRow(loss, rel, rel < recovery_tol, its, wall)


def replicate_seeds(seed: int, count: int) -> list[int]:
    """Independent per-replicate seeds derived from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]
