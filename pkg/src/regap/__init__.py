"""Effective-noise theory and simulations for convex and AMP estimation in linear models."""
from .fixed_points import (
    EffectiveNoiseReport,
    ProblemParams,
    effective_noises,
    phase_classify,
    snr_gap_bounds,
    state_evolution,
)
from .optimal_prox import (
    TabulatedMonotoneFn,
    compute_lambda,
    r_opt_curve,
    reconstruct_penalty,
    solve_optimal_prox,
)
from .priors import (
    ChannelCurve,
    ChannelGrid,
    Prior,
    logconcavity_certificate,
    mmse,
    mutual_info,
    posterior_mean,
    potential,
    sparse_sign_prior,
    three_point_prior,
)
from .prox import HullSpec, ProxRule, project_hull, prox_eval, width_estimate

__version__ = "0.1.0"
