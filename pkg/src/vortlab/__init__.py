"""Pseudo-spectral laboratory for the stochastically forced, linearly damped
2D Euler equations in vorticity form on the periodic square, with tools for
long-time (ergodic) statistics."""

from .errors import (
    ConfigError, DivergenceError, DomainError, InvariantError, OrderingError, StepError,
    UndefinedError, VortlabError,
)
from .spectral import (
    FourierGrid, GradLp, Linf, Lp, ScalarField, Sobolev, VelocityField, advection, biot_savart,
    make_grid, norm, pairing,
)
from .noise import NoiseSpectrum, RngStream, check_regularity, curl_growth_rate, sample_curl_increment
from .ou import OUState, calibrate_lambda, ou_exact_step, stationary_sample
from .dynamics import SimConfig, TrajectoryState, eta_step_crosscheck, integrate, integrate_ensemble, sde_step
from .ergodics import (
    CesaroAccumulator, Observable, cesaro_estimate, cesaro_update, markov_semigroup_test, observable_eval,
    tail_bound_report,
)
from .diagnostics import conservation_suite, contdep_test, grad4_track, kato_ratio

__version__ = "0.1.0"
