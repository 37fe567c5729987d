"""Trajectory diagnostics: norms, the log-Lipschitz velocity ratio, continuous
dependence on initial data, conservation/decay checks and W^{1,4} tracking."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import integrate, integrate_ensemble
from .errors import ConfigError, UndefinedError
from .spectral import (
    AREA, GradLp, Linf, Lp, ScalarField, Sobolev, bandwidth, biot_savart, gradient_hat, norm, pad_hat,
    pairing, to_grid,
)


@dataclass(frozen=True)
class DiagnosticRecord:
    time: float
    energy: float
    enstrophy: float
    lp4: float
    linf: float
    grad4: float
    gradu_inf: float
    kato_ratio: float
    sobolev_a: float

    FIELDS = ("energy", "enstrophy", "lp4", "linf", "grad4", "gradu_inf", "kato_ratio", "sobolev_a")


def velocity_l2(u):
    return math.hypot(norm(u.u1, Lp(2)), norm(u.u2, Lp(2)))


def grad_u_inf(u):
    """Grid maximum of the pointwise Frobenius norm of ``grad u``."""
    g = u.grid
    a11, a12 = (to_grid(h, g.N) for h in gradient_hat(g, u.u1.hat))
    a21, a22 = (to_grid(h, g.N) for h in gradient_hat(g, u.u2.hat))
    return float(_kernels.frobenius_max(a11, a12, a21, a22))


def _kato(gradu, linf, grad4):
    return gradu / (linf * (1.0 + math.log1p(grad4 / linf)))


def kato_ratio(xi):
    """``|grad u|_inf / (|xi|_inf (1 + log(1 + |grad xi|_4 / |xi|_inf)))`` with ``u = K*xi``.

    An empirical lower bound for the constant of the log-Lipschitz estimate.
    """
    linf = norm(xi, Linf())
    if linf == 0.0:
        raise UndefinedError("the ratio is undefined for the zero field")
    return _kato(grad_u_inf(biot_savart(xi)), linf, norm(xi, GradLp(4)))


def diagnostic_record(xi, time=0.0, a=3.0):
    u = biot_savart(xi)
    linf = norm(xi, Linf())
    grad4 = norm(xi, GradLp(4))
    gradu = grad_u_inf(u)
    ratio = _kato(gradu, linf, grad4) if linf > 0 else 0.0
    return DiagnosticRecord(
        time=float(time), energy=velocity_l2(u), enstrophy=norm(xi, Lp(2)), lp4=norm(xi, Lp(4)),
        linf=linf, grad4=grad4, gradu_inf=gradu, kato_ratio=ratio, sobolev_a=norm(xi, Sobolev(a)))


def diagnostic_series(chi, cfg, every=1, a=3.0):
    """:class:`DiagnosticRecord` every ``every`` steps along one run."""
    out = []
    grid = cfg.grid

    def hook(i, t, hat):
        if i % every == 0:
            out.append(diagnostic_record(ScalarField(grid, hat[0]), t, a))

    integrate(chi, cfg, on_step=hook)
    return out


def records_to_columns(records):
    return {name: np.array([getattr(r, name) for r in records]) for name in DiagnosticRecord.FIELDS}


def running_sup_stable(values, factor=1.1):
    """Final-quarter maximum is at most ``factor`` times the first-half maximum."""
    v = np.asarray(values)
    n = v.size
    half = np.max(v[: n // 2])
    last = np.max(v[(3 * n) // 4:])
    return bool(last <= factor * half), float(half), float(last)


# ---------------------------------------------------------------------------
# continuous dependence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContDepReport:
    n_list: tuple
    gaps: np.ndarray
    T: float

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.gaps) <= 0))


def contdep_test(chi, cfg, g, n_list, amplitude=1.0):
    """Pairing gaps ``|<xi(T; chi + a sin(n x1)) - xi(T; chi), g>|`` under shared noise."""
    grid = cfg.grid
    K = grid.kmax_dealias
    n_list = tuple(int(n) for n in n_list)
    for n in n_list:
        if not 0 < n <= K:
            raise ConfigError(f"perturbation frequency {n} outside retained range (0, {K}]")
    if chi is None:
        chi = ScalarField.zeros(grid)
    chis = [chi] + [chi + ScalarField.from_modes(grid, [(n, 0, 0.0, amplitude)]) for n in n_list]
    # same stream id for every member: identical noise realisation
    trajs = integrate_ensemble(chis, cfg.replace(observables=(), snapshot_every=0),
                               [cfg.stream_id] * len(chis))
    base = trajs[0].final.xi
    gaps = np.array([abs(pairing(tr.final.xi - base, g)) for tr in trajs[1:]])
    return ContDepReport(n_list, gaps, cfg.t1)


# ---------------------------------------------------------------------------
# conservation and decay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConservationReport:
    gamma: float
    dt: float
    times: np.ndarray
    quantities: dict       # name -> time series
    drift: dict            # name -> relative drift (per unit time when gamma == 0)
    tol: float

    @property
    def verdicts(self):
        return {k: bool(v <= self.tol) for k, v in self.drift.items()}

    @property
    def passed(self):
        return all(self.verdicts.values())


def conservation_suite(cfg, chi, tol=1e-6):
    """Check conservation (``gamma == 0``) or exact exponential decay (``gamma > 0``).

    With ``gamma == 0`` the relative drift per unit time of ``|xi|_2``,
    ``|xi|_4`` and ``|u|_2`` is reported; with ``gamma > 0`` the maximal
    relative deviation of ``q(t) exp(gamma (t - t0))`` from ``q(t0)``.
    """
    if cfg.spectrum.amplitude != 0:
        raise ConfigError("conservation checks need a deterministic run (noise amplitude 0)")
    grid = cfg.grid
    series = {"enstrophy": [], "lp4": [], "energy": []}
    times = []

    def hook(i, t, hat):
        xi = ScalarField(grid, hat[0])
        times.append(t)
        series["enstrophy"].append(norm(xi, Lp(2)))
        series["lp4"].append(norm(xi, Lp(4)))
        series["energy"].append(math.sqrt(AREA * np.sum(grid.half_weights * grid.inv_ksq * np.abs(hat[0]) ** 2)))

    integrate(chi, cfg.replace(observables=(), snapshot_every=0), on_step=hook)
    times = np.array(times)
    quantities = {k: np.array(v) for k, v in series.items()}
    span = times[-1] - times[0]
    drift = {}
    for k, q in quantities.items():
        if q[0] == 0.0:
            drift[k] = float(np.max(np.abs(q)))
            continue
        if cfg.gamma > 0:
            dev = q * np.exp(cfg.gamma * (times - times[0])) / q[0] - 1.0
            drift[k] = float(np.max(np.abs(dev)))
        else:
            dev = np.max(np.abs(q / q[0] - 1.0))
            drift[k] = float(dev / span) if span > 0 else 0.0
    return ConservationReport(cfg.gamma, cfg.dt, times, quantities, drift, tol)


# ---------------------------------------------------------------------------
# W^{1,4}
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grad4Track:
    times: np.ndarray
    values: np.ndarray = field(repr=False)
    burn_in: float
    factor: float

    @property
    def window(self):
        return self.values[self.times >= self.times[0] + self.burn_in]

    @property
    def bounded(self):
        w = self.window
        if not np.all(np.isfinite(self.values)):
            return False
        med = float(np.median(w))
        return bool(np.max(w) <= self.factor * med) if med > 0 else bool(np.max(w) == 0)

    @property
    def verdict(self):
        return "bounded" if self.bounded else "unbounded"


def grad4_track(cfg, chi=None, burn_in=0.0, every=1, factor=10.0):
    """``|grad xi(t)|_4`` along a run with a no-secular-growth verdict."""
    grid = cfg.grid
    times, values = [], []

    def hook(i, t, hat):
        if i % every == 0:
            d1h, d2h = gradient_hat(grid, hat[0])
            s = _kernels.magnitude_power_sum(to_grid(d1h, grid.N), to_grid(d2h, grid.N), 4.0)
            times.append(t)
            values.append(float((s * AREA / grid.N**2) ** 0.25))

    integrate(chi, cfg.replace(observables=(), snapshot_every=0), on_step=hook)
    return Grad4Track(np.array(times), np.array(values), burn_in, factor)


def cancellation_residual(u, eta):
    """Relative size of ``sum_ij <u_j d_j d_i eta, d_i eta |grad eta|^2>``.

    For divergence-free ``u`` the continuum value is zero.  The integrand is a
    quintic product, so it is evaluated on a zero-padded grid fine enough for
    the rectangle rule to be exact; the result is divided by the integral of
    the absolute integrand.
    """
    g = eta.grid
    degree = max(bandwidth(g, u.u1.hat), bandwidth(g, u.u2.hat)) + 4 * bandwidth(g, eta.hat)
    M = max(g.N, 2 * (degree // 2 + 1))

    def fine(h):
        return to_grid(pad_hat(g, h, M), M)

    d_hat = gradient_hat(g, eta.hat)
    d = [fine(h) for h in d_hat]
    dd = [[fine(h) for h in gradient_hat(g, dh)] for dh in d_hat]
    u1, u2 = fine(u.u1.hat), fine(u.u2.hat)
    grad2 = d[0] ** 2 + d[1] ** 2
    total = 0.0
    scale = 0.0
    for i in range(2):
        term = (u1 * dd[i][0] + u2 * dd[i][1]) * d[i] * grad2
        total += float(np.sum(term))
        scale += float(np.sum(np.abs(term)))
    if scale == 0.0:
        return 0.0
    return abs(total) / scale
