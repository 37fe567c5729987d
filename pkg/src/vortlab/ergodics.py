"""Time averages, Markov-semigroup checks and tail reports over trajectories.

Invariant measures are never represented on function space.  They are probed
through cylindrical observables ``phi(xi) = f(<xi, g_1>, ..., <xi, g_m>)``
whose value depends on ``xi`` only through finitely many pairings with
band-limited test functions, which makes them sequentially weak-* continuous.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property, partial

import numpy as np

from . import _kernels
from .dynamics import prepare_initial, run_batch
from .errors import ConfigError, DomainError, OrderingError, UndefinedError
from .noise import RngStream
from .parallel import chunked, map_chunks
from .spectral import AREA, ScalarField, pairing, to_grid

# spawn keys for derived streams
_OUTER, _INNER = 1, 2


class HypothesisWarning(UserWarning):
    """An analytic hypothesis behind a statistic does not hold for this run."""


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coordinate:
    """``f(y) = y[index]``; unbounded, so excluded from Markov/invariance checks."""

    index: int = 0

    @property
    def sup_abs(self):
        return math.inf

    def __call__(self, y):
        return y[..., self.index]


@dataclass(frozen=True)
class ClippedPolynomial:
    """``f(y) = clip(sum_j c_j y[index]^j, -bound, bound)``."""

    coeffs: tuple
    bound: float = 1.0
    index: int = 0

    @property
    def sup_abs(self):
        return float(self.bound)

    def __call__(self, y):
        x = y[..., self.index]
        out = np.zeros_like(x)
        for c in reversed(self.coeffs):
            out = out * x + c
        return np.clip(out, -self.bound, self.bound)


@dataclass(frozen=True)
class TanhLinear:
    weights: tuple
    bias: float = 0.0

    @property
    def sup_abs(self):
        return 1.0

    def __call__(self, y):
        return np.tanh(np.sum(y * np.asarray(self.weights, dtype=np.float64), axis=-1) + self.bias)


@dataclass(frozen=True)
class SmoothBand:
    """Smoothed indicator of ``lo <= y[index] <= hi`` with edge width ``width``."""

    lo: float
    hi: float
    width: float = 0.25
    index: int = 0

    @property
    def sup_abs(self):
        return 1.0

    def __call__(self, y):
        x = y[..., self.index]
        return 0.5 * (np.tanh((x - self.lo) / self.width) - np.tanh((x - self.hi) / self.width))


@dataclass(frozen=True, eq=False)
class Observable:
    name: str
    test_functions: tuple
    outer: object

    def __post_init__(self):
        tf = tuple(self.test_functions)
        if not tf:
            raise ConfigError(f"observable {self.name!r} needs at least one test function")
        grid = tf[0].grid
        if any(g.grid != grid for g in tf):
            raise ConfigError(f"observable {self.name!r}: test functions live on different grids")
        object.__setattr__(self, "test_functions", tf)

    @property
    def grid(self):
        return self.test_functions[0].grid

    @property
    def sup_abs(self):
        return self.outer.sup_abs

    @property
    def bounded(self):
        return math.isfinite(self.sup_abs)

    @cached_property
    def _support(self):
        g_hat = np.stack([g.hat for g in self.test_functions])
        nz = np.nonzero(np.any(g_hat != 0, axis=0))
        w = self.grid.half_weights[0][nz[1]]
        return nz, g_hat[:, nz[0], nz[1]] * w

    def pairings(self, xi):
        if xi.grid != self.grid:
            raise ConfigError(f"observable {self.name!r} is defined on N={self.grid.N}, field on N={xi.grid.N}")
        return np.array([pairing(xi, g) for g in self.test_functions])

    def evaluate(self, xi):
        return float(self.outer(self.pairings(xi)))

    def pairings_hat(self, grid, hat):
        """Pairings for a batch of coefficient arrays ``(..., N, M)`` -> ``(..., m)``."""
        if grid != self.grid:
            raise ConfigError(f"observable {self.name!r} is defined on N={self.grid.N}, run uses N={grid.N}")
        (rows, cols), gw = self._support
        a = hat[..., None, rows, cols]
        # explicit reduction rather than BLAS: the summation order must not
        # depend on how many trajectories share the batch
        return AREA * np.sum(a.real * gw.real + a.imag * gw.imag, axis=-1)

    def evaluate_hat(self, grid, hat):
        return self.outer(self.pairings_hat(grid, hat))


def observable_eval(phi, xi):
    return phi.evaluate(xi)


def default_catalog(grid, scale=4.0):
    """Five bounded observables built from low-mode test functions.

    ``scale`` normalises pairings; a unit real-basis coefficient on ``cos x1``
    pairs to ``sqrt(2) pi ~ 4.4``.
    """
    c1 = ScalarField.from_modes(grid, [(1, 0, 1.0, 0.0)])
    s2 = ScalarField.from_modes(grid, [(0, 1, 0.0, 1.0)])
    c11 = ScalarField.from_modes(grid, [(1, 1, 1.0, 0.0)])
    bump = ScalarField.from_modes(grid, [(1, 0, 0.5, 0.0), (0, 1, 0.5, 0.0), (1, 1, 0.25, 0.0),
                                         (1, -1, 0.25, 0.0)])
    w = 1.0 / scale
    return [
        Observable("tanh_cos1", (c1,), TanhLinear((w,))),
        Observable("tanh_sin2", (s2,), TanhLinear((w,), bias=0.3)),
        Observable("clip_sq_cos11", (c11,), ClippedPolynomial((0.0, 0.0, w * w), bound=4.0)),
        Observable("band_bump", (bump,), SmoothBand(-scale, scale, width=0.25 * scale)),
        Observable("tanh_mix", (c1, s2, c11), TanhLinear((w, -0.5 * w, 0.25 * w), bias=0.1)),
    ]


# ---------------------------------------------------------------------------
# Cesaro averages
# ---------------------------------------------------------------------------

@dataclass
class CesaroAccumulator:
    """Running trapezoid-rule time average; values may be scalars or arrays."""

    t_start: float = None
    t_now: float = None
    integral: object = 0.0
    count: int = 0
    last: object = None

    def update(self, value, t):
        value = np.asarray(value, dtype=np.float64)
        if self.count == 0:
            self.t_start = self.t_now = float(t)
            self.integral = np.zeros_like(value)
        else:
            if not t > self.t_now:
                raise OrderingError(f"sample time {t} does not follow {self.t_now}")
            self.integral = self.integral + 0.5 * (t - self.t_now) * (self.last + value)
            self.t_now = float(t)
        self.last = value
        self.count += 1
        return self

    def estimate(self):
        if self.count < 2 or not self.t_now > self.t_start:
            raise UndefinedError("Cesaro estimate needs samples spanning a positive time interval")
        return self.integral / (self.t_now - self.t_start)

    def merge(self, later):
        """Accumulator over the union of two adjacent intervals."""
        if self.count == 0:
            return replace(later)
        if later.count == 0:
            return replace(self)
        if later.t_start != self.t_now:
            raise OrderingError(f"intervals are not adjacent ({self.t_now} vs {later.t_start})")
        return CesaroAccumulator(self.t_start, later.t_now, self.integral + later.integral,
                                 self.count + later.count - 1, later.last)


def cesaro_update(acc, value, t):
    return replace(acc).update(value, t)


def cesaro_estimate(acc):
    return acc.estimate()


def batch_means_se(series, n_batches=10):
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0] // n_batches
    if n < 1 or n_batches < 2:
        raise UndefinedError(f"need at least {n_batches} samples for {n_batches} batches")
    means = x[: n * n_batches].reshape((n_batches, n) + x.shape[1:]).mean(axis=1)
    return np.std(means, axis=0, ddof=1) / math.sqrt(n_batches)


# ---------------------------------------------------------------------------
# Markov / semigroup identity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkovReport:
    lhs: float
    rhs: float
    se: float
    z_score: float
    se_paired: float
    lhs_samples: np.ndarray = field(repr=False)
    rhs_samples: np.ndarray = field(repr=False)


def _markov_chunk(job, cfg, chi, t, s, phi, M_inner):
    grid = cfg.grid
    base = cfg.rng()
    rngs = [base.spawn(_OUTER, i) for i in job]
    hat0 = np.repeat(prepare_initial(chi, cfg)[None], len(job), axis=0)
    t_mid, t_end = cfg.t0 + t, cfg.t0 + t + s
    hat_t = run_batch(hat0, cfg, rngs, cfg.t0, t_mid)
    rhs = np.empty(len(job))
    for b, i in enumerate(job):
        inner = [base.spawn(_INNER, i, j) for j in range(M_inner)]
        h = run_batch(np.repeat(hat_t[b:b + 1], M_inner, axis=0), cfg, inner, t_mid, t_end)
        rhs[b] = np.mean(phi.evaluate_hat(grid, h))
    lhs = phi.evaluate_hat(grid, run_batch(hat_t, cfg, rngs, t_mid, t_end))
    return lhs, rhs


def markov_semigroup_test(cfg, t, s, phi, M_outer, M_inner, chi=None, workers=1, chunk=8):
    """Compare ``E phi(xi(t+s))`` with ``E (P_s phi)(xi(t))``.

    The left side follows each of ``M_outer`` paths to ``t + s``; the right
    side freezes the same paths at ``t`` and averages ``phi`` over
    ``M_inner`` fresh noise continuations of length ``s``.  ``se`` pools the
    two sample standard errors as if independent; ``se_paired`` uses the
    per-path differences.
    """
    if t < 0 or s < 0:
        raise DomainError(f"horizons must be non-negative, got t={t}, s={s}")
    if M_outer < 2 or M_inner < 2:
        raise DomainError("M_outer and M_inner must be at least 2")
    if not phi.bounded:
        raise ConfigError(f"observable {phi.name!r} is unbounded")
    if cfg.spectrum.amplitude == 0:
        # deterministic dynamics: one path answers both sides
        lhs, rhs = _markov_chunk([0], cfg, chi, t, s, phi, 1)
        lhs, rhs = float(lhs[0]), float(rhs[0])
        return MarkovReport(lhs, rhs, 0.0, 0.0 if lhs == rhs else math.inf, 0.0,
                            np.array([lhs]), np.array([rhs]))
    fn = partial(_markov_chunk, cfg=cfg, chi=chi, t=t, s=s, phi=phi, M_inner=M_inner)
    parts = map_chunks(fn, chunked(range(M_outer), chunk), workers)
    lhs_s = np.concatenate([p[0] for p in parts])
    rhs_s = np.concatenate([p[1] for p in parts])
    lhs, rhs = float(lhs_s.mean()), float(rhs_s.mean())
    se = math.sqrt((lhs_s.var(ddof=1) + rhs_s.var(ddof=1)) / M_outer)
    se_paired = float(np.std(lhs_s - rhs_s, ddof=1) / math.sqrt(M_outer))
    diff = abs(lhs - rhs)
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
    return MarkovReport(lhs, rhs, se, z, se_paired, lhs_s, rhs_s)


# ---------------------------------------------------------------------------
# tails of |xi|_inf
# ---------------------------------------------------------------------------

TAIL_EPSILONS = (0.1, 0.05, 0.01)


@dataclass(frozen=True)
class TailReport:
    times: np.ndarray
    epsilons: tuple
    quantiles: np.ndarray        # (len(times), len(epsilons)), (1-eps)-quantiles of |xi|_inf
    samples: np.ndarray = field(repr=False)   # (len(times), M)
    notes: tuple = ()

    @property
    def r_eps(self):
        """Uniform-in-time bound per epsilon."""
        return dict(zip(self.epsilons, np.max(self.quantiles, axis=0)))

    def quantile(self, t, eps):
        i = int(np.argmin(np.abs(self.times - t)))
        return float(self.quantiles[i, self.epsilons.index(eps)])


def _sample_steps(cfg, times):
    steps = []
    for t in times:
        k = (t - cfg.t0) / cfg.dt
        if t < cfg.t0 or abs(k - round(k)) > 1e-6:
            raise ConfigError(f"sample time {t} is not on the step grid (t0={cfg.t0}, dt={cfg.dt})")
        steps.append(int(round(k)))
    return steps


def _linf_chunk(ids, cfg, chi, steps):
    grid = cfg.grid
    rngs = [RngStream(cfg.seed, cfg.stream_id + i) for i in ids]
    hat0 = np.repeat(prepare_initial(chi, cfg)[None], len(ids), axis=0)
    wanted = {k: j for j, k in enumerate(steps)}
    out = np.zeros((len(steps), len(ids)))

    def hook(i, t, hat):
        if i in wanted:
            out[wanted[i]] = _kernels.max_abs(to_grid(hat, grid.N))

    run_batch(hat0, cfg, rngs, cfg.t0, cfg.t0 + max(steps) * cfg.dt, on_step=hook)
    return out


def tail_bound_report(cfg, sample_times, M, chi=None, epsilons=TAIL_EPSILONS, workers=1, chunk=50):
    """Empirical ``(1-eps)``-quantiles of ``|xi(t)|_inf`` over ``M`` trajectories."""
    notes = []
    if cfg.gamma == 0:
        msg = "gamma=0: uniform boundedness in probability is not expected without damping"
        warnings.warn(msg, HypothesisWarning, stacklevel=2)
        notes.append(msg)
    times = np.array(sorted(sample_times), dtype=np.float64)
    steps = _sample_steps(cfg, times)
    fn = partial(_linf_chunk, cfg=cfg, chi=chi, steps=steps)
    samples = np.concatenate(map_chunks(fn, chunked(range(M), chunk), workers), axis=1)
    q = np.quantile(samples, [1 - e for e in epsilons], axis=1).T
    return TailReport(times, tuple(epsilons), q, samples, tuple(notes))


# ---------------------------------------------------------------------------
# Krylov-Bogoliubov time averages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CesaroReport:
    names: tuple
    horizons: tuple
    burn_in: float
    estimates: np.ndarray        # (len(checkpoints), M, n_obs)
    checkpoints: tuple           # horizons followed by their doubles
    differences: np.ndarray      # (len(horizons), n_obs): RMS over trajectories of |est(n)-est(2n)|
    series: np.ndarray = field(repr=False)  # (steps, n_obs) for the first trajectory after burn-in
    histograms: dict = field(repr=False, default_factory=dict)

    @property
    def decreasing(self):
        d = self.differences
        return np.all(d[1:] < d[:-1], axis=0)

    def final_estimates(self):
        return self.estimates[-1].mean(axis=0)


def _cesaro_chunk(ids, cfg, chi, observables, burn_steps, check_steps, series_id, hist_edges):
    grid = cfg.grid
    rngs = [RngStream(cfg.seed, cfg.stream_id + i) for i in ids]
    hat0 = np.repeat(prepare_initial(chi, cfg)[None], len(ids), axis=0)
    acc = CesaroAccumulator()
    est = np.zeros((len(check_steps), len(ids), len(observables)))
    where = {k: j for j, k in enumerate(check_steps)}
    series = []
    nbins = len(hist_edges) - 1
    hist = {}
    for o in observables:
        for c in range(len(o.test_functions)):
            hist[f"{o.name}[{c}]"] = np.zeros(nbins, dtype=np.int64)
    row = ids.index(series_id) if series_id in ids else None

    def hook(i, t, hat):
        if i < burn_steps:
            return
        ys = [o.pairings_hat(grid, hat) for o in observables]
        vals = np.stack([o.outer(y) for o, y in zip(observables, ys)], axis=-1)
        acc.update(vals, t)
        if row is not None:
            series.append(vals[row])
        for o, y in zip(observables, ys):
            for c in range(y.shape[-1]):
                idx = np.clip(np.searchsorted(hist_edges, y[:, c]) - 1, 0, nbins - 1)
                np.add.at(hist[f"{o.name}[{c}]"], idx, 1)
        if i in where:
            est[where[i]] = acc.estimate()

    run_batch(hat0, cfg, rngs, cfg.t0, cfg.t0 + max(check_steps) * cfg.dt, on_step=hook)
    return est, (np.array(series) if row is not None else None), hist


def cesaro_convergence(cfg, observables, burn_in=10.0, horizons=(25, 50, 100, 200), trajectories=16,
                       chi=None, workers=1, chunk=16, hist_edges=None):
    """Cesaro averages of each observable over ``[burn_in, burn_in + n]`` for ``n`` and ``2n``."""
    if cfg.gamma == 0:
        warnings.warn("gamma>0 is required for the invariant-measure construction",
                      HypothesisWarning, stacklevel=2)
    horizons = tuple(sorted(horizons))
    checkpoints = tuple(sorted(set(horizons) | {2 * n for n in horizons}))
    burn_steps = _sample_steps(cfg, [cfg.t0 + burn_in])[0]
    check_steps = [burn_steps + s for s in _sample_steps(cfg, [cfg.t0 + n for n in checkpoints])]
    if hist_edges is None:
        hist_edges = np.linspace(-20.0, 20.0, 41)
    fn = partial(_cesaro_chunk, cfg=cfg, chi=chi, observables=tuple(observables), burn_steps=burn_steps,
                 check_steps=check_steps, series_id=0, hist_edges=hist_edges)
    parts = map_chunks(fn, chunked(range(trajectories), chunk), workers)
    est = np.concatenate([p[0] for p in parts], axis=1)
    series = next(p[1] for p in parts if p[1] is not None)
    hist = {}
    for p in parts:
        for k, v in p[2].items():
            hist[k] = hist.get(k, 0) + v
    pos = {n: j for j, n in enumerate(checkpoints)}
    diffs = np.array([np.sqrt(np.mean((est[pos[n]] - est[pos[2 * n]]) ** 2, axis=0)) for n in horizons])
    return CesaroReport(tuple(o.name for o in observables), horizons, burn_in, est, checkpoints, diffs,
                        series, {"edges": hist_edges, **hist})


@dataclass(frozen=True)
class SeedAgreement:
    names: tuple
    mean_a: np.ndarray
    mean_b: np.ndarray
    se_a: np.ndarray
    se_b: np.ndarray

    @property
    def z(self):
        return np.abs(self.mean_a - self.mean_b) / np.sqrt(self.se_a**2 + self.se_b**2)


def seed_agreement(series_a, series_b, names, n_batches=10):
    """Batch-means comparison of two long time series of observable values."""
    return SeedAgreement(tuple(names), series_a.mean(axis=0), series_b.mean(axis=0),
                         batch_means_se(series_a, n_batches), batch_means_se(series_b, n_batches))
