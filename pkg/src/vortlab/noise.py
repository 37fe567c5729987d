"""Additive Wiener forcing acting on finitely many vorticity modes.

The velocity noise ``W = sum_k c_k beta_k(t) e_k`` uses divergence-free
trigonometric modes with ``c_k = |k|^(-alpha)`` and overall scale
``amplitude``.  Only its curl enters the vorticity equation, so increments are
drawn directly on the real orthonormal vorticity basis

    sqrt(2)/(2pi) cos(k.x),  sqrt(2)/(2pi) sin(k.x),

indexed by the half lattice ``k1 > 0`` or ``k1 == 0, k2 > 0``; each real
coefficient of ``W^curl`` then has variance ``amplitude^2 c_k^2 |k|^2`` per
unit time.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError
from .spectral import TWO_PI, ScalarField

_U64 = (1 << 64) - 1
# real orthonormal coefficient -> stored complex coefficient
_BASIS_SCALE = 1.0 / (TWO_PI * np.sqrt(2.0))


@dataclass(frozen=True)
class NoiseSpectrum:
    """Power-law forcing spectrum ``amplitude * |k|^(-alpha)`` on ``0 < |k| <= kcut``."""

    alpha: float = 6.0
    h: float = 4.5
    kcut: int = 8
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.alpha > self.h + 1:
            raise ConfigError(
                f"alpha must exceed h+1 per noise regularity condition "
                f"(alpha={self.alpha}, h={self.h})")
        if self.h < 0:
            raise ConfigError(f"h must be >= 0, got {self.h}")
        if int(self.kcut) != self.kcut or self.kcut < 1:
            raise ConfigError(f"kcut must be a positive integer, got {self.kcut}")
        if not self.amplitude >= 0:
            raise ConfigError(f"amplitude must be >= 0, got {self.amplitude}")

    @property
    def supports_w14(self):
        """Whether the spectrum is regular enough for the W^{1,4} diagnostics."""
        return self.h > 4

    def check_grid(self, grid):
        if self.kcut > grid.kmax_dealias:
            raise ConfigError(
                f"kcut={self.kcut} exceeds the dealiasing cutoff {grid.kmax_dealias} of N={grid.N}")


def full_lattice(kcut):
    """All integer ``k`` with ``0 < |k| <= kcut`` as two int arrays."""
    r = np.arange(-kcut, kcut + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    k1, k2 = k1.ravel(), k2.ravel()
    sq = k1**2 + k2**2
    keep = (sq > 0) & (sq <= kcut**2)
    return k1[keep], k2[keep]


def half_lattice(kcut):
    """Representatives of ``+-k`` pairs with ``0 < |k| <= kcut``, sorted by ``|k|``."""
    k1, k2 = full_lattice(kcut)
    keep = (k1 > 0) | ((k1 == 0) & (k2 > 0))
    k1, k2 = k1[keep], k2[keep]
    order = np.lexsort((k2, k1, k1**2 + k2**2))
    return k1[order], k2[order]


def check_regularity(spec, h_query):
    """Truncated regularity sum ``sum c_k^2 |k|^(2 h_query)`` and its tail verdict.

    The sum runs over the full lattice ``0 < |k| <= kcut`` and includes the
    amplitude.  ``convergent`` reports whether the untruncated series would
    converge, which in two dimensions means ``alpha > h_query + 1``.
    """
    if h_query < 0:
        raise DomainError(f"h_query must be >= 0, got {h_query}")
    k1, k2 = full_lattice(spec.kcut)
    mod2 = (k1**2 + k2**2).astype(np.float64)
    total = spec.amplitude**2 * np.sum(mod2 ** (h_query - spec.alpha))
    return RegularityCheck(float(total), bool(spec.alpha > h_query + 1))


@dataclass(frozen=True)
class RegularityCheck:
    finite_sum: float
    convergent: bool


def curl_growth_rate(spec, a):
    """``S_a``: growth per unit time of ``E ||W^curl(t)||_{H^a}^2``."""
    if a < 0:
        raise DomainError(f"Sobolev index must be >= 0, got {a}")
    k1, k2 = full_lattice(spec.kcut)
    mod2 = (k1**2 + k2**2).astype(np.float64)
    return float(spec.amplitude**2 * np.sum(mod2 ** (1.0 + a - spec.alpha)))


@dataclass
class RngStream:
    """Counter-based Gaussian stream keyed by ``(seed, stream_id)``.

    Draw number ``counter`` always comes from the same Philox block, so a
    stream rebuilt with the same three integers reproduces its next draw
    bit-for-bit.  Each call to :meth:`normal` consumes one counter value.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def _generator(self):
        key = np.array([self.seed & _U64, self.stream_id & _U64], dtype=np.uint64)
        ctr = np.array([0, 0, self.counter & _U64, self.counter >> 64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=ctr))

    def normal(self, shape):
        z = self._generator().standard_normal(shape)
        self.counter += 1
        return z

    def copy(self):
        return RngStream(self.seed, self.stream_id, self.counter)

    def spawn(self, *keys):
        """An independent child stream identified by integer ``keys``."""
        ss = np.random.SeedSequence(
            entropy=[self.seed & _U64, self.stream_id & _U64], spawn_key=tuple(int(k) for k in keys))
        child = int(ss.generate_state(1, np.uint64)[0])
        return RngStream(self.seed, child, 0)

    def negative_time(self):
        """Sub-stream for increments on ``t < 0`` (independent copy of the forcing)."""
        return self.spawn(0x6E6567)


@dataclass(frozen=True, eq=False)
class ForcedModes:
    """Index tables placing half-lattice forcing coefficients into ``rfft2`` storage."""

    grid: object
    spectrum: NoiseSpectrum
    k1: np.ndarray = field(repr=False)
    k2: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    conj: np.ndarray = field(repr=False)
    mirror_sel: np.ndarray = field(repr=False)
    mirror_rows: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    @property
    def count(self):
        return self.k1.size

    @property
    def modulus(self):
        return np.hypot(self.k1, self.k2)

    def place(self, a, b):
        """Coefficient array for real-basis coefficients ``a`` (cos) and ``b`` (sin).

        ``a`` and ``b`` have shape ``(..., count)``; the result has shape
        ``(..., N, N//2+1)``.
        """
        c = (a - 1j * b) * _BASIS_SCALE
        lead = c.shape[:-1]
        out = np.zeros(lead + self.grid.spectral_shape, dtype=np.complex128)
        out[..., self.rows, self.cols] = np.where(self.conj, np.conj(c), c)
        out[..., self.mirror_rows, 0] = np.conj(c[..., self.mirror_sel])
        return out

    def extract(self, hat):
        """Inverse of :meth:`place`: real-basis ``(a, b)`` of the forced modes."""
        c = hat[..., self.rows, self.cols]
        c = np.where(self.conj, np.conj(c), c) / _BASIS_SCALE
        return c.real, -c.imag

    def gaussian(self, rngs, var_scale):
        """Independent Gaussian increments with variance ``std^2 * var_scale`` per coefficient.

        ``rngs`` is a single :class:`RngStream` or a sequence (one per batch
        member); ``var_scale`` is a scalar or an array broadcasting against
        the mode axis.
        """
        sd = self.std * np.sqrt(var_scale)
        if isinstance(rngs, RngStream):
            z = rngs.normal((2, self.count))
        else:
            z = np.stack([r.normal((2, self.count)) for r in rngs])
        return self.place(sd * z[..., 0, :], sd * z[..., 1, :])


@lru_cache(maxsize=64)
def forced_modes(grid, spectrum):
    spectrum.check_grid(grid)
    k1, k2 = half_lattice(spectrum.kcut)
    slots = [grid.slot(int(a), int(b)) for a, b in zip(k1, k2)]
    rows = np.array([s[0] for s in slots], dtype=np.intp)
    cols = np.array([s[1] for s in slots], dtype=np.intp)
    conj = np.array([s[2] for s in slots], dtype=bool)
    mirror_sel = np.nonzero(cols == 0)[0]
    mirror_rows = (-rows[mirror_sel]) % grid.N
    mod = np.hypot(k1, k2)
    std = spectrum.amplitude * mod ** (1.0 - spectrum.alpha)
    return ForcedModes(grid, spectrum, k1, k2, rows, cols, conj, mirror_sel, mirror_rows, std)


def sample_curl_increment(spec, dt, rng, grid):
    """Increment of ``W^curl`` over a time step ``dt`` on ``grid``."""
    if dt < 0:
        raise DomainError(f"dt must be >= 0, got {dt}")
    modes = forced_modes(grid, spec)
    return ScalarField(grid, modes.gaussian(rng, dt))
