"""Fourier pseudo-spectral machinery on the periodic square [0, 2pi)^2.

Conventions
-----------
* Grid values are indexed ``f[j1, j2] = f(x1_j1, x2_j2)`` with
  ``x_j = 2*pi*j/N`` (``indexing="ij"``).
* Spectral coefficients use the half-plane ``rfft2`` layout, shape
  ``(N, N//2 + 1)``, normalised so that ``f(x) = sum_k fhat_k exp(i k.x)``.
  Axis 0 carries ``k1`` (``fftfreq`` order), axis 1 carries ``k2 >= 0``.
* With this normalisation ``int |f|^2 dx = (2pi)^2 sum_k |fhat_k|^2`` over the
  full lattice.
* Velocity from vorticity: ``u = grad_perp psi = (-d2 psi, d1 psi)`` with
  ``lap psi = xi``, i.e. ``uhat = -i k_perp xihat / |k|^2``, ``k_perp = (-k2, k1)``.

Every public function accepts a single :class:`ScalarField`; the ``*_hat``
helpers work on raw coefficient arrays with arbitrary leading batch axes and
are what the time integrator uses.
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from . import _kernels
from .errors import ConfigError, DomainError, InvariantError

TWO_PI = 2.0 * np.pi
AREA = TWO_PI**2

__all__ = [
    "FourierGrid", "ScalarField", "VelocityField", "make_grid",
    "biot_savart", "advection", "norm", "pairing",
    "Lp", "Linf", "Sobolev", "GradLp",
]


@dataclass(frozen=True)
class FourierGrid:
    """Uniform ``N x N`` collocation grid on the 2pi-periodic torus."""

    N: int

    def __post_init__(self):
        N = self.N
        if isinstance(N, bool) or not isinstance(N, (int, np.integer)):
            raise ConfigError(f"N must be an integer, got {N!r}")
        if N % 2:
            raise ConfigError(f"N must be even, got {N}")
        if not 16 <= N <= 4096:
            raise ConfigError(f"N must lie in [16, 4096], got {N}")

    @property
    def kmax_dealias(self):
        return self.N // 3

    @property
    def shape(self):
        return (self.N, self.N)

    @property
    def spectral_shape(self):
        return (self.N, self.N // 2 + 1)

    @cached_property
    def x(self):
        return TWO_PI * np.arange(self.N) / self.N

    @cached_property
    def mesh(self):
        return np.meshgrid(self.x, self.x, indexing="ij")

    @cached_property
    def k1(self):
        return (sfft.fftfreq(self.N) * self.N)[:, None]

    @cached_property
    def k2(self):
        return np.arange(self.N // 2 + 1, dtype=np.float64)[None, :]

    @cached_property
    def k1_deriv(self):
        # Nyquist wavenumbers carry no derivative (their sign is ambiguous).
        k = self.k1.copy()
        k[self.N // 2, 0] = 0.0
        return k

    @cached_property
    def k2_deriv(self):
        k = self.k2.copy()
        k[0, -1] = 0.0
        return k

    @cached_property
    def ksq(self):
        return self.k1**2 + self.k2**2

    @cached_property
    def inv_ksq(self):
        ksq = self.ksq
        out = np.zeros_like(ksq)
        np.divide(1.0, ksq, out=out, where=ksq > 0)
        return out

    @cached_property
    def dealias_mask(self):
        K = self.kmax_dealias
        return (np.abs(self.k1) <= K) & (self.k2 <= K)

    @cached_property
    def half_weights(self):
        """Multiplicity of each stored column when summing over the full lattice."""
        w = np.full(self.N // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, :]

    @cached_property
    def slab_ops(self):
        """Spectral multipliers restricted to the retained columns ``0..K``."""
        K = self.kmax_dealias
        k1 = self.k1_deriv
        k2 = self.k2_deriv[:, : K + 1]
        mask = self.dealias_mask[:, : K + 1]
        return {
            "inv_ksq": np.ascontiguousarray(self.inv_ksq[:, : K + 1] * mask),
            "k1": np.ascontiguousarray(k1[:, 0]),
            "k2": np.ascontiguousarray(k2[0]),
            "mix_a": np.ascontiguousarray(-(k1 * k2) * mask),
            "mix_b": np.ascontiguousarray((k2**2 - k1**2) * mask),
        }

    @cached_property
    def neg_row(self):
        return (-np.arange(self.N)) % self.N

    def slot(self, k1, k2):
        """Storage location of integer mode ``(k1, k2)``.

        Returns ``(row, col, conj)`` where ``conj`` says the stored value is the
        complex conjugate of the coefficient of ``(k1, k2)``.
        """
        if k2 < 0 or (k2 == 0 and k1 < 0):
            return (-k1) % self.N, -k2, True
        return k1 % self.N, k2, False


@lru_cache(maxsize=None)
def make_grid(N):
    """Return the (cached) :class:`FourierGrid` with ``N`` points per axis."""
    return FourierGrid(N)


# ---------------------------------------------------------------------------
# raw transforms
# ---------------------------------------------------------------------------

def to_spectral(values):
    return sfft.rfft2(values, norm="forward")


def to_grid(hat, N):
    return sfft.irfft2(hat, s=(N, N), norm="forward")


def bandwidth(grid, hat):
    """Largest ``|k|_inf`` carrying a nonzero coefficient (0 for the zero field)."""
    rows, cols = np.nonzero(hat)
    if rows.size == 0:
        return 0
    return int(max(np.max(np.abs(grid.k1[rows, 0])), np.max(cols)))


def pad_hat(grid, hat, M):
    """Coefficients of the same trigonometric polynomial on an ``M x M`` grid.

    The Nyquist row and column of the source are dropped; dealiased fields
    never populate them.
    """
    N = grid.N
    if M < N:
        raise ConfigError(f"padding must not shrink the grid ({M} < {N})")
    h = N // 2
    out = np.zeros(hat.shape[:-2] + (M, M // 2 + 1), dtype=np.complex128)
    out[..., :h, :h] = hat[..., :h, :h]
    out[..., M - h + 1:, :h] = hat[..., N - h + 1:, :h]
    return out


def hermitize_col0(grid, hat):
    c = hat[..., :, 0]
    hat[..., :, 0] = 0.5 * (c + np.conj(c[..., grid.neg_row]))
    return hat


def hermitize(grid, hat):
    """Enforce exact conjugate symmetry of the self-conjugate columns in place."""
    nr = grid.neg_row
    for col in (0, grid.N // 2):
        c = hat[..., :, col]
        hat[..., :, col] = 0.5 * (c + np.conj(c[..., nr]))
    return hat


def gradient_hat(grid, hat):
    return 1j * grid.k1_deriv * hat, 1j * grid.k2_deriv * hat


def velocity_hat(grid, hat):
    """Biot-Savart on coefficient arrays: returns ``(u1hat, u2hat)``."""
    s = hat * grid.inv_ksq
    return 1j * grid.k2_deriv * s, -1j * grid.k1_deriv * s


def slab_to_grid(slab, N):
    """Inverse transform of coefficients stored only in columns ``0..K``."""
    buf = np.zeros(slab.shape[:-1] + (N // 2 + 1,), dtype=np.complex128)
    buf[..., : slab.shape[-1]] = sfft.ifft(slab, axis=-2, norm="forward", overwrite_x=True)
    return sfft.irfft(buf, n=N, axis=-1, norm="forward", overwrite_x=True)


def grid_to_slab(values, K):
    """Forward transform keeping only columns ``0..K``."""
    r = sfft.rfft(values, axis=-1, norm="forward")[..., : K + 1]
    return sfft.fft(r, axis=-2, norm="forward", overwrite_x=True)


def nonlinear_hat(grid, hat):
    """Dealiased coefficients of ``u.grad xi`` with ``u = K*xi``.

    Uses the identity ``u.grad xi = d1 d2 (u2^2 - u1^2) + (d1^2 - d2^2)(u1 u2)``
    for divergence-free ``u``: two inverse and two forward transforms.  The
    quadratic products are alias-free on the retained modes, so the result
    equals the advective form to rounding.  ``hat`` has shape
    ``(B, N, N//2+1)`` and must vanish outside the dealiased set.  Returns the
    coefficients and the per-member maximum grid speed.
    """
    N, K = grid.N, grid.kmax_dealias
    ops = grid.slab_ops
    lead = hat.shape[:-2]
    flat = hat.reshape((-1,) + hat.shape[-2:])
    uh = _kernels.slab_velocity(flat, ops["inv_ksq"], ops["k1"], ops["k2"], K + 1)
    u = slab_to_grid(uh, N)
    prod, speed2 = _kernels.rotational_products(u)
    ph = grid_to_slab(prod, K)
    out = _kernels.slab_mix(ph, ops["mix_a"], ops["mix_b"], grid.neg_row, hat.shape[-1])
    return out.reshape(hat.shape), np.sqrt(speed2).reshape(lead)


def pairing_hat(grid, hat, g_hat):
    """``int xi g dx`` from coefficients; ``hat`` (..., N, M), ``g_hat`` (m, N, M) -> (..., m)."""
    w = grid.half_weights
    a = hat[..., None, :, :]
    prod = (a.real * g_hat.real + a.imag * g_hat.imag) * w
    return AREA * prod.sum(axis=(-2, -1))


def sobolev_sq_hat(grid, hat, a):
    weights = grid.half_weights * np.power(grid.ksq, a)
    return AREA * np.sum(weights * (hat.real**2 + hat.imag**2), axis=(-2, -1))


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real scalar field on the torus, stored by its Fourier coefficients.

    The grid view is computed on first access and cached; both views are
    read-only so a field can be shared freely between workers.
    """

    grid: FourierGrid
    hat: np.ndarray

    def __post_init__(self):
        hat = np.array(self.hat, dtype=np.complex128)
        if hat.shape != self.grid.spectral_shape:
            raise ConfigError(
                f"coefficient array has shape {hat.shape}, expected {self.grid.spectral_shape}")
        hermitize(self.grid, hat)
        hat.flags.writeable = False
        object.__setattr__(self, "hat", hat)

    @classmethod
    def from_values(cls, grid, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise ConfigError(f"grid values have shape {values.shape}, expected {grid.shape}")
        return cls(grid, to_spectral(values))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.spectral_shape, dtype=np.complex128))

    @classmethod
    def from_function(cls, grid, fn):
        x1, x2 = grid.mesh
        return cls.from_values(grid, fn(x1, x2))

    @classmethod
    def from_modes(cls, grid, modes):
        """Build ``sum a cos(k.x) + b sin(k.x)`` from ``(k1, k2, a, b)`` tuples."""
        hat = np.zeros(grid.spectral_shape, dtype=np.complex128)
        lim = grid.N // 2
        for k1, k2, a, b in modes:
            k1, k2 = int(k1), int(k2)
            if (k1, k2) == (0, 0):
                raise InvariantError("mode (0, 0) is excluded (fields are mean-zero)")
            if max(abs(k1), abs(k2)) >= lim:
                raise ConfigError(f"mode ({k1}, {k2}) is not representable on N={grid.N}")
            c = 0.5 * (a - 1j * b)
            _scatter(grid, hat, k1, k2, c)
        return cls(grid, hat)

    @classmethod
    def random_band_limited(cls, grid, kmax, rng, linf=1.0, slope=1.0):
        """Random field with modes ``0 < |k|_inf <= kmax`` scaled to ``|f|_inf = linf``.

        Mode amplitudes decay like ``(1 + |k|^2)^(-slope/2)``.  ``rng`` is a
        numpy ``Generator`` or an integer seed.
        """
        if not 0 < kmax <= grid.kmax_dealias:
            raise ConfigError(f"kmax must lie in (0, {grid.kmax_dealias}], got {kmax}")
        rng = np.random.default_rng(rng)
        amp = (1.0 + grid.ksq) ** (-0.5 * slope)
        keep = (np.abs(grid.k1) <= kmax) & (grid.k2 <= kmax)
        noise = rng.standard_normal(grid.spectral_shape) + 1j * rng.standard_normal(grid.spectral_shape)
        hat = np.where(keep, amp * noise, 0.0)
        hat[0, 0] = 0.0
        f = cls(grid, hat)
        if linf is None:
            return f
        m = float(np.max(np.abs(f.values)))
        return f * (linf / m)

    @cached_property
    def values(self):
        v = to_grid(self.hat, self.grid.N)
        v.flags.writeable = False
        return v

    @property
    def mean(self):
        return float(self.hat[0, 0].real)

    def is_mean_zero(self):
        scale = max(float(np.max(np.abs(self.values))), np.finfo(float).tiny)
        return abs(self.mean) <= 1e-12 * scale

    def full_spectrum(self):
        """Coefficients on the full ``N x N`` lattice (``fft2`` layout), rebuilt by symmetry."""
        N = self.grid.N
        full = np.empty((N, N), dtype=np.complex128)
        M = N // 2 + 1
        full[:, :M] = self.hat
        cols = np.arange(M, N)
        full[:, M:] = np.conj(self.hat[self.grid.neg_row][:, (-cols) % N])
        return full

    def mode(self, k1, k2):
        """Real-basis coefficients ``(a, b)`` of ``a cos(k.x) + b sin(k.x)``."""
        row, col, conj = self.grid.slot(k1, k2)
        c = self.hat[row, col]
        if conj:
            c = np.conj(c)
        return 2.0 * c.real, -2.0 * c.imag

    def dealiased(self):
        return ScalarField(self.grid, self.hat * self.grid.dealias_mask)

    def _check(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        if other.grid != self.grid:
            raise ConfigError(f"grid mismatch: N={self.grid.N} vs N={other.grid.N}")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return ScalarField(self.grid, self.hat + other.hat)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return ScalarField(self.grid, self.hat - other.hat)

    def __mul__(self, s):
        if not np.isscalar(s):
            return NotImplemented
        return ScalarField(self.grid, self.hat * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.hat)

    def __repr__(self):
        return f"ScalarField(N={self.grid.N}, max|f|={float(np.max(np.abs(self.values))):.4g})"


def _scatter(grid, hat, k1, k2, c):
    row, col, conj = grid.slot(k1, k2)
    hat[row, col] += np.conj(c) if conj else c
    if col == 0 or col == grid.N // 2:
        # self-conjugate column: the mirror entry is stored too
        hat[(-row) % grid.N, col] += c if conj else np.conj(c)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Divergence-free, mean-zero velocity ``(u1, u2)``."""

    u1: ScalarField
    u2: ScalarField

    @property
    def grid(self):
        return self.u1.grid

    def divergence_hat(self):
        g = self.grid
        return 1j * (g.k1_deriv * self.u1.hat + g.k2_deriv * self.u2.hat)

    def curl(self):
        g = self.grid
        return ScalarField(g, 1j * (g.k1_deriv * self.u2.hat - g.k2_deriv * self.u1.hat))

    def speed(self):
        return np.hypot(self.u1.values, self.u2.values)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def biot_savart(xi):
    """Velocity ``u = K*xi`` with ``div u = 0`` and ``curl u = xi``."""
    if not xi.is_mean_zero():
        raise InvariantError(f"Biot-Savart needs a mean-zero vorticity, mean={xi.mean:.3e}")
    u1h, u2h = velocity_hat(xi.grid, xi.hat)
    return VelocityField(ScalarField(xi.grid, u1h), ScalarField(xi.grid, u2h))


def advection(xi, u):
    """Dealiased pseudo-spectral ``u . grad xi``.

    Gradients are spectral, the product is formed on the grid and the result
    is truncated to ``|k|_inf <= N//3``.  For band-limited inputs the result
    is exactly orthogonal to ``xi``.
    """
    g = xi.grid
    if u.grid != g:
        raise ConfigError(f"grid mismatch: xi on N={g.N}, u on N={u.grid.N}")
    d1h, d2h = gradient_hat(g, xi.hat)
    d1 = to_grid(d1h, g.N)
    d2 = to_grid(d2h, g.N)
    prod = u.u1.values * d1 + u.u2.values * d2
    out = to_spectral(prod) * g.dealias_mask
    out[0, 0] = 0.0
    return ScalarField(g, out)


@dataclass(frozen=True)
class Lp:
    p: float


@dataclass(frozen=True)
class Linf:
    pass


@dataclass(frozen=True)
class Sobolev:
    a: float


@dataclass(frozen=True)
class GradLp:
    p: float


def _lp_from_sum(total, N, p):
    return float((total * AREA / N**2) ** (1.0 / p))


def norm(f, kind):
    """Norm of a scalar field.

    ``Lp(p)`` and ``GradLp(p)`` use rectangle-rule quadrature on the grid,
    ``Linf()`` the grid maximum, ``Sobolev(a)`` the homogeneous spectral norm
    ``sqrt((2pi)^2 sum |k|^{2a} |fhat_k|^2)`` (so ``Sobolev(0)`` equals ``Lp(2)``).
    """
    N = f.grid.N
    if isinstance(kind, Lp):
        if not kind.p >= 1:
            raise DomainError(f"Lp norm needs p >= 1, got {kind.p}")
        return _lp_from_sum(_kernels.power_sum(f.values, kind.p), N, kind.p)
    if isinstance(kind, Linf):
        return float(_kernels.max_abs(f.values))
    if isinstance(kind, Sobolev):
        if not kind.a >= 0:
            raise DomainError(f"Sobolev index must be >= 0, got {kind.a}")
        return float(np.sqrt(sobolev_sq_hat(f.grid, f.hat, kind.a)))
    if isinstance(kind, GradLp):
        if not kind.p >= 1:
            raise DomainError(f"GradLp norm needs p >= 1, got {kind.p}")
        d1h, d2h = gradient_hat(f.grid, f.hat)
        d1, d2 = to_grid(d1h, N), to_grid(d2h, N)
        return _lp_from_sum(_kernels.magnitude_power_sum(d1, d2, kind.p), N, kind.p)
    raise DomainError(f"unknown norm kind {kind!r}")


def pairing(xi, g):
    """Quadrature value of ``int_D xi g dx``."""
    if xi.grid != g.grid:
        raise ConfigError(f"grid mismatch: N={xi.grid.N} vs N={g.grid.N}")
    N = xi.grid.N
    return float(np.sum(xi.values * g.values) * AREA / N**2)
