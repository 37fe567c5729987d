"""Hot grid-space kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``VORTLAB_NUMBA=0`` to force
the numpy implementations (useful for debugging and for the benchmark).  Both
variants are exported under ``*_numpy`` / ``*_numba`` names so they can be
compared side by side; the unsuffixed names point at the active backend.

All kernels take arrays with a leading batch axis: grid data is ``(B, N, N)``,
spectral data ``(B, N, N//2+1)`` of which only the first ``S`` columns (the
retained slab) are touched by the slab kernels.
Results from the two backends agree to rounding but are not guaranteed to be
bit-identical; reproducibility is promised within a backend.
"""

import os

import numpy as np

_FLAG = os.environ.get("VORTLAB_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in {"0", "false", "no", "off"}
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def rotational_products_numpy(u):
    """Return ``(u2^2 - u1^2, u1*u2)`` stacked, and the squared max speed.

    ``u`` has shape ``(B, 2, N, N)``.
    """
    u1 = u[:, 0]
    u2 = u[:, 1]
    a = u1 * u1
    b = u2 * u2
    out = np.stack([b - a, u1 * u2], axis=1)
    return out, np.max(a + b, axis=(1, 2))


def slab_velocity_numpy(hat, inv_ksq, k1, k2, S):
    """Velocity coefficients ``(i k2, -i k1) * hat / |k|^2`` on columns ``< S``.

    ``inv_ksq`` is ``(N, S)`` and already zero outside the retained set;
    ``k1`` has length ``N`` and ``k2`` length ``S``.  Returns ``(B, 2, N, S)``.
    """
    s = hat[:, :, :S] * inv_ksq
    out = np.empty((hat.shape[0], 2, hat.shape[1], S), dtype=np.complex128)
    np.multiply(s, 1j * k2[None, :], out=out[:, 0])
    np.multiply(s, -1j * k1[:, None], out=out[:, 1])
    return out


def slab_mix_numpy(ph, mix_a, mix_b, neg_row, M):
    """``ph[:, 0] * mix_a + ph[:, 1] * mix_b`` padded to ``M`` columns.

    Column 0 is made Hermitian using the row map ``neg_row`` (row of ``-k1``).
    """
    B, _, N, S = ph.shape
    out = np.zeros((B, N, M), dtype=np.complex128)
    out[:, :, :S] = ph[:, 0] * mix_a + ph[:, 1] * mix_b
    c = out[:, :, 0]
    out[:, :, 0] = 0.5 * (c + np.conj(c[:, neg_row]))
    return out


def combine_numpy(base, p, y, q, r, c):
    """``p*base + q*(y + c*r)``, the generic SSP-RK3 stage update."""
    return p * base + q * (y + c * r)


def power_sum_numpy(f, p):
    """Sum of ``|f|**p`` over the last two axes."""
    return np.sum(np.abs(f) ** p, axis=(-2, -1))


def max_abs_numpy(f):
    return np.max(np.abs(f), axis=(-2, -1))


def magnitude_power_sum_numpy(a, b, p):
    """Sum over the grid of ``(a**2 + b**2) ** (p/2)``."""
    return np.sum((a * a + b * b) ** (0.5 * p), axis=(-2, -1))


def frobenius_max_numpy(a11, a12, a21, a22):
    """Max over the grid of the pointwise Frobenius norm of a 2x2 field."""
    s = a11 * a11 + a12 * a12 + a21 * a21 + a22 * a22
    return np.sqrt(np.max(s, axis=(-2, -1)))


def ar1_path_numpy(x0, decay, std, normals, weights):
    """Run the exact AR(1) recursion ``x <- decay*x + std*z`` along axis 0.

    Parameters
    ----------
    x0 : ndarray (m,)
        Starting coefficients.
    decay, std : ndarray (m,)
        Per-coefficient one-step decay factor and innovation std.
    normals : ndarray (n, m)
        Standard normal innovations, one row per step.
    weights : ndarray (m,)
        Weights of the quadratic form whose square root is accumulated.

    Returns
    -------
    x : ndarray (m,)
        Final state.
    sq_sum : ndarray (m,)
        Sum over the n post-step states of ``x**2``.
    norm_sum : float
        Sum over the n post-step states of ``sqrt(sum(weights * x**2))``.
    norm_max_scaled : ndarray (n,)
        ``sqrt(sum(weights * x**2))`` after every step.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    n = normals.shape[0]
    sq_sum = np.zeros_like(x)
    norms = np.empty(n)
    for i in range(n):
        x = decay * x + std * normals[i]
        x2 = x * x
        sq_sum += x2
        norms[i] = np.sqrt(np.dot(weights, x2))
    return x, sq_sum, float(norms.sum()), norms


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @numba.njit(cache=True)
    def rotational_products_numba(u):
        nb, _, n0, n1 = u.shape
        out = np.empty((nb, 2, n0, n1))
        speed2 = np.zeros(nb)
        for b in range(nb):
            smax = 0.0
            for i in range(n0):
                for j in range(n1):
                    u1 = u[b, 0, i, j]
                    u2 = u[b, 1, i, j]
                    a = u1 * u1
                    c = u2 * u2
                    out[b, 0, i, j] = c - a
                    out[b, 1, i, j] = u1 * u2
                    s = a + c
                    if s > smax:
                        smax = s
            speed2[b] = smax
        return out, speed2

    @numba.njit(cache=True)
    def slab_velocity_numba(hat, inv_ksq, k1, k2, S):
        nb, n0, _ = hat.shape
        out = np.empty((nb, 2, n0, S), dtype=np.complex128)
        for b in range(nb):
            for i in range(n0):
                for j in range(S):
                    v = hat[b, i, j] * inv_ksq[i, j]
                    out[b, 0, i, j] = 1j * k2[j] * v
                    out[b, 1, i, j] = -1j * k1[i] * v
        return out

    @numba.njit(cache=True)
    def slab_mix_numba(ph, mix_a, mix_b, neg_row, M):
        nb, _, n0, S = ph.shape
        out = np.zeros((nb, n0, M), dtype=np.complex128)
        col = np.empty(n0, dtype=np.complex128)
        for b in range(nb):
            for i in range(n0):
                for j in range(S):
                    out[b, i, j] = ph[b, 0, i, j] * mix_a[i, j] + ph[b, 1, i, j] * mix_b[i, j]
            for i in range(n0):
                col[i] = 0.5 * (out[b, i, 0] + np.conj(out[b, neg_row[i], 0]))
            for i in range(n0):
                out[b, i, 0] = col[i]
        return out

    @numba.njit(cache=True)
    def _combine_flat(base, p, y, q, r, c, out):
        for i in range(base.size):
            out[i] = p * base[i] + q * (y[i] + c * r[i])

    def combine_numba(base, p, y, q, r, c):
        base = np.ascontiguousarray(base)
        out = np.empty_like(base)
        _combine_flat(base.ravel(), float(p), np.ascontiguousarray(y).ravel(), float(q),
                      np.ascontiguousarray(r).ravel(), float(c), out.ravel())
        return out

    @numba.njit(cache=True, inline="always")
    def _ipow(v, n):
        # v**n for a small non-negative integer n by repeated squaring
        r = 1.0
        while n:
            if n & 1:
                r *= v
            v *= v
            n >>= 1
        return r

    @numba.njit(cache=True)
    def _power_sum_3d(f, p):
        nb, n0, n1 = f.shape
        out = np.zeros(nb)
        n = int(p)
        for b in range(nb):
            acc = 0.0
            if n == p and 0 <= n <= 16:
                for i in range(n0):
                    for j in range(n1):
                        acc += _ipow(abs(f[b, i, j]), n)
            else:
                for i in range(n0):
                    for j in range(n1):
                        acc += abs(f[b, i, j]) ** p
            out[b] = acc
        return out

    @numba.njit(cache=True)
    def _max_abs_3d(f):
        nb, n0, n1 = f.shape
        out = np.zeros(nb)
        for b in range(nb):
            m = 0.0
            bad = False
            for i in range(n0):
                for j in range(n1):
                    v = abs(f[b, i, j])
                    bad |= v != v
                    m = max(m, v)
            out[b] = np.nan if bad else m
        return out

    @numba.njit(cache=True)
    def _magnitude_power_sum_3d(a, c, p):
        nb, n0, n1 = a.shape
        out = np.zeros(nb)
        half = 0.5 * p
        n = int(half)
        for b in range(nb):
            acc = 0.0
            if n == half and 0 <= n <= 8:
                for i in range(n0):
                    for j in range(n1):
                        acc += _ipow(a[b, i, j] * a[b, i, j] + c[b, i, j] * c[b, i, j], n)
            else:
                for i in range(n0):
                    for j in range(n1):
                        acc += (a[b, i, j] * a[b, i, j] + c[b, i, j] * c[b, i, j]) ** half
            out[b] = acc
        return out

    @numba.njit(cache=True)
    def _frobenius_max_3d(a11, a12, a21, a22):
        nb, n0, n1 = a11.shape
        out = np.zeros(nb)
        for b in range(nb):
            m = 0.0
            bad = False
            for i in range(n0):
                for j in range(n1):
                    s = (a11[b, i, j] * a11[b, i, j] + a12[b, i, j] * a12[b, i, j]
                         + a21[b, i, j] * a21[b, i, j] + a22[b, i, j] * a22[b, i, j])
                    bad |= s != s
                    m = max(m, s)
            out[b] = np.nan if bad else np.sqrt(m)
        return out

    @numba.njit(cache=True)
    def _ar1_path(x0, decay, std, normals, weights):
        n, m = normals.shape
        x = x0.copy()
        sq_sum = np.zeros(m)
        norms = np.empty(n)
        total = 0.0
        for i in range(n):
            q = 0.0
            for j in range(m):
                v = decay[j] * x[j] + std[j] * normals[i, j]
                x[j] = v
                sq_sum[j] += v * v
                q += weights[j] * v * v
            norms[i] = np.sqrt(q)
            total += norms[i]
        return x, sq_sum, total, norms

    def _as_3d(f):
        f = np.ascontiguousarray(f, dtype=np.float64)
        lead = f.shape[:-2]
        return f.reshape((-1,) + f.shape[-2:]), lead

    def power_sum_numba(f, p):
        g, lead = _as_3d(f)
        return _power_sum_3d(g, float(p)).reshape(lead)

    def max_abs_numba(f):
        g, lead = _as_3d(f)
        return _max_abs_3d(g).reshape(lead)

    def magnitude_power_sum_numba(a, b, p):
        ga, lead = _as_3d(a)
        gb, _ = _as_3d(b)
        return _magnitude_power_sum_3d(ga, gb, float(p)).reshape(lead)

    def frobenius_max_numba(a11, a12, a21, a22):
        arrs = [_as_3d(a)[0] for a in (a11, a12, a21, a22)]
        lead = np.shape(a11)[:-2]
        return _frobenius_max_3d(*arrs).reshape(lead)

    def ar1_path_numba(x0, decay, std, normals, weights):
        x, sq_sum, total, norms = _ar1_path(
            np.asarray(x0, dtype=np.float64), np.asarray(decay, dtype=np.float64),
            np.asarray(std, dtype=np.float64),
            np.ascontiguousarray(normals, dtype=np.float64),
            np.asarray(weights, dtype=np.float64))
        return x, sq_sum, float(total), norms


if USE_NUMBA:
    def rotational_products(u):
        return rotational_products_numba(np.ascontiguousarray(u))

    slab_velocity = slab_velocity_numba
    slab_mix = slab_mix_numba
    combine = combine_numba
    power_sum = power_sum_numba
    # numpy's vectorised max beats the scalar loop, so it stays on both backends
    max_abs = max_abs_numpy
    magnitude_power_sum = magnitude_power_sum_numba
    frobenius_max = frobenius_max_numba
    ar1_path = ar1_path_numba
else:
    rotational_products = rotational_products_numpy
    slab_velocity = slab_velocity_numpy
    slab_mix = slab_mix_numpy
    combine = combine_numpy
    power_sum = power_sum_numpy
    max_abs = max_abs_numpy
    magnitude_power_sum = magnitude_power_sum_numpy
    frobenius_max = frobenius_max_numpy
    ar1_path = ar1_path_numpy
