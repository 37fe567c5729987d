"""Compare the numba and numpy kernel backends.

Run ``python3 benchmarks/bench_kernels.py [--N 128] [--batch 4]``.  The first
table times each kernel in isolation (both variants in this process, after a
warm-up call so JIT compilation is excluded).  The second times complete
stochastic steps in fresh interpreters with ``VORTLAB_NUMBA`` set to 1 and 0,
which is what a user actually sees.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from vortlab import _kernels as K


def kernel_cases(N, B):
    r = np.random.default_rng(0)
    S = N // 3 + 1
    M = N // 2 + 1
    g = lambda: r.standard_normal((B, N, N))  # noqa: E731
    c = lambda *s: r.standard_normal(s) + 1j * r.standard_normal(s)  # noqa: E731
    u = r.standard_normal((B, 2, N, N))
    hat = c(B, N, M)
    inv_ksq = r.random((N, S))
    k1, k2 = np.fft.fftfreq(N, 1 / N), np.arange(S, dtype=float)
    ph = c(B, 2, N, S)
    mix = c(N, S), c(N, S)
    neg = (-np.arange(N)) % N
    a, b = g(), g()
    m = 2 * S * S
    ar1 = (r.standard_normal(m), r.random(m), r.random(m), r.standard_normal((200, m)), r.random(m))
    return {
        "rotational_products": (u,),
        "slab_velocity": (hat, inv_ksq, k1, k2, S),
        "slab_mix": (ph, *mix, neg, M),
        "combine": (hat, 0.75, c(B, N, M), 0.25, c(B, N, M), 1e-3),
        "power_sum": (a, 4.0),
        "max_abs": (a,),
        "magnitude_power_sum": (a, b, 4.0),
        "frobenius_max": (a, b, g(), g()),
        "ar1_path": ar1,
    }


def best_of(fn, args, repeat=5):
    fn(*args)
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


STEP_SCRIPT = """
import json, time, numpy as np
from vortlab import _kernels
from vortlab.dynamics import SimConfig, integrate_ensemble
from vortlab.spectral import ScalarField, make_grid
N, B, steps = {N}, {B}, {steps}
chi = ScalarField.random_band_limited(make_grid(N), 8, np.random.default_rng(1))
cfg = SimConfig(N=N, dt=1e-3, t1=2e-3)
integrate_ensemble([chi] * B, cfg, list(range(B)))
cfg = SimConfig(N=N, dt=1e-3, t1=steps * 1e-3)
t = time.perf_counter()
integrate_ensemble([chi] * B, cfg, list(range(B)))
print(json.dumps({{"backend": _kernels.BACKEND, "per_step": (time.perf_counter() - t) / steps}}))
"""


def step_time(flag, N, B, steps):
    env = {**os.environ, "VORTLAB_NUMBA": flag}
    proc = subprocess.run([sys.executable, "-c", STEP_SCRIPT.format(N=N, B=B, steps=steps)],
                          capture_output=True, text=True, env=env, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=128)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--steps", type=int, default=200)
    args = p.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        print("numba not installed; nothing to compare")
        return 1
    print(f"kernels at N={args.N}, batch={args.batch} (seconds per call)")
    print(f"{'kernel':<22}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, kargs in kernel_cases(args.N, args.batch).items():
        t_np = best_of(getattr(K, f"{name}_numpy"), kargs)
        t_nb = best_of(getattr(K, f"{name}_numba"), kargs)
        print(f"{name:<22}{t_np:>12.3e}{t_nb:>12.3e}{t_np / t_nb:>10.2f}")
    print(f"\nfull stochastic step at N={args.N}, batch={args.batch}")
    res = {flag: step_time(flag, args.N, args.batch, args.steps) for flag in ("0", "1")}
    for flag in ("0", "1"):
        print(f"{res[flag]['backend']:<22}{res[flag]['per_step']:>12.3e}")
    print(f"{'speedup':<22}{res['0']['per_step'] / res['1']['per_step']:>12.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
