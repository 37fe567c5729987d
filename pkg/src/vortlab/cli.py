"""Command-line front end.

Every command reads one YAML config, echoes it into the output directory,
writes its tables there and finishes with ``manifest.json``, a list of named
checks with pass/fail verdicts.  Exit status: 0 when every check passes, 1
when any fails, 2 on a runtime or configuration error.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, replace
from functools import partial

import numpy as np

from . import _kernels
from .config import COMMANDS, as_dict, config_from_dict, load_config, parse_config, serialize
from .diagnostics import (
    conservation_suite, contdep_test, diagnostic_record, grad4_track, kato_ratio, records_to_columns,
    running_sup_stable, cancellation_residual,
)
from .dynamics import integrate_ensemble, write_series_csv, write_snapshot
from .errors import VortlabError
from .ergodics import (
    HypothesisWarning, cesaro_convergence, markov_semigroup_test, seed_agreement, tail_bound_report,
)
from .noise import RngStream, curl_growth_rate
from .ou import calibrate_lambda, calibration_margin, stationary_sample
from .parallel import chunked, map_chunks
from .spectral import (
    Lp, ScalarField, Sobolev, advection, biot_savart, make_grid, norm, pairing, GradLp,
)

log = logging.getLogger("vortlab")


@dataclass
class Check:
    name: str
    passed: bool
    value: float = float("nan")
    threshold: float = float("nan")
    detail: str = ""


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = cfg.output_dir
        self.checks = []
        self.artifacts = []
        self.summary = {}
        self.notes = []
        self.quiet = False
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        full = os.path.join(self.out, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.artifacts.append(name)
        return full

    def check(self, name, passed, value=float("nan"), threshold=float("nan"), detail=""):
        c = Check(name, bool(passed), float(value), float(threshold), detail)
        self.checks.append(c)
        return c

    @property
    def csv_enabled(self):
        return "csv" in self.cfg.formats

    @property
    def snapshots_enabled(self):
        return "snapshot" in self.cfg.formats

    def table(self, name, header, rows):
        if not self.csv_enabled:
            return
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])

    def finish(self):
        with open(self.path("config.yaml"), "w") as fh:
            fh.write(serialize(self.cfg))
        passed = all(c.passed for c in self.checks)
        manifest = {
            "command": self.command,
            "passed": passed,
            "backend": _kernels.BACKEND,
            "checks": [asdict(c) for c in self.checks],
            "summary": self.summary,
            "notes": self.notes,
            "artifacts": sorted(set(self.artifacts) | {"manifest.json"}),
        }
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return passed


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write_trajectory(run, traj, tag):
    if run.csv_enabled:
        traj.to_csv(run.path(f"series{tag}.csv"))
    if run.snapshots_enabled:
        for j, (t, field) in enumerate(traj.snapshots):
            write_snapshot(run.path(f"snapshots{tag}/snap_{j:06d}.vort"), field, t)


def cmd_simulate(run):
    cfg = run.cfg
    traj = integrate_ensemble([cfg.initial_field()], cfg.sim(), [cfg.stream_id])[0]
    _write_trajectory(run, traj, "")
    xi = traj.final.xi
    run.summary.update(final_time=traj.final.time, steps=traj.final.step_count,
                       final_enstrophy=norm(xi, Lp(2)), final_linf=float(np.max(np.abs(xi.values))))
    run.check("finite", np.all(np.isfinite(xi.values)))
    run.check("mean_zero", abs(xi.mean) <= 1e-12 * max(1.0, float(np.max(np.abs(xi.values)))), abs(xi.mean), 1e-12)


def _ensemble_chunk(ids, sim, chi):
    trajs = integrate_ensemble([chi] * len(ids), sim, list(ids))
    return [(i, tr.times, tr.series, tr.snapshots, tr.final.xi) for i, tr in zip(ids, trajs)]


def cmd_ensemble(run):
    cfg = run.cfg
    ids = [cfg.stream_id + i for i in range(cfg.ensemble.trajectories)]
    fn = partial(_ensemble_chunk, sim=cfg.sim(), chi=cfg.initial_field())
    parts = [r for chunk in map_chunks(fn, chunked(ids, cfg.ensemble.chunk), cfg.workers) for r in chunk]
    rows = []
    for sid, times, series, snaps, xi in parts:
        tag = f"_{sid}"
        if run.csv_enabled:
            write_series_csv(run.path(f"series{tag}.csv"), times, series)
        if run.snapshots_enabled:
            for j, (t, field) in enumerate(snaps):
                write_snapshot(run.path(f"snapshots{tag}/snap_{j:06d}.vort"), field, t)
        rows.append((sid, norm(xi, Lp(2)), float(np.max(np.abs(xi.values)))))
    run.table("ensemble_final.csv", ["stream_id", "enstrophy", "linf"], rows)
    run.summary["trajectories"] = len(rows)
    run.check("all_finite", all(math.isfinite(r[1]) for r in rows))


def cmd_ou_calibrate(run):
    cfg = run.cfg
    spec, a, ct, gamma = cfg.spectrum(), cfg.ou.a, cfg.ou.c_tilde, cfg.gamma
    s_a = curl_growth_rate(spec, a)
    lam = calibrate_lambda(gamma, spec, a, ct)
    margin = calibration_margin(gamma, spec, a, ct, lam)
    grid = make_grid(cfg.N)
    rng = RngStream(cfg.seed, cfg.stream_id).spawn(0x6F75)
    norms = np.array([norm(stationary_sample(spec, lam, rng, grid).zeta, Sobolev(a))
                      for _ in range(cfg.ou.samples)])
    mc_mean = ct * float(norms.mean())
    mc_rms = ct * math.sqrt(float(np.mean(norms**2)))
    exact_rms = ct * math.sqrt(s_a / (2.0 * lam))
    mc_margin = gamma / 2.0 - mc_mean
    run.summary.update(lam=lam, S_a=s_a, margin=margin, mc_margin=mc_margin, mc_mean=mc_mean,
                       mc_rms=mc_rms, exact_rms=exact_rms)
    run.table("ou_calibration.csv", ["lambda", "S_a", "margin", "mc_margin", "mc_rms", "exact_rms"],
              [(lam, s_a, margin, mc_margin, mc_rms, exact_rms)])
    run.check("margin_positive", margin > 0, margin, 0.0)
    run.check("mc_margin_confirmed", mc_margin >= 0.9 * margin, mc_margin, 0.9 * margin)
    if exact_rms > 0:
        rel = abs(mc_rms / exact_rms - 1.0)
        run.check("mc_rms_matches", rel <= 0.1, rel, 0.1)
    if not run.quiet:
        print(f"lambda={lam!r} S_a={s_a!r} margin={margin!r}")


def cmd_invariant(run):
    cfg = run.cfg
    inv = cfg.invariant
    sim = cfg.sim()
    obs = sim.observables
    rep = cesaro_convergence(sim, obs, burn_in=inv.burn_in, horizons=tuple(inv.horizons),
                             trajectories=inv.trajectories, chi=cfg.initial_field(), workers=cfg.workers,
                             chunk=inv.chunk)
    names = rep.names
    run.table("cesaro_differences.csv", ["n", *names],
              [(n, *rep.differences[j]) for j, n in enumerate(rep.horizons)])
    run.table("cesaro_estimates.csv", ["horizon", *names],
              [(n, *rep.estimates[j].mean(axis=0)) for j, n in enumerate(rep.checkpoints)])
    edges = rep.histograms["edges"]
    keys = [k for k in rep.histograms if k != "edges"]
    run.table("pairing_histograms.csv", ["lo", "hi", *keys],
              [(edges[i], edges[i + 1], *(rep.histograms[k][i] for k in keys)) for i in range(len(edges) - 1)])
    for j, name in enumerate(names):
        d = rep.differences[:, j]
        run.check(f"cesaro_decreasing[{name}]", rep.decreasing[j], float(d[-1]), float(d[0]))
    other = cesaro_convergence(sim.replace(seed=inv.seed_b), obs, burn_in=inv.burn_in,
                               horizons=tuple(inv.horizons), trajectories=1, chi=cfg.initial_field())
    agree = seed_agreement(rep.series, other.series, names, inv.batches)
    run.table("seed_agreement.csv", ["observable", "mean_a", "mean_b", "se_a", "se_b", "z"],
              [(n, agree.mean_a[j], agree.mean_b[j], agree.se_a[j], agree.se_b[j], agree.z[j])
               for j, n in enumerate(names)])
    for j, name in enumerate(names):
        run.check(f"seed_agreement[{name}]", agree.z[j] <= inv.se_tolerance, agree.z[j], inv.se_tolerance)
    if cfg.gamma == 0:
        run.notes.append("gamma=0: the invariant-measure construction assumes damping")


def cmd_markov(run):
    cfg = run.cfg
    mk = cfg.markov
    phi = cfg.catalog()[mk.observable]
    rep = markov_semigroup_test(cfg.sim(observables=False), mk.t, mk.s, phi, mk.M_outer, mk.M_inner,
                                chi=cfg.initial_field(), workers=cfg.workers, chunk=mk.chunk)
    run.table("markov_samples.csv", ["outer", "lhs", "rhs"],
              [(i, a, b) for i, (a, b) in enumerate(zip(rep.lhs_samples, rep.rhs_samples))])
    run.summary.update(lhs=rep.lhs, rhs=rep.rhs, se=rep.se, se_paired=rep.se_paired, z=rep.z_score)
    run.check("markov_identity", rep.z_score <= mk.se_tolerance, rep.z_score, mk.se_tolerance)
    if rep.z_score > 5:
        run.notes.append("z > 5: implementation error suspected")


def cmd_tail(run):
    cfg = run.cfg
    tl = cfg.tail
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HypothesisWarning)
        rep = tail_bound_report(cfg.sim(observables=False), tl.times, tl.M, chi=cfg.initial_field(),
                                epsilons=tuple(tl.epsilons), workers=cfg.workers, chunk=tl.chunk)
    run.notes.extend(str(w.message) for w in caught)
    run.table("tail_quantiles.csv", ["t", *(f"R_{e}" for e in rep.epsilons)],
              [(t, *rep.quantiles[i]) for i, t in enumerate(rep.times)])
    run.table("tail_bounds.csv", ["epsilon", "R"], sorted(rep.r_eps.items(), reverse=True))
    eps = rep.epsilons[0]
    q_ref, q_fin = rep.quantile(tl.reference_time, eps), rep.quantile(tl.final_time, eps)
    ratio = q_fin / q_ref if q_ref > 0 else (1.0 if q_fin == 0 else math.inf)
    lo, hi = tl.band
    run.summary.update(q_ref=q_ref, q_final=q_fin, ratio=ratio)
    run.check("quantile_ratio_in_band", lo <= ratio <= hi, ratio, hi, f"band [{lo}, {hi}] at eps={eps}")


def cmd_contdep(run):
    cfg = run.cfg
    cd = cfg.contdep
    rep = contdep_test(cfg.initial_field(), cfg.sim(observables=False), cfg.test_function(), cfg.contdep_frequencies(),
                       amplitude=cd.amplitude)
    run.table("contdep.csv", ["n", "gap"], zip(rep.n_list, rep.gaps))
    run.check("gaps_monotone", rep.monotone)
    first, last = float(rep.gaps[0]), float(rep.gaps[-1])
    run.check("gap_ratio", last <= cd.ratio * first, last / first if first > 0 else 0.0, cd.ratio)


def _probe_field(cfg):
    """Initial field for the deterministic suites: the configured one unless it is zero."""
    chi = cfg.initial_field()
    if np.any(chi.hat != 0):
        return chi
    grid = make_grid(cfg.N)
    return ScalarField.random_band_limited(grid, min(8, grid.kmax_dealias), cfg.initial.seed)


def cmd_checks(run):
    cfg = run.cfg
    ck = cfg.checks
    grid = make_grid(cfg.N)
    chi = _probe_field(cfg)
    base = cfg.sim(observables=False)
    quiet_noise = replace(base.spectrum, amplitude=0.0)
    rows = []

    cons = conservation_suite(base.replace(gamma=0.0, spectrum=quiet_noise, t1=base.t0 + ck.conservation_T),
                              chi, tol=ck.tolerance)
    for k, v in cons.drift.items():
        run.check(f"conservation[{k}]", v <= ck.tolerance, v, ck.tolerance)
    gr = conservation_suite(base.replace(gamma=1.0, spectrum=quiet_noise, t1=base.t0 + ck.gronwall_T),
                            chi, tol=ck.tolerance)
    for k, v in gr.drift.items():
        run.check(f"gronwall[{k}]", v <= ck.tolerance, v, ck.tolerance)

    g = max(cfg.gamma, 0.5)
    lin = base.replace(gamma=g, spectrum=quiet_noise, advection=False, t1=base.t0 + 20 * base.dt)
    out = integrate_ensemble([chi], lin, [0])[0].final
    expect = math.exp(-g * (out.time - lin.t0)) * norm(chi, Lp(2))
    err = abs(norm(out.xi, Lp(2)) / expect - 1.0)
    run.check("exact_damping", err <= 1e-12, err, 1e-12)

    one = ScalarField.from_modes(grid, [(1, 0, 0.0, 1.0)])
    kr = kato_ratio(one)
    exact = 1.0 / (1.0 + math.log1p((1.5 * math.pi**2) ** 0.25))
    run.check("kato_single_mode", abs(kr - exact) <= 1e-3, kr, exact)
    run.check("kato_scale_invariance", abs(kato_ratio(chi * 3.7) - kato_ratio(chi)) <= 1e-12 * kato_ratio(chi),
              kato_ratio(chi * 3.7), kato_ratio(chi))

    u = biot_savart(chi)
    div = float(np.max(np.abs(u.divergence_hat()))) / max(float(np.max(np.abs(u.u1.hat))), 1e-300)
    run.check("biot_savart_divergence", div <= 1e-14, div, 1e-14)
    curl_err = float(np.max(np.abs(u.curl().values - chi.values))) / float(np.max(np.abs(chi.values)))
    run.check("biot_savart_curl", curl_err <= 1e-12, curl_err, 1e-12)
    orth = abs(pairing(advection(chi, u), chi))
    scale = norm(chi, Lp(2)) * norm(chi, GradLp(2))
    run.check("advection_orthogonality", orth <= 1e-10 * scale, orth / scale, 1e-10)
    res = cancellation_residual(u, chi)
    run.check("w14_cancellation", res <= 1e-8, res, 1e-8)

    # stochastic diagnostics along the configured run
    span = base.t1 - base.t0
    burn = min(ck.grad4_burn_in, 0.5 * span)
    if burn < ck.grad4_burn_in:
        run.notes.append(f"grad4 burn-in shortened to {burn} (run length {span})")
    records = []

    def hook(i, t, hat):
        if i % ck.diagnostics_every == 0:
            xi = ScalarField(grid, hat[0])
            if np.any(xi.hat != 0):
                records.append(diagnostic_record(xi, t, cfg.ou.a))

    track = grad4_track(base, cfg.initial_field(), burn_in=burn)
    integrate_ensemble([cfg.initial_field()], base, [cfg.stream_id], on_step=hook)
    cols = records_to_columns(records)
    names = list(cols)
    run.table("diagnostics.csv", ["time", *names],
              [(r.time, *(getattr(r, n) for n in names)) for r in records])
    run.table("grad4.csv", ["time", "grad4"], zip(track.times, track.values))
    run.check("grad4_bounded", track.bounded, float(np.max(track.window)), track.factor * float(np.median(track.window)))
    if len(records) >= 4:
        ok, half, last = running_sup_stable(cols["kato_ratio"])
        run.check("kato_running_sup_stable", ok, last, 1.1 * half)
    rows.extend((c.name, c.passed, c.value, c.threshold) for c in run.checks)
    run.table("checks.csv", ["check", "passed", "value", "threshold"], rows)


HANDLERS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "ou-calibrate": cmd_ou_calibrate,
    "invariant": cmd_invariant,
    "markov-test": cmd_markov,
    "tail-report": cmd_tail,
    "contdep-test": cmd_contdep,
    "checks": cmd_checks,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="vortlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--workers", type=int, help="worker processes for ensembles")
    p.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    return p


def resolve_config(args):
    cfg = load_config(args.config, args.command) if args.config else parse_config("", args.command)
    overrides = {k: v for k, v in (("seed", args.seed), ("output_dir", args.out),
                                   ("workers", args.workers)) if v is not None}
    if overrides:
        cfg = config_from_dict({**as_dict(cfg), **overrides})
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", HypothesisWarning)
            cfg = resolve_config(args)
        run = Run(args.command, cfg)
        run.quiet = args.quiet
        run.notes.extend(str(w.message) for w in caught)
        for w in caught:
            log.warning("warning: %s", w.message)
        HANDLERS[args.command](run)
        passed = run.finish()
    except (VortlabError, OSError, ValueError) as exc:
        print(f"vortlab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any crash is a runtime error
        print(f"vortlab {args.command}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        for c in run.checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.6g}  threshold={c.threshold:.6g}")
        print(f"{args.command}: {'passed' if passed else 'FAILED'} -> {os.path.join(cfg.output_dir, 'manifest.json')}")
    return 0 if passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
