"""Run configuration: a strict pydantic schema read from and written to YAML.

Unknown keys are rejected everywhere so that a misspelt physics parameter can
never be silently ignored.  :func:`parse_config` additionally pre-checks the
module-level rules (noise regularity, dealiasing cutoff, embedding exponent)
and turns every failure into a :class:`~vortlab.errors.ConfigError` naming the
offending key.
"""

import warnings
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dynamics import SimConfig, read_snapshot_field
from .errors import ConfigError
from .ergodics import HypothesisWarning, default_catalog
from .noise import NoiseSpectrum
from .spectral import ScalarField, make_grid

COMMANDS = ("simulate", "ensemble", "ou-calibrate", "invariant", "markov-test",
            "tail-report", "contdep-test", "checks")
# commands whose statistics rely on damping
NEEDS_DAMPING = ("invariant", "markov-test", "tail-report")
GAMMA_WARNING = "gamma>0 required by the invariant-measure hypothesis"

U64 = 2**64


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class NoiseBlock(_Block):
    alpha: float = 6.0
    h: float = Field(4.5, ge=0)
    kcut: int = Field(8, ge=1)
    amplitude: float = Field(1.0, ge=0)


class InitialBlock(_Block):
    """Initial vorticity.

    ``zero`` and ``random`` are presets; ``modes`` lists ``[k1, k2, a, b]``
    meaning ``a cos(k.x) + b sin(k.x)``; ``file`` reads a snapshot.
    """

    kind: Literal["zero", "random", "modes", "file"] = "zero"
    linf: float = Field(1.0, gt=0)
    kmax: int = Field(8, ge=1)
    seed: int = Field(7, ge=0, lt=U64)
    modes: list[list[float]] = []
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "file" and not self.path:
            raise ValueError("initial.kind=file needs initial.path")
        for m in self.modes:
            if len(m) != 4 or m[0] != int(m[0]) or m[1] != int(m[1]):
                raise ValueError(f"initial.modes entries must be [k1, k2, a, b] with integer k, got {m}")
        return self


class EnsembleBlock(_Block):
    trajectories: int = Field(4, ge=1)
    chunk: int = Field(8, ge=1)


class InvariantBlock(_Block):
    burn_in: float = Field(10.0, ge=0)
    horizons: list[float] = [25.0, 50.0, 100.0, 200.0]
    trajectories: int = Field(16, ge=1)
    chunk: int = Field(16, ge=1)
    seed_b: int = Field(4242, ge=0, lt=U64)
    batches: int = Field(10, ge=2)
    se_tolerance: float = Field(3.0, gt=0)


class MarkovBlock(_Block):
    t: float = Field(1.0, ge=0)
    s: float = Field(1.0, ge=0)
    M_outer: int = Field(200, ge=2)
    M_inner: int = Field(50, ge=2)
    observable: str = "tanh_cos1"
    se_tolerance: float = Field(3.0, gt=0)
    chunk: int = Field(8, ge=1)


class TailBlock(_Block):
    times: list[float] = [5.0, 10.0, 20.0, 40.0]
    M: int = Field(200, ge=1)
    epsilons: list[float] = [0.1, 0.05, 0.01]
    reference_time: float = 10.0
    final_time: float = 40.0
    band: list[float] = [0.5, 2.0]
    chunk: int = Field(50, ge=1)


class ContDepBlock(_Block):
    n_list: list[int] = [4, 8, 16, 32]
    amplitude: float = 1.0
    g_modes: list[list[float]] = [[1, 0, 1.0, 0.0], [0, 1, 0.0, 1.0], [1, 1, 0.5, 0.5]]
    ratio: float = Field(0.2, gt=0)


class OUBlock(_Block):
    a: float = 3.0
    c_tilde: float = Field(1.0, gt=0)
    samples: int = Field(200, ge=1)


class ChecksBlock(_Block):
    tolerance: float = Field(1e-6, gt=0)
    conservation_T: float = Field(1.0, gt=0)
    gronwall_T: float = Field(2.0, gt=0)
    grad4_burn_in: float = Field(10.0, ge=0)
    diagnostics_every: int = Field(10, ge=1)


class RunConfig(_Block):
    N: int = Field(128, ge=16, le=4096)
    dt: float = Field(1e-3, gt=0)
    gamma: float = Field(0.5, ge=0)
    t0: float = 0.0
    t1: float = 1.0
    seed: int = Field(42, ge=0, lt=U64)
    stream_id: int = Field(0, ge=0, lt=U64)
    snapshot_every: int = Field(0, ge=0)
    advection: bool = True
    cfl: float = Field(0.5, gt=0)
    noise: NoiseBlock = NoiseBlock()
    initial: InitialBlock = InitialBlock()
    observables: list[str] = ["tanh_cos1", "tanh_sin2", "clip_sq_cos11", "band_bump", "tanh_mix"]
    catalog_scale: float = Field(4.0, gt=0)
    ensemble: EnsembleBlock = EnsembleBlock()
    invariant: InvariantBlock = InvariantBlock()
    markov: MarkovBlock = MarkovBlock()
    tail: TailBlock = TailBlock()
    contdep: ContDepBlock = ContDepBlock()
    ou: OUBlock = OUBlock()
    checks: ChecksBlock = ChecksBlock()
    output_dir: str = "out"
    formats: list[Literal["csv", "snapshot"]] = ["csv", "snapshot"]
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _rules(self):
        if self.N % 2:
            raise ValueError(f"N must be even, got {self.N}")
        if not self.t1 >= self.t0:
            raise ValueError(f"t1 must not precede t0 (t0={self.t0}, t1={self.t1})")
        try:
            spec = self.spectrum()
        except ConfigError as exc:
            raise ValueError(f"noise: {exc}") from None
        if spec.kcut > self.N // 3:
            raise ValueError(f"noise.kcut={spec.kcut} must not exceed floor(N/3)={self.N // 3}")
        if not self.ou.a > 2:
            raise ValueError(f"ou.a must exceed 2 (H^(a-1) must embed in L^inf), got {self.ou.a}")
        if self.initial.kind == "random" and self.initial.kmax > self.N // 3:
            raise ValueError(f"initial.kmax={self.initial.kmax} must not exceed floor(N/3)={self.N // 3}")
        known = {"tanh_cos1", "tanh_sin2", "clip_sq_cos11", "band_bump", "tanh_mix"}
        for name in [*self.observables, self.markov.observable]:
            if name not in known:
                raise ValueError(f"unknown observable {name!r}; choose from {sorted(known)}")
        # the default frequency ladder is trimmed to the grid; explicit entries are checked
        explicit = "n_list" in self.contdep.model_fields_set
        for n in self.contdep.n_list if explicit else []:
            if not 0 < n <= self.N // 3:
                raise ValueError(f"contdep.n_list entry {n} outside (0, floor(N/3)={self.N // 3}]")
        lo, hi = (self.tail.band + [0.0, 0.0])[:2]
        if len(self.tail.band) != 2 or not 0 < lo <= hi:
            raise ValueError(f"tail.band must be [lo, hi] with 0 < lo <= hi, got {self.tail.band}")
        return self

    # -- conversions --------------------------------------------------------

    def contdep_frequencies(self):
        """Test frequencies for the continuous-dependence check, within the dealiased band."""
        return [n for n in self.contdep.n_list if 0 < n <= self.N // 3]

    def spectrum(self):
        n = self.noise
        return NoiseSpectrum(alpha=n.alpha, h=n.h, kcut=n.kcut, amplitude=n.amplitude)

    def catalog(self):
        return {o.name: o for o in default_catalog(make_grid(self.N), self.catalog_scale)}

    def sim(self, observables=True, **changes):
        cat = self.catalog()
        obs = tuple(cat[n] for n in self.observables) if observables else ()
        cfg = SimConfig(N=self.N, dt=self.dt, gamma=self.gamma, spectrum=self.spectrum(), t0=self.t0,
                        t1=self.t1, seed=self.seed, stream_id=self.stream_id,
                        snapshot_every=self.snapshot_every, observables=obs,
                        advection=self.advection, cfl=self.cfl)
        return cfg.replace(**changes) if changes else cfg

    def initial_field(self):
        grid = make_grid(self.N)
        ini = self.initial
        if ini.kind == "zero":
            return ScalarField.zeros(grid)
        if ini.kind == "random":
            return ScalarField.random_band_limited(grid, ini.kmax, ini.seed, linf=ini.linf)
        if ini.kind == "modes":
            return ScalarField.from_modes(grid, [(int(m[0]), int(m[1]), m[2], m[3]) for m in ini.modes])
        _, field = read_snapshot_field(ini.path)
        if field.grid != grid:
            raise ConfigError(f"initial snapshot has N={field.grid.N}, config has N={self.N}")
        return ScalarField(grid, field.hat)

    def test_function(self):
        grid = make_grid(self.N)
        return ScalarField.from_modes(grid, [(int(m[0]), int(m[1]), m[2], m[3])
                                             for m in self.contdep.g_modes])


def _describe(err):
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def config_from_dict(data, command=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a mapping, got {type(data).__name__}")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    if command is not None:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        if command in NEEDS_DAMPING and cfg.gamma == 0:
            warnings.warn(GAMMA_WARNING, HypothesisWarning, stacklevel=2)
    return cfg


def parse_config(text, command=None):
    """Validate a YAML document; an empty document gives the defaults."""
    try:
        data = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"not a valid YAML document: {exc}") from None
    return config_from_dict(data, command)


def as_dict(cfg):
    """Plain-data form of ``cfg`` that :func:`config_from_dict` maps back to an equal config."""
    data = cfg.model_dump(mode="json")
    if "n_list" not in cfg.contdep.model_fields_set:
        # keep the grid-trimmed default ladder a default on reload
        del data["contdep"]["n_list"]
    return data


def serialize(cfg):
    return yaml.safe_dump(as_dict(cfg), sort_keys=False)


def load_config(path, command=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), command)
