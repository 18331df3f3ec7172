"""Experiment configuration: a flat ``key = value`` format with ``#`` comments."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from ..mesh import BoundarySpec, Grid, Label


class ConfigError(ValueError):
    """Invalid configuration (unknown key, bad value, out-of-range parameter)."""


METHODS = ("levelset", "lk", "lattice")
PHANTOMS = ("linear", "analytic", "custom")
EDGES = ("bottom", "top", "left", "right")


@dataclass(frozen=True)
class ExperimentConfig:
    # grid and boundary
    nx: int = 64
    ny: int = 64
    bottom: str = "measure"
    top: str = "source"
    left: str = "insulating"
    right: str = "insulating"
    source_interval: tuple | None = None
    measure_interval: tuple | None = None
    # phantom
    phantom: str = "linear"
    phantom_ya: float = 0.25
    phantom_yb: float = 0.65
    phantom_c0: float = 0.5
    phantom_c1: float = 0.15
    phantom_file: str | None = None
    # method
    method: str = "levelset"
    voltage: float = 1.0
    alpha: float = 1e-3
    beta: float = 1e-2
    eps: float | None = None
    tau: float = 1.0
    init_y0: float = 0.5
    init_slope: float = 0.0
    pin_measure_layer: bool = False
    max_iter: int = 500
    stop_tol: float = 0.0
    n_sources: int = 9
    delta_x: float = 0.05
    omega: float | None = None
    gamma_init: float = 1.5
    frozen_width: int = 3
    smoothing: bool = False
    max_cycles: int = 50
    # lattice
    lattice_n: int = 7
    p_prime: int = 3
    eps_mesh: float = 1.0
    w_low: float = 0.2
    w_high: float = 0.8
    lattice_file: str | None = None
    # data and output
    noise: float = 0.0
    seed: int | None = None
    output_dir: str = "out"
    snapshot_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.nx >= 3 and self.ny >= 3, "nx and ny must be at least 3")
        for e in EDGES:
            try:
                Label.parse(getattr(self, e))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{e}: {exc}") from None
        need(self.phantom in PHANTOMS, f"phantom must be one of {PHANTOMS}")
        need(self.method in METHODS, f"method must be one of {METHODS}")
        if self.phantom == "linear":
            need(0 < self.phantom_ya < 1 and 0 < self.phantom_yb < 1, "linear junction endpoints must lie in (0, 1)")
        if self.phantom == "analytic":
            need(abs(self.phantom_c1) < min(self.phantom_c0, 1 - self.phantom_c0),
                 "analytic junction must stay inside (0, 1)")
        if self.phantom == "custom":
            need(self.phantom_file is not None, "custom phantom needs phantom_file")
        need(self.alpha >= 0, "alpha must be non-negative")
        need(self.beta > 0, "beta must be positive")
        need(self.eps is None or self.eps > 0, "eps must be positive")
        need(self.tau > 0, "tau must be positive")
        need(self.max_iter >= 0 and self.max_cycles >= 0, "iteration caps must be non-negative")
        need(self.stop_tol >= 0, "stop_tol must be non-negative")
        need(self.n_sources >= 1, "n_sources must be positive")
        need(self.delta_x > 0, "delta_x must be positive")
        need(self.omega is None or self.omega > 0, "omega must be positive")
        need(1 <= self.gamma_init <= 2, "gamma_init must lie in [1, 2]")
        need(self.frozen_width >= 0, "frozen_width must be non-negative")
        need(self.lattice_n >= 1 and self.p_prime >= 1, "lattice_n and p_prime must be positive")
        need(self.eps_mesh > 0, "eps_mesh must be positive")
        need(0 < self.w_low < self.w_high < 1, "need 0 < w_low < w_high < 1")
        need(self.noise >= 0, "noise must be non-negative")
        need(self.noise == 0 or self.seed is not None, "a seed is required when noise > 0")
        need(self.snapshot_every >= 0, "snapshot_every must be non-negative")
        for name in ("source_interval", "measure_interval"):
            iv = getattr(self, name)
            need(iv is None or (len(iv) == 2 and 0 <= iv[0] < iv[1] <= 1), f"{name} must be 'lo,hi' in [0, 1]")
        try:
            self.boundary().validate(Grid(self.nx, self.ny))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def boundary(self) -> BoundarySpec:
        labels = {e: Label.parse(getattr(self, e)) for e in EDGES}
        intervals = []
        for label, iv in ((Label.SOURCE, self.source_interval), (Label.MEASURE, self.measure_interval)):
            if iv is not None:
                intervals += [(e, float(iv[0]), float(iv[1])) for e in EDGES if labels[e] == label]
        return BoundarySpec(**labels, intervals=tuple(intervals))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _kind(name: str) -> str:
    t = str(_FIELDS[name].type)
    for k in ("tuple", "bool", "int", "float", "str"):
        if k in t:
            return k
    raise AssertionError(t)


def parse_value(name: str, text: str):
    """Convert the text of one config value to the field's type."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown key {name!r}")
    text = text.strip()
    optional = "None" in str(_FIELDS[name].type)
    if optional and text.lower() in ("", "none", "auto"):
        return None
    kind = _kind(name)
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            lo, hi = (float(t) for t in text.split(","))
            return (lo, hi)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(repr(float(t)) for t in v)
    return str(v)


def parse_text(text: str) -> dict:
    """Key-value pairs of a config text; later duplicates win."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    return base.replace(**parse_text(text))


def load(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read(), base)


def dumps(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


PRESETS = {
    "exp1-exact": dict(
        method="levelset", nx=64, ny=64, bottom="insulating", top="insulating", left="measure",
        right="source", phantom="linear", phantom_ya=0.2, phantom_yb=0.6, alpha=1e-3, beta=1e-6,
        tau=0.05, max_iter=500, noise=0.0, snapshot_every=50),
    "exp1-noisy": dict(
        method="levelset", nx=64, ny=64, bottom="insulating", top="insulating", left="measure",
        right="source", phantom="linear", phantom_ya=0.2, phantom_yb=0.6, alpha=1e-3, beta=1e-6,
        tau=0.05, max_iter=2000, noise=0.1, seed=1, snapshot_every=50),
    "exp2-exact": dict(
        method="levelset", nx=64, ny=64, bottom="insulating", top="insulating", left="measure",
        right="source", phantom="analytic", phantom_c0=0.5, phantom_c1=0.15, alpha=1e-3, beta=1e-6,
        tau=0.05, max_iter=500, noise=0.0, snapshot_every=50),
    "lattice-recovery": dict(method="lattice", lattice_n=7, p_prime=3, w_low=0.2, w_high=0.8, seed=0),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[name], **overrides})
