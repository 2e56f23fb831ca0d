"""Run configuration: documented keys, flat ``key=value`` files, validation.

File syntax: one ``key = value`` per line, ``#`` starts a comment, blank
lines are ignored.  Unknown keys are rejected.  Command-line flags
override file values.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError

WORKERS_ENV = "LMG_WORKERS"

# key -> help text (defaults live on RunConfig)
KEY_HELP = {
    "h": "transverse field",
    "gamma": "measurement rate (>= 0)",
    "N": "number of spins, or 'semiclassical' for the infinite-size limit",
    "theta": "polar angle of the initial coherent state",
    "phi": "azimuth of the initial state",
    "mz": "initial m_z for semiclassical runs (overrides cos(theta) when set)",
    "method": "SSE scheme: split or euler",
    "dt": "integration step",
    "t_final": "final time; 0 = automatic (max(50, 20/gamma) for semiclassical ensembles and sweeps, 10 otherwise)",
    "dt_record": "recording interval",
    "M": "ensemble size",
    "base_seed": "base seed of all noise streams",
    "trajectory_index": "trajectory index for single runs",
    "workers": "worker processes (0 = available parallelism); env LMG_WORKERS overrides",
    "epsilon": "soft absorption threshold 1 - |m_z| < epsilon",
    "bins": "histogram bins on [-1, 1]",
    "ehrenfest_threshold": "m_z level defining the Ehrenfest crossing",
    "h_grid": "sweep fields: comma list or lin:a:b:n / log:a:b:n",
    "gamma_grid": "sweep rates: comma list or lin:a:b:n / log:a:b:n",
    "energies": "flow: comma list of orbit energies (empty = single orbit from mz, phi)",
    "taus": "oracle: rescaled times gamma*t to compare",
    "out_dir": "output directory",
    "formats": "output formats: csv, or csv+png to also render figures",
}


@dataclass(frozen=True)
class RunConfig:
    h: float = 0.3
    gamma: float = 0.25
    N: str = "semiclassical"
    theta: float = math.pi / 2
    phi: float = 0.0
    mz: float | None = None
    method: str = "split"
    dt: float = 1e-3
    t_final: float = 0.0
    dt_record: float = 0.1
    M: int = 100
    base_seed: int = 0
    trajectory_index: int = 0
    workers: int = 0
    epsilon: float = 1e-4
    bins: int = 201
    ehrenfest_threshold: float = -0.9
    h_grid: str = "lin:0.05:0.95:10"
    gamma_grid: str = "lin:0.1:2.0:10"
    energies: str = ""
    taus: str = "0.5,1,2"
    out_dir: str = "out"
    formats: str = "csv"

    @property
    def semiclassical(self) -> bool:
        return self.N == "semiclassical"

    @property
    def n_spins(self) -> int:
        if self.semiclassical:
            raise ConfigError("N", "this subcommand needs a finite particle number")
        return int(self.N)

    @property
    def initial_mz(self) -> float:
        return math.cos(self.theta) if self.mz is None else self.mz

    @property
    def plot(self) -> bool:
        return "png" in self.formats.split("+")

    def horizon(self, automatic: float) -> float:
        """``t_final`` or ``automatic`` when unset, rounded up to a multiple of dt_record."""
        t = self.t_final or automatic
        return math.ceil(t / self.dt_record - 1e-9) * self.dt_record

    def resolved_workers(self) -> int:
        env = os.environ.get(WORKERS_ENV)
        if env is not None:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError("workers", f"{WORKERS_ENV}={env!r} is not an integer") from None
        else:
            n = self.workers
        if n < 0:
            raise ConfigError("workers", "must be >= 0")
        return n or (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> RunConfig:
        return build_config(values)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw):
    if raw is None:
        return None
    kind = _TYPES[key]
    try:
        if key == "N":
            text = str(raw).strip()
            if text == "semiclassical":
                return text
            n = int(text)
            if n < 1:
                raise ValueError
            return str(n)
        if kind == "int":
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind in ("float", "float | None"):
            if kind == "float | None" and str(raw).strip().lower() in ("", "none"):
                return None
            return float(raw)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key or f"line {lineno}", "expected key=value")
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        values[key] = value.strip()
    return values


def build_config(values: dict) -> RunConfig:
    for key in values:
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
    cfg = RunConfig(**{k: _convert(k, v) for k, v in values.items()})
    validate(cfg)
    return cfg


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """File values first, then ``overrides`` (flags) on top."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        values.update(parse_config_text(text))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def validate(cfg: RunConfig) -> None:
    for key in ("h", "gamma", "theta", "phi", "dt", "t_final", "dt_record", "epsilon", "ehrenfest_threshold"):
        if not math.isfinite(getattr(cfg, key)):
            raise ConfigError(key, "must be finite")
    if cfg.gamma < 0:
        raise ConfigError("gamma", f"must be >= 0, got {cfg.gamma}")
    if cfg.h < 0:
        raise ConfigError("h", f"must be >= 0, got {cfg.h}")
    if not 0.0 <= cfg.theta <= math.pi:
        raise ConfigError("theta", "must lie in [0, pi]")
    if cfg.mz is not None and not -1.0 <= cfg.mz <= 1.0:
        raise ConfigError("mz", "must lie in [-1, 1]")
    if cfg.dt <= 0:
        raise ConfigError("dt", "must be positive")
    if cfg.t_final < 0:
        raise ConfigError("t_final", "must be >= 0")
    if not cfg.dt < cfg.dt_record:
        raise ConfigError("dt_record", "must exceed dt")
    if cfg.t_final > 0 and cfg.dt_record > cfg.t_final:
        raise ConfigError("dt_record", "must not exceed t_final")
    if cfg.M < 1:
        raise ConfigError("M", "must be >= 1")
    if cfg.base_seed < 0:
        raise ConfigError("base_seed", "must be >= 0")
    if cfg.trajectory_index < 0:
        raise ConfigError("trajectory_index", "must be >= 0")
    if cfg.bins < 1:
        raise ConfigError("bins", "must be >= 1")
    if not 0 < cfg.epsilon < 1:
        raise ConfigError("epsilon", "must lie in (0, 1)")
    if cfg.method not in ("split", "euler"):
        raise ConfigError("method", "must be split or euler")
    for part in cfg.formats.split("+"):
        if part not in ("csv", "png"):
            raise ConfigError("formats", f"unknown format {part!r}")
    for key in ("h_grid", "gamma_grid", "energies", "taus"):
        parse_grid(getattr(cfg, key), key)


def parse_grid(spec: str, key: str = "grid") -> list[float]:
    """``a,b,c`` or ``lin:start:stop:n`` or ``log:start:stop:n``."""
    import numpy as np

    spec = spec.strip()
    if not spec:
        return []
    try:
        if spec.startswith(("lin:", "log:")):
            kind, a, b, n = spec.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            if kind == "lin":
                return [float(v) for v in np.linspace(float(a), float(b), n)]
            if float(a) <= 0 or float(b) <= 0:
                raise ValueError
            return [float(v) for v in np.geomspace(float(a), float(b), n)]
        return [float(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(key, f"cannot parse grid {spec!r}") from None
