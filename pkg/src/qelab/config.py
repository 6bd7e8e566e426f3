"""Flat ``key = value`` run configuration.

Every key has a typed default; a config file may override any subset.
Lists are comma separated.  Unknown keys, duplicate keys and values that
do not parse as the key's type are errors.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

SUITES = ("fiber", "weyl", "mixed", "dynamics", "all")


class ConfigError(ValueError):
    """Malformed configuration (reported with the offending line)."""


@dataclass(frozen=True)
class RunConfig:
    suite: str = "all"
    seed: int = 0
    threads: int = 1
    # fiber
    fiber_p_list: tuple = (8, 16, 32, 64, 128)
    commutator_p_list: tuple = (8, 16, 32, 64)
    kostant_p_max: int = 40
    dim_p_max: int = 64
    # base
    weyl_log2_h: tuple = (3, 4, 5, 6, 7, 8)
    weyl_trace_log2_h: int = 6
    # mixed
    mixed_p_list: tuple = (8, 16, 32, 64)
    lattice_twist: float = 0.1234
    fc_epsilons: tuple = (0.0, 0.05)
    fc_center: float = 0.1
    fc_width: float = 0.2
    fc_max_mode: int = 8
    fc_degree: int = 10
    weyl_law_p: int = 64
    weyl_law_energy: float = 0.5
    weyl_law_epsilon: float = 0.05
    egorov_p_list: tuple = (8, 16, 32, 64)
    egorov_t: tuple = (0.25, 0.5, 1.0)
    egorov_epsilon: float = 0.05
    egorov_dt: float = 0.05
    variance_p_list: tuple = (8, 16, 32, 64)
    variance_window: tuple = (0.2, 1.0)
    variance_t0: tuple = (1.0, 2.0, 4.0)
    # dynamics
    rho_theta: float = 0.7071067811865476
    drift_T: float = 100.0
    drift_dt: float = 1e-3
    symplectic_T: float = 10.0
    symplectic_dt: float = 1e-4
    symplectic_refine_dt: tuple = (0.02, 0.01, 0.005)
    holonomy_L: int = 12
    holonomy_net: int = 20000
    ergodic_energy: float = 1.0
    ergodic_epsilon: float = 0.05
    ergodic_count: int = 100
    ergodic_T: tuple = (100.0, 10000.0)
    ergodic_dt: float = 0.01
    torus_dt: float = 0.05
    # tolerances
    tol_exact: float = 1e-12
    tol_kostant: float = 1e-10
    tol_certificate: float = 1e-8

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}; expected one of {', '.join(SUITES)}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple) and not v:
                raise ConfigError(f"{f.name}: grid must be non-empty")
            if f.name.endswith("p_list") and any(int(p) <= 0 for p in v):
                raise ConfigError(f"{f.name}: p values must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def dumps(self) -> str:
        """Canonical text form."""
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items())

    def hash(self) -> str:
        """Digest of everything that can change results (``threads`` cannot)."""
        text = "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items() if k != "threads")
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_scalar(kind, text: str):
    if kind is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(text)
    return kind(text)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    defaults = RunConfig()
    types = {f.name: getattr(defaults, f.name) for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        ref = types[key]
        try:
            if isinstance(ref, tuple):
                elem = type(ref[0])
                values[key] = tuple(_parse_scalar(elem, s.strip()) for s in val.split(",") if s.strip())
            else:
                values[key] = _parse_scalar(type(ref), val)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: cannot parse {val!r} for {key!r}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
