"""Run configuration: one JSON object, validated into :class:`RunConfig`."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import fock

KINDS = ("effective", "microscopic", "sweep", "check")
EXECUTION_ONLY = ("workers", "out")
ALIASES = {"\u039b": "Lambda", "cutoff": "Lambda"}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class Budget:
    max_particles: int = 4
    max_modes: int = 8
    max_dimension: int = 4_000_000


@dataclass
class RunConfig:
    kind: str = "sweep"
    d: int = 1
    L: float = 2 * math.pi
    n_x: int = 8
    Lambda: list[float] = field(default_factory=lambda: [1.5])
    m_b: float = 1.0
    n_max: int | None = None
    N: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    dt: float = 0.05
    dt_effective: float = 1e-3
    t_final: float = 1.0
    snapshot_interval: float = 0.1
    phi0: dict = field(default_factory=lambda: {"kind": "gaussian", "center": math.pi, "width": 0.8})
    alpha0: dict = field(default_factory=lambda: {"kind": "zero"})
    coupling: bool = True
    krylov_dim: int = 24
    tol: float = 1e-9
    truncation_tol: float = 1e-8
    c_max: float = 50.0
    slope_time: float = 0.5
    workers: int = 1
    out: str | None = None
    seed: int = 0
    record_walltime: bool = False
    check_samples: int = 20
    budget: Budget = field(default_factory=Budget)

    # -- derived --------------------------------------------------------------
    @property
    def snapshot_times(self) -> list[float]:
        count = int(round(self.t_final / self.snapshot_interval))
        return [i * self.snapshot_interval for i in range(count + 1)]

    def resolved_n_max(self, N: int, alpha0: np.ndarray) -> int:
        if self.n_max is not None:
            return self.n_max
        mean = N * float(np.sum(np.abs(alpha0) ** 2))
        # the sizing rule, raised where its Poisson tail still exceeds truncation_tol
        return max(fock.required_n_max(mean), fock.min_n_max_for_loss(mean, self.truncation_tol))

    def to_dict(self) -> dict:
        """Echo of the configuration without execution-only settings (workers, out),
        so that results do not depend on how they were produced."""
        d = dataclasses.asdict(self)
        for key in EXECUTION_ONLY:
            d.pop(key)
        return d


_PHI_KEYS = {"gaussian": {"center", "width"}, "plane_wave": {"k"}, "file": {"path"}}
_ALPHA_KEYS = {"zero": set(), "single_mode": {"j", "amplitude"}, "file": {"path"}}


def _as_list(value, cast, name):
    items = value if isinstance(value, (list, tuple)) else [value]
    if not items:
        raise ConfigError(f"{name} list must be nonempty")
    try:
        return [cast(v) for v in items]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _check_spec(spec, table, name):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{name} must be an object with a 'kind' key")
    kind = spec["kind"]
    if kind not in table:
        raise ConfigError(f"{name}.kind must be one of {sorted(table)}, got {kind!r}")
    extra = set(spec) - table[kind] - {"kind"}
    if extra:
        raise ConfigError(f"unknown key {name}.{sorted(extra)[0]}")
    missing = table[kind] - set(spec)
    if missing:
        raise ConfigError(f"{name} ({kind}) missing key {sorted(missing)[0]}")


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {cfg.kind!r}")
    if cfg.d not in (1, 3):
        raise ConfigError("d must be 1 or 3")
    if cfg.n_x < 2:
        raise ConfigError("n_x must be >= 2")
    for name in ("L", "dt", "dt_effective", "t_final", "snapshot_interval", "tol",
                 "truncation_tol", "c_max"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be > 0")
    if any(not lam > 0 for lam in cfg.Lambda):
        raise ConfigError("Lambda must be > 0")
    if cfg.m_b < 0:
        raise ConfigError("m_b must be >= 0")
    if any(n < 1 for n in cfg.N):
        raise ConfigError("N must be >= 1")
    if cfg.n_max is not None and cfg.n_max < 0:
        raise ConfigError("n_max must be >= 0")
    if cfg.krylov_dim < 4:
        raise ConfigError("krylov_dim must be >= 4")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.check_samples < 1:
        raise ConfigError("check_samples must be >= 1")
    ratio = cfg.t_final / cfg.snapshot_interval
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError("snapshot_interval must divide t_final")
    for name, step in (("dt", cfg.dt), ("dt_effective", cfg.dt_effective)):
        sub = cfg.snapshot_interval / step
        if abs(sub - round(sub)) > 1e-9 * max(1.0, sub):
            raise ConfigError(f"{name} must divide snapshot_interval")
    _check_spec(cfg.phi0, _PHI_KEYS, "phi0")
    _check_spec(cfg.alpha0, _ALPHA_KEYS, "alpha0")
    if cfg.kind in ("microscopic", "sweep") and round(ratio) < 2:
        raise ConfigError("envelope fits need at least 3 snapshots (t_final >= 2 snapshot_interval)")
    if cfg.kind in ("microscopic", "sweep") and max(cfg.N) > cfg.budget.max_particles:
        raise ConfigError(f"N={max(cfg.N)} above particle budget {cfg.budget.max_particles}")
    return cfg


def from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a single JSON object")
    data = {ALIASES.get(k, k): v for k, v in data.items()}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
    kwargs = dict(data)
    if "Lambda" in kwargs:
        kwargs["Lambda"] = _as_list(kwargs["Lambda"], float, "Lambda")
    if "N" in kwargs:
        kwargs["N"] = _as_list(kwargs["N"], int, "N")
    if "budget" in kwargs:
        b = kwargs["budget"]
        bad = set(b) - {f.name for f in dataclasses.fields(Budget)} if isinstance(b, dict) else None
        if bad is None:
            raise ConfigError("budget must be an object")
        if bad:
            raise ConfigError(f"unknown key budget.{sorted(bad)[0]}")
        kwargs["budget"] = Budget(**b)
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return validate(cfg)


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return from_dict(data)


def _load_array(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    raw = json.loads(p.read_text())
    if isinstance(raw, dict) and "re" in raw:
        return np.asarray(raw["re"], float) + 1j * np.asarray(raw.get("im", 0.0), float)
    return np.asarray(raw, dtype=complex)


def initial_phi(cfg: RunConfig, grid) -> np.ndarray:
    spec = cfg.phi0
    if spec["kind"] == "gaussian":
        return grid.gaussian(spec["center"], spec["width"])
    if spec["kind"] == "plane_wave":
        return grid.plane_wave(spec["k"])
    phi = _load_array(spec["path"]).ravel()
    if phi.shape != (grid.n_points,):
        raise ConfigError(f"phi0 file has {phi.size} values, grid has {grid.n_points}")
    return phi / grid.norm(phi)


def initial_alpha(cfg: RunConfig, modes) -> np.ndarray:
    spec = cfg.alpha0
    alpha = np.zeros(modes.n_modes, dtype=complex)
    if spec["kind"] == "single_mode":
        j = int(spec["j"])
        if not 0 <= j < modes.n_modes:
            raise ConfigError(f"alpha0.j={j} outside the {modes.n_modes} modes")
        alpha[j] = complex(spec["amplitude"])
    elif spec["kind"] == "file":
        alpha = _load_array(spec["path"]).ravel().astype(complex)
        if alpha.shape != (modes.n_modes,):
            raise ConfigError(f"alpha0 file has {alpha.size} values, grid has {modes.n_modes} modes")
    return alpha
