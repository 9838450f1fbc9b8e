"""Experiment orchestration: effective runs, microscopic runs and (N, Lambda, t) sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import fock
from .. import indicators as ind
from ..effective import EffectiveState, SKGSystem, second_order_residual
from ..manybody import NelsonOperator, SpatialGrid, energy, product_initial_state, propagate
from .config import ConfigError, RunConfig, initial_alpha, initial_phi

CSV_COLUMNS = (
    "kind", "N", "Lambda", "t", "beta_a", "beta_b", "beta_c", "beta", "beta2",
    "tr_dist_10", "tr_dist_01", "sobolev_dist", "mean_boson", "dbeta_a_dt",
    "dbeta_b_dt", "dbeta_c_dt", "energy", "C_fit", "walltime_s",
)


class RunError(RuntimeError):
    """A sub-run failed; carries the (N, Lambda, t) point and the original exception."""

    def __init__(self, context: dict, cause: BaseException):
        self.context = context
        self.cause = cause
        where = ", ".join(f"{k}={v}" for k, v in context.items())
        super().__init__(f"run failed at {where}: {type(cause).__name__}: {cause}")

    def __reduce__(self):
        return (RunError, (self.context, self.cause))


@dataclass
class SweepRecord:
    kind: str
    N: int | None
    Lambda: float
    t: float
    report: ind.IndicatorReport | None
    energy: float
    C_fit: float | None = None
    walltime_s: float = 0.0

    def row(self) -> dict:
        r = self.report
        vals = {"kind": self.kind, "N": self.N, "Lambda": self.Lambda, "t": self.t,
                "energy": self.energy, "C_fit": self.C_fit, "walltime_s": self.walltime_s}
        if r is not None:
            vals.update(beta_a=r.beta_a, beta_b=r.beta_b, beta_c=r.beta_c, beta=r.beta,
                        beta2=r.beta2, tr_dist_10=r.tr_dist_10, tr_dist_01=r.tr_dist_01,
                        sobolev_dist=r.sobolev_dist, mean_boson=r.mean_boson,
                        dbeta_a_dt=r.dbeta_a_dt, dbeta_b_dt=r.dbeta_b_dt,
                        dbeta_c_dt=r.dbeta_c_dt)
        return {c: _fmt(vals.get(c)) for c in CSV_COLUMNS}


@dataclass
class RunResult:
    records: list[SweepRecord]
    summary: dict = field(default_factory=dict)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v) + 0.0)  # + 0.0 folds -0.0 into 0.0
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v + 0.0 if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- output ---------------------------------------------------------------------

def atomic_write(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    if path.exists() and not path.is_file():
        # devices and pipes (e.g. /dev/stdout) must not be replaced by a rename
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def records_csv(records: list[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(rec.row())
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"


def output_paths(out: str | Path) -> tuple[Path, Path]:
    """CSV and JSON summary paths for an ``--out`` argument."""
    out = Path(out)
    if out.suffix == ".csv":
        return out, out.with_suffix(".json")
    if out.suffix == ".json":
        return out.with_suffix(".csv"), out
    return out.with_name(out.name + ".csv"), out.with_name(out.name + ".json")


def write_result(result: RunResult, out: str | Path) -> tuple[Path, Path]:
    csv_path, json_path = output_paths(out)
    csv_text = records_csv(result.records)
    json_text = summary_json(result.summary)
    atomic_write(csv_path, csv_text)
    atomic_write(json_path, json_text)
    return csv_path, json_path


# -- effective runs ---------------------------------------------------------------

def run_effective(cfg: RunConfig) -> RunResult:
    records, per_lambda = [], {}
    for lam in cfg.Lambda:
        t0 = time.perf_counter()
        grid = SpatialGrid(cfg.d, cfg.L, cfg.n_x)
        modes = fock.make_mode_grid(cfg.d, cfg.L, lam, cfg.m_b)
        system = SKGSystem(grid, modes, cfg.coupling)
        state = system.state(initial_phi(cfg, grid), initial_alpha(cfg, modes))
        sub = int(round(cfg.snapshot_interval / cfg.dt))
        times, energies, norms = [0.0], [system.energy(state)], [grid.norm(state.phi)]
        window = [state]
        residual = None
        for snap in cfg.snapshot_times[1:]:
            for _ in range(sub):
                state = system.step(state, cfg.dt)
                if len(window) < 3:
                    window.append(state)
            times.append(snap)
            energies.append(system.energy(state))
            norms.append(grid.norm(state.phi))
        if len(window) == 3:
            residual = second_order_residual(window, cfg.dt, system)
        wall = time.perf_counter() - t0 if cfg.record_walltime else 0.0
        for t, e in zip(times, energies):
            records.append(SweepRecord("effective", None, lam, t, None, e, None, wall))
        slope = float(np.polyfit(times, energies, 1)[0]) if len(times) > 1 else 0.0
        per_lambda[repr(lam)] = {
            "modes": modes.n_modes,
            "norm_drift": float(np.max(np.abs(np.asarray(norms) - norms[0]))),
            "energy_slope": slope,
            "energy_spread": float(np.ptp(energies)),
            "second_order_residual_first_step": residual,
        }
    summary = {"kind": "effective", "config": cfg.to_dict(), "per_lambda": per_lambda}
    return RunResult(records, summary)


# -- microscopic runs -------------------------------------------------------------

def run_point(cfg: RunConfig, N: int, lam: float) -> tuple[list[SweepRecord], dict]:
    """One microscopic trajectory with its matched effective trajectory."""
    context = {"N": N, "Lambda": lam, "t": 0.0}
    try:
        t_start = time.perf_counter()
        grid = SpatialGrid(cfg.d, cfg.L, cfg.n_x)
        modes = fock.make_mode_grid(cfg.d, cfg.L, lam, cfg.m_b)
        if modes.n_modes > cfg.budget.max_modes:
            raise ConfigError(f"{modes.n_modes} modes above budget {cfg.budget.max_modes}")
        phi0, alpha0 = initial_phi(cfg, grid), initial_alpha(cfg, modes)
        n_max = cfg.resolved_n_max(N, alpha0)
        basis = fock.make_fock_basis(modes.n_modes, n_max, max_dim=cfg.budget.max_dimension)
        total = grid.n_points**N * basis.dim
        if total > cfg.budget.max_dimension:
            raise ConfigError(f"microscopic dimension {total} above budget "
                              f"{cfg.budget.max_dimension}")
        psi = product_initial_state(phi0, alpha0, N, grid, basis, tol=cfg.truncation_tol)
        op = NelsonOperator(grid, modes, basis, N, coupling=cfg.coupling)
        system = SKGSystem(grid, modes, cfg.coupling)
        eff = system.state(phi0, alpha0)
        micro_sub = int(round(cfg.snapshot_interval / cfg.dt))
        eff_sub = int(round(cfg.snapshot_interval / cfg.dt_effective))

        reports, energies = [], []
        sandwich_excess, sandwich_violations = -math.inf, 0
        for i, snap in enumerate(cfg.snapshot_times):
            context["t"] = snap
            if i:
                psi = propagate(op, psi, cfg.dt, micro_sub, cfg.krylov_dim, cfg.tol)
                for _ in range(eff_sub):
                    eff = system.step(eff, cfg.dt_effective)
            psi = psi.evolve(psi.coeffs, snap)
            eff = EffectiveState(eff.phi, eff.alpha, snap)
            reports.append(ind.indicator_report(psi, eff, system))
            sandwich = ind.lemma1_bounds(psi, eff.phi, eff.alpha)
            sandwich_excess = max(sandwich_excess, sandwich.max_excess())
            sandwich_violations += bool(sandwich.violations(1e-9))
            energies.append(energy(op, psi) / N)

        fit = ind.gronwall_fit(reports, N, lam, "beta", cfg.c_max)
        fit2 = ind.gronwall_fit(reports, N, lam, "beta2", cfg.c_max)
        wall = time.perf_counter() - t_start if cfg.record_walltime else 0.0
    except RunError:
        raise
    except Exception as exc:
        raise RunError(dict(context), exc) from exc

    kind = cfg.kind if cfg.kind in ("microscopic", "sweep") else "microscopic"
    records = [SweepRecord(kind, N, lam, r.t, r, e, fit.C, wall)
               for r, e in zip(reports, energies)]
    info = {
        "N": N, "Lambda": lam, "n_max": n_max, "modes": modes.n_modes,
        "dimension": op.dim,
        "beta": asdict(fit), "beta2": asdict(fit2),
        "sandwich": {"max_excess": sandwich_excess, "violations": sandwich_violations},
    }
    return records, info


def _point_task(args):
    cfg, N, lam = args
    return run_point(cfg, N, lam)


def _run_points(cfg: RunConfig):
    points = [(N, lam) for N in sorted(set(cfg.N)) for lam in sorted(set(cfg.Lambda))]
    tasks = [(cfg, N, lam) for N, lam in points]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(tasks))) as pool:
            results = list(pool.map(_point_task, tasks))
    else:
        results = [_point_task(t) for t in tasks]
    # deterministic merge ordered by (N, Lambda, t)
    records = [rec for recs, _ in results for rec in recs]
    records.sort(key=lambda r: (r.N, r.Lambda, r.t))
    infos = [info for _, info in results]
    return records, infos


def _log_slope(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if len(xs) < 2 or np.any(ys <= 0):
        return None
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _trend(records: list[SweepRecord], lam: float, t: float, key: str) -> dict:
    rows = sorted((r for r in records if r.Lambda == lam and abs(r.t - t) < 1e-9),
                  key=lambda r: r.N)
    Ns = [r.N for r in rows]
    vals = [getattr(r.report, key) for r in rows]
    non_inc = all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))
    return {"N": Ns, "values": vals, "log_log_slope": _log_slope(Ns, vals),
            "non_increasing": non_inc, "label": "indicative"}


def _summary(cfg: RunConfig, records, infos) -> dict:
    t_slope = min(cfg.snapshot_times, key=lambda s: abs(s - cfg.slope_time))
    trends = {}
    for lam in sorted(set(cfg.Lambda)):
        trends[repr(lam)] = {key: _trend(records, lam, t_slope, key)
                             for key in ("tr_dist_10", "beta")}
    all_valid = all(i["beta"]["valid"] and i["beta2"]["valid"] for i in infos)
    return {
        "kind": cfg.kind,
        "config": cfg.to_dict(),
        "n_max": {str(i["N"]): i["n_max"] for i in infos},
        "runs": infos,
        "slope_time": t_slope,
        "trends": trends,
        "gronwall_all_valid": all_valid,
    }


def run_microscopic(cfg: RunConfig) -> RunResult:
    records, infos = _run_points(cfg)
    return RunResult(records, _summary(cfg, records, infos))


def run_sweep(cfg: RunConfig) -> RunResult:
    if not cfg.N:
        raise ConfigError("N list must be nonempty for sweeps")
    records, infos = _run_points(cfg)
    return RunResult(records, _summary(cfg, records, infos))
