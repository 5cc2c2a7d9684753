"""Lyapunov, entropy and Fisher-information functionals on grid densities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Density
from .model import LOG_WEIGHT_CAP, WeightParams, log_weight_m, mean_voltage, weight_M

FISHER_FLOOR = 1e-30


def _weight_mask(f: Density, w: WeightParams):
    X, V = f.grid.mesh
    logm = log_weight_m(X, V, w)
    keep = logm <= LOG_WEIGHT_CAP
    return np.exp(np.where(keep, logm, 0.0)), keep


def l1M_norm(f: Density) -> float:
    X, V = f.grid.mesh
    return float(np.sum(np.abs(f.values) * weight_M(X, V))) * f.grid.cell_area


def l1m_norm(f: Density, w: WeightParams) -> float:
    m, keep = _weight_mask(f, w)
    return float(np.sum(np.abs(f.values) * m * keep)) * f.grid.cell_area


def l2m_norm(f: Density, w: WeightParams) -> float:
    m, keep = _weight_mask(f, w)
    fm = np.where(keep, np.abs(f.values) * m, 0.0)
    return math.sqrt(float(np.sum(fm * fm)) * f.grid.cell_area)


def entropy(f: Density) -> float:
    """Sum of f log f over cells, with 0 log 0 = 0."""
    vals = f.values
    pos = vals > 0
    return float(np.sum(vals[pos] * np.log(vals[pos]))) * f.grid.cell_area


def dv_centered(values: np.ndarray, dv: float) -> np.ndarray:
    d = np.empty_like(values)
    d[:, 1:-1] = (values[:, 2:] - values[:, :-2]) / (2 * dv)
    d[:, 0] = (values[:, 1] - values[:, 0]) / dv
    d[:, -1] = (values[:, -1] - values[:, -2]) / dv
    return d


def fisher_v(f: Density, floor: float = FISHER_FLOOR, return_skipped: bool = False):
    """Partial Fisher information sum |d_v f|^2 / f. Cells with f <= floor
    are skipped; their count is returned when ``return_skipped`` is set."""
    vals = f.values
    d = dv_centered(vals, f.grid.dv)
    ok = vals > floor
    total = float(np.sum(d[ok] ** 2 / vals[ok])) * f.grid.cell_area
    if return_skipped:
        return total, int(vals.size - ok.sum())
    return total


def boundary_mass(f: Density) -> float:
    """Fraction of the mass sitting in the outermost ring of cells."""
    v = f.values
    ring = v[0, :].sum() + v[-1, :].sum() + v[1:-1, 0].sum() + v[1:-1, -1].sum()
    total = v.sum()
    return float(ring / total) if total > 0 else 0.0


@dataclass
class DiagnosticsRecord:
    t: float
    l1M: float
    l1m: float
    l2m: float
    entropy: float
    fisher_v: float
    j: float
    mass: float
    min_f: float

    def as_dict(self) -> dict:
        return asdict(self)


def record(f: Density, w: WeightParams, j: float | None = None) -> DiagnosticsRecord:
    return DiagnosticsRecord(
        t=f.t,
        l1M=l1M_norm(f),
        l1m=l1m_norm(f, w),
        l2m=l2m_norm(f, w),
        entropy=entropy(f),
        fisher_v=fisher_v(f),
        j=mean_voltage(f) if j is None else j,
        mass=f.mass(),
        min_f=float(f.values.min()),
    )


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class MonitorReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        return "\n".join(f"[{'ok' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks)


@dataclass(frozen=True)
class MonitorBounds:
    l1M_slack: float = 0.05
    require_plateau: bool = False
    plateau_tol: float = 0.05
    j_rtol: float = 1e-12
    fisher_rate_factor: float = 2.0


def monitor(records, bounds: MonitorBounds = MonitorBounds()) -> MonitorReport:
    """Check a run's diagnostics against the a-priori structure:

    * L1(M) stays below max(final, initial) * (1 + slack) (and, optionally,
      settles on a plateau over the last quarter of the run);
    * |j| <= sqrt(2 L1(M)) at every record;
    * the entropy is finite and above -2 pi / e - L1(M);
    * the running integral of I_v grows at most linearly.
    """
    recs = list(records)
    if len(recs) < 2:
        raise ValueError("monitor needs at least two records")
    t = np.array([r.t for r in recs])
    l1M = np.array([r.l1M for r in recs])
    j = np.array([r.j for r in recs])
    H = np.array([r.entropy for r in recs])
    fis = np.array([r.fisher_v for r in recs])
    rep = MonitorReport()

    n = len(recs)
    tail = l1M[-max(1, n // 4):]
    ceiling = max(tail.mean(), l1M[0]) * (1 + bounds.l1M_slack)
    worst = int(np.argmax(l1M))
    rep.checks.append(Check("l1M_bounded", bool(l1M.max() <= ceiling),
                            f"max {l1M.max():.6g} at t={t[worst]:.4g}, ceiling {ceiling:.6g}"))
    if bounds.require_plateau:
        drift = (tail.max() - tail.min()) / tail.mean()
        rep.checks.append(Check("l1M_plateau", bool(drift <= bounds.plateau_tol),
                                f"relative spread over last quarter {drift:.3g}"))

    lim = np.sqrt(2 * l1M) * (1 + bounds.j_rtol)
    bad = np.nonzero(np.abs(j) > lim)[0]
    if bad.size:
        k = bad[0]
        rep.checks.append(Check("j_cauchy_schwarz", False,
                                f"first violation at t={t[k]:.6g}: |j|={abs(j[k]):.6g} > {lim[k]:.6g}"))
    else:
        rep.checks.append(Check("j_cauchy_schwarz", True, f"max |j|/sqrt(2 l1M) = {np.max(np.abs(j) / np.sqrt(2 * l1M)):.4g}"))

    lower = -2 * math.pi / math.e - l1M
    ok_H = bool(np.all(np.isfinite(H)) and np.all(H >= lower))
    rep.checks.append(Check("entropy_bounded", ok_H, f"range [{H.min():.5g}, {H.max():.5g}]"))

    if t[-1] > t[0]:
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (fis[1:] + fis[:-1]) * np.diff(t))])
        slope = np.polyfit(t - t[0], cum, 1)[0]
        half = n // 2
        total_rate = cum[-1] / (t[-1] - t[0])
        late_rate = (cum[-1] - cum[half]) / (t[-1] - t[half]) if t[-1] > t[half] else total_rate
        ok_I = bool(np.isfinite(slope) and late_rate <= bounds.fisher_rate_factor * total_rate + 1e-300)
        rep.checks.append(Check("fisher_linear_growth", ok_I,
                                f"fitted slope {slope:.5g}, late/overall rate {late_rate / max(total_rate, 1e-300):.3g}"))
    else:
        rep.checks.append(Check("fisher_linear_growth", True, "no elapsed time"))
    return rep
