"""Stationary solutions of the nonlinear equation via a scalar fixed point on
the mean voltage j.

For frozen j the operator Q[j] is linear and its nonnegative mass-1 null
vector G_j is found by inverse power iteration on (mu I - Q), an M-matrix, so
every iterate stays nonnegative. A stationary density of the nonlinear
problem is then a root of j -> J(G_j) - j.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from . import pde
from .diagnostics import l2m_norm
from .grid import Density, Grid2D
from .model import ModelParams, WeightParams, mean_voltage, stable_voltages

DEDUP_L1 = 1e-3


class StationaryError(RuntimeError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


@dataclass
class StationaryResult:
    G: Density
    j: float
    residual_l1: float
    fixed_point_gap: float
    iterations: int
    seed_j: float
    converged: bool = True
    trace: list = field(default_factory=list)
    message: str = ""

    def save(self, path) -> Path:
        """Density file at ``path`` plus a ``key = value`` sidecar."""
        path = Path(path)
        self.G.save(path)
        side = path.with_name(path.name + ".meta")
        with side.open("w") as fh:
            for k in ("j", "residual_l1", "fixed_point_gap", "iterations", "seed_j", "converged"):
                fh.write(f"{k} = {getattr(self, k)!r}\n")
        return side

    @staticmethod
    def read_meta(path) -> dict:
        out = {}
        for line in Path(str(path) + ".meta").read_text().splitlines():
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
        return out


def residual_l1(G: Density, tr: pde.Transport, j: float) -> float:
    """Discrete L1 norm of Q[j] G."""
    return float(np.abs(pde.rhs(G, tr, j)).sum()) * G.grid.cell_area


def _spectral_scale(Q) -> float:
    return float(abs(Q.diagonal()).max())


def solve_linear_stationary(j: float, grid: Grid2D, p: ModelParams, *, tol: float = 1e-12,
                            max_iter: int = 50, mu: float | None = None,
                            transport: pde.Transport | None = None,
                            fallback: bool = True, fallback_T: float = 200.0) -> Density:
    """Nonnegative mass-1 null vector of the discrete Q[j].

    Inverse power iteration g <- (mu I - Q)^{-1} g with a small mu > 0,
    renormalized each sweep, stopping once ||Q g||_1 <= tol (relative to
    the spectral scale). Falls back to long-time integration at frozen j if
    the iteration stalls.
    """
    tr = transport if transport is not None else pde.transport_for(grid, p)
    Q = pde.generator_matrix(tr, j, "csc")
    scale = _spectral_scale(Q)
    mu = 1e-9 * scale if mu is None else mu
    n = grid.size
    eye = sp.identity(n, format="csc")
    history = []

    def factor(m):
        try:
            return spla.splu((m * eye - Q).tocsc())
        except RuntimeError as exc:  # singular factorization
            history.append(f"factorization at mu={m:.3g} failed: {exc}")
            return None

    def sweep(lu, g):
        g = np.maximum(lu.solve(g), 0.0)  # clip rounding only; the exact inverse is nonnegative
        return g / (g.sum() * grid.cell_area)

    lu = factor(mu)
    g = np.full(n, 1.0 / (n * grid.cell_area))
    deflated = False
    it = 0
    while lu is not None and it < max_iter:
        g = sweep(lu, g)
        it += 1
        G = Density(grid, g.reshape(grid.shape))
        res = residual_l1(G, tr, j)
        history.append(res)
        if res <= tol * max(scale, 1.0):
            G.meta.update(method="inverse-power", iterations=it, residual=res)
            return G
        if len(history) >= 4 and history[-1] >= 0.5 * history[-4]:
            if deflated:
                break
            # a metastable mode close to 0 slows the iteration: two sweeps
            # with a much smaller shift remove it, then polish as before
            tiny = factor(1e-4 * mu)
            if tiny is None:
                break
            g = sweep(tiny, sweep(tiny, g))
            deflated = True
    if not fallback:
        raise StationaryError(f"inverse power stalled at j={j}", history)
    warnings.warn(f"inverse power stalled at j={j:.6g}; integrating in time instead")
    return stationary_by_integration(j, grid, p, T=fallback_T, transport=tr)


def stationary_by_integration(j: float, grid: Grid2D, p: ModelParams, T: float = 200.0,
                              f0: Density | None = None, transport: pde.Transport | None = None,
                              dt: float | None = None) -> Density:
    """Long-time pde.solve with j frozen (the independent route)."""
    tr = transport if transport is not None else pde.transport_for(grid, p)
    f0 = f0 if f0 is not None else Density.gaussian(grid, (0.0, 0.0), ((0.2, 0.0), (0.0, 0.2)))
    dt = dt if dt is not None else pde.max_stable_dt(tr, j)
    r = pde.solve(f0, T, dt, p, stride=max(1, int(T / dt) // 20), transport=tr,
                  couple=False, j_fixed=j, boundary_tol=None)
    G = r.density.normalized()
    G.meta.update(method="integration", residual=residual_l1(G, tr, j), run=r)
    return G


class CouplingMap:
    """j -> J(G_j), caching the linear solves."""

    def __init__(self, grid: Grid2D, p: ModelParams, tol: float = 1e-12):
        self.grid, self.p, self.tol = grid, p, tol
        self.tr = pde.transport_for(grid, p)
        self.cache: dict = {}

    def density(self, j: float) -> Density:
        key = 0.0 if self.p.eps == 0 else float(j)
        if key not in self.cache:
            self.cache[key] = solve_linear_stationary(key, self.grid, self.p, tol=self.tol,
                                                      transport=self.tr)
        return self.cache[key]

    def __call__(self, j: float) -> float:
        return mean_voltage(self.density(j))


def _bracket(h, j, step=0.05, grow=1.6, lo=-3.0, hi=3.5, max_expand=40):
    a, b = j - step, j + step
    ha, hb = h(a), h(b)
    for _ in range(max_expand):
        if ha * hb <= 0:
            return a, b
        if abs(ha) < abs(hb):
            a = max(lo, a - (b - a) * grow)
            ha = h(a)
        else:
            b = min(hi, b + (b - a) * grow)
            hb = h(b)
    return None


def solve_fixed_point(F: CouplingMap, seed_j: float, *, tol: float = 1e-12, max_iter: int = 60,
                      theta: float = 0.5) -> StationaryResult:
    """Damped iteration j <- (1 - th) j + th F(j). The damping starts at
    ``theta`` and is then set to 1 / (1 - s) with s the secant slope of F
    (clipped to (0, 1]); a Brent solve on F(j) - j takes over if the
    iteration stops making progress."""
    j = float(seed_j)
    trace = []
    prev = None
    th = theta
    stall = 0
    for it in range(1, max_iter + 1):
        Fj = F(j)
        h = Fj - j
        trace.append((j, Fj, th))
        if abs(h) <= tol:
            return _result(F, j, seed_j, it, trace)
        if prev is not None:
            jp, hp = prev
            if j != jp:
                s = 1.0 + (h - hp) / (j - jp)  # slope of F
                th = 1.0 / (1.0 - s) if s < 1.0 else theta
                th = min(1.0, max(th, 1e-3))
            stall = stall + 1 if abs(h) >= 0.9 * abs(hp) else 0
        if stall >= 3:
            break
        prev = (j, h)
        j = j + th * h
    # damping cycles or stalls: bracket and bisect the scalar residual
    hfun = lambda z: F(z) - z
    br = _bracket(hfun, trace[-1][0], lo=F.grid.v_min, hi=F.grid.v_max)
    if br is None:
        res = _result(F, j, seed_j, len(trace), trace)
        res.converged = False
        res.message = "no sign change found for F(j) - j"
        return res
    j = brentq(hfun, *br, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return _result(F, j, seed_j, len(trace), trace, "bisection fallback")


def _result(F: CouplingMap, j, seed_j, iterations, trace, message="") -> StationaryResult:
    G = F.density(j)
    jG = mean_voltage(G)
    G = Density(G.grid, G.values.copy(), 0.0, dict(G.meta))
    return StationaryResult(G=G, j=jG, residual_l1=residual_l1(G, F.tr, jG),
                            fixed_point_gap=abs(jG - j), iterations=iterations, seed_j=float(seed_j),
                            trace=list(trace), message=message)


def default_seeds(p: ModelParams) -> list[float]:
    return sorted(set(stable_voltages(p.replace(eps=0.0))) | {-1.0, 0.0, 1.0})


def find_stationary(j_seeds, p: ModelParams, grid: Grid2D = Grid2D(), *, tol: float = 1e-12,
                    max_iter: int = 60, theta: float = 0.5, residual_tol: float = 1e-8,
                    gap_tol: float = 1e-8, coupling_map: CouplingMap | None = None) -> list[StationaryResult]:
    """All distinct stationary solutions reached from the given j seeds.

    Results whose residual or fixed-point gap miss the tolerances are
    dropped (and counted in the ``rejected`` attribute of the first result's
    meta); duplicates closer than 1e-3 in L1 are merged.
    """
    F = coupling_map if coupling_map is not None else CouplingMap(grid, p)
    seeds = default_seeds(p) if j_seeds is None else list(j_seeds)
    found: list[StationaryResult] = []
    rejected = []
    for s in seeds:
        try:
            r = solve_fixed_point(F, s, tol=tol, max_iter=max_iter, theta=theta)
        except StationaryError as exc:
            rejected.append((s, str(exc)))
            continue
        if not (r.converged and r.residual_l1 <= residual_tol and r.fixed_point_gap <= gap_tol):
            rejected.append((s, r.message or f"residual {r.residual_l1:.2e}, gap {r.fixed_point_gap:.2e}"))
            continue
        if all(r.G.l1_distance(q.G) >= DEDUP_L1 for q in found):
            found.append(r)
    found.sort(key=lambda r: r.j)
    for r in found:
        r.G.meta["rejected_seeds"] = rejected
    return found


def coupling_map_slope(j: float, p: ModelParams, grid: Grid2D = Grid2D(), h: float = 1e-3,
                       coupling_map: CouplingMap | None = None) -> float:
    """Two-point estimate of dJ(G_j)/dj."""
    F = coupling_map if coupling_map is not None else CouplingMap(grid, p)
    return (F(j + h) - F(j - h)) / (2 * h)


@dataclass
class ProximityTable:
    eps: list
    distance: list
    monotone: bool
    intercept: float
    slope: float

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("eps, l2m_distance\n")
            for e, d in zip(self.eps, self.distance):
                fh.write(f"{e!r}, {d!r}\n")


def epsilon_proximity_scan(eps_list, p: ModelParams, grid: Grid2D = Grid2D(),
                           w: WeightParams = WeightParams(), *, solver_tol: float = 1e-8,
                           seed_j: float | None = None) -> ProximityTable:
    """||G_eps - G_0||_{L2(m)} along eps_list, all on one grid.

    The intercept comes from a least-squares quadratic in eps through the
    nonzero-eps points; it estimates the eps -> 0 limit of the distance.
    """
    base = find_stationary([0.0], p.replace(eps=0.0), grid)
    G0 = base[0].G
    eps_sorted = sorted(float(e) for e in eps_list)
    dist = []
    for e in eps_sorted:
        if e == 0:
            dist.append(0.0)
            continue
        seeds = [mean_voltage(G0)] if seed_j is None else [seed_j]
        sols = find_stationary(seeds, p.replace(eps=e), grid)
        if not sols:
            raise StationaryError(f"no stationary solution found at eps={e}")
        diff = Density(grid, sols[0].G.values - G0.values)
        dist.append(l2m_norm(diff, w))
    d = np.array(dist)
    mono = bool(np.all(np.diff(d) >= -solver_tol))
    e = np.array(eps_sorted)
    nz = e > 0
    if nz.sum() >= 3:
        c2, c1, c0 = np.polyfit(e[nz], d[nz], 2)
    else:
        c1, c0 = np.polyfit(e[nz], d[nz], 1)
    return ProximityTable(eps_sorted, dist, mono, float(c0), float(c1))


@dataclass
class PositivityReport:
    passed: bool
    interior_min: float
    location: tuple
    margin: int

    def __str__(self):
        state = "ok" if self.passed else "FAIL"
        return (f"[{state}] interior min {self.interior_min:.3e} at cell {self.location} "
                f"(cells more than {self.margin} from the boundary)")


def positivity_check(G: Density, margin: int = 2) -> PositivityReport:
    """Minimum over cells further than ``margin`` cells from the boundary."""
    inner = G.values[margin + 1:-(margin + 1), margin + 1:-(margin + 1)]
    if inner.size == 0:
        raise ValueError("grid too small for the requested margin")
    k = np.unravel_index(np.argmin(inner), inner.shape)
    loc = (int(k[0]) + margin + 1, int(k[1]) + margin + 1)
    lo = float(inner[k])
    return PositivityReport(bool(lo > 0), lo, loc, margin)
