"""Finite-volume IMEX solver for the nonlinear mean-field Fokker-Planck equation.

One step of size dt is

    f* = f + dt T[j] f                 explicit first-order upwind transport
    (I - dt D L_v) f_new = f*          backward Euler in v, one tridiagonal
                                       solve per x-row

with zero-flux faces on the whole boundary and j = J(f) frozen over the
step. Steady states of the step are exactly the null vectors of
Q[j] = T[j] + D L_v, which ``generator_matrix`` assembles with the same
stencil.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from . import diagnostics
from .diagnostics import l1M_norm, l1m_norm, l2m_norm  # noqa: F401  (module surface)
from .grid import Density, Grid2D
from .model import ModelParams, WeightParams, drift_A, sde_drift_v

CFL_SAFETY = 0.9
NEGATIVE_TOL = 1e-14
# Values below this are flushed to zero after each step. Far tails otherwise
# decay into subnormal floats, which slow every arithmetic op ~50x; the mass
# discarded is < nx * nv * VACUUM per step.
VACUUM = 1e-200


class CFLError(ValueError):
    pass


class SchemeError(RuntimeError):
    pass


class BoundaryMassError(RuntimeError):
    pass


@dataclass(frozen=True)
class Transport:
    """Velocities on cell faces.

    ``ux[i, k]`` is the x-velocity on the face between x-cells i-1 and i at
    voltage v_k, shape (nx+1, nv); ``wv0[i, k]`` the v-velocity on the face
    between v-cells k-1 and k at j = 0, shape (nx, nv+1). The v-velocity at
    coupling value j is ``wv0 + dw_dj * j``. Boundary faces never carry flux.
    """

    grid: Grid2D
    ux: np.ndarray
    wv0: np.ndarray
    dw_dj: float
    diffusion: float

    def wv(self, j: float) -> np.ndarray:
        if self.dw_dj == 0.0:
            return self.wv0
        return self.wv0 + self.dw_dj * j


def transport_for(grid: Grid2D, p: ModelParams) -> Transport:
    xf = grid.x_faces[:, None]
    vc = grid.v[None, :]
    ux = -drift_A(xf, vc, p) * np.ones((1, grid.nv))
    xc = grid.x[:, None]
    vf = grid.v_faces[None, :]
    wv0 = sde_drift_v(xc, vf, 0.0, p) * np.ones((grid.nx, 1))
    dw_dj = p.eps if p.attractive else -p.eps
    return Transport(grid, np.ascontiguousarray(ux), np.ascontiguousarray(wv0), dw_dj, p.diffusion)


def zero_transport(grid: Grid2D, diffusion: float) -> Transport:
    return Transport(grid, np.zeros((grid.nx + 1, grid.nv)), np.zeros((grid.nx, grid.nv + 1)), 0.0, diffusion)


# -- kernels -----------------------------------------------------------------

@numba.njit(cache=True)
def _transport_div(f, ux, wv, dx, dv, out):
    """out = T f (conservative upwind divergence, interior faces only)."""
    nx, nv = f.shape
    out[:, :] = 0.0
    for i in range(nx - 1):
        for k in range(nv):
            u = ux[i + 1, k]
            if u > 0.0:
                flux = u * f[i, k]
            else:
                flux = u * f[i + 1, k]
            flux /= dx
            out[i, k] -= flux
            out[i + 1, k] += flux
    for i in range(nx):
        for k in range(nv - 1):
            w = wv[i, k + 1]
            if w > 0.0:
                flux = w * f[i, k]
            else:
                flux = w * f[i, k + 1]
            flux /= dv
            out[i, k] -= flux
            out[i, k + 1] += flux


@numba.njit(cache=True)
def _thomas_setup(nv, r, den, cp):
    den[0] = 1.0 + r
    cp[0] = -r / den[0]
    for k in range(1, nv):
        bk = 1.0 + r if k == nv - 1 else 1.0 + 2.0 * r
        den[k] = bk + r * cp[k - 1]
        cp[k] = -r / den[k]


@numba.njit(cache=True)
def _implicit_v(fstar, r, den, cp, out):
    # (I - r L) out = fstar per x-row; every operation adds nonnegative terms,
    # so nonnegative input stays nonnegative bit for bit. Rows are swept
    # together (i innermost) so the recurrences pipeline.
    nx, nv = fstar.shape
    inv0 = 1.0 / den[0]
    for i in range(nx):
        out[i, 0] = fstar[i, 0] * inv0
    for k in range(1, nv):
        invk = 1.0 / den[k]
        for i in range(nx):
            out[i, k] = (fstar[i, k] + r * out[i, k - 1]) * invk
    for k in range(nv - 2, -1, -1):
        c = -cp[k]
        for i in range(nx):
            out[i, k] = out[i, k] + c * out[i, k + 1]


@numba.njit(cache=True)
def _imex_steps(f, ux, wv0, dw_dj, vc, dx, dv, dt, r, nsteps, couple, jfix, work, out):
    """Advance ``nsteps`` steps; j is recomputed from f before each step when
    ``couple`` is set, otherwise held at ``jfix``. Returns the last j used."""
    nx, nv = f.shape
    den = np.empty(nv)
    cp = np.empty(nv)
    _thomas_setup(nv, r, den, cp)
    wv = np.empty_like(wv0)
    cur = f
    j = jfix
    for n in range(nsteps):
        if couple:
            num = 0.0
            tot = 0.0
            for i in range(nx):
                for k in range(nv):
                    num += cur[i, k] * vc[k]
                    tot += cur[i, k]
            j = num / tot
        for i in range(nx):
            for k in range(nv + 1):
                wv[i, k] = wv0[i, k] + dw_dj * j
        _transport_div(cur, ux, wv, dx, dv, work)
        for i in range(nx):
            for k in range(nv):
                work[i, k] = cur[i, k] + dt * work[i, k]
        _implicit_v(work, r, den, cp, out)
        for i in range(nx):
            for k in range(nv):
                if out[i, k] < VACUUM:
                    out[i, k] = 0.0
        if n < nsteps - 1:
            # out -> cur for the next step without reallocating
            if n == 0:
                cur = out.copy()
            else:
                cur[:, :] = out
    return j


def outflow_rate(tr: Transport, j: float) -> np.ndarray:
    """Per-cell explicit outflow rate; the step is positive iff dt * rate <= 1."""
    g = tr.grid
    ux = tr.ux.copy()
    ux[0, :] = 0.0
    ux[-1, :] = 0.0
    wv = tr.wv(j).copy()
    wv[:, 0] = 0.0
    wv[:, -1] = 0.0
    rx = (np.maximum(ux[1:, :], 0.0) + np.maximum(-ux[:-1, :], 0.0)) / g.dx
    rv = (np.maximum(wv[:, 1:], 0.0) + np.maximum(-wv[:, :-1], 0.0)) / g.dv
    return rx + rv


def max_stable_dt(tr: Transport, j: float | tuple | None = None, safety: float = CFL_SAFETY) -> float:
    """Largest dt keeping the explicit part positive (times ``safety``).

    With ``j=None`` the bound holds for every admissible coupling value, i.e.
    any j in [v_min, v_max] (the rate is convex in j, so the endpoints rule).
    """
    g = tr.grid
    js = (g.v_min, g.v_max) if j is None else np.atleast_1d(j)
    rate = max(float(outflow_rate(tr, jj).max()) for jj in js)
    return math.inf if rate == 0 else safety / rate


def _cfl_message(tr: Transport, j: float, dt: float) -> str:
    rate = outflow_rate(tr, j)
    i, k = np.unravel_index(np.argmax(rate), rate.shape)
    g = tr.grid
    return (f"dt={dt:.4g} exceeds CFL bound {CFL_SAFETY / rate[i, k]:.4g}; limiting cell "
            f"(i={i}, k={k}) at x={g.x[i]:.4g}, v={g.v[k]:.4g} with outflow faces "
            f"x:[{tr.ux[i, k]:.4g}, {tr.ux[i + 1, k]:.4g}] v:[{tr.wv(j)[i, k]:.4g}, {tr.wv(j)[i, k + 1]:.4g}]")


def check_cfl(tr: Transport, dt: float, j: float | None = None) -> None:
    if dt <= 0:
        raise CFLError(f"dt must be positive, got {dt}")
    limit = max_stable_dt(tr, j)
    if dt > limit:
        g = tr.grid
        jj = j
        if jj is None:
            jj = g.v_min if max_stable_dt(tr, g.v_min) <= max_stable_dt(tr, g.v_max) else g.v_max
        raise CFLError(_cfl_message(tr, jj, dt))


def rhs(f: Density, tr: Transport, j: float) -> np.ndarray:
    """Q[j] f computed by the time-stepping kernel's own stencil."""
    g = f.grid
    out = np.empty(g.shape)
    _transport_div(np.ascontiguousarray(f.values), tr.ux, np.ascontiguousarray(tr.wv(j)), g.dx, g.dv, out)
    D = tr.diffusion
    if D:
        vals = f.values
        flux = D * (vals[:, 1:] - vals[:, :-1]) / g.dv**2
        out[:, :-1] += flux
        out[:, 1:] -= flux
    return out


def nonlinear_rhs(f: Density, tr: Transport) -> np.ndarray:
    """Discrete right-hand side Q[J(f)] f of the nonlinear equation."""
    from .model import mean_voltage

    return rhs(f, tr, mean_voltage(f))


def _check_negative(values: np.ndarray, t: float):
    lo = values.min()
    if lo < -NEGATIVE_TOL * max(values.max(), 0.0):
        i, k = np.unravel_index(np.argmin(values), values.shape)
        raise SchemeError(f"negative density {lo:.3e} at cell ({i}, {k}), t={t:.6g}")


def step(f: Density, dt: float, p: ModelParams | None = None, j: float | None = None,
         transport: Transport | None = None) -> Density:
    """One IMEX step. ``j`` defaults to J(f)."""
    from .model import mean_voltage

    tr = transport if transport is not None else transport_for(f.grid, p)
    if j is None:
        j = mean_voltage(f)
    check_cfl(tr, dt, j)
    g = f.grid
    work = np.empty(g.shape)
    out = np.empty(g.shape)
    _imex_steps(np.ascontiguousarray(f.values), tr.ux, tr.wv0, tr.dw_dj, g.v, g.dx, g.dv, dt,
                dt * tr.diffusion / g.dv**2, 1, False, float(j), work, out)
    _check_negative(out, f.t + dt)
    return Density(g, out, f.t + dt)


def generator_matrix(tr: Transport, j: float, fmt: str = "csc") -> sp.spmatrix:
    """Sparse Q[j] with unknowns ordered row-major (index i * nv + k)."""
    g = tr.grid
    nx, nv = g.shape
    idx = np.arange(nx * nv).reshape(nx, nv)
    rows, cols, vals = [], [], []

    def add_face(left, right, vel, h):
        # flux = (vel+ f_left + vel- f_right) / h leaves `left`, enters `right`
        pos = np.maximum(vel, 0.0) / h
        neg = np.minimum(vel, 0.0) / h
        rows.extend([left, left, right, right])
        cols.extend([left, right, left, right])
        vals.extend([-pos, -neg, pos, neg])

    add_face(idx[:-1, :].ravel(), idx[1:, :].ravel(), tr.ux[1:-1, :].ravel(), g.dx)
    add_face(idx[:, :-1].ravel(), idx[:, 1:].ravel(), tr.wv(j)[:, 1:-1].ravel(), g.dv)
    if tr.diffusion:
        c = np.full((nx, nv - 1), tr.diffusion / g.dv**2).ravel()
        left, right = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        rows.extend([left, left, right, right])
        cols.extend([left, right, left, right])
        vals.extend([-c, c, c, -c])
    Q = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nx * nv, nx * nv))
    return Q.asformat(fmt)


def coupling_column(tr: Transport, G: Density, j: float) -> np.ndarray:
    """d(Q[j] G)/dj for the upwind stencil at coupling value j, flattened
    row-major. This is the discrete counterpart of eps * d_v G and sums to
    zero by telescoping."""
    g = G.grid
    w = tr.wv(j)[:, 1:-1]
    up = np.where(w > 0.0, G.values[:, :-1], G.values[:, 1:])
    dflux = tr.dw_dj * up / g.dv
    u = np.zeros(g.shape)
    u[:, :-1] -= dflux
    u[:, 1:] += dflux
    return u.ravel()


# -- time series -------------------------------------------------------------

PDE_COLUMNS = ("t", "mean_v", "mean_x", "var_v", "var_x", "j_emp", "mass_defect", "min_f",
               "l1M", "entropy", "fisher_v", "boundary_mass", "l1m", "l2m")


@dataclass
class TimeSeries:
    columns: tuple
    rows: list = field(default_factory=list)

    def append(self, row: dict) -> None:
        self.rows.append(tuple(float(row[c]) for c in self.columns))

    def __getitem__(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])

    def __len__(self) -> int:
        return len(self.rows)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(", ".join(self.columns) + "\n")
            for r in self.rows:
                fh.write(", ".join(repr(x) for x in r) + "\n")

    @classmethod
    def read(cls, path) -> "TimeSeries":
        with open(path) as fh:
            cols = tuple(c.strip() for c in fh.readline().split(","))
            rows = [tuple(float(x) for x in line.split(",")) for line in fh if line.strip()]
        return cls(cols, rows)


@dataclass
class SolveResult:
    density: Density
    series: TimeSeries
    records: list

    def __iter__(self):  # allows `f, ts = solve(...)`
        yield self.density
        yield self.series


def pde_row(f: Density, w: WeightParams, mass0: float, j: float | None = None):
    rec = diagnostics.record(f, w, j)
    mom = f.moments()
    row = dict(mom, t=f.t, j_emp=rec.j, mass_defect=rec.mass - mass0, min_f=rec.min_f, l1M=rec.l1M,
               entropy=rec.entropy, fisher_v=rec.fisher_v, boundary_mass=diagnostics.boundary_mass(f),
               l1m=rec.l1m, l2m=rec.l2m)
    return row, rec


def solve(f0: Density, T: float, dt: float, p: ModelParams | None = None, *, stride: int = 100,
          weight: WeightParams = WeightParams(), transport: Transport | None = None,
          boundary_tol: float | None = 1e-8, couple: bool = True, j_fixed: float = 0.0,
          callback=None) -> SolveResult:
    """Integrate to time T with j = J(f) refreshed before every step.

    The step count is ceil(T / dt); dt is shrunk so the last step lands on T.
    ``callback(density)`` is called at each record.
    """
    tr = transport if transport is not None else transport_for(f0.grid, p)
    g = f0.grid
    f = f0.copy()
    if abs(f.mass() - 1.0) > 1e-6:
        warnings.warn(f"initial mass {f.mass():.8g} renormalized to 1")
        f = Density(g, f.values / f.mass(), f.t)
    if np.any(f.values < 0):
        raise ValueError("initial density has negative values")
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt_eff = T / nsteps
    check_cfl(tr, dt_eff, None if couple else j_fixed)
    r = dt_eff * tr.diffusion / g.dv**2
    mass0 = f.mass()
    series = TimeSeries(PDE_COLUMNS)
    records = []

    def emit(dens, j):
        row, rec = pde_row(dens, weight, mass0, j)
        series.append(row)
        records.append(rec)
        if boundary_tol is not None and row["boundary_mass"] > boundary_tol:
            raise BoundaryMassError(
                f"boundary-cell mass fraction {row['boundary_mass']:.3e} > {boundary_tol:.1e} at "
                f"t={dens.t:.4g}; enlarge the domain")
        if callback is not None:
            callback(dens)

    from .model import mean_voltage

    emit(f, mean_voltage(f) if couple else None)
    cur = f.values.copy()  # f was handed to the callback; never write into it
    work = np.empty(g.shape)
    out = np.empty(g.shape)
    t0 = f.t
    done = 0
    while done < nsteps:
        n = min(stride, nsteps - done)
        _imex_steps(cur, tr.ux, tr.wv0, tr.dw_dj, g.v, g.dx, g.dv, dt_eff, r, n, couple, j_fixed, work, out)
        done += n
        cur, out = out, cur
        dens = Density(g, cur.copy(), t0 + done * dt_eff)
        _check_negative(cur, dens.t)
        emit(dens, None)
    return SolveResult(Density(g, cur.copy(), t0 + nsteps * dt_eff), series, records)
