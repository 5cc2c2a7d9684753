"""Linearization around a stationary density and its rightmost spectrum.

The discrete linearized operator is L h = Q h + u (w . h), where Q is the
generator at j = J(G), w holds the cell weights of the v-moment and u is the
derivative of Q[j] G with respect to j for the same upwind stencil (the
discrete counterpart of eps d_v G).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import pde
from .diagnostics import l2m_norm
from .grid import Density, Grid2D
from .model import ModelParams, WeightParams, log_weight_m, mean_voltage

DEFAULT_SHIFT = 0.05


@dataclass
class LinearizedOperator:
    Q: sp.csc_matrix
    u: np.ndarray
    w: np.ndarray
    grid: Grid2D
    j: float
    eps: float

    @property
    def shape(self):
        return self.Q.shape

    def matvec(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h).ravel()
        return self.Q @ h + self.u * (self.w @ h)

    def dense(self) -> np.ndarray:
        return self.Q.toarray() + np.outer(self.u, self.w)

    def column_sum_defect(self) -> float:
        """max |1^T L| relative to the largest entry of Q."""
        colsum = np.asarray(self.Q.sum(axis=0)).ravel() + self.u.sum() * self.w
        return float(np.abs(colsum).max() / abs(self.Q).max())

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.matvec, dtype=float)

    def spectral_scale(self, iters: int = 20, seed: int = 0) -> float:
        """Power-iteration estimate of ||L||_2."""
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(self.shape[0])
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(iters):
            y = self.matvec(x)
            lam = np.linalg.norm(y)
            x = y / lam
        return float(lam)


def assemble(G, p: ModelParams, transport: pde.Transport | None = None) -> LinearizedOperator:
    """Linearize Q[J(f)] f at G (a Density or a StationaryResult)."""
    G = getattr(G, "G", G)
    g = G.grid
    tr = transport if transport is not None else pde.transport_for(g, p)
    j = mean_voltage(G)
    Q = pde.generator_matrix(tr, j, "csc")
    if p.eps == 0:
        u = np.zeros(g.size)
    else:
        u = pde.coupling_column(tr, G, j)
    w = (np.ones((g.nx, 1)) * g.v[None, :]).ravel() * g.cell_area
    return LinearizedOperator(Q, u, w, g, j, p.eps)


def linearization_ratios(G: Density, p: ModelParams, h: np.ndarray, taus) -> tuple[np.ndarray, np.ndarray]:
    """Remainders ||N(G + tau h) - N(G) - tau L h||_1 and their successive
    ratios, N being the discrete nonlinear right-hand side."""
    tr = pde.transport_for(G.grid, p)
    L = assemble(G, p, tr)
    N0 = pde.nonlinear_rhs(G, tr).ravel()
    Lh = L.matvec(h)
    rem = []
    for tau in taus:
        f = Density(G.grid, G.values + tau * h.reshape(G.grid.shape))
        Nt = pde.nonlinear_rhs(f, tr).ravel()
        rem.append(np.abs(Nt - N0 - tau * Lh).sum() * G.grid.cell_area)
    rem = np.array(rem)
    return rem, rem[:-1] / rem[1:]


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    mass_index: int
    eps: float
    shift: float
    scale: float
    kappa: float | None
    grid: Grid2D
    converged: bool = True
    message: str = ""

    @property
    def mass_mode_defect(self) -> float:
        return float(abs(self.eigenvalues[self.mass_index]))

    @property
    def others(self) -> np.ndarray:
        return np.delete(self.eigenvalues, self.mass_index)

    @property
    def separated(self) -> bool:
        rest = self.others
        return rest.size > 0 and float(np.min(np.abs(rest))) > 1e3 * max(self.mass_mode_defect, 1e-14)

    @property
    def gap(self) -> float:
        """-max Re over the non-mass eigenvalues (nan if not separated)."""
        if not self.separated:
            return float("nan")
        return float(-np.max(self.others.real))

    def write(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("re, im, residual, is_mass_mode\n")
            for k, (mu, r) in enumerate(zip(self.eigenvalues, self.residuals)):
                fh.write(f"{mu.real!r}, {mu.imag!r}, {r!r}, {int(k == self.mass_index)}\n")
        side = path.with_name(path.name + ".meta")
        g = self.grid
        with side.open("w") as fh:
            fh.write(f"eps = {self.eps!r}\nshift = {self.shift!r}\nkappa = {self.kappa!r}\n")
            fh.write(f"grid = {g.nx} {g.nv} {g.x_min!r} {g.x_max!r} {g.v_min!r} {g.v_max!r}\n")
            fh.write(f"scale = {self.scale!r}\ngap = {self.gap!r}\nmass_mode_defect = {self.mass_mode_defect!r}\n")
            fh.write(f"converged = {self.converged}\n")
        return side


def _shift_invert(opL: LinearizedOperator, s: float):
    """x = (L - s I)^{-1} b via a sparse LU of Q - s I and Sherman-Morrison."""
    n = opL.shape[0]
    lu = spla.splu((opL.Q - s * sp.identity(n, format="csc")).tocsc())
    Bu = lu.solve(opL.u) if np.any(opL.u) else np.zeros(n)
    denom = 1.0 + opL.w @ Bu
    if abs(denom) < 1e-14:
        raise np.linalg.LinAlgError("rank-one update is singular at this shift")

    def solve(b):
        y = lu.solve(np.asarray(b, dtype=float).ravel())
        return y - Bu * ((opL.w @ y) / denom)

    return solve


def rightmost_eigenvalues(opL: LinearizedOperator, k: int = 8, tol: float = 1e-10,
                          shift: float | None = None, weight: WeightParams | None = WeightParams(),
                          ncv: int | None = None, max_retries: int = 3) -> SpectralReport:
    """k eigenvalues nearest a small positive shift, i.e. the rightmost part
    of the spectrum when everything else sits in the left half-plane.

    With ``weight`` set, the operator is conjugated by diag(m) first (exact
    similarity, so eigenvalues are unchanged; residuals are then measured in
    the L2(m) geometry).
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    s = DEFAULT_SHIFT if shift is None else float(shift)
    n = opL.shape[0]
    if weight is not None:
        X, V = opL.grid.mesh
        logm = log_weight_m(X, V, weight).ravel()
        logm -= logm.max() / 2  # keep both m and 1/m representable
        m, minv = np.exp(logm), np.exp(-logm)
    else:
        m = minv = np.ones(n)
    message = ""
    for attempt in range(max_retries + 1):
        try:
            solve = _shift_invert(opL, s)
            break
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            message = f"factorization failed at shift {s}: {exc}; "
            s *= 4
    else:
        raise RuntimeError(message)
    A = spla.LinearOperator((n, n), matvec=lambda h: m * opL.matvec(minv * h), dtype=float)
    Op = spla.LinearOperator((n, n), matvec=lambda b: m * solve(minv * b), dtype=float)
    converged = True
    try:
        vals, vecs = spla.eigs(A, k=k, sigma=s, OPinv=Op, which="LM", tol=tol, ncv=ncv,
                               v0=m * np.ones(n) / n)
    except spla.ArpackNoConvergence as exc:
        vals, vecs = exc.eigenvalues, exc.eigenvectors
        converged = False
        message += f"ARPACK returned {len(vals)} of {k} eigenvalues"
    order = np.argsort(-vals.real, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    res = np.array([np.linalg.norm(A @ vecs[:, i] - vals[i] * vecs[:, i]) / np.linalg.norm(vecs[:, i])
                    for i in range(len(vals))])
    mass = int(np.argmin(np.abs(vals)))
    return SpectralReport(vals, res, mass, opL.eps, s, opL.spectral_scale(),
                          None if weight is None else weight.kappa, opL.grid, converged, message)


# -- nonlinear decay experiment ---------------------------------------------

def mean_zero_perturbation(G: Density, w: WeightParams, amplitude: float) -> np.ndarray:
    """h = G (tanh(v - j) - <tanh(v - j)>_G), scaled to ||h||_{L2(m)} = amplitude.
    Bounded relative to G, so G + h stays nonnegative for small amplitude."""
    g = G.grid
    j = mean_voltage(G)
    phi = np.tanh(g.v - j)[None, :] * np.ones((g.nx, 1))
    phi -= (G.values * phi).sum() / G.values.sum()
    h = G.values * phi
    norm = l2m_norm(Density(g, h), w)
    return h * (amplitude / norm)


@dataclass
class DecayFit:
    gap: float
    rate: float
    window: tuple
    t: np.ndarray
    distance: np.ndarray
    fitted: bool = True
    message: str = ""
    run: pde.SolveResult | None = None


def fit_decay(t: np.ndarray, d: np.ndarray, floor: float = 1e-11, transient: float = 0.3) -> tuple:
    """Least-squares slope of log d over the window where d has fallen below
    ``transient`` times its start and is still above 100x the floor."""
    d0 = d[0]
    ok = (d <= transient * d0) & (d >= 100 * floor)
    idx = np.nonzero(ok)[0]
    if idx.size < 5:
        return float("nan"), None
    # contiguous run starting at the first qualifying record
    stop = idx[0]
    while stop + 1 < d.size and ok[stop + 1]:
        stop += 1
    sel = slice(idx[0], stop + 1)
    if stop + 1 - idx[0] < 5:
        return float("nan"), None
    slope = np.polyfit(t[sel], np.log(d[sel]), 1)[0]
    return float(-slope), (float(t[idx[0]]), float(t[stop]))


def predicted_vs_measured_decay(G, p: ModelParams, amplitude: float = 1e-2, T: float = 20.0, *,
                                w: WeightParams = WeightParams(), dt: float | None = None,
                                stride: int = 20, report: SpectralReport | None = None,
                                h: np.ndarray | None = None) -> DecayFit:
    """Evolve G + h with the nonlinear solver and fit the decay rate of
    ||f_t - G||_{L2(m)} against the spectral gap of the linearization."""
    G = getattr(G, "G", G)
    g = G.grid
    tr = pde.transport_for(g, p)
    if report is None:
        report = rightmost_eigenvalues(assemble(G, p, tr))
    if amplitude == 0:
        return DecayFit(report.gap, float("nan"), None, np.zeros(0), np.zeros(0), False,
                        "zero perturbation: nothing to fit")
    if h is None:
        h = mean_zero_perturbation(G, w, amplitude)
    f0 = Density(g, G.values + h)
    if f0.values.min() < 0:
        raise ValueError("perturbation makes the density negative; lower the amplitude")
    ts, ds = [], []

    def track(f):
        ts.append(f.t)
        ds.append(l2m_norm(Density(g, f.values - G.values), w))

    dt = dt if dt is not None else pde.max_stable_dt(tr)
    run = pde.solve(f0, T, dt, p, stride=stride, weight=w, transport=tr, boundary_tol=None, callback=track)
    t, d = np.array(ts), np.array(ds)
    rate, window = fit_decay(t, d)
    if window is None:
        return DecayFit(report.gap, rate, None, t, d, False, "no linear decay window found", run)
    return DecayFit(report.gap, rate, window, t, d, run=run)
