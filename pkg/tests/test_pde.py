import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from fhn_meanfield import diagnostics, pde
from fhn_meanfield.config import PRESETS
from fhn_meanfield.grid import Density, Grid2D
from fhn_meanfield.model import ModelParams, mean_voltage, sde_drift_v
from fhn_meanfield.stationary import solve_linear_stationary

SMALL = PRESETS["small-eps"]
COARSE = Grid2D(-4, 4, -3, 3.5, 32, 32)
LOOSE = 1e-3  # boundary tolerance for coarse test grids


def test_uniform_density_unchanged_without_drift():
    g = Grid2D(nx=8, nv=8)
    f = Density.uniform(g)
    out = pde.step(f, 0.01, transport=pde.zero_transport(g, 1.0))
    np.testing.assert_allclose(out.values, f.values, rtol=1e-14)
    assert out.t == pytest.approx(0.01)


params = st.builds(ModelParams, a=st.floats(0.1, 3), b=st.floats(0.1, 3), lam=st.floats(-1, 2),
                   i0=st.floats(-1, 1), eps=st.floats(0, 3), sigma=st.floats(0.2, 2))


@given(params, st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_step_conserves_mass_and_positivity(p, seed, frac):
    g = Grid2D(-3, 3, -3, 3, 12, 10)
    vals = np.random.default_rng(seed).random(g.shape)
    f = Density(g, vals).normalized()
    tr = pde.transport_for(g, p)
    dt = frac * pde.max_stable_dt(tr, mean_voltage(f))
    out = pde.step(f, dt, transport=tr)
    assert abs(out.mass() - 1.0) <= 1e-13
    assert out.values.min() >= 0.0


def test_implicit_diffusion_matches_sparse_solve():
    g = Grid2D(-1, 1, -2, 2, 4, 40)
    D, dt = 0.7, 0.02
    f = Density.gaussian(g, (0.0, 0.3), ((0.2, 0.0), (0.0, 0.1)))
    out = pde.step(f, dt, transport=pde.zero_transport(g, D))
    # independent route: (I - dt D L) with zero-flux ends, per x-row
    r = dt * D / g.dv**2
    main = np.full(g.nv, 1 + 2 * r)
    main[0] = main[-1] = 1 + r
    A = sp.diags([main, -r * np.ones(g.nv - 1), -r * np.ones(g.nv - 1)], [0, 1, -1], format="csc")
    ref = np.array([spla.spsolve(A, row) for row in f.values])
    np.testing.assert_allclose(out.values, ref, rtol=1e-12, atol=1e-15)


def test_generator_matches_rhs_and_conserves():
    p = SMALL.replace(eps=0.8)
    tr = pde.transport_for(COARSE, p)
    f = Density.gaussian(COARSE, (0.2, 0.4))
    for j in (-0.5, 0.3, 1.1):
        Q = pde.generator_matrix(tr, j)
        np.testing.assert_allclose(Q @ f.values.ravel(), pde.rhs(f, tr, j).ravel(), atol=1e-12)
        assert np.abs(np.asarray(Q.sum(axis=0))).max() <= 1e-12 * abs(Q).max()


def test_coupling_column_is_derivative_in_j():
    p = SMALL.replace(eps=0.8)
    tr = pde.transport_for(COARSE, p)
    G = Density.gaussian(COARSE, (0.1, 0.2))
    j, h = 0.237, 1e-6
    fd = (pde.rhs(G, tr, j + h) - pde.rhs(G, tr, j - h)).ravel() / (2 * h)
    u = pde.coupling_column(tr, G, j)
    np.testing.assert_allclose(u, fd, atol=1e-7 * np.abs(u).max())
    assert abs(u.sum()) <= 1e-12 * np.abs(u).max()


def test_null_vector_is_fixed_point_of_step():
    p = SMALL
    tr = pde.transport_for(COARSE, p)
    j = 0.3
    G = solve_linear_stationary(j, COARSE, p, transport=tr)
    out = pde.step(G, 0.5 * pde.max_stable_dt(tr, j), j=j, transport=tr)
    assert out.l1_distance(G) <= 1e-10


def test_cfl_violation_names_limiting_cell():
    tr = pde.transport_for(COARSE, SMALL)
    dt = 2 * pde.max_stable_dt(tr)
    with pytest.raises(pde.CFLError, match="limiting cell"):
        pde.check_cfl(tr, dt)
    with pytest.raises(pde.CFLError):
        pde.step(Density.gaussian(COARSE), 10.0, SMALL)
    assert pde.max_stable_dt(pde.zero_transport(COARSE, 1.0)) == math.inf


def test_negative_values_abort():
    vals = np.ones((4, 4))
    vals[1, 2] = -1e-10
    with pytest.raises(pde.SchemeError, match="cell \\(1, 2\\)"):
        pde._check_negative(vals, 0.0)
    vals[1, 2] = -1e-16  # rounding-level: tolerated
    pde._check_negative(vals, 0.0)


def test_heat_kernel_variance():
    g = Grid2D(-1, 1, -10, 10, 4, 400)
    D, var0, T = 1.0, 0.25, 1.0
    f0 = Density.gaussian(g, (0.0, 0.0), ((0.1, 0.0), (0.0, var0)))
    # x is inert here, so only the v-edges matter for boundary influence
    res = pde.solve(f0, T, 1e-3, transport=pde.zero_transport(g, D), stride=100, boundary_tol=None)
    assert res.density.values[:, [0, -1]].sum() * g.cell_area <= 1e-8
    t, var = res.series["t"], res.series["var_v"]
    exact = var0 + 2 * D * t
    np.testing.assert_allclose(var, exact, rtol=1e-2)


def test_solve_records_and_invariants():
    f0 = Density.gaussian(COARSE, (0.5, -0.5), ((0.3, 0.0), (0.0, 0.3)))
    res = pde.solve(f0, 1.0, 5e-3, SMALL, stride=20, boundary_tol=LOOSE)
    s = res.series
    assert s.columns == pde.PDE_COLUMNS
    assert len(s) == 11
    assert np.abs(s["mass_defect"]).max() <= 1e-12
    assert s["min_f"].min() >= 0.0
    f, ts = res  # tuple-style unpacking
    assert f.t == pytest.approx(1.0)
    assert diagnostics.monitor(res.records).passed


def test_boundary_mass_error():
    g = Grid2D(-1, 1, -1, 1, 16, 16)
    with pytest.raises(pde.BoundaryMassError, match="enlarge the domain"):
        pde.solve(Density.uniform(g), 0.1, 1e-3, SMALL, stride=10)


def test_initial_mass_renormalized():
    f0 = Density.gaussian(COARSE)
    f0 = Density(COARSE, 2 * f0.values)
    with pytest.warns(UserWarning, match="renormalized"):
        res = pde.solve(f0, 0.01, 1e-3, SMALL, stride=10, boundary_tol=LOOSE)
    assert res.density.mass() == pytest.approx(1.0)


def test_moment_identity():
    # d/dt int v f versus int (-B) f, both from recorded snapshots
    g = Grid2D(-4, 4, -3, 3.5, 96, 96)
    f0 = Density.gaussian(g, (0.3, 0.6), ((0.3, 0.0), (0.0, 0.3)))
    snaps = []
    dt = 1e-3
    pde.solve(f0, 0.2, dt, SMALL, stride=10, callback=snaps.append, boundary_tol=LOOSE)
    X, V = g.mesh
    lhs, rhs_ = [], []
    for a, b in zip(snaps[:-1], snaps[1:]):
        lhs.append((mean_voltage(b) - mean_voltage(a)) / (b.t - a.t))
        q = [float(np.sum(sde_drift_v(X, V, mean_voltage(s), SMALL) * s.values)) * g.cell_area for s in (a, b)]
        rhs_.append(0.5 * (q[0] + q[1]))
    lhs, rhs_ = np.array(lhs), np.array(rhs_)
    scale = np.abs(rhs_).max()
    assert np.abs(lhs - rhs_).max() <= 0.05 * scale


def test_uncoupled_run_becomes_stationary():
    p = SMALL.replace(eps=0.0)
    res = pde.solve(Density.gaussian(COARSE, (1.0, 1.0)), 8.0, 4e-3, p, stride=50, boundary_tol=LOOSE)
    j, t = res.series["j_emp"], res.series["t"]
    late = np.abs(np.diff(j[-5:]) / np.diff(t[-5:])).max()
    early = np.abs(np.diff(j[:5]) / np.diff(t[:5])).max()
    assert late <= 1e-3 * early


def test_mean_voltage_bound_from_lyapunov_norm():
    res = pde.solve(Density.gaussian(COARSE, (0.5, 1.0)), 5.0, 4e-3, SMALL, stride=20, boundary_tol=LOOSE)
    l1M = res.series["l1M"]
    plateau = l1M[-len(l1M) // 4:].mean()
    bound = math.sqrt(2 * max(plateau, l1M[0]))
    assert np.abs(res.series["j_emp"]).max() <= bound


def test_first_order_self_convergence():
    # successive differences of a moment shrink at the upwind order
    vals = []
    for n in (24, 48, 96):
        g = Grid2D(-4, 4, -3, 3.5, n, n)
        f0 = Density.gaussian(g, (0.5, 0.5), ((0.3, 0.0), (0.0, 0.3)))
        res = pde.solve(f0, 0.5, 1e-3, SMALL, stride=1000, boundary_tol=LOOSE)
        vals.append(res.density.moments()["var_x"])
    order = math.log2(abs(vals[0] - vals[1]) / abs(vals[1] - vals[2]))
    assert order >= 0.8


def test_timeseries_roundtrip(tmp_path):
    ts = pde.TimeSeries(("t", "a"), [(0.0, 1.5), (0.1, 2.5)])
    ts.write(tmp_path / "s.csv")
    back = pde.TimeSeries.read(tmp_path / "s.csv")
    assert back.columns == ("t", "a") and back.rows == ts.rows
