import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fhn_meanfield import diagnostics as D
from fhn_meanfield.grid import Density, Grid2D
from fhn_meanfield.model import WeightParams

W = WeightParams()


def single_cell(g, i, k):
    vals = np.zeros(g.shape)
    vals[i, k] = 1.0 / g.cell_area
    return Density(g, vals)


def test_l1M_point_mass_at_origin():
    g = Grid2D(-1, 1, -1, 1, 5, 5)  # odd counts: a cell centred on the origin
    f = single_cell(g, 2, 2)
    assert D.l1M_norm(f) == pytest.approx(1.0)
    assert D.l1m_norm(f, W) == pytest.approx(1.0)


def test_entropy_closed_forms():
    g = Grid2D(-1, 3, -2, 1, 8, 6)
    area = 4 * 3
    assert D.entropy(Density.uniform(g)) == pytest.approx(-math.log(area))
    assert D.entropy(single_cell(g, 3, 3)) == pytest.approx(-math.log(g.cell_area))


def test_entropy_gaussian():
    g = Grid2D(-6, 6, -6, 6, 240, 240)
    cov = np.array([[0.5, 0.1], [0.1, 0.3]])
    f = Density.gaussian(g, (0.2, -0.1), cov)
    exact = -(1 + math.log(2 * math.pi)) - 0.5 * math.log(np.linalg.det(cov))
    assert D.entropy(f) == pytest.approx(exact, rel=1e-6)


def test_fisher_gaussian_in_v():
    s2 = 0.25
    g = Grid2D(-4, 4, -4, 4, 64, 400)
    f = Density.gaussian(g, (0.0, 0.0), ((0.5, 0.0), (0.0, s2)))
    # centred differences: O(dv^2) error
    assert D.fisher_v(f) == pytest.approx(1.0 / s2, rel=2e-3)


def test_fisher_v_constant_and_vacuum_count():
    g = Grid2D(nx=6, nv=6)
    f = Density.from_function(g, lambda X, V: np.exp(-X**2))
    assert D.fisher_v(f) == pytest.approx(0.0, abs=1e-12)
    vals = f.values.copy()
    vals[:, :2] = 0.0
    _, skipped = D.fisher_v(Density(g, vals), return_skipped=True)
    assert skipped == 12


@given(st.floats(0.01, 100))
def test_fisher_homogeneous(c):
    g = Grid2D(nx=8, nv=16)
    f = Density.gaussian(g)
    assert D.fisher_v(Density(g, c * f.values)) == pytest.approx(c * D.fisher_v(f), rel=1e-12)


@given(arrays(np.float64, (6, 9), elements=st.floats(0, 10)))
def test_functionals_invariant_under_transposition(vals):
    # swapping the roles of x and v leaves M, m and f log f unchanged
    g = Grid2D(-1, 2, -3, 1, 6, 9)
    gt = Grid2D(-3, 1, -1, 2, 9, 6)
    f, ft = Density(g, vals), Density(gt, vals.T.copy())
    for fn in (D.l1M_norm, D.entropy, lambda h: D.l1m_norm(h, W), lambda h: D.l2m_norm(h, W)):
        assert fn(ft) == pytest.approx(fn(f), rel=1e-12, abs=1e-300)


def _bump(n):
    # compactly supported, so the midpoint rule is only algebraically accurate
    g = Grid2D(-1, 1, -1, 1, n, n)
    return Density.from_function(g, lambda X, V: (1 - X**2) ** 2 * (1 - V**2) ** 2 * (1 + 0.3 * X * V))


def _smooth(n):
    # decays well inside the box; the error is the centred-difference truncation
    g = Grid2D(-4, 4, -4, 4, n, n)
    return Density.from_function(g, lambda X, V: np.exp(-X**2 - V**4) * (1 + 0.3 * np.sin(2 * V)))


def observed_order(fn, family, ns=(32, 64, 128)):
    vals = [fn(family(n)) for n in ns]
    return math.log2(abs(vals[0] - vals[1]) / abs(vals[1] - vals[2]))


def test_refinement_order_entropy_and_fisher():
    assert observed_order(D.entropy, _bump) >= 1.0
    assert observed_order(D.fisher_v, _smooth) >= 1.0


def _rec(t, l1M, j, H=0.0, fis=1.0):
    return D.DiagnosticsRecord(t=t, l1M=l1M, l1m=1.0, l2m=1.0, entropy=H, fisher_v=fis, j=j, mass=1.0, min_f=0.0)


def test_monitor_detects_cauchy_schwarz_violation():
    recs = [_rec(0.0, 1.0, 0.5), _rec(1.0, 1.0, 1.2), _rec(2.0, 1.0, 2.0)]
    rep = D.monitor(recs)
    c = rep["j_cauchy_schwarz"]
    assert not c.passed
    assert "t=2" in c.detail


def test_monitor_constant_series_passes():
    rep = D.monitor([_rec(float(t), 2.0, 0.3) for t in range(5)])
    assert rep.passed, rep.summary()


def test_monitor_flags_superlinear_fisher_growth():
    t = np.linspace(0, 10, 50)
    rep = D.monitor([_rec(tt, 1.0, 0.0, fis=math.exp(tt)) for tt in t])
    assert not rep["fisher_linear_growth"].passed


def test_monitor_needs_two_records():
    with pytest.raises(ValueError):
        D.monitor([_rec(0.0, 1.0, 0.0)])


def test_boundary_mass():
    g = Grid2D(nx=4, nv=4)
    assert D.boundary_mass(Density.uniform(g)) == pytest.approx(12 / 16)
    assert D.boundary_mass(single_cell(g, 1, 2)) == 0.0
