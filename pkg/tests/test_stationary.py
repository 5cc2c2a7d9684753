import numpy as np
import pytest

from fhn_meanfield import pde
from fhn_meanfield import stationary as S
from fhn_meanfield.config import PRESETS
from fhn_meanfield.grid import Density, Grid2D
from fhn_meanfield.model import mean_voltage

SMALL = PRESETS["small-eps"]
G48 = Grid2D(-4, 4, -3, 3.5, 48, 48)
BI_GRID = Grid2D(-1.0, 2.0, -1.5, 3.0, 48, 64)


@pytest.fixture(scope="module")
def small_solutions():
    return S.find_stationary([-1.0, -0.3, 0.2, 0.8, 1.5], SMALL, G48)


def test_linear_null_vector():
    tr = pde.transport_for(G48, SMALL)
    G = S.solve_linear_stationary(0.4, G48, SMALL, transport=tr)
    assert G.values.min() >= 0.0
    assert G.mass() == pytest.approx(1.0, abs=1e-10)
    assert S.residual_l1(G, tr, 0.4) <= 1e-8
    assert G.meta["method"] == "inverse-power"


def test_inverse_power_agrees_with_integration():
    j = 0.25
    a = S.solve_linear_stationary(j, G48, SMALL)
    b = S.stationary_by_integration(j, G48, SMALL, T=40.0)
    assert a.l1_distance(b) <= 1e-4


def test_unique_at_small_eps(small_solutions):
    assert len(small_solutions) == 1
    r = small_solutions[0]
    assert r.residual_l1 <= 1e-8 and r.fixed_point_gap <= 1e-8
    assert r.j == pytest.approx(mean_voltage(r.G))


def test_coupling_map_contracts_at_small_eps(small_solutions):
    s = S.coupling_map_slope(small_solutions[0].j, SMALL, G48)
    assert abs(s) < 1


def test_eps_zero_is_seed_independent():
    p = SMALL.replace(eps=0.0)
    sols = S.find_stationary([-2.0, 0.0, 2.0], p, G48)
    assert len(sols) == 1
    F = S.CouplingMap(G48, p)
    assert F(-1.0) == F(1.5)


def test_multiple_states_with_strong_attractive_coupling():
    p = PRESETS["bistable"].replace(eps=3.0, attractive=True)
    sols = S.find_stationary([0.3, 0.9, 1.6], p, BI_GRID)
    assert len(sols) >= 2
    js = [r.j for r in sols]
    assert min(js) < 0.6 and max(js) > 1.2
    for r in sols:
        assert r.residual_l1 <= 1e-8 and r.fixed_point_gap <= 1e-8


def test_fixed_point_iteration_on_scalar_map():
    class Affine:
        # F(j) = 2 - 0.5 j  ->  j* = 4/3; no grid work needed
        grid = G48
        tr = pde.transport_for(G48, SMALL)

        def __call__(self, j):
            return 2.0 - 0.5 * j

        def density(self, j):
            return Density.gaussian(G48, (0.0, 4.0 / 3.0), ((0.3, 0.0), (0.0, 0.3)))

    r = S.solve_fixed_point(Affine(), 0.0, tol=1e-12)
    assert r.trace[-1][0] == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_save_and_meta(tmp_path, small_solutions):
    r = small_solutions[0]
    side = r.save(tmp_path / "G.dat")
    meta = S.StationaryResult.read_meta(tmp_path / "G.dat")
    assert side.exists()
    assert float(meta["j"]) == r.j
    back = Density.load(tmp_path / "G.dat")
    np.testing.assert_array_equal(back.values, r.G.values)


def test_positivity_of_stationary_state(small_solutions):
    rep = S.positivity_check(small_solutions[0].G)
    assert rep.passed, str(rep)
    with pytest.raises(ValueError):
        S.positivity_check(Density.uniform(Grid2D(nx=4, nv=4)), margin=2)


def test_proximity_decreases_toward_zero_coupling():
    tab = S.epsilon_proximity_scan([0.4, 0.2, 0.1, 0.05], SMALL, G48)
    assert tab.monotone
    assert tab.eps == [0.05, 0.1, 0.2, 0.4]
    assert tab.intercept <= 1e-3


def test_stationary_state_is_fixed_point_of_step(small_solutions):
    r = small_solutions[0]
    tr = pde.transport_for(G48, SMALL)
    out = pde.step(r.G, 0.5 * pde.max_stable_dt(tr), transport=tr)
    assert out.l1_distance(r.G) < 10 * max(r.residual_l1, 1e-15) + 1e-13


def test_proximity_zero_entry_and_slope():
    tab = S.epsilon_proximity_scan([0.0, 0.1, 0.2, 0.4], SMALL, G48)
    assert tab.distance[0] == 0.0
    assert tab.slope > 0


def test_positivity_detects_zeroed_cell(small_solutions):
    G = small_solutions[0].G.copy()
    G.values[20, 25] = 0.0
    rep = S.positivity_check(G)
    assert not rep.passed and rep.location == (20, 25)


def test_interior_minimum_shrinks_with_domain():
    mins = []
    for half in (3.0, 4.0):
        g = Grid2D(-half, half, -half, half + 0.5, 40, 40)
        G = S.find_stationary([0.2], SMALL, g)[0].G
        mins.append(S.positivity_check(G).interior_min)
    assert mins[1] < mins[0]
