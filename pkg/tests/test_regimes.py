import numpy as np
import pytest

from fhn_meanfield import regimes as R
from fhn_meanfield.config import PRESETS

DT = 0.1


def ou(n, seed, tau=2.0, mean=0.0):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = 0.0
    a = np.exp(-DT / tau)
    for k in range(1, n):
        x[k] = a * x[k - 1] + np.sqrt(1 - a * a) * rng.standard_normal()
    return mean + 0.05 * x


def test_spectral_ratio_line_vs_red_noise():
    t = np.arange(3000) * DT
    line = np.sin(2 * np.pi * 0.2 * t) + 0.1 * np.random.default_rng(0).standard_normal(t.size)
    r_line, f_line = R.spectral_ratio(line, DT)
    r_red, _ = R.spectral_ratio(ou(3000, 1), DT)
    assert r_line > 20 and f_line == pytest.approx(0.2, rel=0.1)
    assert r_red < 5


def test_classify_synthetic_cases():
    n = 3000
    t = np.arange(n) * DT
    assert R.classify(ou(n, 1), ou(n, 2), DT).label == R.UNIMODAL
    osc = [np.sin(2 * np.pi * 0.1 * t + ph) + 0.05 * ou(n, s) for ph, s in ((0.0, 3), (1.0, 4))]
    assert R.classify(*osc, DT).label == R.OSCILLATORY
    c = R.classify(ou(n, 5, mean=0.3), ou(n, 6, mean=1.5), DT)
    assert c.label == R.BISTABLE and c.separation > 4


def test_bistable_wins_over_spurious_peaks():
    # two runs stuck at different levels, each with a periodic wiggle
    n = 3000
    t = np.arange(n) * DT
    a = 0.3 + 0.05 * np.sin(2 * np.pi * 0.1 * t)
    b = 1.5 + 0.05 * np.sin(2 * np.pi * 0.1 * t)
    assert R.classify(a, b, DT).label == R.BISTABLE


def test_short_series_inconclusive():
    assert R.classify(np.zeros(20), np.zeros(20), DT).label == R.INCONCLUSIVE


def test_regime_scan_small_run(tmp_path):
    run = R.RegimeRun(n=50, T=5.0, dt=0.01)
    scan = R.regime_scan(PRESETS["bistable"], [0.1], [1], run)
    assert len(scan.rows) == 1
    assert scan.labels(0.1)[0] in (R.UNIMODAL, R.OSCILLATORY, R.BISTABLE, R.INCONCLUSIVE)
    scan.write(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().startswith("J, seed, label")


def test_attractor_runs_need_a_stable_state():
    from fhn_meanfield.model import ModelParams, stable_voltages

    # single equilibrium at v = 0.4, the minimum of the cubic's slope, where
    # the trace -a - c'(v) = -0.08 + 0.28 is positive
    p = ModelParams(a=0.08, b=0.064, lam=0.2, i0=-0.272, sigma=0.5)
    assert stable_voltages(p) == []
    with pytest.raises(ValueError):
        R.attractor_runs(p, 0.1, 1, R.RegimeRun(n=5, T=0.1))
