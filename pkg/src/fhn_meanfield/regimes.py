"""Classification of mean-voltage time series into stationary-unimodal,
oscillatory or bistable regimes."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import welch

from . import particle as P
from .model import ModelParams, deterministic_fixed_points

UNIMODAL, OSCILLATORY, BISTABLE, INCONCLUSIVE = "stationary-unimodal", "oscillatory", "bistable", "inconclusive"


@dataclass(frozen=True)
class RegimeThresholds:
    spectral_ratio: float = 5.0
    separation: float = 4.0
    burn_in: float = 0.2
    min_samples: int = 64


def spectral_ratio(s: np.ndarray, dt: float) -> tuple[float, float]:
    """(peak / median, peak frequency) of the Welch spectrum of s.

    The median runs over the nonzero frequencies up to 4x the peak, so a red
    (Lorentzian) spectrum scores about 1 regardless of its corner frequency
    while a spectral line scores high.
    """
    s = np.asarray(s, float) - np.mean(s)
    f, pw = welch(s, fs=1.0 / dt, nperseg=min(len(s) // 4, 2048))
    f, pw = f[1:], pw[1:]
    k = int(np.argmax(pw))
    band = f <= 4 * f[k]
    if band.sum() < 3 or np.median(pw[band]) == 0:
        return float("nan"), float(f[k])
    return float(pw[k] / np.median(pw[band])), float(f[k])


@dataclass
class Classification:
    label: str
    ratios: tuple
    means: tuple
    stds: tuple
    separation: float
    peak_freqs: tuple = ()


def classify(series_a: np.ndarray, series_b: np.ndarray, dt: float,
             th: RegimeThresholds = RegimeThresholds()) -> Classification:
    """Classify two runs started at the two deterministic attractors.

    Bistable if their post-burn-in means differ by more than ``separation``
    pooled standard deviations; otherwise oscillatory if both runs show a
    spectral peak above ``spectral_ratio`` times the median; otherwise
    stationary-unimodal. Bistability is tested first: a run trapped near one
    attractor can show noise-driven spectral peaks without any switching.
    """
    cut = [s[int(th.burn_in * len(s)):] for s in (series_a, series_b)]
    if min(len(s) for s in cut) < th.min_samples:
        return Classification(INCONCLUSIVE, (), (), (), float("nan"))
    means = tuple(float(s.mean()) for s in cut)
    stds = tuple(float(s.std()) for s in cut)
    pooled = math.sqrt(0.5 * (stds[0] ** 2 + stds[1] ** 2))
    sep = abs(means[0] - means[1]) / pooled if pooled > 0 else (math.inf if means[0] != means[1] else 0.0)
    rf = [spectral_ratio(s, dt) for s in cut]
    ratios = tuple(r for r, _ in rf)
    freqs = tuple(f for _, f in rf)
    if sep > th.separation:
        label = BISTABLE
    elif any(math.isnan(r) for r in ratios):
        label = INCONCLUSIVE
    elif min(ratios) > th.spectral_ratio:
        label = OSCILLATORY
    else:
        label = UNIMODAL
    return Classification(label, ratios, means, stds, sep, freqs)


@dataclass(frozen=True)
class RegimeRun:
    n: int = 2000
    T: float = 300.0
    dt: float = 0.01
    record_dt: float = 0.1
    spread: tuple = (0.01, 0.05)  # initial std in (x, v) around each attractor
    attractive: bool = True


def attractor_runs(p: ModelParams, J: float, seed: int, run: RegimeRun = RegimeRun()):
    """Mean-voltage series from the lowest and highest stable equilibria."""
    fps = [fp for fp in deterministic_fixed_points(p.replace(eps=0.0)) if fp.kind == "stable"]
    if not fps:
        raise ValueError("preset has no stable equilibrium")
    starts = (fps[0], fps[-1])
    c = P.CouplingSpec.mean_field(J, attractive=run.attractive)
    stride = max(1, int(round(run.record_dt / run.dt)))
    out = []
    for k, fp in enumerate(starts):
        law = P.InitialLaw("gaussian", mean=(fp.x, fp.v),
                           cov=((run.spread[0] ** 2, 0.0), (0.0, run.spread[1] ** 2)))
        ens = P.init_ensemble(run.n, law, seed, trial=k)
        ts = P.simulate(ens, run.T, run.dt, p, c, P.Recorder(stride=stride))
        out.append((ts["t"], ts["mean_v"]))
    return out


def _scan_job(args):
    p, J, seed, run, th = args
    (ta, a), (tb, b) = attractor_runs(p, J, seed, run)
    dt = float(ta[1] - ta[0])
    return J, seed, classify(a, b, dt, th), (ta, a, b)


@dataclass
class RegimeScan:
    rows: list = field(default_factory=list)  # (J, seed, Classification)
    traces: dict = field(default_factory=dict)

    def labels(self, J) -> list:
        return [c.label for j, _, c in self.rows if j == J]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("J, seed, label, ratio_low, ratio_high, mean_low, mean_high, separation\n")
            for J, seed, c in self.rows:
                r = c.ratios if c.ratios else (float("nan"),) * 2
                m = c.means if c.means else (float("nan"),) * 2
                fh.write(f"{J!r}, {seed}, {c.label}, {r[0]:.6g}, {r[1]:.6g}, {m[0]:.6g}, {m[1]:.6g}, {c.separation:.6g}\n")


def regime_scan(p: ModelParams, J_list, seeds, run: RegimeRun = RegimeRun(),
                th: RegimeThresholds = RegimeThresholds(), workers: int = 1) -> RegimeScan:
    jobs = [(p, float(J), int(s), run, th) for J in J_list for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_scan_job, jobs))
    else:
        results = [_scan_job(j) for j in jobs]
    scan = RegimeScan()
    for J, seed, cl, trace in results:
        scan.rows.append((J, seed, cl))
        scan.traces[(J, seed)] = trace
    return scan
