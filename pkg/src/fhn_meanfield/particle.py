"""Euler-Maruyama simulation of the N-neuron network and the synchronous
coupling harness used to measure propagation of chaos."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import Density, Grid2D
from .model import ConfigError, ModelParams, sde_drift_v

PARTICLE_COLUMNS = ("t", "mean_v", "mean_x", "var_v", "var_x", "j_emp")
CHAOS_COLUMNS = ("N", "t", "mse", "stderr", "trials")
NOISE_CHUNK = 256


class ParticleAbort(FloatingPointError):
    """Non-finite particle state."""


def particle_streams(n: int, seed: int, trial: int = 0) -> list[np.random.Generator]:
    """One counter-based (Philox) stream per particle, keyed by
    (seed, trial, index) so particle i sees the same noise for every N."""
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(trial, i))))
            for i in range(n)]


@dataclass(frozen=True)
class InitialLaw:
    kind: str = "gaussian"  # gaussian | uniform | point
    mean: tuple = (0.0, 0.0)
    cov: tuple = ((0.2, 0.0), (0.0, 0.2))
    low: tuple = (-1.0, -1.0)
    high: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "point"):
            raise ConfigError(f"unknown initial law {self.kind!r}")
        if self.kind == "gaussian" and np.any(np.linalg.eigvalsh(np.asarray(self.cov, float)) <= 0):
            raise ConfigError("covariance must be positive definite")
        if self.kind == "uniform" and not all(l < h for l, h in zip(self.low, self.high)):
            raise ConfigError("uniform law needs low < high")

    @classmethod
    def point(cls, x0: float, v0: float) -> "InitialLaw":
        return cls("point", mean=(x0, v0))

    def draw(self, gen: np.random.Generator) -> tuple[float, float]:
        if self.kind == "point":
            return float(self.mean[0]), float(self.mean[1])
        if self.kind == "uniform":
            u = gen.random(2)
            return (self.low[0] + u[0] * (self.high[0] - self.low[0]),
                    self.low[1] + u[1] * (self.high[1] - self.low[1]))
        L = np.linalg.cholesky(np.asarray(self.cov, float))
        z = L @ gen.standard_normal(2)
        return float(self.mean[0] + z[0]), float(self.mean[1] + z[1])

    def density(self, grid: Grid2D) -> Density:
        """The same law as a grid density (for the matching PDE solve)."""
        if self.kind == "gaussian":
            return Density.gaussian(grid, self.mean, self.cov)
        if self.kind == "uniform":
            X, V = grid.mesh
            inside = (X >= self.low[0]) & (X <= self.high[0]) & (V >= self.low[1]) & (V <= self.high[1])
            return Density.from_function(grid, lambda X, V: inside.astype(float))
        raise ConfigError("a point law has no grid density")


@dataclass
class ParticleEnsemble:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    seed: int = 0
    streams: list = field(default_factory=list, repr=False)
    _noise: np.ndarray | None = field(default=None, repr=False)
    _noise_pos: int = field(default=0, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.shape != self.v.shape or self.x.ndim != 1:
            raise ValueError("x and v must be 1-d arrays of equal length")
        if self.x.size < 1:
            raise ValueError("ensemble must hold at least one particle")
        if self.streams and len(self.streams) != self.x.size:
            raise ValueError("need exactly one stream per particle")

    @property
    def n(self) -> int:
        return self.x.size

    def noise(self) -> np.ndarray:
        """Next standard-normal increment for every particle."""
        if not self.streams:
            raise ValueError("ensemble has no random streams")
        if self._noise is None or self._noise_pos >= self._noise.shape[0]:
            buf = np.empty((NOISE_CHUNK, self.n))
            for i, g in enumerate(self.streams):
                buf[:, i] = g.standard_normal(NOISE_CHUNK)
            self._noise, self._noise_pos = buf, 0
        xi = self._noise[self._noise_pos]
        self._noise_pos += 1
        return xi

    def permuted(self, perm) -> "ParticleEnsemble":
        perm = np.asarray(perm)
        return ParticleEnsemble(self.x[perm].copy(), self.v[perm].copy(), self.t, self.seed,
                                [self.streams[i] for i in perm])

    def clone_state(self) -> "ParticleEnsemble":
        """Same positions, no streams (driven externally)."""
        return ParticleEnsemble(self.x.copy(), self.v.copy(), self.t, self.seed)


def init_ensemble(n: int, law: InitialLaw, seed: int, trial: int = 0) -> ParticleEnsemble:
    if n < 1:
        raise ValueError("n must be >= 1")
    streams = particle_streams(n, seed, trial)
    xv = np.array([law.draw(g) for g in streams]).reshape(n, 2)
    return ParticleEnsemble(xv[:, 0].copy(), xv[:, 1].copy(), 0.0, seed, streams)


@dataclass(frozen=True)
class CouplingSpec:
    """Mean-field coupling J (all-to-all J/N) or an explicit J_ij matrix.

    ``attractive`` flips the sign of the coupling force so that it pulls each
    voltage toward the others; the canonical drift pushes them apart.
    """

    kind: str = "mean-field"
    J: float = 0.0
    matrix: np.ndarray | None = None
    attractive: bool = False

    def __post_init__(self):
        if self.kind == "mean-field":
            if not self.J >= 0:
                raise ConfigError(f"J must be >= 0, got {self.J}")
        elif self.kind == "matrix":
            m = np.asarray(self.matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ConfigError("coupling matrix must be square")
            if np.any(m < 0):
                raise ConfigError("coupling matrix entries must be >= 0")
            object.__setattr__(self, "matrix", m)
        else:
            raise ConfigError(f"unknown coupling kind {self.kind!r}")

    @classmethod
    def mean_field(cls, J: float, attractive: bool = False) -> "CouplingSpec":
        return cls("mean-field", J=J, attractive=attractive)

    @classmethod
    def from_params(cls, p: ModelParams) -> "CouplingSpec":
        return cls("mean-field", J=p.eps, attractive=p.attractive)

    @property
    def sign(self) -> float:
        return -1.0 if self.attractive else 1.0


def exact_mean(v: np.ndarray) -> float:
    # correctly rounded, hence independent of particle order
    return math.fsum(v) / v.size


def _check_finite(x, v, t):
    bad = ~(np.isfinite(x) & np.isfinite(v))
    if bad.any():
        i = int(np.argmax(bad))
        raise ParticleAbort(f"non-finite state for particle {i} at t={t:.6g} (x={x[i]}, v={v[i]})")


def voltage_drift(x, v, p: ModelParams, c: CouplingSpec) -> tuple[np.ndarray, float]:
    """Voltage drift of every particle and the coupling value used."""
    if c.kind == "mean-field":
        j = exact_mean(v)
        return sde_drift_v(x, v, j, p.replace(eps=c.J, attractive=c.attractive)), j
    Jm = c.matrix
    if Jm.shape[0] != v.size:
        raise ConfigError(f"coupling matrix is {Jm.shape}, ensemble has {v.size} particles")
    base = sde_drift_v(x, v, 0.0, p.replace(eps=0.0))
    pair = Jm.sum(axis=1) * v - Jm @ v
    return base + c.sign * pair, exact_mean(v)


def em_update(x, v, t, dt, p: ModelParams, vdrift, xi):
    """Euler-Maruyama update from the old state; returns (x, v)."""
    x_new = x + (-p.a * x + p.b * v) * dt
    v_new = v + vdrift * dt + p.sigma * math.sqrt(dt) * xi
    _check_finite(x_new, v_new, t + dt)
    return x_new, v_new


def step(ens: ParticleEnsemble, dt: float, p: ModelParams, c: CouplingSpec, xi=None) -> ParticleEnsemble:
    """One Euler-Maruyama step, in place. ``xi`` overrides the ensemble's own
    noise (used to drive two systems with the same increments)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if xi is None:
        xi = ens.noise()
    dv, _ = voltage_drift(ens.x, ens.v, p, c)
    ens.x, ens.v = em_update(ens.x, ens.v, ens.t, dt, p, dv, xi)
    ens.t += dt
    return ens


@dataclass
class Recorder:
    """Records ensemble moments every ``stride`` steps (and at the start)."""

    stride: int = 10
    snapshots: bool = False
    rows: list = field(default_factory=list)
    frames: list = field(default_factory=list)

    def __call__(self, ens: ParticleEnsemble, j: float) -> None:
        self.rows.append((ens.t, float(ens.v.mean()), float(ens.x.mean()),
                          float(ens.v.var()), float(ens.x.var()), j))
        if self.snapshots:
            self.frames.append((ens.t, ens.x.copy(), ens.v.copy()))

    def series(self):
        from .pde import TimeSeries

        return TimeSeries(PARTICLE_COLUMNS, list(self.rows))


def n_steps(T: float, dt: float) -> int:
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    return max(1, int(math.ceil(T / dt - 1e-9)))


def simulate(ens: ParticleEnsemble, T: float, dt: float, p: ModelParams, c: CouplingSpec,
             recorder: Recorder | None = None):
    """Advance to ens.t + T in ceil(T/dt) equal steps (dt shrunk to land on T)."""
    rec = recorder if recorder is not None else Recorder()
    k = n_steps(T, dt)
    h = T / k
    t0 = ens.t
    rec(ens, exact_mean(ens.v))
    for s in range(1, k + 1):
        dv, j = voltage_drift(ens.x, ens.v, p, c)
        ens.x, ens.v = em_update(ens.x, ens.v, ens.t, h, p, dv, ens.noise())
        ens.t = t0 + s * h
        if s % rec.stride == 0 or s == k:
            rec(ens, j)
    return rec.series()


def empirical_density(ens: ParticleEnsemble, grid: Grid2D) -> Density:
    """Histogram density count / (N dx dv); mass is the in-grid fraction."""
    if ens.n < 1:
        raise ValueError("empty ensemble")
    H, _, _ = np.histogram2d(ens.x, ens.v, bins=[grid.x_faces, grid.v_faces])
    inside = H.sum()
    outside = 1.0 - inside / ens.n
    if outside > 0.01:
        warnings.warn(f"{outside:.2%} of particles lie outside the grid")
    d = Density(grid, H / (ens.n * grid.cell_area), ens.t)
    d.meta["outside_fraction"] = outside
    return d


# -- propagation of chaos ----------------------------------------------------

@dataclass
class ChaosTable:
    rows: list = field(default_factory=list)  # (N, t, mse, stderr, trials)
    slope: float = float("nan")

    def column(self, name: str) -> np.ndarray:
        k = CHAOS_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows])

    def at(self, t: float) -> list:
        return [r for r in self.rows if abs(r[1] - t) < 1e-9]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(", ".join(CHAOS_COLUMNS) + "\n")
            for N, t, mse, se, tr in self.rows:
                fh.write(f"{N}, {t!r}, {mse!r}, {se!r}, {tr}\n")


def loglog_slope(ns, values) -> float:
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def _chaos_trial(args):
    n, trial, T, dt, p, c, j_of_t, seed, law, record_steps = args
    ens = init_ensemble(n, law, seed, trial)
    y = ens.clone_state()  # nonlinear copies: same initial draws
    k = n_steps(T, dt)
    h = T / k
    out = {}
    if 0 in record_steps:
        out[0.0] = 0.0
    free = p.replace(eps=0.0)
    for s in range(k):
        t = s * h
        xi = ens.noise()
        dv, _ = voltage_drift(ens.x, ens.v, p, c)
        ens.x, ens.v = em_update(ens.x, ens.v, t, h, p, dv, xi)
        jt = float(j_of_t(t))
        dvy = sde_drift_v(y.x, y.v, 0.0, free) + c.sign * c.J * (y.v - jt)
        y.x, y.v = em_update(y.x, y.v, t, h, p, dvy, xi)
        if s + 1 in record_steps:
            d = (ens.x - y.x) ** 2 + (ens.v - y.v) ** 2
            out[(s + 1) * h] = float(d.mean())
    return n, trial, out


def chaos_experiment(n_list, T: float, dt: float, trials: int, p: ModelParams, j_of_t,
                     seed: int = 0, law: InitialLaw = InitialLaw(), times=None,
                     coupling: CouplingSpec | None = None, workers: int = 1) -> ChaosTable:
    """Synchronous coupling of the particle system with N copies of the
    nonlinear SDE driven by j_of_t(t); same noise and same initial draws.

    Returns alpha(t) = E|x_i - xbar_i|^2 + |v_i - vbar_i|^2 averaged over
    particles and trials, plus the log-log slope of alpha(T) against N.
    """
    c = coupling if coupling is not None else CouplingSpec.from_params(p)
    k = n_steps(T, dt)
    h = T / k
    times = [T] if times is None else sorted(times)
    record_steps = {int(round(t / h)) for t in times}
    jobs = [(int(n), tr, T, dt, p, c, j_of_t, seed, law, record_steps)
            for n in sorted(n_list) for tr in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_chaos_trial, jobs))
    else:
        results = [_chaos_trial(j) for j in jobs]
    acc: dict = {}
    for n, _, out in results:
        for t, a in out.items():
            acc.setdefault((n, t), []).append(a)
    table = ChaosTable()
    for (n, t) in sorted(acc):
        a = np.array(acc[(n, t)])
        se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else float("nan")
        table.rows.append((n, t, float(a.mean()), se, int(a.size)))
    final = [r for r in table.rows if abs(r[1] - k * h) < 1e-9]
    if len(final) >= 2 and all(r[2] > 0 for r in final):
        table.slope = loglog_slope([r[0] for r in final], [r[2] for r in final])
    return table


@dataclass(frozen=True)
class TabulatedJ:
    """Piecewise-linear j(t) from a recorded series (picklable for workers)."""

    t: np.ndarray
    j: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.t, self.j)

    @classmethod
    def from_series(cls, series, column: str = "j_emp") -> "TabulatedJ":
        return cls(np.asarray(series["t"]), np.asarray(series[column]))
