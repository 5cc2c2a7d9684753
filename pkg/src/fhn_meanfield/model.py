"""Coefficients, drift fields, weights and the mean-voltage functional.

Sign convention: the mean-field equation is

    d_t f = d_x(A f) + d_v(B f) + D d_vv f,   D = sigma^2 / 2,

with A = a x - b v and B = v (v - lam)(v - 1) + x - eps (v - j) + i0.
A particle therefore moves with velocity (-A, -B); every simulation in the
package uses ``sde_drift_v`` (= -B) so particles and densities agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# exp(LOG_WEIGHT_CAP) ~ 1e300; weighted quadratures drop cells beyond it.
LOG_WEIGHT_CAP = 300.0 * math.log(10.0)


class ConfigError(ValueError):
    """Invalid model, grid or run configuration."""


@dataclass(frozen=True)
class ModelParams:
    a: float = 1.0
    b: float = 1.0
    lam: float = 0.2
    i0: float = 0.0
    eps: float = 0.0
    sigma: float = math.sqrt(2.0)
    # reproduce the literal particle equation (input current enters with the
    # opposite sign to the mean-field drift)
    paper_sde_signs: bool = False
    # flip the coupling force so it pulls voltages toward the mean
    # (B gets +eps (v - j)); the canonical drift pushes them apart
    attractive: bool = False

    def __post_init__(self):
        for name in ("a", "b", "lam", "i0", "eps", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.a <= 0:
            raise ConfigError(f"a must be > 0, got {self.a}")
        if self.b <= 0:
            raise ConfigError(f"b must be > 0, got {self.b}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.eps < 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")

    @property
    def diffusion(self) -> float:
        return 0.5 * self.sigma**2

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class WeightParams:
    kappa: float = 0.5

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be > 0, got {self.kappa}")

    @property
    def clip_radius(self) -> float:
        """Radius sqrt(x^2 + v^2) beyond which m exceeds ~1e300."""
        return math.sqrt(2.0 * LOG_WEIGHT_CAP / self.kappa)


def drift_A(x, v, p: ModelParams):
    return p.a * x - p.b * v


def cubic(v, lam):
    return v * (v - lam) * (v - 1.0)


def drift_B(x, v, j, p: ModelParams):
    sign = -1.0 if p.attractive else 1.0
    return cubic(v, p.lam) + x - sign * p.eps * (v - j) + p.i0


def sde_drift_x(x, v, p: ModelParams):
    return -drift_A(x, v, p)


def sde_drift_v(x, v, j, p: ModelParams):
    """Voltage drift of a single neuron, i.e. -B."""
    if p.paper_sde_signs:
        return -drift_B(x, v, j, p.replace(i0=-p.i0, paper_sde_signs=False))
    return -drift_B(x, v, j, p)


def weight_M(x, v):
    return 1.0 + 0.5 * np.square(x) + 0.5 * np.square(v)


def log_weight_m(x, v, w: WeightParams):
    return w.kappa * (weight_M(x, v) - 1.0)


def weight_m(x, v, w: WeightParams):
    """exp(kappa (M - 1)). Overflows to inf past ``w.clip_radius``; callers
    that multiply by m should work with ``log_weight_m`` there."""
    with np.errstate(over="ignore"):
        return np.exp(log_weight_m(x, v, w))


def mean_voltage(obj) -> float:
    """Mean voltage of a grid density (normalized by its mass) or of an
    ensemble of particles."""
    if hasattr(obj, "values") and hasattr(obj, "grid"):
        g = obj.grid
        mass = float(obj.values.sum()) * g.cell_area
        if not mass > 0:
            raise ValueError("degenerate density: mass must be positive")
        # v-marginal first, then one dot product
        return float(obj.values.sum(axis=0) @ g.v) * g.cell_area / mass
    v = np.asarray(obj.v)
    if v.size == 0:
        raise ValueError("degenerate density: empty ensemble")
    return float(v.mean())


@dataclass(frozen=True)
class FixedPoint:
    x: float
    v: float
    kind: str  # 'stable' | 'unstable' | 'saddle' | 'center'
    eigenvalues: tuple = field(default=(), compare=False)


def _jacobian(v, p: ModelParams):
    # noiseless system: x' = -a x + b v, v' = -(cubic(v) + x + i0)
    dc = 3 * v**2 - 2 * (1 + p.lam) * v + p.lam
    return np.array([[-p.a, p.b], [-1.0, -dc]])


def _classify(eigs) -> str:
    re = np.real(eigs)
    tol = 1e-12
    if np.all(re < -tol):
        return "stable"
    if np.all(re > tol):
        return "unstable"
    if np.any(re > tol) and np.any(re < -tol):
        return "saddle"
    return "center"


def deterministic_fixed_points(p: ModelParams) -> list[FixedPoint]:
    """Equilibria of the noiseless, uncoupled system, sorted by voltage.

    The voltages are the real roots of v (v - lam)(v - 1) + (b/a) v + i0 = 0
    (input sign flipped under ``paper_sde_signs``), with x = (b/a) v.
    """
    i0 = -p.i0 if p.paper_sde_signs else p.i0
    r = p.b / p.a
    coeffs = [1.0, -(1.0 + p.lam), p.lam + r, i0]
    roots = np.roots(coeffs)
    scale = 1.0 + np.max(np.abs(roots))
    real = sorted(float(z.real) for z in roots if abs(z.imag) <= 1e-7 * scale)
    poly = np.poly1d(coeffs)
    dpoly = poly.deriv()
    out: list[FixedPoint] = []
    for v in real:
        for _ in range(3):  # Newton polish
            d = dpoly(v)
            if d == 0:
                break
            v -= poly(v) / d
        if out and abs(v - out[-1].v) < 1e-9 * scale:
            continue
        eigs = np.linalg.eigvals(_jacobian(v, p.replace(i0=i0)))
        out.append(FixedPoint(x=r * v, v=v, kind=_classify(eigs), eigenvalues=tuple(eigs)))
    return out


def stable_voltages(p: ModelParams) -> list[float]:
    return [fp.v for fp in deterministic_fixed_points(p) if fp.kind == "stable"]
