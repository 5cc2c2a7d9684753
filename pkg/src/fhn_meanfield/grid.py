"""Truncated (x, v) rectangle with cell-centered densities."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .model import ConfigError


@dataclass(frozen=True)
class Grid2D:
    x_min: float = -4.0
    x_max: float = 4.0
    v_min: float = -3.0
    v_max: float = 3.5
    nx: int = 128
    nv: int = 128

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ConfigError("grid needs x_min < x_max")
        if not self.v_min < self.v_max:
            raise ConfigError("grid needs v_min < v_max")
        if self.nx < 4 or self.nv < 4:
            raise ConfigError("grid needs nx >= 4 and nv >= 4")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dv(self) -> float:
        return (self.v_max - self.v_min) / self.nv

    @property
    def cell_area(self) -> float:
        return self.dx * self.dv

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nv)

    @property
    def size(self) -> int:
        return self.nx * self.nv

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def v(self) -> np.ndarray:
        return self.v_min + (np.arange(self.nv) + 0.5) * self.dv

    @cached_property
    def x_faces(self) -> np.ndarray:
        return self.x_min + np.arange(self.nx + 1) * self.dx

    @cached_property
    def v_faces(self) -> np.ndarray:
        return self.v_min + np.arange(self.nv + 1) * self.dv

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates, each of shape (nx, nv)."""
        return np.meshgrid(self.x, self.v, indexing="ij")

    def refined(self, factor: int = 2) -> "Grid2D":
        return Grid2D(self.x_min, self.x_max, self.v_min, self.v_max,
                      self.nx * factor, self.nv * factor)

    def contains(self, x, v) -> np.ndarray:
        x = np.asarray(x)
        v = np.asarray(v)
        return (x >= self.x_min) & (x < self.x_max) & (v >= self.v_min) & (v < self.v_max)


@dataclass
class Density:
    """Cell averages f[i, k] over x-cell i and v-cell k."""

    grid: Grid2D
    values: np.ndarray
    t: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def mass(self) -> float:
        return float(self.values.sum()) * self.grid.cell_area

    def normalized(self) -> "Density":
        m = self.mass()
        if not m > 0:
            raise ValueError("degenerate density: mass must be positive")
        return Density(self.grid, self.values / m, self.t)

    def copy(self) -> "Density":
        return Density(self.grid, self.values.copy(), self.t)

    def moments(self) -> dict[str, float]:
        g = self.grid
        mass = self.mass()
        px = self.values.sum(axis=1) * g.cell_area / mass
        pv = self.values.sum(axis=0) * g.cell_area / mass
        mx, mv = px @ g.x, pv @ g.v
        return {
            "mean_x": float(mx),
            "mean_v": float(mv),
            "var_x": float(px @ (g.x - mx) ** 2),
            "var_v": float(pv @ (g.v - mv) ** 2),
        }

    def l1_distance(self, other: "Density") -> float:
        return float(np.abs(self.values - other.values).sum()) * self.grid.cell_area

    @classmethod
    def from_function(cls, grid: Grid2D, fn, normalize: bool = True) -> "Density":
        X, V = grid.mesh
        d = cls(grid, fn(X, V))
        return d.normalized() if normalize else d

    @classmethod
    def gaussian(cls, grid: Grid2D, mean=(0.0, 0.0), cov=((0.25, 0.0), (0.0, 0.25))) -> "Density":
        cov = np.asarray(cov, dtype=float)
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ConfigError("covariance must be positive definite")
        inv = np.linalg.inv(cov)
        mx, mv = mean

        def fn(X, V):
            dx, dv = X - mx, V - mv
            q = inv[0, 0] * dx**2 + 2 * inv[0, 1] * dx * dv + inv[1, 1] * dv**2
            return np.exp(-0.5 * q)

        return cls.from_function(grid, fn)

    @classmethod
    def uniform(cls, grid: Grid2D) -> "Density":
        return cls(grid, np.full(grid.shape, 1.0 / (grid.size * grid.cell_area)))

    # -- file format -------------------------------------------------------
    def save(self, path) -> None:
        g = self.grid
        header = (f"fhn-density {g.nx} {g.nv} {g.x_min!r} {g.x_max!r} "
                  f"{g.v_min!r} {g.v_max!r} {self.t!r}")
        np.savetxt(path, self.values, fmt="%.17g", header=header, comments="# ")

    @classmethod
    def load(cls, path, renormalize: bool = True) -> "Density":
        path = Path(path)
        with path.open() as fh:
            first = fh.readline().split()
        if len(first) != 9 or first[:2] != ["#", "fhn-density"]:
            raise ValueError(f"{path}: not an fhn-density file")
        nx, nv = int(first[2]), int(first[3])
        x_min, x_max, v_min, v_max, t = map(float, first[4:])
        values = np.loadtxt(path, comments="#", ndmin=2)
        grid = Grid2D(x_min, x_max, v_min, v_max, nx, nv)
        d = cls(grid, values.reshape(nx, nv), t)
        if renormalize and abs(d.mass() - 1.0) > 1e-6:
            warnings.warn(f"{path}: mass {d.mass():.8g} renormalized to 1")
            d = d.normalized()
            d.t = t
        return d
