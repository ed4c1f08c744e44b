"""Gaussian-process prior over a gridded slowness field.

The subsurface is discretized on a regular grid of square cells and the
slowness (ns/m) in each cell is modelled as a stationary Gaussian field with
an isotropic exponential kernel evaluated between cell centers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .rng_linalg import RngStream, add_jitter, cholesky, sample_mvn

__all__ = ["Grid", "GPConfig", "Field", "exp_kernel", "build_covariance", "sample_fields"]

DEFAULT_CELL_CAP = 4000


@dataclass(frozen=True)
class Grid:
    """Regular 2-D grid: ``n_rows`` depth cells by ``n_cols`` horizontal cells."""

    n_rows: int = 50
    n_cols: int = 40
    cell_size: float = 0.1

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid must have at least one cell per axis")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def width(self) -> float:
        """Horizontal extent in meters."""
        return self.n_cols * self.cell_size

    @property
    def height(self) -> float:
        """Depth extent in meters."""
        return self.n_rows * self.cell_size

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of (x, depth) centers, row-major cell order."""
        xs = (np.arange(self.n_cols) + 0.5) * self.cell_size
        zs = (np.arange(self.n_rows) + 0.5) * self.cell_size
        gx, gz = np.meshgrid(xs, zs)
        return np.column_stack([gx.ravel(), gz.ravel()])


@dataclass(frozen=True)
class GPConfig:
    """Exponential-kernel hyperparameters and constant field mean."""

    lengthscale: float = 2.5
    variance: float = 0.16
    mean: float = 0.5

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")


@dataclass
class Field:
    """A slowness image: grid plus per-cell values (ns/m), row-major."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.shape[0] != self.grid.n_cells:
            raise ValueError(
                f"field has {self.values.shape[0]} values for {self.grid.n_cells} cells"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if np.any(self.values <= 0):
            warnings.warn("field contains non-positive slowness values", stacklevel=2)

    def image(self) -> np.ndarray:
        """Values reshaped to (n_rows, n_cols)."""
        return self.values.reshape(self.grid.n_rows, self.grid.n_cols)


def exp_kernel(h, cfg: GPConfig):
    """Isotropic exponential covariance ``variance * exp(-h / lengthscale)``."""
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise ValueError("distances must be nonnegative")
    return cfg.variance * np.exp(-h / cfg.lengthscale)


def build_covariance(grid: Grid, cfg: GPConfig, cell_cap: int = DEFAULT_CELL_CAP) -> np.ndarray:
    """Dense prior covariance between all cell centers.

    Entry (i, j) is the kernel at the Euclidean distance between the centers
    of cells i and j, so the matrix is symmetric with ``variance`` on the
    diagonal.  Grids above ``cell_cap`` cells are refused: the matrix is
    dense N x N.
    """
    n = grid.n_cells
    if n > cell_cap:
        raise ValueError(f"grid has {n} cells, exceeding the cap of {cell_cap}")
    pts = grid.cell_centers()
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    cov = exp_kernel(dist, cfg)
    # force exact symmetry: dist rounding is symmetric already, but be strict
    return (cov + cov.T) / 2.0


def sample_fields(
    grid: Grid,
    cfg: GPConfig,
    n: int,
    rng: RngStream,
    jitter_rel: float = 1e-10,
) -> list[Field]:
    """Draw ``n`` prior fields ``N(mean * 1, C)`` via Cholesky.

    Fine grids make the exponential-kernel matrix numerically singular, so a
    diagonal jitter of ``jitter_rel * variance`` is applied before factoring.
    Deterministic for a given stream.
    """
    cov = build_covariance(grid, cfg)
    low = cholesky(add_jitter(cov, rel=jitter_rel))
    mean = np.full(grid.n_cells, cfg.mean)
    draws = sample_mvn(mean, low, n, rng)
    n_bad = int(np.sum(np.any(draws <= 0, axis=1)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fields = [Field(grid, row) for row in draws]
    if n_bad:
        # Gaussian tails can dip below zero; aggregate to one warning per call
        warnings.warn(
            f"{n_bad} of {n} sampled fields contain non-positive slowness cells",
            stacklevel=2,
        )
    return fields
