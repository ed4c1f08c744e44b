"""Seeded random streams and the dense SPD linear-algebra kernels.

Every randomized stage of the toolkit draws from an :class:`RngStream`, a
value-type handle on a counter-based (Philox) generator.  Streams are never
shared mutably: consumers split child streams instead, which keeps parallel
pipelines bit-reproducible.

The linear-algebra kernels are thin, strict wrappers around LAPACK: Cholesky
with no pivoting and no silent jitter (SPD failure is an error carrying the
failing pivot), SPD solves through the factor, and multivariate-normal
sampling from a precomputed factor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf

__all__ = [
    "RngStream",
    "NotPositiveDefiniteError",
    "cholesky",
    "solve_spd",
    "sample_mvn",
    "add_jitter",
    "save_array",
    "load_array",
]


class NotPositiveDefiniteError(ValueError):
    """Cholesky failure; ``pivot`` is the 0-based index of the bad pivot."""

    def __init__(self, pivot: int):
        self.pivot = int(pivot)
        super().__init__(f"not positive definite: pivot {self.pivot} is not positive")


@dataclass(frozen=True)
class RngStream:
    """Reproducible, splittable random stream.

    Identical ``(seed, stream_id, path)`` values always yield bit-identical
    draw sequences; distinct values yield statistically independent streams.
    The dataclass is frozen so a stream can be passed around freely --
    consumers derive children with :meth:`split` rather than mutating state.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")
        if not (0 <= int(self.stream_id) < 2**64):
            raise ValueError("stream_id must fit in 64 bits")

    def split(self, *keys: int) -> "RngStream":
        """Derive an independent child stream keyed by ``keys``."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self) -> Generator:
        """Fresh Philox generator positioned at the start of this stream."""
        ss = SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),) + self.path)
        return Generator(Philox(seed=ss))


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def cholesky(m, sym_tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix.

    Args:
        m: square matrix, symmetric to within ``sym_tol`` (relative).
        sym_tol: relative symmetry tolerance.

    Returns:
        Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises:
        NotPositiveDefiniteError: if a pivot is non-positive.
        ValueError: on asymmetry or malformed input.
    """
    a = _as_matrix(m)
    scale = max(float(np.max(np.abs(a))), 1.0)
    if float(np.max(np.abs(a - a.T))) > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    c, info = dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    return c


def add_jitter(m: np.ndarray, rel: float = 1e-10) -> np.ndarray:
    """Copy of ``m`` with ``rel * trace/n`` added to the diagonal.

    Near-singular covariance matrices (fine-grid exponential kernels) need
    this before factoring; plain :func:`cholesky` never jitters on its own.
    """
    a = _as_matrix(m)
    out = a.copy()
    out[np.diag_indices_from(out)] += rel * np.trace(a) / a.shape[0]
    return out


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``m @ x = rhs`` for SPD ``m`` via its Cholesky factor.

    ``rhs`` may be a vector or a matrix of stacked right-hand sides.
    """
    low = cholesky(m)
    return solve_spd_factored(low, rhs)


def solve_spd_factored(chol_lower: np.ndarray, rhs) -> np.ndarray:
    """Solve using an already-computed lower Cholesky factor."""
    b = np.asarray(rhs, dtype=np.float64)
    if b.shape[0] != chol_lower.shape[0]:
        raise ValueError(
            f"dimension mismatch: factor is {chol_lower.shape[0]}, rhs has {b.shape[0]} rows"
        )
    y = solve_triangular(chol_lower, b, lower=True)
    return solve_triangular(chol_lower, y, lower=True, trans="T")


def sample_mvn(mean, chol_lower, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` samples of ``N(mean, L @ L.T)`` given the lower factor ``L``.

    Returns an ``(n, d)`` array: ``mean + (L @ u).T`` with ``u`` i.i.d.
    standard normal, deterministic for a given stream.
    """
    mu = np.asarray(mean, dtype=np.float64).ravel()
    low = np.asarray(chol_lower, dtype=np.float64)
    d = low.shape[0]
    if mu.shape[0] != d:
        raise ValueError(f"dimension mismatch: mean has {mu.shape[0]}, factor has {d}")
    u = rng.generator().standard_normal((d, int(n)))
    return mu[None, :] + (low @ u).T


# --- flat array artifacts: raw little-endian f64 + JSON sidecar ---


def save_array(path: str, arr, provenance: dict | None = None) -> None:
    """Write ``arr`` as raw little-endian float64 plus a ``.json`` sidecar."""
    a = np.ascontiguousarray(np.asarray(arr), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(a.tobytes(order="C"))
    sidecar = {"shape": list(a.shape), "dtype": "f64", "order": "row-major"}
    if provenance is not None:
        sidecar["provenance"] = provenance
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_array(path: str) -> np.ndarray:
    """Read an array written by :func:`save_array`."""
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    if sidecar.get("dtype") != "f64" or sidecar.get("order") != "row-major":
        raise ValueError(f"unsupported array artifact header: {sidecar}")
    shape = tuple(int(s) for s in sidecar["shape"])
    n = int(np.prod(shape)) if shape else 1
    expected = n * 8
    size = os.path.getsize(path)
    if size != expected:
        raise ValueError(f"array file {path} has {size} bytes, header implies {expected}")
    data = np.fromfile(path, dtype="<f8")
    return data.reshape(shape)
