"""Probability-content diagnostics and evaluation metrics.

A single deep subset-simulation run induces an estimate of the prior mass of
the tolerance region at *every* tested tolerance, not just the final one: the
per-level populations restrict the estimator piecewise.  The log of that
curve, smoothed, carries two readable features -- where the run stagnates
(close to the squared noise floor) and where the curve bends hardest, which
is where the tolerance should be set.  The rest of this module is the metric
toolbox used to audit solutions: RMSE pairings, debiased transport
divergences against reference ensembles, and resimulation checks through the
true forward operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .sinkhorn import SinkhornConfig, cost_matrix, entropic_ot, _plain_entropic_ot
from .subsim import SubSimTrace
from .tomography import RayMatrix, forward

__all__ = [
    "ThresholdCurve",
    "MetricsReport",
    "default_eps_grid",
    "normalize_eps",
    "probability_curve",
    "smooth_log_curve",
    "curvature",
    "select_threshold",
    "analyze_curve",
    "rmse",
    "rmse_batch",
    "wasserstein_diagnostics",
    "resimulation_report",
    "curve_to_csv",
    "curve_summary",
]


def default_eps_grid(eps_min: float = 0.01, eps_max: float = 3000.0, count: int = 60) -> np.ndarray:
    """Log-spaced squared-tolerance grid (ns^2)."""
    if not (0 < eps_min < eps_max) or count < 2:
        raise ValueError("need 0 < eps_min < eps_max and at least two grid points")
    return np.geomspace(eps_min, eps_max, count)


def normalize_eps(eps, n_obs: int):
    """Map a squared tolerance (ns^2) to a per-measurement scale (ns)."""
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps < 0) or n_obs < 1:
        raise ValueError("eps must be nonnegative and n_obs at least 1")
    return np.sqrt(eps / n_obs)


@dataclass
class ThresholdCurve:
    """Probability-content curve on the reached part of a tolerance grid."""

    eps: np.ndarray
    eps_n: np.ndarray
    log_p: np.ndarray
    smoothed: np.ndarray | None = None
    curvature: np.ndarray | None = None
    selected_eps_n: float | None = None
    stagnation_eps_n: float | None = None
    selected_index: int | None = None


def probability_curve(
    trace: SubSimTrace, n_obs: int, eps_grid: np.ndarray | None = None
) -> ThresholdCurve:
    """Piecewise probability estimate over a whole tolerance grid.

    For a tolerance t between two consecutive level thresholds, the level
    population just above it estimates the conditional mass below t, and the
    level factor alpha^j accounts for the mass of that population's own
    region.  Grid points below everything the run reached are dropped.
    """
    if not trace.level_dissimilarities:
        raise ValueError("empty trace")
    grid = default_eps_grid() if eps_grid is None else np.asarray(eps_grid, dtype=np.float64)
    alpha = trace.config.level_fraction
    n = trace.config.n_particles
    thresholds = np.array([lvl.threshold for lvl in trace.levels])
    pops = trace.level_dissimilarities

    p = np.empty(grid.size)
    for i, t in enumerate(grid):
        j = int(np.count_nonzero(thresholds > t))
        p[i] = alpha**j * np.count_nonzero(pops[j] <= t) / n
    reached = p > 0
    if not np.any(reached):
        raise ValueError("no grid point is reached by the run")
    return ThresholdCurve(
        eps=grid[reached],
        eps_n=normalize_eps(grid[reached], n_obs),
        log_p=np.log10(p[reached]),
    )


def _local_quadratic(x: np.ndarray, y: np.ndarray, window: int):
    """Moving local least-squares quadratic: (value, slope, second derivative)."""
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and at least 3")
    n = x.size
    if n < window:
        raise ValueError(f"curve has {n} points, fewer than window {window}")
    half = window // 2
    val = np.empty(n)
    d1 = np.empty(n)
    d2 = np.empty(n)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        t = x[lo:hi] - x[i]
        deg = min(2, t.size - 1)
        design = np.vander(t, deg + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(design, y[lo:hi], rcond=None)
        val[i] = coef[0]
        d1[i] = coef[1] if deg >= 1 else 0.0
        d2[i] = 2.0 * coef[2] if deg >= 2 else 0.0
    return val, d1, d2


def smooth_log_curve(curve: ThresholdCurve, window: int = 9) -> np.ndarray:
    """Local-quadratic smoothing of log10 p over the normalized-tolerance axis.

    Endpoints fall back to shrunken one-sided windows, so a curve that is
    exactly quadratic passes through unchanged.
    """
    val, _, _ = _local_quadratic(curve.eps_n, curve.log_p, window)
    return val


def curvature(curve: ThresholdCurve, window: int = 9) -> np.ndarray:
    """|f''| / (1 + f'^2)^(3/2) of the smoothed curve against eps_n."""
    if curve.smoothed is None:
        raise ValueError("smooth the curve before computing curvature")
    _, d1, d2 = _local_quadratic(curve.eps_n, curve.smoothed, window)
    return np.abs(d2) / np.power(1.0 + d1 * d1, 1.5)


def select_threshold(curve: ThresholdCurve) -> tuple[float, float]:
    """Pick the knee of the probability-content curve.

    The stagnation point is the smallest reached grid value; the selection is
    the curvature argmax strictly above it, ties broken toward larger
    tolerances.

    Raises:
        ValueError: if the curve has no usable curvature peak.
    """
    if curve.curvature is None:
        raise ValueError("compute curvature before selecting a threshold")
    stagnation = float(curve.eps_n[0])
    cand = curve.curvature[1:]
    if cand.size == 0:
        raise ValueError("no curvature peak: curve has a single reached point")
    x_range = float(curve.eps_n[-1] - curve.eps_n[0])
    y_range = float(np.max(curve.smoothed) - np.min(curve.smoothed))
    flat_tol = 1e-8 * (y_range / max(x_range, 1e-300) ** 2 + 1e-300)
    if float(np.max(cand)) <= flat_tol:
        raise ValueError("no curvature peak: curve is flat or affine")
    # argmax with ties toward the larger tolerance
    rev = cand[::-1]
    idx = cand.size - 1 - int(np.argmax(rev)) + 1
    curve.selected_index = idx
    curve.selected_eps_n = float(curve.eps_n[idx])
    curve.stagnation_eps_n = stagnation
    return curve.selected_eps_n, stagnation


def analyze_curve(curve: ThresholdCurve, window: int = 9) -> ThresholdCurve:
    """Smooth, differentiate and select in one pass (mutates and returns)."""
    curve.smoothed = smooth_log_curve(curve, window)
    curve.curvature = curvature(curve, window)
    select_threshold(curve)
    return curve


def rmse(v1, v2) -> float:
    """Root mean squared difference of two equal-length vectors."""
    a = np.asarray(v1, dtype=np.float64).ravel()
    b = np.asarray(v2, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_batch(samples: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-row RMSE of a sample batch against one reference vector."""
    samples = np.atleast_2d(samples)
    reference = np.asarray(reference, dtype=np.float64).ravel()
    if samples.shape[1] != reference.size:
        raise ValueError(f"length mismatch: {samples.shape[1]} vs {reference.size}")
    return np.sqrt(np.mean((samples - reference[None, :]) ** 2, axis=1))


def wasserstein_diagnostics(
    solutions: np.ndarray,
    references: dict[str, np.ndarray],
    ot_cfg: SinkhornConfig | None = None,
) -> dict[str, float]:
    """Debiased transport divergence of the solutions against each reference.

    References are point clouds in the flattened field space; a single
    vector is treated as a Dirac (one repeated point).  The solutions'
    self-transport term is computed once and shared.
    """
    cfg = replace(ot_cfg or SinkhornConfig(), debiased=False)
    sols = np.atleast_2d(np.asarray(solutions, dtype=np.float64))
    if not references:
        raise ValueError("need at least one reference ensemble")
    self_s = _plain_entropic_ot(cost_matrix(sols, sols, cfg.p), cfg, False).cost
    out = {}
    for name, ref in references.items():
        ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
        cross = _plain_entropic_ot(cost_matrix(sols, ref, cfg.p), cfg, False).cost
        self_r = _plain_entropic_ot(cost_matrix(ref, ref, cfg.p), cfg, False).cost
        out[name] = cross - 0.5 * self_s - 0.5 * self_r
    return out


def resimulation_report(
    solutions_x: np.ndarray,
    model_ys: np.ndarray,
    a: RayMatrix,
    y_obs: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Push solutions through the true forward operator and audit both gaps.

    Returns per-sample RMSE of the resimulated travel times against the
    generator's travel times (generator fidelity) and against the observed
    vector (noise-level consistency).
    """
    solutions_x = np.atleast_2d(solutions_x)
    model_ys = np.atleast_2d(model_ys)
    if solutions_x.shape[0] != model_ys.shape[0]:
        raise ValueError("solutions and generated travel times are misaligned")
    y_r = forward(a, solutions_x)
    rmse_model = np.sqrt(np.mean((y_r - model_ys) ** 2, axis=1))
    rmse_obs = rmse_batch(y_r, y_obs)
    return rmse_model, rmse_obs


@dataclass
class MetricsReport:
    """Per-sample metric vectors for one inversion."""

    rmse_solutions_truth: np.ndarray | None = None
    rmse_posterior_truth: np.ndarray | None = None
    rmse_prior_truth: np.ndarray | None = None
    rmse_train_truth: np.ndarray | None = None
    resim_rmse_model: np.ndarray | None = None
    resim_rmse_obs: np.ndarray | None = None
    wasserstein_by_eps: list = field(default_factory=list)  # (eps_n, {name: value})

    _FIELDS = (
        "rmse_solutions_truth",
        "rmse_posterior_truth",
        "rmse_prior_truth",
        "rmse_train_truth",
        "resim_rmse_model",
        "resim_rmse_obs",
    )

    def summary(self) -> dict:
        out = {}
        for name in self._FIELDS:
            v = getattr(self, name)
            if v is not None:
                out[f"median_{name}"] = float(np.median(v))
        return out

    def to_csv(self, path: str) -> None:
        cols = [(name, getattr(self, name)) for name in self._FIELDS]
        present = [(n, np.asarray(v)) for n, v in cols if v is not None]
        if not present:
            raise ValueError("metrics report is empty")
        n_rows = max(v.size for _, v in present)
        with open(path, "w") as fh:
            fh.write("sample," + ",".join(n for n, _ in present) + "\n")
            for i in range(n_rows):
                cells = [f"{float(v[i])!r}" if i < v.size else "" for _, v in present]
                fh.write(f"{i}," + ",".join(cells) + "\n")


def curve_to_csv(curve: ThresholdCurve, path: str) -> None:
    """One row per reached grid point."""
    with open(path, "w") as fh:
        fh.write("eps,eps_n,log10_p,smoothed,curvature\n")
        for i in range(curve.eps.size):
            sm = f"{float(curve.smoothed[i])!r}" if curve.smoothed is not None else ""
            ka = f"{float(curve.curvature[i])!r}" if curve.curvature is not None else ""
            fh.write(
                f"{float(curve.eps[i])!r},{float(curve.eps_n[i])!r},"
                f"{float(curve.log_p[i])!r},{sm},{ka}\n"
            )


def curve_summary(curve: ThresholdCurve) -> dict:
    """The JSON-ready selection summary."""
    out = {
        "selected_eps_n": curve.selected_eps_n,
        "stagnation_eps_n": curve.stagnation_eps_n,
        "p_hat_at_selected": None,
    }
    if curve.selected_index is not None:
        out["p_hat_at_selected"] = float(10.0 ** curve.log_p[curve.selected_index])
    return out
