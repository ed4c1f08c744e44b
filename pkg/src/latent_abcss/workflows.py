"""End-to-end pipeline stages over declared file artifacts.

Each stage is a pure function of (config, input artifacts, seeds): data
generation, model training, a full inversion with tolerance selection, and
cross-inversion aggregation.  The CLI wraps these; tests and demo scripts
call them directly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analytic_posterior import GaussianDist, linear_gaussian_posterior, posterior_sample
from .diagnostics import (
    MetricsReport,
    ThresholdCurve,
    analyze_curve,
    curve_summary,
    curve_to_csv,
    default_eps_grid,
    normalize_eps,
    probability_curve,
    resimulation_report,
    rmse_batch,
    wasserstein_diagnostics,
)
from .gp_prior import GPConfig, Grid, build_covariance, sample_fields
from .jgnn import JGNNModel, TrainConfig, g1_of_latent, g2_of_latent, load_model, save_model, train
from .rng_linalg import RngStream, add_jitter, load_array, save_array
from .sinkhorn import SinkhornConfig
from .subsim import SubSimConfig, posterior_solutions, save_trace, subsim_run
from .tomography import (
    assemble_matrix,
    build_geometry,
    forward,
    load_ray_matrix,
    save_ray_matrix,
)

__all__ = [
    "ConfigError",
    "DiagnosticFailure",
    "PipelineConfig",
    "generate_dataset",
    "train_from_dataset",
    "run_inversion",
    "invert_artifacts",
    "evaluate_runs",
    "compute_oracle_posterior",
]


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


class DiagnosticFailure(RuntimeError):
    """The threshold diagnostic could not pick a tolerance; artifacts exist."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a full run needs, JSON-round-trippable."""

    seed: int = 0
    grid: Grid = field(default_factory=Grid)
    gp: GPConfig = field(default_factory=GPConfig)
    n_src: int = 9
    n_rcv: int = 9
    depth_min: float = 0.5
    depth_max: float = 4.5
    separation: float = 3.9
    noise_std: float = 0.5
    train_size: int = 1000
    test_size: int = 40
    latent_dim: int = 10
    hidden: tuple = (512, 512)
    epochs: int = 5000
    batch_size: int = 128
    lambda0: float = 150.0
    lambda_halving_period: int = 500
    lr: float = 0.001
    val_fraction: float = 0.1
    sinkhorn_reg: float = 10.0
    sinkhorn_max_iter: int = 40
    sinkhorn_tol: float = 0.0
    n_particles: int = 1000
    level_fraction: float = 0.1
    max_levels: int = 30
    proposal_scale: float = 0.5
    eps_min: float = 0.01
    eps_max: float = 3000.0
    eps_count: int = 60
    eps_spacing: str = "log"
    smoothing_window: int = 9
    diag_reg: float = 10.0
    diag_max_iter: int = 300
    diag_tol: float = 1e-7
    diag_subsample: int = 400

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        try:
            kwargs = dict(doc)
            if "grid" in kwargs:
                kwargs["grid"] = Grid(**kwargs["grid"])
            if "gp" in kwargs:
                kwargs["gp"] = GPConfig(**kwargs["gp"])
            if "hidden" in kwargs:
                kwargs["hidden"] = tuple(int(h) for h in kwargs["hidden"])
            cfg = cls(**kwargs)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad pipeline config: {err}") from err
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str) -> "PipelineConfig":
        if not os.path.exists(path):
            raise ConfigError(f"missing config file: {path}")
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"config {path} is not valid JSON: {err}") from err
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, Grid):
                value = {"n_rows": value.n_rows, "n_cols": value.n_cols, "cell_size": value.cell_size}
            elif isinstance(value, GPConfig):
                value = {"lengthscale": value.lengthscale, "variance": value.variance, "mean": value.mean}
            elif isinstance(value, tuple):
                value = list(value)
            doc[name] = value
        return doc

    def validate(self) -> None:
        try:
            self.geometry()
            self.train_config()
            self.eps_grid()
            if self.noise_std < 0:
                raise ValueError("noise_std must be nonnegative")
            if min(self.train_size, self.test_size, self.latent_dim) < 1:
                raise ValueError("train_size, test_size, latent_dim must be positive")
            SubSimConfig(
                target_eps=self.eps_min,
                n_particles=self.n_particles,
                level_fraction=self.level_fraction,
                max_levels=self.max_levels,
                proposal_scale=self.proposal_scale,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def geometry(self):
        return build_geometry(
            self.grid, self.n_src, self.n_rcv, self.depth_min, self.depth_max, self.separation
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lambda0=self.lambda0,
            lambda_halving_period=self.lambda_halving_period,
            sinkhorn=SinkhornConfig(
                reg=self.sinkhorn_reg, max_iter=self.sinkhorn_max_iter, tol=self.sinkhorn_tol
            ),
            lr=self.lr,
            val_fraction=self.val_fraction,
            seed=self.seed,
        )

    def subsim_config(self, target_eps: float) -> SubSimConfig:
        return SubSimConfig(
            target_eps=target_eps,
            n_particles=self.n_particles,
            level_fraction=self.level_fraction,
            max_levels=self.max_levels,
            proposal_scale=self.proposal_scale,
        )

    def eps_grid(self) -> np.ndarray:
        if self.eps_spacing == "log":
            return default_eps_grid(self.eps_min, self.eps_max, self.eps_count)
        if self.eps_spacing == "lin":
            if not (0 < self.eps_min < self.eps_max) or self.eps_count < 2:
                raise ValueError("bad linear eps grid")
            return np.linspace(self.eps_min, self.eps_max, self.eps_count)
        raise ValueError(f"unknown eps_spacing {self.eps_spacing!r}")

    def diag_ot_config(self) -> SinkhornConfig:
        return SinkhornConfig(
            reg=self.diag_reg, max_iter=self.diag_max_iter, debiased=True, tol=self.diag_tol
        )

    def provenance(self, command: str) -> dict:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return {
            "command": command,
            "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
            "seed": self.seed,
            "version": __version__,
        }


def _require(paths: list[str]) -> None:
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise ConfigError("missing artifacts: " + ", ".join(missing))


def generate_dataset(cfg: PipelineConfig, out_dir: str) -> dict:
    """Sample couples from the prior and the forward map; write artifacts.

    Training and test travel times are noise free: observation noise is
    added only when an inversion target is assembled.
    """
    os.makedirs(out_dir, exist_ok=True)
    prov = cfg.provenance("gendata")
    geom = cfg.geometry()
    a = assemble_matrix(cfg.grid, geom)
    rng = RngStream(cfg.seed, stream_id=1)

    train_fields = sample_fields(cfg.grid, cfg.gp, cfg.train_size, rng.split(0))
    test_fields = sample_fields(cfg.grid, cfg.gp, cfg.test_size, rng.split(1))
    train_x = np.stack([f.values for f in train_fields])
    test_x = np.stack([f.values for f in test_fields])
    train_y = forward(a, train_x)
    test_y = forward(a, test_x)

    files = {
        "train_x": "train_x.f64",
        "train_y": "train_y.f64",
        "test_x": "test_x.f64",
        "test_y": "test_y.f64",
        "ray_matrix": "ray_matrix.bin",
    }
    save_array(os.path.join(out_dir, files["train_x"]), train_x, prov)
    save_array(os.path.join(out_dir, files["train_y"]), train_y, prov)
    save_array(os.path.join(out_dir, files["test_x"]), test_x, prov)
    save_array(os.path.join(out_dir, files["test_y"]), test_y, prov)
    save_ray_matrix(os.path.join(out_dir, files["ray_matrix"]), a, prov)

    manifest = {
        "files": files,
        "config": cfg.to_dict(),
        "n_train": cfg.train_size,
        "n_test": cfg.test_size,
        "n_rays": a.n_rays,
        "n_cells": a.n_cells,
        "provenance": prov,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def _load_dataset(dataset_dir: str):
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    _require([manifest_path])
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    files = manifest["files"]
    paths = {k: os.path.join(dataset_dir, v) for k, v in files.items()}
    _require([paths["train_x"], paths["train_y"], paths["ray_matrix"] + ".json"])
    data = {
        "train_x": load_array(paths["train_x"]),
        "train_y": load_array(paths["train_y"]),
        "ray_matrix": load_ray_matrix(paths["ray_matrix"]),
        "manifest": manifest,
    }
    for key in ("test_x", "test_y"):
        if os.path.exists(paths[key]):
            data[key] = load_array(paths[key])
    return data


def train_from_dataset(cfg: PipelineConfig, dataset_dir: str, out_dir: str) -> str:
    """Train the joint model on a generated dataset; write checkpoint + history."""
    os.makedirs(out_dir, exist_ok=True)
    data = _load_dataset(dataset_dir)
    xs, ys = data["train_x"], data["train_y"]
    model = JGNNModel.init(
        xs.shape[1], ys.shape[1], cfg.latent_dim, RngStream(cfg.seed, stream_id=2), hidden=cfg.hidden
    )
    best, history = train(xs, ys, model, cfg.train_config())
    ckpt = os.path.join(out_dir, "model.ckpt")
    best_epoch = int(np.argmin(np.asarray(history.val_mse_x) + np.asarray(history.val_mse_y)))
    save_model(ckpt, best, extra={"provenance": cfg.provenance("train"), "best_epoch": best_epoch})
    history.to_csv(os.path.join(out_dir, "history.csv"))
    return ckpt


@dataclass
class InversionResult:
    """In-memory product of one inversion."""

    deep_trace: object
    curve: ThresholdCurve
    selected_eps_n: float
    stagnation_eps_n: float
    final_trace: object
    solutions_latent: np.ndarray
    solutions_x: np.ndarray
    solutions_y: np.ndarray
    metrics: MetricsReport
    summary: dict


def run_inversion(
    model: JGNNModel,
    a,
    y_obs: np.ndarray,
    cfg: PipelineConfig,
    rng: RngStream,
    truth: np.ndarray | None = None,
    oracle: bool = False,
    train_x: np.ndarray | None = None,
) -> InversionResult:
    """Deep run, tolerance selection, final run, metrics.

    The deep pass targets the bottom of the tolerance grid so it either
    reaches it or stagnates at the effective noise floor; the probability
    curve from its level populations picks the working tolerance, and a
    second run at that tolerance produces the reported solutions.

    With ``oracle=True`` the exact Gaussian posterior of the linear test
    case is computed and transport divergences against it, the prior, and
    the truth are attached per tested tolerance.

    Raises:
        DiagnosticFailure: when the curve has no curvature peak; the deep
            trace and unsmoothed curve are attached to the exception.
    """
    g1 = g1_of_latent(model)
    g2 = g2_of_latent(model)
    y_obs = np.asarray(y_obs, dtype=np.float64).ravel()
    n_obs = y_obs.size
    grid_eps = cfg.eps_grid()

    deep = subsim_run(g2, y_obs, model.latent_dim, cfg.subsim_config(float(grid_eps[0])), rng.split(0))
    curve = probability_curve(deep, n_obs, grid_eps)
    try:
        analyze_curve(curve, cfg.smoothing_window)
    except ValueError as err:
        failure = DiagnosticFailure(str(err))
        failure.deep_trace = deep
        failure.curve = curve
        raise failure from err

    eps_star = float(n_obs * curve.selected_eps_n**2)
    final = subsim_run(g2, y_obs, model.latent_dim, cfg.subsim_config(eps_star), rng.split(1))
    z_final = final.final_samples
    solutions_x = posterior_solutions(final, g1)
    solutions_y = g2(z_final)

    metrics = MetricsReport()
    metrics.resim_rmse_model, metrics.resim_rmse_obs = resimulation_report(
        solutions_x, solutions_y, a, y_obs
    )
    summary = curve_summary(curve)
    summary["eps_star"] = eps_star
    summary["stagnated_deep_run"] = deep.stagnated
    summary["p_hat_final"] = final.p_hat

    if truth is not None:
        metrics.rmse_solutions_truth = rmse_batch(solutions_x, truth)
    if train_x is not None and truth is not None:
        metrics.rmse_train_truth = rmse_batch(train_x, truth)

    if oracle:
        prior_cov = add_jitter(build_covariance(cfg.grid, cfg.gp))
        prior_mean = np.full(cfg.grid.n_cells, cfg.gp.mean)
        prior = GaussianDist(prior_mean, prior_cov)
        noise_cov = max(cfg.noise_std, 1e-6) ** 2 * np.eye(n_obs)
        post = linear_gaussian_posterior(prior, a, noise_cov, y_obs)
        post_samples = posterior_sample(post, cfg.n_particles, rng.split(2))
        prior_samples = posterior_sample(prior, cfg.n_particles, rng.split(3))
        if truth is not None:
            metrics.rmse_posterior_truth = rmse_batch(post_samples, truth)
            metrics.rmse_prior_truth = rmse_batch(prior_samples, truth)

        diag_cfg = cfg.diag_ot_config()
        m_sub = min(cfg.diag_subsample, cfg.n_particles)
        refs = {"posterior": post_samples[:m_sub], "prior": prior_samples[:m_sub]}
        if truth is not None:
            refs["truth"] = np.asarray(truth, dtype=np.float64).reshape(1, -1)
        # one divergence row per tested tolerance: the deep run's level
        # populations stand in for the solution set at their own threshold
        rows = []
        for eps_n_level, sols in _deep_level_solutions(
            model, deep, float(grid_eps[-1]), n_obs, m_sub
        ):
            rows.append((eps_n_level, wasserstein_diagnostics(sols, refs, diag_cfg)))
        sol_divs = wasserstein_diagnostics(solutions_x[:m_sub], refs, diag_cfg)
        rows.append((float(curve.selected_eps_n), sol_divs))
        metrics.wasserstein_by_eps = sorted(rows, key=lambda r: r[0])
        summary["oracle"] = {
            "divergence_at_selected": sol_divs,
            "posterior_mean_rmse_to_truth": (
                None if truth is None else float(rmse_batch(post.mean[None, :], truth)[0])
            ),
        }

    summary["metrics"] = metrics.summary()
    return InversionResult(
        deep_trace=deep,
        curve=curve,
        selected_eps_n=curve.selected_eps_n,
        stagnation_eps_n=curve.stagnation_eps_n,
        final_trace=final,
        solutions_latent=z_final,
        solutions_x=solutions_x,
        solutions_y=solutions_y,
        metrics=metrics,
        summary=summary,
    )


def _deep_level_solutions(model: JGNNModel, deep, eps_top: float, n_obs: int, m_sub: int):
    """Field-space snapshots of each deep-run level population.

    The level-0 population (pure prior draws) represents the top-of-grid
    tolerance, where essentially every latent would be accepted; each later
    population represents its own level threshold.
    """
    g1 = g1_of_latent(model)
    thresholds = [lvl.threshold for lvl in deep.levels]
    out = []
    for j, z_pop in enumerate(deep.level_samples):
        eps_j = eps_top if j == 0 else min(thresholds[j - 1], eps_top)
        eps_n_j = float(normalize_eps(eps_j, n_obs))
        out.append((eps_n_j, g1(z_pop[:m_sub])))
    return out


def invert_artifacts(
    cfg: PipelineConfig,
    checkpoint: str,
    y_obs_path: str,
    dataset_dir: str,
    out_dir: str,
    truth_path: str | None = None,
    oracle: bool = False,
) -> InversionResult:
    """File-level wrapper around :func:`run_inversion`; writes all artifacts."""
    os.makedirs(out_dir, exist_ok=True)
    _require([checkpoint, checkpoint + ".json", y_obs_path + ".json"])
    model = load_model(checkpoint)
    data = _load_dataset(dataset_dir)
    y_obs = load_array(y_obs_path)
    truth = load_array(truth_path) if truth_path else None
    prov = cfg.provenance("invert")
    rng = RngStream(cfg.seed, stream_id=3)

    try:
        result = run_inversion(
            model,
            data["ray_matrix"],
            y_obs,
            cfg,
            rng,
            truth=truth,
            oracle=oracle,
            train_x=data.get("train_x") if truth is not None else None,
        )
    except DiagnosticFailure as failure:
        save_trace(os.path.join(out_dir, "deep_trace"), failure.deep_trace, prov)
        curve_to_csv(failure.curve, os.path.join(out_dir, "curve.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump({"error": str(failure), "provenance": prov}, fh, indent=1, sort_keys=True)
            fh.write("\n")
        raise

    save_trace(os.path.join(out_dir, "deep_trace"), result.deep_trace, prov)
    save_trace(os.path.join(out_dir, "final_trace"), result.final_trace, prov)
    curve_to_csv(result.curve, os.path.join(out_dir, "curve.csv"))
    save_array(os.path.join(out_dir, "solutions_x.f64"), result.solutions_x, prov)
    save_array(os.path.join(out_dir, "solutions_y.f64"), result.solutions_y, prov)
    save_array(os.path.join(out_dir, "solutions_latent.f64"), result.solutions_latent, prov)
    result.metrics.to_csv(os.path.join(out_dir, "metrics.csv"))
    if result.metrics.wasserstein_by_eps:
        names = sorted(result.metrics.wasserstein_by_eps[0][1])
        with open(os.path.join(out_dir, "wasserstein.csv"), "w") as fh:
            fh.write("eps_n," + ",".join(names) + "\n")
            for eps_n, divs in result.metrics.wasserstein_by_eps:
                fh.write(f"{float(eps_n)!r}," + ",".join(f"{float(divs[n])!r}" for n in names) + "\n")
    doc = dict(result.summary)
    doc["provenance"] = prov
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return result


def evaluate_runs(run_dirs: list[str], out_path: str) -> dict:
    """Aggregate per-inversion RMSE pairings; write per-run and pooled rows."""
    pairings = ("train", "post", "ours", "prior")
    col_of = {
        "train": "rmse_train_truth",
        "post": "rmse_posterior_truth",
        "ours": "rmse_solutions_truth",
        "prior": "rmse_prior_truth",
    }
    pooled = {p: [] for p in pairings}
    rows = []
    for run in run_dirs:
        path = os.path.join(run, "metrics.csv")
        _require([path])
        table = _read_csv_columns(path)
        for p in pairings:
            col = table.get(col_of[p])
            if col is None or col.size == 0:
                continue
            pooled[p].append(col)
            rows.append(
                {
                    "inversion": os.path.basename(os.path.normpath(run)),
                    "pairing": p,
                    "count": int(col.size),
                    "mean": float(np.mean(col)),
                    "median": float(np.median(col)),
                    "p05": float(np.quantile(col, 0.05)),
                    "p95": float(np.quantile(col, 0.95)),
                }
            )
    for p in pairings:
        if pooled[p]:
            col = np.concatenate(pooled[p])
            rows.append(
                {
                    "inversion": "pooled",
                    "pairing": p,
                    "count": int(col.size),
                    "mean": float(np.mean(col)),
                    "median": float(np.median(col)),
                    "p05": float(np.quantile(col, 0.05)),
                    "p95": float(np.quantile(col, 0.95)),
                }
            )
    with open(out_path, "w") as fh:
        fh.write("inversion,pairing,count,mean,median,p05,p95\n")
        for r in rows:
            fh.write(
                f"{r['inversion']},{r['pairing']},{r['count']},{r['mean']!r},"
                f"{r['median']!r},{r['p05']!r},{r['p95']!r}\n"
            )
    # pooled per-sample distributions, one labeled column per pairing
    dist_path = os.path.splitext(out_path)[0] + "_pooled.csv"
    cols = {p: (np.concatenate(pooled[p]) if pooled[p] else np.empty(0)) for p in pairings}
    n_rows = max((c.size for c in cols.values()), default=0)
    with open(dist_path, "w") as fh:
        fh.write(",".join(pairings) + "\n")
        for i in range(n_rows):
            fh.write(
                ",".join(f"{float(cols[p][i])!r}" if i < cols[p].size else "" for p in pairings)
                + "\n"
            )
    return {"rows": rows, "aggregate_csv": out_path, "pooled_csv": dist_path}


def _read_csv_columns(path: str) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols = {h: [] for h in header}
        for line in fh:
            cells = line.rstrip("\n").split(",")
            for h, c in zip(header, cells):
                if c != "":
                    cols[h].append(float(c))
    return {h: np.asarray(v) for h, v in cols.items() if h != "sample"}


def compute_oracle_posterior(
    cfg: PipelineConfig, dataset_dir: str, y_obs_path: str, out_dir: str
) -> GaussianDist:
    """Exact Gaussian posterior artifacts for a given observation."""
    os.makedirs(out_dir, exist_ok=True)
    data = _load_dataset(dataset_dir)
    y_obs = load_array(y_obs_path)
    prov = cfg.provenance("oracle-posterior")
    prior_cov = add_jitter(build_covariance(cfg.grid, cfg.gp))
    prior = GaussianDist(np.full(cfg.grid.n_cells, cfg.gp.mean), prior_cov)
    noise_cov = max(cfg.noise_std, 1e-6) ** 2 * np.eye(y_obs.size)
    post = linear_gaussian_posterior(prior, data["ray_matrix"], noise_cov, y_obs)
    save_array(os.path.join(out_dir, "posterior_mean.f64"), post.mean, prov)
    save_array(os.path.join(out_dir, "posterior_cov.f64"), post.cov, prov)
    return post
