"""Joint generative model over (field, travel-time) couples and its training.

One encoder maps a couple to a latent vector; one decoder maps latents back
through a shared trunk that splits into a field head and a travel-time head.
Training minimizes reconstruction MSE of both variables (each normalized by
its dimension, in standardized space) plus a scheduled multiple of the
entropic transport cost between the batch encodings and fresh draws from the
standard-normal latent prior.  That latent term is what pushes the aggregate
encoding distribution onto the prior, so that decoding prior draws samples
the learned joint distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .rng_linalg import RngStream
from .neural import AdamState, MLPParams, adam_step, mlp_backward, mlp_forward, refresh_spectral
from .sinkhorn import SinkhornConfig, cost_matrix, entropic_ot, ot_point_gradient

__all__ = [
    "Standardizer",
    "JGNNModel",
    "TrainConfig",
    "TrainHistory",
    "TrainingDiverged",
    "FrozenPlans",
    "lambda_schedule",
    "jgnn_loss",
    "train",
    "generate",
    "encode",
    "g1_of_latent",
    "g2_of_latent",
    "save_model",
    "load_model",
]

_STD_FLOOR = 1e-12


@dataclass
class Standardizer:
    """Per-dimension affine maps into and out of network space."""

    mean_x: np.ndarray
    std_x: np.ndarray
    mean_y: np.ndarray
    std_y: np.ndarray

    @classmethod
    def fit(cls, xs: np.ndarray, ys: np.ndarray) -> "Standardizer":
        return cls(
            mean_x=xs.mean(axis=0),
            std_x=np.maximum(xs.std(axis=0), _STD_FLOOR),
            mean_y=ys.mean(axis=0),
            std_y=np.maximum(ys.std(axis=0), _STD_FLOOR),
        )

    @classmethod
    def identity(cls, dim_x: int, dim_y: int) -> "Standardizer":
        return cls(np.zeros(dim_x), np.ones(dim_x), np.zeros(dim_y), np.ones(dim_y))

    def x_to_std(self, xs):
        return (xs - self.mean_x) / self.std_x

    def x_from_std(self, xs):
        return xs * self.std_x + self.mean_x

    def y_to_std(self, ys):
        return (ys - self.mean_y) / self.std_y

    def y_from_std(self, ys):
        return ys * self.std_y + self.mean_y


class JGNNModel:
    """Encoder, decoder with two heads, latent prior, standardization."""

    def __init__(
        self,
        encoder: MLPParams,
        decoder: MLPParams,
        dim_x: int,
        dim_y: int,
        latent_dim: int,
        standardizer: Standardizer | None = None,
    ):
        if encoder.in_dim != dim_x + dim_y or encoder.out_dim != latent_dim:
            raise ValueError("encoder dimensions do not match (dim_x + dim_y) -> latent")
        if decoder.in_dim != latent_dim or decoder.out_dim != dim_x + dim_y:
            raise ValueError("decoder dimensions do not match latent -> (dim_x + dim_y)")
        self.encoder = encoder
        self.decoder = decoder
        self.dim_x = dim_x
        self.dim_y = dim_y
        self.latent_dim = latent_dim
        self.standardizer = standardizer or Standardizer.identity(dim_x, dim_y)

    @classmethod
    def init(
        cls,
        dim_x: int,
        dim_y: int,
        latent_dim: int,
        rng: RngStream,
        hidden: tuple[int, ...] = (512, 512),
        activation: str = "leaky_relu",
    ) -> "JGNNModel":
        """Fresh model; output heads are exempt from spectral normalization.

        A strictly norm-capped decoder cannot expand a low-dimensional latent
        onto high-dimensional standardized outputs, so the final affine layer
        of both networks keeps raw weights while every hidden layer is
        normalized.
        """
        acts = [activation] * len(hidden) + ["linear"]
        sn = [True] * len(hidden) + [False]
        encoder = MLPParams.init(
            [dim_x + dim_y, *hidden, latent_dim], acts, rng.split(0), spectral=sn
        )
        decoder = MLPParams.init(
            [latent_dim, *hidden, dim_x + dim_y], acts, rng.split(1), spectral=sn
        )
        return cls(encoder, decoder, dim_x, dim_y, latent_dim)

    def copy(self) -> "JGNNModel":
        return JGNNModel(
            self.encoder.copy(),
            self.decoder.copy(),
            self.dim_x,
            self.dim_y,
            self.latent_dim,
            replace(self.standardizer),
        )


def _default_train_sinkhorn() -> SinkhornConfig:
    # reg 10 rather than the heavier smoothing used for plain cost estimates:
    # above ~the squared cloud diameter the debiased cost's scale sensitivity
    # fades to mean-matching only, and the encodings never spread to the
    # prior; at reg 10 the aggregate-matching invariant is reached quickly
    return SinkhornConfig(reg=10.0, max_iter=40)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    batch_size: int = 128
    lambda0: float = 150.0
    lambda_halving_period: int = 500
    sinkhorn: SinkhornConfig = field(default_factory=_default_train_sinkhorn)
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.lambda_halving_period) < 1:
            raise ValueError("epochs, batch_size and lambda_halving_period must be positive")
        if self.lambda0 <= 0 or self.lr <= 0:
            raise ValueError("lambda0 and lr must be positive")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class TrainHistory:
    """Per-epoch training metrics (standardized space)."""

    mse_x: list = field(default_factory=list)
    mse_y: list = field(default_factory=list)
    ot_term: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    val_mse_x: list = field(default_factory=list)
    val_mse_y: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.mse_x)

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,mse_x,mse_y,ot_term,lambda,val_mse_x,val_mse_y\n")
            for e in range(len(self)):
                fh.write(
                    f"{e},{self.mse_x[e]!r},{self.mse_y[e]!r},{self.ot_term[e]!r},"
                    f"{self.lam[e]!r},{self.val_mse_x[e]!r},{self.val_mse_y[e]!r}\n"
                )


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the history up to the failure."""

    def __init__(self, epoch: int, history: TrainHistory):
        self.epoch = epoch
        self.history = history
        super().__init__(f"training loss became non-finite at epoch {epoch}")


def lambda_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Latent-term weight: start at lambda0, halve every halving period."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return cfg.lambda0 * 0.5 ** (epoch // cfg.lambda_halving_period)


@dataclass
class FrozenPlans:
    """Converged transport plans held fixed for differentiation."""

    plan_zp: np.ndarray
    plan_zz: np.ndarray
    pp_cost: float


@dataclass
class LossResult:
    loss: float
    mse_x: float
    mse_y: float
    ot_cost: float
    encoder_grads: list
    decoder_grads: list
    plans: FrozenPlans


def jgnn_loss(
    x_std: np.ndarray,
    y_std: np.ndarray,
    model: JGNNModel,
    lam: float,
    sinkhorn_cfg: SinkhornConfig,
    prior_draws: np.ndarray,
    frozen_plans: "FrozenPlans | None" = None,
) -> LossResult:
    """Loss and gradients for one standardized batch.

    loss = MSE_x + MSE_y + lam * S(encodings, prior_draws)

    where each MSE is normalized by its variable's dimension and the batch
    size, and S is the debiased entropic transport cost at the configured
    budget,

        S(z, p) = OT(z, p) - OT(z, z) / 2 - OT(p, p) / 2.

    The plain cost at a large regularization degenerates toward the
    independent-coupling energy, whose minimizer collapses the encodings
    onto the prior mean; the debiasing terms cancel that pressure, so the
    batch encodings spread to match the prior instead.

    Transport plans are treated as constants during differentiation
    (envelope-style).  Passing ``frozen_plans`` skips the Sinkhorn solves
    and evaluates the loss for those fixed plans, which is the exact
    function the analytic gradient differentiates; the finite-difference
    checks rely on this.
    """
    x_std = np.atleast_2d(x_std)
    y_std = np.atleast_2d(y_std)
    n = x_std.shape[0]
    if n == 0:
        raise ValueError("batch must be nonempty")
    if prior_draws.shape != (n, model.latent_dim):
        raise ValueError("prior draws must match (batch, latent_dim)")

    z, enc_cache = mlp_forward(model.encoder, np.concatenate([x_std, y_std], axis=1))
    out, dec_cache = mlp_forward(model.decoder, z)
    x_rec, y_rec = out[:, : model.dim_x], out[:, model.dim_x :]

    dx = x_rec - x_std
    dy = y_rec - y_std
    mse_x = float(np.mean(dx * dx))
    mse_y = float(np.mean(dy * dy))

    ot_cfg = replace(sinkhorn_cfg, debiased=False)
    if frozen_plans is not None:
        plan_zp = frozen_plans.plan_zp
        plan_zz = frozen_plans.plan_zz
        pp_cost = frozen_plans.pp_cost
        ot_cost = (
            float(np.sum(plan_zp * cost_matrix(z, prior_draws, ot_cfg.p)))
            - 0.5 * float(np.sum(plan_zz * cost_matrix(z, z, ot_cfg.p)))
            - 0.5 * pp_cost
        )
    else:
        ot_zp = entropic_ot(z, prior_draws, ot_cfg)
        ot_zz = entropic_ot(z, z, ot_cfg)
        pp_cost = entropic_ot(prior_draws, prior_draws, ot_cfg).cost
        plan_zp, plan_zz = ot_zp.plan, ot_zz.plan
        ot_cost = ot_zp.cost - 0.5 * ot_zz.cost - 0.5 * pp_cost
    loss = mse_x + mse_y + lam * ot_cost
    if not np.isfinite(loss):
        raise ValueError("non-finite loss")

    g_out = np.concatenate(
        [2.0 * dx / dx.size, 2.0 * dy / dy.size], axis=1
    )
    dec_grads, dz_rec = mlp_backward(model.decoder, dec_cache, g_out)
    # self-transport: z enters both sides, so the envelope gradient sums the
    # source-side terms of the plan and of its transpose
    dz_zz = ot_point_gradient(z, z, plan_zz, ot_cfg.p) + ot_point_gradient(
        z, z, plan_zz.T, ot_cfg.p
    )
    dz = dz_rec + lam * (
        ot_point_gradient(z, prior_draws, plan_zp, ot_cfg.p) - 0.5 * dz_zz
    )
    enc_grads, _ = mlp_backward(model.encoder, enc_cache, dz)
    return LossResult(
        loss, mse_x, mse_y, ot_cost, enc_grads, dec_grads, FrozenPlans(plan_zp, plan_zz, pp_cost)
    )


def train(
    xs: np.ndarray,
    ys: np.ndarray,
    model: JGNNModel,
    cfg: TrainConfig,
) -> tuple[JGNNModel, TrainHistory]:
    """Mini-batch Adam training; returns the best-validation checkpoint.

    A seeded fraction of the couples is held out; after every epoch the
    validation reconstruction MSE (standardized space) is recorded and the
    parameters with the lowest total are kept.  Deterministic per seed.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    n = xs.shape[0]
    rng = RngStream(cfg.seed, stream_id=17)

    n_val = max(1, int(round(cfg.val_fraction * n)))
    perm = rng.split(0).generator().permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size < cfg.batch_size:
        raise ValueError(
            f"dataset leaves {train_idx.size} training couples for batch size {cfg.batch_size}"
        )

    model.standardizer = Standardizer.fit(xs[train_idx], ys[train_idx])
    xs_s = model.standardizer.x_to_std(xs)
    ys_s = model.standardizer.y_to_std(ys)
    x_val, y_val = xs_s[val_idx], ys_s[val_idx]

    enc_state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    dec_state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    history = TrainHistory()
    n_batches = train_idx.size // cfg.batch_size
    best_val = np.inf
    best_model = model.copy()

    for epoch in range(cfg.epochs):
        lam = lambda_schedule(epoch, cfg)
        order = rng.split(1, epoch).generator().permutation(train_idx.size)
        ep_mx = ep_my = ep_ot = 0.0
        for b in range(n_batches):
            idx = train_idx[order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            refresh_spectral(model.encoder)
            refresh_spectral(model.decoder)
            draws = (
                rng.split(2, epoch, b)
                .generator()
                .standard_normal((cfg.batch_size, model.latent_dim))
            )
            try:
                res = jgnn_loss(xs_s[idx], ys_s[idx], model, lam, cfg.sinkhorn, draws)
            except ValueError as err:
                raise TrainingDiverged(epoch, history) from err
            adam_step(enc_state, model.encoder, res.encoder_grads, "encoder layer")
            adam_step(dec_state, model.decoder, res.decoder_grads, "decoder layer")
            ep_mx += res.mse_x
            ep_my += res.mse_y
            ep_ot += res.ot_cost

        val_x_rec, val_y_rec = _reconstruct(model, x_val, y_val)
        vmx = float(np.mean((val_x_rec - x_val) ** 2))
        vmy = float(np.mean((val_y_rec - y_val) ** 2))
        history.mse_x.append(ep_mx / n_batches)
        history.mse_y.append(ep_my / n_batches)
        history.ot_term.append(ep_ot / n_batches)
        history.lam.append(lam)
        history.val_mse_x.append(vmx)
        history.val_mse_y.append(vmy)
        if vmx + vmy < best_val:
            best_val = vmx + vmy
            best_model = model.copy()

    best_model.standardizer = model.standardizer
    return best_model, history


def _reconstruct(model: JGNNModel, x_std, y_std):
    z, _ = mlp_forward(model.encoder, np.concatenate([x_std, y_std], axis=1))
    out, _ = mlp_forward(model.decoder, z)
    return out[:, : model.dim_x], out[:, model.dim_x :]


def generate(model: JGNNModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode a latent batch into (fields, travel times), de-standardized."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != model.latent_dim:
        raise ValueError(f"latent dim {z.shape[1]} does not match model {model.latent_dim}")
    out, _ = mlp_forward(model.decoder, z)
    x = model.standardizer.x_from_std(out[:, : model.dim_x])
    y = model.standardizer.y_from_std(out[:, model.dim_x :])
    return x, y


def encode(model: JGNNModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Deterministic encoding of raw couples into the latent space."""
    x_std = model.standardizer.x_to_std(np.atleast_2d(x))
    y_std = model.standardizer.y_to_std(np.atleast_2d(y))
    z, _ = mlp_forward(model.encoder, np.concatenate([x_std, y_std], axis=1))
    return z


def g1_of_latent(model: JGNNModel):
    """Latent -> field map as a plain callable."""
    return lambda z: generate(model, z)[0]


def g2_of_latent(model: JGNNModel):
    """Latent -> travel-time map as a plain callable (drives the sampler)."""
    return lambda z: generate(model, z)[1]


# --- checkpoints: JSON manifest + packed little-endian f32 blob ---


def _mlp_manifest(params: MLPParams) -> dict:
    return {
        "sizes": [params.in_dim] + [l.weights.shape[0] for l in params.layers],
        "activations": [l.activation for l in params.layers],
        "spectral": [bool(l.spectral) for l in params.layers],
    }


def _mlp_blocks(params: MLPParams):
    for layer in params.layers:
        yield from (layer.weights, layer.bias, layer.u, layer.v)


def save_model(
    path: str,
    model: JGNNModel,
    extra: dict | None = None,
) -> None:
    """Write ``path`` (f32 weight blob) and ``path.json`` (manifest)."""
    manifest = {
        "dim_x": model.dim_x,
        "dim_y": model.dim_y,
        "latent_dim": model.latent_dim,
        "encoder": _mlp_manifest(model.encoder),
        "decoder": _mlp_manifest(model.decoder),
        "standardizer": {
            "mean_x": model.standardizer.mean_x.tolist(),
            "std_x": model.standardizer.std_x.tolist(),
            "mean_y": model.standardizer.mean_y.tolist(),
            "std_y": model.standardizer.std_y.tolist(),
        },
        "weights_dtype": "f32",
    }
    if extra:
        manifest.update(extra)
    blob = np.concatenate(
        [b.ravel() for p in (model.encoder, model.decoder) for b in _mlp_blocks(p)]
    ).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(blob.tobytes())
    with open(path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _rebuild_mlp(layout: dict, flat: np.ndarray, offset: int):
    from .neural import Layer

    layers = []
    sizes = layout["sizes"]
    for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        pieces = []
        for shape in ((n_out, n_in), (n_out,), (n_out,), (n_in,)):
            size = int(np.prod(shape))
            pieces.append(flat[offset : offset + size].reshape(shape))
            offset += size
        w, b, u, v = pieces
        layers.append(
            Layer(w, b, layout["activations"][k], spectral=layout["spectral"][k], u=u, v=v)
        )
    return MLPParams(layers), offset


def load_model(path: str) -> JGNNModel:
    with open(path + ".json") as fh:
        manifest = json.load(fh)
    flat = np.fromfile(path, dtype="<f4").astype(np.float64)
    encoder, offset = _rebuild_mlp(manifest["encoder"], flat, 0)
    decoder, offset = _rebuild_mlp(manifest["decoder"], flat, offset)
    std = manifest["standardizer"]
    standardizer = Standardizer(
        np.asarray(std["mean_x"]),
        np.asarray(std["std_x"]),
        np.asarray(std["mean_y"]),
        np.asarray(std["std_y"]),
    )
    return JGNNModel(
        encoder,
        decoder,
        int(manifest["dim_x"]),
        int(manifest["dim_y"]),
        int(manifest["latent_dim"]),
        standardizer,
    )
