"""Tolerance-region sampling over the latent space by subset simulation.

The target event is "the generated travel times fall within a squared-L2
tolerance of the observation".  Rather than rejection-sampling that rare
event from the latent prior, nested intermediate tolerance levels are peeled
off adaptively: each level keeps the best fraction of the current particles
and regrows the population with Markov chains that leave the prior invariant
and reject any move out of the level's region.  The product of the level
fractions estimates the prior mass of the final region, the quantity the
threshold diagnostics are built on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .rng_linalg import RngStream, save_array, load_array

__all__ = [
    "SubSimConfig",
    "LevelRecord",
    "SubSimTrace",
    "dissimilarity",
    "dissimilarity_batch",
    "conditional_chain",
    "subsim_run",
    "estimate_p",
    "posterior_solutions",
    "save_trace",
    "load_trace",
]


@dataclass(frozen=True)
class SubSimConfig:
    """Sampler settings; ``target_eps`` is the squared-L2 tolerance (ns^2)."""

    target_eps: float
    n_particles: int = 1000
    level_fraction: float = 0.1
    max_levels: int = 30
    proposal_scale: float = 0.5
    acceptance_target: float = 0.44
    stagnation_rel_tol: float = 1e-3
    stagnation_patience: int = 3

    def __post_init__(self):
        if not self.target_eps > 0:
            raise ValueError("target_eps must be positive")
        if not (0.0 < self.level_fraction < 1.0):
            raise ValueError("level_fraction must be in (0, 1)")
        if self.n_particles * self.level_fraction < 10:
            raise ValueError("need n_particles * level_fraction >= 10")
        if self.max_levels < 1:
            raise ValueError("max_levels must be at least 1")
        if not (0.0 <= self.proposal_scale <= 1.0):
            raise ValueError("proposal_scale must be in [0, 1]")


@dataclass
class LevelRecord:
    threshold: float
    acceptance_rate: float
    survivor_count: int


@dataclass
class SubSimTrace:
    """Everything a run produced, enough to rebuild the probability curve.

    ``level_dissimilarities[j]`` and ``level_samples[j]`` describe the full
    population after the j-th rejuvenation (j = 0 is the prior population).
    """

    config: SubSimConfig
    levels: list[LevelRecord] = field(default_factory=list)
    final_samples: np.ndarray | None = None
    final_dissimilarities: np.ndarray | None = None
    p_hat: float = np.nan
    stagnated: bool = False
    level_dissimilarities: list[np.ndarray] = field(default_factory=list)
    level_samples: list[np.ndarray] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def smallest_threshold(self) -> float:
        if not self.levels:
            raise ValueError("empty trace")
        return self.levels[-1].threshold


def dissimilarity(y_gen, y_obs) -> float:
    """Squared L2 distance between two travel-time vectors (ns^2)."""
    a = np.asarray(y_gen, dtype=np.float64).ravel()
    b = np.asarray(y_obs, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    d = a - b
    return float(d @ d)


def dissimilarity_batch(y_gen: np.ndarray, y_obs: np.ndarray) -> np.ndarray:
    """Row-wise squared L2 distances of a batch against one observation."""
    y_gen = np.atleast_2d(y_gen)
    y_obs = np.asarray(y_obs, dtype=np.float64).ravel()
    if y_gen.shape[1] != y_obs.size:
        raise ValueError(f"length mismatch: {y_gen.shape[1]} vs {y_obs.size}")
    d = y_gen - y_obs[None, :]
    return np.einsum("ij,ij->i", d, d)


def conditional_chain(
    z0: np.ndarray,
    steps: int,
    t: float,
    g2,
    y_obs,
    scale: float,
    rng: RngStream,
) -> np.ndarray:
    """Markov chain confined to the tolerance region, seeded at ``z0``.

    Proposals are ``rho * z + sqrt(1 - rho^2) * u`` with
    ``rho = sqrt(1 - scale^2)`` and standard-normal ``u``; because that move
    leaves the standard normal invariant, accepting exactly the proposals
    that stay below the threshold targets the prior restricted to the
    region.  Returns ``steps`` states, the seed included as row 0.
    """
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    if not (0.0 <= scale <= 1.0):
        raise ValueError("scale must be in [0, 1]")
    d0 = dissimilarity_batch(g2(z0[None, :]), y_obs)[0]
    if not d0 <= t:
        raise ValueError(f"seed has dissimilarity {d0}, outside the threshold {t}")
    rho = np.sqrt(1.0 - scale * scale)
    gen = rng.generator()
    states = np.empty((steps, z0.size))
    states[0] = z0
    cur = z0.copy()
    for s in range(1, steps):
        prop = rho * cur + scale * gen.standard_normal(z0.size)
        if dissimilarity_batch(g2(prop[None, :]), y_obs)[0] <= t:
            cur = prop
        states[s] = cur
    return states


def _rejuvenate(seeds, seed_d, t, level_index, scale, g2, y_obs, rng, n_particles):
    """Grow the survivor set back to ``n_particles`` members of the region.

    One chain per survivor; chain lengths differ by at most one, with the
    remainder going to the first chains.  Chains advance in lockstep so the
    generator map is always evaluated on a batch, and each chain draws its
    proposal noise from its own (level, chain) substream, which makes the
    merged population independent of scheduling.
    """
    n_chains, dim = seeds.shape
    base, extra = divmod(n_particles, n_chains)
    lengths = base + (np.arange(n_chains) < extra).astype(np.intp)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    max_steps = int(lengths.max()) - 1

    noise = np.zeros((n_chains, max(max_steps, 1), dim))
    for c in range(n_chains):
        nc = int(lengths[c]) - 1
        if nc > 0:
            noise[c, :nc] = rng.split(level_index, c).generator().standard_normal((nc, dim))

    out_z = np.empty((n_particles, dim))
    out_d = np.empty(n_particles)
    out_z[offsets] = seeds
    out_d[offsets] = seed_d
    cur = seeds.copy()
    cur_d = seed_d.copy()
    rho = np.sqrt(1.0 - scale * scale)
    accepted = 0
    proposed = 0
    for s in range(max_steps):
        active = np.where(lengths > s + 1)[0]
        if active.size == 0:
            break
        prop = rho * cur[active] + scale * noise[active, s]
        d_prop = dissimilarity_batch(g2(prop), y_obs)
        acc = d_prop <= t
        hit = active[acc]
        cur[hit] = prop[acc]
        cur_d[hit] = d_prop[acc]
        accepted += int(acc.sum())
        proposed += active.size
        out_z[offsets[active] + s + 1] = cur[active]
        out_d[offsets[active] + s + 1] = cur_d[active]
    rate = accepted / proposed if proposed else float("nan")
    return out_z, out_d, rate


def subsim_run(g2, y_obs, latent_dim: int, cfg: SubSimConfig, rng: RngStream) -> SubSimTrace:
    """Full adaptive run down to the target tolerance (or stagnation).

    Args:
        g2: batch map from latent vectors (n, latent_dim) to generated
            travel-time vectors (n, n_obs).
        y_obs: observed travel times.
        latent_dim: dimension of the standard-normal latent prior.
        cfg: sampler settings.
        rng: stream; level populations use substreams keyed by
            (level, chain index).

    Returns:
        :class:`SubSimTrace`.  ``stagnated`` flags runs that consumed the
        whole level budget without crossing the target, or whose proposed
        thresholds stopped improving (by less than ``stagnation_rel_tol``
        relatively, ``stagnation_patience`` levels in a row).  A stagnated
        run still burns its remaining budget: the repeated best-fraction
        selection at an almost-flat threshold is what squeezes the final
        population onto the closest-fitting set, and the diagnostics read
        that collapse.  Only a threshold that cannot strictly decrease at
        all aborts the loop early.
    """
    n = cfg.n_particles
    alpha = cfg.level_fraction
    k = int(np.ceil(alpha * n))
    trace = SubSimTrace(config=cfg)

    z = rng.split(0, 0).generator().standard_normal((n, latent_dim))
    d = dissimilarity_batch(g2(z), y_obs)
    trace.level_dissimilarities.append(d.copy())
    trace.level_samples.append(z.copy())

    scale = cfg.proposal_scale
    stagnant_streak = 0
    t_prev = np.inf

    for level in range(1, cfg.max_levels + 1):
        order = np.argsort(d, kind="stable")
        t_prop = float(d[order[k - 1]])

        if t_prop <= cfg.target_eps:
            t = cfg.target_eps
            surv = np.where(d <= t)[0]
            n_surv = surv.size
            z, d, rate = _rejuvenate(z[surv], d[surv], t, level, scale, g2, y_obs, rng, n)
            trace.levels.append(LevelRecord(t, rate, n_surv))
            trace.level_dissimilarities.append(d.copy())
            trace.level_samples.append(z.copy())
            break

        if not t_prop < t_prev:
            trace.stagnated = True  # cannot decrease strictly: flat dissimilarity mass
            break
        if np.isfinite(t_prev) and (t_prev - t_prop) / t_prev < cfg.stagnation_rel_tol:
            stagnant_streak += 1
            if stagnant_streak >= cfg.stagnation_patience:
                trace.stagnated = True
        else:
            stagnant_streak = 0

        # survivors: everything strictly below, tie slots filled in sample order
        strictly = np.where(d < t_prop)[0]
        tied = np.where(d == t_prop)[0]
        surv = np.concatenate([strictly, tied])[:k]

        z, d, rate = _rejuvenate(z[surv], d[surv], t_prop, level, scale, g2, y_obs, rng, n)
        trace.levels.append(LevelRecord(t_prop, rate, k))
        trace.level_dissimilarities.append(d.copy())
        trace.level_samples.append(z.copy())
        t_prev = t_prop

        zeta = 1.0 / np.sqrt(level)
        scale = float(np.clip(np.exp(np.log(max(scale, 1e-6)) + zeta * (rate - cfg.acceptance_target)), 1e-3, 1.0))
    else:
        trace.stagnated = True  # level budget consumed before crossing

    trace.final_samples = z
    trace.final_dissimilarities = d
    trace.p_hat = estimate_p(trace) if trace.levels else float("nan")
    return trace


def estimate_p(trace: SubSimTrace) -> float:
    """Probability estimate: alpha^(m-1) times the final survivor fraction."""
    m = trace.n_levels
    if m == 0:
        raise ValueError("empty trace")
    cfg = trace.config
    return cfg.level_fraction ** (m - 1) * trace.levels[-1].survivor_count / cfg.n_particles


def posterior_solutions(trace: SubSimTrace, g1) -> np.ndarray:
    """Decode the final latent population into field-space solutions."""
    if trace.final_samples is None or trace.final_samples.size == 0:
        raise ValueError("trace has no final samples")
    return g1(trace.final_samples)


def save_trace(prefix: str, trace: SubSimTrace, provenance: dict | None = None) -> None:
    """JSON at ``prefix.json`` plus array artifacts for the final population."""
    doc = {
        "config": asdict(trace.config),
        "levels": [asdict(lvl) for lvl in trace.levels],
        "p_hat": trace.p_hat,
        "stagnated": trace.stagnated,
        "n_level_populations": len(trace.level_dissimilarities),
    }
    if provenance is not None:
        doc["provenance"] = provenance
    with open(prefix + ".json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    save_array(prefix + "_samples.f64", trace.final_samples, provenance)
    save_array(prefix + "_dissimilarities.f64", trace.final_dissimilarities, provenance)
    for j, pop in enumerate(trace.level_dissimilarities):
        save_array(f"{prefix}_level{j:02d}_dissimilarities.f64", pop, provenance)


def load_trace(prefix: str) -> SubSimTrace:
    with open(prefix + ".json") as fh:
        doc = json.load(fh)
    trace = SubSimTrace(config=SubSimConfig(**doc["config"]))
    trace.levels = [LevelRecord(**lvl) for lvl in doc["levels"]]
    trace.p_hat = doc["p_hat"]
    trace.stagnated = doc["stagnated"]
    trace.final_samples = load_array(prefix + "_samples.f64")
    trace.final_dissimilarities = load_array(prefix + "_dissimilarities.f64")
    trace.level_dissimilarities = [
        load_array(f"{prefix}_level{j:02d}_dissimilarities.f64")
        for j in range(int(doc["n_level_populations"]))
    ]
    return trace
