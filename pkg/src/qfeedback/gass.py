"""Gradient-based adaptive stochastic search over policy parameters.

Instead of differentiating through the dynamics, the optimizer maintains a
Gaussian N(mu, diag(sigma^2)) over flat policy parameters and ascends
log < S(J) > with the score-function gradient, which for a fixed-variance
Gaussian collapses to the weighted mean shift

    mu' = mu + lr * sum_p w_p (phi_p - mu),   w_p ~ mean_r exp(-kappa J_rp)

The per-parameter shape value averages the exponential over rollouts
first and normalizes across parameter samples afterwards. Weights are
computed in log space after subtracting the global minimum cost, which is
exactly equivalent and immune to underflow.

Sampling is mirrored by default: parameters come in (mu + s, mu - s)
pairs. Marginally each sample is still N(mu, diag(sigma^2)), but the
weighted mean shift then vanishes identically at a symmetric optimum,
removing the Monte Carlo noise floor that plain independent sampling
leaves behind (with P independent samples the iterate stalls at a
stationary spread of roughly sqrt(lr / 4P) per coordinate, orders of
magnitude above the optimum).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import simulator as sim_mod
from .cost import ShapeSpec
from .policy import PolicySpec


class GassError(RuntimeError):
    """Raised when the optimizer cannot form a valid update."""


@dataclass
class SamplingDistribution:
    """Gaussian over flat parameter vectors, fixed diagonal spread."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = np.full(self.mu.shape, float(sigma))
        self.sigma = sigma.reshape(-1)
        if self.sigma.shape != self.mu.shape:
            raise ValueError("mu and sigma must have equal length")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass
class GassConfig:
    iterations: int = 100
    param_samples: int = 64
    rollouts: int = 16
    step_size: float = 1.0
    shape: ShapeSpec = field(default_factory=ShapeSpec)
    mirrored: bool = True
    sigma_decay: float = 1.0
    step_decay: float = 1.0
    workers: int | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.param_samples < 1 or self.rollouts < 1:
            raise ValueError("param_samples and rollouts must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0 < self.sigma_decay <= 1 or not 0 < self.step_decay <= 1:
            raise ValueError("decay factors must lie in (0, 1]")


@dataclass
class IterationStats:
    iteration: int
    mean_cost: float
    best_cost: float
    ess: float
    update_norm: float


def sample_params(
    dist: SamplingDistribution,
    P: int,
    rng: np.random.Generator,
    mirrored: bool = True,
) -> np.ndarray:
    """Draw P parameter vectors phi_p = mu + sigma * z_p.

    With ``mirrored`` the draws come in +/- pairs (odd P gets one unpaired
    draw); otherwise they are independent.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    if mirrored:
        half = rng.normal(size=((P + 1) // 2, dist.dim))
        z = np.concatenate([half, -half[: P - half.shape[0]]], axis=0)
    else:
        z = rng.normal(size=(P, dist.dim))
    return dist.mu[None, :] + dist.sigma[None, :] * z


def shape_weights(costs: np.ndarray, shape_spec: ShapeSpec) -> np.ndarray:
    """Normalized per-parameter weights from a (P, R) cost matrix.

    w_p proportional to mean_r exp(-kappa J_rp); the global minimum cost
    is subtracted before exponentiation, which cancels in the
    normalization and prevents underflow.
    """
    costs = np.atleast_2d(np.asarray(costs, dtype=float))
    if costs.size == 0:
        raise GassError("empty cost matrix")
    finite = np.isfinite(costs)
    if not finite.any():
        raise GassError("no finite rollout costs; dynamics or policy diverged")
    safe = np.where(finite, costs, np.inf)
    centered = safe - safe.min()
    s = np.exp(-shape_spec.kappa * centered).mean(axis=1)
    total = s.sum()
    if total <= 0 or not np.isfinite(total):
        raise GassError("shape weights underflowed to zero")
    return s / total


def mean_update(
    dist: SamplingDistribution,
    samples: np.ndarray,
    weights: np.ndarray,
    step_size: float,
) -> SamplingDistribution:
    """Shift the mean toward the shape-weighted sample average."""
    delta = weights @ (samples - dist.mu[None, :])
    return SamplingDistribution(mu=dist.mu + step_size * delta, sigma=dist.sigma.copy())


def gradient_estimate(
    costs: np.ndarray,
    samples: np.ndarray,
    dist: SamplingDistribution,
    shape_spec: ShapeSpec,
) -> np.ndarray:
    """Score-function gradient of log < S(J) > with respect to mu.

    Equals Sigma^-1 times the weighted mean shift, so
    mean_update == mu + lr * Sigma @ gradient_estimate.
    """
    w = shape_weights(costs, shape_spec)
    delta = w @ (samples - dist.mu[None, :])
    return delta / dist.sigma**2


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(weights**2))


def search(
    objective,
    dist: SamplingDistribution,
    config: GassConfig,
    seed_spec: sim_mod.SeedSpec,
    start_iteration: int = 0,
    callback=None,
):
    """Run the optimizer loop against an arbitrary batched objective.

    ``objective(k, params)`` maps an iteration index and a (P, dim) sample
    block to a (P, R) cost matrix. Returns the final distribution and the
    per-iteration statistics. ``callback(stats, dist)``, when given, runs
    after every update (used for checkpointing).
    """
    stats: list[IterationStats] = []
    for k in range(start_iteration, start_iteration + config.iterations):
        # decay schedules depend on the absolute index so resume is exact
        cur = SamplingDistribution(dist.mu, dist.sigma * config.sigma_decay**k)
        step = config.step_size * config.step_decay**k
        rng = seed_spec.param_generator(k)
        samples = sample_params(cur, config.param_samples, rng, config.mirrored)
        costs = np.atleast_2d(np.asarray(objective(k, samples), dtype=float))
        weights = shape_weights(costs, config.shape)
        new_dist = mean_update(cur, samples, weights, step)
        update_norm = float(np.linalg.norm(new_dist.mu - dist.mu))
        dist = SamplingDistribution(new_dist.mu, dist.sigma)
        finite = costs[np.isfinite(costs)]
        st = IterationStats(
            iteration=k,
            mean_cost=float(finite.mean()),
            best_cost=float(finite.min()),
            ess=effective_sample_size(weights),
            update_norm=update_norm,
        )
        stats.append(st)
        if callback is not None:
            callback(st, dist)
    return dist, stats


def make_rollout_objective(
    sys,
    policy_spec: PolicySpec,
    cost_spec,
    sim_config: sim_mod.SimConfig,
    seed_spec: sim_mod.SeedSpec,
    rollouts: int,
    rho0_source=None,
    workers: int | None = None,
):
    """Objective closure evaluating policy parameters on SME rollouts."""

    def objective(k: int, params: np.ndarray) -> np.ndarray:
        return sim_mod.evaluate_policy_costs(
            sys,
            policy_spec,
            params,
            rollouts,
            cost_spec,
            sim_config,
            seed_spec,
            iteration=k,
            rho0_source=rho0_source,
            workers=workers,
        )

    return objective


def optimize(
    sys,
    policy_spec: PolicySpec,
    cost_spec,
    sim_config: sim_mod.SimConfig,
    gass_config: GassConfig,
    seed_spec: sim_mod.SeedSpec,
    dist0: SamplingDistribution | None = None,
    rho0_source=None,
    start_iteration: int = 0,
    callback=None,
):
    """Train a policy distribution on a measured quantum system.

    Each iteration samples P parameter vectors, evaluates each on R
    rollouts with shared noise and initial states, and applies the
    shape-weighted mean update. Returns (distribution, stats).
    """
    from .policy import init_params, param_count

    if dist0 is None:
        mu0 = init_params(policy_spec, seed_spec.policy_init_generator())
        dist0 = SamplingDistribution(mu=mu0, sigma=np.full(param_count(policy_spec), 0.1))
    objective = make_rollout_objective(
        sys,
        policy_spec,
        cost_spec,
        sim_config,
        seed_spec,
        gass_config.rollouts,
        rho0_source=rho0_source,
        workers=gass_config.workers,
    )
    return search(
        objective,
        dist0,
        gass_config,
        seed_spec,
        start_iteration=start_iteration,
        callback=callback,
    )


def save_checkpoint(
    path,
    policy_spec: PolicySpec,
    dist: SamplingDistribution,
    iteration: int,
    master_seed: int,
) -> None:
    """Serialize optimizer state: JSON header line plus raw float64 data."""
    header = {
        "format": "qfeedback-checkpoint-v1",
        "policy": policy_spec.to_dict(),
        "iteration": int(iteration),
        "master_seed": int(master_seed),
        "dim": int(dist.dim),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(dist.mu.astype("<f8").tobytes())
        f.write(dist.sigma.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != "qfeedback-checkpoint-v1":
            raise ValueError(f"{path}: not a checkpoint file")
        dim = header["dim"]
        mu = np.frombuffer(f.read(8 * dim), dtype="<f8").copy()
        sigma = np.frombuffer(f.read(8 * dim), dtype="<f8").copy()
    spec = PolicySpec.from_dict(header["policy"])
    dist = SamplingDistribution(mu=mu, sigma=sigma)
    return spec, dist, header["iteration"], header["master_seed"]
