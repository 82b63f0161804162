"""Euler-Maruyama integration of the controlled stochastic master equation.

The engine is batched: a whole ensemble of conditioned states evolves as a
``(B, d, d)`` complex array, one Wiener path per ensemble member. All
randomness flows from a single :class:`SeedSpec`; identical seeds give
bitwise-identical trajectories regardless of batch layout or worker count.

Per step the state update is

    rho' = project(rho + [F(rho) + G(rho, u)] dt + B(rho) dW)

where ``project`` symmetrizes, optionally renormalizes the trace and
optionally clips negative eigenvalues (Euler-Maruyama does not preserve
positivity; clipping is the standard repair). The pre-projection update is
exactly trace- and Hermiticity-preserving up to rounding, which the test
suite relies on.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cost as cost_mod
from . import policy as policy_mod
from .qmath import TOL_PSD
from .systems import QndSystem

WORKERS_ENV_VAR = "QFEEDBACK_WORKERS"

# stream namespaces hanging off the master seed
_TAG_NOISE = 0
_TAG_INIT = 1
_TAG_PARAMS = 2
_TAG_EVAL_NOISE = 3
_TAG_EVAL_INIT = 4
_TAG_POLICY_INIT = 5


def default_workers() -> int:
    """Worker count for batch execution, overridable via the environment."""
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


@dataclass
class SimConfig:
    dt: float = 1e-3
    n_steps: int = 1000
    renormalize: bool = True
    psd_projection: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


class SeedSpec:
    """Derivation of independent, reproducible random substreams.

    Every consumer of randomness addresses a stream by a tag plus integer
    indices; the stream is a fresh PCG64 generator seeded from
    ``(master_seed, tag, *indices)``. Distinct index tuples are
    statistically independent, identical tuples give identical draws.
    """

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        self.master_seed = int(master_seed)

    def generator(self, tag: int, *indices: int) -> np.random.Generator:
        return np.random.default_rng((self.master_seed, tag, *[int(i) for i in indices]))

    # -- measurement noise ------------------------------------------------

    def sample_wiener(self, index: tuple, dt: float) -> float:
        """One Gaussian increment, mean 0 variance dt, keyed by ``index``."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        return float(self.generator(_TAG_NOISE, *index).normal(0.0, np.sqrt(dt)))

    def wiener_path(self, index: tuple, n_steps: int, dt: float) -> np.ndarray:
        """A full increment path, one stream per (iteration, rollout) key."""
        return self.generator(_TAG_NOISE, *index).normal(0.0, np.sqrt(dt), size=n_steps)

    def eval_wiener_path(self, traj_index: int, n_steps: int, dt: float) -> np.ndarray:
        """Held-out noise for evaluation; never overlaps training streams."""
        return self.generator(_TAG_EVAL_NOISE, traj_index).normal(0.0, np.sqrt(dt), size=n_steps)

    # -- initial states ----------------------------------------------------

    def initial_pure_state(self, index: tuple, dim: int) -> np.ndarray:
        from .qmath import random_pure_state

        return random_pure_state(dim, self.generator(_TAG_INIT, *index))

    def eval_pure_state(self, traj_index: int, dim: int) -> np.ndarray:
        from .qmath import random_pure_state

        return random_pure_state(dim, self.generator(_TAG_EVAL_INIT, traj_index))

    # -- optimizer parameter sampling ---------------------------------------

    def param_generator(self, iteration: int) -> np.random.Generator:
        return self.generator(_TAG_PARAMS, iteration)

    def policy_init_generator(self) -> np.random.Generator:
        return self.generator(_TAG_POLICY_INIT)


@dataclass
class Trajectory:
    """One simulated rollout.

    ``states`` has length n_steps + 1; the remaining fields have length
    n_steps and refer to the interval [t, t+1): ``controls[t]`` is applied
    at the pre-step state, ``noise[t]`` is the innovation increment dW and
    ``record[t]`` the measurement record increment
    dy = dW + Tr[(V + V^dag) rho_t] dt.
    """

    states: np.ndarray
    controls: np.ndarray
    noise: np.ndarray
    record: np.ndarray
    running_cost: np.ndarray
    dt: float


class ZeroController:
    """Applies zero control; useful for uncontrolled rollouts."""

    def __init__(self, control_dim: int):
        self.control_dim = control_dim

    def controls(self, rho: np.ndarray, t: int) -> np.ndarray:
        return np.zeros((rho.shape[0], self.control_dim))


class _Kernel:
    """Precomputed batched evaluation of F, G and B for one system."""

    def __init__(self, sys: QndSystem):
        self.sys = sys
        self.V = sys.V
        self.Vd = sys.V.conj().T
        self.W = self.Vd @ self.V
        self.controls = [np.ascontiguousarray(h) for h in sys.control_hams]
        self.has_h0 = bool(np.any(sys.H0))
        diag = np.diagonal(sys.V)
        self.diag_fast = (
            np.count_nonzero(sys.V - np.diag(diag)) == 0 and np.all(diag.imag == 0.0)
        )
        if self.diag_fast:
            f = diag.real
            self.f = f
            self.diss_mask = sys.dissipation_scale * (-0.5) * (f[:, None] - f[None, :]) ** 2
            self.back_mask = f[:, None] + f[None, :]

    def increments(self, rho: np.ndarray, u: np.ndarray):
        """Return (a, b): drift-plus-control and diffusion terms, batched."""
        sys = self.sys
        if self.diag_fast:
            a = self.diss_mask * rho
            tr2 = 2.0 * np.einsum("i,bii->b", self.f, rho).real
            b = self.back_mask * rho - tr2[:, None, None] * rho
        else:
            vr = self.V @ rho
            vr_dag = vr.conj().transpose(0, 2, 1)
            tr2 = 2.0 * np.einsum("bii->b", vr).real
            b = vr + vr_dag - tr2[:, None, None] * rho
            wr = self.W @ rho
            a = sys.dissipation_scale * (vr @ self.Vd - 0.5 * (wr + wr.conj().transpose(0, 2, 1)))
        if sys.diffusion_scale != 1.0:
            b = sys.diffusion_scale * b
        if self.has_h0:
            hr = sys.H0 @ rho
            a = a - 1j * (hr - hr.conj().transpose(0, 2, 1))
        for j, hj in enumerate(self.controls):
            hr = hj @ rho
            a = a + (-1j * u[:, j])[:, None, None] * (hr - hr.conj().transpose(0, 2, 1))
        return a, b


def _project(rho: np.ndarray, renormalize: bool, psd_projection: bool) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().transpose(0, 2, 1))
    if renormalize:
        rho = rho / np.einsum("bii->b", rho).real[:, None, None]
    if psd_projection:
        # Euler steps push near-pure states slightly outside the cone
        # every step, so an eigendecomposition per step is unavoidable;
        # only offending members pay for the reconstruction.
        w, vecs = np.linalg.eigh(rho)
        bad = np.nonzero(w[:, 0] < -TOL_PSD)[0]
        if bad.size:
            wc = np.clip(w[bad], 0.0, None)
            vb = vecs[bad]
            fixed = (vb * wc[:, None, :]) @ vb.conj().transpose(0, 2, 1)
            fixed = fixed / np.einsum("bii->b", fixed).real[:, None, None]
            rho[bad] = fixed
    return rho


def propagate_batch(sys, controller, rho0, dw, config: SimConfig, collectors=()):
    """Evolve a batch of states along given noise paths.

    rho0: (B, d, d) initial states, dw: (B, n_steps) Wiener increments.
    Collectors receive ``on_step(t, rho, u, dw_t)`` with the pre-step state
    for t = 0..n_steps-1 and ``on_final(rho)`` once. Returns final states.
    """
    rho = np.array(rho0, dtype=complex)
    kernel = _Kernel(sys)
    dt = config.dt
    for t in range(config.n_steps):
        u = controller.controls(rho, t)
        for c in collectors:
            c.on_step(t, rho, u, dw[:, t])
        a, b = kernel.increments(rho, u)
        rho = rho + a * dt + b * dw[:, t][:, None, None]
        rho = _project(rho, config.renormalize, config.psd_projection)
    for c in collectors:
        c.on_final(rho)
    return rho


def em_step(
    sys: QndSystem,
    rho: np.ndarray,
    u,
    dW: float,
    dt: float,
    renormalize: bool = True,
    psd_projection: bool = True,
) -> np.ndarray:
    """One Euler-Maruyama step for a single state, projection included.

    Raises :class:`qmath.StateValidationError` when the projected state is
    invalid, which signals that dt is too large for the dynamics.
    """
    from .qmath import validate_density

    if not np.isfinite(dW):
        raise ValueError("dW must be finite")
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (sys.control_dim,):
        raise ValueError(f"control dimension {u.shape} != ({sys.control_dim},)")
    kernel = _Kernel(sys)
    batch = rho[None, :, :].astype(complex)
    a, b = kernel.increments(batch, u[None, :])
    out = batch + a * dt + b * dW
    out = _project(out, renormalize, psd_projection)[0]
    return validate_density(out)


class TrajectoryRecorder:
    """Keeps full states, controls, noise and record; for small batches."""

    def __init__(self, sys: QndSystem, n_steps: int, batch: int, dt: float):
        d = sys.dim
        self.sys = sys
        self.dt = dt
        self.states = np.zeros((batch, n_steps + 1, d, d), dtype=complex)
        self.controls = np.zeros((batch, n_steps, sys.control_dim))
        self.noise = np.zeros((batch, n_steps))
        self.record = np.zeros((batch, n_steps))
        self._vvd = sys.V + sys.V.conj().T

    def on_step(self, t, rho, u, dw_t):
        self.states[:, t] = rho
        self.controls[:, t] = u
        self.noise[:, t] = dw_t
        self.record[:, t] = dw_t + np.einsum("ij,bji->b", self._vvd, rho).real * self.dt

    def on_final(self, rho):
        self.states[:, -1] = rho


def rollout(
    sys: QndSystem,
    controller,
    rho0: np.ndarray,
    cost_spec,
    sim_config: SimConfig,
    seed_spec: SeedSpec,
    index: tuple = (0, 0),
) -> Trajectory:
    """Simulate one trajectory with the noise stream keyed by ``index``."""
    n = sim_config.n_steps
    dw = seed_spec.wiener_path(index, n, sim_config.dt)[None, :]
    rec = TrajectoryRecorder(sys, n, 1, sim_config.dt)
    acc = cost_mod.CostAccumulator(cost_spec, sim_config.dt, 1, keep_curves=True)
    propagate_batch(sys, controller, rho0[None, :, :], dw, sim_config, [rec, acc])
    return Trajectory(
        states=rec.states[0],
        controls=rec.controls[0],
        noise=rec.noise[0],
        record=rec.record[0],
        running_cost=acc.step_costs[0],
        dt=sim_config.dt,
    )


def batch_rollouts(
    sys: QndSystem,
    policies: list,
    rho0_source,
    R: int,
    cost_spec,
    sim_config: SimConfig,
    seed_spec: SeedSpec,
    iteration: int = 0,
) -> list:
    """P x R trajectories with rollout noise shared across policies.

    ``policies`` is a list of controller objects; ``rho0_source(k, r)``
    supplies the initial state for rollout r (shared by every policy).
    Returns a nested list indexed [policy][rollout]. Intended for modest
    sizes; the training hot path uses :func:`evaluate_policy_costs`.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    n = sim_config.n_steps
    out = []
    for controller in policies:
        row = []
        for r in range(R):
            rho0 = rho0_source(iteration, r)
            dw = seed_spec.wiener_path((iteration, r), n, sim_config.dt)[None, :]
            rec = TrajectoryRecorder(sys, n, 1, sim_config.dt)
            acc = cost_mod.CostAccumulator(cost_spec, sim_config.dt, 1, keep_curves=True)
            propagate_batch(sys, controller, rho0[None, :, :], dw, sim_config, [rec, acc])
            row.append(
                Trajectory(
                    states=rec.states[0],
                    controls=rec.controls[0],
                    noise=rec.noise[0],
                    record=rec.record[0],
                    running_cost=acc.step_costs[0],
                    dt=sim_config.dt,
                )
            )
        out.append(row)
    return out


def haar_source(seed_spec: SeedSpec, dim: int):
    """Initial-state source drawing a fresh Haar projector per (k, r)."""

    def source(k: int, r: int) -> np.ndarray:
        return seed_spec.initial_pure_state((k, r), dim)

    return source


def fixed_source(rho0: np.ndarray):
    def source(k: int, r: int) -> np.ndarray:
        return rho0

    return source


def _cost_chunk(args):
    (sys, policy_spec, params_chunk, R, rho0_stack, dw_table, cost_spec, sim_config) = args
    pc = params_chunk.shape[0]
    controller = policy_mod.BatchedPolicies(policy_spec, params_chunk, R)
    rho0 = np.broadcast_to(rho0_stack, (pc,) + rho0_stack.shape).reshape(
        pc * R, *rho0_stack.shape[1:]
    )
    dw = np.broadcast_to(dw_table, (pc,) + dw_table.shape).reshape(pc * R, -1)
    acc = cost_mod.CostAccumulator(cost_spec, sim_config.dt, pc * R)
    propagate_batch(sys, controller, rho0, dw, sim_config, [acc])
    return acc.totals.reshape(pc, R)


def evaluate_policy_costs(
    sys: QndSystem,
    policy_spec,
    params: np.ndarray,
    R: int,
    cost_spec,
    sim_config: SimConfig,
    seed_spec: SeedSpec,
    iteration: int = 0,
    rho0_source=None,
    workers: int | None = None,
    p_chunk: int = 25,
) -> np.ndarray:
    """Total trajectory costs J for P parameter vectors over R rollouts.

    Noise paths and initial states are indexed by (iteration, r) only, so
    every parameter sample sees identical conditions (common random
    numbers). Work is split over fixed-size parameter chunks; chunking is
    independent of the worker count, so results are deterministic.
    Returns a (P, R) array.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    P = params.shape[0]
    if rho0_source is None:
        rho0_source = haar_source(seed_spec, sys.dim)
    n = sim_config.n_steps
    rho0_stack = np.stack([rho0_source(iteration, r) for r in range(R)])
    dw_table = np.stack([seed_spec.wiener_path((iteration, r), n, sim_config.dt) for r in range(R)])

    chunks = [
        (sys, policy_spec, params[i : i + p_chunk], R, rho0_stack, dw_table, cost_spec, sim_config)
        for i in range(0, P, p_chunk)
    ]
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(chunks) == 1:
        parts = [_cost_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            parts = list(pool.map(_cost_chunk, chunks))
    return np.concatenate(parts, axis=0)


def lindblad_propagate(
    sys: QndSystem,
    rho0: np.ndarray,
    u_sequence: np.ndarray | None,
    sim_config: SimConfig,
) -> np.ndarray:
    """Deterministic Euler integration with the diffusion term dropped.

    This is the noise-averaged (unconditioned) evolution; the ensemble
    mean of SME rollouts converges to it, which the tests use as an
    independent statistical oracle.
    """
    n = sim_config.n_steps
    if u_sequence is None:
        u_sequence = np.zeros((n, sys.control_dim))
    u_sequence = np.asarray(u_sequence, dtype=float)
    if u_sequence.shape != (n, sys.control_dim):
        raise ValueError(f"u_sequence shape {u_sequence.shape} != ({n}, {sys.control_dim})")
    kernel = _Kernel(sys)
    rho = rho0[None, :, :].astype(complex)
    out = np.zeros((n + 1,) + rho0.shape, dtype=complex)
    out[0] = rho0
    for t in range(n):
        a, _ = kernel.increments(rho, u_sequence[t][None, :])
        rho = rho + a * sim_config.dt
        rho = _project(rho, sim_config.renormalize, sim_config.psd_projection)
        out[t + 1] = rho[0]
    return out
