"""Ensemble evaluation of a fixed controller on held-out noise.

Runs a controller over many fresh trajectories (noise and initial states
drawn from evaluation-only streams, never the training ones) and reduces
them to per-time statistics: mean and spread of every Pauli-product
expectation, of the goal-state overlap, and of the cumulative state and
control cost curves. Chunk boundaries are fixed, so the aggregate is
byte-deterministic regardless of the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import policy as policy_mod
from .cost import CostSpec, _q_batch
from .simulator import SeedSpec, SimConfig, default_workers, propagate_batch
from .systems import QndSystem


@dataclass
class EnsembleStats:
    """Per-time ensemble statistics over n_traj evaluation rollouts."""

    times: np.ndarray
    n_traj: int
    fid_mean: np.ndarray
    fid_std: np.ndarray
    jstate_mean: np.ndarray
    jstate_std: np.ndarray
    jcontrol_mean: np.ndarray
    jcontrol_std: np.ndarray
    basis_labels: list | None = None
    basis_mean: np.ndarray | None = None
    basis_std: np.ndarray | None = None

    @property
    def final_fidelity_mean(self) -> float:
        return float(self.fid_mean[-1])

    @property
    def control_effort_mean(self) -> float:
        """Mean cumulative control cost at the end of the window."""
        return float(self.jcontrol_mean[-1])

    def time_to_fidelity(self, threshold: float) -> float | None:
        """First time at which the mean overlap reaches ``threshold``."""
        idx = np.nonzero(self.fid_mean >= threshold)[0]
        if idx.size == 0:
            return None
        return float(self.times[idx[0]])


class _SeriesCollector:
    """Per-trajectory time series for one evaluation chunk."""

    def __init__(self, cost_spec: CostSpec, dt: float, batch: int, n_steps: int, featurizer):
        self.spec = cost_spec
        self.dt = dt
        self._des_flat = cost_spec.rho_des.T.reshape(-1)
        self._featurizer = featurizer
        self.fid = np.zeros((batch, n_steps + 1))
        self.state_inc = np.zeros((batch, n_steps))
        self.control_inc = np.zeros((batch, n_steps))
        self.basis = (
            np.zeros((batch, n_steps + 1, featurizer.n_features)) if featurizer else None
        )

    def _observe(self, t, rho):
        flat = rho.reshape(rho.shape[0], -1)
        self.fid[:, t] = np.clip((flat @ self._des_flat).real, 0.0, 1.0)
        if self.basis is not None:
            self.basis[:, t, :] = self._featurizer(rho)

    def on_step(self, t, rho, u, dw_t):
        self._observe(t, rho)
        infid = 1.0 - self.fid[:, t]
        self.state_inc[:, t] = (
            self.spec.q_s * _q_batch(infid, self.spec.q_alpha, self.spec.q_beta) * self.dt
        )
        self.control_inc[:, t] = (u * u) @ self.spec.q_u * self.dt

    def on_final(self, rho):
        self._observe(self.fid.shape[1] - 1, rho)


def _eval_chunk(args):
    (sys, controller, cost_spec, sim_config, seed_spec, j0, j1, with_basis) = args
    b = j1 - j0
    rho0 = np.stack([seed_spec.eval_pure_state(j, sys.dim) for j in range(j0, j1)])
    dw = np.stack(
        [seed_spec.eval_wiener_path(j, sim_config.n_steps, sim_config.dt) for j in range(j0, j1)]
    )
    featurizer = policy_mod.Featurizer(sys.dim) if with_basis else None
    col = _SeriesCollector(cost_spec, sim_config.dt, b, sim_config.n_steps, featurizer)
    propagate_batch(sys, controller, rho0, dw, sim_config, [col])

    jstate = np.concatenate([np.zeros((b, 1)), np.cumsum(col.state_inc, axis=1)], axis=1)
    jctrl = np.concatenate([np.zeros((b, 1)), np.cumsum(col.control_inc, axis=1)], axis=1)
    out = {
        "n": b,
        "fid": (col.fid.sum(axis=0), (col.fid**2).sum(axis=0)),
        "jstate": (jstate.sum(axis=0), (jstate**2).sum(axis=0)),
        "jcontrol": (jctrl.sum(axis=0), (jctrl**2).sum(axis=0)),
    }
    if with_basis:
        out["basis"] = (col.basis.sum(axis=0), (col.basis**2).sum(axis=0))
    return out


def _mean_std(pair, n):
    total, sq = pair
    mean = total / n
    var = np.clip(sq / n - mean**2, 0.0, None)
    return mean, np.sqrt(var)


def evaluate_ensemble(
    sys: QndSystem,
    controller,
    n_traj: int,
    cost_spec: CostSpec,
    sim_config: SimConfig,
    seed_spec: SeedSpec,
    with_basis: bool = True,
    chunk: int = 250,
    workers: int | None = None,
) -> EnsembleStats:
    """Evaluate ``controller`` on ``n_traj`` held-out trajectories."""
    if n_traj < 2:
        raise ValueError("need at least 2 trajectories for spread estimates")
    if with_basis and policy_mod._n_qubits(sys.dim) is None:
        with_basis = False
    chunks = [
        (sys, controller, cost_spec, sim_config, seed_spec, j, min(j + chunk, n_traj), with_basis)
        for j in range(0, n_traj, chunk)
    ]
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(chunks) == 1:
        parts = [_eval_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            parts = list(pool.map(_eval_chunk, chunks))

    def merged(key):
        total = sum(p[key][0] for p in parts)
        sq = sum(p[key][1] for p in parts)
        return total, sq

    n = sum(p["n"] for p in parts)
    fid_mean, fid_std = _mean_std(merged("fid"), n)
    js_mean, js_std = _mean_std(merged("jstate"), n)
    jc_mean, jc_std = _mean_std(merged("jcontrol"), n)
    stats = EnsembleStats(
        times=np.arange(sim_config.n_steps + 1) * sim_config.dt,
        n_traj=n,
        fid_mean=fid_mean,
        fid_std=fid_std,
        jstate_mean=js_mean,
        jstate_std=js_std,
        jcontrol_mean=jc_mean,
        jcontrol_std=jc_std,
    )
    if with_basis:
        basis_mean, basis_std = _mean_std(merged("basis"), n)
        stats.basis_labels = policy_mod.Featurizer(sys.dim).labels
        stats.basis_mean = basis_mean
        stats.basis_std = basis_std
    return stats
