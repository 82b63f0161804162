"""Running and terminal cost evaluation plus the shape transform.

The running cost integrand is

    Q_s q(1 - Tr[rho_des rho]) + u^T Q_u u

with q the log angle-resolution map q(x) = alpha log(1 + beta x) /
log(1 + beta), which steepens the objective near perfect overlap where
the plain trace metric flattens out. Costs are shaped with S(J) =
exp(-kappa J) before entering the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qmath import fidelity_overlap


@dataclass
class CostSpec:
    rho_des: np.ndarray
    q_s: float = 1.0
    q_u: np.ndarray = field(default_factory=lambda: np.array([0.01, 0.01]))
    q_alpha: float = 1.0
    q_beta: float = 9.0
    terminal_weight: float = 0.0

    def __post_init__(self):
        self.q_u = np.asarray(self.q_u, dtype=float).reshape(-1)
        if self.q_s < 0 or np.any(self.q_u < 0) or self.terminal_weight < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.q_alpha <= 0 or self.q_beta <= 0:
            raise ValueError("q_alpha and q_beta must be positive")


@dataclass
class ShapeSpec:
    kind: str = "exp"
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind != "exp":
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


def q_resolve(x: float, alpha: float, beta: float) -> float:
    """Angle-resolution map on [0, 1]: 0 at 0, alpha at 1, concave."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"q_resolve argument {x} outside [0, 1]")
    return alpha * np.log1p(beta * x) / np.log1p(beta)


def _q_batch(x: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    return alpha * np.log1p(beta * x) / np.log1p(beta)


def running_cost(rho: np.ndarray, u, spec: CostSpec, dt: float) -> float:
    """One integrand sample times dt; nonnegative."""
    u = np.asarray(u, dtype=float).reshape(-1)
    infid = 1.0 - fidelity_overlap(spec.rho_des, rho)
    state_term = spec.q_s * q_resolve(infid, spec.q_alpha, spec.q_beta)
    control_term = float(np.dot(spec.q_u, u * u))
    return (state_term + control_term) * dt


def terminal_cost(rho: np.ndarray, spec: CostSpec) -> float:
    if spec.terminal_weight == 0.0:
        return 0.0
    infid = 1.0 - fidelity_overlap(spec.rho_des, rho)
    return spec.terminal_weight * q_resolve(infid, spec.q_alpha, spec.q_beta)


def trajectory_cost(traj, spec: CostSpec) -> float:
    """Sum of running costs plus the terminal penalty at the final state."""
    return float(np.sum(traj.running_cost)) + terminal_cost(traj.states[-1], spec)


def running_cost_decomposition(traj, spec: CostSpec):
    """Cumulative state-cost and control-cost curves over a trajectory.

    Returns two nondecreasing arrays of length n_steps whose final values
    sum to the trajectory cost minus the terminal term.
    """
    n = traj.controls.shape[0]
    state_inc = np.empty(n)
    ctrl_inc = np.empty(n)
    for t in range(n):
        infid = 1.0 - fidelity_overlap(spec.rho_des, traj.states[t])
        state_inc[t] = spec.q_s * q_resolve(infid, spec.q_alpha, spec.q_beta) * traj.dt
        ctrl_inc[t] = float(np.dot(spec.q_u, traj.controls[t] ** 2)) * traj.dt
    return np.cumsum(state_inc), np.cumsum(ctrl_inc)


def shape(J: float, spec: ShapeSpec) -> float:
    """Smooth non-increasing transform exp(-kappa J), in (0, 1] for J >= 0."""
    if not np.isfinite(J):
        raise ValueError("cost must be finite")
    return float(np.exp(-spec.kappa * J))


class CostAccumulator:
    """Batched running-cost collector for the trajectory engine.

    Accumulates per-member totals and, when ``keep_curves`` is set, the
    per-step increments split into state and control components.
    """

    def __init__(self, spec: CostSpec, dt: float, batch: int, keep_curves: bool = False):
        self.spec = spec
        self.dt = dt
        self.totals = np.zeros(batch)
        self.keep_curves = keep_curves
        self.step_costs = None
        self.state_inc = None
        self.control_inc = None
        self._steps = []
        self._state = []
        self._control = []
        self._des_flat = spec.rho_des.T.reshape(-1)

    def _fidelity(self, rho: np.ndarray) -> np.ndarray:
        f = (rho.reshape(rho.shape[0], -1) @ self._des_flat).real
        return np.clip(f, 0.0, 1.0)

    def on_step(self, t, rho, u, dw_t):
        infid = 1.0 - self._fidelity(rho)
        state = self.spec.q_s * _q_batch(infid, self.spec.q_alpha, self.spec.q_beta) * self.dt
        control = (u * u) @ self.spec.q_u * self.dt
        self.totals += state + control
        if self.keep_curves:
            self._steps.append(state + control)
            self._state.append(state)
            self._control.append(control)

    def on_final(self, rho):
        if self.spec.terminal_weight > 0.0:
            infid = 1.0 - self._fidelity(rho)
            self.totals += self.spec.terminal_weight * _q_batch(
                infid, self.spec.q_alpha, self.spec.q_beta
            )
        if self.keep_curves:
            self.step_costs = np.stack(self._steps, axis=1)
            self.state_inc = np.stack(self._state, axis=1)
            self.control_inc = np.stack(self._control, axis=1)
