"""Proportional benchmark controller on the trace overlap with the goal.

The comparison arm is a two-term static feedback law per control channel,

    u_j = gf_j (1 - Tr[rho_des rho]) + gg_j Re Tr(i [H_uj, rho] rho_des)

a P-controller on the infidelity plus an optional overlap-gradient term
(the second trace is the instantaneous rate of change of the overlap per
unit control, so a negative gg_j pushes uphill in fidelity). With
gg = 0 this reduces to the pure fidelity-proportional form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qmath
from .systems import QndSystem


@dataclass
class BaselineSpec:
    gain_fidelity: np.ndarray
    gain_gradient: np.ndarray

    def __post_init__(self):
        self.gain_fidelity = np.asarray(self.gain_fidelity, dtype=float).reshape(-1)
        self.gain_gradient = np.asarray(self.gain_gradient, dtype=float).reshape(-1)
        if self.gain_fidelity.shape != self.gain_gradient.shape:
            raise ValueError("gain vectors must have equal length")


def baseline_eval(
    spec: BaselineSpec, sys: QndSystem, rho: np.ndarray, rho_des: np.ndarray
) -> np.ndarray:
    """Control vector of the benchmark law at one state."""
    if spec.gain_fidelity.shape[0] != sys.control_dim:
        raise ValueError(
            f"gain length {spec.gain_fidelity.shape[0]} != control dim {sys.control_dim}"
        )
    infid = 1.0 - qmath.fidelity_overlap(rho_des, rho)
    u = spec.gain_fidelity * infid
    for j, hj in enumerate(sys.control_hams):
        grad = np.trace(1j * qmath.commutator(hj, rho) @ rho_des).real
        u[j] += spec.gain_gradient[j] * grad
    return u


class BaselineController:
    """Batched evaluation of the benchmark law for the trajectory engine."""

    def __init__(self, spec: BaselineSpec, sys: QndSystem, rho_des: np.ndarray):
        if spec.gain_fidelity.shape[0] != sys.control_dim:
            raise ValueError(
                f"gain length {spec.gain_fidelity.shape[0]} != control dim {sys.control_dim}"
            )
        self.spec = spec
        self.control_dim = sys.control_dim
        self._des_flat = rho_des.T.reshape(-1)
        # Tr(i [H_j, rho] rho_des) = Tr(rho * i [rho_des, H_j]); the bracket
        # is Hermitian, so the expectation is real and linear in rho.
        self._grad_ops = np.stack(
            [(1j * qmath.commutator(rho_des, hj)).T.reshape(-1) for hj in sys.control_hams]
        )

    def controls(self, rho_batch: np.ndarray, t: int) -> np.ndarray:
        b = rho_batch.shape[0]
        flat = rho_batch.reshape(b, -1)
        infid = 1.0 - np.clip((flat @ self._des_flat).real, 0.0, 1.0)
        u = infid[:, None] * self.spec.gain_fidelity[None, :]
        if np.any(self.spec.gain_gradient):
            grads = (flat @ self._grad_ops.T).real
            u = u + grads * self.spec.gain_gradient[None, :]
        return u
