"""Concrete QND-measured open quantum systems behind a uniform interface.

A :class:`QndSystem` bundles the operators of the controlled diffusive
stochastic master equation

    d rho = F(rho) dt + G(rho, u) dt + B(rho) dW

with

    F(rho) = -i [H0, rho] + dissipation_scale * (V rho V^dag - 1/2 {V^dag V, rho})
    G(rho, u) = -i sum_j u_j [H_uj, rho]
    B(rho) = diffusion_scale * (V rho + rho V^dag - Tr[(V + V^dag) rho] rho)

Two factory functions build the systems of interest: the two-qubit
collective-spin measurement (:func:`two_qubit_system`) and a dissipative
homodyne-detected cavity (:func:`homodyne_system`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qmath


@dataclass
class QndSystem:
    """Operator bundle for one continuously measured system.

    Immutable by convention after construction; all evaluation functions
    are pure, so instances can be shared freely across workers.
    """

    dim: int
    H0: np.ndarray
    control_hams: tuple[np.ndarray, ...]
    V: np.ndarray
    eta: float
    gamma: float
    dissipation_scale: float
    diffusion_scale: float
    name: str = field(default="custom")

    def __post_init__(self):
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        ops = [self.H0, self.V, *self.control_hams]
        for op in ops:
            if op.shape != (self.dim, self.dim):
                raise ValueError(f"operator shape {op.shape} != ({self.dim}, {self.dim})")
        for h in (self.H0, *self.control_hams):
            if not qmath.is_hermitian(h):
                raise ValueError("H0 and control Hamiltonians must be Hermitian")

    @property
    def control_dim(self) -> int:
        return len(self.control_hams)


def two_qubit_system(eta: float = 1.0) -> QndSystem:
    """Two qubits under collective sigma_z measurement with sigma_y drives.

    H0 = 0, V = sz(x)I + I(x)sz, control Hamiltonians sy(x)I and I(x)sy
    (two independent magnetic fields), unit measurement strength and
    diffusion prefactor sqrt(eta).
    """
    fz = qmath.collective_coupling("z", 2)
    sy = qmath.pauli("y")
    i2 = qmath.identity(2)
    return QndSystem(
        dim=4,
        H0=np.zeros((4, 4), dtype=complex),
        control_hams=(qmath.kron(sy, i2), qmath.kron(i2, sy)),
        V=fz,
        eta=eta,
        gamma=1.0,
        dissipation_scale=1.0,
        diffusion_scale=np.sqrt(eta),
        name="two_qubit",
    )


def annihilation_operator(n_levels: int) -> np.ndarray:
    """Truncated annihilation operator, super-diagonal sqrt(1..n_levels-1)."""
    if n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    a = np.zeros((n_levels, n_levels), dtype=complex)
    for n in range(1, n_levels):
        a[n - 1, n] = np.sqrt(n)
    return a


def homodyne_system(
    n_levels: int,
    eta: float = 1.0,
    gamma: float = 1.0,
    H0: np.ndarray | None = None,
    control_hams: tuple[np.ndarray, ...] = (),
) -> QndSystem:
    """Dissipative homodyne detection of a truncated cavity mode.

    Measurement coupling is the annihilation operator; the undetected
    fraction of photon leakage gives a dissipative drift with prefactor
    sqrt(1 - eta) * sqrt(gamma) and the detected fraction drives the
    diffusion with prefactor sqrt(eta) * sqrt(gamma).
    """
    if H0 is None:
        # default harmonic oscillator energy, n + 1/2
        H0 = np.diag(np.arange(n_levels) + 0.5).astype(complex)
    for op in (H0, *control_hams):
        if op.shape != (n_levels, n_levels):
            raise ValueError(f"operator shape {op.shape} != ({n_levels}, {n_levels})")
    return QndSystem(
        dim=n_levels,
        H0=H0,
        control_hams=tuple(control_hams),
        V=annihilation_operator(n_levels),
        eta=eta,
        gamma=gamma,
        dissipation_scale=np.sqrt(1.0 - eta) * np.sqrt(gamma),
        diffusion_scale=np.sqrt(eta) * np.sqrt(gamma),
        name="homodyne",
    )


def drift(sys: QndSystem, rho: np.ndarray) -> np.ndarray:
    """Uncontrolled drift F(rho), traceless for valid inputs."""
    out = sys.dissipation_scale * qmath.lindblad_dissipator(sys.V, rho)
    if np.any(sys.H0):
        out = out - 1j * qmath.commutator(sys.H0, rho)
    return out


def controlled_drift(sys: QndSystem, rho: np.ndarray, u) -> np.ndarray:
    """Controlled drift G(rho, u) = -i sum_j u_j [H_uj, rho]."""
    u = np.asarray(u, dtype=float)
    if u.shape != (sys.control_dim,):
        raise ValueError(f"control dimension {u.shape} != ({sys.control_dim},)")
    out = np.zeros_like(rho)
    for uj, hj in zip(u, sys.control_hams):
        out -= 1j * uj * qmath.commutator(hj, rho)
    return out


def diffusion(sys: QndSystem, rho: np.ndarray) -> np.ndarray:
    """Diffusion B(rho), multiplying the innovation increment dW."""
    return sys.diffusion_scale * qmath.measurement_backaction(sys.V, rho)
