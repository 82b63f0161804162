"""Complex operator algebra for continuously measured qubit/cavity systems.

Everything operates on dense complex numpy arrays. Density matrices are
plain ``(d, d)`` complex128 arrays satisfying the usual invariants
(Hermitian, unit trace, positive semidefinite up to tolerance); use
:func:`validate_density` to enforce them.

Superoperators follow the double-commutator / anticommutator conventions

    D[A] rho = 1/2 [A, [A, rho]]
    H[A] rho = {A, rho} - 2 Tr(A rho) rho

together with their Hermiticity-preserving generalizations for
non-Hermitian couplings (:func:`lindblad_dissipator`,
:func:`measurement_backaction`), which coincide with -D[A] and H[A]
whenever A is Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL_HERM = 1e-9
TOL_TRACE = 1e-9
TOL_PSD = 1e-8
TOL_DEGEN = 1e-9

_PAULI = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


class StateValidationError(ValueError):
    """Raised when a matrix fails the density-matrix invariants."""


def pauli(axis: str) -> np.ndarray:
    """Return the standard 2x2 Pauli matrix for ``axis`` in {'x','y','z'}."""
    try:
        return _PAULI[axis].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli axis {axis!r}, expected 'x', 'y' or 'z'")


def identity(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two operators (dimensions multiply)."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def collective_coupling(axis: str, n_qubits: int) -> np.ndarray:
    """Sum of single-qubit Pauli operators, sigma_axis on each site.

    For two qubits and axis 'z' this is the diag(2, 0, 0, -2) coupling
    between the collective spin and the measurement probe.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    sig = pauli(axis)
    dim = 2**n_qubits
    total = np.zeros((dim, dim), dtype=complex)
    for i in range(n_qubits):
        op = np.eye(1, dtype=complex)
        for j in range(n_qubits):
            op = np.kron(op, sig if j == i else np.eye(2, dtype=complex))
        total += op
    return total


def _check_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_dims(a, b)
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_dims(a, b)
    return a @ b + b @ a


def is_hermitian(a: np.ndarray, tol: float = TOL_HERM) -> bool:
    return bool(np.max(np.abs(a - a.conj().T)) <= tol)


def superop_D(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Double-commutator superoperator D[A] rho = 1/2 [A, [A, rho]]."""
    _check_same_dims(a, rho)
    return 0.5 * commutator(a, commutator(a, rho))


def superop_H(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Back-action superoperator H[A] rho = {A, rho} - 2 Tr(A rho) rho."""
    _check_same_dims(a, rho)
    return anticommutator(a, rho) - 2.0 * np.trace(a @ rho) * rho


def lindblad_dissipator(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Dissipator A rho A^dag - 1/2 {A^dag A, rho}.

    Equals -D[A] rho for Hermitian A and preserves Hermiticity for any A,
    which the double-commutator form does not.
    """
    _check_same_dims(a, rho)
    ad = a.conj().T
    return a @ rho @ ad - 0.5 * anticommutator(ad @ a, rho)


def measurement_backaction(v: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Innovation gain V rho + rho V^dag - Tr[(V + V^dag) rho] rho.

    Equals H[V] rho for Hermitian V and preserves Hermiticity for any V.
    """
    _check_same_dims(v, rho)
    vr = v @ rho
    return vr + vr.conj().T - np.trace(vr + vr.conj().T).real * rho


def fidelity_overlap(rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """Trace overlap Re Tr(rho_a rho_b), clamped to [0, 1].

    Coincides with the squared state overlap when both arguments are pure;
    cheap compared to the eigenvalue-based trace distance.
    """
    _check_same_dims(rho_a, rho_b)
    val = float(np.einsum("ij,ji->", rho_a, rho_b).real)
    return min(max(val, 0.0), 1.0)


def basis_projector(dim: int, index: int) -> np.ndarray:
    """Projector |index><index| in the computational basis."""
    rho = np.zeros((dim, dim), dtype=complex)
    rho[index, index] = 1.0
    return rho


def symmetric_bell_density() -> np.ndarray:
    """Density matrix of (|01> + |10>)/sqrt(2), the stabilization target.

    Equal to (I(x)I + sx(x)sx + sy(x)sy - sz(x)sz) / 4.
    """
    rho = np.zeros((4, 4), dtype=complex)
    rho[1:3, 1:3] = 0.5
    return rho


def random_pure_state(dim: int, seed) -> np.ndarray:
    """Rank-one projector of a Haar-random unit vector.

    ``seed`` may be anything accepted by ``np.random.default_rng`` or an
    existing Generator; identical seeds give bitwise-identical states.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_mixed_state(dim: int, seed) -> np.ndarray:
    """Full-rank random density matrix M M^dag / Tr, Wishart style."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


def validate_density(
    rho: np.ndarray,
    tol_herm: float = TOL_HERM,
    tol_trace: float = TOL_TRACE,
    tol_psd: float = TOL_PSD,
) -> np.ndarray:
    """Check the density-matrix invariants, returning ``rho`` unchanged.

    Raises :class:`StateValidationError` when the matrix is not square,
    not Hermitian within ``tol_herm``, not unit trace within ``tol_trace``,
    or has an eigenvalue below ``-tol_psd``.
    """
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise StateValidationError(f"expected a square matrix, got shape {rho.shape}")
    if not np.all(np.isfinite(rho.view(float))):
        raise StateValidationError("non-finite entries in state")
    herm_defect = float(np.max(np.abs(rho - rho.conj().T)))
    if herm_defect > tol_herm:
        raise StateValidationError(f"Hermiticity defect {herm_defect:.3e} > {tol_herm:.1e}")
    trace_defect = abs(np.trace(rho) - 1.0)
    if trace_defect > tol_trace:
        raise StateValidationError(f"trace defect {trace_defect:.3e} > {tol_trace:.1e}")
    min_eig = float(np.linalg.eigvalsh(rho)[0])
    if min_eig < -tol_psd:
        raise StateValidationError(f"negative eigenvalue {min_eig:.3e} < -{tol_psd:.1e}")
    return rho


@dataclass
class DegeneracyReport:
    """Spectrum of a coupling operator and the diffusion magnitude at a state.

    ``diffusion_norm_at_state`` is the Frobenius norm of H[A] rho; when it
    falls below ``tol`` the diffusion is degenerate at that state and
    methods requiring an invertible noise covariance break down.
    """

    operator_eigenvalues: list[float]
    diffusion_norm_at_state: float
    is_degenerate: bool


def degeneracy_report(a: np.ndarray, rho: np.ndarray, tol: float = TOL_DEGEN) -> DegeneracyReport:
    if not is_hermitian(a):
        raise ValueError("degeneracy_report expects a Hermitian coupling operator")
    eigs = [float(x) for x in np.linalg.eigvalsh(a)]
    norm = float(np.linalg.norm(superop_H(a, rho)))
    return DegeneracyReport(
        operator_eigenvalues=eigs,
        diffusion_norm_at_state=norm,
        is_degenerate=norm < tol,
    )
