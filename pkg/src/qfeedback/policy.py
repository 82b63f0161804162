"""Feedback policies mapping a conditioned state to a control vector.

Three architectures share one flat-parameter convention:

* ``open_loop``: a time-indexed control table, no state dependence.
* ``linear``: u = K1 c(rho) + K2 on real state features.
* ``mlp``: fully connected ReLU network on the same features.

Features c(rho) are Pauli-product expectation values Tr[(s_i (x) s_j ...)
rho] for qubit-sized systems (16 real numbers in [-1, 1] for two qubits,
identity component first), and interleaved real/imaginary upper-triangle
entries otherwise. Parameters pack row-major weights followed by biases,
layer by layer, so a parameter vector is portable across implementations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import qmath

_AXES = "ixyz"


def pauli_product_basis(n_qubits: int):
    """Labels and matrices of the n-qubit Pauli product basis.

    Ordering is lexicographic in (I, X, Y, Z) per site, identity first:
    II, IX, IY, IZ, XI, XX, ... for two qubits.
    """
    singles = {
        "i": qmath.identity(2),
        "x": qmath.pauli("x"),
        "y": qmath.pauli("y"),
        "z": qmath.pauli("z"),
    }
    labels = []
    mats = []
    for combo in product(_AXES, repeat=n_qubits):
        label = "".join(combo).upper()
        op = np.eye(1, dtype=complex)
        for ax in combo:
            op = np.kron(op, singles[ax])
        labels.append(label)
        mats.append(op)
    return labels, np.stack(mats)


def _n_qubits(dim: int) -> int | None:
    n = dim.bit_length() - 1
    return n if dim == 2**n and n >= 1 else None


def feature_dim(dim: int) -> int:
    n = _n_qubits(dim)
    if n is not None:
        return 4**n
    return dim * (dim + 1)


class Featurizer:
    """Vectorized real-feature extraction for a fixed state dimension."""

    def __init__(self, dim: int):
        self.dim = dim
        self.n_features = feature_dim(dim)
        n = _n_qubits(dim)
        if n is not None:
            self.labels, mats = pauli_product_basis(n)
            # c_k = Tr(P_k rho) as a single matmul on flattened states
            self._mat = np.stack([m.T.reshape(-1) for m in mats], axis=1)
            self._triu = None
        else:
            self.labels = None
            self._mat = None
            self._triu = np.triu_indices(dim)

    def __call__(self, rho_batch: np.ndarray) -> np.ndarray:
        """(B, d, d) states -> (B, F) real features."""
        b = rho_batch.shape[0]
        if self._mat is not None:
            return (rho_batch.reshape(b, -1) @ self._mat).real
        vals = rho_batch[:, self._triu[0], self._triu[1]]
        out = np.empty((b, self.n_features))
        out[:, 0::2] = vals.real
        out[:, 1::2] = vals.imag
        return out


def featurize(rho: np.ndarray) -> np.ndarray:
    """Real feature vector of a single density matrix."""
    return Featurizer(rho.shape[0])(rho[None, :, :])[0]


def reconstruct_from_features(features: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of featurize for qubit systems: rho = sum c_k P_k / dim."""
    n = _n_qubits(dim)
    if n is None:
        raise ValueError("reconstruction is defined for qubit dimensions only")
    _, mats = pauli_product_basis(n)
    return np.tensordot(np.asarray(features), mats, axes=1) / dim


@dataclass
class PolicySpec:
    kind: str
    control_dim: int
    feature_dim: int = 0
    hidden: tuple[int, ...] = field(default_factory=tuple)
    horizon: int = 0

    def __post_init__(self):
        if self.kind not in ("open_loop", "linear", "mlp"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.control_dim < 1:
            raise ValueError("control_dim must be >= 1")
        if self.kind == "open_loop" and self.horizon < 1:
            raise ValueError("open_loop policy needs a positive horizon")
        if self.kind != "open_loop" and self.feature_dim < 1:
            raise ValueError("feedback policies need a positive feature_dim")
        self.hidden = tuple(int(h) for h in self.hidden)

    def layer_widths(self) -> list[int]:
        return [self.feature_dim, *self.hidden, self.control_dim]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "control_dim": self.control_dim,
            "feature_dim": self.feature_dim,
            "hidden": list(self.hidden),
            "horizon": self.horizon,
        }

    @staticmethod
    def from_dict(d: dict) -> "PolicySpec":
        return PolicySpec(
            kind=d["kind"],
            control_dim=d["control_dim"],
            feature_dim=d.get("feature_dim", 0),
            hidden=tuple(d.get("hidden", ())),
            horizon=d.get("horizon", 0),
        )


def param_count(spec: PolicySpec) -> int:
    if spec.kind == "open_loop":
        return spec.horizon * spec.control_dim
    widths = spec.layer_widths()
    return sum(w_out * (w_in + 1) for w_in, w_out in zip(widths[:-1], widths[1:]))


def _unpack_layers(spec: PolicySpec, phi: np.ndarray):
    """Yield (W, b) per layer from the flat vector, row-major weights first."""
    widths = spec.layer_widths()
    pos = 0
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        w = phi[pos : pos + w_out * w_in].reshape(w_out, w_in)
        pos += w_out * w_in
        b = phi[pos : pos + w_out]
        pos += w_out
        yield w, b


def _check_length(spec: PolicySpec, phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(-1)
    expected = param_count(spec)
    if phi.shape[0] != expected:
        raise ValueError(f"parameter vector length {phi.shape[0]} != {expected}")
    return phi


def open_loop_eval(spec: PolicySpec, phi: np.ndarray, t_index: int) -> np.ndarray:
    phi = _check_length(spec, phi)
    if not 0 <= t_index < spec.horizon:
        raise IndexError(f"t_index {t_index} outside horizon {spec.horizon}")
    m = spec.control_dim
    return phi[t_index * m : (t_index + 1) * m].copy()


def linear_eval(spec: PolicySpec, phi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    phi = _check_length(spec, phi)
    (w, b), = _unpack_layers(spec, phi)
    return w @ featurize(rho) + b


def mlp_eval(spec: PolicySpec, phi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    phi = _check_length(spec, phi)
    x = featurize(rho)
    layers = list(_unpack_layers(spec, phi))
    for w, b in layers[:-1]:
        x = np.maximum(w @ x + b, 0.0)
    w, b = layers[-1]
    return w @ x + b


def init_params(spec: PolicySpec, seed) -> np.ndarray:
    """LeCun initialization: weights N(0, 1/fan_in), biases zero.

    The open-loop table has no fan-in and starts at zero control.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if spec.kind == "open_loop":
        return np.zeros(param_count(spec))
    parts = []
    widths = spec.layer_widths()
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        parts.append(rng.normal(0.0, 1.0 / np.sqrt(w_in), size=w_out * w_in))
        parts.append(np.zeros(w_out))
    return np.concatenate(parts)


class Policy:
    """A policy spec bound to one parameter vector, batch-evaluable."""

    def __init__(self, spec: PolicySpec, params: np.ndarray):
        self.spec = spec
        self.params = _check_length(spec, params)
        self._batch = BatchedPolicies(spec, self.params[None, :], repeat=1)

    @property
    def control_dim(self) -> int:
        return self.spec.control_dim

    def control(self, rho: np.ndarray, t: int = 0) -> np.ndarray:
        if self.spec.kind == "open_loop":
            return open_loop_eval(self.spec, self.params, t)
        return self.controls(rho[None, :, :], t)[0]

    def controls(self, rho_batch: np.ndarray, t: int) -> np.ndarray:
        b = rho_batch.shape[0]
        self._batch.repeat = b
        return self._batch.controls(rho_batch, t)


class BatchedPolicies:
    """P parameter vectors applied to a (P * repeat) state batch.

    States are laid out parameter-major: rows [p * repeat, (p+1) * repeat)
    all use parameter vector p. Evaluation is a couple of einsums per
    step, which keeps the training loop vectorized end to end.
    """

    def __init__(self, spec: PolicySpec, params: np.ndarray, repeat: int):
        self.spec = spec
        params = np.atleast_2d(np.asarray(params, dtype=float))
        expected = param_count(spec)
        if params.shape[1] != expected:
            raise ValueError(f"parameter rows have length {params.shape[1]} != {expected}")
        self.n_policies = params.shape[0]
        self.repeat = repeat
        self._featurizer = None
        if spec.kind == "open_loop":
            self._table = params.reshape(self.n_policies, spec.horizon, spec.control_dim)
            self._layers = None
        else:
            self._table = None
            self._layers = []
            widths = spec.layer_widths()
            pos = 0
            for w_in, w_out in zip(widths[:-1], widths[1:]):
                w = params[:, pos : pos + w_out * w_in].reshape(self.n_policies, w_out, w_in)
                pos += w_out * w_in
                b = params[:, pos : pos + w_out]
                pos += w_out
                self._layers.append((w, b))

    def controls(self, rho_batch: np.ndarray, t: int) -> np.ndarray:
        p, rep = self.n_policies, self.repeat
        if self._table is not None:
            u = self._table[:, t, :]
            return np.broadcast_to(u[:, None, :], (p, rep, self.spec.control_dim)).reshape(
                p * rep, -1
            )
        if self._featurizer is None:
            self._featurizer = Featurizer(rho_batch.shape[-1])
        x = self._featurizer(rho_batch).reshape(p, rep, -1)
        for w, b in self._layers[:-1]:
            x = np.maximum(np.einsum("pri,poi->pro", x, w) + b[:, None, :], 0.0)
        w, b = self._layers[-1]
        u = np.einsum("pri,poi->pro", x, w) + b[:, None, :]
        return u.reshape(p * rep, -1)


def write_param_file(path, spec: PolicySpec, phi: np.ndarray) -> None:
    """One-line JSON header, then the raw little-endian float64 vector."""
    phi = _check_length(spec, phi)
    header = {"format": "qfeedback-params-v1", "spec": spec.to_dict(), "count": len(phi)}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(phi.astype("<f8").tobytes())


def read_param_file(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != "qfeedback-params-v1":
            raise ValueError(f"{path}: not a parameter file")
        spec = PolicySpec.from_dict(header["spec"])
        phi = np.frombuffer(f.read(), dtype="<f8", count=header["count"]).copy()
    return spec, _check_length(spec, phi)
