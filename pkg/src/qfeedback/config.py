"""Experiment configuration: YAML schema, validation and object builders.

A config file has six sections (system, policy, cost, gass, sim,
baseline) plus an output directory. Validation is strict: unknown keys
are rejected so typos fail loudly before a long run burns hours.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import qmath, systems
from .baseline import BaselineSpec
from .cost import CostSpec, ShapeSpec
from .gass import GassConfig
from .policy import PolicySpec, feature_dim
from .simulator import SeedSpec, SimConfig


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _section(raw: dict, name: str, allowed: set[str]) -> dict:
    sec = raw.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return sec


def _num(sec: dict, key: str, default, kind=float, positive=False, nonneg=False):
    val = sec.get(key, default)
    try:
        val = kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' must be a {kind.__name__}, got {val!r}")
    if positive and val <= 0:
        raise ConfigError(f"'{key}' must be positive, got {val}")
    if nonneg and val < 0:
        raise ConfigError(f"'{key}' must be nonnegative, got {val}")
    return val


@dataclass
class ExperimentConfig:
    system_kind: str = "two_qubit"
    eta: float = 1.0
    gamma: float = 1.0
    n_levels: int = 5

    policy_kind: str = "linear"
    hidden: tuple[int, ...] = ()
    horizon: int = 0

    q_s: float = 1.0
    q_u: tuple[float, ...] = (0.01, 0.01)
    alpha: float = 1.0
    beta: float = 9.0
    terminal_weight: float = 0.0

    iterations: int = 850
    param_samples: int = 200
    rollouts: int = 50
    step_size: float = 1.0
    kappa: float = 1.0
    sigma: float = 0.1
    master_seed: int = 0
    mirrored: bool = True
    sigma_decay: float = 1.0
    step_decay: float = 1.0

    dt: float = 1e-3
    n_steps: int = 1000
    eval_steps: int = 1000
    n_eval_trajectories: int = 1000

    gain_fidelity: tuple[float, ...] = (5.0, 5.0)
    gain_gradient: tuple[float, ...] = (-5.0, -5.0)

    output_dir: str = "results"
    workers: int | None = None

    # -- builders ----------------------------------------------------------

    def build_system(self) -> systems.QndSystem:
        if self.system_kind == "two_qubit":
            return systems.two_qubit_system(eta=self.eta)
        if self.system_kind == "homodyne":
            return systems.homodyne_system(self.n_levels, eta=self.eta, gamma=self.gamma)
        raise ConfigError(f"unknown system kind {self.system_kind!r}")

    def build_policy_spec(self, sys: systems.QndSystem) -> PolicySpec:
        control_dim = max(sys.control_dim, 1)
        if self.policy_kind == "open_loop":
            horizon = self.horizon or self.n_steps
            return PolicySpec(kind="open_loop", control_dim=control_dim, horizon=horizon)
        return PolicySpec(
            kind=self.policy_kind,
            control_dim=control_dim,
            feature_dim=feature_dim(sys.dim),
            hidden=self.hidden,
        )

    def build_cost_spec(self, sys: systems.QndSystem) -> CostSpec:
        m = max(sys.control_dim, 1)
        q_u = np.asarray(self.q_u, dtype=float).reshape(-1)
        if q_u.size == 1:
            q_u = np.full(m, q_u[0])
        if q_u.shape != (m,):
            raise ConfigError(f"cost.q_u needs 1 or {m} entries, got {q_u.size}")
        return CostSpec(
            rho_des=self.target_state(sys),
            q_s=self.q_s,
            q_u=q_u,
            q_alpha=self.alpha,
            q_beta=self.beta,
            terminal_weight=self.terminal_weight,
        )

    def target_state(self, sys: systems.QndSystem) -> np.ndarray:
        if self.system_kind == "two_qubit":
            return qmath.symmetric_bell_density()
        # cavity default target: ground state
        return qmath.basis_projector(sys.dim, 0)

    def build_sim_config(self, n_steps: int | None = None) -> SimConfig:
        return SimConfig(dt=self.dt, n_steps=n_steps or self.n_steps)

    def build_gass_config(self) -> GassConfig:
        return GassConfig(
            iterations=self.iterations,
            param_samples=self.param_samples,
            rollouts=self.rollouts,
            step_size=self.step_size,
            shape=ShapeSpec(kind="exp", kappa=self.kappa),
            mirrored=self.mirrored,
            sigma_decay=self.sigma_decay,
            step_decay=self.step_decay,
            workers=self.workers,
        )

    def build_baseline_spec(self, sys: systems.QndSystem) -> BaselineSpec:
        m = max(sys.control_dim, 1)

        def widen(vals):
            arr = np.asarray(vals, dtype=float).reshape(-1)
            if arr.size == 1:
                arr = np.full(m, arr[0])
            if arr.shape != (m,):
                raise ConfigError(f"baseline gains need 1 or {m} entries, got {arr.size}")
            return arr

        return BaselineSpec(
            gain_fidelity=widen(self.gain_fidelity), gain_gradient=widen(self.gain_gradient)
        )

    def seed_spec(self) -> SeedSpec:
        return SeedSpec(self.master_seed)

    def sigma_vector(self, n_params: int) -> np.ndarray:
        return np.full(n_params, self.sigma)


_SECTIONS = {
    "system": {"kind", "eta", "gamma", "n_levels"},
    "policy": {"kind", "hidden", "horizon"},
    "cost": {"q_s", "q_u", "alpha", "beta", "terminal_weight"},
    "gass": {
        "iterations",
        "param_samples",
        "rollouts",
        "step_size",
        "kappa",
        "sigma",
        "master_seed",
        "mirrored",
        "sigma_decay",
        "step_decay",
    },
    "sim": {"dt", "n_steps", "eval_steps", "n_eval_trajectories"},
    "baseline": {"gain_fidelity", "gain_gradient"},
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be a mapping")
    unknown = set(raw) - (set(_SECTIONS) | {"output_dir", "workers"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    sys_s = _section(raw, "system", _SECTIONS["system"])
    pol_s = _section(raw, "policy", _SECTIONS["policy"])
    cost_s = _section(raw, "cost", _SECTIONS["cost"])
    gass_s = _section(raw, "gass", _SECTIONS["gass"])
    sim_s = _section(raw, "sim", _SECTIONS["sim"])
    base_s = _section(raw, "baseline", _SECTIONS["baseline"])

    kind = sys_s.get("kind", "two_qubit")
    if kind not in ("two_qubit", "homodyne"):
        raise ConfigError(f"system.kind must be two_qubit or homodyne, got {kind!r}")
    pkind = pol_s.get("kind", "linear")
    if pkind not in ("linear", "mlp", "open_loop"):
        raise ConfigError(f"policy.kind must be linear, mlp or open_loop, got {pkind!r}")

    eta = _num(sys_s, "eta", 1.0)
    if not 0.0 < eta <= 1.0:
        raise ConfigError(f"system.eta must lie in (0, 1], got {eta}")

    hidden = pol_s.get("hidden", [])
    if not isinstance(hidden, (list, tuple)) or any(
        not isinstance(h, int) or h < 1 for h in hidden
    ):
        raise ConfigError("policy.hidden must be a list of positive integers")

    def listable(sec, key, default):
        val = sec.get(key, default)
        if isinstance(val, (int, float)):
            val = [val]
        if not isinstance(val, (list, tuple)) or not all(
            isinstance(v, (int, float)) for v in val
        ):
            raise ConfigError(f"'{key}' must be a number or list of numbers")
        return tuple(float(v) for v in val)

    mirrored = gass_s.get("mirrored", True)
    if not isinstance(mirrored, bool):
        raise ConfigError("gass.mirrored must be a boolean")

    cfg = ExperimentConfig(
        system_kind=kind,
        eta=eta,
        gamma=_num(sys_s, "gamma", 1.0, nonneg=True),
        n_levels=_num(sys_s, "n_levels", 5, kind=int, positive=True),
        policy_kind=pkind,
        hidden=tuple(hidden),
        horizon=_num(pol_s, "horizon", 0, kind=int, nonneg=True),
        q_s=_num(cost_s, "q_s", 1.0, nonneg=True),
        q_u=listable(cost_s, "q_u", [0.01]),
        alpha=_num(cost_s, "alpha", 1.0, positive=True),
        beta=_num(cost_s, "beta", 9.0, positive=True),
        terminal_weight=_num(cost_s, "terminal_weight", 0.0, nonneg=True),
        iterations=_num(gass_s, "iterations", 850, kind=int, nonneg=True),
        param_samples=_num(gass_s, "param_samples", 200, kind=int, positive=True),
        rollouts=_num(gass_s, "rollouts", 50, kind=int, positive=True),
        step_size=_num(gass_s, "step_size", 1.0, positive=True),
        kappa=_num(gass_s, "kappa", 1.0, positive=True),
        sigma=_num(gass_s, "sigma", 0.1, positive=True),
        master_seed=_num(gass_s, "master_seed", 0, kind=int, nonneg=True),
        mirrored=mirrored,
        sigma_decay=_num(gass_s, "sigma_decay", 1.0, positive=True),
        step_decay=_num(gass_s, "step_decay", 1.0, positive=True),
        dt=_num(sim_s, "dt", 1e-3, positive=True),
        n_steps=_num(sim_s, "n_steps", 1000, kind=int, positive=True),
        eval_steps=_num(sim_s, "eval_steps", 1000, kind=int, positive=True),
        n_eval_trajectories=_num(sim_s, "n_eval_trajectories", 1000, kind=int, positive=True),
        gain_fidelity=listable(base_s, "gain_fidelity", [5.0]),
        gain_gradient=listable(base_s, "gain_gradient", [-5.0]),
        output_dir=str(raw.get("output_dir", "results")),
        workers=raw.get("workers"),
    )
    if cfg.workers is not None and (not isinstance(cfg.workers, int) or cfg.workers < 1):
        raise ConfigError("workers must be a positive integer")
    # exercise the stricter dataclass validations early
    sys_obj = cfg.build_system()
    cfg.build_policy_spec(sys_obj)
    cfg.build_cost_spec(sys_obj)
    cfg.build_gass_config()
    cfg.build_baseline_spec(sys_obj)
    return cfg


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings onto the raw config mapping."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, _, text = item.partition("=")
        value = yaml.safe_load(text)
        keys = path.strip().split(".")
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through non-mapping key {k!r}")
        node[keys[-1]] = value
    return raw


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if overrides:
        raw = apply_overrides(raw, list(overrides))
    return config_from_dict(raw)
