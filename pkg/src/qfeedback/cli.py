"""Experiment runner: train, evaluate, compare and inspect degeneracy.

All heavy lifting happens in the library modules; this file parses the
config, wires the pieces together and emits deterministic CSV/JSON
artifacts (figure data, training curves, checkpoints). Exit codes:
0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys as _sys
import time
from pathlib import Path

import numpy as np

from . import gass, qmath, systems
from .baseline import BaselineController
from .config import ConfigError, ExperimentConfig, load_config
from .cost import CostSpec
from .evaluate import EnsembleStats, evaluate_ensemble
from .gass import GassError, load_checkpoint, save_checkpoint
from .policy import Policy, init_params, param_count
from .qmath import StateValidationError
from .simulator import SimConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _fmt(x) -> str:
    """Shortest round-trip decimal form; keeps CSV output byte-stable."""
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _stats_rows(stats):
    for s in stats:
        yield [s.iteration, s.mean_cost, s.best_cost, s.ess, s.update_norm]


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys_obj = cfg.build_system()
    policy_spec = cfg.build_policy_spec(sys_obj)
    cost_spec = cfg.build_cost_spec(sys_obj)
    sim_config = cfg.build_sim_config()
    gass_config = cfg.build_gass_config()
    seed_spec = cfg.seed_spec()

    start_iteration = 0
    dist0 = None
    if args.resume:
        saved_spec, dist0, start_iteration, saved_seed = load_checkpoint(args.resume)
        if saved_spec.to_dict() != policy_spec.to_dict():
            raise ConfigError("checkpoint policy spec does not match the config")
        if saved_seed != cfg.master_seed:
            raise ConfigError(
                f"checkpoint master_seed {saved_seed} != config master_seed {cfg.master_seed}"
            )
        gass_config.iterations = max(0, gass_config.iterations - start_iteration)
    else:
        mu0 = init_params(policy_spec, seed_spec.policy_init_generator())
        dist0 = gass.SamplingDistribution(mu=mu0, sigma=cfg.sigma_vector(param_count(policy_spec)))

    t0 = time.monotonic()
    dist, stats = gass.optimize(
        sys_obj,
        policy_spec,
        cost_spec,
        sim_config,
        gass_config,
        seed_spec,
        dist0=dist0,
        start_iteration=start_iteration,
    )
    elapsed = time.monotonic() - t0
    done = start_iteration + gass_config.iterations

    _write_csv(
        out / "training_stats.csv",
        ["iteration", "mean_cost", "best_cost", "ess", "update_norm"],
        _stats_rows(stats),
    )
    save_checkpoint(out / "checkpoint.bin", policy_spec, dist, done, cfg.master_seed)
    per_iter = elapsed / max(1, gass_config.iterations)
    print(
        f"trained {gass_config.iterations} iterations "
        f"({per_iter:.2f} s/iter); checkpoint -> {out / 'checkpoint.bin'}"
    )
    return EXIT_OK


def _load_compatible_checkpoint(path, cfg: ExperimentConfig):
    sys_obj = cfg.build_system()
    spec, dist, iteration, _seed = load_checkpoint(path)
    expected = cfg.build_policy_spec(sys_obj)
    if (
        spec.control_dim != expected.control_dim
        or spec.kind != expected.kind
        or spec.feature_dim != expected.feature_dim
    ):
        raise ConfigError(
            f"checkpoint policy {spec.to_dict()} incompatible with config policy "
            f"{expected.to_dict()}"
        )
    return sys_obj, spec, dist, iteration


def _basis_rows(stats: EnsembleStats):
    for i, t in enumerate(stats.times):
        row = [t]
        for k in range(len(stats.basis_labels)):
            row.append(stats.basis_mean[i, k])
            row.append(2.0 * stats.basis_std[i, k])
        yield row


def _cost_rows(times, arms: dict[str, EnsembleStats]):
    for i, t in enumerate(times):
        row = [t]
        for st in arms.values():
            row += [st.jstate_mean[i], st.jstate_std[i], st.jcontrol_mean[i], st.jcontrol_std[i]]
        yield row


def _cost_header(arms: dict[str, EnsembleStats]) -> list[str]:
    header = ["time"]
    for name in arms:
        suffix = "" if name == "" else f"_{name}"
        header += [
            f"Jstate_mean{suffix}",
            f"Jstate_1sigma{suffix}",
            f"Jcontrol_mean{suffix}",
            f"Jcontrol_1sigma{suffix}",
        ]
    return header


def _arm_summary(st: EnsembleStats) -> dict:
    return {
        "final_fidelity_mean": st.final_fidelity_mean,
        "final_fidelity_std": float(st.fid_std[-1]),
        "J_state_mean": float(st.jstate_mean[-1]),
        "J_state_1sigma": float(st.jstate_std[-1]),
        "J_control_mean": float(st.jcontrol_mean[-1]),
        "J_control_1sigma": float(st.jcontrol_std[-1]),
        "time_to_fidelity_0.9": st.time_to_fidelity(0.9),
        "control_effort": st.control_effort_mean,
    }


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys_obj, spec, dist, _ = _load_compatible_checkpoint(args.checkpoint, cfg)
    controller = Policy(spec, dist.mu)
    n_steps = args.horizon or cfg.eval_steps
    n_traj = args.n_traj or cfg.n_eval_trajectories
    sim_config = cfg.build_sim_config(n_steps=n_steps)
    cost_spec = cfg.build_cost_spec(sys_obj)
    seed_spec = cfg.seed_spec()

    t0 = time.monotonic()
    stats = evaluate_ensemble(
        sys_obj, controller, n_traj, cost_spec, sim_config, seed_spec, workers=cfg.workers
    )
    elapsed = time.monotonic() - t0

    if stats.basis_mean is not None:
        header = ["time"]
        for lab in stats.basis_labels:
            header += [f"{lab}_mean", f"{lab}_2sigma"]
        _write_csv(out / "eval_basis.csv", header, _basis_rows(stats))
    arms = {"": stats}
    _write_csv(out / "eval_costs.csv", _cost_header(arms), _cost_rows(stats.times, arms))
    summary = _arm_summary(stats)
    summary.update({"n_trajectories": stats.n_traj, "n_steps": n_steps, "wall_clock_s": elapsed})
    _write_json(out / "eval_summary.json", summary)
    print(
        f"evaluated {stats.n_traj} trajectories x {n_steps} steps: "
        f"final fidelity {stats.final_fidelity_mean:.4f}"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys_obj, spec, dist, _ = _load_compatible_checkpoint(args.checkpoint, cfg)
    cost_spec = cfg.build_cost_spec(sys_obj)
    sim_config = cfg.build_sim_config(n_steps=args.horizon or cfg.eval_steps)
    seed_spec = cfg.seed_spec()
    n_traj = args.n_traj or cfg.n_eval_trajectories

    arms = {
        "policy": Policy(spec, dist.mu),
        "baseline": BaselineController(
            cfg.build_baseline_spec(sys_obj), sys_obj, cost_spec.rho_des
        ),
    }
    results = {}
    for name, controller in arms.items():
        results[name] = evaluate_ensemble(
            sys_obj, controller, n_traj, cost_spec, sim_config, seed_spec, workers=cfg.workers
        )

    _write_csv(
        out / "compare_costs.csv",
        _cost_header(results),
        _cost_rows(results["policy"].times, results),
    )
    pol, base = results["policy"], results["baseline"]
    effort_ratio = (
        base.control_effort_mean / pol.control_effort_mean
        if pol.control_effort_mean > 0
        else float("inf")
    )
    report = {
        "n_trajectories": n_traj,
        "effort_ratio": effort_ratio,
        "policy": _arm_summary(pol),
        "baseline": _arm_summary(base),
        "baseline_gains": {
            "gain_fidelity": list(cfg.gain_fidelity),
            "gain_gradient": list(cfg.gain_gradient),
        },
    }
    _write_json(out / "compare.json", report)
    print(
        f"policy fidelity {pol.final_fidelity_mean:.4f} vs baseline "
        f"{base.final_fidelity_mean:.4f}; baseline/policy effort ratio {effort_ratio:.2f}"
    )
    return EXIT_OK


def cmd_degeneracy(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys_obj = cfg.build_system()
    target = cfg.target_state(sys_obj)

    if qmath.is_hermitian(sys_obj.V):
        eigs = [float(x) for x in np.linalg.eigvalsh(sys_obj.V)]
    else:
        eigs = [[float(z.real), float(z.imag)] for z in np.linalg.eigvals(sys_obj.V)]

    probes = {"target": target, "maximally_mixed": qmath.identity(sys_obj.dim) / sys_obj.dim}
    for i in range(sys_obj.dim):
        probes[f"basis_{i}"] = qmath.basis_projector(sys_obj.dim, i)
    if cfg.system_kind == "homodyne":
        # equal superposition of the two lowest levels
        psi = np.zeros(sys_obj.dim, dtype=complex)
        psi[0] = psi[1] = 1.0 / np.sqrt(2.0)
        probes["superposition_01"] = np.outer(psi, psi.conj())

    states = []
    for name, rho in probes.items():
        norm = float(np.linalg.norm(systems.diffusion(sys_obj, rho)))
        states.append(
            {
                "state": name,
                "diffusion_norm": norm,
                "is_degenerate": bool(norm < qmath.TOL_DEGEN),
            }
        )
    report = {
        "system": cfg.system_kind,
        "coupling_eigenvalues": eigs,
        "states": states,
    }
    _write_json(out / "degeneracy.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qfeedback",
        description="Train and evaluate measurement-feedback policies for QND-monitored systems",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry, e.g. --set gass.iterations=10",
        )
        sp.add_argument("--output-dir", default=None, help="override the config output_dir")

    sp = sub.add_parser("train", help="run the optimizer and write a checkpoint")
    common(sp)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on held-out noise")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n-traj", type=int, default=None)
    sp.add_argument("--horizon", type=int, default=None, help="evaluation steps")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="trained policy vs baseline on identical noise")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n-traj", type=int, default=None)
    sp.add_argument("--horizon", type=int, default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("degeneracy", help="coupling spectrum and diffusion norms")
    common(sp)
    sp.set_defaults(func=cmd_degeneracy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GassError, StateValidationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
